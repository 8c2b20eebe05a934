#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "pmuvar/errors.hpp"

namespace pmuvar {

enum class AnomalyClass : int { Spike = 0, Drop = 1, Step = 2, Oscillatory = 3 };

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"spike", "drop", "step", "oscillatory"};

inline std::string_view to_string(AnomalyClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

inline AnomalyClass anomaly_class_from_id(int id) {
  if (id < 0 || id >= static_cast<int>(kNumClasses)) {
    throw ValidationError("unknown anomaly class id " + std::to_string(id));
  }
  return static_cast<AnomalyClass>(id);
}

// Accepts the class name or its numeric id.
inline AnomalyClass parse_anomaly_class(std::string_view s) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (s == kClassNames[i]) return static_cast<AnomalyClass>(i);
  }
  if (s.size() == 1 && s[0] >= '0' && s[0] <= '9') return anomaly_class_from_id(s[0] - '0');
  throw ValidationError("unknown anomaly class '" + std::string(s) + "'");
}

}  // namespace pmuvar
