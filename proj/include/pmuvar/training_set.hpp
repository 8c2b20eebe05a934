#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/features.hpp"
#include "pmuvar/timestamp.hpp"

namespace pmuvar {

struct LabeledFeatures {
  std::uint64_t event_id = 0;
  FeatureVector features;
  AnomalyClass label = AnomalyClass::Spike;
};

// max_dist,...,index_diff,event_id,label
inline std::string training_csv_header() {
  std::string h;
  for (auto name : kFeatureNames) {
    h += name;
    h += ',';
  }
  return h + "event_id,label";
}

inline void write_training_csv(std::ostream& out, std::span<const LabeledFeatures> rows) {
  out << training_csv_header() << '\n';
  for (const auto& r : rows) {
    for (double v : r.features.to_array()) out << format_double(v) << ',';
    out << r.event_id << ',' << to_string(r.label) << '\n';
  }
}

inline std::vector<LabeledFeatures> read_training_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("training set is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != training_csv_header()) throw FormatError("unexpected training set header");
  std::vector<LabeledFeatures> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      auto pos = line.find(',', start);
      fields.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (fields.size() != kNumFeatures + 2) throw RowError(row, "expected " + std::to_string(kNumFeatures + 2) + " fields");
    std::array<double, kNumFeatures> values{};
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
      auto v = parse_double(fields[i]);
      if (!v) throw RowError(row, "feature '" + std::string(kFeatureNames[i]) + "' is not a number");
      values[i] = *v;
    }
    LabeledFeatures r;
    r.features = FeatureVector::from_array(values);
    try {
      r.event_id = std::stoull(fields[kNumFeatures]);
      r.label = parse_anomaly_class(fields[kNumFeatures + 1]);
    } catch (const ValidationError& e) {
      throw RowError(row, e.what());
    } catch (const std::exception&) {
      throw RowError(row, "bad event_id");
    }
    rows.push_back(r);
  }
  return rows;
}

inline Eigen::MatrixXd feature_matrix(std::span<const LabeledFeatures> rows) {
  Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kNumFeatures));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto a = rows[i].features.to_array();
    for (std::size_t j = 0; j < kNumFeatures; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = a[j];
  }
  return X;
}

inline std::vector<int> label_vector(std::span<const LabeledFeatures> rows) {
  std::vector<int> y;
  y.reserve(rows.size());
  for (const auto& r : rows) y.push_back(static_cast<int>(r.label));
  return y;
}

}  // namespace pmuvar
