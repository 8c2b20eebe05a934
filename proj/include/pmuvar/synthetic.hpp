#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/config.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/ingest.hpp"
#include "pmuvar/var_model.hpp"

namespace pmuvar {

// One anomaly to inject, in sample indices. Magnitude is in units of the
// target channel's ambient standard deviation.
struct Injection {
  AnomalyClass cls = AnomalyClass::Spike;
  std::size_t start = 0;
  std::size_t length = 1;           // spike width, drop hold time, oscillation length; ignored for steps
  double magnitude_sigma = 0.0;
  std::size_t channel = 0;          // Channel::Voltage
  double osc_period = 8.0;          // samples per cycle
  double osc_decay = 0.0;           // e-folding time in samples; 0 means length / 3
};

// Adds the class shape to one channel:
//   spike        +m over [start, start+length)
//   drop         -|m| over [start, start+length), then restored
//   step         +m from start to the end of the series
//   oscillatory  m * exp(-t/decay) * cos(2 pi t / period) over [start, start+length)
inline void inject_anomaly(ChannelSeries& series, const Injection& inj, double channel_sigma) {
  const auto cls_id = static_cast<int>(inj.cls);
  if (cls_id < 0 || cls_id >= static_cast<int>(kNumClasses)) {
    throw ValidationError("unknown anomaly class id " + std::to_string(cls_id));
  }
  if (inj.channel >= kChannels) throw ValidationError("injection channel out of range");
  const std::size_t n = series.size();
  if (inj.start >= n) throw ValidationError("injection starts beyond the series");
  const bool bounded = inj.cls != AnomalyClass::Step;
  if (bounded && (inj.length == 0 || inj.start + inj.length > n)) {
    throw ValidationError("injection window exceeds the series");
  }
  const double amp = inj.magnitude_sigma * channel_sigma;
  const std::size_t end = bounded ? inj.start + inj.length : n;
  const double decay = inj.osc_decay > 0.0 ? inj.osc_decay : std::max(1.0, static_cast<double>(inj.length) / 3.0);
  for (std::size_t t = inj.start; t < end; ++t) {
    const double rel = static_cast<double>(t - inj.start);
    double delta = 0.0;
    switch (inj.cls) {
      case AnomalyClass::Spike:
      case AnomalyClass::Step:
        delta = amp;
        break;
      case AnomalyClass::Drop:
        delta = -std::abs(amp);
        break;
      case AnomalyClass::Oscillatory:
        delta = amp * std::exp(-rel / decay) * std::cos(2.0 * std::numbers::pi * rel / inj.osc_period);
        break;
    }
    series[t][inj.channel] += delta;
  }
}

inline ChannelSeries inject_anomaly(const ChannelSeries& series, const Injection& inj, double channel_sigma) {
  ChannelSeries out = series;
  inject_anomaly(out, inj, channel_sigma);
  return out;
}

// Scenario event in seconds; duration is the shape length (see Injection).
struct EventSpec {
  AnomalyClass cls = AnomalyClass::Spike;
  double start_s = 0.0;
  double magnitude_sigma = 0.0;
  double duration_s = 0.5;
  std::size_t channel = 0;
};

struct SyntheticScenario {
  VarModel ambient_model;
  double duration_s = 600.0;
  double sample_rate_hz = 30.0;
  std::uint64_t seed = 1;
  std::vector<EventSpec> events;
  Timestamp start_time = Timestamp{std::chrono::seconds{1704067200}};  // 2024-01-01T00:00:00Z
  // physical = offset + scale * model output
  std::array<double, kChannels> offset{0.0, 0.0, 0.0, 0.0};
  std::array<double, kChannels> scale{1.0, 1.0, 1.0, 1.0};
  double osc_period_s = 2.0;

  std::size_t samples() const { return static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz)); }

  // Ambient standard deviation of each physical channel (stationary marginal).
  std::array<double, kChannels> channel_sigma() const {
    const Eigen::MatrixXd gamma = ambient_model.stationary_covariance();
    std::array<double, kChannels> out{};
    for (std::size_t k = 0; k < kChannels; ++k) {
      out[k] = std::sqrt(gamma(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k))) * std::abs(scale[k]);
    }
    return out;
  }
};

// Offsets and scales giving PMU-like magnitudes: a 132.8 kV / 400 A feeder at 60 Hz.
inline SyntheticScenario pmu_like_scenario(VarModel model) {
  SyntheticScenario s;
  s.ambient_model = std::move(model);
  s.offset = {132790.0, 400.0, 0.25, 60.0};
  s.scale = {150.0, 4.0, 0.004, 0.003};
  return s;
}

inline ChannelSeries synthesize_ambient(const SyntheticScenario& scenario, std::uint64_t seed) {
  const auto& model = scenario.ambient_model;
  if (model.K != static_cast<int>(kChannels)) throw ValidationError("ambient model must have 4 channels");
  if (!(scenario.sample_rate_hz > 0.0)) throw ValidationError("sample rate must be positive");
  const std::size_t n = scenario.samples();
  const Eigen::MatrixXd y = simulate(model, n, seed);  // throws ValidationError when unstable
  ChannelSeries out(n);
  const double dt_ns = 1e9 / scenario.sample_rate_hz;
  for (std::size_t t = 0; t < n; ++t) {
    auto& v = out[t];
    v.timestamp = scenario.start_time + std::chrono::nanoseconds{std::llround(static_cast<double>(t) * dt_ns)};
    for (std::size_t k = 0; k < kChannels; ++k) {
      v[k] = scenario.offset[k] + scenario.scale[k] * y(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k));
    }
  }
  return out;
}

inline Injection to_injection(const EventSpec& e, const SyntheticScenario& scenario) {
  Injection inj;
  inj.cls = e.cls;
  inj.start = static_cast<std::size_t>(std::llround(e.start_s * scenario.sample_rate_hz));
  inj.length = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(e.duration_s * scenario.sample_rate_hz)));
  inj.magnitude_sigma = e.magnitude_sigma;
  inj.channel = e.channel;
  inj.osc_period = scenario.osc_period_s * scenario.sample_rate_hz;
  return inj;
}

// Ambient data plus every scenario event, in physical channel units.
inline ChannelSeries synthesize_scenario(const SyntheticScenario& scenario) {
  ChannelSeries series = synthesize_ambient(scenario, scenario.seed);
  const auto sigma = scenario.channel_sigma();
  for (const auto& e : scenario.events) {
    const Injection inj = to_injection(e, scenario);
    inject_anomaly(series, inj, sigma[inj.channel]);
  }
  return series;
}

// Builds raw PMU records whose derived channels equal `v`. The voltage angle
// rotates slowly; the current angle is placed to reproduce sin_angle_diff.
inline PmuSample to_pmu_sample(const ChannelVector& v, double t_seconds) {
  PmuSample s;
  s.timestamp = v.timestamp;
  s.voltage_mag = std::max(0.0, v[Channel::Voltage]);
  s.current_mag = std::max(0.0, v[Channel::Current]);
  s.frequency = v[Channel::Frequency];
  s.voltage_angle = normalize_angle(std::fmod(t_seconds, 360.0));
  const double diff = std::asin(std::clamp(v[Channel::SinAngleDiff], -1.0, 1.0)) * 180.0 / std::numbers::pi;
  s.current_angle = normalize_angle(s.voltage_angle - diff);
  return s;
}

inline std::vector<PmuSample> to_pmu_samples(const ChannelSeries& series) {
  std::vector<PmuSample> out;
  out.reserve(series.size());
  if (series.empty()) return out;
  const Timestamp t0 = series.front().timestamp;
  for (const auto& v : series) out.push_back(to_pmu_sample(v, seconds_between(t0, v.timestamp)));
  return out;
}

inline std::size_t parse_channel(std::string_view s) {
  for (std::size_t k = 0; k < kChannels; ++k) {
    if (s == kChannelNames[k]) return k;
  }
  throw ConfigError("unknown channel '" + std::string(s) + "'");
}

// Scenario file keys:
//   duration_s, rate_hz, seed
//   event = class,start_s,magnitude_sigma,duration_s[,channel]   (repeatable)
//   model_seed, model_radius   random stable ambient model (default seed derived from `seed`)
//   model_file                 serialized VarModel to use instead
//   start_time                 ISO-8601 UTC
//   offset = V,I,sin_diff,F    scale = V,I,sin_diff,F    osc_period_s
inline SyntheticScenario scenario_from_config(const KeyValueConfig& cfg) {
  SyntheticScenario s = pmu_like_scenario(VarModel{});
  s.duration_s = cfg.get_double("duration_s", s.duration_s);
  s.sample_rate_hz = cfg.get_double("rate_hz", s.sample_rate_hz);
  s.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  s.osc_period_s = cfg.get_double("osc_period_s", s.osc_period_s);
  if (!(s.duration_s >= 0.0)) throw ConfigError("duration_s must be >= 0");
  if (!(s.sample_rate_hz > 0.0)) throw ConfigError("rate_hz must be positive");
  if (auto st = cfg.get("start_time")) {
    auto ts = parse_iso8601(*st);
    if (!ts) throw ConfigError("start_time is not ISO-8601: '" + *st + "'");
    s.start_time = *ts;
  }
  auto read_array = [&](const char* key, std::array<double, kChannels>& dst) {
    if (auto v = cfg.get(key)) {
      auto xs = parse_double_list(*v);
      if (xs.size() != kChannels) throw ConfigError(std::string(key) + " needs 4 values");
      std::copy(xs.begin(), xs.end(), dst.begin());
    }
  };
  read_array("offset", s.offset);
  read_array("scale", s.scale);

  if (auto path = cfg.get("model_file")) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open model_file '" + *path + "'");
    s.ambient_model = read_model(in);
  } else {
    const auto model_seed = static_cast<std::uint64_t>(cfg.get_int("model_seed", static_cast<long long>(derive_seed(s.seed, 0x6d6f64656cULL) >> 1)));
    s.ambient_model = random_stable_model(static_cast<int>(kChannels), 1, model_seed, cfg.get_double("model_radius", 0.95));
  }

  for (const auto& line : cfg.get_all("event")) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (;;) {
      auto pos = line.find(',', start);
      parts.emplace_back(KeyValueConfig::trim(std::string_view(line).substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (parts.size() != 4 && parts.size() != 5) {
      throw ConfigError("event needs class,start_s,magnitude_sigma,duration_s[,channel]: '" + line + "'");
    }
    EventSpec e;
    try {
      e.cls = parse_anomaly_class(parts[0]);
    } catch (const ValidationError& err) {
      throw ConfigError(err.what());
    }
    auto num = [&](const std::string& x) {
      auto v = parse_double(x);
      if (!v) throw ConfigError("event field is not a number: '" + x + "'");
      return *v;
    };
    e.start_s = num(parts[1]);
    e.magnitude_sigma = num(parts[2]);
    e.duration_s = num(parts[3]);
    if (parts.size() == 5) e.channel = parse_channel(parts[4]);
    if (e.start_s < 0.0 || e.start_s >= s.duration_s) throw ConfigError("event start outside the scenario: '" + line + "'");
    s.events.push_back(e);
  }
  return s;
}

}  // namespace pmuvar
