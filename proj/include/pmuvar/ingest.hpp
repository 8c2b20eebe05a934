#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <istream>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/errors.hpp"
#include "pmuvar/timestamp.hpp"

namespace pmuvar {

inline constexpr std::size_t kChannels = 4;

// Modeling channel order used everywhere downstream.
enum class Channel : std::size_t { Voltage = 0, Current = 1, SinAngleDiff = 2, Frequency = 3 };

inline constexpr std::array<std::string_view, kChannels> kChannelNames = {"V", "I", "sin_diff", "F"};

struct PmuSample {
  Timestamp timestamp{};
  double voltage_mag = 0.0;      // volts
  double voltage_angle = 0.0;    // degrees
  double current_mag = 0.0;      // amperes
  double current_angle = 0.0;    // degrees
  double frequency = 0.0;        // hertz

  friend bool operator==(const PmuSample&, const PmuSample&) = default;
};

struct ChannelVector {
  Timestamp timestamp{};
  std::array<double, kChannels> values{};

  double operator[](std::size_t k) const { return values[k]; }
  double& operator[](std::size_t k) { return values[k]; }
  double operator[](Channel c) const { return values[static_cast<std::size_t>(c)]; }
  double& operator[](Channel c) { return values[static_cast<std::size_t>(c)]; }

  Eigen::VectorXd to_eigen() const { return Eigen::Map<const Eigen::VectorXd>(values.data(), kChannels); }

  friend bool operator==(const ChannelVector&, const ChannelVector&) = default;
};

using ChannelSeries = std::vector<ChannelVector>;

// Maps any angle in degrees into [-180, 180).
inline double normalize_angle(double degrees) {
  double a = std::fmod(degrees + 180.0, 360.0);
  if (a < 0.0) a += 360.0;
  a -= 180.0;
  return a >= 180.0 ? a - 360.0 : a;
}

inline constexpr std::string_view kCsvHeader =
    "timestamp_iso8601,voltage_mag_v,voltage_angle_deg,current_mag_a,current_angle_deg,frequency_hz";

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n')) {
    s.remove_suffix(1);
  }
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

// Sequential reader over the PMU CSV wire format. Row numbers are 1-based
// over data rows (the header is row 0).
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {
    std::string header;
    if (!std::getline(in_, header)) throw FormatError("missing CSV header");
    if (header.size() >= 3 && static_cast<unsigned char>(header[0]) == 0xEF &&
        static_cast<unsigned char>(header[1]) == 0xBB && static_cast<unsigned char>(header[2]) == 0xBF) {
      header.erase(0, 3);
    }
    if (detail::trim(header) != kCsvHeader) {
      throw FormatError("CSV header mismatch: expected '" + std::string(kCsvHeader) + "'");
    }
  }

  // Next sample, or nullopt at end of input. Throws RowError / OrderingError.
  std::optional<PmuSample> next() {
    std::string line;
    while (std::getline(in_, line)) {
      ++row_;
      std::string_view view = detail::trim(line);
      if (view.empty()) continue;
      PmuSample sample = parse_row(view);
      if (last_ && sample.timestamp < *last_) {
        throw OrderingError(row_, "timestamp " + format_iso8601(sample.timestamp) + " precedes " +
                                      format_iso8601(*last_));
      }
      last_ = sample.timestamp;
      return sample;
    }
    return std::nullopt;
  }

  std::size_t row() const noexcept { return row_; }

 private:
  PmuSample parse_row(std::string_view line) const {
    auto fields = detail::split(line, ',');
    if (fields.size() != 6) {
      throw RowError(row_, "expected 6 fields, got " + std::to_string(fields.size()));
    }
    PmuSample s;
    auto ts = parse_iso8601(detail::trim(fields[0]));
    if (!ts) throw RowError(row_, "unparseable timestamp '" + std::string(fields[0]) + "'");
    s.timestamp = *ts;

    static constexpr std::array<std::string_view, 5> names = {"voltage_mag_v", "voltage_angle_deg", "current_mag_a",
                                                              "current_angle_deg", "frequency_hz"};
    std::array<double, 5> values{};
    for (std::size_t i = 0; i < 5; ++i) {
      auto v = parse_double(fields[i + 1]);
      if (!v || !std::isfinite(*v)) {
        throw RowError(row_, "unparseable " + std::string(names[i]) + " '" + std::string(fields[i + 1]) + "'");
      }
      values[i] = *v;
    }
    s.voltage_mag = values[0];
    s.voltage_angle = normalize_angle(values[1]);
    s.current_mag = values[2];
    s.current_angle = normalize_angle(values[3]);
    s.frequency = values[4];
    if (s.voltage_mag < 0.0) throw RowError(row_, "negative voltage magnitude");
    if (s.current_mag < 0.0) throw RowError(row_, "negative current magnitude");
    if (!(s.frequency > 0.0)) throw RowError(row_, "non-positive frequency");
    return s;
  }

  std::istream& in_;
  std::size_t row_ = 0;
  std::optional<Timestamp> last_;
};

inline std::vector<PmuSample> parse_csv_stream(std::istream& in) {
  CsvReader reader(in);
  std::vector<PmuSample> out;
  while (auto s = reader.next()) out.push_back(*s);
  return out;
}

inline void write_csv_header(std::ostream& out) { out << kCsvHeader << '\n'; }

inline void write_csv_row(std::ostream& out, const PmuSample& s) {
  out << format_iso8601(s.timestamp) << ',' << format_double(s.voltage_mag) << ','
      << format_double(s.voltage_angle) << ',' << format_double(s.current_mag) << ','
      << format_double(s.current_angle) << ',' << format_double(s.frequency) << '\n';
}

inline void write_csv(std::ostream& out, std::span<const PmuSample> samples) {
  write_csv_header(out);
  for (const auto& s : samples) write_csv_row(out, s);
}

inline ChannelVector derive_channels(const PmuSample& s) {
  ChannelVector v;
  v.timestamp = s.timestamp;
  v[Channel::Voltage] = s.voltage_mag;
  v[Channel::Current] = s.current_mag;
  v[Channel::SinAngleDiff] = std::sin((s.voltage_angle - s.current_angle) * std::numbers::pi / 180.0);
  v[Channel::Frequency] = s.frequency;
  return v;
}

// Raw samples per model tick; throws ConfigError unless a positive integer.
inline std::size_t block_size(double input_rate_hz, double resolution_s) {
  double raw = input_rate_hz * resolution_s;
  double rounded = std::round(raw);
  if (!(input_rate_hz > 0.0) || !(resolution_s > 0.0) || rounded < 1.0 ||
      std::abs(raw - rounded) > 1e-9 * std::max(1.0, raw)) {
    throw ConfigError("input_rate x resolution must be a positive integer block size (got " + format_double(raw) +
                      ")");
  }
  return static_cast<std::size_t>(rounded);
}

// Incremental block averager for live streams.
class CoarseGrainer {
 public:
  CoarseGrainer(double input_rate_hz, double resolution_s) : block_(block_size(input_rate_hz, resolution_s)) {}
  explicit CoarseGrainer(std::size_t block) : block_(block) {
    if (block_ == 0) throw ConfigError("block size must be positive");
  }

  std::optional<ChannelVector> push(const ChannelVector& v) {
    if (count_ == 0) {
      acc_.values.fill(0.0);
      acc_.timestamp = v.timestamp;
    }
    for (std::size_t k = 0; k < kChannels; ++k) acc_.values[k] += v.values[k];
    if (++count_ < block_) return std::nullopt;
    ChannelVector out = acc_;
    for (auto& x : out.values) x /= static_cast<double>(block_);
    count_ = 0;
    return out;
  }

  std::size_t block() const noexcept { return block_; }

 private:
  std::size_t block_;
  std::size_t count_ = 0;
  ChannelVector acc_{};
};

inline ChannelSeries coarse_grain(std::span<const ChannelVector> series, double input_rate_hz, double resolution_s) {
  CoarseGrainer grainer(input_rate_hz, resolution_s);
  ChannelSeries out;
  out.reserve(series.size() / grainer.block());
  for (const auto& v : series) {
    if (auto block = grainer.push(v)) out.push_back(*block);
  }
  return out;
}

// Rows = time, columns = channels.
inline Eigen::MatrixXd to_matrix(std::span<const ChannelVector> series) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(series.size()), static_cast<Eigen::Index>(kChannels));
  for (std::size_t t = 0; t < series.size(); ++t) {
    for (std::size_t k = 0; k < kChannels; ++k) m(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = series[t][k];
  }
  return m;
}

inline ChannelSeries from_matrix(const Eigen::MatrixXd& m, std::span<const Timestamp> timestamps = {}) {
  if (m.cols() != static_cast<Eigen::Index>(kChannels)) throw ArityError("matrix must have 4 columns");
  ChannelSeries out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    auto& v = out[static_cast<std::size_t>(t)];
    if (static_cast<std::size_t>(t) < timestamps.size()) v.timestamp = timestamps[static_cast<std::size_t>(t)];
    for (std::size_t k = 0; k < kChannels; ++k) v[k] = m(t, static_cast<Eigen::Index>(k));
  }
  return out;
}

}  // namespace pmuvar
