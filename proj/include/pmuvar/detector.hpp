#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/ingest.hpp"
#include "pmuvar/preprocess.hpp"
#include "pmuvar/scoring.hpp"
#include "pmuvar/var_model.hpp"

namespace pmuvar {

// Score sources that can trigger an event: the multivariate distance and the
// four per-channel conditional scores.
enum class ScoreChannel : std::uint8_t { Multivariate = 0, V = 1, I = 2, SinDiff = 3, F = 4 };

inline constexpr std::array<std::string_view, 5> kScoreChannelNames = {"multivariate", "V", "I", "sin_diff", "F"};

class TriggerSet {
 public:
  TriggerSet() = default;

  void insert(ScoreChannel c) { bits_ |= static_cast<std::uint8_t>(1u << static_cast<unsigned>(c)); }
  bool contains(ScoreChannel c) const { return (bits_ >> static_cast<unsigned>(c)) & 1u; }
  bool empty() const { return bits_ == 0; }
  std::uint8_t bits() const { return bits_; }

  std::vector<ScoreChannel> members() const {
    std::vector<ScoreChannel> out;
    for (unsigned i = 0; i < kScoreChannelNames.size(); ++i) {
      if ((bits_ >> i) & 1u) out.push_back(static_cast<ScoreChannel>(i));
    }
    return out;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (auto c : members()) out.emplace_back(kScoreChannelNames[static_cast<std::size_t>(c)]);
    return out;
  }

  // "multivariate+V"
  std::string to_string() const {
    std::string out;
    for (const auto& n : names()) {
      if (!out.empty()) out += '+';
      out += n;
    }
    return out;
  }

  static TriggerSet from_names(std::span<const std::string> names) {
    TriggerSet s;
    for (const auto& n : names) {
      bool found = false;
      for (std::size_t i = 0; i < kScoreChannelNames.size(); ++i) {
        if (n == kScoreChannelNames[i]) {
          s.insert(static_cast<ScoreChannel>(i));
          found = true;
        }
      }
      if (!found) throw ValidationError("unknown score channel '" + n + "'");
    }
    return s;
  }

  friend auto operator<=>(const TriggerSet&, const TriggerSet&) = default;

 private:
  std::uint8_t bits_ = 0;
};

struct ResidualScore {
  Timestamp timestamp{};
  Eigen::VectorXd residual;     // standardized units
  double mahalanobis = 0.0;
  Eigen::VectorXd conditional;  // per channel
  bool forecast = false;        // scored against the frozen q-step forecast

  double max_score() const {
    return conditional.size() > 0 ? std::max(mahalanobis, conditional.maxCoeff()) : mahalanobis;
  }

  double channel_score(ScoreChannel c) const {
    return c == ScoreChannel::Multivariate ? mahalanobis : conditional(static_cast<Eigen::Index>(c) - 1);
  }
};

enum class LabelSource { Model, Operator };

inline std::string_view to_string(LabelSource s) { return s == LabelSource::Model ? "model" : "operator"; }

struct AnomalyEvent {
  std::uint64_t id = 0;
  Timestamp start{};
  Timestamp end{};
  double threshold = 0.0;
  TriggerSet triggers;
  ScoreChannel feature_channel = ScoreChannel::Multivariate;
  std::vector<ResidualScore> score_window;   // trigger point followed by the next points, feature-window long
  ChannelSeries raw_window;                  // physical units, aligned with score_window
  ChannelSeries standardized_window;         // standardized units, aligned with score_window
  bool returned = true;                      // last scored point back at or below threshold
  bool truncated = false;                    // stream ended before the window completed
  std::optional<AnomalyClass> label;
  LabelSource label_source = LabelSource::Model;

  // Score sequence used for feature extraction.
  std::vector<double> feature_scores() const {
    std::vector<double> out;
    out.reserve(score_window.size());
    for (const auto& s : score_window) out.push_back(s.channel_score(feature_channel));
    return out;
  }
};

inline std::map<TriggerSet, std::size_t> cooccurrence_counts(std::span<const AnomalyEvent> events) {
  std::map<TriggerSet, std::size_t> table;
  for (const auto& e : events) ++table[e.triggers];
  return table;
}

enum class DetectorMode { Normal, Anomaly };

struct DetectorConfig {
  std::size_t window = 1200;        // training buffer length (tau / resolution)
  int p = 1;
  double threshold = 12.0;
  int q = 10;
  std::size_t feature_window = 10;  // points, trigger included
  bool retrain = true;              // false: model and standardization stay fixed

  void validate(int K) const {
    if (p < 1) throw ConfigError("lag order must be >= 1");
    if (window < static_cast<std::size_t>(K * p + 2)) {
      throw ConfigError("training window must hold at least K*p+2 = " + std::to_string(K * p + 2) + " points");
    }
    if (!(threshold > 0.0)) throw ConfigError("threshold must be positive");
    if (q < 1) throw ConfigError("q must be >= 1");
    if (feature_window < 1 || feature_window > static_cast<std::size_t>(q) + 1) {
      throw ConfigError("feature window must lie in [1, q+1] points");
    }
  }
};

struct StepResult {
  std::optional<ResidualScore> score;     // absent during warm-up
  std::optional<AnomalyEvent> opened;     // id, start, triggers, first score
  std::optional<AnomalyEvent> closed;     // full event record
  bool warming_up = false;
};

// Streaming VAR residual detector. Owns the rolling physical-unit training
// buffer, the standardization fitted on it, and the VAR model fitted on the
// standardized buffer. One writer advances it with step().
class Detector {
 public:
  explicit Detector(DetectorConfig config, int K = static_cast<int>(kChannels)) : config_(config), K_(K) {
    config_.validate(K_);
  }

  // Fits standardization and model on a full physical-unit window.
  void initialize(std::span<const Eigen::VectorXd> window, std::span<const Timestamp> timestamps = {}) {
    if (window.size() < config_.window) throw LengthError("initialization window shorter than training window");
    buffer_.clear();
    for (std::size_t i = window.size() - config_.window; i < window.size(); ++i) {
      push_buffer(window[i], i < timestamps.size() ? timestamps[i] : Timestamp{});
    }
    refit();
  }

  // Installs a given model and standardization; the buffer supplies the lags
  // and is treated as the window the params were fitted on.
  void initialize(VarModel model, StandardizationParams params, std::span<const Eigen::VectorXd> window) {
    model.validate();
    if (model.K != K_ || model.p != config_.p) throw ArityError("model does not match detector configuration");
    if (window.size() < static_cast<std::size_t>(model.p)) throw LengthError("need at least p lag points");
    buffer_.clear();
    const std::size_t keep = std::min(window.size(), config_.window);
    for (std::size_t i = window.size() - keep; i < window.size(); ++i) push_buffer(window[i], Timestamp{});
    params_ = std::move(params);
    params_origin_ = buffer_.front().index;
    install_model(std::move(model));
  }

  bool initialized() const { return model_.has_value(); }
  DetectorMode mode() const { return mode_; }
  int forecast_countdown() const { return countdown_; }
  double threshold() const { return config_.threshold; }
  const DetectorConfig& config() const { return config_; }
  const VarModel& model() const {
    if (!model_) throw StateError("detector not initialized");
    return *model_;
  }
  const StandardizationParams& standardization() const {
    if (!model_) throw StateError("detector not initialized");
    return params_;
  }
  std::size_t buffer_size() const { return buffer_.size(); }
  std::uint64_t next_event_id() const { return next_event_id_; }
  void set_next_event_id(std::uint64_t id) { next_event_id_ = id; }
  std::uint64_t refit_count() const { return refits_; }

  void set_threshold(double t) {
    if (!(t > 0.0)) throw ValidationError("threshold must be positive");
    config_.threshold = t;
  }

  // Feeds one observation in physical units. Before the buffer is full the
  // detector only accumulates (warm-up).
  StepResult step(const Eigen::VectorXd& observed, Timestamp timestamp = {}) {
    if (observed.size() != K_) throw ArityError("observation has wrong dimension");
    StepResult result;
    if (!model_) {
      if (!config_.retrain) throw StateError("detector stepped before initialization");
      push_buffer(observed, timestamp);
      if (buffer_.size() >= config_.window) refit();
      result.warming_up = true;
      return result;
    }
    if (mode_ == DetectorMode::Normal) {
      step_normal(observed, timestamp, result);
    } else {
      step_anomaly(observed, timestamp, result);
    }
    return result;
  }

  // Force-closes an open event at end of stream.
  std::optional<AnomalyEvent> flush() {
    if (mode_ != DetectorMode::Anomaly) return std::nullopt;
    AnomalyEvent e = std::move(*open_);
    e.truncated = true;
    e.returned = last_score_ <= config_.threshold;
    open_.reset();
    mode_ = DetectorMode::Normal;
    countdown_ = 0;
    return e;
  }

 private:
  struct BufferEntry {
    std::uint64_t index;
    Eigen::VectorXd value;
    Timestamp timestamp;
  };

  void push_buffer(const Eigen::VectorXd& v, Timestamp ts) {
    buffer_.push_back({next_index_++, v, ts});
    while (buffer_.size() > config_.window) buffer_.pop_front();
  }

  double trend_index(std::uint64_t abs_index) const {
    return static_cast<double>(abs_index) - static_cast<double>(params_origin_);
  }

  Eigen::VectorXd standardized(const BufferEntry& e) const {
    return standardize_point(e.value, params_, trend_index(e.index));
  }

  void refit() {
    Eigen::MatrixXd window(static_cast<Eigen::Index>(buffer_.size()), K_);
    Eigen::Index r = 0;
    for (const auto& e : buffer_) window.row(r++) = e.value.transpose();
    params_ = fit_standardization(window);
    params_origin_ = buffer_.front().index;
    install_model(fit_var(standardize(window, params_), config_.p));
    ++refits_;
  }

  void install_model(VarModel model) {
    model_ = std::move(model);
    scorer_.emplace(model_->regularized_sigma());
    refresh_lags();
  }

  void refresh_lags() {
    lags_.clear();
    for (int i = 0; i < config_.p; ++i) lags_.push_back(standardized(buffer_[buffer_.size() - 1 - static_cast<std::size_t>(i)]));
  }

  ResidualScore score(const Eigen::VectorXd& prediction, const Eigen::VectorXd& z, Timestamp ts, bool forecast) const {
    ResidualScore s;
    s.timestamp = ts;
    s.residual = prediction - z;
    s.mahalanobis = scorer_->mahalanobis(s.residual);
    s.conditional = scorer_->conditional(s.residual);
    s.forecast = forecast;
    return s;
  }

  void step_normal(const Eigen::VectorXd& observed, Timestamp ts, StepResult& result) {
    const std::uint64_t idx = next_index_;
    const Eigen::VectorXd z = standardize_point(observed, params_, trend_index(idx));
    const Eigen::VectorXd prediction = predict_one(*model_, lags_);
    ResidualScore s = score(prediction, z, ts, false);
    last_score_ = s.max_score();
    result.score = s;

    if (last_score_ > config_.threshold) {
      open_event(s, observed, z, idx, result);
      return;
    }
    push_buffer(observed, ts);
    if (config_.retrain) {
      refit();
    } else {
      refresh_lags();
    }
  }

  void open_event(const ResidualScore& s, const Eigen::VectorXd& observed, const Eigen::VectorXd& z,
                  std::uint64_t idx, StepResult& result) {
    mode_ = DetectorMode::Anomaly;
    countdown_ = config_.q;
    forecasts_ = forecast_q(*model_, lags_, config_.q + 1);
    trigger_index_ = idx;
    next_index_ = idx + 1;
    flagged_observed_.assign(1, observed);

    AnomalyEvent e;
    e.id = next_event_id_++;
    e.start = s.timestamp;
    e.end = s.timestamp;
    e.threshold = config_.threshold;
    if (s.mahalanobis > config_.threshold) e.triggers.insert(ScoreChannel::Multivariate);
    Eigen::Index best = 0;
    for (Eigen::Index k = 0; k < s.conditional.size(); ++k) {
      if (s.conditional(k) > config_.threshold) e.triggers.insert(static_cast<ScoreChannel>(k + 1));
      if (s.conditional(k) > s.conditional(best)) best = k;
    }
    e.feature_channel = e.triggers.contains(ScoreChannel::Multivariate) ? ScoreChannel::Multivariate
                                                                        : static_cast<ScoreChannel>(best + 1);
    record(e, s, observed, z);
    result.opened = e;
    open_ = std::move(e);
  }

  void record(AnomalyEvent& e, const ResidualScore& s, const Eigen::VectorXd& observed, const Eigen::VectorXd& z) const {
    e.end = s.timestamp;
    if (e.score_window.size() >= config_.feature_window) return;
    e.score_window.push_back(s);
    ChannelVector raw, std_v;
    raw.timestamp = std_v.timestamp = s.timestamp;
    for (Eigen::Index k = 0; k < K_ && k < static_cast<Eigen::Index>(kChannels); ++k) {
      raw[static_cast<std::size_t>(k)] = observed(k);
      std_v[static_cast<std::size_t>(k)] = z(k);
    }
    e.raw_window.push_back(raw);
    e.standardized_window.push_back(std_v);
  }

  void step_anomaly(const Eigen::VectorXd& observed, Timestamp ts, StepResult& result) {
    const std::uint64_t idx = next_index_++;
    const auto j = static_cast<std::size_t>(idx - trigger_index_);
    const Eigen::VectorXd z = standardize_point(observed, params_, trend_index(idx));
    ResidualScore s = score(forecasts_[j], z, ts, true);
    last_score_ = s.max_score();
    result.score = s;
    record(*open_, s, observed, z);
    flagged_observed_.push_back(observed);

    if (--countdown_ > 0) return;

    AnomalyEvent e = std::move(*open_);
    open_.reset();
    e.returned = last_score_ <= config_.threshold;
    // Returned events are repaired with the frozen forecasts; a level that is
    // still off at expiry is kept so the model can adopt it.
    for (std::size_t i = 0; i < flagged_observed_.size(); ++i) {
      const std::uint64_t abs = trigger_index_ + i;
      Eigen::VectorXd value = e.returned ? de_standardize_point(forecasts_[i], params_, trend_index(abs))
                                         : flagged_observed_[i];
      buffer_.push_back({abs, std::move(value), Timestamp{}});
      while (buffer_.size() > config_.window) buffer_.pop_front();
    }
    mode_ = DetectorMode::Normal;
    if (config_.retrain) {
      refit();
    } else {
      refresh_lags();
    }
    result.closed = std::move(e);
  }

  DetectorConfig config_;
  int K_;
  std::deque<BufferEntry> buffer_;
  std::uint64_t next_index_ = 0;
  std::uint64_t params_origin_ = 0;
  StandardizationParams params_;
  std::optional<VarModel> model_;
  std::optional<ResidualScorer> scorer_;
  std::vector<Eigen::VectorXd> lags_;

  DetectorMode mode_ = DetectorMode::Normal;
  int countdown_ = 0;
  std::vector<Eigen::VectorXd> forecasts_;
  std::uint64_t trigger_index_ = 0;
  std::vector<Eigen::VectorXd> flagged_observed_;
  std::optional<AnomalyEvent> open_;
  double last_score_ = 0.0;
  std::uint64_t next_event_id_ = 1;
  std::uint64_t refits_ = 0;
};

}  // namespace pmuvar
