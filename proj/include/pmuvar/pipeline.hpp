#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pmuvar/broadcast.hpp"
#include "pmuvar/config.hpp"
#include "pmuvar/corpus.hpp"
#include "pmuvar/decision_tree.hpp"
#include "pmuvar/detector.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/event_store.hpp"
#include "pmuvar/features.hpp"
#include "pmuvar/ingest.hpp"
#include "pmuvar/serialization.hpp"
#include "pmuvar/synthetic.hpp"
#include "pmuvar/training_set.hpp"

namespace pmuvar {

enum class InputKind { Csv, Synthetic };

struct PipelineConfig {
  double resolution_s = 0.5;
  double tau_minutes = 10.0;
  int lag_p = 1;
  double threshold = 12.0;
  int q = 10;
  double feature_window_s = 5.0;

  InputKind input = InputKind::Synthetic;
  std::string input_path;           // CSV replay file
  double input_rate_hz = 30.0;      // CSV sample rate
  double replay_speed = 0.0;        // stream-time / wall-time; 0 runs unpaced
  std::string scenario_file;        // synthetic input; empty reads scenario keys from the same file
  KeyValueConfig scenario_keys;

  std::string listen_host = "127.0.0.1";
  int listen_port = -1;             // -1 disables the HTTP API, 0 picks a free port
  std::string persistence_dir;      // empty keeps events in memory

  std::string classifier_model;     // tree record (JSON)
  std::string classifier_train;     // training CSV; trained at startup
  std::uint64_t classifier_seed = 1;

  std::size_t subscriber_queue = 4096;
  double history_s = 300.0;

  static inline const std::vector<std::string> kKeys = {
      "resolution_s", "tau_minutes",      "lag_p",           "threshold",      "q",
      "feature_window_s", "input",        "input_path",      "input_rate_hz",  "replay_speed",
      "scenario_file", "listen_host",     "listen_port",     "persistence_dir", "classifier_model",
      "classifier_train", "classifier_seed", "subscriber_queue", "history_s"};

  std::size_t window_points() const { return static_cast<std::size_t>(std::llround(tau_minutes * 60.0 / resolution_s)); }
  std::size_t feature_points() const { return static_cast<std::size_t>(std::llround(feature_window_s / resolution_s)); }

  void validate() const {
    if (!(resolution_s > 0.0)) throw ConfigError("resolution_s must be positive");
    if (lag_p < 1) throw ConfigError("lag_p must be >= 1");
    const double pts = tau_minutes * 60.0 / resolution_s;
    if (!(pts > 0.0) || std::abs(pts - std::round(pts)) > 1e-9 * std::max(1.0, pts)) {
      throw ConfigError("tau_minutes * 60 / resolution_s must be an integer");
    }
    if (window_points() < kChannels * static_cast<std::size_t>(lag_p) + 2) {
      throw ConfigError("training window must hold at least K*lag_p+2 points");
    }
    if (!(threshold > 0.0)) throw ConfigError("threshold must be positive");
    if (q < 1) throw ConfigError("q must be >= 1");
    if (static_cast<double>(q) * resolution_s > feature_window_s + 1e-9) {
      throw ConfigError("q * resolution_s must not exceed feature_window_s");
    }
    const double fpts = feature_window_s / resolution_s;
    if (std::abs(fpts - std::round(fpts)) > 1e-9 * std::max(1.0, fpts)) {
      throw ConfigError("feature_window_s must be a whole number of ticks");
    }
    if (input == InputKind::Csv && input_path.empty()) throw ConfigError("csv input needs input_path");
    if (replay_speed < 0.0) throw ConfigError("replay_speed must be >= 0");
    if (listen_port < -1 || listen_port > 65535) throw ConfigError("listen_port out of range");
    if (subscriber_queue == 0) throw ConfigError("subscriber_queue must be positive");
  }

  DetectorConfig detector_config() const {
    DetectorConfig d;
    d.window = window_points();
    d.p = lag_p;
    d.threshold = threshold;
    d.q = q;
    // The feature window holds the trigger point plus the following points
    // and never outlives the forecast horizon.
    d.feature_window = std::min(feature_points(), static_cast<std::size_t>(q) + 1);
    d.retrain = true;
    return d;
  }

  // Every key may be overridden by PMUVAR_<KEY> in the environment.
  static PipelineConfig from_config(KeyValueConfig kv, bool apply_env = true) {
    if (apply_env) kv.apply_env_overrides(kKeys);
    PipelineConfig c;
    c.resolution_s = kv.get_double("resolution_s", c.resolution_s);
    c.tau_minutes = kv.get_double("tau_minutes", c.tau_minutes);
    c.lag_p = static_cast<int>(kv.get_int("lag_p", c.lag_p));
    c.threshold = kv.get_double("threshold", c.threshold);
    c.q = static_cast<int>(kv.get_int("q", c.q));
    c.feature_window_s = kv.get_double("feature_window_s", c.feature_window_s);
    const std::string input = kv.get_string("input", "synthetic");
    if (input == "csv") {
      c.input = InputKind::Csv;
    } else if (input == "synthetic") {
      c.input = InputKind::Synthetic;
    } else {
      throw ConfigError("input must be 'csv' or 'synthetic', got '" + input + "'");
    }
    c.input_path = kv.get_string("input_path", "");
    c.input_rate_hz = kv.get_double("input_rate_hz", c.input_rate_hz);
    c.replay_speed = kv.get_double("replay_speed", c.replay_speed);
    c.scenario_file = kv.get_string("scenario_file", "");
    c.listen_host = kv.get_string("listen_host", c.listen_host);
    c.listen_port = static_cast<int>(kv.get_int("listen_port", c.listen_port));
    c.persistence_dir = kv.get_string("persistence_dir", "");
    c.classifier_model = kv.get_string("classifier_model", "");
    c.classifier_train = kv.get_string("classifier_train", "");
    c.classifier_seed = static_cast<std::uint64_t>(kv.get_int("classifier_seed", 1));
    c.subscriber_queue = static_cast<std::size_t>(kv.get_int("subscriber_queue", 4096));
    c.history_s = kv.get_double("history_s", c.history_s);
    c.scenario_keys = c.scenario_file.empty() ? kv : KeyValueConfig::load(c.scenario_file);
    c.validate();
    return c;
  }

  Json to_json() const {
    return {{"resolution_s", resolution_s},
            {"tau_minutes", tau_minutes},
            {"lag_p", lag_p},
            {"threshold", threshold},
            {"q", q},
            {"feature_window_s", feature_window_s},
            {"input", input == InputKind::Csv ? "csv" : "synthetic"},
            {"input_path", input_path},
            {"input_rate_hz", input_rate_hz},
            {"replay_speed", replay_speed},
            {"scenario_file", scenario_file},
            {"listen_host", listen_host},
            {"listen_port", listen_port},
            {"persistence_dir", persistence_dir},
            {"classifier_model", classifier_model},
            {"classifier_train", classifier_train},
            {"classifier_seed", classifier_seed},
            {"subscriber_queue", subscriber_queue},
            {"history_s", history_s},
            {"env_prefix", std::string(kEnvPrefix)}};
  }
};

class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::optional<PmuSample> next() = 0;
  virtual double rate_hz() const = 0;
};

class CsvSource : public SampleSource {
 public:
  CsvSource(const std::string& path, double rate_hz) : in_(path), rate_(rate_hz) {
    if (!in_) throw ConfigError("cannot open input '" + path + "'");
    // A zero-byte file is an empty stream rather than a missing header.
    if (in_.peek() != std::char_traits<char>::eof()) reader_.emplace(in_);
  }
  std::optional<PmuSample> next() override { return reader_ ? reader_->next() : std::nullopt; }
  double rate_hz() const override { return rate_; }

 private:
  std::ifstream in_;
  std::optional<CsvReader> reader_;
  double rate_;
};

class VectorSource : public SampleSource {
 public:
  VectorSource(std::vector<PmuSample> samples, double rate_hz) : samples_(std::move(samples)), rate_(rate_hz) {}
  std::optional<PmuSample> next() override {
    if (at_ >= samples_.size()) return std::nullopt;
    return samples_[at_++];
  }
  double rate_hz() const override { return rate_; }

 private:
  std::vector<PmuSample> samples_;
  std::size_t at_ = 0;
  double rate_;
};

// Synthetic scenario streamed as raw PMU records.
class ScenarioSource : public SampleSource {
 public:
  explicit ScenarioSource(const SyntheticScenario& scenario)
      : series_(synthesize_scenario(scenario)), rate_(scenario.sample_rate_hz) {
    if (!series_.empty()) t0_ = series_.front().timestamp;
  }
  std::optional<PmuSample> next() override {
    if (at_ >= series_.size()) return std::nullopt;
    const auto& v = series_[at_++];
    return to_pmu_sample(v, seconds_between(t0_, v.timestamp));
  }
  double rate_hz() const override { return rate_; }

 private:
  ChannelSeries series_;
  std::size_t at_ = 0;
  double rate_;
  Timestamp t0_{};
};

inline std::unique_ptr<SampleSource> make_source(const PipelineConfig& c) {
  if (c.input == InputKind::Csv) return std::make_unique<CsvSource>(c.input_path, c.input_rate_hz);
  return std::make_unique<ScenarioSource>(scenario_from_config(c.scenario_keys));
}

// Classifier from the configured tree record or training CSV; otherwise a
// tree trained on a synthetic corpus generated at the live threshold.
inline DecisionTree load_classifier(const PipelineConfig& c) {
  if (!c.classifier_model.empty()) {
    std::ifstream in(c.classifier_model);
    if (!in) throw ConfigError("cannot open classifier_model '" + c.classifier_model + "'");
    return decision_tree_from_json(Json::parse(in));
  }
  TrainConfig tc;
  tc.seed = c.classifier_seed;
  if (!c.classifier_train.empty()) {
    std::ifstream in(c.classifier_train);
    if (!in) throw ConfigError("cannot open classifier_train '" + c.classifier_train + "'");
    const auto rows = read_training_csv(in);
    if (rows.empty()) throw ValidationError("classifier training set is empty");
    return train_tree(feature_matrix(rows), label_vector(rows), tc);
  }
  CorpusConfig cc;
  cc.events = 400;
  cc.seed = c.classifier_seed;
  cc.threshold = c.threshold;
  cc.min_sigma = std::max(5.0, 1.25 * c.threshold);
  cc.max_sigma = 10.0 * cc.min_sigma;
  cc.q = c.q;
  cc.feature_window = c.detector_config().feature_window;
  const auto corpus = generate_corpus(random_stable_model(static_cast<int>(kChannels), 1, derive_seed(c.classifier_seed, 7)), cc);
  const auto rows = corpus_rows(corpus);
  return train_tree(feature_matrix(rows), label_vector(rows), tc);
}

struct PipelineSnapshot {
  double threshold = 0.0;
  std::optional<double> pending_threshold;
  DetectorMode mode = DetectorMode::Normal;
  bool warming_up = true;
  bool finished = false;
  std::uint64_t samples = 0;
  std::uint64_t ticks = 0;
  std::uint64_t events = 0;
  std::uint64_t refits = 0;
  std::optional<VarModel> model;
  std::optional<StandardizationParams> standardization;
  std::optional<Timestamp> last_tick;
  double tick_ms_max = 0.0;
  double tick_ms_mean = 0.0;
  std::uint64_t overruns = 0;   // ticks whose processing exceeded resolution_s
  double max_lateness_s = 0.0;  // paced replay: wall-clock delay behind schedule
};

inline Json to_json(const PipelineSnapshot& s) {
  return {{"threshold", s.threshold},
          {"pending_threshold", s.pending_threshold ? Json(*s.pending_threshold) : Json(nullptr)},
          {"mode", s.mode == DetectorMode::Normal ? "normal" : "anomaly"},
          {"warming_up", s.warming_up},
          {"finished", s.finished},
          {"samples", s.samples},
          {"ticks", s.ticks},
          {"events", s.events},
          {"refits", s.refits},
          {"last_tick", s.last_tick ? Json(format_iso8601(*s.last_tick)) : Json(nullptr)},
          {"tick_ms_max", s.tick_ms_max},
          {"tick_ms_mean", s.tick_ms_mean},
          {"overruns", s.overruns},
          {"max_lateness_s", s.max_lateness_s}};
}

// Live pipeline: raw samples -> coarse-graining -> detector -> features ->
// classifier -> store and subscribers. push()/run()/finish() belong to one
// agent thread; the request_* calls and readers may come from any thread.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::shared_ptr<EventStore> store, std::optional<DecisionTree> classifier)
      : config_(std::move(config)),
        store_(std::move(store)),
        classifier_(std::move(classifier)),
        detector_(config_.detector_config()),
        broadcaster_(config_.subscriber_queue, config_.history_s) {
    config_.validate();
    if (!store_) store_ = std::make_shared<EventStore>();
    detector_.set_next_event_id(store_->max_event_id() + 1);
    publish_snapshot();
  }

  const PipelineConfig& config() const { return config_; }
  EventStore& store() { return *store_; }
  Broadcaster& broadcaster() { return broadcaster_; }
  const std::optional<DecisionTree>& classifier() const { return classifier_; }

  std::shared_ptr<const PipelineSnapshot> snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
  }

  // Queued; applied by the agent before its next tick. Journaled immediately.
  ThresholdChange request_threshold(double value, const std::string& author) {
    if (!(value > 0.0) || !std::isfinite(value)) throw ValidationError("threshold must be a positive number");
    ThresholdChange change;
    {
      std::lock_guard lock(control_mu_);
      change.previous = pending_.empty() ? current_threshold() : pending_.back().value;
      change.value = value;
      change.author = author.empty() ? "anonymous" : author;
      change.requested_at = std::chrono::time_point_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now());
      store_->journal_threshold(change);
      pending_.push_back(change);
    }
    {
      std::lock_guard lock(snap_mu_);
      auto s = std::make_shared<PipelineSnapshot>(*snapshot_);
      s->pending_threshold = value;
      snapshot_ = s;
    }
    return change;
  }

  LabelRecord label_event(std::uint64_t event_id, std::string_view class_name, const std::string& operator_id) {
    LabelRecord l;
    l.event_id = event_id;
    l.label = parse_anomaly_class(class_name);
    l.operator_id = operator_id.empty() ? "operator" : operator_id;
    l.labeled_at = std::chrono::time_point_cast<std::chrono::nanoseconds>(std::chrono::system_clock::now());
    store_->add_label(l);
    return l;
  }

  void push(const PmuSample& s) {
    if (finished_) throw StateError("pipeline already finished");
    if (!grainer_) throw StateError("pipeline input rate not set");
    ++samples_;
    if (auto block = grainer_->push(derive_channels(s))) tick(*block);
  }

  void set_input_rate(double rate_hz) { grainer_.emplace(rate_hz, config_.resolution_s); }

  // One model-resolution tick in physical units.
  void tick(const ChannelVector& v) {
    const auto t0 = std::chrono::steady_clock::now();
    apply_pending();
    StepResult r = detector_.step(v.to_eigen(), v.timestamp);
    ++ticks_;
    last_tick_ = v.timestamp;
    if (r.score) {
      Json rec = score_record(*r.score);
      rec["threshold"] = detector_.threshold();
      broadcaster_.publish_score(v.timestamp, std::move(rec));
    }
    if (r.opened) {
      const auto& e = *r.opened;
      broadcaster_.publish(RecordKind::EventOpen,
                           {{"type", "event_open"},
                            {"id", e.id},
                            {"start", format_iso8601(e.start)},
                            {"triggers", e.triggers.names()},
                            {"threshold", e.threshold},
                            {"feature_channel", kScoreChannelNames[static_cast<std::size_t>(e.feature_channel)]}});
    }
    if (r.closed) close_event(std::move(*r.closed));
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    tick_ms_max_ = std::max(tick_ms_max_, ms);
    tick_ms_total_ += ms;
    if (ms > config_.resolution_s * 1000.0) ++overruns_;
    publish_snapshot();
  }

  // End of input: closes an open event as truncated and ends the stream.
  void finish() {
    if (finished_) return;
    apply_pending();
    if (auto e = detector_.flush()) close_event(std::move(*e));
    finished_ = true;
    publish_snapshot();
    broadcaster_.close();
  }

  // Drains a source, pacing by sample timestamps when replay_speed > 0.
  void run(SampleSource& source, std::stop_token stop = {}) {
    set_input_rate(source.rate_hz());
    std::optional<Timestamp> first;
    const auto wall0 = std::chrono::steady_clock::now();
    while (!stop.stop_requested()) {
      auto s = source.next();
      if (!s) break;
      if (config_.replay_speed > 0.0) {
        if (!first) first = s->timestamp;
        const auto due = wall0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                     std::chrono::duration<double>(seconds_between(*first, s->timestamp) /
                                                                   config_.replay_speed));
        const auto now = std::chrono::steady_clock::now();
        if (due > now) {
          std::this_thread::sleep_until(due);
        } else {
          max_lateness_s_ = std::max(max_lateness_s_, std::chrono::duration<double>(now - due).count());
        }
      }
      push(*s);
    }
    finish();
  }

  Json model_summary() const {
    auto snap = snapshot();
    Json j{{"threshold", snap->threshold}, {"mode", snap->mode == DetectorMode::Normal ? "normal" : "anomaly"}};
    j["model"] = snap->model ? to_json(*snap->model) : Json(nullptr);
    j["standardization"] = snap->standardization ? to_json(*snap->standardization) : Json(nullptr);
    return j;
  }

 private:
  double current_threshold() const { return detector_threshold_.load(); }

  void apply_pending() {
    std::deque<ThresholdChange> changes;
    {
      std::lock_guard lock(control_mu_);
      changes.swap(pending_);
    }
    for (const auto& c : changes) {
      detector_.set_threshold(c.value);
      detector_threshold_ = c.value;
      broadcaster_.publish(RecordKind::Threshold,
                           {{"type", "threshold"}, {"value", c.value}, {"previous", c.previous}, {"author", c.author}});
    }
  }

  void close_event(AnomalyEvent e) {
    StoredEvent se;
    se.features = extract_features(e.feature_scores(), e.threshold);
    if (classifier_) {
      e.label = anomaly_class_from_id(classifier_->predict(se.features->to_array()).predicted);
      e.label_source = LabelSource::Model;
    }
    se.event = std::move(e);
    store_->append_event(se);
    broadcaster_.publish(RecordKind::EventClose, to_json(se));
  }

  void publish_snapshot() {
    auto s = std::make_shared<PipelineSnapshot>();
    s->threshold = detector_.threshold();
    {
      std::lock_guard lock(control_mu_);
      if (!pending_.empty()) s->pending_threshold = pending_.back().value;
    }
    s->mode = detector_.mode();
    s->warming_up = !detector_.initialized();
    s->finished = finished_;
    s->samples = samples_;
    s->ticks = ticks_;
    s->events = store_->size();
    s->refits = detector_.refit_count();
    if (detector_.initialized()) {
      s->model = detector_.model();
      s->standardization = detector_.standardization();
    }
    s->last_tick = last_tick_;
    s->tick_ms_max = tick_ms_max_;
    s->tick_ms_mean = ticks_ == 0 ? 0.0 : tick_ms_total_ / static_cast<double>(ticks_);
    s->overruns = overruns_;
    s->max_lateness_s = max_lateness_s_;
    {
      std::lock_guard lock(snap_mu_);
      snapshot_ = s;
    }
    Json summary{{"threshold", s->threshold}, {"ticks", s->ticks}, {"events", s->events}};
    summary["model"] = s->model ? to_json(*s->model) : Json(nullptr);
    broadcaster_.set_summary(std::move(summary));
  }

  PipelineConfig config_;
  std::shared_ptr<EventStore> store_;
  std::optional<DecisionTree> classifier_;
  Detector detector_;
  Broadcaster broadcaster_;
  std::optional<CoarseGrainer> grainer_;
  std::atomic<double> detector_threshold_{config_.threshold};

  std::mutex control_mu_;
  std::deque<ThresholdChange> pending_;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const PipelineSnapshot> snapshot_;

  bool finished_ = false;
  std::uint64_t samples_ = 0;
  std::uint64_t ticks_ = 0;
  std::optional<Timestamp> last_tick_;
  double tick_ms_max_ = 0.0;
  double tick_ms_total_ = 0.0;
  std::uint64_t overruns_ = 0;
  double max_lateness_s_ = 0.0;
};

}  // namespace pmuvar
