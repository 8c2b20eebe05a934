#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pmuvar/pipeline.hpp"

using namespace pmuvar;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("pmuvar_pipe_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 2 Hz synthetic input so one sample is one 0.5 s tick; 2 minute training window.
std::string base_config(double threshold = 12.0) {
  std::ostringstream s;
  s << "tau_minutes = 2\n"
    << "threshold = " << threshold << "\n"
    << "input = synthetic\n"
    << "rate_hz = 2\n"
    << "duration_s = 600\n"
    << "seed = 3\n";
  return s.str();
}

PipelineConfig config_from(const std::string& text, bool env = false) {
  std::istringstream in(text);
  return PipelineConfig::from_config(KeyValueConfig::parse(in), env);
}

const DecisionTree& classifier() {
  static const DecisionTree tree = load_classifier(config_from(base_config()));
  return tree;
}

struct RunResult {
  std::vector<StoredEvent> events;
  std::shared_ptr<const PipelineSnapshot> snapshot;
};

RunResult run_config(const PipelineConfig& cfg, const fs::path& dir = {}) {
  auto store = dir.empty() ? std::make_shared<EventStore>() : std::make_shared<EventStore>(dir);
  Pipeline p(cfg, store, classifier());
  auto src = make_source(cfg);
  p.run(*src);
  return {store->events(), p.snapshot()};
}

// Survival function of the chi distribution with 4 degrees of freedom.
double chi4_tail(double x) { return std::exp(-x * x / 2.0) * (1.0 + x * x / 2.0); }

}  // namespace

TEST(PipelineConfig, DefaultsAndValidation) {
  PipelineConfig c = config_from("");
  EXPECT_EQ(c.window_points(), 1200u);
  EXPECT_EQ(c.detector_config().feature_window, 10u);
  EXPECT_EQ(c.threshold, 12.0);
  EXPECT_THROW(config_from("tau_minutes = 0.001\n"), ConfigError);
  EXPECT_THROW(config_from("q = 11\n"), ConfigError);
  EXPECT_THROW(config_from("input = kafka\n"), ConfigError);
  EXPECT_THROW(config_from("input = csv\n"), ConfigError);
  EXPECT_THROW(config_from("threshold = -1\n"), ConfigError);
  EXPECT_THROW(config_from("listen_port = 70000\n"), ConfigError);
}

TEST(PipelineConfig, EnvironmentOverridesEveryListedKey) {
  ::setenv("PMUVAR_THRESHOLD", "15", 1);
  ::setenv("PMUVAR_TAU_MINUTES", "5", 1);
  PipelineConfig c = config_from("threshold = 12\n", true);
  ::unsetenv("PMUVAR_THRESHOLD");
  ::unsetenv("PMUVAR_TAU_MINUTES");
  EXPECT_EQ(c.threshold, 15.0);
  EXPECT_EQ(c.tau_minutes, 5.0);
  EXPECT_EQ(config_from("threshold = 12\n", true).threshold, 12.0);
  for (const auto& k : PipelineConfig::kKeys) EXPECT_TRUE(c.to_json().contains(k)) << k;
}

TEST(Pipeline, ThreeInjectedEventsGiveThreeLabeledEvents) {
  PipelineConfig cfg = config_from(base_config() +
                                   "event = spike, 200, 30, 0.5, V\n"
                                   "event = drop, 350, 30, 2, I\n"
                                   "event = spike, 500, -30, 0.5, F\n");
  RunResult r = run_config(cfg);
  ASSERT_EQ(r.events.size(), 3u);
  const double starts[] = {200.0, 350.0, 500.0};
  const Timestamp t0 = Timestamp{std::chrono::seconds{1704067200}};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& e = r.events[i];
    EXPECT_EQ(e.event.id, i + 1);
    EXPECT_NEAR(seconds_between(t0, e.event.start), starts[i], 1.0);
    EXPECT_TRUE(e.event.label.has_value());
    EXPECT_EQ(e.event.label_source, LabelSource::Model);
    ASSERT_TRUE(e.features);
    EXPECT_EQ(e.event.score_window.size(), 10u);
  }
  EXPECT_TRUE(r.snapshot->finished);
  EXPECT_EQ(r.snapshot->ticks, 1200u);
  EXPECT_EQ(r.snapshot->events, 3u);
}

TEST(Pipeline, AmbientReplayRespectsChiTailBound) {
  PipelineConfig cfg = config_from(base_config(15.0));
  RunResult r = run_config(cfg);
  const double scored = static_cast<double>(r.snapshot->ticks - cfg.window_points());
  // The largest score on a tick is the Mahalanobis distance, chi(4) under the model.
  const double expected = scored * chi4_tail(15.0);
  EXPECT_LT(expected, 1e-30);
  EXPECT_EQ(r.events.size(), 0u);
}

TEST(Pipeline, ZeroLengthInputShutsDownCleanly) {
  TempDir dir;
  const auto csv = dir.path() / "empty.csv";
  std::ofstream(csv).close();
  PipelineConfig cfg = config_from("input = csv\ninput_path = " + csv.string() + "\n");
  const auto store_dir = dir.path() / "store";
  RunResult r = run_config(cfg, store_dir);
  EXPECT_TRUE(r.events.empty());
  EXPECT_TRUE(r.snapshot->finished);
  EXPECT_EQ(r.snapshot->ticks, 0u);
  EXPECT_EQ(fs::file_size(store_dir / "events.log"), 0u);

  const auto header_only = dir.path() / "header.csv";
  std::ofstream(header_only) << kCsvHeader << "\n";
  cfg.input_path = header_only.string();
  EXPECT_TRUE(run_config(cfg).events.empty());
}

TEST(Pipeline, CsvReplayMatchesScenario) {
  TempDir dir;
  PipelineConfig syn = config_from(base_config() + "event = step, 300, 25, 0, V\n");
  SyntheticScenario sc = scenario_from_config(syn.scenario_keys);
  const auto csv = dir.path() / "in.csv";
  {
    std::ofstream out(csv);
    write_csv(out, to_pmu_samples(synthesize_scenario(sc)));
  }
  PipelineConfig rep = config_from(base_config() + "input = csv\ninput_rate_hz = 2\ninput_path = " + csv.string() + "\n");
  RunResult a = run_config(syn), b = run_config(rep);
  ASSERT_EQ(a.events.size(), b.events.size());
  ASSERT_GE(a.events.size(), 1u);
  for (std::size_t i = 0; i < a.events.size(); ++i) EXPECT_EQ(a.events[i].event.start, b.events[i].event.start);
}

TEST(Pipeline, ThresholdChangesApplyOnNextTick) {
  PipelineConfig cfg = config_from(base_config());
  Pipeline p(cfg, nullptr, std::nullopt);
  p.set_input_rate(2.0);
  auto c = p.request_threshold(12.0, "alice");
  EXPECT_EQ(c.previous, 12.0);
  EXPECT_EQ(p.snapshot()->threshold, 12.0);
  p.request_threshold(15.0, "bob");
  EXPECT_EQ(p.snapshot()->threshold, 12.0);
  EXPECT_EQ(p.snapshot()->pending_threshold, 15.0);
  ChannelVector v;
  v.values = {1.0, 2.0, 0.1, 60.0};
  p.tick(v);
  EXPECT_EQ(p.snapshot()->threshold, 15.0);
  EXPECT_FALSE(p.snapshot()->pending_threshold);
  EXPECT_THROW(p.request_threshold(-1.0, "x"), ValidationError);
  EXPECT_THROW(p.request_threshold(0.0, "x"), ValidationError);
  EXPECT_THROW(p.request_threshold(std::nan(""), "x"), ValidationError);
  auto journal = p.store().threshold_journal();
  ASSERT_EQ(journal.size(), 2u);
  EXPECT_EQ(journal[1].author, "bob");
  EXPECT_EQ(journal[1].previous, 12.0);
}

TEST(Pipeline, OperatorLabels) {
  PipelineConfig cfg = config_from(base_config() + "event = spike, 200, 30, 0.5, V\n");
  auto store = std::make_shared<EventStore>();
  Pipeline p(cfg, store, classifier());
  auto src = make_source(cfg);
  p.run(*src);
  ASSERT_EQ(store->size(), 1u);
  const auto id = store->events()[0].event.id;
  p.label_event(id, "drop", "alice");
  EXPECT_EQ(store->effective_label(id).label, AnomalyClass::Drop);
  p.label_event(id, "oscillatory", "bob");
  EXPECT_EQ(store->effective_label(id).label, AnomalyClass::Oscillatory);
  EXPECT_EQ(store->effective_label(id).operator_id, "bob");
  EXPECT_EQ(store->labels_for(id).size(), 2u);
  EXPECT_THROW(p.label_event(999, "drop", "alice"), NotFoundError);
  EXPECT_THROW(p.label_event(id, "hump", "alice"), ValidationError);
}

TEST(Pipeline, RestartRecoversStoreAndContinuesIds) {
  TempDir dir;
  PipelineConfig cfg = config_from(base_config() + "event = spike, 200, 30, 0.5, V\nevent = spike, 400, 30, 0.5, I\n");
  RunResult first = run_config(cfg, dir.path());
  ASSERT_EQ(first.events.size(), 2u);
  {
    std::ofstream out(dir.path() / "events.log", std::ios::binary | std::ios::app);
    out << "deadbeef {\"type\":\"event\",\"id\":";  // crash mid-write
  }
  auto store = std::make_shared<EventStore>(dir.path());
  EXPECT_EQ(store->size(), 2u);
  Pipeline p(cfg, store, classifier());
  auto src = make_source(cfg);
  p.run(*src);
  auto events = store->events();
  ASSERT_EQ(events.size(), 4u);
  EXPECT_EQ(events[2].event.id, 3u);
  EXPECT_EQ(events[3].event.id, 4u);
  EXPECT_EQ(EventStore(dir.path()).size(), 4u);
}

TEST(Pipeline, TwoRunsWriteIdenticalEventLogs) {
  TempDir a, b;
  PipelineConfig cfg = config_from(base_config() + "event = oscillatory, 250, 30, 4, V\nevent = step, 450, 20, 0, F\n");
  run_config(cfg, a.path());
  run_config(cfg, b.path());
  const std::string la = read_file(a.path() / "events.log");
  EXPECT_FALSE(la.empty());
  EXPECT_EQ(la, read_file(b.path() / "events.log"));
}

TEST(Pipeline, SubscriberSeesEventsAndEnd) {
  PipelineConfig cfg = config_from(base_config() + "event = spike, 200, 30, 0.5, V\n");
  Pipeline p(cfg, nullptr, classifier());
  auto sub = p.broadcaster().subscribe();
  auto src = make_source(cfg);
  p.run(*src);
  std::size_t scores = 0, opens = 0, closes = 0, ends = 0;
  while (auto r = sub->try_pop()) {
    scores += r->kind == RecordKind::Score;
    opens += r->kind == RecordKind::EventOpen;
    closes += r->kind == RecordKind::EventClose;
    ends += r->kind == RecordKind::End;
  }
  EXPECT_EQ(scores, 1200u - cfg.window_points());
  EXPECT_EQ(opens, 1u);
  EXPECT_EQ(closes, 1u);
  EXPECT_EQ(ends, 1u);
  EXPECT_EQ(sub->dropped_scores(), 0u);
}

TEST(Pipeline, PushAfterFinishIsStateError) {
  PipelineConfig cfg = config_from(base_config());
  Pipeline p(cfg, nullptr, std::nullopt);
  PmuSample s;
  EXPECT_THROW(p.push(s), StateError);
  p.set_input_rate(2.0);
  p.finish();
  EXPECT_THROW(p.push(s), StateError);
}
