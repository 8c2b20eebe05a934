#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "pmuvar/event_log.hpp"
#include "pmuvar/event_store.hpp"

using namespace pmuvar;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("pmuvar_test_" + std::to_string(rd()) + std::to_string(rd()));
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

void append_raw(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::app);
  out << bytes;
}

StoredEvent event(std::uint64_t id) {
  StoredEvent s;
  s.event.id = id;
  s.event.threshold = 12.0;
  s.event.triggers.insert(ScoreChannel::Multivariate);
  s.event.label = AnomalyClass::Spike;
  s.features = FeatureVector{};
  s.features->max_dist = 13.0 + static_cast<double>(id);
  s.features->count_above_T = 1.0;
  return s;
}

}  // namespace

TEST(RecordLog, FrameChecksumMatchesKnownCrc) {
  // CRC-32 of "123456789" is the standard check value cbf43926.
  EXPECT_EQ(RecordLog::frame("123456789"), "cbf43926 123456789");
  auto payload = RecordLog::unframe("cbf43926 123456789");
  ASSERT_TRUE(payload);
  EXPECT_EQ(*payload, "123456789");
  EXPECT_FALSE(RecordLog::unframe("cbf43927 123456789"));
  EXPECT_FALSE(RecordLog::unframe("CBF43926 123456789"));
  EXPECT_FALSE(RecordLog::unframe("short"));
}

TEST(RecordLog, AppendThenReopenRecoversRecords) {
  TempDir dir;
  const auto p = dir.path() / "a.log";
  {
    RecordLog log(p);
    EXPECT_TRUE(log.recovered().empty());
    log.append({{"n", 1}});
    log.append({{"n", 2}, {"s", "x y"}});
  }
  RecordLog again(p);
  ASSERT_EQ(again.recovered().size(), 2u);
  EXPECT_EQ(again.recovered()[1]["s"], "x y");
  EXPECT_EQ(again.truncated_bytes(), 0u);
}

TEST(RecordLog, PartialTailIsTruncated) {
  TempDir dir;
  const auto p = dir.path() / "a.log";
  {
    RecordLog log(p);
    log.append({{"n", 1}});
  }
  const auto good_size = fs::file_size(p);
  append_raw(p, RecordLog::frame(R"({"n":2})").substr(0, 12));
  {
    RecordLog log(p);
    EXPECT_EQ(log.recovered().size(), 1u);
    EXPECT_EQ(log.truncated_bytes(), 12u);
    EXPECT_EQ(fs::file_size(p), good_size);
    log.append({{"n", 3}});
  }
  RecordLog log(p);
  ASSERT_EQ(log.recovered().size(), 2u);
  EXPECT_EQ(log.recovered()[1]["n"], 3);
}

TEST(RecordLog, BadChecksumOnLastLineIsTruncated) {
  TempDir dir;
  const auto p = dir.path() / "a.log";
  { RecordLog(p).append({{"n", 1}}); }
  append_raw(p, "00000000 {\"n\":2}\n");
  RecordLog log(p);
  EXPECT_EQ(log.recovered().size(), 1u);
  EXPECT_GT(log.truncated_bytes(), 0u);
}

TEST(RecordLog, CorruptionBeforeLastLineIsFormatError) {
  TempDir dir;
  const auto p = dir.path() / "a.log";
  {
    RecordLog log(p);
    for (int i = 0; i < 3; ++i) log.append({{"n", i}});
  }
  std::string content = read_file(p);
  content[content.find("\"n\":1") + 4] = '7';
  std::ofstream(p, std::ios::binary | std::ios::trunc) << content;
  EXPECT_THROW(RecordLog{p}, FormatError);
}

TEST(EventStore, PersistsEventsLabelsAndThresholds) {
  TempDir dir;
  {
    EventStore store(dir.path());
    store.append_event(event(1));
    store.append_event(event(2));
    store.add_label({2, AnomalyClass::Drop, "alice", Timestamp{std::chrono::seconds{5}}});
    store.journal_threshold({15.0, 12.0, "bob", Timestamp{std::chrono::seconds{6}}});
  }
  EventStore store(dir.path());
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ(store.max_event_id(), 2u);
  auto l = store.effective_label(2);
  EXPECT_EQ(l.label, AnomalyClass::Drop);
  EXPECT_EQ(l.source, LabelSource::Operator);
  EXPECT_EQ(l.operator_id, "alice");
  EXPECT_EQ(store.effective_label(1).source, LabelSource::Model);
  ASSERT_EQ(store.threshold_journal().size(), 1u);
  EXPECT_EQ(store.threshold_journal()[0].author, "bob");
  EXPECT_EQ(store.find(1)->features, event(1).features);
}

TEST(EventStore, LatestOperatorLabelWins) {
  EventStore store;
  store.append_event(event(1));
  store.add_label({1, AnomalyClass::Drop, "a", {}});
  store.add_label({1, AnomalyClass::Step, "b", {}});
  EXPECT_EQ(store.effective_label(1).label, AnomalyClass::Step);
  EXPECT_EQ(store.labels_for(1).size(), 2u);
  auto rows = store.training_rows(true);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].label, AnomalyClass::Step);
}

TEST(EventStore, Errors) {
  EventStore store;
  store.append_event(event(3));
  EXPECT_THROW(store.append_event(event(3)), ValidationError);
  EXPECT_THROW(store.add_label({9, AnomalyClass::Drop, "a", {}}), NotFoundError);
  EXPECT_FALSE(store.find(9));
}

TEST(EventStore, EventsSinceIsExclusive) {
  EventStore store;
  for (std::uint64_t id = 1; id <= 5; ++id) store.append_event(event(id));
  auto since = store.events_since(3);
  ASSERT_EQ(since.size(), 2u);
  EXPECT_EQ(since[0].event.id, 4u);
  EXPECT_EQ(store.events_since(0).size(), 5u);
}
