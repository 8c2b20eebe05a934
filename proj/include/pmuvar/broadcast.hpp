#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pmuvar/timestamp.hpp"

namespace pmuvar {

enum class RecordKind { Snapshot, Score, EventOpen, EventClose, Threshold, End };

struct StreamRecord {
  RecordKind kind = RecordKind::Score;
  std::uint64_t seq = 0;  // snapshot records carry the seq of the last record they cover
  std::string payload;    // single-line JSON
};

// One subscriber's queue. Score records beyond the capacity are dropped and
// counted; every other record is always queued.
class Subscription {
 public:
  explicit Subscription(std::size_t score_capacity) : capacity_(score_capacity) {}

  std::optional<StreamRecord> pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !queue_.empty(); })) return std::nullopt;
    StreamRecord r = std::move(queue_.front());
    queue_.pop_front();
    if (r.kind == RecordKind::Score) --queued_scores_;
    return r;
  }

  std::optional<StreamRecord> try_pop() { return pop(std::chrono::milliseconds(0)); }

  std::uint64_t dropped_scores() const {
    std::lock_guard lock(mu_);
    return dropped_;
  }

  std::size_t queued() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  friend class Broadcaster;

  void offer(const StreamRecord& r) {
    {
      std::lock_guard lock(mu_);
      if (r.kind == RecordKind::Score) {
        if (queued_scores_ >= capacity_) {
          ++dropped_;
          return;
        }
        ++queued_scores_;
      }
      queue_.push_back(r);
    }
    cv_.notify_one();
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<StreamRecord> queue_;
  std::size_t capacity_;
  std::size_t queued_scores_ = 0;
  std::uint64_t dropped_ = 0;
};

// Fans stream records out to subscribers. A new subscriber first receives a
// snapshot record: the current model summary and the score records of the
// last `history_s` seconds of stream time.
class Broadcaster {
 public:
  explicit Broadcaster(std::size_t score_capacity = 4096, double history_s = 300.0)
      : capacity_(score_capacity), history_(std::chrono::duration_cast<std::chrono::nanoseconds>(
                                               std::chrono::duration<double>(history_s))) {}

  std::shared_ptr<Subscription> subscribe() {
    auto sub = std::make_shared<Subscription>(capacity_);
    std::lock_guard lock(mu_);
    nlohmann::json snap{{"type", "snapshot"}, {"model", summary_}, {"seq", seq_}};
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& [ts, rec] : recent_) scores.push_back(rec);
    snap["scores"] = std::move(scores);
    sub->offer({RecordKind::Snapshot, seq_, snap.dump()});
    if (ended_) sub->offer({RecordKind::End, seq_, R"({"type":"end"})"});
    subs_.push_back(sub);
    return sub;
  }

  void set_summary(nlohmann::json summary) {
    std::lock_guard lock(mu_);
    summary_ = std::move(summary);
  }

  void publish_score(Timestamp ts, nlohmann::json record) {
    std::lock_guard lock(mu_);
    record["seq"] = ++seq_;
    StreamRecord r{RecordKind::Score, seq_, record.dump()};
    recent_.emplace_back(ts, std::move(record));
    while (!recent_.empty() && recent_.front().first < ts - history_) recent_.pop_front();
    fan_out(r);
  }

  void publish(RecordKind kind, nlohmann::json record) {
    std::lock_guard lock(mu_);
    record["seq"] = ++seq_;
    fan_out({kind, seq_, record.dump()});
  }

  // Marks the end of the stream; subscribers receive an end record.
  void close() {
    std::lock_guard lock(mu_);
    if (ended_) return;
    ended_ = true;
    fan_out({RecordKind::End, ++seq_, R"({"type":"end"})"});
  }

  std::size_t subscriber_count() {
    std::lock_guard lock(mu_);
    prune();
    return subs_.size();
  }

  std::uint64_t last_seq() const {
    std::lock_guard lock(mu_);
    return seq_;
  }

 private:
  void fan_out(const StreamRecord& r) {
    prune();
    for (auto& w : subs_) {
      if (auto s = w.lock()) s->offer(r);
    }
  }

  void prune() {
    std::erase_if(subs_, [](const std::weak_ptr<Subscription>& w) { return w.expired(); });
  }

  mutable std::mutex mu_;
  std::size_t capacity_;
  std::chrono::nanoseconds history_;
  std::vector<std::weak_ptr<Subscription>> subs_;
  std::deque<std::pair<Timestamp, nlohmann::json>> recent_;
  nlohmann::json summary_ = nlohmann::json::object();
  std::uint64_t seq_ = 0;
  bool ended_ = false;
};

}  // namespace pmuvar
