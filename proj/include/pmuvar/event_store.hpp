#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/event_log.hpp"
#include "pmuvar/serialization.hpp"
#include "pmuvar/training_set.hpp"

namespace pmuvar {

struct EffectiveLabel {
  std::optional<AnomalyClass> label;
  LabelSource source = LabelSource::Model;
  std::string operator_id;
};

// Events, operator labels and the threshold journal. With a directory the
// three streams are kept in events.log, labels.log and thresholds.log and
// replayed on construction; without one everything stays in memory.
class EventStore {
 public:
  EventStore() = default;

  explicit EventStore(const std::filesystem::path& dir) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    events_log_ = std::make_unique<RecordLog>(dir / "events.log");
    labels_log_ = std::make_unique<RecordLog>(dir / "labels.log");
    thresholds_log_ = std::make_unique<RecordLog>(dir / "thresholds.log");
    for (const auto& j : events_log_->recovered()) insert(stored_event_from_json(j));
    for (const auto& j : labels_log_->recovered()) {
      LabelRecord l = label_record_from_json(j);
      if (!index_.contains(l.event_id)) throw FormatError("label for unknown event " + std::to_string(l.event_id));
      labels_[l.event_id].push_back(std::move(l));
    }
    for (const auto& j : thresholds_log_->recovered()) thresholds_.push_back(threshold_change_from_json(j));
  }

  bool persistent() const { return events_log_ != nullptr; }

  void append_event(const StoredEvent& e) {
    std::lock_guard lock(mu_);
    if (index_.contains(e.event.id)) throw ValidationError("duplicate event id " + std::to_string(e.event.id));
    if (events_log_) events_log_->append(to_json(e));
    insert(e);
  }

  // Appends a label record; the event must exist.
  void add_label(const LabelRecord& l) {
    std::lock_guard lock(mu_);
    if (!index_.contains(l.event_id)) throw NotFoundError("no event with id " + std::to_string(l.event_id));
    if (labels_log_) labels_log_->append(to_json(l));
    labels_[l.event_id].push_back(l);
  }

  void journal_threshold(const ThresholdChange& t) {
    std::lock_guard lock(mu_);
    if (thresholds_log_) thresholds_log_->append(to_json(t));
    thresholds_.push_back(t);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return events_.size();
  }

  std::uint64_t max_event_id() const {
    std::lock_guard lock(mu_);
    return events_.empty() ? 0 : events_.back().event.id;
  }

  std::vector<StoredEvent> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  // Events with id greater than `since`, in id order.
  std::vector<StoredEvent> events_since(std::uint64_t since) const {
    std::lock_guard lock(mu_);
    std::vector<StoredEvent> out;
    for (const auto& e : events_) {
      if (e.event.id > since) out.push_back(e);
    }
    return out;
  }

  std::optional<StoredEvent> find(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return events_[it->second];
  }

  std::vector<LabelRecord> labels_for(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = labels_.find(id);
    return it == labels_.end() ? std::vector<LabelRecord>{} : it->second;
  }

  std::vector<ThresholdChange> threshold_journal() const {
    std::lock_guard lock(mu_);
    return thresholds_;
  }

  EffectiveLabel effective_label(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    return effective_label_locked(id);
  }

  // Rows for every labeled event with features; operator labels supersede model labels.
  std::vector<LabeledFeatures> training_rows(bool operator_only = false) const {
    std::lock_guard lock(mu_);
    std::vector<LabeledFeatures> rows;
    for (const auto& e : events_) {
      if (!e.features) continue;
      const EffectiveLabel l = effective_label_locked(e.event.id);
      if (!l.label) continue;
      if (operator_only && l.source != LabelSource::Operator) continue;
      rows.push_back({e.event.id, *e.features, *l.label});
    }
    return rows;
  }

 private:
  void insert(StoredEvent e) {
    if (!events_.empty() && e.event.id <= events_.back().event.id) {
      throw FormatError("event ids out of order at " + std::to_string(e.event.id));
    }
    index_[e.event.id] = events_.size();
    events_.push_back(std::move(e));
  }

  EffectiveLabel effective_label_locked(std::uint64_t id) const {
    EffectiveLabel out;
    auto lit = labels_.find(id);
    if (lit != labels_.end() && !lit->second.empty()) {
      out.label = lit->second.back().label;
      out.source = LabelSource::Operator;
      out.operator_id = lit->second.back().operator_id;
      return out;
    }
    auto it = index_.find(id);
    if (it != index_.end()) {
      out.label = events_[it->second].event.label;
      out.source = events_[it->second].event.label_source;
    }
    return out;
  }

  mutable std::mutex mu_;
  std::vector<StoredEvent> events_;
  std::map<std::uint64_t, std::size_t> index_;
  std::map<std::uint64_t, std::vector<LabelRecord>> labels_;
  std::vector<ThresholdChange> thresholds_;
  std::unique_ptr<RecordLog> events_log_;
  std::unique_ptr<RecordLog> labels_log_;
  std::unique_ptr<RecordLog> thresholds_log_;
};

}  // namespace pmuvar
