#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/decision_tree.hpp"
#include "pmuvar/detector.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/features.hpp"
#include "pmuvar/ingest.hpp"
#include "pmuvar/preprocess.hpp"
#include "pmuvar/timestamp.hpp"
#include "pmuvar/var_model.hpp"

namespace pmuvar {

using Json = nlohmann::json;

// Operator label; the latest record per event wins.
struct LabelRecord {
  std::uint64_t event_id = 0;
  AnomalyClass label = AnomalyClass::Spike;
  std::string operator_id;
  Timestamp labeled_at{};
};

struct ThresholdChange {
  double value = 0.0;
  double previous = 0.0;
  std::string author;
  Timestamp requested_at{};
};

// Event as persisted: detector record plus extracted features and the
// classifier's label (carried in event.label with source=model).
struct StoredEvent {
  AnomalyEvent event;
  std::optional<FeatureVector> features;
};

namespace json_detail {

inline Json vector_json(const Eigen::VectorXd& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json out = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

inline Eigen::VectorXd vector_from(const Json& j) {
  if (!j.is_array()) throw FormatError("expected a numeric array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

inline Eigen::MatrixXd matrix_from(const Json& j) {
  if (!j.is_array()) throw FormatError("expected a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw FormatError("ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

inline Timestamp timestamp_from(const Json& j) {
  auto ts = parse_iso8601(j.get<std::string>());
  if (!ts) throw FormatError("bad timestamp '" + j.get<std::string>() + "'");
  return *ts;
}

inline Json channel_series_json(const ChannelSeries& s) {
  Json out = Json::array();
  for (const auto& v : s) {
    Json row{{"timestamp", format_iso8601(v.timestamp)}};
    for (std::size_t k = 0; k < kChannels; ++k) row[std::string(kChannelNames[k])] = v.values[k];
    out.push_back(std::move(row));
  }
  return out;
}

inline ChannelSeries channel_series_from(const Json& j) {
  ChannelSeries out;
  for (const auto& row : j) {
    ChannelVector v;
    v.timestamp = timestamp_from(row.at("timestamp"));
    for (std::size_t k = 0; k < kChannels; ++k) v.values[k] = row.at(std::string(kChannelNames[k])).get<double>();
    out.push_back(v);
  }
  return out;
}

}  // namespace json_detail

inline Json to_json(const VarModel& m) {
  Json lags = Json::array();
  for (const auto& a : m.A) lags.push_back(json_detail::matrix_json(a));
  return {{"p", m.p},
          {"K", m.K},
          {"trained_on", m.trained_on},
          {"c", json_detail::vector_json(m.c)},
          {"A", std::move(lags)},
          {"sigma", json_detail::matrix_json(m.sigma)},
          {"spectral_radius", m.spectral_radius()}};
}

inline VarModel var_model_from_json(const Json& j) {
  try {
    VarModel m;
    m.p = j.at("p").get<int>();
    m.K = j.at("K").get<int>();
    m.trained_on = j.at("trained_on").get<std::size_t>();
    m.c = json_detail::vector_from(j.at("c"));
    for (const auto& a : j.at("A")) m.A.push_back(json_detail::matrix_from(a));
    m.sigma = json_detail::matrix_from(j.at("sigma"));
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("model record: ") + e.what());
  }
}

inline Json to_json(const StandardizationParams& p) {
  return {{"intercept", json_detail::vector_json(p.intercept)},
          {"slope", json_detail::vector_json(p.slope)},
          {"sigma", json_detail::vector_json(p.sigma)}};
}

// Score stream record: timestamp, mahalanobis, cond_V, cond_I, cond_sin, cond_F.
inline Json score_record(const ResidualScore& s) {
  Json j{{"type", "score"}, {"timestamp", format_iso8601(s.timestamp)}, {"mahalanobis", s.mahalanobis}};
  static constexpr const char* names[] = {"cond_V", "cond_I", "cond_sin", "cond_F"};
  for (Eigen::Index k = 0; k < s.conditional.size() && k < 4; ++k) j[names[k]] = s.conditional(k);
  j["forecast"] = s.forecast;
  return j;
}

inline Json to_json(const ResidualScore& s) {
  Json j = score_record(s);
  j.erase("type");
  j["residual"] = json_detail::vector_json(s.residual);
  return j;
}

inline ResidualScore residual_score_from_json(const Json& j) {
  ResidualScore s;
  s.timestamp = json_detail::timestamp_from(j.at("timestamp"));
  s.mahalanobis = j.at("mahalanobis").get<double>();
  s.residual = json_detail::vector_from(j.at("residual"));
  static constexpr const char* names[] = {"cond_V", "cond_I", "cond_sin", "cond_F"};
  std::vector<double> cond;
  for (const char* n : names) {
    if (j.contains(n)) cond.push_back(j[n].get<double>());
  }
  s.conditional = Eigen::Map<const Eigen::VectorXd>(cond.data(), static_cast<Eigen::Index>(cond.size()));
  s.forecast = j.value("forecast", false);
  return s;
}

inline Json to_json(const FeatureVector& f) {
  Json j = Json::object();
  const auto a = f.to_array();
  for (std::size_t i = 0; i < kNumFeatures; ++i) j[std::string(kFeatureNames[i])] = a[i];
  return j;
}

inline FeatureVector feature_vector_from_json(const Json& j) {
  std::array<double, kNumFeatures> a{};
  for (std::size_t i = 0; i < kNumFeatures; ++i) a[i] = j.at(std::string(kFeatureNames[i])).get<double>();
  return FeatureVector::from_array(a);
}

inline Json to_json(const StoredEvent& s) {
  const auto& e = s.event;
  Json scores = Json::array();
  for (const auto& sc : e.score_window) scores.push_back(to_json(sc));
  return {{"type", "event"},
          {"id", e.id},
          {"start", format_iso8601(e.start)},
          {"end", format_iso8601(e.end)},
          {"threshold", e.threshold},
          {"triggers", e.triggers.names()},
          {"feature_channel", kScoreChannelNames[static_cast<std::size_t>(e.feature_channel)]},
          {"returned", e.returned},
          {"truncated", e.truncated},
          {"label", e.label ? Json(to_string(*e.label)) : Json(nullptr)},
          {"label_source", to_string(e.label_source)},
          {"features", s.features ? to_json(*s.features) : Json(nullptr)},
          {"scores", std::move(scores)},
          {"raw", json_detail::channel_series_json(e.raw_window)},
          {"standardized", json_detail::channel_series_json(e.standardized_window)}};
}

inline StoredEvent stored_event_from_json(const Json& j) {
  try {
    StoredEvent s;
    auto& e = s.event;
    e.id = j.at("id").get<std::uint64_t>();
    e.start = json_detail::timestamp_from(j.at("start"));
    e.end = json_detail::timestamp_from(j.at("end"));
    e.threshold = j.at("threshold").get<double>();
    e.triggers = TriggerSet::from_names(j.at("triggers").get<std::vector<std::string>>());
    const auto fc = j.at("feature_channel").get<std::string>();
    bool found = false;
    for (std::size_t i = 0; i < kScoreChannelNames.size(); ++i) {
      if (fc == kScoreChannelNames[i]) {
        e.feature_channel = static_cast<ScoreChannel>(i);
        found = true;
      }
    }
    if (!found) throw FormatError("unknown feature channel '" + fc + "'");
    e.returned = j.at("returned").get<bool>();
    e.truncated = j.at("truncated").get<bool>();
    if (!j.at("label").is_null()) e.label = parse_anomaly_class(j["label"].get<std::string>());
    e.label_source = j.at("label_source").get<std::string>() == "operator" ? LabelSource::Operator : LabelSource::Model;
    if (!j.at("features").is_null()) s.features = feature_vector_from_json(j["features"]);
    for (const auto& sc : j.at("scores")) e.score_window.push_back(residual_score_from_json(sc));
    e.raw_window = json_detail::channel_series_from(j.at("raw"));
    e.standardized_window = json_detail::channel_series_from(j.at("standardized"));
    return s;
  } catch (const Json::exception& ex) {
    throw FormatError(std::string("event record: ") + ex.what());
  } catch (const ValidationError& ex) {
    throw FormatError(std::string("event record: ") + ex.what());
  }
}

inline Json to_json(const LabelRecord& l) {
  return {{"type", "label"},
          {"event_id", l.event_id},
          {"class", to_string(l.label)},
          {"operator", l.operator_id},
          {"labeled_at", format_iso8601(l.labeled_at)}};
}

inline LabelRecord label_record_from_json(const Json& j) {
  try {
    LabelRecord l;
    l.event_id = j.at("event_id").get<std::uint64_t>();
    l.label = parse_anomaly_class(j.at("class").get<std::string>());
    l.operator_id = j.at("operator").get<std::string>();
    l.labeled_at = json_detail::timestamp_from(j.at("labeled_at"));
    return l;
  } catch (const Json::exception& ex) {
    throw FormatError(std::string("label record: ") + ex.what());
  } catch (const ValidationError& ex) {
    throw FormatError(std::string("label record: ") + ex.what());
  }
}

inline Json to_json(const ThresholdChange& t) {
  return {{"type", "threshold"},
          {"value", t.value},
          {"previous", t.previous},
          {"author", t.author},
          {"requested_at", format_iso8601(t.requested_at)}};
}

inline ThresholdChange threshold_change_from_json(const Json& j) {
  try {
    ThresholdChange t;
    t.value = j.at("value").get<double>();
    t.previous = j.at("previous").get<double>();
    t.author = j.at("author").get<std::string>();
    t.requested_at = json_detail::timestamp_from(j.at("requested_at"));
    return t;
  } catch (const Json::exception& ex) {
    throw FormatError(std::string("threshold record: ") + ex.what());
  }
}

// Nested tree record; internal nodes carry feature, threshold, left, right.
inline Json to_json(const DecisionTree& tree) {
  const auto& nodes = tree.nodes();
  auto node_json = [&](auto&& self, int at) -> Json {
    const auto& n = nodes[static_cast<std::size_t>(at)];
    Json j{{"histogram", n.histogram}, {"predicted", n.predicted}, {"fraction", n.fraction}, {"depth", n.depth}};
    if (!n.is_leaf()) {
      j["feature"] = n.feature;
      if (static_cast<std::size_t>(n.feature) < kFeatureNames.size() && tree.num_features() == kNumFeatures) {
        j["feature_name"] = kFeatureNames[static_cast<std::size_t>(n.feature)];
      }
      j["threshold"] = n.threshold;
      j["left"] = self(self, n.left);
      j["right"] = self(self, n.right);
    }
    return j;
  };
  return {{"format", "pmuvar-tree"},
          {"version", 1},
          {"num_features", tree.num_features()},
          {"num_classes", tree.num_classes()},
          {"root", nodes.empty() ? Json(nullptr) : node_json(node_json, 0)}};
}

inline DecisionTree decision_tree_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != "pmuvar-tree") throw FormatError("not a tree record");
    const auto num_features = j.at("num_features").get<std::size_t>();
    const auto num_classes = j.at("num_classes").get<std::size_t>();
    std::vector<TreeNode> nodes;
    auto build = [&](auto&& self, const Json& nj) -> int {
      const int at = static_cast<int>(nodes.size());
      nodes.emplace_back();
      TreeNode n;
      n.histogram = nj.at("histogram").get<std::vector<std::size_t>>();
      n.predicted = nj.at("predicted").get<int>();
      n.fraction = nj.at("fraction").get<double>();
      n.depth = nj.at("depth").get<int>();
      if (n.histogram.size() != num_classes || n.predicted < 0 || static_cast<std::size_t>(n.predicted) >= num_classes) {
        throw FormatError("tree node class data inconsistent");
      }
      if (nj.contains("feature")) {
        n.feature = nj["feature"].get<int>();
        if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= num_features) throw FormatError("tree feature out of range");
        n.threshold = nj.at("threshold").get<double>();
        n.left = self(self, nj.at("left"));
        n.right = self(self, nj.at("right"));
      }
      nodes[static_cast<std::size_t>(at)] = std::move(n);
      return at;
    };
    if (!j.at("root").is_null()) build(build, j["root"]);
    return DecisionTree(std::move(nodes), num_features, num_classes);
  } catch (const Json::exception& ex) {
    throw FormatError(std::string("tree record: ") + ex.what());
  }
}

}  // namespace pmuvar
