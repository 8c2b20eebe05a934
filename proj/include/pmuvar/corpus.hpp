#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/anomaly_class.hpp"
#include "pmuvar/detector.hpp"
#include "pmuvar/errors.hpp"
#include "pmuvar/features.hpp"
#include "pmuvar/ingest.hpp"
#include "pmuvar/synthetic.hpp"
#include "pmuvar/training_set.hpp"
#include "pmuvar/var_model.hpp"

namespace pmuvar {

// Labeled event corpus built by injecting one anomaly into a short ambient
// segment, running a frozen-model detector over it and extracting features
// from the first event it opens. Everything runs at model resolution.
struct CorpusConfig {
  std::size_t events = 750;          // classes are dealt round-robin
  std::uint64_t seed = 1;
  double threshold = 4.0;            // low enough that 5 sigma events open
  double min_sigma = 5.0;
  double max_sigma = 50.0;           // magnitudes are log-uniform in [min, max]
  int q = 10;
  std::size_t feature_window = 10;
  std::size_t lead = 16;             // ambient points before the injection
  // Shape ranges in model ticks.
  std::size_t drop_min = 2;
  std::size_t drop_max = 7;
  double osc_period_min = 4.0;
  double osc_period_max = 8.0;
  double osc_decay_min = 0.75;       // e-folding time in periods
  double osc_decay_max = 2.0;
  int max_attempts = 16;

  void validate() const {
    if (events == 0) throw ConfigError("corpus needs at least one event");
    if (!(threshold > 0.0)) throw ConfigError("corpus threshold must be positive");
    if (!(min_sigma > 0.0) || max_sigma < min_sigma) throw ConfigError("bad corpus magnitude range");
    if (drop_min < 1 || drop_max < drop_min) throw ConfigError("bad drop duration range");
    if (!(osc_period_min >= 2.0) || osc_period_max < osc_period_min) throw ConfigError("bad oscillation period range");
    if (!(osc_decay_min > 0.0) || osc_decay_max < osc_decay_min) throw ConfigError("bad oscillation decay range");
    if (lead < 1) throw ConfigError("corpus lead must be positive");
  }
};

struct CorpusEvent {
  Injection injection;
  AnomalyEvent event;
  LabeledFeatures row;
};

namespace detail {

inline Injection draw_injection(AnomalyClass cls, std::size_t start, std::size_t length, const CorpusConfig& cfg,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Injection inj;
  inj.cls = cls;
  inj.start = start;
  inj.channel = static_cast<std::size_t>(rng() % kChannels);
  const double log_mag = std::log(cfg.min_sigma) + unit(rng) * (std::log(cfg.max_sigma) - std::log(cfg.min_sigma));
  const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  inj.magnitude_sigma = sign * std::exp(log_mag);
  switch (cls) {
    case AnomalyClass::Spike:
      inj.length = 1;
      break;
    case AnomalyClass::Drop:
      inj.length = cfg.drop_min + static_cast<std::size_t>(rng() % (cfg.drop_max - cfg.drop_min + 1));
      break;
    case AnomalyClass::Step:
      inj.length = length - start;
      break;
    case AnomalyClass::Oscillatory:
      inj.length = length - start;
      inj.osc_period = cfg.osc_period_min + unit(rng) * (cfg.osc_period_max - cfg.osc_period_min);
      inj.osc_decay = inj.osc_period * (cfg.osc_decay_min + unit(rng) * (cfg.osc_decay_max - cfg.osc_decay_min));
      break;
  }
  return inj;
}

}  // namespace detail

// One corpus event; returns nothing when the detector did not open an event
// within a few points of the injection.
inline std::optional<CorpusEvent> corpus_event(const VarModel& ambient, AnomalyClass cls, std::uint64_t seed,
                                               const CorpusConfig& cfg) {
  const auto K = static_cast<std::size_t>(ambient.K);
  if (K != kChannels) throw ValidationError("corpus ambient model must have 4 channels");
  const std::size_t n = cfg.lead + static_cast<std::size_t>(cfg.q) + 8;
  std::mt19937_64 rng(derive_seed(seed, 0x636f72ULL));
  ChannelSeries series = from_matrix(simulate(ambient, n, derive_seed(seed, 0x616d62ULL)));
  const Eigen::MatrixXd gamma = ambient.stationary_covariance();
  const Injection inj = detail::draw_injection(cls, cfg.lead, n, cfg, rng);
  inject_anomaly(series, inj, std::sqrt(gamma(static_cast<Eigen::Index>(inj.channel), static_cast<Eigen::Index>(inj.channel))));

  DetectorConfig dc;
  dc.window = std::max<std::size_t>(cfg.lead, K * static_cast<std::size_t>(ambient.p) + 2);
  dc.p = ambient.p;
  dc.threshold = cfg.threshold;
  dc.q = cfg.q;
  dc.feature_window = cfg.feature_window;
  dc.retrain = false;
  Detector det(dc, ambient.K);
  StandardizationParams identity{Eigen::VectorXd::Zero(ambient.K), Eigen::VectorXd::Zero(ambient.K),
                                 Eigen::VectorXd::Ones(ambient.K)};
  std::vector<Eigen::VectorXd> lead;
  for (std::size_t t = 0; t < cfg.lead; ++t) lead.push_back(series[t].to_eigen());
  det.initialize(ambient, identity, lead);

  for (std::size_t t = cfg.lead; t < n; ++t) {
    StepResult r = det.step(series[t].to_eigen(), series[t].timestamp);
    if (r.opened && t > cfg.lead + 2) return std::nullopt;
    if (r.closed) {
      CorpusEvent out;
      out.injection = inj;
      out.event = std::move(*r.closed);
      out.event.label = cls;
      out.row.features = extract_features(out.event.feature_scores(), cfg.threshold);
      out.row.label = cls;
      return out;
    }
  }
  return std::nullopt;
}

inline std::vector<CorpusEvent> generate_corpus(const VarModel& ambient, const CorpusConfig& cfg) {
  cfg.validate();
  std::vector<CorpusEvent> out;
  out.reserve(cfg.events);
  for (std::size_t i = 0; i < cfg.events; ++i) {
    const auto cls = static_cast<AnomalyClass>(i % kNumClasses);
    std::optional<CorpusEvent> ev;
    for (int attempt = 0; attempt < cfg.max_attempts && !ev; ++attempt) {
      ev = corpus_event(ambient, cls, derive_seed(cfg.seed, i, static_cast<std::uint64_t>(attempt)), cfg);
    }
    if (!ev) throw ValidationError("corpus event " + std::to_string(i) + " never triggered the detector");
    ev->event.id = i + 1;
    ev->row.event_id = i + 1;
    out.push_back(std::move(*ev));
  }
  return out;
}

inline std::vector<LabeledFeatures> corpus_rows(std::span<const CorpusEvent> corpus) {
  std::vector<LabeledFeatures> rows;
  rows.reserve(corpus.size());
  for (const auto& e : corpus) rows.push_back(e.row);
  return rows;
}

}  // namespace pmuvar
