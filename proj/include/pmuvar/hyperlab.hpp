#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/errors.hpp"
#include "pmuvar/preprocess.hpp"
#include "pmuvar/timestamp.hpp"
#include "pmuvar/var_model.hpp"

namespace pmuvar {

// Mean absolute per-element difference, sum_ij |A_ij - B_ij| / K^2.
inline double matrix_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ArityError("matrix_distance: shape mismatch");
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().sum() / static_cast<double>(a.size());
}

// Multi-lag models: mean of matrix_distance over corresponding lag matrices.
inline double matrix_distance(std::span<const Eigen::MatrixXd> a, std::span<const Eigen::MatrixXd> b) {
  if (a.size() != b.size() || a.empty()) throw ArityError("matrix_distance: lag count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += matrix_distance(a[i], b[i]);
  return total / static_cast<double>(a.size());
}

enum class Metric { D1Retrain, D2Drift, D1LagDepth };

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::D1Retrain: return "D1_retrain";
    case Metric::D2Drift: return "D2_drift";
    case Metric::D1LagDepth: return "D1_lag_depth";
  }
  return "";
}

inline Metric parse_metric(std::string_view s) {
  if (s == "D1_retrain") return Metric::D1Retrain;
  if (s == "D2_drift") return Metric::D2Drift;
  if (s == "D1_lag_depth") return Metric::D1LagDepth;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw LengthError("median of empty sample");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

struct TauDistribution {
  double tau_minutes = 0.0;
  int p = 1;
  std::vector<double> values;  // one per replicate (D1) or per consecutive window pair (D2)

  double median() const { return pmuvar::median(values); }
};

struct ExperimentReport {
  Metric metric = Metric::D1Retrain;
  std::vector<TauDistribution> entries;
  std::size_t replicate_count = 0;
  std::uint64_t seed = 0;

  std::vector<double> medians() const {
    std::vector<double> out;
    for (const auto& e : entries) out.push_back(e.median());
    return out;
  }

  // metric,tau_minutes,p,replicate,value
  void write_csv(std::ostream& out) const {
    out << "metric,tau_minutes,p,replicate,value\n";
    for (const auto& e : entries) {
      for (std::size_t r = 0; r < e.values.size(); ++r) {
        out << to_string(metric) << ',' << format_double(e.tau_minutes) << ',' << e.p << ',' << r << ','
            << format_double(e.values[r]) << '\n';
      }
    }
  }
};

struct LabOptions {
  std::size_t replicates = 50;
  std::uint64_t seed = 1;
  double resolution_s = 0.5;
  int K = 4;
  // Multiplies the simulation noise; 0 runs the noiseless recurrence from a
  // random initial state (exact-recovery check).
  double noise_scale = 1.0;
};

inline std::size_t tau_points(double tau_minutes, double resolution_s) {
  const double pts = tau_minutes * 60.0 / resolution_s;
  const auto n = static_cast<std::size_t>(std::llround(pts));
  if (n == 0 || std::abs(pts - static_cast<double>(n)) > 1e-6) {
    throw ConfigError("tau " + format_double(tau_minutes) + " min is not a whole number of samples");
  }
  return n;
}

namespace detail {

inline Eigen::MatrixXd simulate_for_lab(const VarModel& truth, std::size_t n, std::uint64_t seed,
                                        const LabOptions& opt) {
  if (opt.noise_scale == 1.0) return simulate(truth, n, seed);
  SimulationOptions sim;
  sim.noise_scale = opt.noise_scale;
  if (opt.noise_scale == 0.0) {
    sim.burn_in = 0;
    std::mt19937_64 rng(derive_seed(seed, 0x1417ULL));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd init(truth.K);
    for (Eigen::Index k = 0; k < truth.K; ++k) init(k) = normal(rng);
    sim.initial = init;
  }
  return simulate(truth, n, seed, sim);
}

// Ground truth from a standardized segment of the supplied series; segments
// whose fitted model is not stable are redrawn.
inline VarModel truth_from_segment(const Eigen::MatrixXd& base, std::size_t n, int p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, static_cast<std::size_t>(base.rows()) - n);
  for (int attempt = 0; attempt < 32; ++attempt) {
    const std::size_t start = pick(rng);
    const Eigen::MatrixXd seg = base.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
    VarModel m = fit_var(standardize(seg, fit_standardization(seg)), p);
    if (m.is_stable()) return m;
  }
  throw ValidationError("no stable ground-truth model found in the supplied series");
}

inline double retrain_once(const VarModel& truth, std::size_t n, std::uint64_t sim_seed, const LabOptions& opt) {
  const Eigen::MatrixXd data = simulate_for_lab(truth, n, sim_seed, opt);
  const VarModel refit = fit_var(data, truth.p);
  return matrix_distance(std::span<const Eigen::MatrixXd>(refit.A), std::span<const Eigen::MatrixXd>(truth.A));
}

// One (p, tau) cell of the retraining protocol. Synthetic ground truth is drawn
// once per replicate and the simulation seed depends only on the replicate, so
// different tau values see nested prefixes of the same simulated path.
inline TauDistribution retrain_cell(const Eigen::MatrixXd* base, double tau_minutes, int p, const LabOptions& opt,
                                    std::uint64_t stream) {
  const std::size_t n = tau_points(tau_minutes, opt.resolution_s);
  if (n <= static_cast<std::size_t>(opt.K * p + 1)) {
    throw LengthError("tau " + format_double(tau_minutes) + " min is too short to fit VAR(" + std::to_string(p) + ")");
  }
  TauDistribution dist;
  dist.tau_minutes = tau_minutes;
  dist.p = p;
  dist.values.reserve(opt.replicates);
  for (std::size_t r = 0; r < opt.replicates; ++r) {
    VarModel truth;
    if (base) {
      truth = truth_from_segment(*base, n, p, derive_seed(opt.seed, stream, r, n, 1));
    } else {
      truth = random_stable_model(opt.K, p, derive_seed(opt.seed, stream, r, p, 1));
    }
    dist.values.push_back(retrain_once(truth, n, derive_seed(opt.seed, stream, r, 2), opt));
  }
  return dist;
}

}  // namespace detail

// Retraining error D1 over a tau grid (minutes) with VAR(1). `base` (rows =
// time, physical or standardized units at the model resolution) supplies
// ground-truth segments; pass an empty matrix to draw synthetic ground truth.
inline ExperimentReport retrain_error_experiment(const Eigen::MatrixXd& base, std::span<const double> tau_grid,
                                                 const LabOptions& opt) {
  if (tau_grid.empty()) throw ConfigError("tau grid is empty");
  if (opt.replicates == 0) throw ConfigError("replicates must be positive");
  const Eigen::MatrixXd* source = base.size() > 0 ? &base : nullptr;
  if (source) {
    const double max_tau = *std::max_element(tau_grid.begin(), tau_grid.end());
    if (static_cast<std::size_t>(base.rows()) < tau_points(max_tau, opt.resolution_s)) {
      throw LengthError("base series shorter than the largest tau");
    }
  }
  ExperimentReport report;
  report.metric = Metric::D1Retrain;
  report.replicate_count = opt.replicates;
  report.seed = opt.seed;
  for (double tau : tau_grid) report.entries.push_back(detail::retrain_cell(source, tau, 1, opt, 0));
  return report;
}

// Retraining error for (p, tau_minutes) pairs; multi-lag distance averages over lag matrices.
inline ExperimentReport lag_depth_experiment(const Eigen::MatrixXd& base, std::span<const std::pair<int, double>> pairs,
                                             const LabOptions& opt) {
  if (pairs.empty()) throw ConfigError("no (p, tau) pairs given");
  if (opt.replicates == 0) throw ConfigError("replicates must be positive");
  const Eigen::MatrixXd* source = base.size() > 0 ? &base : nullptr;
  ExperimentReport report;
  report.metric = Metric::D1LagDepth;
  report.replicate_count = opt.replicates;
  report.seed = opt.seed;
  for (const auto& [p, tau] : pairs) {
    if (p < 1) throw ConfigError("lag order must be >= 1");
    if (source && static_cast<std::size_t>(base.rows()) < tau_points(tau, opt.resolution_s)) {
      throw LengthError("base series shorter than tau " + format_double(tau) + " min");
    }
    report.entries.push_back(detail::retrain_cell(source, tau, p, opt, 0));
  }
  return report;
}

// Model drift D2 between VAR(1) fits on consecutive disjoint windows
// [t, t+tau) and [t+tau, t+2tau), tiling the series without overlap. Each
// window is standardized on itself before fitting.
inline ExperimentReport drift_experiment(const Eigen::MatrixXd& series, std::span<const double> tau_grid,
                                         double resolution_s = 0.5) {
  if (tau_grid.empty()) throw ConfigError("tau grid is empty");
  ExperimentReport report;
  report.metric = Metric::D2Drift;
  report.seed = 0;
  std::size_t min_pairs = 0;
  for (double tau : tau_grid) {
    const std::size_t n = tau_points(tau, resolution_s);
    if (2 * n > static_cast<std::size_t>(series.rows())) {
      throw LengthError("series needs at least 2*tau = " + std::to_string(2 * n) + " points for tau " +
                        format_double(tau) + " min");
    }
    TauDistribution dist;
    dist.tau_minutes = tau;
    dist.p = 1;
    auto fit_window = [&](std::size_t start) {
      const Eigen::MatrixXd seg = series.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
      return fit_var(standardize(seg, fit_standardization(seg)), 1);
    };
    for (std::size_t t = 0; t + 2 * n <= static_cast<std::size_t>(series.rows()); t += 2 * n) {
      const VarModel a = fit_window(t);
      const VarModel b = fit_window(t + n);
      dist.values.push_back(matrix_distance(a.A[0], b.A[0]));
    }
    min_pairs = min_pairs == 0 ? dist.values.size() : std::min(min_pairs, dist.values.size());
    report.entries.push_back(std::move(dist));
  }
  report.replicate_count = min_pairs;
  return report;
}

}  // namespace pmuvar
