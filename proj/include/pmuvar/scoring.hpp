#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/errors.hpp"

namespace pmuvar {

inline Eigen::LLT<Eigen::MatrixXd> factor_spd(const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols()) throw ArityError("covariance must be square");
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw NumericError("covariance is not symmetric positive definite");
  return llt;
}

// sqrt(r^T Sigma^{-1} r)
inline double mahalanobis_score(const Eigen::VectorXd& r, const Eigen::MatrixXd& sigma) {
  if (r.size() != sigma.rows()) throw ArityError("residual/covariance dimension mismatch");
  auto llt = factor_spd(sigma);
  Eigen::VectorXd w = llt.matrixL().solve(r);
  return w.norm();
}

// Per-channel Gaussian conditioning of a residual on the remaining channels.
// Holds, for every channel k, the regression weights of r_k on r_{k^c}
// (Sigma_{k,k^c} Sigma_{k^c,k^c}^{-1}) and the Schur-complement variance.
class ConditionalScorer {
 public:
  explicit ConditionalScorer(const Eigen::MatrixXd& sigma) : K_(sigma.rows()) {
    if (sigma.rows() != sigma.cols()) throw ArityError("covariance must be square");
    weights_.resize(static_cast<std::size_t>(K_));
    cond_sd_.resize(K_);
    for (Eigen::Index k = 0; k < K_; ++k) {
      std::vector<Eigen::Index> rest;
      for (Eigen::Index j = 0; j < K_; ++j) {
        if (j != k) rest.push_back(j);
      }
      const auto m = static_cast<Eigen::Index>(rest.size());
      Eigen::VectorXd weights = Eigen::VectorXd::Zero(K_);
      double var = sigma(k, k);
      if (m > 0) {
        Eigen::MatrixXd s_rr(m, m);
        Eigen::VectorXd s_rk(m);
        for (Eigen::Index a = 0; a < m; ++a) {
          s_rk(a) = sigma(rest[static_cast<std::size_t>(a)], k);
          for (Eigen::Index b = 0; b < m; ++b) {
            s_rr(a, b) = sigma(rest[static_cast<std::size_t>(a)], rest[static_cast<std::size_t>(b)]);
          }
        }
        Eigen::LLT<Eigen::MatrixXd> llt(s_rr);
        if (llt.info() != Eigen::Success) throw NumericError("conditioning block is not positive definite");
        Eigen::VectorXd beta = llt.solve(s_rk);
        var -= s_rk.dot(beta);
        for (Eigen::Index a = 0; a < m; ++a) weights(rest[static_cast<std::size_t>(a)]) = beta(a);
      }
      if (!(var > 0.0)) {
        throw NumericError("non-positive conditional variance for channel " + std::to_string(k));
      }
      weights_[static_cast<std::size_t>(k)] = std::move(weights);
      cond_sd_(k) = std::sqrt(var);
    }
  }

  Eigen::VectorXd conditional_mean(const Eigen::VectorXd& r) const {
    Eigen::VectorXd mu(K_);
    for (Eigen::Index k = 0; k < K_; ++k) mu(k) = weights_[static_cast<std::size_t>(k)].dot(r);
    return mu;
  }

  const Eigen::VectorXd& conditional_sd() const { return cond_sd_; }

  Eigen::VectorXd scores(const Eigen::VectorXd& r) const {
    if (r.size() != K_) throw ArityError("residual dimension mismatch");
    return ((r - conditional_mean(r)).array().abs() / cond_sd_.array()).matrix();
  }

 private:
  Eigen::Index K_;
  std::vector<Eigen::VectorXd> weights_;
  Eigen::VectorXd cond_sd_;
};

inline Eigen::VectorXd conditional_scores(const Eigen::VectorXd& r, const Eigen::MatrixXd& sigma) {
  return ConditionalScorer(sigma).scores(r);
}

// Factorizations for one covariance, reused across many residuals.
class ResidualScorer {
 public:
  explicit ResidualScorer(const Eigen::MatrixXd& sigma) : llt_(factor_spd(sigma)), conditional_(sigma) {}

  double mahalanobis(const Eigen::VectorXd& r) const { return llt_.matrixL().solve(r).norm(); }
  Eigen::VectorXd conditional(const Eigen::VectorXd& r) const { return conditional_.scores(r); }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  ConditionalScorer conditional_;
};

// Univariate baseline: range of the sliding window against k * sigma of the
// full historical series (strict inequality).
inline bool minmax_detect(std::span<const double> window, double sigma_full, double k_threshold) {
  if (window.empty()) throw LengthError("min-max window is empty");
  auto [lo, hi] = std::minmax_element(window.begin(), window.end());
  return (*hi - *lo) > k_threshold * sigma_full;
}

// Default range multipliers per channel (V, I, sin_diff, F).
inline constexpr std::array<double, 4> kMinMaxThresholds = {3.0, 4.0, 4.0, 6.0};

// Number of points in the min-max sliding window for a given resolution (10 s).
inline std::size_t minmax_window_points(double resolution_s, double window_s = 10.0) {
  return static_cast<std::size_t>(std::llround(window_s / resolution_s));
}

// Flags every time index whose trailing window (ending at that index) exceeds
// the range threshold; indices before the first full window are never flagged.
inline std::vector<bool> minmax_scan(std::span<const double> series, std::size_t window, double k_threshold) {
  if (window == 0) throw LengthError("min-max window is empty");
  std::vector<bool> flags(series.size(), false);
  if (series.empty()) return flags;
  const double n = static_cast<double>(series.size());
  double mean = 0.0;
  for (double x : series) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : series) ss += (x - mean) * (x - mean);
  const double sigma_full = std::sqrt(ss / n);
  for (std::size_t t = window; t <= series.size(); ++t) {
    flags[t - 1] = minmax_detect(series.subspan(t - window, window), sigma_full, k_threshold);
  }
  return flags;
}

}  // namespace pmuvar
