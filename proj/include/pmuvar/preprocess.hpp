#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include <Eigen/Dense>

#include "pmuvar/errors.hpp"
#include "pmuvar/ingest.hpp"

namespace pmuvar {

// Per-channel linear trend (over step index, origin at window start) and the
// population standard deviation of the de-trended values.
struct StandardizationParams {
  Eigen::VectorXd intercept;
  Eigen::VectorXd slope;
  Eigen::VectorXd sigma;

  Eigen::Index channels() const { return sigma.size(); }
};

namespace detail {

inline std::string channel_name(Eigen::Index k, Eigen::Index K) {
  if (K == static_cast<Eigen::Index>(kChannels)) return std::string(kChannelNames[static_cast<std::size_t>(k)]);
  return "channel " + std::to_string(k);
}

}  // namespace detail

inline StandardizationParams fit_standardization(const Eigen::MatrixXd& window) {
  const Eigen::Index n = window.rows();
  const Eigen::Index K = window.cols();
  if (n < 3) throw LengthError("standardization window needs at least 3 points, got " + std::to_string(n));

  const double nd = static_cast<double>(n);
  const double t_mean = (nd - 1.0) / 2.0;
  // sum_t (t - t_mean)^2 for t = 0..n-1
  const double t_ss = nd * (nd * nd - 1.0) / 12.0;
  Eigen::VectorXd t_centered = Eigen::VectorXd::LinSpaced(n, 0.0, nd - 1.0).array() - t_mean;

  StandardizationParams params;
  params.intercept.resize(K);
  params.slope.resize(K);
  params.sigma.resize(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const auto col = window.col(k);
    const double mean = col.mean();
    const double slope = t_centered.dot(col) / t_ss;
    const double intercept = mean - slope * t_mean;
    Eigen::VectorXd resid = col.array() - intercept - slope * (t_centered.array() + t_mean);
    const double sigma = std::sqrt(resid.squaredNorm() / nd);
    const double scale = std::max(1.0, col.cwiseAbs().maxCoeff());
    if (!(sigma > 1e-12 * scale)) throw DegenerateChannelError(static_cast<std::size_t>(k), detail::channel_name(k, K));
    params.intercept(k) = intercept;
    params.slope(k) = slope;
    params.sigma(k) = sigma;
  }
  return params;
}

// Row t maps to trend index start_index + t.
inline Eigen::MatrixXd standardize(const Eigen::MatrixXd& window, const StandardizationParams& params,
                                   double start_index = 0.0) {
  if (window.cols() != params.channels()) throw ArityError("channel count mismatch in standardize");
  Eigen::MatrixXd out(window.rows(), window.cols());
  for (Eigen::Index t = 0; t < window.rows(); ++t) {
    const double idx = start_index + static_cast<double>(t);
    out.row(t) = ((window.row(t).transpose() - params.intercept - params.slope * idx).array() / params.sigma.array())
                     .transpose();
  }
  return out;
}

inline Eigen::MatrixXd de_standardize(const Eigen::MatrixXd& series, const StandardizationParams& params,
                                      double start_index = 0.0) {
  if (series.cols() != params.channels()) throw ArityError("channel count mismatch in de_standardize");
  Eigen::MatrixXd out(series.rows(), series.cols());
  for (Eigen::Index t = 0; t < series.rows(); ++t) {
    const double idx = start_index + static_cast<double>(t);
    out.row(t) = (series.row(t).transpose().cwiseProduct(params.sigma) + params.intercept + params.slope * idx)
                     .transpose();
  }
  return out;
}

inline Eigen::VectorXd standardize_point(const Eigen::VectorXd& x, const StandardizationParams& params, double index) {
  return (x - params.intercept - params.slope * index).cwiseQuotient(params.sigma);
}

inline Eigen::VectorXd de_standardize_point(const Eigen::VectorXd& z, const StandardizationParams& params,
                                            double index) {
  return z.cwiseProduct(params.sigma) + params.intercept + params.slope * index;
}

inline StandardizationParams fit_standardization(std::span<const ChannelVector> window) {
  return fit_standardization(to_matrix(window));
}

inline ChannelSeries standardize(std::span<const ChannelVector> window, const StandardizationParams& params,
                                 double start_index = 0.0) {
  std::vector<Timestamp> ts;
  ts.reserve(window.size());
  for (const auto& v : window) ts.push_back(v.timestamp);
  return from_matrix(standardize(to_matrix(window), params, start_index), ts);
}

inline ChannelSeries de_standardize(std::span<const ChannelVector> series, const StandardizationParams& params,
                                    double start_index = 0.0) {
  std::vector<Timestamp> ts;
  ts.reserve(series.size());
  for (const auto& v : series) ts.push_back(v.timestamp);
  return from_matrix(de_standardize(to_matrix(series), params, start_index), ts);
}

}  // namespace pmuvar
