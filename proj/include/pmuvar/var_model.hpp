#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmuvar/errors.hpp"
#include "pmuvar/timestamp.hpp"

namespace pmuvar {

inline constexpr double kSigmaRegularization = 1e-8;
inline constexpr std::size_t kSimulationBurnIn = 200;

// SplitMix64 finalizer; used to derive independent child seeds from a
// (seed, stream...) tuple so experiments stay reproducible per replicate.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <typename... Rest>
std::uint64_t derive_seed(std::uint64_t seed, Rest... rest) {
  std::uint64_t h = mix_seed(seed);
  ((h = mix_seed(h ^ static_cast<std::uint64_t>(rest))), ...);
  return h;
}

// y_t = c + sum_i A_i y_{t-i} + u_t,  u_t ~ N(0, sigma).
struct VarModel {
  int p = 1;
  int K = 0;
  Eigen::VectorXd c;
  std::vector<Eigen::MatrixXd> A;
  Eigen::MatrixXd sigma;
  std::size_t trained_on = 0;

  // sigma + eps * (trace/K) * I, used before any inversion or factorization.
  Eigen::MatrixXd regularized_sigma() const {
    const double bump = kSigmaRegularization * sigma.trace() / static_cast<double>(K);
    Eigen::MatrixXd out = sigma;
    out.diagonal().array() += bump;
    return out;
  }

  Eigen::MatrixXd companion() const {
    const Eigen::Index n = static_cast<Eigen::Index>(K) * p;
    Eigen::MatrixXd F = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < p; ++i) F.block(0, static_cast<Eigen::Index>(i) * K, K, K) = A[static_cast<std::size_t>(i)];
    if (p > 1) F.block(K, 0, n - K, n - K).setIdentity();
    return F;
  }

  double spectral_radius() const {
    Eigen::EigenSolver<Eigen::MatrixXd> es(companion(), false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }

  bool is_stable() const { return spectral_radius() < 1.0; }

  // (I - sum A_i)^{-1} c
  Eigen::VectorXd stationary_mean() const {
    Eigen::MatrixXd M = Eigen::MatrixXd::Identity(K, K);
    for (const auto& Ai : A) M -= Ai;
    return M.partialPivLu().solve(c);
  }

  // Gamma(0) of the stable process, from vec(G) = (I - F (x) F)^{-1} vec(Q) on the companion form.
  Eigen::MatrixXd stationary_covariance() const {
    const Eigen::MatrixXd F = companion();
    const Eigen::Index n = F.rows();
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
    Q.topLeftCorner(K, K) = sigma;
    Eigen::MatrixXd kron(n * n, n * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) kron.block(i * n, j * n, n, n) = F(i, j) * F;
    }
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(n * n, n * n) - kron;
    // Column-major vec: vec(F G F^T) = (F (x) F) vec(G).
    Eigen::VectorXd vecQ = Eigen::Map<const Eigen::VectorXd>(Q.data(), n * n);
    Eigen::VectorXd vecG = lhs.partialPivLu().solve(vecQ);
    Eigen::MatrixXd G = Eigen::Map<const Eigen::MatrixXd>(vecG.data(), n, n);
    return G.topLeftCorner(K, K);
  }

  void validate() const {
    if (p < 1) throw ValidationError("lag order must be >= 1");
    if (K < 1) throw ValidationError("dimension must be >= 1");
    if (c.size() != K || static_cast<int>(A.size()) != p || sigma.rows() != K || sigma.cols() != K) {
      throw ArityError("VarModel shape mismatch");
    }
    for (const auto& Ai : A) {
      if (Ai.rows() != K || Ai.cols() != K) throw ArityError("coefficient matrix shape mismatch");
      if (!Ai.allFinite()) throw ValidationError("non-finite coefficient");
    }
  }
};

// Per-equation OLS of y_t on [1, y_{t-1}, ..., y_{t-p}]. Rows of `series`
// are time steps. Sigma uses the residual cross-product divided by n - p.
inline VarModel fit_var(const Eigen::MatrixXd& series, int p) {
  if (p < 1) throw ValidationError("lag order must be >= 1");
  const Eigen::Index n = series.rows();
  const Eigen::Index K = series.cols();
  if (n <= K * p + 1) {
    throw LengthError("VAR(" + std::to_string(p) + ") fit needs more than " + std::to_string(K * p + 1) +
                      " points, got " + std::to_string(n));
  }
  const Eigen::Index rows = n - p;
  const Eigen::Index cols = 1 + K * p;
  Eigen::MatrixXd X(rows, cols);
  X.col(0).setOnes();
  for (int i = 1; i <= p; ++i) X.block(0, 1 + K * (i - 1), rows, K) = series.middleRows(p - i, rows);
  Eigen::MatrixXd Y = series.bottomRows(rows);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(1e-12);
  if (qr.rank() < cols) {
    throw RankDeficiencyError("VAR design matrix is rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                              std::to_string(cols) + ")");
  }
  Eigen::MatrixXd B = qr.solve(Y);

  VarModel m;
  m.p = p;
  m.K = static_cast<int>(K);
  m.c = B.row(0).transpose();
  m.A.reserve(static_cast<std::size_t>(p));
  for (int i = 1; i <= p; ++i) m.A.push_back(B.block(1 + K * (i - 1), 0, K, K).transpose());
  Eigen::MatrixXd U = Y - X * B;
  m.sigma = (U.transpose() * U) / static_cast<double>(rows);
  m.sigma = 0.5 * (m.sigma + m.sigma.transpose());
  m.trained_on = static_cast<std::size_t>(n);
  return m;
}

// lags[0] = y_{t-1}, lags[1] = y_{t-2}, ...
inline Eigen::VectorXd predict_one(const VarModel& model, std::span<const Eigen::VectorXd> lags) {
  if (static_cast<int>(lags.size()) != model.p) {
    throw ArityError("predict_one expects " + std::to_string(model.p) + " lag vectors, got " +
                     std::to_string(lags.size()));
  }
  Eigen::VectorXd y = model.c;
  for (int i = 0; i < model.p; ++i) {
    const auto& lag = lags[static_cast<std::size_t>(i)];
    if (lag.size() != model.K) throw ArityError("lag vector has wrong dimension");
    y.noalias() += model.A[static_cast<std::size_t>(i)] * lag;
  }
  return y;
}

inline std::vector<Eigen::VectorXd> forecast_q(const VarModel& model, std::span<const Eigen::VectorXd> lags, int q) {
  if (q < 1) throw ValidationError("forecast horizon must be >= 1");
  std::vector<Eigen::VectorXd> window(lags.begin(), lags.end());
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(q));
  for (int j = 0; j < q; ++j) {
    Eigen::VectorXd next = predict_one(model, window);
    out.push_back(next);
    window.insert(window.begin(), next);
    window.pop_back();
  }
  return out;
}

// prediction - observed
inline Eigen::VectorXd residual(const VarModel& model, std::span<const Eigen::VectorXd> lags,
                                const Eigen::VectorXd& observed) {
  return predict_one(model, lags) - observed;
}

struct SimulationOptions {
  std::size_t burn_in = kSimulationBurnIn;
  double noise_scale = 1.0;                    // multiplies the noise draw; 0 gives the noiseless recurrence
  std::optional<Eigen::VectorXd> initial;      // lag state before the first step; stationary mean if absent
};

// Rows = time.
inline Eigen::MatrixXd simulate(const VarModel& model, std::size_t n, std::uint64_t seed,
                                const SimulationOptions& options) {
  model.validate();
  if (!model.is_stable()) {
    throw ValidationError("cannot simulate unstable VAR model (spectral radius " +
                          format_double(model.spectral_radius()) + ")");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(model.regularized_sigma());
  if (llt.info() != Eigen::Success) throw NumericError("noise covariance factorization failed");
  const Eigen::MatrixXd L = options.noise_scale * Eigen::MatrixXd(llt.matrixL());

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::VectorXd start = options.initial ? *options.initial : model.stationary_mean();
  if (start.size() != model.K) throw ArityError("initial state has wrong dimension");
  std::vector<Eigen::VectorXd> lags(static_cast<std::size_t>(model.p), start);
  Eigen::VectorXd z(model.K);

  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), model.K);
  const std::size_t total = n + options.burn_in;
  for (std::size_t t = 0; t < total; ++t) {
    for (Eigen::Index k = 0; k < model.K; ++k) z(k) = normal(rng);
    Eigen::VectorXd y = predict_one(model, lags) + L * z;
    if (t >= options.burn_in) out.row(static_cast<Eigen::Index>(t - options.burn_in)) = y.transpose();
    for (std::size_t i = lags.size() - 1; i > 0; --i) lags[i] = std::move(lags[i - 1]);
    lags[0] = std::move(y);
  }
  return out;
}

// Starts from the stationary mean and discards a fixed 200-step burn-in.
inline Eigen::MatrixXd simulate(const VarModel& model, std::size_t n, std::uint64_t seed) {
  return simulate(model, n, seed, SimulationOptions{});
}

// Random stable model: R_i with i.i.d. U[-1,1] entries, rescaled so the
// companion spectral radius equals `radius` (A_i = R_i * s^i scales every
// companion eigenvalue by s). Sigma = D + 0.1 v v^T normalised to unit trace,
// D diagonal with U[0.5,1.5] entries and v standard normal. c = 0.
inline VarModel random_stable_model(int K, int p, std::uint64_t seed, double radius = 0.95) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> diag(0.5, 1.5);
  std::normal_distribution<double> normal(0.0, 1.0);

  VarModel m;
  m.p = p;
  m.K = K;
  m.c = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < p; ++i) {
    Eigen::MatrixXd R(K, K);
    for (Eigen::Index r = 0; r < K; ++r) {
      for (Eigen::Index col = 0; col < K; ++col) R(r, col) = unit(rng);
    }
    m.A.push_back(R);
  }
  const double rho = m.spectral_radius();
  const double s = radius / rho;
  double scale = 1.0;
  for (auto& Ai : m.A) {
    scale *= s;
    Ai *= scale;
  }
  Eigen::VectorXd d(K), v(K);
  for (Eigen::Index k = 0; k < K; ++k) d(k) = diag(rng);
  for (Eigen::Index k = 0; k < K; ++k) v(k) = normal(rng);
  Eigen::MatrixXd S = Eigen::MatrixXd(d.asDiagonal()) + 0.1 * v * v.transpose();
  m.sigma = S / S.trace();
  return m;
}

// Text format:
//   pmuvar-var-model 1
//   p <p>
//   K <K>
//   trained_on <n>
//   c <K values>
//   A1 <K*K values, row-major>   (one line per lag)
//   Sigma <K*K values, row-major>
inline void write_model(std::ostream& out, const VarModel& m) {
  auto row_major = [&](const Eigen::MatrixXd& M) {
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
      for (Eigen::Index c = 0; c < M.cols(); ++c) out << ' ' << format_double(M(r, c));
    }
    out << '\n';
  };
  out << "pmuvar-var-model 1\n";
  out << "p " << m.p << '\n';
  out << "K " << m.K << '\n';
  out << "trained_on " << m.trained_on << '\n';
  out << 'c';
  for (Eigen::Index k = 0; k < m.K; ++k) out << ' ' << format_double(m.c(k));
  out << '\n';
  for (int i = 0; i < m.p; ++i) {
    out << 'A' << (i + 1);
    row_major(m.A[static_cast<std::size_t>(i)]);
  }
  out << "Sigma";
  row_major(m.sigma);
}

inline std::string to_text(const VarModel& m) {
  std::ostringstream os;
  write_model(os, m);
  return os.str();
}

inline VarModel read_model(std::istream& in) {
  auto expect_key = [&](const std::string& key) {
    std::string got;
    if (!(in >> got) || got != key) throw FormatError("model file: expected '" + key + "', got '" + got + "'");
  };
  auto read_value = [&]() {
    std::string tok;
    if (!(in >> tok)) throw FormatError("model file: truncated");
    auto v = parse_double(tok);
    if (!v) throw FormatError("model file: bad number '" + tok + "'");
    return *v;
  };
  expect_key("pmuvar-var-model");
  expect_key("1");
  VarModel m;
  expect_key("p");
  if (!(in >> m.p) || m.p < 1) throw FormatError("model file: bad p");
  expect_key("K");
  if (!(in >> m.K) || m.K < 1) throw FormatError("model file: bad K");
  expect_key("trained_on");
  if (!(in >> m.trained_on)) throw FormatError("model file: bad trained_on");
  expect_key("c");
  m.c.resize(m.K);
  for (Eigen::Index k = 0; k < m.K; ++k) m.c(k) = read_value();
  auto read_matrix = [&]() {
    Eigen::MatrixXd M(m.K, m.K);
    for (Eigen::Index r = 0; r < m.K; ++r) {
      for (Eigen::Index c = 0; c < m.K; ++c) M(r, c) = read_value();
    }
    return M;
  };
  for (int i = 0; i < m.p; ++i) {
    expect_key("A" + std::to_string(i + 1));
    m.A.push_back(read_matrix());
  }
  expect_key("Sigma");
  m.sigma = read_matrix();
  m.validate();
  return m;
}

inline VarModel model_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_model(is);
}

}  // namespace pmuvar
