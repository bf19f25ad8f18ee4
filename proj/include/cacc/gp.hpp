#pragma once

// Zero-mean Gaussian-process model of a vehicle's velocity over time with a
// unit-amplitude RBF kernel and i.i.d. Gaussian measurement noise.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace cacc::gp {

struct HyperParams {
  double length_scale = 1.0;  // [s]
  double noise_std = 0.1;     // [m/s]

  void validate() const {
    if (!(length_scale > 0.0) || !std::isfinite(length_scale))
      throw std::invalid_argument("gp: length_scale must be positive");
    if (!(noise_std > 0.0) || !std::isfinite(noise_std))
      throw std::invalid_argument("gp: noise_std must be positive");
  }

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

struct TrainingSet {
  std::vector<double> timestamps;  // strictly increasing [s]
  std::vector<double> velocities;  // [m/s]

  std::size_t size() const { return timestamps.size(); }

  void validate() const {
    if (timestamps.size() != velocities.size())
      throw std::invalid_argument("gp: timestamps and velocities differ in length");
    if (timestamps.empty()) throw std::invalid_argument("gp: empty training set");
    for (std::size_t i = 1; i < timestamps.size(); ++i) {
      if (!(timestamps[i] > timestamps[i - 1]))
        throw std::invalid_argument("gp: timestamps must be strictly increasing");
    }
  }

  friend bool operator==(const TrainingSet&, const TrainingSet&) = default;
};

struct Model {
  HyperParams hyper;
  TrainingSet training;
};

struct Prediction {
  std::vector<double> mean;
  std::vector<double> variance;
};

inline constexpr double kJitter = 1e-10;

inline double rbf_kernel(double t1, double t2, double length_scale) {
  if (!(length_scale > 0.0)) throw std::invalid_argument("rbf_kernel: length_scale must be positive");
  const double d = t1 - t2;
  return std::exp(-(d * d) / (2.0 * length_scale * length_scale));
}

inline Eigen::MatrixXd kernel_matrix(const TrainingSet& training, const HyperParams& hyper) {
  training.validate();
  hyper.validate();
  const auto n = static_cast<Eigen::Index>(training.size());
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = rbf_kernel(training.timestamps[i], training.timestamps[j], hyper.length_scale);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  k.diagonal().array() += hyper.noise_std * hyper.noise_std;
  return k;
}

namespace detail {

// Cholesky with a single fixed-jitter retry.
inline Eigen::LLT<Eigen::MatrixXd> factorize(Eigen::MatrixXd k) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    k.diagonal().array() += kJitter;
    llt.compute(k);
    if (llt.info() != Eigen::Success) throw std::runtime_error("gp: kernel matrix not positive definite");
  }
  return llt;
}

}  // namespace detail

/// Velocities expressed relative to the newest sample. Under the zero prior
/// mean, predictions from this set revert to the last observed speed instead
/// of to standstill.
inline TrainingSet relative_to_latest(const TrainingSet& training) {
  training.validate();
  TrainingSet out = training;
  const double ref = training.velocities.back();
  for (double& v : out.velocities) v -= ref;
  return out;
}

/// Log-spaced hyperparameter search grid.
struct FitGrid {
  static constexpr int kSize = 32;
  static constexpr double kLengthMin = 0.05, kLengthMax = 5.0;
  static constexpr double kNoiseMin = 0.01, kNoiseMax = 1.0;

  static double log_spaced(double lo, double hi, int i) {
    if (i == kSize - 1) return hi;
    return lo * std::pow(hi / lo, static_cast<double>(i) / (kSize - 1));
  }
  static double length_scale(int i) { return log_spaced(kLengthMin, kLengthMax, i); }
  static double noise_std(int j) { return log_spaced(kNoiseMin, kNoiseMax, j); }
};

/// Gaussian log marginal likelihood of the training velocities under `hyper`.
inline double log_marginal_likelihood(const TrainingSet& training, const HyperParams& hyper) {
  const auto llt = detail::factorize(kernel_matrix(training, hyper));
  const Eigen::Map<const Eigen::VectorXd> y(training.velocities.data(),
                                            static_cast<Eigen::Index>(training.size()));
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd l = llt.matrixL();
  const double log_det = 2.0 * l.diagonal().array().log().sum();
  const double n = static_cast<double>(training.size());
  return -0.5 * y.dot(alpha) - 0.5 * log_det - 0.5 * n * std::log(2.0 * M_PI);
}

namespace detail {

// Inverse kernel matrices and log-determinants for every grid cell, for one
// set of relative timestamps. Fits over sliding windows with fixed sampling
// period hit the same entry every time.
struct GridFactors {
  std::vector<Eigen::MatrixXd> inverse;
  std::vector<double> log_det;
};

inline GridFactors build_grid_factors(const std::vector<double>& relative_times) {
  GridFactors f;
  constexpr int n = FitGrid::kSize;
  f.inverse.reserve(n * n);
  f.log_det.reserve(n * n);
  TrainingSet probe{relative_times, std::vector<double>(relative_times.size(), 0.0)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const HyperParams h{FitGrid::length_scale(i), FitGrid::noise_std(j)};
      const auto llt = factorize(kernel_matrix(probe, h));
      const Eigen::MatrixXd l = llt.matrixL();
      f.log_det.push_back(2.0 * l.diagonal().array().log().sum());
      f.inverse.push_back(llt.solve(Eigen::MatrixXd::Identity(l.rows(), l.cols())));
    }
  }
  return f;
}

inline std::shared_ptr<const GridFactors> grid_factors(const std::vector<double>& relative_times) {
  static std::mutex mutex;
  static std::map<std::vector<double>, std::shared_ptr<const GridFactors>> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(relative_times);
  if (it == cache.end()) {
    if (cache.size() > 64) cache.clear();
    it = cache
             .emplace(relative_times,
                      std::make_shared<const GridFactors>(build_grid_factors(relative_times)))
             .first;
  }
  return it->second;
}

}  // namespace detail

/// Maximum-likelihood hyperparameters over the fixed 32x32 grid. Ties go to the
/// larger length scale, then the larger noise level.
inline HyperParams fit(const TrainingSet& training) {
  training.validate();
  if (training.size() < 2) throw std::invalid_argument("gp::fit: need at least two samples");
  if (training.timestamps.back() == training.timestamps.front())
    throw std::invalid_argument("gp::fit: degenerate window");

  // The kernel depends on time differences only, so factors are keyed on
  // timestamps relative to the first sample, snapped to a 1 ns grid.
  std::vector<double> rel(training.size());
  for (std::size_t i = 0; i < rel.size(); ++i)
    rel[i] = std::round((training.timestamps[i] - training.timestamps[0]) * 1e9) * 1e-9;
  const auto factors = detail::grid_factors(rel);

  const Eigen::Map<const Eigen::VectorXd> y(training.velocities.data(),
                                            static_cast<Eigen::Index>(training.size()));
  double best = -std::numeric_limits<double>::infinity();
  HyperParams best_h{FitGrid::length_scale(0), FitGrid::noise_std(0)};
  constexpr int n = FitGrid::kSize;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const std::size_t cell = static_cast<std::size_t>(i * n + j);
      const double ll = -0.5 * y.dot(factors->inverse[cell] * y) - 0.5 * factors->log_det[cell];
      if (ll >= best) {
        best = ll;
        best_h = {FitGrid::length_scale(i), FitGrid::noise_std(j)};
      }
    }
  }
  return best_h;
}

/// Posterior of the latent velocity at the query timestamps (no noise term on
/// the query diagonal).
inline Prediction predict(const Model& model, std::span<const double> query) {
  const auto& tr = model.training;
  const auto llt = detail::factorize(kernel_matrix(tr, model.hyper));
  const auto n = static_cast<Eigen::Index>(tr.size());
  const auto m = static_cast<Eigen::Index>(query.size());
  Eigen::MatrixXd ks(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      ks(i, j) = rbf_kernel(tr.timestamps[i], query[j], model.hyper.length_scale);

  const Eigen::Map<const Eigen::VectorXd> y(tr.velocities.data(), n);
  const Eigen::VectorXd alpha = llt.solve(y);
  const Eigen::MatrixXd v = llt.matrixL().solve(ks);

  Prediction p;
  p.mean.resize(query.size());
  p.variance.resize(query.size());
  for (Eigen::Index j = 0; j < m; ++j) {
    p.mean[j] = ks.col(j).dot(alpha);
    p.variance[j] = std::max(0.0, 1.0 - v.col(j).squaredNorm());
  }
  return p;
}

}  // namespace cacc::gp
