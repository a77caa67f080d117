#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "bnf/bernstein.hpp"

namespace bnf {

using Rng = std::mt19937_64;

// Conditional distribution of the load at one forecast time step.
class DensityHead {
 public:
  virtual ~DensityHead() = default;

  virtual bool has_log_prob() const noexcept { return true; }
  virtual double log_prob(double y) const = 0;
  virtual double cdf(double y) const = 0;
  virtual double quantile(double p) const = 0;
  // Inverse-cdf sampling unless a head overrides it.
  virtual std::vector<double> sample(std::size_t n, Rng& rng) const;
  // Training loss for one observation: NLL by default.
  virtual double loss(double y) const { return -log_prob(y); }
};

// Normalizing flow with a Bernstein-polynomial stage and a standard normal base.
class BnfHead final : public DensityHead {
 public:
  explicit BnfHead(ConstrainedFlowParams params) : params_(std::move(params)) {}
  static BnfHead from_raw(std::span<const double> raw, BernsteinOrder order);

  const ConstrainedFlowParams& params() const noexcept { return params_; }

  double log_prob(double y) const override;
  double cdf(double y) const override;
  double quantile(double p) const override;
  std::vector<double> sample(std::size_t n, Rng& rng) const override;

 private:
  ConstrainedFlowParams params_;
};

inline constexpr double kScaleFloor = 1e-6;

class GaussianHead final : public DensityHead {
 public:
  GaussianHead(double mu, double sigma);
  // raw = (mu, sigma~), sigma = softplus(sigma~) + 1e-6
  static GaussianHead from_raw(std::span<const double> raw);

  double mu() const noexcept { return mu_; }
  double sigma() const noexcept { return sigma_; }

  double log_prob(double y) const override;
  double cdf(double y) const override;
  double quantile(double p) const override;
  std::vector<double> sample(std::size_t n, Rng& rng) const override;

 private:
  double mu_;
  double sigma_;
};

inline constexpr int kMixtureComponents = 3;

class GmmHead final : public DensityHead {
 public:
  GmmHead(std::vector<double> mu, std::vector<double> sigma, std::vector<double> alpha);
  // raw = (mu_1..mu_K, sigma~_1..sigma~_K, alpha~_1..alpha~_K) with K = 3
  static GmmHead from_raw(std::span<const double> raw);

  std::span<const double> mu() const noexcept { return mu_; }
  std::span<const double> sigma() const noexcept { return sigma_; }
  std::span<const double> alpha() const noexcept { return alpha_; }

  double log_prob(double y) const override;
  double cdf(double y) const override;
  double quantile(double p) const override;
  std::vector<double> sample(std::size_t n, Rng& rng) const override;

 private:
  std::vector<double> mu_;
  std::vector<double> sigma_;
  std::vector<double> alpha_;
  std::vector<double> log_alpha_;
};

inline constexpr int kQuantileLevels = 99;

// Quantile level p_i = (i + 1) / 100 for i = 0..98.
double quantile_level(int i);
std::vector<double> quantile_levels();

// Pinball / quantile score of a single (y, q, p) triple.
inline double pinball(double y, double q, double p) {
  return (q - y) * ((y <= q ? 1.0 : 0.0) - p);
}

// 99 quantiles at p = 0.01..0.99, linearly interpolated between the knots and
// flat beyond the outermost ones.
class QuantileHead final : public DensityHead {
 public:
  explicit QuantileHead(std::vector<double> knots);
  // q_0 = raw_0, q_i = q_(i-1) + softplus(raw_i)
  static QuantileHead from_raw(std::span<const double> raw);

  std::span<const double> knots() const noexcept { return q_; }

  bool has_log_prob() const noexcept override { return false; }
  double log_prob(double y) const override;  // throws UnsupportedScoreError
  double cdf(double y) const override;
  double quantile(double p) const override;
  // Pinball loss averaged over the 99 levels.
  double loss(double y) const override;

 private:
  std::vector<double> q_;
};

// Empirical distribution of one time step's training observations. The
// log-density is a Gaussian kernel density estimate (Silverman bandwidth)
// tabulated on a fixed grid, since the empirical cdf itself has no density.
class EcdfHead final : public DensityHead {
 public:
  explicit EcdfHead(std::vector<double> pool);

  std::span<const double> pool() const noexcept { return *pool_; }
  double bandwidth() const noexcept { return bandwidth_; }

  double log_prob(double y) const override;
  double cdf(double y) const override;
  double quantile(double p) const override;

 private:
  double kde(double y) const;

  std::shared_ptr<const std::vector<double>> pool_;
  std::shared_ptr<const std::vector<double>> density_grid_;
  double grid_lo_ = 0.0;
  double grid_step_ = 0.0;
  double bandwidth_ = 0.0;
};

// One EcdfHead per forecast time step, fitted on training targets.
class EcdfBaseline {
 public:
  explicit EcdfBaseline(std::vector<EcdfHead> steps) : steps_(std::move(steps)) {}
  std::size_t steps() const noexcept { return steps_.size(); }
  const EcdfHead& head(std::size_t t) const { return steps_.at(t); }

 private:
  std::vector<EcdfHead> steps_;
};

// `targets` holds one row per sample; every row must have the same length.
EcdfBaseline ecdf_fit(std::span<const std::vector<double>> targets);

}  // namespace bnf
