#include "bnf/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "bnf/error.hpp"
#include "bnf/math.hpp"
#include "bnf/root_finding.hpp"

namespace bnf {

namespace {

void check_probability(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("quantile level must lie in (0, 1)");
}

void check_size(std::span<const double> raw, std::size_t expected, const char* head) {
  if (raw.size() != expected) {
    throw DimensionError(std::string(head) + " head expects " + std::to_string(expected) +
                         " raw outputs, got " + std::to_string(raw.size()));
  }
}

}  // namespace

std::vector<double> DensityHead::sample(std::size_t n, Rng& rng) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    v = quantile(u);
  }
  return out;
}

// ---------------------------------------------------------------------------
// BnfHead

BnfHead BnfHead::from_raw(std::span<const double> raw, BernsteinOrder order) {
  return BnfHead(constrain_params(raw, order));
}

double BnfHead::log_prob(double y) const {
  const auto ev = flow_forward(y, params_);
  return math::normal_log_pdf(ev.z) + ev.log_det;
}

double BnfHead::cdf(double y) const { return math::normal_cdf(flow_forward(y, params_).z); }

double BnfHead::quantile(double p) const {
  check_probability(p);
  return flow_inverse(math::normal_quantile(p), params_);
}

std::vector<double> BnfHead::sample(std::size_t n, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) v = flow_inverse(normal(rng), params_);
  return out;
}

// ---------------------------------------------------------------------------
// GaussianHead

GaussianHead::GaussianHead(double mu, double sigma) : mu_(mu), sigma_(sigma) {
  if (!std::isfinite(mu_)) throw InvalidParameterError("Gaussian mean must be finite");
  if (!(sigma_ > 0.0) || !std::isfinite(sigma_)) {
    throw InvalidParameterError("Gaussian scale must be positive and finite");
  }
}

GaussianHead GaussianHead::from_raw(std::span<const double> raw) {
  check_size(raw, 2, "Gaussian");
  return GaussianHead(raw[0], math::softplus(raw[1]) + kScaleFloor);
}

double GaussianHead::log_prob(double y) const {
  return math::normal_log_pdf((y - mu_) / sigma_) - std::log(sigma_);
}

double GaussianHead::cdf(double y) const { return math::normal_cdf((y - mu_) / sigma_); }

double GaussianHead::quantile(double p) const {
  check_probability(p);
  return mu_ + sigma_ * math::normal_quantile(p);
}

std::vector<double> GaussianHead::sample(std::size_t n, Rng& rng) const {
  std::normal_distribution<double> normal(mu_, sigma_);
  std::vector<double> out(n);
  for (auto& v : out) v = normal(rng);
  return out;
}

// ---------------------------------------------------------------------------
// GmmHead

GmmHead::GmmHead(std::vector<double> mu, std::vector<double> sigma, std::vector<double> alpha)
    : mu_(std::move(mu)), sigma_(std::move(sigma)), alpha_(std::move(alpha)) {
  if (mu_.empty() || mu_.size() != sigma_.size() || mu_.size() != alpha_.size()) {
    throw DimensionError("mixture parameter vectors must be nonempty and of equal length");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < mu_.size(); ++k) {
    if (!std::isfinite(mu_[k])) throw InvalidParameterError("mixture mean must be finite");
    if (!(sigma_[k] > 0.0) || !std::isfinite(sigma_[k])) {
      throw InvalidParameterError("mixture scale must be positive and finite");
    }
    if (!(alpha_[k] >= 0.0)) throw InvalidParameterError("mixture weight must be nonnegative");
    total += alpha_[k];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidParameterError("mixture weights must sum to one");
  log_alpha_.resize(alpha_.size());
  for (std::size_t k = 0; k < alpha_.size(); ++k) log_alpha_[k] = std::log(alpha_[k]);
}

GmmHead GmmHead::from_raw(std::span<const double> raw) {
  constexpr std::size_t k = kMixtureComponents;
  check_size(raw, 3 * k, "Gaussian mixture");
  std::vector<double> mu(raw.begin(), raw.begin() + k);
  std::vector<double> sigma(k);
  for (std::size_t i = 0; i < k; ++i) sigma[i] = math::softplus(raw[k + i]) + kScaleFloor;
  auto alpha = math::softmax(raw.subspan(2 * k, k));
  return GmmHead(std::move(mu), std::move(sigma), std::move(alpha));
}

double GmmHead::log_prob(double y) const {
  double terms[16];
  std::vector<double> heap;
  double* t = terms;
  if (mu_.size() > 16) {
    heap.resize(mu_.size());
    t = heap.data();
  }
  for (std::size_t k = 0; k < mu_.size(); ++k) {
    t[k] = log_alpha_[k] + math::normal_log_pdf((y - mu_[k]) / sigma_[k]) - std::log(sigma_[k]);
  }
  return math::log_sum_exp(std::span<const double>(t, mu_.size()));
}

double GmmHead::cdf(double y) const {
  double s = 0.0;
  for (std::size_t k = 0; k < mu_.size(); ++k) s += alpha_[k] * math::normal_cdf((y - mu_[k]) / sigma_[k]);
  return std::clamp(s, 0.0, 1.0);
}

double GmmHead::quantile(double p) const {
  check_probability(p);
  // Every component quantile at level p brackets the mixture quantile.
  const double zp = math::normal_quantile(p);
  double lo = mu_[0] + sigma_[0] * zp;
  double hi = lo;
  for (std::size_t k = 1; k < mu_.size(); ++k) {
    lo = std::min(lo, mu_[k] + sigma_[k] * zp);
    hi = std::max(hi, mu_[k] + sigma_[k] * zp);
  }
  if (hi - lo < 1e-300) return lo;
  roots::Tolerance tol;
  tol.x_abs = 1e-12;
  const auto res = roots::chandrupatla([&](double y) { return cdf(y) - p; }, lo, hi, tol);
  if (!res.converged) throw NumericalError("mixture quantile did not converge", res.residual);
  return res.x;
}

std::vector<double> GmmHead::sample(std::size_t n, Rng& rng) const {
  std::discrete_distribution<std::size_t> pick(alpha_.begin(), alpha_.end());
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (auto& v : out) {
    const std::size_t k = pick(rng);
    v = mu_[k] + sigma_[k] * normal(rng);
  }
  return out;
}

// ---------------------------------------------------------------------------
// QuantileHead

double quantile_level(int i) { return (i + 1) / 100.0; }

std::vector<double> quantile_levels() {
  std::vector<double> p(kQuantileLevels);
  for (int i = 0; i < kQuantileLevels; ++i) p[i] = quantile_level(i);
  return p;
}

QuantileHead::QuantileHead(std::vector<double> knots) : q_(std::move(knots)) {
  if (q_.size() != kQuantileLevels) {
    throw DimensionError("quantile head needs 99 knots, got " + std::to_string(q_.size()));
  }
  for (std::size_t i = 0; i < q_.size(); ++i) {
    if (!std::isfinite(q_[i])) throw InvalidParameterError("non-finite quantile knot");
    if (i > 0 && q_[i] < q_[i - 1]) throw InvalidParameterError("quantile knots cross");
  }
}

QuantileHead QuantileHead::from_raw(std::span<const double> raw) {
  check_size(raw, kQuantileLevels, "quantile");
  std::vector<double> q(raw.size());
  q[0] = raw[0];
  for (std::size_t i = 1; i < raw.size(); ++i) q[i] = q[i - 1] + math::softplus(raw[i]);
  return QuantileHead(std::move(q));
}

double QuantileHead::log_prob(double) const {
  throw UnsupportedScoreError("quantile regression head has no tractable density");
}

double QuantileHead::cdf(double y) const {
  const auto it = std::upper_bound(q_.begin(), q_.end(), y);
  if (it == q_.begin()) return 0.0;
  if (it == q_.end()) return 1.0;
  const auto j = static_cast<int>(it - q_.begin());
  const int i = j - 1;
  const double width = q_[j] - q_[i];
  const double frac = width > 0.0 ? (y - q_[i]) / width : 0.0;
  return quantile_level(i) + 0.01 * frac;
}

double QuantileHead::quantile(double p) const {
  check_probability(p);
  if (p <= quantile_level(0)) return q_.front();
  if (p >= quantile_level(kQuantileLevels - 1)) return q_.back();
  const double pos = p * 100.0 - 1.0;  // fractional knot index
  const auto i = std::min(static_cast<int>(std::floor(pos)), kQuantileLevels - 2);
  const double frac = pos - i;
  return q_[i] + frac * (q_[i + 1] - q_[i]);
}

double QuantileHead::loss(double y) const {
  double s = 0.0;
  for (int i = 0; i < kQuantileLevels; ++i) s += pinball(y, q_[i], quantile_level(i));
  return s / kQuantileLevels;
}

// ---------------------------------------------------------------------------
// EcdfHead

namespace {
constexpr int kKdeGrid = 1024;
constexpr double kKdeReach = 6.0;  // kernel truncation in bandwidths
constexpr double kMinBandwidth = 1e-4;

double silverman_bandwidth(const std::vector<double>& sorted) {
  const auto n = static_cast<double>(sorted.size());
  if (sorted.size() < 2) return kMinBandwidth;
  const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : sorted) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const auto at = [&](double p) {
    return sorted[static_cast<std::size_t>(std::floor(p * (n - 1.0)))];
  };
  const double iqr = at(0.75) - at(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return std::max(kMinBandwidth, 0.9 * spread * std::pow(n, -0.2));
}
}  // namespace

EcdfHead::EcdfHead(std::vector<double> pool) {
  if (pool.empty()) throw DataError("ECDF pool is empty");
  for (double v : pool) {
    if (!std::isfinite(v)) throw DataError("ECDF pool contains a non-finite value");
  }
  std::sort(pool.begin(), pool.end());
  bandwidth_ = silverman_bandwidth(pool);

  // Linear binning followed by a truncated Gaussian convolution.
  const double lo = pool.front() - kKdeReach * bandwidth_;
  const double hi = pool.back() + kKdeReach * bandwidth_;
  grid_lo_ = lo;
  grid_step_ = (hi - lo) / (kKdeGrid - 1);
  std::vector<double> counts(kKdeGrid, 0.0);
  for (double v : pool) {
    const double pos = (v - lo) / grid_step_;
    const auto g = std::min(static_cast<int>(pos), kKdeGrid - 2);
    const double w = pos - g;
    counts[g] += 1.0 - w;
    counts[g + 1] += w;
  }
  const int reach = static_cast<int>(std::ceil(kKdeReach * bandwidth_ / grid_step_));
  std::vector<double> kernel(static_cast<std::size_t>(reach) + 1);
  for (int d = 0; d <= reach; ++d) kernel[d] = math::normal_pdf(d * grid_step_ / bandwidth_);
  const double norm = 1.0 / (static_cast<double>(pool.size()) * bandwidth_);
  auto density = std::make_shared<std::vector<double>>(kKdeGrid, 0.0);
  for (int g = 0; g < kKdeGrid; ++g) {
    if (counts[g] == 0.0) continue;
    const int a = std::max(0, g - reach);
    const int b = std::min(kKdeGrid - 1, g + reach);
    for (int j = a; j <= b; ++j) (*density)[j] += counts[g] * kernel[std::abs(j - g)];
  }
  for (double& d : *density) d *= norm;
  density_grid_ = std::move(density);
  pool_ = std::make_shared<const std::vector<double>>(std::move(pool));
}

double EcdfHead::kde(double y) const {
  const double pos = (y - grid_lo_) / grid_step_;
  if (pos >= 0.0 && pos <= kKdeGrid - 1) {
    const auto g = std::min(static_cast<int>(pos), kKdeGrid - 2);
    const double w = pos - g;
    const double d = (1.0 - w) * (*density_grid_)[g] + w * (*density_grid_)[g + 1];
    if (d > 0.0) return std::log(d);
  }
  // Exact log-sum-exp evaluation outside the table.
  const auto& p = *pool_;
  double m = -INFINITY;
  for (double v : p) m = std::max(m, math::normal_log_pdf((y - v) / bandwidth_));
  double s = 0.0;
  for (double v : p) s += std::exp(math::normal_log_pdf((y - v) / bandwidth_) - m);
  return m + std::log(s) - std::log(static_cast<double>(p.size()) * bandwidth_);
}

double EcdfHead::log_prob(double y) const { return kde(y); }

double EcdfHead::cdf(double y) const {
  const auto& p = *pool_;
  const auto it = std::upper_bound(p.begin(), p.end(), y);
  return static_cast<double>(it - p.begin()) / static_cast<double>(p.size());
}

double EcdfHead::quantile(double p) const {
  check_probability(p);
  const auto& pool = *pool_;
  const auto n = static_cast<double>(pool.size());
  // The slack keeps quantile(k / n) at order statistic k - 1 despite rounding in p * n.
  const auto idx = static_cast<long>(std::ceil(p * n - 1e-9)) - 1;
  return pool[static_cast<std::size_t>(std::clamp(idx, 0L, static_cast<long>(pool.size()) - 1))];
}

EcdfBaseline ecdf_fit(std::span<const std::vector<double>> targets) {
  if (targets.empty()) throw DataError("ECDF fit needs at least one sample");
  const std::size_t steps = targets.front().size();
  if (steps == 0) throw DataError("ECDF fit needs at least one time step");
  std::vector<std::vector<double>> pools(steps);
  for (auto& pool : pools) pool.reserve(targets.size());
  for (const auto& row : targets) {
    if (row.size() != steps) throw DimensionError("ECDF fit: ragged target matrix");
    for (std::size_t t = 0; t < steps; ++t) pools[t].push_back(row[t]);
  }
  std::vector<EcdfHead> heads;
  heads.reserve(steps);
  for (auto& pool : pools) heads.emplace_back(std::move(pool));
  return EcdfBaseline(std::move(heads));
}

}  // namespace bnf
