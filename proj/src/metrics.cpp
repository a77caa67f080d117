#include "bnf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "bnf/error.hpp"
#include "bnf/quadrature.hpp"

namespace bnf {

using json = nlohmann::json;

namespace {

constexpr double kTailMass = 1e-6;
constexpr double kCrpsTolerance = 1e-6;
constexpr int kMonotoneProbes = 64;

// CRPS of an empirical distribution: E|X - y| - E|X - X'| / 2.
double ecdf_crps(std::span<const double> sorted, double y) {
  const auto n = static_cast<double>(sorted.size());
  double abs_dev = 0.0;
  double pair = 0.0;  // sum_{i<j} (x_j - x_i)
  for (std::size_t j = 0; j < sorted.size(); ++j) {
    abs_dev += std::abs(sorted[j] - y);
    pair += sorted[j] * (2.0 * static_cast<double>(j) - n + 1.0);
  }
  return abs_dev / n - pair / (n * n);
}

}  // namespace

double nll_score(const HeadGrid& heads, std::span<const std::vector<double>> targets) {
  if (heads.size() != targets.size()) throw DimensionError("nll_score: sample counts differ");
  if (heads.empty()) throw DataError("nll_score on an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].size() != targets[i].size()) throw DimensionError("nll_score: step counts differ");
    for (std::size_t t = 0; t < heads[i].size(); ++t) {
      if (!heads[i][t]->has_log_prob()) throw UnsupportedScoreError("NLL is not defined for quantile regression");
      total -= heads[i][t]->log_prob(targets[i][t]);
    }
  }
  return total / static_cast<double>(heads.size());
}

double crps_quadrature(const DensityHead& head, double y) {
  if (const auto* ecdf = dynamic_cast<const EcdfHead*>(&head)) return ecdf_crps(ecdf->pool(), y);

  const double lo = std::min(head.quantile(kTailMass), y);
  const double hi = std::max(head.quantile(1.0 - kTailMass), y);
  if (hi > lo) {
    double prev = head.cdf(lo);
    for (int k = 1; k <= kMonotoneProbes; ++k) {
      const double f = head.cdf(lo + (hi - lo) * k / kMonotoneProbes);
      if (f < prev - 1e-12) throw InvariantViolation("cdf is not monotone; CRPS undefined");
      prev = f;
    }
  }
  const auto below = [&](double x) {
    const double f = head.cdf(x);
    return f * f;
  };
  const auto above = [&](double x) {
    const double f = 1.0 - head.cdf(x);
    return f * f;
  };
  return quad::adaptive_simpson(below, lo, y, 0.5 * kCrpsTolerance) +
         quad::adaptive_simpson(above, y, hi, 0.5 * kCrpsTolerance);
}

double mqs(std::span<const double> targets, std::span<const std::vector<double>> quantiles,
           std::span<const double> levels) {
  if (targets.size() != quantiles.size()) throw DimensionError("mqs: targets and quantiles differ in length");
  if (targets.empty() || levels.empty()) throw DataError("mqs on an empty set");
  double total = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (quantiles[i].size() != levels.size()) throw DimensionError("mqs: quantile row does not match levels");
    for (std::size_t l = 0; l < levels.size(); ++l) {
      if (!(levels[l] > 0.0 && levels[l] < 1.0)) throw DomainError("mqs: level outside (0, 1)");
      total += pinball(targets[i], quantiles[i][l], levels[l]);
    }
  }
  return total / static_cast<double>(targets.size() * levels.size());
}

double crps_from_quantiles(double target, const DensityHead& head) {
  double total = 0.0;
  for (int i = 0; i < kQuantileLevels; ++i) {
    const double p = quantile_level(i);
    total += pinball(target, head.quantile(p), p);
  }
  return 2.0 * 0.01 * total;
}

double crps_from_quantiles(std::span<const double> targets, const DensityHead& head) {
  if (targets.empty()) throw DataError("crps_from_quantiles on an empty set");
  std::vector<double> q(kQuantileLevels);
  for (int i = 0; i < kQuantileLevels; ++i) q[i] = head.quantile(quantile_level(i));
  double total = 0.0;
  for (int i = 0; i < kQuantileLevels; ++i) {
    double level_sum = 0.0;
    for (double y : targets) level_sum += pinball(y, q[i], quantile_level(i));
    total += level_sum / static_cast<double>(targets.size());
  }
  return 2.0 * 0.01 * total;
}

ScoreReport score_heads(const HeadGrid& heads, std::span<const std::vector<double>> targets,
                        const ScoreOptions& opts) {
  if (heads.size() != targets.size()) throw DimensionError("score_heads: sample counts differ");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].size() != targets[i].size()) throw DimensionError("score_heads: ragged input");
  }
  return score_heads([&](std::size_t i, std::size_t t) -> const DensityHead& { return *heads[i][t]; }, targets,
                     opts);
}

ScoreReport score_heads(const HeadAccessor& head_at, std::span<const std::vector<double>> targets,
                        const ScoreOptions& opts) {
  if (targets.empty()) throw DataError("score_heads on an empty set");
  const std::size_t steps = targets.front().size();
  if (steps == 0) throw DimensionError("score_heads: no forecast steps");
  const bool density = head_at(0, 0).has_log_prob();
  const bool crps = opts.crps && density;

  ScoreReport rep;
  rep.n_samples = targets.size();
  std::vector<double> nll_step(steps, 0.0), crps_step(steps, 0.0), mqs_step(steps, 0.0);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].size() != steps) throw DimensionError("score_heads: ragged input");
    for (std::size_t t = 0; t < steps; ++t) {
      const DensityHead& h = head_at(i, t);
      const double y = targets[i][t];
      double pin = 0.0;
      for (int l = 0; l < kQuantileLevels; ++l) {
        const double p = quantile_level(l);
        pin += pinball(y, h.quantile(p), p);
      }
      mqs_step[t] += pin / kQuantileLevels;
      if (density) nll_step[t] -= h.log_prob(y);
      if (crps) crps_step[t] += crps_quadrature(h, y);
    }
  }
  const auto n = static_cast<double>(targets.size());
  double nll_total = 0.0, crps_total = 0.0, mqs_total = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    nll_step[t] /= n;
    crps_step[t] /= n;
    mqs_step[t] /= n;
    nll_total += nll_step[t];
    crps_total += crps_step[t];
    mqs_total += mqs_step[t];
  }
  rep.nmqs_pct = normalize_score(mqs_total / static_cast<double>(steps));
  rep.mqs_per_step = std::move(mqs_step);
  if (density) {
    rep.nll = nll_total;
    rep.nll_per_step = std::move(nll_step);
  }
  if (crps) {
    rep.ncrps_pct = normalize_score(crps_total / static_cast<double>(steps));
    rep.crps_per_step = std::move(crps_step);
  }
  return rep;
}

std::string ScoreReport::to_json() const {
  json j;
  j["split"] = split;
  j["head"] = head;
  j["network"] = network;
  j["seed"] = seed ? json(*seed) : json(nullptr);
  j["n_samples"] = n_samples;
  j["nll"] = nll ? json(*nll) : json(nullptr);
  j["ncrps_pct"] = ncrps_pct ? json(*ncrps_pct) : json(nullptr);
  j["nmqs_pct"] = nmqs_pct;
  j["nll_per_step"] = nll_per_step;
  j["crps_per_step"] = crps_per_step;
  j["mqs_per_step"] = mqs_per_step;
  j["aggregation"] = "nll: sum over steps, mean over samples; crps/mqs: mean over samples, steps (and levels)";
  return j.dump(2);
}

std::string ScoreReport::csv_header() { return "split,head,network,seed,nll,ncrps_pct,nmqs_pct"; }

std::string ScoreReport::csv_row() const {
  std::ostringstream out;
  out.precision(10);
  out << split << ',' << head << ',' << network << ',';
  if (seed) out << *seed;
  out << ',';
  if (nll) out << *nll;
  out << ',';
  if (ncrps_pct) out << *ncrps_pct;
  out << ',' << nmqs_pct;
  return out.str();
}

}  // namespace bnf
