#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bnf/heads.hpp"
#include "bnf/model.hpp"

namespace bnf {

// Mean over samples of -sum_t log p(y_t). Throws UnsupportedScoreError for
// heads without a density.
double nll_score(const HeadGrid& heads, std::span<const std::vector<double>> targets);

// integral (F(x) - 1{x >= y})^2 dx by adaptive Simpson over the range where
// min(F, 1 - F) > 1e-6, split at y. Empirical cdfs use the exact closed form.
double crps_quadrature(const DensityHead& head, double y);

// Mean over observations and levels of the pinball score. `quantiles` holds
// one row per observation with one column per level.
double mqs(std::span<const double> targets, std::span<const std::vector<double>> quantiles,
           std::span<const double> levels);

// 2 * dp * sum_q MQS(y, q, p_q) over the 99-level grid (dp = 0.01).
double crps_from_quantiles(std::span<const double> targets, const DensityHead& head);
double crps_from_quantiles(double target, const DensityHead& head);

// Scores on normalized data expressed as percentages.
inline double normalize_score(double raw) { return raw * 100.0; }

struct ScoreReport {
  std::string split;
  std::string head;
  std::string network = "fc";
  std::optional<std::uint64_t> seed;
  std::size_t n_samples = 0;
  std::optional<double> nll;         // per-sample sum over steps, mean over samples
  std::optional<double> ncrps_pct;   // 100 x mean CRPS over samples and steps
  double nmqs_pct = 0.0;             // 100 x mean pinball over samples, steps, levels
  std::vector<double> nll_per_step;  // empty when nll is unsupported
  std::vector<double> crps_per_step;
  std::vector<double> mqs_per_step;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

struct ScoreOptions {
  bool crps = true;  // continuous CRPS by quadrature (skipped for QR heads)
};

ScoreReport score_heads(const HeadGrid& heads, std::span<const std::vector<double>> targets,
                        const ScoreOptions& opts = {});

// Same, with heads supplied per (sample, step) so shared heads need not be copied.
using HeadAccessor = std::function<const DensityHead&(std::size_t sample, std::size_t step)>;
ScoreReport score_heads(const HeadAccessor& head_at, std::span<const std::vector<double>> targets,
                        const ScoreOptions& opts = {});

}  // namespace bnf
