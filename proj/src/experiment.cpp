#include "bnf/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <tuple>

#include "bnf/error.hpp"

namespace bnf {

using namespace std::chrono;

namespace {

std::pair<data::Day, data::Day> whole_day_range(const std::vector<data::MeterSeries>& series) {
  const auto& ts = series.front().timestamps;
  data::Day first = ceil<days>(ts.front());
  data::Day last = floor<days>(ts.back() + data::kInterval) - days{1};
  if (last < first) throw DataError("series do not cover a whole day");
  return {first, last};
}

}  // namespace

PreparedData prepare(std::vector<data::MeterSeries> series, const data::HolidayCalendar& calendar,
                     const PrepareOptions& opts) {
  if (series.empty()) throw DataError("no meter series");
  data::SplitSpec provisional;
  for (const auto& s : series) provisional.train_households.insert(s.household_id);
  provisional.boundary_day = floor<days>(series.front().timestamps.front());
  auto survivors = data::preprocess(series, provisional, opts.preprocess);

  std::vector<std::string> ids;
  for (const auto& s : survivors.series) ids.push_back(s.household_id);
  const auto [first, last] = whole_day_range(survivors.series);

  PreparedData out;
  out.calendar = calendar;
  out.spec = data::make_split_spec(ids, opts.train_households, opts.holdout_households, first, last,
                                   opts.boundary_fraction);
  std::set<std::string> used = out.spec.train_households;
  used.insert(out.spec.holdout_households.begin(), out.spec.holdout_households.end());
  std::vector<data::MeterSeries> selected;
  for (auto& s : series) {
    if (used.count(s.household_id) != 0) selected.push_back(std::move(s));
  }
  auto pre = data::preprocess(std::move(selected), out.spec, opts.preprocess);
  out.norm = pre.norm;
  out.dropped = survivors.dropped;
  const auto samples = data::make_windows(pre.series, calendar);
  out.splits = data::split(samples, out.spec);
  if (out.splits.train.empty()) throw DataError("the training split is empty");
  out.fit = data::split_validation(out.splits.train, opts.validation_fraction);
  return out;
}

ad::Matrix feature_matrix(const std::vector<data::ForecastSample>& samples) {
  ad::Matrix x(static_cast<Eigen::Index>(samples.size()), data::kFeatureCount);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (int j = 0; j < data::kHistoryLength; ++j) x(r, j) = samples[i].history[j];
    for (int j = 0; j < data::kTimeFeatures; ++j) x(r, data::kHistoryLength + j) = samples[i].time[j];
  }
  return x;
}

ad::Matrix target_matrix(const std::vector<data::ForecastSample>& samples) {
  ad::Matrix y(static_cast<Eigen::Index>(samples.size()), data::kStepsPerDay);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (int j = 0; j < data::kStepsPerDay; ++j) y(static_cast<Eigen::Index>(i), j) = samples[i].target[j];
  }
  return y;
}

std::vector<std::vector<double>> target_rows(const std::vector<data::ForecastSample>& samples) {
  std::vector<std::vector<double>> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.target);
  return out;
}

Dataset to_dataset(const std::vector<data::ForecastSample>& samples) {
  return Dataset{feature_matrix(samples), target_matrix(samples)};
}

ForecastInput forecast_input(const data::MeterSeries& series, data::Day day, const data::NormalizationRecord& norm,
                             const data::HolidayCalendar& calendar) {
  const auto& ts = series.timestamps;
  // Loads on the 30-minute grid starting at `from`; nullopt entries are missing.
  auto grid = [&](data::Instant from, int count) {
    std::vector<std::optional<double>> out(static_cast<std::size_t>(count));
    auto it = std::lower_bound(ts.begin(), ts.end(), from);
    for (; it != ts.end(); ++it) {
      const auto k = (*it - from) / data::kInterval;
      if (k >= count) break;
      if ((*it - from) % data::kInterval == minutes{0}) {
        out[static_cast<std::size_t>(k)] = series.load[static_cast<std::size_t>(it - ts.begin())];
      }
    }
    return out;
  };

  const data::Instant start(day - days{data::kHistoryDays});
  const auto history = grid(start, data::kHistoryLength);
  const auto first_gap = std::find(history.begin(), history.end(), std::nullopt);
  if (first_gap != history.end()) {
    const auto last_gap = std::find(history.rbegin(), history.rend(), std::nullopt);
    const auto from = start + data::kInterval * (first_gap - history.begin());
    const auto to = start + data::kInterval * (history.rend() - last_gap - 1);
    throw DataError("household " + series.household_id + " has no loads for " + data::format_instant(from) + " .. " +
                    data::format_instant(to) + " needed as history for " + data::format_day(day));
  }

  ForecastInput out{ad::Matrix(1, data::kFeatureCount), std::nullopt};
  for (int j = 0; j < data::kHistoryLength; ++j) {
    out.x(0, j) = std::clamp(norm.normalize(*history[static_cast<std::size_t>(j)]), 0.0, 1.0);
  }
  const auto time = data::encode_time(day, calendar);
  for (int j = 0; j < data::kTimeFeatures; ++j) out.x(0, data::kHistoryLength + j) = time[j];

  const auto target = grid(data::Instant(day), data::kStepsPerDay);
  if (std::find(target.begin(), target.end(), std::nullopt) == target.end()) {
    std::vector<double> obs;
    for (const auto& v : target) obs.push_back(*v);
    out.observed = std::move(obs);
  }
  return out;
}

TrainedModel train_model(HeadKind kind, BernsteinOrder order, const PreparedData& prepared, const TrainConfig& cfg,
                         std::vector<int> hidden, const EpochCallback& on_epoch) {
  std::mt19937_64 init_rng(cfg.seed);
  TrainedModel out{make_model(kind, order, data::kFeatureCount, init_rng, std::move(hidden)), {}};
  out.history = fit(out.model, to_dataset(prepared.fit.fit), to_dataset(prepared.fit.validation), cfg, on_epoch);
  return out;
}

namespace {

constexpr std::size_t kScoreChunk = 512;

// Weighted merge of per-chunk reports into one.
void accumulate(ScoreReport& total, const ScoreReport& part) {
  const auto n0 = static_cast<double>(total.n_samples);
  const auto n1 = static_cast<double>(part.n_samples);
  const double w0 = n0 / (n0 + n1);
  const double w1 = n1 / (n0 + n1);
  auto mix = [&](std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty()) {
      a = b;
      return;
    }
    for (std::size_t t = 0; t < a.size(); ++t) a[t] = w0 * a[t] + w1 * b[t];
  };
  auto mix_opt = [&](std::optional<double>& a, const std::optional<double>& b) {
    if (!b) return;
    a = a ? w0 * *a + w1 * *b : *b;
  };
  if (total.n_samples == 0) {
    total = part;
    return;
  }
  mix(total.nll_per_step, part.nll_per_step);
  mix(total.crps_per_step, part.crps_per_step);
  mix(total.mqs_per_step, part.mqs_per_step);
  mix_opt(total.nll, part.nll);
  mix_opt(total.ncrps_pct, part.ncrps_pct);
  total.nmqs_pct = w0 * total.nmqs_pct + w1 * part.nmqs_pct;
  total.n_samples += part.n_samples;
}

}  // namespace

ScoreReport evaluate_model(const Model& model, const std::vector<data::ForecastSample>& samples,
                           const ScoreOptions& opts) {
  if (samples.empty()) throw DataError("cannot score an empty split");
  ScoreReport total;
  for (std::size_t start = 0; start < samples.size(); start += kScoreChunk) {
    const std::vector<data::ForecastSample> chunk(
        samples.begin() + static_cast<std::ptrdiff_t>(start),
        samples.begin() + static_cast<std::ptrdiff_t>(std::min(samples.size(), start + kScoreChunk)));
    const HeadGrid heads = predict_heads(model, feature_matrix(chunk));
    accumulate(total, score_heads(heads, target_rows(chunk), opts));
  }
  total.head = std::string(head_name(model.kind));
  return total;
}

EcdfBaseline fit_ecdf(const std::vector<data::ForecastSample>& train) {
  const auto rows = target_rows(train);
  return ecdf_fit(rows);
}

ScoreReport evaluate_ecdf(const EcdfBaseline& baseline, const std::vector<data::ForecastSample>& samples,
                          const ScoreOptions& opts) {
  if (samples.empty()) throw DataError("cannot score an empty split");
  const auto rows = target_rows(samples);
  auto rep = score_heads([&](std::size_t, std::size_t t) -> const DensityHead& { return baseline.head(t); }, rows,
                         opts);
  rep.head = "ecdf";
  return rep;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

std::vector<AggregateRow> aggregate(const std::vector<ScoreReport>& reports) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const ScoreReport*>> groups;
  for (const auto& r : reports) {
    Key k{r.split, r.head, r.network};
    if (groups.count(k) == 0) order.push_back(k);
    groups[k].push_back(&r);
  }
  std::vector<AggregateRow> out;
  for (const auto& k : order) {
    const auto& g = groups[k];
    AggregateRow row;
    std::tie(row.split, row.head, row.network) = k;
    row.runs = g.size();
    std::vector<double> nll, crps, nmqs;
    for (const auto* r : g) {
      if (r->nll) nll.push_back(*r->nll);
      if (r->ncrps_pct) crps.push_back(*r->ncrps_pct);
      nmqs.push_back(r->nmqs_pct);
    }
    if (nll.size() == g.size()) std::tie(row.nll_mean, row.nll_std) = mean_std(nll);
    if (crps.size() == g.size()) std::tie(row.ncrps_mean, row.ncrps_std) = mean_std(crps);
    std::tie(row.nmqs_mean, row.nmqs_std) = mean_std(nmqs);
    out.push_back(row);
  }
  return out;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "split,head,network,runs,nll_mean,nll_std,ncrps_pct_mean,ncrps_pct_std,nmqs_pct_mean,nmqs_pct_std\n";
  auto opt = [&](const std::optional<double>& v) {
    out << ',';
    if (v) out << *v;
  };
  for (const auto& r : rows) {
    out << r.split << ',' << r.head << ',' << r.network << ',' << r.runs;
    opt(r.nll_mean);
    opt(r.nll_std);
    opt(r.ncrps_mean);
    opt(r.ncrps_std);
    out << ',' << r.nmqs_mean << ',' << r.nmqs_std << '\n';
  }
  return out.str();
}

}  // namespace bnf
