#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bnf/data.hpp"
#include "bnf/heads.hpp"
#include "bnf/metrics.hpp"
#include "bnf/model.hpp"
#include "bnf/training.hpp"

namespace bnf {

struct PrepareOptions {
  std::size_t train_households = 30;
  std::size_t holdout_households = 10;
  double boundary_fraction = data::kDefaultBoundaryFraction;
  double validation_fraction = 0.1;
  data::PreprocessOptions preprocess;
};

struct PreparedData {
  data::SplitSpec spec;
  data::NormalizationRecord norm;
  std::vector<std::string> dropped;
  data::Splits splits;
  data::FitValidation fit;  // the training split, divided by date
  data::HolidayCalendar calendar;
};

// Preprocess, window and split. The split is chosen among the households that
// survive preprocessing, so the divisor is computed after the final split.
PreparedData prepare(std::vector<data::MeterSeries> series, const data::HolidayCalendar& calendar,
                     const PrepareOptions& opts);

ad::Matrix feature_matrix(const std::vector<data::ForecastSample>& samples);
ad::Matrix target_matrix(const std::vector<data::ForecastSample>& samples);
std::vector<std::vector<double>> target_rows(const std::vector<data::ForecastSample>& samples);
Dataset to_dataset(const std::vector<data::ForecastSample>& samples);

// Features of one household for one target day, built from raw kWh loads.
struct ForecastInput {
  ad::Matrix x;                                 // 1 x 341
  std::optional<std::vector<double>> observed;  // kWh, when the day is in the series
};

// DataError naming the missing range when days d-7 .. d-1 are not fully covered.
ForecastInput forecast_input(const data::MeterSeries& series, data::Day day, const data::NormalizationRecord& norm,
                             const data::HolidayCalendar& calendar);

struct TrainedModel {
  Model model;
  TrainHistory history;
};

TrainedModel train_model(HeadKind kind, BernsteinOrder order, const PreparedData& prepared, const TrainConfig& cfg,
                         std::vector<int> hidden = {512, 256, 128}, const EpochCallback& on_epoch = {});

// Heads are predicted and scored in chunks to bound memory.
ScoreReport evaluate_model(const Model& model, const std::vector<data::ForecastSample>& samples,
                           const ScoreOptions& opts = {});

EcdfBaseline fit_ecdf(const std::vector<data::ForecastSample>& train);
ScoreReport evaluate_ecdf(const EcdfBaseline& baseline, const std::vector<data::ForecastSample>& samples,
                          const ScoreOptions& opts = {});

struct AggregateRow {
  std::string split;
  std::string head;
  std::string network;
  std::size_t runs = 0;
  std::optional<double> nll_mean, nll_std;
  std::optional<double> ncrps_mean, ncrps_std;
  double nmqs_mean = 0.0;
  double nmqs_std = 0.0;  // sample standard deviation; 0 for a single run
};

// Groups by (split, head, network) in order of first appearance.
std::vector<AggregateRow> aggregate(const std::vector<ScoreReport>& reports);
std::string aggregate_csv(const std::vector<AggregateRow>& rows);

}  // namespace bnf
