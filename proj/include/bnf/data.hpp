#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace bnf::data {

using Instant = std::chrono::sys_time<std::chrono::minutes>;
using Day = std::chrono::sys_days;

inline constexpr int kStepsPerDay = 48;
inline constexpr int kHistoryDays = 7;
inline constexpr int kHistoryLength = kStepsPerDay * kHistoryDays;
inline constexpr int kTimeFeatures = 5;
inline constexpr int kFeatureCount = kHistoryLength + kTimeFeatures;
inline constexpr std::chrono::minutes kInterval{30};

// "YYYY-MM-DD[T ]HH:MM[:SS][Z]"; nullopt when malformed.
std::optional<Instant> parse_instant(std::string_view text);
std::optional<Day> parse_day(std::string_view text);
std::string format_instant(Instant t);
std::string format_day(Day d);

// Timestamps mark the start of each half-hour interval.
struct MeterSeries {
  std::string household_id;
  std::vector<Instant> timestamps;
  std::vector<double> load;

  std::size_t size() const noexcept { return load.size(); }
  // Strictly increasing with uniform 30-minute spacing.
  bool is_regular() const;
};

struct RejectedRow {
  std::size_t line;
  std::string reason;
};

struct IngestResult {
  std::vector<MeterSeries> series;  // sorted by household id, then time
  std::vector<RejectedRow> rejected;
};

// Columns household_id, timestamp, kwh in any order. Throws FormatError on a
// missing column and DataError on a duplicate (household, instant).
IngestResult ingest_csv(const std::filesystem::path& path);
IngestResult ingest_csv_text(std::string_view text);

void write_csv(const std::filesystem::path& path, const std::vector<MeterSeries>& series);

class HolidayCalendar {
 public:
  HolidayCalendar() = default;
  // Recurring Jan 1, Mar 17, Dec 25 and Dec 26.
  static HolidayCalendar defaults();
  // One ISO date per line; blank lines and lines starting with '#' are skipped.
  static HolidayCalendar from_file(const std::filesystem::path& path);

  void add_date(Day d) { dates_.insert(d); }
  void add_recurring(std::chrono::month_day md) { recurring_.insert(md); }
  bool contains(Day d) const;
  // Every holiday in [first, last], recurring ones expanded.
  std::vector<Day> expand(Day first, Day last) const;
  void write(const std::filesystem::path& path, Day first, Day last) const;

 private:
  std::set<Day> dates_;
  std::set<std::chrono::month_day> recurring_;
};

// Day-of-year (period 365.25) and weekday (Monday = 0, period 7) each as
// ((sin + 1) / 2, (cos + 1) / 2), then the holiday flag.
std::array<double, kTimeFeatures> encode_time(Day day, const HolidayCalendar& calendar);

struct NormalizationRecord {
  double divisor = 1.0;
  Day boundary_day{};  // last day whose loads entered the divisor

  double normalize(double kwh) const { return kwh / divisor; }
  double denormalize(double v) const { return v * divisor; }
};

struct SplitSpec {
  std::set<std::string> train_households;
  std::set<std::string> holdout_households;
  Day boundary_day{};  // last day of the training period, inclusive

  void validate() const;  // ConfigError on overlapping household sets
};

// Fraction of the study range before the boundary (383 of 536 days).
inline constexpr double kDefaultBoundaryFraction = 383.0 / 536.0;

// The last `holdout` ids (sorted) are held out; the first `train` of the rest
// are training households. The boundary falls after `boundary_fraction` of the
// whole days in [first_day, last_day].
SplitSpec make_split_spec(std::vector<std::string> ids, std::size_t train, std::size_t holdout, Day first_day,
                          Day last_day, double boundary_fraction = kDefaultBoundaryFraction);

struct PreprocessOptions {
  std::set<std::string> exclude_households;  // non-residential filter
};

struct PreprocessResult {
  std::vector<MeterSeries> series;
  NormalizationRecord norm;
  std::vector<std::string> dropped;  // incomplete or excluded households
};

// Drops series that are irregular, contain negative or non-finite loads, or do
// not cover the whole study range, then divides every load by the maximum over
// the training households up to the split boundary.
PreprocessResult preprocess(std::vector<MeterSeries> series, const SplitSpec& spec,
                            const PreprocessOptions& opts = {});

struct ForecastSample {
  std::string household_id;
  Day day{};                                  // target day
  std::vector<double> history;                // 336 loads, days d-7 .. d-1
  std::array<double, kTimeFeatures> time{};   // encoded for the target day
  std::vector<double> target;                 // 48 loads of day d
};

// One sample per whole day d with seven whole days before it. History values
// are clamped to [0, 1]; targets are not.
std::vector<ForecastSample> make_windows(const MeterSeries& series, const HolidayCalendar& calendar);
std::vector<ForecastSample> make_windows(const std::vector<MeterSeries>& series, const HolidayCalendar& calendar);

struct Splits {
  std::vector<ForecastSample> train;  // train households, day <= boundary
  std::vector<ForecastSample> test1;  // train households, day > boundary
  std::vector<ForecastSample> test2;  // holdout households, day <= boundary
  std::vector<ForecastSample> test3;  // holdout households, day > boundary
};

// DataError when a sample's household is in neither set.
Splits split(const std::vector<ForecastSample>& samples, const SplitSpec& spec);

struct FitValidation {
  std::vector<ForecastSample> fit;
  std::vector<ForecastSample> validation;
};

// Validation gets the last `fraction` of the distinct days in `train`.
FitValidation split_validation(const std::vector<ForecastSample>& train, double fraction);

void write_sample_cache(const std::filesystem::path& csv_path, const std::vector<ForecastSample>& samples,
                        const NormalizationRecord& norm);

struct SynthConfig {
  int n_households = 40;
  int n_days = 300;
  std::uint64_t seed = 0;
  std::string start_day = "2009-07-14";
  double base_level = 0.12;        // median standby load, kWh per interval
  double morning_peak = 0.35;      // mean morning bump amplitude
  double evening_peak = 0.6;       // mean evening bump amplitude
  double weekend_shift = 1.5;      // hours the morning peak moves on weekends
  double holiday_surge = 0.3;      // relative increase on holidays
  double noise_scale = 0.25;       // sigma of the multiplicative lognormal noise
  double spike_probability = 0.3;  // evening appliance activity per interval
  double spike_size = 1.2;         // mean appliance load, kWh per interval
  double away_probability = 0.02;  // days with only standby load

  void validate() const;
  std::string to_json() const;
  static SynthConfig from_json(std::string_view text);
};

struct SynthResult {
  std::vector<MeterSeries> series;
  HolidayCalendar calendar;
};

SynthResult synth_generate(const SynthConfig& cfg);

}  // namespace bnf::data
