#include "bnf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "bnf/error.hpp"
#include "bnf/io.hpp"

namespace bnf::data {

using json = nlohmann::json;
using namespace std::chrono;

namespace {

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::optional<Day> parse_day(std::string_view text) {
  text = trim(text);
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_int(text.substr(0, 4), y) || !parse_int(text.substr(5, 2), m) || !parse_int(text.substr(8, 2), d)) {
    return std::nullopt;
  }
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd};
}

std::optional<Instant> parse_instant(std::string_view text) {
  text = trim(text);
  if (!text.empty() && text.back() == 'Z') text.remove_suffix(1);
  if (text.size() != 16 && text.size() != 19) return std::nullopt;
  if (text[10] != 'T' && text[10] != ' ') return std::nullopt;
  const auto d = parse_day(text.substr(0, 10));
  if (!d || text[13] != ':') return std::nullopt;
  int hh = 0, mm = 0, ss = 0;
  if (!parse_int(text.substr(11, 2), hh) || !parse_int(text.substr(14, 2), mm)) return std::nullopt;
  if (text.size() == 19 && (text[16] != ':' || !parse_int(text.substr(17, 2), ss))) return std::nullopt;
  if (hh > 23 || mm > 59 || ss != 0) return std::nullopt;
  return Instant{*d} + hours{hh} + minutes{mm};
}

std::string format_day(Day d) {
  const year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string format_instant(Instant t) {
  const auto d = floor<days>(t);
  const auto mins = (t - d).count();
  char buf[16];
  std::snprintf(buf, sizeof buf, "T%02d:%02d:00", static_cast<int>(mins / 60), static_cast<int>(mins % 60));
  return format_day(d) + buf;
}

bool MeterSeries::is_regular() const {
  if (timestamps.size() != load.size()) return false;
  for (std::size_t i = 1; i < timestamps.size(); ++i) {
    if (timestamps[i] - timestamps[i - 1] != kInterval) return false;
  }
  return true;
}

IngestResult ingest_csv_text(std::string_view text) {
  IngestResult result;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    const auto nl = text.find('\n', pos);
    line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw FormatError("empty CSV: expected header household_id,timestamp,kwh");
  const auto header = split_fields(line);
  int col_id = -1, col_ts = -1, col_kwh = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "household_id") col_id = static_cast<int>(i);
    if (header[i] == "timestamp") col_ts = static_cast<int>(i);
    if (header[i] == "kwh") col_kwh = static_cast<int>(i);
  }
  if (col_id < 0 || col_ts < 0 || col_kwh < 0) {
    std::string missing;
    if (col_id < 0) missing += " household_id";
    if (col_ts < 0) missing += " timestamp";
    if (col_kwh < 0) missing += " kwh";
    throw FormatError("CSV header lacks column(s):" + missing);
  }
  const auto width = static_cast<std::size_t>(std::max({col_id, col_ts, col_kwh}) + 1);

  std::map<std::string, std::vector<std::pair<Instant, double>>, std::less<>> groups;
  while (next_line(line)) {
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    if (f.size() < width) {
      result.rejected.push_back({line_no, "too few fields"});
      continue;
    }
    const auto t = parse_instant(f[col_ts]);
    if (!t) {
      result.rejected.push_back({line_no, "malformed timestamp '" + std::string(f[col_ts]) + "'"});
      continue;
    }
    double kwh = 0.0;
    const std::string kwh_text(f[col_kwh]);
    char* end = nullptr;
    kwh = std::strtod(kwh_text.c_str(), &end);
    if (kwh_text.empty() || end != kwh_text.c_str() + kwh_text.size()) {
      result.rejected.push_back({line_no, "malformed kwh '" + kwh_text + "'"});
      continue;
    }
    if (f[col_id].empty()) {
      result.rejected.push_back({line_no, "empty household_id"});
      continue;
    }
    auto it = groups.find(f[col_id]);
    if (it == groups.end()) it = groups.emplace(std::string(f[col_id]), std::vector<std::pair<Instant, double>>{}).first;
    it->second.emplace_back(*t, kwh);
  }

  for (auto& [id, rows] : groups) {
    std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    MeterSeries s;
    s.household_id = id;
    s.timestamps.reserve(rows.size());
    s.load.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i > 0 && rows[i].first == rows[i - 1].first) {
        throw DataError("duplicate reading for household " + id + " at " + format_instant(rows[i].first));
      }
      s.timestamps.push_back(rows[i].first);
      s.load.push_back(rows[i].second);
    }
    result.series.push_back(std::move(s));
  }
  return result;
}

IngestResult ingest_csv(const std::filesystem::path& path) { return ingest_csv_text(io::read_file(path)); }

void write_csv(const std::filesystem::path& path, const std::vector<MeterSeries>& series) {
  std::string out = "household_id,timestamp,kwh\n";
  char buf[32];
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out += s.household_id;
      out += ',';
      out += format_instant(s.timestamps[i]);
      std::snprintf(buf, sizeof buf, ",%.6f\n", s.load[i]);
      out += buf;
    }
  }
  io::write_atomic(path, out);
}

HolidayCalendar HolidayCalendar::defaults() {
  HolidayCalendar c;
  c.add_recurring(January / 1);
  c.add_recurring(March / 17);
  c.add_recurring(December / 25);
  c.add_recurring(December / 26);
  return c;
}

HolidayCalendar HolidayCalendar::from_file(const std::filesystem::path& path) {
  const std::string text = io::read_file(path);
  HolidayCalendar c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto d = parse_day(t);
    if (!d) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": not an ISO date: " + std::string(t));
    c.add_date(*d);
  }
  return c;
}

bool HolidayCalendar::contains(Day d) const {
  if (dates_.count(d) != 0) return true;
  const year_month_day ymd{d};
  return recurring_.count(ymd.month() / ymd.day()) != 0;
}

std::vector<Day> HolidayCalendar::expand(Day first, Day last) const {
  std::vector<Day> out;
  for (Day d = first; d <= last; d += days{1}) {
    if (contains(d)) out.push_back(d);
  }
  return out;
}

void HolidayCalendar::write(const std::filesystem::path& path, Day first, Day last) const {
  std::string out;
  for (Day d : expand(first, last)) out += format_day(d) + "\n";
  io::write_atomic(path, out);
}

std::array<double, kTimeFeatures> encode_time(Day day, const HolidayCalendar& calendar) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const year_month_day ymd{day};
  const auto doy = static_cast<double>((day - sys_days{ymd.year() / January / 1}).count());
  const auto wd = static_cast<double>(weekday{day}.iso_encoding() - 1);
  const double a = two_pi * doy / 365.25;
  const double b = two_pi * wd / 7.0;
  return {(std::sin(a) + 1.0) / 2.0, (std::cos(a) + 1.0) / 2.0, (std::sin(b) + 1.0) / 2.0,
          (std::cos(b) + 1.0) / 2.0, calendar.contains(day) ? 1.0 : 0.0};
}

void SplitSpec::validate() const {
  for (const auto& id : train_households) {
    if (holdout_households.count(id) != 0) throw ConfigError("household " + id + " is both train and holdout");
  }
}

SplitSpec make_split_spec(std::vector<std::string> ids, std::size_t train, std::size_t holdout, Day first_day,
                          Day last_day, double boundary_fraction) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (holdout >= ids.size()) throw ConfigError("holdout count leaves no training households");
  if (train < 1 || train > ids.size() - holdout) {
    throw ConfigError("requested " + std::to_string(train) + " training households but only " +
                      std::to_string(ids.size() - holdout) + " are available");
  }
  if (!(boundary_fraction > 0.0 && boundary_fraction < 1.0)) throw ConfigError("boundary fraction must lie in (0, 1)");
  if (last_day <= first_day) throw ConfigError("study range must span more than one day");
  SplitSpec spec;
  spec.holdout_households.insert(ids.end() - static_cast<std::ptrdiff_t>(holdout), ids.end());
  spec.train_households.insert(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(train));
  const auto n_days = (last_day - first_day).count() + 1;
  const auto before = std::max<long>(1, static_cast<long>(std::floor(boundary_fraction * static_cast<double>(n_days))));
  spec.boundary_day = first_day + days{before - 1};
  return spec;
}

PreprocessResult preprocess(std::vector<MeterSeries> series, const SplitSpec& spec, const PreprocessOptions& opts) {
  if (series.empty()) throw DataError("no series to preprocess");
  spec.validate();
  PreprocessResult out;

  std::vector<MeterSeries> kept;
  for (auto& s : series) {
    if (opts.exclude_households.count(s.household_id) != 0 || s.load.empty()) {
      out.dropped.push_back(s.household_id);
    } else {
      kept.push_back(std::move(s));
    }
  }
  if (kept.empty()) throw DataError("all series were excluded");

  Instant first = kept.front().timestamps.front();
  Instant last = kept.front().timestamps.back();
  for (const auto& s : kept) {
    first = std::min(first, s.timestamps.front());
    last = std::max(last, s.timestamps.back());
  }
  const auto expected = static_cast<std::size_t>((last - first) / kInterval) + 1;

  for (auto& s : kept) {
    bool ok = s.is_regular() && s.size() == expected && s.timestamps.front() == first;
    for (double v : s.load) ok = ok && std::isfinite(v) && v >= 0.0;
    if (ok) {
      out.series.push_back(std::move(s));
    } else {
      out.dropped.push_back(s.household_id);
    }
  }
  if (out.series.empty()) throw DataError("every series has missing or invalid intervals over the study range");

  const Instant cutoff = Instant{spec.boundary_day + days{1}};
  double divisor = 0.0;
  bool any_train = false;
  for (const auto& s : out.series) {
    if (spec.train_households.count(s.household_id) == 0) continue;
    any_train = true;
    for (std::size_t i = 0; i < s.size() && s.timestamps[i] < cutoff; ++i) divisor = std::max(divisor, s.load[i]);
  }
  if (!any_train) throw DataError("no training household survived preprocessing");
  if (!(divisor > 0.0)) throw DataError("training-period loads are all zero; cannot normalize");
  out.norm.divisor = divisor;
  out.norm.boundary_day = spec.boundary_day;
  for (auto& s : out.series) {
    for (double& v : s.load) v = out.norm.normalize(v);
  }
  return out;
}

std::vector<ForecastSample> make_windows(const MeterSeries& series, const HolidayCalendar& calendar) {
  std::vector<ForecastSample> out;
  if (!series.is_regular()) throw DataError("series " + series.household_id + " is not regular");
  std::size_t start = 0;
  while (start < series.size() && series.timestamps[start] != floor<days>(series.timestamps[start])) ++start;
  const std::size_t whole_days = (series.size() - start) / kStepsPerDay;
  if (whole_days < static_cast<std::size_t>(kHistoryDays + 1)) return out;
  const Day first_day = floor<days>(series.timestamps[start]);
  for (std::size_t d = kHistoryDays; d < whole_days; ++d) {
    ForecastSample s;
    s.household_id = series.household_id;
    s.day = first_day + days{static_cast<long>(d)};
    const std::size_t target_at = start + d * kStepsPerDay;
    s.history.resize(kHistoryLength);
    for (int i = 0; i < kHistoryLength; ++i) {
      s.history[i] = std::clamp(series.load[target_at - kHistoryLength + i], 0.0, 1.0);
    }
    s.target.assign(series.load.begin() + static_cast<std::ptrdiff_t>(target_at),
                    series.load.begin() + static_cast<std::ptrdiff_t>(target_at + kStepsPerDay));
    s.time = encode_time(s.day, calendar);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ForecastSample> make_windows(const std::vector<MeterSeries>& series, const HolidayCalendar& calendar) {
  std::vector<ForecastSample> out;
  for (const auto& s : series) {
    auto w = make_windows(s, calendar);
    if (w.empty()) std::fprintf(stderr, "skipping %s: fewer than 8 whole days\n", s.household_id.c_str());
    std::move(w.begin(), w.end(), std::back_inserter(out));
  }
  return out;
}

Splits split(const std::vector<ForecastSample>& samples, const SplitSpec& spec) {
  spec.validate();
  Splits out;
  for (const auto& s : samples) {
    const bool before = s.day <= spec.boundary_day;
    if (spec.train_households.count(s.household_id) != 0) {
      (before ? out.train : out.test1).push_back(s);
    } else if (spec.holdout_households.count(s.household_id) != 0) {
      (before ? out.test2 : out.test3).push_back(s);
    } else {
      throw DataError("household " + s.household_id + " is in neither the train nor the holdout set");
    }
  }
  return out;
}

FitValidation split_validation(const std::vector<ForecastSample>& train, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must lie in (0, 1)");
  std::vector<Day> days_seen;
  for (const auto& s : train) days_seen.push_back(s.day);
  std::sort(days_seen.begin(), days_seen.end());
  days_seen.erase(std::unique(days_seen.begin(), days_seen.end()), days_seen.end());
  if (days_seen.size() < 2) throw DataError("training period needs at least two days for a validation split");
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(fraction * days_seen.size())));
  const Day first_val = days_seen[days_seen.size() - n_val];
  FitValidation out;
  for (const auto& s : train) (s.day >= first_val ? out.validation : out.fit).push_back(s);
  return out;
}

void write_sample_cache(const std::filesystem::path& csv_path, const std::vector<ForecastSample>& samples,
                        const NormalizationRecord& norm) {
  std::string out = "household_id,day";
  char buf[32];
  for (int i = 0; i < kHistoryLength; ++i) {
    std::snprintf(buf, sizeof buf, ",h%03d", i);
    out += buf;
  }
  out += ",doy_sin,doy_cos,weekday_sin,weekday_cos,holiday";
  for (int i = 0; i < kStepsPerDay; ++i) {
    std::snprintf(buf, sizeof buf, ",y%02d", i);
    out += buf;
  }
  out += '\n';
  auto put = [&](double v) {
    std::snprintf(buf, sizeof buf, ",%.17g", v);
    out += buf;
  };
  for (const auto& s : samples) {
    out += s.household_id + "," + format_day(s.day);
    for (double v : s.history) put(v);
    for (double v : s.time) put(v);
    for (double v : s.target) put(v);
    out += '\n';
  }
  io::write_atomic(csv_path, out);

  json side;
  side["rows"] = samples.size();
  side["normalization"] = {{"divisor_kwh", norm.divisor}, {"boundary_day", format_day(norm.boundary_day)}};
  side["layout"] = {{"history", kHistoryLength},
                    {"time", {"doy_sin", "doy_cos", "weekday_sin", "weekday_cos", "holiday"}},
                    {"target", kStepsPerDay}};
  side["history_order"] = "days d-7 .. d-1, 00:00 first";
  io::write_atomic(std::filesystem::path(csv_path).concat(".json"), side.dump(2) + "\n");
}

void SynthConfig::validate() const {
  if (n_households < 1) throw ConfigError("n_households must be >= 1");
  if (n_days < 1) throw ConfigError("n_days must be >= 1");
  for (double p : {spike_probability, away_probability}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("probabilities must lie in [0, 1]");
  }
  for (double v : {base_level, morning_peak, evening_peak, holiday_surge, noise_scale, spike_size}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("synth amplitudes and scales must be finite and >= 0");
  }
  if (!parse_day(start_day)) throw ConfigError("start_day is not an ISO date: " + start_day);
}

std::string SynthConfig::to_json() const {
  json j = {{"n_households", n_households},   {"n_days", n_days},
            {"seed", seed},                   {"start_day", start_day},
            {"base_level", base_level},       {"morning_peak", morning_peak},
            {"evening_peak", evening_peak},   {"weekend_shift", weekend_shift},
            {"holiday_surge", holiday_surge}, {"noise_scale", noise_scale},
            {"spike_probability", spike_probability}, {"spike_size", spike_size},
            {"away_probability", away_probability}};
  return j.dump(2);
}

SynthConfig SynthConfig::from_json(std::string_view text) {
  SynthConfig c;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  const std::set<std::string> known = {"n_households", "n_days",        "seed",         "start_day",
                                       "base_level",   "morning_peak",  "evening_peak", "weekend_shift",
                                       "holiday_surge", "noise_scale",  "spike_probability", "spike_size",
                                       "away_probability"};
  for (const auto& [k, v] : j.items()) {
    if (known.count(k) == 0) throw ConfigError("unknown synth key '" + k + "'");
  }
  try {
    c.n_households = j.value("n_households", c.n_households);
    c.n_days = j.value("n_days", c.n_days);
    c.seed = j.value("seed", c.seed);
    c.start_day = j.value("start_day", c.start_day);
    c.base_level = j.value("base_level", c.base_level);
    c.morning_peak = j.value("morning_peak", c.morning_peak);
    c.evening_peak = j.value("evening_peak", c.evening_peak);
    c.weekend_shift = j.value("weekend_shift", c.weekend_shift);
    c.holiday_surge = j.value("holiday_surge", c.holiday_surge);
    c.noise_scale = j.value("noise_scale", c.noise_scale);
    c.spike_probability = j.value("spike_probability", c.spike_probability);
    c.spike_size = j.value("spike_size", c.spike_size);
    c.away_probability = j.value("away_probability", c.away_probability);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

struct Household {
  double base;
  double morning;
  double evening;
  double morning_hour;
  double evening_hour;
  double spike_probability;
  double spike_size;
};

double bump(double hour, double centre, double width) {
  const double u = (hour - centre) / width;
  return std::exp(-0.5 * u * u);
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthResult out;
  out.calendar = HolidayCalendar::defaults();
  const Day first = *parse_day(cfg.start_day);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  char id[32];
  for (int h = 0; h < cfg.n_households; ++h) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(h)};
    std::mt19937_64 rng(seq);
    Household hh;
    hh.base = cfg.base_level * std::exp(0.4 * normal(rng));
    hh.morning = cfg.morning_peak * (0.5 + unif(rng));
    hh.evening = cfg.evening_peak * (0.5 + unif(rng));
    hh.morning_hour = 7.5 + 0.5 * normal(rng);
    hh.evening_hour = 19.0 + 0.6 * normal(rng);
    hh.spike_probability = std::min(1.0, cfg.spike_probability * (0.7 + 0.6 * unif(rng)));
    hh.spike_size = cfg.spike_size * (0.6 + 0.8 * unif(rng));

    std::snprintf(id, sizeof id, "H%04d", h + 1);
    MeterSeries s;
    s.household_id = id;
    s.timestamps.reserve(static_cast<std::size_t>(cfg.n_days) * kStepsPerDay);
    s.load.reserve(s.timestamps.capacity());
    double log_level = 0.0;
    const double noise_mean = -0.5 * cfg.noise_scale * cfg.noise_scale;
    for (int d = 0; d < cfg.n_days; ++d) {
      const Day day = first + days{d};
      const bool holiday = out.calendar.contains(day);
      const bool weekend = weekday{day}.iso_encoding() >= 6 || holiday;
      const year_month_day ymd{day};
      const double doy = static_cast<double>((day - sys_days{ymd.year() / January / 1}).count());
      const double season = 1.0 + 0.3 * std::cos(2.0 * std::numbers::pi * (doy - 15.0) / 365.25);
      log_level = 0.8 * log_level + 0.12 * normal(rng);
      const double level = season * std::exp(log_level) * (holiday ? 1.0 + cfg.holiday_surge : 1.0);
      const bool away = unif(rng) < cfg.away_probability;
      for (int t = 0; t < kStepsPerDay; ++t) {
        const double hour = 0.5 * t + 0.25;
        const double noise = std::exp(cfg.noise_scale * normal(rng) + noise_mean);
        const double spike_draw = unif(rng);
        const double spike_noise = std::exp(0.15 * normal(rng));
        double v = 0.0;
        if (away) {
          v = hh.base * noise;
        } else {
          const double morning_at = hh.morning_hour + (weekend ? cfg.weekend_shift : 0.0);
          double profile = hh.morning * bump(hour, morning_at, 0.9) + hh.evening * bump(hour, hh.evening_hour, 1.5);
          if (weekend) profile += 0.5 * hh.morning * bump(hour, 13.0, 2.5);
          v = (hh.base + profile) * level * noise;
          const double p = hh.spike_probability * bump(hour, hh.evening_hour + 0.5, 2.0);
          if (spike_draw < p) v += hh.spike_size * spike_noise;
        }
        s.timestamps.push_back(Instant{day} + kInterval * t);
        s.load.push_back(v);
      }
    }
    out.series.push_back(std::move(s));
  }
  return out;
}

}  // namespace bnf::data
