#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bnf/data.hpp"
#include "bnf/error.hpp"
#include "bnf/experiment.hpp"
#include "bnf/io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace bnf;

namespace {

bool g_verbose = false;

json default_config() {
  const TrainConfig t;
  const PrepareOptions p;
  return {
      {"data", ""},
      {"holidays", ""},
      {"synth", json::parse(data::SynthConfig{}.to_json())},
      {"head", "bnf"},
      {"order", 16},
      {"seed", 0},
      {"network", {{"hidden", {512, 256, 128}}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"max_epochs", t.max_epochs},
        {"lr", t.lr},
        {"plateau_patience", t.plateau_patience},
        {"plateau_factor", t.plateau_factor},
        {"early_stop_patience", t.early_stop_patience},
        {"min_rel_improvement", t.min_rel_improvement}}},
      {"split",
       {{"train_households", p.train_households},
        {"holdout_households", p.holdout_households},
        {"boundary_fraction", p.boundary_fraction},
        {"validation_fraction", p.validation_fraction},
        {"exclude_households", json::array()}}},
      {"eval", {{"checkpoints", json::array()}, {"splits", {"train", "test1", "test2", "test3"}}, {"fit_baseline", false}, {"crps", true}}},
      {"forecast", {{"checkpoint", ""}, {"household", ""}, {"date", ""}, {"levels", {0.01, 0.2, 0.5, 0.8, 0.99}}}},
      {"sample", {{"n", 15}}},
  };
}

// Overlays `patch` on `base`; keys unknown to `base` are configuration errors.
void merge(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown configuration key '" + path + "'");
    if (base[key].is_object()) {
      merge(base[key], value, path);
    } else {
      base[key] = value;
    }
  }
}

json load_config(const std::string& path) {
  json cfg = default_config();
  if (path.empty()) return cfg;
  if (!fs::is_regular_file(path)) throw ConfigError("config file " + path + " does not exist");
  json file;
  try {
    file = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
  // A manifest from an earlier run carries the config it used.
  if (file.contains("config") && file.contains("config_hash")) file = file["config"];
  file.erase("out");
  file.erase("command");
  merge(cfg, file, "");
  return cfg;
}

template <class T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("configuration key '") + key + "': " + e.what());
  }
}

fs::path default_out() {
  const char* env = std::getenv("BNF_OUT_DIR");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("bnf_out");
}

void log(const std::string& msg) {
  if (g_verbose) std::cerr << msg << '\n';
}

std::string utc_now() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// manifest.json: the effective config, its fingerprint and the output files.
void write_manifest(const fs::path& out, const std::string& command, const json& cfg,
                    const std::vector<std::string>& files, json extra = json::object()) {
  json m = std::move(extra);
  m["command"] = command;
  m["config"] = cfg;
  m["config_hash"] = io::fnv1a_hex(cfg.dump());
  m["seed"] = cfg["seed"];
  json outputs = json::object();
  for (const auto& f : files) outputs[f] = io::fnv1a_hex(io::read_file(out / f));
  m["outputs"] = outputs;
  m["created_utc"] = utc_now();
  io::write_atomic(out / "manifest.json", m.dump(2) + "\n");
}

data::SynthConfig synth_config(const json& cfg) {
  auto sc = data::SynthConfig::from_json(cfg["synth"].dump());
  sc.validate();
  return sc;
}

struct Inputs {
  std::vector<data::MeterSeries> series;
  data::HolidayCalendar calendar;
};

// Series from the CSV named in the config, or generated from its synth section.
Inputs load_inputs(const json& cfg) {
  Inputs in;
  const auto path = get<std::string>(cfg, "data");
  if (path.empty()) {
    auto gen = data::synth_generate(synth_config(cfg));
    in.series = std::move(gen.series);
    in.calendar = std::move(gen.calendar);
    log("generated " + std::to_string(in.series.size()) + " synthetic households");
  } else {
    auto res = data::ingest_csv(path);
    for (const auto& r : res.rejected) {
      std::cerr << "warning: " << path << ":" << r.line << ": " << r.reason << '\n';
    }
    in.series = std::move(res.series);
    in.calendar = data::HolidayCalendar::defaults();
  }
  const auto holidays = get<std::string>(cfg, "holidays");
  if (!holidays.empty()) in.calendar = data::HolidayCalendar::from_file(holidays);
  return in;
}

PrepareOptions prepare_options(const json& cfg) {
  const json& s = cfg["split"];
  PrepareOptions p;
  p.train_households = get<std::size_t>(s, "train_households");
  p.holdout_households = get<std::size_t>(s, "holdout_households");
  p.boundary_fraction = get<double>(s, "boundary_fraction");
  p.validation_fraction = get<double>(s, "validation_fraction");
  for (const auto& id : s["exclude_households"]) p.preprocess.exclude_households.insert(id.get<std::string>());
  return p;
}

PreparedData prepare_data(const json& cfg) {
  auto in = load_inputs(cfg);
  auto prepared = prepare(std::move(in.series), in.calendar, prepare_options(cfg));
  for (const auto& id : prepared.dropped) log("dropped household " + id);
  log("samples: fit " + std::to_string(prepared.fit.fit.size()) + ", validation " +
      std::to_string(prepared.fit.validation.size()) + ", test1 " + std::to_string(prepared.splits.test1.size()) +
      ", test2 " + std::to_string(prepared.splits.test2.size()) + ", test3 " +
      std::to_string(prepared.splits.test3.size()));
  return prepared;
}

TrainConfig train_config(const json& cfg) {
  const json& t = cfg["train"];
  TrainConfig tc;
  tc.batch_size = get<int>(t, "batch_size");
  tc.max_epochs = get<int>(t, "max_epochs");
  tc.lr = get<double>(t, "lr");
  tc.plateau_patience = get<int>(t, "plateau_patience");
  tc.plateau_factor = get<double>(t, "plateau_factor");
  tc.early_stop_patience = get<int>(t, "early_stop_patience");
  tc.min_rel_improvement = get<double>(t, "min_rel_improvement");
  tc.seed = get<std::uint64_t>(cfg, "seed");
  tc.validation_fraction = get<double>(cfg["split"], "validation_fraction");
  tc.validate();
  return tc;
}

// The settings that determine the prepared data; checkpoints scored together must agree on them.
json data_settings(const json& cfg) {
  return {{"data", cfg["data"]}, {"holidays", cfg["holidays"]}, {"synth", cfg["synth"]}, {"split", cfg["split"]}};
}

json set_to_json(const std::set<std::string>& s) { return json(std::vector<std::string>(s.begin(), s.end())); }

// ---- commands ----

void cmd_synth(const json& cfg, const fs::path& out) {
  const auto sc = synth_config(cfg);
  const auto gen = data::synth_generate(sc);
  data::write_csv(out / "load.csv", gen.series);
  const auto first = *data::parse_day(sc.start_day);
  gen.calendar.write(out / "holidays.txt", first, first + std::chrono::days{sc.n_days - 1});
  write_manifest(out, "synth", cfg, {"load.csv", "holidays.txt"});
  std::cout << "wrote " << gen.series.size() << " households x " << sc.n_days << " days to " << (out / "load.csv").string()
            << '\n';
}

void cmd_train(const json& cfg, const fs::path& out) {
  const HeadKind kind = parse_head(get<std::string>(cfg, "head"));
  if (!is_trainable(kind)) {
    throw ConfigError("the ECDF baseline is fitted from training observations, not trained; use `eval --fit-baseline`");
  }
  const int m = get<int>(cfg, "order");
  if (m < 1) throw ConfigError("order must be >= 1, got " + std::to_string(m));
  const BernsteinOrder order(m);
  const auto tc = train_config(cfg);
  const auto hidden = get<std::vector<int>>(cfg["network"], "hidden");
  const auto prepared = prepare_data(cfg);

  const auto t0 = std::chrono::steady_clock::now();
  auto trained = train_model(kind, order, prepared, tc, hidden, [](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %3d  train %.5f  val %.5f  lr %.0e", e.epoch, e.train_loss, e.val_loss, e.lr);
    log(buf);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& h = trained.history;

  const json run = {{"loss", h.loss_name},
                    {"epochs", h.epochs.size()},
                    {"best_epoch", h.best_epoch},
                    {"best_val_loss", h.best_val_loss()},
                    {"stopped_early", h.stopped_early}};
  const json meta = {{"config", cfg},
                     {"seed", tc.seed},
                     {"normalization",
                      {{"divisor_kwh", prepared.norm.divisor}, {"boundary_day", data::format_day(prepared.norm.boundary_day)}}},
                     {"train_households", set_to_json(prepared.spec.train_households)},
                     {"holdout_households", set_to_json(prepared.spec.holdout_households)},
                     {"run", run}};
  save_model(out / "checkpoint.json", trained.model, meta.dump());
  io::write_atomic(out / "history.csv", h.to_csv());
  write_manifest(out, "train", cfg, {"checkpoint.json", "history.csv"},
                 {{"run", run}, {"train_seconds", secs}, {"dropped_households", prepared.dropped}});
  std::cout << head_name(kind) << " seed " << tc.seed << ": " << h.epochs.size() << " epochs, best validation "
            << h.loss_name << " " << h.best_val_loss() << " at epoch " << h.best_epoch << '\n';
}

const std::vector<data::ForecastSample>& split_samples(const PreparedData& p, const std::string& name) {
  if (name == "train") return p.splits.train;
  if (name == "test1") return p.splits.test1;
  if (name == "test2") return p.splits.test2;
  if (name == "test3") return p.splits.test3;
  throw ConfigError("unknown split '" + name + "' (expected train, test1, test2 or test3)");
}

void cmd_eval(json cfg, const fs::path& out) {
  const auto paths = get<std::vector<std::string>>(cfg["eval"], "checkpoints");
  const bool baseline = get<bool>(cfg["eval"], "fit_baseline");
  if (paths.empty() && !baseline) throw ConfigError("eval needs checkpoints or --fit-baseline");

  struct Loaded {
    Model model;
    json meta;
  };
  std::vector<Loaded> models;
  for (const auto& p : paths) {
    const fs::path file = fs::is_directory(p) ? fs::path(p) / "checkpoint.json" : fs::path(p);
    std::string meta;
    Model m = load_model(file, &meta);
    models.push_back({std::move(m), json::parse(meta)});
  }
  // Data and split come from the checkpoints unless a data file is given.
  if (!models.empty() && get<std::string>(cfg, "data").empty()) {
    const json ref = data_settings(models.front().meta["config"]);
    for (const auto& [key, value] : ref.items()) cfg[key] = value;
  }
  const auto prepared = prepare_data(cfg);
  for (std::size_t i = 0; i < models.size(); ++i) {
    const double recorded = models[i].meta["normalization"]["divisor_kwh"].get<double>();
    if (recorded != prepared.norm.divisor) {
      throw ConfigError("checkpoint " + paths[i] + " was trained with divisor " + std::to_string(recorded) +
                        " kWh but this data gives " + std::to_string(prepared.norm.divisor));
    }
  }

  ScoreOptions opts;
  opts.crps = get<bool>(cfg["eval"], "crps");
  const auto splits = get<std::vector<std::string>>(cfg["eval"], "splits");
  std::optional<EcdfBaseline> ecdf;
  if (baseline) ecdf = fit_ecdf(prepared.splits.train);

  std::vector<ScoreReport> reports;
  for (const auto& name : splits) {
    const auto& samples = split_samples(prepared, name);
    if (samples.empty()) {
      std::cerr << "warning: split " << name << " is empty\n";
      continue;
    }
    for (const auto& m : models) {
      auto r = evaluate_model(m.model, samples, opts);
      r.split = name;
      r.head = std::string(head_name(m.model.kind));
      r.seed = m.meta["seed"].get<std::uint64_t>();
      log(name + " " + r.head + " seed " + std::to_string(*r.seed) + " nmqs " + std::to_string(r.nmqs_pct));
      reports.push_back(std::move(r));
    }
    if (ecdf) {
      auto r = evaluate_ecdf(*ecdf, samples, opts);
      r.split = name;
      r.head = "ecdf";
      reports.push_back(std::move(r));
    }
  }

  std::string csv = ScoreReport::csv_header() + "\n";
  json all = json::array();
  for (const auto& r : reports) {
    csv += r.csv_row() + "\n";
    all.push_back(json::parse(r.to_json()));
  }
  io::write_atomic(out / "scores.csv", csv);
  const auto agg = aggregate(reports);
  io::write_atomic(out / "aggregate.csv", aggregate_csv(agg));
  io::write_atomic(out / "scores.json", all.dump(2) + "\n");
  write_manifest(out, "eval", cfg, {"scores.csv", "aggregate.csv", "scores.json"});
  std::cout << aggregate_csv(agg);
}

struct ForecastContext {
  Model model;
  json meta;
  data::NormalizationRecord norm;
  ForecastInput input;
  data::Day day{};
};

ForecastContext forecast_context(json& cfg) {
  const json& f = cfg["forecast"];
  const auto ck = get<std::string>(f, "checkpoint");
  if (ck.empty()) throw ConfigError("--checkpoint is required");
  const auto household = get<std::string>(f, "household");
  if (household.empty()) throw ConfigError("--household is required");
  const auto day = data::parse_day(get<std::string>(f, "date"));
  if (!day) throw ConfigError("--date must be an ISO date (YYYY-MM-DD)");

  ForecastContext ctx;
  std::string meta;
  ctx.model = load_model(fs::is_directory(ck) ? fs::path(ck) / "checkpoint.json" : fs::path(ck), &meta);
  ctx.meta = json::parse(meta);
  if (get<std::string>(cfg, "data").empty()) {
    const json ref = data_settings(ctx.meta["config"]);
    for (const auto& [key, value] : ref.items()) cfg[key] = value;
  }
  ctx.norm.divisor = ctx.meta["normalization"]["divisor_kwh"].get<double>();
  ctx.norm.boundary_day = *data::parse_day(ctx.meta["normalization"]["boundary_day"].get<std::string>());
  auto in = load_inputs(cfg);
  const auto it = std::find_if(in.series.begin(), in.series.end(),
                               [&](const data::MeterSeries& s) { return s.household_id == household; });
  if (it == in.series.end()) throw DataError("household " + household + " is not in the data");
  ctx.day = *day;
  ctx.input = forecast_input(*it, *day, ctx.norm, in.calendar);
  return ctx;
}

std::string level_name(double p) {
  char buf[32];
  const double pct = p * 100.0;
  if (std::abs(pct - std::round(pct)) < 1e-9) {
    std::snprintf(buf, sizeof buf, "q%02d", static_cast<int>(std::lround(pct)));
  } else {
    std::snprintf(buf, sizeof buf, "q%g", pct);
  }
  return buf;
}

std::string step_time(int step) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%02d:%02d", step / 2, (step % 2) * 30);
  return buf;
}

void cmd_forecast(json cfg, const fs::path& out) {
  auto levels = get<std::vector<double>>(cfg["forecast"], "levels");
  for (double p : levels) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("quantile levels must lie in (0, 1)");
  }
  std::sort(levels.begin(), levels.end());
  const auto ctx = forecast_context(cfg);
  const auto heads = predict_heads(ctx.model, ctx.input.x);

  std::string csv = "step,time";
  for (double p : levels) csv += "," + level_name(p);
  csv += ",obs\n";
  char buf[64];
  for (int t = 0; t < data::kStepsPerDay; ++t) {
    csv += std::to_string(t) + "," + step_time(t);
    for (double p : levels) {
      std::snprintf(buf, sizeof buf, ",%.6f", ctx.norm.denormalize(heads[0][static_cast<std::size_t>(t)]->quantile(p)));
      csv += buf;
    }
    if (ctx.input.observed) {
      std::snprintf(buf, sizeof buf, ",%.6f", (*ctx.input.observed)[static_cast<std::size_t>(t)]);
      csv += buf;
    } else {
      csv += ",";
    }
    csv += "\n";
  }
  io::write_atomic(out / "forecast.csv", csv);
  write_manifest(out, "forecast", cfg, {"forecast.csv"});
  std::cout << "wrote " << (out / "forecast.csv").string() << " (kWh per 30 min)\n";
}

void cmd_sample(json cfg, const fs::path& out) {
  const int n = get<int>(cfg["sample"], "n");
  if (n < 1) throw ConfigError("--n must be >= 1");
  const auto ctx = forecast_context(cfg);
  if (ctx.model.kind == HeadKind::qr) {
    std::cerr << "warning: QR sampling interpolates the 99 predicted quantiles; the draws only approximate the "
                 "forecast distribution\n";
  }
  const auto heads = predict_heads(ctx.model, ctx.input.x);
  // Steps are drawn independently, in step order, from one seeded generator.
  Rng rng(get<std::uint64_t>(cfg, "seed"));
  std::vector<std::vector<double>> draws;
  for (const auto& h : heads[0]) draws.push_back(h->sample(static_cast<std::size_t>(n), rng));

  std::string csv = "path";
  for (int t = 0; t < data::kStepsPerDay; ++t) csv += "," + step_time(t);
  csv += "\n";
  char buf[32];
  for (int i = 0; i < n; ++i) {
    csv += std::to_string(i);
    for (int t = 0; t < data::kStepsPerDay; ++t) {
      std::snprintf(buf, sizeof buf, ",%.6f", ctx.norm.denormalize(draws[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)]));
      csv += buf;
    }
    csv += "\n";
  }
  io::write_atomic(out / "samples.csv", csv);
  write_manifest(out, "sample", cfg, {"samples.csv"});
  std::cout << "wrote " << n << " sample paths to " << (out / "samples.csv").string() << '\n';
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not a number");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic day-ahead load forecasting with Bernstein normalizing flows"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, head, hidden, levels, splits, data_path, holidays, checkpoint, household, date;
  std::uint64_t seed = 0;
  int order = 0, households = 0, n_days = 0, epochs = 0, batch = 0, n = 0;
  double lr = 0.0;
  bool fit_baseline = false, no_crps = false;
  std::vector<std::string> checkpoints;

  app.add_option("--config", config_path, "JSON config file (or a manifest from an earlier run)");
  app.add_option("--out", out_dir, "Output directory (default $BNF_OUT_DIR or ./bnf_out)");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--head", head, "bnf, gm, gmm, qr or ecdf");
  app.add_option("--order", order, "Bernstein polynomial order");
  app.add_option("--households", households, "Households to generate (synth) or train on (train, eval)");
  app.add_flag("--verbose,-v", g_verbose, "Progress on stderr");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic smart-meter dataset");
  synth->add_option("--days", n_days, "Days per household");

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", data_path, "Load CSV (household_id,timestamp,kwh); synthetic data when omitted");
    sub->add_option("--holidays", holidays, "Holiday file, one ISO date per line");
  };
  auto* train = app.add_subcommand("train", "Train a network with one density head");
  add_data(train);
  train->add_option("--epochs", epochs, "Maximum epochs");
  train->add_option("--batch-size", batch, "Minibatch size");
  train->add_option("--lr", lr, "Initial learning rate");
  train->add_option("--hidden", hidden, "Hidden layer widths, e.g. 512,256,128");

  auto* eval = app.add_subcommand("eval", "Score checkpoints and the ECDF baseline on every split");
  add_data(eval);
  eval->add_option("checkpoints", checkpoints, "Checkpoint files or training output directories");
  eval->add_flag("--fit-baseline", fit_baseline, "Also fit and score the ECDF baseline");
  eval->add_option("--splits", splits, "Comma-separated subset of train,test1,test2,test3");
  eval->add_flag("--no-crps", no_crps, "Skip the quadrature CRPS");

  auto* forecast = app.add_subcommand("forecast", "Quantile fan chart for one household and day");
  auto* sample = app.add_subcommand("sample", "Draw load profiles from the predicted distributions");
  for (auto* sub : {forecast, sample}) {
    add_data(sub);
    sub->add_option("--checkpoint", checkpoint, "Checkpoint file or training output directory")->required();
    sub->add_option("--household", household, "Household id")->required();
    sub->add_option("--date", date, "Target day, YYYY-MM-DD")->required();
  }
  forecast->add_option("--levels", levels, "Comma-separated quantile levels");
  sample->add_option("--n", n, "Number of sample paths");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::config);
  }

  try {
    json cfg = load_config(config_path);
    auto* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();
    if (app.count("--seed")) cfg["seed"] = seed;
    if (app.count("--head")) cfg["head"] = head;
    if (app.count("--order")) cfg["order"] = order;
    if (app.count("--households")) {
      if (command == "synth") {
        cfg["synth"]["n_households"] = households;
      } else {
        cfg["split"]["train_households"] = households;
      }
    }
    if (command == "synth") {
      if (sub->count("--days")) cfg["synth"]["n_days"] = n_days;
      cfg["synth"]["seed"] = cfg["seed"];
    }
    if (sub->get_option_no_throw("--data") != nullptr) {
      if (sub->count("--data")) cfg["data"] = data_path;
      if (sub->count("--holidays")) cfg["holidays"] = holidays;
    }
    if (command == "train") {
      if (sub->count("--epochs")) cfg["train"]["max_epochs"] = epochs;
      if (sub->count("--batch-size")) cfg["train"]["batch_size"] = batch;
      if (sub->count("--lr")) cfg["train"]["lr"] = lr;
      if (sub->count("--hidden")) {
        std::vector<int> widths;
        for (double w : parse_list(hidden)) widths.push_back(static_cast<int>(w));
        cfg["network"]["hidden"] = widths;
      }
    }
    if (command == "eval") {
      if (!checkpoints.empty()) cfg["eval"]["checkpoints"] = checkpoints;
      if (fit_baseline) cfg["eval"]["fit_baseline"] = true;
      if (no_crps) cfg["eval"]["crps"] = false;
      if (sub->count("--splits")) {
        std::vector<std::string> names;
        std::stringstream ss(splits);
        for (std::string s; std::getline(ss, s, ',');) names.push_back(s);
        cfg["eval"]["splits"] = names;
      }
    }
    if (command == "forecast" || command == "sample") {
      cfg["forecast"]["checkpoint"] = checkpoint;
      cfg["forecast"]["household"] = household;
      cfg["forecast"]["date"] = date;
      if (command == "forecast" && sub->count("--levels")) cfg["forecast"]["levels"] = parse_list(levels);
      if (command == "sample" && sub->count("--n")) cfg["sample"]["n"] = n;
    }

    const fs::path out = out_dir.empty() ? default_out() : fs::path(out_dir);
    if (command == "synth") cmd_synth(cfg, out);
    if (command == "train") cmd_train(cfg, out);
    if (command == "eval") cmd_eval(cfg, out);
    if (command == "forecast") cmd_forecast(cfg, out);
    if (command == "sample") cmd_sample(cfg, out);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const json::exception& e) {
    std::cerr << "error: configuration: " << e.what() << '\n';
    return static_cast<int>(ExitCode::config);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::numerical);
  }
}
