// Drives the built `bnf` executable end to end on a small synthetic dataset.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = BNF_CLI_WORK_DIR;

int run(const std::string& args) {
  const std::string cmd = std::string(BNF_CLI_PATH) + " " + args + " >" + (kWork / "last.out").string() + " 2>" +
                          (kWork / "last.err").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

// 12 households x 60 days, split 8 / 4, written once per test run.
const fs::path& dataset() {
  static const fs::path dir = [] {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    json cfg = {{"split", {{"train_households", 8}, {"holdout_households", 4}}}};
    std::ofstream(kWork / "small.json") << cfg.dump();
    REQUIRE(run("synth --seed 3 --households 12 --days 60 --out " + (kWork / "syn").string()) == 0);
    return kWork / "syn";
  }();
  return dir;
}

std::string data_args() {
  return "--config " + (kWork / "small.json").string() + " --data " + (dataset() / "load.csv").string() +
         " --holidays " + (dataset() / "holidays.txt").string();
}

// Trains once per (head, seed) with a tiny network; returns the output directory.
fs::path trained(const std::string& head, int seed, int epochs = 2) {
  const fs::path out = kWork / ("train_" + head + "_" + std::to_string(seed) + "_" + std::to_string(epochs));
  if (!fs::exists(out / "checkpoint.json")) {
    REQUIRE(run("train " + data_args() + " --head " + head + " --seed " + std::to_string(seed) + " --epochs " +
                std::to_string(epochs) + " --hidden 8 --out " + out.string()) == 0);
  }
  return out;
}

constexpr const char* kTargetDay = "2009-09-05";

}  // namespace

TEST_CASE("synth writes a reproducible dataset and manifest") {
  const auto& dir = dataset();
  std::ifstream in(dir / "load.csv");
  const auto lines = std::count(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>(), '\n');
  CHECK(lines == 1 + 12 * 60 * 48);

  const fs::path again = kWork / "syn_again";
  REQUIRE(run("synth --seed 3 --households 12 --days 60 --out " + again.string()) == 0);
  CHECK(slurp(dir / "load.csv") == slurp(again / "load.csv"));

  const auto m = json::parse(slurp(dir / "manifest.json"));
  const auto m2 = json::parse(slurp(again / "manifest.json"));
  CHECK(m["command"] == "synth");
  CHECK(m["seed"] == 3);
  CHECK(m["config"]["synth"]["seed"] == 3);
  CHECK(m["outputs"]["load.csv"] == m2["outputs"]["load.csv"]);
  CHECK(m["config_hash"] == m2["config_hash"]);

  REQUIRE(run("synth --seed 4 --households 12 --days 60 --out " + (kWork / "syn_other").string()) == 0);
  CHECK(slurp(dir / "load.csv") != slurp(kWork / "syn_other" / "load.csv"));
}

TEST_CASE("train writes checkpoint, history and manifest") {
  const auto bnf = trained("bnf", 0);
  const auto ck = json::parse(slurp(bnf / "checkpoint.json"));
  CHECK(ck["config"]["params_per_step"] == 20);
  CHECK(ck["config"]["steps"] == 48);
  CHECK(ck["config"]["hidden"] == json::array({8}));
  CHECK(ck["meta"]["normalization"]["divisor_kwh"].get<double>() > 0.0);
  CHECK(ck["meta"]["train_households"].size() == 8);
  CHECK(read_csv(bnf / "history.csv").size() == 3);  // header + 2 epochs

  const auto qr = trained("qr", 0);
  CHECK(slurp(qr / "history.csv").rfind("# loss=pinball", 0) == 0);
  CHECK(slurp(trained("gm", 0) / "history.csv").rfind("# loss=nll", 0) == 0);

  // Same seed, same history.
  const fs::path rerun = kWork / "gm_rerun";
  REQUIRE(run("train " + data_args() + " --head gm --seed 0 --epochs 2 --hidden 8 --out " + rerun.string()) == 0);
  CHECK(slurp(rerun / "history.csv") == slurp(trained("gm", 0) / "history.csv"));
}

TEST_CASE("ecdf cannot be trained") {
  CHECK(run("train " + data_args() + " --head ecdf --out " + (kWork / "ecdf").string()) == 2);
  CHECK(slurp(kWork / "last.err").find("--fit-baseline") != std::string::npos);
}

TEST_CASE("eval scores every run and the baseline once per split") {
  std::string cks;
  for (const char* head : {"gm", "bnf"}) {
    for (int seed = 0; seed < 3; ++seed) cks += " " + trained(head, seed, 1).string();
  }
  const fs::path out = kWork / "eval";
  REQUIRE(run("eval" + cks + " --fit-baseline --no-crps --out " + out.string()) == 0);
  const auto rows = read_csv(out / "scores.csv");
  REQUIRE(rows.size() == 1 + 4 * 7);
  std::map<std::string, int> per_split, ecdf;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    ++per_split[rows[i][0]];
    if (rows[i][1] == "ecdf") ++ecdf[rows[i][0]];
  }
  for (const char* s : {"train", "test1", "test2", "test3"}) {
    CHECK(per_split[s] == 7);
    CHECK(ecdf[s] == 1);
  }
  const auto agg = read_csv(out / "aggregate.csv");
  REQUIRE(agg.size() == 1 + 4 * 3);
  CHECK(agg[1][3] == "3");
}

TEST_CASE("forecast writes ordered quantiles in kWh") {
  for (const char* head : {"gm", "bnf", "qr"}) {
    CAPTURE(head);
    const fs::path out = kWork / (std::string("forecast_") + head);
    REQUIRE(run("forecast --checkpoint " + trained(head, 0).string() + " --household H0001 --date " + kTargetDay +
                " --out " + out.string()) == 0);
    const auto rows = read_csv(out / "forecast.csv");
    REQUIRE(rows.size() == 49);
    CHECK(rows[0] == std::vector<std::string>{"step", "time", "q01", "q20", "q50", "q80", "q99", "obs"});
    CHECK(rows[1][1] == "00:00");
    CHECK(rows[48][1] == "23:30");
    for (std::size_t r = 1; r < rows.size(); ++r) {
      for (std::size_t c = 3; c <= 6; ++c) CHECK(std::stod(rows[r][c - 1]) <= std::stod(rows[r][c]));
      CHECK(!rows[r][7].empty());
      if (std::string(head) == "gm") {
        // Gaussian quantiles sit symmetrically around the mean.
        const double mid = 0.5 * (std::stod(rows[r][3]) + std::stod(rows[r][5]));
        CHECK(std::stod(rows[r][4]) == doctest::Approx(mid).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("sample draws paths consistent with the forecast") {
  const auto ck = trained("bnf", 0).string();
  const std::string where = " --checkpoint " + ck + " --household H0001 --date " + kTargetDay;
  REQUIRE(run("sample" + where + " --n 15 --seed 5 --out " + (kWork / "s15").string()) == 0);
  const auto small = read_csv(kWork / "s15" / "samples.csv");
  REQUIRE(small.size() == 16);
  CHECK(small[0].size() == 49);
  CHECK(small[0][1] == "00:00");

  REQUIRE(run("sample" + where + " --n 15 --seed 5 --out " + (kWork / "s15b").string()) == 0);
  CHECK(slurp(kWork / "s15" / "samples.csv") == slurp(kWork / "s15b" / "samples.csv"));
  REQUIRE(run("sample" + where + " --n 15 --seed 6 --out " + (kWork / "s15c").string()) == 0);
  CHECK(slurp(kWork / "s15" / "samples.csv") != slurp(kWork / "s15c" / "samples.csv"));

  REQUIRE(run("sample" + where + " --n 10000 --out " + (kWork / "s10k").string()) == 0);
  REQUIRE(run("forecast" + where + " --levels 0.2,0.5,0.8 --out " + (kWork / "fmed").string()) == 0);
  const auto paths = read_csv(kWork / "s10k" / "samples.csv");
  const auto fc = read_csv(kWork / "fmed" / "forecast.csv");
  REQUIRE(paths.size() == 10001);
  REQUIRE(fc.size() == 49);
  for (std::size_t t = 0; t < 48; ++t) {
    std::vector<double> draws;
    for (std::size_t r = 1; r < paths.size(); ++r) draws.push_back(std::stod(paths[r][t + 1]));
    std::nth_element(draws.begin(), draws.begin() + 5000, draws.end());
    const double q20 = std::stod(fc[t + 1][2]), q50 = std::stod(fc[t + 1][3]), q80 = std::stod(fc[t + 1][4]);
    // The sample median's standard error is about 0.0075 of the 20-80 spread.
    CHECK(std::abs(draws[5000] - q50) <= 0.05 * (q80 - q20));
  }
}

TEST_CASE("exit codes") {
  dataset();
  CHECK(run("--no-such-flag synth") == 2);
  CHECK(run("--config " + (kWork / "missing.json").string() + " synth") == 2);
  std::ofstream(kWork / "bad.json") << R"({"train": {"learning_rate": 0.1}})";
  CHECK(run("--config " + (kWork / "bad.json").string() + " synth --out " + (kWork / "bad").string()) == 2);
  CHECK(run("train " + data_args() + " --order 0 --out " + (kWork / "bad").string()) == 2);
  // History for the first day of the series does not exist.
  CHECK(run("forecast --checkpoint " + trained("gm", 0).string() + " --household H0001 --date 2009-07-15 --out " +
            (kWork / "bad").string()) == 3);
  CHECK(slurp(kWork / "last.err").find("H0001") != std::string::npos);
  CHECK(run("forecast --checkpoint " + (kWork / "nothing").string() + " --household H0001 --date " + kTargetDay +
            " --out " + (kWork / "bad").string()) == 3);
}
