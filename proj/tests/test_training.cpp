#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "bnf/error.hpp"
#include "bnf/heads.hpp"
#include "bnf/metrics.hpp"
#include "bnf/training.hpp"

using namespace bnf;

namespace {

ParamStore tiny_store() {
  FcNetworkConfig cfg;
  cfg.input_dim = 1;
  cfg.hidden = {1};
  cfg.steps = 1;
  cfg.params_per_step = 2;
  std::mt19937_64 rng(1);
  return init_params(cfg, rng);
}

// Targets iid N(mean, sd^2) with uninformative (zero) features, so the best
// network is the constant MLE of the sample.
Dataset noise_dataset(std::size_t n, int steps, double mean, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(mean, sd);
  Dataset d{ad::Matrix::Zero(n, 4), ad::Matrix(n, steps)};
  for (std::size_t i = 0; i < n; ++i) {
    for (int t = 0; t < steps; ++t) d.y(i, t) = g(rng);
  }
  return d;
}

// Bimodal targets: the level follows the second feature, the mode mix the first.
Dataset bimodal_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d{ad::Matrix(n, 4), ad::Matrix(n, 2)};
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) d.x(i, j) = u(rng);
    for (int t = 0; t < 2; ++t) {
      const bool spike = u(rng) < 0.3 + 0.4 * d.x(i, 0);
      d.y(i, t) = d.x(i, 1) + (spike ? 0.5 + 0.05 * g(rng) : 0.05 * std::abs(g(rng)));
    }
  }
  return d;
}

Model small_model(HeadKind kind, std::uint64_t seed, std::vector<int> hidden = {16}, int steps = 2) {
  Model m;
  m.kind = kind;
  m.order = BernsteinOrder(8);
  m.cfg.input_dim = 4;
  m.cfg.hidden = std::move(hidden);
  m.cfg.steps = steps;
  m.cfg.params_per_step = params_per_step(kind, m.order);
  std::mt19937_64 rng(seed);
  m.store = init_params(m.cfg, rng);
  return m;
}

}  // namespace

TEST_CASE("Adam first step has magnitude lr") {
  auto store = tiny_store();
  const auto before = store.values();
  std::fill(store.grads().begin(), store.grads().end(), 1.0);
  store.grads()[1] = 0.0;
  store.grads()[2] = -1.0;
  AdamState adam(store.size());
  adam_step(store, adam, 1e-3);
  CHECK(store.values()[0] - before[0] == doctest::Approx(-1e-3).epsilon(1e-4));
  CHECK(store.values()[1] == before[1]);
  CHECK(store.values()[2] - before[2] == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(store.values()[0] - before[0] == doctest::Approx(-(store.values()[2] - before[2])).epsilon(1e-12));
}

TEST_CASE("Adam refuses non-finite gradients without touching parameters") {
  auto store = tiny_store();
  const auto before = store.values();
  std::fill(store.grads().begin(), store.grads().end(), 0.5);
  store.grads().back() = std::numeric_limits<double>::quiet_NaN();
  AdamState adam(store.size());
  CHECK_THROWS_AS(adam_step(store, adam, 1e-3), TrainingError);
  CHECK(store.values() == before);
  AdamState wrong(store.size() + 1);
  CHECK_THROWS_AS(adam_step(store, wrong, 1e-3), DimensionError);
}

TEST_CASE("nll_loss examples") {
  HeadGrid one(1);
  one[0].push_back(std::make_unique<GaussianHead>(0.0, 1.0));
  const std::vector<std::vector<double>> y1{{0.0}};
  CHECK(nll_loss(one, y1) == doctest::Approx(0.9189).epsilon(1e-4));
  CHECK(nll_loss(one, y1) == doctest::Approx(0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-14));

  HeadGrid two(2);
  for (auto& row : two) row.push_back(std::make_unique<GaussianHead>(0.0, 1.0));
  const std::vector<std::vector<double>> y2{{0.0}, {0.0}};
  CHECK(2.0 * nll_loss(two, y2) == doctest::Approx(2.0 * nll_loss(one, y1)).epsilon(1e-14));

  HeadGrid steps(1);
  steps[0].push_back(std::make_unique<GaussianHead>(0.0, 1.0));
  steps[0].push_back(std::make_unique<GaussianHead>(1.0, 2.0));
  const std::vector<std::vector<double>> ys{{0.3, -1.0}};
  CHECK(nll_loss(steps, ys) == doctest::Approx(-steps[0][0]->log_prob(0.3) - steps[0][1]->log_prob(-1.0)));

  HeadGrid none;
  CHECK_THROWS_AS(nll_loss(none, std::vector<std::vector<double>>{}), DataError);
  CHECK_THROWS_AS(nll_loss(one, y2), DimensionError);
}

TEST_CASE("BNF NLL agrees with a numerically normalized density") {
  using boost::math::quadrature::gauss_kronrod;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int k = 0; k < 10; ++k) {
    std::vector<double> raw(20);
    for (double& r : raw) r = g(rng);
    const auto h = BnfHead::from_raw(raw, BernsteinOrder(16));
    const auto density = [&](double x) { return std::exp(h.log_prob(x)); };
    const double inf = std::numeric_limits<double>::infinity();
    const double mass = gauss_kronrod<double, 61>::integrate(density, -inf, inf, 15, 1e-12);
    const double y = h.quantile(0.3);
    HeadGrid grid(1);
    grid[0].push_back(std::make_unique<BnfHead>(h));
    CHECK(nll_loss(grid, std::vector<std::vector<double>>{{y}}) ==
          doctest::Approx(-std::log(density(y) / mass)).epsilon(1e-3).scale(1.0));
  }
}

TEST_CASE("pinball_loss examples") {
  CHECK(pinball(1.0, 0.0, 0.5) == doctest::Approx(0.5));
  CHECK(pinball(0.0, 1.0, 0.9) == doctest::Approx(0.1));
  CHECK(pinball(2.0, 2.0, 0.3) == 0.0);

  std::vector<double> knots(99);
  for (int i = 0; i < 99; ++i) knots[i] = 0.0;
  HeadGrid grid(1);
  grid[0].push_back(std::make_unique<QuantileHead>(knots));
  double expected = 0.0;
  for (int i = 0; i < 99; ++i) expected += pinball(1.0, 0.0, quantile_level(i)) / 99.0;
  CHECK(pinball_loss(grid, std::vector<std::vector<double>>{{1.0}}) == doctest::Approx(expected));
  CHECK(expected == doctest::Approx(0.5));

  HeadGrid gauss(1);
  gauss[0].push_back(std::make_unique<GaussianHead>(0.0, 1.0));
  CHECK_THROWS_AS(pinball_loss(gauss, std::vector<std::vector<double>>{{1.0}}), ConfigError);
}

TEST_CASE("Gaussian head recovers the moments of unconditional noise") {
  const auto train = noise_dataset(20000, 3, 3.0, 0.5, 11);
  const auto val = noise_dataset(1000, 3, 3.0, 0.5, 12);
  double mean = 0.0, sq = 0.0;
  const double count = static_cast<double>(train.y.size());
  for (Eigen::Index i = 0; i < train.y.size(); ++i) mean += train.y.data()[i] / count;
  for (Eigen::Index i = 0; i < train.y.size(); ++i) sq += std::pow(train.y.data()[i] - mean, 2) / count;

  auto model = small_model(HeadKind::gm, 3, {4}, 3);
  TrainConfig cfg;
  cfg.batch_size = 128;
  cfg.max_epochs = 200;
  fit(model, train, val, cfg);
  const auto heads = predict_heads(model, val.x.topRows(50));
  for (const auto& row : heads) {
    for (const auto& h : row) {
      const auto& gh = dynamic_cast<const GaussianHead&>(*h);
      CHECK(std::abs(gh.mu() - 3.0) <= 0.05);
      CHECK(std::abs(gh.sigma() - 0.5) <= 0.05);
      CHECK(std::abs(gh.mu() - mean) <= 0.05);
      CHECK(std::abs(gh.sigma() - std::sqrt(sq)) <= 0.05);
    }
  }
}

TEST_CASE("training history follows the plateau and early-stop rules") {
  const auto train = bimodal_dataset(600, 21);
  const auto val = bimodal_dataset(150, 22);
  auto model = small_model(HeadKind::gmm, 4);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 120;
  cfg.lr = 3e-2;
  const auto hist = fit(model, train, val, cfg);
  REQUIRE(!hist.epochs.empty());
  CHECK(hist.epochs.size() <= 120);

  // Replay the schedule from the recorded validation losses.
  double lr = cfg.lr, best = INFINITY;
  int since_improvement = 0, since_change = 0, best_epoch = -1;
  bool stopped = false;
  for (const auto& e : hist.epochs) {
    CHECK(e.lr == lr);
    const bool improved = !std::isfinite(best) || e.val_loss < best - 1e-4 * std::abs(best);
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
    }
    if (improved) {
      since_improvement = since_change = 0;
    } else if (++since_improvement, ++since_change, since_improvement >= 10) {
      stopped = true;
      CHECK(&e == &hist.epochs.back());
    } else if (since_change >= 3) {
      lr *= 0.1;
      since_change = 0;
    }
  }
  for (std::size_t i = 1; i < hist.epochs.size(); ++i) {
    const double ratio = hist.epochs[i].lr / hist.epochs[i - 1].lr;
    CHECK((ratio == 1.0 || ratio == doctest::Approx(0.1)));
  }
  CHECK(stopped == hist.stopped_early);
  CHECK(best_epoch == hist.best_epoch);
  CHECK(hist.best_val_loss() == best);
  CHECK(dataset_loss(model, val, cfg.batch_size) == doctest::Approx(best).epsilon(1e-12));

  const auto csv = hist.to_csv();
  CHECK(csv.find("epoch,train_loss,val_loss,lr") != std::string::npos);
  CHECK(csv.find("nll") != std::string::npos);
}

TEST_CASE("training is deterministic for a fixed seed") {
  const auto train = bimodal_dataset(300, 31);
  const auto val = bimodal_dataset(80, 32);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.max_epochs = 5;
  cfg.seed = 9;
  auto a = small_model(HeadKind::bnf, 7);
  auto b = small_model(HeadKind::bnf, 7);
  const auto ha = fit(a, train, val, cfg);
  const auto hb = fit(b, train, val, cfg);
  CHECK(a.store.values() == b.store.values());
  REQUIRE(ha.epochs.size() == hb.epochs.size());
  for (std::size_t i = 0; i < ha.epochs.size(); ++i) CHECK(ha.epochs[i].val_loss == hb.epochs[i].val_loss);
}

TEST_CASE("fit rejects empty data, bad configs and the ECDF baseline") {
  const auto val = bimodal_dataset(10, 1);
  const Dataset empty{ad::Matrix(0, 4), ad::Matrix(0, 2)};
  auto model = small_model(HeadKind::gm, 1);
  TrainConfig cfg;
  CHECK_THROWS_AS(fit(model, empty, val, cfg), DataError);
  CHECK_THROWS_AS(fit(model, val, empty, cfg), DataError);
  cfg.lr = 0.0;
  CHECK_THROWS_AS(fit(model, val, val, cfg), ConfigError);
  CHECK_THROWS_AS(parse_head("weibull"), ConfigError);
  Model ecdf = model;
  ecdf.kind = HeadKind::ecdf;
  CHECK_THROWS_AS(fit(ecdf, val, val, TrainConfig{}), ConfigError);
}

TEST_CASE("checkpoint round trip is exact") {
  const auto val = bimodal_dataset(40, 41);
  for (auto kind : {HeadKind::bnf, HeadKind::gm, HeadKind::gmm, HeadKind::qr}) {
    const auto model = small_model(kind, 8, {6, 5});
    const auto path = std::filesystem::temp_directory_path() / "bnf_ckpt_test.json";
    save_model(path, model, R"({"note": "x"})");
    std::string meta;
    const auto back = load_model(path, &meta);
    std::filesystem::remove(path);
    CHECK(back.kind == kind);
    CHECK(back.cfg.hidden == model.cfg.hidden);
    CHECK(back.store.values() == model.store.values());
    CHECK(meta.find("note") != std::string::npos);
    CHECK(dataset_loss(back, val) == dataset_loss(model, val));
  }
  CHECK_THROWS_AS(load_model("/nonexistent/ckpt.json"), DataError);
}

TEST_CASE("BNF beats the empirical baseline on conditional bimodal data") {
  const auto train = bimodal_dataset(1500, 51);
  const auto val = bimodal_dataset(300, 52);
  auto model = small_model(HeadKind::bnf, 5, {32, 32});
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.max_epochs = 50;
  cfg.lr = 3e-3;
  const auto hist = fit(model, train, val, cfg);

  std::vector<std::vector<double>> train_rows(train.size()), val_rows(val.size());
  for (std::size_t i = 0; i < train.size(); ++i) train_rows[i] = {train.y(i, 0), train.y(i, 1)};
  for (std::size_t i = 0; i < val.size(); ++i) val_rows[i] = {val.y(i, 0), val.y(i, 1)};
  const auto baseline = ecdf_fit(train_rows);
  const auto ecdf = score_heads([&](std::size_t, std::size_t t) -> const DensityHead& { return baseline.head(t); },
                                val_rows, ScoreOptions{false});
  CHECK(hist.best_val_loss() < *ecdf.nll);
}
