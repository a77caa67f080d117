#include "bnf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "bnf/error.hpp"

namespace bnf {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (plateau_patience < 1 || early_stop_patience < 1) throw ConfigError("patience must be >= 1");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor must lie in (0, 1)");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in (0, 1)");
  }
}

double TrainHistory::best_val_loss() const {
  if (best_epoch < 0) return NAN;
  return epochs.at(static_cast<std::size_t>(best_epoch)).val_loss;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "# loss=" << loss_name << "\n";
  out << "epoch,train_loss,val_loss,lr\n";
  for (const auto& e : epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << '\n';
  return out.str();
}

void adam_step(ParamStore& store, AdamState& state, double lr) {
  auto& w = store.values();
  const auto& g = store.grads();
  if (state.m.size() != w.size() || state.v.size() != w.size()) {
    throw DimensionError("Adam state does not match parameter count");
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      std::ostringstream msg;
      msg << "non-finite gradient at parameter " << i << " (value " << g[i] << ", step " << state.t + 1 << ")";
      throw TrainingError(msg.str());
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g[i];
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

namespace {

void check_grid(const HeadGrid& heads, std::span<const std::vector<double>> targets) {
  if (heads.size() != targets.size()) throw DimensionError("heads and targets have different sample counts");
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i].size() != targets[i].size()) throw DimensionError("heads and targets have different step counts");
  }
}

}  // namespace

double nll_loss(const HeadGrid& heads, std::span<const std::vector<double>> targets) {
  check_grid(heads, targets);
  if (heads.empty()) throw DataError("nll_loss on an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    for (std::size_t t = 0; t < heads[i].size(); ++t) {
      const double lp = heads[i][t]->log_prob(targets[i][t]);
      if (!std::isfinite(lp)) {
        throw TrainingError("non-finite log-likelihood for sample " + std::to_string(i) + ", step " +
                            std::to_string(t));
      }
      total -= lp;
    }
  }
  return total / static_cast<double>(heads.size());
}

double pinball_loss(const HeadGrid& heads, std::span<const std::vector<double>> targets) {
  check_grid(heads, targets);
  if (heads.empty()) throw DataError("pinball_loss on an empty batch");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < heads.size(); ++i) {
    for (std::size_t t = 0; t < heads[i].size(); ++t) {
      const auto* qr = dynamic_cast<const QuantileHead*>(heads[i][t].get());
      if (qr == nullptr) throw ConfigError("pinball_loss expects quantile regression heads");
      total += qr->loss(targets[i][t]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

namespace {

ad::Matrix gather_rows(const ad::Matrix& m, std::span<const std::size_t> idx) {
  ad::Matrix out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
  return out;
}

}  // namespace

double dataset_loss(const Model& model, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw DataError("loss of an empty dataset");
  double total = 0.0;
  ad::Tape tape;
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size() - start);
    tape.clear();
    const ad::Matrix xb = data.x.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
    const ad::Matrix yb = data.y.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n));
    ad::Var raw = tape.constant(fc_predict(model.store, model.cfg, xb));
    ad::Var loss = head_loss(tape, raw, yb, model.kind, model.order);
    total += tape.value(loss)(0, 0) * static_cast<double>(n);
  }
  return total / static_cast<double>(data.size());
}

TrainHistory fit(Model& model, const Dataset& train, const Dataset& validation, const TrainConfig& cfg,
                 const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0) throw DataError("training set is empty");
  if (validation.size() == 0) throw DataError("validation set is empty");
  if (!is_trainable(model.kind)) throw ConfigError("the ECDF baseline is fitted, not trained");

  TrainHistory history;
  history.loss_name = std::string(loss_name(model.kind));
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  AdamState adam(model.store.size());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  double lr = cfg.lr;
  double best = INFINITY;
  std::vector<double> best_values = model.store.values();
  int since_improvement = 0;
  int since_lr_change = 0;
  ad::Tape tape;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, n);
      tape.clear();
      model.store.zero_grads();
      ad::Var raw = fc_forward(model.store, model.cfg, gather_rows(train.x, idx), tape);
      ad::Var loss = head_loss(tape, raw, gather_rows(train.y, idx), model.kind, model.order);
      const double lv = tape.value(loss)(0, 0);
      if (!std::isfinite(lv)) {
        throw TrainingError("non-finite training loss in epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      adam_step(model.store, adam, lr);
      train_total += lv * static_cast<double>(n);
    }
    if (!model.store.all_finite()) throw TrainingError("non-finite parameters after epoch " + std::to_string(epoch));

    const double val = dataset_loss(model, validation, cfg.batch_size);
    if (!std::isfinite(val)) throw TrainingError("validation loss diverged in epoch " + std::to_string(epoch));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochRecord rec{epoch, train_total / static_cast<double>(train.size()), val, lr, secs};
    history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const bool improved = !std::isfinite(best) || val < best - cfg.min_rel_improvement * std::abs(best);
    if (val < best) {
      best = val;
      history.best_epoch = epoch;
      best_values = model.store.values();
    }
    if (improved) {
      since_improvement = 0;
      since_lr_change = 0;
    } else {
      ++since_improvement;
      ++since_lr_change;
      if (since_improvement >= cfg.early_stop_patience) {
        history.stopped_early = true;
        break;
      }
      if (since_lr_change >= cfg.plateau_patience) {
        lr *= cfg.plateau_factor;
        since_lr_change = 0;
      }
    }
  }
  model.store.values() = best_values;
  model.store.zero_grads();
  return history;
}

}  // namespace bnf
