#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bnf/autodiff.hpp"
#include "bnf/heads.hpp"
#include "bnf/model.hpp"
#include "bnf/network.hpp"

namespace bnf {

struct TrainConfig {
  int batch_size = 1024;
  int max_epochs = 300;
  double lr = 1e-3;
  int plateau_patience = 3;
  double plateau_factor = 0.1;
  int early_stop_patience = 10;
  // Relative decrease of the validation loss that counts as an improvement.
  double min_rel_improvement = 1e-4;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;

  void validate() const;
};

struct EpochRecord {
  int epoch;
  double train_loss;
  double val_loss;
  double lr;
  double seconds;
};

struct TrainHistory {
  std::string loss_name;
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  bool stopped_early = false;

  double best_val_loss() const;
  // epoch,train_loss,val_loss,lr with a leading comment naming the loss.
  std::string to_csv() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// One bias-corrected Adam update from store.grads(). Throws TrainingError on
// non-finite gradients before touching any parameter.
void adam_step(ParamStore& store, AdamState& state, double lr);

// Mean over samples of -sum_t log p(y_t | x). `heads[i][t]` is the head of
// sample i at step t. Throws TrainingError naming the sample on non-finite terms.
double nll_loss(const HeadGrid& heads, std::span<const std::vector<double>> targets);

// Pinball loss averaged over samples, steps and the 99 levels.
double pinball_loss(const HeadGrid& heads, std::span<const std::vector<double>> targets);

struct Dataset {
  ad::Matrix x;  // samples x features
  ad::Matrix y;  // samples x steps
  std::size_t size() const noexcept { return static_cast<std::size_t>(x.rows()); }
};

// Mean loss of the model over a dataset, evaluated in batches.
double dataset_loss(const Model& model, const Dataset& data, int batch_size = 1024);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minibatch Adam with learning-rate reduction on plateau and early stopping.
// The best-validation parameters are restored into `model` on return.
TrainHistory fit(Model& model, const Dataset& train, const Dataset& validation, const TrainConfig& cfg,
                 const EpochCallback& on_epoch = {});

}  // namespace bnf
