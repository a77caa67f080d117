#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bnf/autodiff.hpp"

namespace bnf {

inline constexpr int kForecastSteps = 48;

struct FcNetworkConfig {
  int input_dim = 0;
  std::vector<int> hidden{512, 256, 128};
  int steps = kForecastSteps;
  int params_per_step = 0;  // 20 (BNF, M=16), 2 (GM), 9 (GMM), 99 (QR)
  double elu_alpha = 1.0;

  int output_dim() const noexcept { return steps * params_per_step; }
  void validate() const;
};

// Shape and offset of one dense layer inside the flat parameter vector. The
// weight block is stored column-major as (fan_in x fan_out), followed by the bias.
struct LayerLayout {
  int fan_in;
  int fan_out;
  std::size_t weight_offset;
  std::size_t bias_offset;
};

class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(const FcNetworkConfig& cfg);

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::vector<double>& grads() noexcept { return grads_; }
  const std::vector<double>& grads() const noexcept { return grads_; }
  const std::vector<LayerLayout>& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }

  void zero_grads();
  bool all_finite() const;
  bool matches(const FcNetworkConfig& cfg) const;

 private:
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<LayerLayout> layout_;
};

// He-uniform weights (variance 2 / fan_in) for the ELU layers, LeCun-uniform
// (variance 1 / fan_in) for the linear output layer, zero biases.
ParamStore init_params(const FcNetworkConfig& cfg, std::mt19937_64& rng);

// x: (batch x input_dim). Returns the (batch x steps*k) raw output node. Leaf
// adjoints are routed into store.grads() on tape.backward().
ad::Var fc_forward(ParamStore& store, const FcNetworkConfig& cfg, const ad::Matrix& x, ad::Tape& tape);

// Tape-free forward pass returning (batch x steps*k).
ad::Matrix fc_predict(const ParamStore& store, const FcNetworkConfig& cfg, const ad::Matrix& x);

// JSON checkpoint: format tag, network config, per-layer layout, and the value
// vector written as IEEE-754 hex so the round trip is lossless.
void save_checkpoint(const std::filesystem::path& path, const FcNetworkConfig& cfg, const ParamStore& store,
                     const std::string& extra_json = "{}");

struct Checkpoint {
  FcNetworkConfig cfg;
  ParamStore store;
  std::string extra_json;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bnf
