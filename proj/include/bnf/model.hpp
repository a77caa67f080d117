#pragma once

#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnf/autodiff.hpp"
#include "bnf/bernstein.hpp"
#include "bnf/heads.hpp"
#include "bnf/network.hpp"

namespace bnf {

enum class HeadKind { bnf, gm, gmm, qr, ecdf };

std::string_view head_name(HeadKind kind);
HeadKind parse_head(std::string_view name);  // throws ConfigError
bool is_trainable(HeadKind kind);
bool has_density(HeadKind kind);  // false for QR
// Raw network outputs per forecast step: M+4, 2, 9, 99.
int params_per_step(HeadKind kind, BernsteinOrder order = BernsteinOrder());
// "nll" or "pinball".
std::string_view loss_name(HeadKind kind);

std::unique_ptr<DensityHead> make_head(HeadKind kind, std::span<const double> raw,
                                       BernsteinOrder order = BernsteinOrder());

// Training loss on the tape for a batch. `raw` is the (batch x steps*k)
// network output and `y` the (batch x steps) targets. NLL heads return the
// per-sample sum over steps averaged over the batch; QR returns the pinball
// loss averaged over batch, steps and the 99 levels.
ad::Var head_loss(ad::Tape& tape, ad::Var raw, const ad::Matrix& y, HeadKind kind,
                  BernsteinOrder order = BernsteinOrder());

// A parameter network together with the density head it drives.
struct Model {
  HeadKind kind = HeadKind::bnf;
  BernsteinOrder order;
  FcNetworkConfig cfg;
  ParamStore store;
};

Model make_model(HeadKind kind, BernsteinOrder order, int input_dim, std::mt19937_64& rng,
                 std::vector<int> hidden = {512, 256, 128});

// Heads for every sample (outer) and step (inner).
using HeadGrid = std::vector<std::vector<std::unique_ptr<DensityHead>>>;
HeadGrid predict_heads(const Model& model, const ad::Matrix& x);

void save_model(const std::filesystem::path& path, const Model& model, const std::string& meta_json = "{}");
Model load_model(const std::filesystem::path& path, std::string* meta_json = nullptr);

}  // namespace bnf
