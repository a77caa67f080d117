#include "bnf/model.hpp"

#include <json.hpp>

#include "bnf/error.hpp"

namespace bnf {

using json = nlohmann::json;

std::string_view head_name(HeadKind kind) {
  switch (kind) {
    case HeadKind::bnf: return "bnf";
    case HeadKind::gm: return "gm";
    case HeadKind::gmm: return "gmm";
    case HeadKind::qr: return "qr";
    case HeadKind::ecdf: return "ecdf";
  }
  return "?";
}

HeadKind parse_head(std::string_view name) {
  for (auto k : {HeadKind::bnf, HeadKind::gm, HeadKind::gmm, HeadKind::qr, HeadKind::ecdf}) {
    if (head_name(k) == name) return k;
  }
  throw ConfigError("unknown head '" + std::string(name) + "' (expected bnf, gm, gmm, qr or ecdf)");
}

bool is_trainable(HeadKind kind) { return kind != HeadKind::ecdf; }

bool has_density(HeadKind kind) { return kind != HeadKind::qr; }

int params_per_step(HeadKind kind, BernsteinOrder order) {
  switch (kind) {
    case HeadKind::bnf: return order.raw_size();
    case HeadKind::gm: return 2;
    case HeadKind::gmm: return 3 * kMixtureComponents;
    case HeadKind::qr: return kQuantileLevels;
    case HeadKind::ecdf: break;
  }
  throw ConfigError("the ECDF baseline has no network outputs");
}

std::string_view loss_name(HeadKind kind) { return kind == HeadKind::qr ? "pinball" : "nll"; }

std::unique_ptr<DensityHead> make_head(HeadKind kind, std::span<const double> raw, BernsteinOrder order) {
  switch (kind) {
    case HeadKind::bnf: return std::make_unique<BnfHead>(BnfHead::from_raw(raw, order));
    case HeadKind::gm: return std::make_unique<GaussianHead>(GaussianHead::from_raw(raw));
    case HeadKind::gmm: return std::make_unique<GmmHead>(GmmHead::from_raw(raw));
    case HeadKind::qr: return std::make_unique<QuantileHead>(QuantileHead::from_raw(raw));
    case HeadKind::ecdf: break;
  }
  throw ConfigError("the ECDF baseline is fitted from data, not built from network outputs");
}

namespace {

// (n x k) component log-densities log N(y | mu_j, sigma_j).
ad::Var gaussian_components(ad::Tape& tape, ad::Var mu, ad::Var sigma_raw, const ad::Matrix& y) {
  const auto k = tape.value(mu).cols();
  ad::Var sigma = ad::add_scalar(ad::softplus(sigma_raw), kScaleFloor);
  ad::Var target = tape.constant(y.replicate(1, k));
  ad::Var z = ad::div(ad::sub(target, mu), sigma);
  return ad::sub(ad::normal_log_pdf(z), ad::log(sigma));
}

}  // namespace

ad::Var head_loss(ad::Tape& tape, ad::Var raw, const ad::Matrix& y, HeadKind kind, BernsteinOrder order) {
  const auto batch = tape.value(raw).rows();
  const auto steps = y.cols();
  if (y.rows() != batch) throw DimensionError("head_loss: batch sizes of outputs and targets differ");
  const int k = params_per_step(kind, order);
  if (tape.value(raw).cols() != steps * k) throw DimensionError("head_loss: output width does not match head");

  // Targets flattened in the same (sample, step) row order as unstack_steps.
  ad::Matrix yflat(batch * steps, 1);
  for (Eigen::Index r = 0; r < batch; ++r) {
    for (Eigen::Index s = 0; s < steps; ++s) yflat(r * steps + s, 0) = y(r, s);
  }
  ad::Var per_step = ad::unstack_steps(raw, static_cast<int>(steps));
  const double inv_batch = 1.0 / static_cast<double>(batch);

  switch (kind) {
    case HeadKind::bnf: {
      ad::Var params = ad::constrain_flow(per_step, order.value());
      ad::Var flow = ad::bernstein_flow(params, yflat);
      ad::Var log_lik = ad::add(ad::normal_log_pdf(ad::cols(flow, 0, 1)), ad::cols(flow, 1, 1));
      return ad::scale(ad::sum(log_lik), -inv_batch);
    }
    case HeadKind::gm: {
      ad::Var comp = gaussian_components(tape, ad::cols(per_step, 0, 1), ad::cols(per_step, 1, 1), yflat);
      return ad::scale(ad::sum(comp), -inv_batch);
    }
    case HeadKind::gmm: {
      constexpr int c = kMixtureComponents;
      ad::Var comp = gaussian_components(tape, ad::cols(per_step, 0, c), ad::cols(per_step, c, c), yflat);
      ad::Var log_alpha = ad::log_softmax_rows(ad::cols(per_step, 2 * c, c));
      ad::Var mix = ad::log_sum_exp_rows(ad::add(comp, log_alpha));
      return ad::scale(ad::sum(mix), -inv_batch);
    }
    case HeadKind::qr: {
      ad::Var first = ad::cols(per_step, 0, 1);
      ad::Var steps_up = ad::softplus(ad::cols(per_step, 1, kQuantileLevels - 1));
      ad::Var q = ad::cumsum_cols(ad::concat_cols(first, steps_up));
      const auto levels = quantile_levels();
      const double norm = 1.0 / (static_cast<double>(batch * steps) * kQuantileLevels);
      return ad::scale(ad::pinball_sum(q, yflat, levels), norm);
    }
    case HeadKind::ecdf: break;
  }
  throw ConfigError("the ECDF baseline is not trained by gradient descent");
}

Model make_model(HeadKind kind, BernsteinOrder order, int input_dim, std::mt19937_64& rng,
                 std::vector<int> hidden) {
  Model m;
  m.kind = kind;
  m.order = order;
  m.cfg.input_dim = input_dim;
  m.cfg.hidden = std::move(hidden);
  m.cfg.params_per_step = params_per_step(kind, order);
  m.store = init_params(m.cfg, rng);
  return m;
}

HeadGrid predict_heads(const Model& model, const ad::Matrix& x) {
  const ad::Matrix raw = fc_predict(model.store, model.cfg, x);
  const int k = model.cfg.params_per_step;
  HeadGrid grid(static_cast<std::size_t>(raw.rows()));
  std::vector<double> row(static_cast<std::size_t>(k));
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    auto& heads = grid[r];
    heads.reserve(model.cfg.steps);
    for (int s = 0; s < model.cfg.steps; ++s) {
      for (int j = 0; j < k; ++j) row[j] = raw(r, s * k + j);
      heads.push_back(make_head(model.kind, row, model.order));
    }
  }
  return grid;
}

void save_model(const std::filesystem::path& path, const Model& model, const std::string& meta_json) {
  json meta = json::parse(meta_json);
  meta["head"] = std::string(head_name(model.kind));
  meta["order"] = model.order.value();
  save_checkpoint(path, model.cfg, model.store, meta.dump());
}

Model load_model(const std::filesystem::path& path, std::string* meta_json) {
  auto ck = load_checkpoint(path);
  const json meta = json::parse(ck.extra_json);
  Model m;
  try {
    m.kind = parse_head(meta.at("head").get<std::string>());
    m.order = BernsteinOrder(meta.value("order", 16));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + " lacks head metadata: " + e.what());
  }
  m.cfg = ck.cfg;
  m.store = std::move(ck.store);
  if (m.cfg.params_per_step != params_per_step(m.kind, m.order)) {
    throw FormatError("checkpoint output width does not match its head");
  }
  if (meta_json) *meta_json = ck.extra_json;
  return m;
}

}  // namespace bnf
