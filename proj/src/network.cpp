#include "bnf/network.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bnf/error.hpp"
#include "bnf/io.hpp"

namespace bnf {

using json = nlohmann::json;

void FcNetworkConfig::validate() const {
  if (input_dim <= 0) throw ConfigError("network input dimension must be positive");
  if (hidden.empty()) throw ConfigError("network needs at least one hidden layer");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (steps <= 0 || params_per_step <= 0) throw ConfigError("output shape must be positive");
  if (!(elu_alpha > 0.0)) throw ConfigError("ELU alpha must be positive");
}

ParamStore::ParamStore(const FcNetworkConfig& cfg) {
  cfg.validate();
  std::vector<int> widths{cfg.input_dim};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(cfg.output_dim());
  std::size_t offset = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LayerLayout layer{widths[l], widths[l + 1], offset, 0};
    offset += static_cast<std::size_t>(layer.fan_in) * layer.fan_out;
    layer.bias_offset = offset;
    offset += layer.fan_out;
    layout_.push_back(layer);
  }
  values_.assign(offset, 0.0);
  grads_.assign(offset, 0.0);
}

void ParamStore::zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool ParamStore::all_finite() const {
  for (double v : values_) {
    if (!std::isfinite(v)) return false;
  }
  for (double g : grads_) {
    if (!std::isfinite(g)) return false;
  }
  return true;
}

bool ParamStore::matches(const FcNetworkConfig& cfg) const {
  if (layout_.size() != cfg.hidden.size() + 1) return false;
  int fan_in = cfg.input_dim;
  for (std::size_t l = 0; l < layout_.size(); ++l) {
    const int fan_out = l < cfg.hidden.size() ? cfg.hidden[l] : cfg.output_dim();
    if (layout_[l].fan_in != fan_in || layout_[l].fan_out != fan_out) return false;
    fan_in = fan_out;
  }
  return true;
}

ParamStore init_params(const FcNetworkConfig& cfg, std::mt19937_64& rng) {
  ParamStore store(cfg);
  auto& v = store.values();
  const auto& layers = store.layout();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const bool output = l + 1 == layers.size();
    const double gain = output ? 3.0 : 6.0;
    const double bound = std::sqrt(gain / layers[l].fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t count = static_cast<std::size_t>(layers[l].fan_in) * layers[l].fan_out;
    for (std::size_t i = 0; i < count; ++i) v[layers[l].weight_offset + i] = dist(rng);
  }
  return store;
}

namespace {

void check_input(const ParamStore& store, const FcNetworkConfig& cfg, const ad::Matrix& x) {
  if (x.cols() != cfg.input_dim) {
    throw DimensionError("network input has " + std::to_string(x.cols()) + " features, expected " +
                         std::to_string(cfg.input_dim));
  }
  if (!store.matches(cfg)) throw ConfigError("parameter store layout does not match network config");
}

}  // namespace

ad::Var fc_forward(ParamStore& store, const FcNetworkConfig& cfg, const ad::Matrix& x, ad::Tape& tape) {
  check_input(store, cfg, x);
  auto& values = store.values();
  auto& grads = store.grads();
  ad::Var h = tape.constant(x);
  const auto& layers = store.layout();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::size_t wcount = static_cast<std::size_t>(layer.fan_in) * layer.fan_out;
    ad::Matrix w = Eigen::Map<const ad::Matrix>(values.data() + layer.weight_offset, layer.fan_in, layer.fan_out);
    ad::Matrix b = Eigen::Map<const ad::Matrix>(values.data() + layer.bias_offset, 1, layer.fan_out);
    ad::Var wv = tape.leaf(std::move(w), std::span<double>(grads.data() + layer.weight_offset, wcount));
    ad::Var bv = tape.leaf(std::move(b), std::span<double>(grads.data() + layer.bias_offset, layer.fan_out));
    h = ad::add_row(ad::matmul(h, wv), bv);
    if (l + 1 < layers.size()) h = ad::elu(h, cfg.elu_alpha);
  }
  return h;
}

ad::Matrix fc_predict(const ParamStore& store, const FcNetworkConfig& cfg, const ad::Matrix& x) {
  check_input(store, cfg, x);
  const auto& values = store.values();
  ad::Matrix h = x;
  const auto& layers = store.layout();
  const double alpha = cfg.elu_alpha;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    Eigen::Map<const ad::Matrix> w(values.data() + layer.weight_offset, layer.fan_in, layer.fan_out);
    Eigen::Map<const Eigen::RowVectorXd> b(values.data() + layer.bias_offset, layer.fan_out);
    ad::Matrix next = h * w;
    next.rowwise() += b;
    if (l + 1 < layers.size()) {
      next = next.unaryExpr([alpha](double v) { return v > 0.0 ? v : alpha * std::expm1(v); });
    }
    h = std::move(next);
  }
  return h;
}

namespace {

constexpr const char* kCheckpointFormat = "bnf-checkpoint/1";

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError("checkpoint: malformed value '" + s + "'");
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FcNetworkConfig& cfg, const ParamStore& store,
                     const std::string& extra_json) {
  json j;
  j["format"] = kCheckpointFormat;
  j["config"] = {{"input_dim", cfg.input_dim},
                 {"hidden", cfg.hidden},
                 {"steps", cfg.steps},
                 {"params_per_step", cfg.params_per_step},
                 {"elu_alpha", hex_double(cfg.elu_alpha)}};
  json layers = json::array();
  for (const auto& l : store.layout()) {
    layers.push_back({{"fan_in", l.fan_in},
                      {"fan_out", l.fan_out},
                      {"weight_offset", l.weight_offset},
                      {"bias_offset", l.bias_offset}});
  }
  j["layout"] = std::move(layers);
  json vals = json::array();
  for (double v : store.values()) vals.push_back(hex_double(v));
  j["values"] = std::move(vals);
  j["meta"] = json::parse(extra_json);
  io::write_atomic(path, j.dump());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat) throw FormatError("checkpoint " + path.string() + ": unknown format");
  Checkpoint ck;
  try {
    const auto& c = j.at("config");
    ck.cfg.input_dim = c.at("input_dim").get<int>();
    ck.cfg.hidden = c.at("hidden").get<std::vector<int>>();
    ck.cfg.steps = c.at("steps").get<int>();
    ck.cfg.params_per_step = c.at("params_per_step").get<int>();
    ck.cfg.elu_alpha = parse_hex_double(c.at("elu_alpha").get<std::string>());
    ck.store = ParamStore(ck.cfg);
    const auto& vals = j.at("values");
    if (vals.size() != ck.store.size()) throw FormatError("checkpoint: value count does not match layout");
    for (std::size_t i = 0; i < vals.size(); ++i) ck.store.values()[i] = parse_hex_double(vals[i].get<std::string>());
    ck.extra_json = j.value("meta", json::object()).dump();
  } catch (const json::exception& e) {
    throw FormatError("checkpoint " + path.string() + ": " + e.what());
  }
  return ck;
}

}  // namespace bnf
