#pragma once

#include <map>
#include <random>
#include <string>
#include <vector>

#include "trajectron/dataio.hpp"
#include "trajectron/model/config.hpp"
#include "trajectron/nn/checkpoint.hpp"
#include "trajectron/nn/gmm.hpp"
#include "trajectron/nn/layers.hpp"

namespace trajectron {

using nn::Matrix;
using nn::Parameter;
using nn::ParameterSet;
using nn::Tape;
using nn::Var;

// Tensor names follow "{node_type}/{component}/{param}" and "{edge_type}/ee/{param}".
namespace names {
inline std::string node(const std::string& type, const std::string& component, const std::string& param) {
  return type + "/" + component + "/" + param;
}
inline std::string edge(const EdgeType& k, const std::string& param) { return k.name() + "/ee/" + param; }
inline constexpr const char* kStdMean = "standardizer/mean";
inline constexpr const char* kStdDev = "standardizer/std";
inline constexpr const char* kConfig = "meta/config";
}  // namespace names

// All learned parameters plus the feature standardizer they were trained with.
template <typename T>
struct ModelWeights {
  ModelConfig config;
  ParameterSet<T> params;
  Standardizer standardizer;

  Parameter<T>& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [k, p] : params) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& [k, p] : params) p.zero_grad();
  }

  std::vector<nn::TensorRecord> to_records() const {
    std::vector<nn::TensorRecord> out;
    out.push_back(nn::TensorRecord::from_bytes(names::kConfig, config.to_text()));
    Matrix<double> mean(1, kStateDim), sd(1, kStateDim);
    for (std::size_t c = 0; c < kStateDim; ++c) mean(0, c) = standardizer.mean()[c], sd(0, c) = standardizer.stddev()[c];
    out.push_back(nn::TensorRecord::from_matrix<double>(names::kStdMean, mean));
    out.push_back(nn::TensorRecord::from_matrix<double>(names::kStdDev, sd));
    for (const auto& [name, p] : params) out.push_back(nn::TensorRecord::from_matrix<T>(name, p.value));
    return out;
  }

  static ModelWeights from_records(const std::vector<nn::TensorRecord>& records) {
    ModelWeights w;
    bool have_config = false;
    StateVector mean{}, sd{};
    sd.fill(1.0);
    for (const auto& r : records) {
      if (r.name == names::kConfig) {
        w.config = ModelConfig::from_text(r.to_string());
        have_config = true;
      } else if (r.name == names::kStdMean || r.name == names::kStdDev) {
        const auto m = r.to_matrix<double>();
        if (m.size() != static_cast<Eigen::Index>(kStateDim)) throw DataError("standardizer tensor has wrong size");
        auto& dst = r.name == names::kStdMean ? mean : sd;
        for (std::size_t c = 0; c < kStateDim; ++c) dst[c] = m(0, c);
      } else {
        w.params[r.name].value = r.to_matrix<T>();
      }
    }
    if (!have_config) throw DataError("checkpoint has no model configuration");
    w.standardizer = Standardizer(mean, sd);
    w.check_structure();
    return w;
  }

  // Every declared type has exactly one bundle, with the shapes the config implies.
  void check_structure() const;
};

namespace detail {

template <typename T>
void lstm_params(ParameterSet<T>& ps, const std::string& prefix, int input, int hidden, double scale, std::mt19937_64& rng) {
  auto& w = ps[prefix + "/weight"];
  w.value = nn::uniform_init<T>(input + hidden, 4 * hidden, hidden, scale, rng);
  auto& b = ps[prefix + "/bias"];
  b.value = Matrix<T>::Zero(1, 4 * hidden);
  b.value.middleCols(hidden, hidden).setConstant(T(1));  // forget gate
}

template <typename T>
void dense_params(ParameterSet<T>& ps, const std::string& prefix, int input, int output, double scale, std::mt19937_64& rng) {
  ps[prefix + "/weight"].value = nn::uniform_init<T>(input, output, input, scale, rng);
  ps[prefix + "/bias"].value = Matrix<T>::Zero(1, output);
}

struct ShapeSpec {
  std::string name;
  Eigen::Index rows, cols;
};

inline std::vector<ShapeSpec> expected_shapes(const ModelConfig& c) {
  std::vector<ShapeSpec> s;
  auto lstm = [&s](const std::string& p, int in, int h) {
    s.push_back({p + "/weight", in + h, 4 * h});
    s.push_back({p + "/bias", 1, 4 * h});
  };
  auto dense = [&s](const std::string& p, int in, int out) {
    s.push_back({p + "/weight", in, out});
    s.push_back({p + "/bias", 1, out});
  };
  const int enc = c.encoding_dim();
  for (const auto& t : c.node_types) {
    lstm(t + "/nhe", kStateDim, c.nhe_hidden);
    lstm(t + "/nfe_fwd", kStateDim, c.nfe_hidden);
    lstm(t + "/nfe_bwd", kStateDim, c.nfe_hidden);
    s.push_back({names::node(t, "attention", "v"), c.attention_dim, 1});
    s.push_back({names::node(t, "attention", "w_edge"), c.ee_hidden, c.attention_dim});
    s.push_back({names::node(t, "attention", "w_node"), c.nhe_hidden, c.attention_dim});
    dense(t + "/recognition/0", enc + 2 * c.nfe_hidden, c.mlp_hidden);
    dense(t + "/recognition/1", c.mlp_hidden, c.latent_cardinality);
    dense(t + "/prior/0", enc, c.mlp_hidden);
    dense(t + "/prior/1", c.mlp_hidden, c.latent_cardinality);
    lstm(t + "/decoder/lstm", c.decoder_input_dim(), c.decoder_hidden);
    dense(t + "/decoder/output", c.decoder_hidden, c.gmm_components * nn::kGmmBlocks);
  }
  for (const auto& k : c.edge_types()) lstm(k.name() + "/ee", 2 * kStateDim, c.ee_hidden);
  return s;
}

}  // namespace detail

template <typename T>
void ModelWeights<T>::check_structure() const {
  const auto shapes = detail::expected_shapes(config);
  if (shapes.size() != params.size())
    throw ConfigError("parameter count " + std::to_string(params.size()) + " does not match configuration (" +
                      std::to_string(shapes.size()) + ")");
  for (const auto& s : shapes) {
    const auto& p = at(s.name);
    if (p.value.rows() != s.rows || p.value.cols() != s.cols) throw ShapeError("parameter '" + s.name + "' has wrong shape");
  }
}

// Fan-in scaled uniform init, forget-gate bias +1, small attention vectors and a
// down-scaled GMM output layer so early likelihoods stay finite.
template <typename T>
ModelWeights<T> initialize_weights(const ModelConfig& config, std::uint64_t seed, Standardizer standardizer = {}) {
  config.validate();
  std::mt19937_64 rng(seed);
  ModelWeights<T> w;
  w.config = config;
  w.standardizer = standardizer;
  auto& ps = w.params;
  const int enc = config.encoding_dim();
  for (const auto& t : config.node_types) {
    detail::lstm_params(ps, t + "/nhe", kStateDim, config.nhe_hidden, 1.0, rng);
    detail::lstm_params(ps, t + "/nfe_fwd", kStateDim, config.nfe_hidden, 1.0, rng);
    detail::lstm_params(ps, t + "/nfe_bwd", kStateDim, config.nfe_hidden, 1.0, rng);
    ps[names::node(t, "attention", "v")].value = nn::uniform_init<T>(config.attention_dim, 1, config.attention_dim, 0.1, rng);
    ps[names::node(t, "attention", "w_edge")].value = nn::uniform_init<T>(config.ee_hidden, config.attention_dim, config.ee_hidden, 1.0, rng);
    ps[names::node(t, "attention", "w_node")].value = nn::uniform_init<T>(config.nhe_hidden, config.attention_dim, config.nhe_hidden, 1.0, rng);
    detail::dense_params(ps, t + "/recognition/0", enc + 2 * config.nfe_hidden, config.mlp_hidden, 1.0, rng);
    detail::dense_params(ps, t + "/recognition/1", config.mlp_hidden, config.latent_cardinality, 1.0, rng);
    detail::dense_params(ps, t + "/prior/0", enc, config.mlp_hidden, 1.0, rng);
    detail::dense_params(ps, t + "/prior/1", config.mlp_hidden, config.latent_cardinality, 1.0, rng);
    detail::lstm_params(ps, t + "/decoder/lstm", config.decoder_input_dim(), config.decoder_hidden, 1.0, rng);
    detail::dense_params(ps, t + "/decoder/output", config.decoder_hidden, config.gmm_components * nn::kGmmBlocks, 0.1, rng);
  }
  for (const auto& k : config.edge_types()) detail::lstm_params(ps, k.name() + "/ee", 2 * kStateDim, config.ee_hidden, 1.0, rng);
  for (auto& [name, p] : ps) p.zero_grad();
  return w;
}

// Parameters of one node type bound to a tape.
template <typename T>
struct NodeVars {
  nn::LstmVars<T> nhe, nfe_fwd, nfe_bwd;
  Var<T> attn_v, attn_w_edge, attn_w_node;
  std::vector<nn::DenseVars<T>> recognition, prior;
  nn::LstmVars<T> decoder;
  nn::DenseVars<T> output;
  std::vector<nn::LstmVars<T>> edges;  // aligned with config.edge_types_for(type)
};

template <typename T, typename W>
NodeVars<T> bind_node(Tape<T>& tape, W& weights, const std::string& type) {
  auto p = [&](const std::string& n) { return tape.param(weights.at(n)); };
  auto lstm = [&](const std::string& prefix) { return nn::LstmVars<T>{p(prefix + "/weight"), p(prefix + "/bias")}; };
  auto dense = [&](const std::string& prefix) { return nn::DenseVars<T>{p(prefix + "/weight"), p(prefix + "/bias")}; };
  if (!weights.config.has_node_type(type)) throw ConfigError("unknown node type '" + type + "'");
  NodeVars<T> v;
  v.nhe = lstm(type + "/nhe");
  v.nfe_fwd = lstm(type + "/nfe_fwd");
  v.nfe_bwd = lstm(type + "/nfe_bwd");
  v.attn_v = p(names::node(type, "attention", "v"));
  v.attn_w_edge = p(names::node(type, "attention", "w_edge"));
  v.attn_w_node = p(names::node(type, "attention", "w_node"));
  v.recognition = {dense(type + "/recognition/0"), dense(type + "/recognition/1")};
  v.prior = {dense(type + "/prior/0"), dense(type + "/prior/1")};
  v.decoder = lstm(type + "/decoder/lstm");
  v.output = dense(type + "/decoder/output");
  for (const auto& k : weights.config.edge_types_for(type)) v.edges.push_back(lstm(k.name() + "/ee"));
  return v;
}

}  // namespace trajectron
