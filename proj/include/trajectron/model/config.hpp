#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "trajectron/graph.hpp"
#include "trajectron/kv.hpp"

namespace trajectron {

struct ModelConfig {
  int nhe_hidden = 32;
  int nfe_hidden = 32;  // per direction
  int ee_hidden = 8;
  int decoder_hidden = 128;
  int gmm_components = 16;
  int latent_cardinality = 16;
  int attention_dim = 8;
  int mlp_hidden = 32;
  int horizon = 12;
  int history_length = 8;  // encoder window used for training samples
  int min_history = 8;     // fewest observed steps needed to predict an agent
  double dt = kDefaultDt;
  double radius = kDefaultRadius;
  FilterPair filters = FilterPair::defaults();
  std::vector<std::string> node_types{kDefaultNodeType};

  int encoding_dim() const { return ee_hidden + nhe_hidden; }
  int decoder_input_dim() const { return 2 + latent_cardinality + encoding_dim(); }

  // Every unordered pair of node types.
  std::vector<EdgeType> edge_types() const {
    std::vector<EdgeType> out;
    for (std::size_t a = 0; a < node_types.size(); ++a)
      for (std::size_t b = a; b < node_types.size(); ++b) out.emplace_back(node_types[a], node_types[b]);
    return out;
  }

  // Edge types seen from a node of type `t`, one per node type in declaration order.
  std::vector<EdgeType> edge_types_for(const std::string& t) const {
    std::vector<EdgeType> out;
    for (const auto& other : node_types) out.emplace_back(t, other);
    return out;
  }

  bool has_node_type(const std::string& t) const {
    return std::find(node_types.begin(), node_types.end(), t) != node_types.end();
  }

  void validate() const {
    for (int v : {nhe_hidden, nfe_hidden, ee_hidden, decoder_hidden, gmm_components, latent_cardinality, attention_dim,
                  mlp_hidden, horizon, history_length, min_history})
      if (v < 1) throw ConfigError("model dimensions, horizon and history lengths must be positive");
    if (min_history > history_length) throw ConfigError("min_history cannot exceed history_length");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
    if (!(radius > 0.0)) throw ConfigError("radius must be positive");
    if (node_types.empty()) throw ConfigError("at least one node type is required");
    for (std::size_t a = 0; a < node_types.size(); ++a)
      for (std::size_t b = a + 1; b < node_types.size(); ++b)
        if (node_types[a] == node_types[b]) throw ConfigError("duplicate node type " + node_types[a]);
    filters.validate();
  }

  // Keys are written without a prefix; RunConfig adds "model.".
  void write(KeyValues& kv, const std::string& prefix = "") const {
    kv.set(prefix + "nhe_hidden", std::to_string(nhe_hidden));
    kv.set(prefix + "nfe_hidden", std::to_string(nfe_hidden));
    kv.set(prefix + "ee_hidden", std::to_string(ee_hidden));
    kv.set(prefix + "decoder_hidden", std::to_string(decoder_hidden));
    kv.set(prefix + "gmm_components", std::to_string(gmm_components));
    kv.set(prefix + "latent_cardinality", std::to_string(latent_cardinality));
    kv.set(prefix + "attention_dim", std::to_string(attention_dim));
    kv.set(prefix + "mlp_hidden", std::to_string(mlp_hidden));
    kv.set(prefix + "horizon", std::to_string(horizon));
    kv.set(prefix + "history_length", std::to_string(history_length));
    kv.set(prefix + "min_history", std::to_string(min_history));
    kv.set(prefix + "dt", format_double(dt));
    kv.set(prefix + "radius", format_double(radius));
    kv.set(prefix + "filter_add", join_doubles(filters.add));
    kv.set(prefix + "filter_remove", join_doubles(filters.remove));
    std::string types;
    for (std::size_t k = 0; k < node_types.size(); ++k) types += (k ? "," : "") + node_types[k];
    kv.set(prefix + "node_types", types);
  }

  // Applies one key (without prefix). Returns false for keys it does not own.
  bool apply(const std::string& key, const std::string& v) {
    auto as_int = [&](int& dst) { dst = parse_int_value(key, v); };
    if (key == "nhe_hidden") as_int(nhe_hidden);
    else if (key == "nfe_hidden") as_int(nfe_hidden);
    else if (key == "ee_hidden") as_int(ee_hidden);
    else if (key == "decoder_hidden") as_int(decoder_hidden);
    else if (key == "gmm_components") as_int(gmm_components);
    else if (key == "latent_cardinality") as_int(latent_cardinality);
    else if (key == "attention_dim") as_int(attention_dim);
    else if (key == "mlp_hidden") as_int(mlp_hidden);
    else if (key == "horizon") as_int(horizon);
    else if (key == "history_length") as_int(history_length);
    else if (key == "min_history") as_int(min_history);
    else if (key == "dt") dt = parse_double_value(key, v);
    else if (key == "radius") radius = parse_double_value(key, v);
    else if (key == "filter_add") filters.add = parse_double_list(key, v);
    else if (key == "filter_remove") filters.remove = parse_double_list(key, v);
    else if (key == "node_types") node_types = split_list(v);
    else return false;
    return true;
  }

  std::string to_text() const {
    KeyValues kv;
    write(kv);
    return kv.to_text();
  }

  static ModelConfig from_text(std::string_view text) {
    ModelConfig c;
    const auto kv = KeyValues::parse(text);
    for (const auto& [k, v] : kv.entries())
      if (!c.apply(k, v)) throw ConfigError("unknown model key '" + k + "'");
    c.validate();
    return c;
  }
};

}  // namespace trajectron
