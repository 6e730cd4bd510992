#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "trajectron/model/trajectron.hpp"
#include "trajectron/nn/checkpoint.hpp"

namespace trajectron {

struct TrainConfig {
  int steps = 2000;
  int batch_size = 16;
  double beta = 1.0;
  int beta_warmup_steps = 0;  // 0 = constant beta
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // per-step multiplicative factor; 1 = constant rate
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  int precision = 32;
  int checkpoint_every = 500;
  double validation_fraction = 0.0;
  int validate_every = 100;

  double lr_at(int step) const { return learning_rate * std::pow(lr_decay, step - 1); }

  double beta_at(int step) const {
    if (beta_warmup_steps <= 0) return beta;
    return beta * std::min(1.0, static_cast<double>(step) / beta_warmup_steps);
  }

  void validate() const {
    if (steps < 1) throw ConfigError("train.steps must be at least 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
    if (!(beta >= 0.0)) throw ConfigError("train.beta must be nonnegative");
    if (beta_warmup_steps < 0) throw ConfigError("train.beta_warmup_steps must be nonnegative");
    if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train.lr_decay must be in (0, 1]");
    if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
    if (precision != 32 && precision != 64) throw ConfigError("precision must be 32 or 64");
    if (checkpoint_every < 1 || validate_every < 1) throw ConfigError("checkpoint/validation intervals must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw ConfigError("train.validation_fraction must be in [0, 1)");
  }

  void write(KeyValues& kv, const std::string& prefix = "") const {
    kv.set(prefix + "steps", std::to_string(steps));
    kv.set(prefix + "batch_size", std::to_string(batch_size));
    kv.set(prefix + "beta", format_double(beta));
    kv.set(prefix + "beta_warmup_steps", std::to_string(beta_warmup_steps));
    kv.set(prefix + "learning_rate", format_double(learning_rate));
    kv.set(prefix + "lr_decay", format_double(lr_decay));
    kv.set(prefix + "grad_clip", format_double(grad_clip));
    kv.set(prefix + "checkpoint_every", std::to_string(checkpoint_every));
    kv.set(prefix + "validation_fraction", format_double(validation_fraction));
    kv.set(prefix + "validate_every", std::to_string(validate_every));
  }

  bool apply(const std::string& key, const std::string& v) {
    if (key == "steps") steps = parse_int_value(key, v);
    else if (key == "batch_size") batch_size = parse_int_value(key, v);
    else if (key == "beta") beta = parse_double_value(key, v);
    else if (key == "beta_warmup_steps") beta_warmup_steps = parse_int_value(key, v);
    else if (key == "learning_rate") learning_rate = parse_double_value(key, v);
    else if (key == "lr_decay") lr_decay = parse_double_value(key, v);
    else if (key == "grad_clip") grad_clip = parse_double_value(key, v);
    else if (key == "checkpoint_every") checkpoint_every = parse_int_value(key, v);
    else if (key == "validation_fraction") validation_fraction = parse_double_value(key, v);
    else if (key == "validate_every") validate_every = parse_int_value(key, v);
    else return false;
    return true;
  }
};

// ---------------------------------------------------------------- samples

// One (agent, t_obs) training example with everything the loss needs precomputed.
struct TrainSample {
  std::string scene;
  int agent_id = 0;
  int t_obs = 0;
  std::string type;
  std::vector<EncoderStep> window;
  Vec2 last_velocity;
  std::vector<Vec2> future_velocity;     // m/s, decoder targets
  std::vector<StateVector> future_state; // standardized, future-encoder input
};

// All (agent, t_obs) pairs with min_history observed steps and a full horizon ahead.
inline std::vector<TrainSample> make_samples(std::span<const SceneTimeline> scenes, const ModelConfig& cfg,
                                             const Standardizer& st, bool announce = true) {
  std::vector<TrainSample> out;
  std::size_t short_future = 0;
  for (const auto& scene : scenes) {
    const SceneContext ctx(scene, cfg);
    for (const auto& [id, track] : scene.agents) {
      if (!cfg.has_node_type(track.type)) throw ConfigError("scene '" + scene.name + "' has undeclared node type " + track.type);
      for (const auto& seg : track.segments) {
        for (int t = seg.start + cfg.min_history - 1; t <= seg.end(); ++t) {
          if (ctx.future_available(id, t) < cfg.horizon) {
            ++short_future;
            continue;
          }
          TrainSample s;
          s.scene = scene.name;
          s.agent_id = id;
          s.t_obs = t;
          s.type = track.type;
          const int len = std::min(cfg.history_length, ctx.history_available(id, t));
          s.window = encoder_window(ctx, cfg, st, id, t, len);
          s.last_velocity = seg.states[t - seg.start].velocity;
          for (int k = 1; k <= cfg.horizon; ++k) {
            const AgentState& f = seg.states[t + k - seg.start];
            s.future_velocity.push_back(f.velocity);
            s.future_state.push_back(st.transform(f));
          }
          out.push_back(std::move(s));
        }
      }
    }
  }
  if (announce && short_future > 0)
    notice(std::to_string(short_future) + " candidate (agent, timestep) pairs excluded: fewer than " +
           std::to_string(cfg.horizon) + " future steps");
  return out;
}

// ---------------------------------------------------------------- loss

// KL(q || p) for categorical distributions given as probability vectors.
inline double kl_discrete(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) throw ShapeError("kl_discrete: cardinality mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k)
    if (q[k] > 0.0) kl += q[k] * (std::log(q[k]) - std::log(p[k]));
  return kl;
}

template <typename T>
struct LossReport {
  Var<T> objective;  // mean over agents of -(recon - beta*KL) / horizon, differentiable
  double total = 0;  // mean of -(recon - beta*KL)
  double recon = 0;  // mean E_q[sum_t log p(y_t | z, x)]
  double kl = 0;     // mean KL(q || p)
  double beta = 0;
  std::size_t agents = 0;
};

// Per-agent reconstruction by exact enumeration over z, plus KL, for one type/window group.
template <typename T>
struct GroupTerms {
  Var<T> recon;  // [n x 1]
  Var<T> kl;     // [n x 1]
};

// `W` is ModelWeights<T> (gradients flow into it) or const ModelWeights<T> (values only).
template <typename T, typename W>
GroupTerms<T> group_terms(Tape<T>& tape, W& w, const std::vector<const TrainSample*>& group) {
  const ModelConfig& cfg = w.config;
  const NodeVars<T> v = bind_node(tape, w, group.front()->type);
  const auto n = static_cast<Eigen::Index>(group.size());
  const int Z = cfg.latent_cardinality;

  std::vector<const std::vector<EncoderStep>*> seqs;
  for (const auto* s : group) seqs.push_back(&s->window);
  const Var<T> h_enc = encode_sequences(v, tape, cfg, seqs).h_enc;

  std::vector<Matrix<T>> future(cfg.horizon, Matrix<T>(n, kStateDim));
  for (Eigen::Index r = 0; r < n; ++r)
    for (int t = 0; t < cfg.horizon; ++t)
      for (std::size_t c = 0; c < kStateDim; ++c) future[t](r, c) = static_cast<T>(group[r]->future_state[t][c]);
  const Var<T> h_future = encode_future(v, tape, future, true);

  const Var<T> q_logits = recognition_logits(v, h_enc, h_future);
  const Var<T> p_logits = prior_logits(v, h_enc);
  const Var<T> kl = nn::kl_categorical(q_logits, p_logits);
  const Var<T> q = nn::softmax_rows(q_logits);

  std::vector<Eigen::Index> rows;
  std::vector<int> z;
  Matrix<T> prev(n * Z, 2);
  std::vector<Matrix<T>> targets(cfg.horizon, Matrix<T>(n * Z, 2));
  for (Eigen::Index r = 0; r < n; ++r)
    for (int k = 0; k < Z; ++k) {
      const Eigen::Index row = r * Z + k;
      rows.push_back(r);
      z.push_back(k);
      prev(row, 0) = static_cast<T>(group[r]->last_velocity.x);
      prev(row, 1) = static_cast<T>(group[r]->last_velocity.y);
      for (int t = 0; t < cfg.horizon; ++t) {
        targets[t](row, 0) = static_cast<T>(group[r]->future_velocity[t].x);
        targets[t](row, 1) = static_cast<T>(group[r]->future_velocity[t].y);
      }
    }
  const Var<T> ll = decode_log_likelihood(v, cfg, nn::gather_rows(h_enc, rows), one_hot<T>(z, Z), prev, targets);
  const Var<T> recon = nn::sum_cols(nn::mul(q, nn::reshape(ll, n, Z)));
  return {recon, kl};
}

// Negative beta-weighted ELBO averaged over the batch.
template <typename T, typename W>
LossReport<T> elbo_loss(Tape<T>& tape, W& w, const std::vector<const TrainSample*>& batch, double beta) {
  if (batch.empty()) throw DataError("elbo_loss: empty batch");
  const ModelConfig& cfg = w.config;
  std::map<std::pair<std::string, std::size_t>, std::vector<const TrainSample*>> groups;
  for (const auto* s : batch) {
    if (static_cast<int>(s->future_velocity.size()) != cfg.horizon) throw DataError("elbo_loss: sample without a full horizon");
    groups[{s->type, s->window.size()}].push_back(s);
  }
  LossReport<T> rep;
  rep.beta = beta;
  rep.agents = batch.size();
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& [key, group] : groups) {
    const GroupTerms<T> g = group_terms(tape, w, group);
    // per agent: -(recon - beta*KL)
    const Var<T> neg = nn::sub(nn::scale(g.kl, static_cast<T>(beta)), g.recon);
    const Var<T> neg_sum = nn::sum(neg);
    const Var<T> part = nn::scale(neg_sum, static_cast<T>(inv_n / cfg.horizon));
    rep.objective = rep.objective.tape ? nn::add(rep.objective, part) : part;
    rep.total += static_cast<double>(neg_sum.scalar()) * inv_n;
    rep.recon += static_cast<double>(g.recon.value().sum()) * inv_n;
    rep.kl += static_cast<double>(g.kl.value().sum()) * inv_n;
  }
  return rep;
}

// ---------------------------------------------------------------- optimizer

// Scales all gradients so their global L2 norm is at most max_norm; returns the norm before clipping.
template <typename T>
double clip_gradients(ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) sq += p.grad.template cast<double>().squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [name, p] : params) p.grad *= s;
  }
  return norm;
}

template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_learning_rate(double lr) { lr_ = lr; }

  void step(ParameterSet<T>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    for (auto& [name, p] : params) {
      auto& s = state_[name];
      if (s.m.size() == 0) {
        s.m = Matrix<T>::Zero(p.value.rows(), p.value.cols());
        s.v = s.m;
      }
      s.m = static_cast<T>(b1_) * s.m + static_cast<T>(1 - b1_) * p.grad;
      s.v = static_cast<T>(b2_) * s.v + static_cast<T>(1 - b2_) * p.grad.cwiseProduct(p.grad);
      const Matrix<T> update = (static_cast<T>(lr_ / c1) * s.m).cwiseQuotient(((s.v / static_cast<T>(c2)).cwiseSqrt().array() + static_cast<T>(eps_)).matrix());
      if (!update.allFinite()) throw NumericError("non-finite optimizer update for " + name);
      p.value -= update;
    }
  }

  long steps() const { return t_; }

 private:
  struct Moments {
    Matrix<T> m, v;
  };
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::map<std::string, Moments> state_;
};

// ---------------------------------------------------------------- loop

struct LossRow {
  int step = 0;
  double total = 0, recon = 0, kl = 0, beta = 0, lr = 0;
};

inline std::string loss_csv_header() { return "step,total,recon,kl,beta,lr\n"; }

inline std::string loss_csv_row(const LossRow& r) {
  return std::to_string(r.step) + "," + format_double(r.total) + "," + format_double(r.recon) + "," + format_double(r.kl) +
         "," + format_double(r.beta) + "," + format_double(r.lr) + "\n";
}

inline constexpr const char* kCheckpointFile = "checkpoint.trjw";
inline constexpr const char* kBestCheckpointFile = "checkpoint_best.trjw";
inline constexpr const char* kLossFile = "loss.csv";

struct TrainOptions {
  std::filesystem::path out_dir;  // empty = keep everything in memory
  bool announce = true;
};

template <typename T>
struct TrainResult {
  ModelWeights<T> weights;
  std::vector<LossRow> history;
  std::vector<std::pair<int, double>> validation;  // (step, mean validation objective)
  int best_step = -1;
  double best_validation = std::numeric_limits<double>::infinity();
  std::size_t train_samples = 0;
};

// Splits off a validation subset of samples with a deterministic shuffle.
inline std::pair<std::vector<TrainSample>, std::vector<TrainSample>> split_validation(std::vector<TrainSample> samples,
                                                                                      double fraction, std::uint64_t seed) {
  if (fraction <= 0.0) return {std::move(samples), {}};
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_val = static_cast<std::size_t>(fraction * static_cast<double>(samples.size()));
  std::vector<TrainSample> train, val;
  for (std::size_t k = 0; k < idx.size(); ++k) (k < n_val ? val : train).push_back(std::move(samples[idx[k]]));
  return {std::move(train), std::move(val)};
}

template <typename T>
double evaluate_objective(const ModelWeights<T>& w, const std::vector<TrainSample>& samples, double beta, int chunk = 64) {
  double acc = 0.0;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    std::vector<const TrainSample*> batch;
    for (std::size_t k = start; k < std::min(samples.size(), start + chunk); ++k) batch.push_back(&samples[k]);
    Tape<T> tape(false);
    acc += elbo_loss(tape, w, batch, beta).objective.scalar() * static_cast<double>(batch.size());
  }
  return acc / static_cast<double>(samples.size());
}

template <typename T>
void save_weights(const ModelWeights<T>& w, const std::filesystem::path& path) {
  nn::write_checkpoint(path, w.to_records());
}

template <typename T>
ModelWeights<T> load_weights(const std::filesystem::path& path) {
  return ModelWeights<T>::from_records(nn::read_checkpoint(path));
}

template <typename T>
TrainResult<T> train_loop(std::span<const SceneTimeline> scenes, const ModelConfig& mcfg, const TrainConfig& tcfg,
                          const TrainOptions& opt = {}) {
  mcfg.validate();
  tcfg.validate();
  if (scenes.empty()) throw DataError("no training scenes");
  const Standardizer st = Standardizer::fit(scenes);
  auto [train, val] = split_validation(make_samples(scenes, mcfg, st, opt.announce), tcfg.validation_fraction, tcfg.seed);
  if (train.empty()) throw DataError("no training samples: every agent lacks history or a full horizon");

  TrainResult<T> res;
  res.weights = initialize_weights<T>(mcfg, tcfg.seed, st);
  res.train_samples = train.size();
  ModelWeights<T>& w = res.weights;
  Adam<T> adam(tcfg.learning_rate);
  std::mt19937_64 rng(tcfg.seed);

  const bool persist = !opt.out_dir.empty();
  std::ofstream loss_csv;
  if (persist) {
    std::filesystem::create_directories(opt.out_dir);
    loss_csv.open(opt.out_dir / kLossFile, std::ios::binary);
    if (!loss_csv) throw Error("cannot write " + (opt.out_dir / kLossFile).string());
    loss_csv << loss_csv_header();
  }

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch_size = static_cast<std::size_t>(tcfg.batch_size);
  for (int step = 1; step <= tcfg.steps; ++step) {
    std::vector<const TrainSample*> batch;
    if (train.size() <= batch_size) {
      for (const auto& s : train) batch.push_back(&s);
    } else {
      // Partial Fisher-Yates: the first batch_size entries are a uniform draw without replacement.
      for (std::size_t k = 0; k < batch_size; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, order.size() - 1);
        std::swap(order[k], order[pick(rng)]);
        batch.push_back(&train[order[k]]);
      }
    }
    const double beta = tcfg.beta_at(step);
    LossRow row;
    try {
      w.zero_grad();
      Tape<T> tape;
      const LossReport<T> rep = elbo_loss(tape, w, batch, beta);
      if (!std::isfinite(rep.total)) throw NumericError("non-finite loss");
      tape.backward(rep.objective);
      clip_gradients(w.params, tcfg.grad_clip);
      adam.set_learning_rate(tcfg.lr_at(step));
      adam.step(w.params);
      row = {step, rep.total, rep.recon, rep.kl, beta, tcfg.lr_at(step)};
    } catch (const NumericError& e) {
      if (persist) loss_csv.flush();
      throw NumericError("training aborted at step " + std::to_string(step) + " (" + e.what() +
                         "); the last written checkpoint is kept");
    }
    res.history.push_back(row);
    if (persist) loss_csv << loss_csv_row(row);

    if (!val.empty() && (step % tcfg.validate_every == 0 || step == tcfg.steps)) {
      const double v = evaluate_objective(w, val, beta);
      res.validation.push_back({step, v});
      if (v < res.best_validation) {
        res.best_validation = v;
        res.best_step = step;
        if (persist) save_weights(w, opt.out_dir / kBestCheckpointFile);
      }
    }
    if (persist && (step % tcfg.checkpoint_every == 0 || step == tcfg.steps)) save_weights(w, opt.out_dir / kCheckpointFile);
  }
  return res;
}

}  // namespace trajectron
