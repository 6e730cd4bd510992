// Command-line front end: train, evaluate, predict, plot, bench.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "trajectron/cli/commands.hpp"

namespace tc = trajectron::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent trajectory forecasting with a graph-structured recurrent CVAE"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> precision;
  std::optional<std::string> fold;
  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--set", overrides, "override one configuration key (key=value), repeatable");
  app.add_option("--seed", seed, "global random seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--precision", precision, "32 or 64")->check(CLI::IsMember({32, 64}));
  app.add_option("--fold", fold, "held-out split of the dataset manifest");

  auto* train = app.add_subcommand("train", "fit a model; writes checkpoints, loss.csv and config.txt");

  std::string checkpoint;
  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test fold; writes metrics.csv and nll_per_timestep.csv");
  evaluate->add_option("--checkpoint", checkpoint, "weights file")->required();

  std::string scene_file, mode = "full";
  int n_samples = 20;
  std::optional<int> t_obs;
  auto* predict = app.add_subcommand("predict", "sample futures for one scene file; writes samples.jsonl");
  predict->add_option("--checkpoint", checkpoint, "weights file")->required();
  predict->add_option("--scene", scene_file, "dataset file (frame agent x y)")->required();
  predict->add_option("--samples", n_samples, "samples per agent");
  predict->add_option("--mode", mode, "full or z_best");
  predict->add_option("--t-obs", t_obs, "observation timestep (default: last)");

  std::string samples_file;
  auto* plot = app.add_subcommand("plot", "render samples.jsonl over a scene; writes plot.svg");
  plot->add_option("--samples", samples_file, "samples.jsonl from predict")->required();
  plot->add_option("--scene", scene_file, "dataset file the samples were drawn for")->required();

  int repetitions = 20;
  auto* bench = app.add_subcommand("bench", "time prediction and incremental updates; writes runtime.csv");
  bench->add_option("--checkpoint", checkpoint, "weights file")->required();
  bench->add_option("--samples", n_samples, "samples per agent");
  bench->add_option("--repetitions", repetitions, "timed repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  return tc::guarded([&] {
    tc::RunConfig c = config_path.empty() ? tc::RunConfig{} : tc::RunConfig::load(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw trajectron::ConfigError("--set expects key=value, got '" + kv + "'");
      c.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) c.seed = *seed;
    if (out) c.out = *out;
    if (precision) c.precision = *precision;
    if (fold) c.fold = *fold;

    if (*train) tc::cmd_train(c);
    else if (*evaluate) tc::cmd_evaluate(c, checkpoint);
    else if (*predict) tc::cmd_predict(c, checkpoint, scene_file, n_samples, mode, t_obs);
    else if (*plot) tc::cmd_plot(c, samples_file, scene_file);
    else if (*bench) tc::cmd_bench(c, checkpoint, n_samples, repetitions);
  });
}
