#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "support.hpp"
#include "trajectron/eval/protocol.hpp"

using namespace tt;
namespace fs = std::filesystem;

namespace {

// Runs the command-line binary with stdout/stderr captured to `log`; returns the exit status.
int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + TRAJECTRON_CLI_PATH + "\" " + args + " >\"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
}

const char* kTinyModel =
    "model.nhe_hidden = 5\nmodel.nfe_hidden = 4\nmodel.ee_hidden = 3\nmodel.decoder_hidden = 6\n"
    "model.gmm_components = 2\nmodel.latent_cardinality = 3\nmodel.attention_dim = 3\nmodel.mlp_hidden = 4\n"
    "model.horizon = 3\nmodel.history_length = 3\nmodel.min_history = 3\n";

// Three agents walking straight lines, 10 frames apart, positions in meters.
std::string three_agent_scene() {
  std::string s;
  for (int f = 0; f < 10; ++f)
    for (int a = 0; a < 3; ++a)
      s += std::to_string(10 * f) + " " + std::to_string(a + 1) + " " + format_double(0.4 * f) + " " + format_double(1.5 * a + 0.05 * f) + "\n";
  return s;
}

// Trains the tiny model once per test binary; later tests reuse the checkpoint.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const auto d = scratch_dir("cli_shared");
    write_text(d / "run.cfg", std::string(kTinyModel) +
                                  "data.synthetic = fork\ndata.synthetic_scenes = 4\ndata.synthetic_neighbors = 1\n"
                                  "train.steps = 500\nseed = 3\nout = run\n");
    write_text(d / "scene.txt", three_agent_scene());
    if (run_cli("--config \"" + (d / "run.cfg").string() + "\" train", d / "train.log") != 0)
      ADD_FAILURE() << read_file(d / "train.log");
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  const auto d = scratch_dir("cli_usage");
  EXPECT_EQ(run_cli("", d / "log"), 2);
  EXPECT_EQ(run_cli("frobnicate", d / "log"), 2);
  EXPECT_EQ(run_cli("--precision 16 train", d / "log"), 2);
  write_text(d / "bad.cfg", "model.no_such_key = 1\n");
  EXPECT_EQ(run_cli("--config \"" + (d / "bad.cfg").string() + "\" train", d / "log"), 2);
  EXPECT_NE(read_file(d / "log").find("no_such_key"), std::string::npos);
  EXPECT_EQ(run_cli("--config \"" + (d / "absent.cfg").string() + "\" train", d / "log"), 2);
}

TEST(Cli, MissingDatasetExitsTwoWithoutOutputs) {
  const auto d = scratch_dir("cli_missing");
  write_text(d / "run.cfg", "data.manifest = nowhere/manifest.txt\nout = result\n");
  EXPECT_EQ(run_cli("--config \"" + (d / "run.cfg").string() + "\" train", d / "log"), 2);
  EXPECT_FALSE(fs::exists(d / "result"));
  // A manifest that exists but names a missing split file.
  write_text(d / "manifest.txt", "split.eth = eth.txt\nsplit.hotel = hotel.txt\n");
  write_text(d / "run2.cfg", "data.manifest = manifest.txt\nout = result\n");
  EXPECT_EQ(run_cli("--config \"" + (d / "run2.cfg").string() + "\" train", d / "log"), 2);
  EXPECT_FALSE(fs::exists(d / "result"));
  EXPECT_NE(read_file(d / "log").find("eth.txt"), std::string::npos);
}

TEST(Cli, SameSeedByteIdenticalLossAndConfigRoundTrip) {
  const auto d = scratch_dir("cli_determinism");
  write_text(d / "run.cfg", std::string(kTinyModel) + "data.synthetic = fork\ndata.synthetic_scenes = 3\ntrain.steps = 25\n");
  const std::string cfg = "--config \"" + (d / "run.cfg").string() + "\" --seed 7 ";
  const std::string cfg8 = "--config \"" + (d / "run.cfg").string() + "\" --seed 8 ";
  ASSERT_EQ(run_cli(cfg + "--out \"" + (d / "a").string() + "\" train", d / "log"), 0) << read_file(d / "log");
  ASSERT_EQ(run_cli(cfg + "--out \"" + (d / "b").string() + "\" train", d / "log"), 0);
  const auto loss = read_file(d / "a" / kLossFile);
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 26);
  EXPECT_EQ(loss, read_file(d / "b" / kLossFile));

  // The dumped effective config reproduces the run on its own.
  ASSERT_EQ(run_cli("--config \"" + (d / "a" / "config.txt").string() + "\" --out \"" + (d / "c").string() + "\" train", d / "log"), 0)
      << read_file(d / "log");
  EXPECT_EQ(loss, read_file(d / "c" / kLossFile));
  EXPECT_EQ(read_file(d / "a" / "config.txt"), read_file(d / "c" / "config.txt"));

  ASSERT_EQ(run_cli(cfg8 + "--out \"" + (d / "e").string() + "\" train", d / "log"), 0);
  EXPECT_NE(loss, read_file(d / "e" / kLossFile));
}

TEST(Cli, TrainedCheckpointLoadsAndPredicts) {
  const auto& d = trained_run();
  const auto loss = read_file(d / "run" / kLossFile);
  EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 501);
  const auto w = load_weights<float>(d / "run" / kCheckpointFile);
  EXPECT_EQ(w.config.latent_cardinality, 3);

  const std::string pred = "--config \"" + (d / "run.cfg").string() + "\" --out \"" + (d / "p1").string() +
                           "\" predict --checkpoint \"" + (d / "run" / kCheckpointFile).string() + "\" --scene \"" +
                           (d / "scene.txt").string() + "\" --samples 8";
  ASSERT_EQ(run_cli(pred, d / "log"), 0) << read_file(d / "log");
  std::istringstream in(read_file(d / "p1" / "samples.jsonl"));
  std::string line;
  std::set<int> agents;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    ++lines;
    agents.insert(j.at("agent_id").get<int>());
    EXPECT_EQ(j.at("t_obs").get<int>(), 9);
    EXPECT_EQ(j.at("positions").size(), 3u);
    EXPECT_EQ(j.at("gmm").size(), 3u);
    const int z = j.at("z").get<int>();
    EXPECT_GE(z, 0);
    EXPECT_LT(z, 3);
    for (const auto& p : j.at("positions")) EXPECT_TRUE(std::isfinite(p.at(0).get<double>()));
  }
  EXPECT_EQ(lines, 3 * 8);
  EXPECT_EQ(agents, (std::set<int>{1, 2, 3}));

  // Same seed twice: byte-identical samples. z_best uses a single latent value per agent.
  ASSERT_EQ(run_cli("--seed 0 " + pred, d / "log"), 0);
  const auto first = read_file(d / "p1" / "samples.jsonl");
  ASSERT_EQ(run_cli("--seed 0 " + pred, d / "log"), 0);
  EXPECT_EQ(first, read_file(d / "p1" / "samples.jsonl"));
  ASSERT_EQ(run_cli(pred + " --mode z_best", d / "log"), 0);
  std::istringstream zb(read_file(d / "p1" / "samples.jsonl"));
  std::map<int, std::set<int>> z_per_agent;
  while (std::getline(zb, line)) {
    const auto j = nlohmann::json::parse(line);
    z_per_agent[j.at("agent_id").get<int>()].insert(j.at("z").get<int>());
  }
  for (const auto& [id, zs] : z_per_agent) EXPECT_EQ(zs.size(), 1u) << "agent " << id;
  EXPECT_EQ(run_cli(pred + " --mode sometimes", d / "log"), 2);
  EXPECT_EQ(run_cli(pred + " --t-obs 40", d / "log"), 2);
}

TEST(Cli, PlotIsDeterministicWithOneHistoryPerAgent) {
  const auto& d = trained_run();
  const std::string base = "--config \"" + (d / "run.cfg").string() + "\" --out \"" + (d / "plot").string() + "\" ";
  ASSERT_EQ(run_cli(base + "predict --checkpoint \"" + (d / "run" / kCheckpointFile).string() + "\" --scene \"" +
                        (d / "scene.txt").string() + "\" --samples 30 --t-obs 6",
                    d / "log"),
            0)
      << read_file(d / "log");
  const std::string plot = base + "plot --samples \"" + (d / "plot" / "samples.jsonl").string() + "\" --scene \"" + (d / "scene.txt").string() + "\"";
  ASSERT_EQ(run_cli(plot, d / "log"), 0) << read_file(d / "log");
  const auto svg = read_file(d / "plot" / "plot.svg");
  ASSERT_EQ(run_cli(plot, d / "log"), 0);
  EXPECT_EQ(svg, read_file(d / "plot" / "plot.svg"));

  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (auto p = svg.find(needle); p != std::string::npos; p = svg.find(needle, p + 1)) ++n;
    return n;
  };
  EXPECT_EQ(count("class=\"history\""), 3u);
  EXPECT_EQ(count("class=\"truth\""), 3u);
  EXPECT_EQ(count("class=\"sample\""), 90u);
  std::set<std::string> colors;
  for (auto p = svg.find("class=\"sample\""); p != std::string::npos; p = svg.find("class=\"sample\"", p + 1)) {
    const auto s = svg.find("stroke=\"", p) + 8;
    colors.insert(svg.substr(s, svg.find('"', s) - s));
  }
  EXPECT_GE(colors.size(), 1u);
  EXPECT_LE(colors.size(), 3u);

  write_text(d / "empty.jsonl", "");
  EXPECT_NE(run_cli(base + "plot --samples \"" + (d / "empty.jsonl").string() + "\" --scene \"" + (d / "scene.txt").string() + "\"", d / "log"), 0);
}

TEST(Cli, EvaluateHeadersBonGatingAndBaseline) {
  const auto d = scratch_dir("cli_evaluate");
  const std::string data = std::string(kTinyModel) +
                           "data.synthetic = constant_velocity\ndata.synthetic_scenes = 2\ntrain.steps = 5\n"
                           "eval.samples = 20\neval.bootstrap_resamples = 50\n";
  write_text(d / "run.cfg", data + "out = run\n");
  ASSERT_EQ(run_cli("--config \"" + (d / "run.cfg").string() + "\" train", d / "log"), 0) << read_file(d / "log");
  const std::string ckpt = (d / "run" / kCheckpointFile).string();

  ASSERT_EQ(run_cli("--config \"" + (d / "run.cfg").string() + "\" --out \"" + (d / "plain").string() + "\" evaluate --checkpoint \"" + ckpt + "\"",
                    d / "log"),
            0)
      << read_file(d / "log");
  write_text(d / "bon.cfg", data + "eval.best_of = 1,20\n");
  ASSERT_EQ(run_cli("--config \"" + (d / "bon.cfg").string() + "\" --out \"" + (d / "bon").string() + "\" evaluate --checkpoint \"" + ckpt + "\"",
                    d / "log"),
            0)
      << read_file(d / "log");

  for (const auto& [dir, want_bon] : {std::pair{d / "plain", false}, std::pair{d / "bon", true}}) {
    const auto csv = read_file(dir / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "fold,method,config,metric,value,ci_lo,ci_hi,n");
    const auto nll = read_file(dir / "nll_per_timestep.csv");
    EXPECT_EQ(nll.substr(0, nll.find('\n')), "fold,method,timestep,nll,ci_lo,ci_hi");
    EXPECT_EQ(csv.find(",bon") != std::string::npos, want_bon) << csv;
    if (want_bon) {
      EXPECT_NE(csv.find(",bon1_ade,"), std::string::npos);
      EXPECT_NE(csv.find(",bon20_fde,"), std::string::npos);
    }
    std::istringstream in(csv);
    std::string line;
    bool seen = false;
    while (std::getline(in, line)) {
      if (line.find(",constant_velocity,-,ade,") == std::string::npos) continue;
      seen = true;
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
      ASSERT_EQ(f.size(), 8u);
      EXPECT_LT(std::abs(std::stod(f[4])), 1e-9) << line;
    }
    EXPECT_TRUE(seen) << csv;
  }

  // A checkpoint from a different architecture is refused.
  write_text(d / "other.cfg", data + "model.decoder_hidden = 7\n");
  EXPECT_EQ(run_cli("--config \"" + (d / "other.cfg").string() + "\" --out \"" + (d / "x").string() + "\" evaluate --checkpoint \"" + ckpt + "\"",
                    d / "log"),
            2);
}

TEST(Cli, BenchWritesRuntimeCsv) {
  const auto& d = trained_run();
  ASSERT_EQ(run_cli("--config \"" + (d / "run.cfg").string() + "\" --set data.synthetic_scenes=1 --out \"" + (d / "bench").string() +
                        "\" bench --checkpoint \"" + (d / "run" / kCheckpointFile).string() + "\" --samples 20 --repetitions 2",
                    d / "log"),
            0)
      << read_file(d / "log");
  const auto csv = read_file(d / "bench" / "runtime.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scene,agents,t_obs,measure,mean_s,std_s,median_s");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  for (const char* m : {",full,", ",z_best,", ",online_step,", ",batch_encode,"}) EXPECT_NE(csv.find(m), std::string::npos) << m;
}
