// Drives the hypersphere-ad binary end to end on tiny configurations.
#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hsad_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Outcome run(const std::string& args, const std::string& env = "") {
  static int counter = 0;
  const fs::path base = fs::temp_directory_path() / "hsad_test_cli";
  fs::create_directories(base);
  const fs::path out = base / ("stdout" + std::to_string(counter)), err = base / ("stderr" + std::to_string(counter));
  ++counter;
  const std::string cmd =
      env + " \"" HSAD_CLI_PATH "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

// A few seconds per run: 64 training images of 16x16, two epochs.
fs::path tiny_config(const fs::path& dir, std::uint64_t seed = 0) {
  const json j = {{"synthetic", {{"n_train", 64}, {"n_test_normal", 16}, {"n_test_anomalous", 16}, {"n_pool", 16}}},
                  {"train",
                   {{"pretrain_epochs", 1}, {"train_epochs", 2}, {"warmup_epochs", 1}, {"batch_size", 16}, {"seed", seed}}},
                  {"track_val_auroc", false}};
  const fs::path p = dir / "tiny.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);)
    if (!l.empty()) v.push_back(l);
  return v;
}

}  // namespace

TEST(Cli, HelpForEverySubcommand) {
  EXPECT_EQ(run("--help").code, 0);
  for (const char* sub : {"train", "eval", "ablate", "sweep", "gradcheck", "ingest-ts", "ingest-images"}) {
    const Outcome o = run(std::string(sub) + " --help");
    EXPECT_EQ(o.code, 0) << sub;
    EXPECT_NE(o.out.find("--"), std::string::npos) << sub;
  }
}

TEST(Cli, ConfigErrorsExitTwo) {
  const fs::path dir = scratch("errors");
  const Outcome bad_variant = run("train --variant iae-lstm-xx --out \"" + (dir / "r").string() + "\"");
  EXPECT_EQ(bad_variant.code, 2);
  EXPECT_NE(bad_variant.err.find("iae-lstm-kl-h"), std::string::npos) << bad_variant.err;

  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("train --no-such-flag").code, 2);
  EXPECT_EQ(run("gradcheck --module bogus").code, 2);

  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(run("train --config \"" + (dir / "broken.json").string() + "\"").code, 2);
  std::ofstream(dir / "unknown.json") << R"({"learning_rate": 0.1})";
  EXPECT_EQ(run("train --config \"" + (dir / "unknown.json").string() + "\"").code, 2);
  EXPECT_EQ(run("train --config \"" + (dir / "missing.json").string() + "\"").code, 2);
}

TEST(Cli, TrainWritesRunFilesAndIsDeterministic) {
  const fs::path dir = scratch("train");
  const fs::path cfg = tiny_config(dir);
  const std::string common = "train --config \"" + cfg.string() + "\" --seed 3 --out ";
  const Outcome a = run(common + "\"" + (dir / "a").string() + "\"");
  ASSERT_EQ(a.code, 0) << a.err;
  const Outcome b = run(common + "\"" + (dir / "b").string() + "\"");
  ASSERT_EQ(b.code, 0) << b.err;

  for (const char* f : {"config.json", "metrics.csv", "checkpoint.bin", "checkpoint.json", "summary.json"}) {
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
  }
  const std::string metrics = slurp(dir / "a" / "metrics.csv");
  EXPECT_EQ(metrics, slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(lines(metrics).size(), 3u);  // header + 2 epochs

  const json summary = json::parse(slurp(dir / "a" / "summary.json"));
  EXPECT_EQ(summary["seed"], 3);
  EXPECT_EQ(summary["input_hash"], json::parse(slurp(dir / "b" / "summary.json"))["input_hash"]);
  const double test_auroc = summary["test_auroc"];
  EXPECT_GE(test_auroc, 0.0);
  EXPECT_LE(test_auroc, 1.0);

  // eval re-scores the checkpoint; its AUROC must agree with pair counting on scores.csv.
  const Outcome e = run("eval --run \"" + (dir / "a").string() + "\" --out \"" + (dir / "eval").string() + "\"");
  ASSERT_EQ(e.code, 0) << e.err;
  std::vector<double> scores;
  std::vector<int> labels;
  const auto rows = lines(slurp(dir / "eval" / "scores.csv"));
  ASSERT_EQ(rows.front(), "index,label,score");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::stringstream ss(rows[i]);
    std::string idx, label, score;
    std::getline(ss, idx, ',');
    std::getline(ss, label, ',');
    std::getline(ss, score, ',');
    labels.push_back(std::stoi(label));
    scores.push_back(std::stod(score));
  }
  EXPECT_EQ(scores.size(), 32u);
  EXPECT_NEAR(oracle::auroc_pairs(scores, labels), test_auroc, 1e-12);
}

TEST(Cli, PrecedenceIsFlagThenFileThenDefaults) {
  const fs::path dir = scratch("precedence");
  const fs::path cfg = tiny_config(dir, 7);
  const Outcome o = run("train --config \"" + cfg.string() + "\" --seed 9 --epochs 1 --out \"" + (dir / "r").string() + "\"");
  ASSERT_EQ(o.code, 0) << o.err;
  const json written = json::parse(slurp(dir / "r" / "config.json"));
  EXPECT_EQ(written["train"]["seed"], 9);          // flag beats file
  EXPECT_EQ(written["train"]["train_epochs"], 1);  // flag beats file
  EXPECT_EQ(written["train"]["batch_size"], 16);   // file beats defaults
  EXPECT_EQ(written["train"]["lr"], 3e-4);         // default survives
  EXPECT_EQ(written["synthetic"]["size"], 16);
}

TEST(Cli, OutputRootFromEnvironment) {
  const fs::path dir = scratch("envroot");
  const fs::path cfg = tiny_config(dir);
  const fs::path root = dir / "root";
  const Outcome o = run("train --config \"" + cfg.string() + "\" --epochs 1", "HYPERSPHERE_AD_OUT=\"" + root.string() + "\"");
  ASSERT_EQ(o.code, 0) << o.err;
  std::vector<fs::path> runs;
  for (const auto& entry : fs::directory_iterator(root)) runs.push_back(entry.path());
  ASSERT_EQ(runs.size(), 1u);
  EXPECT_TRUE(fs::exists(runs[0] / "summary.json"));
  EXPECT_NE(runs[0].filename().string().find("s0"), std::string::npos);
}

TEST(Cli, ClassListWritesPerClassTable) {
  const fs::path dir = scratch("classes");
  const Outcome o = run("train --config \"" + tiny_config(dir).string() + "\" --epochs 1 --classes 0,1 --out \"" +
                        (dir / "r").string() + "\"");
  ASSERT_EQ(o.code, 0) << o.err;
  const auto rows = lines(slurp(dir / "r" / "auroc_by_class.csv"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "variant,normal_class,seed,auroc");
  EXPECT_TRUE(fs::exists(dir / "r" / "class0" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "r" / "class1" / "metrics.csv"));
}

TEST(Cli, AblationSuitesHaveFourAndTwelveRows) {
  const fs::path dir = scratch("ablate");
  const std::string cfg = "--config \"" + tiny_config(dir).string() + "\" --epochs 1 ";
  const Outcome gates = run("ablate --suite gates " + cfg + "--out \"" + (dir / "g").string() + "\"");
  ASSERT_EQ(gates.code, 0) << gates.err;
  EXPECT_EQ(lines(slurp(dir / "g" / "ablation.csv")).size(), 5u);
  const Outcome modules = run("ablate --suite modules " + cfg + "--out \"" + (dir / "m").string() + "\"");
  ASSERT_EQ(modules.code, 0) << modules.err;
  EXPECT_EQ(lines(slurp(dir / "m" / "ablation.csv")).size(), 13u);
}

TEST(Cli, SweepWritesCsvAndDat) {
  const fs::path dir = scratch("sweep");
  const Outcome o = run("sweep --config \"" + tiny_config(dir).string() + "\" --epochs 1 --rho 0,0.1 --seeds 1 --out \"" +
                        (dir / "s").string() + "\"");
  ASSERT_EQ(o.code, 0) << o.err;
  const auto csv = lines(slurp(dir / "s" / "sweep.csv"));
  ASSERT_EQ(csv.size(), 3u);
  EXPECT_EQ(csv[0], "variant,rho,n_runs,mean_auroc,std_auroc");
  EXPECT_EQ(lines(slurp(dir / "s" / "sweep.dat")).size(), 3u);
  EXPECT_EQ(run("sweep --rho 0,abc --out \"" + (dir / "bad").string() + "\"").code, 2);
}

TEST(Cli, IngestSeriesCounts) {
  const fs::path dir = scratch("ingest");
  hsad::Rng rng(5);
  {
    std::ofstream csv(dir / "series.csv");
    csv << "t";
    for (int c = 0; c < 26; ++c) csv << ",ch" << c;
    csv << ",flag\n";
    for (int r = 0; r < 1000; ++r) {
      csv << r;
      for (int c = 0; c < 26; ++c) csv << ',' << rng.uniform(-1, 1);
      csv << ',' << (r >= 900 && r < 910 ? 1 : 0) << '\n';
    }
  }
  const Outcome o = run("ingest-ts --csv \"" + (dir / "series.csv").string() + "\" --out \"" + (dir / "ts.bin").string() + "\"");
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.out.rfind("rows 1000 smoothed 990 windows 965 ", 0), 0u) << o.out;
  EXPECT_TRUE(fs::exists(dir / "ts.bin"));
  EXPECT_EQ(run("ingest-ts --csv \"" + (dir / "absent.csv").string() + "\" --out x.bin").code, 2);
}

TEST(Cli, GradcheckPasses) {
  const Outcome o = run("gradcheck --module losses --seed 1");
  EXPECT_EQ(o.code, 0) << o.out;
  EXPECT_NE(o.out.find("all gradients match"), std::string::npos);
}
