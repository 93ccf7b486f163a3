#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include <nlohmann/json.hpp>

#include "../unit/support.hpp"
#include "mobrisk/io.hpp"

namespace mobrisk {
namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(MOBRISK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

// Small population and a light ensemble keep the end-to-end runs quick.
fs::path write_config(const testing::TempDir& dir) {
  const nlohmann::json cfg = {
      {"synth", {{"n_establishments", 150}, {"n_weeks", 10}, {"illicit_fraction", 0.2}}},
      {"pu", {{"k", 3}, {"forest", {{"n_trees", 10}, {"max_depth", 8}}}}}};
  io::write_text_file(dir / "config.json", cfg.dump());
  return dir / "config.json";
}

TEST(Cli, SynthThenRunAllIsReproducible) {
  testing::TempDir dir;
  const auto cfg = write_config(dir);
  const auto data = dir / "data";
  ASSERT_EQ(run("--config " + quoted(cfg) + " synth --out-dir " + quoted(data)), 0);
  EXPECT_TRUE(fs::exists(data / "pois.jsonl"));
  EXPECT_TRUE(fs::exists(data / "truth.csv"));

  ASSERT_EQ(run("--config " + quoted(cfg) + " run --all --data-dir " + quoted(data) + " --out-dir " +
                quoted(dir / "out1")),
            0);
  ASSERT_EQ(run("--config " + quoted(cfg) + " --threads 1 run --all --data-dir " + quoted(data) +
                " --out-dir " + quoted(dir / "out2")),
            0);
  const auto m1 = io::read_text_file(dir / "out1" / "manifest.json");
  EXPECT_EQ(m1, io::read_text_file(dir / "out2" / "manifest.json"));
  const auto manifest = nlohmann::json::parse(m1);
  EXPECT_EQ(manifest.at("artifacts").size(), 7u);
  for (const auto& a : manifest.at("artifacts")) {
    const auto p = dir / "out1" / a.at("path").get<std::string>();
    EXPECT_EQ(io::sha256_hex(io::read_text_file(p)), a.at("sha256").get<std::string>());
  }
}

TEST(Cli, SubcommandsChain) {
  testing::TempDir dir;
  const auto cfg = write_config(dir);
  const auto data = dir / "data";
  const std::string c = "--config " + quoted(cfg) + " ";
  ASSERT_EQ(run(c + "synth --out-dir " + quoted(data)), 0);
  ASSERT_EQ(run(c + "ingest --pois " + quoted(data / "pois.jsonl") + " --ads " + quoted(data / "ads.csv") +
                " --out " + quoted(dir / "labeled.jsonl")),
            0);
  ASSERT_EQ(run(c + "features --labeled " + quoted(dir / "labeled.jsonl") + " --geo " +
                quoted(data / "geo.csv") + " --partisan " + quoted(data / "partisan.csv") + " --out " +
                quoted(dir / "features.csv")),
            0);
  ASSERT_EQ(run(c + "train --features " + quoted(dir / "features.csv") + " --approach B --out " +
                quoted(dir / "model.bundle")),
            0);
  ASSERT_EQ(run(c + "score --model " + quoted(dir / "model.bundle") + " --features " +
                quoted(dir / "features.csv") + " --out " + quoted(dir / "scores.jsonl")),
            0);
  ASSERT_EQ(run(c + "evaluate --scores " + quoted(dir / "scores.jsonl") + " --truth " +
                quoted(data / "truth.csv") + " --out " + quoted(dir / "metrics.json")),
            0);
  ASSERT_EQ(run(c + "evaluate --features " + quoted(dir / "features.csv") + " --cv 3 --aggregation max,min" +
                " --out " + quoted(dir / "cv.json")),
            0);
  ASSERT_EQ(run(c + "rank --scores " + quoted(dir / "scores.jsonl") + " --aggregation mean --out " +
                quoted(dir / "ranks.csv")),
            0);
  io::write_text_file(dir / "costs.csv", "placekey,cost\n");
  ASSERT_EQ(run(c + "allocate --ranks " + quoted(dir / "ranks.csv") + " --costs " + quoted(dir / "costs.csv") +
                " --budget 5 --mode greedy --out " + quoted(dir / "plan.json")),
            0);
  ASSERT_EQ(run(c + "sweep --features " + quoted(dir / "features.csv") + " --k-grid 1,2 --depth-grid 4" +
                " --trees-grid 5 --out " + quoted(dir / "sweep.csv")),
            0);

  const auto metrics = nlohmann::json::parse(io::read_text_file(dir / "metrics.json"));
  EXPECT_EQ(metrics.at("negatives"), "unlabeled_true_negative");
  EXPECT_TRUE(fs::exists(dir / "metrics.txt"));
  const auto plan = nlohmann::json::parse(io::read_text_file(dir / "plan.json"));
  EXPECT_EQ(plan.at("n_selected"), 5);
  EXPECT_EQ(plan.at("mode"), "greedy");
  EXPECT_EQ(io::split_lines(io::read_text_file(dir / "sweep.csv")).size(), 3u);
  const auto cv = nlohmann::json::parse(io::read_text_file(dir / "cv.json"));
  EXPECT_TRUE(cv.contains("config"));
}

TEST(Cli, ExitCodes) {
  testing::TempDir dir;
  const auto cfg = write_config(dir);
  const auto data = dir / "data";
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --approach Z --features x --out y"), 2);
  EXPECT_EQ(run("allocate --ranks x --mode sideways"), 2);

  ASSERT_EQ(run("--config " + quoted(cfg) + " synth --out-dir " + quoted(data)), 0);
  EXPECT_EQ(run("ingest --pois " + quoted(dir / "nope.jsonl") + " --ads " + quoted(data / "ads.csv") +
                " --out " + quoted(dir / "l.jsonl")),
            11);
  fs::remove(data / "geo.csv");
  EXPECT_EQ(run("--config " + quoted(cfg) + " run --all --data-dir " + quoted(data) + " --out-dir " +
                quoted(dir / "out")),
            12);
  EXPECT_EQ(run("score --model " + quoted(dir / "missing.bundle") + " --features " + quoted(dir / "f.csv") +
                " --out " + quoted(dir / "s.jsonl")),
            14);
}

}  // namespace
}  // namespace mobrisk
