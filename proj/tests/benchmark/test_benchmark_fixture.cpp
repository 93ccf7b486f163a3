#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "benchmark_setup.hpp"
#include "mobrisk/io.hpp"
#include "mobrisk/pipeline.hpp"

// Seed-42 benchmark on the default synthetic population. The committed
// fixture pins the headline numbers so regressions in any stage surface as
// a diff; set MOBRISK_WRITE_FIXTURE=1 to regenerate it.

namespace mobrisk {
namespace {

const testing::Benchmark& bench() {
  static const testing::Benchmark b = testing::make_benchmark();
  return b;
}

const testing::SpyRun& approach_a() {
  static const testing::SpyRun r = testing::run_spy_protocol(bench(), pu::Approach::A);
  return r;
}

const std::filesystem::path kFixture = std::filesystem::path(MOBRISK_FIXTURE_DIR) / "benchmark_seed42.json";

nlohmann::json observed() {
  const auto& r = approach_a();
  const auto m = testing::group_means(r.scored, bench().latent_illicit);
  return {{"spy_auc", r.report.auc},
          {"spy_ap", r.report.average_precision},
          {"mean_true_negative", m.true_negative},
          {"mean_hidden_positive", m.hidden_positive},
          {"mean_quiet", m.quiet},
          {"mean_spy", m.spy},
          {"mean_train_positive", m.train_positive}};
}

TEST(BenchmarkFixture, MatchesCommittedValues) {
  const nlohmann::json now = observed();
  if (const char* w = std::getenv("MOBRISK_WRITE_FIXTURE"); w && std::string(w) == "1") {
    io::write_text_file(kFixture, now.dump(2) + "\n");
  }
  ASSERT_TRUE(std::filesystem::exists(kFixture)) << kFixture;
  const auto committed = nlohmann::json::parse(io::read_text_file(kFixture));
  for (const auto& [key, value] : committed.items()) {
    EXPECT_NEAR(now.at(key).get<double>(), value.get<double>(), 1e-9) << key;
  }
}

TEST(BenchmarkFixture, PositivesOutscoreTrueNegatives) {
  const auto m = testing::group_means(approach_a().scored, bench().latent_illicit);
  EXPECT_GE(m.train_positive - m.true_negative, 0.2);
}

TEST(BenchmarkFixture, QuietWeeksScoreBetweenNegativesAndPositives) {
  const auto m = testing::group_means(approach_a().scored, bench().latent_illicit);
  EXPECT_GT(m.quiet, m.true_negative);
  EXPECT_LT(m.quiet, m.train_positive);
}

TEST(BenchmarkFixture, MoreIterationsDoNotLowerSweepAuc) {
  const auto cells = pipeline::sweep(bench().table, pu::PuConfig{}, pipeline::SweepGrid{{5, 20}, {30}, {100}},
                                     &bench().latent_illicit);
  ASSERT_EQ(cells.size(), 2u);
  const auto& k5 = cells[0].k == 5 ? cells[0] : cells[1];
  const auto& k20 = cells[0].k == 20 ? cells[0] : cells[1];
  EXPECT_GE(k20.auc, k5.auc);
}

}  // namespace
}  // namespace mobrisk
