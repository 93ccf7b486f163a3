#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "mobrisk/eval.hpp"
#include "support.hpp"

namespace mobrisk::eval {
namespace {

// Direct pair enumeration: wins count 1, ties 1/2.
double auc_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// For each positive, the items ranked at or above it are those with a higher
// score plus tied items that come no later in the positives-then-negatives
// input order.
double ap_oracle(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    std::size_t above = 0, pos_above = 0;
    for (std::size_t j = 0; j < all.size(); ++j) {
      const bool ranked_above = all[j] > all[i] || (all[j] == all[i] && j <= i);
      if (!ranked_above) continue;
      ++above;
      pos_above += j < pos.size();
    }
    sum += static_cast<double>(pos_above) / static_cast<double>(above);
  }
  return sum / static_cast<double>(pos.size());
}

std::vector<double> draw(std::mt19937_64& rng, std::size_t n, bool coarse) {
  std::vector<double> v(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : v) x = coarse ? static_cast<double>(rng() % 10) / 10.0 : u(rng);
  return v;
}

TEST(Auc, Examples) {
  EXPECT_EQ(auc(std::vector{0.9, 0.8}, std::vector{0.1, 0.2}), 1.0);
  EXPECT_EQ(auc(std::vector{0.5}, std::vector{0.5}), 0.5);
  EXPECT_EQ(auc(std::vector{0.9, 0.3}, std::vector{0.5, 0.1}), 0.75);
  EXPECT_THROW(auc(std::vector<double>{}, std::vector{0.1}), std::invalid_argument);
}

TEST(AveragePrecision, Examples) {
  EXPECT_EQ(average_precision(std::vector{0.9, 0.8}, std::vector{0.1, 0.2}), 1.0);
  EXPECT_EQ(average_precision(std::vector{0.1}, std::vector{0.9}), 0.5);
  EXPECT_NEAR(average_precision(std::vector{0.9, 0.4}, std::vector{0.6}), 0.5 + (2.0 / 3.0) * 0.5, 1e-15);
}

TEST(Metrics, MatchOraclesOnRandomInstances) {
  std::mt19937_64 rng(2024);
  for (int inst = 0; inst < 1000; ++inst) {
    const bool coarse = inst % 2 == 0;
    const std::size_t n_pos = 1 + rng() % 100;
    const std::size_t n_neg = 1 + rng() % 100;
    const auto pos = draw(rng, n_pos, coarse);
    const auto neg = draw(rng, n_neg, coarse);
    ASSERT_NEAR(auc(pos, neg), auc_oracle(pos, neg), 1e-12);
    ASSERT_NEAR(average_precision(pos, neg), ap_oracle(pos, neg), 1e-12);
  }
}

TEST(Auc, SwapComplementsWithoutTies) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const auto pos = draw(rng, 1 + rng() % 50, false);
    const auto neg = draw(rng, 1 + rng() % 50, false);
    EXPECT_NEAR(auc(pos, neg) + auc(neg, pos), 1.0, 1e-12);
  }
}

TEST(Recovery, ExamplesAndMonotone) {
  const std::vector<double> s = {0.6, 0.6, 0.8};
  const std::vector<double> t = {0.5, 0.6, 0.7};
  const auto r = recovery_rate(s, t);
  EXPECT_EQ(r[0].second, 1.0);
  EXPECT_EQ(r[1].second, 1.0 / 3.0);
  EXPECT_EQ(r[2].second, 1.0 / 3.0);

  std::mt19937_64 rng(8);
  const auto scores = draw(rng, 300, true);
  std::vector<double> grid;
  for (int i = 0; i <= 20; ++i) grid.push_back(i / 20.0);
  const auto curve = recovery_rate(scores, grid);
  for (std::size_t i = 1; i < curve.size(); ++i) EXPECT_LE(curve[i].second, curve[i - 1].second);
}

TEST(Percentile, NearestRank) {
  const std::vector<double> v = {15, 20, 35, 40, 50};
  EXPECT_EQ(nearest_rank_percentile(v, 0), 15);
  EXPECT_EQ(nearest_rank_percentile(v, 30), 20);
  EXPECT_EQ(nearest_rank_percentile(v, 40), 20);
  EXPECT_EQ(nearest_rank_percentile(v, 50), 35);
  EXPECT_EQ(nearest_rank_percentile(v, 100), 50);
  EXPECT_THROW(nearest_rank_percentile({}, 50), std::invalid_argument);
}

std::vector<std::pair<std::string, double>> ranked_deltas(std::size_t n) {
  std::vector<std::pair<std::string, double>> d;
  for (std::size_t i = 1; i <= n; ++i) d.emplace_back("e" + std::to_string(i), static_cast<double>(i) / n);
  return d;
}

TEST(Coverage, Examples) {
  const auto d = ranked_deltas(100);
  std::unordered_set<std::string> top10;
  for (int i = 91; i <= 100; ++i) top10.insert("e" + std::to_string(i));
  EXPECT_EQ(coverage_at_budget(d, top10, 10), 1.0);
  EXPECT_EQ(coverage_at_budget(d, {"e100"}, 1), 1.0);

  // Holdout every tenth establishment: exactly one falls in the top 10%.
  std::unordered_set<std::string> interleaved;
  for (int i = 5; i <= 100; i += 10) interleaved.insert("e" + std::to_string(i));
  EXPECT_NEAR(coverage_at_budget(d, interleaved, 10), 0.10, 1e-15);

  EXPECT_THROW(coverage_at_budget(d, {"missing"}, 10), std::invalid_argument);
}

TEST(Coverage, MonotoneInBudget) {
  std::mt19937_64 rng(12);
  for (int inst = 0; inst < 100; ++inst) {
    std::vector<std::pair<std::string, double>> d;
    std::unordered_set<std::string> hold;
    for (int i = 0; i < 80; ++i) {
      d.emplace_back("e" + std::to_string(i), static_cast<double>(rng() % 20));
      if (rng() % 5 == 0) hold.insert("e" + std::to_string(i));
    }
    if (hold.empty()) hold.insert("e0");
    double prev = 0.0;
    for (double k = 1; k <= 100; k += 3) {
      const double c = coverage_at_budget(d, hold, k);
      EXPECT_GE(c, prev);
      prev = c;
    }
  }
}

TEST(MeanSd, SampleStandardDeviation) {
  const auto r = mean_sd(std::vector{2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
  EXPECT_DOUBLE_EQ(r.mean, 5.0);
  EXPECT_NEAR(r.sd, std::sqrt(32.0 / 7.0), 1e-12);
  EXPECT_EQ(mean_sd(std::vector{3.0}).sd, 0.0);
}

TEST(Folds, TruePartitionOfEstablishments) {
  std::vector<std::string> keys;
  for (int i = 0; i < 37; ++i) keys.push_back("pk-" + std::to_string(i));
  keys.push_back("pk-3");
  const auto folds = establishment_folds(keys, 5, 42);
  ASSERT_EQ(folds.size(), 5u);
  std::multiset<std::string> seen;
  for (const auto& f : folds) {
    EXPECT_GE(f.size(), 7u);
    EXPECT_LE(f.size(), 8u);
    seen.insert(f.begin(), f.end());
  }
  EXPECT_EQ(seen.size(), 37u);
  EXPECT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), 37u);
  EXPECT_EQ(folds, establishment_folds(keys, 5, 42));
  EXPECT_THROW(establishment_folds(keys, 1, 42), std::invalid_argument);
  EXPECT_THROW(establishment_folds({"a", "b"}, 5, 42), std::invalid_argument);
}

TEST(SpyReport, NegativesAndGroups) {
  const Date d = parse_date_or_throw("2024-01-01");
  std::vector<pu::ScoredObservation> scored = {
      {"s1", d, LabelCategory::IllicitActive, pu::Role::Spy, 0.9},
      {"s2", d, LabelCategory::IllicitActive, pu::Role::Spy, 0.4},
      {"t1", d, LabelCategory::IllicitActive, pu::Role::TrainPositive, 0.95},
      {"q1", d, LabelCategory::IllicitQuiet, pu::Role::QuietHeldOut, 0.7},
      {"n1", d, LabelCategory::NeverAsw, pu::Role::Unlabeled, 0.6},
      {"n2", d, LabelCategory::NeverAsw, pu::Role::Unlabeled, 0.1},
  };
  const auto plain = evaluate_spy(scored);
  EXPECT_EQ(plain.n_pos, 2u);
  EXPECT_EQ(plain.n_unlabeled, 2u);
  EXPECT_EQ(plain.auc, 0.75);
  EXPECT_FALSE(plain.auc_all_unlabeled);

  const std::unordered_set<std::string> hidden = {"n1"};
  const auto truth = evaluate_spy(scored, &hidden);
  EXPECT_EQ(truth.n_unlabeled, 1u);
  EXPECT_EQ(truth.auc, 1.0);
  EXPECT_EQ(*truth.auc_all_unlabeled, 0.75);
  EXPECT_EQ(truth.negatives, "unlabeled_true_negative");
  bool found = false;
  for (const auto& [k, v] : truth.category_means) {
    if (k == "truth:hidden_positive") {
      EXPECT_EQ(v, 0.6);
      found = true;
    }
  }
  EXPECT_TRUE(found);
  EXPECT_NE(truth.summary_table().find("AUC"), std::string::npos);

  std::vector<pu::ScoredObservation> no_spies(scored.begin() + 2, scored.end());
  EXPECT_THROW(evaluate_spy(no_spies), std::invalid_argument);
}

TEST(Importance, ConstantColumnAndSeparableColumn) {
  const std::size_t n = 400;
  Matrix X(n, 2);
  std::vector<std::uint8_t> mask(n);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    X(i, 0) = u(rng);
    X(i, 1) = 3.0;
    mask[i] = X(i, 0) > 0.0;
  }
  const Scorer identity_on_first = [](const Matrix& M) {
    std::vector<double> s(M.rows());
    for (std::size_t i = 0; i < M.rows(); ++i) s[i] = M(i, 0) + M(i, 1);
    return s;
  };
  const auto r = permutation_importance(identity_on_first, X, mask, 10, 7);
  EXPECT_EQ(r.baseline_auc, 1.0);
  EXPECT_EQ(r.drops[1], 0.0);
  EXPECT_GE(r.drops[0], 0.4);
  const auto again = permutation_importance(identity_on_first, X, mask, 10, 7);
  EXPECT_EQ(again.drops, r.drops);
}

}  // namespace
}  // namespace mobrisk::eval
