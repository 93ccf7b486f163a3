#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/support.hpp"
#include "benchmark_setup.hpp"
#include "mobrisk/eval.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/forest.hpp"
#include "mobrisk/io.hpp"
#include "mobrisk/pipeline.hpp"
#include "mobrisk/pu.hpp"
#include "mobrisk/rank.hpp"
#include "mobrisk/synth.hpp"

namespace {

using namespace mobrisk;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Criterion 1 ------------------------------------------------------------

double auc_by_pairs(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos) {
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  }
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double ap_by_ranks(const std::vector<double>& pos, const std::vector<double>& neg) {
  std::vector<double> all = pos;
  all.insert(all.end(), neg.begin(), neg.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) {
    std::size_t above = 0, pos_above = 0;
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (all[j] > all[i] || (all[j] == all[i] && j <= i)) {
        ++above;
        pos_above += j < pos.size();
      }
    }
    sum += static_cast<double>(pos_above) / static_cast<double>(above);
  }
  return sum / static_cast<double>(pos.size());
}

void metric_oracles(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t total = 2 + rng() % 199;
    const std::size_t n_pos = 1 + rng() % (total - 1);
    std::vector<double> pos(n_pos), neg(total - n_pos);
    const bool coarse = inst % 2 == 0;
    for (auto* v : {&pos, &neg}) {
      for (auto& x : *v) x = coarse ? static_cast<double>(rng() % 8) / 8.0 : u(rng);
    }
    worst = std::max(worst, std::fabs(eval::auc(pos, neg) - auc_by_pairs(pos, neg)));
    worst = std::max(worst, std::fabs(eval::average_precision(pos, neg) - ap_by_ranks(pos, neg)));
  }
  const double secs = seconds_since(t0);
  o.detail << "max |error| " << worst << ", " << secs << " s";
  o.check(worst <= 1e-12, "error above 1e-12");
  o.check(secs < 10.0, "runtime >= 10 s");
}

// Criterion 2 ------------------------------------------------------------

void feature_correctness(Outcome& o) {
  const auto t0 = Clock::now();
  ingest::HourlyVisits uniform{};
  uniform.fill(3);
  const auto e = features::entropy_features(uniform);
  o.check(std::fabs(e.hourly_entropy - std::log(24.0)) <= 1e-9, "hourly entropy != ln 24");
  o.check(std::fabs(e.daily_entropy - std::log(7.0)) <= 1e-9, "daily entropy != ln 7");

  const double r = features::kEarthRadiusMiles;
  double worst = 0.0;
  for (double dlon : {1.0, 10.0, 45.0, 90.0, 135.0, 179.0}) {
    const double oracle = r * dlon * std::numbers::pi / 180.0;
    worst = std::max(worst, std::fabs(features::haversine_miles(0.0, 0.0, 0.0, dlon) - oracle));
    worst = std::max(worst, std::fabs(features::haversine_miles(0.0, -dlon / 2, 0.0, dlon / 2) - oracle));
  }
  o.check(worst <= 1e-6, "equatorial haversine off by more than 1e-6 mile");
  o.check(features::haversine_miles(33.2, -87.5, 33.2, -87.5) == 0.0, "identity distance");

  auto near = [](double a, double b) { return std::fabs(a - b) <= 1e-12; };
  const std::vector<std::int64_t> flat = {10, 10, 10}, two = {5, 15}, ramp = {10, 20, 30}, sparse = {0, 5, 3, 0};
  const auto c0 = features::consistency_features(flat);
  o.check(c0.cv == 0 && c0.trend == 0 && c0.burstiness == 0 && c0.max_jump == 0 && c0.active_ratio == 1,
          "[10,10,10]");
  const auto c1 = features::consistency_features(two);
  o.check(near(c1.cv, 0.5) && near(c1.max_jump, 1.0) && c1.active_ratio == 1.0, "[5,15]");
  o.check(near(features::consistency_features(ramp).trend, 0.5), "[10,20,30] trend");
  o.check(features::consistency_features(sparse).active_ratio == 0.5, "[0,5,3,0] active ratio");

  const double secs = seconds_since(t0);
  o.detail << "haversine max |error| " << worst << " mi, " << secs << " s";
  o.check(secs < 5.0, "runtime >= 5 s");
}

// Benchmark-backed criteria ----------------------------------------------

struct BenchmarkState {
  testing::Benchmark bench;
  testing::SpyRun approach_a;
  double setup_seconds = 0.0;
};

BenchmarkState& state() {
  static BenchmarkState* s = [] {
    const auto t0 = Clock::now();
    auto* st = new BenchmarkState;
    st->bench = testing::make_benchmark();
    st->approach_a = testing::run_spy_protocol(st->bench, pu::Approach::A);
    st->setup_seconds = seconds_since(t0);
    return st;
  }();
  return *s;
}

void spy_benchmark(Outcome& o) {
  const auto& s = state();
  const auto& r = s.approach_a.report;
  o.detail << "AUC " << r.auc << ", AP " << r.average_precision << " (" << r.n_pos << " spy rows vs "
           << r.n_unlabeled << " true-negative rows), " << s.setup_seconds << " s";
  o.check(r.auc >= 0.90, "AUC < 0.90");
  o.check(r.average_precision >= 0.70, "AP < 0.70");
  o.check(s.setup_seconds < 300.0, "runtime >= 5 min");
}

void category_ordering(Outcome& o) {
  const auto m = testing::group_means(state().approach_a.scored, state().bench.latent_illicit);
  o.detail << "true negatives " << m.true_negative << " < quiet " << m.quiet << " < spy " << m.spy
           << " < train " << m.train_positive;
  o.check(m.true_negative < m.quiet, "true negatives >= quiet");
  o.check(m.quiet < m.spy, "quiet >= spy");
  o.check(m.spy < m.train_positive, "spy >= train");
}

void approach_comparison(Outcome& o) {
  const auto c = testing::run_spy_protocol(state().bench, pu::Approach::C);
  const double a_ap = state().approach_a.report.average_precision;
  o.detail << "A AP " << a_ap << " vs C AP " << c.report.average_precision;
  o.check(a_ap >= c.report.average_precision, "A AP < C AP");
}

void naive_bias(Outcome& o) {
  const auto& b = state().bench;
  const auto roles = pu::assign_roles(b.table, pu::Approach::A, false, pu::PuConfig{});
  const Matrix P = b.table.matrix(roles.positives);
  const Matrix U = b.table.matrix(roles.unlabeled);
  std::vector<std::size_t> hidden, hidden_rows;
  for (std::size_t i = 0; i < roles.unlabeled.size(); ++i) {
    if (b.latent_illicit.count(b.table.rows[roles.unlabeled[i]].placekey)) {
      hidden.push_back(i);
      hidden_rows.push_back(roles.unlabeled[i]);
    }
  }
  const Matrix H = b.table.matrix(hidden_rows);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  o.detail << hidden.size() << " hidden rows;";
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    pu::PuConfig cfg;
    cfg.seed = seed;
    forest::ForestConfig fc = cfg.forest;
    fc.seed = seed;
    const auto naive = pu::train_naive_baseline(P, U, fc);
    std::vector<double> naive_hidden;
    for (auto i : hidden) naive_hidden.push_back(naive.unlabeled_scores[i]);
    const double pu_mean = mean(pu::fit_pu_model(P, U, cfg).score(H));
    const double naive_mean = mean(naive_hidden);
    o.detail << " seed " << seed << ": naive " << naive_mean << " vs PU " << pu_mean << ";";
    o.check(naive_mean < pu_mean, "naive >= PU at seed " + std::to_string(seed));
  }
}

void business_screening(Outcome& o) {
  const std::vector<rank::Aggregation> aggs = {rank::Aggregation::Max, rank::Aggregation::Mean,
                                               rank::Aggregation::Min};
  const auto cv = eval::business_cv(state().bench.table, pu::PuConfig{}, 5, aggs);
  const double max_auc = cv.get(rank::Aggregation::Max).auc_summary().mean;
  const double mean_auc = cv.get(rank::Aggregation::Mean).auc_summary().mean;
  const double min_auc = cv.get(rank::Aggregation::Min).auc_summary().mean;
  const double cov10 = cv.get(rank::Aggregation::Max).coverage_summary(2).mean;
  o.detail << "AUC max " << max_auc << " / mean " << mean_auc << " / min " << min_auc << ", top-10% coverage "
           << cov10;
  o.check(max_auc >= 0.80, "max AUC < 0.80");
  o.check(cov10 >= 0.30, "coverage < 3x random");
  o.check(max_auc >= mean_auc && mean_auc >= min_auc, "aggregation ordering");
}

// Criterion 8 ------------------------------------------------------------

double exhaustive_best(const std::vector<rank::KnapsackItem>& items, double budget) {
  const std::size_t n = items.size();
  double best = 0.0;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    double cost = 0.0, value = 0.0;
    for (std::uint32_t m = mask; m; m &= m - 1) {
      const int i = __builtin_ctz(m);
      cost += items[static_cast<std::size_t>(i)].cost;
      value += items[static_cast<std::size_t>(i)].value;
    }
    if (cost <= budget && value > best) best = value;
  }
  return best;
}

double sum_values(const std::vector<rank::KnapsackItem>& items, const std::vector<std::size_t>& chosen) {
  double v = 0.0;
  for (auto i : chosen) v += items[i].value;
  return v;
}

void allocation_optimality(Outcome& o) {
  std::mt19937_64 rng(8);
  std::size_t mismatches = 0, greedy_mismatches = 0;
  for (int inst = 0; inst < 500; ++inst) {
    const std::size_t n = 1 + rng() % 20;
    std::vector<rank::KnapsackItem> items(n);
    // Dyadic values keep every subset sum exact.
    for (auto& it : items) {
      it.value = static_cast<double>(rng() % 1025) / 1024.0;
      it.cost = static_cast<double>(1 + rng() % 10);
    }
    const double budget = static_cast<double>(rng() % 60);
    const auto chosen = rank::knapsack_exact(items, budget);
    double cost = 0.0;
    for (auto i : chosen) cost += items[i].cost;
    if (cost > budget || sum_values(items, chosen) != exhaustive_best(items, budget)) ++mismatches;

    std::vector<rank::KnapsackItem> unit = items;
    for (auto& it : unit) it.cost = 1.0;
    std::vector<std::size_t> top(n);
    std::iota(top.begin(), top.end(), std::size_t{0});
    std::stable_sort(top.begin(), top.end(), [&](auto a, auto b) { return unit[a].value > unit[b].value; });
    top.resize(std::min<std::size_t>(n, static_cast<std::size_t>(std::floor(budget / 3.0))));
    std::sort(top.begin(), top.end());
    if (rank::knapsack_greedy(unit, budget / 3.0) != top) ++greedy_mismatches;
  }
  o.detail << mismatches << " exact/exhaustive mismatches, " << greedy_mismatches
           << " greedy/top-floor(B) mismatches over 500 instances";
  o.check(mismatches == 0, "exact knapsack not optimal");
  o.check(greedy_mismatches == 0, "unit-cost greedy differs from top-floor(B)");
}

// Criterion 9 ------------------------------------------------------------

void leakage_and_determinism(Outcome& o) {
  synth::SynthConfig sc;
  sc.n_establishments = 300;
  sc.n_weeks = 20;
  const auto pop = synth::generate(sc);
  const auto merged = ingest::merge_and_label(pop.visits, ingest::aggregate_ads(pop.ad_records()));
  const Date train_end = sc.start_date + std::chrono::days{7 * 11};
  const auto partisan = pop.partisan_table();
  const auto full = features::build_feature_table(merged.rows, pop.geo, partisan, train_end);

  // Deleting evaluation weeks leaves every remaining row unchanged.
  std::vector<ingest::LabeledObservation> training_only;
  for (const auto& r : merged.rows) {
    if (r.record.week_start <= train_end) training_only.push_back(r);
  }
  const auto trimmed = features::build_feature_table(training_only, pop.geo, partisan, train_end);
  std::size_t k = 0, diffs = 0;
  for (const auto& row : full.rows) {
    if (row.week_start > train_end) continue;
    if (k >= trimmed.rows.size() || trimmed.rows[k].placekey != row.placekey ||
        trimmed.rows[k].features.values != row.features.values) {
      ++diffs;
    }
    ++k;
  }
  o.check(k == trimmed.rows.size() && diffs == 0, "training rows changed after deleting evaluation weeks");

  // Rewriting evaluation-week traffic leaves the holdout consistency features unchanged.
  auto perturbed = merged.rows;
  for (auto& r : perturbed) {
    if (r.record.week_start > train_end) {
      for (auto& h : *r.record.hourly_visits) h = h * 3 + 1;
    }
  }
  const auto shifted = features::build_feature_table(perturbed, pop.geo, partisan, train_end);
  std::size_t holdout_diffs = 0;
  for (std::size_t i = 0; i < full.rows.size(); ++i) {
    for (std::size_t f = features::kCv; f <= features::kActiveRatio; ++f) {
      holdout_diffs += full.rows[i].features[f] != shifted.rows[i].features[f];
    }
  }
  o.check(holdout_diffs == 0, "consistency features depend on evaluation weeks");

  testing::TempDir data, out1, out2;
  pipeline::run_synth(sc, data.path());
  pipeline::RunConfig rc;
  const auto a = pipeline::run_pipeline(data.path(), out1.path(), rc);
  const auto b = pipeline::run_pipeline(data.path(), out2.path(), rc);
  const bool same = io::read_text_file(a.manifest_path) == io::read_text_file(b.manifest_path);
  o.detail << diffs << " changed training rows, " << holdout_diffs << " changed consistency values, manifests "
           << (same ? "identical" : "differ") << " (" << a.artifacts.size() << " artifacts)";
  o.check(same, "pipeline rerun changed the manifest");
  o.check(a.artifacts.size() == pipeline::kPipelineStages, "artifact count");
}

// Criterion 10 -----------------------------------------------------------

void importance_sanity(Outcome& o) {
  const std::size_t n = 500;
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix one(n, 1), two(n, 2);
  std::vector<std::uint8_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = u(rng);
    if (x == 0.0) x = 0.25;
    one(i, 0) = x;
    two(i, 0) = x;
    two(i, 1) = 4.2;
    y[i] = x > 0.0;
  }
  forest::ForestConfig fc;
  fc.n_trees = 50;
  fc.seed = 3;
  const auto f1 = forest::fit_forest(one, y, fc);
  const auto f2 = forest::fit_forest(two, y, fc);
  const auto r1 = eval::permutation_importance([&](const Matrix& X) { return f1.predict_proba(X); }, one, y, 10, 5);
  const auto r2 = eval::permutation_importance([&](const Matrix& X) { return f2.predict_proba(X); }, two, y, 10, 5);
  o.detail << "separable drop " << r1.drops[0] << ", constant drop " << r2.drops[1];
  o.check(r1.drops[0] >= 0.4, "separable feature drop < 0.4");
  o.check(r2.drops[1] == 0.0, "constant feature drop != 0");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"metric oracles", metric_oracles},
      {"feature correctness", feature_correctness},
      {"spy-protocol benchmark", spy_benchmark},
      {"category ordering", category_ordering},
      {"approach comparison", approach_comparison},
      {"naive-classifier bias", naive_bias},
      {"business-level screening", business_screening},
      {"allocation optimality", allocation_optimality},
      {"leakage and determinism", leakage_and_determinism},
      {"permutation importance", importance_sanity},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failures += !o.pass;
    std::printf("%s %zu %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.str().c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
