#pragma once

#include <string>
#include <unordered_set>
#include <vector>

#include "mobrisk/eval.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/ingest.hpp"
#include "mobrisk/pu.hpp"
#include "mobrisk/synth.hpp"

namespace mobrisk::testing {

/// Default synthetic population (seed 42) carried through ingest and
/// features.
struct Benchmark {
  synth::SynthOutput population;
  features::FeatureTable table;
  std::unordered_set<std::string> latent_illicit;
};

inline Benchmark make_benchmark(const synth::SynthConfig& cfg = {}) {
  Benchmark b;
  b.population = synth::generate(cfg);
  const auto filtered = ingest::filter_population(b.population.visits);
  const auto merged = ingest::merge_and_label(filtered.kept, ingest::aggregate_ads(b.population.ad_records()));
  b.table = features::build_feature_table(merged.rows, b.population.geo, b.population.partisan_table());
  b.latent_illicit = synth::latent_illicit(b.population.truth);
  return b;
}

struct SpyRun {
  pu::TrainResult trained;
  std::vector<pu::ScoredObservation> scored;
  eval::MetricReport report;
};

inline SpyRun run_spy_protocol(const Benchmark& b, pu::Approach approach, const pu::PuConfig& cfg = {}) {
  SpyRun r{pu::train(b.table, cfg, approach, true), {}, {}};
  r.scored = pu::score_table(b.table, r.trained.model);
  r.report = eval::evaluate_spy(r.scored, &b.latent_illicit);
  return r;
}

struct GroupMeans {
  double true_negative = 0.0;
  double hidden_positive = 0.0;
  double quiet = 0.0;
  double spy = 0.0;
  double train_positive = 0.0;
};

inline GroupMeans group_means(const std::vector<pu::ScoredObservation>& scored,
                              const std::unordered_set<std::string>& latent_illicit) {
  double sum[5] = {}, n[5] = {};
  for (const auto& s : scored) {
    int g = -1;
    switch (s.role) {
      case pu::Role::TrainPositive: g = 4; break;
      case pu::Role::Spy: g = 3; break;
      case pu::Role::QuietHeldOut: g = 2; break;
      case pu::Role::Unlabeled:
        if (s.category == LabelCategory::NeverAsw) g = latent_illicit.count(s.placekey) ? 1 : 0;
        break;
    }
    if (g < 0) continue;
    sum[g] += s.score;
    n[g] += 1.0;
  }
  auto mean = [&](int g) { return n[g] > 0.0 ? sum[g] / n[g] : 0.0; };
  return {mean(0), mean(1), mean(2), mean(3), mean(4)};
}

}  // namespace mobrisk::testing
