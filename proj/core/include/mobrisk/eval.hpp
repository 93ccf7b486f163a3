#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobrisk/features.hpp"
#include "mobrisk/matrix.hpp"
#include "mobrisk/pu.hpp"
#include "mobrisk/rank.hpp"

namespace mobrisk::eval {

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Exact via the rank-sum statistic.
double auc(std::span<const double> pos, std::span<const double> neg);

/// Mean precision at the ranks of the positives, with the combined list
/// sorted by descending score and ties kept in input order (positives
/// first, then negatives).
double average_precision(std::span<const double> pos, std::span<const double> neg);

/// Fraction of scores strictly above each threshold.
std::vector<std::pair<double, double>> recovery_rate(std::span<const double> spy_scores,
                                                     std::span<const double> thresholds);

/// Nearest-rank percentile: the value at rank ceil(p/100 * N) of the sorted
/// values (rank 1 for p = 0).
double nearest_rank_percentile(std::span<const double> values, double p);

/// Fraction of holdout establishments whose score reaches the
/// (100 - k_percent)th percentile of all scores.
double coverage_at_budget(std::span<const std::pair<std::string, double>> delta,
                          const std::unordered_set<std::string>& holdout, double k_percent);

inline const std::vector<double> kDefaultRecoveryThresholds = {0.3, 0.5, 0.7};
inline constexpr std::array<double, 4> kCoverageBudgets = {1.0, 5.0, 10.0, 20.0};

struct MetricReport {
  double auc = 0.0;
  double average_precision = 0.0;
  std::vector<std::pair<double, double>> recovery;
  std::vector<std::pair<std::string, double>> category_means;
  std::size_t n_pos = 0;
  std::size_t n_unlabeled = 0;
  /// "unlabeled" or, when ground truth is supplied, "unlabeled_true_negative".
  std::string negatives = "unlabeled";
  /// Spy metrics against every unlabeled row, reported when ground truth
  /// narrows the primary negatives.
  std::optional<double> auc_all_unlabeled;
  std::optional<double> ap_all_unlabeled;

  nlohmann::json to_json() const;
  std::string summary_table() const;
};

/// Spy-protocol metrics from scored observations: spies are the positives,
/// unlabeled Never-ASW rows the negatives. With `latent_illicit`, negatives
/// are limited to establishments outside that set.
MetricReport evaluate_spy(std::span<const pu::ScoredObservation> scored,
                          const std::unordered_set<std::string>* latent_illicit = nullptr,
                          std::span<const double> thresholds = kDefaultRecoveryThresholds);

/// Mean score per role and per category (plus hidden/true-negative groups
/// when ground truth is given).
std::vector<std::pair<std::string, double>> category_means(
    std::span<const pu::ScoredObservation> scored,
    const std::unordered_set<std::string>* latent_illicit = nullptr);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation across folds
};
MeanSd mean_sd(std::span<const double> xs);

struct CvAggregationResult {
  rank::Aggregation aggregation = rank::Aggregation::Max;
  std::vector<double> fold_auc;
  std::vector<std::array<double, 4>> fold_coverage;  // at kCoverageBudgets

  MeanSd auc_summary() const;
  MeanSd coverage_summary(std::size_t budget_index) const;
};

struct BusinessCvResult {
  std::vector<std::vector<std::string>> folds;  // holdout establishments per fold
  std::vector<CvAggregationResult> by_aggregation;

  const CvAggregationResult& get(rank::Aggregation a) const;
  nlohmann::json to_json() const;
  std::string summary_table() const;
};

/// Establishment-level k-fold cross-validation over the advertised
/// establishments. Each fold trains on the advertised weeks of the other
/// folds against Never-ASW weeks, scores every week of the holdout and
/// unlabeled establishments, and ranks holdout against unlabeled
/// establishments under each aggregation.
BusinessCvResult business_cv(const features::FeatureTable& table, const pu::PuConfig& cfg,
                             std::size_t folds, std::span<const rank::Aggregation> aggregations);

/// Round-robin assignment of shuffled positive establishments to folds.
std::vector<std::vector<std::string>> establishment_folds(std::vector<std::string> positives,
                                                          std::size_t folds, std::uint64_t seed);

using Scorer = std::function<std::vector<double>(const Matrix&)>;

struct ImportanceResult {
  double baseline_auc = 0.0;
  std::vector<double> drops;  // per column
  std::vector<std::pair<std::string, double>> group_totals;  // when X has the canonical width
};

/// Mean AUC drop per column over `repeats` seeded shuffles of that column.
ImportanceResult permutation_importance(const Scorer& scorer, const Matrix& X,
                                        std::span<const std::uint8_t> pos_mask,
                                        std::size_t repeats, std::uint64_t seed);

}  // namespace mobrisk::eval
