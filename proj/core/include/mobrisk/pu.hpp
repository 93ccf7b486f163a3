#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobrisk/common.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/forest.hpp"
#include "mobrisk/matrix.hpp"

namespace mobrisk::pu {

enum class SpyUnit { Establishment, ObservationWeek };

/// Handling of unadvertised weeks of advertised establishments:
/// A excludes them from training, B adds them to the unlabeled pool and
/// C adds them to the positives.
enum class Approach { A, B, C };

enum class Role { TrainPositive, Spy, Unlabeled, QuietHeldOut };

std::string_view to_string(SpyUnit u);
std::string_view to_string(Approach a);
std::string_view to_string(Role r);
SpyUnit spy_unit_from_string(std::string_view s);
Approach approach_from_string(std::string_view s);
Role role_from_string(std::string_view s);

struct PuConfig {
  std::uint32_t k = 50;
  forest::ForestConfig forest;
  std::uint64_t seed = 42;
  double spy_fraction = 0.2;
  SpyUnit spy_unit = SpyUnit::Establishment;

  void validate() const;
  nlohmann::json to_json() const;
  static PuConfig from_json(const nlohmann::json& j);
};

class PuModel {
 public:
  std::vector<forest::Forest> forests;
  PuConfig config;
  Approach approach = Approach::A;
  std::vector<std::string> feature_names;
  /// Establishments (or "placekey|week" keys in week mode) hidden as spies.
  std::vector<std::string> spy_keys;

  /// Mean of the per-iteration forest probabilities, summed in iteration order.
  std::vector<double> score(const Matrix& X) const;
  /// One vector per iteration.
  std::vector<std::vector<double>> iteration_scores(const Matrix& X) const;

  std::string serialize() const;
  static PuModel deserialize(std::string_view bytes);
};

struct BaggingResult {
  PuModel model;
  std::vector<double> positive_scores;
  std::vector<double> unlabeled_scores;
};

/// Each iteration fits a forest on P (label 1) against |P| rows drawn from U
/// without replacement (label 0); every row of P and U is then scored by the
/// ensemble mean.
BaggingResult pu_bagging(const Matrix& P, const Matrix& U, const PuConfig& cfg,
                         std::vector<std::string> feature_names = features::canonical_names());

/// Fits the ensemble without scoring anything.
PuModel fit_pu_model(const Matrix& P, const Matrix& U, const PuConfig& cfg,
                     std::vector<std::string> feature_names = features::canonical_names());

using Predictor = std::function<std::vector<double>(const Matrix&)>;
using BaseLearner =
    std::function<Predictor(const Matrix& X, std::span<const std::uint8_t> y, std::uint64_t seed)>;

struct BaggingScores {
  std::vector<double> positive_scores;
  std::vector<double> unlabeled_scores;
};

/// The bagging loop with a pluggable base learner; same sampling and seeds
/// as pu_bagging.
BaggingScores pu_bagging_scores(const Matrix& P, const Matrix& U, std::uint32_t k,
                                std::uint64_t seed, const BaseLearner& learner);

/// Indices of U rows forming the pseudo-negative sample of iteration `k`.
std::vector<std::size_t> pseudo_negative_sample(std::size_t n_unlabeled, std::size_t n_positive,
                                                std::uint64_t seed, std::uint32_t k);

struct SpySplit {
  std::vector<std::size_t> train;  // indices into the positive rows
  std::vector<std::size_t> spies;
  std::vector<std::string> spy_keys;
};

/// `placekeys[i]` and `weeks[i]` describe positive row i. Establishment mode
/// hides round(fraction * establishments) whole establishments (at least
/// one); week mode hides round(fraction * rows) rows.
SpySplit spy_split(std::span<const std::string> placekeys, std::span<const Date> weeks,
                   double fraction, SpyUnit unit, std::uint64_t seed);

std::string spy_week_key(std::string_view placekey, Date week);

std::vector<double> score_quiet(const PuModel& model, const Matrix& quiet_rows);

struct NaiveResult {
  forest::Forest forest;
  std::vector<double> positive_scores;
  std::vector<double> unlabeled_scores;
};

/// A single forest trained with every unlabeled row as a negative.
NaiveResult train_naive_baseline(const Matrix& P, const Matrix& U,
                                 const forest::ForestConfig& forest_cfg);

struct ScoredObservation {
  std::string placekey;
  Date week_start{};
  LabelCategory category = LabelCategory::NeverAsw;
  Role role = Role::Unlabeled;
  double score = 0.0;
};

/// Row indices of a feature table split by training role.
struct RoleAssignment {
  std::vector<Role> roles;  // one per table row
  std::vector<std::size_t> positives;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> spies;
  std::vector<std::string> spy_keys;
};

/// Applies the approach's treatment of quiet weeks and, when `with_spies`,
/// hides a spy subset of the advertised weeks. Quiet weeks of spy
/// establishments stay out of training under every approach.
RoleAssignment assign_roles(const features::FeatureTable& table, Approach approach,
                            bool with_spies, const PuConfig& cfg);

/// Reconstructs roles for a table scored by a saved model.
std::vector<Role> roles_for_model(const features::FeatureTable& table, const PuModel& model);

struct TrainResult {
  PuModel model;
  RoleAssignment assignment;
};

TrainResult train(const features::FeatureTable& table, const PuConfig& cfg, Approach approach,
                  bool with_spies);

std::vector<ScoredObservation> score_table(const features::FeatureTable& table,
                                           const PuModel& model);
std::vector<ScoredObservation> make_scored(const features::FeatureTable& table,
                                           std::span<const Role> roles,
                                           std::span<const double> scores);

nlohmann::json scored_to_json(const ScoredObservation& s);
ScoredObservation scored_from_json(const nlohmann::json& j);
std::string write_scores_jsonl(std::span<const ScoredObservation> rows);
std::vector<ScoredObservation> parse_scores_jsonl(std::string_view text);

}  // namespace mobrisk::pu
