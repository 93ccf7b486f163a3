#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobrisk/common.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/ingest.hpp"
#include "mobrisk/pu.hpp"
#include "mobrisk/rank.hpp"
#include "mobrisk/synth.hpp"

namespace mobrisk::pipeline {

enum class Stage { Synth, Ingest, Features, Train, Score, Evaluate, Rank, Allocate, Sweep };

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);

/// Process exit code reported when `s` fails; 0 is success, 2 a usage error.
int exit_code(Stage s);

class StageError : public std::runtime_error {
 public:
  StageError(Stage stage, const std::string& cause);
  Stage stage() const { return stage_; }

 private:
  Stage stage_;
};

namespace fs = std::filesystem;

struct SynthStageResult {
  std::size_t visit_rows = 0;
  std::size_t ad_rows = 0;
  std::size_t establishments = 0;
};
SynthStageResult run_synth(const synth::SynthConfig& cfg, const fs::path& out_dir);

struct IngestStageResult {
  ingest::FilterSummary filter;
  ingest::MergeSummary merge;
  std::size_t malformed_visits = 0;
  std::size_t malformed_ads = 0;
  fs::path summary_path;
};
/// Writes labeled JSON-lines to `out` and the run summary next to it.
IngestStageResult run_ingest(const fs::path& pois, const fs::path& ads,
                             const ingest::FilterConfig& filter, const fs::path& out);

struct FeaturesStageResult {
  std::size_t rows = 0;
  std::int64_t unresolved_visitors = 0;
};
FeaturesStageResult run_features(const fs::path& labeled, const fs::path& geo,
                                 const fs::path& partisan, std::optional<Date> train_end,
                                 const fs::path& out);

struct TrainStageResult {
  std::size_t positives = 0;
  std::size_t unlabeled = 0;
  std::size_t spies = 0;
};
TrainStageResult run_train(const fs::path& features, const pu::PuConfig& cfg, pu::Approach approach,
                           bool with_spies, const fs::path& out);

std::size_t run_score(const fs::path& model, const fs::path& features, const fs::path& out);

/// Spy metrics from a scores file. `truth` (optional) narrows the
/// negatives to latent-legitimate establishments. Writes JSON to `out` and
/// returns the plain-text summary.
std::string run_evaluate(const fs::path& scores, const std::optional<fs::path>& truth,
                         const nlohmann::json& config, const fs::path& out);

std::string run_cross_validation(const fs::path& features, const pu::PuConfig& cfg, std::size_t folds,
                                 const std::vector<rank::Aggregation>& aggregations,
                                 const fs::path& out);

std::size_t run_rank(const fs::path& scores, rank::Aggregation aggregation, const fs::path& out);

rank::AllocationPlan run_allocate(const fs::path& ranks, const std::optional<fs::path>& costs,
                                  std::optional<double> budget, rank::AllocationMode mode,
                                  const nlohmann::json& config, const fs::path& out);

struct SweepCell {
  std::uint32_t k = 0;
  std::uint32_t max_depth = 0;
  std::uint32_t n_trees = 0;
  double auc = 0.0;
  double average_precision = 0.0;
};

struct SweepGrid {
  std::vector<std::uint32_t> k = {50};
  std::vector<std::uint32_t> max_depth = {30};
  std::vector<std::uint32_t> n_trees = {100};
};

/// Spy-protocol evaluation of every grid cell on one fixed spy split,
/// sorted by AUC then AP (descending), grid order breaking exact ties.
std::vector<SweepCell> sweep(const features::FeatureTable& table, const pu::PuConfig& base,
                             const SweepGrid& grid,
                             const std::unordered_set<std::string>* latent_illicit = nullptr);
std::string sweep_table_csv(const std::vector<SweepCell>& cells);
std::vector<SweepCell> run_sweep(const fs::path& features, const pu::PuConfig& base,
                                 const SweepGrid& grid, const std::optional<fs::path>& truth,
                                 const fs::path& out);

/// Settings of the end-to-end run; serialized into the manifest.
struct RunConfig {
  std::uint64_t seed = 42;
  Date start_date = Date{std::chrono::year{2024} / 1 / 1};
  std::optional<Date> train_end;
  pu::Approach approach = pu::Approach::A;
  pu::PuConfig pu;
  rank::Aggregation aggregation = rank::Aggregation::Max;
  rank::AllocationMode mode = rank::AllocationMode::Exact;
  /// Inspection budget; defaults to 10% of ranked establishments.
  std::optional<double> budget;
  double budget_fraction = 0.10;

  nlohmann::json to_json() const;
  /// Starts from `base` (or the defaults) and overrides the keys present in `j`.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig from_json(const nlohmann::json& j);
};

inline constexpr std::size_t kPipelineStages = 7;

struct Artifact {
  Stage stage;
  std::string path;  // relative to the output directory
  std::string sha256;
};

struct RunResult {
  std::vector<Artifact> artifacts;   // one per stage, in execution order
  std::vector<Artifact> auxiliary;   // summaries and reports
  fs::path manifest_path;
  std::string evaluation_summary;
};

/// Runs ingest, features, train (spy protocol), score, evaluate, rank and
/// allocate over the inputs in `data_dir` (pois.jsonl or pois.csv, ads.csv,
/// geo.csv, partisan.csv and optionally truth.csv), then writes
/// manifest.json. `last_stage` stops early.
RunResult run_pipeline(const fs::path& data_dir, const fs::path& out_dir, const RunConfig& cfg,
                       Stage last_stage = Stage::Allocate);

}  // namespace mobrisk::pipeline
