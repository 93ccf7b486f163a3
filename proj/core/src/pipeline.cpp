#include "mobrisk/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <utility>

#include "mobrisk/eval.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/io.hpp"

namespace mobrisk::pipeline {

namespace {

constexpr std::size_t kIssueExamples = 10;

struct StageInfo {
  Stage stage;
  std::string_view name;
  int exit_code;
};

constexpr std::array<StageInfo, 9> kStages = {{{Stage::Synth, "synth", 10},
                                               {Stage::Ingest, "ingest", 11},
                                               {Stage::Features, "features", 12},
                                               {Stage::Train, "train", 13},
                                               {Stage::Score, "score", 14},
                                               {Stage::Evaluate, "evaluate", 15},
                                               {Stage::Rank, "rank", 16},
                                               {Stage::Allocate, "allocate", 17},
                                               {Stage::Sweep, "sweep", 18}}};

const StageInfo& info(Stage s) {
  for (const auto& i : kStages) {
    if (i.stage == s) return i;
  }
  throw std::logic_error("unknown stage");
}

template <class F>
auto guarded(Stage stage, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

features::FeatureTable load_features(const fs::path& path) {
  return features::parse_feature_csv(io::read_text_file(path));
}

std::optional<std::unordered_set<std::string>> load_truth(const std::optional<fs::path>& truth) {
  if (!truth) return std::nullopt;
  return synth::latent_illicit(synth::parse_truth_csv(io::read_text_file(*truth)));
}

nlohmann::json issues_json(const std::vector<ingest::RowIssue>& issues) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < issues.size() && i < kIssueExamples; ++i) {
    out.push_back({{"line", issues[i].line}, {"reason", issues[i].reason}});
  }
  return out;
}

nlohmann::json optional_date_json(const std::optional<Date>& d) {
  return d ? nlohmann::json(format_date(*d)) : nlohmann::json(nullptr);
}

std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace

std::string_view to_string(Stage s) { return info(s).name; }

Stage stage_from_string(std::string_view s) {
  for (const auto& i : kStages) {
    if (i.name == s) return i.stage;
  }
  throw std::invalid_argument("unknown stage '" + std::string(s) + "'");
}

int exit_code(Stage s) { return info(s).exit_code; }

StageError::StageError(Stage stage, const std::string& cause)
    : std::runtime_error(std::string(to_string(stage)) + " stage failed: " + cause), stage_(stage) {}

SynthStageResult run_synth(const synth::SynthConfig& cfg, const fs::path& out_dir) {
  return guarded(Stage::Synth, [&] {
    const auto out = synth::generate(cfg);
    synth::write_outputs(out, out_dir);
    io::write_text_file(out_dir / "synth_config.json", dump(cfg.to_json()));
    return SynthStageResult{out.visits.size(), out.ads.size(), out.truth.size()};
  });
}

IngestStageResult run_ingest(const fs::path& pois, const fs::path& ads,
                             const ingest::FilterConfig& filter, const fs::path& out) {
  return guarded(Stage::Ingest, [&] {
    auto visits = ingest::read_visits(pois);
    auto ad_rows = ingest::read_ads(ads);
    auto filtered = ingest::filter_population(std::move(visits.rows), filter);
    auto merged = ingest::merge_and_label(filtered.kept, ad_rows.rows);
    io::write_text_file(out, ingest::write_labeled_jsonl(merged.rows));

    IngestStageResult r;
    r.filter = filtered.summary;
    r.merge = merged.summary;
    r.malformed_visits = visits.malformed.size();
    r.malformed_ads = ad_rows.malformed.size();
    r.summary_path = out.parent_path() / (out.stem().string() + ".summary.json");
    nlohmann::json summary = {{"start_date", format_date(filter.start_date)},
                              {"malformed_visit_rows", r.malformed_visits},
                              {"malformed_ad_rows", r.malformed_ads},
                              {"malformed_visit_examples", issues_json(visits.malformed)},
                              {"malformed_ad_examples", issues_json(ad_rows.malformed)},
                              {"filter", r.filter.to_json()},
                              {"merge", r.merge.to_json()}};
    io::write_text_file(r.summary_path, dump(summary));
    return r;
  });
}

FeaturesStageResult run_features(const fs::path& labeled, const fs::path& geo,
                                 const fs::path& partisan, std::optional<Date> train_end,
                                 const fs::path& out) {
  return guarded(Stage::Features, [&] {
    const auto rows = ingest::parse_labeled_jsonl(io::read_text_file(labeled));
    const auto geo_index = features::GeoIndex::from_csv(io::read_text_file(geo));
    const auto partisan_table = features::PartisanTable::from_csv(io::read_text_file(partisan));
    const auto table = features::build_feature_table(rows, geo_index, partisan_table, train_end);
    io::write_text_file(out, features::write_feature_csv(table));
    return FeaturesStageResult{table.rows.size(), table.unresolved_visitors};
  });
}

TrainStageResult run_train(const fs::path& features_path, const pu::PuConfig& cfg,
                           pu::Approach approach, bool with_spies, const fs::path& out) {
  return guarded(Stage::Train, [&] {
    const auto table = load_features(features_path);
    const auto trained = pu::train(table, cfg, approach, with_spies);
    io::write_text_file(out, trained.model.serialize());
    return TrainStageResult{trained.assignment.positives.size(), trained.assignment.unlabeled.size(),
                            trained.assignment.spies.size()};
  });
}

std::size_t run_score(const fs::path& model_path, const fs::path& features_path, const fs::path& out) {
  return guarded(Stage::Score, [&] {
    const auto model = pu::PuModel::deserialize(io::read_text_file(model_path));
    const auto table = load_features(features_path);
    const auto scored = pu::score_table(table, model);
    io::write_text_file(out, pu::write_scores_jsonl(scored));
    return scored.size();
  });
}

std::string run_evaluate(const fs::path& scores, const std::optional<fs::path>& truth,
                         const nlohmann::json& config, const fs::path& out) {
  return guarded(Stage::Evaluate, [&] {
    const auto scored = pu::parse_scores_jsonl(io::read_text_file(scores));
    const auto illicit = load_truth(truth);
    const auto report = eval::evaluate_spy(scored, illicit ? &*illicit : nullptr);
    nlohmann::json j = report.to_json();
    j["config"] = config;
    io::write_text_file(out, dump(j));
    return report.summary_table();
  });
}

std::string run_cross_validation(const fs::path& features_path, const pu::PuConfig& cfg,
                                 std::size_t folds, const std::vector<rank::Aggregation>& aggregations,
                                 const fs::path& out) {
  return guarded(Stage::Evaluate, [&] {
    const auto table = load_features(features_path);
    const auto cv = eval::business_cv(table, cfg, folds, aggregations);
    nlohmann::json j = cv.to_json();
    j["config"] = cfg.to_json();
    io::write_text_file(out, dump(j));
    return cv.summary_table();
  });
}

std::size_t run_rank(const fs::path& scores, rank::Aggregation aggregation, const fs::path& out) {
  return guarded(Stage::Rank, [&] {
    const auto scored = pu::parse_scores_jsonl(io::read_text_file(scores));
    std::vector<std::pair<std::string, double>> week_scores;
    week_scores.reserve(scored.size());
    for (const auto& s : scored) week_scores.emplace_back(s.placekey, s.score);
    const auto ranked = rank::rank_establishments(rank::aggregate(week_scores, aggregation));
    io::write_text_file(out, rank::write_ranks_csv(ranked));
    return ranked.size();
  });
}

rank::AllocationPlan run_allocate(const fs::path& ranks, const std::optional<fs::path>& costs,
                                  std::optional<double> budget, rank::AllocationMode mode,
                                  const nlohmann::json& config, const fs::path& out) {
  return guarded(Stage::Allocate, [&] {
    const auto risks = rank::rank_establishments(rank::parse_ranks_csv(io::read_text_file(ranks)));
    const auto cost_map = costs ? rank::parse_costs_csv(io::read_text_file(*costs))
                                : std::unordered_map<std::string, double>{};
    const double b = budget ? *budget : std::floor(0.10 * static_cast<double>(risks.size()));
    const auto plan = rank::solve_allocation(risks, cost_map, b, mode);
    nlohmann::json j = plan.to_json();
    j["ranked"] = nlohmann::json::array();
    for (const auto& r : risks) j["ranked"].push_back({{"placekey", r.placekey}, {"delta", r.delta}});
    j["config"] = config;
    io::write_text_file(out, dump(j));
    return plan;
  });
}

std::vector<SweepCell> sweep(const features::FeatureTable& table, const pu::PuConfig& base,
                             const SweepGrid& grid, const std::unordered_set<std::string>* latent_illicit) {
  if (grid.k.empty() || grid.max_depth.empty() || grid.n_trees.empty()) {
    throw std::invalid_argument("sweep grid has an empty axis");
  }
  const Matrix X = table.matrix();
  std::vector<SweepCell> cells;
  for (auto k : grid.k) {
    for (auto depth : grid.max_depth) {
      for (auto trees : grid.n_trees) {
        pu::PuConfig cfg = base;
        cfg.k = k;
        cfg.forest.max_depth = depth;
        cfg.forest.n_trees = trees;
        const auto trained = pu::train(table, cfg, pu::Approach::A, true);
        const auto scored = pu::make_scored(table, trained.assignment.roles, trained.model.score(X));
        const auto report = eval::evaluate_spy(scored, latent_illicit);
        cells.push_back({k, depth, trees, report.auc, report.average_precision});
      }
    }
  }
  std::stable_sort(cells.begin(), cells.end(), [](const SweepCell& a, const SweepCell& b) {
    if (a.auc != b.auc) return a.auc > b.auc;
    return a.average_precision > b.average_precision;
  });
  return cells;
}

std::string sweep_table_csv(const std::vector<SweepCell>& cells) {
  std::string out = io::csv_row({"k", "max_depth", "n_trees", "auc", "average_precision"});
  for (const auto& c : cells) {
    out += io::csv_row({std::to_string(c.k), std::to_string(c.max_depth), std::to_string(c.n_trees),
                        io::format_double(c.auc), io::format_double(c.average_precision)});
  }
  return out;
}

std::vector<SweepCell> run_sweep(const fs::path& features_path, const pu::PuConfig& base,
                                 const SweepGrid& grid, const std::optional<fs::path>& truth,
                                 const fs::path& out) {
  return guarded(Stage::Sweep, [&] {
    const auto table = load_features(features_path);
    const auto illicit = load_truth(truth);
    auto cells = sweep(table, base, grid, illicit ? &*illicit : nullptr);
    io::write_text_file(out, sweep_table_csv(cells));
    return cells;
  });
}

nlohmann::json RunConfig::to_json() const {
  // The root seed drives every stage, so the nested copy always mirrors it.
  pu::PuConfig p = pu;
  p.seed = seed;
  return {{"seed", seed},
          {"start_date", format_date(start_date)},
          {"train_end", optional_date_json(train_end)},
          {"approach", std::string(pu::to_string(approach))},
          {"pu", p.to_json()},
          {"aggregation", std::string(rank::to_string(aggregation))},
          {"mode", std::string(rank::to_string(mode))},
          {"budget", budget ? nlohmann::json(*budget) : nlohmann::json(nullptr)},
          {"budget_fraction", budget_fraction}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, RunConfig c) {
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  if (j.contains("pu")) c.pu = pu::PuConfig::from_json(j.at("pu"));
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  c.pu.seed = c.seed;
  if (j.contains("start_date")) c.start_date = parse_date_or_throw(j.at("start_date").get<std::string>());
  if (j.contains("train_end")) {
    const auto& t = j.at("train_end");
    c.train_end = t.is_null() ? std::nullopt : std::optional<Date>(parse_date_or_throw(t.get<std::string>()));
  }
  if (j.contains("approach")) c.approach = pu::approach_from_string(j.at("approach").get<std::string>());
  if (j.contains("aggregation")) {
    c.aggregation = rank::aggregation_from_string(j.at("aggregation").get<std::string>());
  }
  if (j.contains("mode")) c.mode = rank::allocation_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("budget")) {
    const auto& b = j.at("budget");
    c.budget = b.is_null() ? std::nullopt : std::optional<double>(b.get<double>());
  }
  c.budget_fraction = j.value("budget_fraction", c.budget_fraction);
  if (!(c.budget_fraction >= 0.0 && c.budget_fraction <= 1.0)) {
    throw std::invalid_argument("budget_fraction must lie in [0,1]");
  }
  return c;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) { return from_json(j, RunConfig{}); }

RunResult run_pipeline(const fs::path& data_dir, const fs::path& out_dir, const RunConfig& cfg_in,
                       Stage last_stage) {
  RunConfig cfg = cfg_in;
  cfg.pu.seed = cfg.seed;
  fs::create_directories(out_dir);
  RunResult result;

  const fs::path pois_jsonl = data_dir / synth::kPoisFile;
  const fs::path pois = fs::exists(pois_jsonl) ? pois_jsonl : data_dir / "pois.csv";
  const fs::path ads = data_dir / synth::kAdsFile;
  const fs::path geo = data_dir / synth::kGeoFile;
  const fs::path partisan = data_dir / synth::kPartisanFile;
  const fs::path truth_path = data_dir / synth::kTruthFile;
  const std::optional<fs::path> truth =
      fs::exists(truth_path) ? std::optional<fs::path>(truth_path) : std::nullopt;
  const nlohmann::json config_json = cfg.to_json();

  auto record = [&](std::vector<Artifact>& list, Stage stage, const std::string& name) {
    list.push_back({stage, name, io::sha256_hex(io::read_text_file(out_dir / name))});
  };
  auto reached = [&](Stage s) { return static_cast<int>(s) <= static_cast<int>(last_stage); };

  ingest::FilterConfig filter;
  filter.start_date = cfg.start_date;
  const auto ing = run_ingest(pois, ads, filter, out_dir / "labeled.jsonl");
  record(result.artifacts, Stage::Ingest, "labeled.jsonl");
  record(result.auxiliary, Stage::Ingest, ing.summary_path.filename().string());

  if (reached(Stage::Features)) {
    run_features(out_dir / "labeled.jsonl", geo, partisan, cfg.train_end, out_dir / "features.csv");
    record(result.artifacts, Stage::Features, "features.csv");
  }
  if (reached(Stage::Train)) {
    run_train(out_dir / "features.csv", cfg.pu, cfg.approach, true, out_dir / "model.bundle");
    record(result.artifacts, Stage::Train, "model.bundle");
  }
  if (reached(Stage::Score)) {
    run_score(out_dir / "model.bundle", out_dir / "features.csv", out_dir / "scores.jsonl");
    record(result.artifacts, Stage::Score, "scores.jsonl");
  }
  if (reached(Stage::Evaluate)) {
    result.evaluation_summary =
        run_evaluate(out_dir / "scores.jsonl", truth, config_json, out_dir / "metrics.json");
    guarded(Stage::Evaluate, [&] { io::write_text_file(out_dir / "metrics.txt", result.evaluation_summary); });
    record(result.artifacts, Stage::Evaluate, "metrics.json");
    record(result.auxiliary, Stage::Evaluate, "metrics.txt");
  }
  if (reached(Stage::Rank)) {
    run_rank(out_dir / "scores.jsonl", cfg.aggregation, out_dir / "ranks.csv");
    record(result.artifacts, Stage::Rank, "ranks.csv");
  }
  if (reached(Stage::Allocate)) {
    std::optional<double> budget = cfg.budget;
    if (!budget) {
      const auto n = rank::parse_ranks_csv(io::read_text_file(out_dir / "ranks.csv")).size();
      budget = std::floor(cfg.budget_fraction * static_cast<double>(n));
    }
    run_allocate(out_dir / "ranks.csv", std::nullopt, budget, cfg.mode, config_json, out_dir / "plan.json");
    record(result.artifacts, Stage::Allocate, "plan.json");
  }

  nlohmann::json manifest;
  manifest["manifest_version"] = 1;
  manifest["config"] = config_json;
  manifest["inputs"] = nlohmann::json::array();
  for (const fs::path& p : {pois, ads, geo, partisan, truth_path}) {
    if (fs::exists(p)) {
      manifest["inputs"].push_back(
          {{"path", p.filename().string()}, {"sha256", io::sha256_hex(io::read_text_file(p))}});
    }
  }
  auto list_json = [](const std::vector<Artifact>& list) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : list) {
      a.push_back({{"stage", std::string(to_string(x.stage))}, {"path", x.path}, {"sha256", x.sha256}});
    }
    return a;
  };
  manifest["artifacts"] = list_json(result.artifacts);
  manifest["auxiliary"] = list_json(result.auxiliary);
  result.manifest_path = out_dir / "manifest.json";
  io::write_text_file(result.manifest_path, dump(manifest));
  return result;
}

}  // namespace mobrisk::pipeline
