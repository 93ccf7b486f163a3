#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mobrisk/common.hpp"
#include "mobrisk/io.hpp"
#include "mobrisk/pipeline.hpp"
#include "mobrisk/pu.hpp"
#include "mobrisk/rank.hpp"
#include "mobrisk/synth.hpp"

namespace fs = std::filesystem;
namespace mp = mobrisk::pipeline;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInternal = 1;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 42;
  std::size_t threads = 0;
  std::string config;
  bool seed_given = false;
};

nlohmann::json load_config(const Globals& g) {
  if (g.config.empty()) return nlohmann::json::object();
  try {
    auto j = nlohmann::json::parse(mobrisk::io::read_text_file(g.config));
    if (!j.is_object()) throw UsageError("config file must hold a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("cannot parse config " + g.config + ": " + e.what());
  }
}

// A config file may hold a section per subcommand family or be the section itself.
nlohmann::json section(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key) : j;
}

template <class F>
auto usage_guard(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
}

std::optional<fs::path> opt_path(const std::string& s) {
  return s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

struct PuFlags {
  std::string approach = "A";
  std::optional<std::uint32_t> k, n_trees, max_depth, min_leaf, features_per_split;
  std::optional<double> spy_fraction;
  std::string spy_unit;

  void add(CLI::App* app, bool with_approach) {
    if (with_approach) {
      app->add_option("--approach", approach, "Quiet-week treatment: A (hold out), B (unlabeled), C (positive)")
          ->check(CLI::IsMember({"A", "B", "C"}))
          ->capture_default_str();
    }
    app->add_option("--k", k, "Bagging iterations (default 50)");
    app->add_option("--n-trees", n_trees, "Trees per forest (default 100)");
    app->add_option("--max-depth", max_depth, "Maximum tree depth (default 30)");
    app->add_option("--min-leaf", min_leaf, "Minimum samples per leaf (default 5)");
    app->add_option("--features-per-split", features_per_split, "Features tried per split (default 6)");
    app->add_option("--spy-fraction", spy_fraction, "Share of positives hidden as spies (default 0.2)");
    app->add_option("--spy-unit", spy_unit, "Spy unit: establishment or week")
        ->check(CLI::IsMember({"establishment", "week"}));
  }

  mobrisk::pu::PuConfig resolve(const nlohmann::json& cfg, const Globals& g) const {
    return usage_guard([&] {
      auto c = mobrisk::pu::PuConfig::from_json(section(cfg, "pu"));
      if (g.seed_given || !section(cfg, "pu").contains("seed")) c.seed = g.seed;
      if (k) c.k = *k;
      if (n_trees) c.forest.n_trees = *n_trees;
      if (max_depth) c.forest.max_depth = *max_depth;
      if (min_leaf) c.forest.min_leaf = *min_leaf;
      if (features_per_split) c.forest.features_per_split = *features_per_split;
      if (spy_fraction) c.spy_fraction = *spy_fraction;
      if (!spy_unit.empty()) c.spy_unit = mobrisk::pu::spy_unit_from_string(spy_unit);
      c.validate();
      return c;
    });
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mobility-based risk screening for massage establishments"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Root random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = hardware concurrency)")->capture_default_str();
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);

  // synth
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic benchmark");
  synth->add_option("--out-dir", synth_out, "Output directory")->required();

  // ingest
  std::string ing_pois, ing_ads, ing_start = "2024-01-01", ing_out;
  auto* ingest = app.add_subcommand("ingest", "Filter POI-weeks and attach ad labels");
  ingest->add_option("--pois", ing_pois, "POI-week visits (.jsonl or .csv)")->required();
  ingest->add_option("--ads", ing_ads, "Ad records (.csv or .jsonl)")->required();
  ingest->add_option("--start-date", ing_start, "First week kept (ISO date)")->capture_default_str();
  ingest->add_option("--out", ing_out, "Labeled JSON-lines output")->required();

  // features
  std::string feat_labeled, feat_geo, feat_partisan, feat_train_end, feat_out;
  auto* features = app.add_subcommand("features", "Compute the 28 features per establishment-week");
  features->add_option("--labeled", feat_labeled, "Labeled JSON-lines")->required();
  features->add_option("--geo", feat_geo, "CBG geography CSV")->required();
  features->add_option("--partisan", feat_partisan, "County partisan index CSV")->required();
  features->add_option("--train-end", feat_train_end, "Last week used for consistency features (ISO date)");
  features->add_option("--out", feat_out, "Feature CSV output")->required();

  // train
  std::string train_features, train_out;
  bool train_no_spy = false;
  PuFlags train_flags;
  auto* train = app.add_subcommand("train", "Fit the PU bagging ensemble");
  train->add_option("--features", train_features, "Feature CSV")->required();
  train_flags.add(train, true);
  train->add_flag("--no-spy", train_no_spy, "Train on every advertised week (no spy hold-out)");
  train->add_option("--out", train_out, "Model bundle output")->required();

  // score
  std::string score_model, score_features, score_out;
  auto* score = app.add_subcommand("score", "Score establishment-weeks with a trained model");
  score->add_option("--model", score_model, "Model bundle")->required();
  score->add_option("--features", score_features, "Feature CSV")->required();
  score->add_option("--out", score_out, "Scores JSON-lines output")->required();

  // evaluate
  std::string eval_scores, eval_truth, eval_features, eval_out = "metrics.json";
  std::string eval_aggregation = "max,mean,min";
  std::size_t eval_cv = 0;
  bool eval_spy = false;
  PuFlags eval_flags;
  auto* evaluate = app.add_subcommand("evaluate", "Spy-protocol metrics or business-level cross-validation");
  evaluate->add_option("--scores", eval_scores, "Scores JSON-lines (spy mode)");
  evaluate->add_flag("--spy", eval_spy, "Spy-protocol metrics from --scores (default mode)");
  evaluate->add_option("--truth", eval_truth, "truth.csv; restricts negatives to latent-legitimate rows");
  evaluate->add_option("--features", eval_features, "Feature CSV (cross-validation mode)");
  evaluate->add_option("--cv", eval_cv, "Business-level folds; enables cross-validation mode");
  evaluate->add_option("--aggregation", eval_aggregation, "Comma-separated aggregations for --cv")
      ->capture_default_str();
  eval_flags.add(evaluate, false);
  evaluate->add_option("--out", eval_out, "Metrics JSON output")->capture_default_str();

  // rank
  std::string rank_scores, rank_aggregation = "max", rank_out;
  auto* rank = app.add_subcommand("rank", "Aggregate weekly scores into establishment risk");
  rank->add_option("--scores", rank_scores, "Scores JSON-lines")->required();
  rank->add_option("--aggregation", rank_aggregation, "mean, max or min")
      ->check(CLI::IsMember({"mean", "max", "min"}))
      ->capture_default_str();
  rank->add_option("--out", rank_out, "Ranks CSV output")->required();

  // allocate
  std::string alloc_ranks, alloc_costs, alloc_mode = "exact", alloc_out = "plan.json";
  std::optional<double> alloc_budget;
  auto* allocate = app.add_subcommand("allocate", "Choose establishments to inspect under a budget");
  allocate->add_option("--ranks", alloc_ranks, "Ranks CSV")->required();
  allocate->add_option("--costs", alloc_costs, "Cost CSV (placekey, cost); missing costs are 1");
  allocate->add_option("--budget", alloc_budget, "Inspection budget (default: 10% of establishments)");
  allocate->add_option("--mode", alloc_mode, "exact or greedy")
      ->check(CLI::IsMember({"exact", "greedy"}))
      ->capture_default_str();
  allocate->add_option("--out", alloc_out, "Plan JSON output")->capture_default_str();

  // sweep
  std::string sweep_features, sweep_truth, sweep_out = "sweep.csv";
  std::vector<std::uint32_t> sweep_k{50}, sweep_depth{30}, sweep_trees{100};
  PuFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "Grid search over K, max_depth and n_trees by spy AUC");
  sweep->add_option("--features", sweep_features, "Feature CSV")->required();
  sweep->add_option("--k-grid", sweep_k, "Bagging iteration counts")->delimiter(',')->capture_default_str();
  sweep->add_option("--depth-grid", sweep_depth, "Maximum depths")->delimiter(',')->capture_default_str();
  sweep->add_option("--trees-grid", sweep_trees, "Forest sizes")->delimiter(',')->capture_default_str();
  sweep->add_option("--truth", sweep_truth, "truth.csv; restricts negatives to latent-legitimate rows");
  sweep_flags.add(sweep, false);
  sweep->add_option("--out", sweep_out, "Sweep CSV output")->capture_default_str();

  // run
  std::string run_data, run_out, run_until;
  bool run_all = false;
  auto* run = app.add_subcommand("run", "Run ingest through allocate and write a manifest");
  run->add_option("--data-dir", run_data, "Directory with pois, ads, geo, partisan (and optional truth)")
      ->required();
  run->add_option("--out-dir", run_out, "Output directory")->required();
  run->add_flag("--all", run_all, "Run every stage (default)");
  run->add_option("--until", run_until, "Stop after this stage")
      ->check(CLI::IsMember({"ingest", "features", "train", "score", "evaluate", "rank", "allocate"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    mobrisk::set_max_threads(g.threads);
    const nlohmann::json cfg = load_config(g);

    if (synth->parsed()) {
      auto sc = usage_guard([&] {
        auto c = mobrisk::synth::SynthConfig::from_json(section(cfg, "synth"));
        if (g.seed_given || !section(cfg, "synth").contains("seed")) c.seed = g.seed;
        c.validate();
        return c;
      });
      const auto r = mp::run_synth(sc, synth_out);
      std::cout << "synth: " << r.establishments << " establishments, " << r.visit_rows << " visit rows, "
                << r.ad_rows << " ad rows -> " << synth_out << "\n";
    } else if (ingest->parsed()) {
      mobrisk::ingest::FilterConfig fc;
      fc.start_date = usage_guard([&] { return mobrisk::parse_date_or_throw(ing_start); });
      const auto r = mp::run_ingest(ing_pois, ing_ads, fc, ing_out);
      std::cout << "ingest: kept " << r.filter.kept << " of " << r.filter.rows_in << " rows ("
                << r.merge.illicit_active << " active, " << r.merge.illicit_quiet << " quiet, "
                << r.merge.never_asw << " never advertised); malformed " << r.malformed_visits << " visit, "
                << r.malformed_ads << " ad rows; summary " << r.summary_path.string() << "\n";
    } else if (features->parsed()) {
      std::optional<mobrisk::Date> train_end;
      if (!feat_train_end.empty()) train_end = usage_guard([&] { return mobrisk::parse_date_or_throw(feat_train_end); });
      const auto r = mp::run_features(feat_labeled, feat_geo, feat_partisan, train_end, feat_out);
      std::cout << "features: " << r.rows << " rows, " << r.unresolved_visitors
                << " visitors with unknown home CBG -> " << feat_out << "\n";
    } else if (train->parsed()) {
      const auto pc = train_flags.resolve(cfg, g);
      const auto approach = mobrisk::pu::approach_from_string(train_flags.approach);
      const auto r = mp::run_train(train_features, pc, approach, !train_no_spy, train_out);
      std::cout << "train: " << r.positives << " positives, " << r.unlabeled << " unlabeled, " << r.spies
                << " spies, K=" << pc.k << " -> " << train_out << "\n";
    } else if (score->parsed()) {
      const auto n = mp::run_score(score_model, score_features, score_out);
      std::cout << "score: " << n << " rows -> " << score_out << "\n";
    } else if (evaluate->parsed()) {
      std::string summary;
      if (eval_cv > 0) {
        if (eval_features.empty()) throw UsageError("--cv requires --features");
        std::vector<mobrisk::rank::Aggregation> aggs;
        for (const auto& a : split_list(eval_aggregation)) {
          aggs.push_back(usage_guard([&] { return mobrisk::rank::aggregation_from_string(a); }));
        }
        const auto pc = eval_flags.resolve(cfg, g);
        summary = mp::run_cross_validation(eval_features, pc, eval_cv, aggs, eval_out);
      } else {
        if (eval_scores.empty()) throw UsageError("spy evaluation requires --scores");
        summary = mp::run_evaluate(eval_scores, opt_path(eval_truth), cfg, eval_out);
      }
      const fs::path txt = fs::path(eval_out).replace_extension(".txt");
      mobrisk::io::write_text_file(txt, summary);
      std::cout << summary;
    } else if (rank->parsed()) {
      const auto agg = mobrisk::rank::aggregation_from_string(rank_aggregation);
      const auto n = mp::run_rank(rank_scores, agg, rank_out);
      std::cout << "rank: " << n << " establishments -> " << rank_out << "\n";
    } else if (allocate->parsed()) {
      const auto mode = mobrisk::rank::allocation_mode_from_string(alloc_mode);
      const nlohmann::json used = {{"budget", alloc_budget ? nlohmann::json(*alloc_budget) : nlohmann::json()},
                                   {"mode", alloc_mode},
                                   {"costs", alloc_costs}};
      const auto plan = mp::run_allocate(alloc_ranks, opt_path(alloc_costs), alloc_budget, mode, used, alloc_out);
      std::cout << "allocate: " << plan.selected.size() << " establishments, cost " << plan.total_cost
                << " of " << plan.budget << ", expected detections " << plan.expected_detections << " -> "
                << alloc_out << "\n";
    } else if (sweep->parsed()) {
      const auto pc = sweep_flags.resolve(cfg, g);
      mp::SweepGrid grid{sweep_k, sweep_depth, sweep_trees};
      const auto cells = mp::run_sweep(sweep_features, pc, grid, opt_path(sweep_truth), sweep_out);
      std::cout << mp::sweep_table_csv(cells);
    } else if (run->parsed()) {
      auto rc = usage_guard([&] {
        mp::RunConfig base;
        base.seed = g.seed;
        auto c = mp::RunConfig::from_json(section(cfg, "run"), base);
        if (g.seed_given) c.seed = g.seed;
        c.pu.seed = c.seed;
        return c;
      });
      const mp::Stage last =
          run_until.empty() || run_all ? mp::Stage::Allocate : mp::stage_from_string(run_until);
      const auto r = mp::run_pipeline(run_data, run_out, rc, last);
      if (!r.evaluation_summary.empty()) std::cout << r.evaluation_summary;
      std::cout << "run: " << r.artifacts.size() << " stage artifacts; manifest " << r.manifest_path.string()
                << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mp::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mp::exit_code(e.stage());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInternal;
  }
  return 0;
}
