#include "mobrisk/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mobrisk/common.hpp"
#include "mobrisk/io.hpp"

namespace mobrisk::eval {

namespace {

void require_scores(std::span<const double> pos, std::span<const double> neg, const char* what) {
  if (pos.empty() || neg.empty()) {
    throw std::invalid_argument(std::string(what) + ": needs at least one positive and one negative");
  }
  for (double v : pos) {
    if (std::isnan(v)) throw std::invalid_argument(std::string(what) + ": NaN score");
  }
  for (double v : neg) {
    if (std::isnan(v)) throw std::invalid_argument(std::string(what) + ": NaN score");
  }
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << v;
  return os.str();
}

}  // namespace

double auc(std::span<const double> pos, std::span<const double> neg) {
  require_scores(pos, neg, "auc");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.push_back({v, true});
  for (double v : neg) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score < b.score; });

  // Sum of doubled average ranks of positives; a tie block occupying
  // 1-based ranks i+1..j has doubled average rank i+1+j.
  std::int64_t doubled_rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::int64_t pos_in_block = 0;
    while (j < all.size() && all[j].score == all[i].score) {
      pos_in_block += all[j].positive;
      ++j;
    }
    doubled_rank_sum += pos_in_block * static_cast<std::int64_t>(i + 1 + j);
    i = j;
  }
  const auto n_pos = static_cast<std::int64_t>(pos.size());
  const auto n_neg = static_cast<std::int64_t>(neg.size());
  const std::int64_t doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
  return static_cast<double>(doubled_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double average_precision(std::span<const double> pos, std::span<const double> neg) {
  require_scores(pos, neg, "average_precision");
  struct Item {
    double score;
    bool positive;
  };
  std::vector<Item> all;
  all.reserve(pos.size() + neg.size());
  for (double v : pos) all.push_back({v, true});
  for (double v : neg) all.push_back({v, false});
  std::stable_sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.score > b.score; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    if (!all[k].positive) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(pos.size());
}

std::vector<std::pair<double, double>> recovery_rate(std::span<const double> spy_scores,
                                                     std::span<const double> thresholds) {
  if (spy_scores.empty()) throw std::invalid_argument("recovery_rate: no spy scores");
  std::vector<std::pair<double, double>> out;
  for (double t : thresholds) {
    const auto above = std::count_if(spy_scores.begin(), spy_scores.end(), [t](double s) { return s > t; });
    out.emplace_back(t, static_cast<double>(above) / static_cast<double>(spy_scores.size()));
  }
  return out;
}

double nearest_rank_percentile(std::span<const double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  if (!(p >= 0.0 && p <= 100.0)) throw std::invalid_argument("percentile must lie in [0,100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

double coverage_at_budget(std::span<const std::pair<std::string, double>> delta,
                          const std::unordered_set<std::string>& holdout, double k_percent) {
  if (holdout.empty()) throw std::invalid_argument("coverage_at_budget: empty holdout set");
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw std::invalid_argument("coverage_at_budget: budget percent must lie in (0,100]");
  }
  std::vector<double> values;
  values.reserve(delta.size());
  for (const auto& [_, v] : delta) values.push_back(v);
  const double tau = nearest_rank_percentile(values, 100.0 - k_percent);
  std::size_t seen = 0, covered = 0;
  for (const auto& [key, v] : delta) {
    if (!holdout.count(key)) continue;
    ++seen;
    if (v >= tau) ++covered;
  }
  if (seen != holdout.size()) {
    throw std::invalid_argument("coverage_at_budget: some holdout establishments have no score");
  }
  return static_cast<double>(covered) / static_cast<double>(holdout.size());
}

std::vector<std::pair<std::string, double>> category_means(
    std::span<const pu::ScoredObservation> scored, const std::unordered_set<std::string>* latent_illicit) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  auto add = [&](const std::string& key, double v) {
    auto& [sum, n] = acc[key];
    sum += v;
    ++n;
  };
  for (const auto& s : scored) {
    add("role:" + std::string(pu::to_string(s.role)), s.score);
    add("category:" + std::string(to_string(s.category)), s.score);
    if (latent_illicit && s.category == LabelCategory::NeverAsw) {
      add(latent_illicit->count(s.placekey) ? "truth:hidden_positive" : "truth:unlabeled_true_negative",
          s.score);
    }
  }
  std::vector<std::pair<std::string, double>> out;
  for (const auto& [key, v] : acc) out.emplace_back(key, v.first / static_cast<double>(v.second));
  return out;
}

MetricReport evaluate_spy(std::span<const pu::ScoredObservation> scored,
                          const std::unordered_set<std::string>* latent_illicit,
                          std::span<const double> thresholds) {
  std::vector<double> spies, unlabeled, negatives;
  for (const auto& s : scored) {
    if (s.role == pu::Role::Spy) {
      spies.push_back(s.score);
    } else if (s.role == pu::Role::Unlabeled && s.category == LabelCategory::NeverAsw) {
      unlabeled.push_back(s.score);
      if (!latent_illicit || !latent_illicit->count(s.placekey)) negatives.push_back(s.score);
    }
  }
  if (spies.empty()) {
    throw std::invalid_argument("scores contain no spy rows; train with the spy protocol");
  }
  MetricReport r;
  r.auc = auc(spies, negatives);
  r.average_precision = average_precision(spies, negatives);
  r.recovery = recovery_rate(spies, thresholds);
  r.category_means = category_means(scored, latent_illicit);
  r.n_pos = spies.size();
  r.n_unlabeled = negatives.size();
  if (latent_illicit) {
    r.negatives = "unlabeled_true_negative";
    r.auc_all_unlabeled = auc(spies, unlabeled);
    r.ap_all_unlabeled = average_precision(spies, unlabeled);
  }
  return r;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json rec = nlohmann::json::array();
  for (const auto& [t, f] : recovery) rec.push_back({{"threshold", t}, {"fraction", f}});
  nlohmann::json means = nlohmann::json::object();
  for (const auto& [k, v] : category_means) means[k] = v;
  nlohmann::json j = {{"auc", auc},
                      {"average_precision", average_precision},
                      {"recovery", rec},
                      {"category_means", means},
                      {"n_pos", n_pos},
                      {"n_unlabeled", n_unlabeled},
                      {"negatives", negatives}};
  if (auc_all_unlabeled) j["auc_all_unlabeled"] = *auc_all_unlabeled;
  if (ap_all_unlabeled) j["ap_all_unlabeled"] = *ap_all_unlabeled;
  return j;
}

std::string MetricReport::summary_table() const {
  std::ostringstream os;
  os << "Spy-protocol metrics (negatives: " << negatives << ")\n";
  os << "  AUC                 " << fmt(auc) << "\n";
  os << "  Average precision   " << fmt(average_precision) << "\n";
  for (const auto& [t, f] : recovery) os << "  Recovery R(" << fmt(t, 2) << ")    " << fmt(f) << "\n";
  if (auc_all_unlabeled) os << "  AUC vs all unlabeled " << fmt(*auc_all_unlabeled) << "\n";
  if (ap_all_unlabeled) os << "  AP vs all unlabeled  " << fmt(*ap_all_unlabeled) << "\n";
  os << "  positives " << n_pos << ", negatives " << n_unlabeled << "\n";
  os << "Mean score by group\n";
  for (const auto& [k, v] : category_means) os << "  " << k << "  " << fmt(v) << "\n";
  return os.str();
}

MeanSd mean_sd(std::span<const double> xs) {
  MeanSd r;
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

MeanSd CvAggregationResult::auc_summary() const { return mean_sd(fold_auc); }

MeanSd CvAggregationResult::coverage_summary(std::size_t budget_index) const {
  std::vector<double> xs;
  for (const auto& c : fold_coverage) xs.push_back(c.at(budget_index));
  return mean_sd(xs);
}

const CvAggregationResult& BusinessCvResult::get(rank::Aggregation a) const {
  for (const auto& r : by_aggregation) {
    if (r.aggregation == a) return r;
  }
  throw std::out_of_range("aggregation not evaluated");
}

nlohmann::json BusinessCvResult::to_json() const {
  nlohmann::json j;
  j["folds"] = folds.size();
  j["fold_sizes"] = nlohmann::json::array();
  for (const auto& f : folds) j["fold_sizes"].push_back(f.size());
  j["aggregations"] = nlohmann::json::array();
  for (const auto& r : by_aggregation) {
    nlohmann::json a;
    a["aggregation"] = std::string(rank::to_string(r.aggregation));
    a["fold_auc"] = r.fold_auc;
    const auto s = r.auc_summary();
    a["auc_mean"] = s.mean;
    a["auc_sd"] = s.sd;
    for (std::size_t b = 0; b < kCoverageBudgets.size(); ++b) {
      const auto c = r.coverage_summary(b);
      const std::string key = "top" + std::to_string(static_cast<int>(kCoverageBudgets[b])) + "pct";
      a["coverage"][key] = {{"mean", c.mean}, {"sd", c.sd}};
    }
    j["aggregations"].push_back(a);
  }
  return j;
}

std::string BusinessCvResult::summary_table() const {
  std::ostringstream os;
  os << "Business-level cross-validation (" << folds.size() << " folds, mean +/- sd)\n";
  os << "  aggregation  AUC             Top-1%          Top-5%          Top-10%         Top-20%\n";
  for (const auto& r : by_aggregation) {
    const auto a = r.auc_summary();
    os << "  " << rank::to_string(r.aggregation)
       << std::string(11 - rank::to_string(r.aggregation).size(), ' ') << fmt(a.mean) << " +/- "
       << fmt(a.sd);
    for (std::size_t b = 0; b < kCoverageBudgets.size(); ++b) {
      const auto c = r.coverage_summary(b);
      os << "   " << fmt(c.mean) << " +/- " << fmt(c.sd);
    }
    os << "\n";
  }
  return os.str();
}

std::vector<std::vector<std::string>> establishment_folds(std::vector<std::string> positives,
                                                          std::size_t folds, std::uint64_t seed) {
  if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
  std::sort(positives.begin(), positives.end());
  positives.erase(std::unique(positives.begin(), positives.end()), positives.end());
  if (positives.size() < folds) {
    throw std::invalid_argument("cross-validation: " + std::to_string(positives.size()) +
                                " positive establishments for " + std::to_string(folds) + " folds");
  }
  std::mt19937_64 rng(derive_seed(seed, "cv.folds"));
  std::shuffle(positives.begin(), positives.end(), rng);
  std::vector<std::vector<std::string>> out(folds);
  for (std::size_t i = 0; i < positives.size(); ++i) out[i % folds].push_back(positives[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

BusinessCvResult business_cv(const features::FeatureTable& table, const pu::PuConfig& cfg,
                             std::size_t folds, std::span<const rank::Aggregation> aggregations) {
  if (aggregations.empty()) throw std::invalid_argument("business_cv: no aggregation requested");
  std::vector<std::string> positives;
  std::unordered_set<std::string> advertised;
  for (const auto& r : table.rows) {
    if (r.category == LabelCategory::IllicitActive && advertised.insert(r.placekey).second) {
      positives.push_back(r.placekey);
    }
  }
  BusinessCvResult result;
  result.folds = establishment_folds(positives, folds, cfg.seed);
  for (auto a : aggregations) result.by_aggregation.push_back({a, {}, {}});

  for (std::size_t f = 0; f < result.folds.size(); ++f) {
    const std::unordered_set<std::string> holdout(result.folds[f].begin(), result.folds[f].end());
    std::vector<std::size_t> train_pos, train_unl, ranked_rows;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
      const auto& r = table.rows[i];
      const bool held = holdout.count(r.placekey) > 0;
      if (held) {
        ranked_rows.push_back(i);
      } else if (r.category == LabelCategory::IllicitActive) {
        train_pos.push_back(i);
      } else if (r.category == LabelCategory::NeverAsw) {
        train_unl.push_back(i);
        ranked_rows.push_back(i);
      }
    }
    pu::PuConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, "cv.fold", f);
    const auto model = pu::fit_pu_model(table.matrix(train_pos), table.matrix(train_unl), fold_cfg);
    const auto scores = model.score(table.matrix(ranked_rows));

    std::vector<std::pair<std::string, double>> week_scores(ranked_rows.size());
    for (std::size_t k = 0; k < ranked_rows.size(); ++k) {
      week_scores[k] = {table.rows[ranked_rows[k]].placekey, scores[k]};
    }
    for (auto& agg : result.by_aggregation) {
      const auto risks = rank::aggregate(week_scores, agg.aggregation);
      std::vector<double> pos, neg;
      std::vector<std::pair<std::string, double>> delta;
      delta.reserve(risks.size());
      for (const auto& r : risks) {
        (holdout.count(r.placekey) ? pos : neg).push_back(r.delta);
        delta.emplace_back(r.placekey, r.delta);
      }
      agg.fold_auc.push_back(auc(pos, neg));
      std::array<double, 4> cov{};
      for (std::size_t b = 0; b < kCoverageBudgets.size(); ++b) {
        cov[b] = coverage_at_budget(delta, holdout, kCoverageBudgets[b]);
      }
      agg.fold_coverage.push_back(cov);
    }
  }
  return result;
}

ImportanceResult permutation_importance(const Scorer& scorer, const Matrix& X,
                                        std::span<const std::uint8_t> pos_mask,
                                        std::size_t repeats, std::uint64_t seed) {
  if (pos_mask.size() != X.rows()) throw std::invalid_argument("permutation_importance: mask length mismatch");
  if (repeats < 1) throw std::invalid_argument("permutation_importance: repeats must be >= 1");
  auto split_auc = [&](const std::vector<double>& s) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < s.size(); ++i) (pos_mask[i] ? pos : neg).push_back(s[i]);
    return auc(pos, neg);
  };
  ImportanceResult out;
  out.baseline_auc = split_auc(scorer(X));
  out.drops.assign(X.cols(), 0.0);
  for (std::size_t j = 0; j < X.cols(); ++j) {
    std::mt19937_64 rng(derive_seed(seed, "importance", j));
    std::vector<double> column(X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) column[i] = X(i, j);
    double total = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      std::vector<double> shuffled = column;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      Matrix Xs = X;
      for (std::size_t i = 0; i < X.rows(); ++i) Xs(i, j) = shuffled[i];
      total += out.baseline_auc - split_auc(scorer(Xs));
    }
    out.drops[j] = total / static_cast<double>(repeats);
  }
  if (X.cols() == features::kFeatureCount) {
    std::map<std::string, double> groups;
    for (std::size_t j = 0; j < X.cols(); ++j) {
      groups[std::string(features::to_string(features::group_of(j)))] += out.drops[j];
    }
    out.group_totals.assign(groups.begin(), groups.end());
  }
  return out;
}

}  // namespace mobrisk::eval
