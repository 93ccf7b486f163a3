#include "mobrisk/rank.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mobrisk/io.hpp"

namespace mobrisk::rank {

namespace {

// Upper bound on DP choice-table cells (bits).
constexpr double kMaxTableBits = 2e9;

bool ranks_before(const EstablishmentRisk& a, const EstablishmentRisk& b) {
  if (a.delta != b.delta) return a.delta > b.delta;
  return a.placekey < b.placekey;
}

void check_items(std::span<const KnapsackItem> items, double budget) {
  if (!std::isfinite(budget) || budget < 0.0) throw std::invalid_argument("budget must be finite and >= 0");
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!(items[i].cost > 0.0) || !std::isfinite(items[i].cost)) {
      throw std::invalid_argument("item " + std::to_string(i) + ": cost must be positive");
    }
    if (!std::isfinite(items[i].value)) {
      throw std::invalid_argument("item " + std::to_string(i) + ": value must be finite");
    }
  }
}

}  // namespace

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Mean: return "mean";
    case Aggregation::Max: return "max";
    case Aggregation::Min: return "min";
  }
  return "?";
}

Aggregation aggregation_from_string(std::string_view s) {
  for (Aggregation a : {Aggregation::Mean, Aggregation::Max, Aggregation::Min}) {
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument("unknown aggregation '" + std::string(s) + "' (mean|max|min)");
}

std::string_view to_string(AllocationMode m) { return m == AllocationMode::Exact ? "exact" : "greedy"; }

AllocationMode allocation_mode_from_string(std::string_view s) {
  if (s == "exact") return AllocationMode::Exact;
  if (s == "greedy") return AllocationMode::Greedy;
  throw std::invalid_argument("unknown allocation mode '" + std::string(s) + "' (exact|greedy)");
}

double aggregate_scores(std::span<const double> week_scores, Aggregation method) {
  if (week_scores.empty()) throw std::invalid_argument("aggregate: empty score sequence");
  switch (method) {
    case Aggregation::Mean:
      return std::accumulate(week_scores.begin(), week_scores.end(), 0.0) /
             static_cast<double>(week_scores.size());
    case Aggregation::Max:
      return *std::max_element(week_scores.begin(), week_scores.end());
    case Aggregation::Min:
      return *std::min_element(week_scores.begin(), week_scores.end());
  }
  throw std::invalid_argument("aggregate: unknown method");
}

std::vector<EstablishmentRisk> aggregate(std::span<const std::pair<std::string, double>> week_scores,
                                         Aggregation method) {
  std::map<std::string, std::vector<double>> grouped;
  for (const auto& [key, score] : week_scores) grouped[key].push_back(score);
  std::vector<EstablishmentRisk> out;
  out.reserve(grouped.size());
  for (const auto& [key, scores] : grouped) {
    out.push_back({key, aggregate_scores(scores, method), scores.size(), method});
  }
  return out;
}

std::vector<EstablishmentRisk> rank_establishments(std::vector<EstablishmentRisk> risks) {
  std::sort(risks.begin(), risks.end(), ranks_before);
  return risks;
}

std::string write_ranks_csv(std::span<const EstablishmentRisk> ranked) {
  std::string out = io::csv_row({"rank", "placekey", "delta", "weeks_observed", "aggregation"});
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    out += io::csv_row({std::to_string(i + 1), r.placekey, io::format_double(r.delta),
                        std::to_string(r.weeks_observed), std::string(to_string(r.aggregation))});
  }
  return out;
}

std::vector<EstablishmentRisk> parse_ranks_csv(std::string_view text) {
  const io::CsvTable t = io::parse_csv(text);
  std::vector<EstablishmentRisk> out;
  if (t.header.empty()) return out;
  const auto c_key = t.column("placekey");
  const auto c_delta = t.column("delta");
  const auto c_weeks = t.find_column("weeks_observed");
  const auto c_agg = t.find_column("aggregation");
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw std::invalid_argument("ranks file: column count mismatch");
    EstablishmentRisk r;
    r.placekey = row[c_key];
    r.delta = io::parse_double(row[c_delta]);
    if (!(r.delta >= 0.0 && r.delta <= 1.0)) {
      throw std::invalid_argument("ranks file: delta outside [0,1] for " + r.placekey);
    }
    if (c_weeks) r.weeks_observed = static_cast<std::size_t>(io::parse_int(row[*c_weeks]));
    if (c_agg) r.aggregation = aggregation_from_string(row[*c_agg]);
    out.push_back(std::move(r));
  }
  return out;
}

nlohmann::json AllocationPlan::to_json() const {
  return {{"mode", std::string(to_string(mode))},
          {"budget", budget},
          {"total_cost", total_cost},
          {"expected_detections", expected_detections},
          {"n_selected", selected.size()},
          {"selected", selected}};
}

std::vector<std::size_t> knapsack_exact(std::span<const KnapsackItem> items, double budget) {
  check_items(items, budget);
  std::vector<std::size_t> cost(items.size());
  double total = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double c = items[i].cost;
    if (c != std::floor(c) || c > 1e12) {
      throw std::invalid_argument("exact allocation needs integer costs (item " + std::to_string(i) +
                                  " has cost " + io::format_double(c) + "); use greedy mode");
    }
    cost[i] = static_cast<std::size_t>(c);
    total += c;
  }
  const double cap_real = std::min(std::floor(budget), total);
  if ((cap_real + 1.0) * static_cast<double>(std::max<std::size_t>(items.size(), 1)) > kMaxTableBits) {
    throw std::invalid_argument("exact allocation table too large; use greedy mode");
  }
  const auto cap = static_cast<std::size_t>(cap_real);
  const std::size_t width = cap + 1;
  std::vector<double> best(width, 0.0);
  std::vector<bool> take(items.size() * width, false);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::size_t c = cost[i];
    if (c > cap) continue;
    const double v = items[i].value;
    for (std::size_t b = cap + 1; b-- > c;) {
      const double cand = best[b - c] + v;
      if (cand > best[b]) {
        best[b] = cand;
        take[i * width + b] = true;
      }
    }
  }
  std::vector<std::size_t> chosen;
  std::size_t b = cap;
  for (std::size_t i = items.size(); i-- > 0;) {
    if (take[i * width + b]) {
      chosen.push_back(i);
      b -= cost[i];
    }
  }
  std::reverse(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<std::size_t> knapsack_greedy(std::span<const KnapsackItem> items, double budget,
                                         std::span<const std::size_t> tie_order) {
  check_items(items, budget);
  if (!tie_order.empty() && tie_order.size() != items.size()) {
    throw std::invalid_argument("knapsack_greedy: tie order length mismatch");
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double ra = items[a].value / items[a].cost;
    const double rb = items[b].value / items[b].cost;
    if (ra != rb) return ra > rb;
    return tie_order.empty() ? a < b : tie_order[a] < tie_order[b];
  });
  std::vector<std::size_t> chosen;
  double remaining = budget;
  for (std::size_t i : order) {
    if (items[i].cost <= remaining) {
      chosen.push_back(i);
      remaining -= items[i].cost;
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::unordered_map<std::string, double> parse_costs_csv(std::string_view text) {
  const io::CsvTable t = io::parse_csv(text);
  std::unordered_map<std::string, double> out;
  if (t.header.empty()) return out;
  const auto c_key = t.column("placekey");
  const auto c_cost = t.column("cost");
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw std::invalid_argument("cost file: column count mismatch");
    const double c = io::parse_double(row[c_cost]);
    if (!(c > 0.0)) throw std::invalid_argument("cost file: non-positive cost for " + row[c_key]);
    out[row[c_key]] = c;
  }
  return out;
}

AllocationPlan solve_allocation(std::span<const EstablishmentRisk> risks,
                                const std::unordered_map<std::string, double>& costs,
                                double budget, AllocationMode mode) {
  const auto ranked = rank_establishments({risks.begin(), risks.end()});
  std::vector<KnapsackItem> items(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    auto it = costs.find(ranked[i].placekey);
    items[i] = {ranked[i].delta, it == costs.end() ? 1.0 : it->second};
  }
  // Items are already in ranking order, so index order breaks greedy ties.
  const auto chosen = mode == AllocationMode::Exact ? knapsack_exact(items, budget)
                                                    : knapsack_greedy(items, budget);
  AllocationPlan plan;
  plan.mode = mode;
  plan.budget = budget;
  for (std::size_t i : chosen) {
    plan.selected.push_back(ranked[i].placekey);
    plan.total_cost += items[i].cost;
    plan.expected_detections += items[i].value;
  }
  return plan;
}

}  // namespace mobrisk::rank
