#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace mobrisk::rank {

enum class Aggregation { Mean, Max, Min };

std::string_view to_string(Aggregation a);
Aggregation aggregation_from_string(std::string_view s);

struct EstablishmentRisk {
  std::string placekey;
  double delta = 0.0;
  std::size_t weeks_observed = 0;
  Aggregation aggregation = Aggregation::Max;
};

/// Throws std::invalid_argument on an empty sequence.
double aggregate_scores(std::span<const double> week_scores, Aggregation method);

/// Groups (placekey, week score) pairs by placekey. Output is ordered by
/// placekey.
std::vector<EstablishmentRisk> aggregate(std::span<const std::pair<std::string, double>> week_scores,
                                         Aggregation method);

/// Descending delta, ties by placekey.
std::vector<EstablishmentRisk> rank_establishments(std::vector<EstablishmentRisk> risks);

std::string write_ranks_csv(std::span<const EstablishmentRisk> ranked);
std::vector<EstablishmentRisk> parse_ranks_csv(std::string_view text);

enum class AllocationMode { Exact, Greedy };

std::string_view to_string(AllocationMode m);
AllocationMode allocation_mode_from_string(std::string_view s);

struct AllocationPlan {
  std::vector<std::string> selected;  // in ranking order
  double total_cost = 0.0;
  double expected_detections = 0.0;
  double budget = 0.0;
  AllocationMode mode = AllocationMode::Exact;

  nlohmann::json to_json() const;
};

struct KnapsackItem {
  double value = 0.0;
  double cost = 1.0;
};

/// 0/1 knapsack by dynamic programming over integer capacity
/// min(floor(budget), total cost). Returns chosen indices ascending.
/// Requires integer costs.
std::vector<std::size_t> knapsack_exact(std::span<const KnapsackItem> items, double budget);

/// Value/cost ratio order, skipping items that no longer fit. `tie_order`
/// (optional) gives each item's rank for breaking equal ratios.
std::vector<std::size_t> knapsack_greedy(std::span<const KnapsackItem> items, double budget,
                                         std::span<const std::size_t> tie_order = {});

/// Costs missing from `costs` default to 1.
AllocationPlan solve_allocation(std::span<const EstablishmentRisk> risks,
                                const std::unordered_map<std::string, double>& costs,
                                double budget, AllocationMode mode);

/// CSV columns: placekey, cost.
std::unordered_map<std::string, double> parse_costs_csv(std::string_view text);

}  // namespace mobrisk::rank
