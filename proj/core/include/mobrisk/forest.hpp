#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mobrisk/matrix.hpp"

namespace mobrisk::forest {

struct ForestConfig {
  std::uint32_t n_trees = 100;
  std::uint32_t max_depth = 30;
  std::uint32_t min_leaf = 5;
  /// Candidate features drawn per node; capped at the matrix width.
  std::uint32_t features_per_split = 6;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ForestConfig&) const = default;
};

/// Flat tree node. Internal nodes send x[feature] <= value to `left` and
/// everything else to `left + 1`; leaves hold the positive fraction in
/// `value` and the bootstrap sample count in `count`.
struct Node {
  std::int32_t feature = -1;
  std::int32_t left = -1;
  double value = 0.0;
  std::uint32_t count = 0;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const Node&) const = default;
};

struct Tree {
  std::vector<Node> nodes;

  double predict(const double* x) const {
    const Node* n = nodes.data();
    while (!n->is_leaf()) {
      n = &nodes[static_cast<std::size_t>(n->left + (x[n->feature] <= n->value ? 0 : 1))];
    }
    return n->value;
  }
  std::size_t depth() const;
  std::size_t leaf_count() const;
  bool operator==(const Tree&) const = default;
};

class Forest {
 public:
  Forest() = default;
  Forest(ForestConfig config, std::size_t n_features, std::vector<std::string> feature_names,
         std::vector<Tree> trees);

  const ForestConfig& config() const { return config_; }
  std::size_t n_features() const { return n_features_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<Tree>& trees() const { return trees_; }

  /// Mean leaf positive fraction across trees. Throws on width mismatch.
  double predict_proba(std::span<const double> x) const;
  std::vector<double> predict_proba(const Matrix& X) const;

  std::string serialize() const;
  static Forest deserialize(std::string_view bytes);

  bool operator==(const Forest&) const = default;

 private:
  ForestConfig config_;
  std::size_t n_features_ = 0;
  std::vector<std::string> feature_names_;
  std::vector<Tree> trees_;
};

/// Bagged CART trees with Gini splits. `y` holds 0/1 labels. Deterministic
/// in (X, y, row order, config.seed); trees may be grown concurrently.
Forest fit_forest(const Matrix& X, std::span<const std::uint8_t> y, const ForestConfig& config,
                  std::vector<std::string> feature_names = {});

}  // namespace mobrisk::forest
