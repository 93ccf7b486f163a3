#include "mobrisk/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>

#include "mobrisk/common.hpp"
#include "mobrisk/io.hpp"

namespace mobrisk::forest {

namespace {

constexpr std::string_view kMagic = "MRFOREST";
constexpr std::uint32_t kFormatVersion = 1;
constexpr double kMinGain = 1e-12;
constexpr std::size_t kPredictBlock = 512;

// Per-fit view of X shared by all trees: dense value ranks per feature, the
// distinct sorted values behind each rank, and rows ordered by each feature.
struct Presorted {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<std::uint32_t> rank;   // rank[f * n + i]
  std::vector<std::uint32_t> order;  // order[f * n + k], rows ascending by feature f
  std::vector<std::vector<double>> distinct;

  explicit Presorted(const Matrix& X) : n(X.rows()), d(X.cols()), rank(n * d), order(n * d), distinct(d) {
    std::vector<std::uint32_t> idx(n);
    for (std::size_t f = 0; f < d; ++f) {
      std::iota(idx.begin(), idx.end(), 0u);
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return X(a, f) < X(b, f); });
      auto& vals = distinct[f];
      for (std::size_t k = 0; k < n; ++k) {
        const double v = X(idx[k], f);
        if (vals.empty() || vals.back() < v) vals.push_back(v);
        rank[f * n + idx[k]] = static_cast<std::uint32_t>(vals.size() - 1);
        order[f * n + k] = idx[k];
      }
    }
  }
};

struct SplitChoice {
  std::size_t feature = 0;
  std::uint32_t left_rank = 0;   // largest rank sent left
  std::uint32_t right_rank = 0;  // smallest rank sent right
  double gain = kMinGain;
  bool found = false;
};

// Weighted Gini impurity times weight: w - (p^2 + (w-p)^2) / w.
double weighted_gini(double w, double p) {
  if (w <= 0.0) return 0.0;
  const double q = w - p;
  return w - (p * p + q * q) / w;
}

class TreeBuilder {
 public:
  TreeBuilder(const Presorted& ps, std::span<const std::uint8_t> y, const ForestConfig& cfg,
              std::size_t features_per_split, std::uint64_t seed)
      : ps_(ps), y_(y), cfg_(cfg), mtry_(features_per_split), rng_(seed) {}

  Tree build() {
    const std::size_t n = ps_.n;
    weight_.assign(n, 0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t i = 0; i < n; ++i) ++weight_[pick(rng_)];

    m_ = static_cast<std::size_t>(std::count_if(weight_.begin(), weight_.end(),
                                                [](std::uint32_t w) { return w > 0; }));
    idx_.resize(ps_.d * m_);
    for (std::size_t f = 0; f < ps_.d; ++f) {
      std::uint32_t* out = &idx_[f * m_];
      for (std::size_t k = 0; k < n; ++k) {
        const std::uint32_t row = ps_.order[f * n + k];
        if (weight_[row] > 0) *out++ = row;
      }
    }
    scratch_.resize(m_);
    goes_left_.assign(n, 0);
    features_.resize(ps_.d);

    tree_.nodes.clear();
    tree_.nodes.emplace_back();
    grow(0, 0, m_, 0);
    return std::move(tree_);
  }

 private:
  void grow(std::size_t node_id, std::size_t begin, std::size_t end, std::uint32_t depth) {
    double w = 0.0, p = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::uint32_t row = idx_[k];
      w += weight_[row];
      if (y_[row]) p += weight_[row];
    }

    const bool stop = depth >= cfg_.max_depth || w < 2.0 * cfg_.min_leaf || p == 0.0 || p == w;
    const SplitChoice split = stop ? SplitChoice{} : best_split(begin, end, w, p);
    if (!split.found) {
      Node& leaf = tree_.nodes[node_id];
      leaf.feature = -1;
      leaf.left = -1;
      leaf.value = p / w;
      leaf.count = static_cast<std::uint32_t>(w);
      return;
    }

    const std::size_t n = ps_.n;
    const std::size_t f = split.feature;
    std::size_t n_left = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const std::uint32_t row = idx_[f * m_ + k];
      const bool left = ps_.rank[f * n + row] <= split.left_rank;
      goes_left_[row] = left;
      n_left += left;
    }
    for (std::size_t g = 0; g < ps_.d; ++g) {
      std::uint32_t* seg = &idx_[g * m_];
      std::size_t l = 0, r = n_left;
      for (std::size_t k = begin; k < end; ++k) {
        const std::uint32_t row = seg[k];
        scratch_[goes_left_[row] ? l++ : r++] = row;
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(end - begin),
                seg + begin);
    }

    const double lo = ps_.distinct[f][split.left_rank];
    const double hi = ps_.distinct[f][split.right_rank];
    double threshold = lo + (hi - lo) / 2.0;
    if (!(threshold < hi)) threshold = lo;

    const auto left_id = static_cast<std::int32_t>(tree_.nodes.size());
    {
      Node& node = tree_.nodes[node_id];
      node.feature = static_cast<std::int32_t>(f);
      node.left = left_id;
      node.value = threshold;
      node.count = static_cast<std::uint32_t>(w);
    }
    tree_.nodes.emplace_back();
    tree_.nodes.emplace_back();
    grow(static_cast<std::size_t>(left_id), begin, begin + n_left, depth + 1);
    grow(static_cast<std::size_t>(left_id) + 1, begin + n_left, end, depth + 1);
  }

  SplitChoice best_split(std::size_t begin, std::size_t end, double w, double p) {
    const std::size_t d = ps_.d;
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    for (std::size_t i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, d - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }
    std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));

    const double parent = weighted_gini(w, p);
    const double min_leaf = cfg_.min_leaf;
    const std::size_t n = ps_.n;
    SplitChoice best;
    for (std::size_t s = 0; s < mtry_; ++s) {
      const std::size_t f = features_[s];
      const std::uint32_t* seg = &idx_[f * m_];
      const std::uint32_t* rank = &ps_.rank[f * n];
      double wl = 0.0, pl = 0.0;
      for (std::size_t k = begin; k + 1 < end; ++k) {
        const std::uint32_t row = seg[k];
        wl += weight_[row];
        if (y_[row]) pl += weight_[row];
        const std::uint32_t r_here = rank[row];
        const std::uint32_t r_next = rank[seg[k + 1]];
        if (r_here == r_next) continue;
        const double wr = w - wl;
        if (wl < min_leaf) continue;
        if (wr < min_leaf) break;
        const double gain = (parent - weighted_gini(wl, pl) - weighted_gini(wr, p - pl)) / w;
        if (gain > best.gain) {
          best = {f, r_here, r_next, gain, true};
        }
      }
    }
    return best;
  }

  const Presorted& ps_;
  std::span<const std::uint8_t> y_;
  const ForestConfig& cfg_;
  std::size_t mtry_;
  std::mt19937_64 rng_;

  std::vector<std::uint32_t> weight_;
  std::vector<std::uint32_t> idx_;  // idx_[f * m_ + k]
  std::vector<std::uint32_t> scratch_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<std::size_t> features_;
  std::size_t m_ = 0;
  Tree tree_;
};

}  // namespace

void ForestConfig::validate() const {
  if (n_trees < 1) throw std::invalid_argument("n_trees must be >= 1");
  if (max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
  if (min_leaf < 1) throw std::invalid_argument("min_leaf must be >= 1");
  if (features_per_split < 1) throw std::invalid_argument("features_per_split must be >= 1");
}

std::size_t Tree::depth() const {
  if (nodes.empty()) return 0;
  std::size_t best = 0;
  std::vector<std::pair<std::size_t, std::size_t>> stack = {{0, 0}};
  while (!stack.empty()) {
    const auto [id, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    const Node& n = nodes[id];
    if (!n.is_leaf()) {
      stack.emplace_back(static_cast<std::size_t>(n.left), d + 1);
      stack.emplace_back(static_cast<std::size_t>(n.left) + 1, d + 1);
    }
  }
  return best;
}

std::size_t Tree::leaf_count() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.is_leaf(); }));
}

Forest::Forest(ForestConfig config, std::size_t n_features, std::vector<std::string> feature_names,
               std::vector<Tree> trees)
    : config_(config),
      n_features_(n_features),
      feature_names_(std::move(feature_names)),
      trees_(std::move(trees)) {
  if (trees_.empty()) throw std::invalid_argument("forest needs at least one tree");
  if (!feature_names_.empty() && feature_names_.size() != n_features_) {
    throw std::invalid_argument("feature name count does not match feature width");
  }
  for (const Tree& t : trees_) {
    if (t.nodes.empty()) throw std::invalid_argument("empty tree");
    for (const Node& n : t.nodes) {
      if (n.is_leaf()) continue;
      if (static_cast<std::size_t>(n.feature) >= n_features_ || n.left <= 0 ||
          static_cast<std::size_t>(n.left) + 1 >= t.nodes.size()) {
        throw std::invalid_argument("tree node references out of range");
      }
    }
  }
}

double Forest::predict_proba(std::span<const double> x) const {
  if (x.size() != n_features_) {
    throw std::invalid_argument("predict_proba: expected " + std::to_string(n_features_) +
                                " features, got " + std::to_string(x.size()));
  }
  double sum = 0.0;
  for (const Tree& t : trees_) sum += t.predict(x.data());
  return sum / static_cast<double>(trees_.size());
}

std::vector<double> Forest::predict_proba(const Matrix& X) const {
  if (X.cols() != n_features_ && X.rows() > 0) {
    throw std::invalid_argument("predict_proba: expected " + std::to_string(n_features_) +
                                " features, got " + std::to_string(X.cols()));
  }
  std::vector<double> out(X.rows(), 0.0);
  const std::size_t blocks = (X.rows() + kPredictBlock - 1) / kPredictBlock;
  // Tree-outer within a row block keeps each tree hot in cache; every row
  // still sums its trees in index order.
  parallel_for(blocks, [&](std::size_t b) {
    const std::size_t lo = b * kPredictBlock;
    const std::size_t hi = std::min(X.rows(), lo + kPredictBlock);
    for (const Tree& t : trees_) {
      for (std::size_t r = lo; r < hi; ++r) out[r] += t.predict(X.row(r).data());
    }
    for (std::size_t r = lo; r < hi; ++r) out[r] /= static_cast<double>(trees_.size());
  });
  return out;
}

std::string Forest::serialize() const {
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kFormatVersion);
  w.u32(config_.n_trees);
  w.u32(config_.max_depth);
  w.u32(config_.min_leaf);
  w.u32(config_.features_per_split);
  w.u64(config_.seed);
  w.u64(n_features_);
  w.u32(static_cast<std::uint32_t>(feature_names_.size()));
  for (const auto& name : feature_names_) w.str(name);
  w.u32(static_cast<std::uint32_t>(trees_.size()));
  for (const Tree& t : trees_) {
    w.u32(static_cast<std::uint32_t>(t.nodes.size()));
    for (const Node& n : t.nodes) {
      w.i32(n.feature);
      w.i32(n.left);
      w.f64(n.value);
      w.u32(n.count);
    }
  }
  return w.take();
}

Forest Forest::deserialize(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.raw(kMagic.size()) != kMagic) {
    throw std::runtime_error("not a forest model (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw std::runtime_error("unsupported forest format version " + std::to_string(version));
  }
  ForestConfig cfg;
  cfg.n_trees = r.u32();
  cfg.max_depth = r.u32();
  cfg.min_leaf = r.u32();
  cfg.features_per_split = r.u32();
  cfg.seed = r.u64();
  const auto n_features = static_cast<std::size_t>(r.u64());
  std::vector<std::string> names(r.u32());
  for (auto& name : names) name = r.str();
  std::vector<Tree> trees(r.u32());
  for (Tree& t : trees) {
    const std::uint32_t n_nodes = r.u32();
    if (static_cast<std::size_t>(n_nodes) * 20 > r.remaining()) {
      throw std::runtime_error("binary data truncated");
    }
    t.nodes.resize(n_nodes);
    for (Node& n : t.nodes) {
      n.feature = r.i32();
      n.left = r.i32();
      n.value = r.f64();
      n.count = r.u32();
    }
  }
  if (!r.at_end()) throw std::runtime_error("trailing bytes after forest model");
  return Forest(cfg, n_features, std::move(names), std::move(trees));
}

Forest fit_forest(const Matrix& X, std::span<const std::uint8_t> y, const ForestConfig& config,
                  std::vector<std::string> feature_names) {
  config.validate();
  const std::size_t n = X.rows();
  const std::size_t d = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_forest: label count does not match rows");
  if (d == 0) throw std::invalid_argument("fit_forest: no features");
  if (n < 2 * static_cast<std::size_t>(config.min_leaf)) {
    throw std::invalid_argument("fit_forest: need at least 2*min_leaf rows, got " + std::to_string(n));
  }
  if (n > std::numeric_limits<std::uint32_t>::max()) {
    throw std::invalid_argument("fit_forest: too many rows");
  }
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] > 1) throw std::invalid_argument("fit_forest: labels must be 0 or 1");
    positives += y[i];
  }
  if (positives == 0 || positives == n) {
    throw std::invalid_argument("fit_forest: training data contains a single class");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      if (!std::isfinite(X(i, c))) {
        throw std::invalid_argument("fit_forest: non-finite value at row " + std::to_string(i) +
                                    ", column " + std::to_string(c));
      }
    }
  }

  const Presorted ps(X);
  const std::size_t mtry = std::min<std::size_t>(config.features_per_split, d);
  std::vector<Tree> trees(config.n_trees);
  parallel_for(trees.size(), [&](std::size_t t) {
    TreeBuilder builder(ps, y, config, mtry, derive_seed(config.seed, "forest.tree", t));
    trees[t] = builder.build();
  });
  return Forest(config, d, std::move(feature_names), std::move(trees));
}

}  // namespace mobrisk::forest
