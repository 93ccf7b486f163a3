#include "mobrisk/pu.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "mobrisk/io.hpp"

namespace mobrisk::pu {

namespace {

constexpr std::string_view kBundleMagic = "MRPUBNDL";
constexpr std::uint32_t kBundleVersion = 1;

Matrix stack_rows(const Matrix& P, const Matrix& U, std::span<const std::size_t> u_rows) {
  Matrix X(P.cols());
  X.reserve_rows(P.rows() + u_rows.size());
  for (std::size_t i = 0; i < P.rows(); ++i) X.append_row(P.row(i));
  for (std::size_t i : u_rows) X.append_row(U.row(i));
  return X;
}

std::vector<std::uint8_t> stacked_labels(std::size_t n_pos, std::size_t n_neg) {
  std::vector<std::uint8_t> y(n_pos + n_neg, 0);
  std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n_pos), 1);
  return y;
}

void check_bagging_inputs(const Matrix& P, const Matrix& U) {
  if (P.rows() == 0) throw std::invalid_argument("pu_bagging: no positive rows");
  if (U.rows() < P.rows()) {
    throw std::invalid_argument("pu_bagging: unlabeled pool (" + std::to_string(U.rows()) +
                                " rows) is smaller than the positive set (" +
                                std::to_string(P.rows()) + " rows)");
  }
  if (P.cols() != U.cols()) throw std::invalid_argument("pu_bagging: P and U widths differ");
}

std::uint64_t forest_seed(std::uint64_t seed, std::uint32_t k) {
  return derive_seed(seed, "pu.forest", k);
}

void add_into(std::vector<double>& acc, const std::vector<double>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

void divide(std::vector<double>& acc, double k) {
  for (double& v : acc) v /= k;
}

template <class E>
E parse_enum(std::string_view s, std::initializer_list<E> values, std::string_view what) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(SpyUnit u) {
  return u == SpyUnit::Establishment ? "establishment" : "week";
}

std::string_view to_string(Approach a) {
  switch (a) {
    case Approach::A: return "A";
    case Approach::B: return "B";
    case Approach::C: return "C";
  }
  return "?";
}

std::string_view to_string(Role r) {
  switch (r) {
    case Role::TrainPositive: return "train_positive";
    case Role::Spy: return "spy";
    case Role::Unlabeled: return "unlabeled";
    case Role::QuietHeldOut: return "quiet_held_out";
  }
  return "?";
}

SpyUnit spy_unit_from_string(std::string_view s) {
  return parse_enum(s, {SpyUnit::Establishment, SpyUnit::ObservationWeek}, "spy unit");
}

Approach approach_from_string(std::string_view s) {
  return parse_enum(s, {Approach::A, Approach::B, Approach::C}, "approach");
}

Role role_from_string(std::string_view s) {
  return parse_enum(s, {Role::TrainPositive, Role::Spy, Role::Unlabeled, Role::QuietHeldOut},
                    "role");
}

void PuConfig::validate() const {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  if (!(spy_fraction > 0.0 && spy_fraction < 1.0)) {
    throw std::invalid_argument("spy_fraction must lie in (0,1)");
  }
  forest.validate();
}

nlohmann::json PuConfig::to_json() const {
  return {{"k", k},
          {"seed", seed},
          {"spy_fraction", spy_fraction},
          {"spy_unit", std::string(to_string(spy_unit))},
          {"forest",
           {{"n_trees", forest.n_trees},
            {"max_depth", forest.max_depth},
            {"min_leaf", forest.min_leaf},
            {"features_per_split", forest.features_per_split},
            {"seed", forest.seed}}}};
}

PuConfig PuConfig::from_json(const nlohmann::json& j) {
  PuConfig c;
  c.k = j.value("k", c.k);
  c.seed = j.value("seed", c.seed);
  c.spy_fraction = j.value("spy_fraction", c.spy_fraction);
  if (j.contains("spy_unit")) c.spy_unit = spy_unit_from_string(j.at("spy_unit").get<std::string>());
  if (j.contains("forest")) {
    const auto& f = j.at("forest");
    c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
    c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
    c.forest.min_leaf = f.value("min_leaf", c.forest.min_leaf);
    c.forest.features_per_split = f.value("features_per_split", c.forest.features_per_split);
    c.forest.seed = f.value("seed", c.forest.seed);
  }
  c.validate();
  return c;
}

std::vector<double> PuModel::score(const Matrix& X) const {
  if (forests.empty()) throw std::logic_error("PuModel has no forests");
  std::vector<double> acc(X.rows(), 0.0);
  for (const auto& f : forests) add_into(acc, f.predict_proba(X));
  divide(acc, static_cast<double>(forests.size()));
  return acc;
}

std::vector<std::vector<double>> PuModel::iteration_scores(const Matrix& X) const {
  std::vector<std::vector<double>> out;
  out.reserve(forests.size());
  for (const auto& f : forests) out.push_back(f.predict_proba(X));
  return out;
}

std::string PuModel::serialize() const {
  io::ByteWriter w;
  w.raw(kBundleMagic);
  w.u32(kBundleVersion);
  nlohmann::json meta = config.to_json();
  meta["approach"] = std::string(to_string(approach));
  meta["schema"] = std::string(features::kSchemaVersion);
  w.str(meta.dump());
  w.u32(static_cast<std::uint32_t>(feature_names.size()));
  for (const auto& n : feature_names) w.str(n);
  w.u32(static_cast<std::uint32_t>(spy_keys.size()));
  for (const auto& k : spy_keys) w.str(k);
  w.u32(static_cast<std::uint32_t>(forests.size()));
  for (const auto& f : forests) w.str(f.serialize());
  return w.take();
}

PuModel PuModel::deserialize(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < kBundleMagic.size() || r.raw(kBundleMagic.size()) != kBundleMagic) {
    throw std::runtime_error("not a model bundle (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kBundleVersion) {
    throw std::runtime_error("unsupported bundle version " + std::to_string(version));
  }
  const auto meta = nlohmann::json::parse(r.str());
  if (meta.value("schema", std::string()) != features::kSchemaVersion) {
    throw std::runtime_error("bundle feature schema does not match " +
                             std::string(features::kSchemaVersion));
  }
  PuModel m;
  m.config = PuConfig::from_json(meta);
  m.approach = approach_from_string(meta.at("approach").get<std::string>());
  m.feature_names.resize(r.u32());
  for (auto& n : m.feature_names) n = r.str();
  m.spy_keys.resize(r.u32());
  for (auto& k : m.spy_keys) k = r.str();
  const std::uint32_t n_forests = r.u32();
  m.forests.reserve(n_forests);
  for (std::uint32_t i = 0; i < n_forests; ++i) m.forests.push_back(forest::Forest::deserialize(r.str()));
  if (!r.at_end()) throw std::runtime_error("trailing bytes after model bundle");
  return m;
}

std::vector<std::size_t> pseudo_negative_sample(std::size_t n_unlabeled, std::size_t n_positive,
                                                std::uint64_t seed, std::uint32_t k) {
  if (n_positive > n_unlabeled) throw std::invalid_argument("sample larger than population");
  std::mt19937_64 rng(derive_seed(seed, "pu.sample", k));
  std::vector<std::size_t> idx(n_unlabeled);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n_positive; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n_unlabeled - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n_positive);
  std::sort(idx.begin(), idx.end());
  return idx;
}

PuModel fit_pu_model(const Matrix& P, const Matrix& U, const PuConfig& cfg,
                     std::vector<std::string> feature_names) {
  cfg.validate();
  check_bagging_inputs(P, U);
  PuModel model;
  model.config = cfg;
  model.feature_names = feature_names;
  model.forests.reserve(cfg.k);
  const auto y = stacked_labels(P.rows(), P.rows());
  for (std::uint32_t k = 0; k < cfg.k; ++k) {
    const auto sample = pseudo_negative_sample(U.rows(), P.rows(), cfg.seed, k);
    forest::ForestConfig fc = cfg.forest;
    fc.seed = forest_seed(cfg.seed, k);
    model.forests.push_back(forest::fit_forest(stack_rows(P, U, sample), y, fc, feature_names));
  }
  return model;
}

BaggingResult pu_bagging(const Matrix& P, const Matrix& U, const PuConfig& cfg,
                         std::vector<std::string> feature_names) {
  BaggingResult out;
  out.model = fit_pu_model(P, U, cfg, std::move(feature_names));
  out.positive_scores = out.model.score(P);
  out.unlabeled_scores = out.model.score(U);
  return out;
}

BaggingScores pu_bagging_scores(const Matrix& P, const Matrix& U, std::uint32_t k,
                                std::uint64_t seed, const BaseLearner& learner) {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  check_bagging_inputs(P, U);
  BaggingScores out{std::vector<double>(P.rows(), 0.0), std::vector<double>(U.rows(), 0.0)};
  const auto y = stacked_labels(P.rows(), P.rows());
  for (std::uint32_t it = 0; it < k; ++it) {
    const auto sample = pseudo_negative_sample(U.rows(), P.rows(), seed, it);
    const Predictor h = learner(stack_rows(P, U, sample), y, forest_seed(seed, it));
    add_into(out.positive_scores, h(P));
    add_into(out.unlabeled_scores, h(U));
  }
  divide(out.positive_scores, k);
  divide(out.unlabeled_scores, k);
  return out;
}

std::string spy_week_key(std::string_view placekey, Date week) {
  return std::string(placekey) + "|" + format_date(week);
}

SpySplit spy_split(std::span<const std::string> placekeys, std::span<const Date> weeks,
                   double fraction, SpyUnit unit, std::uint64_t seed) {
  if (placekeys.size() != weeks.size()) throw std::invalid_argument("spy_split: length mismatch");
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("spy_fraction must lie in (0,1)");
  std::mt19937_64 rng(derive_seed(seed, "pu.spy"));
  SpySplit split;
  if (unit == SpyUnit::Establishment) {
    std::vector<std::string> ids(placekeys.begin(), placekeys.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 2) {
      throw std::invalid_argument("spy_split: need at least 2 positive establishments, got " +
                                  std::to_string(ids.size()));
    }
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_spy = std::clamp<long long>(std::llround(fraction * static_cast<double>(ids.size())),
                                             1, static_cast<long long>(ids.size()) - 1);
    std::set<std::string> hidden(ids.begin(), ids.begin() + n_spy);
    for (std::size_t i = 0; i < placekeys.size(); ++i) {
      (hidden.count(placekeys[i]) ? split.spies : split.train).push_back(i);
    }
    split.spy_keys.assign(hidden.begin(), hidden.end());
  } else {
    if (placekeys.size() < 2) throw std::invalid_argument("spy_split: need at least 2 positive rows");
    std::vector<std::size_t> order(placekeys.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_spy = std::clamp<long long>(std::llround(fraction * static_cast<double>(order.size())),
                                             1, static_cast<long long>(order.size()) - 1);
    std::vector<std::uint8_t> is_spy(order.size(), 0);
    for (long long i = 0; i < n_spy; ++i) is_spy[order[static_cast<std::size_t>(i)]] = 1;
    std::set<std::string> keys;
    for (std::size_t i = 0; i < placekeys.size(); ++i) {
      if (is_spy[i]) {
        split.spies.push_back(i);
        keys.insert(spy_week_key(placekeys[i], weeks[i]));
      } else {
        split.train.push_back(i);
      }
    }
    split.spy_keys.assign(keys.begin(), keys.end());
  }
  return split;
}

std::vector<double> score_quiet(const PuModel& model, const Matrix& quiet_rows) {
  if (quiet_rows.rows() == 0) return {};
  return model.score(quiet_rows);
}

NaiveResult train_naive_baseline(const Matrix& P, const Matrix& U,
                                 const forest::ForestConfig& forest_cfg) {
  check_bagging_inputs(P, U);
  std::vector<std::size_t> all(U.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const auto y = stacked_labels(P.rows(), U.rows());
  NaiveResult out{forest::fit_forest(stack_rows(P, U, all), y, forest_cfg), {}, {}};
  out.positive_scores = out.forest.predict_proba(P);
  out.unlabeled_scores = out.forest.predict_proba(U);
  return out;
}

namespace {

RoleAssignment roles_from_spies(const features::FeatureTable& table, Approach approach,
                                SpyUnit unit, const std::unordered_set<std::string>& spy_keys) {
  RoleAssignment a;
  const auto& rows = table.rows;
  a.roles.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    const bool spy_establishment =
        unit == SpyUnit::Establishment && spy_keys.count(r.placekey) > 0;
    Role role = Role::Unlabeled;
    switch (r.category) {
      case LabelCategory::IllicitActive: {
        const bool spy = unit == SpyUnit::Establishment
                             ? spy_establishment
                             : spy_keys.count(spy_week_key(r.placekey, r.week_start)) > 0;
        role = spy ? Role::Spy : Role::TrainPositive;
        break;
      }
      case LabelCategory::IllicitQuiet:
        if (spy_establishment || approach == Approach::A) {
          role = Role::QuietHeldOut;
        } else {
          role = approach == Approach::B ? Role::Unlabeled : Role::TrainPositive;
        }
        break;
      case LabelCategory::NeverAsw:
        role = Role::Unlabeled;
        break;
    }
    a.roles[i] = role;
    switch (role) {
      case Role::TrainPositive: a.positives.push_back(i); break;
      case Role::Spy:
        a.spies.push_back(i);
        a.unlabeled.push_back(i);
        break;
      case Role::Unlabeled: a.unlabeled.push_back(i); break;
      case Role::QuietHeldOut: break;
    }
  }
  a.spy_keys.assign(spy_keys.begin(), spy_keys.end());
  std::sort(a.spy_keys.begin(), a.spy_keys.end());
  return a;
}

}  // namespace

RoleAssignment assign_roles(const features::FeatureTable& table, Approach approach,
                            bool with_spies, const PuConfig& cfg) {
  std::unordered_set<std::string> spy_keys;
  if (with_spies) {
    std::vector<std::string> keys;
    std::vector<Date> weeks;
    for (const auto& r : table.rows) {
      if (r.category != LabelCategory::IllicitActive) continue;
      keys.push_back(r.placekey);
      weeks.push_back(r.week_start);
    }
    const auto split = spy_split(keys, weeks, cfg.spy_fraction, cfg.spy_unit, cfg.seed);
    spy_keys.insert(split.spy_keys.begin(), split.spy_keys.end());
  }
  return roles_from_spies(table, approach, cfg.spy_unit, spy_keys);
}

std::vector<Role> roles_for_model(const features::FeatureTable& table, const PuModel& model) {
  const std::unordered_set<std::string> keys(model.spy_keys.begin(), model.spy_keys.end());
  return roles_from_spies(table, model.approach, model.config.spy_unit, keys).roles;
}

TrainResult train(const features::FeatureTable& table, const PuConfig& cfg, Approach approach,
                  bool with_spies) {
  TrainResult out;
  out.assignment = assign_roles(table, approach, with_spies, cfg);
  const Matrix P = table.matrix(out.assignment.positives);
  const Matrix U = table.matrix(out.assignment.unlabeled);
  out.model = fit_pu_model(P, U, cfg);
  out.model.approach = approach;
  out.model.spy_keys = out.assignment.spy_keys;
  return out;
}

std::vector<ScoredObservation> make_scored(const features::FeatureTable& table,
                                           std::span<const Role> roles,
                                           std::span<const double> scores) {
  if (roles.size() != table.rows.size() || scores.size() != table.rows.size()) {
    throw std::invalid_argument("make_scored: length mismatch");
  }
  std::vector<ScoredObservation> out(table.rows.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& r = table.rows[i];
    out[i] = {r.placekey, r.week_start, r.category, roles[i], scores[i]};
  }
  return out;
}

std::vector<ScoredObservation> score_table(const features::FeatureTable& table,
                                           const PuModel& model) {
  if (model.feature_names != features::canonical_names()) {
    throw std::invalid_argument("model feature names do not match the feature table columns");
  }
  const auto roles = roles_for_model(table, model);
  const auto scores = model.score(table.matrix());
  return make_scored(table, roles, scores);
}

nlohmann::json scored_to_json(const ScoredObservation& s) {
  return {{"placekey", s.placekey},
          {"week_start", format_date(s.week_start)},
          {"category", std::string(to_string(s.category))},
          {"role", std::string(to_string(s.role))},
          {"score", s.score}};
}

ScoredObservation scored_from_json(const nlohmann::json& j) {
  ScoredObservation s;
  s.placekey = j.at("placekey").get<std::string>();
  s.week_start = parse_date_or_throw(j.at("week_start").get<std::string>());
  s.category = label_category_from_string(j.at("category").get<std::string>());
  s.role = role_from_string(j.at("role").get<std::string>());
  s.score = j.at("score").get<double>();
  if (!(s.score >= 0.0 && s.score <= 1.0)) throw std::invalid_argument("score outside [0,1]");
  return s;
}

std::string write_scores_jsonl(std::span<const ScoredObservation> rows) {
  std::string out;
  for (const auto& r : rows) {
    out += scored_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<ScoredObservation> parse_scores_jsonl(std::string_view text) {
  std::vector<ScoredObservation> out;
  std::size_t line_no = 0;
  for (auto line : io::split_lines(text)) {
    ++line_no;
    try {
      out.push_back(scored_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("scores line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mobrisk::pu
