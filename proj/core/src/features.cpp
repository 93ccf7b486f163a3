#include "mobrisk/features.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "mobrisk/io.hpp"

namespace mobrisk::features {

FeatureGroup group_of(std::size_t i) {
  if (i < kHourlyEntropy) return FeatureGroup::Temporal;
  if (i < kShortVisitShare) return FeatureGroup::Distribution;
  if (i < kDist0to1) return FeatureGroup::Duration;
  if (i < kCv) return FeatureGroup::MarketReach;
  if (i < kLogCbgArea) return FeatureGroup::Consistency;
  if (i < kLogVisits) return FeatureGroup::Context;
  if (i == kLogVisits) return FeatureGroup::Volume;
  throw std::out_of_range("feature index out of range");
}

std::string_view to_string(FeatureGroup g) {
  switch (g) {
    case FeatureGroup::Temporal: return "temporal_patterns";
    case FeatureGroup::Distribution: return "visit_distribution";
    case FeatureGroup::Duration: return "service_duration";
    case FeatureGroup::MarketReach: return "market_reach";
    case FeatureGroup::Consistency: return "operational_consistency";
    case FeatureGroup::Context: return "location_context";
    case FeatureGroup::Volume: return "volume_control";
  }
  return "?";
}

std::vector<std::string> canonical_names() {
  return {kFeatureNames.begin(), kFeatureNames.end()};
}

double FeatureVector::get(std::string_view name) const {
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (kFeatureNames[i] == name) return values[i];
  }
  throw std::invalid_argument("unknown feature '" + std::string(name) + "'");
}

namespace {

struct HourDayTotals {
  std::array<std::int64_t, 24> by_hour{};
  std::array<std::int64_t, 7> by_day{};
  std::int64_t total = 0;
};

HourDayTotals totals_of(const ingest::HourlyVisits& hourly) {
  HourDayTotals t;
  for (std::size_t d = 0; d < 7; ++d) {
    for (std::size_t h = 0; h < 24; ++h) {
      const std::int64_t v = hourly[24 * d + h];
      t.by_hour[h] += v;
      t.by_day[d] += v;
      t.total += v;
    }
  }
  return t;
}

template <std::size_t N>
double shannon_entropy(const std::array<std::int64_t, N>& counts, std::int64_t total) {
  if (total <= 0) return 0.0;
  double h = 0.0;
  for (std::int64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log(p);
  }
  return h;
}


double population_sd(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

std::array<double, 8> temporal_shares(const ingest::HourlyVisits& hourly) {
  const HourDayTotals t = totals_of(hourly);
  std::array<double, 8> out{};
  if (t.total == 0) return out;
  // Window starts in canonical order: early_morning, morning_business,
  // afternoon, evening, late_evening, late_night.
  constexpr std::array<std::size_t, 6> kWindowStart = {4, 8, 12, 16, 20, 0};
  const double total = static_cast<double>(t.total);
  for (std::size_t w = 0; w < 6; ++w) {
    std::int64_t sum = 0;
    for (std::size_t h = kWindowStart[w]; h < kWindowStart[w] + 4; ++h) sum += t.by_hour[h];
    out[w] = static_cast<double>(sum) / total;
  }
  out[6] = static_cast<double>(t.by_day[5] + t.by_day[6]) / total;
  out[7] = static_cast<double>(t.by_day[4] + t.by_day[5]) / total;
  return out;
}

EntropyFeatures entropy_features(const ingest::HourlyVisits& hourly) {
  const HourDayTotals t = totals_of(hourly);
  EntropyFeatures e;
  if (t.total == 0) return e;
  e.hourly_entropy = shannon_entropy(t.by_hour, t.total);
  e.daily_entropy = shannon_entropy(t.by_day, t.total);
  e.peak_hour_ratio = static_cast<double>(*std::max_element(t.by_hour.begin(), t.by_hour.end())) /
                      static_cast<double>(t.total);
  return e;
}

std::array<double, 3> dwell_shares(const ingest::CountMap& dwell_buckets) {
  std::array<std::int64_t, 3> groups{};
  for (const auto& [label, count] : dwell_buckets) {
    if (label == "<5") {
      groups[0] += count;
    } else if (label == "5-10" || label == "11-20" || label == "21-60") {
      groups[1] += count;
    } else if (label == "61-120" || label == "121-240" || label == ">240") {
      groups[2] += count;
    } else {
      throw std::invalid_argument("unknown dwell bucket '" + label + "'");
    }
  }
  const std::int64_t total = groups[0] + groups[1] + groups[2];
  std::array<double, 3> out{};
  if (total == 0) return out;
  for (std::size_t i = 0; i < 3; ++i) {
    out[i] = static_cast<double>(groups[i]) / static_cast<double>(total);
  }
  return out;
}

double haversine_miles(double lat1, double lon1, double lat2, double lon2) {
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlambda = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double a = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusMiles * std::asin(std::sqrt(std::clamp(a, 0.0, 1.0)));
}

void GeoIndex::add(CbgGeo geo) {
  if (!(geo.land_area > 0.0)) {
    throw std::invalid_argument("CBG " + geo.cbg_id + ": land_area must be positive");
  }
  std::string id = geo.cbg_id;
  auto [it, inserted] = by_id_.insert_or_assign(id, std::move(geo));
  (void)it;
  if (inserted) order_.push_back(std::move(id));
}

const CbgGeo* GeoIndex::find(std::string_view cbg_id) const {
  auto it = by_id_.find(std::string(cbg_id));
  return it == by_id_.end() ? nullptr : &it->second;
}

GeoIndex GeoIndex::from_csv(std::string_view text) {
  const io::CsvTable t = io::parse_csv(text);
  GeoIndex idx;
  if (t.header.empty()) return idx;
  const auto c_id = t.column("cbg_id");
  const auto c_lat = t.column("centroid_lat");
  const auto c_lon = t.column("centroid_lon");
  const auto c_area = t.column("land_area_m2");
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    if (r.size() != t.header.size()) {
      throw std::invalid_argument("geo table row " + std::to_string(i + 2) + ": column count mismatch");
    }
    idx.add({r[c_id], io::parse_double(r[c_lat]), io::parse_double(r[c_lon]),
             io::parse_double(r[c_area])});
  }
  return idx;
}

std::string GeoIndex::to_csv() const {
  std::string out = "cbg_id,centroid_lat,centroid_lon,land_area_m2\n";
  for (const auto& id : order_) {
    const CbgGeo& g = by_id_.at(id);
    out += io::csv_row({g.cbg_id, io::format_double(g.centroid_lat),
                        io::format_double(g.centroid_lon), io::format_double(g.land_area)});
  }
  return out;
}

void PartisanTable::set(std::string county_fips, double index) {
  if (!(index >= 0.0 && index <= 1.0)) {
    throw std::invalid_argument("partisan index for " + county_fips + " outside [0,1]");
  }
  by_county_[std::move(county_fips)] = index;
}

double PartisanTable::lookup(std::string_view county_fips) const {
  auto it = by_county_.find(std::string(county_fips));
  return it == by_county_.end() ? default_ : it->second;
}

bool PartisanTable::contains(std::string_view county_fips) const {
  return by_county_.count(std::string(county_fips)) > 0;
}

PartisanTable PartisanTable::from_csv(std::string_view text, double default_value) {
  const io::CsvTable t = io::parse_csv(text);
  PartisanTable table(default_value);
  if (t.header.empty()) return table;
  const auto c_county = t.column("county_fips");
  const auto c_index = t.column("index");
  for (const auto& r : t.rows) {
    if (r.size() != t.header.size()) throw std::invalid_argument("partisan table: column count mismatch");
    table.set(r[c_county], io::parse_double(r[c_index]));
  }
  return table;
}

DistanceShares distance_shares(const ingest::CountMap& visitor_home_cbgs, double poi_lat,
                               double poi_lon, const GeoIndex& geo) {
  constexpr std::array<double, 5> kUpperEdges = {1.0, 2.0, 5.0, 30.0, 60.0};
  DistanceShares out;
  std::array<std::int64_t, 6> counts{};
  std::int64_t resolved = 0;
  for (const auto& [cbg, count] : visitor_home_cbgs) {
    if (count == 0) continue;
    const CbgGeo* g = geo.find(cbg);
    if (g == nullptr) {
      out.unresolved_visitors += count;
      continue;
    }
    const double d = haversine_miles(poi_lat, poi_lon, g->centroid_lat, g->centroid_lon);
    const auto bin = static_cast<std::size_t>(
        std::upper_bound(kUpperEdges.begin(), kUpperEdges.end(), d) - kUpperEdges.begin());
    counts[bin] += count;
    resolved += count;
  }
  if (resolved == 0) return out;
  for (std::size_t b = 0; b < 6; ++b) {
    out.shares[b] = static_cast<double>(counts[b]) / static_cast<double>(resolved);
  }
  return out;
}

ConsistencyFeatures consistency_features(std::span<const std::int64_t> weekly_totals) {
  ConsistencyFeatures f;
  const std::size_t n = weekly_totals.size();
  if (n == 0) return f;

  std::vector<double> v(weekly_totals.begin(), weekly_totals.end());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  const auto active = std::count_if(weekly_totals.begin(), weekly_totals.end(),
                                    [](std::int64_t x) { return x > 0; });
  f.active_ratio = static_cast<double>(active) / static_cast<double>(n);
  if (mean <= 0.0) return f;

  f.cv = population_sd(v) / mean;
  if (n == 1) return f;

  // OLS slope of v_t on t = 0..n-1.
  const double t_mean = static_cast<double>(n - 1) / 2.0;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double dt = static_cast<double>(t) - t_mean;
    sxy += dt * (v[t] - mean);
    sxx += dt * dt;
  }
  f.trend = (sxy / sxx) / mean;

  std::vector<double> diffs(n - 1);
  double max_abs = 0.0;
  for (std::size_t t = 0; t + 1 < n; ++t) {
    diffs[t] = v[t + 1] - v[t];
    max_abs = std::max(max_abs, std::abs(diffs[t]));
  }
  f.burstiness = population_sd(diffs) / mean;
  f.max_jump = max_abs / mean;
  return f;
}

ContextFeatures context_and_volume(const ingest::VisitWeekRecord& record, const GeoIndex& geo,
                                   const PartisanTable& partisan) {
  const CbgGeo* g = geo.find(record.poi_cbg);
  if (g == nullptr) {
    throw std::invalid_argument("POI " + record.placekey + ": CBG '" + record.poi_cbg +
                                "' not found in geo table");
  }
  ContextFeatures c;
  c.log_cbg_area = std::log(g->land_area / kSquareMetersPerSquareMile);
  c.partisan_index = partisan.lookup(std::string_view(record.poi_cbg).substr(0, 5));
  c.log_visits = std::log1p(static_cast<double>(record.total_visits()));
  return c;
}

FeatureVector extract_features(const ingest::LabeledObservation& obs,
                               std::span<const std::int64_t> training_totals,
                               const GeoIndex& geo, const PartisanTable& partisan) {
  const auto& rec = obs.record;
  FeatureVector fv;
  const ingest::HourlyVisits hourly = rec.hourly_visits.value_or(ingest::HourlyVisits{});

  const auto temporal = temporal_shares(hourly);
  std::copy(temporal.begin(), temporal.end(), fv.values.begin() + kEarlyMorning);

  const auto ent = entropy_features(hourly);
  fv[kHourlyEntropy] = ent.hourly_entropy;
  fv[kDailyEntropy] = ent.daily_entropy;
  fv[kPeakHourRatio] = ent.peak_hour_ratio;

  const auto dwell = dwell_shares(rec.dwell_buckets);
  std::copy(dwell.begin(), dwell.end(), fv.values.begin() + kShortVisitShare);

  const auto dist = distance_shares(rec.visitor_home_cbgs, rec.latitude, rec.longitude, geo);
  std::copy(dist.shares.begin(), dist.shares.end(), fv.values.begin() + kDist0to1);

  const auto cons = consistency_features(training_totals);
  fv[kCv] = cons.cv;
  fv[kTrend] = cons.trend;
  fv[kBurstiness] = cons.burstiness;
  fv[kMaxJump] = cons.max_jump;
  fv[kActiveRatio] = cons.active_ratio;

  const auto ctx = context_and_volume(rec, geo, partisan);
  fv[kLogCbgArea] = ctx.log_cbg_area;
  fv[kPartisanIndex] = ctx.partisan_index;
  fv[kLogVisits] = ctx.log_visits;
  return fv;
}

Matrix FeatureTable::matrix(std::span<const std::size_t> row_indices) const {
  Matrix m(kFeatureCount);
  m.reserve_rows(row_indices.size());
  for (std::size_t i : row_indices) m.append_row(rows.at(i).features.values);
  return m;
}

Matrix FeatureTable::matrix() const {
  Matrix m(kFeatureCount);
  m.reserve_rows(rows.size());
  for (const auto& r : rows) m.append_row(r.features.values);
  return m;
}

std::unordered_map<std::string, std::vector<std::int64_t>> training_histories(
    std::span<const ingest::LabeledObservation> observations, std::optional<Date> train_end) {
  std::map<std::string, std::vector<std::pair<Date, std::int64_t>>> weeks;
  for (const auto& obs : observations) {
    if (train_end && obs.record.week_start > *train_end) continue;
    weeks[obs.record.placekey].emplace_back(obs.record.week_start, obs.record.total_visits());
  }
  std::unordered_map<std::string, std::vector<std::int64_t>> out;
  for (auto& [key, series] : weeks) {
    std::stable_sort(series.begin(), series.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& totals = out[key];
    totals.reserve(series.size());
    for (const auto& [_, v] : series) totals.push_back(v);
  }
  return out;
}

FeatureTable build_feature_table(std::span<const ingest::LabeledObservation> observations,
                                 const GeoIndex& geo, const PartisanTable& partisan,
                                 std::optional<Date> train_end) {
  const auto histories = training_histories(observations, train_end);
  static const std::vector<std::int64_t> kEmpty;

  FeatureTable table;
  table.rows.resize(observations.size());
  std::vector<std::int64_t> unresolved(observations.size(), 0);
  parallel_for(observations.size(), [&](std::size_t i) {
    const auto& obs = observations[i];
    auto it = histories.find(obs.record.placekey);
    const auto& history = it == histories.end() ? kEmpty : it->second;
    FeatureRow& row = table.rows[i];
    row.placekey = obs.record.placekey;
    row.week_start = obs.record.week_start;
    row.category = obs.category;
    row.features = extract_features(obs, history, geo, partisan);
    unresolved[i] = distance_shares(obs.record.visitor_home_cbgs, obs.record.latitude,
                                    obs.record.longitude, geo)
                        .unresolved_visitors;
  });
  table.unresolved_visitors = std::accumulate(unresolved.begin(), unresolved.end(), std::int64_t{0});
  return table;
}

std::string write_feature_csv(const FeatureTable& table) {
  std::vector<std::string> header = {"placekey", "week_start", "category"};
  header.insert(header.end(), kFeatureNames.begin(), kFeatureNames.end());
  std::string out = io::csv_row(header);
  std::vector<std::string> fields(header.size());
  for (const auto& r : table.rows) {
    fields[0] = r.placekey;
    fields[1] = format_date(r.week_start);
    fields[2] = std::string(to_string(r.category));
    for (std::size_t i = 0; i < kFeatureCount; ++i) fields[3 + i] = io::format_double(r.features[i]);
    out += io::csv_row(fields);
  }
  return out;
}

FeatureTable parse_feature_csv(std::string_view text) {
  const io::CsvTable t = io::parse_csv(text);
  if (t.header.size() != 3 + kFeatureCount || t.header[0] != "placekey" ||
      t.header[1] != "week_start" || t.header[2] != "category") {
    throw std::invalid_argument("feature file: unexpected header layout");
  }
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    if (t.header[3 + i] != kFeatureNames[i]) {
      throw std::invalid_argument("feature file: column " + std::to_string(3 + i) + " is '" +
                                  t.header[3 + i] + "', expected '" +
                                  std::string(kFeatureNames[i]) + "'");
    }
  }
  FeatureTable table;
  table.rows.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& cells = t.rows[r];
    if (cells.size() != t.header.size()) {
      throw std::invalid_argument("feature file row " + std::to_string(r + 2) + ": column count mismatch");
    }
    FeatureRow row;
    row.placekey = cells[0];
    row.week_start = parse_date_or_throw(cells[1]);
    row.category = label_category_from_string(cells[2]);
    for (std::size_t i = 0; i < kFeatureCount; ++i) row.features[i] = io::parse_double(cells[3 + i]);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace mobrisk::features
