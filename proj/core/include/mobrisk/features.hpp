#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mobrisk/common.hpp"
#include "mobrisk/ingest.hpp"
#include "mobrisk/matrix.hpp"

namespace mobrisk::features {

inline constexpr std::size_t kFeatureCount = 28;

/// Canonical column order. Model files record this list and refuse
/// mismatched inputs.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "early_morning", "morning_business", "afternoon", "evening", "late_evening",
    "late_night", "weekend", "friday_sat",
    "hourly_entropy", "daily_entropy", "peak_hour_ratio",
    "short_visit_share", "medium_visit_share", "long_visit_share",
    "dist_0_1mi", "dist_1_2mi", "dist_2_5mi", "dist_5_30mi", "dist_30_60mi", "dist_60plus",
    "cv", "trend", "burstiness", "max_jump", "active_ratio",
    "log_cbg_area", "partisan_index",
    "log_visits"};

inline constexpr std::string_view kSchemaVersion = "mobrisk-features-v1";

// Indices into kFeatureNames.
enum Feature : std::size_t {
  kEarlyMorning, kMorningBusiness, kAfternoon, kEvening, kLateEvening, kLateNight,
  kWeekend, kFridaySat,
  kHourlyEntropy, kDailyEntropy, kPeakHourRatio,
  kShortVisitShare, kMediumVisitShare, kLongVisitShare,
  kDist0to1, kDist1to2, kDist2to5, kDist5to30, kDist30to60, kDist60Plus,
  kCv, kTrend, kBurstiness, kMaxJump, kActiveRatio,
  kLogCbgArea, kPartisanIndex,
  kLogVisits,
};

enum class FeatureGroup {
  Temporal, Distribution, Duration, MarketReach, Consistency, Context, Volume
};

FeatureGroup group_of(std::size_t feature_index);
std::string_view to_string(FeatureGroup g);
std::vector<std::string> canonical_names();

inline constexpr double kEarthRadiusMiles = 3958.756;
inline constexpr double kSquareMetersPerSquareMile = 2589988.0;

struct FeatureVector {
  std::array<double, kFeatureCount> values{};

  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }
  double get(std::string_view name) const;
};

/// Six 4-hour window shares (canonical order), then weekend (Sat+Sun) and
/// Friday+Saturday shares. All zero for a zero-visit week.
std::array<double, 8> temporal_shares(const ingest::HourlyVisits& hourly);

struct EntropyFeatures {
  double hourly_entropy = 0.0;   // over 24 hour-of-day totals, natural log
  double daily_entropy = 0.0;    // over 7 day totals
  double peak_hour_ratio = 0.0;  // max hour-of-day total / weekly total
};
EntropyFeatures entropy_features(const ingest::HourlyVisits& hourly);

/// (short, medium, long) shares: "<5"; "5-10"+"11-20"+"21-60";
/// "61-120"+"121-240"+">240". Throws on an unknown bucket label.
std::array<double, 3> dwell_shares(const ingest::CountMap& dwell_buckets);

double haversine_miles(double lat1, double lon1, double lat2, double lon2);

struct CbgGeo {
  std::string cbg_id;
  double centroid_lat = 0.0;
  double centroid_lon = 0.0;
  double land_area = 0.0;  // square meters
};

class GeoIndex {
 public:
  void add(CbgGeo geo);
  const CbgGeo* find(std::string_view cbg_id) const;
  std::size_t size() const { return by_id_.size(); }

  /// CSV columns: cbg_id, centroid_lat, centroid_lon, land_area_m2.
  static GeoIndex from_csv(std::string_view text);
  std::string to_csv() const;

 private:
  std::unordered_map<std::string, CbgGeo> by_id_;
  std::vector<std::string> order_;
};

class PartisanTable {
 public:
  explicit PartisanTable(double default_value = 0.5) : default_(default_value) {}
  void set(std::string county_fips, double index);
  /// Falls back to the configured default for unknown counties.
  double lookup(std::string_view county_fips) const;
  bool contains(std::string_view county_fips) const;
  double default_value() const { return default_; }
  std::size_t size() const { return by_county_.size(); }

  /// CSV columns: county_fips, index.
  static PartisanTable from_csv(std::string_view text, double default_value = 0.5);

 private:
  double default_;
  std::unordered_map<std::string, double> by_county_;
};

struct DistanceShares {
  std::array<double, 6> shares{};       // [0,1) [1,2) [2,5) [5,30) [30,60) [60,inf) miles
  std::int64_t unresolved_visitors = 0;  // counts whose CBG is not in the index
};

DistanceShares distance_shares(const ingest::CountMap& visitor_home_cbgs, double poi_lat,
                               double poi_lon, const GeoIndex& geo);

struct ConsistencyFeatures {
  double cv = 0.0;
  double trend = 0.0;
  double burstiness = 0.0;
  double max_jump = 0.0;
  double active_ratio = 0.0;
};

/// Weekly totals in chronological order. Ratios with a zero mean are 0; a
/// single week has no trend or change statistics; an empty history yields
/// all zeros.
ConsistencyFeatures consistency_features(std::span<const std::int64_t> weekly_totals);

struct ContextFeatures {
  double log_cbg_area = 0.0;
  double partisan_index = 0.5;
  double log_visits = 0.0;
};

/// Throws std::invalid_argument when the POI's CBG is not in the geo index.
ContextFeatures context_and_volume(const ingest::VisitWeekRecord& record, const GeoIndex& geo,
                                   const PartisanTable& partisan);

FeatureVector extract_features(const ingest::LabeledObservation& obs,
                               std::span<const std::int64_t> training_totals,
                               const GeoIndex& geo, const PartisanTable& partisan);

struct FeatureRow {
  std::string placekey;
  Date week_start{};
  LabelCategory category = LabelCategory::NeverAsw;
  FeatureVector features;
};

struct FeatureTable {
  std::vector<FeatureRow> rows;
  std::int64_t unresolved_visitors = 0;

  Matrix matrix(std::span<const std::size_t> row_indices) const;
  Matrix matrix() const;
};

/// Per-establishment weekly totals of weeks with week_start <= train_end
/// (all weeks when train_end is empty), in chronological order.
std::unordered_map<std::string, std::vector<std::int64_t>> training_histories(
    std::span<const ingest::LabeledObservation> observations, std::optional<Date> train_end);

/// Consistency features come only from training-period weeks, so rows after
/// train_end never influence any row's features.
FeatureTable build_feature_table(std::span<const ingest::LabeledObservation> observations,
                                 const GeoIndex& geo, const PartisanTable& partisan,
                                 std::optional<Date> train_end = std::nullopt);

/// CSV: placekey, week_start, category, then the 28 canonical columns.
std::string write_feature_csv(const FeatureTable& table);
FeatureTable parse_feature_csv(std::string_view text);

}  // namespace mobrisk::features
