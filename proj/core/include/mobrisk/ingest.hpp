#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobrisk/common.hpp"

namespace mobrisk::ingest {

inline constexpr std::size_t kHoursPerWeek = 168;

/// Vendor dwell-time bucket labels, in minutes.
inline constexpr std::array<std::string_view, 7> kDwellBuckets = {
    "<5", "5-10", "11-20", "21-60", "61-120", "121-240", ">240"};

inline constexpr std::string_view kTargetNaics = "812199";

/// Index 24*d + h, d = 0 is Monday, local time.
using HourlyVisits = std::array<std::uint32_t, kHoursPerWeek>;

/// Label -> count pairs in source order (dwell buckets, visitor home CBGs).
using CountMap = std::vector<std::pair<std::string, std::int64_t>>;

/// One establishment-week of raw mobility data.
struct VisitWeekRecord {
  std::string placekey;
  std::string naics_code;
  std::string location_name;
  std::string phone;
  double latitude = 0.0;
  double longitude = 0.0;
  std::string poi_cbg;
  Date week_start{};
  /// nullopt when the vendor reported no hourly series for the week.
  std::optional<HourlyVisits> hourly_visits;
  CountMap dwell_buckets;
  CountMap visitor_home_cbgs;

  std::int64_t total_visits() const;
};

struct AdRecord {
  std::string phone;
  Date week_start{};
  std::int64_t ad_count = 1;
};

struct LabeledObservation {
  VisitWeekRecord record;
  LabelCategory category = LabelCategory::NeverAsw;
  std::int64_t ad_count = 0;
};

/// Digits only, with one leading US country code removed from 11-digit
/// numbers. Fewer than ten remaining digits means the number is unusable.
std::optional<std::string> normalize_phone(std::string_view raw);

bool is_dwell_bucket(std::string_view label);

struct RowIssue {
  std::size_t line = 0;  // 1-based line (JSONL) or record number (CSV)
  std::string reason;
};

template <class T>
struct Parsed {
  std::vector<T> rows;
  std::vector<RowIssue> malformed;
};

/// Field names follow the vendor schema: placekey, naics_code,
/// location_name, phone_number, latitude, longitude, poi_cbg,
/// date_range_start, visits_by_each_hour, bucketed_dwell_times,
/// visitor_home_cbgs. Throws std::invalid_argument on malformed input.
VisitWeekRecord visit_from_json(const nlohmann::json& j);
nlohmann::json visit_to_json(const VisitWeekRecord& r);

Parsed<VisitWeekRecord> parse_visits_jsonl(std::string_view text);
/// CSV variant: same column names; JSON-valued columns hold JSON text.
Parsed<VisitWeekRecord> parse_visits_csv(std::string_view text);
/// Dispatches on extension: ".csv" is CSV, anything else JSON-lines.
Parsed<VisitWeekRecord> read_visits(const std::filesystem::path& path);

/// CSV columns: phone, date (or week_start), optional ad_count (default 1).
/// Dates are floored to their Monday.
Parsed<AdRecord> parse_ads_csv(std::string_view text);
Parsed<AdRecord> parse_ads_jsonl(std::string_view text);
Parsed<AdRecord> read_ads(const std::filesystem::path& path);

struct FilterConfig {
  Date start_date = Date{std::chrono::year{2024} / 1 / 1};
  std::string naics_code = std::string(kTargetNaics);
  double min_lat = 24.0, max_lat = 50.0;
  double min_lon = -125.0, max_lon = -66.0;
};

struct FilterSummary {
  std::size_t rows_in = 0;
  std::size_t dropped_naics = 0;
  std::size_t dropped_name = 0;
  std::size_t dropped_region = 0;
  std::size_t dropped_date = 0;
  std::size_t dropped_discontinuous = 0;  // rows of placekeys with a null week
  std::size_t placekeys_discontinuous = 0;
  std::size_t kept = 0;

  nlohmann::json to_json() const;
};

struct FilterResult {
  std::vector<VisitWeekRecord> kept;
  FilterSummary summary;
};

/// Applies the population filters in order: industry code, name contains
/// "massage" or "spa" (case-insensitive), contiguous-US bounding box,
/// week_start >= start date, and continuous operation (placekeys with any
/// week lacking an hourly series are dropped entirely).
FilterResult filter_population(std::vector<VisitWeekRecord> records,
                               const FilterConfig& cfg = {});

/// Normalizes phones, floors dates to Mondays and sums counts per
/// (phone, week). Rows with unusable phones are dropped. Output is sorted.
std::vector<AdRecord> aggregate_ads(std::span<const AdRecord> ads,
                                    std::size_t* unusable_phones = nullptr);

struct PhoneCollision {
  std::string phone;
  std::vector<std::string> placekeys;
};

struct MergeSummary {
  std::size_t rows = 0;
  std::size_t illicit_active = 0;
  std::size_t illicit_quiet = 0;
  std::size_t never_asw = 0;
  std::size_t ad_rows_unusable_phone = 0;
  std::size_t ad_weeks_unmatched = 0;  // (phone, week) with no POI row
  std::vector<PhoneCollision> collisions;

  nlohmann::json to_json() const;
};

struct MergeResult {
  std::vector<LabeledObservation> rows;
  MergeSummary summary;
};

/// Left join of POI weeks with ads on (normalized phone, Monday). A week
/// with ads is IllicitActive; other weeks of a placekey that has at least
/// one IllicitActive week are IllicitQuiet; everything else is NeverAsw.
/// Output has one row per input row, ordered by (placekey, week_start).
MergeResult merge_and_label(std::span<const VisitWeekRecord> pois,
                            std::span<const AdRecord> ads);

nlohmann::json labeled_to_json(const LabeledObservation& obs);
LabeledObservation labeled_from_json(const nlohmann::json& j);
std::string write_labeled_jsonl(std::span<const LabeledObservation> rows);
std::vector<LabeledObservation> parse_labeled_jsonl(std::string_view text);

}  // namespace mobrisk::ingest
