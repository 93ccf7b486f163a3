#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mobrisk/common.hpp"
#include "mobrisk/features.hpp"
#include "mobrisk/ingest.hpp"

namespace mobrisk::synth {

/// Signature gaps are differences of class means (illicit minus legitimate)
/// over all establishment-weeks.
struct SynthConfig {
  std::size_t n_establishments = 2000;
  std::size_t n_weeks = 52;
  double illicit_fraction = 0.10;
  double labeled_fraction_of_illicit = 0.5;
  /// Share of a labeled establishment's weeks without ads.
  double quiet_week_fraction = 0.4;
  std::uint64_t seed = 42;
  Date start_date = Date{std::chrono::year{2024} / 1 / 1};

  double evening_shift = 0.08;      // evening window share
  double short_dwell_share = 0.10;  // "<5" minute dwell share
  double local_share = 0.15;        // visitors living within 2 miles
  double stability_gap = 0.15;      // legitimate minus illicit weekly CV

  double legit_cv = 0.45;
  double cv_spread = 0.05;  // per-establishment sd of the target CV
  double mean_weekly_visits = 200.0;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

/// Expected visit mix for a week at signature intensity in [0,1]:
/// 0 is the plain legitimate profile, 1 a fully active illicit week.
struct WeekProfile {
  std::array<double, 6> windows{};  // canonical order: early .. late_night
  std::array<double, 7> days{};     // Monday first
  std::array<double, 7> dwell{};    // ingest::kDwellBuckets order
  std::array<double, 6> distance_bands{};
};

/// Expected mean intensity of illicit establishment-weeks and of
/// legitimate ones; signature shifts are the gaps divided by their
/// difference.
double mean_illicit_intensity(const SynthConfig& cfg);
double mean_legit_intensity();

WeekProfile profile_at(const SynthConfig& cfg, double intensity);

/// Representative distance (miles) of each visitor-home ring around a POI.
inline constexpr std::array<std::array<double, 2>, 6> kRingMiles = {
    {{0.0, 0.6}, {1.3, 1.7}, {2.8, 4.2}, {8.0, 20.0}, {38.0, 52.0}, {75.0, 140.0}}};

struct TruthRow {
  std::string placekey;
  bool illicit = false;
  bool labeled = false;
};

struct AdPost {
  std::string phone;  // formatted as posted
  Date posted{};
  std::int64_t ad_count = 1;
};

struct SynthOutput {
  std::vector<ingest::VisitWeekRecord> visits;  // establishment-major, weeks ascending
  std::vector<double> intensity;                // per visit row
  std::vector<AdPost> ads;
  features::GeoIndex geo;
  std::vector<std::pair<std::string, double>> partisan;  // county -> index
  std::vector<TruthRow> truth;

  features::PartisanTable partisan_table() const;
  std::vector<ingest::AdRecord> ad_records() const;
};

SynthOutput generate(const SynthConfig& cfg);

inline constexpr std::string_view kPoisFile = "pois.jsonl";
inline constexpr std::string_view kAdsFile = "ads.csv";
inline constexpr std::string_view kGeoFile = "geo.csv";
inline constexpr std::string_view kPartisanFile = "partisan.csv";
inline constexpr std::string_view kTruthFile = "truth.csv";

/// Writes pois.jsonl, ads.csv, geo.csv, partisan.csv and truth.csv.
void write_outputs(const SynthOutput& out, const std::filesystem::path& dir);

std::string write_truth_csv(std::span<const TruthRow> truth);
std::vector<TruthRow> parse_truth_csv(std::string_view text);
std::unordered_set<std::string> latent_illicit(std::span<const TruthRow> truth);

}  // namespace mobrisk::synth
