#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "mobrisk/features.hpp"
#include "mobrisk/synth.hpp"
#include "support.hpp"

namespace mobrisk::features {
namespace {

using mobrisk::testing::visit;

constexpr double kLn24 = 3.1780538303479458;
constexpr double kLn7 = 1.9459101490553132;

ingest::HourlyVisits hourly_from(const std::function<std::uint32_t(std::size_t day, std::size_t hour)>& f) {
  ingest::HourlyVisits h{};
  for (std::size_t d = 0; d < 7; ++d) {
    for (std::size_t hr = 0; hr < 24; ++hr) h[24 * d + hr] = f(d, hr);
  }
  return h;
}

TEST(TemporalShares, AllVisitsAtSixPm) {
  const auto h = hourly_from([](std::size_t d, std::size_t hr) { return hr == 18 ? (d + 1) : 0u; });
  const auto s = temporal_shares(h);
  EXPECT_EQ(s[3], 1.0);
  for (std::size_t w : {0u, 1u, 2u, 4u, 5u}) EXPECT_EQ(s[w], 0.0);
  // Day d carries d+1 visits, 28 in all; Sat+Sun = 6+7.
  EXPECT_DOUBLE_EQ(s[6], 13.0 / 28.0);
  EXPECT_DOUBLE_EQ(s[7], 11.0 / 28.0);
}

TEST(TemporalShares, UniformTraffic) {
  const auto s = temporal_shares(hourly_from([](std::size_t, std::size_t) { return 1u; }));
  for (std::size_t w = 0; w < 6; ++w) EXPECT_NEAR(s[w], 4.0 / 24.0, 1e-15);
  EXPECT_NEAR(s[6], 2.0 / 7.0, 1e-15);
  EXPECT_NEAR(s[7], 2.0 / 7.0, 1e-15);
}

TEST(TemporalShares, ZeroWeek) {
  const auto s = temporal_shares(ingest::HourlyVisits{});
  for (double v : s) EXPECT_EQ(v, 0.0);
}

TEST(Entropy, Maxima) {
  const auto e = entropy_features(hourly_from([](std::size_t, std::size_t) { return 3u; }));
  EXPECT_NEAR(e.hourly_entropy, kLn24, 1e-9);
  EXPECT_NEAR(e.daily_entropy, kLn7, 1e-9);
  EXPECT_NEAR(e.peak_hour_ratio, 1.0 / 24.0, 1e-15);
}

TEST(Entropy, SingleHourOfDay) {
  const auto e = entropy_features(hourly_from([](std::size_t, std::size_t hr) { return hr == 9 ? 2u : 0u; }));
  EXPECT_EQ(e.hourly_entropy, 0.0);
  EXPECT_EQ(e.peak_hour_ratio, 1.0);
  EXPECT_NEAR(e.daily_entropy, kLn7, 1e-12);
}

TEST(Entropy, BoundsOnRandomVectors) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100000; ++i) {
    ingest::HourlyVisits h{};
    const int density = 1 + static_cast<int>(rng() % 20);
    for (auto& v : h) v = (rng() % density == 0) ? static_cast<std::uint32_t>(rng() % 50) : 0u;
    const auto e = entropy_features(h);
    std::int64_t total = 0;
    for (auto v : h) total += v;
    if (total == 0) {
      EXPECT_EQ(e.hourly_entropy, 0.0);
      continue;
    }
    ASSERT_GE(e.hourly_entropy, 0.0);
    ASSERT_LE(e.hourly_entropy, kLn24 + 1e-12);
    ASSERT_GE(e.daily_entropy, 0.0);
    ASSERT_LE(e.daily_entropy, kLn7 + 1e-12);
    ASSERT_GE(e.peak_hour_ratio, 1.0 / 24.0 - 1e-15);
    ASSERT_LE(e.peak_hour_ratio, 1.0);
  }
}

TEST(ScaleInvariance, TemporalAndEntropyExact) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    ingest::HourlyVisits h{};
    for (auto& v : h) v = static_cast<std::uint32_t>(rng() % 7);
    h[rng() % 168] += 1;
    const std::uint32_t k = 2 + static_cast<std::uint32_t>(rng() % 50);
    ingest::HourlyVisits scaled = h;
    for (auto& v : scaled) v *= k;
    EXPECT_EQ(temporal_shares(h), temporal_shares(scaled));
    const auto a = entropy_features(h);
    const auto b = entropy_features(scaled);
    EXPECT_EQ(a.hourly_entropy, b.hourly_entropy);
    EXPECT_EQ(a.daily_entropy, b.daily_entropy);
    EXPECT_EQ(a.peak_hour_ratio, b.peak_hour_ratio);
  }
}

TEST(DwellShares, Examples) {
  EXPECT_EQ(dwell_shares({{"<5", 10}, {"61-120", 10}}), (std::array<double, 3>{0.5, 0.0, 0.5}));
  EXPECT_EQ(dwell_shares({{"5-10", 1}, {"11-20", 1}, {"21-60", 2}}), (std::array<double, 3>{0.0, 1.0, 0.0}));
  EXPECT_EQ(dwell_shares({}), (std::array<double, 3>{0.0, 0.0, 0.0}));
  EXPECT_THROW(dwell_shares({{"1-2", 1}}), std::invalid_argument);
}

TEST(Haversine, ClosedFormCases) {
  EXPECT_EQ(haversine_miles(33.2, -87.5, 33.2, -87.5), 0.0);
  // Equatorial arcs: distance = r * delta_lambda (radians).
  EXPECT_NEAR(haversine_miles(0, 0, 0, 90), kEarthRadiusMiles * std::numbers::pi / 2.0, 1e-6);
  EXPECT_NEAR(haversine_miles(0, 0, 0, 1), kEarthRadiusMiles * std::numbers::pi / 180.0, 1e-6);
  EXPECT_NEAR(haversine_miles(0, -10, 0, 25), kEarthRadiusMiles * 35.0 * std::numbers::pi / 180.0, 1e-6);
}

TEST(Haversine, SymmetryAndTriangleInequality) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lat(-89.0, 89.0), lon(-180.0, 180.0);
  for (int i = 0; i < 20000; ++i) {
    const double a1 = lat(rng), o1 = lon(rng), a2 = lat(rng), o2 = lon(rng), a3 = lat(rng), o3 = lon(rng);
    const double ab = haversine_miles(a1, o1, a2, o2);
    EXPECT_EQ(ab, haversine_miles(a2, o2, a1, o1));
    const double bc = haversine_miles(a2, o2, a3, o3);
    const double ac = haversine_miles(a1, o1, a3, o3);
    EXPECT_LE(ac, (ab + bc) * (1.0 + 1e-9) + 1e-9);
  }
}

GeoIndex test_geo() {
  GeoIndex g;
  g.add({"010010001001", 0.0, 0.0, 2589988.0});
  // 1.5 miles and 100 miles east along the equator.
  const double deg_per_mile = 180.0 / (std::numbers::pi * kEarthRadiusMiles);
  g.add({"010010001002", 0.0, 1.5 * deg_per_mile, 1e6});
  g.add({"010010001003", 0.0, 100.0 * deg_per_mile, 1e6});
  g.add({"010010001004", 0.0, 1.5 * deg_per_mile, 1e6});
  return g;
}

TEST(DistanceShares, Examples) {
  const GeoIndex g = test_geo();
  EXPECT_EQ(distance_shares({{"010010001001", 7}}, 0.0, 0.0, g).shares[0], 1.0);
  const auto two = distance_shares({{"010010001002", 2}, {"010010001003", 2}}, 0.0, 0.0, g);
  EXPECT_EQ(two.shares, (std::array<double, 6>{0, 0.5, 0, 0, 0, 0.5}));
  const auto empty = distance_shares({}, 0.0, 0.0, g);
  EXPECT_EQ(empty.shares, (std::array<double, 6>{}));
  const auto unknown = distance_shares({{"999", 3}, {"010010001001", 1}}, 0.0, 0.0, g);
  EXPECT_EQ(unknown.unresolved_visitors, 3);
  EXPECT_EQ(unknown.shares[0], 1.0);
}

TEST(DistanceShares, SplittingAcrossColocatedCbgs) {
  const GeoIndex g = test_geo();
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 40);
    const std::int64_t k = static_cast<std::int64_t>(rng() % (n + 1));
    const std::int64_t far = static_cast<std::int64_t>(rng() % 10);
    const auto whole = distance_shares({{"010010001002", n}, {"010010001003", far}}, 0.0, 0.0, g);
    const auto split =
        distance_shares({{"010010001002", k}, {"010010001004", n - k}, {"010010001003", far}}, 0.0, 0.0, g);
    EXPECT_EQ(whole.shares, split.shares);
  }
}

TEST(Consistency, HandComputedSeries) {
  std::vector<std::int64_t> flat = {10, 10, 10};
  auto c = consistency_features(flat);
  EXPECT_EQ(c.cv, 0.0);
  EXPECT_EQ(c.trend, 0.0);
  EXPECT_EQ(c.burstiness, 0.0);
  EXPECT_EQ(c.max_jump, 0.0);
  EXPECT_EQ(c.active_ratio, 1.0);

  // popstd = 5, mean = 10, |delta| = 10.
  std::vector<std::int64_t> two = {5, 15};
  c = consistency_features(two);
  EXPECT_NEAR(c.cv, 0.5, 1e-12);
  EXPECT_NEAR(c.max_jump, 1.0, 1e-12);
  EXPECT_EQ(c.active_ratio, 1.0);
  EXPECT_NEAR(c.trend, 10.0 / 10.0, 1e-12);
  EXPECT_EQ(c.burstiness, 0.0);

  // OLS slope 10 on t = 0,1,2; mean 20.
  std::vector<std::int64_t> ramp = {10, 20, 30};
  c = consistency_features(ramp);
  EXPECT_NEAR(c.trend, 0.5, 1e-12);
  EXPECT_NEAR(c.burstiness, 0.0, 1e-12);
  EXPECT_NEAR(c.max_jump, 0.5, 1e-12);

  std::vector<std::int64_t> sparse = {0, 5, 3, 0};
  EXPECT_EQ(consistency_features(sparse).active_ratio, 0.5);
}

TEST(Consistency, DegenerateHistories) {
  std::vector<std::int64_t> zeros = {0, 0, 0};
  auto c = consistency_features(zeros);
  EXPECT_EQ(c.cv, 0.0);
  EXPECT_EQ(c.active_ratio, 0.0);
  std::vector<std::int64_t> one = {7};
  c = consistency_features(one);
  EXPECT_EQ(c.trend, 0.0);
  EXPECT_EQ(c.max_jump, 0.0);
  EXPECT_EQ(c.active_ratio, 1.0);
  EXPECT_EQ(consistency_features({}).active_ratio, 0.0);
}

TEST(Consistency, ConstantSeriesIsFlat) {
  for (std::int64_t c = 1; c < 500; c += 7) {
    for (std::size_t n = 1; n < 60; n += 5) {
      std::vector<std::int64_t> v(n, c);
      const auto f = consistency_features(v);
      EXPECT_EQ(f.cv, 0.0);
      EXPECT_EQ(f.burstiness, 0.0);
      EXPECT_EQ(f.max_jump, 0.0);
      EXPECT_EQ(f.trend, 0.0);
    }
  }
}

TEST(Context, Examples) {
  GeoIndex g;
  g.add({"010010001001", 33.2, -87.5, 2589988.0});
  PartisanTable p;
  p.set("01001", 0.7);
  auto r = visit("pk", "2024-01-01", 0);
  auto c = context_and_volume(r, g, p);
  EXPECT_EQ(c.log_cbg_area, 0.0);
  EXPECT_EQ(c.log_visits, 0.0);
  EXPECT_EQ(c.partisan_index, 0.7);
  r.poi_cbg = "010010001001";
  PartisanTable empty;
  EXPECT_EQ(context_and_volume(r, g, empty).partisan_index, 0.5);
  r.poi_cbg = "999";
  EXPECT_THROW(context_and_volume(r, g, p), std::invalid_argument);
}

TEST(ExtractFeatures, UniformWeekAndZeroWeek) {
  GeoIndex g;
  g.add({"010010001001", 33.21, -87.57, 5e6});
  PartisanTable p;
  ingest::LabeledObservation obs{visit("pk", "2024-01-01", 2), LabelCategory::NeverAsw, 0};
  std::vector<std::int64_t> history = {336, 336, 336};
  auto fv = extract_features(obs, history, g, p);
  EXPECT_NEAR(fv[kHourlyEntropy], kLn24, 1e-9);
  EXPECT_NEAR(fv[kDailyEntropy], kLn7, 1e-9);
  EXPECT_EQ(fv[kCv], 0.0);
  EXPECT_EQ(fv.get("dist_0_1mi"), 1.0);

  ingest::LabeledObservation zero{visit("pk", "2024-01-01", 0), LabelCategory::NeverAsw, 0};
  zero.record.dwell_buckets.clear();
  zero.record.visitor_home_cbgs.clear();
  std::vector<std::int64_t> zh = {0};
  fv = extract_features(zero, zh, g, p);
  for (std::size_t i = 0; i < kLogCbgArea; ++i) EXPECT_EQ(fv[i], 0.0) << kFeatureNames[i];
  EXPECT_NEAR(fv[kLogCbgArea], std::log(5e6 / kSquareMetersPerSquareMile), 1e-12);
  EXPECT_EQ(fv[kPartisanIndex], 0.5);
  EXPECT_EQ(fv[kLogVisits], 0.0);
}

TEST(ExtractFeatures, IllicitArchetypeProfile) {
  // A fully active illicit week of the generator's default profile.
  const auto profile = synth::profile_at(synth::SynthConfig{}, 1.0);
  EXPECT_GT(profile.windows[3], 0.4);
  EXPECT_GT(profile.dwell[0], 0.6);
  EXPECT_GT(profile.distance_bands[0] + profile.distance_bands[1], 0.5);
}

TEST(Groups, EveryFeatureHasAGroup) {
  std::map<FeatureGroup, int> count;
  for (std::size_t i = 0; i < kFeatureCount; ++i) ++count[group_of(i)];
  EXPECT_EQ(count[FeatureGroup::Temporal], 8);
  EXPECT_EQ(count[FeatureGroup::Distribution], 3);
  EXPECT_EQ(count[FeatureGroup::Duration], 3);
  EXPECT_EQ(count[FeatureGroup::MarketReach], 6);
  EXPECT_EQ(count[FeatureGroup::Consistency], 5);
  EXPECT_EQ(count[FeatureGroup::Context], 2);
  EXPECT_EQ(count[FeatureGroup::Volume], 1);
  EXPECT_EQ(canonical_names().size(), kFeatureCount);
}

std::vector<ingest::LabeledObservation> random_history(std::uint64_t seed, std::size_t weeks) {
  std::mt19937_64 rng(seed);
  std::vector<ingest::LabeledObservation> out;
  for (int e = 0; e < 5; ++e) {
    for (std::size_t w = 0; w < weeks; ++w) {
      const Date d = parse_date_or_throw("2024-01-01") + std::chrono::weeks{static_cast<int>(w)};
      auto r = visit("pk-" + std::to_string(e), format_date(d), static_cast<std::uint32_t>(rng() % 4));
      out.push_back({r, LabelCategory::NeverAsw, 0});
    }
  }
  return out;
}

TEST(FeatureTable, LeakageGuard) {
  GeoIndex g;
  g.add({"010010001001", 33.21, -87.57, 5e6});
  PartisanTable p;
  const Date train_end = parse_date_or_throw("2024-03-25");
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto all = random_history(seed, 26);
    std::vector<ingest::LabeledObservation> train_only;
    for (const auto& o : all) {
      if (o.record.week_start <= train_end) train_only.push_back(o);
    }
    const auto full = build_feature_table(all, g, p, train_end);
    const auto truncated = build_feature_table(train_only, g, p, std::nullopt);
    std::map<std::string, FeatureVector> reference;
    for (const auto& r : truncated.rows) reference[r.placekey] = r.features;
    for (const auto& r : full.rows) {
      const auto& ref = reference.at(r.placekey);
      for (std::size_t f = kCv; f <= kActiveRatio; ++f) EXPECT_EQ(r.features[f], ref[f]) << kFeatureNames[f];
    }
  }
}

TEST(FeatureTable, CsvRoundTripAndHeaderCheck) {
  GeoIndex g;
  g.add({"010010001001", 33.21, -87.57, 5e6});
  PartisanTable p;
  const auto t = build_feature_table(random_history(1, 8), g, p);
  const std::string csv = write_feature_csv(t);
  const auto back = parse_feature_csv(csv);
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].placekey, t.rows[i].placekey);
    EXPECT_EQ(back.rows[i].week_start, t.rows[i].week_start);
    EXPECT_EQ(back.rows[i].features.values, t.rows[i].features.values);
  }
  EXPECT_EQ(write_feature_csv(back), csv);
  std::string renamed = csv;
  renamed.replace(renamed.find("evening"), 7, "evenink");
  EXPECT_THROW(parse_feature_csv(renamed), std::invalid_argument);
}

TEST(Tables, GeoAndPartisanCsv) {
  const GeoIndex g = test_geo();
  const auto back = GeoIndex::from_csv(g.to_csv());
  EXPECT_EQ(back.size(), g.size());
  EXPECT_EQ(back.find("010010001003")->centroid_lon, g.find("010010001003")->centroid_lon);
  const auto p = PartisanTable::from_csv("county_fips,index\n01001,0.25\n");
  EXPECT_EQ(p.lookup("01001"), 0.25);
  EXPECT_EQ(p.lookup("01003"), 0.5);
  EXPECT_THROW(GeoIndex::from_csv("cbg_id,centroid_lat,centroid_lon,land_area_m2\nx,1,2,0\n"),
               std::invalid_argument);
}

}  // namespace
}  // namespace mobrisk::features
