#include "mobrisk/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "mobrisk/io.hpp"

namespace mobrisk::synth {

namespace {

constexpr std::array<double, 6> kLegitWindows = {0.03, 0.22, 0.36, 0.30, 0.08, 0.01};
constexpr std::array<double, 7> kLegitDays = {0.145, 0.145, 0.145, 0.145, 0.15, 0.15, 0.12};
constexpr std::array<double, 7> kLegitDwell = {0.66, 0.02, 0.03, 0.08, 0.15, 0.05, 0.01};
constexpr std::array<double, 6> kLegitBands = {0.13, 0.17, 0.22, 0.30, 0.11, 0.07};
constexpr std::array<double, 4> kHourShape = {0.22, 0.26, 0.28, 0.24};

// Legitimate establishments carry a persistent lookalike intensity drawn
// from Beta(1, 9).
constexpr double kLookalikeA = 1.0;
constexpr double kLookalikeB = 9.0;
constexpr double kDutySpan = 0.25;
constexpr double kVisitorRate = 0.55;
constexpr std::size_t kCounties = 30;

constexpr std::array<const char*, 20> kNameStems = {
    "Golden", "Lotus", "Jade", "Serenity", "Harmony", "Blue Sky", "Royal", "Sunrise",
    "Magnolia", "Bamboo", "Happy", "Relax", "Lucky", "Star", "Pearl", "Orchid",
    "Zen", "Heavenly", "Tranquil", "Oasis"};
constexpr std::array<const char*, 7> kNameSuffixes = {
    "Spa", "Massage", "Day Spa", "Massage Therapy", "Foot Spa", "Wellness Spa", "Massage & Spa"};
constexpr std::array<const char*, 5> kAreaCodes = {"205", "251", "256", "334", "938"};

std::size_t n_ad_weeks(const SynthConfig& cfg) {
  return static_cast<std::size_t>(
      std::llround((1.0 - cfg.quiet_week_fraction) * static_cast<double>(cfg.n_weeks)));
}

double duty_low(const SynthConfig& cfg) { return 1.0 - cfg.quiet_week_fraction; }
double duty_high(const SynthConfig& cfg) { return std::min(1.0, duty_low(cfg) + kDutySpan); }

struct Shifts {
  double evening = 0.0;
  double short_dwell = 0.0;
  double local = 0.0;
};

Shifts full_shifts(const SynthConfig& cfg) {
  const double spread = mean_illicit_intensity(cfg) - mean_legit_intensity();
  if (spread <= 0.05) throw std::invalid_argument("synth: illicit duty too close to legitimate lookalikes");
  return {cfg.evening_shift / spread, cfg.short_dwell_share / spread, cfg.local_share / spread};
}

std::string placekey_for(std::uint64_t seed, std::size_t i) {
  static constexpr char kAlphabet[] = "abcdefghjkmnpqrstvwxyz23456789";
  std::uint64_t h = derive_seed(seed, "synth.placekey", i);
  std::string tag;
  for (int k = 0; k < 3; ++k) {
    tag.push_back(kAlphabet[h % 30]);
    h /= 30;
  }
  char idx[32];
  std::snprintf(idx, sizeof idx, "%06zu", i);
  return "zz" + tag + "-" + std::string(idx, 3) + "@" + std::string(idx + 3, 3) + "-syn";
}

std::string phone_digits(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%03zu%04zu", kAreaCodes[i % kAreaCodes.size()], 200 + i / 10000,
                i % 10000);
  return buf;
}

std::string format_phone(const std::string& d, int style) {
  switch (style) {
    case 0: return "(" + d.substr(0, 3) + ") " + d.substr(3, 3) + "-" + d.substr(6);
    case 1: return d.substr(0, 3) + "-" + d.substr(3, 3) + "-" + d.substr(6);
    case 2: return "+1 " + d.substr(0, 3) + " " + d.substr(3, 3) + " " + d.substr(6);
    case 3: return "1" + d;
    default: return d;
  }
}

std::string cbg_id(std::size_t county, std::size_t establishment, std::size_t slot) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "01%03zu%06zu%zu", 2 * county + 1, 2 * establishment + slot / 10,
                slot % 10);
  return buf;
}

std::string county_fips(std::size_t county) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "01%03zu", 2 * county + 1);
  return buf;
}

// Point at `miles` along `bearing` (radians) from (lat, lon) on the sphere.
std::pair<double, double> destination(double lat, double lon, double miles, double bearing) {
  const double r = features::kEarthRadiusMiles;
  const double to_rad = std::numbers::pi / 180.0;
  const double phi1 = lat * to_rad;
  const double lambda1 = lon * to_rad;
  const double delta = miles / r;
  const double phi2 = std::asin(std::sin(phi1) * std::cos(delta) +
                                std::cos(phi1) * std::sin(delta) * std::cos(bearing));
  const double lambda2 =
      lambda1 + std::atan2(std::sin(bearing) * std::sin(delta) * std::cos(phi1),
                           std::cos(delta) - std::sin(phi1) * std::sin(phi2));
  return {phi2 / to_rad, lambda2 / to_rad};
}

double beta_draw(std::mt19937_64& rng, double a, double b) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  return x / (x + y);
}

template <std::size_t N>
void multinomial(std::mt19937_64& rng, std::discrete_distribution<std::size_t>& dist, std::int64_t n,
                 std::array<std::int64_t, N>& out) {
  out.fill(0);
  for (std::int64_t k = 0; k < n; ++k) ++out[dist(rng)];
}

// Sampling tables for one intensity level.
struct Sampler {
  std::discrete_distribution<std::size_t> hours;
  std::discrete_distribution<std::size_t> dwell;
  std::discrete_distribution<std::size_t> rings;  // 12 CBG slots

  explicit Sampler(const WeekProfile& p) {
    std::array<double, ingest::kHoursPerWeek> hp{};
    for (std::size_t d = 0; d < 7; ++d) {
      for (std::size_t h = 0; h < 24; ++h) {
        const std::size_t window = (h / 4 + 5) % 6;
        hp[24 * d + h] = p.days[d] * p.windows[window] * kHourShape[h % 4];
      }
    }
    hours = {hp.begin(), hp.end()};
    dwell = {p.dwell.begin(), p.dwell.end()};
    std::array<double, 12> rp{};
    rp[0] = 0.6 * p.distance_bands[0];
    rp[1] = 0.4 * p.distance_bands[0];
    for (std::size_t b = 1; b < 6; ++b) {
      rp[2 * b] = 0.5 * p.distance_bands[b];
      rp[2 * b + 1] = 0.5 * p.distance_bands[b];
    }
    rings = {rp.begin(), rp.end()};
  }
};

struct EstablishmentStream {
  std::vector<ingest::VisitWeekRecord> visits;
  std::vector<double> intensity;
  std::vector<AdPost> ads;
  std::vector<features::CbgGeo> geo;
};

EstablishmentStream generate_establishment(const SynthConfig& cfg, std::size_t i, bool illicit,
                                           bool labeled) {
  std::mt19937_64 rng(derive_seed(cfg.seed, "synth.establishment", i));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  EstablishmentStream s;
  const std::size_t T = cfg.n_weeks;

  // Identity and geography.
  const std::string placekey = placekey_for(cfg.seed, i);
  const std::size_t county = std::uniform_int_distribution<std::size_t>(0, kCounties - 1)(rng);
  const double lat = 32.0 + 3.0 * unit(rng);
  const double lon = -88.0 + 3.0 * unit(rng);
  const std::size_t stem = rng() % kNameStems.size();
  const std::size_t suffix = rng() % kNameSuffixes.size();
  const std::string name = std::string(kNameStems[stem]) + " " + kNameSuffixes[suffix];
  const std::string digits = phone_digits(i);
  const std::string phone = format_phone(digits, static_cast<int>(rng() % 5));

  std::array<std::string, 12> ring_ids;
  for (std::size_t slot = 0; slot < 12; ++slot) {
    ring_ids[slot] = cbg_id(county, i, slot);
    const double miles = kRingMiles[slot / 2][slot % 2];
    const double bearing = 2.0 * std::numbers::pi * unit(rng);
    const auto [clat, clon] = slot == 0 ? std::pair{lat, lon} : destination(lat, lon, miles, bearing);
    const double log_area = std::log(0.3) + (std::log(30.0) - std::log(0.3)) * unit(rng);
    s.geo.push_back({ring_ids[slot], clat, clon, std::exp(log_area) * features::kSquareMetersPerSquareMile});
  }

  // Volume process: gamma-mixed Poisson weekly totals with a target CV.
  std::lognormal_distribution<double> mu_dist(std::log(cfg.mean_weekly_visits), 0.4);
  const double mu = std::clamp(mu_dist(rng), 0.25 * cfg.mean_weekly_visits, 4.0 * cfg.mean_weekly_visits);
  const double cv_center = illicit ? cfg.legit_cv - cfg.stability_gap : cfg.legit_cv;
  const double cv = std::clamp(std::normal_distribution<double>(cv_center, cfg.cv_spread)(rng), 0.05, 1.5);
  const double excess = cv * cv - 1.0 / mu;
  const double shape = excess > 0.005 ? 1.0 / excess : 200.0;
  std::gamma_distribution<double> mix(shape, 1.0 / shape);

  // Weekly signature intensity.
  std::vector<double> week_intensity(T, 0.0);
  std::vector<std::size_t> ad_weeks;
  if (illicit) {
    const double duty = duty_low(cfg) + (duty_high(cfg) - duty_low(cfg)) * unit(rng);
    const std::size_t n_ads = n_ad_weeks(cfg);
    const std::size_t n_on = std::min(
        T, std::max(n_ads, static_cast<std::size_t>(std::llround(duty * static_cast<double>(T)))));
    std::vector<std::size_t> weeks(T);
    std::iota(weeks.begin(), weeks.end(), std::size_t{0});
    std::shuffle(weeks.begin(), weeks.end(), rng);
    for (std::size_t k = 0; k < n_on; ++k) week_intensity[weeks[k]] = 1.0;
    if (labeled) {
      ad_weeks.assign(weeks.begin(), weeks.begin() + static_cast<std::ptrdiff_t>(n_ads));
      std::sort(ad_weeks.begin(), ad_weeks.end());
    }
  } else {
    const double u = beta_draw(rng, kLookalikeA, kLookalikeB);
    std::fill(week_intensity.begin(), week_intensity.end(), u);
  }

  std::map<double, Sampler> samplers;
  for (double v : week_intensity) {
    if (!samplers.count(v)) samplers.emplace(v, Sampler(profile_at(cfg, v)));
  }

  for (std::size_t t = 0; t < T; ++t) {
    Sampler& sm = samplers.at(week_intensity[t]);
    const auto visits = static_cast<std::int64_t>(
        std::poisson_distribution<std::int64_t>(mu * mix(rng))(rng));

    ingest::VisitWeekRecord r;
    r.placekey = placekey;
    r.naics_code = std::string(ingest::kTargetNaics);
    r.location_name = name;
    r.phone = phone;
    r.latitude = lat;
    r.longitude = lon;
    r.poi_cbg = ring_ids[0];
    r.week_start = cfg.start_date + std::chrono::days{7 * static_cast<int>(t)};

    std::array<std::int64_t, ingest::kHoursPerWeek> hours{};
    multinomial(rng, sm.hours, visits, hours);
    ingest::HourlyVisits hv{};
    for (std::size_t h = 0; h < hv.size(); ++h) hv[h] = static_cast<std::uint32_t>(hours[h]);
    r.hourly_visits = hv;

    std::array<std::int64_t, 7> dwell{};
    multinomial(rng, sm.dwell, visits, dwell);
    for (std::size_t b = 0; b < dwell.size(); ++b) {
      r.dwell_buckets.emplace_back(std::string(ingest::kDwellBuckets[b]), dwell[b]);
    }

    const auto visitors = std::binomial_distribution<std::int64_t>(visits, kVisitorRate)(rng);
    std::array<std::int64_t, 12> homes{};
    multinomial(rng, sm.rings, visitors, homes);
    for (std::size_t slot = 0; slot < homes.size(); ++slot) {
      if (homes[slot] > 0) r.visitor_home_cbgs.emplace_back(ring_ids[slot], homes[slot]);
    }
    s.visits.push_back(std::move(r));
    s.intensity.push_back(week_intensity[t]);
  }

  std::poisson_distribution<std::int64_t> extra_ads(2.0);
  for (std::size_t t : ad_weeks) {
    const Date monday = cfg.start_date + std::chrono::days{7 * static_cast<int>(t)};
    const std::int64_t count = 1 + extra_ads(rng);
    const auto day = [&] { return monday + std::chrono::days{static_cast<int>(rng() % 7)}; };
    if (count >= 2 && unit(rng) < 0.3) {
      const std::int64_t first = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(count - 1));
      s.ads.push_back({format_phone(digits, static_cast<int>(rng() % 5)), day(), first});
      s.ads.push_back({format_phone(digits, static_cast<int>(rng() % 5)), day(), count - first});
    } else {
      s.ads.push_back({format_phone(digits, static_cast<int>(rng() % 5)), day(), count});
    }
  }
  return s;
}

}  // namespace

void SynthConfig::validate() const {
  auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (n_establishments < 1) throw std::invalid_argument("synth: n_establishments must be >= 1");
  if (n_weeks < 2) throw std::invalid_argument("synth: n_weeks must be >= 2");
  if (n_establishments > 400000) throw std::invalid_argument("synth: at most 400000 establishments");
  if (!in_unit(illicit_fraction) || !in_unit(labeled_fraction_of_illicit) ||
      !in_unit(quiet_week_fraction)) {
    throw std::invalid_argument("synth: fractions must lie in [0,1]");
  }
  if (evening_shift < 0.0 || short_dwell_share < 0.0 || local_share < 0.0 || stability_gap < 0.0) {
    throw std::invalid_argument("synth: signature gaps must be non-negative");
  }
  if (legit_cv - stability_gap < 0.05) throw std::invalid_argument("synth: illicit CV would be below 0.05");
  if (mean_weekly_visits < 1.0) throw std::invalid_argument("synth: mean_weekly_visits must be >= 1");
  if (n_ad_weeks(*this) == 0 && labeled_fraction_of_illicit > 0.0 && illicit_fraction > 0.0) {
    throw std::invalid_argument("synth: quiet_week_fraction leaves no advertised weeks");
  }
  const WeekProfile p = profile_at(*this, 1.0);
  auto nonneg = [](const auto& xs) {
    return std::all_of(xs.begin(), xs.end(), [](double v) { return v >= 0.0; });
  };
  if (!nonneg(p.windows) || !nonneg(p.days) || !nonneg(p.dwell) || !nonneg(p.distance_bands)) {
    throw std::invalid_argument("synth: signature gaps too large for the baseline profile");
  }
}

nlohmann::json SynthConfig::to_json() const {
  return {{"n_establishments", n_establishments},
          {"n_weeks", n_weeks},
          {"illicit_fraction", illicit_fraction},
          {"labeled_fraction_of_illicit", labeled_fraction_of_illicit},
          {"quiet_week_fraction", quiet_week_fraction},
          {"seed", seed},
          {"start_date", format_date(start_date)},
          {"evening_shift", evening_shift},
          {"short_dwell_share", short_dwell_share},
          {"local_share", local_share},
          {"stability_gap", stability_gap},
          {"legit_cv", legit_cv},
          {"cv_spread", cv_spread},
          {"mean_weekly_visits", mean_weekly_visits}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  c.n_establishments = j.value("n_establishments", c.n_establishments);
  c.n_weeks = j.value("n_weeks", c.n_weeks);
  c.illicit_fraction = j.value("illicit_fraction", c.illicit_fraction);
  c.labeled_fraction_of_illicit = j.value("labeled_fraction_of_illicit", c.labeled_fraction_of_illicit);
  c.quiet_week_fraction = j.value("quiet_week_fraction", c.quiet_week_fraction);
  c.seed = j.value("seed", c.seed);
  if (j.contains("start_date")) {
    c.start_date = floor_to_monday(parse_date_or_throw(j.at("start_date").get<std::string>()));
  }
  c.evening_shift = j.value("evening_shift", c.evening_shift);
  c.short_dwell_share = j.value("short_dwell_share", c.short_dwell_share);
  c.local_share = j.value("local_share", c.local_share);
  c.stability_gap = j.value("stability_gap", c.stability_gap);
  c.legit_cv = j.value("legit_cv", c.legit_cv);
  c.cv_spread = j.value("cv_spread", c.cv_spread);
  c.mean_weekly_visits = j.value("mean_weekly_visits", c.mean_weekly_visits);
  c.validate();
  return c;
}

double mean_illicit_intensity(const SynthConfig& cfg) {
  return (duty_low(cfg) + duty_high(cfg)) / 2.0;
}

double mean_legit_intensity() { return kLookalikeA / (kLookalikeA + kLookalikeB); }

WeekProfile profile_at(const SynthConfig& cfg, double intensity) {
  const Shifts full = full_shifts(cfg);
  WeekProfile p;

  const double e = intensity * full.evening;
  p.windows = kLegitWindows;
  const double business = kLegitWindows[1] + kLegitWindows[2];
  p.windows[1] -= 1.5 * e * kLegitWindows[1] / business;
  p.windows[2] -= 1.5 * e * kLegitWindows[2] / business;
  p.windows[3] += e;
  p.windows[4] += 0.5 * e;

  p.days = kLegitDays;
  for (std::size_t d = 0; d < 4; ++d) p.days[d] -= 0.125 * e;
  p.days[4] += 0.25 * e;
  p.days[5] += 0.25 * e;

  const double sd = intensity * full.short_dwell;
  p.dwell = kLegitDwell;
  const double rest = 1.0 - kLegitDwell[0];
  p.dwell[0] += sd;
  for (std::size_t b = 1; b < 7; ++b) p.dwell[b] *= (rest - sd) / rest;

  const double loc = intensity * full.local;
  p.distance_bands = kLegitBands;
  const double far = 1.0 - kLegitBands[0] - kLegitBands[1];
  p.distance_bands[0] += 0.45 * loc;
  p.distance_bands[1] += 0.55 * loc;
  for (std::size_t b = 2; b < 6; ++b) p.distance_bands[b] *= (far - loc) / far;
  return p;
}

features::PartisanTable SynthOutput::partisan_table() const {
  features::PartisanTable t;
  for (const auto& [county, index] : partisan) t.set(county, index);
  return t;
}

std::vector<ingest::AdRecord> SynthOutput::ad_records() const {
  std::vector<ingest::AdRecord> out;
  out.reserve(ads.size());
  for (const auto& a : ads) out.push_back({a.phone, floor_to_monday(a.posted), a.ad_count});
  return out;
}

SynthOutput generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.n_establishments;
  const auto n_illicit = static_cast<std::size_t>(std::llround(cfg.illicit_fraction * static_cast<double>(n)));
  const auto n_labeled = static_cast<std::size_t>(
      std::llround(cfg.labeled_fraction_of_illicit * static_cast<double>(n_illicit)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 class_rng(derive_seed(cfg.seed, "synth.classes"));
  std::shuffle(order.begin(), order.end(), class_rng);
  std::vector<std::uint8_t> illicit(n, 0), labeled(n, 0);
  for (std::size_t k = 0; k < n_illicit; ++k) {
    illicit[order[k]] = 1;
    labeled[order[k]] = k < n_labeled;
  }

  std::vector<EstablishmentStream> streams(n);
  parallel_for(n, [&](std::size_t i) {
    streams[i] = generate_establishment(cfg, i, illicit[i] != 0, labeled[i] != 0);
  });

  SynthOutput out;
  out.visits.reserve(n * cfg.n_weeks);
  out.intensity.reserve(n * cfg.n_weeks);
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = streams[i];
    std::move(s.visits.begin(), s.visits.end(), std::back_inserter(out.visits));
    out.intensity.insert(out.intensity.end(), s.intensity.begin(), s.intensity.end());
    std::move(s.ads.begin(), s.ads.end(), std::back_inserter(out.ads));
    for (auto& g : s.geo) out.geo.add(std::move(g));
    out.truth.push_back({placekey_for(cfg.seed, i), illicit[i] != 0, labeled[i] != 0});
  }

  std::mt19937_64 partisan_rng(derive_seed(cfg.seed, "synth.partisan"));
  std::uniform_real_distribution<double> lean(0.2, 0.8);
  for (std::size_t c = 0; c < kCounties; ++c) out.partisan.emplace_back(county_fips(c), lean(partisan_rng));
  return out;
}

std::string write_truth_csv(std::span<const TruthRow> truth) {
  std::string out = io::csv_row({"placekey", "latent_class", "labeled_flag"});
  for (const auto& t : truth) {
    out += io::csv_row({t.placekey, t.illicit ? "illicit" : "legitimate", t.labeled ? "1" : "0"});
  }
  return out;
}

std::vector<TruthRow> parse_truth_csv(std::string_view text) {
  const io::CsvTable t = io::parse_csv(text);
  std::vector<TruthRow> out;
  if (t.header.empty()) return out;
  const auto c_key = t.column("placekey");
  const auto c_class = t.column("latent_class");
  const auto c_flag = t.column("labeled_flag");
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw std::invalid_argument("truth file: column count mismatch");
    TruthRow r;
    r.placekey = row[c_key];
    if (row[c_class] == "illicit") {
      r.illicit = true;
    } else if (row[c_class] != "legitimate") {
      throw std::invalid_argument("truth file: unknown latent_class '" + row[c_class] + "'");
    }
    r.labeled = row[c_flag] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

std::unordered_set<std::string> latent_illicit(std::span<const TruthRow> truth) {
  std::unordered_set<std::string> out;
  for (const auto& t : truth) {
    if (t.illicit) out.insert(t.placekey);
  }
  return out;
}

void write_outputs(const SynthOutput& out, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string pois;
  for (const auto& r : out.visits) {
    pois += ingest::visit_to_json(r).dump();
    pois.push_back('\n');
  }
  io::write_text_file(dir / kPoisFile, pois);

  std::string ads = io::csv_row({"phone", "date", "ad_count"});
  for (const auto& a : out.ads) ads += io::csv_row({a.phone, format_date(a.posted), std::to_string(a.ad_count)});
  io::write_text_file(dir / kAdsFile, ads);

  io::write_text_file(dir / kGeoFile, out.geo.to_csv());

  std::string partisan = io::csv_row({"county_fips", "index"});
  for (const auto& [county, index] : out.partisan) partisan += io::csv_row({county, io::format_double(index)});
  io::write_text_file(dir / kPartisanFile, partisan);

  io::write_text_file(dir / kTruthFile, write_truth_csv(out.truth));
}

}  // namespace mobrisk::synth
