#include "mobrisk/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "mobrisk/io.hpp"

namespace mobrisk::ingest {

using nlohmann::json;

std::int64_t VisitWeekRecord::total_visits() const {
  if (!hourly_visits) return 0;
  return std::accumulate(hourly_visits->begin(), hourly_visits->end(), std::int64_t{0});
}

std::optional<std::string> normalize_phone(std::string_view raw) {
  std::string digits;
  for (char c : raw) {
    if (c >= '0' && c <= '9') digits.push_back(c);
  }
  if (digits.size() == 11 && digits.front() == '1') digits.erase(0, 1);
  if (digits.size() < 10) return std::nullopt;
  return digits;
}

bool is_dwell_bucket(std::string_view label) {
  return std::find(kDwellBuckets.begin(), kDwellBuckets.end(), label) != kDwellBuckets.end();
}

namespace {

const json* find_field(const json& j, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    auto it = j.find(n);
    if (it != j.end()) return &*it;
  }
  return nullptr;
}

std::string text_field(const json& j, std::initializer_list<const char*> names,
                       bool required = true) {
  const json* v = find_field(j, names);
  if (v == nullptr || v->is_null()) {
    if (required) throw std::invalid_argument(std::string("missing field '") + *names.begin() + "'");
    return {};
  }
  if (v->is_string()) return v->get<std::string>();
  if (v->is_number_integer() || v->is_number_unsigned()) return std::to_string(v->get<long long>());
  throw std::invalid_argument(std::string("field '") + *names.begin() + "' is not text");
}

double number_field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end() || it->is_null()) throw std::invalid_argument(std::string("missing field '") + name + "'");
  if (it->is_number()) return it->get<double>();
  if (it->is_string()) return io::parse_double(it->get<std::string>());
  throw std::invalid_argument(std::string("field '") + name + "' is not numeric");
}

// Vendor files often carry nested JSON as a string; accept both forms.
const json& unwrap_embedded(const json& v, json& storage) {
  if (v.is_string()) {
    storage = json::parse(v.get<std::string>());
    return storage;
  }
  return v;
}

std::int64_t count_value(const json& v, std::string_view what) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == static_cast<double>(static_cast<std::int64_t>(d))) {
        if (d < 0) throw std::invalid_argument(std::string(what) + " has a negative count");
        return static_cast<std::int64_t>(d);
      }
    }
    throw std::invalid_argument(std::string(what) + " has a non-integer count");
  }
  const auto c = v.get<std::int64_t>();
  if (c < 0) throw std::invalid_argument(std::string(what) + " has a negative count");
  return c;
}

CountMap count_map(const json& raw, std::string_view what) {
  json storage;
  const json& v = unwrap_embedded(raw, storage);
  CountMap out;
  if (v.is_null()) return out;
  if (!v.is_object()) throw std::invalid_argument(std::string(what) + " is not an object");
  out.reserve(v.size());
  for (auto it = v.begin(); it != v.end(); ++it) {
    out.emplace_back(it.key(), count_value(it.value(), what));
  }
  return out;
}

json count_map_json(const CountMap& m) {
  json o = json::object();
  for (const auto& [k, v] : m) o[k] = v;
  return o;
}

template <class T, class RowFn>
Parsed<T> parse_jsonl(std::string_view text, RowFn&& fn) {
  Parsed<T> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    try {
      out.rows.push_back(fn(json::parse(line)));
    } catch (const std::exception& e) {
      out.malformed.push_back({line_no, e.what()});
    }
    if (end == text.size()) break;
  }
  return out;
}

bool has_csv_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".csv";
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

AdRecord ad_from_fields(std::string phone, std::string_view date, std::int64_t count) {
  if (count < 1) throw std::invalid_argument("ad_count must be >= 1");
  AdRecord ad;
  ad.phone = std::move(phone);
  ad.week_start = floor_to_monday(parse_date_or_throw(date));
  ad.ad_count = count;
  return ad;
}

}  // namespace

VisitWeekRecord visit_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("row is not a JSON object");
  VisitWeekRecord r;
  r.placekey = text_field(j, {"placekey"});
  if (r.placekey.empty()) throw std::invalid_argument("empty placekey");
  r.naics_code = text_field(j, {"naics_code"});
  r.location_name = text_field(j, {"location_name"}, false);
  r.phone = text_field(j, {"phone_number", "phone"}, false);
  r.latitude = number_field(j, "latitude");
  r.longitude = number_field(j, "longitude");
  if (!(r.latitude >= -90.0 && r.latitude <= 90.0)) throw std::invalid_argument("latitude out of range");
  if (!(r.longitude >= -180.0 && r.longitude <= 180.0)) throw std::invalid_argument("longitude out of range");
  r.poi_cbg = text_field(j, {"poi_cbg"}, false);
  r.week_start = parse_date_or_throw(text_field(j, {"date_range_start", "week_start"}));

  if (const json* hv = find_field(j, {"visits_by_each_hour", "hourly_visits"}); hv && !hv->is_null()) {
    json storage;
    const json& arr = unwrap_embedded(*hv, storage);
    if (!arr.is_null()) {
      if (!arr.is_array() || arr.size() != kHoursPerWeek) {
        throw std::invalid_argument("visits_by_each_hour must hold 168 values");
      }
      HourlyVisits h{};
      for (std::size_t i = 0; i < kHoursPerWeek; ++i) {
        const auto c = count_value(arr[i], "visits_by_each_hour");
        if (c > static_cast<std::int64_t>(UINT32_MAX)) throw std::invalid_argument("hourly count too large");
        h[i] = static_cast<std::uint32_t>(c);
      }
      r.hourly_visits = h;
    }
  }

  if (const json* d = find_field(j, {"bucketed_dwell_times", "dwell_buckets"})) {
    r.dwell_buckets = count_map(*d, "bucketed_dwell_times");
    for (const auto& [label, _] : r.dwell_buckets) {
      if (!is_dwell_bucket(label)) throw std::invalid_argument("unknown dwell bucket '" + label + "'");
    }
  }
  if (const json* v = find_field(j, {"visitor_home_cbgs"})) {
    r.visitor_home_cbgs = count_map(*v, "visitor_home_cbgs");
  }
  return r;
}

json visit_to_json(const VisitWeekRecord& r) {
  json j;
  j["placekey"] = r.placekey;
  j["naics_code"] = r.naics_code;
  j["location_name"] = r.location_name;
  j["phone_number"] = r.phone;
  j["latitude"] = r.latitude;
  j["longitude"] = r.longitude;
  j["poi_cbg"] = r.poi_cbg;
  j["date_range_start"] = format_date(r.week_start);
  if (r.hourly_visits) {
    j["visits_by_each_hour"] = *r.hourly_visits;
  } else {
    j["visits_by_each_hour"] = nullptr;
  }
  j["bucketed_dwell_times"] = count_map_json(r.dwell_buckets);
  j["visitor_home_cbgs"] = count_map_json(r.visitor_home_cbgs);
  return j;
}

Parsed<VisitWeekRecord> parse_visits_jsonl(std::string_view text) {
  return parse_jsonl<VisitWeekRecord>(text, [](const json& j) { return visit_from_json(j); });
}

Parsed<VisitWeekRecord> parse_visits_csv(std::string_view text) {
  Parsed<VisitWeekRecord> out;
  const io::CsvTable table = io::parse_csv(text);
  static const std::set<std::string> kJsonColumns = {
      "visits_by_each_hour", "hourly_visits", "bucketed_dwell_times", "dwell_buckets",
      "visitor_home_cbgs"};
  static const std::set<std::string> kNumberColumns = {"latitude", "longitude"};
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    try {
      if (row.size() != table.header.size()) throw std::invalid_argument("column count mismatch");
      json j = json::object();
      for (std::size_t c = 0; c < row.size(); ++c) {
        const std::string& name = table.header[c];
        const std::string& cell = row[c];
        if (kJsonColumns.count(name)) {
          j[name] = cell.empty() ? json(nullptr) : json::parse(cell);
        } else if (kNumberColumns.count(name)) {
          j[name] = cell.empty() ? json(nullptr) : json(io::parse_double(cell));
        } else {
          j[name] = cell;
        }
      }
      out.rows.push_back(visit_from_json(j));
    } catch (const std::exception& e) {
      out.malformed.push_back({i + 2, e.what()});
    }
  }
  return out;
}

Parsed<VisitWeekRecord> read_visits(const std::filesystem::path& path) {
  const std::string text = io::read_text_file(path);
  return has_csv_extension(path) ? parse_visits_csv(text) : parse_visits_jsonl(text);
}

Parsed<AdRecord> parse_ads_csv(std::string_view text) {
  Parsed<AdRecord> out;
  const io::CsvTable table = io::parse_csv(text);
  if (table.header.empty()) return out;
  const std::size_t phone_col = table.column("phone");
  auto date_col = table.find_column("date");
  if (!date_col) date_col = table.find_column("week_start");
  if (!date_col) throw std::invalid_argument("ads CSV needs a 'date' or 'week_start' column");
  const auto count_col = table.find_column("ad_count");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    try {
      if (row.size() != table.header.size()) throw std::invalid_argument("column count mismatch");
      const std::int64_t count =
          count_col && !row[*count_col].empty() ? io::parse_int(row[*count_col]) : 1;
      out.rows.push_back(ad_from_fields(row[phone_col], row[*date_col], count));
    } catch (const std::exception& e) {
      out.malformed.push_back({i + 2, e.what()});
    }
  }
  return out;
}

Parsed<AdRecord> parse_ads_jsonl(std::string_view text) {
  return parse_jsonl<AdRecord>(text, [](const json& j) {
    const std::string phone = text_field(j, {"phone", "phone_number"});
    const std::string date = text_field(j, {"date", "week_start"});
    std::int64_t count = 1;
    if (auto it = j.find("ad_count"); it != j.end() && !it->is_null()) count = count_value(*it, "ad_count");
    return ad_from_fields(phone, date, count);
  });
}

Parsed<AdRecord> read_ads(const std::filesystem::path& path) {
  const std::string text = io::read_text_file(path);
  return has_csv_extension(path) ? parse_ads_csv(text) : parse_ads_jsonl(text);
}

json FilterSummary::to_json() const {
  return json{{"rows_in", rows_in},
              {"dropped_naics", dropped_naics},
              {"dropped_name", dropped_name},
              {"dropped_region", dropped_region},
              {"dropped_date", dropped_date},
              {"dropped_discontinuous", dropped_discontinuous},
              {"placekeys_discontinuous", placekeys_discontinuous},
              {"kept", kept}};
}

FilterResult filter_population(std::vector<VisitWeekRecord> records, const FilterConfig& cfg) {
  FilterResult result;
  auto& s = result.summary;
  s.rows_in = records.size();

  std::vector<VisitWeekRecord> stage;
  stage.reserve(records.size());
  for (auto& r : records) {
    if (r.naics_code != cfg.naics_code) {
      ++s.dropped_naics;
      continue;
    }
    const std::string name = lowercase(r.location_name);
    if (name.find("massage") == std::string::npos && name.find("spa") == std::string::npos) {
      ++s.dropped_name;
      continue;
    }
    if (r.latitude < cfg.min_lat || r.latitude > cfg.max_lat || r.longitude < cfg.min_lon ||
        r.longitude > cfg.max_lon) {
      ++s.dropped_region;
      continue;
    }
    if (r.week_start < cfg.start_date) {
      ++s.dropped_date;
      continue;
    }
    stage.push_back(std::move(r));
  }

  std::unordered_set<std::string> broken;
  for (const auto& r : stage) {
    if (!r.hourly_visits) broken.insert(r.placekey);
  }
  s.placekeys_discontinuous = broken.size();
  result.kept.reserve(stage.size());
  for (auto& r : stage) {
    if (broken.count(r.placekey)) {
      ++s.dropped_discontinuous;
      continue;
    }
    result.kept.push_back(std::move(r));
  }
  s.kept = result.kept.size();
  return result;
}

std::vector<AdRecord> aggregate_ads(std::span<const AdRecord> ads, std::size_t* unusable_phones) {
  std::map<std::pair<std::string, Date>, std::int64_t> totals;
  std::size_t unusable = 0;
  for (const auto& ad : ads) {
    auto phone = normalize_phone(ad.phone);
    if (!phone) {
      ++unusable;
      continue;
    }
    totals[{*phone, floor_to_monday(ad.week_start)}] += ad.ad_count;
  }
  if (unusable_phones) *unusable_phones = unusable;
  std::vector<AdRecord> out;
  out.reserve(totals.size());
  for (const auto& [key, count] : totals) out.push_back({key.first, key.second, count});
  return out;
}

json MergeSummary::to_json() const {
  json coll = json::array();
  for (const auto& c : collisions) coll.push_back({{"phone", c.phone}, {"placekeys", c.placekeys}});
  return json{{"rows", rows},
              {"illicit_active", illicit_active},
              {"illicit_quiet", illicit_quiet},
              {"never_asw", never_asw},
              {"ad_rows_unusable_phone", ad_rows_unusable_phone},
              {"ad_weeks_unmatched", ad_weeks_unmatched},
              {"phone_collisions", coll}};
}

MergeResult merge_and_label(std::span<const VisitWeekRecord> pois, std::span<const AdRecord> ads) {
  MergeResult result;
  auto& s = result.summary;

  const std::vector<AdRecord> agg = aggregate_ads(ads, &s.ad_rows_unusable_phone);
  std::map<std::pair<std::string, Date>, std::int64_t> ad_index;
  std::set<std::string> ad_phones;
  for (const auto& a : agg) {
    ad_index.emplace(std::make_pair(a.phone, a.week_start), a.ad_count);
    ad_phones.insert(a.phone);
  }

  // Build phase: normalized phone of every POI row.
  std::vector<std::optional<std::string>> phones(pois.size());
  std::map<std::string, std::set<std::string>> phone_to_placekeys;
  for (std::size_t i = 0; i < pois.size(); ++i) {
    phones[i] = normalize_phone(pois[i].phone);
    if (phones[i] && ad_phones.count(*phones[i])) {
      phone_to_placekeys[*phones[i]].insert(pois[i].placekey);
    }
  }
  for (const auto& [phone, keys] : phone_to_placekeys) {
    if (keys.size() > 1) s.collisions.push_back({phone, {keys.begin(), keys.end()}});
  }

  // Probe phase.
  std::vector<std::int64_t> counts(pois.size(), 0);
  std::unordered_set<std::string> linked;
  std::set<std::pair<std::string, Date>> matched_ad_keys;
  for (std::size_t i = 0; i < pois.size(); ++i) {
    if (!phones[i]) continue;
    auto key = std::make_pair(*phones[i], pois[i].week_start);
    auto it = ad_index.find(key);
    if (it != ad_index.end()) {
      counts[i] = it->second;
      linked.insert(pois[i].placekey);
      matched_ad_keys.insert(std::move(key));
    }
  }
  s.ad_weeks_unmatched = ad_index.size() - matched_ad_keys.size();

  std::vector<std::size_t> order(pois.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pois[a].placekey != pois[b].placekey) return pois[a].placekey < pois[b].placekey;
    return pois[a].week_start < pois[b].week_start;
  });

  result.rows.reserve(pois.size());
  for (std::size_t i : order) {
    LabeledObservation obs;
    obs.record = pois[i];
    obs.ad_count = counts[i];
    if (counts[i] >= 1) {
      obs.category = LabelCategory::IllicitActive;
      ++s.illicit_active;
    } else if (linked.count(pois[i].placekey)) {
      obs.category = LabelCategory::IllicitQuiet;
      ++s.illicit_quiet;
    } else {
      obs.category = LabelCategory::NeverAsw;
      ++s.never_asw;
    }
    result.rows.push_back(std::move(obs));
  }
  s.rows = result.rows.size();
  return result;
}

json labeled_to_json(const LabeledObservation& obs) {
  json j = visit_to_json(obs.record);
  j["category"] = std::string(to_string(obs.category));
  j["ad_count"] = obs.ad_count;
  return j;
}

LabeledObservation labeled_from_json(const json& j) {
  LabeledObservation obs;
  obs.record = visit_from_json(j);
  obs.category = label_category_from_string(j.at("category").get<std::string>());
  obs.ad_count = j.value("ad_count", std::int64_t{0});
  if ((obs.category == LabelCategory::IllicitActive) != (obs.ad_count >= 1)) {
    throw std::invalid_argument("category/ad_count mismatch for " + obs.record.placekey);
  }
  return obs;
}

std::string write_labeled_jsonl(std::span<const LabeledObservation> rows) {
  std::string out;
  for (const auto& r : rows) {
    out += labeled_to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<LabeledObservation> parse_labeled_jsonl(std::string_view text) {
  std::vector<LabeledObservation> rows;
  std::size_t line_no = 0;
  for (std::string_view line : io::split_lines(text)) {
    ++line_no;
    try {
      rows.push_back(labeled_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw std::invalid_argument("labeled row " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace mobrisk::ingest
