#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

#include <unistd.h>

#include "mobrisk/common.hpp"
#include "mobrisk/ingest.hpp"
#include "mobrisk/matrix.hpp"

namespace mobrisk::testing {

inline ingest::VisitWeekRecord visit(const std::string& placekey, const std::string& week,
                                     std::uint32_t per_hour = 1) {
  ingest::VisitWeekRecord r;
  r.placekey = placekey;
  r.naics_code = "812199";
  r.location_name = "Golden Spa";
  r.phone = "(205) 555-0123";
  r.latitude = 33.21;
  r.longitude = -87.57;
  r.poi_cbg = "010010001001";
  r.week_start = parse_date_or_throw(week);
  ingest::HourlyVisits h{};
  h.fill(per_hour);
  r.hourly_visits = h;
  r.dwell_buckets = {{"<5", 10}, {"21-60", 5}};
  r.visitor_home_cbgs = {{"010010001001", 4}};
  return r;
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = nd(rng);
  }
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("mobrisk-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace mobrisk::testing
