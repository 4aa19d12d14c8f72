#include "support.hpp"

#include <atomic>
#include <cmath>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <unistd.h>

namespace mobmine::testing {

namespace {
// About 1 km in degrees of latitude.
constexpr double kKmLat = 1.0 / 111.195;
constexpr double kBaseLat = 57.7;
constexpr double kBaseLon = 11.9;
double km_lon() { return kKmLat / std::cos(kBaseLat * std::acos(-1.0) / 180.0); }
}  // namespace

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() / fmt::format("mobmine-{}-{}-{}", tag, ::getpid(), counter++);
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Salt test_salt(std::uint8_t fill) { return Salt(std::vector<std::uint8_t>(32, fill)); }

CellMap line_network(std::size_t n, std::size_t la_size) {
  std::vector<CellSite> sites;
  for (std::size_t i = 0; i < n; ++i) {
    sites.push_back({fmt::format("c{:02}", i), kBaseLat, kBaseLon + static_cast<double>(i) * km_lon(), 600.0,
                     fmt::format("LA{:02}", i / la_size)});
  }
  return CellMap(std::move(sites));
}

CellMap grid_network(std::size_t n, std::size_t la_block) {
  std::vector<CellSite> sites;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      sites.push_back({fmt::format("g{:03}_{:03}", r, c), kBaseLat + static_cast<double>(r) * kKmLat,
                       kBaseLon + static_cast<double>(c) * km_lon(), 600.0,
                       fmt::format("LA{}_{}", r / la_block, c / la_block)});
    }
  }
  return CellMap(std::move(sites));
}

AnnotatedStream make_stream(const CellMap& cells, const std::vector<Ev>& events) {
  AnnotatedStream s;
  for (const Ev& e : events) s.pseudonyms.push_back(e.pseud);
  std::sort(s.pseudonyms.begin(), s.pseudonyms.end());
  s.pseudonyms.erase(std::unique(s.pseudonyms.begin(), s.pseudonyms.end()), s.pseudonyms.end());
  for (const Ev& e : events) {
    const auto idx = std::lower_bound(s.pseudonyms.begin(), s.pseudonyms.end(), e.pseud) - s.pseudonyms.begin();
    s.events.push_back({e.ts, static_cast<SubIndex>(idx), e.kind, *cells.find(e.cell)});
  }
  sort_events(s.events, s.pseudonyms);
  s.demographics.resize(s.pseudonyms.size());
  s.provenance.salt_id = "test";
  s.provenance.created_ts = s.events.empty() ? 0 : s.events.back().ts;
  return s;
}

SpaceTimePath make_path(std::uint32_t id, SubIndex pseud, const std::vector<CellIndex>& route, Timestamp depart,
                        Timestamp step) {
  SpaceTimePath p;
  p.id = id;
  p.pseud = pseud;
  p.origin_cell = route.front();
  p.dest_cell = route.back();
  p.depart_ts = depart;
  for (std::size_t i = 1; i + 1 < route.size(); ++i) {
    const Timestamp t = depart + static_cast<Timestamp>(i) * step;
    p.hops.push_back({route[i], t, t});
  }
  p.arrive_ts = depart + static_cast<Timestamp>(route.size() - 1) * step;
  return p;
}

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  const std::size_t n = a.size();
  std::map<std::pair<std::size_t, std::size_t>, double> joint;
  std::map<std::size_t, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : joint) sum_ij += c2(v);
  for (auto& [k, v] : ra) sum_a += c2(v);
  for (auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(static_cast<double>(n));
  const double max_index = (sum_a + sum_b) / 2;
  if (max_index == expected) return 1.0;
  return (sum_ij - expected) / (max_index - expected);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

std::size_t file_size(const fs::path& p) { return static_cast<std::size_t>(fs::file_size(p)); }

}  // namespace mobmine::testing
