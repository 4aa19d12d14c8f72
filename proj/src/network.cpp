#include "mobmine/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <set>

#include <fmt/format.h>

namespace mobmine {

namespace {

constexpr double kEarthRadiusM = 6371008.8;

double to_rad(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

double distance_m(double lat1, double lon1, double lat2, double lon2) {
  const double p1 = to_rad(lat1);
  const double p2 = to_rad(lat2);
  const double dp = p2 - p1;
  const double dl = to_rad(lon2 - lon1);
  const double a = std::sin(dp / 2) * std::sin(dp / 2) +
                   std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(a)));
}

CellMap::CellMap(std::vector<CellSite> cells) : cells_(std::move(cells)) {
  std::sort(cells_.begin(), cells_.end(),
            [](const CellSite& a, const CellSite& b) { return a.id < b.id; });
  index_.reserve(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const CellSite& c = cells_[i];
    if (c.id.empty()) throw InvalidConfig("cell with empty id");
    if (c.la.empty()) throw InvalidConfig(fmt::format("cell {} has no location area", c.id));
    if (!(c.radius_m >= kMinCellRadiusM && c.radius_m <= kMaxCellRadiusM)) {
      throw InvalidConfig(fmt::format("cell {} radius {} outside [{}, {}]", c.id, c.radius_m,
                                      kMinCellRadiusM, kMaxCellRadiusM));
    }
    if (!index_.emplace(c.id, static_cast<CellIndex>(i)).second) {
      throw InvalidConfig(fmt::format("duplicate cell id {}", c.id));
    }
  }

  std::set<std::string> las;
  for (const CellSite& c : cells_) las.insert(c.la);
  las_.assign(las.begin(), las.end());
  la_of_cell_.resize(cells_.size());
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    la_of_cell_[i] = static_cast<std::uint32_t>(
        std::lower_bound(las_.begin(), las_.end(), cells_[i].la) - las_.begin());
  }

  adjacency_.assign(cells_.size(), {});
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    for (std::size_t j = i + 1; j < cells_.size(); ++j) {
      const double d = distance_m(cells_[i].lat, cells_[i].lon, cells_[j].lat, cells_[j].lon);
      if (d < cells_[i].radius_m + cells_[j].radius_m) {
        adjacency_[i].push_back(static_cast<CellIndex>(j));
        adjacency_[j].push_back(static_cast<CellIndex>(i));
      }
    }
  }
  for (auto& n : adjacency_) std::sort(n.begin(), n.end());
}

std::optional<CellIndex> CellMap::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool CellMap::adjacent(CellIndex a, CellIndex b) const {
  const auto& n = adjacency_[a];
  return std::binary_search(n.begin(), n.end(), b);
}

std::size_t CellMap::edge_count() const {
  std::size_t total = 0;
  for (const auto& n : adjacency_) total += n.size();
  return total / 2;
}

std::vector<int> CellMap::hop_distances(CellIndex from) const {
  std::vector<int> dist(cells_.size(), -1);
  std::deque<CellIndex> queue{from};
  dist[from] = 0;
  while (!queue.empty()) {
    const CellIndex u = queue.front();
    queue.pop_front();
    for (CellIndex v : adjacency_[u]) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        queue.push_back(v);
      }
    }
  }
  return dist;
}

std::vector<CellIndex> CellMap::shortest_path(CellIndex from, CellIndex to) const {
  if (from == to) return {from};
  constexpr CellIndex kNone = std::numeric_limits<CellIndex>::max();
  std::vector<CellIndex> parent(cells_.size(), kNone);
  std::deque<CellIndex> queue{from};
  parent[from] = from;
  while (!queue.empty() && parent[to] == kNone) {
    const CellIndex u = queue.front();
    queue.pop_front();
    for (CellIndex v : adjacency_[u]) {
      if (parent[v] == kNone) {
        parent[v] = u;
        queue.push_back(v);
      }
    }
  }
  if (parent[to] == kNone) return {};
  std::vector<CellIndex> path{to};
  while (path.back() != from) path.push_back(parent[path.back()]);
  std::reverse(path.begin(), path.end());
  return path;
}

CellIndex CellMap::nearest_cell(double lat, double lon) const {
  CellIndex best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const double d = distance_m(lat, lon, cells_[i].lat, cells_[i].lon);
    if (d < best_d) {
      best_d = d;
      best = static_cast<CellIndex>(i);
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

ZoneMap ZoneMap::from_location_areas(const CellMap& cells) {
  std::vector<std::pair<std::string, std::string>> assignment;
  assignment.reserve(cells.size());
  for (const CellSite& c : cells.cells()) assignment.emplace_back(c.id, c.la);
  return from_assignment(cells, assignment);
}

ZoneMap ZoneMap::per_cell(const CellMap& cells) {
  std::vector<std::pair<std::string, std::string>> assignment;
  assignment.reserve(cells.size());
  for (const CellSite& c : cells.cells()) assignment.emplace_back(c.id, c.id);
  return from_assignment(cells, assignment);
}

ZoneMap ZoneMap::from_assignment(const CellMap& cells,
                                 const std::vector<std::pair<std::string, std::string>>& assignment) {
  ZoneMap zm;
  std::vector<std::string> offenders;
  std::vector<std::string> zone_by_cell(cells.size());
  for (const auto& [cell, zone] : assignment) {
    auto idx = cells.find(cell);
    if (!idx) {
      offenders.push_back(cell);
      continue;
    }
    zone_by_cell[*idx] = zone;
  }
  if (!offenders.empty()) throw ReferentialError("zone map references unknown cells", offenders);

  std::set<std::string> names;
  for (const auto& z : zone_by_cell) {
    if (!z.empty()) names.insert(z);
  }
  zm.names_.assign(names.begin(), names.end());
  zm.zone_of_cell_.assign(cells.size(), kUnmapped);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (zone_by_cell[i].empty()) continue;
    zm.zone_of_cell_[i] = *zm.find(zone_by_cell[i]);
  }
  zm.finish(cells);
  return zm;
}

void ZoneMap::finish(const CellMap& cells) {
  std::vector<std::map<std::string, std::size_t>> la_votes(names_.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (zone_of_cell_[i] == kUnmapped) continue;
    ++la_votes[zone_of_cell_[i]][cells[static_cast<CellIndex>(i)].la];
  }
  parents_.resize(names_.size());
  for (std::size_t z = 0; z < names_.size(); ++z) {
    std::size_t best = 0;
    for (const auto& [la, n] : la_votes[z]) {
      if (n > best) {
        best = n;
        parents_[z] = la;
      }
    }
  }
}

std::optional<std::uint32_t> ZoneMap::find(std::string_view name) const {
  auto it = std::lower_bound(names_.begin(), names_.end(), name);
  if (it == names_.end() || *it != name) return std::nullopt;
  return static_cast<std::uint32_t>(it - names_.begin());
}

std::optional<std::string> ZoneMap::parent_of(std::string_view zone_name) const {
  auto z = find(zone_name);
  if (!z) return std::nullopt;
  return parents_[*z];
}

bool ZoneMap::is_total() const {
  return std::none_of(zone_of_cell_.begin(), zone_of_cell_.end(),
                      [](std::uint32_t z) { return z == kUnmapped; });
}

std::vector<std::string> ZoneMap::unmapped_cells(const CellMap& cells) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < zone_of_cell_.size(); ++i) {
    if (zone_of_cell_[i] == kUnmapped) out.push_back(cells.id(static_cast<CellIndex>(i)));
  }
  return out;
}

}  // namespace mobmine
