#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mobmine/common.hpp"

namespace mobmine {

inline constexpr double kMinCellRadiusM = 100.0;
inline constexpr double kMaxCellRadiusM = 35000.0;
inline constexpr double kMaxUrbanRadiusM = 3000.0;

struct CellSite {
  std::string id;
  double lat = 0.0;
  double lon = 0.0;
  double radius_m = kMinCellRadiusM;
  std::string la;

  bool operator==(const CellSite&) const = default;
};

// Great-circle distance in meters.
double distance_m(double lat1, double lon1, double lat2, double lon2);

// Cell towers plus the overlap relation. Cells are stored sorted by id, so a
// CellIndex orders cells the same way their ids sort.
class CellMap {
 public:
  CellMap() = default;
  explicit CellMap(std::vector<CellSite> cells);

  std::size_t size() const { return cells_.size(); }
  bool empty() const { return cells_.empty(); }
  const CellSite& operator[](CellIndex i) const { return cells_[i]; }
  std::span<const CellSite> cells() const { return cells_; }

  std::optional<CellIndex> find(std::string_view id) const;
  const std::string& id(CellIndex i) const { return cells_[i].id; }

  std::span<const CellIndex> neighbors(CellIndex i) const { return adjacency_[i]; }
  bool adjacent(CellIndex a, CellIndex b) const;
  std::size_t edge_count() const;

  // Location Areas, sorted by id.
  std::span<const std::string> location_areas() const { return las_; }
  std::uint32_t la_index(CellIndex i) const { return la_of_cell_[i]; }

  // Hop distances from `from`; -1 marks unreachable cells.
  std::vector<int> hop_distances(CellIndex from) const;
  // Shortest adjacency path including both endpoints; empty when unreachable.
  // Ties resolve toward lower cell indices so the result is deterministic.
  std::vector<CellIndex> shortest_path(CellIndex from, CellIndex to) const;

  CellIndex nearest_cell(double lat, double lon) const;

  bool operator==(const CellMap& other) const { return cells_ == other.cells_; }

 private:
  std::vector<CellSite> cells_;
  std::vector<std::vector<CellIndex>> adjacency_;
  std::unordered_map<std::string, CellIndex> index_;
  std::vector<std::string> las_;
  std::vector<std::uint32_t> la_of_cell_;
};

// Total function from cells to zones. `parent` is the zone's Location Area,
// the middle level of the zone -> LA -> all hierarchy.
class ZoneMap {
 public:
  static constexpr std::uint32_t kUnmapped = std::numeric_limits<std::uint32_t>::max();

  ZoneMap() = default;

  // Zone = Location Area.
  static ZoneMap from_location_areas(const CellMap& cells);
  // Zone = cell.
  static ZoneMap per_cell(const CellMap& cells);
  // Explicit mapping. Cells absent from `assignment` stay unmapped.
  static ZoneMap from_assignment(const CellMap& cells,
                                 const std::vector<std::pair<std::string, std::string>>& assignment);

  std::size_t zone_count() const { return names_.size(); }
  std::span<const std::string> names() const { return names_; }
  const std::string& name(std::uint32_t zone) const { return names_[zone]; }
  std::optional<std::uint32_t> find(std::string_view name) const;
  const std::string& parent(std::uint32_t zone) const { return parents_[zone]; }
  std::optional<std::string> parent_of(std::string_view zone_name) const;

  // kUnmapped when the cell has no zone.
  std::uint32_t zone_of(CellIndex cell) const { return zone_of_cell_[cell]; }
  bool is_total() const;
  std::vector<std::string> unmapped_cells(const CellMap& cells) const;

 private:
  void finish(const CellMap& cells);

  std::vector<std::string> names_;
  std::vector<std::string> parents_;
  std::vector<std::uint32_t> zone_of_cell_;
};

}  // namespace mobmine
