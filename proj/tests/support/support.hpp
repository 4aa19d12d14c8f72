#pragma once

#include <filesystem>
#include <string>
#include <tuple>
#include <vector>

#include "mobmine/ingest.hpp"
#include "mobmine/network.hpp"
#include "mobmine/synthnet.hpp"
#include "mobmine/timegeo.hpp"

namespace mobmine::testing {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

Salt test_salt(std::uint8_t fill = 0x5a);

// Cells "c00".."cNN" spaced 1 km apart on a west-east line; neighbours
// overlap, nothing else does. `la_size` consecutive cells share an LA.
CellMap line_network(std::size_t n, std::size_t la_size = 1000);

// Square grid of side `n`, 1 km pitch; 4-neighbour overlap only.
CellMap grid_network(std::size_t n, std::size_t la_block = 1000);

struct Ev {
  std::string pseud;
  Timestamp ts;
  std::string cell;
  EventKind kind = EventKind::Page;
};

AnnotatedStream make_stream(const CellMap& cells, const std::vector<Ev>& events);

// Path with the given route cells; origin and dest are the first and last
// cells, intermediate cells become hops spaced `step` seconds apart.
SpaceTimePath make_path(std::uint32_t id, SubIndex pseud, const std::vector<CellIndex>& route,
                        Timestamp depart, Timestamp step = 120);

double adjusted_rand_index(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

std::size_t file_size(const fs::path& p);

}  // namespace mobmine::testing
