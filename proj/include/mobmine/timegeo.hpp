#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mobmine/common.hpp"
#include "mobmine/ingest.hpp"
#include "mobmine/network.hpp"

namespace mobmine {

struct StationConfig {
  Timestamp dwell_min_s = 1800;

  bool operator==(const StationConfig&) const = default;
};

// A maximal run of one pseudonym's events whose cells form a clique of the
// adjacency relation (ping-pong between neighbors stays in one station) and
// that spans at least dwell_min_s.
struct Station {
  std::uint32_t id = 0;
  SubIndex pseud = 0;
  std::vector<CellIndex> cells;  // sorted
  Timestamp enter_ts = 0;
  Timestamp exit_ts = 0;
  CellIndex modal_cell = 0;      // most frequent cell; ties go to the lower index
  std::uint32_t first_event = 0;  // positions in the pseudonym's time-ordered event list
  std::uint32_t last_event = 0;

  bool operator==(const Station&) const = default;
};

struct Hop {
  CellIndex cell = 0;
  Timestamp first_ts = 0;
  Timestamp last_ts = 0;

  bool operator==(const Hop&) const = default;
};

struct SpaceTimePath {
  std::uint32_t id = 0;
  SubIndex pseud = 0;
  std::vector<Hop> hops;  // events between the two stations, runs of one cell merged
  std::uint32_t origin = 0;
  std::uint32_t dest = 0;
  CellIndex origin_cell = 0;
  CellIndex dest_cell = 0;
  Timestamp depart_ts = 0;  // origin exit
  Timestamp arrive_ts = 0;  // destination enter

  Timestamp duration_s() const { return arrive_ts - depart_ts; }
  bool operator==(const SpaceTimePath&) const = default;
};

struct RoutePoint {
  CellIndex cell = 0;
  Timestamp ts = 0;

  bool operator==(const RoutePoint&) const = default;
};

// Origin station cell, hop cells, destination station cell, with repeated
// consecutive cells collapsed. This is the cell sequence mined and anonymized
// downstream.
std::vector<RoutePoint> route_points(const SpaceTimePath& path);
std::vector<CellIndex> route_cells(const SpaceTimePath& path);

std::string station_label(std::uint32_t id);
std::string path_label(std::uint32_t id);

std::vector<Station> detect_stations(const AnnotatedStream& stream, const CellMap& cells,
                                     const StationConfig& config,
                                     ExecPolicy policy = ExecPolicy::Parallel);

struct PathReport {
  std::size_t pseudonyms_without_paths = 0;  // fewer than two stations
};

// Stations must come from detect_stations on the same stream.
std::vector<SpaceTimePath> extract_paths(const AnnotatedStream& stream,
                                         std::span<const Station> stations,
                                         PathReport* report = nullptr);

struct BundleConfig {
  std::size_t min_members = 2;
  Timestamp time_quantum_s = 3600;

  bool operator==(const BundleConfig&) const = default;
};

struct Bundle {
  std::uint32_t id = 0;
  std::vector<std::uint32_t> members;  // path ids, sorted
  std::vector<CellIndex> shared_cells;
  Timestamp window_start = 0;
  Timestamp window_end = 0;
};

// Paths observed in the same (cell, time slot) converge there. Slots shared by
// the same member set are merged into one bundle.
std::vector<Bundle> bundle_paths(std::span<const SpaceTimePath> paths, const BundleConfig& config);

// Reachability envelope: cells an individual could visit between leaving
// `origin` at t0 and reaching `dest` at t1 at no more than max_speed_mps.
std::vector<CellIndex> prism_cells(const CellMap& cells, CellIndex origin, Timestamp t0,
                                   CellIndex dest, Timestamp t1, double max_speed_mps);
// Indices i into route_points(path) whose step from point i-1 is faster than
// max_speed_mps even between the nearest edges of the two coverage circles.
std::vector<std::size_t> flag_unreachable_hops(const SpaceTimePath& path, const CellMap& cells,
                                               double max_speed_mps);

struct TimeGeography {
  std::vector<std::string> pseudonyms;
  std::vector<Station> stations;
  std::vector<SpaceTimePath> paths;
};

void write_stations_jsonl(const std::filesystem::path& path, const TimeGeography& tg,
                          const CellMap& cells);
void write_paths_jsonl(const std::filesystem::path& path, const TimeGeography& tg,
                       const CellMap& cells);
void write_bundles_jsonl(const std::filesystem::path& path, std::span<const Bundle> bundles,
                         const CellMap& cells);
// Reads stations.jsonl and paths.jsonl from `dir`.
TimeGeography read_time_geography(const std::filesystem::path& dir, const CellMap& cells);

}  // namespace mobmine
