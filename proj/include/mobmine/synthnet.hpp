#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mobmine/common.hpp"
#include "mobmine/events.hpp"
#include "mobmine/network.hpp"

namespace mobmine {

struct BoundingBox {
  double lat_min = 57.600;
  double lat_max = 57.816;
  double lon_min = 11.750;
  double lon_max = 12.154;

  bool operator==(const BoundingBox&) const = default;
};

struct NetworkConfig {
  std::size_t n_cells = 400;
  BoundingBox bbox;
  double urban_fraction = 0.6;
  std::size_t n_las = 40;

  bool operator==(const NetworkConfig&) const = default;
};

// Cells on a jittered grid over the box. The cells nearest the box center are
// urban (radius in [100, 3000] m), the rest rural (radius in (3000, 35000] m).
// Location Areas are the Voronoi regions of n_las farthest-point seeds.
CellMap generate_network(const NetworkConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Population

struct AgeBin {
  int lo = 18;
  int hi = 80;
  double weight = 1.0;

  bool operator==(const AgeBin&) const = default;
};

struct DemoDistributions {
  std::vector<AgeBin> age_bins{{18, 24, 0.12}, {25, 34, 0.20}, {35, 44, 0.20},
                               {45, 54, 0.19}, {55, 64, 0.16}, {65, 80, 0.13}};
  std::vector<std::pair<std::string, double>> genders{{"F", 0.49}, {"M", 0.49}, {"X", 0.02}};

  bool operator==(const DemoDistributions&) const = default;
};

struct PopulationConfig {
  std::size_t n_agents = 1000;
  DemoDistributions demo;
  std::size_t n_work_hubs = 8;
  double hub_share = 0.7;       // fraction of agents working at a hub
  double urban_home_weight = 4.0;
  double errand_prob = 0.2;     // chance of an evening stop between work and home
  int min_trip_hops = 3;
  bool unique_home_work = false;  // (home_zone, work_zone) pairs unique across agents
  double morning_mean_s = 8.0 * kSecondsPerHour;
  double evening_mean_s = 17.0 * kSecondsPerHour;
  double errand_return_mean_s = 20.5 * kSecondsPerHour;
  double depart_sd_s = 45.0 * 60.0;

  bool operator==(const PopulationConfig&) const = default;
};

struct RouteSpec {
  std::vector<CellIndex> cells;  // adjacency shortest path, both endpoints included
  double depart_mean_s = 0.0;    // seconds after local midnight
  double depart_sd_s = 0.0;
};

struct Agent {
  std::string sub_id;
  CellIndex home_cell = 0;
  CellIndex work_cell = 0;
  std::vector<RouteSpec> daily_routes;  // executed in order each day; chain home -> ... -> home
  DemoRecord demographics;
};

struct Population {
  std::vector<Agent> agents;
  std::size_t routes_omitted = 0;  // agents left stationary for lack of a usable path
};

Population generate_population(const PopulationConfig& config, const CellMap& net,
                               const ZoneMap& zones, std::uint64_t seed);

std::string subscriber_id(std::size_t agent_index);

// Home -> work -> home commuter with fixed departure statistics. Returns an
// agent with no routes when work is unreachable.
Agent make_commuter(std::string sub_id, const CellMap& net, const ZoneMap& zones,
                    CellIndex home, CellIndex work, double morning_mean_s, double evening_mean_s,
                    double depart_sd_s, DemoAttributes demo);

// ---------------------------------------------------------------------------
// Event simulation

struct SimConfig {
  int days = 7;
  Timestamp start_ts = 1704067200;  // Monday 2024-01-01 00:00 UTC
  Timestamp paging_interval_s = 3600;
  double call_rate = 0.5;  // voice and SMS records per hour
  double data_rate = 1.0;  // data sessions per hour
  Timestamp hop_s = 120;
  double position_noise_m = 0.0;
  // Minimum stay between trips; defaults to four paging intervals.
  std::optional<Timestamp> min_stay_s;

  Timestamp min_stay() const { return min_stay_s.value_or(4 * paging_interval_s); }
  Timestamp end_ts() const { return start_ts + days * kSecondsPerDay; }

  bool operator==(const SimConfig&) const = default;
};

struct Trip {
  std::string sub;
  std::string origin_zone;
  std::string dest_zone;
  Timestamp depart_ts = 0;
  Timestamp arrive_ts = 0;
  std::vector<CellIndex> cells;

  bool operator==(const Trip&) const = default;
};

struct Stay {
  CellIndex cell = 0;
  Timestamp begin = 0;
  Timestamp end = 0;

  bool operator==(const Stay&) const = default;
};

struct GroundTruth {
  std::vector<Trip> trips;
  std::vector<std::vector<Stay>> stays;  // per agent, time ordered

  bool operator==(const GroundTruth&) const = default;
};

struct Simulation {
  EventLog log;
  GroundTruth truth;
};

// Trips run as constant-duration hops along the agent's routes. Records:
// communication events at Poisson times, LAU at every Location Area change,
// PAGE on a per-agent grid every paging interval. Communication is modeled
// as instantaneous, so the device is idle at every hop.
Simulation simulate_events(std::span<const Agent> agents, const CellMap& net, const ZoneMap& zones,
                           const SimConfig& config, std::uint64_t seed,
                           ExecPolicy policy = ExecPolicy::Parallel);

DemoTable demographics_of(std::span<const Agent> agents);

}  // namespace mobmine
