#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "mobmine/synthnet.hpp"
#include "support.hpp"

using namespace mobmine;
using mobmine::testing::line_network;

namespace {

NetworkConfig small_net(std::size_t cells = 64, std::size_t las = 6) {
  NetworkConfig c;
  c.n_cells = cells;
  c.n_las = las;
  return c;
}

Agent idle_agent(const CellMap& net, CellIndex cell) {
  Agent a;
  a.sub_id = subscriber_id(0);
  a.home_cell = a.work_cell = cell;
  a.demographics = {a.sub_id, {30, "F", "00000", net[cell].la}};
  return a;
}

SimConfig quiet(int days = 1) {
  SimConfig c;
  c.days = days;
  c.call_rate = 0.0;
  c.data_rate = 0.0;
  return c;
}

}  // namespace

TEST(Network, RejectsInvalidConfigs) {
  auto c = small_net();
  c.n_cells = 0;
  EXPECT_THROW(generate_network(c, 1), InvalidConfig);
  c = small_net();
  c.n_las = 0;
  EXPECT_THROW(generate_network(c, 1), InvalidConfig);
  c = small_net(4, 5);
  EXPECT_THROW(generate_network(c, 1), InvalidConfig);
  c = small_net();
  c.urban_fraction = 1.5;
  EXPECT_THROW(generate_network(c, 1), InvalidConfig);
  c = small_net();
  c.bbox.lat_min = c.bbox.lat_max + 1;
  EXPECT_THROW(generate_network(c, 1), InvalidConfig);
}

TEST(Network, RadiiFollowUrbanClass) {
  auto c = small_net();
  c.urban_fraction = 1.0;
  for (const CellSite& s : generate_network(c, 3).cells()) {
    EXPECT_GE(s.radius_m, kMinCellRadiusM);
    EXPECT_LE(s.radius_m, kMaxUrbanRadiusM);
  }
  c.urban_fraction = 0.0;
  for (const CellSite& s : generate_network(c, 3).cells()) {
    EXPECT_GT(s.radius_m, kMaxUrbanRadiusM);
    EXPECT_LE(s.radius_m, kMaxCellRadiusM);
  }
}

TEST(Network, SingleCell) {
  const CellMap net = generate_network(small_net(1, 1), 5);
  ASSERT_EQ(net.size(), 1u);
  EXPECT_EQ(net.edge_count(), 0u);
  EXPECT_EQ(net.location_areas().size(), 1u);
}

TEST(Network, Deterministic) {
  EXPECT_EQ(generate_network(small_net(), 11), generate_network(small_net(), 11));
  EXPECT_FALSE(generate_network(small_net(), 11) == generate_network(small_net(), 12));
}

TEST(Network, AdjacencySymmetricIrreflexive) {
  const CellMap net = generate_network(small_net(), 9);
  for (CellIndex i = 0; i < net.size(); ++i) {
    EXPECT_FALSE(net.adjacent(i, i));
    for (CellIndex j : net.neighbors(i)) EXPECT_TRUE(net.adjacent(j, i));
  }
}

TEST(Network, EveryLocationAreaNonEmpty) {
  const CellMap net = generate_network(small_net(100, 10), 4);
  ASSERT_EQ(net.location_areas().size(), 10u);
  std::vector<int> members(10, 0);
  for (CellIndex i = 0; i < net.size(); ++i) ++members[net.la_index(i)];
  for (int m : members) EXPECT_GT(m, 0);
}

TEST(Network, ShortestPathOnLine) {
  const CellMap net = line_network(6);
  EXPECT_EQ(net.shortest_path(0, 5), (std::vector<CellIndex>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(net.hop_distances(2), (std::vector<int>{2, 1, 0, 1, 2, 3}));
}

TEST(Population, ZeroAgents) {
  const CellMap net = generate_network(small_net(), 1);
  PopulationConfig pc;
  pc.n_agents = 0;
  EXPECT_TRUE(generate_population(pc, net, ZoneMap::from_location_areas(net), 1).agents.empty());
}

TEST(Population, SingleCellNetworkHasNoRoutes) {
  const CellMap net = generate_network(small_net(1, 1), 1);
  PopulationConfig pc;
  pc.n_agents = 20;
  const Population pop = generate_population(pc, net, ZoneMap::from_location_areas(net), 1);
  ASSERT_EQ(pop.agents.size(), 20u);
  EXPECT_EQ(pop.routes_omitted, 20u);
  for (const Agent& a : pop.agents) EXPECT_TRUE(a.daily_routes.empty());
}

TEST(Population, Deterministic) {
  const CellMap net = generate_network(small_net(), 1);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  PopulationConfig pc;
  pc.n_agents = 50;
  const auto a = generate_population(pc, net, zones, 8);
  const auto b = generate_population(pc, net, zones, 8);
  ASSERT_EQ(a.agents.size(), b.agents.size());
  for (std::size_t i = 0; i < a.agents.size(); ++i) {
    EXPECT_EQ(a.agents[i].home_cell, b.agents[i].home_cell);
    EXPECT_EQ(a.agents[i].work_cell, b.agents[i].work_cell);
    EXPECT_EQ(a.agents[i].demographics, b.agents[i].demographics);
  }
}

TEST(Population, RoutesChainAndRespectHopMinimum) {
  const CellMap net = generate_network(small_net(), 2);
  PopulationConfig pc;
  pc.n_agents = 100;
  const auto pop = generate_population(pc, net, ZoneMap::from_location_areas(net), 3);
  for (const Agent& a : pop.agents) {
    if (a.daily_routes.empty()) continue;
    EXPECT_EQ(a.daily_routes.front().cells.front(), a.home_cell);
    EXPECT_EQ(a.daily_routes.back().cells.back(), a.home_cell);
    for (std::size_t r = 0; r < a.daily_routes.size(); ++r) {
      const auto& cells = a.daily_routes[r].cells;
      EXPECT_GE(static_cast<int>(cells.size()) - 1, pc.min_trip_hops);
      for (std::size_t i = 1; i < cells.size(); ++i) EXPECT_TRUE(net.adjacent(cells[i - 1], cells[i]));
      if (r > 0) EXPECT_EQ(a.daily_routes[r - 1].cells.back(), cells.front());
    }
  }
}

TEST(Population, PartialZoneMapRejected) {
  const CellMap net = line_network(4);
  const ZoneMap partial = ZoneMap::from_assignment(net, {{"c00", "Z"}});
  PopulationConfig pc;
  pc.n_agents = 2;
  EXPECT_THROW(generate_population(pc, net, partial, 1), InvalidConfig);
}

TEST(Simulation, RejectsInvalidConfigs) {
  const CellMap net = line_network(3);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const std::vector<Agent> agents{idle_agent(net, 0)};
  auto bad = [&](auto mutate) {
    SimConfig c;
    mutate(c);
    EXPECT_THROW(simulate_events(agents, net, zones, c, 1), InvalidConfig);
  };
  bad([](SimConfig& c) { c.days = 0; });
  bad([](SimConfig& c) { c.paging_interval_s = 0; });
  bad([](SimConfig& c) { c.hop_s = 0; });
  bad([](SimConfig& c) { c.call_rate = -1; });
}

TEST(Simulation, IdleAgentPagesOncePerInterval) {
  const CellMap net = line_network(3);
  const std::vector<Agent> agents{idle_agent(net, 1)};
  const SimConfig cfg = quiet(2);
  const auto sim = simulate_events(agents, net, ZoneMap::from_location_areas(net), cfg, 4);
  ASSERT_EQ(sim.log.events.size(), 48u);
  for (std::size_t i = 0; i < sim.log.events.size(); ++i) {
    const Event& e = sim.log.events[i];
    EXPECT_EQ(e.kind, EventKind::Page);
    EXPECT_EQ(e.cell, 1u);
    if (i > 0) EXPECT_EQ(e.ts - sim.log.events[i - 1].ts, cfg.paging_interval_s);
  }
  EXPECT_TRUE(sim.truth.trips.empty());
}

TEST(Simulation, StationaryAgentNeverUpdatesLocationArea) {
  const CellMap net = line_network(3, 1);
  const std::vector<Agent> agents{idle_agent(net, 2)};
  SimConfig cfg;
  cfg.days = 3;
  const auto sim = simulate_events(agents, net, ZoneMap::from_location_areas(net), cfg, 4);
  for (const Event& e : sim.log.events) EXPECT_NE(e.kind, EventKind::Lau);
}

TEST(Simulation, TwoBoundaryCrossingsGiveTwoUpdates) {
  // LAs {c00..c02}, {c03..c05}, {c06..c08}: a c00 -> c07 trip crosses twice.
  const CellMap net = line_network(9, 3);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const Agent a = make_commuter(subscriber_id(0), net, zones, 0, 7, 8 * 3600.0, 17 * 3600.0, 0.0,
                                {40, "M", "00000", "LA00"});
  const std::vector<Agent> agents{a};
  const SimConfig cfg = quiet(1);
  const auto sim = simulate_events(agents, net, zones, cfg, 2);
  ASSERT_EQ(sim.truth.trips.size(), 2u);
  for (const Trip& trip : sim.truth.trips) {
    std::vector<Timestamp> lau;
    for (const Event& e : sim.log.events) {
      if (e.kind == EventKind::Lau && e.ts >= trip.depart_ts && e.ts <= trip.arrive_ts) lau.push_back(e.ts);
    }
    ASSERT_EQ(lau.size(), 2u);
    // Each update fires on entering the first cell of a new LA.
    for (Timestamp t : lau) {
      const auto i = static_cast<std::size_t>((t - trip.depart_ts) / cfg.hop_s);
      ASSERT_EQ((t - trip.depart_ts) % cfg.hop_s, 0);
      EXPECT_NE(net.la_index(trip.cells[i]), net.la_index(trip.cells[i - 1]));
    }
  }
}

TEST(Simulation, EventsSortedAndTripsTimed) {
  const CellMap net = generate_network(small_net(), 5);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  PopulationConfig pc;
  pc.n_agents = 40;
  const auto pop = generate_population(pc, net, zones, 5);
  SimConfig cfg;
  cfg.days = 2;
  const auto sim = simulate_events(pop.agents, net, zones, cfg, 5);
  auto sorted = sim.log.events;
  sort_events(sorted, sim.log.subs);
  EXPECT_EQ(sorted, sim.log.events);
  for (const Trip& t : sim.truth.trips) {
    EXPECT_EQ(t.arrive_ts - t.depart_ts, static_cast<Timestamp>(t.cells.size() - 1) * cfg.hop_s);
    EXPECT_GE(t.depart_ts, cfg.start_ts);
    EXPECT_LE(t.arrive_ts, cfg.end_ts());
  }
  for (const Event& e : sim.log.events) {
    EXPECT_GE(e.ts, cfg.start_ts);
    EXPECT_LT(e.ts, cfg.end_ts());
  }
}

TEST(Simulation, SerialMatchesParallelAndReproducible) {
  const CellMap net = generate_network(small_net(), 6);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  PopulationConfig pc;
  pc.n_agents = 60;
  const auto pop = generate_population(pc, net, zones, 6);
  SimConfig cfg;
  cfg.days = 2;
  const auto a = simulate_events(pop.agents, net, zones, cfg, 6, ExecPolicy::Serial);
  const auto b = simulate_events(pop.agents, net, zones, cfg, 6, ExecPolicy::Parallel);
  const auto c = simulate_events(pop.agents, net, zones, cfg, 6, ExecPolicy::Parallel);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.truth, b.truth);
  EXPECT_EQ(b.log, c.log);
}

TEST(Simulation, PagesDuringTripsLieOnRoute) {
  const CellMap net = line_network(9, 3);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const Agent a = make_commuter(subscriber_id(0), net, zones, 0, 8, 8 * 3600.0, 17 * 3600.0, 1800.0,
                                {40, "M", "00000", "LA00"});
  const std::vector<Agent> agents{a};
  SimConfig cfg;
  cfg.days = 3;
  const auto sim = simulate_events(agents, net, zones, cfg, 9);
  for (const Trip& trip : sim.truth.trips) {
    for (const Event& e : sim.log.events) {
      if (e.ts < trip.depart_ts || e.ts > trip.arrive_ts) continue;
      EXPECT_NE(std::find(trip.cells.begin(), trip.cells.end(), e.cell), trip.cells.end());
    }
  }
}
