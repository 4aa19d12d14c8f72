#include "mobmine/synthnet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace mobmine {

namespace {

constexpr double kMetersPerDegreeLat = 111320.0;

double meters_per_degree_lon(double lat) {
  return kMetersPerDegreeLat * std::cos(lat * std::numbers::pi / 180.0);
}

double round_to(double v, double quantum) { return std::round(v / quantum) * quantum; }

std::size_t digits_for(std::size_t n) {
  std::size_t d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

}  // namespace

CellMap generate_network(const NetworkConfig& config, std::uint64_t seed) {
  if (config.n_cells == 0) throw InvalidConfig("n_cells must be >= 1");
  if (config.n_las == 0) throw InvalidConfig("n_las must be >= 1");
  if (config.n_las > config.n_cells) throw InvalidConfig("n_las must not exceed n_cells");
  const BoundingBox& bb = config.bbox;
  if (!(bb.lat_min < bb.lat_max && bb.lon_min < bb.lon_max) || bb.lat_min < -90 ||
      bb.lat_max > 90 || bb.lon_min < -180 || bb.lon_max > 180) {
    throw InvalidConfig("malformed bounding box");
  }
  if (!(config.urban_fraction >= 0.0 && config.urban_fraction <= 1.0)) {
    throw InvalidConfig("urban_fraction must lie in [0, 1]");
  }

  Rng rng(derive_seed(seed, 0x6e6574));
  const std::size_t n = config.n_cells;
  const double mid_lat = 0.5 * (bb.lat_min + bb.lat_max);
  const double height_m = (bb.lat_max - bb.lat_min) * kMetersPerDegreeLat;
  const double width_m = (bb.lon_max - bb.lon_min) * meters_per_degree_lon(mid_lat);
  const double spacing = std::sqrt(width_m * height_m / static_cast<double>(n));

  const auto cols = static_cast<std::size_t>(
      std::max(1.0, std::ceil(std::sqrt(static_cast<double>(n) * width_m / height_m))));
  const std::size_t rows = (n + cols - 1) / cols;
  const double dx = width_m / static_cast<double>(cols);
  const double dy = height_m / static_cast<double>(rows);

  // Pick n of the rows*cols slots so a partial last row does not leave a gap.
  std::vector<std::size_t> slots(rows * cols);
  std::iota(slots.begin(), slots.end(), 0);
  for (std::size_t i = slots.size(); i > 1; --i) {
    std::swap(slots[i - 1], slots[uniform_index(rng, i)]);
  }
  slots.resize(n);
  std::sort(slots.begin(), slots.end());

  struct Placed {
    double x, y;  // meters from the south-west corner
  };
  std::vector<Placed> placed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double cx = (static_cast<double>(slots[i] % cols) + 0.5) * dx;
    const double cy = (static_cast<double>(slots[i] / cols) + 0.5) * dy;
    placed[i] = {std::clamp(cx + uniform(rng, -0.3, 0.3) * dx, 0.0, width_m),
                 std::clamp(cy + uniform(rng, -0.3, 0.3) * dy, 0.0, height_m)};
  }

  // Urban core = the cells closest to the center.
  std::vector<std::size_t> by_center(n);
  std::iota(by_center.begin(), by_center.end(), 0);
  auto center_dist = [&](std::size_t i) {
    return std::hypot(placed[i].x - width_m / 2, placed[i].y - height_m / 2);
  };
  std::stable_sort(by_center.begin(), by_center.end(),
                   [&](std::size_t a, std::size_t b) { return center_dist(a) < center_dist(b); });
  const auto n_urban =
      static_cast<std::size_t>(std::llround(config.urban_fraction * static_cast<double>(n)));
  std::vector<bool> urban(n, false);
  for (std::size_t i = 0; i < n_urban; ++i) urban[by_center[i]] = true;

  const std::size_t width = std::max<std::size_t>(4, digits_for(n));
  std::vector<CellSite> cells(n);
  for (std::size_t i = 0; i < n; ++i) {
    CellSite& c = cells[i];
    c.id = fmt::format("C{:0{}d}", i + 1, width);
    c.lat = round_to(bb.lat_min + placed[i].y / kMetersPerDegreeLat, 1e-6);
    c.lon = round_to(bb.lon_min + placed[i].x / meters_per_degree_lon(mid_lat), 1e-6);
    double r;
    if (urban[i]) {
      r = std::clamp(uniform(rng, 0.7, 1.0) * spacing, kMinCellRadiusM, kMaxUrbanRadiusM);
    } else {
      const double hi = std::clamp(1.5 * spacing, 1.5 * kMaxUrbanRadiusM, kMaxCellRadiusM);
      r = uniform(rng, kMaxUrbanRadiusM + 1.0, hi);
    }
    c.radius_m = std::clamp(round_to(r, 0.1), kMinCellRadiusM, kMaxCellRadiusM);
    if (!urban[i] && c.radius_m <= kMaxUrbanRadiusM) c.radius_m = kMaxUrbanRadiusM + 0.1;
  }

  // Farthest-point seeds, then nearest-seed assignment.
  std::vector<std::size_t> seeds{uniform_index(rng, n)};
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  auto dist = [&](std::size_t a, std::size_t b) {
    return std::hypot(placed[a].x - placed[b].x, placed[a].y - placed[b].y);
  };
  while (seeds.size() < config.n_las) {
    const std::size_t last = seeds.back();
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist(i, last));
      if (nearest[i] > far_d) {
        far_d = nearest[i];
        far = i;
      }
    }
    seeds.push_back(far);
  }
  std::vector<std::size_t> la_rank(seeds.size());
  {
    // Number LAs by seed position (south-west first) for readable ids.
    std::vector<std::size_t> order(seeds.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::pair(placed[seeds[a]].y, placed[seeds[a]].x) <
             std::pair(placed[seeds[b]].y, placed[seeds[b]].x);
    });
    for (std::size_t r = 0; r < order.size(); ++r) la_rank[order[r]] = r;
  }
  const std::size_t la_width = std::max<std::size_t>(2, digits_for(seeds.size()));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const double d = seeds[s] == i ? -1.0 : dist(i, seeds[s]);
      if (d < best_d) {
        best_d = d;
        best = s;
      }
    }
    cells[i].la = fmt::format("LA{:0{}d}", la_rank[best] + 1, la_width);
  }
  return CellMap(std::move(cells));
}

// ---------------------------------------------------------------------------

std::string subscriber_id(std::size_t agent_index) {
  return fmt::format("+4670{:07d}", agent_index + 1);
}

namespace {

std::string postcode_for(const CellMap& net, CellIndex cell) {
  return fmt::format("{:03d} {:02d}", 400 + net.la_index(cell), cell % 100);
}

DemoAttributes draw_demographics(Rng& rng, const DemoDistributions& d) {
  DemoAttributes a;
  std::vector<double> w;
  for (const AgeBin& b : d.age_bins) w.push_back(b.weight);
  const AgeBin& bin = d.age_bins[weighted_choice(rng, w)];
  a.age = bin.lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(bin.hi - bin.lo + 1)));
  w.clear();
  for (const auto& g : d.genders) w.push_back(g.second);
  a.gender = d.genders[weighted_choice(rng, w)].first;
  return a;
}

}  // namespace

Agent make_commuter(std::string sub_id, const CellMap& net, const ZoneMap& zones, CellIndex home,
                    CellIndex work, double morning_mean_s, double evening_mean_s,
                    double depart_sd_s, DemoAttributes demo) {
  Agent a;
  a.sub_id = std::move(sub_id);
  a.home_cell = home;
  a.work_cell = work;
  demo.postcode = postcode_for(net, home);
  demo.home_zone = zones.name(zones.zone_of(home));
  a.demographics = {a.sub_id, std::move(demo)};
  if (home == work) return a;
  auto out = net.shortest_path(home, work);
  if (out.empty()) return a;
  auto back = net.shortest_path(work, home);
  a.daily_routes.push_back({std::move(out), morning_mean_s, depart_sd_s});
  a.daily_routes.push_back({std::move(back), evening_mean_s, depart_sd_s});
  return a;
}

Population generate_population(const PopulationConfig& config, const CellMap& net,
                               const ZoneMap& zones, std::uint64_t seed) {
  if (config.demo.age_bins.empty() || config.demo.genders.empty()) {
    throw InvalidConfig("demographic distributions must be non-empty");
  }
  for (const AgeBin& b : config.demo.age_bins) {
    if (b.lo < 0 || b.hi > kMaxAge || b.lo > b.hi) throw InvalidConfig("malformed age bin");
  }
  Population pop;
  if (config.n_agents == 0) return pop;
  if (net.empty()) throw InvalidConfig("population needs a non-empty network");
  if (!zones.is_total()) throw InvalidConfig("zone map must cover every cell");

  Rng rng(derive_seed(seed, 0x706f70));
  const std::size_t n = net.size();

  // Home weights favor urban cells.
  std::vector<double> home_w(n);
  for (std::size_t i = 0; i < n; ++i) {
    home_w[i] = net[static_cast<CellIndex>(i)].radius_m <= kMaxUrbanRadiusM
                    ? config.urban_home_weight
                    : 1.0;
  }
  std::vector<CellIndex> hubs;
  {
    std::vector<double> w = home_w;
    const std::size_t n_hubs = std::min(config.n_work_hubs, n);
    while (hubs.size() < n_hubs) {
      const auto h = static_cast<CellIndex>(weighted_choice(rng, w));
      hubs.push_back(h);
      w[h] = 0.0;
    }
  }
  std::vector<double> hub_w(hubs.size());
  for (std::size_t i = 0; i < hubs.size(); ++i) hub_w[i] = 1.0 / static_cast<double>(i + 1);

  std::vector<std::vector<int>> dist_cache(n);
  auto hops = [&](CellIndex a, CellIndex b) {
    if (dist_cache[a].empty()) dist_cache[a] = net.hop_distances(a);
    return dist_cache[a][b];
  };
  auto far_enough = [&](CellIndex a, CellIndex b) {
    const int h = hops(a, b);
    return h >= config.min_trip_hops && h > 0;
  };

  std::set<std::pair<std::uint32_t, std::uint32_t>> used_pairs;
  constexpr int kMaxDraws = 200;

  for (std::size_t i = 0; i < config.n_agents; ++i) {
    DemoAttributes demo = draw_demographics(rng, config.demo);
    CellIndex home = 0;
    CellIndex work = 0;
    bool found = false;
    for (int attempt = 0; attempt < kMaxDraws && !found; ++attempt) {
      home = static_cast<CellIndex>(weighted_choice(rng, home_w));
      if (!hubs.empty() && uniform01(rng) < config.hub_share) {
        work = hubs[weighted_choice(rng, hub_w)];
      } else {
        work = static_cast<CellIndex>(weighted_choice(rng, home_w));
      }
      if (!far_enough(home, work)) continue;
      if (config.unique_home_work) {
        const auto key = std::pair(zones.zone_of(home), zones.zone_of(work));
        if (used_pairs.contains(key)) continue;
        used_pairs.insert(key);
      }
      found = true;
    }
    if (!found && config.unique_home_work && n > 1) {
      throw InvalidConfig("cannot draw unique home/work pairs for this population size");
    }

    const std::string sub = subscriber_id(i);
    if (!found) {
      // Single-cell or disconnected network: the agent never moves.
      ++pop.routes_omitted;
      Agent a;
      a.sub_id = sub;
      a.home_cell = home;
      a.work_cell = home;
      demo.postcode = postcode_for(net, home);
      demo.home_zone = zones.name(zones.zone_of(home));
      a.demographics = {sub, demo};
      pop.agents.push_back(std::move(a));
      continue;
    }

    Agent a = make_commuter(sub, net, zones, home, work, config.morning_mean_s,
                            config.evening_mean_s, config.depart_sd_s, demo);
    if (uniform01(rng) < config.errand_prob) {
      // Evening stop: work -> errand -> home.
      for (int attempt = 0; attempt < kMaxDraws; ++attempt) {
        const auto shop = static_cast<CellIndex>(weighted_choice(rng, home_w));
        if (!far_enough(work, shop) || !far_enough(shop, home)) continue;
        a.daily_routes.pop_back();
        a.daily_routes.push_back(
            {net.shortest_path(work, shop), config.evening_mean_s, config.depart_sd_s});
        a.daily_routes.push_back(
            {net.shortest_path(shop, home), config.errand_return_mean_s, config.depart_sd_s / 1.5});
        break;
      }
    }
    pop.agents.push_back(std::move(a));
  }
  return pop;
}

DemoTable demographics_of(std::span<const Agent> agents) {
  std::vector<DemoRecord> rows;
  rows.reserve(agents.size());
  for (const Agent& a : agents) rows.push_back(a.demographics);
  return DemoTable(std::move(rows));
}

// ---------------------------------------------------------------------------

namespace {

struct Segment {
  Timestamp begin;
  Timestamp end;
  CellIndex cell;    // stay cell, or unused for trips
  int trip = -1;     // index into the agent's trips
};

struct AgentTimeline {
  std::vector<Segment> segments;  // contiguous, covering [start, end)
  std::vector<Trip> trips;
  std::vector<Stay> stays;
};

AgentTimeline schedule(const Agent& agent, const ZoneMap& zones, const SimConfig& cfg, Rng& rng) {
  AgentTimeline tl;
  const Timestamp end = cfg.end_ts();
  const Timestamp min_stay = cfg.min_stay();
  CellIndex cur_cell = agent.home_cell;
  Timestamp cur_t = cfg.start_ts;
  bool stopped = false;
  for (int d = 0; d < cfg.days && !stopped; ++d) {
    const Timestamp day0 = cfg.start_ts + d * kSecondsPerDay;
    for (const RouteSpec& route : agent.daily_routes) {
      const double offset = route.depart_mean_s + route.depart_sd_s * standard_normal(rng);
      Timestamp depart = day0 + static_cast<Timestamp>(std::llround(offset));
      depart = std::max(depart, cur_t + min_stay);
      const Timestamp arrive =
          depart + static_cast<Timestamp>(route.cells.size() - 1) * cfg.hop_s;
      if (arrive + min_stay > end) {
        stopped = true;
        break;
      }
      tl.stays.push_back({cur_cell, cur_t, depart});
      tl.segments.push_back({cur_t, depart, cur_cell});
      Trip trip;
      trip.sub = agent.sub_id;
      trip.origin_zone = zones.name(zones.zone_of(route.cells.front()));
      trip.dest_zone = zones.name(zones.zone_of(route.cells.back()));
      trip.depart_ts = depart;
      trip.arrive_ts = arrive;
      trip.cells = route.cells;
      tl.segments.push_back({depart, arrive, 0, static_cast<int>(tl.trips.size())});
      tl.trips.push_back(std::move(trip));
      cur_cell = route.cells.back();
      cur_t = arrive;
    }
  }
  tl.stays.push_back({cur_cell, cur_t, end});
  tl.segments.push_back({cur_t, end, cur_cell});
  return tl;
}

CellIndex true_cell_at(const AgentTimeline& tl, Timestamp t, Timestamp hop_s) {
  auto it = std::upper_bound(tl.segments.begin(), tl.segments.end(), t,
                             [](Timestamp v, const Segment& s) { return v < s.begin; });
  const Segment& seg = *std::prev(it);
  if (seg.trip < 0) return seg.cell;
  const Trip& trip = tl.trips[static_cast<std::size_t>(seg.trip)];
  const auto hop = static_cast<std::size_t>((t - trip.depart_ts) / hop_s);
  return trip.cells[std::min(hop, trip.cells.size() - 1)];
}

struct AgentOutput {
  std::vector<Event> events;
  AgentTimeline timeline;
};

constexpr std::array<double, 5> kVoiceSmsWeights = {0.30, 0.30, 0.05, 0.20, 0.15};
constexpr std::array<EventKind, 5> kVoiceSmsKinds = {EventKind::CallIn, EventKind::CallOut,
                                                     EventKind::CallRej, EventKind::SmsIn,
                                                     EventKind::SmsOut};

AgentOutput simulate_agent(const Agent& agent, SubIndex sub, const CellMap& net,
                           const ZoneMap& zones, const SimConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, sub));
  AgentOutput out;
  out.timeline = schedule(agent, zones, cfg, rng);
  const AgentTimeline& tl = out.timeline;
  const Timestamp start = cfg.start_ts;
  const Timestamp end = cfg.end_ts();

  auto observed_cell = [&](CellIndex truth) {
    if (cfg.position_noise_m <= 0.0) return truth;
    const CellSite& c = net[truth];
    const double north = cfg.position_noise_m * standard_normal(rng);
    const double east = cfg.position_noise_m * standard_normal(rng);
    return net.nearest_cell(c.lat + north / kMetersPerDegreeLat,
                            c.lon + east / meters_per_degree_lon(c.lat));
  };

  // Paging grid.
  const Timestamp phase =
      static_cast<Timestamp>(uniform_index(rng, static_cast<std::uint64_t>(cfg.paging_interval_s)));
  for (Timestamp t = start + phase; t < end; t += cfg.paging_interval_s) {
    out.events.push_back({t, sub, EventKind::Page, observed_cell(true_cell_at(tl, t, cfg.hop_s))});
  }

  // Communication at Poisson times.
  const double rate = (cfg.call_rate + cfg.data_rate) / static_cast<double>(kSecondsPerHour);
  if (rate > 0.0) {
    const double p_data = cfg.data_rate / (cfg.call_rate + cfg.data_rate);
    double t = static_cast<double>(start) + exponential(rng, rate);
    while (t < static_cast<double>(end)) {
      const auto ts = static_cast<Timestamp>(std::floor(t));
      EventKind kind = EventKind::Data;
      if (uniform01(rng) >= p_data) kind = kVoiceSmsKinds[weighted_choice(rng, kVoiceSmsWeights)];
      out.events.push_back({ts, sub, kind, observed_cell(true_cell_at(tl, ts, cfg.hop_s))});
      t += exponential(rng, rate);
    }
  }

  // Location Area updates at every LA change along a trip.
  for (const Trip& trip : tl.trips) {
    for (std::size_t i = 1; i < trip.cells.size(); ++i) {
      if (net.la_index(trip.cells[i]) != net.la_index(trip.cells[i - 1])) {
        out.events.push_back({trip.depart_ts + static_cast<Timestamp>(i) * cfg.hop_s, sub,
                              EventKind::Lau, trip.cells[i]});
      }
    }
  }
  return out;
}

}  // namespace

Simulation simulate_events(std::span<const Agent> agents, const CellMap& net, const ZoneMap& zones,
                           const SimConfig& config, std::uint64_t seed, ExecPolicy policy) {
  if (config.days < 1) throw InvalidConfig("days must be >= 1");
  if (config.paging_interval_s <= 0) throw InvalidConfig("paging_interval_s must be > 0");
  if (config.hop_s <= 0) throw InvalidConfig("hop_s must be > 0");
  if (config.call_rate < 0.0 || config.data_rate < 0.0) {
    throw InvalidConfig("event rates must be non-negative");
  }
  if (config.min_stay() < 0) throw InvalidConfig("min_stay_s must be non-negative");
  if (!zones.is_total()) throw InvalidConfig("zone map must cover every cell");

  const auto n = static_cast<std::int64_t>(agents.size());
  std::vector<AgentOutput> outputs(agents.size());
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < n; ++i) {
      outputs[static_cast<std::size_t>(i)] = simulate_agent(
          agents[static_cast<std::size_t>(i)], static_cast<SubIndex>(i), net, zones, config, seed);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      outputs[static_cast<std::size_t>(i)] = simulate_agent(
          agents[static_cast<std::size_t>(i)], static_cast<SubIndex>(i), net, zones, config, seed);
    }
  }

  Simulation sim;
  sim.log.subs.reserve(agents.size());
  for (const Agent& a : agents) sim.log.subs.push_back(a.sub_id);
  std::size_t total = 0;
  for (const auto& o : outputs) total += o.events.size();
  sim.log.events.reserve(total);
  for (auto& o : outputs) {
    sim.log.events.insert(sim.log.events.end(), o.events.begin(), o.events.end());
    for (Trip& t : o.timeline.trips) sim.truth.trips.push_back(std::move(t));
    sim.truth.stays.push_back(std::move(o.timeline.stays));
  }
  sort_events(sim.log.events, sim.log.subs);
  return sim;
}

}  // namespace mobmine
