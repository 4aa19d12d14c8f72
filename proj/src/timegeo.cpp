#include "mobmine/timegeo.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

#include "mobmine/formats.hpp"

namespace mobmine {

std::string station_label(std::uint32_t id) { return fmt::format("s{:07d}", id); }
std::string path_label(std::uint32_t id) { return fmt::format("p{:07d}", id); }

std::vector<RoutePoint> route_points(const SpaceTimePath& path) {
  std::vector<RoutePoint> pts;
  pts.reserve(path.hops.size() + 2);
  auto push = [&](CellIndex c, Timestamp ts) {
    if (pts.empty() || pts.back().cell != c) pts.push_back({c, ts});
  };
  push(path.origin_cell, path.depart_ts);
  for (const Hop& h : path.hops) push(h.cell, h.first_ts);
  push(path.dest_cell, path.arrive_ts);
  return pts;
}

std::vector<CellIndex> route_cells(const SpaceTimePath& path) {
  std::vector<CellIndex> out;
  for (const RoutePoint& p : route_points(path)) out.push_back(p.cell);
  return out;
}

namespace {

bool joins_clique(const CellMap& cells, const std::vector<CellIndex>& clique, CellIndex c) {
  for (CellIndex s : clique) {
    if (s != c && !cells.adjacent(s, c)) return false;
  }
  return true;
}

std::vector<Station> stations_of(const AnnotatedStream& stream, std::span<const std::uint32_t> idx,
                                 SubIndex pseud, const CellMap& cells, Timestamp dwell_min) {
  std::vector<Station> out;
  const std::size_t n = idx.size();
  if (n < 2) return out;
  std::size_t i = 0;
  std::vector<CellIndex> clique;
  while (i < n) {
    clique.assign(1, stream.events[idx[i]].cell);
    std::size_t j = i;
    while (j + 1 < n) {
      const CellIndex c = stream.events[idx[j + 1]].cell;
      if (std::find(clique.begin(), clique.end(), c) == clique.end()) {
        if (!joins_clique(cells, clique, c)) break;
        clique.push_back(c);
      }
      ++j;
    }
    const Timestamp enter = stream.events[idx[i]].ts;
    const Timestamp exit = stream.events[idx[j]].ts;
    if (j > i && exit - enter >= dwell_min) {
      Station s;
      s.pseud = pseud;
      s.cells = clique;
      std::sort(s.cells.begin(), s.cells.end());
      s.enter_ts = enter;
      s.exit_ts = exit;
      s.first_event = static_cast<std::uint32_t>(i);
      s.last_event = static_cast<std::uint32_t>(j);
      std::vector<std::size_t> counts(s.cells.size(), 0);
      for (std::size_t k = i; k <= j; ++k) {
        const CellIndex c = stream.events[idx[k]].cell;
        ++counts[static_cast<std::size_t>(
            std::lower_bound(s.cells.begin(), s.cells.end(), c) - s.cells.begin())];
      }
      const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
      s.modal_cell = s.cells[static_cast<std::size_t>(best)];
      out.push_back(std::move(s));
      i = j + 1;
    } else {
      ++i;
    }
  }
  return out;
}

}  // namespace

std::vector<Station> detect_stations(const AnnotatedStream& stream, const CellMap& cells,
                                     const StationConfig& config, ExecPolicy policy) {
  const auto by_pseud = events_by_pseudonym(stream);
  const auto n = static_cast<std::int64_t>(by_pseud.size());
  std::vector<std::vector<Station>> per(by_pseud.size());
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(dynamic, 32)
    for (std::int64_t p = 0; p < n; ++p) {
      const auto u = static_cast<std::size_t>(p);
      per[u] = stations_of(stream, by_pseud[u], static_cast<SubIndex>(p), cells, config.dwell_min_s);
    }
  } else {
    for (std::int64_t p = 0; p < n; ++p) {
      const auto u = static_cast<std::size_t>(p);
      per[u] = stations_of(stream, by_pseud[u], static_cast<SubIndex>(p), cells, config.dwell_min_s);
    }
  }
  std::vector<Station> out;
  for (auto& v : per) {
    for (Station& s : v) {
      s.id = static_cast<std::uint32_t>(out.size() + 1);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<SpaceTimePath> extract_paths(const AnnotatedStream& stream,
                                         std::span<const Station> stations, PathReport* report) {
  const auto by_pseud = events_by_pseudonym(stream);
  std::vector<std::vector<const Station*>> per(by_pseud.size());
  for (const Station& s : stations) per[s.pseud].push_back(&s);

  std::vector<SpaceTimePath> paths;
  std::size_t without = 0;
  for (std::size_t p = 0; p < per.size(); ++p) {
    auto& ss = per[p];
    if (ss.size() < 2) {
      if (!by_pseud[p].empty()) ++without;
      continue;
    }
    std::sort(ss.begin(), ss.end(),
              [](const Station* a, const Station* b) { return a->first_event < b->first_event; });
    for (std::size_t k = 0; k + 1 < ss.size(); ++k) {
      const Station& a = *ss[k];
      const Station& b = *ss[k + 1];
      SpaceTimePath path;
      path.id = static_cast<std::uint32_t>(paths.size() + 1);
      path.pseud = static_cast<SubIndex>(p);
      path.origin = a.id;
      path.dest = b.id;
      path.origin_cell = a.modal_cell;
      path.dest_cell = b.modal_cell;
      path.depart_ts = a.exit_ts;
      path.arrive_ts = b.enter_ts;
      for (std::uint32_t e = a.last_event + 1; e < b.first_event; ++e) {
        const Event& ev = stream.events[by_pseud[p][e]];
        if (!path.hops.empty() && path.hops.back().cell == ev.cell) {
          path.hops.back().last_ts = ev.ts;
        } else {
          path.hops.push_back({ev.cell, ev.ts, ev.ts});
        }
      }
      paths.push_back(std::move(path));
    }
  }
  if (report != nullptr) report->pseudonyms_without_paths = without;
  return paths;
}

// ---------------------------------------------------------------------------

std::vector<Bundle> bundle_paths(std::span<const SpaceTimePath> paths, const BundleConfig& config) {
  if (config.min_members < 2) throw InvalidConfig("min_members must be >= 2");
  if (config.time_quantum_s <= 0) throw InvalidConfig("time_quantum_s must be > 0");

  struct Visit {
    std::uint32_t path;
    Timestamp first;
    Timestamp last;
  };
  // (cell, slot) -> visits.
  std::map<std::pair<CellIndex, Timestamp>, std::vector<Visit>> slots;
  for (const SpaceTimePath& p : paths) {
    for (const Hop& h : p.hops) {
      const Timestamp s0 = floor_to(h.first_ts, config.time_quantum_s);
      const Timestamp s1 = floor_to(h.last_ts, config.time_quantum_s);
      for (Timestamp s = s0; s <= s1; s += config.time_quantum_s) {
        auto& v = slots[{h.cell, s}];
        if (v.empty() || v.back().path != p.id) {
          v.push_back({p.id, h.first_ts, h.last_ts});
        } else {
          v.back().last = std::max(v.back().last, h.last_ts);
        }
      }
    }
  }

  struct Group {
    std::vector<std::pair<Timestamp, CellIndex>> cells;  // (first time seen, cell)
    Timestamp start = std::numeric_limits<Timestamp>::max();
    Timestamp end = std::numeric_limits<Timestamp>::min();
  };
  std::map<std::vector<std::uint32_t>, Group> groups;
  for (auto& [key, visits] : slots) {
    std::vector<std::uint32_t> members;
    for (const Visit& v : visits) members.push_back(v.path);
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    if (members.size() < config.min_members) continue;
    Group& g = groups[members];
    Timestamp first = std::numeric_limits<Timestamp>::max();
    for (const Visit& v : visits) {
      first = std::min(first, v.first);
      g.start = std::min(g.start, v.first);
      g.end = std::max(g.end, v.last);
    }
    g.cells.emplace_back(first, key.first);
  }

  std::vector<Bundle> out;
  for (auto& [members, g] : groups) {
    std::sort(g.cells.begin(), g.cells.end());
    Bundle b;
    b.id = static_cast<std::uint32_t>(out.size() + 1);
    b.members = members;
    for (const auto& [_, c] : g.cells) {
      if (b.shared_cells.empty() || b.shared_cells.back() != c) b.shared_cells.push_back(c);
    }
    b.window_start = g.start;
    b.window_end = g.end;
    out.push_back(std::move(b));
  }
  return out;
}

namespace {

double edge_gap_m(const CellSite& a, const CellSite& b) {
  return std::max(0.0, distance_m(a.lat, a.lon, b.lat, b.lon) - a.radius_m - b.radius_m);
}

}  // namespace

std::vector<CellIndex> prism_cells(const CellMap& cells, CellIndex origin, Timestamp t0,
                                   CellIndex dest, Timestamp t1, double max_speed_mps) {
  std::vector<CellIndex> out;
  if (t1 < t0) return out;
  const double budget = max_speed_mps * static_cast<double>(t1 - t0);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto c = static_cast<CellIndex>(i);
    if (edge_gap_m(cells[origin], cells[c]) + edge_gap_m(cells[c], cells[dest]) <= budget) {
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::size_t> flag_unreachable_hops(const SpaceTimePath& path, const CellMap& cells,
                                               double max_speed_mps) {
  std::vector<std::size_t> out;
  const auto pts = route_points(path);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double dt = static_cast<double>(std::max<Timestamp>(0, pts[i].ts - pts[i - 1].ts));
    if (edge_gap_m(cells[pts[i - 1].cell], cells[pts[i].cell]) > max_speed_mps * dt) {
      out.push_back(i);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void write_stations_jsonl(const std::filesystem::path& path, const TimeGeography& tg,
                          const CellMap& cells) {
  std::string out;
  for (const Station& s : tg.stations) {
    nlohmann::ordered_json j;
    j["station_id"] = station_label(s.id);
    j["pseud"] = tg.pseudonyms[s.pseud];
    auto& arr = j["cells"] = nlohmann::ordered_json::array();
    for (CellIndex c : s.cells) arr.push_back(cells.id(c));
    j["enter_ts"] = s.enter_ts;
    j["exit_ts"] = s.exit_ts;
    j["modal_cell"] = cells.id(s.modal_cell);
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

void write_paths_jsonl(const std::filesystem::path& path, const TimeGeography& tg,
                       const CellMap& cells) {
  std::string out;
  for (const SpaceTimePath& p : tg.paths) {
    nlohmann::ordered_json j;
    j["path_id"] = path_label(p.id);
    j["pseud"] = tg.pseudonyms[p.pseud];
    auto& hops = j["hops"] = nlohmann::ordered_json::array();
    for (const Hop& h : p.hops) hops.push_back({cells.id(h.cell), h.first_ts, h.last_ts});
    j["origin"] = station_label(p.origin);
    j["dest"] = station_label(p.dest);
    j["duration_s"] = p.duration_s();
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

void write_bundles_jsonl(const std::filesystem::path& path, std::span<const Bundle> bundles,
                         const CellMap& cells) {
  std::string out;
  for (const Bundle& b : bundles) {
    nlohmann::ordered_json j;
    j["bundle_id"] = b.id;
    auto& mem = j["members"] = nlohmann::ordered_json::array();
    for (std::uint32_t p : b.members) mem.push_back(path_label(p));
    auto& sc = j["shared_cells"] = nlohmann::ordered_json::array();
    for (CellIndex c : b.shared_cells) sc.push_back(cells.id(c));
    j["time_window"] = {b.window_start, b.window_end};
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

namespace {

std::uint32_t parse_label(const std::string& label, char prefix) {
  if (label.size() < 2 || label[0] != prefix) throw Error("malformed id " + label);
  return static_cast<std::uint32_t>(std::stoul(label.substr(1)));
}

CellIndex cell_or_throw(const CellMap& cells, const std::string& id) {
  auto c = cells.find(id);
  if (!c) throw ReferentialError("unknown cell", {id});
  return *c;
}

template <typename F>
void for_each_json_line(const std::filesystem::path& path, F&& f) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string(), lineno, e.what());
    }
  }
}

}  // namespace

TimeGeography read_time_geography(const std::filesystem::path& dir, const CellMap& cells) {
  TimeGeography tg;
  std::vector<nlohmann::json> station_rows;
  std::vector<nlohmann::json> path_rows;
  for_each_json_line(dir / "stations.jsonl", [&](nlohmann::json j) { station_rows.push_back(std::move(j)); });
  for_each_json_line(dir / "paths.jsonl", [&](nlohmann::json j) { path_rows.push_back(std::move(j)); });

  for (const auto& j : station_rows) tg.pseudonyms.push_back(j.at("pseud").get<std::string>());
  for (const auto& j : path_rows) tg.pseudonyms.push_back(j.at("pseud").get<std::string>());
  std::sort(tg.pseudonyms.begin(), tg.pseudonyms.end());
  tg.pseudonyms.erase(std::unique(tg.pseudonyms.begin(), tg.pseudonyms.end()), tg.pseudonyms.end());
  auto pseud_index = [&](const std::string& p) {
    return static_cast<SubIndex>(std::lower_bound(tg.pseudonyms.begin(), tg.pseudonyms.end(), p) -
                                 tg.pseudonyms.begin());
  };

  std::unordered_map<std::uint32_t, std::size_t> station_pos;
  for (const auto& j : station_rows) {
    Station s;
    s.id = parse_label(j.at("station_id").get<std::string>(), 's');
    s.pseud = pseud_index(j.at("pseud").get<std::string>());
    for (const auto& c : j.at("cells")) s.cells.push_back(cell_or_throw(cells, c.get<std::string>()));
    s.enter_ts = j.at("enter_ts").get<Timestamp>();
    s.exit_ts = j.at("exit_ts").get<Timestamp>();
    s.modal_cell = cell_or_throw(cells, j.at("modal_cell").get<std::string>());
    station_pos[s.id] = tg.stations.size();
    tg.stations.push_back(std::move(s));
  }
  for (const auto& j : path_rows) {
    SpaceTimePath p;
    p.id = parse_label(j.at("path_id").get<std::string>(), 'p');
    p.pseud = pseud_index(j.at("pseud").get<std::string>());
    for (const auto& h : j.at("hops")) {
      p.hops.push_back({cell_or_throw(cells, h.at(0).get<std::string>()), h.at(1).get<Timestamp>(),
                        h.at(2).get<Timestamp>()});
    }
    p.origin = parse_label(j.at("origin").get<std::string>(), 's');
    p.dest = parse_label(j.at("dest").get<std::string>(), 's');
    auto o = station_pos.find(p.origin);
    auto d = station_pos.find(p.dest);
    if (o == station_pos.end() || d == station_pos.end()) {
      throw ReferentialError("path references unknown station", {path_label(p.id)});
    }
    const Station& so = tg.stations[o->second];
    const Station& sd = tg.stations[d->second];
    p.origin_cell = so.modal_cell;
    p.dest_cell = sd.modal_cell;
    p.depart_ts = so.exit_ts;
    p.arrive_ts = sd.enter_ts;
    tg.paths.push_back(std::move(p));
  }
  return tg;
}

}  // namespace mobmine
