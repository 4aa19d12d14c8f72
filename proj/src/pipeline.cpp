#include "mobmine/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <functional>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "mobmine/formats.hpp"
#include "mobmine/odmatrix.hpp"

namespace mobmine {

std::string_view to_string(StageOrder o) {
  return o == StageOrder::ClusterFirst ? "cluster-first" : "anonymize-first";
}

std::optional<StageOrder> parse_stage_order(std::string_view s) {
  if (s == "cluster-first") return StageOrder::ClusterFirst;
  if (s == "anonymize-first") return StageOrder::AnonymizeFirst;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Config text

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, std::string_view)> set;
};

template <typename T>
T parse_number(std::string_view v, std::string_view key) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw InvalidConfig(fmt::format("invalid value '{}' for {}", v, key));
  }
  return out;
}

bool parse_bool(std::string_view v, std::string_view key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw InvalidConfig(fmt::format("invalid value '{}' for {} (true|false)", v, key));
}

// Member-pointer helpers keep the table below one line per key.
template <typename T>
Field num(std::string section, std::string key, std::function<T&(PipelineConfig&)> ref) {
  return {section, key,
          [ref](const PipelineConfig& c) { return fmt::format("{}", ref(const_cast<PipelineConfig&>(c))); },
          [ref, key](PipelineConfig& c, std::string_view v) { ref(c) = parse_number<T>(v, key); }};
}

Field flag(std::string section, std::string key, std::function<bool&(PipelineConfig&)> ref) {
  return {section, key,
          [ref](const PipelineConfig& c) { return ref(const_cast<PipelineConfig&>(c)) ? "true" : "false"; },
          [ref, key](PipelineConfig& c, std::string_view v) { ref(c) = parse_bool(v, key); }};
}

const std::vector<Field>& fields() {
  using C = PipelineConfig;
  static const std::vector<Field> table = {
      num<std::uint64_t>("global", "seed", [](C& c) -> auto& { return c.seed; }),
      num<int>("global", "threads", [](C& c) -> auto& { return c.threads; }),
      {"global", "order", [](const C& c) { return std::string(to_string(c.order)); },
       [](C& c, std::string_view v) {
         auto o = parse_stage_order(v);
         if (!o) throw InvalidConfig(fmt::format("invalid order '{}'", v));
         c.order = *o;
       }},

      num<std::size_t>("network", "cells", [](C& c) -> auto& { return c.network.n_cells; }),
      num<std::size_t>("network", "las", [](C& c) -> auto& { return c.network.n_las; }),
      num<double>("network", "urban_fraction", [](C& c) -> auto& { return c.network.urban_fraction; }),
      num<double>("network", "lat_min", [](C& c) -> auto& { return c.network.bbox.lat_min; }),
      num<double>("network", "lat_max", [](C& c) -> auto& { return c.network.bbox.lat_max; }),
      num<double>("network", "lon_min", [](C& c) -> auto& { return c.network.bbox.lon_min; }),
      num<double>("network", "lon_max", [](C& c) -> auto& { return c.network.bbox.lon_max; }),
      {"network", "zone_mode", [](const C& c) { return std::string(c.zone_mode == ZoneMode::Cell ? "cell" : "la"); },
       [](C& c, std::string_view v) {
         if (v == "la") c.zone_mode = ZoneMode::LocationArea;
         else if (v == "cell") c.zone_mode = ZoneMode::Cell;
         else throw InvalidConfig(fmt::format("invalid zone_mode '{}' (la|cell)", v));
       }},
      {"network", "zones_file", [](const C& c) { return c.zones_file; },
       [](C& c, std::string_view v) { c.zones_file = std::string(v); }},

      num<std::size_t>("population", "agents", [](C& c) -> auto& { return c.population.n_agents; }),
      num<std::size_t>("population", "work_hubs", [](C& c) -> auto& { return c.population.n_work_hubs; }),
      num<double>("population", "hub_share", [](C& c) -> auto& { return c.population.hub_share; }),
      num<double>("population", "urban_home_weight", [](C& c) -> auto& { return c.population.urban_home_weight; }),
      num<double>("population", "errand_prob", [](C& c) -> auto& { return c.population.errand_prob; }),
      num<int>("population", "min_trip_hops", [](C& c) -> auto& { return c.population.min_trip_hops; }),
      flag("population", "unique_home_work", [](C& c) -> auto& { return c.population.unique_home_work; }),
      num<double>("population", "morning_mean_s", [](C& c) -> auto& { return c.population.morning_mean_s; }),
      num<double>("population", "evening_mean_s", [](C& c) -> auto& { return c.population.evening_mean_s; }),
      num<double>("population", "errand_return_mean_s",
                  [](C& c) -> auto& { return c.population.errand_return_mean_s; }),
      num<double>("population", "depart_sd_s", [](C& c) -> auto& { return c.population.depart_sd_s; }),

      num<int>("simulation", "days", [](C& c) -> auto& { return c.sim.days; }),
      num<Timestamp>("simulation", "start_ts", [](C& c) -> auto& { return c.sim.start_ts; }),
      num<Timestamp>("simulation", "paging_interval_s", [](C& c) -> auto& { return c.sim.paging_interval_s; }),
      num<double>("simulation", "call_rate", [](C& c) -> auto& { return c.sim.call_rate; }),
      num<double>("simulation", "data_rate", [](C& c) -> auto& { return c.sim.data_rate; }),
      num<Timestamp>("simulation", "hop_s", [](C& c) -> auto& { return c.sim.hop_s; }),
      num<double>("simulation", "position_noise_m", [](C& c) -> auto& { return c.sim.position_noise_m; }),
      {"simulation", "min_stay_s",
       [](const C& c) { return c.sim.min_stay_s ? fmt::format("{}", *c.sim.min_stay_s) : std::string("default"); },
       [](C& c, std::string_view v) {
         if (v == "default") c.sim.min_stay_s.reset();
         else c.sim.min_stay_s = parse_number<Timestamp>(v, "min_stay_s");
       }},

      num<Timestamp>("timegeo", "dwell_min_s", [](C& c) -> auto& { return c.stations.dwell_min_s; }),
      num<std::size_t>("timegeo", "bundle_min_members", [](C& c) -> auto& { return c.bundles.min_members; }),
      num<Timestamp>("timegeo", "bundle_quantum_s", [](C& c) -> auto& { return c.bundles.time_quantum_s; }),

      num<std::size_t>("mine", "ngram_len", [](C& c) -> auto& { return c.mine.sketch.ngram_len; }),
      num<std::size_t>("mine", "m", [](C& c) -> auto& { return c.mine.sketch.m; }),
      num<std::size_t>("mine", "bands", [](C& c) -> auto& { return c.mine.sketch.bands; }),
      num<std::size_t>("mine", "rows", [](C& c) -> auto& { return c.mine.sketch.rows; }),
      num<std::uint64_t>("mine", "sketch_seed", [](C& c) -> auto& { return c.mine.sketch.seed; }),
      num<double>("mine", "threshold", [](C& c) -> auto& { return c.mine.graph.threshold; }),
      num<double>("mine", "epsilon", [](C& c) -> auto& { return c.mine.louvain.epsilon; }),

      num<std::size_t>("anonymize", "k", [](C& c) -> auto& { return c.kanon.k; }),
      num<std::size_t>("anonymize", "L", [](C& c) -> auto& { return c.kanon.L; }),
      {"anonymize", "bucketing", [](const C& c) { return std::string(to_string(c.kanon.bucketing)); },
       [](C& c, std::string_view v) {
         auto b = parse_bucketing(v);
         if (!b) throw InvalidConfig(fmt::format("invalid bucketing '{}'", v));
         c.kanon.bucketing = *b;
       }},
      {"anonymize", "rotate_period_s",
       [](const C& c) { return c.rotate_period_s ? fmt::format("{}", *c.rotate_period_s) : std::string("none"); },
       [](C& c, std::string_view v) {
         if (v == "none") c.rotate_period_s.reset();
         else c.rotate_period_s = parse_number<Timestamp>(v, "rotate_period_s");
       }},
      num<std::size_t>("anonymize", "cloak_min_users", [](C& c) -> auto& { return c.cloak.min_users; }),
      num<int>("anonymize", "cloak_max_depth", [](C& c) -> auto& { return c.cloak.max_depth; }),
      num<Timestamp>("anonymize", "cloak_slot_s", [](C& c) -> auto& { return c.cloak.slot_s; }),

      num<Timestamp>("od", "bucketing_s", [](C& c) -> auto& { return c.od_bucketing_s; }),

      num<int>("attack", "night_from", [](C& c) -> auto& { return c.attack.night_from; }),
      num<int>("attack", "night_to", [](C& c) -> auto& { return c.attack.night_to; }),
      num<int>("attack", "work_from", [](C& c) -> auto& { return c.attack.work_from; }),
      num<int>("attack", "work_to", [](C& c) -> auto& { return c.attack.work_to; }),
  };
  return table;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

std::string to_config_text(const PipelineConfig& cfg) {
  std::string out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

PipelineConfig parse_config_text(std::string_view text) {
  PipelineConfig cfg;
  std::string section;
  std::size_t lineno = 0;
  std::istringstream in{std::string(text)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw InvalidConfig(fmt::format("config line {}: malformed section", lineno));
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw InvalidConfig(fmt::format("config line {}: expected key = value", lineno));
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    auto it = std::find_if(fields().begin(), fields().end(),
                           [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == fields().end()) {
      throw InvalidConfig(fmt::format("config line {}: unknown key [{}] {}", lineno, section, key));
    }
    try {
      it->set(cfg, value);
    } catch (const InvalidConfig& e) {
      throw InvalidConfig(fmt::format("config line {}: {}", lineno, e.what()));
    }
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) { return parse_config_text(read_file(path)); }

// ---------------------------------------------------------------------------

StageContext::StageContext(std::string stage, fs::path dir, Phase phase, std::vector<fs::path> denied)
    : stage_(std::move(stage)), dir_(std::move(dir)), phase_(phase) {
  for (auto& d : denied) denied_.push_back(fs::weakly_canonical(fs::absolute(d)));
}

fs::path StageContext::resolve(const fs::path& name) const {
  return name.is_absolute() ? name : dir_ / name;
}

void StageContext::check_allowed(const fs::path& p) const {
  if (phase_ != Phase::PostIngest) return;
  if (kRawArtifactNames.contains(p.filename().string())) {
    throw PrivacyGateError(fmt::format("stage {} may not read {}", stage_, p.filename().string()));
  }
  const auto canon = fs::weakly_canonical(fs::absolute(p));
  for (const auto& d : denied_) {
    if (canon == d) throw PrivacyGateError(fmt::format("stage {} may not read a denied input", stage_));
  }
}

fs::path StageContext::in(const fs::path& name) {
  const fs::path p = resolve(name);
  check_allowed(p);
  if (std::find(inputs_.begin(), inputs_.end(), p) == inputs_.end()) inputs_.push_back(p);
  return p;
}

fs::path StageContext::out(const fs::path& name) {
  const fs::path p = resolve(name);
  if (std::find(outputs_.begin(), outputs_.end(), p) == outputs_.end()) outputs_.push_back(p);
  return p;
}

StageRecord StageContext::record() const {
  StageRecord r;
  r.stage = stage_;
  r.params = params_;
  auto label = [&](const fs::path& p) {
    const auto rel = p.lexically_relative(dir_);
    if (!rel.empty() && *rel.begin() != "..") return rel.generic_string();
    return p.filename().string();
  };
  for (const auto& p : inputs_) r.inputs.emplace_back(label(p), sha256_hex(read_file(p)));
  for (const auto& p : outputs_) r.outputs.emplace_back(label(p), sha256_hex(read_file(p)));
  return r;
}

// ---------------------------------------------------------------------------

IdentifierScanner::IdentifierScanner(std::span<const std::string> ids) {
  std::map<std::size_t, Set> groups;
  for (const auto& id : ids) {
    if (!id.empty()) groups[id.size()].insert(id);
  }
  for (auto& [len, set] : groups) by_len_.emplace_back(len, std::move(set));
}

std::vector<std::string> IdentifierScanner::find(std::string_view bytes, std::size_t limit) const {
  std::vector<std::string> hits;
  for (const auto& [len, set] : by_len_) {
    if (bytes.size() < len) continue;
    for (std::size_t i = 0; i + len <= bytes.size(); ++i) {
      if (set.contains(bytes.substr(i, len))) {
        hits.emplace_back(bytes.substr(i, len));
        if (hits.size() >= limit) return hits;
      }
    }
  }
  return hits;
}

std::vector<std::string> IdentifierScanner::find_in_file(const fs::path& path, std::size_t limit) const {
  return find(read_file(path), limit);
}

// ---------------------------------------------------------------------------
// Stages

namespace {

std::uint64_t stage_seed(const PipelineConfig& cfg, std::uint64_t stream) { return derive_seed(cfg.seed, stream); }

CellMap load_cells(StageContext& ctx) { return read_cells_csv(ctx.in("cells.csv")); }

ZoneMap load_zones(StageContext& ctx, const PipelineConfig& cfg, const CellMap& cells) {
  return read_zones_csv(ctx.in(cfg.zones_file), cells);
}

TimeGeography load_tg(StageContext& ctx, const CellMap& cells) {
  ctx.in("stations.jsonl");
  ctx.in("paths.jsonl");
  return read_time_geography(ctx.dir(), cells);
}

AnonymizedDataset load_anonymized(StageContext& ctx, const CellMap& cells) {
  ctx.in("anon.jsonl");
  ctx.in("classes.json");
  ctx.in("loss.json");
  return read_anonymized(ctx.dir(), cells);
}

// Re-indexes paths onto the stream's pseudonym table.
void align_pseudonyms(TimeGeography& tg, std::span<const std::string> stream_pseudonyms) {
  std::vector<SubIndex> map(tg.pseudonyms.size());
  for (std::size_t i = 0; i < tg.pseudonyms.size(); ++i) {
    auto it = std::lower_bound(stream_pseudonyms.begin(), stream_pseudonyms.end(), tg.pseudonyms[i]);
    if (it == stream_pseudonyms.end() || *it != tg.pseudonyms[i]) {
      throw ReferentialError("path pseudonym missing from stream", {"(withheld)"});
    }
    map[i] = static_cast<SubIndex>(it - stream_pseudonyms.begin());
  }
  for (auto& p : tg.paths) p.pseud = map[p.pseud];
  for (auto& s : tg.stations) s.pseud = map[s.pseud];
  tg.pseudonyms.assign(stream_pseudonyms.begin(), stream_pseudonyms.end());
}

std::vector<SpaceTimePath> flagship_input(StageContext& ctx, const PipelineConfig& cfg,
                                          const TimeGeography& tg, const CellMap& cells) {
  if (cfg.order == StageOrder::AnonymizeFirst) return tg.paths;
  const auto routes = read_routes_jsonl(ctx.in("routes.jsonl"), cells);
  return paths_in_supported_routes(tg.paths, routes, cfg.kanon.k);
}

void scan_or_throw(const IdentifierScanner& scanner, std::span<const fs::path> files, std::string_view what) {
  if (scanner.empty()) return;
  for (const auto& f : files) {
    if (!scanner.find_in_file(f, 1).empty()) {
      throw PrivacyGateError(fmt::format("{} found in {}", what, f.filename().string()));
    }
  }
}

}  // namespace

void stage_gen_net(StageContext& ctx, const PipelineConfig& cfg) {
  const CellMap cells = generate_network(cfg.network, stage_seed(cfg, 1));
  const ZoneMap zones = cfg.zone_mode == ZoneMode::Cell ? ZoneMap::per_cell(cells) : ZoneMap::from_location_areas(cells);
  write_cells_csv(ctx.out("cells.csv"), cells);
  write_zones_csv(ctx.out(cfg.zones_file), zones, cells);
  ctx.param("cells", cells.size());
  ctx.param("edges", cells.edge_count());
  ctx.param("location_areas", cells.location_areas().size());
  ctx.param("zones", zones.zone_count());
}

void stage_simulate(StageContext& ctx, const PipelineConfig& cfg) {
  const CellMap cells = load_cells(ctx);
  const ZoneMap zones = load_zones(ctx, cfg, cells);
  const Population pop = generate_population(cfg.population, cells, zones, stage_seed(cfg, 2));
  const Simulation sim = simulate_events(pop.agents, cells, zones, cfg.sim, stage_seed(cfg, 3));
  write_events_csv(ctx.out("events.csv"), sim.log, cells);
  write_demographics_csv(ctx.out("demographics.csv"), demographics_of(pop.agents));
  write_truth_jsonl(ctx.out("truth.jsonl"), sim.truth, cells);
  write_aux_csv(ctx.out("aux.csv"), aux_directory(pop.agents, zones));
  ctx.param("agents", pop.agents.size());
  ctx.param("routes_omitted", pop.routes_omitted);
  ctx.param("events", sim.log.events.size());
  ctx.param("trips", sim.truth.trips.size());
}

std::vector<std::string> stage_ingest(StageContext& ctx, const PipelineConfig& cfg, const Salt& salt) {
  InputPaths paths;
  paths.events = ctx.in("events.csv");
  paths.cells = ctx.in("cells.csv");
  paths.demographics = ctx.in("demographics.csv");
  paths.zones = ctx.in(cfg.zones_file);
  const LoadedInputs in = load_inputs(paths);
  const AnnotatedStream stream = pseudonymize(in.log, in.demo, salt);
  ctx.out("stream_events.csv");
  ctx.out("stream_demo.csv");
  ctx.out("provenance.json");
  write_stream(ctx.dir(), stream, in.cells);

  std::vector<std::string> raw = in.log.subs;
  for (const DemoRecord& r : in.demo.rows()) raw.push_back(r.sub);
  std::sort(raw.begin(), raw.end());
  raw.erase(std::unique(raw.begin(), raw.end()), raw.end());
  scan_or_throw(IdentifierScanner(raw), ctx.outputs(), "raw subscriber id");

  ctx.param("salt_id", stream.provenance.salt_id);
  ctx.param("pseudonyms", stream.pseudonyms.size());
  ctx.param("events", stream.events.size());
  ctx.param("subscribers_without_demographics", in.unknown_subs.size());
  ctx.param("events_without_demographics", in.unknown_sub_events);
  return raw;
}

void stage_timegeo(StageContext& ctx, const PipelineConfig& cfg) {
  const CellMap cells = load_cells(ctx);
  ctx.in("stream_events.csv");
  ctx.in("provenance.json");
  const AnnotatedStream stream = read_stream_events(ctx.dir(), cells);
  TimeGeography tg;
  tg.pseudonyms = stream.pseudonyms;
  tg.stations = detect_stations(stream, cells, cfg.stations);
  PathReport report;
  tg.paths = extract_paths(stream, tg.stations, &report);
  const auto bundles = bundle_paths(tg.paths, cfg.bundles);
  write_stations_jsonl(ctx.out("stations.jsonl"), tg, cells);
  write_paths_jsonl(ctx.out("paths.jsonl"), tg, cells);
  write_bundles_jsonl(ctx.out("bundles.jsonl"), bundles, cells);
  ctx.param("dwell_min_s", cfg.stations.dwell_min_s);
  ctx.param("stations", tg.stations.size());
  ctx.param("paths", tg.paths.size());
  ctx.param("bundles", bundles.size());
  ctx.param("pseudonyms_without_paths", report.pseudonyms_without_paths);
}

void stage_mine(StageContext& ctx, const PipelineConfig& cfg) {
  const CellMap cells = load_cells(ctx);
  const TimeGeography tg = load_tg(ctx, cells);
  std::vector<SpaceTimePath> input = tg.paths;
  if (cfg.order == StageOrder::AnonymizeFirst) {
    input = paths_with_published_windows(tg.paths, load_anonymized(ctx, cells));
  }
  MineConfig mc = cfg.mine;
  if (mc.sketch.seed == 0) mc.sketch.seed = stage_seed(cfg, 4);
  const auto seqs = route_sequences(input);
  const auto routes = mine_routes(seqs, mc);
  write_routes_jsonl(ctx.out("routes.jsonl"), routes, cells);
  std::size_t supported = 0;
  for (const auto& r : routes) supported += r.support() >= cfg.kanon.k;
  ctx.param("order", std::string(to_string(cfg.order)));
  ctx.param("paths", input.size());
  ctx.param("routes", routes.size());
  ctx.param("routes_with_support_k", supported);
  ctx.param("threshold", mc.graph.threshold);
  ctx.param("m", mc.sketch.m);
}

void stage_anonymize(StageContext& ctx, const PipelineConfig& cfg) {
  cfg.kanon.validate();
  const CellMap cells = load_cells(ctx);
  const ZoneMap zones = load_zones(ctx, cfg, cells);
  ctx.in("stream_events.csv");
  ctx.in("stream_demo.csv");
  ctx.in("provenance.json");
  const AnnotatedStream stream = read_stream(ctx.dir(), cells);
  TimeGeography tg = load_tg(ctx, cells);
  align_pseudonyms(tg, stream.pseudonyms);

  const auto input = flagship_input(ctx, cfg, tg, cells);
  KanonResult kr = kanon_windows(trace_paths(input), cfg.kanon);
  const auto records = demo_records(stream);
  AggregateResult agg = interval_aggregate(records, zones, cfg.kanon.k);
  const auto join = class_join(records, agg, stream.pseudonyms.size());
  const AnonymizedDataset ds = assemble(std::move(kr), std::move(agg), join,
                                        {cfg.kanon.k, cfg.kanon.L, cfg.kanon.bucketing, stream.provenance.salt_id});
  const std::vector<fs::path> flagship = {ctx.out("anon.jsonl"), ctx.out("classes.json"), ctx.out("loss.json")};
  write_anonymized(ctx.dir(), ds, cells);
  scan_or_throw(IdentifierScanner(stream.pseudonyms), flagship, "pseudonym");

  write_density_csv(ctx.out("density.csv"), density_graph(stream), cells);
  const AnnotatedStream rotated = rotate_pseudonyms(stream, cfg.rotate_period_s, stage_seed(cfg, 5));
  ctx.out("rotated/stream_events.csv");
  ctx.out("rotated/stream_demo.csv");
  ctx.out("rotated/provenance.json");
  write_stream(ctx.dir() / "rotated", rotated, cells);
  const CloakResult cl = cloak(stream, cells, cfg.cloak);
  write_cloak_csv(ctx.out("cloaked.csv"), cl, stream.pseudonyms);
  const AnnotatedStream syn = synthesize(stream, zones, cells, {stage_seed(cfg, 6), 0, kSecondsPerHour});
  ctx.out("synthetic/stream_events.csv");
  ctx.out("synthetic/stream_demo.csv");
  ctx.out("synthetic/provenance.json");
  write_stream(ctx.dir() / "synthetic", syn, cells);

  ctx.param("order", std::string(to_string(cfg.order)));
  ctx.param("k", cfg.kanon.k);
  ctx.param("L", cfg.kanon.L);
  ctx.param("bucketing", std::string(to_string(cfg.kanon.bucketing)));
  ctx.param("salt_id", stream.provenance.salt_id);
  ctx.param("input_paths", input.size());
  ctx.param("published_windows", ds.windows.size());
  ctx.param("classes", ds.classes.size());
  ctx.param("suppressed_window_fraction", ds.loss.suppressed_window_fraction);
  ctx.param("rotate_period_s", cfg.rotate_period_s ? nlohmann::ordered_json(*cfg.rotate_period_s)
                                                   : nlohmann::ordered_json("none"));
  ctx.param("cloak_whole_map_fallbacks", cl.whole_map_fallbacks);
}

void stage_od(StageContext& ctx, const PipelineConfig& cfg) {
  const CellMap cells = load_cells(ctx);
  const ZoneMap zones = load_zones(ctx, cfg, cells);
  const TimeGeography tg = load_tg(ctx, cells);
  const ODMatrix raw = build_od(tg.paths, zones, cfg.od_bucketing_s);
  export_od(ctx.out("odmatrix.csv"), raw);
  export_heatmap(ctx.out("od_heatmap.csv"), raw);

  const AnonymizedDataset ds = load_anonymized(ctx, cells);
  const auto routes = read_routes_jsonl(ctx.in("routes.jsonl"), cells);
  const ODMatrix est = build_od_anonymized(ds, routes, zones);
  export_od(ctx.out("odmatrix_anon.csv"), est);
  export_heatmap(ctx.out("od_heatmap_anon.csv"), est);

  nlohmann::ordered_json p;
  for (const ODMatrix* m : {&raw, &est}) {
    nlohmann::ordered_json e;
    e["source"] = std::string(to_string(m->source));
    e["bucketing_s"] = m->bucketing;
    e["total_flow"] = m->total();
    p[m == &raw ? "odmatrix.csv" : "odmatrix_anon.csv"] = std::move(e);
  }
  write_file(ctx.out("od_params.json"), p.dump(2) + "\n");
  ctx.param("bucketing_s", cfg.od_bucketing_s);
  ctx.param("raw_total", raw.total());
  ctx.param("anonymized_total", est.total());
}

void stage_attack(StageContext& ctx, const PipelineConfig& cfg) {
  const CellMap cells = load_cells(ctx);
  const ZoneMap zones = load_zones(ctx, cfg, cells);
  const AuxDirectory aux = read_aux_csv(ctx.in("aux.csv"));
  ctx.in("stream_events.csv");
  ctx.in("stream_demo.csv");
  ctx.in("provenance.json");
  const AnnotatedStream stream = read_stream(ctx.dir(), cells);
  ctx.in("rotated/stream_events.csv");
  ctx.in("rotated/provenance.json");
  const AnnotatedStream rotated = read_stream_events(ctx.dir() / "rotated", cells);
  const auto density = read_density_csv(ctx.in("density.csv"), cells);
  const CloakResult cloaked = read_cloak_csv(ctx.in("cloaked.csv"));
  const AnonymizedDataset ds = load_anonymized(ctx, cells);

  std::vector<ReidReport> reports;
  reports.push_back(attack_traces("pseudonymized", stream, zones, aux, cfg.attack));
  reports.push_back(attack_traces("rotated", rotated, zones, aux, cfg.attack));
  reports.push_back(attack_density(density));
  reports.push_back(attack_cloak(cloaked));
  reports.push_back(attack_flagship(ds, zones, aux));
  write_reid_report(ctx.out("reid_report.json"), reports);

  TimeGeography tg = load_tg(ctx, cells);
  align_pseudonyms(tg, stream.pseudonyms);
  TimeGeography seen;
  seen.pseudonyms = tg.pseudonyms;
  seen.paths = flagship_input(ctx, cfg, tg, cells);
  std::vector<std::pair<std::string, DemoAttributes>> demo;
  for (std::size_t i = 0; i < stream.pseudonyms.size(); ++i) {
    if (stream.demographics[i]) demo.emplace_back(stream.pseudonyms[i], *stream.demographics[i]);
  }
  const KanonCheck check = verify_kanonymity(ds, seen, cells, ds.params.k, &demo, &zones);
  write_kanon_check(ctx.out("kanon_check.json"), check);
  ctx.param("kanon_pass", check.pass);
  for (const ReidReport& r : reports) ctx.param("reid_rate_" + r.dataset, r.reid_rate);
  if (!check.pass) {
    throw PrivacyGateError("k-anonymity recount failed: " + check.counterexamples.front());
  }
}

// ---------------------------------------------------------------------------

std::vector<SpaceTimePath> paths_in_supported_routes(std::span<const SpaceTimePath> paths,
                                                      std::span<const RouteCluster> routes,
                                                      std::size_t k) {
  std::unordered_set<std::uint32_t> keep;
  for (const RouteCluster& r : routes) {
    if (r.support() >= k) keep.insert(r.members.begin(), r.members.end());
  }
  std::vector<SpaceTimePath> out;
  for (const SpaceTimePath& p : paths) {
    if (keep.contains(p.id)) out.push_back(p);
  }
  return out;
}

std::vector<SpaceTimePath> paths_with_published_windows(std::span<const SpaceTimePath> paths,
                                                         const AnonymizedDataset& ds) {
  std::set<std::pair<std::vector<CellIndex>, int>> published;
  for (const AnonWindow& w : ds.windows) published.emplace(w.cells, w.bucket);
  const std::size_t L = ds.params.L;
  std::vector<SpaceTimePath> out;
  std::vector<CellIndex> win;
  for (const SpaceTimePath& p : paths) {
    const auto pts = route_points(p);
    bool hit = false;
    for (std::size_t i = 0; !hit && i + L <= pts.size(); ++i) {
      win.clear();
      for (std::size_t j = 0; j < L; ++j) win.push_back(pts[i + j].cell);
      hit = published.contains({win, bucket_of(pts[i].ts, ds.params.bucketing)});
    }
    if (hit) out.push_back(p);
  }
  return out;
}

std::vector<fs::path> post_ingest_denials(const fs::path& dir, const std::optional<fs::path>& salt_file) {
  std::vector<fs::path> out;
  for (const auto& n : kRawArtifactNames) out.push_back(dir / n);
  if (salt_file) out.push_back(*salt_file);
  return out;
}

nlohmann::ordered_json manifest_json(const PipelineConfig& cfg, std::span<const StageRecord> stages) {
  nlohmann::ordered_json j;
  j["tool"] = "mobmine";
  j["seed"] = cfg.seed;
  j["config"] = to_config_text(cfg);
  auto& arr = j["stages"] = nlohmann::ordered_json::array();
  for (const StageRecord& s : stages) {
    nlohmann::ordered_json e;
    e["stage"] = s.stage;
    e["params"] = s.params;
    auto& in = e["inputs"] = nlohmann::ordered_json::object();
    for (const auto& [n, h] : s.inputs) in[n] = h;
    auto& out = e["outputs"] = nlohmann::ordered_json::object();
    for (const auto& [n, h] : s.outputs) out[n] = h;
    arr.push_back(std::move(e));
  }
  return j;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const fs::path& dir, const Salt& salt,
                            const std::optional<fs::path>& salt_file, std::ostream* log) {
  using Clock = std::chrono::steady_clock;
  using Phase = StageContext::Phase;
  PipelineResult result;
  const auto denied = post_ingest_denials(dir, salt_file);
  std::optional<IdentifierScanner> raw_ids;

  auto run = [&](const std::string& name, Phase phase, const std::function<void(StageContext&)>& body) {
    const auto t0 = Clock::now();
    StageContext ctx(name, dir, phase, phase == Phase::PostIngest ? denied : std::vector<fs::path>{});
    body(ctx);
    if (phase == Phase::PostIngest && raw_ids) scan_or_throw(*raw_ids, ctx.outputs(), "raw subscriber id");
    result.stages.push_back(ctx.record());
    if (log != nullptr) {
      const std::chrono::duration<double> dt = Clock::now() - t0;
      *log << fmt::format("[{}] done in {:.2f}s\n", name, dt.count());
    }
  };

  run("gen-net", Phase::PreIngest, [&](StageContext& c) { stage_gen_net(c, cfg); });
  run("simulate", Phase::PreIngest, [&](StageContext& c) { stage_simulate(c, cfg); });
  run("ingest", Phase::Ingest, [&](StageContext& c) { raw_ids.emplace(stage_ingest(c, cfg, salt)); });
  run("timegeo", Phase::PostIngest, [&](StageContext& c) { stage_timegeo(c, cfg); });
  if (cfg.order == StageOrder::ClusterFirst) {
    run("mine", Phase::PostIngest, [&](StageContext& c) { stage_mine(c, cfg); });
    run("anonymize", Phase::PostIngest, [&](StageContext& c) { stage_anonymize(c, cfg); });
  } else {
    run("anonymize", Phase::PostIngest, [&](StageContext& c) { stage_anonymize(c, cfg); });
    run("mine", Phase::PostIngest, [&](StageContext& c) { stage_mine(c, cfg); });
  }
  run("od", Phase::PostIngest, [&](StageContext& c) { stage_od(c, cfg); });
  run("attack", Phase::PostIngest, [&](StageContext& c) { stage_attack(c, cfg); });

  result.manifest = dir / "manifest.json";
  write_file(result.manifest, manifest_json(cfg, result.stages).dump(2) + "\n");
  return result;
}

}  // namespace mobmine
