#include "mobmine/cli.hpp"

#include <functional>
#include <ostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <omp.h>

#include "mobmine/formats.hpp"
#include "mobmine/pipeline.hpp"

namespace mobmine {

namespace {

struct Overrides {
  std::string config;
  std::uint64_t seed = 0;
  int threads = 0;
  std::string zones;
  std::size_t k = 0;
  std::size_t window = 0;
  Timestamp dwell = 0;
  Timestamp paging = 0;
  std::size_t agents = 0;
  int days = 0;
  std::size_t cells = 0;
  std::string order;
  std::string time_bucketing;
  Timestamp od_bucketing = 0;
  std::string zone_mode;
  bool unique_home_work = false;
};

struct Opts {
  std::map<std::string, CLI::Option*> given;
  bool has(const std::string& name) const {
    auto it = given.find(name);
    return it != given.end() && it->second->count() > 0;
  }
};

void add_common(CLI::App& sub, Overrides& o, Opts& opts, std::string& out_dir, std::string& salt_file,
                bool od) {
  sub.add_option("--out", out_dir, "Work directory for inputs and outputs")->capture_default_str();
  opts.given["config"] = sub.add_option("--config", o.config, "Config file (key = value under [sections])")
                             ->check(CLI::ExistingFile);
  opts.given["seed"] = sub.add_option("--seed", o.seed, "Global seed");
  opts.given["threads"] = sub.add_option("--threads", o.threads, "Thread cap")->check(CLI::NonNegativeNumber);
  opts.given["zones"] = sub.add_option("--zones", o.zones, "Zone file (cell,zone)");
  sub.add_option("--salt-file", salt_file, "Hex salt file (else MOBMINE_SALT)");
  opts.given["k"] = sub.add_option("--k", o.k, "Anonymity level")->check(CLI::PositiveNumber);
  opts.given["window"] = sub.add_option("--window", o.window, "Window length L")->check(CLI::PositiveNumber);
  opts.given["dwell"] = sub.add_option("--dwell-secs", o.dwell, "Station dwell threshold")
                            ->check(CLI::PositiveNumber);
  opts.given["paging"] = sub.add_option("--paging-interval", o.paging, "Periodic update interval in seconds")
                             ->check(CLI::PositiveNumber);
  opts.given["agents"] = sub.add_option("--agents", o.agents, "Simulated agents")->check(CLI::PositiveNumber);
  opts.given["days"] = sub.add_option("--days", o.days, "Simulated days")->check(CLI::PositiveNumber);
  opts.given["cells"] = sub.add_option("--cells", o.cells, "Network cells")->check(CLI::PositiveNumber);
  opts.given["order"] = sub.add_option("--order", o.order, "cluster-first | anonymize-first")
                            ->check(CLI::IsMember({"cluster-first", "anonymize-first"}));
  opts.given["time_bucketing"] =
      sub.add_option("--time-bucketing", o.time_bucketing, "Window bucketing")
          ->check(CLI::IsMember({"hour-of-week", "hour-of-day", "none"}));
  opts.given["od_bucketing"] =
      sub.add_option(od ? "--bucketing,--od-bucketing" : "--od-bucketing", o.od_bucketing,
                     "O-D time bucket in seconds")
          ->check(CLI::PositiveNumber);
  opts.given["zone_mode"] = sub.add_option("--zone-mode", o.zone_mode, "la | cell")
                                ->check(CLI::IsMember({"la", "cell"}));
  opts.given["unique"] = sub.add_flag("--unique-home-work", o.unique_home_work,
                                      "Give every agent a distinct home/work pair");
}

PipelineConfig build_config(const Overrides& o, const Opts& opts) {
  PipelineConfig cfg = opts.has("config") ? load_config(o.config) : PipelineConfig{};
  if (opts.has("seed")) cfg.seed = o.seed;
  if (opts.has("threads")) cfg.threads = o.threads;
  if (opts.has("zones")) cfg.zones_file = o.zones;
  if (opts.has("k")) cfg.kanon.k = o.k;
  if (opts.has("window")) cfg.kanon.L = o.window;
  if (opts.has("dwell")) cfg.stations.dwell_min_s = o.dwell;
  if (opts.has("paging")) cfg.sim.paging_interval_s = o.paging;
  if (opts.has("agents")) cfg.population.n_agents = o.agents;
  if (opts.has("days")) cfg.sim.days = o.days;
  if (opts.has("cells")) cfg.network.n_cells = o.cells;
  if (opts.has("order")) cfg.order = *parse_stage_order(o.order);
  if (opts.has("time_bucketing")) cfg.kanon.bucketing = *parse_bucketing(o.time_bucketing);
  if (opts.has("od_bucketing")) cfg.od_bucketing_s = o.od_bucketing;
  if (opts.has("zone_mode")) cfg.zone_mode = o.zone_mode == "cell" ? ZoneMode::Cell : ZoneMode::LocationArea;
  if (opts.has("unique")) cfg.population.unique_home_work = o.unique_home_work;
  cfg.kanon.validate();
  if (cfg.threads < 0) throw InvalidConfig("threads must be >= 0");
  return cfg;
}

std::pair<Salt, std::optional<fs::path>> load_salt(const std::string& salt_file) {
  if (!salt_file.empty()) return {Salt::from_file(salt_file), fs::path(salt_file)};
  if (auto s = Salt::from_env()) return {std::move(*s), std::nullopt};
  throw InvalidConfig("no salt: pass --salt-file or set MOBMINE_SALT");
}

void write_stage_record(const fs::path& dir, const PipelineConfig& cfg, const StageRecord& rec) {
  const std::vector<StageRecord> one{rec};
  write_file(dir / fmt::format("manifest.{}.json", rec.stage), manifest_json(cfg, one).dump(2) + "\n");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Passive mobile-network trajectory mining with k-anonymous release", "mobmine"};
  app.require_subcommand(1, 1);
  app.fallthrough(false);

  Overrides o;
  std::string out_dir = "out";
  std::string salt_file;

  static const std::vector<std::pair<std::string, std::string>> kSubs = {
      {"gen-net", "Generate a synthetic cell network and zones"},
      {"simulate", "Simulate agents and their passive network events"},
      {"ingest", "Validate and pseudonymize raw events"},
      {"timegeo", "Detect stations, paths and bundles"},
      {"mine", "Cluster paths into frequent routes"},
      {"anonymize", "Publish k-anonymous windows and the baseline datasets"},
      {"od", "Build origin-destination matrices"},
      {"attack", "Run the linkability attack and the k-anonymity recount"},
      {"pipeline", "Run every stage and write manifest.json"},
  };
  std::map<std::string, CLI::App*> subs;
  std::map<std::string, Opts> sub_opts;
  for (const auto& [name, help] : kSubs) {
    CLI::App* s = app.add_subcommand(name, help);
    add_common(*s, o, sub_opts[name], out_dir, salt_file, name == "od");
    subs[name] = s;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "mobmine: error: " << e.what() << "\n";
    return kExitUsage;
  }

  std::string name;
  for (const auto& [n, s] : subs) {
    if (s->parsed()) name = n;
  }

  try {
    const PipelineConfig cfg = build_config(o, sub_opts[name]);
    if (cfg.threads > 0) omp_set_num_threads(cfg.threads);
    const fs::path dir = out_dir;
    fs::create_directories(dir);

    if (name == "pipeline") {
      auto [salt, file] = load_salt(salt_file);
      const auto res = run_pipeline(cfg, dir, salt, file, &err);
      out << res.manifest.string() << "\n";
      return kExitOk;
    }

    using Phase = StageContext::Phase;
    std::optional<Salt> salt;
    if (name == "ingest") salt.emplace(load_salt(salt_file).first);
    const Phase phase = name == "gen-net" || name == "simulate" ? Phase::PreIngest
                        : name == "ingest"                      ? Phase::Ingest
                                                                : Phase::PostIngest;
    StageContext ctx(name, dir, phase,
                     phase == Phase::PostIngest ? post_ingest_denials(dir, salt_file.empty()
                                                                             ? std::nullopt
                                                                             : std::optional<fs::path>(salt_file))
                                                : std::vector<fs::path>{});
    static const std::map<std::string, std::function<void(StageContext&, const PipelineConfig&)>> kStages = {
        {"gen-net", stage_gen_net},   {"simulate", stage_simulate},   {"timegeo", stage_timegeo},
        {"mine", stage_mine},         {"anonymize", stage_anonymize}, {"od", stage_od},
        {"attack", stage_attack},
    };
    if (name == "ingest") {
      stage_ingest(ctx, cfg, *salt);
    } else {
      kStages.at(name)(ctx, cfg);
    }
    write_stage_record(dir, cfg, ctx.record());
    for (const auto& p : ctx.outputs()) out << p.string() << "\n";
    return kExitOk;
  } catch (const PrivacyGateError& e) {
    err << "mobmine: privacy gate: " << e.what() << "\n";
    return kExitPrivacy;
  } catch (const InvalidConfig& e) {
    err << "mobmine: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const WeakSaltError& e) {
    err << "mobmine: error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "mobmine: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace mobmine
