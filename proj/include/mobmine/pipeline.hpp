#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mobmine/anonymizer.hpp"
#include "mobmine/attack.hpp"
#include "mobmine/ingest.hpp"
#include "mobmine/routeminer.hpp"
#include "mobmine/synthnet.hpp"
#include "mobmine/timegeo.hpp"

namespace mobmine {

namespace fs = std::filesystem;

enum class StageOrder { ClusterFirst, AnonymizeFirst };
std::string_view to_string(StageOrder o);
std::optional<StageOrder> parse_stage_order(std::string_view s);

enum class ZoneMode { LocationArea, Cell };

struct PipelineConfig {
  std::uint64_t seed = 7;
  int threads = 0;  // 0: OpenMP default
  StageOrder order = StageOrder::ClusterFirst;

  NetworkConfig network;
  ZoneMode zone_mode = ZoneMode::LocationArea;
  std::string zones_file = "zones.csv";  // relative to the work directory unless absolute
  PopulationConfig population;
  SimConfig sim;
  StationConfig stations;
  BundleConfig bundles;
  MineConfig mine;
  KanonConfig kanon;
  std::optional<Timestamp> rotate_period_s = kSecondsPerDay;
  CloakConfig cloak;
  Timestamp od_bucketing_s = kSecondsPerHour;
  AttackConfig attack;

  bool operator==(const PipelineConfig&) const = default;
};

// Flat key=value lines grouped under [section] headers. '#' starts a comment.
std::string to_config_text(const PipelineConfig& cfg);
PipelineConfig parse_config_text(std::string_view text);
PipelineConfig load_config(const fs::path& path);

// ---------------------------------------------------------------------------

struct StageRecord {
  std::string stage;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::string>> inputs;   // file name, sha256
  std::vector<std::pair<std::string, std::string>> outputs;
};

// The only way a stage touches the filesystem. Stages after ingest are built
// with the raw inputs and the salt on their deny list.
class StageContext {
 public:
  enum class Phase { PreIngest, Ingest, PostIngest };

  StageContext(std::string stage, fs::path dir, Phase phase, std::vector<fs::path> denied = {});

  // Resolves `name` under the work directory (absolute paths are kept) and
  // records it as an input. Throws PrivacyGateError for denied files.
  fs::path in(const fs::path& name);
  fs::path out(const fs::path& name);
  void param(const std::string& key, nlohmann::ordered_json value) { params_[key] = std::move(value); }

  const std::string& stage() const { return stage_; }
  Phase phase() const { return phase_; }
  const fs::path& dir() const { return dir_; }
  std::span<const fs::path> outputs() const { return outputs_; }
  StageRecord record() const;

 private:
  fs::path resolve(const fs::path& name) const;
  void check_allowed(const fs::path& p) const;

  std::string stage_;
  fs::path dir_;
  Phase phase_;
  std::vector<fs::path> denied_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
  nlohmann::ordered_json params_ = nlohmann::ordered_json::object();
};

// File names no stage after ingest may open, wherever they live.
inline const std::set<std::string> kRawArtifactNames = {"events.csv", "demographics.csv", "truth.jsonl"};

// Fixed-length byte search for any of a set of identifiers.
class IdentifierScanner {
 public:
  explicit IdentifierScanner(std::span<const std::string> ids);
  // First few identifiers found in `bytes`.
  std::vector<std::string> find(std::string_view bytes, std::size_t limit = 3) const;
  std::vector<std::string> find_in_file(const fs::path& path, std::size_t limit = 3) const;
  bool empty() const { return by_len_.empty(); }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  using Set = std::unordered_set<std::string, Hash, std::equal_to<>>;
  std::vector<std::pair<std::size_t, Set>> by_len_;
};

// ---------------------------------------------------------------------------
// Stages. Each reads and writes only through its context.

void stage_gen_net(StageContext& ctx, const PipelineConfig& cfg);
void stage_simulate(StageContext& ctx, const PipelineConfig& cfg);
// Returns the raw subscriber ids it saw so later outputs can be scanned.
std::vector<std::string> stage_ingest(StageContext& ctx, const PipelineConfig& cfg, const Salt& salt);
void stage_timegeo(StageContext& ctx, const PipelineConfig& cfg);
void stage_mine(StageContext& ctx, const PipelineConfig& cfg);
void stage_anonymize(StageContext& ctx, const PipelineConfig& cfg);
void stage_od(StageContext& ctx, const PipelineConfig& cfg);
// Throws PrivacyGateError when the k-anonymity recount fails.
void stage_attack(StageContext& ctx, const PipelineConfig& cfg);

struct PipelineResult {
  std::vector<StageRecord> stages;
  fs::path manifest;
};

// Runs every stage into `dir` and writes manifest.json. Outputs after ingest
// are scanned for raw subscriber ids, the flagship files for pseudonyms.
// `salt_file`, when the salt came from one, is denied to every later stage.
PipelineResult run_pipeline(const PipelineConfig& cfg, const fs::path& dir, const Salt& salt,
                            const std::optional<fs::path>& salt_file, std::ostream* log = nullptr);

// Deny list for stages after ingest.
std::vector<fs::path> post_ingest_denials(const fs::path& dir, const std::optional<fs::path>& salt_file);

nlohmann::ordered_json manifest_json(const PipelineConfig& cfg, std::span<const StageRecord> stages);

// Paths the flagship anonymizer sees under each ordering.
std::vector<SpaceTimePath> paths_in_supported_routes(std::span<const SpaceTimePath> paths,
                                                      std::span<const RouteCluster> routes,
                                                      std::size_t k);
std::vector<SpaceTimePath> paths_with_published_windows(std::span<const SpaceTimePath> paths,
                                                         const AnonymizedDataset& ds);

}  // namespace mobmine
