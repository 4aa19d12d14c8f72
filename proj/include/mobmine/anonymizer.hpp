#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobmine/common.hpp"
#include "mobmine/ingest.hpp"
#include "mobmine/network.hpp"
#include "mobmine/timegeo.hpp"

namespace mobmine {

enum class TimeBucketing { HourOfWeek, HourOfDay, None };

std::string_view to_string(TimeBucketing b);
std::optional<TimeBucketing> parse_bucketing(std::string_view s);

int bucket_of(Timestamp ts, TimeBucketing b);
// "MON_08", "H08" or "ALL".
std::string bucket_label(int bucket, TimeBucketing b);
std::optional<int> parse_bucket_label(std::string_view label, TimeBucketing b);
// Start of the bucket relative to Monday 00:00 (week) or midnight (day).
Timestamp bucket_offset_s(int bucket, TimeBucketing b);
Timestamp bucket_span_s(TimeBucketing b);

// What the anonymizer sees of a path: its owner and its route points.
struct TracePath {
  SubIndex pseud = 0;
  std::vector<RoutePoint> points;
};

std::vector<TracePath> trace_paths(std::span<const SpaceTimePath> paths);

struct KanonConfig {
  std::size_t k = 5;
  std::size_t L = 3;
  TimeBucketing bucketing = TimeBucketing::HourOfWeek;

  void validate() const;

  bool operator==(const KanonConfig&) const = default;
};

struct AnonWindow {
  std::vector<CellIndex> cells;  // length L
  int bucket = 0;
  std::size_t support = 0;       // distinct pseudonyms
  std::uint32_t class_id = 0;
  std::vector<SubIndex> supporters;  // in-memory only, never serialized

  bool same_key(const AnonWindow& o) const { return cells == o.cells && bucket == o.bucket; }
};

struct LossReport {
  double suppressed_window_fraction = 0.0;  // over window occurrences
  double mean_age_interval_width = 0.0;
  std::size_t window_occurrences = 0;
  std::size_t published_occurrences = 0;
  std::size_t distinct_windows = 0;
  std::size_t published_windows = 0;
  std::map<std::string, int> generalization_height;  // age, gender, zone
};

struct KanonResult {
  std::vector<AnonWindow> windows;  // sorted by (cells, bucket)
  LossReport loss;
};

KanonResult kanon_windows(std::span<const TracePath> paths, const KanonConfig& cfg,
                          ExecPolicy policy = ExecPolicy::Parallel);

// Each published window becomes `support` single-window paths under fresh
// pseudonyms, placed at the start of its bucket.
std::vector<TracePath> expand_windows(std::span<const AnonWindow> windows, TimeBucketing b);

// ---------------------------------------------------------------------------

struct DemoRecordP {
  SubIndex pseud = 0;
  DemoAttributes attrs;
};

struct DemoClass {
  std::uint32_t id = 0;
  int age_lo = 0;
  int age_hi = 0;
  std::string gender_class;  // a value or "any"
  std::string zone_class;    // zone, its parent, or "all"
  std::size_t member_count = 0;
  int gender_level = 0;  // 0 value, 1 any
  int zone_level = 0;    // 0 zone, 1 parent, 2 all
  bool undersized = false;

  bool operator==(const DemoClass&) const = default;
};

inline constexpr std::string_view kAnyGender = "any";
inline constexpr std::string_view kAllZones = "all";

struct AggregateResult {
  std::vector<DemoClass> classes;
  std::vector<std::uint32_t> class_of;  // per input record
  double mean_age_interval_width = 0.0;
};

// Median-split partitioning over (age, gender, home zone). Zones are ranked by
// (parent, name) so neighbours in rank share a parent where possible.
AggregateResult interval_aggregate(std::span<const DemoRecordP> records, const ZoneMap& zones,
                                   std::size_t k);

std::vector<DemoRecordP> demo_records(const AnnotatedStream& stream);

// ---------------------------------------------------------------------------

struct AnonParams {
  std::size_t k = 5;
  std::size_t L = 3;
  TimeBucketing bucketing = TimeBucketing::HourOfWeek;
  std::string salt_id;

  bool operator==(const AnonParams&) const = default;
};

struct AnonymizedDataset {
  AnonParams params;
  std::vector<AnonWindow> windows;
  std::vector<DemoClass> classes;
  LossReport loss;
};

// class_of_pseud[p] is the class of pseudonym p, if it has one.
AnonymizedDataset assemble(KanonResult windows, AggregateResult classes,
                           std::span<const std::optional<std::uint32_t>> class_of_pseud,
                           AnonParams params);

std::vector<std::optional<std::uint32_t>> class_join(std::span<const DemoRecordP> records,
                                                     const AggregateResult& agg,
                                                     std::size_t n_pseudonyms);

void write_anonymized(const std::filesystem::path& dir, const AnonymizedDataset& ds,
                      const CellMap& cells);
AnonymizedDataset read_anonymized(const std::filesystem::path& dir, const CellMap& cells);

// ---------------------------------------------------------------------------
// Baseline datasets.

struct DensityPoint {
  CellIndex cell = 0;
  Timestamp t_start = 0;
  std::size_t count = 0;  // distinct pseudonyms

  bool operator==(const DensityPoint&) const = default;
};

std::vector<DensityPoint> density_graph(const AnnotatedStream& stream, Timestamp bucket_s = 3600);
void write_density_csv(const std::filesystem::path& path, std::span<const DensityPoint> pts,
                       const CellMap& cells);
std::vector<DensityPoint> read_density_csv(const std::filesystem::path& path, const CellMap& cells);

// No period leaves the stream untouched. Otherwise each pseudonym is replaced
// per period segment and demographics are dropped.
AnnotatedStream rotate_pseudonyms(const AnnotatedStream& stream, std::optional<Timestamp> period_s,
                                  std::uint64_t seed);

struct CloakConfig {
  std::size_t min_users = 5;
  int max_depth = 6;
  Timestamp slot_s = 3600;

  bool operator==(const CloakConfig&) const = default;
};

struct CloakRecord {
  Timestamp slot = 0;
  SubIndex pseud = 0;
  std::string region;  // quadtree path, "Q" is the whole map
  std::size_t users = 0;
};

struct CloakResult {
  std::vector<CloakRecord> records;
  std::size_t whole_map_fallbacks = 0;
};

CloakResult cloak(const AnnotatedStream& stream, const CellMap& cells, const CloakConfig& cfg);
void write_cloak_csv(const std::filesystem::path& path, const CloakResult& c,
                     std::span<const std::string> pseudonyms);
// Pseudonyms are not kept; records carry index 0.
CloakResult read_cloak_csv(const std::filesystem::path& path);

struct SyntheticConfig {
  std::uint64_t seed = 0;
  std::size_t n_agents = 0;  // 0: as many as the source
  Timestamp slot_s = 3600;

  bool operator==(const SyntheticConfig&) const = default;
};

// Zone of each pseudonym per slot from t0: the zone of its latest event
// before the slot ends, or of its first event before that.
std::vector<std::vector<std::uint32_t>> presence_zones(const AnnotatedStream& stream,
                                                       const ZoneMap& zones, Timestamp t0,
                                                       std::size_t n_slots, Timestamp slot_s);

// Hour-slot Markov chain over zones, fitted to the source presence and
// sampled with controlled rounding; demographics drawn from the marginals of
// the initial zone. One PAGE per agent and slot at the zone's first cell.
AnnotatedStream synthesize(const AnnotatedStream& source, const ZoneMap& zones, const CellMap& cells,
                           const SyntheticConfig& cfg);

}  // namespace mobmine
