#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobmine/anonymizer.hpp"
#include "mobmine/ingest.hpp"
#include "mobmine/network.hpp"
#include "mobmine/synthnet.hpp"
#include "mobmine/timegeo.hpp"

namespace mobmine {

// What an adversary knows from outside the dataset, e.g. a phone directory
// joined with workplace listings.
struct AuxEntry {
  std::string label;
  std::string home_zone;
  std::string work_zone;

  bool operator==(const AuxEntry&) const = default;
};

class AuxDirectory {
 public:
  AuxDirectory() = default;
  explicit AuxDirectory(std::vector<AuxEntry> entries);  // labels must be unique

  std::span<const AuxEntry> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<AuxEntry> entries_;  // sorted by label
};

AuxDirectory aux_directory(std::span<const Agent> agents, const ZoneMap& zones);
inline constexpr std::string_view kAuxHeader = "label,home_zone,work_zone";
void write_aux_csv(const std::filesystem::path& path, const AuxDirectory& aux);
AuxDirectory read_aux_csv(const std::filesystem::path& path);

struct AttackConfig {
  int night_from = 0;  // hours, [from, to)
  int night_to = 6;
  int work_from = 9;
  int work_to = 17;

  bool operator==(const AttackConfig&) const = default;
};

struct ReidReport {
  std::string dataset;
  std::size_t n_targets = 0;
  std::size_t n_unique_matches = 0;
  std::optional<std::size_t> n_correct;
  double reid_rate = 0.0;
  double mean_candidate_set_size = 0.0;  // over targets with at least one candidate
  double max_confidence = 0.0;           // largest 1/|candidates|
};

// Pseudonym -> aux label, when the evaluator knows it.
using TruthMap = std::map<std::string, std::string>;

// Home and work are the modal zones of a trajectory's events in the night and
// work hours; ties keep every modal zone.
ReidReport attack_traces(std::string dataset, const AnnotatedStream& stream, const ZoneMap& zones,
                         const AuxDirectory& aux, const AttackConfig& cfg,
                         const TruthMap* truth = nullptr);
// No trajectories exist, so nothing links.
ReidReport attack_density(std::span<const DensityPoint> points);
// Candidate-set statistics only: each cloaked record hides among its region's users.
ReidReport attack_cloak(const CloakResult& cloaked);
// Each published window is a target; its class bounds the home zone.
ReidReport attack_flagship(const AnonymizedDataset& ds, const ZoneMap& zones, const AuxDirectory& aux);

void write_reid_report(const std::filesystem::path& path, std::span<const ReidReport> reports);

// ---------------------------------------------------------------------------

struct KanonCheck {
  bool pass = true;
  std::size_t windows_checked = 0;
  std::size_t classes_checked = 0;
  std::vector<std::string> counterexamples;  // at most kMaxCounterexamples
};

inline constexpr std::size_t kMaxCounterexamples = 10;

// Recounts every published window over the raw paths and every class over
// the demographic records, with code of its own. Demographics are optional.
KanonCheck verify_kanonymity(const AnonymizedDataset& ds, const TimeGeography& raw,
                             const CellMap& cells, std::size_t k,
                             const std::vector<std::pair<std::string, DemoAttributes>>* demographics = nullptr,
                             const ZoneMap* zones = nullptr);

void write_kanon_check(const std::filesystem::path& path, const KanonCheck& check);

}  // namespace mobmine
