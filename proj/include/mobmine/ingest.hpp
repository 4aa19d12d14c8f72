#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mobmine/events.hpp"
#include "mobmine/network.hpp"

namespace mobmine {

namespace fs = std::filesystem;

struct InputPaths {
  fs::path events;
  fs::path cells;
  fs::path demographics;
  fs::path zones;  // empty: zones default to Location Areas
};

struct LoadedInputs {
  EventLog log;
  CellMap cells;
  DemoTable demo;
  ZoneMap zones;
  // Subscribers with events but no demographic record. Their events are kept.
  std::vector<std::string> unknown_subs;
  std::size_t unknown_sub_events = 0;
};

LoadedInputs load_inputs(const InputPaths& paths);

// Secret key for the pseudonym hash. Never serialized; only its id is.
class Salt {
 public:
  static constexpr std::size_t kMinBytes = 16;

  explicit Salt(std::vector<std::uint8_t> bytes);
  static Salt from_hex(std::string_view hex);
  static Salt from_file(const fs::path& path);
  // MOBMINE_SALT, if set.
  static std::optional<Salt> from_env();

  std::span<const std::uint8_t> bytes() const { return bytes_; }
  // Public fingerprint used to tag releases.
  std::string id() const;

 private:
  std::vector<std::uint8_t> bytes_;
};

std::string pseudonym_of(const Salt& salt, std::string_view sub);

struct Provenance {
  std::string salt_id;
  Timestamp created_ts = 0;

  bool operator==(const Provenance&) const = default;
};

// Events keyed by pseudonym. `pseudonyms` is sorted; Event::sub indexes it.
// `demographics[i]` belongs to pseudonyms[i] and is empty for subscribers
// without a demographic record.
struct AnnotatedStream {
  std::vector<std::string> pseudonyms;
  std::vector<Event> events;
  std::vector<std::optional<DemoAttributes>> demographics;
  Provenance provenance;

  std::size_t distinct_pseudonyms() const { return pseudonyms.size(); }
  bool operator==(const AnnotatedStream&) const = default;
};

// Replaces every subscriber by HMAC-SHA256(salt, sub). Events are re-sorted
// by (ts, pseudonym, kind, cell) so no raw ordering survives. created_ts is
// the latest event time, keeping the output a pure function of the inputs.
AnnotatedStream pseudonymize(const EventLog& events, const DemoTable& demo, const Salt& salt);

// Per-pseudonym event index lists, time ordered.
std::vector<std::vector<std::uint32_t>> events_by_pseudonym(const AnnotatedStream& stream);

inline constexpr std::string_view kStreamEventsHeader = "ts,pseud,kind,cell";
inline constexpr std::string_view kStreamDemoHeader = "pseud,age,gender,postcode,home_zone";

// stream_events.csv, stream_demo.csv and provenance.json under `dir`.
void write_stream(const fs::path& dir, const AnnotatedStream& stream, const CellMap& cells);
AnnotatedStream read_stream(const fs::path& dir, const CellMap& cells);
// Event and provenance files only; used by stages that must not see demographics.
AnnotatedStream read_stream_events(const fs::path& dir, const CellMap& cells);

// A single events file in the stream layout, without provenance.
void write_stream_events_file(const fs::path& path, const AnnotatedStream& stream, const CellMap& cells);
AnnotatedStream read_stream_events_file(const fs::path& path, const CellMap& cells);

}  // namespace mobmine
