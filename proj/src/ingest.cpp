#include "mobmine/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "mobmine/formats.hpp"

namespace mobmine {

LoadedInputs load_inputs(const InputPaths& paths) {
  LoadedInputs in;
  in.cells = read_cells_csv(paths.cells);
  in.zones = paths.zones.empty() ? ZoneMap::from_location_areas(in.cells)
                                 : read_zones_csv(paths.zones, in.cells);
  in.log = read_events_csv(paths.events, in.cells);
  in.demo = read_demographics_csv(paths.demographics);

  std::vector<std::size_t> per_sub(in.log.subs.size(), 0);
  for (const Event& e : in.log.events) ++per_sub[e.sub];
  for (std::size_t i = 0; i < in.log.subs.size(); ++i) {
    if (in.demo.find(in.log.subs[i]) == nullptr) {
      in.unknown_subs.push_back(in.log.subs[i]);
      in.unknown_sub_events += per_sub[i];
    }
  }
  return in;
}

Salt::Salt(std::vector<std::uint8_t> bytes) : bytes_(std::move(bytes)) {
  if (bytes_.size() < kMinBytes) {
    throw WeakSaltError(
        fmt::format("salt must be at least {} bytes, got {}", kMinBytes, bytes_.size()));
  }
}

Salt Salt::from_hex(std::string_view hex) {
  while (!hex.empty() && std::isspace(static_cast<unsigned char>(hex.back()))) hex.remove_suffix(1);
  while (!hex.empty() && std::isspace(static_cast<unsigned char>(hex.front()))) hex.remove_prefix(1);
  return Salt(mobmine::from_hex(hex));
}

Salt Salt::from_file(const fs::path& path) { return from_hex(read_file(path)); }

std::optional<Salt> Salt::from_env() {
  const char* v = std::getenv("MOBMINE_SALT");
  if (v == nullptr || *v == '\0') return std::nullopt;
  return from_hex(v);
}

std::string Salt::id() const {
  return sha256_hex("mobmine-salt-id:" + to_hex(bytes_)).substr(0, 16);
}

std::string pseudonym_of(const Salt& salt, std::string_view sub) {
  return hmac_sha256_hex(salt.bytes(), sub);
}

AnnotatedStream pseudonymize(const EventLog& events, const DemoTable& demo, const Salt& salt) {
  // Every subscriber seen in either table.
  std::vector<std::string> raw = events.subs;
  for (const DemoRecord& r : demo.rows()) raw.push_back(r.sub);
  std::sort(raw.begin(), raw.end());
  raw.erase(std::unique(raw.begin(), raw.end()), raw.end());

  std::vector<std::pair<std::string, std::size_t>> hashed(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) hashed[i] = {pseudonym_of(salt, raw[i]), i};
  std::sort(hashed.begin(), hashed.end());
  for (std::size_t i = 1; i < hashed.size(); ++i) {
    if (hashed[i].first == hashed[i - 1].first) throw Error("pseudonym collision");
  }
  {
    const std::unordered_set<std::string> raw_set(raw.begin(), raw.end());
    for (const auto& [p, _] : hashed) {
      if (raw_set.contains(p)) throw PrivacyGateError("pseudonym equals a raw subscriber id");
    }
  }

  AnnotatedStream out;
  std::vector<SubIndex> raw_to_pseud(raw.size());
  out.pseudonyms.reserve(hashed.size());
  for (std::size_t i = 0; i < hashed.size(); ++i) {
    raw_to_pseud[hashed[i].second] = static_cast<SubIndex>(i);
    out.pseudonyms.push_back(hashed[i].first);
  }

  std::vector<SubIndex> log_to_pseud(events.subs.size());
  for (std::size_t i = 0; i < events.subs.size(); ++i) {
    const auto r = std::lower_bound(raw.begin(), raw.end(), events.subs[i]) - raw.begin();
    log_to_pseud[i] = raw_to_pseud[static_cast<std::size_t>(r)];
  }
  out.events.reserve(events.events.size());
  for (const Event& e : events.events) {
    out.events.push_back({e.ts, log_to_pseud[e.sub], e.kind, e.cell});
  }
  sort_events(out.events, out.pseudonyms);

  out.demographics.assign(out.pseudonyms.size(), std::nullopt);
  for (const DemoRecord& r : demo.rows()) {
    const auto ri = std::lower_bound(raw.begin(), raw.end(), r.sub) - raw.begin();
    out.demographics[raw_to_pseud[static_cast<std::size_t>(ri)]] = r.attrs;
  }

  out.provenance.salt_id = salt.id();
  for (const Event& e : out.events) out.provenance.created_ts = std::max(out.provenance.created_ts, e.ts);
  return out;
}

std::vector<std::vector<std::uint32_t>> events_by_pseudonym(const AnnotatedStream& stream) {
  std::vector<std::vector<std::uint32_t>> out(stream.pseudonyms.size());
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    out[stream.events[i].sub].push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void write_provenance(const fs::path& dir, const Provenance& p) {
  nlohmann::ordered_json j;
  j["salt_id"] = p.salt_id;
  j["created_ts"] = p.created_ts;
  write_file(dir / "provenance.json", j.dump(2) + "\n");
}

Provenance read_provenance(const fs::path& dir) {
  const auto j = nlohmann::json::parse(read_file(dir / "provenance.json"));
  return {j.at("salt_id").get<std::string>(), j.at("created_ts").get<Timestamp>()};
}

}  // namespace

void write_stream_events_file(const fs::path& path, const AnnotatedStream& stream,
                              const CellMap& cells) {
  std::string ev(kStreamEventsHeader);
  ev += '\n';
  ev.reserve(stream.events.size() * 90);
  for (const Event& e : stream.events) {
    fmt::format_to(std::back_inserter(ev), "{},{},{},{}\n", e.ts, stream.pseudonyms[e.sub],
                   to_string(e.kind), cells.id(e.cell));
  }
  write_file(path, ev);
}

void write_stream(const fs::path& dir, const AnnotatedStream& stream, const CellMap& cells) {
  write_stream_events_file(dir / "stream_events.csv", stream, cells);

  std::string demo(kStreamDemoHeader);
  demo += '\n';
  for (std::size_t i = 0; i < stream.pseudonyms.size(); ++i) {
    const auto& d = stream.demographics[i];
    if (!d) continue;
    demo += fmt::format("{},{},{},{},{}\n", stream.pseudonyms[i], d->age, d->gender, d->postcode,
                        d->home_zone);
  }
  write_file(dir / "stream_demo.csv", demo);
  write_provenance(dir, stream.provenance);
}

AnnotatedStream read_stream_events_file(const fs::path& path, const CellMap& cells) {
  // Same layout as events.csv with pseudonyms in the subscriber column.
  CsvReader r(path, kStreamEventsHeader);
  std::vector<std::string_view> f;
  std::unordered_map<std::string, SubIndex> index;
  AnnotatedStream s;
  std::vector<std::string> order;
  std::vector<Event> events;
  std::vector<std::string> offenders;
  while (r.next(f)) {
    if (f.size() != 4) r.fail("expected 4 fields");
    const Timestamp ts = parse_int(r, f[0], "ts");
    auto kind = parse_event_kind(f[2]);
    if (!kind) r.fail(fmt::format("unknown event kind '{}'", f[2]));
    auto cell = cells.find(f[3]);
    if (!cell) {
      offenders.emplace_back(f[3]);
      continue;
    }
    auto [it, inserted] = index.try_emplace(std::string(f[1]), static_cast<SubIndex>(order.size()));
    if (inserted) order.emplace_back(f[1]);
    events.push_back({ts, it->second, *kind, *cell});
  }
  if (!offenders.empty()) throw ReferentialError("stream references unknown cells", offenders);

  std::vector<SubIndex> perm(order.size());
  s.pseudonyms = order;
  std::sort(s.pseudonyms.begin(), s.pseudonyms.end());
  for (std::size_t i = 0; i < order.size(); ++i) {
    perm[i] = static_cast<SubIndex>(
        std::lower_bound(s.pseudonyms.begin(), s.pseudonyms.end(), order[i]) - s.pseudonyms.begin());
  }
  for (Event& e : events) e.sub = perm[e.sub];
  s.events = std::move(events);
  s.demographics.assign(s.pseudonyms.size(), std::nullopt);
  return s;
}

AnnotatedStream read_stream_events(const fs::path& dir, const CellMap& cells) {
  AnnotatedStream s = read_stream_events_file(dir / "stream_events.csv", cells);
  s.provenance = read_provenance(dir);
  return s;
}

AnnotatedStream read_stream(const fs::path& dir, const CellMap& cells) {
  AnnotatedStream s = read_stream_events(dir, cells);
  CsvReader r(dir / "stream_demo.csv", kStreamDemoHeader);
  std::vector<std::string_view> f;
  std::vector<std::pair<std::string, DemoAttributes>> rows;
  while (r.next(f)) {
    if (f.size() != 5) r.fail("expected 5 fields");
    DemoAttributes d;
    d.age = static_cast<int>(parse_int(r, f[1], "age"));
    d.gender = std::string(f[2]);
    d.postcode = std::string(f[3]);
    d.home_zone = std::string(f[4]);
    rows.emplace_back(std::string(f[0]), std::move(d));
  }

  // Demographics may name pseudonyms that have no events.
  std::vector<std::string> all = s.pseudonyms;
  for (const auto& [p, _] : rows) all.push_back(p);
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  if (all.size() != s.pseudonyms.size()) {
    std::vector<SubIndex> remap(s.pseudonyms.size());
    for (std::size_t i = 0; i < s.pseudonyms.size(); ++i) {
      remap[i] = static_cast<SubIndex>(
          std::lower_bound(all.begin(), all.end(), s.pseudonyms[i]) - all.begin());
    }
    for (Event& e : s.events) e.sub = remap[e.sub];
    s.pseudonyms = std::move(all);
  }
  s.demographics.assign(s.pseudonyms.size(), std::nullopt);
  for (auto& [p, d] : rows) {
    const auto pos = std::lower_bound(s.pseudonyms.begin(), s.pseudonyms.end(), p) - s.pseudonyms.begin();
    s.demographics[static_cast<std::size_t>(pos)] = std::move(d);
  }
  return s;
}

}  // namespace mobmine
