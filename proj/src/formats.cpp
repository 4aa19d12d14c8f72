#include "mobmine/formats.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace mobmine {

using ordered_json = nlohmann::ordered_json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError(fmt::format("short write to {}", path.string()));
}

CsvReader::CsvReader(const fs::path& path, std::string_view expected_header)
    : file_(path.filename().string()), data_(read_file(path)) {
  std::vector<std::string_view> header;
  if (!next(header)) fail("missing header");
  std::string joined;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i) joined += ',';
    joined += header[i];
  }
  if (joined != expected_header) {
    fail(fmt::format("header is '{}', expected '{}'", joined, expected_header));
  }
}

bool CsvReader::next(std::vector<std::string_view>& fields) {
  fields.clear();
  while (pos_ < data_.size()) {
    std::size_t eol = data_.find('\n', pos_);
    if (eol == std::string::npos) eol = data_.size();
    std::string_view row(data_.data() + pos_, eol - pos_);
    line_ = ++lines_read_;
    pos_ = eol + 1;
    if (!row.empty() && row.back() == '\r') row.remove_suffix(1);
    if (row.empty()) continue;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = row.find(',', start);
      if (comma == std::string_view::npos) {
        fields.push_back(row.substr(start));
        break;
      }
      fields.push_back(row.substr(start, comma - start));
      start = comma + 1;
    }
    return true;
  }
  return false;
}

void CsvReader::fail(const std::string& what) const { throw ParseError(file_, line_, what); }

long long parse_int(const CsvReader& r, std::string_view field, std::string_view what) {
  long long v = 0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    r.fail(fmt::format("invalid {} '{}'", what, field));
  }
  return v;
}

double parse_double(const CsvReader& r, std::string_view field, std::string_view what) {
  double v = 0;
  auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || p != field.data() + field.size()) {
    r.fail(fmt::format("invalid {} '{}'", what, field));
  }
  return v;
}

// ---------------------------------------------------------------------------

void write_cells_csv(const fs::path& path, const CellMap& cells) {
  std::string out(kCellsHeader);
  out += '\n';
  for (const CellSite& c : cells.cells()) {
    out += fmt::format("{},{:.6f},{:.6f},{:.1f},{}\n", c.id, c.lat, c.lon, c.radius_m, c.la);
  }
  write_file(path, out);
}

CellMap read_cells_csv(const fs::path& path) {
  CsvReader r(path, kCellsHeader);
  std::vector<CellSite> cells;
  std::vector<std::string_view> f;
  std::set<std::string> seen;
  while (r.next(f)) {
    if (f.size() != 5) r.fail("expected 5 fields");
    CellSite c;
    c.id = std::string(f[0]);
    c.lat = parse_double(r, f[1], "lat");
    c.lon = parse_double(r, f[2], "lon");
    c.radius_m = parse_double(r, f[3], "radius_m");
    c.la = std::string(f[4]);
    if (c.id.empty() || c.la.empty()) r.fail("empty cell or la");
    if (!(c.radius_m >= kMinCellRadiusM && c.radius_m <= kMaxCellRadiusM)) {
      r.fail(fmt::format("radius_m {} out of range", c.radius_m));
    }
    if (!seen.insert(c.id).second) r.fail(fmt::format("duplicate cell {}", c.id));
    cells.push_back(std::move(c));
  }
  return CellMap(std::move(cells));
}

void write_events_csv(const fs::path& path, const EventLog& log, const CellMap& cells) {
  std::string out(kEventsHeader);
  out += '\n';
  out.reserve(log.events.size() * 36);
  for (const Event& e : log.events) {
    fmt::format_to(std::back_inserter(out), "{},{},{},{}\n", e.ts, log.subs[e.sub], to_string(e.kind),
                   cells.id(e.cell));
  }
  write_file(path, out);
}

EventLog read_events_csv(const fs::path& path, const CellMap& cells) {
  CsvReader r(path, kEventsHeader);
  struct Row {
    Timestamp ts;
    std::string_view sub;
    EventKind kind;
    CellIndex cell;
  };
  std::vector<Row> rows;
  std::set<std::string, std::less<>> unknown_cells;
  std::vector<std::string_view> f;
  // Subscriber strings must outlive the reader's line buffer.
  std::set<std::string, std::less<>> subs;
  while (r.next(f)) {
    if (f.size() != 4) r.fail("expected 4 fields");
    const Timestamp ts = parse_int(r, f[0], "ts");
    if (ts < 0) r.fail("negative timestamp");
    if (f[1].empty()) r.fail("empty sub");
    auto kind = parse_event_kind(f[2]);
    if (!kind) r.fail(fmt::format("unknown event kind '{}'", f[2]));
    auto cell = cells.find(f[3]);
    if (!cell) {
      unknown_cells.emplace(f[3]);
      continue;
    }
    auto it = subs.find(f[1]);
    if (it == subs.end()) it = subs.emplace(f[1]).first;
    rows.push_back({ts, *it, *kind, *cell});
  }
  if (!unknown_cells.empty()) {
    throw ReferentialError("events reference unknown cells",
                           {unknown_cells.begin(), unknown_cells.end()});
  }
  EventLog log;
  log.subs.assign(subs.begin(), subs.end());
  log.events.reserve(rows.size());
  for (const Row& row : rows) {
    const auto idx = static_cast<SubIndex>(
        std::lower_bound(log.subs.begin(), log.subs.end(), row.sub) - log.subs.begin());
    log.events.push_back({row.ts, idx, row.kind, row.cell});
  }
  return log;
}

void write_demographics_csv(const fs::path& path, const DemoTable& demo) {
  std::string out(kDemographicsHeader);
  out += '\n';
  for (const DemoRecord& d : demo.rows()) {
    out += fmt::format("{},{},{},{},{}\n", d.sub, d.attrs.age, d.attrs.gender, d.attrs.postcode,
                       d.attrs.home_zone);
  }
  write_file(path, out);
}

DemoTable read_demographics_csv(const fs::path& path) {
  CsvReader r(path, kDemographicsHeader);
  std::vector<DemoRecord> rows;
  std::vector<std::string_view> f;
  std::set<std::string, std::less<>> seen;
  while (r.next(f)) {
    if (f.size() != 5) r.fail("expected 5 fields");
    DemoRecord d;
    d.sub = std::string(f[0]);
    const long long age = parse_int(r, f[1], "age");
    if (age < 0 || age > kMaxAge) r.fail(fmt::format("age {} out of range", age));
    d.attrs.age = static_cast<int>(age);
    d.attrs.gender = std::string(f[2]);
    d.attrs.postcode = std::string(f[3]);
    d.attrs.home_zone = std::string(f[4]);
    if (d.sub.empty() || d.attrs.gender.empty() || d.attrs.postcode.empty() ||
        d.attrs.home_zone.empty()) {
      r.fail("empty field");
    }
    if (!seen.insert(d.sub).second) r.fail(fmt::format("duplicate subscriber {}", d.sub));
    rows.push_back(std::move(d));
  }
  return DemoTable(std::move(rows));
}

void write_zones_csv(const fs::path& path, const ZoneMap& zones, const CellMap& cells) {
  std::string out(kZonesHeader);
  out += '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto z = zones.zone_of(static_cast<CellIndex>(i));
    if (z == ZoneMap::kUnmapped) continue;
    out += fmt::format("{},{}\n", cells.id(static_cast<CellIndex>(i)), zones.name(z));
  }
  write_file(path, out);
}

ZoneMap read_zones_csv(const fs::path& path, const CellMap& cells) {
  CsvReader r(path, kZonesHeader);
  std::vector<std::pair<std::string, std::string>> assignment;
  std::vector<std::string_view> f;
  std::set<std::string, std::less<>> seen;
  while (r.next(f)) {
    if (f.size() != 2) r.fail("expected 2 fields");
    if (f[0].empty() || f[1].empty()) r.fail("empty field");
    if (!seen.emplace(f[0]).second) r.fail(fmt::format("cell {} mapped twice", f[0]));
    assignment.emplace_back(std::string(f[0]), std::string(f[1]));
  }
  return ZoneMap::from_assignment(cells, assignment);
}

void write_truth_jsonl(const fs::path& path, const GroundTruth& truth, const CellMap& cells) {
  std::string out;
  for (const Trip& t : truth.trips) {
    ordered_json j;
    j["sub"] = t.sub;
    j["origin_zone"] = t.origin_zone;
    j["dest_zone"] = t.dest_zone;
    j["depart_ts"] = t.depart_ts;
    j["arrive_ts"] = t.arrive_ts;
    auto& arr = j["cells"] = ordered_json::array();
    for (CellIndex c : t.cells) arr.push_back(cells.id(c));
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<Trip> read_truth_jsonl(const fs::path& path, const CellMap& cells) {
  const std::string data = read_file(path);
  std::vector<Trip> trips;
  std::istringstream in(data);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Trip t;
      t.sub = j.at("sub").get<std::string>();
      t.origin_zone = j.at("origin_zone").get<std::string>();
      t.dest_zone = j.at("dest_zone").get<std::string>();
      t.depart_ts = j.at("depart_ts").get<Timestamp>();
      t.arrive_ts = j.at("arrive_ts").get<Timestamp>();
      for (const auto& c : j.at("cells")) {
        auto idx = cells.find(c.get<std::string>());
        if (!idx) throw ParseError(path.filename().string(), lineno, "unknown cell in trip");
        t.cells.push_back(*idx);
      }
      trips.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string(), lineno, e.what());
    }
  }
  return trips;
}

}  // namespace mobmine
