#include "mobmine/attack.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include <fmt/format.h>
#include <json.hpp>

#include "mobmine/formats.hpp"

namespace mobmine {

AuxDirectory::AuxDirectory(std::vector<AuxEntry> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const AuxEntry& a, const AuxEntry& b) { return a.label < b.label; });
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].label == entries_[i - 1].label) {
      throw InvalidConfig("duplicate aux label " + entries_[i].label);
    }
  }
}

AuxDirectory aux_directory(std::span<const Agent> agents, const ZoneMap& zones) {
  std::vector<AuxEntry> out;
  for (const Agent& a : agents) {
    out.push_back({a.sub_id, zones.name(zones.zone_of(a.home_cell)), zones.name(zones.zone_of(a.work_cell))});
  }
  return AuxDirectory(std::move(out));
}

void write_aux_csv(const std::filesystem::path& path, const AuxDirectory& aux) {
  std::string out(kAuxHeader);
  out += '\n';
  for (const AuxEntry& e : aux.entries()) out += fmt::format("{},{},{}\n", e.label, e.home_zone, e.work_zone);
  write_file(path, out);
}

AuxDirectory read_aux_csv(const std::filesystem::path& path) {
  CsvReader r(path, kAuxHeader);
  std::vector<std::string_view> f;
  std::vector<AuxEntry> out;
  while (r.next(f)) {
    if (f.size() != 3) r.fail("expected 3 fields");
    out.push_back({std::string(f[0]), std::string(f[1]), std::string(f[2])});
  }
  return AuxDirectory(std::move(out));
}

// ---------------------------------------------------------------------------

namespace {

struct Tally {
  std::size_t targets = 0;
  std::size_t unique = 0;
  std::size_t correct = 0;
  std::size_t with_candidates = 0;
  double candidate_sum = 0.0;
  double max_conf = 0.0;

  void add(std::size_t candidates) {
    ++targets;
    if (candidates == 0) return;
    ++with_candidates;
    candidate_sum += static_cast<double>(candidates);
    max_conf = std::max(max_conf, 1.0 / static_cast<double>(candidates));
    if (candidates == 1) ++unique;
  }

  ReidReport report(std::string name) const {
    ReidReport r;
    r.dataset = std::move(name);
    r.n_targets = targets;
    r.n_unique_matches = unique;
    r.reid_rate = targets == 0 ? 0.0 : static_cast<double>(unique) / static_cast<double>(targets);
    r.mean_candidate_set_size = with_candidates == 0 ? 0.0 : candidate_sum / static_cast<double>(with_candidates);
    r.max_confidence = max_conf;
    return r;
  }
};

std::set<std::string> modal_zones(const std::map<std::string, std::size_t>& counts) {
  std::size_t best = 0;
  for (const auto& [_, c] : counts) best = std::max(best, c);
  std::set<std::string> out;
  for (const auto& [z, c] : counts) {
    if (c == best && c > 0) out.insert(z);
  }
  return out;
}

bool in_hours(Timestamp ts, int from, int to) {
  const int h = hour_of_day(ts);
  return h >= from && h < to;
}

}  // namespace

ReidReport attack_traces(std::string dataset, const AnnotatedStream& stream, const ZoneMap& zones,
                         const AuxDirectory& aux, const AttackConfig& cfg, const TruthMap* truth) {
  const auto by_pseud = events_by_pseudonym(stream);
  Tally t;
  for (std::size_t p = 0; p < by_pseud.size(); ++p) {
    if (by_pseud[p].empty()) continue;
    std::map<std::string, std::size_t> night, work;
    for (std::uint32_t e : by_pseud[p]) {
      const Event& ev = stream.events[e];
      const auto z = zones.zone_of(ev.cell);
      if (z == ZoneMap::kUnmapped) continue;
      if (in_hours(ev.ts, cfg.night_from, cfg.night_to)) ++night[zones.name(z)];
      if (in_hours(ev.ts, cfg.work_from, cfg.work_to)) ++work[zones.name(z)];
    }
    const auto home = modal_zones(night);
    const auto office = modal_zones(work);
    const AuxEntry* match = nullptr;
    std::size_t n = 0;
    for (const AuxEntry& a : aux.entries()) {
      if (home.contains(a.home_zone) && office.contains(a.work_zone)) {
        ++n;
        match = &a;
      }
    }
    t.add(n);
    if (n == 1 && truth != nullptr) {
      auto it = truth->find(stream.pseudonyms[p]);
      if (it != truth->end() && it->second == match->label) ++t.correct;
    }
  }
  ReidReport r = t.report(std::move(dataset));
  if (truth != nullptr) r.n_correct = t.correct;
  return r;
}

ReidReport attack_density(std::span<const DensityPoint> points) {
  ReidReport r;
  r.dataset = "density_graph";
  r.n_targets = points.size();
  return r;
}

ReidReport attack_cloak(const CloakResult& cloaked) {
  Tally t;
  for (const CloakRecord& rec : cloaked.records) t.add(rec.users);
  return t.report("cloaked");
}

ReidReport attack_flagship(const AnonymizedDataset& ds, const ZoneMap& zones, const AuxDirectory& aux) {
  std::map<std::uint32_t, const DemoClass*> classes;
  for (const DemoClass& c : ds.classes) classes[c.id] = &c;
  std::map<std::uint32_t, std::size_t> candidates_of_class;
  for (const auto& [id, c] : classes) {
    std::size_t n = 0;
    for (const AuxEntry& a : aux.entries()) {
      bool ok = false;
      if (c->zone_class == kAllZones) {
        ok = true;
      } else if (a.home_zone == c->zone_class) {
        ok = true;
      } else {
        auto parent = zones.parent_of(a.home_zone);
        ok = parent && *parent == c->zone_class && c->zone_level == 1;
      }
      n += ok;
    }
    candidates_of_class[id] = n;
  }
  Tally t;
  for (const AnonWindow& w : ds.windows) {
    auto it = candidates_of_class.find(w.class_id);
    t.add(it == candidates_of_class.end() ? 0 : it->second);
  }
  return t.report("flagship");
}

void write_reid_report(const std::filesystem::path& path, std::span<const ReidReport> reports) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const ReidReport& r : reports) {
    nlohmann::ordered_json e;
    e["dataset"] = r.dataset;
    e["n_targets"] = r.n_targets;
    e["n_unique_matches"] = r.n_unique_matches;
    e["n_correct"] = r.n_correct ? nlohmann::ordered_json(*r.n_correct) : nlohmann::ordered_json();
    e["reid_rate"] = r.reid_rate;
    e["mean_candidate_set_size"] = r.mean_candidate_set_size;
    e["max_confidence"] = r.max_confidence;
    j.push_back(std::move(e));
  }
  write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Independent scanner. Deliberately naive: string keys, std::chrono calendar
// arithmetic, its own route reconstruction.

namespace {

const char* const kDays[] = {"MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN"};

std::string label_at(Timestamp ts, TimeBucketing b) {
  using namespace std::chrono;
  const sys_seconds tp{seconds{ts}};
  const auto day = floor<days>(tp);
  const auto hour = duration_cast<hours>(tp - day).count();
  const unsigned iso = weekday{day}.iso_encoding();  // 1 = Monday
  switch (b) {
    case TimeBucketing::HourOfWeek: return fmt::format("{}_{:02d}", kDays[iso - 1], hour);
    case TimeBucketing::HourOfDay: return fmt::format("H{:02d}", hour);
    case TimeBucketing::None: return "ALL";
  }
  return "";
}

std::string label_of_bucket(int bucket, TimeBucketing b) {
  switch (b) {
    case TimeBucketing::HourOfWeek:
      if (bucket < 0 || bucket >= 168) return "?";
      return fmt::format("{}_{:02d}", kDays[bucket / 24], bucket % 24);
    case TimeBucketing::HourOfDay: return fmt::format("H{:02d}", bucket);
    case TimeBucketing::None: return "ALL";
  }
  return "?";
}

std::vector<std::pair<std::string, Timestamp>> rebuild_route(const SpaceTimePath& p, const CellMap& cells) {
  std::vector<std::pair<std::string, Timestamp>> pts;
  pts.emplace_back(cells.id(p.origin_cell), p.depart_ts);
  for (const Hop& h : p.hops) pts.emplace_back(cells.id(h.cell), h.first_ts);
  pts.emplace_back(cells.id(p.dest_cell), p.arrive_ts);
  std::vector<std::pair<std::string, Timestamp>> out;
  for (auto& pt : pts) {
    if (out.empty() || out.back().first != pt.first) out.push_back(std::move(pt));
  }
  return out;
}

}  // namespace

KanonCheck verify_kanonymity(const AnonymizedDataset& ds, const TimeGeography& raw,
                             const CellMap& cells, std::size_t k,
                             const std::vector<std::pair<std::string, DemoAttributes>>* demographics,
                             const ZoneMap* zones) {
  KanonCheck out;
  auto fail = [&](std::string what) {
    out.pass = false;
    if (out.counterexamples.size() < kMaxCounterexamples) out.counterexamples.push_back(std::move(what));
  };
  const std::size_t L = ds.params.L;

  std::map<std::string, std::set<std::string>> who;
  for (const SpaceTimePath& p : raw.paths) {
    const auto route = rebuild_route(p, cells);
    if (route.size() < L) continue;
    for (std::size_t i = 0; i + L <= route.size(); ++i) {
      std::string key;
      for (std::size_t j = 0; j < L; ++j) key += route[i + j].first + "|";
      key += label_at(route[i].second, ds.params.bucketing);
      who[key].insert(raw.pseudonyms[p.pseud]);
    }
  }

  std::set<std::uint32_t> class_ids;
  for (const DemoClass& c : ds.classes) class_ids.insert(c.id);

  for (const AnonWindow& w : ds.windows) {
    ++out.windows_checked;
    std::string key, shown;
    for (CellIndex c : w.cells) key += cells.id(c) + "|", shown += cells.id(c) + " ";
    const std::string label = label_of_bucket(w.bucket, ds.params.bucketing);
    key += label;
    shown += "@ " + label;
    if (w.cells.size() != L) fail(fmt::format("window [{}] has length {}, expected {}", shown, w.cells.size(), L));
    if (w.support < k) fail(fmt::format("window [{}] published with support {} < k={}", shown, w.support, k));
    auto it = who.find(key);
    const std::size_t recount = it == who.end() ? 0 : it->second.size();
    if (recount < k) fail(fmt::format("window [{}] recounted support {} < k={}", shown, recount, k));
    if (recount < w.support) {
      fail(fmt::format("window [{}] claims support {} but only {} pseudonyms carry it", shown, w.support, recount));
    }
    if (!class_ids.contains(w.class_id)) fail(fmt::format("window [{}] references missing class {}", shown, w.class_id));
  }

  for (const DemoClass& c : ds.classes) {
    ++out.classes_checked;
    if (c.member_count < k) fail(fmt::format("class {} has {} members < k={}", c.id, c.member_count, k));
    if (c.age_lo > c.age_hi) fail(fmt::format("class {} has an empty age interval", c.id));
    if (demographics == nullptr) continue;
    std::size_t inside = 0;
    for (const auto& [_, d] : *demographics) {
      if (d.age < c.age_lo || d.age > c.age_hi) continue;
      if (c.gender_class != kAnyGender && d.gender != c.gender_class) continue;
      if (c.zone_class != kAllZones && d.home_zone != c.zone_class) {
        const auto parent = zones != nullptr ? zones->parent_of(d.home_zone) : std::nullopt;
        if (!parent || *parent != c.zone_class) continue;
      }
      ++inside;
    }
    if (inside < k) fail(fmt::format("class {} box holds {} records < k={}", c.id, inside, k));
  }
  return out;
}

void write_kanon_check(const std::filesystem::path& path, const KanonCheck& check) {
  nlohmann::ordered_json j;
  j["pass"] = check.pass;
  j["windows_checked"] = check.windows_checked;
  j["classes_checked"] = check.classes_checked;
  j["counterexamples"] = check.counterexamples;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace mobmine
