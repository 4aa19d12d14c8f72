#include "mobmine/anonymizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>
#include <type_traits>
#include <unordered_map>

#include <boost/container/small_vector.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <omp.h>

#include "mobmine/formats.hpp"

namespace mobmine {

namespace {

constexpr std::array<std::string_view, 7> kDayNames = {"MON", "TUE", "WED", "THU",
                                                       "FRI", "SAT", "SUN"};
// 1970-01-05 00:00 UTC, the first Monday after the epoch.
constexpr Timestamp kFirstMonday = 4 * kSecondsPerDay;

}  // namespace

std::string_view to_string(TimeBucketing b) {
  switch (b) {
    case TimeBucketing::HourOfWeek: return "hour-of-week";
    case TimeBucketing::HourOfDay: return "hour-of-day";
    case TimeBucketing::None: return "none";
  }
  return "none";
}

std::optional<TimeBucketing> parse_bucketing(std::string_view s) {
  if (s == "hour-of-week") return TimeBucketing::HourOfWeek;
  if (s == "hour-of-day") return TimeBucketing::HourOfDay;
  if (s == "none") return TimeBucketing::None;
  return std::nullopt;
}

int bucket_of(Timestamp ts, TimeBucketing b) {
  switch (b) {
    case TimeBucketing::HourOfWeek: return day_of_week(ts) * 24 + hour_of_day(ts);
    case TimeBucketing::HourOfDay: return hour_of_day(ts);
    case TimeBucketing::None: return 0;
  }
  return 0;
}

std::string bucket_label(int bucket, TimeBucketing b) {
  switch (b) {
    case TimeBucketing::HourOfWeek:
      return fmt::format("{}_{:02d}", kDayNames[static_cast<std::size_t>(bucket / 24)], bucket % 24);
    case TimeBucketing::HourOfDay: return fmt::format("H{:02d}", bucket);
    case TimeBucketing::None: return "ALL";
  }
  return "ALL";
}

std::optional<int> parse_bucket_label(std::string_view label, TimeBucketing b) {
  auto two_digits = [](std::string_view s) -> std::optional<int> {
    if (s.size() != 2 || !std::isdigit(static_cast<unsigned char>(s[0])) ||
        !std::isdigit(static_cast<unsigned char>(s[1]))) {
      return std::nullopt;
    }
    const int h = (s[0] - '0') * 10 + (s[1] - '0');
    if (h > 23) return std::nullopt;
    return h;
  };
  switch (b) {
    case TimeBucketing::HourOfWeek: {
      if (label.size() != 6 || label[3] != '_') return std::nullopt;
      auto day = std::find(kDayNames.begin(), kDayNames.end(), label.substr(0, 3));
      auto h = two_digits(label.substr(4));
      if (day == kDayNames.end() || !h) return std::nullopt;
      return static_cast<int>(day - kDayNames.begin()) * 24 + *h;
    }
    case TimeBucketing::HourOfDay:
      if (label.size() != 3 || label[0] != 'H') return std::nullopt;
      return two_digits(label.substr(1));
    case TimeBucketing::None:
      if (label != "ALL") return std::nullopt;
      return 0;
  }
  return std::nullopt;
}

Timestamp bucket_offset_s(int bucket, TimeBucketing b) {
  return b == TimeBucketing::None ? 0 : static_cast<Timestamp>(bucket) * kSecondsPerHour;
}

Timestamp bucket_span_s(TimeBucketing b) {
  return b == TimeBucketing::None ? kSecondsPerWeek : kSecondsPerHour;
}

std::vector<TracePath> trace_paths(std::span<const SpaceTimePath> paths) {
  std::vector<TracePath> out;
  out.reserve(paths.size());
  for (const SpaceTimePath& p : paths) out.push_back({p.pseud, route_points(p)});
  return out;
}

void KanonConfig::validate() const {
  if (k < 1) throw InvalidConfig("k must be >= 1");
  if (L < 1) throw InvalidConfig("L must be >= 1");
}

// ---------------------------------------------------------------------------

namespace {

// Window cells followed by the bucket. Inline storage keeps short windows
// off the heap.
using WindowKey = boost::container::small_vector<std::uint32_t, 8>;

struct Tally {
  boost::container::small_vector<SubIndex, 2> subs;
  std::size_t occurrences = 0;
};

template <typename Map>
void count_path(const TracePath& p, const KanonConfig& cfg, Map& m, WindowKey& key) {
  if (p.points.size() < cfg.L) return;
  for (std::size_t i = 0; i + cfg.L <= p.points.size(); ++i) {
    key.clear();
    for (std::size_t j = 0; j < cfg.L; ++j) key.push_back(p.points[i + j].cell);
    key.push_back(static_cast<std::uint32_t>(bucket_of(p.points[i].ts, cfg.bucketing)));
    Tally& t = m[key];
    ++t.occurrences;
    if (t.subs.empty() || t.subs.back() != p.pseud) t.subs.push_back(p.pseud);
  }
}

template <typename Map>
KanonResult finish(Map& tallies, const KanonConfig& cfg) {
  KanonResult r;
  r.loss.distinct_windows = tallies.size();
  std::vector<std::pair<const WindowKey*, Tally*>> published;
  for (auto& [key, t] : tallies) {
    std::sort(t.subs.begin(), t.subs.end());
    t.subs.erase(std::unique(t.subs.begin(), t.subs.end()), t.subs.end());
    r.loss.window_occurrences += t.occurrences;
    if (t.subs.size() < cfg.k) continue;
    r.loss.published_occurrences += t.occurrences;
    published.emplace_back(&key, &t);
  }
  if constexpr (!std::is_same_v<Map, std::map<WindowKey, Tally>>) {
    std::sort(published.begin(), published.end(), [](const auto& a, const auto& b) { return *a.first < *b.first; });
  }
  r.windows.reserve(published.size());
  for (auto& [key, t] : published) {
    AnonWindow w;
    w.cells.assign(key->begin(), key->end() - 1);
    w.bucket = static_cast<int>(key->back());
    w.support = t->subs.size();
    w.supporters.assign(t->subs.begin(), t->subs.end());
    r.windows.push_back(std::move(w));
  }
  r.loss.published_windows = r.windows.size();
  r.loss.suppressed_window_fraction =
      r.loss.window_occurrences == 0
          ? 0.0
          : static_cast<double>(r.loss.window_occurrences - r.loss.published_occurrences) /
                static_cast<double>(r.loss.window_occurrences);
  return r;
}

// Cache-conscious variant: every window occurrence is hashed, radix
// partitioned on the top hash bits into cache-sized blocks, and each block is
// sorted and grouped on its own. Equal hashes are checked cell by cell.
struct Occurrence {
  std::uint64_t hash = 0;
  SubIndex pseud = 0;
  std::uint32_t path = 0;
  std::uint32_t pos = 0;
};

constexpr std::size_t kBlockTarget = 2048;

KanonResult kanon_partitioned(std::span<const TracePath> paths, const KanonConfig& cfg) {
  const std::size_t L = cfg.L;
  auto bucket_at = [&](const Occurrence& o) {
    return static_cast<std::uint32_t>(bucket_of(paths[o.path].points[o.pos].ts, cfg.bucketing));
  };
  auto same_window = [&](const Occurrence& a, const Occurrence& b) {
    const auto& pa = paths[a.path].points;
    const auto& pb = paths[b.path].points;
    for (std::size_t j = 0; j < L; ++j) {
      if (pa[a.pos + j].cell != pb[b.pos + j].cell) return false;
    }
    return bucket_at(a) == bucket_at(b);
  };

  std::vector<std::size_t> offset(paths.size() + 1, 0);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    const std::size_t n = paths[i].points.size();
    offset[i + 1] = offset[i] + (n >= L ? n - L + 1 : 0);
  }
  const std::size_t total = offset.back();
  std::vector<Occurrence> occ(total);
  const auto n_paths = static_cast<std::int64_t>(paths.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t ii = 0; ii < n_paths; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const TracePath& p = paths[i];
    for (std::size_t w = 0; w < offset[i + 1] - offset[i]; ++w) {
      std::uint64_t h = 0x243f6a8885a308d3ULL;
      for (std::size_t j = 0; j < L; ++j) h = mix64(h ^ p.points[w + j].cell);
      h = mix64(h ^ static_cast<std::uint64_t>(bucket_of(p.points[w].ts, cfg.bucketing)));
      occ[offset[i] + w] = {h, p.pseud, static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(w)};
    }
  }

  int bits = 0;
  while ((total >> bits) > kBlockTarget && bits < 20) ++bits;
  const std::size_t n_blocks = std::size_t{1} << bits;
  auto block_of = [bits](std::uint64_t h) { return bits == 0 ? std::size_t{0} : static_cast<std::size_t>(h >> (64 - bits)); };
  std::vector<std::size_t> start(n_blocks + 1, 0);
  for (const Occurrence& o : occ) ++start[block_of(o.hash) + 1];
  for (std::size_t b = 0; b < n_blocks; ++b) start[b + 1] += start[b];
  std::vector<Occurrence> part(total);
  {
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (const Occurrence& o : occ) part[fill[block_of(o.hash)]++] = o;
  }
  std::vector<Occurrence>().swap(occ);

  struct Partial {
    std::vector<AnonWindow> windows;
    std::size_t occurrences = 0;
    std::size_t published_occurrences = 0;
    std::size_t distinct = 0;
  };
  // `group` holds one window's occurrences ordered by pseudonym.
  auto emit = [&](Partial& out, std::span<const Occurrence> group) {
    ++out.distinct;
    out.occurrences += group.size();
    std::size_t support = 0;
    for (std::size_t i = 0; i < group.size(); ++i) support += i == 0 || group[i].pseud != group[i - 1].pseud;
    if (support < cfg.k) return;
    out.published_occurrences += group.size();
    AnonWindow w;
    const auto& pts = paths[group.front().path].points;
    for (std::size_t j = 0; j < L; ++j) w.cells.push_back(pts[group.front().pos + j].cell);
    w.bucket = static_cast<int>(bucket_at(group.front()));
    w.support = support;
    w.supporters.reserve(support);
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (i == 0 || group[i].pseud != group[i - 1].pseud) w.supporters.push_back(group[i].pseud);
    }
    out.windows.push_back(std::move(w));
  };

  std::vector<Partial> partials(static_cast<std::size_t>(omp_get_max_threads()));
  const auto n_b = static_cast<std::int64_t>(n_blocks);
#pragma omp parallel
  {
    Partial& mine = partials[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(dynamic, 16)
    for (std::int64_t bb = 0; bb < n_b; ++bb) {
      const auto b = static_cast<std::size_t>(bb);
      const std::span<Occurrence> block(part.data() + start[b], start[b + 1] - start[b]);
      std::sort(block.begin(), block.end(), [](const Occurrence& x, const Occurrence& y) {
        return std::tie(x.hash, x.pseud, x.path, x.pos) < std::tie(y.hash, y.pseud, y.path, y.pos);
      });
      for (std::size_t lo = 0; lo < block.size();) {
        std::size_t hi = lo + 1;
        bool uniform = true;
        while (hi < block.size() && block[hi].hash == block[lo].hash) {
          uniform = uniform && same_window(block[lo], block[hi]);
          ++hi;
        }
        if (uniform) {
          emit(mine, block.subspan(lo, hi - lo));
        } else {
          // Full-hash collision: split into identical windows.
          std::vector<Occurrence> rest(block.begin() + static_cast<std::ptrdiff_t>(lo),
                                       block.begin() + static_cast<std::ptrdiff_t>(hi));
          while (!rest.empty()) {
            std::vector<Occurrence> group, other;
            for (const Occurrence& o : rest) (same_window(rest.front(), o) ? group : other).push_back(o);
            emit(mine, group);
            rest.swap(other);
          }
        }
        lo = hi;
      }
    }
  }

  KanonResult r;
  for (Partial& p : partials) {
    r.loss.window_occurrences += p.occurrences;
    r.loss.published_occurrences += p.published_occurrences;
    r.loss.distinct_windows += p.distinct;
    std::move(p.windows.begin(), p.windows.end(), std::back_inserter(r.windows));
  }
  std::sort(r.windows.begin(), r.windows.end(), [](const AnonWindow& a, const AnonWindow& b) {
    return std::tie(a.cells, a.bucket) < std::tie(b.cells, b.bucket);
  });
  r.loss.published_windows = r.windows.size();
  r.loss.suppressed_window_fraction =
      r.loss.window_occurrences == 0
          ? 0.0
          : static_cast<double>(r.loss.window_occurrences - r.loss.published_occurrences) /
                static_cast<double>(r.loss.window_occurrences);
  return r;
}

}  // namespace

KanonResult kanon_windows(std::span<const TracePath> paths, const KanonConfig& cfg,
                          ExecPolicy policy) {
  cfg.validate();
  if (policy == ExecPolicy::Serial) {
    std::map<WindowKey, Tally> m;
    WindowKey key;
    for (const TracePath& p : paths) count_path(p, cfg, m, key);
    return finish(m, cfg);
  }
  return kanon_partitioned(paths, cfg);
}

std::vector<TracePath> expand_windows(std::span<const AnonWindow> windows, TimeBucketing b) {
  std::vector<TracePath> out;
  SubIndex next = 0;
  for (const AnonWindow& w : windows) {
    const Timestamp ts = kFirstMonday + bucket_offset_s(w.bucket, b);
    for (std::size_t s = 0; s < w.support; ++s) {
      TracePath p;
      p.pseud = next++;
      for (CellIndex c : w.cells) p.points.push_back({c, ts});
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<DemoRecordP> demo_records(const AnnotatedStream& stream) {
  std::vector<DemoRecordP> out;
  for (std::size_t i = 0; i < stream.demographics.size(); ++i) {
    if (stream.demographics[i]) out.push_back({static_cast<SubIndex>(i), *stream.demographics[i]});
  }
  return out;
}

namespace {

struct Mondrian {
  std::span<const DemoRecordP> records;
  std::vector<std::array<double, 3>> point;  // age, gender rank, zone rank
  std::array<double, 3> range{};
  std::size_t k = 1;
  std::vector<std::vector<std::size_t>> leaves;

  void split(std::vector<std::size_t> part) {
    std::size_t dim = 3;
    double widest = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      if (range[d] <= 0.0) continue;
      double lo = point[part[0]][d], hi = lo;
      for (std::size_t i : part) lo = std::min(lo, point[i][d]), hi = std::max(hi, point[i][d]);
      const double w = (hi - lo) / range[d];
      if (w > widest) widest = w, dim = d;
    }
    if (dim == 3) {
      leaves.push_back(std::move(part));
      return;
    }
    std::vector<double> vals;
    for (std::size_t i : part) vals.push_back(point[i][dim]);
    std::sort(vals.begin(), vals.end());
    const double median = vals[(vals.size() - 1) / 2];
    bool inclusive = vals.back() > median;  // else split below the median
    std::vector<std::size_t> left, right;
    for (std::size_t i : part) {
      const double v = point[i][dim];
      ((inclusive ? v <= median : v < median) ? left : right).push_back(i);
    }
    if (left.size() < k || right.size() < k) {
      leaves.push_back(std::move(part));
      return;
    }
    split(std::move(left));
    split(std::move(right));
  }
};

}  // namespace

AggregateResult interval_aggregate(std::span<const DemoRecordP> records, const ZoneMap& zones,
                                   std::size_t k) {
  if (k < 1) throw InvalidConfig("k must be >= 1");
  AggregateResult out;
  if (records.empty()) return out;

  std::vector<std::string> parents;
  std::vector<std::string> missing;
  for (const DemoRecordP& r : records) {
    auto p = zones.parent_of(r.attrs.home_zone);
    if (!p) {
      missing.push_back(r.attrs.home_zone);
      parents.emplace_back();
    } else {
      parents.push_back(*p);
    }
  }
  if (!missing.empty()) {
    std::sort(missing.begin(), missing.end());
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    throw ReferentialError("demographics reference unknown zones", missing);
  }

  std::set<std::string> genders;
  std::set<std::pair<std::string, std::string>> zone_keys;
  for (std::size_t i = 0; i < records.size(); ++i) {
    genders.insert(records[i].attrs.gender);
    zone_keys.emplace(parents[i], records[i].attrs.home_zone);
  }
  auto rank = [](const auto& set, const auto& v) {
    return static_cast<double>(std::distance(set.begin(), set.find(v)));
  };

  Mondrian m;
  m.records = records;
  m.k = k;
  for (std::size_t i = 0; i < records.size(); ++i) {
    m.point.push_back({static_cast<double>(records[i].attrs.age), rank(genders, records[i].attrs.gender),
                       rank(zone_keys, std::pair{parents[i], records[i].attrs.home_zone})});
  }
  for (std::size_t d = 0; d < 3; ++d) {
    double lo = m.point[0][d], hi = lo;
    for (const auto& p : m.point) lo = std::min(lo, p[d]), hi = std::max(hi, p[d]);
    m.range[d] = hi - lo;
  }

  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), 0);
  if (records.size() < k) {
    m.leaves.push_back(std::move(all));
  } else {
    m.split(std::move(all));
  }

  out.class_of.assign(records.size(), 0);
  double width_sum = 0.0;
  for (const auto& leaf : m.leaves) {
    DemoClass c;
    c.id = static_cast<std::uint32_t>(out.classes.size() + 1);
    c.member_count = leaf.size();
    c.undersized = leaf.size() < k;
    c.age_lo = c.age_hi = records[leaf[0]].attrs.age;
    bool same_gender = true, same_zone = true, same_parent = true;
    for (std::size_t i : leaf) {
      const auto& a = records[i].attrs;
      c.age_lo = std::min(c.age_lo, a.age);
      c.age_hi = std::max(c.age_hi, a.age);
      same_gender &= a.gender == records[leaf[0]].attrs.gender;
      same_zone &= a.home_zone == records[leaf[0]].attrs.home_zone;
      same_parent &= parents[i] == parents[leaf[0]];
      out.class_of[i] = c.id;
    }
    c.gender_class = same_gender ? records[leaf[0]].attrs.gender : std::string(kAnyGender);
    c.gender_level = same_gender ? 0 : 1;
    if (same_zone) {
      c.zone_class = records[leaf[0]].attrs.home_zone;
    } else if (same_parent) {
      c.zone_class = parents[leaf[0]];
      c.zone_level = 1;
    } else {
      c.zone_class = std::string(kAllZones);
      c.zone_level = 2;
    }
    width_sum += static_cast<double>(c.age_hi - c.age_lo) * static_cast<double>(leaf.size());
    out.classes.push_back(std::move(c));
  }
  out.mean_age_interval_width = width_sum / static_cast<double>(records.size());
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::optional<std::uint32_t>> class_join(std::span<const DemoRecordP> records,
                                                     const AggregateResult& agg,
                                                     std::size_t n_pseudonyms) {
  std::vector<std::optional<std::uint32_t>> out(n_pseudonyms);
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].pseud >= n_pseudonyms) throw InvalidConfig("record pseudonym out of range");
    out[records[i].pseud] = agg.class_of[i];
  }
  return out;
}

namespace {

// Larger is more general.
auto generality(const DemoClass& c) {
  return std::tuple(c.zone_level, c.gender_level, c.age_hi - c.age_lo);
}

}  // namespace

AnonymizedDataset assemble(KanonResult windows, AggregateResult classes,
                           std::span<const std::optional<std::uint32_t>> class_of_pseud,
                           AnonParams params) {
  for (const DemoClass& c : classes.classes) {
    if (c.undersized) {
      throw PrivacyGateError(fmt::format("class {} has {} members, fewer than k={}; publication refused",
                                         c.id, c.member_count, params.k));
    }
  }
  std::unordered_map<std::uint32_t, const DemoClass*> by_id;
  for (const DemoClass& c : classes.classes) by_id[c.id] = &c;

  AnonymizedDataset ds;
  ds.params = std::move(params);
  std::map<std::uint32_t, std::size_t> votes;
  for (AnonWindow& w : windows.windows) {
    votes.clear();
    for (SubIndex s : w.supporters) {
      if (s >= class_of_pseud.size() || !class_of_pseud[s]) {
        throw PrivacyGateError("window supporter without a demographic class");
      }
      ++votes[*class_of_pseud[s]];
    }
    const DemoClass* best = nullptr;
    std::size_t best_votes = 0;
    for (const auto& [id, v] : votes) {
      const DemoClass* c = by_id.at(id);
      if (v > best_votes || (v == best_votes && generality(*c) > generality(*best))) {
        best = c;
        best_votes = v;
      }
    }
    w.class_id = best != nullptr ? best->id : 0;
  }
  ds.windows = std::move(windows.windows);
  ds.classes = std::move(classes.classes);
  ds.loss = windows.loss;
  ds.loss.mean_age_interval_width = classes.mean_age_interval_width;
  int age_h = 0, gender_h = 0, zone_h = 0;
  for (const DemoClass& c : ds.classes) {
    age_h = std::max(age_h, c.age_hi > c.age_lo ? 1 : 0);
    gender_h = std::max(gender_h, c.gender_level);
    zone_h = std::max(zone_h, c.zone_level);
  }
  ds.loss.generalization_height = {{"age", age_h}, {"gender", gender_h}, {"zone", zone_h}};
  return ds;
}

// ---------------------------------------------------------------------------

namespace {

nlohmann::ordered_json params_json(const AnonParams& p) {
  nlohmann::ordered_json j;
  j["k"] = p.k;
  j["L"] = p.L;
  j["bucketing"] = std::string(to_string(p.bucketing));
  j["salt_id"] = p.salt_id;
  return j;
}

AnonParams params_from(const nlohmann::json& j) {
  AnonParams p;
  p.k = j.at("k").get<std::size_t>();
  p.L = j.at("L").get<std::size_t>();
  auto b = parse_bucketing(j.at("bucketing").get<std::string>());
  if (!b) throw Error("unknown bucketing in params");
  p.bucketing = *b;
  p.salt_id = j.at("salt_id").get<std::string>();
  return p;
}

}  // namespace

void write_anonymized(const std::filesystem::path& dir, const AnonymizedDataset& ds,
                      const CellMap& cells) {
  const auto params = params_json(ds.params);
  std::string anon = nlohmann::ordered_json{{"params", params}}.dump() + "\n";
  for (const AnonWindow& w : ds.windows) {
    nlohmann::ordered_json j;
    auto& cw = j["window"] = nlohmann::ordered_json::array();
    for (CellIndex c : w.cells) cw.push_back(cells.id(c));
    j["bucket"] = bucket_label(w.bucket, ds.params.bucketing);
    j["support"] = w.support;
    j["class"] = w.class_id;
    anon += j.dump();
    anon += '\n';
  }
  write_file(dir / "anon.jsonl", anon);

  nlohmann::ordered_json cj;
  cj["params"] = params;
  auto& arr = cj["classes"] = nlohmann::ordered_json::array();
  for (const DemoClass& c : ds.classes) {
    nlohmann::ordered_json j;
    j["class_id"] = c.id;
    j["age_interval"] = {c.age_lo, c.age_hi};
    j["gender_class"] = c.gender_class;
    j["zone_class"] = c.zone_class;
    j["member_count"] = c.member_count;
    j["generalization"] = {{"gender", c.gender_level}, {"zone", c.zone_level}};
    arr.push_back(std::move(j));
  }
  write_file(dir / "classes.json", cj.dump(2) + "\n");

  nlohmann::ordered_json lj;
  lj["params"] = params;
  lj["suppressed_window_fraction"] = ds.loss.suppressed_window_fraction;
  lj["mean_age_interval_width"] = ds.loss.mean_age_interval_width;
  lj["window_occurrences"] = ds.loss.window_occurrences;
  lj["published_occurrences"] = ds.loss.published_occurrences;
  lj["distinct_windows"] = ds.loss.distinct_windows;
  lj["published_windows"] = ds.loss.published_windows;
  auto& gh = lj["generalization_height"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ds.loss.generalization_height) gh[k] = v;
  write_file(dir / "loss.json", lj.dump(2) + "\n");
}

AnonymizedDataset read_anonymized(const std::filesystem::path& dir, const CellMap& cells) {
  AnonymizedDataset ds;
  std::istringstream in(read_file(dir / "anon.jsonl"));
  std::string line;
  std::size_t lineno = 0;
  try {
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto j = nlohmann::json::parse(line);
      if (lineno == 1) {
        ds.params = params_from(j.at("params"));
        continue;
      }
      AnonWindow w;
      for (const auto& c : j.at("window")) {
        auto idx = cells.find(c.get<std::string>());
        if (!idx) throw ReferentialError("window references unknown cell", {c.get<std::string>()});
        w.cells.push_back(*idx);
      }
      auto b = parse_bucket_label(j.at("bucket").get<std::string>(), ds.params.bucketing);
      if (!b) throw ParseError("anon.jsonl", lineno, "bad bucket label");
      w.bucket = *b;
      w.support = j.at("support").get<std::size_t>();
      w.class_id = j.at("class").get<std::uint32_t>();
      ds.windows.push_back(std::move(w));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("anon.jsonl", lineno, e.what());
  }

  try {
    const auto cj = nlohmann::json::parse(read_file(dir / "classes.json"));
    if (params_from(cj.at("params")) != ds.params) throw Error("classes.json params differ from anon.jsonl");
    for (const auto& j : cj.at("classes")) {
      DemoClass c;
      c.id = j.at("class_id").get<std::uint32_t>();
      c.age_lo = j.at("age_interval").at(0).get<int>();
      c.age_hi = j.at("age_interval").at(1).get<int>();
      c.gender_class = j.at("gender_class").get<std::string>();
      c.zone_class = j.at("zone_class").get<std::string>();
      c.member_count = j.at("member_count").get<std::size_t>();
      c.gender_level = j.at("generalization").at("gender").get<int>();
      c.zone_level = j.at("generalization").at("zone").get<int>();
      c.undersized = c.member_count < ds.params.k;
      ds.classes.push_back(std::move(c));
    }
    const auto lj = nlohmann::json::parse(read_file(dir / "loss.json"));
    ds.loss.suppressed_window_fraction = lj.at("suppressed_window_fraction").get<double>();
    ds.loss.mean_age_interval_width = lj.at("mean_age_interval_width").get<double>();
    ds.loss.window_occurrences = lj.at("window_occurrences").get<std::size_t>();
    ds.loss.published_occurrences = lj.at("published_occurrences").get<std::size_t>();
    ds.loss.distinct_windows = lj.at("distinct_windows").get<std::size_t>();
    ds.loss.published_windows = lj.at("published_windows").get<std::size_t>();
    for (const auto& [k, v] : lj.at("generalization_height").items()) {
      ds.loss.generalization_height[k] = v.get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("classes.json", 0, e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------

std::vector<DensityPoint> density_graph(const AnnotatedStream& stream, Timestamp bucket_s) {
  if (bucket_s <= 0) throw InvalidConfig("bucket must be positive");
  std::map<std::pair<CellIndex, Timestamp>, std::set<SubIndex>> m;
  for (const Event& e : stream.events) m[{e.cell, floor_to(e.ts, bucket_s)}].insert(e.sub);
  std::vector<DensityPoint> out;
  out.reserve(m.size());
  for (const auto& [k, subs] : m) out.push_back({k.first, k.second, subs.size()});
  return out;
}

void write_density_csv(const std::filesystem::path& path, std::span<const DensityPoint> pts,
                       const CellMap& cells) {
  std::string out = "cell,t_start,count\n";
  for (const DensityPoint& p : pts) out += fmt::format("{},{},{}\n", cells.id(p.cell), p.t_start, p.count);
  write_file(path, out);
}

std::vector<DensityPoint> read_density_csv(const std::filesystem::path& path, const CellMap& cells) {
  CsvReader r(path, "cell,t_start,count");
  std::vector<std::string_view> f;
  std::vector<DensityPoint> out;
  while (r.next(f)) {
    if (f.size() != 3) r.fail("expected 3 fields");
    auto c = cells.find(f[0]);
    if (!c) r.fail("unknown cell");
    out.push_back({*c, parse_int(r, f[1], "t_start"), static_cast<std::size_t>(parse_int(r, f[2], "count"))});
  }
  return out;
}

AnnotatedStream rotate_pseudonyms(const AnnotatedStream& stream, std::optional<Timestamp> period_s,
                                  std::uint64_t seed) {
  if (!period_s) return stream;
  if (*period_s <= 0) throw InvalidConfig("rotation period must be positive");
  std::map<std::pair<SubIndex, Timestamp>, std::string> ids;
  for (const Event& e : stream.events) {
    const Timestamp seg = floor_to(e.ts, *period_s) / *period_s;
    auto [it, fresh] = ids.try_emplace({e.sub, seg});
    if (fresh) it->second = sha256_hex(fmt::format("{}:{}:{}", seed, stream.pseudonyms[e.sub], seg));
  }
  AnnotatedStream out;
  for (const auto& [_, id] : ids) out.pseudonyms.push_back(id);
  std::sort(out.pseudonyms.begin(), out.pseudonyms.end());
  std::map<std::pair<SubIndex, Timestamp>, SubIndex> index;
  for (const auto& [k, id] : ids) {
    index[k] = static_cast<SubIndex>(
        std::lower_bound(out.pseudonyms.begin(), out.pseudonyms.end(), id) - out.pseudonyms.begin());
  }
  out.events.reserve(stream.events.size());
  for (const Event& e : stream.events) {
    const Timestamp seg = floor_to(e.ts, *period_s) / *period_s;
    out.events.push_back({e.ts, index.at({e.sub, seg}), e.kind, e.cell});
  }
  sort_events(out.events, out.pseudonyms);
  out.demographics.assign(out.pseudonyms.size(), std::nullopt);
  out.provenance = stream.provenance;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct QuadTree {
  double lat_lo, lat_hi, lon_lo, lon_hi;

  explicit QuadTree(const CellMap& cells) {
    lat_lo = lon_lo = std::numeric_limits<double>::max();
    lat_hi = lon_hi = std::numeric_limits<double>::lowest();
    for (const CellSite& c : cells.cells()) {
      lat_lo = std::min(lat_lo, c.lat), lat_hi = std::max(lat_hi, c.lat);
      lon_lo = std::min(lon_lo, c.lon), lon_hi = std::max(lon_hi, c.lon);
    }
  }

  std::string code(double lat, double lon, int depth) const {
    std::string s = "Q";
    double a0 = lat_lo, a1 = lat_hi, o0 = lon_lo, o1 = lon_hi;
    for (int d = 0; d < depth; ++d) {
      const double am = (a0 + a1) / 2, om = (o0 + o1) / 2;
      const bool north = lat >= am, east = lon >= om;
      s += static_cast<char>('0' + (north ? 2 : 0) + (east ? 1 : 0));
      (north ? a0 : a1) = am;
      (east ? o0 : o1) = om;
    }
    return s;
  }
};

}  // namespace

CloakResult cloak(const AnnotatedStream& stream, const CellMap& cells, const CloakConfig& cfg) {
  if (cfg.min_users < 1 || cfg.max_depth < 0 || cfg.slot_s <= 0) throw InvalidConfig("bad cloak config");
  CloakResult out;
  if (cells.empty()) return out;
  const QuadTree qt(cells);
  std::vector<std::vector<std::string>> codes(cells.size());
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (int d = 0; d <= cfg.max_depth; ++d) {
      codes[c].push_back(qt.code(cells[static_cast<CellIndex>(c)].lat, cells[static_cast<CellIndex>(c)].lon, d));
    }
  }
  // (slot, region) -> concurrent users
  std::map<std::pair<Timestamp, std::string>, std::set<SubIndex>> users;
  std::set<std::tuple<Timestamp, SubIndex, CellIndex>> visits;
  for (const Event& e : stream.events) {
    const Timestamp slot = floor_to(e.ts, cfg.slot_s);
    if (!visits.emplace(slot, e.sub, e.cell).second) continue;
    for (const std::string& code : codes[e.cell]) users[{slot, code}].insert(e.sub);
  }
  std::set<std::tuple<Timestamp, SubIndex, std::string>> emitted;
  for (const auto& [slot, sub, cell] : visits) {
    std::string region = "Q";
    std::size_t n = users[{slot, region}].size();
    bool found = false;
    for (int d = cfg.max_depth; d >= 0; --d) {
      const std::size_t u = users[{slot, codes[cell][static_cast<std::size_t>(d)]}].size();
      if (u >= cfg.min_users) {
        region = codes[cell][static_cast<std::size_t>(d)];
        n = u;
        found = true;
        break;
      }
    }
    if (!found) ++out.whole_map_fallbacks;
    if (emitted.emplace(slot, sub, region).second) out.records.push_back({slot, sub, region, n});
  }
  return out;
}

void write_cloak_csv(const std::filesystem::path& path, const CloakResult& c,
                     std::span<const std::string> pseudonyms) {
  std::string out = "slot,pseud,region,users\n";
  for (const CloakRecord& r : c.records) {
    out += fmt::format("{},{},{},{}\n", r.slot, pseudonyms[r.pseud], r.region, r.users);
  }
  write_file(path, out);
}

CloakResult read_cloak_csv(const std::filesystem::path& path) {
  CsvReader r(path, "slot,pseud,region,users");
  std::vector<std::string_view> f;
  CloakResult out;
  while (r.next(f)) {
    if (f.size() != 4) r.fail("expected 4 fields");
    out.records.push_back({parse_int(r, f[0], "slot"), 0, std::string(f[2]),
                           static_cast<std::size_t>(parse_int(r, f[3], "users"))});
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<std::uint32_t>> presence_zones(const AnnotatedStream& stream,
                                                       const ZoneMap& zones, Timestamp t0,
                                                       std::size_t n_slots, Timestamp slot_s) {
  const auto by_pseud = events_by_pseudonym(stream);
  std::vector<std::vector<std::uint32_t>> out(by_pseud.size(),
                                              std::vector<std::uint32_t>(n_slots, ZoneMap::kUnmapped));
  for (std::size_t p = 0; p < by_pseud.size(); ++p) {
    const auto& idx = by_pseud[p];
    if (idx.empty()) continue;
    std::size_t e = 0;
    std::uint32_t current = zones.zone_of(stream.events[idx[0]].cell);
    for (std::size_t s = 0; s < n_slots; ++s) {
      const Timestamp end = t0 + static_cast<Timestamp>(s + 1) * slot_s;
      while (e < idx.size() && stream.events[idx[e]].ts < end) {
        current = zones.zone_of(stream.events[idx[e]].cell);
        ++e;
      }
      out[p][s] = current;
    }
  }
  return out;
}

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

AnnotatedStream synthesize(const AnnotatedStream& source, const ZoneMap& zones, const CellMap& cells,
                           const SyntheticConfig& cfg) {
  if (cfg.slot_s <= 0) throw InvalidConfig("slot must be positive");
  AnnotatedStream out;
  out.provenance = source.provenance;
  if (source.events.empty()) return out;

  Timestamp lo = source.events.front().ts, hi = lo;
  for (const Event& e : source.events) lo = std::min(lo, e.ts), hi = std::max(hi, e.ts);
  const Timestamp t0 = floor_to(lo, cfg.slot_s);
  const auto n_slots = static_cast<std::size_t>((floor_to(hi, cfg.slot_s) - t0) / cfg.slot_s + 1);
  const auto pres = presence_zones(source, zones, t0, n_slots, cfg.slot_s);
  const std::size_t nz = zones.zone_count();
  const Timestamp slots_per_day = std::max<Timestamp>(1, kSecondsPerDay / cfg.slot_s);
  auto period = [&](std::size_t s) {
    return static_cast<std::size_t>(((t0 + static_cast<Timestamp>(s) * cfg.slot_s) % kSecondsPerDay) / cfg.slot_s) %
           static_cast<std::size_t>(slots_per_day);
  };

  std::vector<double> init(nz, 0.0);
  std::map<std::pair<std::size_t, std::uint32_t>, std::vector<double>> trans;
  std::vector<std::vector<std::size_t>> demo_pool(nz);
  std::vector<std::size_t> global_pool;
  std::size_t n_source = 0;
  for (std::size_t p = 0; p < pres.size(); ++p) {
    const auto& row = pres[p];
    if (row[0] == ZoneMap::kUnmapped) continue;
    ++n_source;
    init[row[0]] += 1.0;
    if (p < source.demographics.size() && source.demographics[p]) {
      demo_pool[row[0]].push_back(p);
      global_pool.push_back(p);
    }
    for (std::size_t s = 0; s + 1 < n_slots; ++s) {
      if (row[s] == ZoneMap::kUnmapped || row[s + 1] == ZoneMap::kUnmapped) continue;
      auto& t = trans[{period(s), row[s]}];
      if (t.empty()) t.assign(nz, 0.0);
      t[row[s + 1]] += 1.0;
    }
  }
  const std::size_t n = cfg.n_agents == 0 ? n_source : cfg.n_agents;
  Rng rng(derive_seed(cfg.seed, 0x5e17));

  std::vector<std::uint32_t> zone_of_agent;
  {
    const auto counts = largest_remainder(n, init);
    for (std::size_t z = 0; z < nz; ++z) zone_of_agent.insert(zone_of_agent.end(), counts[z], static_cast<std::uint32_t>(z));
    shuffle(zone_of_agent, rng);
  }
  std::vector<std::vector<std::uint32_t>> traj(n, std::vector<std::uint32_t>(n_slots));
  for (std::size_t a = 0; a < n; ++a) traj[a][0] = zone_of_agent[a];
  std::vector<std::vector<std::size_t>> groups(nz);
  for (std::size_t s = 0; s + 1 < n_slots; ++s) {
    for (auto& g : groups) g.clear();
    for (std::size_t a = 0; a < n; ++a) groups[traj[a][s]].push_back(a);
    for (std::size_t z = 0; z < nz; ++z) {
      auto& g = groups[z];
      if (g.empty()) continue;
      auto it = trans.find({period(s), static_cast<std::uint32_t>(z)});
      if (it == trans.end()) {
        for (std::size_t a : g) traj[a][s + 1] = static_cast<std::uint32_t>(z);
        continue;
      }
      const auto counts = largest_remainder(g.size(), it->second);
      shuffle(g, rng);
      std::size_t pos = 0;
      for (std::size_t to = 0; to < nz; ++to) {
        for (std::size_t c = 0; c < counts[to]; ++c) traj[g[pos++]][s + 1] = static_cast<std::uint32_t>(to);
      }
    }
  }

  std::vector<CellIndex> first_cell(nz, 0);
  std::vector<bool> seen(nz, false);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto z = zones.zone_of(static_cast<CellIndex>(c));
    if (z != ZoneMap::kUnmapped && !seen[z]) seen[z] = true, first_cell[z] = static_cast<CellIndex>(c);
  }

  for (std::size_t a = 0; a < n; ++a) out.pseudonyms.push_back(fmt::format("syn{:07d}", a + 1));
  out.demographics.assign(n, std::nullopt);
  auto draw = [&](const std::vector<std::size_t>& pool) {
    return *source.demographics[pool[uniform_index(rng, pool.size())]];
  };
  for (std::size_t a = 0; a < n; ++a) {
    const auto& pool = demo_pool[traj[a][0]].empty() ? global_pool : demo_pool[traj[a][0]];
    if (pool.empty()) continue;
    DemoAttributes d;
    d.age = draw(pool).age;
    d.gender = draw(pool).gender;
    d.postcode = draw(pool).postcode;
    d.home_zone = draw(pool).home_zone;
    out.demographics[a] = std::move(d);
  }
  out.events.reserve(n * n_slots);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t s = 0; s < n_slots; ++s) {
      out.events.push_back({t0 + static_cast<Timestamp>(s) * cfg.slot_s, static_cast<SubIndex>(a),
                            EventKind::Page, first_cell[traj[a][s]]});
    }
  }
  sort_events(out.events, out.pseudonyms);
  return out;
}

}  // namespace mobmine
