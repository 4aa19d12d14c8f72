#include "mobmine/odmatrix.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <omp.h>

#include "mobmine/formats.hpp"

namespace mobmine {

std::string_view to_string(OdSource s) { return s == OdSource::Raw ? "raw" : "anonymized-estimate"; }

std::uint64_t ODMatrix::total() const {
  std::uint64_t t = 0;
  for (const auto& [_, f] : flows) t += f;
  return t;
}

namespace {

ODMatrix empty_like(const ZoneMap& zones, Timestamp bucketing, OdSource source) {
  ODMatrix m;
  m.zones.assign(zones.names().begin(), zones.names().end());
  m.bucketing = bucketing;
  m.source = source;
  return m;
}

}  // namespace

ODMatrix build_od(std::span<const SpaceTimePath> paths, const ZoneMap& zones, Timestamp bucketing,
                  ExecPolicy policy) {
  if (bucketing <= 0) throw InvalidConfig("bucketing must be positive");
  std::set<std::string> offenders;
  for (const SpaceTimePath& p : paths) {
    if (zones.zone_of(p.origin_cell) == ZoneMap::kUnmapped) offenders.insert(path_label(p.id));
    if (zones.zone_of(p.dest_cell) == ZoneMap::kUnmapped) offenders.insert(path_label(p.id));
  }
  if (!offenders.empty()) {
    throw ReferentialError("path endpoints in unmapped cells", {offenders.begin(), offenders.end()});
  }

  ODMatrix m = empty_like(zones, bucketing, OdSource::Raw);
  auto key_of = [&](const SpaceTimePath& p) {
    return OdKey{zones.zone_of(p.origin_cell), zones.zone_of(p.dest_cell), floor_to(p.depart_ts, bucketing)};
  };
  if (policy == ExecPolicy::Serial) {
    for (const SpaceTimePath& p : paths) ++m.flows[key_of(p)];
    return m;
  }
  std::vector<std::map<OdKey, std::uint64_t>> locals(static_cast<std::size_t>(omp_get_max_threads()));
  const auto n = static_cast<std::int64_t>(paths.size());
#pragma omp parallel
  {
    auto& mine = locals[static_cast<std::size_t>(omp_get_thread_num())];
#pragma omp for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) ++mine[key_of(paths[static_cast<std::size_t>(i)])];
  }
  for (const auto& l : locals) {
    for (const auto& [k, f] : l) m.flows[k] += f;
  }
  return m;
}

ODMatrix build_od_anonymized(const AnonymizedDataset& ds, std::span<const RouteCluster> routes,
                             const ZoneMap& zones) {
  ODMatrix m = empty_like(zones, bucket_span_s(ds.params.bucketing), OdSource::Anonymized);
  const std::size_t L = ds.params.L;
  std::map<std::vector<CellIndex>, std::vector<const AnonWindow*>> by_cells;
  for (const AnonWindow& w : ds.windows) by_cells[w.cells].push_back(&w);

  std::set<std::string> offenders;
  for (const RouteCluster& r : routes) {
    const auto& rep = r.representative;
    if (rep.size() < L || L == 0) continue;
    const std::vector<CellIndex> first(rep.begin(), rep.begin() + static_cast<std::ptrdiff_t>(L));
    const std::vector<CellIndex> last(rep.end() - static_cast<std::ptrdiff_t>(L), rep.end());
    auto fi = by_cells.find(first);
    auto li = by_cells.find(last);
    if (fi == by_cells.end() || li == by_cells.end()) continue;
    const auto oz = zones.zone_of(rep.front());
    const auto dz = zones.zone_of(rep.back());
    if (oz == ZoneMap::kUnmapped || dz == ZoneMap::kUnmapped) {
      offenders.insert(fmt::format("route {}", r.id));
      continue;
    }
    std::size_t first_sum = 0, last_sum = 0;
    for (const AnonWindow* w : fi->second) first_sum += w->support;
    for (const AnonWindow* w : li->second) last_sum += w->support;
    const std::size_t est = std::min({r.support(), first_sum, last_sum});
    std::vector<double> weights;
    for (const AnonWindow* w : fi->second) weights.push_back(static_cast<double>(w->support));
    const auto alloc = largest_remainder(est, weights);
    for (std::size_t i = 0; i < alloc.size(); ++i) {
      if (alloc[i] == 0) continue;
      m.flows[{oz, dz, bucket_offset_s(fi->second[i]->bucket, ds.params.bucketing)}] += alloc[i];
    }
  }
  if (!offenders.empty()) {
    throw ReferentialError("route endpoints in unmapped cells", {offenders.begin(), offenders.end()});
  }
  return m;
}

ODMatrix merge(const ODMatrix& a, const ODMatrix& b) {
  if (a.zones != b.zones || a.bucketing != b.bucketing || a.source != b.source) {
    throw InvalidConfig("matrices are not compatible");
  }
  ODMatrix m = a;
  for (const auto& [k, f] : b.flows) m.flows[k] += f;
  return m;
}

void export_od(const std::filesystem::path& path, const ODMatrix& m) {
  std::string out(kOdHeader);
  out += '\n';
  for (const auto& [k, f] : m.flows) {
    if (f == 0) continue;
    fmt::format_to(std::back_inserter(out), "{},{},{},{},{}\n", m.zones[k.origin], m.zones[k.dest],
                   k.t_start, k.t_start + m.bucketing, f);
  }
  write_file(path, out);
}

ODMatrix import_od(const std::filesystem::path& path, const ZoneMap& zones, Timestamp bucketing,
                   OdSource source) {
  ODMatrix m = empty_like(zones, bucketing, source);
  CsvReader r(path, kOdHeader);
  std::vector<std::string_view> f;
  while (r.next(f)) {
    if (f.size() != 5) r.fail("expected 5 fields");
    auto o = zones.find(f[0]);
    auto d = zones.find(f[1]);
    if (!o || !d) r.fail("unknown zone");
    const Timestamp t0 = parse_int(r, f[2], "t_start");
    const Timestamp t1 = parse_int(r, f[3], "t_end");
    if (t1 - t0 != bucketing) r.fail("bucket width differs from bucketing");
    const long long flow = parse_int(r, f[4], "flow");
    if (flow < 0) r.fail("negative flow");
    if (flow > 0) m.flows[{*o, *d, t0}] += static_cast<std::uint64_t>(flow);
  }
  return m;
}

void export_heatmap(const std::filesystem::path& path, const ODMatrix& m) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint64_t> totals;
  for (const auto& [k, f] : m.flows) totals[{k.origin, k.dest}] += f;
  std::string out = "origin_zone,dest_zone,flow\n";
  for (std::uint32_t o = 0; o < m.zones.size(); ++o) {
    for (std::uint32_t d = 0; d < m.zones.size(); ++d) {
      auto it = totals.find({o, d});
      fmt::format_to(std::back_inserter(out), "{},{},{}\n", m.zones[o], m.zones[d],
                     it == totals.end() ? 0 : it->second);
    }
  }
  write_file(path, out);
}

}  // namespace mobmine
