#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "mobmine/formats.hpp"
#include "mobmine/odmatrix.hpp"
#include "support.hpp"

using namespace mobmine;
using namespace mobmine::testing;

namespace {

constexpr Timestamp kMon8 = 1704096000;

std::vector<SpaceTimePath> many_paths(std::size_t n, Timestamp base, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SpaceTimePath> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto a = static_cast<CellIndex>(uniform_index(rng, 12));
    const auto b = static_cast<CellIndex>(uniform_index(rng, 12));
    std::vector<CellIndex> route;
    for (CellIndex c = a;; c = c < b ? c + 1 : c - 1) {
      route.push_back(c);
      if (c == b) break;
    }
    if (route.size() < 2) route.push_back(a == 0 ? 1 : a - 1);
    const Timestamp t = base + static_cast<Timestamp>(uniform_index(rng, 48)) * 1800;
    out.push_back(make_path(i + 1, static_cast<SubIndex>(i % 40), route, t));
  }
  return out;
}

}  // namespace

TEST(OdMatrix, SinglePathSingleEntry) {
  const CellMap net = line_network(6, 3);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const std::vector<SpaceTimePath> paths{make_path(1, 0, {0, 1, 2, 3, 4}, kMon8 + 600)};
  const auto m = build_od(paths, zones, 3600);
  ASSERT_EQ(m.flows.size(), 1u);
  const auto& [key, flow] = *m.flows.begin();
  EXPECT_EQ(m.zones[key.origin], "LA00");
  EXPECT_EQ(m.zones[key.dest], "LA01");
  EXPECT_EQ(key.t_start, kMon8);
  EXPECT_EQ(flow, 1u);
}

TEST(OdMatrix, EmptyInput) {
  const CellMap net = line_network(4);
  const auto m = build_od({}, ZoneMap::per_cell(net), 3600);
  EXPECT_TRUE(m.flows.empty());
  EXPECT_EQ(m.total(), 0u);
  EXPECT_THROW(build_od({}, ZoneMap::per_cell(net), 0), InvalidConfig);
}

TEST(OdMatrix, FlowConservation) {
  const CellMap net = line_network(12, 4);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const auto paths = many_paths(500, kMon8, 1);
  const auto m = build_od(paths, zones, 3600);
  std::map<std::uint32_t, std::uint64_t> out_of, into;
  for (const auto& [k, f] : m.flows) out_of[k.origin] += f, into[k.dest] += f;
  std::map<std::uint32_t, std::uint64_t> dep, arr;
  for (const auto& p : paths) ++dep[zones.zone_of(p.origin_cell)], ++arr[zones.zone_of(p.dest_cell)];
  EXPECT_EQ(out_of, dep);
  EXPECT_EQ(into, arr);
  EXPECT_EQ(m.total(), paths.size());
}

TEST(OdMatrix, SerialMatchesParallel) {
  const CellMap net = line_network(12, 4);
  const ZoneMap zones = ZoneMap::per_cell(net);
  const auto paths = many_paths(2000, kMon8, 2);
  EXPECT_EQ(build_od(paths, zones, 3600, ExecPolicy::Serial), build_od(paths, zones, 3600, ExecPolicy::Parallel));
}

TEST(OdMatrix, ExportImportRoundTrip) {
  const CellMap net = line_network(12, 4);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const auto m = build_od(many_paths(300, kMon8, 3), zones, 1800);
  TempDir d;
  export_od(d / "od.csv", m);
  EXPECT_EQ(import_od(d / "od.csv", zones, 1800, OdSource::Raw), m);
  EXPECT_THROW(import_od(d / "od.csv", zones, 3600, OdSource::Raw), ParseError);
}

TEST(OdMatrix, ZeroMatrixExportsHeaderOnly) {
  const CellMap net = line_network(4);
  TempDir d;
  export_od(d / "od.csv", build_od({}, ZoneMap::per_cell(net), 3600));
  EXPECT_EQ(read_file(d / "od.csv"), std::string(kOdHeader) + "\n");
}

TEST(OdMatrix, ExportOrderIsStable) {
  const CellMap net = line_network(12, 4);
  const ZoneMap zones = ZoneMap::per_cell(net);
  auto paths = many_paths(200, kMon8, 4);
  TempDir d;
  export_od(d / "a.csv", build_od(paths, zones, 3600));
  std::reverse(paths.begin(), paths.end());
  export_od(d / "b.csv", build_od(paths, zones, 3600));
  EXPECT_EQ(read_file(d / "a.csv"), read_file(d / "b.csv"));
}

TEST(OdMatrix, HeatmapCoversEveryPair) {
  const CellMap net = line_network(6, 2);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  TempDir d;
  export_heatmap(d / "h.csv", build_od({}, zones, 3600));
  const std::string text = read_file(d / "h.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1 + 3 * 3);
}

TEST(OdMatrix, UnmappedEndpointRejected) {
  const CellMap net = line_network(4);
  const ZoneMap partial = ZoneMap::from_assignment(net, {{"c00", "A"}, {"c01", "A"}});
  const std::vector<SpaceTimePath> paths{make_path(1, 0, {0, 1, 2, 3}, kMon8)};
  EXPECT_THROW(build_od(paths, partial, 3600), ReferentialError);
}

TEST(OdMatrix, MergeOfDisjointPeriodsIsSum) {
  const CellMap net = line_network(12, 4);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  auto week1 = many_paths(300, kMon8, 5);
  auto week2 = many_paths(300, kMon8 + kSecondsPerWeek, 6);
  for (auto& p : week2) p.id += 1000;
  std::vector<SpaceTimePath> both = week1;
  both.insert(both.end(), week2.begin(), week2.end());
  EXPECT_EQ(merge(build_od(week1, zones, 3600), build_od(week2, zones, 3600)), build_od(both, zones, 3600));
  EXPECT_THROW(merge(build_od(week1, zones, 3600), build_od(week2, zones, 1800)), InvalidConfig);
}

TEST(OdMatrix, AnonymizedTotalBoundedByRaw) {
  const CellMap net = line_network(12, 4);
  const ZoneMap zones = ZoneMap::from_location_areas(net);
  const auto paths = many_paths(1500, kMon8, 7);
  const auto routes = mine_routes(route_sequences(paths), {});
  const auto raw = build_od(paths, zones, 3600);
  for (std::size_t k : {1, 2, 5}) {
    AnonymizedDataset ds;
    ds.params = {k, 3, TimeBucketing::HourOfWeek, "t"};
    ds.windows = kanon_windows(trace_paths(paths), {k, 3}).windows;
    const auto anon = build_od_anonymized(ds, routes, zones);
    EXPECT_LE(anon.total(), raw.total()) << "k=" << k;
    EXPECT_EQ(anon.source, OdSource::Anonymized);
  }
}
