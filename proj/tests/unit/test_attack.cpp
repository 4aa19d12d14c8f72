#include <gtest/gtest.h>

#include <fmt/format.h>

#include "mobmine/attack.hpp"
#include "support.hpp"

using namespace mobmine;
using namespace mobmine::testing;

namespace {

constexpr Timestamp kMon = 1704067200;

// Subscriber i sleeps in c(i) and works in c(i + n).
AnnotatedStream commuters(const CellMap& net, std::size_t n, std::size_t home_offset = 0) {
  std::vector<Ev> ev;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = fmt::format("p{:03}", i);
    for (int day = 0; day < 3; ++day) {
      const Timestamp d = kMon + day * kSecondsPerDay;
      ev.push_back({p, d + 2 * 3600, net.id(static_cast<CellIndex>(i + home_offset))});
      ev.push_back({p, d + 11 * 3600, net.id(static_cast<CellIndex>(i + n))});
    }
  }
  return make_stream(net, ev);
}

AuxDirectory aux_for(const CellMap& net, std::size_t n) {
  std::vector<AuxEntry> e;
  for (std::size_t i = 0; i < n; ++i) {
    e.push_back({fmt::format("person{:03}", i), net.id(static_cast<CellIndex>(i)), net.id(static_cast<CellIndex>(i + n))});
  }
  return AuxDirectory(std::move(e));
}

struct Release {
  TimeGeography tg;
  AnonymizedDataset ds;
  std::vector<std::pair<std::string, DemoAttributes>> demo;
};

// n pseudonyms travel route A, 3 travel route B; ages spread so classes split.
Release release(std::size_t n_a, std::size_t k) {
  Release r;
  const std::vector<CellIndex> a{0, 1, 2, 3, 4}, b{5, 6, 7, 8};
  std::uint32_t id = 1;
  for (std::size_t i = 0; i < n_a + 3; ++i) {
    r.tg.pseudonyms.push_back(fmt::format("q{:03}", i));
    r.tg.paths.push_back(make_path(id++, static_cast<SubIndex>(i), i < n_a ? a : b, kMon + 8 * 3600));
  }
  std::vector<DemoRecordP> recs;
  for (std::size_t i = 0; i < r.tg.pseudonyms.size(); ++i) {
    DemoAttributes d{20 + static_cast<int>(i), "F", "00000", "c00"};
    recs.push_back({static_cast<SubIndex>(i), d});
    r.demo.emplace_back(r.tg.pseudonyms[i], d);
  }
  const CellMap net = line_network(10);
  const ZoneMap zones = ZoneMap::per_cell(net);
  const auto agg = interval_aggregate(recs, zones, k);
  r.ds = assemble(kanon_windows(trace_paths(r.tg.paths), {k, 3}), agg,
                  class_join(recs, agg, r.tg.pseudonyms.size()), {k, 3, TimeBucketing::HourOfWeek, "t"});
  return r;
}

}  // namespace

TEST(Attack, DensityNeverLinks) {
  const CellMap net = line_network(20);
  const auto d = density_graph(commuters(net, 10), 3600);
  const auto r = attack_density(d);
  EXPECT_EQ(r.n_unique_matches, 0u);
  EXPECT_DOUBLE_EQ(r.reid_rate, 0.0);
}

TEST(Attack, UniqueCommutersAllReidentified) {
  const CellMap net = line_network(20);
  const ZoneMap zones = ZoneMap::per_cell(net);
  const auto s = commuters(net, 10);
  TruthMap truth;
  for (std::size_t i = 0; i < 10; ++i) truth[fmt::format("p{:03}", i)] = fmt::format("person{:03}", i);
  const auto r = attack_traces("pseudonymized", s, zones, aux_for(net, 10), {}, &truth);
  EXPECT_EQ(r.n_targets, 10u);
  EXPECT_EQ(r.n_unique_matches, 10u);
  ASSERT_TRUE(r.n_correct.has_value());
  EXPECT_EQ(*r.n_correct, 10u);
  EXPECT_DOUBLE_EQ(r.reid_rate, 1.0);
  EXPECT_DOUBLE_EQ(r.max_confidence, 1.0);
}

TEST(Attack, CountsAreOrdered) {
  // Everyone sleeps in c00: homes collide, so candidate sets grow.
  const CellMap net = line_network(20);
  const ZoneMap zones = ZoneMap::from_location_areas(line_network(20, 4));
  const auto s = commuters(net, 10, 0);
  TruthMap truth;
  for (std::size_t i = 0; i < 10; ++i) truth[fmt::format("p{:03}", i)] = fmt::format("person{:03}", i);
  std::vector<AuxEntry> e;
  for (std::size_t i = 0; i < 10; ++i) e.push_back({fmt::format("person{:03}", i), "LA00", "LA02"});
  const auto r = attack_traces("coarse", s, zones, AuxDirectory(e), {}, &truth);
  ASSERT_TRUE(r.n_correct.has_value());
  EXPECT_LE(*r.n_correct, r.n_unique_matches);
  EXPECT_LE(r.n_unique_matches, r.n_targets);
}

TEST(Attack, FlagshipCandidatesAtLeastK) {
  const std::size_t k = 4;
  const Release r = release(6, k);
  const CellMap net = line_network(10);
  const ZoneMap zones = ZoneMap::per_cell(net);
  std::vector<AuxEntry> e;
  for (std::size_t i = 0; i < r.demo.size(); ++i) e.push_back({fmt::format("x{}", i), "c00", "c04"});
  const auto rep = attack_flagship(r.ds, zones, AuxDirectory(e));
  EXPECT_EQ(rep.n_targets, r.ds.windows.size());
  EXPECT_GE(rep.mean_candidate_set_size, static_cast<double>(k));
  EXPECT_LE(rep.max_confidence, 1.0 / static_cast<double>(k));
}

TEST(Verify, PassesOnAnonymizerOutput) {
  const Release r = release(6, 5);
  ASSERT_FALSE(r.ds.windows.empty());
  const CellMap net = line_network(10);
  const ZoneMap zones = ZoneMap::per_cell(net);
  const auto check = verify_kanonymity(r.ds, r.tg, net, 5, &r.demo, &zones);
  EXPECT_TRUE(check.pass);
  EXPECT_EQ(check.windows_checked, r.ds.windows.size());
  EXPECT_TRUE(check.counterexamples.empty());
}

TEST(Verify, InflatedSupportIsCaughtAndNamed) {
  // Route B has 3 real travellers; claim it as a window of support 5.
  Release r = release(6, 5);
  AnonWindow fake;
  fake.cells = {5, 6, 7};
  fake.bucket = bucket_of(kMon + 8 * 3600, TimeBucketing::HourOfWeek);
  fake.support = 5;
  fake.class_id = r.ds.classes.front().id;
  r.ds.windows.push_back(fake);
  const CellMap net = line_network(10);
  const auto check = verify_kanonymity(r.ds, r.tg, net, 5);
  EXPECT_FALSE(check.pass);
  ASSERT_FALSE(check.counterexamples.empty());
  EXPECT_NE(check.counterexamples.front().find("c05 c06 c07 @ MON_08"), std::string::npos)
      << check.counterexamples.front();
}

TEST(Verify, FourSupportersFailAtFive) {
  Release r = release(4, 4);
  ASSERT_FALSE(r.ds.windows.empty());
  const CellMap net = line_network(10);
  const auto check = verify_kanonymity(r.ds, r.tg, net, 5);
  EXPECT_FALSE(check.pass);
}

TEST(Verify, KOneAlwaysPasses) {
  const Release r = release(2, 1);
  const CellMap net = line_network(10);
  EXPECT_TRUE(verify_kanonymity(r.ds, r.tg, net, 1).pass);
}

TEST(Aux, CsvRoundTrip) {
  const CellMap net = line_network(6);
  const auto aux = aux_for(net, 3);
  TempDir d;
  write_aux_csv(d / "aux.csv", aux);
  const auto back = read_aux_csv(d / "aux.csv");
  ASSERT_EQ(back.size(), aux.size());
  for (std::size_t i = 0; i < aux.size(); ++i) EXPECT_EQ(back.entries()[i], aux.entries()[i]);
}
