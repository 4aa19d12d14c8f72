#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <unordered_set>

#include "mobmine/formats.hpp"
#include "mobmine/ingest.hpp"
#include "support.hpp"

using namespace mobmine;
using namespace mobmine::testing;

namespace {

void put(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

struct Fixture {
  TempDir dir{"ingest"};
  CellMap cells = line_network(4, 2);
  InputPaths paths;

  Fixture() {
    write_cells_csv(dir / "cells.csv", cells);
    paths = {dir / "events.csv", dir / "cells.csv", dir / "demographics.csv", {}};
    put(paths.demographics,
        "sub,age,gender,postcode,home_zone\n"
        "alice,34,F,41101,LA00\n"
        "bob,51,M,41102,LA01\n");
  }
};

}  // namespace

TEST(Csv, HeaderOnlyEventsFileIsEmpty) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n");
  const auto in = load_inputs(f.paths);
  EXPECT_TRUE(in.log.events.empty());
  EXPECT_TRUE(in.log.subs.empty());
}

TEST(Csv, WrongHeaderRejected) {
  Fixture f;
  put(f.paths.events, "ts,subscriber,kind,cell\n");
  EXPECT_THROW(load_inputs(f.paths), ParseError);
}

TEST(Csv, UnknownKindNamesTheLine) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n100,alice,PAGE,c00\n200,alice,FAX,c01\n");
  try {
    load_inputs(f.paths);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos);
  }
}

TEST(Csv, UnknownCellIsReferentialError) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n100,alice,PAGE,c00\n200,alice,PAGE,zz9\n300,bob,DATA,qq1\n");
  try {
    load_inputs(f.paths);
    FAIL() << "expected ReferentialError";
  } catch (const ReferentialError& e) {
    const std::set<std::string> got(e.offenders().begin(), e.offenders().end());
    EXPECT_EQ(got, (std::set<std::string>{"qq1", "zz9"}));
  }
}

TEST(Csv, UnknownSubscriberCountedNotDropped) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n100,alice,PAGE,c00\n200,carol,DATA,c01\n300,carol,PAGE,c01\n");
  const auto in = load_inputs(f.paths);
  EXPECT_EQ(in.log.events.size(), 3u);
  EXPECT_EQ(in.unknown_subs, (std::vector<std::string>{"carol"}));
  EXPECT_EQ(in.unknown_sub_events, 2u);
}

TEST(Csv, EventsRoundTrip) {
  Fixture f;
  EventLog log;
  log.subs = {"alice", "bob"};
  log.events = {{100, 0, EventKind::Page, 0}, {100, 1, EventKind::CallIn, 3}, {250, 0, EventKind::Lau, 2}};
  write_events_csv(f.paths.events, log, f.cells);
  EXPECT_EQ(read_events_csv(f.paths.events, f.cells), log);
}

TEST(Csv, CellsAndZonesRoundTrip) {
  TempDir d;
  const CellMap cells = grid_network(3, 2);
  write_cells_csv(d / "cells.csv", cells);
  const CellMap back_cells = read_cells_csv(d / "cells.csv");
  ASSERT_EQ(back_cells.size(), cells.size());
  for (CellIndex i = 0; i < cells.size(); ++i) {
    EXPECT_EQ(back_cells[i].id, cells[i].id);
    EXPECT_EQ(back_cells[i].la, cells[i].la);
    EXPECT_NEAR(back_cells[i].lat, cells[i].lat, 1e-6);
    EXPECT_NEAR(back_cells[i].lon, cells[i].lon, 1e-6);
  }
  // Fixed precision: a second pass is byte-identical.
  write_cells_csv(d / "again.csv", back_cells);
  EXPECT_EQ(read_file(d / "again.csv"), read_file(d / "cells.csv"));
  const ZoneMap zones = ZoneMap::from_location_areas(cells);
  write_zones_csv(d / "zones.csv", zones, cells);
  const ZoneMap back = read_zones_csv(d / "zones.csv", cells);
  for (CellIndex i = 0; i < cells.size(); ++i) EXPECT_EQ(back.name(back.zone_of(i)), zones.name(zones.zone_of(i)));
}

TEST(Salt, ShortSaltRejected) {
  EXPECT_THROW(Salt(std::vector<std::uint8_t>(15, 1)), WeakSaltError);
  EXPECT_THROW(Salt::from_hex("00112233"), WeakSaltError);
  EXPECT_NO_THROW(Salt(std::vector<std::uint8_t>(16, 1)));
}

TEST(Salt, IdDoesNotRevealBytes) {
  const Salt s = test_salt(0x42);
  EXPECT_EQ(s.id().size(), 16u);
  EXPECT_EQ(to_hex(s.bytes()).find(s.id()), std::string::npos);
}

TEST(Pseudonyms, DeterministicAndSaltDependent) {
  const Salt a = test_salt(1), b = test_salt(2);
  EXPECT_EQ(pseudonym_of(a, "alice"), pseudonym_of(a, "alice"));
  EXPECT_NE(pseudonym_of(a, "alice"), pseudonym_of(b, "alice"));
  EXPECT_NE(pseudonym_of(a, "alice"), pseudonym_of(a, "bob"));
}

TEST(Pseudonyms, InjectiveOverManyIds) {
  const Salt s = test_salt();
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < 100000; ++i) seen.insert(pseudonym_of(s, subscriber_id(i)));
  EXPECT_EQ(seen.size(), 100000u);
}

TEST(Pseudonyms, StreamCarriesNoRawIds) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n100,alice,PAGE,c00\n200,bob,DATA,c01\n300,carol,PAGE,c02\n");
  const auto in = load_inputs(f.paths);
  const auto stream = pseudonymize(in.log, in.demo, test_salt());
  write_stream(f.dir / "stream", stream, in.cells);
  for (const auto& entry : fs::directory_iterator(f.dir / "stream")) {
    const std::string text = read_file(entry.path());
    for (const char* raw : {"alice", "bob", "carol"}) {
      EXPECT_EQ(text.find(raw), std::string::npos) << entry.path() << " leaks " << raw;
    }
  }
  EXPECT_EQ(stream.distinct_pseudonyms(), 3u);
  EXPECT_EQ(stream.events.size(), in.log.events.size());
}

TEST(Pseudonyms, DemographicsFollowTheirSubscriber) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n100,alice,PAGE,c00\n200,carol,DATA,c01\n");
  const auto in = load_inputs(f.paths);
  const Salt salt = test_salt();
  const auto stream = pseudonymize(in.log, in.demo, salt);
  auto at = [&](const std::string& sub) {
    const auto p = pseudonym_of(salt, sub);
    return std::lower_bound(stream.pseudonyms.begin(), stream.pseudonyms.end(), p) - stream.pseudonyms.begin();
  };
  ASSERT_TRUE(stream.demographics[at("alice")].has_value());
  EXPECT_EQ(stream.demographics[at("alice")]->age, 34);
  EXPECT_FALSE(stream.demographics[at("carol")].has_value());
}

TEST(Pseudonyms, CommutesWithFiltering) {
  // Pseudonymizing then dropping a subscriber equals dropping then pseudonymizing.
  Fixture f;
  EventLog log;
  log.subs = {"alice", "bob", "carol"};
  log.events = {{10, 0, EventKind::Page, 0}, {20, 1, EventKind::Page, 1},
                {30, 2, EventKind::Data, 2}, {40, 0, EventKind::Lau, 3}};
  const DemoTable none;
  const Salt salt = test_salt();
  const auto full = pseudonymize(log, none, salt);
  const std::string drop = pseudonym_of(salt, "bob");
  std::vector<std::pair<Timestamp, std::string>> a, b;
  for (const Event& e : full.events) {
    if (full.pseudonyms[e.sub] != drop) a.emplace_back(e.ts, full.pseudonyms[e.sub]);
  }
  EventLog filtered;
  filtered.subs = {"alice", "carol"};
  filtered.events = {{10, 0, EventKind::Page, 0}, {30, 1, EventKind::Data, 2}, {40, 0, EventKind::Lau, 3}};
  const auto part = pseudonymize(filtered, none, salt);
  for (const Event& e : part.events) b.emplace_back(e.ts, part.pseudonyms[e.sub]);
  EXPECT_EQ(a, b);
}

TEST(Stream, RoundTrip) {
  Fixture f;
  put(f.paths.events, "ts,sub,kind,cell\n100,alice,PAGE,c00\n200,bob,DATA,c01\n300,carol,LAU,c02\n");
  const auto in = load_inputs(f.paths);
  const auto stream = pseudonymize(in.log, in.demo, test_salt());
  write_stream(f.dir / "s", stream, in.cells);
  EXPECT_EQ(read_stream(f.dir / "s", in.cells), stream);
  const auto events_only = read_stream_events(f.dir / "s", in.cells);
  EXPECT_EQ(events_only.events, stream.events);
  EXPECT_EQ(events_only.pseudonyms, stream.pseudonyms);
  EXPECT_EQ(stream.provenance.created_ts, 300);
}
