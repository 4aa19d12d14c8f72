#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mobmine/cli.hpp"
#include "mobmine/formats.hpp"
#include "mobmine/pipeline.hpp"
#include "support.hpp"

using namespace mobmine;
using namespace mobmine::testing;

namespace {

constexpr const char* kSaltHex = "00112233445566778899aabbccddeeff0011223344556677";

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli cli(std::vector<std::string> args) {
  args.insert(args.begin(), "mobmine");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Cli r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path write_salt(const TempDir& d) {
  const fs::path p = d / "salt.hex";
  std::ofstream(p) << kSaltHex << "\n";
  return p;
}

std::vector<std::string> small_run(const fs::path& out, const fs::path& salt) {
  return {"pipeline", "--out", out.string(), "--salt-file", salt.string(), "--agents", "50", "--days", "2",
          "--cells", "80", "--k", "2", "--seed", "3"};
}

}  // namespace

TEST(Config, TextRoundTrip) {
  PipelineConfig c;
  c.seed = 99;
  c.order = StageOrder::AnonymizeFirst;
  c.zone_mode = ZoneMode::Cell;
  c.kanon = {7, 4, TimeBucketing::HourOfDay};
  c.sim.min_stay_s = 1234;
  c.rotate_period_s.reset();
  c.population.unique_home_work = true;
  c.network.urban_fraction = 0.25;
  EXPECT_EQ(parse_config_text(to_config_text(c)), c);
  EXPECT_EQ(parse_config_text(to_config_text(PipelineConfig{})), PipelineConfig{});
}

TEST(Config, UnknownKeyRejected) {
  EXPECT_THROW(parse_config_text("[anonymize]\nkay = 5\n"), InvalidConfig);
  EXPECT_THROW(parse_config_text("[nosuch]\nk = 5\n"), InvalidConfig);
  EXPECT_THROW(parse_config_text("[anonymize]\nk = five\n"), InvalidConfig);
  const auto c = parse_config_text("# comment\n[anonymize]\nk = 9\n");
  EXPECT_EQ(c.kanon.k, 9u);
}

TEST(StageGate, PostIngestCannotReadRawInputs) {
  TempDir d;
  std::ofstream(d / "demographics.csv") << "sub,age,gender,postcode,home_zone\n";
  std::ofstream(d / "stream_events.csv") << "ts,pseud,kind,cell\n";
  StageContext ctx("od", d.path(), StageContext::Phase::PostIngest, post_ingest_denials(d.path(), std::nullopt));
  EXPECT_THROW(ctx.in("demographics.csv"), PrivacyGateError);
  EXPECT_THROW(ctx.in("events.csv"), PrivacyGateError);
  EXPECT_THROW(ctx.in(d / "sub" / ".." / "demographics.csv"), PrivacyGateError);
  EXPECT_NO_THROW(ctx.in("stream_events.csv"));
}

TEST(StageGate, PostIngestCannotReadSalt) {
  TempDir d, keys;
  const fs::path salt = write_salt(keys);
  StageContext ctx("attack", d.path(), StageContext::Phase::PostIngest, post_ingest_denials(d.path(), salt));
  EXPECT_THROW(ctx.in(salt), PrivacyGateError);
}

TEST(StageGate, IngestMayReadRawInputs) {
  TempDir d;
  StageContext ctx("ingest", d.path(), StageContext::Phase::Ingest);
  EXPECT_NO_THROW(ctx.in("demographics.csv"));
}

TEST(Scanner, FindsIdentifiers) {
  const std::vector<std::string> ids{"S0000042", "S0000007", "abc"};
  const IdentifierScanner s(ids);
  EXPECT_TRUE(s.find("nothing here").empty());
  EXPECT_EQ(s.find("x,S0000007,y"), (std::vector<std::string>{"S0000007"}));
  EXPECT_EQ(s.find("zzabc").size(), 1u);
  EXPECT_TRUE(IdentifierScanner({}).empty());
}

TEST(Cli, UsageErrorsExitTwo) {
  TempDir d;
  EXPECT_EQ(cli({"anonymize", "--out", d.path().string(), "--k", "0"}).code, kExitUsage);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"pipeline", "--out", d.path().string(), "--time-bucketing", "fortnight"}).code, kExitUsage);
}

TEST(Cli, MissingSaltExitsTwo) {
  ::unsetenv("MOBMINE_SALT");
  TempDir d;
  const auto r = cli({"pipeline", "--out", d.path().string(), "--agents", "5", "--days", "1"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("salt"), std::string::npos);
}

TEST(Cli, WeakSaltExitsTwo) {
  TempDir d;
  const fs::path p = d / "weak.hex";
  std::ofstream(p) << "0011\n";
  EXPECT_EQ(cli({"pipeline", "--out", (d / "o").string(), "--salt-file", p.string()}).code, kExitUsage);
}

class SmallRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("pipe");
    keys_ = new TempDir("keys");
    salt_ = write_salt(*keys_);
    const auto r = cli(small_run(dir_->path() / "a", salt_));
    ASSERT_EQ(r.code, kExitOk) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    delete keys_;
  }
  static fs::path a() { return dir_->path() / "a"; }

  static TempDir* dir_;
  static TempDir* keys_;
  static fs::path salt_;
};

TempDir* SmallRun::dir_ = nullptr;
TempDir* SmallRun::keys_ = nullptr;
fs::path SmallRun::salt_;

TEST_F(SmallRun, ManifestIsDeterministic) {
  const auto r = cli(small_run(dir_->path() / "b", salt_));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(read_file(a() / "manifest.json"), read_file(dir_->path() / "b" / "manifest.json"));
}

TEST_F(SmallRun, SaltNeverWritten) {
  for (const auto& e : fs::recursive_directory_iterator(a())) {
    if (!e.is_regular_file()) continue;
    EXPECT_EQ(read_file(e.path()).find(kSaltHex), std::string::npos) << e.path();
  }
}

TEST_F(SmallRun, ZonesPointingAtDemographicsTripsGate) {
  const auto r = cli({"od", "--out", a().string(), "--zones", "demographics.csv"});
  EXPECT_EQ(r.code, kExitPrivacy) << r.err;
  EXPECT_NE(r.err.find("privacy gate"), std::string::npos);
}

TEST_F(SmallRun, SingleStageRerunSucceeds) {
  const auto r = cli({"od", "--out", a().string()});
  EXPECT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(a() / "manifest.od.json"));
}

TEST_F(SmallRun, CorruptedReleaseFailsAttackGate) {
  const fs::path copy = dir_->path() / "corrupt";
  fs::copy(a(), copy, fs::copy_options::recursive);
  std::string anon = read_file(copy / "anon.jsonl");
  const auto pos = anon.find("\"support\":");
  ASSERT_NE(pos, std::string::npos) << "expected at least one published window";
  const auto end = anon.find(',', pos);
  anon.replace(pos, end - pos, "\"support\":100000");
  write_file(copy / "anon.jsonl", anon);
  const auto r = cli({"attack", "--out", copy.string(), "--k", "2", "--agents", "50", "--days", "2", "--cells", "80",
                      "--seed", "3"});
  EXPECT_EQ(r.code, kExitPrivacy) << r.err;
}
