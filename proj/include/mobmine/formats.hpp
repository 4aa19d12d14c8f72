#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mobmine/events.hpp"
#include "mobmine/network.hpp"
#include "mobmine/synthnet.hpp"

namespace mobmine {

namespace fs = std::filesystem;

inline constexpr std::string_view kCellsHeader = "cell,lat,lon,radius_m,la";
inline constexpr std::string_view kEventsHeader = "ts,sub,kind,cell";
inline constexpr std::string_view kDemographicsHeader = "sub,age,gender,postcode,home_zone";
inline constexpr std::string_view kZonesHeader = "cell,zone";

// Line-oriented CSV reader with a bit-exact header check. Fields never carry
// commas or quotes in these formats, so no quoting is supported.
class CsvReader {
 public:
  CsvReader(const fs::path& path, std::string_view expected_header);

  // Returns false at end of file. `fields` views into an internal buffer
  // that stays valid until the next call.
  bool next(std::vector<std::string_view>& fields);
  std::size_t line() const { return line_; }
  const std::string& file() const { return file_; }
  [[noreturn]] void fail(const std::string& what) const;

 private:
  std::string file_;
  std::string data_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
  std::size_t lines_read_ = 0;
  std::string current_;
};

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view content);

long long parse_int(const CsvReader& r, std::string_view field, std::string_view what);
double parse_double(const CsvReader& r, std::string_view field, std::string_view what);

void write_cells_csv(const fs::path& path, const CellMap& cells);
CellMap read_cells_csv(const fs::path& path);

void write_events_csv(const fs::path& path, const EventLog& log, const CellMap& cells);
// Subscriber table comes back sorted by id. Unknown cells raise
// ReferentialError listing every offender.
EventLog read_events_csv(const fs::path& path, const CellMap& cells);

void write_demographics_csv(const fs::path& path, const DemoTable& demo);
DemoTable read_demographics_csv(const fs::path& path);

void write_zones_csv(const fs::path& path, const ZoneMap& zones, const CellMap& cells);
ZoneMap read_zones_csv(const fs::path& path, const CellMap& cells);

void write_truth_jsonl(const fs::path& path, const GroundTruth& truth, const CellMap& cells);
std::vector<Trip> read_truth_jsonl(const fs::path& path, const CellMap& cells);

}  // namespace mobmine
