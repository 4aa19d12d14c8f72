#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mobmine/common.hpp"
#include "mobmine/network.hpp"

namespace mobmine {

// One passive network record. `sub` indexes the owning log's subscriber
// table; `cell` indexes the CellMap the log was built against.
struct Event {
  Timestamp ts = 0;
  SubIndex sub = 0;
  EventKind kind = EventKind::Page;
  CellIndex cell = 0;

  bool operator==(const Event&) const = default;
};

struct EventLog {
  std::vector<std::string> subs;
  std::vector<Event> events;

  bool operator==(const EventLog&) const = default;
};

// Sorts by (ts, subscriber string, kind name, cell id).
void sort_events(std::vector<Event>& events, std::span<const std::string> subs);

struct DemoAttributes {
  int age = 0;
  std::string gender;
  std::string postcode;
  std::string home_zone;

  bool operator==(const DemoAttributes&) const = default;
};

struct DemoRecord {
  std::string sub;
  DemoAttributes attrs;

  bool operator==(const DemoRecord&) const = default;
};

inline constexpr int kMaxAge = 130;

class DemoTable {
 public:
  DemoTable() = default;
  explicit DemoTable(std::vector<DemoRecord> rows);

  std::span<const DemoRecord> rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }
  const DemoRecord* find(std::string_view sub) const;

  bool operator==(const DemoTable& other) const { return rows_ == other.rows_; }

 private:
  std::vector<DemoRecord> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace mobmine
