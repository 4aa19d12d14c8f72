#include "mobmine/events.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace mobmine {

void sort_events(std::vector<Event>& events, std::span<const std::string> subs) {
  std::stable_sort(events.begin(), events.end(), [&](const Event& a, const Event& b) {
    if (a.ts != b.ts) return a.ts < b.ts;
    if (a.sub != b.sub) {
      const int c = subs[a.sub].compare(subs[b.sub]);
      if (c != 0) return c < 0;
    }
    if (a.kind != b.kind) return kind_name_less(a.kind, b.kind);
    // Cell indices follow cell-id order.
    return a.cell < b.cell;
  });
}

DemoTable::DemoTable(std::vector<DemoRecord> rows) : rows_(std::move(rows)) {
  index_.reserve(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const DemoRecord& r = rows_[i];
    if (r.sub.empty() || r.attrs.gender.empty() || r.attrs.postcode.empty() ||
        r.attrs.home_zone.empty()) {
      throw InvalidConfig(fmt::format("demographic record {} has empty fields", i));
    }
    if (r.attrs.age < 0 || r.attrs.age > kMaxAge) {
      throw InvalidConfig(fmt::format("demographic record {} has age {}", r.sub, r.attrs.age));
    }
    if (!index_.emplace(r.sub, i).second) {
      throw InvalidConfig(fmt::format("duplicate demographic record for {}", r.sub));
    }
  }
}

const DemoRecord* DemoTable::find(std::string_view sub) const {
  auto it = index_.find(std::string(sub));
  return it == index_.end() ? nullptr : &rows_[it->second];
}

}  // namespace mobmine
