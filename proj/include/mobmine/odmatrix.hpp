#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mobmine/anonymizer.hpp"
#include "mobmine/common.hpp"
#include "mobmine/network.hpp"
#include "mobmine/routeminer.hpp"
#include "mobmine/timegeo.hpp"

namespace mobmine {

enum class OdSource { Raw, Anonymized };
std::string_view to_string(OdSource s);

struct OdKey {
  std::uint32_t origin = 0;  // zone indices
  std::uint32_t dest = 0;
  Timestamp t_start = 0;

  auto operator<=>(const OdKey&) const = default;
};

struct ODMatrix {
  std::vector<std::string> zones;  // names, sorted; OdKey indexes these
  Timestamp bucketing = kSecondsPerHour;
  OdSource source = OdSource::Raw;
  std::map<OdKey, std::uint64_t> flows;  // zero entries absent

  std::uint64_t total() const;
  bool operator==(const ODMatrix&) const = default;
};

// One trip per path: origin station modal cell to destination station modal
// cell, bucketed by departure.
ODMatrix build_od(std::span<const SpaceTimePath> paths, const ZoneMap& zones, Timestamp bucketing,
                  ExecPolicy policy = ExecPolicy::Parallel);

// Estimated flows. For each route whose representative spans at least L
// cells, the trips are bounded by the route support and by the published
// support of its first and last windows, then spread over the first window's
// time buckets. Routes without published endpoint windows contribute nothing.
ODMatrix build_od_anonymized(const AnonymizedDataset& ds, std::span<const RouteCluster> routes,
                             const ZoneMap& zones);

// Element-wise sum; zones and bucketing must match.
ODMatrix merge(const ODMatrix& a, const ODMatrix& b);

void export_od(const std::filesystem::path& path, const ODMatrix& m);
ODMatrix import_od(const std::filesystem::path& path, const ZoneMap& zones, Timestamp bucketing,
                   OdSource source);
// Long format over every zone pair, flows summed over time.
void export_heatmap(const std::filesystem::path& path, const ODMatrix& m);

inline constexpr std::string_view kOdHeader = "origin_zone,dest_zone,t_start,t_end,flow";

}  // namespace mobmine
