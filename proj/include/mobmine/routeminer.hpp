#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mobmine/common.hpp"
#include "mobmine/network.hpp"
#include "mobmine/timegeo.hpp"

namespace mobmine {

// A path reduced to its cell tokens.
struct RouteSequence {
  std::uint32_t path_id = 0;
  std::vector<CellIndex> tokens;
};

std::vector<RouteSequence> route_sequences(std::span<const SpaceTimePath> paths);

struct SketchConfig {
  std::size_t ngram_len = 3;
  std::size_t m = 128;
  std::size_t bands = 32;
  std::size_t rows = 4;
  std::uint64_t seed = 0;

  void validate() const;

  bool operator==(const SketchConfig&) const = default;
};

struct RouteSketch {
  std::uint32_t path_id = 0;
  std::vector<std::uint64_t> shingles;   // sorted, unique
  std::vector<std::uint64_t> signature;  // size m

  bool operator==(const RouteSketch&) const = default;
};

// Token n-grams; a sequence shorter than n yields one shingle of the whole
// sequence.
std::vector<std::uint64_t> shingle_set(std::span<const CellIndex> tokens, std::size_t n);

std::vector<RouteSketch> sketch(std::span<const RouteSequence> seqs, const SketchConfig& cfg,
                                ExecPolicy policy = ExecPolicy::Parallel);

double estimated_similarity(const RouteSketch& a, const RouteSketch& b);
double exact_jaccard(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

struct GraphEdge {
  std::uint32_t a = 0;  // node indices, a < b
  std::uint32_t b = 0;
  double weight = 0.0;

  bool operator==(const GraphEdge&) const = default;
};

struct SimilarityGraph {
  std::vector<std::uint32_t> nodes;  // path ids, sorted
  std::vector<GraphEdge> edges;      // sorted by (a, b)
};

struct GraphConfig {
  double threshold = 0.5;

  bool operator==(const GraphConfig&) const = default;
};

// Pairs of node indices (i < j, indexing the path-id-sorted sketches) that
// collide in at least one band. No all-pairs scan.
std::vector<std::pair<std::uint32_t, std::uint32_t>> candidate_pairs(
    std::span<const RouteSketch> sorted_sketches, const SketchConfig& cfg,
    ExecPolicy policy = ExecPolicy::Parallel);

SimilarityGraph build_graph(std::span<const RouteSketch> sketches, const SketchConfig& sketch_cfg,
                            const GraphConfig& cfg, ExecPolicy policy = ExecPolicy::Parallel);

struct LouvainConfig {
  double epsilon = 1e-7;

  bool operator==(const LouvainConfig&) const = default;
};

// Community per node index.
std::vector<std::uint32_t> louvain(const SimilarityGraph& g, const LouvainConfig& cfg = {});
double modularity(const SimilarityGraph& g, std::span<const std::uint32_t> community);

struct RouteCluster {
  std::uint32_t id = 0;
  std::vector<std::uint32_t> members;  // path ids, sorted
  std::vector<CellIndex> representative;
  std::size_t support() const { return members.size(); }

  bool operator==(const RouteCluster&) const = default;
};

// Clusters are numbered by their smallest member path id.
std::vector<RouteCluster> cluster(const SimilarityGraph& g, std::span<const RouteSequence> seqs,
                                  const LouvainConfig& cfg = {});

// Position-wise vote: length is the lower median member length, each slot
// takes the most common cell at the same relative position and is kept only
// if at least half of the members agree.
std::vector<CellIndex> representative_sequence(std::span<const std::vector<CellIndex>> members);
// The uncollapsed votes; empty slots had no majority.
std::vector<std::optional<CellIndex>> representative_slots(
    std::span<const std::vector<CellIndex>> members);

struct MineConfig {
  SketchConfig sketch;
  GraphConfig graph;
  LouvainConfig louvain;

  bool operator==(const MineConfig&) const = default;
};

std::vector<RouteCluster> mine_routes(std::span<const RouteSequence> seqs, const MineConfig& cfg,
                                      ExecPolicy policy = ExecPolicy::Parallel);

void write_routes_jsonl(const std::filesystem::path& path, std::span<const RouteCluster> routes,
                        const CellMap& cells);
std::vector<RouteCluster> read_routes_jsonl(const std::filesystem::path& path, const CellMap& cells);

}  // namespace mobmine
