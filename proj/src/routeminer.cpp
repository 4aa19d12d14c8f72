#include "mobmine/routeminer.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mobmine/formats.hpp"

namespace mobmine {

std::vector<RouteSequence> route_sequences(std::span<const SpaceTimePath> paths) {
  std::vector<RouteSequence> out;
  out.reserve(paths.size());
  for (const SpaceTimePath& p : paths) out.push_back({p.id, route_cells(p)});
  return out;
}

void SketchConfig::validate() const {
  if (ngram_len < 1) throw InvalidConfig("ngram_len must be >= 1");
  if (m == 0 || bands == 0 || rows == 0) throw InvalidConfig("m, bands and rows must be positive");
  if (m != bands * rows) throw InvalidConfig("m must equal bands * rows");
}

std::vector<std::uint64_t> shingle_set(std::span<const CellIndex> tokens, std::size_t n) {
  std::vector<std::uint64_t> out;
  auto hash_run = [](std::span<const CellIndex> run) {
    std::uint64_t h = mix64(0x5bd1e995ULL + run.size());
    for (CellIndex t : run) h = mix64(h ^ (static_cast<std::uint64_t>(t) + 1));
    return h;
  };
  if (tokens.size() < n) {
    out.push_back(hash_run(tokens));
    return out;
  }
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) out.push_back(hash_run(tokens.subspan(i, n)));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

RouteSketch sketch_one(const RouteSequence& s, const SketchConfig& cfg,
                       std::span<const std::uint64_t> family) {
  RouteSketch out;
  out.path_id = s.path_id;
  out.shingles = shingle_set(s.tokens, cfg.ngram_len);
  out.signature.assign(cfg.m, std::numeric_limits<std::uint64_t>::max());
  for (std::uint64_t sh : out.shingles) {
    for (std::size_t k = 0; k < cfg.m; ++k) {
      out.signature[k] = std::min(out.signature[k], mix64(sh ^ family[k]));
    }
  }
  return out;
}

}  // namespace

std::vector<RouteSketch> sketch(std::span<const RouteSequence> seqs, const SketchConfig& cfg,
                                ExecPolicy policy) {
  cfg.validate();
  std::vector<std::uint64_t> family(cfg.m);
  for (std::size_t k = 0; k < cfg.m; ++k) family[k] = derive_seed(cfg.seed, k);
  std::vector<RouteSketch> out(seqs.size());
  const auto n = static_cast<std::int64_t>(seqs.size());
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)] = sketch_one(seqs[static_cast<std::size_t>(i)], cfg, family);
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(i)] = sketch_one(seqs[static_cast<std::size_t>(i)], cfg, family);
    }
  }
  return out;
}

double estimated_similarity(const RouteSketch& a, const RouteSketch& b) {
  if (a.signature.size() != b.signature.size() || a.signature.empty()) {
    throw InvalidConfig("signatures differ in length");
  }
  std::size_t eq = 0;
  for (std::size_t k = 0; k < a.signature.size(); ++k) eq += a.signature[k] == b.signature[k];
  return static_cast<double>(eq) / static_cast<double>(a.signature.size());
}

double exact_jaccard(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter, ++i, ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------

namespace {

std::vector<const RouteSketch*> sorted_by_id(std::span<const RouteSketch> sketches) {
  std::vector<const RouteSketch*> out;
  for (const RouteSketch& s : sketches) out.push_back(&s);
  std::sort(out.begin(), out.end(),
            [](const RouteSketch* a, const RouteSketch* b) { return a->path_id < b->path_id; });
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i]->path_id == out[i - 1]->path_id) throw InvalidConfig("duplicate path id in sketches");
  }
  return out;
}

template <typename Body>
void for_nodes(ExecPolicy policy, std::size_t n, Body&& body) {
  const auto sn = static_cast<std::int64_t>(n);
  if (policy == ExecPolicy::Parallel) {
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < sn; ++i) body(static_cast<std::size_t>(i));
  } else {
    for (std::int64_t i = 0; i < sn; ++i) body(static_cast<std::size_t>(i));
  }
}

std::vector<std::vector<std::uint32_t>> candidates_per_node(
    std::span<const RouteSketch* const> nodes, const SketchConfig& cfg, ExecPolicy policy) {
  cfg.validate();
  const std::size_t n = nodes.size();
  for (const RouteSketch* s : nodes) {
    if (s->signature.size() != cfg.m) throw InvalidConfig("signature length != m");
  }
  using Entry = std::pair<std::uint64_t, std::uint32_t>;
  // keys[b][i] is node i's band-b hash; buckets[b] is sorted.
  std::vector<std::vector<std::uint64_t>> keys(cfg.bands, std::vector<std::uint64_t>(n));
  std::vector<std::vector<Entry>> buckets(cfg.bands);
  for (std::size_t b = 0; b < cfg.bands; ++b) {
    for_nodes(policy, n, [&](std::size_t i) {
      std::uint64_t h = mix64(b + 1);
      for (std::size_t r = 0; r < cfg.rows; ++r) h = mix64(h ^ nodes[i]->signature[b * cfg.rows + r]);
      keys[b][i] = h;
    });
    auto& bk = buckets[b];
    bk.resize(n);
    for (std::size_t i = 0; i < n; ++i) bk[i] = {keys[b][i], static_cast<std::uint32_t>(i)};
    std::sort(bk.begin(), bk.end());
  }
  std::vector<std::vector<std::uint32_t>> out(n);
  for_nodes(policy, n, [&](std::size_t i) {
    auto& c = out[i];
    for (std::size_t b = 0; b < cfg.bands; ++b) {
      const auto& bk = buckets[b];
      // Entries are sorted by (key, node) so the tail after i holds j > i.
      auto it = std::upper_bound(bk.begin(), bk.end(), Entry{keys[b][i], static_cast<std::uint32_t>(i)});
      for (; it != bk.end() && it->first == keys[b][i]; ++it) c.push_back(it->second);
    }
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
  });
  return out;
}

}  // namespace

std::vector<std::pair<std::uint32_t, std::uint32_t>> candidate_pairs(
    std::span<const RouteSketch> sorted_sketches, const SketchConfig& cfg, ExecPolicy policy) {
  const auto nodes = sorted_by_id(sorted_sketches);
  const auto per = candidates_per_node(nodes, cfg, policy);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::size_t i = 0; i < per.size(); ++i) {
    for (std::uint32_t j : per[i]) out.emplace_back(static_cast<std::uint32_t>(i), j);
  }
  return out;
}

SimilarityGraph build_graph(std::span<const RouteSketch> sketches, const SketchConfig& sketch_cfg,
                            const GraphConfig& cfg, ExecPolicy policy) {
  if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) throw InvalidConfig("threshold must be in (0, 1)");
  const auto nodes = sorted_by_id(sketches);
  const auto per = candidates_per_node(nodes, sketch_cfg, policy);
  std::vector<std::vector<GraphEdge>> edges(nodes.size());
  for_nodes(policy, nodes.size(), [&](std::size_t i) {
    for (std::uint32_t j : per[i]) {
      const double w = estimated_similarity(*nodes[i], *nodes[j]);
      if (w >= cfg.threshold) edges[i].push_back({static_cast<std::uint32_t>(i), j, w});
    }
  });
  SimilarityGraph g;
  for (const RouteSketch* s : nodes) g.nodes.push_back(s->path_id);
  for (auto& e : edges) g.edges.insert(g.edges.end(), e.begin(), e.end());
  return g;
}

// ---------------------------------------------------------------------------
// Louvain. Adjacency stores both directions; a self loop carries the summed
// weight of both orientations of the edges it absorbed.

namespace {

struct WGraph {
  std::vector<std::vector<std::pair<std::uint32_t, double>>> adj;  // sorted by neighbor
  std::vector<double> degree;
  double m2 = 0.0;

  void finish() {
    degree.assign(adj.size(), 0.0);
    m2 = 0.0;
    for (std::size_t i = 0; i < adj.size(); ++i) {
      std::sort(adj[i].begin(), adj[i].end());
      for (const auto& [_, w] : adj[i]) degree[i] += w;
      m2 += degree[i];
    }
  }
};

WGraph from_similarity(const SimilarityGraph& g) {
  WGraph w;
  w.adj.resize(g.nodes.size());
  for (const GraphEdge& e : g.edges) {
    w.adj[e.a].emplace_back(e.b, e.weight);
    w.adj[e.b].emplace_back(e.a, e.weight);
  }
  w.finish();
  return w;
}

// One local-moving phase. Returns whether any node changed community;
// `comm` is renumbered densely in order of first appearance.
bool local_moves(const WGraph& g, std::vector<std::uint32_t>& comm, double eps) {
  const std::size_t n = g.adj.size();
  comm.resize(n);
  for (std::size_t i = 0; i < n; ++i) comm[i] = static_cast<std::uint32_t>(i);
  std::vector<double> tot(g.degree);
  std::vector<double> w_to(n, 0.0);
  std::vector<std::uint32_t> touched;
  bool any = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t own = comm[i];
      const double ki = g.degree[i];
      touched.clear();
      for (const auto& [j, w] : g.adj[i]) {
        if (j == i) continue;
        const std::uint32_t c = comm[j];
        if (w_to[c] == 0.0) touched.push_back(c);
        w_to[c] += w;
      }
      tot[own] -= ki;
      std::uint32_t best = own;
      double best_gain = w_to[own] - tot[own] * ki / g.m2;
      for (std::uint32_t c : touched) {
        const double gain = w_to[c] - tot[c] * ki / g.m2;
        if (gain > best_gain + eps) {
          best_gain = gain;
          best = c;
        }
      }
      tot[best] += ki;
      for (std::uint32_t c : touched) w_to[c] = 0.0;
      if (best != own) {
        comm[i] = best;
        moved = any = true;
      }
    }
  }
  std::vector<std::uint32_t> renum(n, std::numeric_limits<std::uint32_t>::max());
  std::uint32_t next = 0;
  for (auto& c : comm) {
    if (renum[c] == std::numeric_limits<std::uint32_t>::max()) renum[c] = next++;
    c = renum[c];
  }
  return any;
}

WGraph aggregate(const WGraph& g, std::span<const std::uint32_t> comm) {
  const std::uint32_t k = comm.empty() ? 0 : *std::max_element(comm.begin(), comm.end()) + 1;
  std::vector<std::map<std::uint32_t, double>> acc(k);
  for (std::size_t i = 0; i < g.adj.size(); ++i) {
    for (const auto& [j, w] : g.adj[i]) acc[comm[i]][comm[j]] += w;
  }
  WGraph out;
  out.adj.resize(k);
  for (std::uint32_t c = 0; c < k; ++c) {
    for (const auto& [d, w] : acc[c]) out.adj[c].emplace_back(d, w);
  }
  out.finish();
  return out;
}

}  // namespace

std::vector<std::uint32_t> louvain(const SimilarityGraph& g, const LouvainConfig& cfg) {
  const std::size_t n = g.nodes.size();
  std::vector<std::uint32_t> membership(n);
  for (std::size_t i = 0; i < n; ++i) membership[i] = static_cast<std::uint32_t>(i);
  WGraph level = from_similarity(g);
  if (level.m2 <= 0.0) return membership;
  std::vector<std::uint32_t> comm;
  while (true) {
    const bool moved = local_moves(level, comm, cfg.epsilon);
    if (!moved) break;
    for (auto& m : membership) m = comm[m];
    level = aggregate(level, comm);
  }
  return membership;
}

double modularity(const SimilarityGraph& g, std::span<const std::uint32_t> community) {
  if (community.size() != g.nodes.size()) throw InvalidConfig("community size mismatch");
  const WGraph w = from_similarity(g);
  if (w.m2 <= 0.0) return 0.0;
  std::unordered_map<std::uint32_t, double> in, tot;
  for (std::size_t i = 0; i < w.adj.size(); ++i) {
    tot[community[i]] += w.degree[i];
    for (const auto& [j, wt] : w.adj[i]) {
      if (community[i] == community[j]) in[community[i]] += wt;
    }
  }
  double q = 0.0;
  for (const auto& [c, t] : tot) q += in[c] / w.m2 - (t / w.m2) * (t / w.m2);
  return q;
}

// ---------------------------------------------------------------------------

std::vector<std::optional<CellIndex>> representative_slots(
    std::span<const std::vector<CellIndex>> members) {
  std::vector<std::optional<CellIndex>> slots;
  if (members.empty()) return slots;
  std::vector<std::size_t> lens;
  for (const auto& m : members) lens.push_back(m.size());
  std::sort(lens.begin(), lens.end());
  const std::size_t len = lens[(lens.size() - 1) / 2];
  std::map<CellIndex, std::size_t> votes;
  for (std::size_t p = 0; p < len; ++p) {
    votes.clear();
    for (const auto& m : members) {
      if (m.empty()) continue;
      const std::size_t idx =
          len == 1 ? 0 : (p * (m.size() - 1) * 2 + (len - 1)) / (2 * (len - 1));  // rounded
      ++votes[m[idx]];
    }
    std::optional<CellIndex> pick;
    std::size_t best = 0;
    for (const auto& [c, v] : votes) {
      if (v > best) best = v, pick = c;  // map order: lowest index (lexicographic id) wins ties
    }
    slots.push_back(best * 2 >= members.size() ? pick : std::nullopt);
  }
  return slots;
}

std::vector<CellIndex> representative_sequence(std::span<const std::vector<CellIndex>> members) {
  std::vector<CellIndex> out;
  for (const auto& s : representative_slots(members)) {
    if (s && (out.empty() || out.back() != *s)) out.push_back(*s);
  }
  return out;
}

std::vector<RouteCluster> cluster(const SimilarityGraph& g, std::span<const RouteSequence> seqs,
                                  const LouvainConfig& cfg) {
  std::unordered_map<std::uint32_t, const RouteSequence*> by_id;
  for (const RouteSequence& s : seqs) by_id[s.path_id] = &s;
  const auto comm = louvain(g, cfg);
  std::map<std::uint32_t, std::vector<std::uint32_t>> groups;
  for (std::size_t i = 0; i < comm.size(); ++i) groups[comm[i]].push_back(g.nodes[i]);

  std::vector<RouteCluster> out;
  for (auto& [_, members] : groups) {
    RouteCluster c;
    c.members = std::move(members);
    std::sort(c.members.begin(), c.members.end());
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(),
            [](const RouteCluster& a, const RouteCluster& b) { return a.members[0] < b.members[0]; });
  std::vector<std::vector<CellIndex>> toks;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].id = static_cast<std::uint32_t>(i + 1);
    toks.clear();
    for (std::uint32_t p : out[i].members) {
      auto it = by_id.find(p);
      if (it == by_id.end()) throw ReferentialError("graph node without sequence", {path_label(p)});
      toks.push_back(it->second->tokens);
    }
    out[i].representative = representative_sequence(toks);
  }
  return out;
}

std::vector<RouteCluster> mine_routes(std::span<const RouteSequence> seqs, const MineConfig& cfg,
                                      ExecPolicy policy) {
  const auto sk = sketch(seqs, cfg.sketch, policy);
  const auto g = build_graph(sk, cfg.sketch, cfg.graph, policy);
  return cluster(g, seqs, cfg.louvain);
}

// ---------------------------------------------------------------------------

void write_routes_jsonl(const std::filesystem::path& path, std::span<const RouteCluster> routes,
                        const CellMap& cells) {
  std::string out;
  for (const RouteCluster& r : routes) {
    nlohmann::ordered_json j;
    j["cluster_id"] = r.id;
    j["support"] = r.support();
    auto& rep = j["representative"] = nlohmann::ordered_json::array();
    for (CellIndex c : r.representative) rep.push_back(cells.id(c));
    auto& mem = j["members"] = nlohmann::ordered_json::array();
    for (std::uint32_t p : r.members) mem.push_back(path_label(p));
    out += j.dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<RouteCluster> read_routes_jsonl(const std::filesystem::path& path, const CellMap& cells) {
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  std::vector<RouteCluster> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      RouteCluster r;
      r.id = j.at("cluster_id").get<std::uint32_t>();
      for (const auto& c : j.at("representative")) {
        auto idx = cells.find(c.get<std::string>());
        if (!idx) throw ReferentialError("route references unknown cell", {c.get<std::string>()});
        r.representative.push_back(*idx);
      }
      for (const auto& m : j.at("members")) {
        const auto s = m.get<std::string>();
        if (s.size() < 2 || s[0] != 'p') throw ParseError(path.filename().string(), lineno, "bad path id");
        r.members.push_back(static_cast<std::uint32_t>(std::stoul(s.substr(1))));
      }
      if (j.at("support").get<std::size_t>() != r.members.size()) {
        throw ParseError(path.filename().string(), lineno, "support does not match members");
      }
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.filename().string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace mobmine
