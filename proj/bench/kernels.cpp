// Serial reference vs OpenMP kernel for the hot stages.
#include <benchmark/benchmark.h>

#include <memory>

#include "mobmine/anonymizer.hpp"
#include "mobmine/ingest.hpp"
#include "mobmine/routeminer.hpp"
#include "mobmine/synthnet.hpp"
#include "mobmine/timegeo.hpp"

namespace {

using namespace mobmine;

struct World {
  CellMap net;
  ZoneMap zones;
  Population pop;
  SimConfig sim;
  AnnotatedStream stream;
  std::vector<SpaceTimePath> paths;
  std::vector<RouteSequence> seqs;
  std::vector<TracePath> traces;
};

const World& world() {
  static const std::unique_ptr<World> w = [] {
    auto w = std::make_unique<World>();
    w->net = generate_network({}, 1);
    w->zones = ZoneMap::from_location_areas(w->net);
    PopulationConfig pc;
    pc.n_agents = 2000;
    w->pop = generate_population(pc, w->net, w->zones, 2);
    w->sim.days = 7;
    const auto sim = simulate_events(w->pop.agents, w->net, w->zones, w->sim, 3);
    w->stream = pseudonymize(sim.log, demographics_of(w->pop.agents), Salt(std::vector<std::uint8_t>(32, 7)));
    const auto st = detect_stations(w->stream, w->net, {});
    w->paths = extract_paths(w->stream, st);
    w->seqs = route_sequences(w->paths);
    w->traces = trace_paths(w->paths);
    return w;
  }();
  return *w;
}

ExecPolicy policy(const benchmark::State& s) { return s.range(0) == 0 ? ExecPolicy::Serial : ExecPolicy::Parallel; }

void BM_Simulate(benchmark::State& s) {
  const World& w = world();
  for (auto _ : s) benchmark::DoNotOptimize(simulate_events(w.pop.agents, w.net, w.zones, w.sim, 3, policy(s)));
}

void BM_Stations(benchmark::State& s) {
  const World& w = world();
  for (auto _ : s) benchmark::DoNotOptimize(detect_stations(w.stream, w.net, {}, policy(s)));
}

void BM_Sketch(benchmark::State& s) {
  const World& w = world();
  for (auto _ : s) benchmark::DoNotOptimize(sketch(w.seqs, {}, policy(s)));
}

void BM_Kanon(benchmark::State& s) {
  const World& w = world();
  for (auto _ : s) benchmark::DoNotOptimize(kanon_windows(w.traces, {}, policy(s)));
}

void BM_Mine(benchmark::State& s) {
  const World& w = world();
  for (auto _ : s) benchmark::DoNotOptimize(mine_routes(w.seqs, {}, policy(s)));
}

}  // namespace

// Arg 0 = serial reference, 1 = OpenMP.
BENCHMARK(BM_Simulate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Stations)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Sketch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Kanon)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Mine)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
