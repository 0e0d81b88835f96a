// Copyright 2026 The Crashcast Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "crashcast/trafficgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "oracles.hpp"

namespace crashcast::trafficgen {
namespace {

using roadnet::RoadEdge;
using roadnet::RoadNode;

RoadGraph straight(double length, double speed) {
  return RoadGraph::build({{"a", 0, 0}, {"b", length, 0}},
                          {{"ab", "a", "b", length, speed, {{0, 0}, {length, 0}}, false, false}});
}

RoadGraph two_speed_chain() {
  return RoadGraph::build({{"a", 0, 0}, {"b", 100, 0}, {"c", 100, 100}},
                          {{"slow", "a", "b", 100, 10, {{0, 0}, {100, 0}}, false, false},
                           {"fast", "b", "c", 100, 20, {{100, 0}, {100, 100}}, false, false}});
}

TEST(SampleDeparturesTest, ZeroRateIsEmpty) {
  CounterRng rng(1);
  EXPECT_TRUE(sample_departures({0.0, 6.0, 6.0}, rng).empty());
}

TEST(SampleDeparturesTest, SameSeedSameList) {
  CounterRng a(42), b(42);
  const ArrivalConfig cfg{30.0, 6.0, 60.0};
  const auto x = sample_departures(cfg, a);
  EXPECT_EQ(x, sample_departures(cfg, b));
  EXPECT_TRUE(std::is_sorted(x.begin(), x.end()));
  EXPECT_LE(x.back(), 60.0);
}

TEST(SampleDeparturesTest, MeanCountMatchesRateTimesHorizon) {
  // lambda = 0.5 /s, T_sim = 6 s -> E[N] = 3
  const ArrivalConfig cfg{3.0, 6.0, 6.0};
  ASSERT_DOUBLE_EQ(cfg.rate(), 0.5);
  const CounterRng root(7);
  double total = 0.0;
  const int runs = 1000;
  for (int i = 0; i < runs; ++i) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(i));
    total += static_cast<double>(sample_departures(cfg, rng).size());
  }
  const double mean = total / runs;
  EXPECT_NEAR(mean, 3.0, 3.0 * std::sqrt(3.0 / runs));
}

TEST(SampleDeparturesTest, InterArrivalsPassOneSidedKs) {
  const double rate = 0.5;
  const int n = 10000;
  CounterRng rng(99);
  const auto times = sample_departures({rate * 1e6, 1e6, 1.1 * n / rate}, rng);
  ASSERT_GE(times.size(), static_cast<std::size_t>(n));
  std::vector<double> gaps;
  double prev = 0.0;
  for (int i = 0; i < n; ++i) {
    gaps.push_back(times[static_cast<std::size_t>(i)] - prev);
    prev = times[static_cast<std::size_t>(i)];
  }
  std::sort(gaps.begin(), gaps.end());
  double d_plus = 0.0;
  for (int i = 0; i < n; ++i)
    d_plus = std::max(d_plus, (i + 1.0) / n - (1.0 - std::exp(-rate * gaps[static_cast<std::size_t>(i)])));
  // one-sided KS critical value at alpha = 0.01
  EXPECT_LT(d_plus, std::sqrt(-std::log(0.01) / (2.0 * n)));
}

TEST(SampleDeparturesTest, RejectsInvalidConfig) {
  CounterRng rng(1);
  EXPECT_THROW(sample_departures({-1.0, 6.0, 6.0}, rng), Error);
  EXPECT_THROW(sample_departures({1.0, 0.0, 6.0}, rng), Error);
  EXPECT_THROW(sample_departures({1.0, 6.0, 0.0}, rng), Error);
}

// sources {a, b} x destinations {c, d}; only b -> d is unroutable
RoadGraph od_fixture() {
  std::vector<RoadNode> nodes{{"0", 0, 0}, {"1", 10, 0}, {"4", 0, 20}, {"5", 10, 20}, {"6", 20, 20}, {"7", 20, 0}};
  std::vector<RoadEdge> edges{
      {"a", "0", "1", 10, 10, {}, false, false},  {"b", "4", "5", 10, 10, {}, false, false},
      {"link", "1", "5", 20, 10, {}, true, false}, {"c", "5", "6", 10, 10, {}, false, false},
      {"d", "1", "7", 10, 10, {}, false, false}};
  return RoadGraph::build(nodes, edges);
}

TEST(SampleOdTest, SingletonSets) {
  const RoadGraph g = straight(100, 10);
  CounterRng rng(3);
  EXPECT_EQ(sample_od(g, {{"ab"}, {"ab"}}, rng), std::make_pair(std::string("ab"), std::string("ab")));
}

TEST(SampleOdTest, RejectionGivesUniformOverRoutablePairs) {
  const RoadGraph g = od_fixture();
  ASSERT_FALSE(roadnet::try_shortest_path(g, "b", "d"));
  const TerminalSets terminals{{"a", "b"}, {"c", "d"}};
  CounterRng rng(5);
  std::map<std::pair<std::string, std::string>, int> counts;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[sample_od(g, terminals, rng)];
  EXPECT_EQ(counts.size(), 3u);
  EXPECT_EQ(counts.count({"b", "d"}), 0u);
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(p * (1 - p) / n);
  for (const auto& [pair, c] : counts) EXPECT_NEAR(static_cast<double>(c) / n, p, 3 * sigma) << pair.first << pair.second;
}

TEST(SampleOdTest, NoRoutablePairExhaustsRetries) {
  const RoadGraph g = od_fixture();
  CounterRng rng(5);
  try {
    sample_od(g, {{"b"}, {"d"}}, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRetriesExhausted);
  }
}

TEST(BuildTripsTest, ZeroDepartures) {
  const RoadGraph g = straight(100, 10);
  CounterRng rng(1);
  EXPECT_TRUE(build_trips(g, roadnet::classify_terminals(g), {0.0, 6.0, 6.0}, rng).empty());
}

TEST(BuildTripsTest, ForcedRouteSharedByAllTrips) {
  const RoadGraph g = straight(100, 10);
  const TerminalSets terminals = roadnet::classify_terminals(g);
  // find a seed that yields exactly three departures
  for (std::uint64_t seed = 0;; ++seed) {
    CounterRng probe(seed);
    if (sample_departures({3.0, 6.0, 6.0}, probe).size() != 3) continue;
    CounterRng rng(seed);
    const auto trips = build_trips(g, terminals, {3.0, 6.0, 6.0}, rng);
    ASSERT_EQ(trips.size(), 3u);
    for (const auto& trip : trips) EXPECT_EQ(trip.route.edges, std::vector<std::string>{"ab"});
    EXPECT_LT(trips[0].depart, trips[1].depart);
    EXPECT_LT(trips[1].depart, trips[2].depart);
    break;
  }
}

TEST(BuildTripsTest, RoutesAreOptimalOnRandomGraphs) {
  CounterRng graphs(31);
  int checked = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const RoadGraph g = oracle::random_graph(graphs);
    TerminalSets terminals;
    try {
      terminals = roadnet::classify_terminals(g);
    } catch (const Error&) {
      continue;
    }
    CounterRng rng = graphs.split(static_cast<std::uint64_t>(trial));
    const auto trips = build_trips(g, terminals, {6.0, 6.0, 6.0}, rng);
    for (std::size_t k = 0; k < trips.size(); ++k) {
      EXPECT_EQ(trips[k].vehicle, k);
      EXPECT_EQ(trips[k].route.cost, oracle::brute_force_route_cost(g, trips[k].origin, trips[k].destination));
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(TimeMappingTest, ConstantSpeed) {
  const RoadGraph g = straight(100, 10);
  const TimeMapping m(g, roadnet::make_route(g, {"ab"}), 0.0);
  EXPECT_DOUBLE_EQ(m.time_at(100.0), 10.0);
  EXPECT_EQ(m.time_at(0.0), 0.0);
}

TEST(TimeMappingTest, TwoSpeedsIntegrate) {
  const RoadGraph g = two_speed_chain();
  const TimeMapping m(g, roadnet::make_route(g, {"slow", "fast"}), 3.0);
  EXPECT_EQ(m.time_at(0.0), 3.0);
  EXPECT_DOUBLE_EQ(m.time_at(200.0) - 3.0, 15.0);
  EXPECT_DOUBLE_EQ(m.travel_time(), 15.0);
}

TEST(SampleTrajectoryTest, SampleCountIsFloorOfTravelTimeOverStep) {
  const RoadGraph g = straight(100, 10);
  const auto route = roadnet::make_route(g, {"ab"});
  const auto traj = sample_trajectory(g, route, TimeMapping(g, route, 0.0), 0.5);
  EXPECT_EQ(traj.samples.size(), 20u);
  EXPECT_DOUBLE_EQ(traj.samples.back().x, 100.0);
}

TEST(SampleTrajectoryTest, UnitSpeedAdvancesOneStepPerSample) {
  const RoadGraph g = straight(10, 1);
  const auto route = roadnet::make_route(g, {"ab"});
  const auto traj = sample_trajectory(g, route, TimeMapping(g, route, 0.0), 0.25);
  ASSERT_EQ(traj.samples.size(), 40u);
  for (std::size_t n = 0; n < traj.samples.size(); ++n) {
    EXPECT_DOUBLE_EQ(traj.samples[n].x, 0.25 * static_cast<double>(n + 1));
    EXPECT_EQ(traj.samples[n].y, 0.0);
  }
}

TEST(SampleTrajectoryTest, SecondEdgeInversion) {
  const RoadGraph g = two_speed_chain();
  const auto route = roadnet::make_route(g, {"slow", "fast"});
  const auto traj = sample_trajectory(g, route, TimeMapping(g, route, 0.0), 0.5);
  ASSERT_EQ(traj.samples.size(), 30u);
  // t = 12.5: 10 s on the slow edge, 2.5 s * 20 m/s = 50 m into the fast edge
  const auto& s = traj.samples[24];
  EXPECT_DOUBLE_EQ(s.t, 12.5);
  EXPECT_NEAR(s.x, 100.0, 1e-12);
  EXPECT_NEAR(s.y, 50.0, 1e-12);
}

TEST(SampleTrajectoryTest, RejectsNonpositiveStep) {
  const RoadGraph g = straight(10, 1);
  const auto route = roadnet::make_route(g, {"ab"});
  EXPECT_THROW(sample_trajectory(g, route, TimeMapping(g, route, 0.0), 0.0), Error);
}

TEST(SampleTrajectoryTest, InversionRoundTripOnRandomRoutes) {
  CounterRng rng(17);
  int routes = 0;
  while (routes < 200) {
    const RoadGraph g = oracle::random_graph(rng);
    const auto& src = g.edges()[rng.below(g.edges().size())].id;
    const auto& dst = g.edges()[rng.below(g.edges().size())].id;
    const auto route = roadnet::try_shortest_path(g, src, dst);
    if (!route) continue;
    ++routes;
    const double t0 = rng.uniform(0, 10);
    const double dt = rng.uniform(0.05, 2.0);
    const TimeMapping m(g, *route, t0);
    const auto traj = sample_trajectory(g, *route, m, dt);
    EXPECT_EQ(traj.samples.size(), static_cast<std::size_t>(std::floor(route->cost / dt)));
    double prev_s = 0.0;
    for (const auto& smp : traj.samples) {
      EXPECT_LE(std::abs(m.time_at(smp.s) - smp.t), 1e-9);
      EXPECT_GE(smp.s, prev_s);
      prev_s = smp.s;
    }
  }
}

TEST(RouteGeometryTest, ConcatenatesCenterlines) {
  const RoadGraph g = two_speed_chain();
  const RouteGeometry geo(g, roadnet::make_route(g, {"slow", "fast"}));
  EXPECT_DOUBLE_EQ(geo.length(), 200.0);
  EXPECT_EQ(geo.at(150.0), (Point{100.0, 50.0}));
  EXPECT_NEAR(geo.heading_at(50.0), 0.0, 1e-12);
  EXPECT_NEAR(geo.heading_at(150.0), M_PI / 2, 1e-12);
}

TEST(DeconflictTest, DisjointRoadsUnchanged) {
  const RoadGraph g = RoadGraph::build({{"a", 0, 0}, {"b", 100, 0}, {"c", 0, 50}, {"d", 100, 50}},
                                       {{"ab", "a", "b", 100, 10, {}, false, false},
                                        {"cd", "c", "d", 100, 10, {}, false, false}});
  std::vector<TripSpec> trips{{0, "ab", "ab", 0.0, roadnet::make_route(g, {"ab"})},
                              {1, "cd", "cd", 0.0, roadnet::make_route(g, {"cd"})}};
  const auto out = deconflict(g, trips, {});
  EXPECT_EQ(out[0].depart, 0.0);
  EXPECT_EQ(out[1].depart, 0.0);
}

TEST(DeconflictTest, IdenticalTripsGetSeparated) {
  const RoadGraph g = straight(100, 10);
  const auto route = roadnet::make_route(g, {"ab"});
  std::vector<TripSpec> trips{{0, "ab", "ab", 0.0, route}, {1, "ab", "ab", 0.0, route}};
  const DeconflictConfig cfg{0.1, 12.0, 5.0, 100};
  const auto out = deconflict(g, trips, cfg);
  EXPECT_EQ(out[0].depart, 0.0);
  EXPECT_GT(out[1].depart, 0.0);
  EXPECT_EQ(out[1].route, route);
  const std::size_t frames = 121;
  const std::vector<FrameTrack> tracks{frame_track(RouteMotion(g, route, out[0].depart), 0.1, frames),
                                       frame_track(RouteMotion(g, route, out[1].depart), 0.1, frames)};
  EXPECT_GE(sweep_min_distance(tracks), 5.0);
}

TEST(DeconflictTest, ZeroBudgetWithForcedConflictFails) {
  const RoadGraph g = straight(100, 10);
  const auto route = roadnet::make_route(g, {"ab"});
  std::vector<TripSpec> trips{{0, "ab", "ab", 0.0, route}, {1, "ab", "ab", 0.0, route}};
  try {
    deconflict(g, trips, {0.1, 12.0, 5.0, 0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnresolvableConflict);
  }
}

TEST(DeconflictTest, RandomTrafficKeepsSafetyRadius) {
  CounterRng rng(8);
  const RoadGraph g = RoadGraph::build(
      {{"a", 0, 0}, {"b", 100, 0}, {"c", 100, 100}, {"d", 0, 100}},
      {{"ab", "a", "b", 100, 12, {}, false, false}, {"bc", "b", "c", 100, 12, {}, false, false},
       {"cd", "c", "d", 100, 12, {}, false, false}, {"da", "d", "a", 100, 12, {}, false, false},
       {"ac", "a", "c", 100 * std::sqrt(2.0), 15, {}, false, false}});
  const auto terminals = roadnet::classify_terminals(g);
  for (int run = 0; run < 20; ++run) {
    CounterRng stream = rng.split(static_cast<std::uint64_t>(run));
    const auto trips = deconflict(g, build_trips(g, terminals, {8.0, 6.0, 6.0}, stream), {0.1, 6.0, 5.0, 200});
    std::vector<FrameTrack> tracks;
    for (const auto& t : trips) tracks.push_back(frame_track(RouteMotion(g, t.route, t.depart), 0.1, 61));
    EXPECT_GE(sweep_min_distance(tracks), 5.0);
  }
}

}  // namespace
}  // namespace crashcast::trafficgen
