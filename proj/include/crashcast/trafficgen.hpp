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

#ifndef CRASHCAST_TRAFFICGEN_HPP_
#define CRASHCAST_TRAFFICGEN_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "crashcast/error.hpp"
#include "crashcast/random.hpp"
#include "crashcast/roadnet.hpp"

namespace crashcast::trafficgen {

using roadnet::Point;
using roadnet::RoadGraph;
using roadnet::Route;
using roadnet::TerminalSets;

struct ArrivalConfig {
  double expected_count = 3.0;  // p, vehicles per window
  double window = 6.0;          // b, seconds
  double horizon = 6.0;         // T_sim, seconds

  /// lambda = p / b, vehicles per second.
  double rate() const { return expected_count / window; }

  void validate() const {
    if (!(expected_count >= 0.0) || !std::isfinite(expected_count))
      throw Error(ErrorKind::kInvalidValue, "expected_count must be >= 0");
    if (!(window > 0.0)) throw Error(ErrorKind::kInvalidValue, "window must be > 0");
    if (!(horizon > 0.0)) throw Error(ErrorKind::kInvalidValue, "horizon must be > 0");
  }
};

/// Poisson departures: cumulative sums of Exp(lambda) gaps, truncated at the
/// horizon.
inline std::vector<double> sample_departures(const ArrivalConfig& cfg, CounterRng& rng) {
  cfg.validate();
  std::vector<double> times;
  const double rate = cfg.rate();
  if (rate == 0.0) return times;
  double t = 0.0;
  for (;;) {
    t += rng.exponential(rate);
    if (t > cfg.horizon) break;
    times.push_back(t);
  }
  return times;
}

/// Uniform draw from E_src x E_dst, rejecting pairs without a route.
inline std::pair<std::string, std::string> sample_od(const RoadGraph& graph, const TerminalSets& terminals,
                                                     CounterRng& rng, int max_retries = 200) {
  if (terminals.sources.empty() || terminals.destinations.empty())
    throw Error(ErrorKind::kEmptyTerminals, "cannot sample OD pairs from empty terminal sets");
  for (int attempt = 0; attempt < max_retries; ++attempt) {
    const auto& src = terminals.sources[rng.below(terminals.sources.size())];
    const auto& dst = terminals.destinations[rng.below(terminals.destinations.size())];
    if (roadnet::try_shortest_path(graph, src, dst)) return {src, dst};
  }
  throw Error(ErrorKind::kRetriesExhausted,
              "no routable origin/destination pair after " + std::to_string(max_retries) + " draws");
}

struct TripSpec {
  std::size_t vehicle = 0;
  std::string origin;
  std::string destination;
  double depart = 0.0;  // seconds
  Route route;
};

inline std::vector<TripSpec> build_trips(const RoadGraph& graph, const TerminalSets& terminals,
                                         const ArrivalConfig& cfg, CounterRng& rng) {
  const auto departures = sample_departures(cfg, rng);
  std::vector<TripSpec> trips;
  trips.reserve(departures.size());
  for (std::size_t k = 0; k < departures.size(); ++k) {
    auto [src, dst] = sample_od(graph, terminals, rng);
    Route route = roadnet::shortest_path(graph, src, dst);
    trips.push_back({k, std::move(src), std::move(dst), departures[k], std::move(route)});
  }
  return trips;
}

/// Piecewise-linear t(s) = t0 + integral of 1/v over the route, with v the
/// per-edge speed limit.
class TimeMapping {
 public:
  TimeMapping(const RoadGraph& graph, const Route& route, double t0) : t0_(t0) {
    s_.push_back(0.0);
    t_.push_back(t0);
    for (const auto& id : route.edges) {
      const auto& e = graph.edge(id);
      s_.push_back(s_.back() + e.length);
      travel_ += e.length / e.speed_limit;
      t_.push_back(t0 + travel_);
      speed_.push_back(e.speed_limit);
    }
  }

  double start_time() const { return t0_; }
  double end_time() const { return t_.back(); }
  double total_length() const { return s_.back(); }
  /// Sum of L/v over the route, independent of t0.
  double travel_time() const { return travel_; }

  double time_at(double s) const {
    if (speed_.empty()) return t0_;
    s = std::clamp(s, 0.0, total_length());
    const std::size_t i = segment(s_, s);
    return t_[i] + (s - s_[i]) / speed_[i];
  }

  /// s with time_at(s) = t, clamped to the route.
  double arc_at(double t) const {
    if (speed_.empty()) return 0.0;
    t = std::clamp(t, t0_, end_time());
    const std::size_t i = segment(t_, t);
    return std::min(s_[i] + (t - t_[i]) * speed_[i], s_[i + 1]);
  }

  double speed_at(double s) const {
    if (speed_.empty()) return 0.0;
    return speed_[segment(s_, std::clamp(s, 0.0, total_length()))];
  }

 private:
  // index i of the piece with knots[i] <= x < knots[i+1], last piece inclusive
  std::size_t segment(const std::vector<double>& knots, double x) const {
    auto it = std::upper_bound(knots.begin(), knots.end(), x);
    std::size_t i = static_cast<std::size_t>(std::distance(knots.begin(), it));
    i = i == 0 ? 0 : i - 1;
    return std::min(i, speed_.size() - 1);
  }

  double t0_;
  double travel_ = 0.0;
  std::vector<double> s_;
  std::vector<double> t_;
  std::vector<double> speed_;
};

inline TimeMapping time_mapping(const RoadGraph& graph, const Route& route, double t0) {
  return TimeMapping(graph, route, t0);
}

/// r(s): the route's edge centerlines concatenated and parameterized by
/// arc length. Each edge polyline is rescaled onto its nominal length L.
class RouteGeometry {
 public:
  RouteGeometry(const RoadGraph& graph, const Route& route) {
    double offset = 0.0;
    for (const auto& id : route.edges) {
      const auto& e = graph.edge(id);
      const double scale = e.length / roadnet::polyline_length(e.centerline);
      double local = 0.0;
      for (std::size_t i = 0; i < e.centerline.size(); ++i) {
        if (i > 0) local += roadnet::distance(e.centerline[i - 1], e.centerline[i]) * scale;
        const double s = offset + (i + 1 == e.centerline.size() ? e.length : local);
        if (!arc_.empty() && s <= arc_.back()) {
          points_.back() = e.centerline[i];  // joint between consecutive edges
          continue;
        }
        arc_.push_back(s);
        points_.push_back(e.centerline[i]);
      }
      offset += e.length;
    }
    if (points_.size() == 1) {
      arc_.push_back(arc_.back());
      points_.push_back(points_.back());
    }
  }

  double length() const { return arc_.empty() ? 0.0 : arc_.back(); }
  std::span<const Point> points() const { return points_; }
  std::span<const double> arc() const { return arc_; }

  Point at(double s) const {
    const std::size_t i = piece(s);
    const double span = arc_[i + 1] - arc_[i];
    const double f = span > 0.0 ? std::clamp((s - arc_[i]) / span, 0.0, 1.0) : 0.0;
    return {points_[i].x + f * (points_[i + 1].x - points_[i].x),
            points_[i].y + f * (points_[i + 1].y - points_[i].y)};
  }

  /// Tangent direction (radians, atan2 convention) of the piece holding s.
  double heading_at(double s) const {
    std::size_t i = piece(s);
    // skip zero-length pieces
    while (i + 2 < points_.size() && points_[i] == points_[i + 1]) ++i;
    return std::atan2(points_[i + 1].y - points_[i].y, points_[i + 1].x - points_[i].x);
  }

 private:
  std::size_t piece(double s) const {
    auto it = std::upper_bound(arc_.begin(), arc_.end(), s);
    std::size_t i = static_cast<std::size_t>(std::distance(arc_.begin(), it));
    i = i == 0 ? 0 : i - 1;
    return std::min(i, points_.size() - 2);
  }

  std::vector<double> arc_;
  std::vector<Point> points_;
};

struct Sample {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;
  double s = 0.0;  // arc position the sample was evaluated at
};

struct Trajectory {
  std::size_t vehicle = 0;
  std::vector<Sample> samples;
  double step = 0.0;
};

/// Samples t_n = t0 + n*dt for n = 1..floor(T/dt), inverting t(s) and
/// evaluating the concatenated centerline.
inline Trajectory sample_trajectory(const RoadGraph& graph, const Route& route, const TimeMapping& mapping,
                                    double dt, std::size_t vehicle = 0) {
  if (!(dt > 0.0)) throw Error(ErrorKind::kInvalidValue, "sampling step must be > 0");
  const RouteGeometry geometry(graph, route);
  Trajectory traj{vehicle, {}, dt};
  const auto count = static_cast<std::size_t>(std::floor(mapping.travel_time() / dt));
  traj.samples.reserve(count);
  for (std::size_t n = 1; n <= count; ++n) {
    const double t = mapping.start_time() + static_cast<double>(n) * dt;
    const double s = mapping.arc_at(t);
    const Point p = geometry.at(s);
    traj.samples.push_back({p.x, p.y, t, s});
  }
  return traj;
}

/// Kinematic state of a vehicle that follows its route at speed limits.
struct VehicleState {
  Point position;
  double speed = 0.0;
  double heading = 0.0;
};

class RouteMotion {
 public:
  RouteMotion(const RoadGraph& graph, const Route& route, double depart)
      : geometry_(graph, route), mapping_(graph, route, depart) {}

  /// Present on the network during [depart, arrival].
  std::optional<VehicleState> state_at(double t) const {
    if (t < mapping_.start_time() || t > mapping_.end_time()) return std::nullopt;
    const double s = mapping_.arc_at(t);
    return VehicleState{geometry_.at(s), mapping_.speed_at(s), geometry_.heading_at(s)};
  }

  const RouteGeometry& geometry() const { return geometry_; }
  const TimeMapping& mapping() const { return mapping_; }

 private:
  RouteGeometry geometry_;
  TimeMapping mapping_;
};

/// Per-frame positions of one vehicle on the common frame grid.
using FrameTrack = std::vector<std::optional<Point>>;

inline FrameTrack frame_track(const RouteMotion& motion, double dt, std::size_t frames) {
  FrameTrack track(frames);
  for (std::size_t j = 0; j < frames; ++j)
    if (auto st = motion.state_at(static_cast<double>(j) * dt)) track[j] = st->position;
  return track;
}

/// Minimum same-frame distance between any two present vehicles; infinity
/// when no frame holds two vehicles.
inline double sweep_min_distance(std::span<const FrameTrack> tracks) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < tracks.size(); ++a)
    for (std::size_t b = a + 1; b < tracks.size(); ++b) {
      const std::size_t frames = std::min(tracks[a].size(), tracks[b].size());
      for (std::size_t j = 0; j < frames; ++j)
        if (tracks[a][j] && tracks[b][j]) best = std::min(best, roadnet::distance(*tracks[a][j], *tracks[b][j]));
    }
  return best;
}

struct DeconflictConfig {
  double step = 0.1;            // frame spacing dt, seconds
  double horizon = 6.0;         // frames cover [0, horizon]
  double safety_radius = 5.0;   // meters
  int max_delay_steps = 200;
};

/// Greedy departure delaying: trips are admitted in order, each delayed by
/// whole frames until it keeps the safety radius against every admitted
/// trip and every fixed obstacle track. Routes are never changed.
inline std::vector<TripSpec> deconflict(const RoadGraph& graph, std::vector<TripSpec> trips,
                                        const DeconflictConfig& cfg,
                                        std::span<const FrameTrack> obstacles = {}) {
  const auto frames = static_cast<std::size_t>(std::floor(cfg.horizon / cfg.step + 1e-9)) + 1;
  std::vector<FrameTrack> admitted(obstacles.begin(), obstacles.end());
  auto clashes = [&](const FrameTrack& track) {
    for (const auto& other : admitted)
      for (std::size_t j = 0; j < frames && j < other.size(); ++j)
        if (track[j] && other[j] && roadnet::distance(*track[j], *other[j]) < cfg.safety_radius) return true;
    return false;
  };
  for (auto& trip : trips) {
    bool placed = false;
    const double base = trip.depart;
    for (int delay = 0; delay <= cfg.max_delay_steps; ++delay) {
      const double depart = base + static_cast<double>(delay) * cfg.step;
      FrameTrack track = frame_track(RouteMotion(graph, trip.route, depart), cfg.step, frames);
      if (!clashes(track)) {
        trip.depart = depart;
        admitted.push_back(std::move(track));
        placed = true;
        break;
      }
    }
    if (!placed)
      throw Error(ErrorKind::kUnresolvableConflict, "vehicle " + std::to_string(trip.vehicle) +
                                                        " still conflicts after " +
                                                        std::to_string(cfg.max_delay_steps) + " delay steps");
  }
  return trips;
}

}  // namespace crashcast::trafficgen

#endif  // CRASHCAST_TRAFFICGEN_HPP_
