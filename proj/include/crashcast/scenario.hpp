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

#ifndef CRASHCAST_SCENARIO_HPP_
#define CRASHCAST_SCENARIO_HPP_

// Positive (accident) and negative scenario synthesis on small road
// networks, ego-camera projection, behavior labels, validation, and the
// JSON-lines dataset format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "crashcast/error.hpp"
#include "crashcast/random.hpp"
#include "crashcast/roadnet.hpp"
#include "crashcast/trafficgen.hpp"
#include "json.hpp"

namespace crashcast::scenario {

using roadnet::Point;
using roadnet::RoadGraph;
using roadnet::Route;
using trafficgen::FrameTrack;
using trafficgen::VehicleState;

// ---- environment -----------------------------------------------------------

/// Categorical distribution over named values.
struct Categorical {
  std::vector<std::string> values;
  std::vector<double> weights;

  void validate(std::string_view attribute) const {
    if (values.empty() || values.size() != weights.size())
      throw Error(ErrorKind::kInvalidValue, std::string(attribute) + ": values and weights must pair up");
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w))
        throw Error(ErrorKind::kInvalidValue, std::string(attribute) + ": negative or non-finite weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw Error(ErrorKind::kInvalidValue, std::string(attribute) + ": weights sum to " + std::to_string(total));
  }
};

struct EnvironmentConfig {
  Categorical weather{{"clear", "rain", "fog", "snow"}, {0.55, 0.25, 0.1, 0.1}};
  Categorical lighting{{"day", "dusk", "night"}, {0.6, 0.2, 0.2}};
  Categorical road_type{{"urban", "suburban", "highway"}, {0.5, 0.3, 0.2}};

  void validate() const {
    weather.validate("weather");
    lighting.validate("lighting");
    road_type.validate("road_type");
  }
};

struct EnvironmentProfile {
  std::string weather;
  std::string lighting;
  std::string road_type;

  friend bool operator==(const EnvironmentProfile&, const EnvironmentProfile&) = default;
};

inline EnvironmentProfile sample_environment(const EnvironmentConfig& cfg, CounterRng& rng) {
  cfg.validate();
  EnvironmentProfile env;
  env.weather = cfg.weather.values[rng.categorical(cfg.weather.weights)];
  env.lighting = cfg.lighting.values[rng.categorical(cfg.lighting.weights)];
  env.road_type = cfg.road_type.values[rng.categorical(cfg.road_type.weights)];
  return env;
}

// ---- camera ----------------------------------------------------------------

struct EgoPose {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians, atan2 convention

  friend bool operator==(const EgoPose&, const EgoPose&) = default;
};

/// Forward-facing pinhole camera mounted on the ego vehicle.
struct EgoCamera {
  double half_fov = std::numbers::pi / 6.0;
  int width = 1280;
  int height = 720;
  double mount_height = 1.5;  // meters above the road

  double focal() const { return 0.5 * width / std::tan(half_fov); }
};

struct Projection {
  double cx = 0.0;
  double cy = 0.0;
  double depth = 0.0;  // forward distance, meters
};

/// Point in the ego frame: forward along the heading, lateral positive to
/// the left.
inline std::pair<double, double> to_ego_frame(const EgoPose& pose, Point p) {
  const double dx = p.x - pose.x, dy = p.y - pose.y;
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {c * dx + s * dy, -s * dx + c * dy};
}

inline double bearing(const EgoPose& pose, Point p) {
  const auto [fwd, lat] = to_ego_frame(pose, p);
  return std::atan2(lat, fwd);
}

inline std::optional<Projection> project_to_camera(Point p, const EgoPose& pose, const EgoCamera& cam) {
  const auto [fwd, lat] = to_ego_frame(pose, p);
  if (!(fwd > 0.0) || std::abs(std::atan2(lat, fwd)) > cam.half_fov) return std::nullopt;
  const double f = cam.focal();
  return Projection{0.5 * cam.width - f * lat / fwd, 0.5 * cam.height + f * cam.mount_height / fwd, fwd};
}

/// Inverse of project_to_camera: pixel column and depth back to the plane.
inline Point unproject(const Projection& pr, const EgoPose& pose, const EgoCamera& cam) {
  const double fwd = pr.depth;
  const double lat = (0.5 * cam.width - pr.cx) * fwd / cam.focal();
  const double c = std::cos(pose.heading), s = std::sin(pose.heading);
  return {pose.x + c * fwd - s * lat, pose.y + s * fwd + c * lat};
}

// ---- behavior labels -------------------------------------------------------

inline constexpr std::string_view kBehaviorLabels[] = {"straight",     "left-turn", "right-turn", "accelerating",
                                                       "braking",      "stopped",   "lane-change"};
inline constexpr std::string_view kSceneLabels[] = {"empty-road", "light-traffic", "dense-traffic", "collision"};

struct MotionSample {
  double x = 0.0;
  double y = 0.0;
  double t = 0.0;
  double speed = 0.0;
  double heading = 0.0;
};

struct BehaviorThresholds {
  double stopped_speed = 0.3;        // m/s
  double turn = 10.0 * std::numbers::pi / 180.0;
  double accel = 1.0;                // m/s^2
  double lane_change_offset = 0.75;  // meters of lateral drift
};

inline double wrap_angle(double a) {
  while (a > std::numbers::pi) a -= 2.0 * std::numbers::pi;
  while (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

/// Rule table, first match wins: stopped, turn, lane-change, speed change,
/// straight.
inline std::string behavior_label(std::span<const MotionSample> window, const BehaviorThresholds& th = {}) {
  if (window.size() < 2) return "straight";
  const auto& a = window.front();
  const auto& b = window.back();
  double top = 0.0;
  for (const auto& s : window) top = std::max(top, s.speed);
  if (top < th.stopped_speed) return "stopped";
  const double turn = wrap_angle(b.heading - a.heading);
  if (turn > th.turn) return "left-turn";
  if (turn < -th.turn) return "right-turn";
  const double lateral = -std::sin(a.heading) * (b.x - a.x) + std::cos(a.heading) * (b.y - a.y);
  if (std::abs(lateral) > th.lane_change_offset) return "lane-change";
  const double span = b.t - a.t;
  if (span > 0.0) {
    const double accel = (b.speed - a.speed) / span;
    if (accel > th.accel) return "accelerating";
    if (accel < -th.accel) return "braking";
  }
  return "straight";
}

// ---- records ---------------------------------------------------------------

struct ObjectObservation {
  int id = 0;
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  double heading = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double depth = 0.0;
  std::string behavior;

  friend bool operator==(const ObjectObservation&, const ObjectObservation&) = default;
};

/// Footprint length in meters; the roadside placeholder (id -1) is small.
inline double object_size(int id) { return id < 0 ? 1.0 : 4.5; }

struct ParticipantAnnotation {
  int id = 0;
  std::string origin;
  std::string destination;
  std::vector<std::string> route;
  std::vector<std::optional<Point>> track;  // per stored frame

  friend bool operator==(const ParticipantAnnotation&, const ParticipantAnnotation&) = default;
};

struct ScenarioRecord {
  std::string id;
  bool positive = false;
  double fps = 10.0;
  int frames = 0;
  std::optional<int> accident_frame;  // 1-based stored frame
  EnvironmentProfile environment;
  std::vector<std::vector<ObjectObservation>> objects;
  std::vector<std::string> scene_labels;

  // annotation block
  std::string map;
  std::string template_kind;
  std::vector<EgoPose> ego;
  std::vector<ParticipantAnnotation> participants;
  std::optional<Point> collision_point;

  friend bool operator==(const ScenarioRecord&, const ScenarioRecord&) = default;
};

// ---- preset maps -----------------------------------------------------------

namespace detail {

inline Point rotate(Point p, int quarter_turns) {
  Point r = p;
  for (int i = 0; i < ((quarter_turns % 4) + 4) % 4; ++i) r = {-r.y, r.x};
  return r;
}

inline std::vector<Point> quad_bezier(Point a, Point c, Point b, int pieces = 16) {
  std::vector<Point> pts;
  for (int i = 0; i <= pieces; ++i) {
    const double u = static_cast<double>(i) / pieces;
    const double w0 = (1 - u) * (1 - u), w1 = 2 * u * (1 - u), w2 = u * u;
    pts.push_back({w0 * a.x + w1 * c.x + w2 * b.x, w0 * a.y + w1 * c.y + w2 * b.y});
  }
  return pts;
}

// Intersection of the line through a with direction da and the line
// through b with direction db.
inline std::optional<Point> line_meet(Point a, Point da, Point b, Point db) {
  const double den = da.x * db.y - da.y * db.x;
  if (std::abs(den) < 1e-12) return std::nullopt;
  const double t = ((b.x - a.x) * db.y - (b.y - a.y) * db.x) / den;
  return Point{a.x + t * da.x, a.y + t * da.y};
}

struct MapBuilder {
  std::vector<roadnet::RoadNode> nodes;
  std::vector<roadnet::RoadEdge> edges;

  std::string node(const std::string& id, Point p) {
    nodes.push_back({id, p.x, p.y});
    return id;
  }

  void edge(const std::string& id, const std::string& from, const std::string& to, std::vector<Point> line,
            double speed, bool internal = false) {
    const double length = roadnet::polyline_length(line);
    edges.push_back({id, from, to, length, speed, std::move(line), internal, false});
  }

  RoadGraph build() { return RoadGraph::build(std::move(nodes), std::move(edges)); }
};

inline constexpr double kLane = 1.75;      // half lane width, meters
inline constexpr double kBox = 10.0;       // junction half size
inline constexpr double kArm = 100.0;      // approach length
inline constexpr double kUrbanSpeed = 13.89;
inline constexpr double kTurnSpeed = 8.0;

// Arms are indexed counterclockwise from south: S=0, E=1, N=2, W=3.
inline RoadGraph junction_map(std::span<const int> arms) {
  static constexpr const char* kNames[] = {"S", "E", "N", "W"};
  MapBuilder m;
  for (int a : arms) {
    const std::string n = kNames[a];
    const Point in0 = rotate({kLane, -kArm}, a), in1 = rotate({kLane, -kBox}, a);
    const Point out0 = rotate({-kLane, -kBox}, a), out1 = rotate({-kLane, -kArm}, a);
    m.edge(n + "_in", m.node(n + "_in_start", in0), m.node(n + "_in_end", in1), {in0, in1}, kUrbanSpeed);
    m.edge(n + "_out", m.node(n + "_out_start", out0), m.node(n + "_out_end", out1), {out0, out1}, kUrbanSpeed);
  }
  for (int a : arms)
    for (int b : arms) {
      if (a == b) continue;
      const Point start = rotate({kLane, -kBox}, a), heading_in = rotate({0, 1}, a);
      const Point end = rotate({-kLane, -kBox}, b), heading_out = rotate({0, -1}, b);
      std::vector<Point> line;
      if (auto c = line_meet(start, heading_in, end, heading_out))
        line = quad_bezier(start, *c, end);
      else
        line = {start, end};
      const bool straight = (b - a + 4) % 4 == 2;
      m.edge(std::string(kNames[a]) + "_" + kNames[b], std::string(kNames[a]) + "_in_end",
             std::string(kNames[b]) + "_out_start", std::move(line), straight ? kUrbanSpeed : kTurnSpeed, true);
    }
  return m.build();
}

// Two eastbound lanes (A nearer the center line, B outside) in three
// segments with lane-change connectors, plus one westbound lane W.
inline RoadGraph straight_map() {
  MapBuilder m;
  const double xs[] = {-150.0, -30.0, 0.0, 150.0};
  for (const auto& [lane, y] : {std::pair<std::string, double>{"A", -kLane}, {"B", -3 * kLane}}) {
    for (int i = 0; i < 4; ++i) m.node(lane + std::to_string(i), {xs[i], y});
    for (int i = 0; i < 3; ++i)
      m.edge(lane + std::to_string(i + 1), lane + std::to_string(i), lane + std::to_string(i + 1),
             {{xs[i], y}, {xs[i + 1], y}}, kUrbanSpeed);
  }
  m.node("W0", {150.0, kLane});
  m.node("W1", {-150.0, kLane});
  m.edge("W1", "W0", "W1", {{150.0, kLane}, {-150.0, kLane}}, kUrbanSpeed);
  m.edge("lcAB", "A1", "B2", {{-30.0, -kLane}, {0.0, -3 * kLane}}, kUrbanSpeed, true);
  m.edge("lcBA", "B1", "A2", {{-30.0, -3 * kLane}, {0.0, -kLane}}, kUrbanSpeed, true);
  return m.build();
}

}  // namespace detail

inline constexpr std::string_view kPresetMaps[] = {"intersection", "t-junction", "straight"};

/// Built-in networks for accident templates. Built once and shared.
inline const RoadGraph& preset_map(std::string_view name) {
  static const std::map<std::string, RoadGraph, std::less<>> maps = [] {
    std::map<std::string, RoadGraph, std::less<>> m;
    static constexpr int four[] = {0, 1, 2, 3};
    static constexpr int three[] = {0, 1, 3};
    m.emplace("intersection", detail::junction_map(four));
    m.emplace("t-junction", detail::junction_map(three));
    m.emplace("straight", detail::straight_map());
    return m;
  }();
  auto it = maps.find(name);
  if (it == maps.end()) throw Error(ErrorKind::kInvalidValue, "unknown preset map '" + std::string(name) + "'");
  return it->second;
}

// ---- templates -------------------------------------------------------------

struct Role {
  std::string name;
  std::string origin;
  std::string destination;
  double min_speed = 6.0;  // m/s
  double max_speed = 12.0;
};

struct AccidentTemplate {
  std::string kind;  // rear-end, crossing-path, turning-conflict, lane-change sideswipe
  std::string preset_map;
  std::vector<Role> roles;       // exactly two colliding participants
  double collision_lo = 3.0;     // seconds into the simulation
  double collision_hi = 5.0;
};

/// The built-in catalog: each accident kind on each preset that supports it.
inline std::vector<AccidentTemplate> template_catalog() {
  return {
      {"rear-end", "straight", {{"lead", "A1", "A3", 3.0, 6.0}, {"follower", "A1", "A3", 10.0, 14.0}}},
      {"rear-end", "intersection", {{"lead", "S_in", "N_out", 3.0, 6.0}, {"follower", "S_in", "N_out", 10.0, 14.0}}},
      {"crossing-path", "intersection", {{"northbound", "S_in", "N_out"}, {"eastbound", "W_in", "E_out"}}},
      {"crossing-path", "intersection", {{"westbound", "E_in", "W_out"}, {"southbound", "N_in", "S_out"}}},
      {"turning-conflict", "intersection", {{"left-turner", "S_in", "W_out", 5.0, 9.0}, {"oncoming", "N_in", "S_out"}}},
      {"turning-conflict", "t-junction", {{"left-turner", "S_in", "W_out", 5.0, 9.0}, {"through", "W_in", "E_out"}}},
      {"lane-change sideswipe", "straight", {{"merger", "A1", "B3", 8.0, 12.0}, {"passer", "B1", "B3", 8.0, 12.0}}},
  };
}

// ---- generation ------------------------------------------------------------

struct ScenarioConfig {
  double fps = 10.0;
  double sim_time = 6.0;          // T_sim, seconds
  std::size_t trim = 5;           // raw frames dropped at each end
  double traffic_count = 3.0;     // expected departures per sim_time
  double warmup = 8.0;            // seconds of traffic pre-roll before frame 0
  double safety_radius = 5.0;     // negatives, meters
  double collision_threshold = 2.0;
  std::size_t max_visible = 19;
  int max_attempts = 60;
  int max_delay_steps = 200;
  EgoCamera camera;
  EnvironmentConfig environment;
  BehaviorThresholds behavior;

  double dt() const { return 1.0 / fps; }
  std::size_t raw_frames() const { return static_cast<std::size_t>(std::llround(sim_time * fps)); }
  std::size_t stored_frames() const { return raw_frames() - 2 * trim; }
  // frames on the collision-check grid, including t = sim_time
  std::size_t grid_frames() const { return raw_frames() + 1; }

  void validate() const {
    if (!(fps > 0.0) || !(sim_time > 0.0)) throw Error(ErrorKind::kInvalidValue, "fps and sim_time must be > 0");
    if (raw_frames() <= 2 * trim + 1) throw Error(ErrorKind::kInvalidValue, "trim leaves no frames");
    if (!(traffic_count >= 0.0) || !(warmup >= 0.0)) throw Error(ErrorKind::kInvalidValue, "traffic must be >= 0");
    if (max_visible < 1) throw Error(ErrorKind::kInvalidValue, "max_visible must be >= 1");
    environment.validate();
  }
};

/// Per-grid-frame kinematics of one vehicle; absent frames are nullopt.
struct VehicleTrack {
  int id = 0;
  std::vector<std::optional<VehicleState>> states;
};

/// A generated record plus the full world tracks (ego first) used for
/// safety sweeps.
struct GeneratedScenario {
  ScenarioRecord record;
  std::vector<FrameTrack> world_tracks;
};

namespace detail {

// Route geometry extended along its end tangents, so a vehicle can be
// placed before the first or past the last vertex.
class ExtendedPath {
 public:
  ExtendedPath(const RoadGraph& g, const Route& r) : geo_(g, r) {}

  double length() const { return geo_.length(); }

  Point at(double s) const {
    if (s < 0.0) {
      const double h = geo_.heading_at(0.0);
      const Point p = geo_.at(0.0);
      return {p.x + s * std::cos(h), p.y + s * std::sin(h)};
    }
    if (s > length()) {
      const double h = geo_.heading_at(length());
      const Point p = geo_.at(length());
      return {p.x + (s - length()) * std::cos(h), p.y + (s - length()) * std::sin(h)};
    }
    return geo_.at(s);
  }

  double heading_at(double s) const { return geo_.heading_at(std::clamp(s, 0.0, length())); }

 private:
  trafficgen::RouteGeometry geo_;
};

inline FrameTrack positions(const VehicleTrack& v) {
  FrameTrack t(v.states.size());
  for (std::size_t j = 0; j < v.states.size(); ++j)
    if (v.states[j]) t[j] = v.states[j]->position;
  return t;
}

inline VehicleTrack route_track(const RoadGraph& g, const Route& route, double depart, int id,
                                const ScenarioConfig& cfg) {
  const trafficgen::RouteMotion motion(g, route, depart);
  VehicleTrack v{id, std::vector<std::optional<VehicleState>>(cfg.grid_frames())};
  for (std::size_t j = 0; j < v.states.size(); ++j) v.states[j] = motion.state_at(static_cast<double>(j) * cfg.dt());
  return v;
}

// First crossing of polyline b by polyline a, as arc positions (sa, sb).
inline std::optional<std::pair<double, double>> first_crossing(std::span<const Point> a, std::span<const Point> b) {
  double base_a = 0.0;
  for (std::size_t i = 0; i + 1 < a.size(); ++i) {
    const Point p = a[i], r{a[i + 1].x - a[i].x, a[i + 1].y - a[i].y};
    const double len_a = std::hypot(r.x, r.y);
    std::optional<std::pair<double, double>> best;
    double base_b = 0.0;
    for (std::size_t k = 0; k + 1 < b.size(); ++k) {
      const Point q = b[k], d{b[k + 1].x - b[k].x, b[k + 1].y - b[k].y};
      const double len_b = std::hypot(d.x, d.y);
      const double den = r.x * d.y - r.y * d.x;
      if (std::abs(den) > 1e-12 * std::max(1.0, len_a * len_b)) {
        const double u = ((q.x - p.x) * d.y - (q.y - p.y) * d.x) / den;
        const double w = ((q.x - p.x) * r.y - (q.y - p.y) * r.x) / den;
        constexpr double kSlack = 1e-9;
        if (u >= -kSlack && u <= 1 + kSlack && w >= -kSlack && w <= 1 + kSlack) {
          const std::pair<double, double> hit{base_a + std::clamp(u, 0.0, 1.0) * len_a,
                                              base_b + std::clamp(w, 0.0, 1.0) * len_b};
          if (!best || hit.first < best->first) best = hit;
        }
      }
      base_b += len_b;
    }
    if (best) return best;
    base_a += len_a;
  }
  return std::nullopt;
}

inline std::vector<std::pair<std::string, std::string>> routable_pairs(const RoadGraph& g) {
  const auto terminals = roadnet::classify_terminals(g);
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto& o : terminals.sources)
    for (const auto& d : terminals.destinations)
      if (o != d && roadnet::try_shortest_path(g, o, d)) pairs.emplace_back(o, d);
  return pairs;
}

// Background traffic on g with a warm-up pre-roll, deconflicted against
// the fixed tracks.
inline std::vector<VehicleTrack> background(const RoadGraph& g, const ScenarioConfig& cfg, CounterRng& rng,
                                            int first_id, std::span<const FrameTrack> fixed) {
  if (cfg.traffic_count <= 0.0) return {};
  const auto terminals = roadnet::classify_terminals(g);
  trafficgen::ArrivalConfig arrivals{cfg.traffic_count, cfg.sim_time, cfg.sim_time + cfg.warmup};
  auto trips = trafficgen::build_trips(g, terminals, arrivals, rng);
  for (auto& trip : trips) trip.depart -= cfg.warmup;
  trafficgen::DeconflictConfig dc{cfg.dt(), cfg.sim_time, cfg.safety_radius, cfg.max_delay_steps};
  trips = trafficgen::deconflict(g, std::move(trips), dc, fixed);
  std::vector<VehicleTrack> out;
  for (std::size_t k = 0; k < trips.size(); ++k) {
    auto v = route_track(g, trips[k].route, trips[k].depart, first_id + static_cast<int>(k), cfg);
    if (std::any_of(v.states.begin(), v.states.end(), [](const auto& s) { return s.has_value(); }))
      out.push_back(std::move(v));
  }
  // renumber densely in departure order
  for (std::size_t k = 0; k < out.size(); ++k) out[k].id = first_id + static_cast<int>(k);
  return out;
}

inline EgoPose pose_of(const VehicleState& s) { return {s.position.x, s.position.y, s.heading}; }

inline std::vector<MotionSample> window_of(const VehicleTrack& v, std::size_t j, double dt, std::size_t len = 10) {
  std::vector<MotionSample> w;
  const std::size_t lo = j + 1 >= len ? j + 1 - len : 0;
  for (std::size_t k = lo; k <= j; ++k) {
    if (!v.states[k]) {
      w.clear();
      continue;
    }
    const auto& s = *v.states[k];
    w.push_back({s.position.x, s.position.y, static_cast<double>(k) * dt, s.speed, s.heading});
  }
  return w;
}

inline std::string scene_label(std::size_t vehicles) {
  if (vehicles == 0) return "empty-road";
  return vehicles <= 3 ? "light-traffic" : "dense-traffic";
}

// Turns world tracks into the stored per-frame observation lists.
inline ScenarioRecord assemble(const ScenarioConfig& cfg, const VehicleTrack& ego,
                               std::span<const VehicleTrack> others, std::optional<int> accident_frame) {
  ScenarioRecord rec;
  rec.fps = cfg.fps;
  rec.frames = static_cast<int>(cfg.stored_frames());
  rec.accident_frame = accident_frame;
  rec.positive = accident_frame.has_value();
  const double dt = cfg.dt();
  for (std::size_t f = 0; f < cfg.stored_frames(); ++f) {
    const std::size_t j = cfg.trim + f;
    const EgoPose pose = pose_of(*ego.states[j]);
    rec.ego.push_back(pose);
    std::vector<ObjectObservation> seen;
    for (const auto& v : others) {
      if (!v.states[j]) continue;
      const auto& st = *v.states[j];
      const auto pr = project_to_camera(st.position, pose, cfg.camera);
      if (!pr) continue;
      const auto window = window_of(v, j, dt);
      seen.push_back({v.id, st.position.x, st.position.y, st.speed, st.heading, pr->cx, pr->cy, pr->depth,
                      behavior_label(window, cfg.behavior)});
    }
    std::sort(seen.begin(), seen.end(), [](const auto& a, const auto& b) {
      return a.depth != b.depth ? a.depth < b.depth : a.id < b.id;
    });
    if (seen.size() > cfg.max_visible) seen.resize(cfg.max_visible);
    const std::size_t vehicles = seen.size();
    if (seen.empty()) {
      // stationary roadside marker keeps every frame non-empty
      const double c = std::cos(pose.heading), s = std::sin(pose.heading);
      const double fwd = 20.0, lat = -6.0;
      const Point p{pose.x + c * fwd - s * lat, pose.y + s * fwd + c * lat};
      const auto pr = *project_to_camera(p, pose, cfg.camera);
      seen.push_back({-1, p.x, p.y, 0.0, pose.heading, pr.cx, pr.cy, pr.depth, "stopped"});
    }
    rec.objects.push_back(std::move(seen));
    const bool crashed = accident_frame && static_cast<int>(f) + 1 >= *accident_frame;
    rec.scene_labels.push_back(crashed ? "collision" : scene_label(vehicles));
  }
  return rec;
}

inline std::vector<FrameTrack> world_tracks(const VehicleTrack& ego, std::span<const VehicleTrack> others) {
  std::vector<FrameTrack> tracks{positions(ego)};
  for (const auto& v : others) tracks.push_back(positions(v));
  return tracks;
}

}  // namespace detail

/// Collision-free scene: the ego departs at t = 0 on `ego_route` (and waits
/// at its end), background traffic yields to it by departure delays.
inline GeneratedScenario generate_negative(const RoadGraph& map, const ScenarioConfig& cfg, const Route& ego_route,
                                           CounterRng& rng) {
  cfg.validate();
  const trafficgen::TimeMapping mapping(map, ego_route, 0.0);
  const trafficgen::RouteGeometry geometry(map, ego_route);
  VehicleTrack ego{0, std::vector<std::optional<VehicleState>>(cfg.grid_frames())};
  for (std::size_t j = 0; j < ego.states.size(); ++j) {
    const double t = static_cast<double>(j) * cfg.dt();
    const bool arrived = t >= mapping.end_time();
    const double s = arrived ? mapping.total_length() : mapping.arc_at(t);
    ego.states[j] = VehicleState{geometry.at(s), arrived ? 0.0 : mapping.speed_at(s), geometry.heading_at(s)};
  }
  CounterRng env_rng = rng.split(1), traffic_rng = rng.split(2);
  const FrameTrack ego_positions = detail::positions(ego);
  const auto others = detail::background(map, cfg, traffic_rng, 1, std::span<const FrameTrack>(&ego_positions, 1));
  GeneratedScenario out;
  out.record = detail::assemble(cfg, ego, others, std::nullopt);
  out.record.environment = sample_environment(cfg.environment, env_rng);
  out.world_tracks = detail::world_tracks(ego, others);
  return out;
}

/// Accident scene from a template: two participants follow their OD
/// shortest paths and meet at the first crossing of their routes while the
/// ego camera watches from 8-45 m with the impact inside its field of view.
inline GeneratedScenario generate_positive(const AccidentTemplate& tpl, const ScenarioConfig& cfg, CounterRng& rng,
                                           const RoadGraph* map_override = nullptr) {
  cfg.validate();
  if (tpl.roles.size() != 2) throw Error(ErrorKind::kUnsatisfiable, "template needs exactly two participants");
  const RoadGraph& map = map_override ? *map_override : preset_map(tpl.preset_map);
  std::vector<Route> routes;
  for (const auto& role : tpl.roles) {
    auto r = roadnet::try_shortest_path(map, role.origin, role.destination);
    if (!r)
      throw Error(ErrorKind::kUnsatisfiable, "role '" + role.name + "' has no route " + role.origin + " -> " +
                                                 role.destination);
    routes.push_back(std::move(*r));
  }
  const detail::ExtendedPath path0(map, routes[0]), path1(map, routes[1]);
  const bool shared = routes[0].edges == routes[1].edges;
  std::optional<std::pair<double, double>> crossing;
  if (!shared) {
    crossing = detail::first_crossing(trafficgen::RouteGeometry(map, routes[0]).points(),
                                      trafficgen::RouteGeometry(map, routes[1]).points());
    if (!crossing)
      throw Error(ErrorKind::kUnsatisfiable, "template '" + tpl.kind + "' routes never intersect");
  }
  const auto ego_pairs = detail::routable_pairs(map);
  const double dt = cfg.dt();
  const std::size_t frames = cfg.grid_frames();
  const int j_lo = static_cast<int>(std::ceil(tpl.collision_lo * cfg.fps - 1e-9));
  const int j_hi = static_cast<int>(std::floor(tpl.collision_hi * cfg.fps + 1e-9));
  if (j_lo > j_hi) throw Error(ErrorKind::kUnsatisfiable, "empty collision window");

  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    CounterRng a = rng.split(static_cast<std::uint64_t>(attempt) + 16);
    const int jc = j_lo + static_cast<int>(a.below(static_cast<std::uint64_t>(j_hi - j_lo + 1)));
    const double tc = jc * dt;
    const double v0 = a.uniform(tpl.roles[0].min_speed, tpl.roles[0].max_speed);
    const double v1 = a.uniform(tpl.roles[1].min_speed, tpl.roles[1].max_speed);
    double s0 = 0.0, s1 = 0.0;
    if (shared) {
      s0 = s1 = a.uniform(0.45, 0.65) * path0.length();
    } else {
      s0 = crossing->first;
      s1 = crossing->second;
    }
    // constant speed towards the meeting point, absent before route start
    std::vector<VehicleTrack> parts{{1, std::vector<std::optional<VehicleState>>(frames)},
                                            {2, std::vector<std::optional<VehicleState>>(frames)}};
    const detail::ExtendedPath* paths[] = {&path0, &path1};
    const double meet[] = {s0, s1}, speed[] = {v0, v1};
    for (int p = 0; p < 2; ++p)
      for (std::size_t j = 0; j < frames; ++j) {
        const double s = meet[p] - speed[p] * (tc - static_cast<double>(j) * dt);
        if (s < 0.0) continue;
        parts[p].states[j] = VehicleState{paths[p]->at(s), speed[p], paths[p]->heading_at(s)};
      }
    std::optional<std::size_t> contact;
    for (std::size_t j = 0; j < frames && !contact; ++j)
      if (parts[0].states[j] && parts[1].states[j] &&
          roadnet::distance(parts[0].states[j]->position, parts[1].states[j]->position) <= cfg.collision_threshold)
        contact = j;
    const std::size_t first_stored = cfg.trim, last_stored = cfg.trim + cfg.stored_frames() - 1;
    if (!contact || *contact <= first_stored || *contact >= last_stored) continue;
    // both stop at first contact
    for (auto& part : parts)
      for (std::size_t j = *contact + 1; j < frames; ++j) {
        part.states[j] = part.states[*contact];
        part.states[j]->speed = 0.0;
      }
    const Point p0 = parts[0].states[*contact]->position, p1 = parts[1].states[*contact]->position;
    const Point impact{0.5 * (p0.x + p1.x), 0.5 * (p0.y + p1.y)};
    const double t_acc = static_cast<double>(*contact) * dt;

    // ego: pick a route and an arc position that frames the impact
    const auto& [ego_o, ego_d] = ego_pairs[a.below(ego_pairs.size())];
    const Route ego_route = roadnet::shortest_path(map, ego_o, ego_d);
    const detail::ExtendedPath ego_path(map, ego_route);
    const double ve = a.uniform(5.0, 11.0);
    std::vector<std::pair<double, double>> candidates;  // (arc, forward distance)
    for (double s = -60.0; s <= ego_path.length(); s += 0.5) {
      const EgoPose pose{ego_path.at(s).x, ego_path.at(s).y, ego_path.heading_at(s)};
      const auto [fwd, lat] = to_ego_frame(pose, impact);
      if (fwd >= 8.0 && fwd <= 45.0 && std::abs(std::atan2(lat, fwd)) <= cfg.camera.half_fov - 0.08)
        candidates.emplace_back(s, fwd);
    }
    if (candidates.empty()) continue;
    const auto [se, gap] = candidates[a.below(candidates.size())];
    const double brake = std::clamp(ve * ve / (2.0 * std::max(gap - 6.0, 1.0)), 3.0, 9.0);
    VehicleTrack ego{0, std::vector<std::optional<VehicleState>>(frames)};
    for (std::size_t j = 0; j < frames; ++j) {
      const double t = static_cast<double>(j) * dt;
      double s = 0.0, v = ve;
      if (t <= t_acc) {
        s = se - ve * (t_acc - t);
      } else {
        const double tau = std::min(t - t_acc, ve / brake);
        s = se + ve * tau - 0.5 * brake * tau * tau;
        v = ve - brake * tau;
      }
      ego.states[j] = VehicleState{ego_path.at(s), v, ego_path.heading_at(s)};
    }
    bool clear = true;
    for (const auto& part : parts)
      for (std::size_t j = 0; j < frames && clear; ++j)
        if (part.states[j] && roadnet::distance(part.states[j]->position, ego.states[j]->position) <
                                  cfg.collision_threshold + 0.5)
          clear = false;
    if (!clear) continue;

    std::vector<FrameTrack> fixed{detail::positions(ego), detail::positions(parts[0]), detail::positions(parts[1])};
    std::vector<VehicleTrack> others;
    try {
      CounterRng traffic_rng = a.split(2);
      others = detail::background(map, cfg, traffic_rng, 3, fixed);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kUnresolvableConflict) continue;
      throw;
    }
    others.insert(others.begin(), parts.begin(), parts.end());

    const int accident_frame = static_cast<int>(*contact - cfg.trim) + 1;
    GeneratedScenario out;
    out.record = detail::assemble(cfg, ego, others, accident_frame);
    CounterRng env_rng = rng.split(1);
    out.record.environment = sample_environment(cfg.environment, env_rng);
    out.record.map = tpl.preset_map;
    out.record.template_kind = tpl.kind;
    out.record.collision_point = impact;
    for (int p = 0; p < 2; ++p) {
      ParticipantAnnotation ann{parts[p].id, tpl.roles[p].origin, tpl.roles[p].destination, routes[p].edges, {}};
      for (std::size_t f = 0; f < cfg.stored_frames(); ++f) {
        const auto& st = parts[p].states[cfg.trim + f];
        ann.track.push_back(st ? std::optional<Point>(st->position) : std::nullopt);
      }
      out.record.participants.push_back(std::move(ann));
    }
    out.world_tracks = detail::world_tracks(ego, others);
    return out;
  }
  throw Error(ErrorKind::kUnsatisfiable, "template '" + tpl.kind + "' on '" + tpl.preset_map +
                                             "' unsatisfied after " + std::to_string(cfg.max_attempts) + " attempts");
}

// ---- validation ------------------------------------------------------------

struct CheckResult {
  std::string name;
  bool passed = true;
  std::string detail;
};

struct ValidationReport {
  std::vector<CheckResult> checks;

  bool ok() const {
    return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
  }
  const CheckResult* find(std::string_view name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }
};

/// Checks record invariants; positives also get the four generation
/// constraints (od-routes, intersection, camera-fov, accident-annotated).
inline ValidationReport validate_scenario(const ScenarioRecord& rec, const ScenarioConfig& cfg = {}) {
  ValidationReport report;
  auto check = [&](std::string name, bool ok, std::string detail = {}) {
    report.checks.push_back({std::move(name), ok, ok ? std::string() : std::move(detail)});
  };
  const auto frames = static_cast<std::size_t>(std::max(rec.frames, 0));
  check("frame-count", rec.frames > 0 && rec.objects.size() == frames && rec.scene_labels.size() == frames &&
                           rec.ego.size() == frames,
        "objects, scene labels and ego poses must each hold `frames` entries");
  bool counts = true;
  for (const auto& f : rec.objects) counts = counts && !f.empty() && f.size() <= cfg.max_visible;
  check("visible-count", counts, "every frame needs 1.." + std::to_string(cfg.max_visible) + " objects");
  check("accident-presence", rec.accident_frame.has_value() == rec.positive,
        "accident frame must be present exactly for positives");
  if (rec.accident_frame)
    check("accident-range", *rec.accident_frame > 0 && *rec.accident_frame < rec.frames,
          "accident frame " + std::to_string(*rec.accident_frame) + " outside (0, frames)");
  double worst = 0.0;
  if (rec.ego.size() == frames)
    for (std::size_t f = 0; f < rec.objects.size(); ++f)
      for (const auto& o : rec.objects[f]) {
        const Point back = unproject({o.cx, o.cy, o.depth}, rec.ego[f], cfg.camera);
        worst = std::max(worst, roadnet::distance(back, {o.x, o.y}));
        const auto pr = project_to_camera({o.x, o.y}, rec.ego[f], cfg.camera);
        if (!pr) worst = std::numeric_limits<double>::infinity();
      }
  check("projection", worst <= 1e-6, "reprojection error " + std::to_string(worst) + " m");
  if (!rec.positive || !rec.accident_frame || !report.ok()) return report;

  // (i) participants follow shortest paths for their OD pairs
  bool od_ok = rec.participants.size() == 2;
  std::string od_detail;
  try {
    const RoadGraph& map = preset_map(rec.map);
    for (const auto& p : rec.participants) {
      auto r = roadnet::try_shortest_path(map, p.origin, p.destination);
      if (!r || r->edges != p.route || p.route.front() != p.origin || p.route.back() != p.destination) {
        od_ok = false;
        od_detail = "participant " + std::to_string(p.id) + " route does not match its OD";
      }
    }
  } catch (const Error& e) {
    od_ok = false;
    od_detail = e.what();
  }
  check("od-routes", od_ok, od_detail);

  // (ii) participants meet at the accident frame
  const std::size_t fa = static_cast<std::size_t>(*rec.accident_frame) - 1;
  bool meet_ok = false;
  std::string meet_detail = "participants not both present at the accident frame";
  if (rec.participants.size() == 2 && rec.participants[0].track.size() == frames &&
      rec.participants[1].track.size() == frames) {
    const auto& a = rec.participants[0].track;
    const auto& b = rec.participants[1].track;
    if (a[fa] && b[fa]) {
      const double d = roadnet::distance(*a[fa], *b[fa]);
      meet_ok = d <= cfg.collision_threshold;
      meet_detail = "separation " + std::to_string(d) + " m at the accident frame";
    }
  }
  check("intersection", meet_ok, meet_detail);

  // (iii) impact inside the camera's half field of view
  bool fov_ok = false;
  std::string fov_detail = "no collision point";
  if (rec.collision_point) {
    const auto [fwd, lat] = to_ego_frame(rec.ego[fa], *rec.collision_point);
    const double deg = std::abs(std::atan2(lat, fwd)) * 180.0 / std::numbers::pi;
    fov_ok = fwd > 0.0 && deg <= cfg.camera.half_fov * 180.0 / std::numbers::pi + 1e-9;
    fov_detail = "bearing " + std::to_string(deg) + " deg";
  }
  check("camera-fov", fov_ok, fov_detail);

  // (iv) annotated frame is the first frame of contact
  bool first_ok = meet_ok;
  if (meet_ok)
    for (std::size_t f = 0; f < fa; ++f) {
      const auto& a = rec.participants[0].track[f];
      const auto& b = rec.participants[1].track[f];
      if (a && b && roadnet::distance(*a, *b) <= cfg.collision_threshold) first_ok = false;
    }
  check("accident-annotated", first_ok, "contact happens before the annotated frame");
  return report;
}

// ---- JSON lines ------------------------------------------------------------

using Json = nlohmann::ordered_json;

inline Json to_json(const ScenarioRecord& rec) {
  Json j;
  j["id"] = rec.id;
  j["positive"] = rec.positive ? 1 : 0;
  j["fps"] = rec.fps;
  j["frames"] = rec.frames;
  j["accident_frame"] = rec.accident_frame ? Json(*rec.accident_frame) : Json(nullptr);
  j["environment"] = {{"weather", rec.environment.weather},
                      {"lighting", rec.environment.lighting},
                      {"road_type", rec.environment.road_type}};
  Json frames = Json::array();
  for (const auto& f : rec.objects) {
    Json objs = Json::array();
    for (const auto& o : f)
      objs.push_back({{"id", o.id}, {"x", o.x}, {"y", o.y}, {"speed", o.speed}, {"heading", o.heading},
                      {"cx", o.cx}, {"cy", o.cy}, {"depth", o.depth}, {"behavior", o.behavior}});
    frames.push_back(std::move(objs));
  }
  j["objects"] = std::move(frames);
  j["scene_labels"] = rec.scene_labels;
  Json ann;
  ann["map"] = rec.map;
  ann["template"] = rec.template_kind;
  Json ego = Json::array();
  for (const auto& p : rec.ego) ego.push_back({p.x, p.y, p.heading});
  ann["ego"] = std::move(ego);
  Json parts = Json::array();
  for (const auto& p : rec.participants) {
    Json track = Json::array();
    for (const auto& q : p.track) track.push_back(q ? Json{q->x, q->y} : Json(nullptr));
    parts.push_back({{"id", p.id},
                     {"origin", p.origin},
                     {"destination", p.destination},
                     {"route", p.route},
                     {"track", std::move(track)}});
  }
  ann["participants"] = std::move(parts);
  ann["collision_point"] = rec.collision_point ? Json{rec.collision_point->x, rec.collision_point->y} : Json(nullptr);
  j["annotation"] = std::move(ann);
  return j;
}

inline ScenarioRecord from_json(const Json& j) {
  try {
    ScenarioRecord rec;
    rec.id = j.at("id").get<std::string>();
    const auto& pos = j.at("positive");
    rec.positive = pos.is_boolean() ? pos.get<bool>() : pos.get<int>() != 0;
    rec.fps = j.at("fps").get<double>();
    rec.frames = j.at("frames").get<int>();
    if (!j.at("accident_frame").is_null()) rec.accident_frame = j.at("accident_frame").get<int>();
    const auto& env = j.at("environment");
    rec.environment = {env.at("weather").get<std::string>(), env.at("lighting").get<std::string>(),
                       env.at("road_type").get<std::string>()};
    for (const auto& f : j.at("objects")) {
      std::vector<ObjectObservation> objs;
      for (const auto& o : f)
        objs.push_back({o.at("id").get<int>(), o.at("x").get<double>(), o.at("y").get<double>(),
                        o.at("speed").get<double>(), o.at("heading").get<double>(), o.at("cx").get<double>(),
                        o.at("cy").get<double>(), o.at("depth").get<double>(), o.at("behavior").get<std::string>()});
      rec.objects.push_back(std::move(objs));
    }
    rec.scene_labels = j.at("scene_labels").get<std::vector<std::string>>();
    if (j.contains("annotation")) {
      const auto& ann = j.at("annotation");
      rec.map = ann.value("map", "");
      rec.template_kind = ann.value("template", "");
      for (const auto& p : ann.at("ego")) rec.ego.push_back({p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()});
      for (const auto& p : ann.at("participants")) {
        ParticipantAnnotation pa{p.at("id").get<int>(), p.at("origin").get<std::string>(),
                                 p.at("destination").get<std::string>(),
                                 p.at("route").get<std::vector<std::string>>(), {}};
        for (const auto& q : p.at("track"))
          pa.track.push_back(q.is_null() ? std::nullopt : std::optional<Point>(Point{q.at(0).get<double>(), q.at(1).get<double>()}));
        rec.participants.push_back(std::move(pa));
      }
      if (!ann.at("collision_point").is_null())
        rec.collision_point = Point{ann.at("collision_point").at(0).get<double>(),
                                    ann.at("collision_point").at(1).get<double>()};
    }
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kMalformed, std::string("scenario record: ") + e.what());
  }
}

inline void write_jsonl(std::ostream& out, std::span<const ScenarioRecord> records) {
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

inline std::vector<ScenarioRecord> read_jsonl(std::istream& in) {
  std::vector<ScenarioRecord> records;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    try {
      records.push_back(from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::kMalformed, "line " + std::to_string(number) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::kMalformed, "line " + std::to_string(number) + ": " + e.what());
    }
  }
  return records;
}

// ---- datasets --------------------------------------------------------------

/// Scenario i of n is positive when floor((i+1) r) > floor(i r), which
/// spreads exactly floor(n r) positives evenly over the ids.
inline bool is_positive_index(std::size_t i, double ratio) {
  return std::floor(static_cast<double>(i + 1) * ratio + 1e-12) > std::floor(static_cast<double>(i) * ratio + 1e-12);
}

inline std::string scenario_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "scn-" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

/// Pure function of (network, config, seed, index): positives come from
/// the template catalog, negatives run on `network`.
inline GeneratedScenario generate_indexed(const RoadGraph& network, const ScenarioConfig& cfg, std::uint64_t seed,
                                          std::size_t index, bool positive) {
  CounterRng rng = CounterRng(seed, 0x5ce9a210).split(index);
  GeneratedScenario out;
  if (positive) {
    static const auto catalog = template_catalog();
    CounterRng pick = rng.split(7);
    const auto& tpl = catalog[pick.below(catalog.size())];
    out = generate_positive(tpl, cfg, rng);
  } else {
    const auto terminals = roadnet::classify_terminals(network);
    CounterRng ego_rng = rng.split(9);
    const auto [o, d] = trafficgen::sample_od(network, terminals, ego_rng);
    out = generate_negative(network, cfg, roadnet::shortest_path(network, o, d), rng);
    out.record.map = "network";
  }
  out.record.id = scenario_id(index);
  return out;
}

}  // namespace crashcast::scenario

#endif  // CRASHCAST_SCENARIO_HPP_
