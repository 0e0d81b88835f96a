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

#ifndef CRASHCAST_ROADNET_HPP_
#define CRASHCAST_ROADNET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crashcast/error.hpp"
#include "crashcast/xml.hpp"

namespace crashcast::roadnet {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

inline double polyline_length(std::span<const Point> pts) {
  double total = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) total += distance(pts[i - 1], pts[i]);
  return total;
}

/// Straight segment a->b, bent through one perpendicular offset vertex when
/// `length` exceeds the chord so the arc length matches exactly.
inline std::vector<Point> detour_centerline(Point a, Point b, double length) {
  const double chord = distance(a, b);
  if (length <= chord * (1.0 + 1e-12) || chord == 0.0) return {a, b};
  const double h = std::sqrt(std::max(0.0, 0.25 * length * length - 0.25 * chord * chord));
  const Point mid{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
  const Point normal{-(b.y - a.y) / chord, (b.x - a.x) / chord};
  return {a, {mid.x + h * normal.x, mid.y + h * normal.y}, b};
}

struct RoadNode {
  std::string id;
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const RoadNode&, const RoadNode&) = default;
};

struct RoadEdge {
  std::string id;
  std::string from;
  std::string to;
  double length = 0.0;       // meters
  double speed_limit = 0.0;  // m/s
  std::vector<Point> centerline;
  bool internal = false;
  bool loop = false;

  /// w(e) = L / v, seconds.
  double travel_time() const { return length / speed_limit; }

  friend bool operator==(const RoadEdge&, const RoadEdge&) = default;
};

/// Immutable validated road network. Edges are addressed by id or by their
/// dense index (insertion order).
class RoadGraph {
 public:
  RoadGraph() = default;

  /// Validates every invariant; `lines` optionally maps edge index to the
  /// source line used in error messages.
  static RoadGraph build(std::vector<RoadNode> nodes, std::vector<RoadEdge> edges,
                         std::span<const int> edge_lines = {}) {
    RoadGraph g;
    auto where = [&](std::size_t i) {
      std::string s = "edge '" + edges[i].id + "'";
      if (i < edge_lines.size()) s += " (line " + std::to_string(edge_lines[i]) + ")";
      return s;
    };
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      if (!std::isfinite(n.x) || !std::isfinite(n.y))
        throw Error(ErrorKind::kInvalidValue, "node '" + n.id + "' has non-finite coordinates");
      if (!g.node_index_.emplace(n.id, i).second)
        throw Error(ErrorKind::kInvalidValue, "duplicate node id '" + n.id + "'");
    }
    g.outgoing_.assign(nodes.size(), {});
    g.incoming_.assign(nodes.size(), {});
    for (std::size_t i = 0; i < edges.size(); ++i) {
      auto& e = edges[i];
      auto from = g.node_index_.find(e.from);
      auto to = g.node_index_.find(e.to);
      if (from == g.node_index_.end())
        throw Error(ErrorKind::kDanglingReference, where(i) + " references missing node '" + e.from + "'");
      if (to == g.node_index_.end())
        throw Error(ErrorKind::kDanglingReference, where(i) + " references missing node '" + e.to + "'");
      if (!(e.length > 0.0) || !std::isfinite(e.length))
        throw Error(ErrorKind::kInvalidValue, where(i) + " has nonpositive length");
      if (!(e.speed_limit > 0.0) || !std::isfinite(e.speed_limit))
        throw Error(ErrorKind::kInvalidValue, where(i) + " has nonpositive speed");
      if (e.from == e.to && !e.loop)
        throw Error(ErrorKind::kInvalidValue, where(i) + " starts and ends at the same node but is not marked loop");
      if (e.centerline.empty()) {
        const auto& a = nodes[from->second];
        const auto& b = nodes[to->second];
        e.centerline = detour_centerline({a.x, a.y}, {b.x, b.y}, e.length);
      }
      if (e.centerline.size() < 2)
        throw Error(ErrorKind::kInvalidValue, where(i) + " centerline needs at least 2 points");
      const double arc = polyline_length(e.centerline);
      if (std::abs(arc - e.length) > 1e-6 * e.length)
        throw Error(ErrorKind::kInvalidValue, where(i) + " centerline length " + std::to_string(arc) +
                                                   " disagrees with length " + std::to_string(e.length));
      if (!g.edge_index_.emplace(e.id, i).second)
        throw Error(ErrorKind::kInvalidValue, "duplicate edge id '" + e.id + "'");
      g.outgoing_[from->second].push_back(i);
      g.incoming_[to->second].push_back(i);
      g.edge_from_.push_back(from->second);
      g.edge_to_.push_back(to->second);
    }
    g.nodes_ = std::move(nodes);
    g.edges_ = std::move(edges);
    return g;
  }

  const std::vector<RoadNode>& nodes() const { return nodes_; }
  const std::vector<RoadEdge>& edges() const { return edges_; }

  std::optional<std::size_t> find_edge(std::string_view id) const {
    auto it = edge_index_.find(std::string(id));
    if (it == edge_index_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<std::size_t> find_node(std::string_view id) const {
    auto it = node_index_.find(std::string(id));
    if (it == node_index_.end()) return std::nullopt;
    return it->second;
  }

  const RoadEdge& edge(std::size_t index) const { return edges_.at(index); }

  const RoadEdge& edge(std::string_view id) const {
    auto idx = find_edge(id);
    if (!idx) throw Error(ErrorKind::kDanglingReference, "unknown edge '" + std::string(id) + "'");
    return edges_[*idx];
  }

  /// Edges leaving the head node of edge `index`.
  std::span<const std::size_t> successors(std::size_t index) const {
    return outgoing_[edge_to_[index]];
  }
  std::span<const std::size_t> predecessors(std::size_t index) const {
    return incoming_[edge_from_[index]];
  }

  std::span<const std::size_t> outgoing(std::size_t node_index) const { return outgoing_[node_index]; }

  friend bool operator==(const RoadGraph& a, const RoadGraph& b) {
    return a.nodes_ == b.nodes_ && a.edges_ == b.edges_;
  }

 private:
  std::vector<RoadNode> nodes_;
  std::vector<RoadEdge> edges_;
  std::unordered_map<std::string, std::size_t> node_index_;
  std::unordered_map<std::string, std::size_t> edge_index_;
  std::vector<std::vector<std::size_t>> outgoing_;
  std::vector<std::vector<std::size_t>> incoming_;
  std::vector<std::size_t> edge_from_;
  std::vector<std::size_t> edge_to_;
};

namespace detail {

inline double parse_number(const xml::Element& el, std::string_view key, std::string_view owner) {
  auto raw = el.attribute(key);
  if (!raw)
    throw Error(ErrorKind::kMalformed, "line " + std::to_string(el.line) + ": " + std::string(owner) +
                                           " missing attribute '" + std::string(key) + "'");
  const std::string s(*raw);
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw Error(ErrorKind::kMalformed, "line " + std::to_string(el.line) + ": " + std::string(owner) +
                                           " attribute '" + std::string(key) + "' is not a number: '" + s + "'");
  return v;
}

inline std::string require(const xml::Element& el, std::string_view key) {
  auto raw = el.attribute(key);
  if (!raw)
    throw Error(ErrorKind::kMalformed, "line " + std::to_string(el.line) + ": <" + el.name +
                                           "> missing attribute '" + std::string(key) + "'");
  return std::string(*raw);
}

inline bool parse_flag(const xml::Element& el, std::string_view key) {
  auto raw = el.attribute(key);
  if (!raw || *raw == "false") return false;
  if (*raw == "true") return true;
  throw Error(ErrorKind::kMalformed, "line " + std::to_string(el.line) + ": attribute '" +
                                         std::string(key) + "' must be true or false");
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads the `<network>` XML format. Errors carry the offending id and line.
inline RoadGraph parse_network(std::string_view text) {
  const xml::Element root = xml::parse(text);
  if (root.name != "network")
    throw Error(ErrorKind::kMalformed, "line " + std::to_string(root.line) + ": root element must be <network>");
  std::vector<RoadNode> nodes;
  std::vector<RoadEdge> edges;
  std::vector<int> lines;
  for (const auto& child : root.children) {
    if (child.name == "node") {
      const std::string id = detail::require(child, "id");
      nodes.push_back({id, detail::parse_number(child, "x", "node '" + id + "'"),
                       detail::parse_number(child, "y", "node '" + id + "'")});
    } else if (child.name == "edge") {
      RoadEdge e;
      e.id = detail::require(child, "id");
      const std::string owner = "edge '" + e.id + "'";
      e.from = detail::require(child, "from");
      e.to = detail::require(child, "to");
      e.length = detail::parse_number(child, "length", owner);
      e.speed_limit = detail::parse_number(child, "speed", owner);
      e.internal = detail::parse_flag(child, "internal");
      e.loop = detail::parse_flag(child, "loop");
      for (const auto& pt : child.children) {
        if (pt.name != "pt")
          throw Error(ErrorKind::kMalformed, "line " + std::to_string(pt.line) + ": unexpected <" + pt.name +
                                                 "> inside " + owner);
        e.centerline.push_back({detail::parse_number(pt, "x", owner), detail::parse_number(pt, "y", owner)});
      }
      edges.push_back(std::move(e));
      lines.push_back(child.line);
    } else {
      throw Error(ErrorKind::kMalformed, "line " + std::to_string(child.line) + ": unexpected element <" +
                                             child.name + ">");
    }
  }
  return RoadGraph::build(std::move(nodes), std::move(edges), lines);
}

/// Inverse of parse_network; doubles are written with round-trip precision.
inline std::string serialize_network(const RoadGraph& graph) {
  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<network>\n";
  for (const auto& n : graph.nodes()) {
    out += "  <node id=\"" + xml::escape(n.id) + "\" x=\"" + detail::format_double(n.x) + "\" y=\"" +
           detail::format_double(n.y) + "\"/>\n";
  }
  for (const auto& e : graph.edges()) {
    out += "  <edge id=\"" + xml::escape(e.id) + "\" from=\"" + xml::escape(e.from) + "\" to=\"" +
           xml::escape(e.to) + "\" length=\"" + detail::format_double(e.length) + "\" speed=\"" +
           detail::format_double(e.speed_limit) + "\" internal=\"" + (e.internal ? "true" : "false") + "\"";
    if (e.loop) out += " loop=\"true\"";
    out += ">\n";
    for (const auto& p : e.centerline)
      out += "    <pt x=\"" + detail::format_double(p.x) + "\" y=\"" + detail::format_double(p.y) + "\"/>\n";
    out += "  </edge>\n";
  }
  out += "</network>\n";
  return out;
}

struct TerminalSets {
  std::vector<std::string> sources;       // E_src
  std::vector<std::string> destinations;  // E_dst
};

/// Origins are non-internal edges that can start a trip (every edge with
/// finite positive travel time is routable on its own); destinations are
/// the symmetric set. Both are sorted by id.
inline TerminalSets classify_terminals(const RoadGraph& graph) {
  TerminalSets t;
  for (std::size_t i = 0; i < graph.edges().size(); ++i) {
    const auto& e = graph.edge(i);
    if (e.internal) continue;
    const bool routable = std::isfinite(e.travel_time()) && e.travel_time() > 0.0;
    if (routable || !graph.successors(i).empty()) t.sources.push_back(e.id);
    if (routable || !graph.predecessors(i).empty()) t.destinations.push_back(e.id);
  }
  if (t.sources.empty() || t.destinations.empty())
    throw Error(ErrorKind::kEmptyTerminals, "network has no non-internal edges");
  std::sort(t.sources.begin(), t.sources.end());
  std::sort(t.destinations.begin(), t.destinations.end());
  return t;
}

struct Route {
  std::vector<std::string> edges;  // pi, head-to-tail
  double cost = 0.0;               // seconds, sum of w(e)
  double length = 0.0;             // meters, sum of L(e)

  friend bool operator==(const Route&, const Route&) = default;
};

/// L(route) = sum of edge lengths.
inline double path_length(const RoadGraph& graph, const Route& route) {
  double total = 0.0;
  for (const auto& id : route.edges) total += graph.edge(id).length;
  return total;
}

/// Builds a Route from an explicit edge sequence, checking connectivity.
inline Route make_route(const RoadGraph& graph, std::vector<std::string> edges) {
  Route r;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = graph.edge(edges[i]);
    if (i > 0 && graph.edge(edges[i - 1]).to != e.from)
      throw Error(ErrorKind::kInvalidValue, "edges '" + edges[i - 1] + "' and '" + e.id + "' are not head-to-tail");
    r.cost += e.travel_time();
    r.length += e.length;
  }
  r.edges = std::move(edges);
  return r;
}

/// Edge-to-edge Dijkstra over the line graph. Both endpoint edges are part
/// of the route and of its cost. Equal-cost routes are resolved by the
/// lexicographically smallest edge-id sequence. Returns nullopt when the
/// target cannot be reached.
inline std::optional<Route> try_shortest_path(const RoadGraph& graph, std::string_view source,
                                              std::string_view target) {
  const auto s = graph.find_edge(source);
  const auto t = graph.find_edge(target);
  if (!s) throw Error(ErrorKind::kDanglingReference, "unknown source edge '" + std::string(source) + "'");
  if (!t) throw Error(ErrorKind::kDanglingReference, "unknown target edge '" + std::string(target) + "'");

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  const std::size_t n = graph.edges().size();
  std::vector<double> cost(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> pred(n, kNone);
  std::vector<char> settled(n, 0);

  auto path_to = [&](std::size_t e) {
    std::vector<std::size_t> p;
    for (std::size_t cur = e; cur != kNone; cur = pred[cur]) p.push_back(cur);
    std::reverse(p.begin(), p.end());
    return p;
  };
  auto lex_less = [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end(),
                                        [&](std::size_t x, std::size_t y) { return graph.edge(x).id < graph.edge(y).id; });
  };

  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  cost[*s] = graph.edge(*s).travel_time();
  queue.emplace(cost[*s], *s);
  while (!queue.empty()) {
    const auto [c, e] = queue.top();
    queue.pop();
    if (settled[e] || c > cost[e]) continue;
    settled[e] = 1;
    if (e == *t) break;
    for (std::size_t next : graph.successors(e)) {
      if (settled[next] || next == *s) continue;
      const double candidate = c + graph.edge(next).travel_time();
      if (candidate < cost[next]) {
        cost[next] = candidate;
        pred[next] = e;
        queue.emplace(candidate, next);
      } else if (candidate == cost[next] && pred[next] != e) {
        auto current = path_to(pred[next]);
        auto offered = path_to(e);
        current.push_back(next);
        offered.push_back(next);
        if (lex_less(offered, current)) pred[next] = e;
      }
    }
  }
  if (!settled[*t]) return std::nullopt;

  Route route;
  for (std::size_t e : path_to(*t)) {
    const auto& edge = graph.edge(e);
    route.edges.push_back(edge.id);
    route.cost += edge.travel_time();
    route.length += edge.length;
  }
  return route;
}

inline Route shortest_path(const RoadGraph& graph, std::string_view source, std::string_view target) {
  auto route = try_shortest_path(graph, source, target);
  if (!route)
    throw Error(ErrorKind::kNoPath, "edge '" + std::string(target) + "' is unreachable from '" +
                                        std::string(source) + "'");
  return *std::move(route);
}

}  // namespace crashcast::roadnet

#endif  // CRASHCAST_ROADNET_HPP_
