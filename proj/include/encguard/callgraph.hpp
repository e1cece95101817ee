// Copyright 2026 The encguard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "encguard/trace_ingest.hpp"

namespace encguard {

struct NodeStats {
  std::uint64_t invocations = 0;
  double total_duration_us = 0.0;
  bool operator==(const NodeStats&) const = default;
};

struct EdgeStats {
  std::uint64_t count = 0;
  std::optional<double> mean_gap_us;  // mean time between successive calls on this edge
  bool operator==(const EdgeStats&) const = default;
};

/// Kernel symbols as nodes, parent->child call relations as edges. Ordered
/// maps keep node indexing (and therefore every metric) deterministic.
struct CallGraph {
  std::map<std::string, NodeStats> nodes;
  std::map<std::pair<std::string, std::string>, EdgeStats> edges;

  bool operator==(const CallGraph&) const = default;

  std::size_t size() const { return nodes.size(); }
};

struct GraphMetrics {
  double betweenness = 0.0;
  double clustering = 0.0;
  double avg_shortest_path = 0.0;
  double total_duration_us = 0.0;
  bool operator==(const GraphMetrics&) const = default;
};

/// Builds the call graph of one event stream. Each entry/leaf at depth d>0 is
/// linked to the innermost open entry at depth d-1 on the same (cpu, pid).
inline CallGraph build_graph(std::span<const TraceEvent> events) {
  CallGraph g;
  std::map<std::pair<int, int>, std::vector<const TraceEvent*>> stacks;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> gap_acc;  // last ts, gap sum
  for (const auto& e : events) {
    auto& stack = stacks[{e.cpu, e.pid}];
    if (e.kind == EventKind::Exit) {
      g.nodes[e.symbol].total_duration_us += e.duration_us.value_or(0.0);
      if (!stack.empty()) stack.pop_back();
      continue;
    }
    auto& node = g.nodes[e.symbol];
    ++node.invocations;
    if (e.kind == EventKind::Leaf) node.total_duration_us += e.duration_us.value_or(0.0);

    if (e.depth > 0 && !stack.empty()) {
      // innermost open entry at depth d-1
      const TraceEvent* parent = nullptr;
      for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
        if ((*it)->depth == e.depth - 1) {
          parent = *it;
          break;
        }
      }
      if (parent) {
        auto key = std::make_pair(parent->symbol, e.symbol);
        auto& edge = g.edges[key];
        auto [acc, fresh] = gap_acc.try_emplace(key, e.timestamp_us, 0.0);
        if (!fresh) {
          acc->second.second += e.timestamp_us - acc->second.first;
          acc->second.first = e.timestamp_us;
        }
        ++edge.count;
        if (edge.count > 1) edge.mean_gap_us = acc->second.second / static_cast<double>(edge.count - 1);
      }
    }
    if (e.kind == EventKind::Entry) stack.push_back(&e);
  }
  return g;
}

inline CallGraph build_graph(const TraceSession& session) { return build_graph(std::span(session.events)); }

namespace detail {

struct IndexedGraph {
  std::vector<std::string> names;
  std::vector<std::vector<int>> out;  // simple, no self-loops, sorted
  std::vector<std::vector<int>> undirected;
};

inline IndexedGraph index_graph(const CallGraph& g) {
  IndexedGraph ig;
  std::map<std::string, int> idx;
  for (const auto& [name, _] : g.nodes) {
    idx[name] = static_cast<int>(ig.names.size());
    ig.names.push_back(name);
  }
  ig.out.resize(ig.names.size());
  ig.undirected.resize(ig.names.size());
  for (const auto& [key, _] : g.edges) {
    int a = idx.at(key.first), b = idx.at(key.second);
    if (a == b) continue;
    ig.out[a].push_back(b);
    ig.undirected[a].push_back(b);
    ig.undirected[b].push_back(a);
  }
  for (auto* lists : {&ig.out, &ig.undirected}) {
    for (auto& v : *lists) {
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
    }
  }
  return ig;
}

}  // namespace detail

/// Shortest-path betweenness on the directed, unweighted simple graph
/// (Brandes accumulation), endpoints excluded, scaled by 1/((n-1)(n-2)).
/// Graphs with fewer than three nodes score 0 everywhere.
inline std::map<std::string, double> betweenness(const CallGraph& g) {
  auto ig = detail::index_graph(g);
  const int n = static_cast<int>(ig.names.size());
  std::vector<double> cb(n, 0.0);
  if (n >= 3) {
    std::vector<int> order;
    std::vector<std::vector<int>> preds(n);
    std::vector<double> sigma(n), delta(n);
    std::vector<int> dist(n);
    for (int s = 0; s < n; ++s) {
      order.clear();
      for (auto& p : preds) p.clear();
      std::fill(sigma.begin(), sigma.end(), 0.0);
      std::fill(dist.begin(), dist.end(), -1);
      sigma[s] = 1.0;
      dist[s] = 0;
      std::deque<int> q{s};
      while (!q.empty()) {
        int v = q.front();
        q.pop_front();
        order.push_back(v);
        for (int w : ig.out[v]) {
          if (dist[w] < 0) {
            dist[w] = dist[v] + 1;
            q.push_back(w);
          }
          if (dist[w] == dist[v] + 1) {
            sigma[w] += sigma[v];
            preds[w].push_back(v);
          }
        }
      }
      std::fill(delta.begin(), delta.end(), 0.0);
      for (auto it = order.rbegin(); it != order.rend(); ++it) {
        int w = *it;
        for (int v : preds[w]) delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        if (w != s) cb[w] += delta[w];
      }
    }
    const double scale = 1.0 / (static_cast<double>(n - 1) * static_cast<double>(n - 2));
    for (auto& c : cb) c *= scale;
  }
  std::map<std::string, double> out;
  for (int i = 0; i < n; ++i) out[ig.names[i]] = cb[i];
  return out;
}

/// Local clustering on the undirected projection (self-loops and edge
/// direction ignored). Degree < 2 scores 0.
inline std::map<std::string, double> clustering(const CallGraph& g) {
  auto ig = detail::index_graph(g);
  const int n = static_cast<int>(ig.names.size());
  std::map<std::string, double> out;
  for (int v = 0; v < n; ++v) {
    const auto& nb = ig.undirected[v];
    const double deg = static_cast<double>(nb.size());
    double c = 0.0;
    if (nb.size() >= 2) {
      std::size_t links = 0;
      for (std::size_t i = 0; i < nb.size(); ++i) {
        const auto& ni = ig.undirected[nb[i]];
        for (std::size_t j = i + 1; j < nb.size(); ++j) {
          if (std::binary_search(ni.begin(), ni.end(), nb[j])) ++links;
        }
      }
      c = static_cast<double>(links) / (deg * (deg - 1.0) / 2.0);
    }
    out[ig.names[v]] = c;
  }
  return out;
}

/// Mean directed hop distance over ordered reachable pairs (u != v); 0 when
/// no such pair exists.
inline double avg_shortest_path(const CallGraph& g) {
  auto ig = detail::index_graph(g);
  const int n = static_cast<int>(ig.names.size());
  double total = 0.0;
  std::uint64_t pairs = 0;
  std::vector<int> dist(n);
  for (int s = 0; s < n; ++s) {
    std::fill(dist.begin(), dist.end(), -1);
    dist[s] = 0;
    std::deque<int> q{s};
    while (!q.empty()) {
      int v = q.front();
      q.pop_front();
      for (int w : ig.out[v]) {
        if (dist[w] < 0) {
          dist[w] = dist[v] + 1;
          total += dist[w];
          ++pairs;
          q.push_back(w);
        }
      }
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

/// Collapses node-level values to the scalar feature columns: unweighted
/// means over nodes for betweenness and clustering.
inline GraphMetrics aggregate_metrics(const CallGraph& g) {
  GraphMetrics m;
  if (g.nodes.empty()) return m;
  const double n = static_cast<double>(g.nodes.size());
  for (const auto& [_, b] : betweenness(g)) m.betweenness += b;
  for (const auto& [_, c] : clustering(g)) m.clustering += c;
  m.betweenness /= n;
  m.clustering /= n;
  m.avg_shortest_path = avg_shortest_path(g);
  for (const auto& [_, node] : g.nodes) m.total_duration_us += node.total_duration_us;
  return m;
}

/// `caller -> callee [count]`, one edge per line, lexicographic order.
inline std::string dump_graph(const CallGraph& g) {
  std::string out;
  for (const auto& [key, edge] : g.edges) {
    out += key.first + " -> " + key.second + " [" + std::to_string(edge.count) + "]\n";
  }
  return out;
}

}  // namespace encguard
