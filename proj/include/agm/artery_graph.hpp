#pragma once

#include <algorithm>
#include <deque>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "agm/core.hpp"
#include "agm/image.hpp"
#include "agm/skeleton.hpp"

namespace agm {

struct PipelineConfig {
  double t_d_mm = 1.8;     // capillary diameter threshold, millimeters
  double t_c_px = 15.0;    // minimum centerline pixel count
  double t_sp_px = 8.0;    // splitting-point merge distance, pixels
  double pixel_spacing = 1.0;  // mm per pixel

  void validate() const {
    if (t_d_mm <= 0 || t_c_px <= 0 || t_sp_px <= 0 || pixel_spacing <= 0)
      throw Error(ErrorKind::invalid_input, "pipeline thresholds must be positive");
  }
};

enum class BaseClass { LMA, LAD, LCX, D, OM };

inline const char* to_string(BaseClass c) {
  switch (c) {
    case BaseClass::LMA: return "LMA";
    case BaseClass::LAD: return "LAD";
    case BaseClass::LCX: return "LCX";
    case BaseClass::D: return "D";
    case BaseClass::OM: return "OM";
  }
  return "?";
}

inline BaseClass base_class_from_string(const std::string& s) {
  if (s == "LMA") return BaseClass::LMA;
  if (s == "LAD") return BaseClass::LAD;
  if (s == "LCX") return BaseClass::LCX;
  if (s == "D") return BaseClass::D;
  if (s == "OM") return BaseClass::OM;
  throw Error(ErrorKind::invalid_input, "unknown artery class: " + s);
}

struct ArteryLabel {
  BaseClass base_class = BaseClass::LMA;
  int sub_index = 0;  // 0 = absent

  std::string str() const {
    std::string s = to_string(base_class);
    if (sub_index > 0) s += std::to_string(sub_index);
    return s;
  }
  static ArteryLabel parse(const std::string& s) {
    size_t i = s.size();
    while (i > 0 && std::isdigit(static_cast<unsigned char>(s[i - 1]))) --i;
    ArteryLabel l;
    l.base_class = base_class_from_string(s.substr(0, i));
    l.sub_index = i < s.size() ? std::stoi(s.substr(i)) : 0;
    return l;
  }
  friend bool operator==(const ArteryLabel&, const ArteryLabel&) = default;
  friend auto operator<=>(const ArteryLabel&, const ArteryLabel&) = default;
};

// Drops the sub-index: (LAD,2) -> LAD.
inline BaseClass group_subclasses(const ArteryLabel& l) { return l.base_class; }

// Key points as nodes, centerline segments as edges (the intermediate graph
// before the node/edge switch). Multigraph: parallel edges and self-loops can
// appear transiently and are resolved by the cycle rule.
struct KeyPointGraph {
  struct Node {
    Point p;
    bool is_bifurcation = false;  // detection-time role, survives pruning
  };
  struct Edge {
    int a = -1;
    int b = -1;
    CenterlineSegment seg;
  };
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  int degree(int i) const {
    int d = 0;
    for (const Edge& e : edges) {
      if (e.a == i) ++d;
      if (e.b == i) ++d;  // self-loop counts twice
    }
    return d;
  }

  int node_at(const Point& p) const {
    for (size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].p == p) return int(i);
    return -1;
  }

  // Drop nodes with no incident edges, reindexing edges.
  void drop_isolated() {
    std::vector<int> remap(nodes.size(), -1);
    std::vector<Node> kept;
    for (size_t i = 0; i < nodes.size(); ++i) {
      if (degree(int(i)) > 0) {
        remap[i] = int(kept.size());
        kept.push_back(nodes[i]);
      }
    }
    for (Edge& e : edges) {
      e.a = remap[e.a];
      e.b = remap[e.b];
    }
    nodes = std::move(kept);
  }
};

inline KeyPointGraph build_keypoint_graph(const std::vector<CenterlineSegment>& segments,
                                          const KeyPointSet& kps) {
  KeyPointGraph g;
  auto find_or_add = [&g](const Point& p, bool bif) {
    int i = g.node_at(p);
    if (i >= 0) return i;
    g.nodes.push_back({p, bif});
    return int(g.nodes.size() - 1);
  };
  std::set<Point> bifs(kps.bifurcations.begin(), kps.bifurcations.end());
  for (const CenterlineSegment& s : segments) {
    int a = find_or_add(s.terminal_a, bifs.count(s.terminal_a) > 0);
    int b = find_or_add(s.terminal_b, bifs.count(s.terminal_b) > 0);
    g.edges.push_back({a, b, s});
  }
  return g;
}

// Rule i: remove capillary segments (max diameter below T_d) and short
// segments (pixel count below T_c).
inline std::vector<CenterlineSegment> prune_small(const std::vector<CenterlineSegment>& segments,
                                                  const PipelineConfig& cfg) {
  cfg.validate();
  double t_d_px = cfg.t_d_mm / cfg.pixel_spacing;
  std::vector<CenterlineSegment> kept;
  for (const CenterlineSegment& s : segments) {
    if (s.max_diameter_px() < t_d_px) continue;
    if (double(s.pixels.size()) < cfg.t_c_px) continue;
    kept.push_back(s);
  }
  return kept;
}

// Rule ii: bifurcation pairs closer than T_sp collapse into the row-major
// first point; connecting micro-segments are absorbed. Iterates to fixpoint.
inline KeyPointGraph merge_splitting_points(KeyPointGraph g, const PipelineConfig& cfg) {
  cfg.validate();
  double t2 = cfg.t_sp_px * cfg.t_sp_px;
  while (true) {
    int keep = -1, gone = -1;
    for (size_t i = 0; i < g.nodes.size(); ++i) {
      if (!g.nodes[i].is_bifurcation) continue;
      for (size_t j = 0; j < g.nodes.size(); ++j) {
        if (i == j || !g.nodes[j].is_bifurcation) continue;
        if (!row_major_less(g.nodes[i].p, g.nodes[j].p)) continue;
        if (sq_dist(g.nodes[i].p, g.nodes[j].p) < t2) {
          if (keep < 0 || row_major_less(g.nodes[i].p, g.nodes[keep].p) ||
              (g.nodes[i].p == g.nodes[keep].p && row_major_less(g.nodes[j].p, g.nodes[gone].p))) {
            keep = int(i);
            gone = int(j);
          }
        }
      }
    }
    if (keep < 0) break;
    std::vector<KeyPointGraph::Edge> edges;
    for (KeyPointGraph::Edge e : g.edges) {
      if (e.a == gone) e.a = keep;
      if (e.b == gone) e.b = keep;
      if (e.a == keep && e.b == keep) continue;  // absorbed micro-segment
      edges.push_back(std::move(e));
    }
    g.edges = std::move(edges);
    g.drop_isolated();
  }
  return g;
}

namespace detail {

// One cycle as a list of edge indices, or empty when acyclic. Handles
// self-loops and parallel edges.
inline std::vector<int> find_cycle(const KeyPointGraph& g) {
  for (size_t e = 0; e < g.edges.size(); ++e)
    if (g.edges[e].a == g.edges[e].b) return {int(e)};
  int n = int(g.nodes.size());
  std::vector<int> parent_edge(n, -1), parent(n, -1), state(n, 0);
  for (int root = 0; root < n; ++root) {
    if (state[root]) continue;
    std::vector<int> stack{root};
    parent[root] = root;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      if (state[u]) continue;
      state[u] = 1;
      for (size_t e = 0; e < g.edges.size(); ++e) {
        if (int(e) == parent_edge[u]) continue;
        int v;
        if (g.edges[e].a == u) v = g.edges[e].b;
        else if (g.edges[e].b == u) v = g.edges[e].a;
        else continue;
        if (state[v]) {
          // Found a cycle: walk both endpoints up to their meeting point.
          std::vector<int> cyc{int(e)};
          int x = u;
          std::set<int> on_path{x};
          std::vector<int> chain{x};
          while (parent[x] != x) {
            x = parent[x];
            on_path.insert(x);
            chain.push_back(x);
          }
          int y = v;
          while (!on_path.count(y)) {
            cyc.push_back(parent_edge[y]);
            y = parent[y];
          }
          for (int z : chain) {
            if (z == y) break;
            cyc.push_back(parent_edge[z]);
          }
          return cyc;
        }
        parent[v] = u;
        parent_edge[v] = int(e);
        stack.push_back(v);
      }
    }
  }
  return {};
}

}  // namespace detail

// Rule iii: while a cycle exists, drop its smallest-mean-diameter segment.
inline KeyPointGraph delete_cycles(KeyPointGraph g) {
  while (true) {
    std::vector<int> cyc = detail::find_cycle(g);
    if (cyc.empty()) break;
    int victim = cyc[0];
    for (int e : cyc)
      if (g.edges[e].seg.mean_diameter_px() < g.edges[victim].seg.mean_diameter_px() ||
          (g.edges[e].seg.mean_diameter_px() == g.edges[victim].seg.mean_diameter_px() && e < victim))
        victim = e;
    g.edges.erase(g.edges.begin() + victim);
    g.drop_isolated();
  }
  return g;
}

// Rule iv: dissolve degree-2 key points, concatenating the two incident
// segments (the dissolved point becomes an interior pixel).
inline KeyPointGraph merge_degree_two(KeyPointGraph g) {
  while (true) {
    int node = -1;
    for (size_t i = 0; i < g.nodes.size(); ++i)
      if (g.degree(int(i)) == 2) { node = int(i); break; }
    if (node < 0) break;
    int e1 = -1, e2 = -1;
    for (size_t e = 0; e < g.edges.size(); ++e) {
      if (g.edges[e].a == node || g.edges[e].b == node) {
        if (e1 < 0) e1 = int(e);
        else e2 = int(e);
      }
    }
    if (e2 < 0) break;  // degree 2 via self-loop; left for cycle handling
    auto oriented = [&](int e, bool ending_at_node) {
      CenterlineSegment s = g.edges[e].seg;
      bool node_is_back = (s.pixels.back() == g.nodes[node].p);
      if (node_is_back != ending_at_node) {
        std::reverse(s.pixels.begin(), s.pixels.end());
        std::reverse(s.radii.begin(), s.radii.end());
      }
      return s;
    };
    CenterlineSegment first = oriented(e1, true);
    CenterlineSegment second = oriented(e2, false);
    int other1 = g.edges[e1].a == node ? g.edges[e1].b : g.edges[e1].a;
    int other2 = g.edges[e2].a == node ? g.edges[e2].b : g.edges[e2].a;
    CenterlineSegment merged;
    merged.pixels = first.pixels;
    merged.radii = first.radii;
    merged.pixels.insert(merged.pixels.end(), second.pixels.begin() + 1, second.pixels.end());
    merged.radii.insert(merged.radii.end(), second.radii.begin() + 1, second.radii.end());
    detail::orient_segment(merged);
    KeyPointGraph::Edge me{other1, other2, std::move(merged)};
    std::vector<KeyPointGraph::Edge> edges;
    for (size_t e = 0; e < g.edges.size(); ++e)
      if (int(e) != e1 && int(e) != e2) edges.push_back(std::move(g.edges[e]));
    edges.push_back(std::move(me));
    g.edges = std::move(edges);
    g.drop_isolated();
  }
  return g;
}

struct GraphNode {
  CenterlineSegment seg;
  std::optional<ArteryLabel> label;
  std::vector<double> features;
  int degree_a = 1;  // key-point degree at terminal_a
  int degree_b = 1;
};

struct IndividualGraph {
  std::vector<GraphNode> nodes;
  std::vector<std::pair<int, int>> edges;   // unordered node pairs
  std::vector<Point> edge_bifurcation;      // shared bifurcation per edge
  std::string view_tag;                     // "LAO" or "RAO"
  int image_width = 0;
  int image_height = 0;
  double pixel_spacing = 1.0;
  std::string provenance;

  int n() const { return int(nodes.size()); }
  int n_e() const { return int(edges.size()); }
  int degree(int i) const {
    int d = 0;
    for (auto [a, b] : edges) d += (a == i) + (b == i);
    return d;
  }
  std::vector<int> adjacent(int i) const {
    std::vector<int> out;
    for (auto [a, b] : edges) {
      if (a == i) out.push_back(b);
      if (b == i) out.push_back(a);
    }
    return out;
  }
  bool is_connected() const {
    if (nodes.empty()) return true;
    std::vector<uint8_t> seen(nodes.size(), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    int cnt = 0;
    while (!stack.empty()) {
      int u = stack.back();
      stack.pop_back();
      ++cnt;
      for (int v : adjacent(u))
        if (!seen[v]) {
          seen[v] = 1;
          stack.push_back(v);
        }
    }
    return cnt == n();
  }
};

// Rule v with star expansion: each segment becomes a node; at every
// bifurcation the locally thickest segment is the parent and connects to
// each other incident segment, which keeps the result a tree.
inline IndividualGraph to_line_graph(const KeyPointGraph& g) {
  for (size_t i = 0; i < g.nodes.size(); ++i)
    if (g.degree(int(i)) == 2)
      throw Error(ErrorKind::structural, "degree-2 key point reaches line graph");
  IndividualGraph out;
  for (const auto& e : g.edges) {
    GraphNode node;
    node.seg = e.seg;
    int na = e.a, nb = e.b;
    if (!(e.seg.terminal_a == g.nodes[na].p)) std::swap(na, nb);
    node.degree_a = g.degree(na);
    node.degree_b = g.degree(nb);
    out.nodes.push_back(std::move(node));
  }
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    int d = g.degree(int(i));
    if (d < 3) continue;
    std::vector<int> incident;
    for (size_t e = 0; e < g.edges.size(); ++e)
      if (g.edges[e].a == int(i) || g.edges[e].b == int(i)) incident.push_back(int(e));
    int parent = incident[0];
    for (int e : incident)
      if (g.edges[e].seg.mean_diameter_px() > g.edges[parent].seg.mean_diameter_px())
        parent = e;
    for (int e : incident) {
      if (e == parent) continue;
      out.edges.emplace_back(std::min(parent, e), std::max(parent, e));
      out.edge_bifurcation.push_back(g.nodes[i].p);
    }
  }
  if (!out.is_connected())
    throw Error(ErrorKind::disconnected, "individual graph is disconnected");
  if (out.n_e() != out.n() - 1)
    throw Error(ErrorKind::structural, "line graph is not a tree");
  return out;
}

// Full extraction pipeline: mask -> individual graph.
inline IndividualGraph build_individual_graph(const BinaryMask& mask,
                                              const PipelineConfig& cfg) {
  Skeleton sk = compute_radii(mask, skeletonize(mask));
  KeyPointSet kps = detect_keypoints(sk);
  std::vector<CenterlineSegment> segs = split_segments(sk, kps);
  segs = prune_small(segs, cfg);
  if (segs.empty())
    throw Error(ErrorKind::empty_graph, "all segments pruned; empty graph");
  KeyPointGraph kpg = build_keypoint_graph(segs, kps);
  kpg = merge_splitting_points(kpg, cfg);
  kpg = delete_cycles(kpg);
  if (kpg.edges.empty())
    throw Error(ErrorKind::empty_graph, "cycle removal emptied the graph");
  kpg = merge_degree_two(kpg);
  IndividualGraph ig = to_line_graph(kpg);
  ig.image_width = mask.width;
  ig.image_height = mask.height;
  ig.pixel_spacing = cfg.pixel_spacing;
  return ig;
}

// Breadth-first from the unique LMA node; within each base class, nodes get
// sub-index 1,2,... in traversal order. Children are visited in row-major
// order of the shared bifurcation (ties by node id).
inline IndividualGraph relabel_subclasses(IndividualGraph g) {
  int root = -1;
  for (int i = 0; i < g.n(); ++i) {
    if (!g.nodes[i].label)
      throw Error(ErrorKind::invalid_input, "relabel requires a base class on every node");
    if (g.nodes[i].label->base_class == BaseClass::LMA) {
      if (root >= 0)
        throw Error(ErrorKind::invalid_input, "multiple LMA nodes");
      root = i;
    }
  }
  if (root < 0) throw Error(ErrorKind::invalid_input, "no LMA node");

  auto bif_of = [&g](int u, int v) {
    for (size_t e = 0; e < g.edges.size(); ++e) {
      auto [a, b] = g.edges[e];
      if ((a == u && b == v) || (a == v && b == u)) return g.edge_bifurcation[e];
    }
    return Point{0, 0};
  };

  std::map<BaseClass, int> counter;
  std::vector<uint8_t> seen(g.n(), 0);
  std::deque<int> queue{root};
  seen[root] = 1;
  while (!queue.empty()) {
    int u = queue.front();
    queue.pop_front();
    ArteryLabel& l = *g.nodes[u].label;
    l.sub_index = ++counter[l.base_class];
    std::vector<int> kids;
    for (int v : g.adjacent(u))
      if (!seen[v]) kids.push_back(v);
    std::sort(kids.begin(), kids.end(), [&](int x, int y) {
      Point px = bif_of(u, x), py = bif_of(u, y);
      if (!(px == py)) return row_major_less(px, py);
      return x < y;
    });
    for (int v : kids) {
      seen[v] = 1;
      queue.push_back(v);
    }
  }
  return g;
}

// Remove a subset of graph nodes, reindexing edges.
inline IndividualGraph remove_nodes(const IndividualGraph& g, const std::vector<uint8_t>& drop) {
  IndividualGraph out = g;
  out.nodes.clear();
  out.edges.clear();
  out.edge_bifurcation.clear();
  std::vector<int> remap(g.n(), -1);
  for (int i = 0; i < g.n(); ++i)
    if (!drop[i]) {
      remap[i] = int(out.nodes.size());
      out.nodes.push_back(g.nodes[i]);
    }
  for (size_t e = 0; e < g.edges.size(); ++e) {
    auto [a, b] = g.edges[e];
    if (remap[a] >= 0 && remap[b] >= 0) {
      out.edges.emplace_back(remap[a], remap[b]);
      out.edge_bifurcation.push_back(g.edge_bifurcation[e]);
    }
  }
  return out;
}

// Data-attack corruption: each leaf segment (one terminal is an endpoint,
// and removal keeps the graph connected) is dropped with probability
// removal_prob. Never removes the last node. Deterministic per seed.
inline IndividualGraph corrupt(const IndividualGraph& g, double removal_prob,
                               std::mt19937_64& rng) {
  if (removal_prob < 0 || removal_prob > 1)
    throw Error(ErrorKind::invalid_input, "removal_prob outside [0,1]");
  std::vector<uint8_t> drop(g.n(), 0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  int remaining = g.n();
  for (int i = 0; i < g.n(); ++i) {
    bool has_endpoint = g.nodes[i].degree_a == 1 || g.nodes[i].degree_b == 1;
    if (!has_endpoint) continue;
    int live_degree = 0;
    for (auto [a, b] : g.edges) {
      if (a == i && !drop[b]) ++live_degree;
      if (b == i && !drop[a]) ++live_degree;
    }
    if (live_degree > 1) continue;
    if (remaining <= 1) continue;
    if (uni(rng) < removal_prob) {
      drop[i] = 1;
      --remaining;
    }
  }
  return remove_nodes(g, drop);
}

// --- JSON serialization (schema agm-graph-1) ---

inline nlohmann::json graph_to_json(const IndividualGraph& g) {
  nlohmann::json j;
  j["schema_version"] = "agm-graph-1";
  j["view_tag"] = g.view_tag;
  j["image"] = {{"width", g.image_width}, {"height", g.image_height}};
  j["pixel_spacing"] = g.pixel_spacing;
  j["provenance"] = g.provenance;
  j["nodes"] = nlohmann::json::array();
  for (int i = 0; i < g.n(); ++i) {
    const GraphNode& nd = g.nodes[i];
    nlohmann::json jn;
    jn["id"] = i;
    nlohmann::json px = nlohmann::json::array();
    for (const Point& p : nd.seg.pixels) px.push_back({p.x, p.y});
    jn["pixels"] = std::move(px);
    jn["radii"] = nd.seg.radii;
    jn["terminal_degrees"] = {nd.degree_a, nd.degree_b};
    if (nd.label) jn["label"] = nd.label->str();
    else jn["label"] = nullptr;
    if (!nd.features.empty()) jn["features"] = nd.features;
    j["nodes"].push_back(std::move(jn));
  }
  j["edges"] = nlohmann::json::array();
  for (size_t e = 0; e < g.edges.size(); ++e)
    j["edges"].push_back({g.edges[e].first, g.edges[e].second,
                          g.edge_bifurcation[e].x, g.edge_bifurcation[e].y});
  return j;
}

inline IndividualGraph graph_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", "") != "agm-graph-1")
    throw Error(ErrorKind::invalid_input, "unsupported graph schema version");
  IndividualGraph g;
  g.view_tag = j.at("view_tag").get<std::string>();
  g.image_width = j.at("image").at("width").get<int>();
  g.image_height = j.at("image").at("height").get<int>();
  g.pixel_spacing = j.at("pixel_spacing").get<double>();
  g.provenance = j.value("provenance", "");
  for (const auto& jn : j.at("nodes")) {
    GraphNode nd;
    for (const auto& p : jn.at("pixels"))
      nd.seg.pixels.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    nd.seg.radii = jn.at("radii").get<std::vector<double>>();
    if (!nd.seg.pixels.empty()) {
      nd.seg.terminal_a = nd.seg.pixels.front();
      nd.seg.terminal_b = nd.seg.pixels.back();
    }
    nd.degree_a = jn.at("terminal_degrees").at(0).get<int>();
    nd.degree_b = jn.at("terminal_degrees").at(1).get<int>();
    if (!jn.at("label").is_null())
      nd.label = ArteryLabel::parse(jn.at("label").get<std::string>());
    if (jn.contains("features"))
      nd.features = jn.at("features").get<std::vector<double>>();
    g.nodes.push_back(std::move(nd));
  }
  for (const auto& je : j.at("edges")) {
    g.edges.emplace_back(je.at(0).get<int>(), je.at(1).get<int>());
    g.edge_bifurcation.push_back({je.at(2).get<int>(), je.at(3).get<int>()});
  }
  return g;
}

}  // namespace agm
