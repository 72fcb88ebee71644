#pragma once

#include <vector>

#include <Eigen/Core>

#include "agm/artery_graph.hpp"
#include "agm/nn.hpp"

namespace agm {

// Association graph over two individual graphs: vertex (i,a) pairs node i of
// G1 with node a of G2; an association edge exists iff both endpoint pairs
// are edges in their own graphs. Each unordered source-edge pair {(i,j),(a,b)}
// yields the two association edges {(i,a),(j,b)} and {(i,b),(j,a)}, so
// |V| = n1*n2 and |E| = 2*n_e1*n_e2.
template <typename S>
struct AssociationGraph {
  int n1 = 0;
  int n2 = 0;
  int d = 0;                                  // per-node feature dimension
  Mat<S> vertex_features;                     // (n1*n2) x 2d, row (i*n2+a) = [x_i^1, x_a^2]
  Mat<S> edge_features;                       // E x 4d = [x_i^1, x_j^1, x_a^2, x_b^2]
  std::vector<std::pair<int, int>> edges;     // vertex index pairs
  std::vector<std::vector<int>> incident;     // per vertex, incident edge ids

  int vertex_index(int i, int a) const { return i * n2 + a; }
  int vertex_count() const { return n1 * n2; }
  int edge_count() const { return int(edges.size()); }
};

template <typename S>
AssociationGraph<S> build_association(const IndividualGraph& g1,
                                      const IndividualGraph& g2) {
  if (g1.n() > g2.n())
    throw Error(ErrorKind::invalid_input, "build_association requires n1 <= n2");
  if (g1.nodes.empty() || g2.nodes.empty())
    throw Error(ErrorKind::invalid_input, "empty source graph");
  size_t d = g1.nodes[0].features.size();
  for (const auto& nd : g1.nodes)
    if (nd.features.size() != d)
      throw Error(ErrorKind::invalid_input, "feature dimension mismatch in G1");
  for (const auto& nd : g2.nodes)
    if (nd.features.size() != d)
      throw Error(ErrorKind::invalid_input, "feature dimension mismatch across graphs");
  if (d == 0) throw Error(ErrorKind::invalid_input, "features not extracted");

  AssociationGraph<S> ag;
  ag.n1 = g1.n();
  ag.n2 = g2.n();
  ag.d = int(d);
  ag.vertex_features.resize(ag.n1 * ag.n2, 2 * int(d));
  for (int i = 0; i < ag.n1; ++i)
    for (int a = 0; a < ag.n2; ++a) {
      int row = ag.vertex_index(i, a);
      for (size_t k = 0; k < d; ++k) {
        ag.vertex_features(row, int(k)) = S(g1.nodes[i].features[k]);
        ag.vertex_features(row, int(d + k)) = S(g2.nodes[a].features[k]);
      }
    }

  // Edge features use the lower-node-id-first orientation in both sources.
  ag.edge_features.resize(2 * g1.n_e() * g2.n_e(), 4 * int(d));
  ag.incident.assign(size_t(ag.vertex_count()), {});
  int row = 0;
  auto add_edge = [&](int i, int j, int a, int b, const std::vector<double>& xi,
                      const std::vector<double>& xj, const std::vector<double>& xa,
                      const std::vector<double>& xb) {
    int u = ag.vertex_index(i, a), v = ag.vertex_index(j, b);
    for (size_t k = 0; k < d; ++k) {
      ag.edge_features(row, int(k)) = S(xi[k]);
      ag.edge_features(row, int(d + k)) = S(xj[k]);
      ag.edge_features(row, int(2 * d + k)) = S(xa[k]);
      ag.edge_features(row, int(3 * d + k)) = S(xb[k]);
    }
    ag.edges.emplace_back(u, v);
    ag.incident[size_t(u)].push_back(row);
    ag.incident[size_t(v)].push_back(row);
    ++row;
  };
  for (auto [i, j] : g1.edges) {
    if (i > j) std::swap(i, j);
    const auto& xi = g1.nodes[i].features;
    const auto& xj = g1.nodes[j].features;
    for (auto [a, b] : g2.edges) {
      if (a > b) std::swap(a, b);
      const auto& xa = g2.nodes[a].features;
      const auto& xb = g2.nodes[b].features;
      add_edge(i, j, a, b, xi, xj, xa, xb);
      add_edge(i, j, b, a, xi, xj, xa, xb);
    }
  }
  return ag;
}

// Ground-truth match matrix: y_ia = 1 iff the full sub-labels are equal.
// Requires relabeled graphs (unique sub-labels), which guarantees row and
// column sums <= 1.
inline Eigen::MatrixXi ground_truth(const IndividualGraph& g1,
                                    const IndividualGraph& g2) {
  auto check_unique = [](const IndividualGraph& g, const char* which) {
    std::set<ArteryLabel> seen;
    for (const auto& nd : g.nodes) {
      if (!nd.label)
        throw Error(ErrorKind::invalid_input, std::string("unlabeled node in ") + which);
      if (!seen.insert(*nd.label).second)
        throw Error(ErrorKind::invalid_input,
                    std::string("duplicate sub-label in ") + which + ": " + nd.label->str());
    }
  };
  check_unique(g1, "G1");
  check_unique(g2, "G2");
  Eigen::MatrixXi y = Eigen::MatrixXi::Zero(g1.n(), g2.n());
  for (int i = 0; i < g1.n(); ++i)
    for (int a = 0; a < g2.n(); ++a)
      if (*g1.nodes[i].label == *g2.nodes[a].label) y(i, a) = 1;
  return y;
}

}  // namespace agm
