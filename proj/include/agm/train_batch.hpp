#pragma once

#include <array>

#include "agm/agmn.hpp"

namespace agm {

// Batched association structure for training: all pairs of one step are
// stacked into a single disjoint graph so every MLP runs one large matrix
// product per layer. Two factorizations cut redundant work without changing
// the model:
//   - vertex rows [x_i^1, x_a^2] and edge rows [x_i^1, x_j^1, x_a^2, x_b^2]
//     reuse source-node features, so the first embedding layer is computed
//     per source node and gathered;
//   - the two association edges of a source-edge pair share one identical
//     feature row, so the edge embedding MLP runs on E/2 distinct rows and
//     the result is duplicated.
template <typename S>
struct BatchAssoc {
  int V = 0;   // stacked association vertices
  int E = 0;   // stacked association edges (2 per distinct feature row)
  int Ed = 0;  // distinct edge feature rows (= E / 2)
  Mat<S> xs;   // stacked source-node features, one row per node of every graph
  std::vector<std::pair<int, int>> vsrc;  // per vertex: xs rows (left, right)
  std::vector<std::array<int, 4>> esrc;   // per distinct edge row: xs rows (i,j,a,b)
  std::vector<std::pair<int, int>> edges; // association edges, vertex ids
  std::vector<uint8_t> y;                 // per-vertex match truth

  int vertex_count() const { return V; }
  int edge_count() const { return E; }
};

// Stacks the listed (g1,g2) index pairs. Each pair must already be oriented
// n1 <= n2; graphs must carry features and unique sub-labels (validated once
// by the caller, not per step).
template <typename S>
BatchAssoc<S> build_batch(const std::vector<IndividualGraph>& graphs,
                          const std::vector<std::pair<int, int>>& items) {
  BatchAssoc<S> ba;
  if (items.empty()) throw Error(ErrorKind::invalid_input, "empty batch");
  int d = int(graphs[size_t(items[0].first)].nodes[0].features.size());

  int xs_rows = 0, V = 0, Ed = 0;
  for (auto [i1, i2] : items) {
    const auto& g1 = graphs[size_t(i1)];
    const auto& g2 = graphs[size_t(i2)];
    if (g1.n() > g2.n())
      throw Error(ErrorKind::invalid_input, "batch pair not oriented n1 <= n2");
    xs_rows += g1.n() + g2.n();
    V += g1.n() * g2.n();
    Ed += g1.n_e() * g2.n_e();
  }
  ba.V = V;
  ba.Ed = Ed;
  ba.E = 2 * Ed;
  ba.xs.resize(xs_rows, d);
  ba.vsrc.reserve(size_t(V));
  ba.esrc.reserve(size_t(Ed));
  ba.edges.reserve(size_t(ba.E));
  ba.y.reserve(size_t(V));

  int xs_at = 0, v_base = 0;
  for (auto [i1, i2] : items) {
    const auto& g1 = graphs[size_t(i1)];
    const auto& g2 = graphs[size_t(i2)];
    int base1 = xs_at;
    for (const auto& nd : g1.nodes) {
      for (int k = 0; k < d; ++k) ba.xs(xs_at, k) = S(nd.features[size_t(k)]);
      ++xs_at;
    }
    int base2 = xs_at;
    for (const auto& nd : g2.nodes) {
      for (int k = 0; k < d; ++k) ba.xs(xs_at, k) = S(nd.features[size_t(k)]);
      ++xs_at;
    }
    for (int i = 0; i < g1.n(); ++i)
      for (int a = 0; a < g2.n(); ++a) {
        ba.vsrc.emplace_back(base1 + i, base2 + a);
        ba.y.push_back(*g1.nodes[size_t(i)].label == *g2.nodes[size_t(a)].label ? 1 : 0);
      }
    for (auto [i, j] : g1.edges) {
      if (i > j) std::swap(i, j);
      for (auto [a, b] : g2.edges) {
        if (a > b) std::swap(a, b);
        ba.esrc.push_back({base1 + i, base1 + j, base2 + a, base2 + b});
        ba.edges.emplace_back(v_base + i * g2.n() + a, v_base + j * g2.n() + b);
        ba.edges.emplace_back(v_base + i * g2.n() + b, v_base + j * g2.n() + a);
      }
    }
    v_base += g1.n() * g2.n();
  }
  return ba;
}

template <typename S>
struct BatchActivations {
  AgmnActivations<S> mp;                 // xv/xe stacks, phi caches, decoder
  typename Mlp<S>::Cache emb_v_tail, emb_e_tail;
};

// Full forward over the stacked batch; returns per-vertex probabilities (V x 1).
template <typename S>
Mat<S> batch_forward(const AgmnParams<S>& p, const BatchAssoc<S>& ba,
                     BatchActivations<S>& acts) {
  int h = p.cfg.hidden, d = int(ba.xs.cols());
  const auto& l0v = p.f_emb_v.layers[0];
  const auto& l0e = p.f_emb_e.layers[0];
  if (l0v.w.cols() != 2 * d || l0e.w.cols() != 4 * d)
    throw Error(ErrorKind::invalid_input, "batch feature dimension mismatch");

  // Vertex embedding: first layer factorized over source nodes.
  Mat<S> pl, pr;
  pl.noalias() = ba.xs * l0v.w.leftCols(d).transpose();
  pr.noalias() = ba.xs * l0v.w.rightCols(d).transpose();
  Mat<S> z1v(ba.V, h);
  for (int c = 0; c < h; ++c) {
    auto cl = pl.col(c);
    auto cr = pr.col(c);
    auto dst = z1v.col(c);
    S bias = l0v.b(c);
    for (int v = 0; v < ba.V; ++v)
      dst(v) = cl(ba.vsrc[size_t(v)].first) + cr(ba.vsrc[size_t(v)].second) + bias;
  }
  Mat<S> xv0 = mlp_forward_from_z1(p.f_emb_v, std::move(z1v), acts.emb_v_tail);

  // Edge embedding on distinct rows, duplicated afterwards.
  std::array<Mat<S>, 4> pe;
  for (int k = 0; k < 4; ++k)
    pe[size_t(k)].noalias() = ba.xs * l0e.w.middleCols(k * d, d).transpose();
  Mat<S> z1e(ba.Ed, h);
  for (int c = 0; c < h; ++c) {
    auto dst = z1e.col(c);
    S bias = l0e.b(c);
    for (int e = 0; e < ba.Ed; ++e) {
      const auto& src = ba.esrc[size_t(e)];
      dst(e) = pe[0].col(c)(src[0]) + pe[1].col(c)(src[1]) + pe[2].col(c)(src[2]) +
               pe[3].col(c)(src[3]) + bias;
    }
  }
  Mat<S> xed = mlp_forward_from_z1(p.f_emb_e, std::move(z1e), acts.emb_e_tail);
  Mat<S> xe0(ba.E, h);
  for (int c = 0; c < h; ++c) {
    auto src = xed.col(c);
    auto dst = xe0.col(c);
    for (int e = 0; e < ba.Ed; ++e) {
      dst(2 * e) = src(e);
      dst(2 * e + 1) = src(e);
    }
  }

  acts.mp = AgmnActivations<S>();
  acts.mp.xv.push_back(std::move(xv0));
  acts.mp.xe.push_back(std::move(xe0));
  for (int t = 0; t < p.cfg.n_mp; ++t) message_pass_step(p, ba, acts.mp, t);
  acts.mp.prob = p.phi_d.forward(acts.mp.xv.back(), acts.mp.dec_cache);
  return acts.mp.prob;
}

// Binary cross entropy over stacked vertices, same clamping as agmn_loss.
template <typename S>
double batch_loss(const Mat<S>& prob, const std::vector<uint8_t>& y) {
  if (prob.rows() != Eigen::Index(y.size()) || prob.cols() != 1)
    throw Error(ErrorKind::invalid_input, "batch loss shape mismatch");
  double loss = 0;
  for (Eigen::Index v = 0; v < prob.rows(); ++v) {
    double pv = std::clamp(double(prob(v, 0)), kProbClamp, 1.0 - kProbClamp);
    loss -= y[size_t(v)] ? std::log(pv) : std::log(1.0 - pv);
  }
  return loss;
}

template <typename S>
Mat<S> batch_loss_grad(const Mat<S>& prob, const std::vector<uint8_t>& y) {
  Mat<S> g(prob.rows(), 1);
  for (Eigen::Index v = 0; v < prob.rows(); ++v) {
    double pv = double(prob(v, 0));
    if (pv <= kProbClamp || pv >= 1.0 - kProbClamp) {
      g(v, 0) = S(0);
    } else {
      g(v, 0) = y[size_t(v)] ? S(-1.0 / pv) : S(1.0 / (1.0 - pv));
    }
  }
  return g;
}

// Exact gradients for the stacked batch (sum over all vertices, i.e. the sum
// of the per-pair losses). Accumulates into `grads`.
template <typename S>
void batch_backward(const AgmnParams<S>& p, const BatchAssoc<S>& ba,
                    const BatchActivations<S>& acts, const Mat<S>& dprob,
                    typename AgmnParams<S>::Grads& grads) {
  int h = p.cfg.hidden, d = int(ba.xs.cols());
  int M = int(ba.xs.rows());

  Mat<S> dxv = p.phi_d.backward(acts.mp.dec_cache, dprob, grads.dec);
  auto [dxv0, dxe0] = message_pass_backward(p, ba, acts.mp, std::move(dxv), grads);

  // Vertex embedding backward: tail layers, then factorized first layer.
  Mat<S> dz1v = mlp_backward_to_z1(p.f_emb_v, acts.emb_v_tail, dxv0, grads.emb_v);
  {
    Mat<S> dl = Mat<S>::Zero(M, h), dr = Mat<S>::Zero(M, h);
    for (int c = 0; c < h; ++c) {
      auto src = dz1v.col(c);
      auto cl = dl.col(c);
      auto cr = dr.col(c);
      for (int v = 0; v < ba.V; ++v) {
        cl(ba.vsrc[size_t(v)].first) += src(v);
        cr(ba.vsrc[size_t(v)].second) += src(v);
      }
    }
    grads.emb_v.dw[0].leftCols(d).noalias() += dl.transpose() * ba.xs;
    grads.emb_v.dw[0].rightCols(d).noalias() += dr.transpose() * ba.xs;
  }

  // Edge embedding backward: merge duplicated rows, tail layers, first layer.
  Mat<S> dxed(ba.Ed, h);
  for (int c = 0; c < h; ++c) {
    auto src = dxe0.col(c);
    auto dst = dxed.col(c);
    for (int e = 0; e < ba.Ed; ++e) dst(e) = src(2 * e) + src(2 * e + 1);
  }
  Mat<S> dz1e = mlp_backward_to_z1(p.f_emb_e, acts.emb_e_tail, dxed, grads.emb_e);
  for (int k = 0; k < 4; ++k) {
    Mat<S> dk = Mat<S>::Zero(M, h);
    for (int c = 0; c < h; ++c) {
      auto src = dz1e.col(c);
      auto dst = dk.col(c);
      for (int e = 0; e < ba.Ed; ++e) dst(ba.esrc[size_t(e)][size_t(k)]) += src(e);
    }
    grads.emb_e.dw[0].middleCols(k * d, d).noalias() += dk.transpose() * ba.xs;
  }
}

}  // namespace agm
