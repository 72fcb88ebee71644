#pragma once

#include <random>
#include <vector>

#include "agm/assoc_graph.hpp"
#include "agm/features.hpp"
#include "agm/nn.hpp"

namespace agm {

inline constexpr double kProbClamp = 1e-7;

struct AgmnConfig {
  int hidden = 64;
  int depth = 4;        // layers per MLP
  int n_mp = 4;         // message-passing steps
  bool share_steps = true;
  int feature_dim = kFeatureDim;
};

template <typename S>
struct AgmnParams {
  AgmnConfig cfg;
  Mlp<S> f_emb_v;              // 2d -> H
  Mlp<S> f_emb_e;              // 4d -> H
  std::vector<Mlp<S>> phi_e;   // [3H -> H]; size 1 when share_steps
  std::vector<Mlp<S>> phi_v;   // [2H -> H]
  Mlp<S> phi_d;                // H -> 1, logistic

  const Mlp<S>& phi_e_at(int t) const { return phi_e[cfg.share_steps ? 0 : size_t(t)]; }
  const Mlp<S>& phi_v_at(int t) const { return phi_v[cfg.share_steps ? 0 : size_t(t)]; }

  static std::vector<int> dims(int in, int hidden, int depth, int out) {
    std::vector<int> d{in};
    for (int i = 0; i < depth - 1; ++i) d.push_back(hidden);
    d.push_back(out);
    return d;
  }

  static AgmnParams init(const AgmnConfig& cfg, std::mt19937_64& rng) {
    if (cfg.hidden < 1 || cfg.depth < 1 || cfg.n_mp < 0 || cfg.feature_dim < 1)
      throw Error(ErrorKind::invalid_input, "bad AGMN configuration");
    AgmnParams p;
    p.cfg = cfg;
    int h = cfg.hidden, d = cfg.feature_dim;
    p.f_emb_v = Mlp<S>::init(dims(2 * d, h, cfg.depth, h), OutputActivation::identity, rng);
    p.f_emb_e = Mlp<S>::init(dims(4 * d, h, cfg.depth, h), OutputActivation::identity, rng);
    int copies = cfg.share_steps ? 1 : std::max(1, cfg.n_mp);
    for (int c = 0; c < copies; ++c) {
      p.phi_e.push_back(Mlp<S>::init(dims(3 * h, h, cfg.depth, h), OutputActivation::identity, rng));
      p.phi_v.push_back(Mlp<S>::init(dims(2 * h, h, cfg.depth, h), OutputActivation::identity, rng));
    }
    p.phi_d = Mlp<S>::init(dims(h, h, cfg.depth, 1), OutputActivation::logistic, rng);
    return p;
  }

  struct Grads {
    typename Mlp<S>::Grads emb_v, emb_e, dec;
    std::vector<typename Mlp<S>::Grads> pe, pv;

    void add(const Grads& o) {
      emb_v.add(o.emb_v);
      emb_e.add(o.emb_e);
      dec.add(o.dec);
      for (size_t i = 0; i < pe.size(); ++i) {
        pe[i].add(o.pe[i]);
        pv[i].add(o.pv[i]);
      }
    }
    void scale(S f) {
      emb_v.scale(f);
      emb_e.scale(f);
      dec.scale(f);
      for (size_t i = 0; i < pe.size(); ++i) {
        pe[i].scale(f);
        pv[i].scale(f);
      }
    }
  };

  Grads zero_grads() const {
    Grads g;
    g.emb_v = f_emb_v.zero_grads();
    g.emb_e = f_emb_e.zero_grads();
    g.dec = phi_d.zero_grads();
    for (const auto& m : phi_e) g.pe.push_back(m.zero_grads());
    for (const auto& m : phi_v) g.pv.push_back(m.zero_grads());
    return g;
  }

  // Canonical parameter block order, shared by Adam and checkpoints.
  void collect(std::vector<Mat<S>*>& w, std::vector<Vec<S>*>& b) {
    auto grab = [&](Mlp<S>& m) {
      for (auto& l : m.layers) {
        w.push_back(&l.w);
        b.push_back(&l.b);
      }
    };
    grab(f_emb_v);
    grab(f_emb_e);
    for (auto& m : phi_e) grab(m);
    for (auto& m : phi_v) grab(m);
    grab(phi_d);
  }
  void collect_grads(Grads& g, std::vector<Mat<S>*>& dw, std::vector<Vec<S>*>& db) const {
    auto grab = [&](typename Mlp<S>::Grads& gg) {
      for (size_t i = 0; i < gg.dw.size(); ++i) {
        dw.push_back(&gg.dw[i]);
        db.push_back(&gg.db[i]);
      }
    };
    grab(g.emb_v);
    grab(g.emb_e);
    for (auto& gg : g.pe) grab(gg);
    for (auto& gg : g.pv) grab(gg);
    grab(g.dec);
  }
};

template <typename S>
struct AgmnActivations {
  std::vector<Mat<S>> xv;  // xv[t], t = 0..n_mp (V x H)
  std::vector<Mat<S>> xe;  // xe[t]
  typename Mlp<S>::Cache emb_v_cache, emb_e_cache, dec_cache;
  std::vector<typename Mlp<S>::Cache> pe_cache, pv_cache;
  Mat<S> prob;  // V x 1
};

// Embedding step only (step 1 of the activations).
template <typename S>
AgmnActivations<S> embed(const AgmnParams<S>& p, const AssociationGraph<S>& ag) {
  AgmnActivations<S> acts;
  acts.xv.push_back(p.f_emb_v.forward(ag.vertex_features, acts.emb_v_cache));
  acts.xe.push_back(p.f_emb_e.forward(ag.edge_features, acts.emb_e_cache));
  return acts;
}

// One message-passing round: edges first, then vertices with the incident-edge
// sum (empty sums are the zero vector). G only needs edges/vertex_count()/
// edge_count(), so batched edge views work too.
template <typename S, typename G>
void message_pass_step(const AgmnParams<S>& p, const G& ag,
                       AgmnActivations<S>& acts, int t) {
  int h = p.cfg.hidden;
  const Mat<S>& xv = acts.xv[size_t(t)];
  const Mat<S>& xe = acts.xe[size_t(t)];
  int E = ag.edge_count(), V = ag.vertex_count();

  Mat<S> ein(E, 3 * h);
  ein.leftCols(h) = xe;
  for (int c = 0; c < h; ++c) {
    auto xvc = xv.col(c);
    auto mid = ein.col(h + c);
    auto rgt = ein.col(2 * h + c);
    for (int e = 0; e < E; ++e) {
      auto [u, v] = ag.edges[size_t(e)];
      mid(e) = xvc(u);
      rgt(e) = xvc(v);
    }
  }
  acts.pe_cache.emplace_back();
  Mat<S> xe_next = p.phi_e_at(t).forward(ein, acts.pe_cache.back());

  Mat<S> agg = Mat<S>::Zero(V, h);
  for (int c = 0; c < h; ++c) {
    auto src = xe_next.col(c);
    auto dst = agg.col(c);
    for (int e = 0; e < E; ++e) {
      auto [u, v] = ag.edges[size_t(e)];
      dst(u) += src(e);
      dst(v) += src(e);
    }
  }
  Mat<S> vin(V, 2 * h);
  vin.leftCols(h) = agg;
  vin.rightCols(h) = xv;
  acts.pv_cache.emplace_back();
  Mat<S> xv_next = p.phi_v_at(t).forward(vin, acts.pv_cache.back());

  acts.xe.push_back(std::move(xe_next));
  acts.xv.push_back(std::move(xv_next));
}

// Full forward: probabilities in (0,1), shaped n1 x n2 (row i, column a).
template <typename S>
Mat<S> agmn_forward(const AgmnParams<S>& p, const AssociationGraph<S>& ag,
                    AgmnActivations<S>& acts) {
  acts = embed(p, ag);
  for (int t = 0; t < p.cfg.n_mp; ++t) message_pass_step(p, ag, acts, t);
  acts.prob = p.phi_d.forward(acts.xv.back(), acts.dec_cache);
  Mat<S> out(ag.n1, ag.n2);
  for (int i = 0; i < ag.n1; ++i)
    for (int a = 0; a < ag.n2; ++a) out(i, a) = acts.prob(ag.vertex_index(i, a), 0);
  return out;
}

// Voting: one-hot rows at the argmax, ties to the lowest column.
template <typename S>
Eigen::MatrixXi vote(const Mat<S>& prob) {
  Eigen::MatrixXi out = Eigen::MatrixXi::Zero(prob.rows(), prob.cols());
  for (int i = 0; i < prob.rows(); ++i) {
    int best = 0;
    for (int a = 1; a < prob.cols(); ++a)
      if (prob(i, a) > prob(i, best)) best = a;
    out(i, best) = 1;
  }
  return out;
}

// Binary cross entropy over all vertices, probabilities clamped before logs.
template <typename S>
double agmn_loss(const Mat<S>& prob, const Eigen::MatrixXi& truth) {
  if (prob.rows() != truth.rows() || prob.cols() != truth.cols())
    throw Error(ErrorKind::invalid_input, "loss shape mismatch");
  double loss = 0;
  for (int i = 0; i < prob.rows(); ++i)
    for (int a = 0; a < prob.cols(); ++a) {
      double p = std::clamp(double(prob(i, a)), kProbClamp, 1.0 - kProbClamp);
      loss -= truth(i, a) ? std::log(p) : std::log(1.0 - p);
    }
  return loss;
}

// dL/dp with the clamp (constant outside the clamp window).
template <typename S>
Mat<S> agmn_loss_grad(const Mat<S>& prob, const Eigen::MatrixXi& truth) {
  Mat<S> g(prob.rows(), prob.cols());
  for (int i = 0; i < prob.rows(); ++i)
    for (int a = 0; a < prob.cols(); ++a) {
      double p = double(prob(i, a));
      if (p <= kProbClamp || p >= 1.0 - kProbClamp) {
        g(i, a) = S(0);
      } else {
        g(i, a) = truth(i, a) ? S(-1.0 / p) : S(1.0 / (1.0 - p));
      }
    }
  return g;
}

// Reverse sweep through the message-passing rounds. Takes the gradient at the
// final vertex states, accumulates the phi_e/phi_v parameter gradients, and
// returns the gradients at the embedded vertex and edge states.
template <typename S, typename G>
std::pair<Mat<S>, Mat<S>> message_pass_backward(const AgmnParams<S>& p, const G& ag,
                                                const AgmnActivations<S>& acts,
                                                Mat<S> dxv,
                                                typename AgmnParams<S>::Grads& grads) {
  if (int(acts.pe_cache.size()) != p.cfg.n_mp)
    throw Error(ErrorKind::invalid_input, "stale activations");
  int h = p.cfg.hidden;
  int E = ag.edge_count();

  Mat<S> dxe = Mat<S>::Zero(E, h);
  for (int t = p.cfg.n_mp - 1; t >= 0; --t) {
    auto& gpe = grads.pe[p.cfg.share_steps ? 0 : size_t(t)];
    auto& gpv = grads.pv[p.cfg.share_steps ? 0 : size_t(t)];
    Mat<S> dvin = p.phi_v_at(t).backward(acts.pv_cache[size_t(t)], dxv, gpv);
    Mat<S> dxe_next = dxe;  // grad on xe[t+1] flowing from the later phi_e input
    for (int c = 0; c < h; ++c) {
      auto dvc = dvin.col(c);
      auto dst = dxe_next.col(c);
      for (int e = 0; e < E; ++e) {
        auto [u, v] = ag.edges[size_t(e)];
        dst(e) += dvc(u) + dvc(v);
      }
    }
    Mat<S> dein = p.phi_e_at(t).backward(acts.pe_cache[size_t(t)], dxe_next, gpe);
    dxe = dein.leftCols(h);
    Mat<S> dxv_prev = dvin.rightCols(h);
    for (int c = 0; c < h; ++c) {
      auto dmid = dein.col(h + c);
      auto drgt = dein.col(2 * h + c);
      auto dst = dxv_prev.col(c);
      for (int e = 0; e < E; ++e) {
        auto [u, v] = ag.edges[size_t(e)];
        dst(u) += dmid(e);
        dst(v) += drgt(e);
      }
    }
    dxv = std::move(dxv_prev);
  }
  return {std::move(dxv), std::move(dxe)};
}

// Exact gradients of the loss w.r.t. every parameter.
template <typename S>
typename AgmnParams<S>::Grads agmn_backward(const AgmnParams<S>& p,
                                            const AssociationGraph<S>& ag,
                                            const AgmnActivations<S>& acts,
                                            const Mat<S>& dprob) {
  auto grads = p.zero_grads();
  int V = ag.vertex_count();

  Mat<S> ddec(V, 1);
  for (int i = 0; i < ag.n1; ++i)
    for (int a = 0; a < ag.n2; ++a) ddec(ag.vertex_index(i, a), 0) = dprob(i, a);
  Mat<S> dxv = p.phi_d.backward(acts.dec_cache, ddec, grads.dec);

  auto [dxv0, dxe0] = message_pass_backward(p, ag, acts, std::move(dxv), grads);
  p.f_emb_v.backward(acts.emb_v_cache, dxv0, grads.emb_v);
  p.f_emb_e.backward(acts.emb_e_cache, dxe0, grads.emb_e);
  return grads;
}

// --- checkpoint (schema agm-model-1) ---

template <typename S>
struct LabelModel {
  AgmnParams<S> params;
  NormalizationStats stats;
};

template <typename S>
nlohmann::json checkpoint_to_json(const LabelModel<S>& m) {
  nlohmann::json j;
  j["schema_version"] = "agm-model-1";
  j["hidden"] = m.params.cfg.hidden;
  j["depth"] = m.params.cfg.depth;
  j["n_mp"] = m.params.cfg.n_mp;
  j["share_steps"] = m.params.cfg.share_steps;
  j["feature_dim"] = m.params.cfg.feature_dim;
  j["feature_layout"] = m.stats.layout_version;
  j["norm"] = {{"mean", m.stats.mean}, {"std", m.stats.stddev}};
  j["mlps"]["f_emb_v"] = mlp_to_json(m.params.f_emb_v);
  j["mlps"]["f_emb_e"] = mlp_to_json(m.params.f_emb_e);
  j["mlps"]["phi_d"] = mlp_to_json(m.params.phi_d);
  j["mlps"]["phi_e"] = nlohmann::json::array();
  j["mlps"]["phi_v"] = nlohmann::json::array();
  for (const auto& mm : m.params.phi_e) j["mlps"]["phi_e"].push_back(mlp_to_json(mm));
  for (const auto& mm : m.params.phi_v) j["mlps"]["phi_v"].push_back(mlp_to_json(mm));
  return j;
}

template <typename S>
LabelModel<S> checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", "") != "agm-model-1")
    throw Error(ErrorKind::invalid_input, "unsupported checkpoint schema");
  LabelModel<S> m;
  m.params.cfg.hidden = j.at("hidden").get<int>();
  m.params.cfg.depth = j.at("depth").get<int>();
  m.params.cfg.n_mp = j.at("n_mp").get<int>();
  m.params.cfg.share_steps = j.at("share_steps").get<bool>();
  m.params.cfg.feature_dim = j.at("feature_dim").get<int>();
  m.stats.layout_version = j.at("feature_layout").get<std::string>();
  m.stats.mean = j.at("norm").at("mean").get<std::vector<double>>();
  m.stats.stddev = j.at("norm").at("std").get<std::vector<double>>();
  m.params.f_emb_v = mlp_from_json<S>(j.at("mlps").at("f_emb_v"));
  m.params.f_emb_e = mlp_from_json<S>(j.at("mlps").at("f_emb_e"));
  m.params.phi_d = mlp_from_json<S>(j.at("mlps").at("phi_d"));
  for (const auto& jm : j.at("mlps").at("phi_e")) m.params.phi_e.push_back(mlp_from_json<S>(jm));
  for (const auto& jm : j.at("mlps").at("phi_v")) m.params.phi_v.push_back(mlp_from_json<S>(jm));
  return m;
}

}  // namespace agm
