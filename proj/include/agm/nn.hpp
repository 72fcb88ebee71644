#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "agm/core.hpp"

namespace agm {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

enum class OutputActivation { identity, logistic };

// Rows are items, columns are features: Y = act(X W^T + b).
template <typename S>
struct Mlp {
  struct Layer {
    Mat<S> w;  // out x in
    Vec<S> b;  // out
  };
  std::vector<Layer> layers;
  OutputActivation out_act = OutputActivation::identity;

  struct Cache {
    std::vector<Mat<S>> inputs;  // input to each layer
    Mat<S> output;               // post-activation output
  };

  struct Grads {
    std::vector<Mat<S>> dw;
    std::vector<Vec<S>> db;

    void add(const Grads& o) {
      for (size_t i = 0; i < dw.size(); ++i) {
        dw[i] += o.dw[i];
        db[i] += o.db[i];
      }
    }
    void scale(S f) {
      for (size_t i = 0; i < dw.size(); ++i) {
        dw[i] *= f;
        db[i] *= f;
      }
    }
  };

  int in_dim() const { return int(layers.front().w.cols()); }
  int out_dim() const { return int(layers.back().w.rows()); }

  // Glorot-uniform weights, zero biases.
  static Mlp init(const std::vector<int>& dims, OutputActivation act,
                  std::mt19937_64& rng) {
    if (dims.size() < 2)
      throw Error(ErrorKind::invalid_input, "MLP needs at least one layer");
    Mlp m;
    m.out_act = act;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      Layer layer;
      double bound = std::sqrt(6.0 / (dims[l] + dims[l + 1]));
      std::uniform_real_distribution<double> uni(-bound, bound);
      layer.w.resize(dims[l + 1], dims[l]);
      for (int r = 0; r < layer.w.rows(); ++r)
        for (int c = 0; c < layer.w.cols(); ++c) layer.w(r, c) = S(uni(rng));
      layer.b = Vec<S>::Zero(dims[l + 1]);
      m.layers.push_back(std::move(layer));
    }
    return m;
  }

  Mat<S> forward(const Mat<S>& x, Cache& cache) const {
    if (x.cols() != in_dim())
      throw Error(ErrorKind::invalid_input, "MLP input dimension mismatch");
    cache.inputs.assign(layers.size(), Mat<S>());
    cache.inputs[0] = x;
    for (size_t l = 0; l < layers.size(); ++l) {
      Mat<S> z;
      z.noalias() = cache.inputs[l] * layers[l].w.transpose();
      z.rowwise() += layers[l].b.transpose();
      if (l + 1 < layers.size()) {
        z = z.cwiseMax(S(0));  // ReLU hidden
        cache.inputs[l + 1] = std::move(z);
      } else if (out_act == OutputActivation::logistic) {
        cache.output = (S(1) / (S(1) + (-z.array()).exp())).matrix();
      } else {
        cache.output = std::move(z);
      }
    }
    return cache.output;
  }

  Grads zero_grads() const {
    Grads g;
    for (const Layer& l : layers) {
      g.dw.push_back(Mat<S>::Zero(l.w.rows(), l.w.cols()));
      g.db.push_back(Vec<S>::Zero(l.b.size()));
    }
    return g;
  }

  // dY is the gradient at the post-activation output. Accumulates into g.
  Mat<S> backward(const Cache& cache, const Mat<S>& dy, Grads& g) const {
    if (cache.inputs.size() != layers.size())
      throw Error(ErrorKind::invalid_input, "stale MLP cache");
    Mat<S> delta;
    if (out_act == OutputActivation::logistic) {
      delta = (dy.array() * cache.output.array() * (S(1) - cache.output.array())).matrix();
    } else {
      delta = dy;
    }
    for (int l = int(layers.size()) - 1; l >= 0; --l) {
      const Mat<S>& x = cache.inputs[size_t(l)];
      g.dw[size_t(l)].noalias() += delta.transpose() * x;
      g.db[size_t(l)] += delta.colwise().sum().transpose();
      Mat<S> dx;
      dx.noalias() = delta * layers[size_t(l)].w;
      if (l == 0) return dx;
      // ReLU derivative on the previous layer's post-activation (== its input here)
      dx.array() *= (x.array() > S(0)).template cast<S>();
      delta = std::move(dx);
    }
    return delta;
  }
};

// Runs an MLP whose first-layer pre-activation (bias already added) was
// computed externally, e.g. from factorized inputs. The cache matches
// Mlp::backward's layout except inputs[0] stays empty; pair with
// mlp_backward_to_z1, which stops at the first-layer pre-activation.
template <typename S>
Mat<S> mlp_forward_from_z1(const Mlp<S>& m, Mat<S> z1, typename Mlp<S>::Cache& cache) {
  size_t L = m.layers.size();
  cache.inputs.assign(L, Mat<S>());
  for (size_t l = 0; l < L; ++l) {
    Mat<S> z;
    if (l == 0) {
      z = std::move(z1);
    } else {
      z.noalias() = cache.inputs[l] * m.layers[l].w.transpose();
      z.rowwise() += m.layers[l].b.transpose();
    }
    if (l + 1 < L) {
      z = z.cwiseMax(S(0));
      cache.inputs[l + 1] = std::move(z);
    } else if (m.out_act == OutputActivation::logistic) {
      cache.output = (S(1) / (S(1) + (-z.array()).exp())).matrix();
    } else {
      cache.output = std::move(z);
    }
  }
  return cache.output;
}

// Backward counterpart: accumulates dw/db for layers 1.. and db for layer 0,
// and returns the gradient at the first-layer pre-activation. The caller owns
// dw[0] (it knows the factorized input).
template <typename S>
Mat<S> mlp_backward_to_z1(const Mlp<S>& m, const typename Mlp<S>::Cache& cache,
                          const Mat<S>& dy, typename Mlp<S>::Grads& g) {
  Mat<S> delta;
  if (m.out_act == OutputActivation::logistic) {
    delta = (dy.array() * cache.output.array() * (S(1) - cache.output.array())).matrix();
  } else {
    delta = dy;
  }
  for (int l = int(m.layers.size()) - 1; l >= 1; --l) {
    const Mat<S>& x = cache.inputs[size_t(l)];
    g.dw[size_t(l)].noalias() += delta.transpose() * x;
    g.db[size_t(l)] += delta.colwise().sum().transpose();
    Mat<S> dx;
    dx.noalias() = delta * m.layers[size_t(l)].w;
    dx.array() *= (x.array() > S(0)).template cast<S>();
    delta = std::move(dx);
  }
  g.db[0] += delta.colwise().sum().transpose();
  return delta;
}

// Staircase exponential decay: base_lr * decay^floor(step/interval).
struct LrSchedule {
  double base_lr = 1e-4;
  double decay = 0.98;
  long interval = 2000;
  bool staircase = true;

  double lr_at(long step) const {
    if (step < 0) throw Error(ErrorKind::invalid_input, "negative step");
    if (interval <= 0 || decay <= 0 || decay > 1)
      throw Error(ErrorKind::invalid_input, "bad LR schedule");
    double e = staircase ? double(step / interval) : double(step) / double(interval);
    return base_lr * std::pow(decay, e);
  }
};

// M is any Eigen dense matrix/vector type.
template <typename M>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long t = 0;
  std::vector<M> m;
  std::vector<M> v;
};

// One Adam update over an aligned list of parameter blocks.
template <typename M>
void adam_step(AdamState<M>& st, const std::vector<M*>& params,
               const std::vector<const M*>& grads, double lr) {
  using S = typename M::Scalar;
  if (params.size() != grads.size())
    throw Error(ErrorKind::invalid_input, "Adam param/grad mismatch");
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.push_back(M::Zero(p->rows(), p->cols()));
      st.v.push_back(M::Zero(p->rows(), p->cols()));
    }
  }
  ++st.t;
  S b1 = S(st.beta1), b2 = S(st.beta2);
  S corr1 = S(1) - S(std::pow(st.beta1, double(st.t)));
  S corr2 = S(1) - S(std::pow(st.beta2, double(st.t)));
  for (size_t i = 0; i < params.size(); ++i) {
    const M& g = *grads[i];
    st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (S(1) - b2) * g.cwiseProduct(g);
    M mhat = st.m[i] / corr1;
    M vhat = st.v[i] / corr2;
    *params[i] -= (S(lr) * mhat.array() / (vhat.array().sqrt() + S(st.eps))).matrix();
  }
}

// --- checkpoint helpers ---

template <typename S>
nlohmann::json mlp_to_json(const Mlp<S>& m) {
  nlohmann::json j;
  j["out_act"] = m.out_act == OutputActivation::logistic ? "logistic" : "identity";
  j["layers"] = nlohmann::json::array();
  for (const auto& l : m.layers) {
    nlohmann::json jl;
    std::vector<std::vector<double>> w(size_t(l.w.rows()));
    for (int r = 0; r < l.w.rows(); ++r) {
      w[size_t(r)].resize(size_t(l.w.cols()));
      for (int c = 0; c < l.w.cols(); ++c) w[size_t(r)][size_t(c)] = double(l.w(r, c));
    }
    std::vector<double> b(size_t(l.b.size()));
    for (int r = 0; r < l.b.size(); ++r) b[size_t(r)] = double(l.b(r));
    jl["w"] = std::move(w);
    jl["b"] = std::move(b);
    j["layers"].push_back(std::move(jl));
  }
  return j;
}

template <typename S>
Mlp<S> mlp_from_json(const nlohmann::json& j) {
  Mlp<S> m;
  m.out_act = j.at("out_act") == "logistic" ? OutputActivation::logistic
                                            : OutputActivation::identity;
  for (const auto& jl : j.at("layers")) {
    typename Mlp<S>::Layer l;
    auto w = jl.at("w").get<std::vector<std::vector<double>>>();
    l.w.resize(Eigen::Index(w.size()), Eigen::Index(w[0].size()));
    for (size_t r = 0; r < w.size(); ++r)
      for (size_t c = 0; c < w[r].size(); ++c)
        l.w(Eigen::Index(r), Eigen::Index(c)) = S(w[r][c]);
    auto b = jl.at("b").get<std::vector<double>>();
    l.b.resize(Eigen::Index(b.size()));
    for (size_t r = 0; r < b.size(); ++r) l.b(Eigen::Index(r)) = S(b[r]);
    m.layers.push_back(std::move(l));
  }
  return m;
}

}  // namespace agm
