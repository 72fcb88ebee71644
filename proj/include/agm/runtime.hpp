#pragma once

#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include "agm/agmn.hpp"
#include "agm/train_batch.hpp"

namespace agm {

struct TrainConfig {
  long steps = 5000;
  int batch = 32;
  LrSchedule lr;
  uint64_t seed = 0;

  void validate() const {
    if (steps < 1 || batch < 1)
      throw Error(ErrorKind::invalid_input, "steps and batch must be positive");
  }
};

struct TrainLogRow {
  long step;
  double lr;
  double mean_loss;
};

inline std::string train_log_csv(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "step,lr,mean_loss\n";
  for (const auto& r : rows) os << r.step << "," << r.lr << "," << r.mean_loss << "\n";
  return os.str();
}

// Uniform draw over unordered same-view pairs, returned smaller-first.
inline std::vector<std::pair<int, int>> same_view_pairs(
    const std::vector<IndividualGraph>& graphs) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < graphs.size(); ++i)
    for (size_t j = i + 1; j < graphs.size(); ++j)
      if (graphs[i].view_tag == graphs[j].view_tag) pairs.emplace_back(int(i), int(j));
  return pairs;
}

inline std::pair<int, int> sample_pair(const std::vector<IndividualGraph>& graphs,
                                       const std::vector<std::pair<int, int>>& pairs,
                                       std::mt19937_64& rng) {
  if (pairs.empty())
    throw Error(ErrorKind::invalid_input, "no same-view pair available");
  std::uniform_int_distribution<size_t> pick(0, pairs.size() - 1);
  auto [i, j] = pairs[pick(rng)];
  if (graphs[size_t(i)].n() > graphs[size_t(j)].n()) std::swap(i, j);
  return {i, j};
}

template <typename S>
struct TrainResult {
  AgmnParams<S> params;
  std::vector<TrainLogRow> log;
};

// Batched training loop: mean loss over the batch, one Adam step per step
// at the scheduled rate. Deterministic for a fixed seed.
template <typename S>
TrainResult<S> train(const std::vector<IndividualGraph>& train_set,
                     const TrainConfig& cfg, const AgmnConfig& model_cfg) {
  cfg.validate();
  auto pairs = same_view_pairs(train_set);
  if (pairs.empty())
    throw Error(ErrorKind::invalid_input, "training set has no same-view pair");

  // Validate labels/features once up front; the batched loop relies on them.
  for (const auto& g : train_set) {
    std::set<ArteryLabel> seen;
    for (const auto& nd : g.nodes) {
      if (!nd.label)
        throw Error(ErrorKind::invalid_input, "unlabeled node in training graph");
      if (!seen.insert(*nd.label).second)
        throw Error(ErrorKind::invalid_input,
                    "duplicate sub-label in training graph: " + nd.label->str());
      if (nd.features.empty())
        throw Error(ErrorKind::invalid_input, "training graph missing features");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  TrainResult<S> res;
  res.params = AgmnParams<S>::init(model_cfg, rng);

  std::vector<Mat<S>*> pw;
  std::vector<Vec<S>*> pb;
  res.params.collect(pw, pb);
  AdamState<Mat<S>> adam_w;
  AdamState<Vec<S>> adam_b;

  std::vector<std::pair<int, int>> items(size_t(cfg.batch));
  std::vector<std::pair<int, int>> one(1);
  for (long step = 0; step < cfg.steps; ++step) {
    for (int b = 0; b < cfg.batch; ++b) items[size_t(b)] = sample_pair(train_set, pairs, rng);
    // Pairs are processed one at a time: the working set of a single pair fits
    // in cache, which beats stacking the whole batch into one large graph.
    auto grads = res.params.zero_grads();
    double loss_sum = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      one[0] = items[size_t(b)];
      auto ba = build_batch<S>(train_set, one);
      BatchActivations<S> acts;
      Mat<S> prob = batch_forward(res.params, ba, acts);
      loss_sum += batch_loss(prob, ba.y);
      batch_backward(res.params, ba, acts, batch_loss_grad<S>(prob, ba.y), grads);
    }
    if (!std::isfinite(loss_sum))
      throw Error(ErrorKind::numeric, "non-finite loss at step " + std::to_string(step));
    grads.scale(S(1) / S(cfg.batch));
    double lr = cfg.lr.lr_at(step);

    std::vector<Mat<S>*> gw;
    std::vector<Vec<S>*> gb;
    res.params.collect_grads(grads, gw, gb);
    std::vector<const Mat<S>*> cgw(gw.begin(), gw.end());
    std::vector<const Vec<S>*> cgb(gb.begin(), gb.end());
    adam_step(adam_w, pw, cgw, lr);
    adam_step(adam_b, pb, cgb, lr);

    res.log.push_back({step, lr, loss_sum / cfg.batch});
  }
  return res;
}

struct VoteEntry {
  int votes = 0;
  double prob_sum = 0.0;
};

struct NodeVotes {
  std::map<ArteryLabel, VoteEntry> tally;
};

struct LabelResult {
  std::vector<std::optional<ArteryLabel>> labels;  // nullopt = UNASSIGNED
  std::vector<NodeVotes> votes;
};

// Template-voting inference. Each template is matched against the test graph
// (smaller graph first); labels flow from template nodes to the matched test
// nodes. Most votes wins, ties break on larger summed probability, then on
// label order for determinism.
template <typename S>
LabelResult label_graph(const AgmnParams<S>& params, const IndividualGraph& g_test,
                        const std::vector<IndividualGraph>& templates) {
  if (templates.empty())
    throw Error(ErrorKind::invalid_input, "empty template set");
  LabelResult res;
  res.votes.assign(size_t(g_test.n()), {});

  for (const auto& tpl : templates) {
    if (tpl.view_tag != g_test.view_tag)
      throw Error(ErrorKind::invalid_input, "template view mismatch");
    for (const auto& nd : tpl.nodes)
      if (!nd.label)
        throw Error(ErrorKind::invalid_input, "template has unlabeled node");
    bool test_smaller = g_test.n() <= tpl.n();
    const IndividualGraph& g1 = test_smaller ? g_test : tpl;
    const IndividualGraph& g2 = test_smaller ? tpl : g_test;
    auto ag = build_association<S>(g1, g2);
    AgmnActivations<S> acts;
    Mat<S> prob = agmn_forward(params, ag, acts);
    Eigen::MatrixXi v = vote(prob);
    for (int i = 0; i < v.rows(); ++i)
      for (int a = 0; a < v.cols(); ++a) {
        if (!v(i, a)) continue;
        int test_node = test_smaller ? i : a;
        const ArteryLabel& lab = test_smaller ? *tpl.nodes[a].label : *tpl.nodes[i].label;
        auto& entry = res.votes[size_t(test_node)].tally[lab];
        entry.votes += 1;
        entry.prob_sum += double(prob(i, a));
      }
  }

  res.labels.assign(size_t(g_test.n()), std::nullopt);
  for (int i = 0; i < g_test.n(); ++i) {
    const auto& tally = res.votes[size_t(i)].tally;
    const ArteryLabel* best = nullptr;
    const VoteEntry* best_e = nullptr;
    for (const auto& [lab, e] : tally) {
      if (!best || e.votes > best_e->votes ||
          (e.votes == best_e->votes && e.prob_sum > best_e->prob_sum)) {
        best = &lab;
        best_e = &e;
      }
    }
    if (best) res.labels[size_t(i)] = *best;
  }
  return res;
}

inline nlohmann::json label_result_to_json(const LabelResult& r) {
  nlohmann::json j;
  j["schema_version"] = "agm-labels-1";
  j["labels"] = nlohmann::json::array();
  for (size_t i = 0; i < r.labels.size(); ++i) {
    nlohmann::json jn;
    jn["node"] = i;
    jn["label"] = r.labels[i] ? nlohmann::json(r.labels[i]->str()) : nlohmann::json(nullptr);
    jn["votes"] = nlohmann::json::array();
    for (const auto& [lab, e] : r.votes[i].tally)
      jn["votes"].push_back({{"label", lab.str()}, {"count", e.votes}, {"prob_sum", e.prob_sum}});
    j["labels"].push_back(std::move(jn));
  }
  return j;
}

// Exhaustive injective assignment maximizing the sum of selected entries.
// Rows may stay unassigned, so it also covers n1 > n2. Result is one-hot
// rows at the chosen columns (all-zero row = unassigned).
template <typename S>
Eigen::MatrixXi brute_force_match(const Mat<S>& prob) {
  int n1 = int(prob.rows()), n2 = int(prob.cols());
  if (n1 < 1 || n2 < 1) throw Error(ErrorKind::invalid_input, "empty match matrix");
  if (n1 > 8) throw Error(ErrorKind::invalid_input, "brute force limited to n1 <= 8");
  std::vector<int> assign(size_t(n1), -1), best_assign;
  std::vector<bool> used(size_t(n2), false);
  double best = -1;
  auto rec = [&](auto&& self, int row, double sum) -> void {
    if (row == n1) {
      if (sum > best) {
        best = sum;
        best_assign = assign;
      }
      return;
    }
    self(self, row + 1, sum);  // leave this row unassigned
    for (int c = 0; c < n2; ++c) {
      if (used[size_t(c)]) continue;
      used[size_t(c)] = true;
      assign[size_t(row)] = c;
      self(self, row + 1, sum + double(prob(row, c)));
      assign[size_t(row)] = -1;
      used[size_t(c)] = false;
    }
  };
  rec(rec, 0, 0.0);
  Eigen::MatrixXi out = Eigen::MatrixXi::Zero(n1, n2);
  for (int r = 0; r < n1; ++r)
    if (best_assign[size_t(r)] >= 0) out(r, best_assign[size_t(r)]) = 1;
  return out;
}

// Replace every node's features with the z-scored version.
inline void normalize_graphs(std::vector<IndividualGraph>& graphs,
                             const NormalizationStats& st) {
  for (auto& g : graphs)
    for (auto& nd : g.nodes) nd.features = normalize(nd.features, st);
}

inline NormalizationStats fit_stats(const std::vector<IndividualGraph>& graphs) {
  std::vector<std::vector<double>> all;
  for (const auto& g : graphs)
    for (const auto& nd : g.nodes) all.push_back(nd.features);
  return NormalizationStats::fit(all);
}

}  // namespace agm
