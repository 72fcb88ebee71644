#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "agm/image.hpp"
#include "agm/runtime.hpp"

namespace agm {

inline constexpr int kClassCount = 5;
inline constexpr std::array<BaseClass, kClassCount> kClasses = {
    BaseClass::LMA, BaseClass::LAD, BaseClass::LCX, BaseClass::D, BaseClass::OM};

struct ConfusionStats {
  std::array<long, kClassCount> tp{}, tn{}, fp{}, fn{}, support{};
  long n = 0;

  void add(const ConfusionStats& o) {
    for (int c = 0; c < kClassCount; ++c) {
      tp[size_t(c)] += o.tp[size_t(c)];
      tn[size_t(c)] += o.tn[size_t(c)];
      fp[size_t(c)] += o.fp[size_t(c)];
      fn[size_t(c)] += o.fn[size_t(c)];
      support[size_t(c)] += o.support[size_t(c)];
    }
    n += o.n;
  }
};

// One-vs-rest confusion at the base-class level. An unassigned prediction is
// a false negative for the true class and a false positive nowhere.
inline ConfusionStats confusion(const std::vector<ArteryLabel>& truth,
                                const std::vector<std::optional<ArteryLabel>>& pred) {
  if (truth.size() != pred.size())
    throw Error(ErrorKind::invalid_input, "truth/prediction length mismatch");
  ConfusionStats cs;
  cs.n = long(truth.size());
  auto idx = [](BaseClass b) { return size_t(int(b)); };
  for (size_t i = 0; i < truth.size(); ++i) {
    BaseClass t = group_subclasses(truth[i]);
    cs.support[idx(t)] += 1;
    std::optional<BaseClass> p;
    if (pred[i]) p = group_subclasses(*pred[i]);
    for (int c = 0; c < kClassCount; ++c) {
      bool is_t = (int(t) == c);
      bool is_p = p && (int(*p) == c);
      if (is_t && is_p) cs.tp[size_t(c)] += 1;
      else if (is_t && !is_p) cs.fn[size_t(c)] += 1;
      else if (!is_t && is_p) cs.fp[size_t(c)] += 1;
      else cs.tn[size_t(c)] += 1;
    }
  }
  return cs;
}

struct ClassMetrics {
  double acc = 0, pre = 0, rec = 0, f1 = 0;
};

struct MetricsReport {
  std::string fold_id;
  ConfusionStats cs;
  std::array<ClassMetrics, kClassCount> per_class;
  ClassMetrics weighted;
  double plain_accuracy = 0;  // fraction of segments labeled correctly
};

// Per-class accuracy is (TP_c + TN_c) / n; precision, recall and F1 are the
// standard one-vs-rest forms. Weighted values average per-class values with
// weights n_c / n. Zero denominators yield 0 so the weighted sums stay defined.
inline MetricsReport weighted_metrics(const ConfusionStats& cs) {
  MetricsReport r;
  r.cs = cs;
  auto safe_div = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  long correct = 0;
  for (int c = 0; c < kClassCount; ++c) {
    auto i = size_t(c);
    ClassMetrics m;
    m.acc = safe_div(double(cs.tp[i] + cs.tn[i]), double(cs.n));
    m.pre = safe_div(double(cs.tp[i]), double(cs.tp[i] + cs.fp[i]));
    m.rec = safe_div(double(cs.tp[i]), double(cs.tp[i] + cs.fn[i]));
    m.f1 = safe_div(2.0 * m.pre * m.rec, m.pre + m.rec);
    r.per_class[i] = m;
    double w = safe_div(double(cs.support[i]), double(cs.n));
    r.weighted.acc += w * m.acc;
    r.weighted.pre += w * m.pre;
    r.weighted.rec += w * m.rec;
    r.weighted.f1 += w * m.f1;
    correct += cs.tp[i];
  }
  r.plain_accuracy = safe_div(double(correct), double(cs.n));
  return r;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["schema_version"] = "agm-report-1";
  j["fold"] = r.fold_id;
  j["n"] = r.cs.n;
  j["plain_accuracy"] = r.plain_accuracy;
  j["weighted"] = {{"acc", r.weighted.acc}, {"pre", r.weighted.pre},
                   {"rec", r.weighted.rec}, {"f1", r.weighted.f1}};
  j["per_class"] = nlohmann::json::object();
  for (int c = 0; c < kClassCount; ++c) {
    auto i = size_t(c);
    j["per_class"][to_string(kClasses[i])] = {
        {"acc", r.per_class[i].acc}, {"pre", r.per_class[i].pre},
        {"rec", r.per_class[i].rec}, {"f1", r.per_class[i].f1},
        {"support", r.cs.support[i]}, {"tp", r.cs.tp[i]}, {"tn", r.cs.tn[i]},
        {"fp", r.cs.fp[i]}, {"fn", r.cs.fn[i]}};
  }
  return j;
}

inline std::string reports_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  os << "fold,class,acc,pre,rec,f1,support\n";
  auto mean_std = [&](auto getter) {
    double m = 0, s = 0;
    for (const auto& r : reports) m += getter(r);
    m /= double(reports.size());
    for (const auto& r : reports) s += (getter(r) - m) * (getter(r) - m);
    s = std::sqrt(s / double(reports.size()));
    return std::pair{m, s};
  };
  for (const auto& r : reports) {
    for (int c = 0; c < kClassCount; ++c) {
      auto i = size_t(c);
      os << r.fold_id << "," << to_string(kClasses[i]) << "," << r.per_class[i].acc
         << "," << r.per_class[i].pre << "," << r.per_class[i].rec << ","
         << r.per_class[i].f1 << "," << r.cs.support[i] << "\n";
    }
    os << r.fold_id << ",weighted," << r.weighted.acc << "," << r.weighted.pre
       << "," << r.weighted.rec << "," << r.weighted.f1 << "," << r.cs.n << "\n";
  }
  if (reports.size() > 1) {
    auto [ma, sa] = mean_std([](const MetricsReport& r) { return r.weighted.acc; });
    auto [mp, sp] = mean_std([](const MetricsReport& r) { return r.weighted.pre; });
    auto [mr, sr] = mean_std([](const MetricsReport& r) { return r.weighted.rec; });
    auto [mf, sf] = mean_std([](const MetricsReport& r) { return r.weighted.f1; });
    os << "mean,weighted," << ma << "," << mp << "," << mr << "," << mf << ",\n";
    os << "std,weighted," << sa << "," << sp << "," << sr << "," << sf << ",\n";
  }
  return os.str();
}

// --- stratified splitting ---

// Round-robin by view keeps per-fold view proportions within one graph of
// the global ratio.
inline std::vector<std::vector<int>> stratified_folds(
    const std::vector<IndividualGraph>& graphs, const std::vector<int>& ids,
    int k) {
  std::map<std::string, std::vector<int>> by_view;
  for (int id : ids) by_view[graphs[size_t(id)].view_tag].push_back(id);
  std::vector<std::vector<int>> folds;
  folds.resize(size_t(k));
  int next = 0;
  for (auto& [view, list] : by_view)
    for (int id : list) folds[size_t(next++ % k)].push_back(id);
  return folds;
}

// Template ids held out first, proportionally per view.
inline std::pair<std::vector<int>, std::vector<int>> split_templates(
    const std::vector<IndividualGraph>& graphs, double template_fraction) {
  if (template_fraction <= 0 || template_fraction >= 1)
    throw Error(ErrorKind::invalid_input, "template fraction must be in (0,1)");
  std::map<std::string, std::vector<int>> by_view;
  for (int i = 0; i < int(graphs.size()); ++i)
    by_view[graphs[size_t(i)].view_tag].push_back(i);
  std::vector<int> tpl, rest;
  for (auto& [view, list] : by_view) {
    auto want = size_t(std::lround(template_fraction * double(list.size())));
    want = std::max<size_t>(1, std::min(want, list.size() - 1));
    for (size_t i = 0; i < list.size(); ++i)
      (i < want ? tpl : rest).push_back(list[i]);
  }
  return {tpl, rest};
}

template <typename S>
struct FoldArtifacts {
  AgmnParams<S> params;
  NormalizationStats stats;
  std::vector<IndividualGraph> templates;  // normalized with this fold's stats
  std::vector<IndividualGraph> test;
  MetricsReport report;
  std::vector<TrainLogRow> log;
};

template <typename S>
MetricsReport evaluate_set(const AgmnParams<S>& params,
                           const std::vector<IndividualGraph>& test,
                           const std::vector<IndividualGraph>& templates,
                           const std::string& fold_id) {
  ConfusionStats total;
  for (const auto& g : test) {
    std::vector<IndividualGraph> tpls;
    for (const auto& t : templates)
      if (t.view_tag == g.view_tag) tpls.push_back(t);
    auto res = label_graph(params, g, tpls);
    std::vector<ArteryLabel> truth;
    for (const auto& nd : g.nodes) {
      if (!nd.label)
        throw Error(ErrorKind::invalid_input, "test graph missing ground truth");
      truth.push_back(*nd.label);
    }
    total.add(confusion(truth, res.labels));
  }
  MetricsReport r = weighted_metrics(total);
  r.fold_id = fold_id;
  return r;
}

// Hold out templates first, then 5 stratified folds over the remainder.
// Normalization is fit on each fold's training split and applied to the
// training, template, and test graphs alike.
template <typename S>
std::vector<FoldArtifacts<S>> cross_validate(const std::vector<IndividualGraph>& graphs,
                                             double template_fraction,
                                             const TrainConfig& cfg,
                                             const AgmnConfig& model_cfg,
                                             int k_folds = 5, int threads = 1) {
  if (threads < 1) throw Error(ErrorKind::invalid_input, "threads must be >= 1");
  auto [tpl_ids, rest_ids] = split_templates(graphs, template_fraction);
  if (int(rest_ids.size()) < k_folds)
    throw Error(ErrorKind::invalid_input, "not enough graphs for the fold count");
  auto folds = stratified_folds(graphs, rest_ids, k_folds);

  std::vector<FoldArtifacts<S>> out;
  out.resize(size_t(k_folds));
  // Folds are fully independent (own seed, own normalization, no shared
  // accumulators), so results are identical for any thread count.
  auto run_fold = [&](int k) {
    FoldArtifacts<S> fa;
    std::vector<IndividualGraph> train_set;
    for (int kk = 0; kk < k_folds; ++kk) {
      if (kk == k) continue;
      for (int id : folds[size_t(kk)]) train_set.push_back(graphs[size_t(id)]);
    }
    for (int id : folds[size_t(k)]) fa.test.push_back(graphs[size_t(id)]);
    for (int id : tpl_ids) fa.templates.push_back(graphs[size_t(id)]);

    fa.stats = fit_stats(train_set);
    normalize_graphs(train_set, fa.stats);
    normalize_graphs(fa.templates, fa.stats);
    normalize_graphs(fa.test, fa.stats);

    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = cfg.seed + uint64_t(k);
    auto tr = train<S>(train_set, fold_cfg, model_cfg);
    fa.params = std::move(tr.params);
    fa.log = std::move(tr.log);
    fa.report = evaluate_set(fa.params, fa.test, fa.templates,
                             "fold" + std::to_string(k));
    out[size_t(k)] = std::move(fa);
  };

  if (threads == 1) {
    for (int k = 0; k < k_folds; ++k) run_fold(k);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::mutex err_mtx;
    std::exception_ptr err;
    for (int t = 0; t < std::min(threads, k_folds); ++t)
      pool.emplace_back([&] {
        for (int k = next.fetch_add(1); k < k_folds; k = next.fetch_add(1)) {
          try {
            run_fold(k);
          } catch (...) {
            std::lock_guard<std::mutex> lock(err_mtx);
            if (!err) err = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
  }
  return out;
}

// Accuracy drop when one feature channel is zeroed (post-normalization) in
// every test and template vector.
template <typename S>
double feature_importance(const AgmnParams<S>& params,
                          const std::vector<IndividualGraph>& test,
                          const std::vector<IndividualGraph>& templates,
                          int feature_index, double baseline_acc) {
  if (feature_index < 0 || feature_index >= kFeatureDim)
    throw Error(ErrorKind::invalid_input, "feature index outside layout");
  auto zeroed = [&](std::vector<IndividualGraph> gs) {
    for (auto& g : gs)
      for (auto& nd : g.nodes) nd.features[size_t(feature_index)] = 0.0;
    return gs;
  };
  auto r = evaluate_set(params, zeroed(test), zeroed(templates), "importance");
  return baseline_acc - r.weighted.acc;
}

struct AttackRow {
  double level = 0;
  MetricsReport mean_report;          // confusion pooled over seeds
  std::vector<MetricsReport> per_seed;
};

// Corrupt every test graph at each removal level, relabel, and report the
// pooled metrics per level. Level 0 reproduces the baseline exactly.
template <typename S>
std::vector<AttackRow> attack_sweep(const AgmnParams<S>& params,
                                    const std::vector<IndividualGraph>& test,
                                    const std::vector<IndividualGraph>& templates,
                                    const std::vector<double>& levels,
                                    const std::vector<uint64_t>& seeds) {
  if (seeds.empty()) throw Error(ErrorKind::invalid_input, "need at least one seed");
  std::vector<AttackRow> rows;
  for (double level : levels) {
    AttackRow row;
    row.level = level;
    ConfusionStats pooled;
    for (uint64_t seed : seeds) {
      std::mt19937_64 rng(seed);
      std::vector<IndividualGraph> corrupted;
      for (const auto& g : test) corrupted.push_back(corrupt(g, level, rng));
      auto r = evaluate_set(params, corrupted, templates,
                            "level" + std::to_string(level));
      pooled.add(r.cs);
      row.per_seed.push_back(std::move(r));
    }
    row.mean_report = weighted_metrics(pooled);
    row.mean_report.fold_id = "level" + std::to_string(level);
    rows.push_back(std::move(row));
  }
  return rows;
}

// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw Error(ErrorKind::invalid_input, "spearman needs two equal-length series");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    size_t i = 0;
    while (i < order.size()) {
      size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = (double(i) + double(j)) / 2.0 + 1.0;
      for (size_t k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= double(rx.size());
  my /= double(ry.size());
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0;
  return num / std::sqrt(dx * dy);
}

// Labeled centerline recolored per base class over the grayscale image,
// written as a binary PPM (P6).
inline void write_overlay_ppm(const GrayImage& img, const IndividualGraph& g,
                              const std::vector<std::optional<ArteryLabel>>& labels,
                              const std::string& path) {
  if (int(labels.size()) != g.n())
    throw Error(ErrorKind::invalid_input, "label count mismatch");
  static const std::array<std::array<uint8_t, 3>, kClassCount> palette = {{
      {230, 60, 60},   // LMA
      {60, 160, 230},  // LAD
      {60, 200, 90},   // LCX
      {240, 200, 60},  // D
      {200, 90, 220},  // OM
  }};
  std::vector<uint8_t> rgb(size_t(img.width) * size_t(img.height) * 3);
  for (size_t i = 0; i < img.intensities.size(); ++i)
    rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = img.intensities[i];
  for (int nid = 0; nid < g.n(); ++nid) {
    std::array<uint8_t, 3> color = {255, 255, 255};  // unassigned
    if (labels[size_t(nid)])
      color = palette[size_t(int(group_subclasses(*labels[size_t(nid)])))];
    for (const Point& p : g.nodes[size_t(nid)].seg.pixels) {
      size_t at = 3 * (size_t(p.y) * size_t(img.width) + size_t(p.x));
      rgb[at] = color[0];
      rgb[at + 1] = color[1];
      rgb[at + 2] = color[2];
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::invalid_input, "cannot open " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), std::streamsize(rgb.size()));
}

// Majority-class share at the base-class level, the floor any labeler beats.
inline double majority_class_fraction(const std::vector<IndividualGraph>& graphs) {
  std::array<long, kClassCount> counts{};
  long n = 0;
  for (const auto& g : graphs)
    for (const auto& nd : g.nodes) {
      if (!nd.label) throw Error(ErrorKind::invalid_input, "unlabeled node");
      counts[size_t(int(group_subclasses(*nd.label)))] += 1;
      ++n;
    }
  long best = 0;
  for (long c : counts) best = std::max(best, c);
  return n == 0 ? 0.0 : double(best) / double(n);
}

}  // namespace agm
