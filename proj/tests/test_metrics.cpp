#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <random>

#include "agm/metrics.hpp"
#include "oracles.hpp"

using namespace agm;

namespace {

IndividualGraph tiny_graph(int n, int d, uint64_t seed, const char* view = "RAO30") {
  static const ArteryLabel kLabels[] = {
      {BaseClass::LMA, 0}, {BaseClass::LAD, 1}, {BaseClass::LCX, 1},
      {BaseClass::D, 1},   {BaseClass::OM, 1},  {BaseClass::LAD, 2}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  IndividualGraph g;
  g.view_tag = view;
  for (int i = 0; i < n; ++i) {
    GraphNode nd;
    nd.label = kLabels[i];
    nd.features.resize(size_t(d));
    for (double& f : nd.features) f = u(rng);
    g.nodes.push_back(std::move(nd));
    if (i > 0) {
      int parent = int(rng() % uint64_t(i));
      g.edges.emplace_back(parent, i);
      g.edge_bifurcation.push_back({0, 0});
    }
  }
  // terminal degrees consistent with the tree: leaves end free (degree 1)
  std::vector<int> deg(size_t(n), 0);
  for (auto [a, b] : g.edges) {
    deg[size_t(a)] += 1;
    deg[size_t(b)] += 1;
  }
  for (int i = 0; i < n; ++i) {
    g.nodes[size_t(i)].degree_a = std::max(2, deg[size_t(i)]);
    g.nodes[size_t(i)].degree_b = deg[size_t(i)] == 1 ? 1 : 2;
  }
  return g;
}

ArteryLabel random_label(std::mt19937_64& rng) {
  BaseClass b = kClasses[rng() % 5];
  int sub = b == BaseClass::LMA ? 0 : 1 + int(rng() % 3);
  return {b, sub};
}

}  // namespace

TEST_CASE("weighted metrics agree with the brute-force oracle") {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 50; ++t) {
    size_t n = 5 + rng() % 40;
    std::vector<ArteryLabel> truth;
    std::vector<std::optional<ArteryLabel>> pred;
    for (size_t i = 0; i < n; ++i) {
      truth.push_back(random_label(rng));
      if (rng() % 5 == 0) {
        pred.emplace_back(std::nullopt);  // unassigned
      } else {
        pred.emplace_back(random_label(rng));
      }
    }
    auto r = weighted_metrics(confusion(truth, pred));
    auto ref = oracle::weighted_metrics_ref(truth, pred);
    CHECK(std::abs(r.weighted.acc - ref.w_acc) < 1e-12);
    CHECK(std::abs(r.weighted.pre - ref.w_pre) < 1e-12);
    CHECK(std::abs(r.weighted.rec - ref.w_rec) < 1e-12);
    CHECK(std::abs(r.weighted.f1 - ref.w_f1) < 1e-12);
    CHECK(std::abs(r.plain_accuracy - ref.plain_accuracy) < 1e-12);
    for (int c = 0; c < kClassCount; ++c) {
      const auto& m = r.per_class[size_t(c)];
      const auto& o = ref.per_class[size_t(c)];
      CHECK(std::abs(m.acc - o.acc) < 1e-12);
      CHECK(std::abs(m.pre - o.pre) < 1e-12);
      CHECK(std::abs(m.rec - o.rec) < 1e-12);
      CHECK(std::abs(m.f1 - o.f1) < 1e-12);
      CHECK(r.cs.support[size_t(c)] == o.support);
      // F1 is the harmonic mean, pinned between precision and recall
      if (m.pre > 0 && m.rec > 0) {
        CHECK(m.f1 >= std::min(m.pre, m.rec) - 1e-12);
        CHECK(m.f1 <= std::max(m.pre, m.rec) + 1e-12);
      }
    }
  }
}

TEST_CASE("unassigned predictions count as false negatives only") {
  std::vector<ArteryLabel> truth = {{BaseClass::LAD, 1}, {BaseClass::LCX, 1}};
  std::vector<std::optional<ArteryLabel>> pred = {std::nullopt, ArteryLabel{BaseClass::LCX, 1}};
  auto cs = confusion(truth, pred);
  int lad = int(BaseClass::LAD), lcx = int(BaseClass::LCX), lma = int(BaseClass::LMA);
  CHECK(cs.fn[size_t(lad)] == 1);
  CHECK(cs.tp[size_t(lad)] == 0);
  CHECK(cs.tp[size_t(lcx)] == 1);
  CHECK(cs.fp[size_t(lma)] == 0);  // nothing gains a false positive
  CHECK(cs.tn[size_t(lma)] == 2);
  CHECK_THROWS_AS(confusion(truth, {std::nullopt}), Error);

  // sub-labels collapse to the base class for confusion purposes
  std::vector<std::optional<ArteryLabel>> sub = {ArteryLabel{BaseClass::LAD, 3},
                                                 ArteryLabel{BaseClass::LCX, 2}};
  auto cs2 = confusion(truth, sub);
  CHECK(cs2.tp[size_t(lad)] == 1);
  CHECK(cs2.tp[size_t(lcx)] == 1);
}

TEST_CASE("stratified folds are disjoint, exhaustive and view-balanced") {
  std::vector<IndividualGraph> graphs;
  for (int i = 0; i < 13; ++i) graphs.push_back(tiny_graph(3, 2, uint64_t(i), "RAO30"));
  for (int i = 0; i < 7; ++i) graphs.push_back(tiny_graph(3, 2, uint64_t(100 + i), "LAO45"));
  std::vector<int> ids(20);
  std::iota(ids.begin(), ids.end(), 0);

  auto folds = stratified_folds(graphs, ids, 5);
  REQUIRE(folds.size() == 5);
  std::vector<int> seen;
  for (const auto& f : folds) seen.insert(seen.end(), f.begin(), f.end());
  std::sort(seen.begin(), seen.end());
  CHECK(seen == ids);  // disjoint and exhaustive

  for (const char* view : {"RAO30", "LAO45"}) {
    std::vector<int> per_fold;
    for (const auto& f : folds) {
      int c = 0;
      for (int id : f)
        if (graphs[size_t(id)].view_tag == view) ++c;
      per_fold.push_back(c);
    }
    int mn = *std::min_element(per_fold.begin(), per_fold.end());
    int mx = *std::max_element(per_fold.begin(), per_fold.end());
    CHECK(mx - mn <= 1);
  }
}

TEST_CASE("template split is proportional per view with safe clamps") {
  std::vector<IndividualGraph> graphs;
  for (int i = 0; i < 14; ++i) graphs.push_back(tiny_graph(3, 2, uint64_t(i), "RAO30"));
  for (int i = 0; i < 6; ++i) graphs.push_back(tiny_graph(3, 2, uint64_t(50 + i), "LAO45"));
  auto [tpl, rest] = split_templates(graphs, 0.15);
  // lround(0.15*14)=2 templates for RAO, lround(0.15*6)=1 for LAO
  int tpl_rao = 0, tpl_lao = 0;
  for (int id : tpl)
    (graphs[size_t(id)].view_tag == "RAO30" ? tpl_rao : tpl_lao) += 1;
  CHECK(tpl_rao == 2);
  CHECK(tpl_lao == 1);
  CHECK(tpl.size() + rest.size() == graphs.size());
  std::vector<int> all = tpl;
  all.insert(all.end(), rest.begin(), rest.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 20; ++i) CHECK(all[size_t(i)] == i);

  // every view keeps at least one template and one remaining graph
  std::vector<IndividualGraph> two = {tiny_graph(3, 2, 1), tiny_graph(3, 2, 2)};
  auto [t2, r2] = split_templates(two, 0.01);
  CHECK(t2.size() == 1);
  CHECK(r2.size() == 1);
  CHECK_THROWS_AS(split_templates(graphs, 0.0), Error);
  CHECK_THROWS_AS(split_templates(graphs, 1.0), Error);
}

TEST_CASE("spearman rank correlation with and without ties") {
  CHECK(spearman({1, 2, 3, 4}, {2, 4, 6, 8}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {8, 6, 4, 2}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3, 4}, {10, 100, 20, 200}) ==
        doctest::Approx(spearman({1, 2, 3, 4}, {1, 3, 2, 4})));  // rank-based
  // hand case with a tie: ranks y = {1.5, 1.5, 3}
  CHECK(spearman({1, 2, 3}, {5, 5, 6}) == doctest::Approx(1.5 / std::sqrt(3.0)));
  CHECK(spearman({1, 2, 3}, {7, 7, 7}) == 0.0);  // degenerate
  CHECK_THROWS_AS(spearman({1}, {2}), Error);
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2, 3}), Error);
}

TEST_CASE("report JSON and CSV carry every metric") {
  std::vector<ArteryLabel> truth = {{BaseClass::LMA, 0}, {BaseClass::LAD, 1},
                                    {BaseClass::LAD, 2}};
  std::vector<std::optional<ArteryLabel>> pred = {
      ArteryLabel{BaseClass::LMA, 0}, ArteryLabel{BaseClass::LAD, 1}, std::nullopt};
  auto r = weighted_metrics(confusion(truth, pred));
  r.fold_id = "fold0";
  auto j = report_to_json(r);
  CHECK(j["schema_version"] == "agm-report-1");
  CHECK(j["fold"] == "fold0");
  CHECK(j["n"] == 3);
  CHECK(j["per_class"]["LMA"]["tp"] == 1);
  CHECK(j["per_class"]["LAD"]["support"] == 2);
  CHECK(j["per_class"]["LAD"]["fn"] == 1);
  CHECK(double(j["plain_accuracy"]) == doctest::Approx(2.0 / 3.0));

  auto csv = reports_csv({r, r});
  CHECK(csv.find("fold,class,acc,pre,rec,f1,support") == 0);
  CHECK(csv.find("fold0,LMA,") != std::string::npos);
  CHECK(csv.find("fold0,weighted,") != std::string::npos);
  CHECK(csv.find("mean,weighted,") != std::string::npos);
  CHECK(csv.find("std,weighted,") != std::string::npos);
}

TEST_CASE("majority class fraction") {
  std::vector<IndividualGraph> graphs = {tiny_graph(5, 2, 1), tiny_graph(6, 2, 2)};
  // labels: LMA,LAD,LCX,D,OM + LMA,LAD,LCX,D,OM,LAD2 -> LAD appears 3/11 times
  CHECK(majority_class_fraction(graphs) == doctest::Approx(3.0 / 11.0));
  auto un = graphs;
  un[0].nodes[0].label.reset();
  CHECK_THROWS_AS(majority_class_fraction(un), Error);
}

TEST_CASE("overlay PPM has a valid header and recolored centerline") {
  GrayImage img = GrayImage::make(8, 4, 1.0);
  for (auto& v : img.intensities) v = 50;
  IndividualGraph g;
  GraphNode nd;
  nd.seg.pixels = {{1, 1}, {2, 1}};
  nd.seg.radii = {1.0, 1.0};
  g.nodes.push_back(nd);
  std::vector<std::optional<ArteryLabel>> labels = {ArteryLabel{BaseClass::LAD, 1}};
  std::string path = "overlay_test.ppm";
  write_overlay_ppm(img, g, labels, path);

  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::string magic;
  int w, h, maxv;
  in >> magic >> w >> h >> maxv;
  in.get();
  CHECK(magic == "P6");
  CHECK(w == 8);
  CHECK(h == 4);
  CHECK(maxv == 255);
  std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
  in.read(reinterpret_cast<char*>(rgb.data()), std::streamsize(rgb.size()));
  CHECK(in.gcount() == std::streamsize(rgb.size()));
  size_t at = 3 * (1 * 8 + 1);
  CHECK(rgb[at] == 60);  // LAD palette entry
  CHECK(rgb[at + 1] == 160);
  CHECK(rgb[at + 2] == 230);
  CHECK(rgb[0] == 50);  // background untouched
  std::remove(path.c_str());
  CHECK_THROWS_AS(write_overlay_ppm(img, g, {}, path), Error);
}

TEST_CASE("evaluate_set, feature importance and level-0 attack consistency") {
  AgmnConfig mc;
  mc.hidden = 5;
  mc.depth = 2;
  mc.n_mp = 1;
  mc.feature_dim = 4;
  std::mt19937_64 rng(8);
  auto params = AgmnParams<double>::init(mc, rng);

  std::vector<IndividualGraph> test = {tiny_graph(4, 4, 71), tiny_graph(3, 4, 72)};
  std::vector<IndividualGraph> templates = {tiny_graph(5, 4, 73), tiny_graph(4, 4, 74)};

  auto base = evaluate_set(params, test, templates, "base");
  CHECK(base.cs.n == 7);
  CHECK(base.weighted.acc >= 0.0);
  CHECK(base.weighted.acc <= 1.0);

  double drop = feature_importance(params, test, templates, 2, base.weighted.acc);
  CHECK(std::isfinite(drop));
  CHECK_THROWS_AS(feature_importance(params, test, templates, -1, 0.5), Error);
  CHECK_THROWS_AS(feature_importance(params, test, templates, kFeatureDim, 0.5), Error);

  auto rows = attack_sweep(params, test, templates, {0.0, 0.5}, {1, 2});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].level == 0.0);
  REQUIRE(rows[0].per_seed.size() == 2);
  // removing nothing reproduces the baseline confusion for every seed
  for (const auto& r : rows[0].per_seed) {
    CHECK(r.cs.n == base.cs.n);
    for (int c = 0; c < kClassCount; ++c) {
      CHECK(r.cs.tp[size_t(c)] == base.cs.tp[size_t(c)]);
      CHECK(r.cs.fn[size_t(c)] == base.cs.fn[size_t(c)]);
    }
  }
  CHECK(rows[0].mean_report.weighted.acc == doctest::Approx(base.weighted.acc));
  CHECK(rows[1].mean_report.cs.n < 2 * base.cs.n);  // leaves actually removed
  CHECK_THROWS_AS(attack_sweep(params, test, templates, {0.0}, {}), Error);
}

TEST_CASE("cross-validation: fold structure and thread-count invariance") {
  std::vector<IndividualGraph> graphs;
  for (int i = 0; i < 14; ++i)
    graphs.push_back(tiny_graph(3 + i % 3, 4, uint64_t(i), "RAO30"));
  for (int i = 0; i < 6; ++i)
    graphs.push_back(tiny_graph(3 + i % 3, 4, uint64_t(60 + i), "LAO45"));

  AgmnConfig mc;
  mc.hidden = 4;
  mc.depth = 2;
  mc.n_mp = 1;
  mc.feature_dim = 4;
  TrainConfig tc;
  tc.steps = 3;
  tc.batch = 2;
  tc.seed = 5;

  auto folds1 = cross_validate<double>(graphs, 0.15, tc, mc, 5, 1);
  REQUIRE(folds1.size() == 5);
  size_t test_total = 0;
  for (const auto& fa : folds1) {
    CHECK(!fa.test.empty());
    CHECK(fa.templates.size() == 3);  // 2 RAO + 1 LAO templates
    CHECK(fa.log.size() == 3);
    test_total += fa.test.size();
  }
  CHECK(test_total == 17);  // everything outside the template pool

  auto folds2 = cross_validate<double>(graphs, 0.15, tc, mc, 5, 4);
  for (size_t k = 0; k < 5; ++k) {
    CHECK(folds1[k].report.weighted.acc == folds2[k].report.weighted.acc);
    CHECK(folds1[k].report.plain_accuracy == folds2[k].report.plain_accuracy);
    CHECK(folds1[k].log.back().mean_loss == folds2[k].log.back().mean_loss);
    std::vector<Mat<double>*> w1, w2;
    std::vector<Vec<double>*> b1, b2;
    folds1[k].params.collect(w1, b1);
    folds2[k].params.collect(w2, b2);
    for (size_t i = 0; i < w1.size(); ++i) CHECK(*w1[i] == *w2[i]);
  }

  CHECK_THROWS_AS(cross_validate<double>(graphs, 0.15, tc, mc, 5, 0), Error);
}
