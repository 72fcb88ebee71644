#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "agm/artery_graph.hpp"
#include "agm/features.hpp"
#include "agm/image.hpp"

namespace agm {

struct SynthConfig {
  int width = 192;
  int height = 192;
  double spacing = 0.3;           // mm per pixel
  double overlap_fraction = 0.0;  // fraction of samples with a forced 2-D crossing

  void validate() const {
    if (width < 64 || height < 64 || spacing <= 0)
      throw Error(ErrorKind::invalid_input, "bad synth dimensions");
    if (overlap_fraction < 0 || overlap_fraction > 1)
      throw Error(ErrorKind::invalid_input, "overlap fraction outside [0,1]");
  }
};

namespace detail {

struct P2 {
  double x = 0, y = 0;
};
inline P2 operator+(P2 a, P2 b) { return {a.x + b.x, a.y + b.y}; }
inline P2 operator-(P2 a, P2 b) { return {a.x - b.x, a.y - b.y}; }
inline P2 operator*(P2 a, double s) { return {a.x * s, a.y * s}; }
inline double dot(P2 a, P2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(P2 a) { return std::sqrt(dot(a, a)); }
inline P2 unit(P2 a) {
  double n = norm(a);
  return n == 0 ? P2{1, 0} : P2{a.x / n, a.y / n};
}

// Quadratic Bezier tube with linearly tapering radius.
struct Tube {
  BaseClass label;
  P2 p0, p1, p2;
  double r0 = 4, r1 = 4;     // radius in pixels at t=0 / t=1
  double depth = 80;         // darkness amplitude at the centerline
  int parent = -1;           // tube index the start point attaches to
  double parent_t = 0;       // parameter on the parent at the attachment

  P2 at(double t) const {
    double u = 1 - t;
    return p0 * (u * u) + p1 * (2 * u * t) + p2 * (t * t);
  }
  P2 tangent(double t) const {
    return unit((p1 - p0) * (2 * (1 - t)) + (p2 - p1) * (2 * t));
  }
  double radius(double t) const { return r0 + (r1 - r0) * t; }
  double arc_length() const {
    double len = 0;
    P2 prev = at(0);
    for (int i = 1; i <= 64; ++i) {
      P2 cur = at(double(i) / 64.0);
      len += norm(cur - prev);
      prev = cur;
    }
    return len;
  }
  // Parameter at a given fraction of arc length (attachments are spaced
  // along the curve, not in parameter space).
  double t_at_arc_fraction(double f) const {
    double total = arc_length(), want = f * total, len = 0;
    P2 prev = at(0);
    for (int i = 1; i <= 64; ++i) {
      P2 cur = at(double(i) / 64.0);
      double step = norm(cur - prev);
      if (len + step >= want && step > 0) {
        double frac = (want - len) / step;
        return (double(i) - 1.0 + frac) / 64.0;
      }
      len += step;
      prev = cur;
    }
    return 1.0;
  }
};

}  // namespace detail

struct SynthBranch {
  BaseClass label;
  std::vector<std::pair<double, double>> centerline;  // dense, ~1 px apart
};

struct SynthSample {
  GrayImage gray;
  BinaryMask mask;
  std::vector<SynthBranch> branches;
  std::string view_tag;
  uint64_t seed = 0;
  int k_d = 0;
  int k_om = 0;
  bool overlapped = false;

  // Segments between key points: LMA + (k_d+1) LAD parts + k_d D branches
  // + (k_om+1) LCX parts + k_om OM branches.
  int intended_nodes() const { return 3 + 2 * k_d + 2 * k_om; }

  // Star expansion keeps the thickest incident segment as the hub at each
  // bifurcation, which the taper makes the proximal parent segment.
  std::vector<int> intended_degrees() const {
    std::vector<int> deg;
    deg.push_back(2);  // LMA: hub at the first bifurcation
    for (int i = 0; i <= k_d; ++i) {
      int d = 1;               // link to the upstream hub
      if (i < k_d) d += 2;     // hub over the next LAD part and D_i
      deg.push_back(d);
    }
    for (int i = 0; i < k_d; ++i) deg.push_back(1);
    for (int i = 0; i <= k_om; ++i) {
      int d = 1;
      if (i < k_om) d += 2;
      deg.push_back(d);
    }
    for (int i = 0; i < k_om; ++i) deg.push_back(1);
    std::sort(deg.begin(), deg.end());
    return deg;
  }
};

namespace detail {

inline std::vector<Tube> sample_tree(const SynthConfig& cfg, std::mt19937_64& rng,
                                     bool lao, int& k_d, int& k_om, bool overlap) {
  auto uni = [&](double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(rng);
  };
  double W = cfg.width, H = cfg.height;
  double sx = W / 192.0, sy = H / 192.0;
  auto mx = [&](double x) { return lao ? W - 1 - x * sx : x * sx; };
  auto my = [&](double y) { return y * sy; };
  // Mirrored-x lateral offsets.
  double lat = lao ? -sx : sx;

  std::uniform_int_distribution<int> side_count(1, 3);
  k_d = side_count(rng);
  k_om = side_count(rng);

  std::vector<Tube> tubes;
  auto amp = [&](double r) { return 52.0 + 7.0 * r + uni(0, 14); };

  Tube lma;
  lma.label = BaseClass::LMA;
  lma.p0 = {mx(62 + uni(-6, 6)), my(16 + uni(-3, 5))};
  lma.p2 = {mx(88 + uni(-6, 6)), my(50 + uni(-5, 5))};
  lma.p1 = (lma.p0 + lma.p2) * 0.5 + P2{uni(-5, 5) * sx, uni(-4, 4) * sy};
  lma.r0 = 7.0 + uni(-0.2, 0.2);
  lma.r1 = 6.5 + uni(-0.15, 0.15);
  lma.depth = amp(lma.r0);
  tubes.push_back(lma);
  P2 b0 = lma.p2;

  Tube lad;
  lad.label = BaseClass::LAD;
  lad.p0 = b0;
  lad.p2 = {mx(72 + uni(-14, 14)), my(172 + uni(-8, 6))};
  lad.p1 = (lad.p0 + lad.p2) * 0.5 + P2{uni(-14, 14) * sx, uni(-8, 8) * sy};
  lad.r0 = 5.7 + uni(-0.15, 0.15);
  lad.r1 = 3.4 + uni(-0.1, 0.1);
  lad.depth = amp(lad.r0);
  lad.parent = 0;
  lad.parent_t = 1.0;
  tubes.push_back(lad);

  Tube lcx;
  lcx.label = BaseClass::LCX;
  lcx.p0 = b0;
  lcx.p2 = {mx(164 + uni(-8, 8)), my(126 + uni(-16, 16))};
  lcx.p1 = (lcx.p0 + lcx.p2) * 0.5 + P2{uni(-8, 8) * sx, uni(-12, 2) * sy};
  lcx.r0 = 5.5 + uni(-0.15, 0.15);
  lcx.r1 = 3.3 + uni(-0.1, 0.1);
  lcx.depth = amp(lcx.r0);
  lcx.parent = 0;
  lcx.parent_t = 1.0;
  tubes.push_back(lcx);

  auto add_side = [&](int parent_idx, BaseClass label, double t, P2 away_hint) {
    const Tube& par = tubes[size_t(parent_idx)];
    P2 attach = par.at(t);
    P2 tan = par.tangent(t);
    P2 nrm{tan.y, -tan.x};
    if (dot(nrm, away_hint) < 0) nrm = nrm * -1.0;
    double ang = uni(46, 68) * std::numbers::pi / 180.0;
    P2 dir = unit(tan * std::cos(ang) + nrm * std::sin(ang));
    double len = (34 + uni(0, 24)) * sx;
    Tube s;
    s.label = label;
    s.p0 = attach;
    s.p2 = attach + dir * len;
    P2 perp{dir.y, -dir.x};
    s.p1 = attach + dir * (len * 0.5) + perp * uni(-6, 6);
    s.r0 = 3.5 + uni(-0.1, 0.1);
    s.r1 = 3.2 + uni(-0.05, 0.1);
    s.depth = amp(s.r0);
    s.parent = parent_idx;
    s.parent_t = t;
    tubes.push_back(s);
  };

  // D branches leave the LAD on the side away from the LCX.
  P2 away_d = unit(b0 - lcx.p2);
  for (int i = 0; i < k_d; ++i) {
    double f = 0.24 + 0.21 * i + uni(-0.02, 0.02);
    add_side(1, BaseClass::D, tubes[1].t_at_arc_fraction(f), away_d);
  }
  // OM branches leave the LCX heading downward. The last attachment stays
  // clear of the tip so the junction shift never strands a short stub.
  for (int i = 0; i < k_om; ++i) {
    double f = 0.26 + 0.20 * i + uni(-0.02, 0.02);
    add_side(2, BaseClass::OM, tubes[2].t_at_arc_fraction(f), P2{-lat, 1.5});
  }

  if (overlap && !tubes.empty()) {
    // Force the first OM across the LAD, echoing 2-D projection overlap.
    for (auto& tb : tubes)
      if (tb.label == BaseClass::OM) {
        P2 target = tubes[1].at(0.85);
        P2 dir = unit(target - tb.p0);
        double len = norm(target - tb.p0) + 16 * sx;
        tb.p2 = tb.p0 + dir * len;
        tb.p1 = tb.p0 + dir * (len * 0.5) + P2{dir.y, -dir.x} * uni(-4, 4);
        break;
      }
  }
  return tubes;
}

inline bool geometry_ok(const SynthConfig& cfg, const std::vector<Tube>& tubes,
                        bool allow_overlap) {
  double margin = 3.0;
  std::vector<std::vector<std::pair<P2, double>>> samples;
  for (const auto& tb : tubes) {
    std::vector<std::pair<P2, double>> s;
    int n = std::max(8, int(tb.arc_length() / 3.0));
    for (int i = 0; i <= n; ++i) {
      double t = double(i) / n;
      P2 p = tb.at(t);
      double r = tb.radius(t);
      if (p.x < r + margin || p.x > cfg.width - 1 - r - margin || p.y < r + margin ||
          p.y > cfg.height - 1 - r - margin)
        return false;
      s.emplace_back(p, r);
    }
    samples.push_back(std::move(s));
  }
  // Junction points must stay well apart so nearby bifurcations never
  // collapse under the splitting-point merge.
  std::vector<P2> junctions;
  for (const auto& tb : tubes)
    if (tb.parent >= 0) junctions.push_back(tb.p0);
  for (size_t a = 0; a < junctions.size(); ++a)
    for (size_t b = a + 1; b < junctions.size(); ++b) {
      double d = norm(junctions[a] - junctions[b]);
      if (d > 1e-6 && d < 16.0) return false;
    }
  if (allow_overlap) return true;
  double clear_r = 18.0;
  for (size_t a = 0; a < tubes.size(); ++a)
    for (size_t b = a + 1; b < tubes.size(); ++b) {
      // Contact is allowed only near a shared attachment point.
      std::vector<P2> contacts;
      if (tubes[b].parent == int(a)) contacts.push_back(tubes[b].p0);
      if (tubes[a].parent == int(b)) contacts.push_back(tubes[a].p0);
      if (tubes[a].parent >= 0 && tubes[a].parent == tubes[b].parent &&
          norm(tubes[a].p0 - tubes[b].p0) < 1e-6)
        contacts.push_back(tubes[a].p0);
      for (const auto& [pa, ra] : samples[a])
        for (const auto& [pb, rb] : samples[b]) {
          bool near_contact = false;
          for (const P2& c : contacts)
            if (norm(pa - c) < clear_r || norm(pb - c) < clear_r) {
              near_contact = true;
              break;
            }
          if (near_contact) continue;
          if (norm(pa - pb) < ra + rb + 3.0) return false;
        }
    }
  return true;
}

}  // namespace detail

// Deterministic per seed. Degenerate geometry resamples internally with
// bounded retries.
inline SynthSample generate(const SynthConfig& cfg, const std::string& view_tag,
                            uint64_t seed) {
  cfg.validate();
  if (view_tag != "LAO" && view_tag != "RAO")
    throw Error(ErrorKind::invalid_input, "view must be LAO or RAO");
  std::mt19937_64 rng(seed);
  bool overlap = cfg.overlap_fraction > 0 &&
                 std::uniform_real_distribution<double>(0, 1)(rng) < cfg.overlap_fraction;

  std::vector<detail::Tube> tubes;
  int k_d = 0, k_om = 0;
  bool ok = false;
  for (int attempt = 0; attempt < 60 && !ok; ++attempt) {
    tubes = detail::sample_tree(cfg, rng, view_tag == "LAO", k_d, k_om, overlap);
    ok = detail::geometry_ok(cfg, tubes, overlap);
  }
  if (!ok) throw Error(ErrorKind::structural, "could not sample a valid tree geometry");

  SynthSample s;
  s.view_tag = view_tag;
  s.seed = seed;
  s.k_d = k_d;
  s.k_om = k_om;
  s.overlapped = overlap;
  s.mask = BinaryMask::make(cfg.width, cfg.height);
  s.gray = GrayImage::make(cfg.width, cfg.height, cfg.spacing, 0);

  auto uni = [&](double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(rng);
  };
  double gx = uni(-0.12, 0.12), gy = uni(-0.12, 0.12);
  double base = 182 + uni(-6, 6);
  double sigma = 4.0 + uni(0, 3);

  std::vector<double> depth(size_t(cfg.width) * size_t(cfg.height), 0.0);
  for (const auto& tb : tubes) {
    SynthBranch br;
    br.label = tb.label;
    double len = tb.arc_length();
    int steps = std::max(16, int(len * 3));
    for (int i = 0; i <= steps; ++i) {
      double t = double(i) / steps;
      detail::P2 p = tb.at(t);
      double r = tb.radius(t);
      if (i % 3 == 0) br.centerline.emplace_back(p.x, p.y);
      int x0 = std::max(0, int(std::floor(p.x - r - 1)));
      int x1 = std::min(cfg.width - 1, int(std::ceil(p.x + r + 1)));
      int y0 = std::max(0, int(std::floor(p.y - r - 1)));
      int y1 = std::min(cfg.height - 1, int(std::ceil(p.y + r + 1)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          double dx = x - p.x, dy = y - p.y;
          double d2 = dx * dx + dy * dy;
          if (d2 > r * r) continue;
          s.mask.set(x, y, true);
          double prof = tb.depth * (1.0 - d2 / (r * r));
          auto at = size_t(y) * size_t(cfg.width) + size_t(x);
          depth[at] = std::max(depth[at], prof);
        }
    }
    s.branches.push_back(std::move(br));
  }

  std::normal_distribution<double> noise(0.0, sigma);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x) {
      double v = base + gx * (x - cfg.width / 2.0) + gy * (y - cfg.height / 2.0);
      v -= depth[size_t(y) * size_t(cfg.width) + size_t(x)];
      v += noise(rng);
      s.gray.at(x, y) = uint8_t(std::clamp(v, 0.0, 255.0));
    }
  return s;
}

// Majority vote over nearest ground-truth centerline points.
inline void apply_ground_truth(IndividualGraph& g, const SynthSample& s) {
  for (auto& nd : g.nodes) {
    std::array<int, 5> votes{};
    for (const Point& p : nd.seg.pixels) {
      double best = 1e18;
      BaseClass best_label = BaseClass::LMA;
      for (const auto& br : s.branches)
        for (const auto& [cx, cy] : br.centerline) {
          double d = (p.x - cx) * (p.x - cx) + (p.y - cy) * (p.y - cy);
          if (d < best) {
            best = d;
            best_label = br.label;
          }
        }
      votes[size_t(int(best_label))] += 1;
    }
    int best_c = 0;
    for (int c = 1; c < 5; ++c)
      if (votes[size_t(c)] > votes[size_t(best_c)]) best_c = c;
    nd.label = ArteryLabel{BaseClass(best_c), 0};
  }
}

struct Benchmark {
  std::vector<SynthSample> samples;
  std::vector<IndividualGraph> graphs;  // labeled, features extracted
  int first_try_matches = 0;            // intended-topology fidelity counter
  std::vector<uint64_t> failed_seeds;
};

inline bool topology_matches(const IndividualGraph& g, const SynthSample& s) {
  if (g.n() != s.intended_nodes()) return false;
  std::vector<int> deg;
  for (int i = 0; i < g.n(); ++i) deg.push_back(g.degree(i));
  std::sort(deg.begin(), deg.end());
  return deg == s.intended_degrees();
}

// Full pipeline for one sample: graph build, ground-truth labels, sub-class
// relabeling, feature extraction.
inline IndividualGraph realize_graph(const SynthSample& s, const SynthConfig& cfg) {
  PipelineConfig pc;
  pc.pixel_spacing = cfg.spacing;
  IndividualGraph g = build_individual_graph(s.mask, pc);
  g.view_tag = s.view_tag;
  g.image_width = s.mask.width;
  g.image_height = s.mask.height;
  g.pixel_spacing = cfg.spacing;
  g.provenance = "synth seed=" + std::to_string(s.seed);
  apply_ground_truth(g, s);
  g = relabel_subclasses(std::move(g));
  extract_features(g, s.mask, s.gray, FeatureSpec{});
  return g;
}

inline Benchmark make_benchmark(int count, uint64_t seed, const SynthConfig& cfg = {}) {
  if (count < 20)
    throw Error(ErrorKind::invalid_input, "benchmark needs at least 20 samples");
  Benchmark bench;
  for (int i = 0; i < count; ++i) {
    std::string view = (i % 10) < 3 ? "LAO" : "RAO";
    uint64_t base_seed = seed ^ (0x9e3779b97f4a7c15ULL * uint64_t(i + 1));
    bool made = false;
    for (int retry = 0; retry < 25 && !made; ++retry) {
      uint64_t s_seed = base_seed + uint64_t(retry) * 0x100000001b3ULL;
      SynthSample s = generate(cfg, view, s_seed);
      try {
        IndividualGraph g = realize_graph(s, cfg);
        bool match = topology_matches(g, s);
        if (retry == 0 && match) bench.first_try_matches += 1;
        if (!match) {
          bench.failed_seeds.push_back(s_seed);
          continue;
        }
        bench.samples.push_back(std::move(s));
        bench.graphs.push_back(std::move(g));
        made = true;
      } catch (const Error&) {
        bench.failed_seeds.push_back(s_seed);
      }
    }
    if (!made)
      throw Error(ErrorKind::structural,
                  "benchmark sample " + std::to_string(i) + " failed repeatedly");
  }
  return bench;
}

inline nlohmann::json sample_truth_json(const SynthSample& s) {
  nlohmann::json j;
  j["schema_version"] = "agm-truth-1";
  j["view_tag"] = s.view_tag;
  j["seed"] = s.seed;
  j["k_d"] = s.k_d;
  j["k_om"] = s.k_om;
  j["overlapped"] = s.overlapped;
  j["branches"] = nlohmann::json::array();
  for (const auto& br : s.branches) {
    nlohmann::json jb;
    jb["label"] = to_string(br.label);
    jb["centerline"] = nlohmann::json::array();
    for (const auto& [x, y] : br.centerline) jb["centerline"].push_back({x, y});
    j["branches"].push_back(std::move(jb));
  }
  return j;
}

}  // namespace agm
