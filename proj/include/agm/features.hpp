#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "agm/artery_graph.hpp"
#include "agm/image.hpp"

namespace agm {

// Default layout "agm-feat-70-v1":
//   [0..5]    basic pixel features
//   [6..23]   first-order intensity statistics (18)
//   [24..47]  GLCM texture statistics (24), averaged over offsets
//   [48..67]  positional features (20)
//   [68..69]  key-point degrees (2)
inline constexpr int kFeatureDim = 70;
inline constexpr const char* kFeatureLayout = "agm-feat-70-v1";

struct FeatureSpec {
  int gray_levels = 32;
  std::vector<Point> glcm_offsets = {{1, 0}, {1, 1}, {0, 1}, {-1, 1}};

  void validate() const {
    if (gray_levels < 2)
      throw Error(ErrorKind::invalid_input, "gray_levels must be >= 2");
    if (glcm_offsets.empty())
      throw Error(ErrorKind::invalid_input, "glcm offsets must be nonempty");
  }
};

struct NormalizationStats {
  std::string layout_version = kFeatureLayout;
  std::vector<double> mean;
  std::vector<double> stddev;  // zeros replaced by 1

  static NormalizationStats fit(const std::vector<std::vector<double>>& vectors) {
    NormalizationStats st;
    if (vectors.empty())
      throw Error(ErrorKind::invalid_input, "cannot fit stats on empty set");
    size_t d = vectors[0].size();
    st.mean.assign(d, 0.0);
    st.stddev.assign(d, 0.0);
    for (const auto& v : vectors)
      for (size_t i = 0; i < d; ++i) st.mean[i] += v[i];
    for (double& m : st.mean) m /= double(vectors.size());
    for (const auto& v : vectors)
      for (size_t i = 0; i < d; ++i) {
        double c = v[i] - st.mean[i];
        st.stddev[i] += c * c;
      }
    for (double& s : st.stddev) {
      s = std::sqrt(s / double(vectors.size()));
      if (s == 0.0) s = 1.0;
    }
    return st;
  }
};

inline std::vector<double> normalize(const std::vector<double>& fv,
                                     const NormalizationStats& st) {
  if (fv.size() != st.mean.size())
    throw Error(ErrorKind::invalid_input, "feature/stats layout mismatch");
  std::vector<double> out(fv.size());
  for (size_t i = 0; i < fv.size(); ++i)
    out[i] = (fv[i] - st.mean[i]) / st.stddev[i];
  return out;
}

// --- basic pixel features (6) ---
// [region pixel count, centerline length, radius std, mean, min, max]
inline std::array<double, 6> basic_pixel_features(const CenterlineSegment& seg,
                                                  size_t region_pixel_count) {
  if (seg.radii.empty())
    throw Error(ErrorKind::invalid_input, "segment without radii");
  double mean = 0, mn = seg.radii[0], mx = seg.radii[0];
  for (double r : seg.radii) {
    mean += r;
    mn = std::min(mn, r);
    mx = std::max(mx, r);
  }
  mean /= double(seg.radii.size());
  double var = 0;
  for (double r : seg.radii) var += (r - mean) * (r - mean);
  var /= double(seg.radii.size());
  return {double(region_pixel_count), seg.centerline_length(),
          std::sqrt(var), mean, mn, mx};
}

namespace detail {

inline double percentile_linear(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0;
  double pos = q / 100.0 * double(sorted.size() - 1);
  size_t lo = size_t(std::floor(pos));
  size_t hi = std::min(lo + 1, sorted.size() - 1);
  double f = pos - double(lo);
  return sorted[lo] * (1 - f) + sorted[hi] * f;
}

inline double log2_safe(double p) { return p > 0 ? std::log2(p) : 0.0; }

}  // namespace detail

// --- first-order statistics (18), fixed order:
// energy, entropy, min, p10, p90, max, mean, median, IQR, range, MAD,
// robust MAD, RMS, skewness, kurtosis, variance, uniformity, total energy.
// Entropy/uniformity discretize over the region's min-max range with
// `bins` levels. Degenerate higher moments are defined as 0.
inline std::array<double, 18> first_order_features(const std::vector<double>& values,
                                                   double pixel_spacing,
                                                   int bins = 32) {
  if (values.empty())
    throw Error(ErrorKind::invalid_input, "empty intensity region");
  size_t n = values.size();
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  double mn = sorted.front(), mx = sorted.back();

  double energy = 0, mean = 0;
  for (double v : values) {
    energy += v * v;
    mean += v;
  }
  mean /= double(n);
  double m2 = 0, m3 = 0, m4 = 0, mad = 0;
  for (double v : values) {
    double c = v - mean;
    m2 += c * c;
    m3 += c * c * c;
    m4 += c * c * c * c;
    mad += std::abs(c);
  }
  m2 /= double(n);
  m3 /= double(n);
  m4 /= double(n);
  mad /= double(n);
  double skew = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  double kurt = m2 > 0 ? m4 / (m2 * m2) : 0.0;

  // Discrete distribution over range-relative bins.
  std::vector<double> hist(size_t(bins), 0.0);
  double span = mx - mn;
  for (double v : values) {
    int b = span > 0 ? std::min(bins - 1, int((v - mn) / span * bins)) : 0;
    hist[size_t(b)] += 1.0;
  }
  double entropy = 0, uniformity = 0;
  for (double h : hist) {
    double p = h / double(n);
    entropy -= p * detail::log2_safe(p);
    uniformity += p * p;
  }

  double p10 = detail::percentile_linear(sorted, 10);
  double p25 = detail::percentile_linear(sorted, 25);
  double p75 = detail::percentile_linear(sorted, 75);
  double p90 = detail::percentile_linear(sorted, 90);
  double median = detail::percentile_linear(sorted, 50);

  // Robust MAD: mean absolute deviation inside the 10-90 percentile band.
  double rmad = 0;
  {
    std::vector<double> band;
    for (double v : sorted)
      if (v >= p10 && v <= p90) band.push_back(v);
    if (!band.empty()) {
      double bm = std::accumulate(band.begin(), band.end(), 0.0) / double(band.size());
      for (double v : band) rmad += std::abs(v - bm);
      rmad /= double(band.size());
    }
  }

  double rms = std::sqrt(energy / double(n));
  double total_energy = energy * pixel_spacing * pixel_spacing;

  return {energy, entropy, mn, p10, p90, mx, mean, median,
          p75 - p25, mx - mn, mad, rmad, rms, skew, kurt, m2,
          uniformity, total_energy};
}

// --- GLCM (24) ---
// Quantization uses `gray_levels` bins over the region's own min-max range,
// so adding a constant to all intensities leaves the labels unchanged.
inline std::vector<int> quantize_region(const std::vector<double>& values, int levels) {
  double mn = *std::min_element(values.begin(), values.end());
  double mx = *std::max_element(values.begin(), values.end());
  double span = mx - mn;
  std::vector<int> out(values.size());
  for (size_t i = 0; i < values.size(); ++i)
    out[i] = span > 0 ? std::min(levels - 1, int((values[i] - mn) / span * levels)) : 0;
  return out;
}

// 24 statistics of a normalized symmetric co-occurrence matrix. Gray values
// are 1-based. Order documented in glcm_feature_names().
inline std::array<double, 24> glcm_statistics(const std::vector<double>& P, int L) {
  auto p = [&](int i, int j) { return P[size_t(i) * L + j]; };
  std::vector<double> px(size_t(L), 0.0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) px[size_t(i)] += p(i, j);
  std::vector<double> pxy_sum(size_t(2 * L + 1), 0.0), pxy_diff(size_t(L), 0.0);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      pxy_sum[size_t(i + j + 2)] += p(i, j);
      pxy_diff[size_t(std::abs(i - j))] += p(i, j);
    }

  double mu = 0;
  for (int i = 0; i < L; ++i) mu += (i + 1) * px[size_t(i)];
  double var = 0;
  for (int i = 0; i < L; ++i) var += (i + 1 - mu) * (i + 1 - mu) * px[size_t(i)];

  double autocorr = 0, prominence = 0, shade = 0, tendency = 0, contrast = 0;
  double joint_energy = 0, joint_entropy = 0, idm = 0, idmn = 0, id = 0, idn = 0;
  double inv_var = 0, max_prob = 0, corr_num = 0, hxy1 = 0;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      double v = p(i, j);
      double gi = i + 1, gj = j + 1;
      autocorr += gi * gj * v;
      double s = gi + gj - 2 * mu;
      prominence += s * s * s * s * v;
      shade += s * s * s * v;
      tendency += s * s * v;
      contrast += (gi - gj) * (gi - gj) * v;
      joint_energy += v * v;
      joint_entropy -= v * detail::log2_safe(v);
      idm += v / (1 + (gi - gj) * (gi - gj));
      idmn += v / (1 + (gi - gj) * (gi - gj) / double(L) / double(L));
      id += v / (1 + std::abs(gi - gj));
      idn += v / (1 + std::abs(gi - gj) / double(L));
      if (i != j) inv_var += v / ((gi - gj) * (gi - gj));
      max_prob = std::max(max_prob, v);
      corr_num += gi * gj * v;
      hxy1 -= v * detail::log2_safe(px[size_t(i)] * px[size_t(j)]);
    }
  double correlation = var > 0 ? (corr_num - mu * mu) / var : 1.0;

  double hx = 0;
  for (int i = 0; i < L; ++i) hx -= px[size_t(i)] * detail::log2_safe(px[size_t(i)]);
  double hxy2 = 0;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      double q = px[size_t(i)] * px[size_t(j)];
      hxy2 -= q * detail::log2_safe(q);
    }
  double imc1 = hx > 0 ? (joint_entropy - hxy1) / hx : 0.0;
  double imc2 = std::sqrt(std::max(0.0, 1.0 - std::exp(-2.0 * (hxy2 - joint_entropy))));

  double diff_avg = 0, diff_entropy = 0;
  for (int k = 0; k < L; ++k) {
    diff_avg += k * pxy_diff[size_t(k)];
    diff_entropy -= pxy_diff[size_t(k)] * detail::log2_safe(pxy_diff[size_t(k)]);
  }
  double diff_var = 0;
  for (int k = 0; k < L; ++k)
    diff_var += (k - diff_avg) * (k - diff_avg) * pxy_diff[size_t(k)];

  double sum_avg = 0, sum_entropy = 0;
  for (int k = 2; k <= 2 * L; ++k) {
    sum_avg += k * pxy_sum[size_t(k)];
    sum_entropy -= pxy_sum[size_t(k)] * detail::log2_safe(pxy_sum[size_t(k)]);
  }
  double sum_var = 0;
  for (int k = 2; k <= 2 * L; ++k)
    sum_var += (k - sum_avg) * (k - sum_avg) * pxy_sum[size_t(k)];

  return {autocorr, mu, prominence, shade, tendency, contrast, correlation,
          diff_avg, diff_entropy, diff_var, joint_energy, joint_entropy,
          imc1, imc2, idm, idmn, id, idn, inv_var, max_prob,
          sum_avg, sum_entropy, var, sum_var};
}

inline const std::array<const char*, 24>& glcm_feature_names() {
  static const std::array<const char*, 24> names = {
      "autocorrelation", "joint_average", "cluster_prominence", "cluster_shade",
      "cluster_tendency", "contrast", "correlation", "difference_average",
      "difference_entropy", "difference_variance", "joint_energy", "joint_entropy",
      "imc1", "imc2", "idm", "idmn", "id", "idn", "inverse_variance",
      "maximum_probability", "sum_average", "sum_entropy", "sum_squares",
      "sum_variance"};
  return names;
}

// Region described by coordinates + intensities; co-occurrence restricted to
// pairs inside the region. Features averaged over offsets that produced at
// least one pair; a region with no pairs at all returns all zeros.
inline std::array<double, 24> glcm_features(const std::vector<Point>& region,
                                            const std::vector<double>& intensities,
                                            const FeatureSpec& spec) {
  spec.validate();
  if (region.empty())
    throw Error(ErrorKind::invalid_input, "empty GLCM region");
  int L = spec.gray_levels;
  std::vector<int> q = quantize_region(intensities, L);
  std::map<Point, int> level_at;
  for (size_t i = 0; i < region.size(); ++i) level_at[region[i]] = q[i];

  std::array<double, 24> acc{};
  int used_offsets = 0;
  for (const Point& off : spec.glcm_offsets) {
    std::vector<double> P(size_t(L) * L, 0.0);
    double total = 0;
    for (size_t i = 0; i < region.size(); ++i) {
      Point nb{region[i].x + off.x, region[i].y + off.y};
      auto it = level_at.find(nb);
      if (it == level_at.end()) continue;
      P[size_t(q[i]) * L + it->second] += 1;
      P[size_t(it->second) * L + q[i]] += 1;
      total += 2;
    }
    if (total == 0) continue;
    for (double& v : P) v /= total;
    auto f = glcm_statistics(P, L);
    for (int k = 0; k < 24; ++k) acc[size_t(k)] += f[size_t(k)];
    ++used_offsets;
  }
  if (used_offsets == 0) return {};  // documented degenerate values
  for (double& v : acc) v /= used_offsets;
  return acc;
}

// --- positional features (20) ---
// "Weighted" variants use radius-weighted centroids. All values are
// coordinate differences normalized by image width/height, hence in [-1,1].
struct TreeCenter {
  double ux = 0, uy = 0;  // unweighted centroid of all centerline pixels
  double wx = 0, wy = 0;  // radius-weighted centroid
};

inline TreeCenter tree_center_of(const IndividualGraph& g) {
  TreeCenter c;
  double n = 0, wsum = 0;
  for (const GraphNode& nd : g.nodes)
    for (size_t i = 0; i < nd.seg.pixels.size(); ++i) {
      const Point& p = nd.seg.pixels[i];
      double r = nd.seg.radii[i];
      c.ux += p.x;
      c.uy += p.y;
      c.wx += r * p.x;
      c.wy += r * p.y;
      n += 1;
      wsum += r;
    }
  if (n > 0) {
    c.ux /= n;
    c.uy /= n;
  }
  if (wsum > 0) {
    c.wx /= wsum;
    c.wy /= wsum;
  }
  return c;
}

inline std::array<double, 20> position_features(const CenterlineSegment& seg,
                                                const TreeCenter& tc,
                                                int image_w, int image_h) {
  double sux = 0, suy = 0, swx = 0, swy = 0, n = 0, wsum = 0;
  for (size_t i = 0; i < seg.pixels.size(); ++i) {
    sux += seg.pixels[i].x;
    suy += seg.pixels[i].y;
    swx += seg.radii[i] * seg.pixels[i].x;
    swy += seg.radii[i] * seg.pixels[i].y;
    n += 1;
    wsum += seg.radii[i];
  }
  sux /= n;
  suy /= n;
  if (wsum > 0) {
    swx /= wsum;
    swy /= wsum;
  } else {
    swx = sux;
    swy = suy;
  }
  double W = image_w, H = image_h;
  auto nx = [W](double d) { return d / W; };
  auto ny = [H](double d) { return d / H; };
  const Point& a = seg.terminal_a;
  const Point& b = seg.terminal_b;
  return {
      // (a) segment centers vs. tree center: weighted then unweighted
      nx(swx - tc.wx), ny(swy - tc.wy), nx(sux - tc.ux), ny(suy - tc.uy),
      // (b) key points vs. tree center: weighted center then unweighted
      nx(a.x - tc.wx), ny(a.y - tc.wy), nx(b.x - tc.wx), ny(b.y - tc.wy),
      nx(a.x - tc.ux), ny(a.y - tc.uy), nx(b.x - tc.ux), ny(b.y - tc.uy),
      // (c) key points vs. segment center: weighted center then unweighted
      nx(a.x - swx), ny(a.y - swy), nx(b.x - swx), ny(b.y - swy),
      nx(a.x - sux), ny(a.y - suy), nx(b.x - sux), ny(b.y - suy)};
}

// --- topology features (2): degrees of the two terminal key points,
// row-major lower terminal first.
inline std::array<double, 2> topology_features(const GraphNode& node) {
  return {double(node.degree_a), double(node.degree_b)};
}

// Partition mask foreground among segments by nearest centerline pixel
// (ties to the lower node index). Returns per-node pixel lists.
inline std::vector<std::vector<Point>> assign_artery_regions(const IndividualGraph& g,
                                                             const BinaryMask& mask) {
  struct Site {
    Point p;
    int node;
  };
  std::vector<Site> sites;
  for (int i = 0; i < g.n(); ++i)
    for (const Point& p : g.nodes[i].seg.pixels) sites.push_back({p, i});
  std::vector<std::vector<Point>> regions(size_t(g.n()));
  if (sites.empty()) return regions;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      Point q{x, y};
      double best = 1e18;
      int node = 0;
      for (const Site& s : sites) {
        double d = sq_dist(q, s.p);
        if (d < best || (d == best && s.node < node)) {
          best = d;
          node = s.node;
        }
      }
      regions[size_t(node)].push_back(q);
    }
  return regions;
}

// Compute the full 70-dim vector for every node of the graph.
inline void extract_features(IndividualGraph& g, const BinaryMask& mask,
                             const GrayImage& gray, const FeatureSpec& spec) {
  if (mask.width != gray.width || mask.height != gray.height)
    throw Error(ErrorKind::invalid_input, "mask/gray dimension mismatch");
  spec.validate();
  auto regions = assign_artery_regions(g, mask);
  TreeCenter tc = tree_center_of(g);
  for (int i = 0; i < g.n(); ++i) {
    GraphNode& nd = g.nodes[i];
    const auto& region = regions[size_t(i)];
    std::vector<double> intens;
    intens.reserve(region.size());
    for (const Point& p : region) intens.push_back(double(gray.at(p.x, p.y)));
    if (intens.empty())  // region swallowed by a neighbor; fall back to centerline
      for (const Point& p : nd.seg.pixels) intens.push_back(double(gray.at(p.x, p.y)));
    const std::vector<Point>& glcm_region = region.empty() ? nd.seg.pixels : region;

    std::vector<double> fv;
    fv.reserve(kFeatureDim);
    auto push = [&fv](const auto& arr) { fv.insert(fv.end(), arr.begin(), arr.end()); };
    push(basic_pixel_features(nd.seg, glcm_region.size()));
    push(first_order_features(intens, g.pixel_spacing, spec.gray_levels));
    push(glcm_features(glcm_region, intens, spec));
    push(position_features(nd.seg, tc, g.image_width, g.image_height));
    push(topology_features(nd));
    for (double v : fv)
      if (!std::isfinite(v))
        throw Error(ErrorKind::numeric, "non-finite feature value");
    nd.features = std::move(fv);
  }
}

}  // namespace agm
