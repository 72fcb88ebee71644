#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <vector>

#include "agm/core.hpp"
#include "agm/image.hpp"

namespace agm {

struct Skeleton {
  int width = 0;
  int height = 0;
  std::vector<Point> points;         // row-major sorted
  std::vector<double> radius;        // per point, aligned with points
  std::vector<uint8_t> grid;         // 0/1 occupancy, row-major

  bool at(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height && grid[y * width + x];
  }
  int neighbor_count(const Point& p) const {
    int c = 0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if ((dx || dy) && at(p.x + dx, p.y + dy)) ++c;
    return c;
  }
  std::vector<Point> neighbors(const Point& p) const {
    std::vector<Point> out;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx)
        if ((dx || dy) && at(p.x + dx, p.y + dy))
          out.push_back({p.x + dx, p.y + dy});
    std::sort(out.begin(), out.end(), row_major_less);
    return out;
  }
  int index_of(const Point& p) const {
    auto it = std::lower_bound(points.begin(), points.end(), p,
                               [](const Point& a, const Point& b) { return row_major_less(a, b); });
    if (it == points.end() || !(*it == p))
      throw Error(ErrorKind::structural, "point not in skeleton");
    return int(it - points.begin());
  }
};

namespace detail {

// Zhang-Suen neighborhood: P2..P9 clockwise starting north.
inline std::array<int, 8> zs_ring(const std::vector<uint8_t>& g, int w, int h, int x, int y) {
  auto v = [&](int xx, int yy) -> int {
    return (xx >= 0 && xx < w && yy >= 0 && yy < h) ? g[yy * w + xx] : 0;
  };
  return {v(x, y - 1), v(x + 1, y - 1), v(x + 1, y), v(x + 1, y + 1),
          v(x, y + 1), v(x - 1, y + 1), v(x - 1, y), v(x - 1, y - 1)};
}

inline int zs_transitions(const std::array<int, 8>& p) {
  int a = 0;
  for (int i = 0; i < 8; ++i)
    if (p[i] == 0 && p[(i + 1) % 8] == 1) ++a;
  return a;
}

inline bool zs_subpass(std::vector<uint8_t>& g, int w, int h, bool second) {
  std::vector<std::pair<int, int>> del;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!g[y * w + x]) continue;
      auto p = zs_ring(g, w, h, x, y);
      int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
      if (b < 2 || b > 6) continue;
      if (zs_transitions(p) != 1) continue;
      // p[0]=N, p[2]=E, p[4]=S, p[6]=W
      if (!second) {
        if (p[0] * p[2] * p[4] != 0) continue;
        if (p[2] * p[4] * p[6] != 0) continue;
      } else {
        if (p[0] * p[2] * p[6] != 0) continue;
        if (p[0] * p[4] * p[6] != 0) continue;
      }
      del.emplace_back(x, y);
    }
  for (auto [x, y] : del) g[y * w + x] = 0;
  return !del.empty();
}

// A pixel may be removed from a 2x2 skeleton block when it is 8-simple:
// its foreground ring stays one connected piece without it.
inline bool ring_connected_without(const std::array<int, 8>& p) {
  int cnt = 0;
  for (int v : p) cnt += v;
  if (cnt == 0) return false;
  // Adjacency inside the 3x3 ring: consecutive positions are adjacent;
  // diagonal ring cells are adjacent only to their orthogonal neighbors.
  static const int dx[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  static const int dy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  int start = -1;
  for (int i = 0; i < 8; ++i)
    if (p[i]) { start = i; break; }
  std::array<bool, 8> seen{};
  std::vector<int> stack{start};
  seen[start] = true;
  int reached = 0;
  while (!stack.empty()) {
    int i = stack.back();
    stack.pop_back();
    ++reached;
    for (int j = 0; j < 8; ++j) {
      if (seen[j] || !p[j]) continue;
      int ddx = std::abs(dx[i] - dx[j]), ddy = std::abs(dy[i] - dy[j]);
      if (ddx <= 1 && ddy <= 1) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  return reached == cnt;
}

// Sequential removal of 8-simple pixels (endpoints and junction pixels are
// never 8-simple with b >= 2 unless they are redundant). Cleans the 2-px
// staircases and block remnants the two-subpass thinning leaves behind.
inline bool thick_block_cleanup(std::vector<uint8_t>& g, int w, int h) {
  bool changed = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!g[y * w + x]) continue;
      auto p = zs_ring(g, w, h, x, y);
      int b = p[0] + p[1] + p[2] + p[3] + p[4] + p[5] + p[6] + p[7];
      if (b >= 2 && ring_connected_without(p)) {
        g[y * w + x] = 0;
        changed = true;
      }
    }
  return changed;
}

}  // namespace detail

// Connectivity-preserving iterative thinning (two-subcycle pass plus a
// 2x2-block cleanup, run to a joint fixpoint). Deterministic.
inline Skeleton skeletonize(const BinaryMask& mask) {
  std::vector<uint8_t> g = mask.foreground;
  int w = mask.width, h = mask.height;
  bool changed = true;
  while (changed) {
    changed = false;
    // Thin to a fixpoint before any block cleanup; removing block pixels
    // from a still-thick region strands patterns the subpasses cannot fix.
    while (true) {
      bool a = detail::zs_subpass(g, w, h, false);
      bool b = detail::zs_subpass(g, w, h, true);
      if (!a && !b) break;
      changed = true;
    }
    changed |= detail::thick_block_cleanup(g, w, h);
  }
  Skeleton s;
  s.width = w;
  s.height = h;
  s.grid = std::move(g);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (s.grid[y * w + x]) s.points.push_back({x, y});
  s.radius.assign(s.points.size(), 0.0);
  return s;
}

// Exact squared Euclidean distance transform to the nearest background
// pixel center (Felzenszwalb-Huttenlocher, separable).
inline std::vector<double> squared_edt(const BinaryMask& mask) {
  const double INF = 1e18;
  int w = mask.width, h = mask.height;
  std::vector<double> f(size_t(w) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      f[y * w + x] = mask.at(x, y) ? INF : 0.0;

  auto dt1d = [&INF](std::vector<double>& src, std::vector<double>& dst, int n) {
    std::vector<int> v(n);
    std::vector<double> z(n + 1);
    int k = 0;
    v[0] = 0;
    z[0] = -INF;
    z[1] = INF;
    for (int q = 1; q < n; ++q) {
      double s;
      while (true) {
        int p = v[k];
        s = ((src[q] + q * q) - (src[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
        if (s > z[k]) break;
        --k;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = INF;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
      while (z[k + 1] < q) ++k;
      double d = q - double(v[k]);
      dst[q] = d * d + src[v[k]];
    }
  };

  std::vector<double> col(h), colo(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) col[y] = f[y * w + x];
    dt1d(col, colo, h);
    for (int y = 0; y < h; ++y) f[y * w + x] = colo[y];
  }
  std::vector<double> row(w), rowo(w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[x] = f[y * w + x];
    dt1d(row, rowo, w);
    for (int x = 0; x < w; ++x) f[y * w + x] = rowo[x];
  }
  return f;
}

// radius(p) = Euclidean distance from p to the nearest background pixel
// center; diameter(p) = 2*radius(p).
inline Skeleton compute_radii(const BinaryMask& mask, Skeleton skeleton) {
  if (mask.width != skeleton.width || mask.height != skeleton.height)
    throw Error(ErrorKind::structural, "mask/skeleton dimension mismatch");
  for (const Point& p : skeleton.points)
    if (!mask.at(p.x, p.y))
      throw Error(ErrorKind::structural, "skeleton point outside mask foreground");
  auto d2 = squared_edt(mask);
  for (size_t i = 0; i < skeleton.points.size(); ++i) {
    const Point& p = skeleton.points[i];
    double v = d2[size_t(p.y) * mask.width + p.x];
    if (v >= 1e17)
      throw Error(ErrorKind::structural, "no background pixel in mask");
    skeleton.radius[i] = std::sqrt(v);
  }
  return skeleton;
}

struct KeyPointSet {
  std::vector<Point> bifurcations;  // neighbor count >= 3
  std::vector<Point> endpoints;     // neighbor count == 1
};

inline KeyPointSet detect_keypoints(const Skeleton& s) {
  KeyPointSet kps;
  for (const Point& p : s.points) {
    int n = s.neighbor_count(p);
    if (n == 1)
      kps.endpoints.push_back(p);
    else if (n >= 3)
      kps.bifurcations.push_back(p);
  }
  return kps;
}

struct CenterlineSegment {
  std::vector<Point> pixels;   // ordered, consecutive 8-adjacent, incl. terminals
  std::vector<double> radii;   // aligned with pixels
  Point terminal_a;            // row-major lower terminal key point
  Point terminal_b;
  bool is_cycle = false;       // component not attached to exactly 2 key points

  double max_diameter_px() const {
    double m = 0;
    for (double r : radii) m = std::max(m, 2 * r);
    return m;
  }
  double mean_diameter_px() const {
    if (radii.empty()) return 0;
    double s = 0;
    for (double r : radii) s += 2 * r;
    return s / double(radii.size());
  }
  double centerline_length() const {
    double len = 0;
    for (size_t i = 1; i < pixels.size(); ++i) {
      int dx = std::abs(pixels[i].x - pixels[i - 1].x);
      int dy = std::abs(pixels[i].y - pixels[i - 1].y);
      len += (dx && dy) ? std::numbers::sqrt2 : 1.0;
    }
    return len;
  }
};

namespace detail {

inline void orient_segment(CenterlineSegment& seg) {
  if (row_major_less(seg.pixels.back(), seg.pixels.front())) {
    std::reverse(seg.pixels.begin(), seg.pixels.end());
    std::reverse(seg.radii.begin(), seg.radii.end());
  }
  seg.terminal_a = seg.pixels.front();
  seg.terminal_b = seg.pixels.back();
}

}  // namespace detail

// Removing key points splits the skeleton into branches; each branch plus
// its attached key points becomes one segment. Walk-based so that pixel
// order is well defined. Components attached to != 2 key points (isolated
// loops, isolated pixels) are flagged rather than rejected.
inline std::vector<CenterlineSegment> split_segments(const Skeleton& s,
                                                     const KeyPointSet& kps) {
  std::set<Point> keypoints;
  for (const Point& p : kps.bifurcations) keypoints.insert(p);
  for (const Point& p : kps.endpoints) keypoints.insert(p);

  std::vector<uint8_t> consumed(size_t(s.width) * s.height, 0);
  auto is_consumed = [&](const Point& p) { return consumed[size_t(p.y) * s.width + p.x] != 0; };
  auto consume = [&](const Point& p) { consumed[size_t(p.y) * s.width + p.x] = 1; };
  auto rad = [&](const Point& p) { return s.radius[s.index_of(p)]; };

  std::vector<CenterlineSegment> segments;
  std::set<std::pair<Point, Point>> direct_pairs;

  std::vector<Point> kp_sorted(keypoints.begin(), keypoints.end());
  std::sort(kp_sorted.begin(), kp_sorted.end(), row_major_less);

  for (const Point& k : kp_sorted) {
    for (const Point& n : s.neighbors(k)) {
      if (keypoints.count(n)) {
        Point a = k, b = n;
        if (row_major_less(b, a)) std::swap(a, b);
        if (!direct_pairs.insert({a, b}).second) continue;
        CenterlineSegment seg;
        seg.pixels = {a, b};
        seg.radii = {rad(a), rad(b)};
        detail::orient_segment(seg);
        segments.push_back(std::move(seg));
        continue;
      }
      if (is_consumed(n)) continue;
      CenterlineSegment seg;
      seg.pixels = {k, n};
      consume(n);
      Point prev = k, cur = n;
      while (true) {
        Point next{-1, -1};
        bool found = false, ended = false;
        for (const Point& q : s.neighbors(cur)) {
          if (q == prev) continue;
          if (keypoints.count(q)) {
            next = q;
            ended = true;
            found = true;
            break;
          }
          if (!is_consumed(q)) {
            next = q;
            found = true;
            break;
          }
        }
        if (!found) break;  // dead end without a key point (degenerate)
        seg.pixels.push_back(next);
        if (ended) break;
        consume(next);
        prev = cur;
        cur = next;
      }
      seg.radii.reserve(seg.pixels.size());
      seg.radii.clear();
      for (const Point& p : seg.pixels) seg.radii.push_back(rad(p));
      detail::orient_segment(seg);
      segments.push_back(std::move(seg));
    }
    consume(k);
  }

  // Remaining unconsumed pixels: isolated loops or isolated points.
  for (const Point& start : s.points) {
    if (is_consumed(start)) continue;
    CenterlineSegment seg;
    seg.is_cycle = true;
    seg.pixels = {start};
    consume(start);
    Point prev = start, cur = start;
    while (true) {
      Point next{-1, -1};
      bool found = false;
      for (const Point& q : s.neighbors(cur)) {
        if (q == prev) continue;
        if (!is_consumed(q)) {
          next = q;
          found = true;
          break;
        }
      }
      if (!found) break;
      seg.pixels.push_back(next);
      consume(next);
      prev = cur;
      cur = next;
    }
    for (const Point& p : seg.pixels) seg.radii.push_back(rad(p));
    seg.terminal_a = seg.pixels.front();
    seg.terminal_b = seg.pixels.front();
    segments.push_back(std::move(seg));
  }
  return segments;
}

inline int count_components_8(const std::vector<uint8_t>& grid, int w, int h) {
  std::vector<uint8_t> seen(grid.size(), 0);
  int comps = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      size_t i = size_t(y) * w + x;
      if (!grid[i] || seen[i]) continue;
      ++comps;
      std::vector<Point> stack{{x, y}};
      seen[i] = 1;
      while (!stack.empty()) {
        Point p = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = p.x + dx, ny = p.y + dy;
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            size_t j = size_t(ny) * w + nx;
            if (grid[j] && !seen[j]) {
              seen[j] = 1;
              stack.push_back({nx, ny});
            }
          }
      }
    }
  return comps;
}

}  // namespace agm
