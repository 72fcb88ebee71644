#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "agm/core.hpp"

namespace agm {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> intensities;  // row-major
  double pixel_spacing = 1.0;        // mm per pixel, isotropic

  uint8_t at(int x, int y) const { return intensities[y * width + x]; }
  uint8_t& at(int x, int y) { return intensities[y * width + x]; }

  static GrayImage make(int w, int h, double spacing, uint8_t fill = 0) {
    if (w <= 0 || h <= 0 || spacing <= 0)
      throw Error(ErrorKind::invalid_input, "bad image dimensions/spacing");
    GrayImage img;
    img.width = w;
    img.height = h;
    img.pixel_spacing = spacing;
    img.intensities.assign(size_t(w) * h, fill);
    return img;
  }
};

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> foreground;  // 0/1, row-major

  bool at(int x, int y) const { return foreground[y * width + x] != 0; }
  void set(int x, int y, bool v) { foreground[y * width + x] = v ? 1 : 0; }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }

  static BinaryMask make(int w, int h) {
    if (w <= 0 || h <= 0)
      throw Error(ErrorKind::invalid_input, "bad mask dimensions");
    BinaryMask m;
    m.width = w;
    m.height = h;
    m.foreground.assign(size_t(w) * h, 0);
    return m;
  }
};

// --- PGM (P5, 8-bit) I/O. Masks use {0,255}. ---

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::invalid_input, "cannot write " + path);
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.intensities.data()),
          std::streamsize(img.intensities.size()));
}

inline void write_pgm(const std::string& path, const BinaryMask& mask) {
  GrayImage img = GrayImage::make(mask.width, mask.height, 1.0);
  for (size_t i = 0; i < mask.foreground.size(); ++i)
    img.intensities[i] = mask.foreground[i] ? 255 : 0;
  write_pgm(path, img);
}

inline GrayImage read_pgm(const std::string& path, double spacing = 1.0) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::invalid_input, "cannot read " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw Error(ErrorKind::invalid_input, "not a P5 PGM: " + path);
  auto next_token = [&f, &path]() {
    std::string tok;
    while (f >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(f, rest);
        continue;
      }
      return tok;
    }
    throw Error(ErrorKind::invalid_input, "truncated PGM header: " + path);
  };
  int w = std::stoi(next_token());
  int h = std::stoi(next_token());
  int maxv = std::stoi(next_token());
  if (maxv != 255) throw Error(ErrorKind::invalid_input, "only 8-bit PGM supported");
  f.get();  // single whitespace after header
  GrayImage img = GrayImage::make(w, h, spacing);
  f.read(reinterpret_cast<char*>(img.intensities.data()),
         std::streamsize(img.intensities.size()));
  if (!f) throw Error(ErrorKind::invalid_input, "truncated PGM data: " + path);
  return img;
}

inline BinaryMask read_pgm_mask(const std::string& path) {
  GrayImage img = read_pgm(path);
  BinaryMask m = BinaryMask::make(img.width, img.height);
  for (size_t i = 0; i < img.intensities.size(); ++i)
    m.foreground[i] = img.intensities[i] >= 128 ? 1 : 0;
  return m;
}

// Nearest-neighbor resize for masks, bilinear for grayscale. Spacing is
// rescaled so millimeter thresholds stay meaningful after the resize.
inline BinaryMask resize_nearest(const BinaryMask& m, int w, int h) {
  BinaryMask out = BinaryMask::make(w, h);
  for (int y = 0; y < h; ++y) {
    int sy = std::min(m.height - 1, int((y + 0.5) * m.height / h));
    for (int x = 0; x < w; ++x) {
      int sx = std::min(m.width - 1, int((x + 0.5) * m.width / w));
      out.set(x, y, m.at(sx, sy));
    }
  }
  return out;
}

inline GrayImage resize_bilinear(const GrayImage& img, int w, int h) {
  GrayImage out = GrayImage::make(w, h, img.pixel_spacing * img.width / w);
  for (int y = 0; y < h; ++y) {
    double sy = (y + 0.5) * img.height / h - 0.5;
    int y0 = std::clamp(int(std::floor(sy)), 0, img.height - 1);
    int y1 = std::min(y0 + 1, img.height - 1);
    double fy = sy - std::floor(sy);
    for (int x = 0; x < w; ++x) {
      double sx = (x + 0.5) * img.width / w - 0.5;
      int x0 = std::clamp(int(std::floor(sx)), 0, img.width - 1);
      int x1 = std::min(x0 + 1, img.width - 1);
      double fx = sx - std::floor(sx);
      double v = (1 - fy) * ((1 - fx) * img.at(x0, y0) + fx * img.at(x1, y0)) +
                 fy * ((1 - fx) * img.at(x0, y1) + fx * img.at(x1, y1));
      out.at(x, y) = uint8_t(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

}  // namespace agm
