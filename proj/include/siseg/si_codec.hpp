#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "siseg/error.hpp"
#include "siseg/volume.hpp"

// Bijective rearrangement between volumes and super images. Slices are
// placed in ascending depth order, row-major over the grid: slice d lands
// in cell (d / cols, d % cols). All functions here are pure and safe to
// call concurrently.

namespace siseg {

// Aspect-ratio score of the super image a layout produces from h x w
// slices: min(h*rows, w*cols) / max(h*rows, w*cols). 1.0 iff square.
inline double squareness(const GridLayout& g, std::size_t h, std::size_t w) {
  const double a = static_cast<double>(h * g.rows);
  const double b = static_cast<double>(w * g.cols);
  return std::min(a, b) / std::max(a, b);
}

/// All factor pairs (rows, cols) with rows*cols == depth, sorted by
/// descending squareness of the grid (square slices assumed); ties put
/// rows <= cols first.
inline std::vector<GridLayout> enumerate_layouts(std::size_t depth) {
  std::vector<GridLayout> out;
  for (std::size_t r = 1; r <= depth; ++r)
    if (depth % r == 0) out.push_back({r, depth / r});
  std::sort(out.begin(), out.end(), [](const GridLayout& a, const GridLayout& b) {
    const double sa = squareness(a, 1, 1);
    const double sb = squareness(b, 1, 1);
    if (sa != sb) return sa > sb;
    return a.rows < b.rows;
  });
  return out;
}

/// Tiles the volume's depth slices into a 2D super image of size
/// (H*rows) x (W*cols). Voxel (h, w, d, c) maps to pixel
/// (r*H + h, q*W + w, c) with r = d / cols, q = d % cols.
inline SuperImage to_super_image(const Volume& v, const GridLayout& g) {
  if (g.tiles() != v.depth)
    throw LayoutMismatch("grid " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                         " does not tile depth " + std::to_string(v.depth));
  SuperImage si;
  si.height = v.height * g.rows;
  si.width = v.width * g.cols;
  si.channels = v.channels;
  si.slice_height = v.height;
  si.slice_width = v.width;
  si.grid = g;
  si.data.resize(si.size());

  const std::size_t H = v.height, W = v.width;
  for (std::size_t c = 0; c < v.channels; ++c) {
    float* plane = si.plane(c);
    for (std::size_t d = 0; d < v.depth; ++d) {
      const std::size_t r = d / g.cols;
      const std::size_t q = d % g.cols;
      const float* src = v.slice(c, d);
      float* dst = plane + (r * H) * si.width + q * W;
      for (std::size_t h = 0; h < H; ++h)
        std::memcpy(dst + h * si.width, src + h * W, W * sizeof(float));
    }
  }
  return si;
}

/// Exact inverse of to_super_image for slices of size h x w. The voxel
/// spacing of the source volume is not recoverable from the image and is
/// left at the default.
inline Volume from_super_image(const SuperImage& si, const GridLayout& g,
                               std::size_t h, std::size_t w) {
  if (si.height != h * g.rows || si.width != w * g.cols)
    throw LayoutMismatch("super image " + std::to_string(si.height) + "x" +
                         std::to_string(si.width) + " is not " + std::to_string(h) + "x" +
                         std::to_string(w) + " slices in a " + std::to_string(g.rows) + "x" +
                         std::to_string(g.cols) + " grid");
  Volume v(h, w, g.tiles(), si.channels);
  for (std::size_t c = 0; c < v.channels; ++c) {
    const float* plane = si.plane(c);
    for (std::size_t d = 0; d < v.depth; ++d) {
      const std::size_t r = d / g.cols;
      const std::size_t q = d % g.cols;
      const float* src = plane + (r * h) * si.width + q * w;
      float* dst = v.slice(c, d);
      for (std::size_t y = 0; y < h; ++y)
        std::memcpy(dst + y * w, src + y * si.width, w * sizeof(float));
    }
  }
  return v;
}

/// Appends (target - depth) fill-valued slices at the end of the depth
/// axis; existing slices are unchanged. Used to reach depths with better
/// factorizations.
inline Volume pad_depth(const Volume& v, std::size_t target, float fill = 0.0f) {
  if (target < v.depth)
    throw BadTarget("pad_depth target " + std::to_string(target) + " < depth " +
                    std::to_string(v.depth));
  if (target == v.depth) return v;
  Volume out(v.height, v.width, target, v.channels, fill);
  out.spacing = v.spacing;
  const std::size_t plane = v.height * v.width;
  for (std::size_t c = 0; c < v.channels; ++c)
    std::memcpy(out.slice(c, 0), v.slice(c, 0), plane * v.depth * sizeof(float));
  return out;
}

}  // namespace siseg
