#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "siseg/error.hpp"

namespace siseg {

/// A 4D voxel array of float samples stored in canonical (c, d, h, w) order:
///
///   index(h, w, d, c) = c*D*H*W + d*H*W + h*W + w
///
/// The order is slice-planar: one (channel, slice) plane is a contiguous
/// H*W block, so slice extraction and tiling are plain block copies.
struct Volume {
  std::size_t height = 0;    // H, voxels
  std::size_t width = 0;     // W, voxels
  std::size_t depth = 0;     // D, slices
  std::size_t channels = 0;  // C
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};  // mm per step along (h, w, d)
  std::vector<float> data;

  Volume() = default;

  Volume(std::size_t h, std::size_t w, std::size_t d, std::size_t c, float fill = 0.0f)
      : height(h), width(w), depth(d), channels(c), data(h * w * d * c, fill) {
    if (h < 1 || w < 1 || d < 1 || c < 1)
      throw BadShape("Volume dimensions must all be >= 1");
  }

  std::size_t size() const { return height * width * depth * channels; }

  std::size_t index(std::size_t h, std::size_t w, std::size_t d, std::size_t c) const {
    return ((c * depth + d) * height + h) * width + w;
  }

  float& at(std::size_t h, std::size_t w, std::size_t d, std::size_t c) {
    return data[index(h, w, d, c)];
  }
  float at(std::size_t h, std::size_t w, std::size_t d, std::size_t c) const {
    return data[index(h, w, d, c)];
  }

  // Contiguous H*W plane for one (channel, slice) pair.
  float* slice(std::size_t c, std::size_t d) {
    return data.data() + (c * depth + d) * height * width;
  }
  const float* slice(std::size_t c, std::size_t d) const {
    return data.data() + (c * depth + d) * height * width;
  }

  bool same_shape(const Volume& o) const {
    return height == o.height && width == o.width && depth == o.depth &&
           channels == o.channels;
  }

  std::string shape_string() const {
    return std::to_string(height) + "x" + std::to_string(width) + "x" +
           std::to_string(depth) + "x" + std::to_string(channels);
  }
};

/// Tiling grid for super-image construction: `rows` tile rows by `cols`
/// tile columns. A layout is valid for a volume when rows*cols == depth.
struct GridLayout {
  std::size_t rows = 1;  // tile rows; "sh" on the CLI and in result tables
  std::size_t cols = 1;  // tile cols; "sw" on the CLI and in result tables

  std::size_t tiles() const { return rows * cols; }
  bool operator==(const GridLayout&) const = default;
};

/// A 2D multi-channel image holding a volume's slices tiled into a grid,
/// stored in (c, y, x) order. Carries the slice dimensions and grid used
/// to create it so the rearrangement can always be inverted.
struct SuperImage {
  std::size_t height = 0;    // pixels, = slice_height * grid.rows
  std::size_t width = 0;     // pixels, = slice_width * grid.cols
  std::size_t channels = 0;
  std::size_t slice_height = 0;  // provenance: H of the source volume
  std::size_t slice_width = 0;   // provenance: W of the source volume
  GridLayout grid;               // provenance: tiling used
  std::vector<float> data;

  std::size_t size() const { return height * width * channels; }

  std::size_t index(std::size_t y, std::size_t x, std::size_t c) const {
    return (c * height + y) * width + x;
  }

  float& at(std::size_t y, std::size_t x, std::size_t c) { return data[index(y, x, c)]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return data[index(y, x, c)]; }

  float* plane(std::size_t c) { return data.data() + c * height * width; }
  const float* plane(std::size_t c) const { return data.data() + c * height * width; }
};

}  // namespace siseg
