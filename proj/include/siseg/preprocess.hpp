#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "siseg/error.hpp"
#include "siseg/rng.hpp"
#include "siseg/volume.hpp"

// Volume preprocessing: intensity normalization, resampling to a target
// voxel spacing, cropping, symmetric depth clipping, binarization, and a
// light flip/gamma augmentation. Everything is a pure function of its
// inputs (augment takes an explicit seed), so concurrent use is safe.

namespace siseg {

/// Per-channel z-score normalization: subtract the channel mean, divide by
/// the channel's population standard deviation. A constant channel becomes
/// all zeros.
inline Volume znormalize(const Volume& v) {
  Volume out = v;
  const std::size_t n = v.height * v.width * v.depth;
  for (std::size_t c = 0; c < v.channels; ++c) {
    float* ch = out.data.data() + c * n;
    float lo = ch[0], hi = ch[0];
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, ch[i]);
      hi = std::max(hi, ch[i]);
      sum += ch[i];
    }
    if (lo == hi) {
      std::fill(ch, ch + n, 0.0f);
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = ch[i] - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
      ch[i] = static_cast<float>((ch[i] - mean) / sd);
  }
  return out;
}

/// Symmetric depth clipping: keeps `target` central slices starting at
/// (D - target) / 2. When the number of dropped slices is odd, the extra
/// slice is dropped from the end.
inline Volume clip_depth(const Volume& v, std::size_t target) {
  if (target > v.depth)
    throw BadTarget("clip_depth target " + std::to_string(target) + " > depth " +
                    std::to_string(v.depth));
  if (target == v.depth) return v;
  const std::size_t first = (v.depth - target) / 2;
  Volume out(v.height, v.width, target, v.channels);
  out.spacing = v.spacing;
  const std::size_t plane = v.height * v.width;
  for (std::size_t c = 0; c < v.channels; ++c)
    std::memcpy(out.slice(c, 0), v.slice(c, first), plane * target * sizeof(float));
  return out;
}

/// Axis-aligned sub-volume selection. Origin and extent are voxel indices
/// and counts along (h, w, d); all channels are kept.
struct CropBox {
  std::array<std::size_t, 3> origin{0, 0, 0};  // (h, w, d)
  std::array<std::size_t, 3> extent{0, 0, 0};
};

inline Volume crop(const Volume& v, const CropBox& box) {
  const std::size_t dims[3] = {v.height, v.width, v.depth};
  for (int a = 0; a < 3; ++a) {
    if (box.extent[a] < 1 || box.origin[a] + box.extent[a] > dims[a])
      throw OutOfBounds("crop box exceeds volume bounds on axis " + std::to_string(a));
  }
  Volume out(box.extent[0], box.extent[1], box.extent[2], v.channels);
  out.spacing = v.spacing;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t d = 0; d < out.depth; ++d) {
      const float* src = v.slice(c, box.origin[2] + d);
      float* dst = out.slice(c, d);
      for (std::size_t h = 0; h < out.height; ++h)
        std::memcpy(dst + h * out.width,
                    src + (box.origin[0] + h) * v.width + box.origin[1],
                    out.width * sizeof(float));
    }
  return out;
}

enum class Interp { trilinear, nearest };

namespace detail {

// Continuous source coordinate of output sample oi under voxel-center
// alignment, clamped to the valid index range.
inline double source_coord(std::size_t oi, double in_spacing, double out_spacing,
                           std::size_t in_dim) {
  double x = (static_cast<double>(oi) + 0.5) * out_spacing / in_spacing - 0.5;
  if (x < 0.0) x = 0.0;
  const double max_x = static_cast<double>(in_dim - 1);
  if (x > max_x) x = max_x;
  return x;
}

}  // namespace detail

/// Resamples to the requested voxel spacing. Output extent per axis is
/// round(in_dim * in_spacing / out_spacing), at least 1. Samples are taken
/// at voxel centers with edge clamping; use trilinear for images and
/// nearest for masks (nearest never invents new values).
inline Volume resample(const Volume& v, std::array<float, 3> out_spacing, Interp mode) {
  for (float s : out_spacing)
    if (!(s > 0.0f)) throw BadShape("resample spacing must be > 0");

  const std::size_t in_dims[3] = {v.height, v.width, v.depth};
  std::size_t out_dims[3];
  for (int a = 0; a < 3; ++a) {
    const double ratio = static_cast<double>(v.spacing[a]) / out_spacing[a];
    out_dims[a] = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(in_dims[a] * ratio)));
  }

  Volume out(out_dims[0], out_dims[1], out_dims[2], v.channels);
  out.spacing = out_spacing;

  // Precompute per-axis source coordinates.
  std::vector<double> src[3];
  for (int a = 0; a < 3; ++a) {
    src[a].resize(out_dims[a]);
    for (std::size_t i = 0; i < out_dims[a]; ++i)
      src[a][i] = detail::source_coord(i, v.spacing[a], out_spacing[a], in_dims[a]);
  }

  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t d = 0; d < out.depth; ++d)
      for (std::size_t h = 0; h < out.height; ++h)
        for (std::size_t w = 0; w < out.width; ++w) {
          const double xh = src[0][h], xw = src[1][w], xd = src[2][d];
          if (mode == Interp::nearest) {
            const std::size_t ih = static_cast<std::size_t>(std::llround(xh));
            const std::size_t iw = static_cast<std::size_t>(std::llround(xw));
            const std::size_t id = static_cast<std::size_t>(std::llround(xd));
            out.at(h, w, d, c) = v.at(ih, iw, id, c);
            continue;
          }
          const std::size_t h0 = static_cast<std::size_t>(xh);
          const std::size_t w0 = static_cast<std::size_t>(xw);
          const std::size_t d0 = static_cast<std::size_t>(xd);
          const std::size_t h1 = std::min(h0 + 1, v.height - 1);
          const std::size_t w1 = std::min(w0 + 1, v.width - 1);
          const std::size_t d1 = std::min(d0 + 1, v.depth - 1);
          const double fh = xh - h0, fw = xw - w0, fd = xd - d0;
          double acc = 0.0;
          for (int bh = 0; bh < 2; ++bh)
            for (int bw = 0; bw < 2; ++bw)
              for (int bd = 0; bd < 2; ++bd) {
                const double wgt = (bh ? fh : 1.0 - fh) * (bw ? fw : 1.0 - fw) *
                                   (bd ? fd : 1.0 - fd);
                if (wgt == 0.0) continue;
                acc += wgt * v.at(bh ? h1 : h0, bw ? w1 : w0, bd ? d1 : d0, c);
              }
          out.at(h, w, d, c) = static_cast<float>(acc);
        }
  return out;
}

/// Thresholds to a binary mask: value >= threshold maps to 1, else 0.
inline Volume binarize(const Volume& v, float threshold = 0.5f) {
  Volume out = v;
  for (float& x : out.data) x = x >= threshold ? 1.0f : 0.0f;
  return out;
}

/// Mirrors the volume along any subset of its spatial axes.
inline Volume flip(const Volume& v, bool flip_h, bool flip_w, bool flip_d) {
  Volume out = v;
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t d = 0; d < v.depth; ++d) {
      const float* src = v.slice(c, flip_d ? v.depth - 1 - d : d);
      float* dst = out.slice(c, d);
      for (std::size_t h = 0; h < v.height; ++h) {
        const float* srow = src + (flip_h ? v.height - 1 - h : h) * v.width;
        float* drow = dst + h * v.width;
        if (flip_w) {
          for (std::size_t w = 0; w < v.width; ++w) drow[w] = srow[v.width - 1 - w];
        } else {
          std::memcpy(drow, srow, v.width * sizeof(float));
        }
      }
    }
  return out;
}

/// Per-channel gamma adjustment. The channel is shifted to a nonnegative
/// range first (by its minimum, when negative), raised to `gamma`, then
/// shifted back, so z-normalized inputs are handled. gamma == 1 is the
/// identity.
inline Volume gamma_adjust(const Volume& v, double gamma) {
  Volume out = v;
  const std::size_t n = v.height * v.width * v.depth;
  for (std::size_t c = 0; c < v.channels; ++c) {
    float* ch = out.data.data() + c * n;
    float lo = ch[0];
    for (std::size_t i = 1; i < n; ++i) lo = std::min(lo, ch[i]);
    const double shift = lo < 0.0f ? static_cast<double>(lo) : 0.0;
    for (std::size_t i = 0; i < n; ++i)
      ch[i] = static_cast<float>(std::pow(static_cast<double>(ch[i]) - shift, gamma) + shift);
  }
  return out;
}

/// Seeded training-time augmentation: each spatial axis is flipped with
/// p = 0.5 (identically on image and mask), then a random gamma drawn from
/// U[0.7, 1.5] is applied to the image only. Same seed, same output.
inline std::pair<Volume, Volume> augment(const Volume& img, const Volume& mask,
                                         std::uint64_t seed) {
  if (img.height != mask.height || img.width != mask.width || img.depth != mask.depth)
    throw DimMismatch("augment: image " + img.shape_string() + " vs mask " +
                      mask.shape_string());
  Rng rng(seed);
  const bool fh = rng.bernoulli(0.5);
  const bool fw = rng.bernoulli(0.5);
  const bool fd = rng.bernoulli(0.5);
  const double gamma = rng.uniform(0.7, 1.5);
  Volume a = flip(img, fh, fw, fd);
  Volume b = flip(mask, fh, fw, fd);
  return {gamma_adjust(a, gamma), std::move(b)};
}

}  // namespace siseg
