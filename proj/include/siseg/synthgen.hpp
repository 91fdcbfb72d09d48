#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "siseg/error.hpp"
#include "siseg/rng.hpp"
#include "siseg/volume.hpp"

// Deterministic synthetic phantom generator: two-channel volumes whose
// foreground is a union of random ellipsoids, with per-channel intensity
// means and Gaussian noise. Case i depends only on (spec, i), so datasets
// are reproducible and independent of how many cases are requested.

namespace siseg {

struct PhantomSpec {
  std::array<std::size_t, 3> shape{32, 32, 16};      // H, W, D
  std::array<std::size_t, 2> blob_count{1, 3};       // inclusive range
  std::array<double, 2> radius_range{3.0, 6.0};      // per-axis, voxels
  std::array<float, 2> fg_intensity{1.0f, 1.5f};     // per channel
  std::array<float, 2> bg_intensity{0.0f, 0.1f};     // per channel
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct Ellipsoid {
  std::array<double, 3> center{};  // (h, w, d)
  std::array<double, 3> radii{};

  bool contains(double h, double w, double d) const {
    const double a = (h - center[0]) / radii[0];
    const double b = (w - center[1]) / radii[1];
    const double c = (d - center[2]) / radii[2];
    return a * a + b * b + c * c <= 1.0;
  }
};

struct PhantomCase {
  Volume image;                 // 2 channels
  Volume mask;                  // 1 channel, values in {0, 1}
  std::vector<Ellipsoid> blobs;  // ground-truth geometry
};

namespace detail {

inline void validate_spec(const PhantomSpec& spec) {
  if (spec.blob_count[0] < 1 || spec.blob_count[0] > spec.blob_count[1])
    throw InfeasibleSpec("blob count range is empty or below 1");
  if (spec.radius_range[0] < 1.0 || spec.radius_range[0] > spec.radius_range[1])
    throw InfeasibleSpec("radius range is empty or below 1 voxel");
  if (spec.noise_sigma < 0.0) throw InfeasibleSpec("noise_sigma must be >= 0");
  for (int a = 0; a < 3; ++a) {
    const double half = (static_cast<double>(spec.shape[a]) - 1.0) / 2.0;
    if (spec.radius_range[0] > half)
      throw InfeasibleSpec("minimum radius does not fit along axis " + std::to_string(a));
  }
}

}  // namespace detail

inline std::vector<PhantomCase> generate(const PhantomSpec& spec, std::size_t n) {
  detail::validate_spec(spec);
  const std::size_t H = spec.shape[0], W = spec.shape[1], D = spec.shape[2];

  std::vector<PhantomCase> cases;
  cases.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng({spec.seed, i});

    const std::size_t nb =
        spec.blob_count[0] +
        rng.uniform_index(spec.blob_count[1] - spec.blob_count[0] + 1);
    std::vector<Ellipsoid> blobs(nb);
    for (auto& e : blobs) {
      for (int a = 0; a < 3; ++a) {
        const double half = (static_cast<double>(spec.shape[a]) - 1.0) / 2.0;
        const double hi = std::min(spec.radius_range[1], half);
        e.radii[a] = rng.uniform(spec.radius_range[0], hi);
      }
      for (int a = 0; a < 3; ++a) {
        const double max_c = static_cast<double>(spec.shape[a]) - 1.0 - e.radii[a];
        e.center[a] = rng.uniform(e.radii[a], max_c);
      }
    }

    PhantomCase pc;
    pc.blobs = blobs;
    pc.mask = Volume(H, W, D, 1);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) {
          bool in = false;
          for (const auto& e : blobs)
            if (e.contains(static_cast<double>(h), static_cast<double>(w),
                           static_cast<double>(d))) {
              in = true;
              break;
            }
          pc.mask.at(h, w, d, 0) = in ? 1.0f : 0.0f;
        }

    pc.image = Volume(H, W, D, 2);
    // Noise draw order is pinned to canonical (c, d, h, w) order.
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w) {
            const float base = pc.mask.at(h, w, d, 0) > 0.0f ? spec.fg_intensity[c]
                                                             : spec.bg_intensity[c];
            const double noise =
                spec.noise_sigma > 0.0 ? spec.noise_sigma * rng.normal() : 0.0;
            pc.image.at(h, w, d, c) = base + static_cast<float>(noise);
          }
    cases.push_back(std::move(pc));
  }
  return cases;
}

}  // namespace siseg
