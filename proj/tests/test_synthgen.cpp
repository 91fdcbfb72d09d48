#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "siseg/synthgen.hpp"

using namespace siseg;

TEST_CASE("noise-free phantoms take exactly two values per channel, split by the mask") {
  PhantomSpec spec;
  spec.noise_sigma = 0.0;
  spec.blob_count = {1, 1};
  spec.seed = 5;
  auto cases = generate(spec, 3);
  REQUIRE(cases.size() == 3);
  for (const auto& pc : cases) {
    const std::size_t n = pc.mask.data.size();
    for (std::size_t c = 0; c < 2; ++c) {
      std::set<float> fg, bg;
      for (std::size_t i = 0; i < n; ++i) {
        const float v = pc.image.data[c * n + i];
        (pc.mask.data[i] == 1.0f ? fg : bg).insert(v);
      }
      CHECK(fg.size() == 1);
      CHECK(bg.size() == 1);
      CHECK(*fg.begin() == spec.fg_intensity[c]);
      CHECK(*bg.begin() == spec.bg_intensity[c]);
    }
  }
}

TEST_CASE("generation is bit-identical across runs and independent of n") {
  PhantomSpec spec;
  spec.seed = 42;
  auto a = generate(spec, 4);
  auto b = generate(spec, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].mask.data == b[i].mask.data);
  }
  auto longer = generate(spec, 6);
  for (std::size_t i = 0; i < 4; ++i) CHECK(longer[i].image.data == a[i].image.data);
}

TEST_CASE("masks equal the closed-form ellipsoid membership indicator") {
  PhantomSpec spec;
  spec.seed = 7;
  auto cases = generate(spec, 5);
  for (const auto& pc : cases) {
    for (std::size_t d = 0; d < pc.mask.depth; ++d)
      for (std::size_t h = 0; h < pc.mask.height; ++h)
        for (std::size_t w = 0; w < pc.mask.width; ++w) {
          bool in = false;
          for (const auto& e : pc.blobs) {
            const double qh = (h - e.center[0]) / e.radii[0];
            const double qw = (w - e.center[1]) / e.radii[1];
            const double qd = (d - e.center[2]) / e.radii[2];
            if (qh * qh + qw * qw + qd * qd <= 1.0) in = true;
          }
          REQUIRE(pc.mask.at(h, w, d, 0) == (in ? 1.0f : 0.0f));
        }
  }
}

TEST_CASE("mask is binary and images are finite") {
  PhantomSpec spec;
  spec.seed = 9;
  spec.noise_sigma = 0.5;
  for (const auto& pc : generate(spec, 10)) {
    for (float m : pc.mask.data) CHECK((m == 0.0f || m == 1.0f));
    for (float v : pc.image.data) CHECK(std::isfinite(v));
  }
}

TEST_CASE("default spec foreground fraction stays in the calibrated band") {
  double total = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    PhantomSpec spec;
    spec.seed = seed;
    auto cases = generate(spec, 1);
    std::size_t fg = 0;
    for (float m : cases[0].mask.data)
      if (m == 1.0f) ++fg;
    total += static_cast<double>(fg) / cases[0].mask.data.size();
    ++count;
  }
  const double mean_fraction = total / count;
  CHECK(mean_fraction >= 0.02);
  CHECK(mean_fraction <= 0.30);
}

TEST_CASE("infeasible specs are rejected") {
  SECTION("radius cannot fit") {
    PhantomSpec spec;
    spec.shape = {4, 4, 4};
    spec.radius_range = {3.0, 6.0};
    CHECK_THROWS_AS(generate(spec, 1), InfeasibleSpec);
  }
  SECTION("empty blob range") {
    PhantomSpec spec;
    spec.blob_count = {3, 1};
    CHECK_THROWS_AS(generate(spec, 1), InfeasibleSpec);
  }
  SECTION("negative noise") {
    PhantomSpec spec;
    spec.noise_sigma = -0.1;
    CHECK_THROWS_AS(generate(spec, 1), InfeasibleSpec);
  }
}
