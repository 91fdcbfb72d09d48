#include <catch2/catch_amalgamated.hpp>

#include "siseg/rng.hpp"
#include "siseg/si_codec.hpp"
#include "support/oracles.hpp"

using namespace siseg;

namespace {

Volume random_volume(std::size_t h, std::size_t w, std::size_t d, std::size_t c, Rng& rng) {
  Volume v(h, w, d, c);
  for (auto& x : v.data) x = static_cast<float>(rng.normal());
  return v;
}

}  // namespace

TEST_CASE("80x80x48x2 with a 6x8 grid gives a 480x640x2 image") {
  Rng rng(1);
  Volume v = random_volume(80, 80, 48, 2, rng);
  SuperImage si = to_super_image(v, {6, 8});
  CHECK(si.height == 480);
  CHECK(si.width == 640);
  CHECK(si.channels == 2);
  Volume back = from_super_image(si, {6, 8}, 80, 80);
  CHECK(back.data == v.data);
  CHECK(back.depth == 48);
}

TEST_CASE("single-slice volume with 1x1 grid is the identity") {
  Rng rng(2);
  Volume v = random_volume(5, 7, 1, 3, rng);
  SuperImage si = to_super_image(v, {1, 1});
  CHECK(si.height == 5);
  CHECK(si.width == 7);
  CHECK(si.data == v.data);
}

TEST_CASE("slices are placed row-major in ascending depth order") {
  Volume v(2, 2, 4, 1);
  for (std::size_t d = 0; d < 4; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) v.at(h, w, d, 0) = static_cast<float>(d);
  SuperImage si = to_super_image(v, {2, 2});
  REQUIRE(si.height == 4);
  REQUIRE(si.width == 4);
  // quadrants read 0,1 / 2,3
  CHECK(si.at(0, 0, 0) == 0.0f);
  CHECK(si.at(1, 1, 0) == 0.0f);
  CHECK(si.at(0, 2, 0) == 1.0f);
  CHECK(si.at(1, 3, 0) == 1.0f);
  CHECK(si.at(2, 0, 0) == 2.0f);
  CHECK(si.at(3, 1, 0) == 2.0f);
  CHECK(si.at(2, 2, 0) == 3.0f);
  CHECK(si.at(3, 3, 0) == 3.0f);

  Volume back = from_super_image(si, {2, 2}, 2, 2);
  for (std::size_t d = 0; d < 4; ++d)
    CHECK(back.at(0, 0, d, 0) == static_cast<float>(d));
}

TEST_CASE("every super-image pixel is written exactly once, per the mapping rule") {
  Rng rng(3);
  Volume v = random_volume(3, 4, 6, 2, rng);
  const GridLayout g{2, 3};
  SuperImage si = to_super_image(v, g);

  std::vector<int> hits(si.size(), 0);
  for (std::size_t c = 0; c < v.channels; ++c)
    for (std::size_t d = 0; d < v.depth; ++d)
      for (std::size_t h = 0; h < v.height; ++h)
        for (std::size_t w = 0; w < v.width; ++w) {
          // mapping recomputed from the placement rule, not the codec
          const std::size_t r = d / g.cols, q = d % g.cols;
          const std::size_t y = r * v.height + h, x = q * v.width + w;
          const std::size_t pix = (c * si.height + y) * si.width + x;
          ++hits[pix];
          CHECK(si.data[pix] == v.at(h, w, d, c));
        }
  CHECK(std::count(hits.begin(), hits.end(), 1) == static_cast<long>(hits.size()));
}

TEST_CASE("roundtrip is bit-exact over fuzzed shapes and layouts") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 1 + rng.uniform_index(12);
    const std::size_t w = 1 + rng.uniform_index(12);
    const std::size_t d = 1 + rng.uniform_index(24);
    const std::size_t c = 1 + rng.uniform_index(3);
    Volume v = random_volume(h, w, d, c, rng);
    const auto layouts = enumerate_layouts(d);
    const GridLayout g = layouts[rng.uniform_index(layouts.size())];
    Volume back = from_super_image(to_super_image(v, g), g, h, w);
    REQUIRE(back.data == v.data);
  }
}

TEST_CASE("layout mismatches are rejected") {
  Rng rng(5);
  Volume v = random_volume(4, 4, 6, 1, rng);
  CHECK_THROWS_AS(to_super_image(v, {2, 2}), LayoutMismatch);
  SuperImage si = to_super_image(v, {2, 3});
  CHECK_THROWS_AS(from_super_image(si, {3, 2}, 4, 4), LayoutMismatch);
  CHECK_THROWS_AS(from_super_image(si, {2, 3}, 5, 4), LayoutMismatch);
}

TEST_CASE("enumerate_layouts lists every factor pair, most square first") {
  const auto l48 = enumerate_layouts(48);
  REQUIRE(l48.size() == 10);
  for (const auto& g : l48) CHECK(g.rows * g.cols == 48);
  // all six rectangular pairs present
  for (const GridLayout want : {GridLayout{6, 8}, {8, 6}, {12, 4}, {4, 12}, {24, 2}, {2, 24}})
    CHECK(std::find(l48.begin(), l48.end(), want) != l48.end());
  CHECK(l48[0] == GridLayout{6, 8});
  CHECK(l48[1] == GridLayout{8, 6});
  CHECK(l48.back() == GridLayout{48, 1});

  const auto l88 = enumerate_layouts(88);
  CHECK(std::find(l88.begin(), l88.end(), GridLayout{11, 8}) != l88.end());

  const auto l7 = enumerate_layouts(7);
  REQUIRE(l7.size() == 2);
  CHECK(l7[0] == GridLayout{1, 7});
  CHECK(l7[1] == GridLayout{7, 1});

  // depth 16: the five factor pairs a sweep would cover
  const auto l16 = enumerate_layouts(16);
  REQUIRE(l16.size() == 5);
  CHECK(l16[0] == GridLayout{4, 4});
  for (const GridLayout want : {GridLayout{2, 8}, {8, 2}, {1, 16}, {16, 1}})
    CHECK(std::find(l16.begin(), l16.end(), want) != l16.end());
}

TEST_CASE("enumerate_layouts has exactly tau(depth) entries") {
  Rng rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t d = 1 + rng.uniform_index(200);
    const auto layouts = enumerate_layouts(d);
    CHECK(layouts.size() == oracle::divisor_count(d));
    for (const auto& g : layouts) CHECK(g.rows * g.cols == d);
  }
}

TEST_CASE("squareness scores aspect ratio") {
  CHECK(squareness({6, 8}, 80, 80) == Catch::Approx(0.75));
  CHECK(squareness({8, 8}, 512, 512) == 1.0);
  CHECK(squareness({24, 2}, 80, 80) == Catch::Approx(160.0 / 1920.0));
  CHECK(squareness({24, 2}, 80, 80) < squareness({8, 6}, 80, 80));
  // symmetric under transposition for square slices
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const std::size_t a = 1 + rng.uniform_index(30), b = 1 + rng.uniform_index(30);
    const std::size_t s = 1 + rng.uniform_index(100);
    CHECK(squareness({a, b}, s, s) == squareness({b, a}, s, s));
  }
}

TEST_CASE("pad_depth appends fill slices and is undone by cropping them off") {
  Rng rng(8);
  Volume v = random_volume(3, 3, 7, 2, rng);

  SECTION("same target is the identity") {
    Volume p = pad_depth(v, 7);
    CHECK(p.data == v.data);
  }
  SECTION("new slices carry the fill value") {
    Volume p = pad_depth(v, 8, 0.0f);
    REQUIRE(p.depth == 8);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t w = 0; w < 3; ++w) CHECK(p.at(h, w, 7, c) == 0.0f);
    // originals untouched
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t d = 0; d < 7; ++d)
        for (std::size_t h = 0; h < 3; ++h)
          for (std::size_t w = 0; w < 3; ++w) CHECK(p.at(h, w, d, c) == v.at(h, w, d, c));
  }
  SECTION("shrinking is refused") {
    CHECK_THROWS_AS(pad_depth(v, 6), BadTarget);
  }
}
