#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "siseg/rng.hpp"
#include "siseg/si_codec.hpp"
#include "siseg/volume_store.hpp"
#include "support/tempdir.hpp"

using namespace siseg;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("a 2x2x2x1 volume is a 68-byte file") {
  TempDir tmp;
  Volume v(2, 2, 2, 1, 1.5f);
  write_volume(v, tmp.file("v.svol"));
  CHECK(fs::file_size(tmp.file("v.svol")) == 68);
}

TEST_CASE("volume persistence roundtrip is bit-exact") {
  TempDir tmp;
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Volume v(1 + rng.uniform_index(9), 1 + rng.uniform_index(9), 1 + rng.uniform_index(9),
             1 + rng.uniform_index(3));
    v.spacing = {static_cast<float>(rng.uniform(0.1, 3.0)),
                 static_cast<float>(rng.uniform(0.1, 3.0)),
                 static_cast<float>(rng.uniform(0.1, 3.0))};
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    const std::string path = tmp.file("round.svol");
    write_volume(v, path);
    Volume r = read_volume(path);
    REQUIRE(r.data == v.data);
    CHECK(r.spacing == v.spacing);
    CHECK(r.same_shape(v));
  }
}

TEST_CASE("malformed volume files are rejected with the specific error") {
  TempDir tmp;
  Volume v(2, 3, 4, 1);
  Rng rng(12);
  for (auto& x : v.data) x = static_cast<float>(rng.normal());
  const std::string good_path = tmp.file("good.svol");
  write_volume(v, good_path);
  const std::string good = read_bytes(good_path);

  SECTION("wrong magic") {
    std::string bad = good;
    bad[0] = 'X';
    bad[1] = 'X';
    bad[2] = 'X';
    bad[3] = 'X';
    write_bytes(tmp.file("bad.svol"), bad);
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), BadMagic);
  }
  SECTION("wrong version") {
    std::string bad = good;
    bad[4] = 2;
    write_bytes(tmp.file("bad.svol"), bad);
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), BadVersion);
  }
  SECTION("payload shorter than dims promise") {
    write_bytes(tmp.file("bad.svol"), good.substr(0, good.size() - 5));
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), TruncatedFile);
  }
  SECTION("trailing bytes contradict dims") {
    write_bytes(tmp.file("bad.svol"), good + "zzzz");
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), TruncatedFile);
  }
  SECTION("file shorter than header") {
    write_bytes(tmp.file("bad.svol"), good.substr(0, 20));
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), TruncatedFile);
  }
  SECTION("zero dimension") {
    std::string bad = good;
    bad[8] = bad[9] = bad[10] = bad[11] = 0;  // H = 0
    write_bytes(tmp.file("bad.svol"), bad);
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), DimOverflow);
  }
  SECTION("dims that overflow any plausible payload") {
    std::string bad = good;
    for (int i = 8; i < 24; ++i) bad[i] = static_cast<char>(0xff);
    write_bytes(tmp.file("bad.svol"), bad);
    CHECK_THROWS_AS(read_volume(tmp.file("bad.svol")), DimOverflow);
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(read_volume(tmp.file("nothere.svol")), IoError);
  }
}

TEST_CASE("manifest roundtrip, duplicate ids, and missing files") {
  TempDir tmp;
  Volume v(2, 2, 2, 1, 0.5f);
  write_volume(v, tmp.file("img0.svol"));
  write_volume(v, tmp.file("msk0.svol"));

  SECTION("roundtrip with relative paths") {
    write_manifest({{"c0", "img0.svol", "msk0.svol"}}, tmp.file("m.json"));
    auto entries = read_manifest(tmp.file("m.json"));
    REQUIRE(entries.size() == 1);
    CHECK(entries[0].id == "c0");
    CHECK(read_volume(entries[0].image_path).data == v.data);
  }
  SECTION("duplicate ids rejected") {
    write_manifest({{"c0", "img0.svol", "msk0.svol"}, {"c0", "img0.svol", "msk0.svol"}},
                   tmp.file("m.json"));
    CHECK_THROWS_AS(read_manifest(tmp.file("m.json")), BadManifest);
  }
  SECTION("missing referenced file rejected") {
    write_manifest({{"c0", "gone.svol", "msk0.svol"}}, tmp.file("m.json"));
    CHECK_THROWS_AS(read_manifest(tmp.file("m.json")), BadManifest);
  }
  SECTION("non-JSON content rejected") {
    write_bytes(tmp.file("m.json"), "not json at all");
    CHECK_THROWS_AS(read_manifest(tmp.file("m.json")), BadManifest);
  }
}

TEST_CASE("PGM export scales to 8 bits") {
  TempDir tmp;

  SECTION("constant image maps to zeros") {
    Volume v(3, 4, 2, 1, 2.5f);
    SuperImage si = to_super_image(v, {1, 2});
    export_pgm(si, 0, tmp.file("c.pgm"));
    const std::string bytes = read_bytes(tmp.file("c.pgm"));
    const std::string body = bytes.substr(bytes.find("255\n") + 4);
    REQUIRE(body.size() == 3 * 8);
    for (char b : body) CHECK(b == 0);
  }
  SECTION("unit range maps v to round(255 v)") {
    Volume v(1, 4, 1, 1);
    v.data = {0.0f, 0.5f, 0.25f, 1.0f};
    SuperImage si = to_super_image(v, {1, 1});
    export_pgm(si, 0, tmp.file("u.pgm"));
    const std::string bytes = read_bytes(tmp.file("u.pgm"));
    const std::string body = bytes.substr(bytes.find("255\n") + 4);
    REQUIRE(body.size() == 4);
    CHECK(static_cast<unsigned char>(body[0]) == 0);
    CHECK(static_cast<unsigned char>(body[1]) == 128);  // round(127.5)
    CHECK(static_cast<unsigned char>(body[2]) == 64);   // round(63.75)
    CHECK(static_cast<unsigned char>(body[3]) == 255);
  }
  SECTION("header is P5, width first") {
    Volume v(80, 80, 48, 2);
    Rng rng(13);
    for (auto& x : v.data) x = static_cast<float>(rng.normal());
    SuperImage si = to_super_image(v, {6, 8});
    export_pgm(si, 1, tmp.file("h.pgm"));
    std::ifstream f(tmp.file("h.pgm"), std::ios::binary);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    CHECK(magic == "P5");
    CHECK(w == 640);
    CHECK(h == 480);
    CHECK(maxval == 255);
  }
  SECTION("channel out of range") {
    Volume v(2, 2, 1, 1);
    SuperImage si = to_super_image(v, {1, 1});
    CHECK_THROWS_AS(export_pgm(si, 1, tmp.file("x.pgm")), BadChannel);
  }
}
