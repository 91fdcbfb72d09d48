#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "siseg/error.hpp"
#include "siseg/volume.hpp"

// Bit-exact binary persistence for volumes, dataset manifests, and PGM
// export for eyeballing super images.
//
// SVOL layout, all little-endian:
//   bytes  0..3   magic "SVOL"
//   bytes  4..7   version u32 (= 1)
//   bytes  8..23  dims 4 x u32: H, W, D, C
//   bytes 24..35  spacing 3 x float32 (mm per h/w/d step)
//   bytes 36..    payload H*W*D*C float32 in canonical (c, d, h, w) order
//
// Concurrent reads of one file are safe; concurrent writes to one path are
// the caller's problem.

namespace siseg {

namespace detail {

inline constexpr char kSvolMagic[4] = {'S', 'V', 'O', 'L'};
inline constexpr std::uint32_t kSvolVersion = 1;
inline constexpr std::size_t kSvolHeaderBytes = 36;

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline float get_f32(const unsigned char* p) {
  std::uint32_t u = get_u32(p);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void put_f32(std::string& buf, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(buf, u);
}

}  // namespace detail

inline void write_volume(const Volume& v, const std::string& path) {
  if (v.height > UINT32_MAX || v.width > UINT32_MAX || v.depth > UINT32_MAX ||
      v.channels > UINT32_MAX)
    throw DimOverflow("volume dimensions exceed the u32 header fields");

  std::string header;
  header.append(detail::kSvolMagic, 4);
  detail::put_u32(header, detail::kSvolVersion);
  detail::put_u32(header, static_cast<std::uint32_t>(v.height));
  detail::put_u32(header, static_cast<std::uint32_t>(v.width));
  detail::put_u32(header, static_cast<std::uint32_t>(v.depth));
  detail::put_u32(header, static_cast<std::uint32_t>(v.channels));
  for (float s : v.spacing) detail::put_f32(header, s);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  // float32 payload is written verbatim; this assumes the usual IEEE-754
  // little-endian host, which read_volume shares.
  f.write(reinterpret_cast<const char*>(v.data.data()),
          static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!f) throw IoError("write failed: " + path);
}

inline Volume read_volume(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for reading: " + path);
  f.seekg(0, std::ios::end);
  const std::uint64_t file_size = static_cast<std::uint64_t>(f.tellg());
  f.seekg(0, std::ios::beg);

  unsigned char header[detail::kSvolHeaderBytes];
  if (file_size < detail::kSvolHeaderBytes)
    throw TruncatedFile("file shorter than the 36-byte header: " + path);
  f.read(reinterpret_cast<char*>(header), detail::kSvolHeaderBytes);

  if (std::memcmp(header, detail::kSvolMagic, 4) != 0)
    throw BadMagic("not an SVOL file: " + path);
  const std::uint32_t version = detail::get_u32(header + 4);
  if (version != detail::kSvolVersion)
    throw BadVersion("unsupported SVOL version " + std::to_string(version));

  const std::uint64_t dims[4] = {detail::get_u32(header + 8), detail::get_u32(header + 12),
                                 detail::get_u32(header + 16), detail::get_u32(header + 20)};
  std::uint64_t count = 1;
  for (std::uint64_t d : dims) {
    if (d == 0) throw DimOverflow("SVOL dimension is zero: " + path);
    if (count > std::numeric_limits<std::uint64_t>::max() / d)
      throw DimOverflow("SVOL dimensions overflow: " + path);
    count *= d;
  }
  if (count > (std::numeric_limits<std::size_t>::max() - detail::kSvolHeaderBytes) / 4)
    throw DimOverflow("SVOL payload too large for this platform: " + path);

  const std::uint64_t expected = detail::kSvolHeaderBytes + 4 * count;
  if (file_size != expected)
    throw TruncatedFile("SVOL size " + std::to_string(file_size) + " != expected " +
                        std::to_string(expected) + ": " + path);

  Volume v(dims[0], dims[1], dims[2], dims[3]);
  v.spacing = {detail::get_f32(header + 24), detail::get_f32(header + 28),
               detail::get_f32(header + 32)};
  f.read(reinterpret_cast<char*>(v.data.data()),
         static_cast<std::streamsize>(4 * count));
  if (static_cast<std::uint64_t>(f.gcount()) != 4 * count)
    throw TruncatedFile("short read on SVOL payload: " + path);
  return v;
}

// ---------------------------------------------------------------------------
// Dataset manifest: a JSON array of {"id", "image_path", "mask_path"}
// records. Relative paths are resolved against the manifest's directory.

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string mask_path;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries, const std::string& path) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& e : entries)
    doc.push_back({{"id", e.id}, {"image_path", e.image_path}, {"mask_path", e.mask_path}});
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << doc.dump(2) << "\n";
}

/// Loads and validates a manifest: ids must be unique and both referenced
/// files must exist. Returned paths are resolved (absolute or relative to
/// the caller's cwd).
inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  nlohmann::json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw BadManifest("manifest is not valid JSON: " + std::string(e.what()));
  }
  if (!doc.is_array()) throw BadManifest("manifest must be a JSON array");

  const auto base = std::filesystem::path(path).parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (base / fp).string();
  };

  std::vector<ManifestEntry> entries;
  std::vector<std::string> seen;
  for (const auto& rec : doc) {
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("image_path") ||
        !rec.contains("mask_path"))
      throw BadManifest("manifest record missing id/image_path/mask_path");
    ManifestEntry e;
    e.id = rec.at("id").get<std::string>();
    e.image_path = resolve(rec.at("image_path").get<std::string>());
    e.mask_path = resolve(rec.at("mask_path").get<std::string>());
    if (std::find(seen.begin(), seen.end(), e.id) != seen.end())
      throw BadManifest("duplicate manifest id: " + e.id);
    seen.push_back(e.id);
    if (!std::filesystem::exists(e.image_path))
      throw BadManifest("missing image file: " + e.image_path);
    if (!std::filesystem::exists(e.mask_path))
      throw BadManifest("missing mask file: " + e.mask_path);
    entries.push_back(std::move(e));
  }
  return entries;
}

// ---------------------------------------------------------------------------

/// Writes one channel of a super image as a binary (P5) 8-bit PGM.
/// Values are min-max scaled to [0, 255]; a constant channel maps to 0.
inline void export_pgm(const SuperImage& si, std::size_t channel, const std::string& path) {
  if (channel >= si.channels)
    throw BadChannel("channel " + std::to_string(channel) + " out of range, image has " +
                     std::to_string(si.channels));
  const float* plane = si.plane(channel);
  const std::size_t n = si.height * si.width;
  float lo = plane[0], hi = plane[0];
  for (std::size_t i = 1; i < n; ++i) {
    lo = std::min(lo, plane[i]);
    hi = std::max(hi, plane[i]);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << si.width << " " << si.height << "\n255\n";
  std::vector<unsigned char> row(si.width);
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  for (std::size_t y = 0; y < si.height; ++y) {
    for (std::size_t x = 0; x < si.width; ++x) {
      const float v = (plane[y * si.width + x] - lo) * scale;
      row[x] = static_cast<unsigned char>(std::lround(v));
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace siseg
