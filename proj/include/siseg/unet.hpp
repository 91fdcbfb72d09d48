#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "siseg/error.hpp"
#include "siseg/nn_ops.hpp"
#include "siseg/rng.hpp"
#include "siseg/tensor.hpp"

// A small encoder/decoder U-Net assembled from the ops in nn_ops.hpp, in
// 2D or 3D. Per level l the encoder runs two kernel^dims convolutions at
// width base_width * 2^l, each followed by ReLU, with `pool` max pooling
// between levels; the decoder mirrors this with stride-`pool`
// transposed convolutions and channel concatenation of the matching
// encoder feature map. A 1x1 convolution plus sigmoid produces one
// probability per voxel. There are no normalization layers.
//
// A model instance is single-owner while training (the optimizer mutates
// it); inference through a const model is safe from multiple threads only
// if each thread uses its own copy, since forward graphs share parameter
// nodes.

namespace siseg::nn {

struct UNetConfig {
  int dims = 2;  // 2 | 3
  std::size_t in_channels = 2;
  std::size_t out_channels = 1;
  std::size_t levels = 3;
  std::size_t base_width = 8;
  std::size_t kernel = 3;  // per axis, odd
  std::size_t pool = 2;    // per axis
};

template <typename T>
struct UNet {
  UNetConfig cfg;
  // Insertion order is the checkpoint order.
  std::vector<std::pair<std::string, Tensor<T>>> params;

  Tensor<T>& param(const std::string& name) {
    for (auto& [n, t] : params)
      if (n == name) return t;
    throw BadShape("unknown parameter: " + name);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params) t.zero_grad();
  }

  std::vector<Tensor<T>> parameter_list() const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : params) out.push_back(t);
    return out;
  }

  /// Runs the network; input is (N, C, H, W) or (N, C, D, H, W) with every
  /// spatial extent divisible by pool^(levels-1). Returns per-voxel
  /// probabilities with the same spatial shape and out_channels channels.
  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t rank = static_cast<std::size_t>(cfg.dims) + 2;
    if (x.shape().size() != rank)
      throw BadShape("unet expects rank " + std::to_string(rank) + " input, got " +
                     shape_string(x.shape()));
    if (x.shape()[1] != cfg.in_channels)
      throw BadShape("unet expects " + std::to_string(cfg.in_channels) + " channels, got " +
                     std::to_string(x.shape()[1]));
    std::size_t div = 1;
    for (std::size_t l = 1; l < cfg.levels; ++l) div *= cfg.pool;
    for (std::size_t a = 2; a < rank; ++a)
      if (x.shape()[a] % div != 0 || x.shape()[a] == 0)
        throw BadShape("spatial extent " + std::to_string(x.shape()[a]) +
                       " not divisible by " + std::to_string(div));

    const std::size_t pad = cfg.kernel / 2;
    auto block = [&](const Tensor<T>& in, const std::string& name) {
      auto h = relu(bias_add(conv(in, param(name + ".c1.w"), 1, pad, cfg.dims),
                             param(name + ".c1.b")));
      return relu(bias_add(conv(h, param(name + ".c2.w"), 1, pad, cfg.dims),
                           param(name + ".c2.b")));
    };

    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      h = block(h, "enc" + std::to_string(l));
      if (l + 1 < cfg.levels) {
        skips.push_back(h);
        h = maxpool(h, cfg.pool, cfg.dims);
      }
    }
    for (std::size_t l = cfg.levels - 1; l-- > 0;) {
      const std::string up = "up" + std::to_string(l);
      h = bias_add(upconv(h, param(up + ".w"), cfg.pool, cfg.dims), param(up + ".b"));
      h = concat(skips[l], h);
      h = block(h, "dec" + std::to_string(l));
    }
    return sigmoid(bias_add(conv(h, param("head.w"), 1, 0, cfg.dims), param("head.b")));
  }
};

namespace detail {

template <typename T>
Tensor<T> init_conv(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> init_bias(std::size_t n, std::size_t fan_in, Rng& rng) {
  Tensor<T> t({n});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

/// Builds a U-Net with Kaiming-uniform weights drawn deterministically
/// from `seed` in parameter order.
template <typename T>
UNet<T> build_unet(const UNetConfig& cfg, std::uint64_t seed) {
  if (cfg.dims != 2 && cfg.dims != 3) throw BadShape("unet dims must be 2 or 3");
  if (cfg.levels < 1) throw BadShape("unet needs at least one level");
  if (cfg.kernel % 2 == 0 || cfg.kernel < 1) throw BadShape("unet kernel must be odd");
  if (cfg.pool < 2) throw BadShape("unet pool must be >= 2");
  if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.base_width < 1)
    throw BadShape("unet channel counts must be >= 1");

  UNet<T> net;
  net.cfg = cfg;
  Rng rng(seed);

  auto kshape = [&](std::size_t a, std::size_t b, std::size_t k) {
    std::vector<std::size_t> s{a, b};
    for (int i = 0; i < cfg.dims; ++i) s.push_back(k);
    return s;
  };
  std::size_t kvol = 1;
  for (int i = 0; i < cfg.dims; ++i) kvol *= cfg.kernel;
  std::size_t pvol = 1;
  for (int i = 0; i < cfg.dims; ++i) pvol *= cfg.pool;

  auto add_conv = [&](const std::string& name, std::size_t cin, std::size_t cout,
                      std::size_t k, std::size_t kv) {
    net.params.emplace_back(name + ".w",
                            detail::init_conv<T>(kshape(cout, cin, k), cin * kv, rng));
    net.params.emplace_back(name + ".b", detail::init_bias<T>(cout, cin * kv, rng));
  };

  const auto width = [&](std::size_t l) { return cfg.base_width << l; };

  for (std::size_t l = 0; l < cfg.levels; ++l) {
    const std::size_t cin = l == 0 ? cfg.in_channels : width(l - 1);
    add_conv("enc" + std::to_string(l) + ".c1", cin, width(l), cfg.kernel, kvol);
    add_conv("enc" + std::to_string(l) + ".c2", width(l), width(l), cfg.kernel, kvol);
  }
  for (std::size_t l = cfg.levels - 1; l-- > 0;) {
    // Transposed-conv kernels are stored (Cin, Cout, k...).
    net.params.emplace_back(
        "up" + std::to_string(l) + ".w",
        detail::init_conv<T>(kshape(width(l + 1), width(l), cfg.pool), width(l + 1) * pvol,
                             rng));
    net.params.emplace_back("up" + std::to_string(l) + ".b",
                            detail::init_bias<T>(width(l), width(l + 1) * pvol, rng));
    add_conv("dec" + std::to_string(l) + ".c1", 2 * width(l), width(l), cfg.kernel, kvol);
    add_conv("dec" + std::to_string(l) + ".c2", width(l), width(l), cfg.kernel, kvol);
  }
  add_conv("head", cfg.base_width, cfg.out_channels, 1, 1);
  return net;
}

// ---------------------------------------------------------------------------
// Checkpoints. SNET layout, little-endian:
//   magic "SNET", version u32 (= 1),
//   config 7 x u32 (dims, in_channels, out_channels, levels, base_width,
//                   kernel, pool),
//   param count u32, then per parameter in model order:
//     name_len u32, name bytes, rank u32, extents u32 x rank,
//     float32 values.
// Write/read of a float model is bit-exact.

namespace detail {

inline constexpr char kSnetMagic[4] = {'S', 'N', 'E', 'T'};
inline constexpr std::uint32_t kSnetVersion = 1;

inline void write_u32(std::ofstream& f, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  f.write(b, 4);
}

inline std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw TruncatedFile("unexpected end of checkpoint: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void save_checkpoint(const UNet<float>& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(detail::kSnetMagic, 4);
  detail::write_u32(f, detail::kSnetVersion);
  const std::uint32_t cfg_words[7] = {
      static_cast<std::uint32_t>(net.cfg.dims),
      static_cast<std::uint32_t>(net.cfg.in_channels),
      static_cast<std::uint32_t>(net.cfg.out_channels),
      static_cast<std::uint32_t>(net.cfg.levels),
      static_cast<std::uint32_t>(net.cfg.base_width),
      static_cast<std::uint32_t>(net.cfg.kernel),
      static_cast<std::uint32_t>(net.cfg.pool)};
  for (std::uint32_t w : cfg_words) detail::write_u32(f, w);
  detail::write_u32(f, static_cast<std::uint32_t>(net.params.size()));
  for (const auto& [name, t] : net.params) {
    detail::write_u32(f, static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(f, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t e : t.shape()) detail::write_u32(f, static_cast<std::uint32_t>(e));
    f.write(reinterpret_cast<const char*>(t.values().data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!f) throw IoError("write failed: " + path);
}

inline UNet<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, detail::kSnetMagic, 4) != 0)
    throw BadMagic("not an SNET checkpoint: " + path);
  const std::uint32_t version = detail::read_u32(f, path);
  if (version != detail::kSnetVersion)
    throw BadVersion("unsupported SNET version " + std::to_string(version));

  UNetConfig cfg;
  cfg.dims = static_cast<int>(detail::read_u32(f, path));
  cfg.in_channels = detail::read_u32(f, path);
  cfg.out_channels = detail::read_u32(f, path);
  cfg.levels = detail::read_u32(f, path);
  cfg.base_width = detail::read_u32(f, path);
  cfg.kernel = detail::read_u32(f, path);
  cfg.pool = detail::read_u32(f, path);

  UNet<float> net;
  net.cfg = cfg;
  const std::uint32_t count = detail::read_u32(f, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::read_u32(f, path);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (static_cast<std::uint32_t>(f.gcount()) != name_len)
      throw TruncatedFile("unexpected end of checkpoint: " + path);
    const std::uint32_t rank = detail::read_u32(f, path);
    std::vector<std::size_t> shape(rank);
    for (auto& e : shape) e = detail::read_u32(f, path);
    Tensor<float> t(shape);
    f.read(reinterpret_cast<char*>(t.values().data()),
           static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (static_cast<std::size_t>(f.gcount()) != t.size() * sizeof(float))
      throw TruncatedFile("unexpected end of checkpoint: " + path);
    net.params.emplace_back(std::move(name), std::move(t));
  }
  return net;
}

}  // namespace siseg::nn
