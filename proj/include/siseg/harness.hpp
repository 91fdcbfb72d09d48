#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "siseg/error.hpp"
#include "siseg/metrics.hpp"
#include "siseg/nn_ops.hpp"
#include "siseg/optim.hpp"
#include "siseg/preprocess.hpp"
#include "siseg/rng.hpp"
#include "siseg/si_codec.hpp"
#include "siseg/synthgen.hpp"
#include "siseg/tensor.hpp"
#include "siseg/unet.hpp"
#include "siseg/volume_store.hpp"

// k-fold cross-validation driver. A run is fully described by an
// ExperimentConfig; with a fixed seed and single-threaded execution the
// resulting RunRecord and every emitted file are reproduced byte for
// byte (enable record_timing only when wall-clock measurements are
// wanted, since those are inherently non-repeatable).

namespace siseg {

enum class Mode { si2d, vol3d };

inline std::string to_string(Mode m) { return m == Mode::si2d ? "si2d" : "vol3d"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "si2d") return Mode::si2d;
  if (s == "vol3d") return Mode::vol3d;
  throw ConfigError("unknown mode: " + s + " (expected si2d or vol3d)");
}

inline GridLayout parse_grid(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos || x == 0 || x + 1 >= s.size())
    throw ConfigError("grid must look like 4x4, got: " + s);
  try {
    const long rows = std::stol(s.substr(0, x));
    const long cols = std::stol(s.substr(x + 1));
    if (rows < 1 || cols < 1) throw ConfigError("grid factors must be >= 1: " + s);
    return {static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)};
  } catch (const std::logic_error&) {
    throw ConfigError("grid must look like 4x4, got: " + s);
  }
}

struct ExperimentConfig {
  std::string dataset;       // manifest path; empty means synthetic
  PhantomSpec synth;         // used when dataset is empty
  std::size_t synth_cases = 40;
  Mode mode = Mode::si2d;
  GridLayout grid{4, 4};     // si2d only
  std::size_t folds = 2;
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  std::uint64_t seed = 0;
  nn::UNetConfig net;        // dims and in_channels are derived at run time
  bool augment = false;
  bool record_timing = true;
  std::string out_dir;
};

// --- config JSON (keys mirror the field names) ---

inline nlohmann::json to_json(const PhantomSpec& s, std::size_t cases) {
  return {{"shape", s.shape},
          {"blob_count", s.blob_count},
          {"radius_range", s.radius_range},
          {"fg_intensity", s.fg_intensity},
          {"bg_intensity", s.bg_intensity},
          {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},
          {"cases", cases}};
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (c.dataset.empty())
    j["dataset"] = to_json(c.synth, c.synth_cases);
  else
    j["dataset"] = c.dataset;
  j["mode"] = to_string(c.mode);
  j["grid"] = std::to_string(c.grid.rows) + "x" + std::to_string(c.grid.cols);
  j["folds"] = c.folds;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["net"] = {{"out_channels", c.net.out_channels},
              {"levels", c.net.levels},
              {"base_width", c.net.base_width},
              {"kernel", c.net.kernel},
              {"pool", c.net.pool}};
  j["augment"] = c.augment;
  j["record_timing"] = c.record_timing;
  j["out_dir"] = c.out_dir;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    if (j.contains("dataset")) {
      if (j["dataset"].is_string()) {
        c.dataset = j["dataset"].get<std::string>();
      } else {
        const auto& d = j["dataset"];
        if (d.contains("shape")) d["shape"].get_to(c.synth.shape);
        if (d.contains("blob_count")) d["blob_count"].get_to(c.synth.blob_count);
        if (d.contains("radius_range")) d["radius_range"].get_to(c.synth.radius_range);
        if (d.contains("fg_intensity")) d["fg_intensity"].get_to(c.synth.fg_intensity);
        if (d.contains("bg_intensity")) d["bg_intensity"].get_to(c.synth.bg_intensity);
        if (d.contains("noise_sigma")) d["noise_sigma"].get_to(c.synth.noise_sigma);
        if (d.contains("seed")) d["seed"].get_to(c.synth.seed);
        if (d.contains("cases")) d["cases"].get_to(c.synth_cases);
      }
    }
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    if (j.contains("grid")) {
      if (j["grid"].is_string())
        c.grid = parse_grid(j["grid"].get<std::string>());
      else
        c.grid = {j["grid"].at(0).get<std::size_t>(), j["grid"].at(1).get<std::size_t>()};
    }
    if (j.contains("folds")) j["folds"].get_to(c.folds);
    if (j.contains("epochs")) j["epochs"].get_to(c.epochs);
    if (j.contains("batch_size")) j["batch_size"].get_to(c.batch_size);
    if (j.contains("seed")) j["seed"].get_to(c.seed);
    if (j.contains("net")) {
      const auto& n = j["net"];
      if (n.contains("out_channels")) n["out_channels"].get_to(c.net.out_channels);
      if (n.contains("levels")) n["levels"].get_to(c.net.levels);
      if (n.contains("base_width")) n["base_width"].get_to(c.net.base_width);
      if (n.contains("kernel")) n["kernel"].get_to(c.net.kernel);
      if (n.contains("pool")) n["pool"].get_to(c.net.pool);
    }
    if (j.contains("augment")) j["augment"].get_to(c.augment);
    if (j.contains("record_timing")) j["record_timing"].get_to(c.record_timing);
    if (j.contains("out_dir")) j["out_dir"].get_to(c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad config JSON: " + std::string(e.what()));
  }
  return c;
}

// ---------------------------------------------------------------------------

/// Seeded shuffle of 0..n-1 followed by contiguous chunking into k
/// validation sets; the first n % k folds are one element larger.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k,
                                                         std::uint64_t seed) {
  if (k < 1 || k > n)
    throw BadK("k = " + std::to_string(k) + " invalid for n = " + std::to_string(n));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng({seed, 0x5b17});
  rng.shuffle(idx);
  std::vector<std::vector<std::size_t>> folds(k);
  const std::size_t base = n / k, extra = n % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(idx.begin() + pos, idx.begin() + pos + len);
    pos += len;
  }
  return folds;
}

struct Case {
  std::string id;
  Volume image;  // znormalized
  Volume mask;   // binary, single channel
};

/// Loads the experiment dataset: manifest-backed volumes or generated
/// phantoms. Images are z-normalized and masks binarized here so both
/// train and eval see identical preprocessing.
inline std::vector<Case> load_dataset(const ExperimentConfig& cfg) {
  std::vector<Case> cases;
  if (!cfg.dataset.empty()) {
    for (const auto& e : read_manifest(cfg.dataset)) {
      Case c;
      c.id = e.id;
      c.image = znormalize(read_volume(e.image_path));
      c.mask = binarize(read_volume(e.mask_path), 0.5f);
      cases.push_back(std::move(c));
    }
  } else {
    auto phantoms = generate(cfg.synth, cfg.synth_cases);
    char buf[32];
    for (std::size_t i = 0; i < phantoms.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "case_%03zu", i);
      Case c;
      c.id = buf;
      c.image = znormalize(phantoms[i].image);
      c.mask = std::move(phantoms[i].mask);
      cases.push_back(std::move(c));
    }
  }
  if (cases.empty()) throw ConfigError("dataset is empty");
  for (const auto& c : cases)
    if (!c.image.same_shape(cases.front().image))
      throw ConfigError("all dataset volumes must share one shape; " + c.id + " differs");
  return cases;
}

struct RunRecord {
  ExperimentConfig config;
  std::string image_size;  // "HxWxD" of the dataset volumes
  std::vector<FoldResult> folds;
  Aggregate dsc, precision, recall;  // over per-fold means
  std::vector<double> fold_seconds;  // empty when timing is off
  double seconds_per_epoch = 0.0;    // training wall time / epochs, fold mean
};

namespace detail {

// Sample encoded in the model's input layout.
struct EncodedCase {
  std::vector<float> x, y;
};

inline EncodedCase encode_case(const Volume& image, const Volume& mask, Mode mode,
                               const GridLayout& grid) {
  EncodedCase e;
  if (mode == Mode::si2d) {
    e.x = to_super_image(image, grid).data;
    e.y = to_super_image(mask, grid).data;
  } else {
    e.x = image.data;
    e.y = mask.data;
  }
  return e;
}

// Divergence guard for the training loop: weight blow-ups surface as a
// non-finite loss at the next step.
inline void ensure_finite_loss(double value, std::size_t fold, std::size_t epoch) {
  if (!std::isfinite(value))
    throw NumericalDivergence("non-finite loss in fold " + std::to_string(fold) +
                              ", epoch " + std::to_string(epoch));
}

inline void validate_config(const ExperimentConfig& cfg, const std::vector<Case>& cases) {
  if (cfg.folds < 2) throw ConfigError("folds must be >= 2");
  if (cfg.folds > cases.size())
    throw ConfigError("folds = " + std::to_string(cfg.folds) + " exceeds case count " +
                      std::to_string(cases.size()));
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const Volume& v = cases.front().image;
  for (const auto& c : cases)
    if (c.mask.channels != 1 || c.mask.height != c.image.height ||
        c.mask.width != c.image.width || c.mask.depth != c.image.depth)
      throw ConfigError("mask of " + c.id +
                        " must be single-channel and match the image dimensions");
  if (cfg.mode == Mode::si2d && cfg.grid.tiles() != v.depth)
    throw ConfigError("grid " + std::to_string(cfg.grid.rows) + "x" +
                      std::to_string(cfg.grid.cols) + " does not tile depth " +
                      std::to_string(v.depth));
  std::size_t div = 1;
  for (std::size_t l = 1; l < cfg.net.levels; ++l) div *= cfg.net.pool;
  std::vector<std::size_t> extents;
  if (cfg.mode == Mode::si2d)
    extents = {v.height * cfg.grid.rows, v.width * cfg.grid.cols};
  else
    extents = {v.depth, v.height, v.width};
  for (std::size_t e : extents)
    if (e % div != 0)
      throw ConfigError("spatial extent " + std::to_string(e) +
                        " not divisible by pool^levels-1 = " + std::to_string(div));
}

}  // namespace detail

/// Trains and evaluates one configuration with k-fold cross validation on
/// preloaded cases. Deterministic given (cfg, seed); a non-finite loss
/// aborts with NumericalDivergence.
inline RunRecord run_experiment(const ExperimentConfig& cfg, const std::vector<Case>& cases) {
  detail::validate_config(cfg, cases);
  const Volume& proto = cases.front().image;

  nn::UNetConfig net = cfg.net;
  net.dims = cfg.mode == Mode::si2d ? 2 : 3;
  net.in_channels = proto.channels;

  std::vector<std::size_t> x_shape, y_shape;
  if (cfg.mode == Mode::si2d) {
    const std::size_t sh = proto.height * cfg.grid.rows;
    const std::size_t sw = proto.width * cfg.grid.cols;
    x_shape = {cfg.batch_size, proto.channels, sh, sw};
    y_shape = {cfg.batch_size, 1, sh, sw};
  } else {
    x_shape = {cfg.batch_size, proto.channels, proto.depth, proto.height, proto.width};
    y_shape = {cfg.batch_size, 1, proto.depth, proto.height, proto.width};
  }

  // Without augmentation, samples are encoded once and reused every epoch.
  std::vector<detail::EncodedCase> fixed;
  if (!cfg.augment) {
    fixed.reserve(cases.size());
    for (const auto& c : cases)
      fixed.push_back(detail::encode_case(c.image, c.mask, cfg.mode, cfg.grid));
  }

  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  const auto folds = kfold_split(cases.size(), cfg.folds, cfg.seed);
  RunRecord rec;
  rec.config = cfg;
  rec.image_size = std::to_string(proto.height) + "x" + std::to_string(proto.width) + "x" +
                   std::to_string(proto.depth);

  std::vector<double> per_epoch_seconds;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    auto model = nn::build_unet<float>(net, derive_seed({cfg.seed, f, 0x1417}));
    nn::AdamW<float> opt(model.parameter_list());

    std::vector<std::size_t> train_idx;
    for (std::size_t i = 0; i < cases.size(); ++i)
      if (std::find(folds[f].begin(), folds[f].end(), i) == folds[f].end())
        train_idx.push_back(i);

    const auto fold_start = std::chrono::steady_clock::now();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      const double lr = nn::cosine_lr(static_cast<double>(epoch));
      std::vector<std::size_t> order = train_idx;
      Rng shuffle_rng({cfg.seed, f, epoch, 0x54a5});
      shuffle_rng.shuffle(order);

      // Short final batches are dropped during training; evaluation below
      // scores every case.
      const std::size_t nbatches = order.size() / cfg.batch_size;
      for (std::size_t b = 0; b < nbatches; ++b) {
        nn::Tensor<float> xb(x_shape), yb(y_shape);
        const std::size_t xblock = xb.size() / cfg.batch_size;
        const std::size_t yblock = yb.size() / cfg.batch_size;
        for (std::size_t s = 0; s < cfg.batch_size; ++s) {
          const std::size_t ci = order[b * cfg.batch_size + s];
          detail::EncodedCase enc;
          const detail::EncodedCase* item;
          if (cfg.augment) {
            auto [img, msk] = augment(cases[ci].image, cases[ci].mask,
                                      derive_seed({cfg.seed, f, epoch, ci, 0xa46e}));
            enc = detail::encode_case(img, msk, cfg.mode, cfg.grid);
            item = &enc;
          } else {
            item = &fixed[ci];
          }
          std::copy(item->x.begin(), item->x.end(), xb.values().begin() + s * xblock);
          std::copy(item->y.begin(), item->y.end(), yb.values().begin() + s * yblock);
        }
        auto pred = model.forward(xb);
        auto loss = nn::dice_bce_loss(pred, yb);
        detail::ensure_finite_loss(loss.item(), f, epoch);
        opt.zero_grad();
        nn::backward(loss);
        opt.step(lr);
      }
    }
    const auto train_end = std::chrono::steady_clock::now();

    FoldResult fr;
    fr.fold = f;
    for (std::size_t ci : folds[f]) {
      SegScores s = cfg.mode == Mode::si2d
                        ? evaluate_si(model, cases[ci].image, cases[ci].mask, cfg.grid)
                        : evaluate_vol(model, cases[ci].image, cases[ci].mask);
      fr.cases.push_back({cases[ci].id, s});
    }
    fr.mean = mean_scores(fr.cases);
    rec.folds.push_back(std::move(fr));

    if (cfg.record_timing) {
      const auto fold_end = std::chrono::steady_clock::now();
      rec.fold_seconds.push_back(std::chrono::duration<double>(fold_end - fold_start).count());
      per_epoch_seconds.push_back(
          cfg.epochs == 0
              ? 0.0
              : std::chrono::duration<double>(train_end - fold_start).count() /
                    static_cast<double>(cfg.epochs));
    }

    if (!cfg.out_dir.empty())
      nn::save_checkpoint(model,
                          (std::filesystem::path(cfg.out_dir) /
                           ("fold_" + std::to_string(f) + ".snet")).string());
  }

  std::vector<double> d, p, r;
  for (const auto& fr : rec.folds) {
    d.push_back(fr.mean.dsc);
    p.push_back(fr.mean.precision);
    r.push_back(fr.mean.recall);
  }
  rec.dsc = aggregate(d);
  rec.precision = aggregate(p);
  rec.recall = aggregate(r);
  if (!per_epoch_seconds.empty())
    rec.seconds_per_epoch = aggregate(per_epoch_seconds).mean;
  return rec;
}

inline RunRecord run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, load_dataset(cfg));
}

/// One run_experiment per layout with shared data, folds, and seed;
/// returns records sorted by descending squareness. Checkpoints land in
/// per-layout subdirectories of cfg.out_dir.
inline std::vector<RunRecord> grid_sweep(const ExperimentConfig& cfg,
                                         const std::vector<GridLayout>& layouts,
                                         const std::vector<Case>& cases) {
  if (cfg.mode != Mode::si2d) throw ConfigError("grid_sweep requires mode si2d");
  const Volume& proto = cases.front().image;
  for (const auto& g : layouts)
    if (g.tiles() != proto.depth)
      throw ConfigError("layout " + std::to_string(g.rows) + "x" + std::to_string(g.cols) +
                        " does not tile depth " + std::to_string(proto.depth));

  std::vector<RunRecord> records;
  for (const auto& g : layouts) {
    ExperimentConfig c = cfg;
    c.grid = g;
    if (!cfg.out_dir.empty())
      c.out_dir = (std::filesystem::path(cfg.out_dir) /
                   ("g" + std::to_string(g.rows) + "x" + std::to_string(g.cols))).string();
    records.push_back(run_experiment(c, cases));
  }
  std::sort(records.begin(), records.end(), [&](const RunRecord& a, const RunRecord& b) {
    const double sa = squareness(a.config.grid, proto.height, proto.width);
    const double sb = squareness(b.config.grid, proto.height, proto.width);
    if (sa != sb) return sa > sb;
    return a.config.grid.rows < b.config.grid.rows;
  });
  return records;
}

inline std::vector<RunRecord> grid_sweep(const ExperimentConfig& cfg,
                                         const std::vector<GridLayout>& layouts) {
  return grid_sweep(cfg, layouts, load_dataset(cfg));
}

// ---------------------------------------------------------------------------
// Result emission.

namespace detail {

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fr = r.folds[f];
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : fr.cases)
      cases.push_back({{"id", c.id},
                       {"dsc", c.scores.dsc},
                       {"precision", c.scores.precision},
                       {"recall", c.scores.recall}});
    nlohmann::json jf = {{"fold", fr.fold},
                         {"cases", std::move(cases)},
                         {"mean",
                          {{"dsc", fr.mean.dsc},
                           {"precision", fr.mean.precision},
                           {"recall", fr.mean.recall}}}};
    if (!r.fold_seconds.empty()) jf["seconds"] = r.fold_seconds[f];
    folds.push_back(std::move(jf));
  }
  nlohmann::json j = {{"config", to_json(r.config)},
                      {"image_size", r.image_size},
                      {"folds", std::move(folds)},
                      {"aggregate",
                       {{"dsc", {{"mean", r.dsc.mean}, {"std", r.dsc.stddev}}},
                        {"precision", {{"mean", r.precision.mean}, {"std", r.precision.stddev}}},
                        {"recall", {{"mean", r.recall.mean}, {"std", r.recall.stddev}}}}}};
  if (!r.fold_seconds.empty()) j["seconds_per_epoch"] = r.seconds_per_epoch;
  return j;
}

inline constexpr const char* kCsvHeader =
    "mode,sh,sw,image_size,dsc_mean,dsc_std,precision_mean,precision_std,"
    "recall_mean,recall_std,seconds_per_epoch";

inline std::string csv_row(const RunRecord& r) {
  const bool si = r.config.mode == Mode::si2d;
  std::string row = to_string(r.config.mode);
  row += ",";
  row += si ? std::to_string(r.config.grid.rows) : std::string("-");
  row += ",";
  row += si ? std::to_string(r.config.grid.cols) : std::string("-");
  row += "," + r.image_size;
  row += "," + detail::fmt3(r.dsc.mean) + "," + detail::fmt3(r.dsc.stddev);
  row += "," + detail::fmt3(r.precision.mean) + "," + detail::fmt3(r.precision.stddev);
  row += "," + detail::fmt3(r.recall.mean) + "," + detail::fmt3(r.recall.stddev);
  row += ",";
  row += r.fold_seconds.empty() ? std::string("-") : detail::fmt3(r.seconds_per_epoch);
  return row;
}

/// Writes a summary CSV (3-decimal floats, one row per run) and a JSON
/// file with full per-case detail at full float precision.
inline void emit_results(const std::vector<RunRecord>& records, const std::string& csv_path,
                         const std::string& json_path) {
  {
    std::ofstream f(csv_path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + csv_path);
    f << kCsvHeader << "\n";
    for (const auto& r : records) f << csv_row(r) << "\n";
  }
  {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto& r : records) doc.push_back(record_to_json(r));
    std::ofstream f(json_path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + json_path);
    f << doc.dump(2) << "\n";
  }
}

inline void emit_results(const RunRecord& record, const std::string& csv_path,
                         const std::string& json_path) {
  emit_results(std::vector<RunRecord>{record}, csv_path, json_path);
}

/// One human-readable line per run, e.g.
/// "si2d 4x4 32x32x16: DSC 0.912±0.034 precision 0.954±0.012 recall 0.881±0.047".
inline std::string summary_line(const RunRecord& r) {
  std::string s = to_string(r.config.mode);
  if (r.config.mode == Mode::si2d)
    s += " " + std::to_string(r.config.grid.rows) + "x" + std::to_string(r.config.grid.cols);
  s += " " + r.image_size + ": DSC " + format_mean_std(r.dsc) + " precision " +
       format_mean_std(r.precision) + " recall " + format_mean_std(r.recall);
  return s;
}

}  // namespace siseg
