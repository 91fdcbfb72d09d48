// Command-line front end: dataset synthesis, volume/super-image codecs,
// PGM export, k-fold training, grid sweeps, and checkpoint evaluation.
//
// Exit codes: 0 success, 2 configuration/input error, 3 numerical
// divergence during training, 1 anything unexpected.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "siseg/siseg.hpp"

namespace fs = std::filesystem;
using namespace siseg;

namespace {

std::array<std::size_t, 3> parse_shape(const std::string& s) {
  std::array<std::size_t, 3> out{};
  std::size_t pos = 0;
  for (int a = 0; a < 3; ++a) {
    const std::size_t x = a < 2 ? s.find('x', pos) : s.size();
    if (x == std::string::npos) throw ConfigError("shape must look like 32x32x16: " + s);
    const long v = std::stol(s.substr(pos, x - pos));
    if (v < 1) throw ConfigError("shape extents must be >= 1: " + s);
    out[a] = static_cast<std::size_t>(v);
    pos = x + 1;
  }
  return out;
}

std::array<double, 2> parse_range(const std::string& s) {
  const std::size_t c = s.find(':');
  if (c == std::string::npos) throw ConfigError("range must look like 3:6, got: " + s);
  return {std::stod(s.substr(0, c)), std::stod(s.substr(c + 1))};
}

std::array<float, 2> parse_pair(const std::string& s) {
  const std::size_t c = s.find(',');
  if (c == std::string::npos) throw ConfigError("pair must look like 1.0,1.5 got: " + s);
  return {std::stof(s.substr(0, c)), std::stof(s.substr(c + 1))};
}

// SVOL with depth 1 doubles as the on-disk super-image format.
SuperImage read_super_image(const std::string& path) {
  Volume v = read_volume(path);
  if (v.depth != 1)
    throw ConfigError("expected a super-image file (depth 1), got depth " +
                      std::to_string(v.depth) + ": " + path);
  SuperImage si;
  si.height = v.height;
  si.width = v.width;
  si.channels = v.channels;
  si.slice_height = v.height;
  si.slice_width = v.width;
  si.grid = {1, 1};
  si.data = std::move(v.data);
  return si;
}

void write_super_image(const SuperImage& si, const std::string& path) {
  Volume v(si.height, si.width, 1, si.channels);
  v.data = si.data;
  write_volume(v, path);
}

int run_gen(const std::string& out_dir, std::size_t cases, std::uint64_t seed,
            const std::string& shape, const std::string& blobs, const std::string& radius,
            double noise, const std::string& fg, const std::string& bg) {
  PhantomSpec spec;
  spec.shape = parse_shape(shape);
  const auto b = parse_range(blobs);
  spec.blob_count = {static_cast<std::size_t>(b[0]), static_cast<std::size_t>(b[1])};
  spec.radius_range = parse_range(radius);
  spec.fg_intensity = parse_pair(fg);
  spec.bg_intensity = parse_pair(bg);
  spec.noise_sigma = noise;
  spec.seed = seed;

  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");
  auto data = generate(spec, cases);
  std::vector<ManifestEntry> entries;
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "case_%03zu", i);
    const std::string img = "images/" + std::string(buf) + ".svol";
    const std::string msk = "masks/" + std::string(buf) + ".svol";
    write_volume(data[i].image, (fs::path(out_dir) / img).string());
    write_volume(data[i].mask, (fs::path(out_dir) / msk).string());
    entries.push_back({buf, img, msk});
  }
  const std::string manifest = (fs::path(out_dir) / "manifest.json").string();
  write_manifest(entries, manifest);
  std::cout << "wrote " << data.size() << " cases to " << manifest << "\n";
  return 0;
}

ExperimentConfig merge_config(const std::string& config_path, const std::string& data,
                              const std::string& mode, const std::string& grid,
                              long folds, long epochs, long batch, long seed,
                              const std::string& out, bool augment, bool no_timing) {
  ExperimentConfig cfg;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("cannot open config: " + config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config is not valid JSON: " + std::string(e.what()));
    }
    cfg = config_from_json(j);
  }
  if (!data.empty()) cfg.dataset = data;
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  if (!grid.empty()) cfg.grid = parse_grid(grid);
  if (folds >= 0) cfg.folds = static_cast<std::size_t>(folds);
  if (epochs >= 0) cfg.epochs = static_cast<std::size_t>(epochs);
  if (batch >= 0) cfg.batch_size = static_cast<std::size_t>(batch);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  if (!out.empty()) cfg.out_dir = out;
  if (cfg.out_dir.empty()) cfg.out_dir = "siseg_out";
  if (augment) cfg.augment = true;
  if (no_timing) cfg.record_timing = false;
  return cfg;
}

void emit_and_report(const std::vector<RunRecord>& records, const std::string& out_dir) {
  fs::create_directories(out_dir);
  const std::string csv = (fs::path(out_dir) / "results.csv").string();
  const std::string json = (fs::path(out_dir) / "results.json").string();
  emit_results(records, csv, json);
  for (const auto& r : records) std::cout << summary_line(r) << "\n";
  std::cout << "results: " << csv << ", " << json << "\n";
}

int run_eval(const std::string& checkpoint, const std::string& manifest,
             const std::string& grid) {
  auto model = nn::load_checkpoint(checkpoint);
  ExperimentConfig loader;
  loader.dataset = manifest;
  auto cases = load_dataset(loader);

  const bool si_mode = model.cfg.dims == 2;
  GridLayout g{1, 1};
  if (si_mode) {
    if (grid.empty()) throw ConfigError("--grid is required for a 2D checkpoint");
    g = parse_grid(grid);
    if (g.tiles() != cases.front().image.depth)
      throw ConfigError("grid does not tile dataset depth " +
                        std::to_string(cases.front().image.depth));
  }

  std::vector<double> d, p, r;
  for (const auto& c : cases) {
    const SegScores s = si_mode ? evaluate_si(model, c.image, c.mask, g)
                                : evaluate_vol(model, c.image, c.mask);
    std::printf("%s dsc %.3f precision %.3f recall %.3f\n", c.id.c_str(), s.dsc,
                s.precision, s.recall);
    d.push_back(s.dsc);
    p.push_back(s.precision);
    r.push_back(s.recall);
  }
  std::cout << "mean: DSC " << format_mean_std(aggregate(d)) << " precision "
            << format_mean_std(aggregate(p)) << " recall " << format_mean_std(aggregate(r))
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"super-image volumetric segmentation workbench"};
  app.require_subcommand(1);

  // --- gen ---
  auto* gen_cmd = app.add_subcommand("gen", "synthesize a phantom dataset and manifest");
  std::string gen_out, gen_shape = "32x32x16", gen_blobs = "1:3", gen_radius = "3:6";
  std::string gen_fg = "1.0,1.5", gen_bg = "0.0,0.1";
  std::size_t gen_cases = 40;
  std::uint64_t gen_seed = 0;
  double gen_noise = 0.1;
  gen_cmd->add_option("--out", gen_out, "output directory")->required();
  gen_cmd->add_option("--cases", gen_cases, "number of cases");
  gen_cmd->add_option("--seed", gen_seed, "generator seed");
  gen_cmd->add_option("--shape", gen_shape, "volume shape HxWxD");
  gen_cmd->add_option("--blobs", gen_blobs, "blob count range lo:hi");
  gen_cmd->add_option("--radius", gen_radius, "blob radius range lo:hi (voxels)");
  gen_cmd->add_option("--noise", gen_noise, "Gaussian noise sigma");
  gen_cmd->add_option("--fg", gen_fg, "foreground means per channel a,b");
  gen_cmd->add_option("--bg", gen_bg, "background means per channel a,b");

  // --- encode / decode / export ---
  auto* enc_cmd = app.add_subcommand("encode", "volume file -> super-image file");
  std::string enc_in, enc_out;
  std::size_t enc_sh = 0, enc_sw = 0;
  enc_cmd->add_option("--in", enc_in, "input volume (.svol)")->required();
  enc_cmd->add_option("--out", enc_out, "output super image (.svol, depth 1)")->required();
  enc_cmd->add_option("--sh", enc_sh, "tile rows")->required();
  enc_cmd->add_option("--sw", enc_sw, "tile cols")->required();

  auto* dec_cmd = app.add_subcommand("decode", "super-image file -> volume file");
  std::string dec_in, dec_out;
  std::size_t dec_sh = 0, dec_sw = 0;
  dec_cmd->add_option("--in", dec_in, "input super image (.svol, depth 1)")->required();
  dec_cmd->add_option("--out", dec_out, "output volume (.svol)")->required();
  dec_cmd->add_option("--sh", dec_sh, "tile rows")->required();
  dec_cmd->add_option("--sw", dec_sw, "tile cols")->required();

  auto* exp_cmd = app.add_subcommand("export", "super-image file -> 8-bit PGM");
  std::string exp_in, exp_out;
  std::size_t exp_channel = 0;
  exp_cmd->add_option("--in", exp_in, "input super image (.svol, depth 1)")->required();
  exp_cmd->add_option("--out", exp_out, "output .pgm")->required();
  exp_cmd->add_option("--channel", exp_channel, "channel to export");

  // --- train / sweep ---
  std::string tr_config, tr_data, tr_mode, tr_grid, tr_out;
  long tr_folds = -1, tr_epochs = -1, tr_batch = -1, tr_seed = -1;
  bool tr_augment = false, tr_no_timing = false;
  auto add_train_options = [&](CLI::App* cmd) {
    cmd->add_option("--config", tr_config, "experiment config JSON");
    cmd->add_option("--data", tr_data, "dataset manifest (overrides config)");
    cmd->add_option("--mode", tr_mode, "si2d | vol3d");
    cmd->add_option("--grid", tr_grid, "super-image grid SHxSW");
    cmd->add_option("--folds", tr_folds, "cross-validation folds");
    cmd->add_option("--epochs", tr_epochs, "training epochs");
    cmd->add_option("--batch", tr_batch, "batch size");
    cmd->add_option("--seed", tr_seed, "experiment seed");
    cmd->add_option("--out", tr_out, "output directory");
    cmd->add_flag("--augment", tr_augment, "enable flip/gamma augmentation");
    cmd->add_flag("--no-timing", tr_no_timing, "omit wall-clock fields for byte-reproducible outputs");
  };
  auto* train_cmd = app.add_subcommand("train", "k-fold training and evaluation");
  add_train_options(train_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "train across grid layouts");
  std::string sweep_layouts = "all";
  add_train_options(sweep_cmd);
  sweep_cmd->add_option("--layouts", sweep_layouts,
                        "'all' (every factor pair of depth) or list like 4x4,2x8");

  // --- eval ---
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint on a manifest");
  std::string ev_ckpt, ev_data, ev_grid;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "model checkpoint (.snet)")->required();
  eval_cmd->add_option("--data", ev_data, "dataset manifest")->required();
  eval_cmd->add_option("--grid", ev_grid, "grid SHxSW (2D checkpoints)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen_cmd->parsed())
      return run_gen(gen_out, gen_cases, gen_seed, gen_shape, gen_blobs, gen_radius,
                     gen_noise, gen_fg, gen_bg);

    if (enc_cmd->parsed()) {
      Volume v = read_volume(enc_in);
      write_super_image(to_super_image(v, {enc_sh, enc_sw}), enc_out);
      std::cout << "encoded " << v.shape_string() << " -> " << enc_out << "\n";
      return 0;
    }
    if (dec_cmd->parsed()) {
      SuperImage si = read_super_image(dec_in);
      const GridLayout g{dec_sh, dec_sw};
      if (dec_sh == 0 || dec_sw == 0 || si.height % dec_sh != 0 || si.width % dec_sw != 0)
        throw ConfigError("grid does not divide the super-image dimensions");
      Volume v = from_super_image(si, g, si.height / dec_sh, si.width / dec_sw);
      write_volume(v, dec_out);
      std::cout << "decoded -> " << v.shape_string() << " at " << dec_out << "\n";
      return 0;
    }
    if (exp_cmd->parsed()) {
      export_pgm(read_super_image(exp_in), exp_channel, exp_out);
      std::cout << "wrote " << exp_out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const ExperimentConfig cfg =
          merge_config(tr_config, tr_data, tr_mode, tr_grid, tr_folds, tr_epochs, tr_batch,
                       tr_seed, tr_out, tr_augment, tr_no_timing);
      emit_and_report({run_experiment(cfg)}, cfg.out_dir);
      return 0;
    }
    if (sweep_cmd->parsed()) {
      const ExperimentConfig cfg =
          merge_config(tr_config, tr_data, tr_mode, tr_grid, tr_folds, tr_epochs, tr_batch,
                       tr_seed, tr_out, tr_augment, tr_no_timing);
      auto cases = load_dataset(cfg);
      std::vector<GridLayout> layouts;
      if (sweep_layouts == "all") {
        layouts = enumerate_layouts(cases.front().image.depth);
      } else {
        std::size_t pos = 0;
        while (pos <= sweep_layouts.size()) {
          const std::size_t comma = sweep_layouts.find(',', pos);
          const std::string tok =
              sweep_layouts.substr(pos, comma == std::string::npos ? std::string::npos
                                                                   : comma - pos);
          if (!tok.empty()) layouts.push_back(parse_grid(tok));
          if (comma == std::string::npos) break;
          pos = comma + 1;
        }
        if (layouts.empty()) throw ConfigError("no layouts given");
      }
      emit_and_report(grid_sweep(cfg, layouts, cases), cfg.out_dir);
      return 0;
    }
    if (eval_cmd->parsed()) return run_eval(ev_ckpt, ev_data, ev_grid);
  } catch (const NumericalDivergence& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
