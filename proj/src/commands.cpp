#include "hlfusion/commands.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "hlfusion/checkpoint.hpp"
#include "hlfusion/errors.hpp"
#include "hlfusion/gradcheck.hpp"
#include "hlfusion/train.hpp"

namespace hlfusion {

namespace {

namespace fs = std::filesystem;

void ensure_dir(const std::string& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw DataError("cannot create directory '" + path + "': " + ec.message());
}

struct PreparedData {
  std::shared_ptr<SceneCube> cube;
  PatchDataset dataset;
};

/// Loads the scene, extracts patches, applies the manifest's split, then
/// normalizes (patches are materialized lazily, so normalization done here
/// is what the model sees).
PreparedData prepare_data(const RunManifest& m, std::size_t patch_size) {
  auto cube = std::make_shared<SceneCube>(
      load_cube(m.hsi, m.single_modality && m.lidar.empty() ? m.hsi : m.lidar, m.labels));
  PatchDataset ds = extract_patches(cube, patch_size);
  if (ds.size() == 0) throw DataError("scene '" + m.labels + "' holds no labeled pixels");
  if (!m.train_idx.empty()) {
    split_fixed(ds, m.train_idx);
  } else if (m.per_class > 0) {
    Rng rng(m.seed);
    split_per_class(ds, m.per_class, rng);
  }
  if (m.norm == "train") {
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (const PatchRef& e : ds.entries()) {
      if (e.split == Split::Train) coords.emplace_back(e.row, e.col);
    }
    if (coords.empty()) throw std::invalid_argument("norm=train requires a training split");
    normalize_with_stats(*cube, coords);
  } else {
    normalize(*cube);
  }
  return {std::move(cube), std::move(ds)};
}

struct RunOutcome {
  Metrics metrics;   // on the test split (training split when no test exists)
  bool on_test = true;
};

RunOutcome run_training(const RunManifest& m, bool quiet) {
  m.validate_for_training();
  ensure_dir(m.out);
  {
    std::ofstream mf(m.out + "/manifest.txt", std::ios::binary);
    if (!mf) throw DataError("cannot write '" + m.out + "/manifest.txt'");
    mf << m.serialize();
  }
  PreparedData data = prepare_data(m, m.patch);
  const ModelConfig config = m.model_config(data.cube->hsi_channels(),
                                            data.cube->lidar_channels(), data.dataset.n_classes());
  FusionModel model = FusionModel::init(config);

  TrainResult result;
  if (m.epochs > 0) {
    EpochCallback progress;
    if (!quiet) {
      progress = [](const EpochStats& s) {
        std::printf("epoch %zu  loss %.6f  train OA %.4f  test OA %.4f\n", s.epoch, s.mean_loss,
                    s.train_oa, s.test_oa);
        return false;
      };
    }
    result = train(model, data.dataset, m.train_config(), progress);
  }
  write_history(m.out + "/history.csv", result.history);
  save_checkpoint(m.out + "/model.ckpt", model);

  RunOutcome outcome;
  outcome.on_test = data.dataset.count_of(Split::Test) > 0;
  outcome.metrics =
      evaluate(model, data.dataset, outcome.on_test ? Split::Test : Split::Train);
  std::ofstream metrics_file(m.out + "/metrics.txt", std::ios::binary);
  metrics_file << outcome.metrics.text_table();
  return outcome;
}

constexpr std::array<std::array<std::uint8_t, 3>, 20> kPalette = {{
    {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},   {245, 130, 48},
    {145, 30, 180},  {70, 240, 240},  {240, 50, 230}, {210, 245, 60},  {250, 190, 212},
    {0, 128, 128},   {220, 190, 255}, {170, 110, 40}, {255, 250, 200}, {128, 0, 0},
    {170, 255, 195}, {128, 128, 0},   {255, 215, 180}, {0, 0, 128},    {128, 128, 128},
}};

std::array<std::uint8_t, 3> class_color(std::uint32_t zero_based_class) {
  return kPalette[zero_based_class % kPalette.size()];
}

}  // namespace

int cmd_train(const RunManifest& manifest) {
  const RunOutcome outcome = run_training(manifest, false);
  std::printf("%s split results:\n%s", outcome.on_test ? "test" : "train",
              outcome.metrics.text_table().c_str());
  std::printf("outputs written to %s\n", manifest.out.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const RunManifest& manifest,
             const std::string& split) {
  FusionModel model = load_checkpoint(checkpoint_path);
  const ModelConfig& config = model.config();
  RunManifest m = manifest;
  m.patch = config.patch_size;
  m.single_modality = config.single_modality;
  PreparedData data = prepare_data(m, config.patch_size);
  if (data.cube->hsi_channels() != config.hsi_channels) {
    throw DataError("checkpoint expects " + std::to_string(config.hsi_channels) +
                    " HSI channels, cube has " + std::to_string(data.cube->hsi_channels()));
  }
  if (!config.single_modality && data.cube->lidar_channels() != config.lidar_channels) {
    throw DataError("checkpoint expects " + std::to_string(config.lidar_channels) +
                    " LiDAR channels, cube has " + std::to_string(data.cube->lidar_channels()));
  }
  if (data.dataset.n_classes() > config.n_classes) {
    throw DataError("scene has " + std::to_string(data.dataset.n_classes()) +
                    " classes, checkpoint was trained for " + std::to_string(config.n_classes));
  }

  Metrics metrics;
  if (split == "all") {
    std::vector<std::size_t> all(data.dataset.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    metrics = evaluate_indices(model, data.dataset, all);
  } else if (split == "train" || split == "test") {
    if (m.train_idx.empty() && m.per_class == 0) {
      throw std::invalid_argument("--split " + split + " needs --train-idx or --per-class");
    }
    metrics = evaluate(model, data.dataset, split == "train" ? Split::Train : Split::Test);
  } else {
    throw std::invalid_argument("--split must be train, test or all, got '" + split + "'");
  }
  std::printf("%s", metrics.text_table().c_str());
  return kExitOk;
}

int cmd_gradcheck(const GradcheckOptions& options) {
  ModelConfig config;
  config.n_stacks = options.stacks;
  config.embed_dim = options.embed;
  config.patch_size = options.patch;
  config.hsi_channels = options.hsi_channels;
  config.lidar_channels = options.lidar_channels;
  config.n_classes = options.n_classes;
  config.dropout_rate = 0.0;
  config.seed = options.seed;
  const GradCheckReport report =
      run_gradcheck(config, options.batch, options.step, options.tolerance, options.seed);
  std::printf("%s", report.text().c_str());
  return report.pass ? kExitOk : kExitGradcheck;
}

int cmd_ablate(const std::string& axis, const std::vector<std::size_t>& values,
               const RunManifest& base, std::size_t jobs) {
  if (axis != "stacks" && axis != "embed") {
    throw std::invalid_argument("--axis must be stacks or embed, got '" + axis + "'");
  }
  if (values.empty()) throw std::invalid_argument("--values: at least one value required");
  std::set<std::size_t> unique(values.begin(), values.end());
  if (unique.size() != values.size()) {
    throw std::invalid_argument("--values: duplicate values are not allowed");
  }
  if (base.out.empty()) throw std::invalid_argument("manifest field 'out': directory required");
  for (std::size_t v : values) {
    RunManifest probe = base;
    (axis == "stacks" ? probe.stacks : probe.embed) = v;
    probe.model_config(1, 1, 2).validate();  // bounds check before any training
  }
  ensure_dir(base.out);
  const std::string results_path = base.out + "/results.csv";
  {
    std::ofstream results(results_path, std::ios::binary);
    results << axis << ",oa_percent\n";
  }

  std::vector<double> oa(values.size(), -1.0);
  std::mutex io_mutex;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;

  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= values.size()) return;
      RunManifest m = base;
      (axis == "stacks" ? m.stacks : m.embed) = values[i];
      m.out = base.out + "/" + axis + "_" + std::to_string(values[i]);
      try {
        const RunOutcome outcome = run_training(m, true);
        std::lock_guard<std::mutex> lock(io_mutex);
        oa[i] = 100.0 * outcome.metrics.overall_accuracy;
        std::ofstream results(results_path, std::ios::binary | std::ios::app);
        char line[64];
        std::snprintf(line, sizeof(line), "%zu,%.2f\n", values[i], oa[i]);
        results << line;
        std::printf("%s=%zu -> OA %.2f%%\n", axis.c_str(), values[i], oa[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(io_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(jobs, values.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) {
    std::fprintf(stderr, "ablation aborted; partial results kept in %s\n", results_path.c_str());
    std::rethrow_exception(first_error);
  }

  const char* header = axis == "stacks" ? "Stacks (N_x)" : "Embed size";
  std::printf("%-14s", header);
  for (std::size_t v : values) std::printf("%9zu", v);
  std::printf("\n%-14s", "OA (%)");
  for (double v : oa) std::printf("%9.2f", v);
  std::printf("\n");
  return kExitOk;
}

int cmd_map(const std::string& checkpoint_path, const RunManifest& manifest,
            const std::string& out_path) {
  FusionModel model = load_checkpoint(checkpoint_path);
  const ModelConfig& config = model.config();
  RunManifest m = manifest;
  m.patch = config.patch_size;
  m.single_modality = config.single_modality;
  PreparedData data = prepare_data(m, config.patch_size);
  const SceneCube& cube = *data.cube;
  if (cube.hsi_channels() != config.hsi_channels ||
      (!config.single_modality && cube.lidar_channels() != config.lidar_channels)) {
    throw DataError("checkpoint channels (" + std::to_string(config.hsi_channels) + " HSI, " +
                    std::to_string(config.lidar_channels) + " LiDAR) do not match cube (" +
                    std::to_string(cube.hsi_channels()) + " HSI, " +
                    std::to_string(cube.lidar_channels()) + " LiDAR)");
  }

  PatchDataset ds = data.dataset;
  if (m.dense) {
    // one entry per pixel, label unused
    std::vector<PatchRef> entries;
    entries.reserve(cube.height * cube.width);
    for (std::size_t r = 0; r < cube.height; ++r) {
      for (std::size_t c = 0; c < cube.width; ++c) {
        entries.push_back(
            {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), 0, Split::Test});
      }
    }
    ds = PatchDataset(data.cube, config.patch_size, std::move(entries), config.n_classes);
  }

  std::vector<std::size_t> indices(ds.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  const auto predictions = predict(model, ds, indices, threads);

  std::vector<std::uint8_t> pixels(cube.height * cube.width * 3, 0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const PatchRef& e = ds.entry(i);
    const auto rgb = class_color(predictions[i]);
    std::uint8_t* px = pixels.data() + (e.row * cube.width + e.col) * 3;
    px[0] = rgb[0];
    px[1] = rgb[1];
    px[2] = rgb[2];
  }

  std::ofstream img(out_path, std::ios::binary);
  if (!img) throw DataError("map: cannot open '" + out_path + "' for writing");
  img << "P6\n" << cube.width << " " << cube.height << "\n255\n";
  img.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
  if (!img) throw DataError("map: write to '" + out_path + "' failed");

  std::ofstream legend(out_path + ".legend.txt", std::ios::binary);
  legend << "# class r g b (class 0 = unlabeled, rendered black)\n";
  legend << "0 0 0 0\n";
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    const auto rgb = class_color(static_cast<std::uint32_t>(c));
    legend << (c + 1) << " " << int(rgb[0]) << " " << int(rgb[1]) << " " << int(rgb[2]) << "\n";
  }
  std::printf("map written to %s (%zux%zu)\n", out_path.c_str(), cube.width, cube.height);
  return kExitOk;
}

int cmd_convert(const std::vector<std::string>& band_paths, const std::string& out_path,
                bool as_labels) {
  convert_text_bands(band_paths, out_path, as_labels);
  std::printf("wrote %s (%zu band%s)\n", out_path.c_str(), band_paths.size(),
              band_paths.size() == 1 ? "" : "s");
  return kExitOk;
}

int cmd_synth(const SynthOptions& options) {
  if (options.out_dir.empty()) throw std::invalid_argument("--out: directory required");
  Rng rng(options.seed);
  SceneCube cube = synth_scene(options.n_classes, options.height, options.width,
                               options.hsi_channels, options.lidar_channels, options.noise_sigma,
                               rng);
  if (options.keep_per_class > 0) sparsify_labels(cube, options.keep_per_class, rng);
  ensure_dir(options.out_dir);
  save_cube(cube, options.out_dir + "/hsi.cube", options.out_dir + "/lidar.cube",
            options.out_dir + "/labels.cube");
  std::printf("synthetic scene %zux%zu, %zu classes, %zu labeled pixels -> %s\n", cube.height,
              cube.width, cube.n_classes(), cube.labeled_count(), options.out_dir.c_str());
  return kExitOk;
}

}  // namespace hlfusion
