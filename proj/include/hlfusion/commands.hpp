#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hlfusion/manifest.hpp"

namespace hlfusion {

// Process exit codes shared by the CLI and the command layer.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitGradcheck = 5;

/// Trains per manifest; writes manifest.txt, model.ckpt, history.csv and
/// metrics.txt into the output directory.
int cmd_train(const RunManifest& manifest);

/// Prints the per-class accuracy table for one split of the given data.
/// split: "train" | "test" | "all" (all requires no split spec).
int cmd_eval(const std::string& checkpoint_path, const RunManifest& manifest,
             const std::string& split);

struct GradcheckOptions {
  std::size_t stacks = 2;
  std::size_t embed = 4;
  std::size_t patch = 5;
  std::size_t hsi_channels = 6;
  std::size_t lidar_channels = 1;
  std::size_t n_classes = 3;
  std::size_t batch = 2;
  double step = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
};

/// Finite-difference check of every parameter group; prints the worst
/// relative error per group and returns kExitGradcheck on failure.
int cmd_gradcheck(const GradcheckOptions& options);

/// Retrains from scratch once per axis value (stacks or embed), all other
/// settings taken from the base manifest, and tabulates test OA per value.
/// Partial results are preserved in <out>/results.csv if a run fails.
int cmd_ablate(const std::string& axis, const std::vector<std::size_t>& values,
               const RunManifest& base, std::size_t jobs = 1);

/// Writes a class-colored PPM map (plus a .legend.txt sidecar) of the scene.
int cmd_map(const std::string& checkpoint_path, const RunManifest& manifest,
            const std::string& out_path);

/// Text matrices (one band per file) -> cube container.
int cmd_convert(const std::vector<std::string>& band_paths, const std::string& out_path,
                bool as_labels);

struct SynthOptions {
  std::size_t n_classes = 4;
  std::size_t height = 48;
  std::size_t width = 48;
  std::size_t hsi_channels = 8;
  std::size_t lidar_channels = 2;
  double noise_sigma = 0.05;
  std::size_t keep_per_class = 0;  // 0 keeps every pixel labeled
  std::uint64_t seed = 0;
  std::string out_dir;
};

/// Generates a synthetic scene and writes hsi.cube/lidar.cube/labels.cube.
int cmd_synth(const SynthOptions& options);

}  // namespace hlfusion
