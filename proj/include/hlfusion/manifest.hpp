#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "hlfusion/model.hpp"
#include "hlfusion/train.hpp"

namespace hlfusion {

/// Flat key=value description of a run. A manifest plus the input files fully
/// determines every output byte; it is serialized alongside each run so the
/// run can be replayed.
struct RunManifest {
  // data
  std::string hsi;
  std::string lidar;
  std::string labels;
  std::string train_idx;     // fixed-coordinate split file, empty when unused
  std::size_t per_class = 0; // per-class split draw count, 0 when unused
  std::string norm = "scene";  // min-max statistics: scene | train

  // model
  std::size_t stacks = 4;
  std::size_t embed = 128;
  std::size_t patch = 11;
  double dropout = 0.5;
  std::string activation = "relu";
  double ln_eps = 1e-5;
  bool single_modality = false;

  // training
  double lr = 5e-6;
  std::size_t epochs = 500;
  std::size_t batch = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  // outputs
  std::string out;
  bool dense = false;

  std::string serialize() const;
  static RunManifest parse(std::istream& in);
  static RunManifest parse_file(const std::string& path);

  /// Checks the fields a training run needs; throws std::invalid_argument
  /// naming the offending field.
  void validate_for_training() const;

  ModelConfig model_config(std::size_t hsi_channels, std::size_t lidar_channels,
                           std::size_t n_classes) const;
  TrainConfig train_config() const;
};

}  // namespace hlfusion
