#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hlfusion/rng.hpp"
#include "hlfusion/tensor.hpp"

namespace hlfusion {

/// Co-registered HSI + LiDAR rasters with a per-pixel label map.
/// Label 0 means unlabeled; classes are 1-based in files and on disk,
/// 0-based inside PatchDataset.
struct SceneCube {
  std::size_t height = 0;
  std::size_t width = 0;
  TensorPtr hsi;    // [H,W,C_h]
  TensorPtr lidar;  // [H,W,C_l]
  std::vector<std::int32_t> labels;  // H*W row-major

  std::size_t hsi_channels() const { return hsi->dim(2); }
  std::size_t lidar_channels() const { return lidar->dim(2); }
  std::int32_t label_at(std::size_t row, std::size_t col) const {
    return labels[row * width + col];
  }
  /// Highest label value present.
  std::size_t n_classes() const;
  std::size_t labeled_count() const;
};

// Cube container: 8-byte magic "HLCUBE01", u32 H, u32 W, u32 C,
// u8 dtype (0 = f64, 1 = i32), then the row-major payload, little-endian.
void save_raster(const std::string& path, const TensorPtr& raster);
void save_labels(const std::string& path, std::size_t height, std::size_t width,
                 const std::vector<std::int32_t>& labels);
TensorPtr load_raster(const std::string& path);
std::vector<std::int32_t> load_label_raster(const std::string& path, std::size_t& height,
                                            std::size_t& width);

/// Loads and co-registration-checks the three files of a scene.
SceneCube load_cube(const std::string& hsi_path, const std::string& lidar_path,
                    const std::string& labels_path);
void save_cube(const SceneCube& cube, const std::string& hsi_path,
               const std::string& lidar_path, const std::string& labels_path);

/// Reads one whitespace-separated dense text matrix per band and assembles a
/// cube raster file. Bridges from tools that export plain text.
void convert_text_bands(const std::vector<std::string>& band_paths, const std::string& out_path,
                        bool as_labels);

/// Per-band min-max scaling to [0,1] over the whole scene; constant bands
/// map to 0. Optionally restricted to statistics from the given coordinates.
void normalize(SceneCube& cube);
void normalize_with_stats(SceneCube& cube,
                          const std::vector<std::pair<std::size_t, std::size_t>>& stat_pixels);

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct PatchRef {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::uint32_t label = 0;  // 0-based class index
  Split split = Split::Test;
};

/// One entry per labeled pixel; patches are materialized on demand with
/// mirror-padded borders so the full MUUFL/Houston scenes fit in memory.
class PatchDataset {
 public:
  PatchDataset() = default;
  PatchDataset(std::shared_ptr<const SceneCube> cube, std::size_t patch_size,
               std::vector<PatchRef> entries, std::size_t n_classes);

  std::size_t size() const { return entries_.size(); }
  std::size_t patch_size() const { return patch_size_; }
  std::size_t n_classes() const { return n_classes_; }
  const SceneCube& cube() const { return *cube_; }
  const std::vector<PatchRef>& entries() const { return entries_; }
  std::vector<PatchRef>& entries() { return entries_; }

  const PatchRef& entry(std::size_t i) const { return entries_[i]; }
  std::uint32_t label(std::size_t i) const { return entries_[i].label; }

  TensorPtr hsi_patch(std::size_t i) const;
  TensorPtr lidar_patch(std::size_t i) const;

  std::vector<std::size_t> indices_of(Split split) const;
  std::size_t count_of(Split split) const;

 private:
  std::shared_ptr<const SceneCube> cube_;
  std::size_t patch_size_ = 0;
  std::vector<PatchRef> entries_;
  std::size_t n_classes_ = 0;
};

/// One patch per labeled pixel, centered on it; all entries start as Test.
PatchDataset extract_patches(std::shared_ptr<const SceneCube> cube, std::size_t patch_size);

/// Marks the (row, col) coordinates listed one pair per line as Train.
void split_fixed(PatchDataset& ds, const std::string& train_index_path);

/// Draws k training pixels per class uniformly without replacement.
void split_per_class(PatchDataset& ds, std::size_t k_per_class, Rng& rng);

/// Keeps at most keep_per_class labeled pixels per class, zeroing the rest.
void sparsify_labels(SceneCube& cube, std::size_t keep_per_class, Rng& rng);

/// Blocky synthetic scene for desk-scale verification. Classes get distinct
/// spectral signatures and elevation levels plus Gaussian noise, except that
/// classes 1/2 share the HSI signature (LiDAR must separate them) and classes
/// 3/4 share the LiDAR signature (HSI must separate them), so single-modality
/// classification is capped below 100% by construction.
SceneCube synth_scene(std::size_t n_classes, std::size_t height, std::size_t width,
                      std::size_t hsi_channels, std::size_t lidar_channels, double noise_sigma,
                      Rng& rng);

}  // namespace hlfusion
