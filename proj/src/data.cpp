#include "hlfusion/data.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "hlfusion/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "cube format is little-endian");

namespace hlfusion {

namespace {

constexpr char kCubeMagic[8] = {'H', 'L', 'C', 'U', 'B', 'E', '0', '1'};
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeI32 = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("cube '" + path + "': truncated header");
  return value;
}

struct CubeHeader {
  std::size_t height, width, channels;
  std::uint8_t dtype;
};

void write_header(std::ostream& out, std::size_t h, std::size_t w, std::size_t c,
                  std::uint8_t dtype) {
  out.write(kCubeMagic, sizeof(kCubeMagic));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c));
  write_pod<std::uint8_t>(out, dtype);
}

CubeHeader read_header(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCubeMagic, sizeof(kCubeMagic)) != 0) {
    throw DataError("cube '" + path + "': bad magic (expected HLCUBE01)");
  }
  CubeHeader h;
  h.height = read_pod<std::uint32_t>(in, path);
  h.width = read_pod<std::uint32_t>(in, path);
  h.channels = read_pod<std::uint32_t>(in, path);
  h.dtype = read_pod<std::uint8_t>(in, path);
  if (h.height == 0 || h.width == 0 || h.channels == 0) {
    throw DataError("cube '" + path + "': zero dimension in header");
  }
  return h;
}

/// Reflect index into [0, n) without repeating the edge sample.
std::size_t mirror_index(std::ptrdiff_t i, std::size_t n) {
  const auto sn = static_cast<std::ptrdiff_t>(n);
  if (i < 0) i = -i;
  if (i >= sn) i = 2 * (sn - 1) - i;
  return static_cast<std::size_t>(i);
}

}  // namespace

std::size_t SceneCube::n_classes() const {
  std::int32_t top = 0;
  for (std::int32_t v : labels) top = std::max(top, v);
  return static_cast<std::size_t>(top);
}

std::size_t SceneCube::labeled_count() const {
  std::size_t n = 0;
  for (std::int32_t v : labels) {
    if (v != 0) ++n;
  }
  return n;
}

void save_raster(const std::string& path, const TensorPtr& raster) {
  if (raster->rank() != 3) {
    throw std::invalid_argument("save_raster: expects [H,W,C], got " + shape_str(raster->shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cube '" + path + "': cannot open for writing");
  write_header(out, raster->dim(0), raster->dim(1), raster->dim(2), kDtypeF64);
  out.write(reinterpret_cast<const char*>(raster->data()),
            static_cast<std::streamsize>(raster->size() * sizeof(double)));
  if (!out) throw DataError("cube '" + path + "': write failed");
}

void save_labels(const std::string& path, std::size_t height, std::size_t width,
                 const std::vector<std::int32_t>& labels) {
  if (labels.size() != height * width) {
    throw std::invalid_argument("save_labels: label buffer does not match raster size");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cube '" + path + "': cannot open for writing");
  write_header(out, height, width, 1, kDtypeI32);
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size() * sizeof(std::int32_t)));
  if (!out) throw DataError("cube '" + path + "': write failed");
}

TensorPtr load_raster(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cube '" + path + "': cannot open");
  const CubeHeader h = read_header(in, path);
  if (h.dtype != kDtypeF64) {
    throw DataError("cube '" + path + "': expected float64 raster (dtype 0), got dtype " +
                    std::to_string(h.dtype));
  }
  auto t = Tensor::zeros({h.height, h.width, h.channels});
  in.read(reinterpret_cast<char*>(t->data()),
          static_cast<std::streamsize>(t->size() * sizeof(double)));
  if (!in) throw DataError("cube '" + path + "': truncated payload");
  return t;
}

std::vector<std::int32_t> load_label_raster(const std::string& path, std::size_t& height,
                                            std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cube '" + path + "': cannot open");
  const CubeHeader h = read_header(in, path);
  if (h.dtype != kDtypeI32 || h.channels != 1) {
    throw DataError("cube '" + path + "': labels must be a single int32 channel");
  }
  std::vector<std::int32_t> labels(h.height * h.width);
  in.read(reinterpret_cast<char*>(labels.data()),
          static_cast<std::streamsize>(labels.size() * sizeof(std::int32_t)));
  if (!in) throw DataError("cube '" + path + "': truncated payload");
  height = h.height;
  width = h.width;
  return labels;
}

SceneCube load_cube(const std::string& hsi_path, const std::string& lidar_path,
                    const std::string& labels_path) {
  SceneCube cube;
  cube.hsi = load_raster(hsi_path);
  cube.lidar = load_raster(lidar_path);
  std::size_t lh = 0, lw = 0;
  cube.labels = load_label_raster(labels_path, lh, lw);
  const std::size_t hh = cube.hsi->dim(0), hw = cube.hsi->dim(1);
  const std::size_t dh = cube.lidar->dim(0), dw = cube.lidar->dim(1);
  if (hh != dh || hw != dw || hh != lh || hw != lw) {
    std::ostringstream msg;
    msg << "co-registration mismatch: hsi " << shape_str(cube.hsi->shape()) << ", lidar "
        << shape_str(cube.lidar->shape()) << ", labels [" << lh << ", " << lw << ", 1]";
    throw DataError(msg.str());
  }
  cube.height = hh;
  cube.width = hw;
  for (std::int32_t v : cube.labels) {
    if (v < 0) throw DataError("labels '" + labels_path + "': negative class index");
  }
  if (!cube.hsi->all_finite()) {
    throw DataError("cube '" + hsi_path + "': non-finite values in payload");
  }
  if (!cube.lidar->all_finite()) {
    throw DataError("cube '" + lidar_path + "': non-finite values in payload");
  }
  return cube;
}

void save_cube(const SceneCube& cube, const std::string& hsi_path, const std::string& lidar_path,
               const std::string& labels_path) {
  save_raster(hsi_path, cube.hsi);
  save_raster(lidar_path, cube.lidar);
  save_labels(labels_path, cube.height, cube.width, cube.labels);
}

void convert_text_bands(const std::vector<std::string>& band_paths, const std::string& out_path,
                        bool as_labels) {
  if (band_paths.empty()) throw std::invalid_argument("convert: no band files given");
  if (as_labels && band_paths.size() != 1) {
    throw std::invalid_argument("convert: labels take exactly one band file");
  }
  std::size_t height = 0, width = 0;
  std::vector<std::vector<double>> bands;
  for (const std::string& path : band_paths) {
    std::ifstream in(path);
    if (!in) throw DataError("convert: cannot open '" + path + "'");
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(in, line)) {
      std::istringstream ls(line);
      std::size_t row_cols = 0;
      double v;
      while (ls >> v) {
        values.push_back(v);
        ++row_cols;
      }
      if (row_cols == 0) continue;  // blank line
      if (cols == 0) {
        cols = row_cols;
      } else if (row_cols != cols) {
        throw DataError("convert: '" + path + "' row " + std::to_string(rows + 1) + " has " +
                        std::to_string(row_cols) + " columns, expected " + std::to_string(cols));
      }
      ++rows;
    }
    if (rows == 0) throw DataError("convert: '" + path + "' holds no data");
    if (height == 0) {
      height = rows;
      width = cols;
    } else if (rows != height || cols != width) {
      throw DataError("convert: '" + path + "' is " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", first band was " + std::to_string(height) + "x" +
                      std::to_string(width));
    }
    bands.push_back(std::move(values));
  }
  if (as_labels) {
    std::vector<std::int32_t> labels(height * width);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double v = bands[0][i];
      const auto iv = static_cast<std::int32_t>(v);
      if (static_cast<double>(iv) != v || iv < 0) {
        throw DataError("convert: label value " + std::to_string(v) +
                        " is not a non-negative integer");
      }
      labels[i] = iv;
    }
    save_labels(out_path, height, width, labels);
    return;
  }
  const std::size_t channels = bands.size();
  auto raster = Tensor::zeros({height, width, channels});
  double* p = raster->data();
  for (std::size_t pix = 0; pix < height * width; ++pix) {
    for (std::size_t c = 0; c < channels; ++c) p[pix * channels + c] = bands[c][pix];
  }
  save_raster(out_path, raster);
}

namespace {

void normalize_raster(Tensor& raster,
                      const std::vector<std::pair<std::size_t, std::size_t>>* stat_pixels,
                      std::size_t width) {
  const std::size_t channels = raster.dim(2);
  const std::size_t positions = raster.dim(0) * raster.dim(1);
  double* p = raster.data();
  for (std::size_t c = 0; c < channels; ++c) {
    double lo = 0.0, hi = 0.0;
    bool first = true;
    auto feed = [&](double v) {
      if (first) {
        lo = hi = v;
        first = false;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    };
    if (stat_pixels) {
      for (const auto& [r, col] : *stat_pixels) feed(p[(r * width + col) * channels + c]);
    } else {
      for (std::size_t pos = 0; pos < positions; ++pos) feed(p[pos * channels + c]);
    }
    if (first || hi <= lo) {
      for (std::size_t pos = 0; pos < positions; ++pos) p[pos * channels + c] = 0.0;
      continue;
    }
    const double inv = 1.0 / (hi - lo);
    for (std::size_t pos = 0; pos < positions; ++pos) {
      double v = (p[pos * channels + c] - lo) * inv;
      p[pos * channels + c] = std::clamp(v, 0.0, 1.0);
    }
  }
}

}  // namespace

void normalize(SceneCube& cube) {
  normalize_raster(*cube.hsi, nullptr, cube.width);
  normalize_raster(*cube.lidar, nullptr, cube.width);
}

void normalize_with_stats(SceneCube& cube,
                          const std::vector<std::pair<std::size_t, std::size_t>>& stat_pixels) {
  if (stat_pixels.empty()) throw std::invalid_argument("normalize_with_stats: no pixels given");
  normalize_raster(*cube.hsi, &stat_pixels, cube.width);
  normalize_raster(*cube.lidar, &stat_pixels, cube.width);
}

PatchDataset::PatchDataset(std::shared_ptr<const SceneCube> cube, std::size_t patch_size,
                           std::vector<PatchRef> entries, std::size_t n_classes)
    : cube_(std::move(cube)),
      patch_size_(patch_size),
      entries_(std::move(entries)),
      n_classes_(n_classes) {}

namespace {

TensorPtr extract_window(const Tensor& raster, std::size_t row, std::size_t col,
                         std::size_t patch_size) {
  const std::size_t height = raster.dim(0), width = raster.dim(1), channels = raster.dim(2);
  const auto half = static_cast<std::ptrdiff_t>(patch_size / 2);
  auto out = Tensor::zeros({patch_size, patch_size, channels});
  const double* src = raster.data();
  double* dst = out->data();
  for (std::size_t pr = 0; pr < patch_size; ++pr) {
    const std::size_t sr = mirror_index(static_cast<std::ptrdiff_t>(row + pr) - half, height);
    for (std::size_t pc = 0; pc < patch_size; ++pc) {
      const std::size_t sc = mirror_index(static_cast<std::ptrdiff_t>(col + pc) - half, width);
      const double* s = src + (sr * width + sc) * channels;
      std::copy(s, s + channels, dst + (pr * patch_size + pc) * channels);
    }
  }
  return out;
}

}  // namespace

TensorPtr PatchDataset::hsi_patch(std::size_t i) const {
  const PatchRef& e = entries_[i];
  return extract_window(*cube_->hsi, e.row, e.col, patch_size_);
}

TensorPtr PatchDataset::lidar_patch(std::size_t i) const {
  const PatchRef& e = entries_[i];
  return extract_window(*cube_->lidar, e.row, e.col, patch_size_);
}

std::vector<std::size_t> PatchDataset::indices_of(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].split == split) out.push_back(i);
  }
  return out;
}

std::size_t PatchDataset::count_of(Split split) const {
  std::size_t n = 0;
  for (const PatchRef& e : entries_) {
    if (e.split == split) ++n;
  }
  return n;
}

PatchDataset extract_patches(std::shared_ptr<const SceneCube> cube, std::size_t patch_size) {
  if (patch_size % 2 == 0 || patch_size == 0) {
    throw std::invalid_argument("extract_patches: patch size must be odd, got " +
                                std::to_string(patch_size));
  }
  const std::size_t min_dim = std::min(cube->height, cube->width);
  if (patch_size >= 2 * min_dim) {
    throw std::invalid_argument("extract_patches: patch size " + std::to_string(patch_size) +
                                " too large for scene " + std::to_string(cube->height) + "x" +
                                std::to_string(cube->width));
  }
  std::vector<PatchRef> entries;
  std::uint32_t top_label = 0;
  for (std::size_t r = 0; r < cube->height; ++r) {
    for (std::size_t c = 0; c < cube->width; ++c) {
      const std::int32_t label = cube->label_at(r, c);
      if (label == 0) continue;
      const auto cls = static_cast<std::uint32_t>(label - 1);
      top_label = std::max(top_label, cls);
      entries.push_back(
          {static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c), cls, Split::Test});
    }
  }
  const std::size_t n_classes = entries.empty() ? 0 : static_cast<std::size_t>(top_label) + 1;
  return PatchDataset(std::move(cube), patch_size, std::move(entries), n_classes);
}

void split_fixed(PatchDataset& ds, const std::string& train_index_path) {
  std::ifstream in(train_index_path);
  if (!in) throw DataError("split: cannot open train index '" + train_index_path + "'");
  std::set<std::pair<std::uint32_t, std::uint32_t>> wanted;
  std::size_t row, col;
  while (in >> row >> col) {
    wanted.insert({static_cast<std::uint32_t>(row), static_cast<std::uint32_t>(col)});
  }
  if (!in.eof()) {
    throw DataError("split: malformed coordinate pair in '" + train_index_path + "'");
  }
  if (wanted.empty()) throw DataError("split: '" + train_index_path + "' lists no coordinates");
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (PatchRef& e : ds.entries()) {
    if (wanted.count({e.row, e.col})) {
      e.split = Split::Train;
      seen.insert({e.row, e.col});
    } else {
      e.split = Split::Test;
    }
  }
  if (seen.size() != wanted.size()) {
    for (const auto& [r, c] : wanted) {
      if (!seen.count({r, c})) {
        throw DataError("split: train coordinate (" + std::to_string(r) + ", " +
                        std::to_string(c) + ") has no labeled pixel");
      }
    }
  }
}

void split_per_class(PatchDataset& ds, std::size_t k_per_class, Rng& rng) {
  if (k_per_class == 0) {
    throw std::invalid_argument("split: k per class must be positive (empty train set)");
  }
  std::map<std::uint32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ds.entries()[i].split = Split::Test;
    by_class[ds.label(i)].push_back(i);
  }
  for (auto& [label, indices] : by_class) {
    if (indices.size() < k_per_class) {
      throw std::invalid_argument("split: class " + std::to_string(label + 1) + " has only " +
                                  std::to_string(indices.size()) + " labeled pixels, need " +
                                  std::to_string(k_per_class));
    }
    rng.shuffle(indices);
    for (std::size_t j = 0; j < k_per_class; ++j) {
      ds.entries()[indices[j]].split = Split::Train;
    }
  }
}

void sparsify_labels(SceneCube& cube, std::size_t keep_per_class, Rng& rng) {
  if (keep_per_class == 0) throw std::invalid_argument("sparsify_labels: keep must be positive");
  std::map<std::int32_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < cube.labels.size(); ++i) {
    if (cube.labels[i] != 0) by_class[cube.labels[i]].push_back(i);
  }
  for (auto& [label, indices] : by_class) {
    if (indices.size() <= keep_per_class) continue;
    rng.shuffle(indices);
    for (std::size_t j = keep_per_class; j < indices.size(); ++j) {
      cube.labels[indices[j]] = 0;
    }
  }
}

SceneCube synth_scene(std::size_t n_classes, std::size_t height, std::size_t width,
                      std::size_t hsi_channels, std::size_t lidar_channels, double noise_sigma,
                      Rng& rng) {
  if (n_classes == 0 || height == 0 || width == 0 || hsi_channels == 0 || lidar_channels == 0) {
    throw std::invalid_argument("synth_scene: all size parameters must be positive");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("synth_scene: noise sigma must be >= 0");

  // Distinct per-class signatures.
  std::vector<std::vector<double>> hsi_sig(n_classes, std::vector<double>(hsi_channels));
  std::vector<std::vector<double>> lidar_sig(n_classes, std::vector<double>(lidar_channels));
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (double& v : hsi_sig[c]) v = rng.uniform(0.15, 0.85);
    for (double& v : lidar_sig[c]) v = rng.uniform(0.15, 0.85);
  }
  auto push_apart = [](std::vector<double>& v, const std::vector<double>& ref) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = ref[i] > 0.5 ? ref[i] - 0.4 : ref[i] + 0.4;
    }
  };
  if (n_classes >= 2) {
    // Classes 1 and 2 are indistinguishable in HSI.
    hsi_sig[1] = hsi_sig[0];
    push_apart(lidar_sig[1], lidar_sig[0]);
  }
  if (n_classes >= 4) {
    // Classes 3 and 4 are indistinguishable in LiDAR.
    lidar_sig[3] = lidar_sig[2];
    push_apart(hsi_sig[3], hsi_sig[2]);
  }

  // Blocky label map: a grid with at least two blocks per class, classes
  // assigned round-robin over a shuffled block order.
  std::size_t grid = 1;
  while (grid * grid < 2 * n_classes) ++grid;
  std::vector<std::size_t> block_class(grid * grid);
  for (std::size_t b = 0; b < block_class.size(); ++b) block_class[b] = b % n_classes;
  rng.shuffle(block_class);

  SceneCube cube;
  cube.height = height;
  cube.width = width;
  cube.labels.assign(height * width, 0);
  cube.hsi = Tensor::zeros({height, width, hsi_channels});
  cube.lidar = Tensor::zeros({height, width, lidar_channels});
  for (std::size_t r = 0; r < height; ++r) {
    const std::size_t br = std::min(r * grid / height, grid - 1);
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t bc = std::min(c * grid / width, grid - 1);
      const std::size_t cls = block_class[br * grid + bc];
      cube.labels[r * width + c] = static_cast<std::int32_t>(cls + 1);
      double* hp = cube.hsi->data() + (r * width + c) * hsi_channels;
      for (std::size_t ch = 0; ch < hsi_channels; ++ch) {
        hp[ch] = hsi_sig[cls][ch] + (noise_sigma > 0.0 ? rng.normal(0.0, noise_sigma) : 0.0);
      }
      double* lp = cube.lidar->data() + (r * width + c) * lidar_channels;
      for (std::size_t ch = 0; ch < lidar_channels; ++ch) {
        lp[ch] = lidar_sig[cls][ch] + (noise_sigma > 0.0 ? rng.normal(0.0, noise_sigma) : 0.0);
      }
    }
  }
  return cube;
}

}  // namespace hlfusion
