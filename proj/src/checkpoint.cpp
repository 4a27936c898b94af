#include "hlfusion/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hlfusion/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace hlfusion {

namespace {

constexpr char kMagic[8] = {'H', 'L', 'F', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("checkpoint: truncated file");
  return value;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw DataError("checkpoint: truncated string");
  return s;
}

void write_config(std::ostream& out, const ModelConfig& c) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.n_stacks));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.embed_dim));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.patch_size));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.hsi_channels));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.lidar_channels));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.n_classes));
  write_pod<double>(out, c.dropout_rate);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(c.activation));
  write_pod<double>(out, c.ln_eps);
  write_pod<std::uint64_t>(out, c.seed);
  write_pod<std::uint8_t>(out, c.single_modality ? 1 : 0);
}

ModelConfig read_config(std::istream& in) {
  ModelConfig c;
  c.n_stacks = read_pod<std::uint32_t>(in);
  c.embed_dim = read_pod<std::uint32_t>(in);
  c.patch_size = read_pod<std::uint32_t>(in);
  c.hsi_channels = read_pod<std::uint32_t>(in);
  c.lidar_channels = read_pod<std::uint32_t>(in);
  c.n_classes = read_pod<std::uint32_t>(in);
  c.dropout_rate = read_pod<double>(in);
  c.activation = static_cast<Activation>(read_pod<std::uint32_t>(in));
  c.ln_eps = read_pod<double>(in);
  c.seed = read_pod<std::uint64_t>(in);
  c.single_modality = read_pod<std::uint8_t>(in) != 0;
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const FusionModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_config(out, model.config());
  const auto params = model.named_parameters();
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(tensor->rank()));
    for (std::size_t d : tensor->shape()) {
      write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    out.write(reinterpret_cast<const char*>(tensor->data()),
              static_cast<std::streamsize>(tensor->size() * sizeof(double)));
  }
  if (!out) throw DataError("checkpoint: write to '" + path + "' failed");
}

FusionModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("checkpoint: bad magic in '" + path + "'");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const ModelConfig config = read_config(in);
  FusionModel model = FusionModel::init(config);
  const auto params = model.named_parameters();
  const auto count = read_pod<std::uint32_t>(in);
  if (count != params.size()) {
    throw DataError("checkpoint: expected " + std::to_string(params.size()) +
                    " parameter tensors, file has " + std::to_string(count));
  }
  for (const auto& [name, tensor] : params) {
    const std::string stored = read_string(in);
    if (stored != name) {
      throw DataError("checkpoint: parameter order mismatch, expected '" + name + "', got '" +
                      stored + "'");
    }
    const auto rank = read_pod<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = read_pod<std::uint32_t>(in);
    if (shape != tensor->shape()) {
      throw DataError("checkpoint: shape mismatch for '" + name + "': file " + shape_str(shape) +
                      " vs model " + shape_str(tensor->shape()));
    }
    in.read(reinterpret_cast<char*>(tensor->data()),
            static_cast<std::streamsize>(tensor->size() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated values for '" + name + "'");
  }
  return model;
}

}  // namespace hlfusion
