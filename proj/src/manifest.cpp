#include "hlfusion/manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hlfusion/errors.hpp"

namespace hlfusion {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("manifest field '" + key + "': not a non-negative integer: '" +
                                value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("manifest field '" + key + "': not a number: '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("manifest field '" + key + "': expected true/false, got '" + value +
                              "'");
}

}  // namespace

std::string RunManifest::serialize() const {
  std::ostringstream out;
  out << "hsi=" << hsi << "\n";
  out << "lidar=" << lidar << "\n";
  out << "labels=" << labels << "\n";
  out << "train_idx=" << train_idx << "\n";
  out << "per_class=" << per_class << "\n";
  out << "norm=" << norm << "\n";
  out << "stacks=" << stacks << "\n";
  out << "embed=" << embed << "\n";
  out << "patch=" << patch << "\n";
  out << "dropout=" << fmt_double(dropout) << "\n";
  out << "activation=" << activation << "\n";
  out << "ln_eps=" << fmt_double(ln_eps) << "\n";
  out << "single_modality=" << (single_modality ? "true" : "false") << "\n";
  out << "lr=" << fmt_double(lr) << "\n";
  out << "epochs=" << epochs << "\n";
  out << "batch=" << batch << "\n";
  out << "beta1=" << fmt_double(beta1) << "\n";
  out << "beta2=" << fmt_double(beta2) << "\n";
  out << "adam_eps=" << fmt_double(adam_eps) << "\n";
  out << "seed=" << seed << "\n";
  out << "out=" << this->out << "\n";
  out << "dense=" << (dense ? "true" : "false") << "\n";
  return out.str();
}

RunManifest RunManifest::parse(std::istream& in) {
  RunManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                  ": expected key=value, got '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "hsi") m.hsi = value;
    else if (key == "lidar") m.lidar = value;
    else if (key == "labels") m.labels = value;
    else if (key == "train_idx") m.train_idx = value;
    else if (key == "per_class") m.per_class = parse_size(key, value);
    else if (key == "norm") m.norm = value;
    else if (key == "stacks") m.stacks = parse_size(key, value);
    else if (key == "embed") m.embed = parse_size(key, value);
    else if (key == "patch") m.patch = parse_size(key, value);
    else if (key == "dropout") m.dropout = parse_double(key, value);
    else if (key == "activation") m.activation = value;
    else if (key == "ln_eps") m.ln_eps = parse_double(key, value);
    else if (key == "single_modality") m.single_modality = parse_bool(key, value);
    else if (key == "lr") m.lr = parse_double(key, value);
    else if (key == "epochs") m.epochs = parse_size(key, value);
    else if (key == "batch") m.batch = parse_size(key, value);
    else if (key == "beta1") m.beta1 = parse_double(key, value);
    else if (key == "beta2") m.beta2 = parse_double(key, value);
    else if (key == "adam_eps") m.adam_eps = parse_double(key, value);
    else if (key == "seed") m.seed = parse_size(key, value);
    else if (key == "out") m.out = value;
    else if (key == "dense") m.dense = parse_bool(key, value);
    else throw std::invalid_argument("manifest field '" + key + "' is not recognized");
  }
  return m;
}

RunManifest RunManifest::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: cannot open '" + path + "'");
  return parse(in);
}

void RunManifest::validate_for_training() const {
  if (hsi.empty()) throw std::invalid_argument("manifest field 'hsi': path required");
  if (lidar.empty() && !single_modality) {
    throw std::invalid_argument("manifest field 'lidar': path required");
  }
  if (labels.empty()) throw std::invalid_argument("manifest field 'labels': path required");
  if (out.empty()) throw std::invalid_argument("manifest field 'out': directory required");
  if (train_idx.empty() == (per_class == 0)) {
    throw std::invalid_argument(
        "manifest fields 'train_idx'/'per_class': exactly one split spec required");
  }
  if (norm != "scene" && norm != "train") {
    throw std::invalid_argument("manifest field 'norm': expected scene or train, got '" + norm +
                                "'");
  }
  model_config(1, 1, 2).validate();  // bounds on the architecture fields
  // epochs == 0 is a valid null run (untrained checkpoint), so only validate
  // the optimizer settings when training will actually happen
  if (epochs > 0) train_config().validate();
}

ModelConfig RunManifest::model_config(std::size_t hsi_channels, std::size_t lidar_channels,
                                      std::size_t n_classes) const {
  ModelConfig c;
  c.n_stacks = stacks;
  c.embed_dim = embed;
  c.patch_size = patch;
  c.hsi_channels = hsi_channels;
  c.lidar_channels = lidar_channels;
  c.n_classes = n_classes;
  c.dropout_rate = dropout;
  c.activation = activation_from_string(activation);
  c.ln_eps = ln_eps;
  c.seed = seed;
  c.single_modality = single_modality;
  return c;
}

TrainConfig RunManifest::train_config() const {
  TrainConfig c;
  c.learning_rate = lr;
  c.epochs = epochs;
  c.batch_size = batch;
  c.adam_beta1 = beta1;
  c.adam_beta2 = beta2;
  c.adam_eps = adam_eps;
  c.seed = seed;
  return c;
}

}  // namespace hlfusion
