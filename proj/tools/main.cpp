#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hlfusion/commands.hpp"
#include "hlfusion/errors.hpp"

namespace {

using hlfusion::RunManifest;

void add_data_flags(CLI::App* cmd, RunManifest& m) {
  cmd->add_option("--hsi", m.hsi, "HSI raster cube file");
  cmd->add_option("--lidar", m.lidar, "LiDAR raster cube file");
  cmd->add_option("--labels", m.labels, "label cube file (int32, one channel)");
  cmd->add_option("--train-idx", m.train_idx, "file of 'row col' training coordinates");
  cmd->add_option("--per-class", m.per_class, "draw K training pixels per class");
  cmd->add_option("--norm", m.norm, "min-max statistics source: scene|train");
}

void add_model_flags(CLI::App* cmd, RunManifest& m) {
  cmd->add_option("--stacks", m.stacks, "number of encoder-decoder stacks");
  cmd->add_option("--embed", m.embed, "filters per filter block (embedding size)");
  cmd->add_option("--patch", m.patch, "square patch size (odd)");
  cmd->add_option("--dropout", m.dropout, "dropout rate before the class projection");
  cmd->add_option("--activation", m.activation, "filter block activation: relu|tanh");
  cmd->add_option("--ln-eps", m.ln_eps, "layer norm epsilon");
  cmd->add_flag("--single-modality", m.single_modality,
                "feed the HSI patch to both streams (diagnostic baseline)");
}

void add_train_flags(CLI::App* cmd, RunManifest& m) {
  cmd->add_option("--lr", m.lr, "Adam learning rate");
  cmd->add_option("--epochs", m.epochs, "training epochs");
  cmd->add_option("--batch", m.batch, "mini-batch size");
  cmd->add_option("--seed", m.seed, "run seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal HSI+LiDAR fusion classifier"};
  app.require_subcommand(1);

  RunManifest manifest;
  std::string manifest_path, checkpoint, split = "all", map_out, axis, out_path;
  std::vector<std::size_t> values;
  std::vector<std::string> band_paths;
  bool as_labels = false;
  std::size_t jobs = 1;
  hlfusion::GradcheckOptions gopt;
  hlfusion::SynthOptions sopt;

  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("--manifest", manifest_path, "load settings from a manifest file first");
  add_data_flags(train, manifest);
  add_model_flags(train, manifest);
  add_train_flags(train, manifest);
  train->add_option("--out", manifest.out, "output directory")->required(false);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a scene");
  eval->add_option("--ckpt", checkpoint, "checkpoint file")->required();
  add_data_flags(eval, manifest);
  eval->add_option("--split", split, "which split to score: train|test|all");
  eval->add_option("--seed", manifest.seed, "seed (for --per-class splits)");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  gradcheck->add_option("--stacks", gopt.stacks, "stacks");
  gradcheck->add_option("--embed", gopt.embed, "embedding size");
  gradcheck->add_option("--patch", gopt.patch, "patch size");
  gradcheck->add_option("--hsi-channels", gopt.hsi_channels, "HSI channel count");
  gradcheck->add_option("--lidar-channels", gopt.lidar_channels, "LiDAR channel count");
  gradcheck->add_option("--classes", gopt.n_classes, "class count");
  gradcheck->add_option("--batch", gopt.batch, "batch size");
  gradcheck->add_option("--step", gopt.step, "central difference step");
  gradcheck->add_option("--tol", gopt.tolerance, "pass threshold on relative error");
  gradcheck->add_option("--seed", gopt.seed, "seed");

  CLI::App* ablate = app.add_subcommand("ablate", "sweep stacks or embedding size");
  ablate->add_option("--axis", axis, "stacks|embed")->required();
  ablate->add_option("--values", values, "axis values to train")->required()->delimiter(',');
  ablate->add_option("--jobs", jobs, "parallel trainings");
  ablate->add_option("--manifest", manifest_path, "base manifest file");
  add_data_flags(ablate, manifest);
  add_model_flags(ablate, manifest);
  add_train_flags(ablate, manifest);
  ablate->add_option("--out", manifest.out, "output directory");

  CLI::App* map = app.add_subcommand("map", "emit a classification map image");
  map->add_option("--ckpt", checkpoint, "checkpoint file")->required();
  add_data_flags(map, manifest);
  map->add_option("--out", map_out, "output PPM path")->required();
  map->add_flag("--dense", manifest.dense, "predict every pixel, not only labeled ones");
  map->add_option("--seed", manifest.seed, "seed (for --per-class splits)");

  CLI::App* convert = app.add_subcommand("convert", "text matrices -> cube container");
  convert->add_option("--band", band_paths, "text matrix file, repeatable, one per band")
      ->required();
  convert->add_option("--out", out_path, "output cube path")->required();
  convert->add_flag("--labels", as_labels, "write int32 labels instead of float64 bands");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic verification scene");
  synth->add_option("--classes", sopt.n_classes, "class count");
  synth->add_option("--height", sopt.height, "scene height");
  synth->add_option("--width", sopt.width, "scene width");
  synth->add_option("--hsi-channels", sopt.hsi_channels, "HSI bands");
  synth->add_option("--lidar-channels", sopt.lidar_channels, "LiDAR channels");
  synth->add_option("--sigma", sopt.noise_sigma, "per-pixel Gaussian noise");
  synth->add_option("--keep-per-class", sopt.keep_per_class,
                    "keep only K labeled pixels per class");
  synth->add_option("--seed", sopt.seed, "seed");
  synth->add_option("--out", sopt.out_dir, "output directory")->required();

  try {
    // Flags given on the command line override manifest file values, so parse
    // the manifest first and re-parse argv on top of it.
    app.parse(argc, argv);
    if (!manifest_path.empty()) {
      RunManifest base = RunManifest::parse_file(manifest_path);
      std::string preserved_out = manifest.out;
      manifest = base;
      app.clear();
      app.parse(argc, argv);
      if (manifest.out.empty()) manifest.out = preserved_out;
    }

    if (*train) return hlfusion::cmd_train(manifest);
    if (*eval) return hlfusion::cmd_eval(checkpoint, manifest, split);
    if (*gradcheck) return hlfusion::cmd_gradcheck(gopt);
    if (*ablate) return hlfusion::cmd_ablate(axis, values, manifest, jobs);
    if (*map) return hlfusion::cmd_map(checkpoint, manifest, map_out);
    if (*convert) return hlfusion::cmd_convert(band_paths, out_path, as_labels);
    if (*synth) return hlfusion::cmd_synth(sopt);
    return hlfusion::kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : hlfusion::kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return hlfusion::kExitUsage;
  } catch (const hlfusion::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return hlfusion::kExitData;
  } catch (const hlfusion::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return hlfusion::kExitNumeric;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
