#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hlfusion/checkpoint.hpp"
#include "hlfusion/commands.hpp"
#include "hlfusion/data.hpp"
#include "hlfusion/gradcheck.hpp"
#include "hlfusion/init.hpp"
#include "hlfusion/model.hpp"
#include "hlfusion/train.hpp"

namespace py = pybind11;
using namespace hlfusion;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

TensorPtr tensor_from_array(const DoubleArray& arr, bool requires_grad) {
  Shape shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<std::size_t>(arr.shape(i));
  }
  std::vector<double> values(arr.data(), arr.data() + arr.size());
  return Tensor::from_values(std::move(shape), std::move(values), requires_grad);
}

py::array_t<double> array_from(const Shape& shape, const double* data, std::size_t n) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<double> out(dims);
  std::copy(data, data + n, out.mutable_data());
  return out;
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("split must be 'train' or 'test', got '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cross-modal HSI+LiDAR fusion classifier: differentiable tensor core, "
            "stacked cross-attention model, training loop and data pipeline";

  py::class_<Rng>(m, "Rng")
      .def(py::init<std::uint64_t>(), py::arg("seed"))
      .def("uniform", [](Rng& r) { return r.uniform(); })
      .def("normal", &Rng::normal, py::arg("mean"), py::arg("sigma"))
      .def_static("derive_seed", &Rng::derive_seed, py::arg("base"), py::arg("stream"));

  py::class_<Tensor, TensorPtr>(m, "Tensor")
      .def(py::init([](const DoubleArray& values, bool requires_grad) {
             return tensor_from_array(values, requires_grad);
           }),
           py::arg("values"), py::arg("requires_grad") = false)
      .def_property_readonly("shape", [](const Tensor& t) { return t.shape(); })
      .def_property_readonly("requires_grad", &Tensor::requires_grad)
      .def("numpy", [](const Tensor& t) { return array_from(t.shape(), t.data(), t.size()); })
      .def("grad_numpy",
           [](const Tensor& t) -> py::object {
             if (!t.requires_grad()) return py::none();
             return array_from(t.shape(), t.grad(), t.size());
           })
      .def("zero_grad", &Tensor::zero_grad)
      .def("__repr__", [](const Tensor& t) {
        return "Tensor(shape=" + shape_str(t.shape()) +
               (t.requires_grad() ? ", requires_grad=True)" : ")");
      });

  py::class_<Tape>(m, "Tape")
      .def(py::init<>())
      .def("add", &Tape::add)
      .def("scale", &Tape::scale)
      .def("relu", &Tape::relu)
      .def("reshape", &Tape::reshape)
      .def("sum", &Tape::sum)
      .def("matmul", &Tape::matmul)
      .def("matmul_nt", &Tape::matmul_nt)
      .def("dense", &Tape::dense)
      .def("conv2d_same", &Tape::conv2d_same)
      .def("layer_norm", &Tape::layer_norm, py::arg("x"), py::arg("gamma"), py::arg("beta"),
           py::arg("eps") = 1e-5)
      .def("softmax_rows", &Tape::softmax_rows)
      .def("global_avg_pool", &Tape::global_avg_pool)
      .def("concat_channels", &Tape::concat_channels)
      .def("dropout", &Tape::dropout, py::arg("x"), py::arg("rate"), py::arg("training"),
           py::arg("rng"))
      .def("cross_entropy", &Tape::cross_entropy, py::arg("probs"), py::arg("label"))
      .def("backward", &Tape::backward, py::arg("loss"), py::arg("seed") = 1.0)
      .def("clear", &Tape::clear)
      .def_property_readonly("node_count", &Tape::node_count);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("n_stacks", &ModelConfig::n_stacks)
      .def_readwrite("embed_dim", &ModelConfig::embed_dim)
      .def_readwrite("patch_size", &ModelConfig::patch_size)
      .def_readwrite("hsi_channels", &ModelConfig::hsi_channels)
      .def_readwrite("lidar_channels", &ModelConfig::lidar_channels)
      .def_readwrite("n_classes", &ModelConfig::n_classes)
      .def_readwrite("dropout_rate", &ModelConfig::dropout_rate)
      .def_readwrite("ln_eps", &ModelConfig::ln_eps)
      .def_readwrite("seed", &ModelConfig::seed)
      .def_readwrite("single_modality", &ModelConfig::single_modality)
      .def_property(
          "activation",
          [](const ModelConfig& c) { return activation_to_string(c.activation); },
          [](ModelConfig& c, const std::string& name) {
            c.activation = activation_from_string(name);
          })
      .def("validate", &ModelConfig::validate)
      .def_property_readonly("head_features", &ModelConfig::head_features);

  m.def("param_count", &param_count, py::arg("config"));

  py::class_<FusionModel>(m, "FusionModel")
      .def_static("init", &FusionModel::init, py::arg("config"))
      .def_property_readonly("config", &FusionModel::config)
      .def("named_parameters", &FusionModel::named_parameters)
      .def("zero_grad", &FusionModel::zero_grad)
      .def("parameter_total", &FusionModel::parameter_total);

  m.def("self_attention", &self_attention, py::arg("tape"), py::arg("q"), py::arg("k"));
  m.def("cross_decode", &cross_decode, py::arg("tape"), py::arg("a"), py::arg("v"));
  m.def(
      "model_forward",
      [](Tape& tape, const TensorPtr& h, const TensorPtr& l, const FusionModel& model,
         bool training, Rng& rng) { return model_forward(tape, h, l, model, training, rng); },
      py::arg("tape"), py::arg("hsi_patch"), py::arg("lidar_patch"), py::arg("model"),
      py::arg("training"), py::arg("rng"));
  m.def(
      "model_forward_traced",
      [](Tape& tape, const TensorPtr& h, const TensorPtr& l, const FusionModel& model,
         bool training, Rng& rng) {
        ForwardTrace trace;
        auto probs = model_forward(tape, h, l, model, training, rng, &trace);
        return py::make_tuple(probs, trace.attention);
      },
      py::arg("tape"), py::arg("hsi_patch"), py::arg("lidar_patch"), py::arg("model"),
      py::arg("training"), py::arg("rng"));

  m.def("glorot_init", &glorot_init, py::arg("shape"), py::arg("fan_in"), py::arg("fan_out"),
        py::arg("rng"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("adam_beta1", &TrainConfig::adam_beta1)
      .def_readwrite("adam_beta2", &TrainConfig::adam_beta2)
      .def_readwrite("adam_eps", &TrainConfig::adam_eps)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<Metrics>(m, "Metrics")
      .def_property_readonly("confusion",
                             [](const Metrics& me) {
                               const std::size_t n = me.confusion.size();
                               py::array_t<std::int64_t> out({n, n});
                               auto* p = out.mutable_data();
                               for (std::size_t r = 0; r < n; ++r) {
                                 for (std::size_t c = 0; c < n; ++c) {
                                   p[r * n + c] = static_cast<std::int64_t>(me.confusion[r][c]);
                                 }
                               }
                               return out;
                             })
      .def_readonly("overall_accuracy", &Metrics::overall_accuracy)
      .def_readonly("per_class_accuracy", &Metrics::per_class_accuracy)
      .def("text_table", &Metrics::text_table);

  py::class_<EpochStats>(m, "EpochStats")
      .def_readonly("epoch", &EpochStats::epoch)
      .def_readonly("mean_loss", &EpochStats::mean_loss)
      .def_readonly("train_oa", &EpochStats::train_oa)
      .def_readonly("test_oa", &EpochStats::test_oa);

  m.def(
      "train",
      [](FusionModel& model, const PatchDataset& ds, const TrainConfig& cfg,
         const py::object& callback, std::size_t eval_threads) {
        EpochCallback cb;
        if (!callback.is_none()) {
          cb = [callback](const EpochStats& s) { return callback(s).cast<bool>(); };
        }
        return train(model, ds, cfg, cb, eval_threads).history;
      },
      py::arg("model"), py::arg("dataset"), py::arg("config"), py::arg("callback") = py::none(),
      py::arg("eval_threads") = 1);
  m.def(
      "evaluate",
      [](const FusionModel& model, const PatchDataset& ds, const std::string& split,
         std::size_t n_threads) { return evaluate(model, ds, split_from_string(split), n_threads); },
      py::arg("model"), py::arg("dataset"), py::arg("split"), py::arg("n_threads") = 1);

  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("model"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  py::class_<SceneCube, std::shared_ptr<SceneCube>>(m, "SceneCube")
      .def_property_readonly("height", [](const SceneCube& c) { return c.height; })
      .def_property_readonly("width", [](const SceneCube& c) { return c.width; })
      .def_property_readonly("hsi", [](const SceneCube& c) {
        return array_from(c.hsi->shape(), c.hsi->data(), c.hsi->size());
      })
      .def_property_readonly("lidar", [](const SceneCube& c) {
        return array_from(c.lidar->shape(), c.lidar->data(), c.lidar->size());
      })
      .def_property_readonly("labels",
                             [](const SceneCube& c) {
                               py::array_t<std::int32_t> out({c.height, c.width});
                               std::copy(c.labels.begin(), c.labels.end(), out.mutable_data());
                               return out;
                             })
      .def_property_readonly("n_classes", &SceneCube::n_classes)
      .def_property_readonly("labeled_count", &SceneCube::labeled_count);

  m.def(
      "synth_scene",
      [](std::size_t n_classes, std::size_t height, std::size_t width, std::size_t hsi_channels,
         std::size_t lidar_channels, double noise_sigma, Rng& rng) {
        return std::make_shared<SceneCube>(
            synth_scene(n_classes, height, width, hsi_channels, lidar_channels, noise_sigma, rng));
      },
      py::arg("n_classes"), py::arg("height"), py::arg("width"), py::arg("hsi_channels"),
      py::arg("lidar_channels"), py::arg("noise_sigma"), py::arg("rng"));
  m.def("normalize", [](std::shared_ptr<SceneCube>& cube) { normalize(*cube); }, py::arg("cube"));
  m.def(
      "sparsify_labels",
      [](std::shared_ptr<SceneCube>& cube, std::size_t keep, Rng& rng) {
        sparsify_labels(*cube, keep, rng);
      },
      py::arg("cube"), py::arg("keep_per_class"), py::arg("rng"));
  m.def(
      "save_cube",
      [](const std::shared_ptr<SceneCube>& cube, const std::string& hsi, const std::string& lidar,
         const std::string& labels) { save_cube(*cube, hsi, lidar, labels); },
      py::arg("cube"), py::arg("hsi_path"), py::arg("lidar_path"), py::arg("labels_path"));
  m.def(
      "load_cube",
      [](const std::string& hsi, const std::string& lidar, const std::string& labels) {
        return std::make_shared<SceneCube>(load_cube(hsi, lidar, labels));
      },
      py::arg("hsi_path"), py::arg("lidar_path"), py::arg("labels_path"));

  py::class_<PatchDataset>(m, "PatchDataset")
      .def("__len__", &PatchDataset::size)
      .def_property_readonly("patch_size", &PatchDataset::patch_size)
      .def_property_readonly("n_classes", &PatchDataset::n_classes)
      .def("label", &PatchDataset::label, py::arg("i"))
      .def("hsi_patch",
           [](const PatchDataset& ds, std::size_t i) {
             auto t = ds.hsi_patch(i);
             return array_from(t->shape(), t->data(), t->size());
           })
      .def("lidar_patch",
           [](const PatchDataset& ds, std::size_t i) {
             auto t = ds.lidar_patch(i);
             return array_from(t->shape(), t->data(), t->size());
           })
      .def("split_of",
           [](const PatchDataset& ds, std::size_t i) {
             return ds.entry(i).split == Split::Train ? "train" : "test";
           })
      .def("position",
           [](const PatchDataset& ds, std::size_t i) {
             return py::make_tuple(ds.entry(i).row, ds.entry(i).col);
           })
      .def("indices_of",
           [](const PatchDataset& ds, const std::string& split) {
             return ds.indices_of(split_from_string(split));
           })
      .def("count_of", [](const PatchDataset& ds, const std::string& split) {
        return ds.count_of(split_from_string(split));
      });

  m.def(
      "extract_patches",
      [](const std::shared_ptr<SceneCube>& cube, std::size_t patch_size) {
        return extract_patches(cube, patch_size);
      },
      py::arg("cube"), py::arg("patch_size"));
  m.def(
      "split_per_class",
      [](PatchDataset& ds, std::size_t k, Rng& rng) { split_per_class(ds, k, rng); },
      py::arg("dataset"), py::arg("k_per_class"), py::arg("rng"));
  m.def("split_fixed", &split_fixed, py::arg("dataset"), py::arg("train_index_path"));

  py::class_<GradCheckGroup>(m, "GradCheckGroup")
      .def_readonly("name", &GradCheckGroup::name)
      .def_readonly("size", &GradCheckGroup::size)
      .def_readonly("max_rel_err", &GradCheckGroup::max_rel_err);
  py::class_<GradCheckReport>(m, "GradCheckReport")
      .def_readonly("groups", &GradCheckReport::groups)
      .def_readonly("worst", &GradCheckReport::worst)
      .def_readonly("tolerance", &GradCheckReport::tolerance)
      .def_readonly("pass_", &GradCheckReport::pass)
      .def("text", &GradCheckReport::text);
  m.def("run_gradcheck", &run_gradcheck, py::arg("config"), py::arg("batch_size"), py::arg("step"),
        py::arg("tolerance"), py::arg("seed"), py::arg("tamper") = nullptr);
}
