#include "hlfusion/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "hlfusion/errors.hpp"

namespace hlfusion {

void TrainConfig::validate() const {
  if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (adam_beta1 <= 0.0 || adam_beta1 >= 1.0 || adam_beta2 <= 0.0 || adam_beta2 >= 1.0) {
    throw std::invalid_argument("adam betas must lie in (0,1)");
  }
  if (adam_eps <= 0.0) throw std::invalid_argument("adam_eps must be positive");
}

std::size_t Metrics::total() const {
  std::size_t n = 0;
  for (const auto& row : confusion) {
    for (std::size_t v : row) n += v;
  }
  return n;
}

std::string Metrics::text_table() const {
  std::string out = "Class  Accuracy (%)\n";
  char line[64];
  for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) {
    std::snprintf(line, sizeof(line), "%-6zu %.2f\n", c + 1, 100.0 * per_class_accuracy[c]);
    out += line;
  }
  std::snprintf(line, sizeof(line), "%-6s %.2f\n", "OA", 100.0 * overall_accuracy);
  out += line;
  return out;
}

AdamState AdamState::init_for(const FusionModel& model) {
  AdamState state;
  for (const auto& [name, tensor] : model.named_parameters()) {
    (void)name;
    state.m.emplace_back(tensor->size(), 0.0);
    state.v.emplace_back(tensor->size(), 0.0);
  }
  return state;
}

void adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state,
               std::size_t step_index, const TrainConfig& cfg) {
  if (step_index < 1) {
    throw std::invalid_argument("adam_step: step index must be >= 1 (bias correction)");
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("adam_step: state does not match parameter list");
  }
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_index));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_index));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].second;
    const double* g = t.grad();
    double* value = t.data();
    double* m = state.m[pi].data();
    double* v = state.v[pi].data();
    const std::size_t n = t.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace {

Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  Metrics m;
  m.confusion = std::move(confusion);
  const std::size_t n_classes = m.confusion.size();
  m.per_class_accuracy.assign(n_classes, 0.0);
  std::size_t correct = 0, total = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::size_t row = 0;
    for (std::size_t p = 0; p < n_classes; ++p) row += m.confusion[c][p];
    correct += m.confusion[c][c];
    total += row;
    m.per_class_accuracy[c] =
        row == 0 ? 0.0 : static_cast<double>(m.confusion[c][c]) / static_cast<double>(row);
  }
  m.overall_accuracy = total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
  return m;
}

std::uint32_t predict_one(const FusionModel& model, const PatchDataset& ds, std::size_t index) {
  Tape tape;
  Rng unused(0);
  auto probs =
      model_forward(tape, ds.hsi_patch(index), ds.lidar_patch(index), model, false, unused);
  const double* p = probs->data();
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs->size(); ++c) {
    if (p[c] > p[best]) best = c;
  }
  return static_cast<std::uint32_t>(best);
}

}  // namespace

std::vector<std::uint32_t> predict(const FusionModel& model, const PatchDataset& dataset,
                                   const std::vector<std::size_t>& indices,
                                   std::size_t n_threads) {
  std::vector<std::uint32_t> out(indices.size(), 0);
  if (n_threads <= 1 || indices.size() < 2 * n_threads) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      out[i] = predict_one(model, dataset, indices[i]);
    }
    return out;
  }
  // Model parameters are read-only here; each worker runs its own tapes.
  std::vector<std::thread> workers;
  const std::size_t chunk = (indices.size() + n_threads - 1) / n_threads;
  for (std::size_t w = 0; w < n_threads; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(indices.size(), lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) out[i] = predict_one(model, dataset, indices[i]);
    });
  }
  for (auto& t : workers) t.join();
  return out;
}

Metrics evaluate_indices(const FusionModel& model, const PatchDataset& dataset,
                         const std::vector<std::size_t>& indices, std::size_t n_threads) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty split");
  const std::size_t n_classes = model.config().n_classes;
  std::vector<std::vector<std::size_t>> confusion(n_classes,
                                                  std::vector<std::size_t>(n_classes, 0));
  const auto predictions = predict(model, dataset, indices, n_threads);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::uint32_t truth = dataset.label(indices[i]);
    if (truth >= n_classes) {
      throw std::invalid_argument("evaluate: label " + std::to_string(truth + 1) +
                                  " exceeds model class count " + std::to_string(n_classes));
    }
    confusion[truth][predictions[i]] += 1;
  }
  Metrics m = metrics_from_confusion(std::move(confusion));
  // OA == trace/sum by construction; guard the identity anyway.
  std::size_t trace = 0;
  for (std::size_t c = 0; c < n_classes; ++c) trace += m.confusion[c][c];
  if (m.total() != indices.size() ||
      m.overall_accuracy != static_cast<double>(trace) / static_cast<double>(m.total())) {
    throw NumericError("evaluate: confusion matrix is inconsistent");
  }
  return m;
}

Metrics evaluate(const FusionModel& model, const PatchDataset& dataset, Split split,
                 std::size_t n_threads) {
  return evaluate_indices(model, dataset, dataset.indices_of(split), n_threads);
}

TrainResult train(FusionModel& model, const PatchDataset& dataset, const TrainConfig& cfg,
                  const EpochCallback& callback, std::size_t eval_threads) {
  cfg.validate();
  const auto train_indices = dataset.indices_of(Split::Train);
  if (train_indices.empty()) throw std::invalid_argument("train: empty training split");
  if (dataset.patch_size() != model.config().patch_size ||
      dataset.cube().hsi_channels() != model.config().hsi_channels ||
      (!model.config().single_modality &&
       dataset.cube().lidar_channels() != model.config().lidar_channels)) {
    throw std::invalid_argument("train: dataset shapes do not match model config");
  }

  Rng rng(cfg.seed);
  auto params = model.named_parameters();
  AdamState adam = AdamState::init_for(model);
  const bool has_test = dataset.count_of(Split::Test) > 0;

  TrainResult result;
  std::vector<std::size_t> order(train_indices);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      model.zero_grad();
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        Tape tape;
        auto probs =
            model_forward(tape, dataset.hsi_patch(idx), dataset.lidar_patch(idx), model, true, rng);
        auto loss = tape.cross_entropy(probs, dataset.label(idx));
        const double value = loss->data()[0];
        if (!std::isfinite(value)) {
          const PatchRef& e = dataset.entry(idx);
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             ", batch " + std::to_string(start / cfg.batch_size + 1) +
                             ", sample (" + std::to_string(e.row) + ", " + std::to_string(e.col) +
                             ")");
        }
        loss_sum += value;
        tape.backward(loss, inv_batch);
      }
      adam_step(params, adam, ++step, cfg);
    }
    model.zero_grad();

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / static_cast<double>(order.size());
    stats.train_oa = evaluate(model, dataset, Split::Train, eval_threads).overall_accuracy;
    stats.test_oa = has_test
                        ? evaluate(model, dataset, Split::Test, eval_threads).overall_accuracy
                        : std::nan("");
    result.history.push_back(stats);
    if (callback && callback(stats)) break;
  }
  return result;
}

std::string history_lines(const std::vector<EpochStats>& history) {
  std::string out;
  char line[128];
  for (const EpochStats& s : history) {
    std::snprintf(line, sizeof(line), "%zu,%.12g,%.10g,%.10g\n", s.epoch, s.mean_loss, s.train_oa,
                  s.test_oa);
    out += line;
  }
  return out;
}

void write_history(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("history: cannot open '" + path + "' for writing");
  out << history_lines(history);
  if (!out) throw DataError("history: write to '" + path + "' failed");
}

}  // namespace hlfusion
