#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hlfusion/data.hpp"
#include "hlfusion/model.hpp"

namespace hlfusion {

struct TrainConfig {
  double learning_rate = 5e-6;
  std::size_t epochs = 500;
  std::size_t batch_size = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Confusion matrix with derived accuracies. Rows are true classes, columns
/// predictions; per-class accuracy is the diagonal over the row sum.
struct Metrics {
  std::vector<std::vector<std::size_t>> confusion;
  double overall_accuracy = 0.0;
  std::vector<double> per_class_accuracy;

  std::size_t total() const;
  /// Per-class rows plus an OA row, percentages with 2 decimals.
  std::string text_table() const;
};

/// First/second moment buffers per parameter, in named_parameters order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  static AdamState init_for(const FusionModel& model);
};

/// One bias-corrected Adam update. step_index starts at 1.
void adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state,
               std::size_t step_index, const TrainConfig& cfg);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double train_oa = 0.0;
  double test_oa = 0.0;  // NaN when the test split is empty
};

/// Return true to stop training after the current epoch.
using EpochCallback = std::function<bool(const EpochStats&)>;

struct TrainResult {
  std::vector<EpochStats> history;
};

/// Shuffled mini-batch training: forward, mean cross-entropy over the batch,
/// backward, Adam step, gradient reset. Deterministic given (seed, data,
/// config). Throws NumericError naming the batch if the loss goes non-finite.
TrainResult train(FusionModel& model, const PatchDataset& dataset, const TrainConfig& cfg,
                  const EpochCallback& callback = {}, std::size_t eval_threads = 1);

/// Argmax predictions in inference mode (dropout off) over one split.
Metrics evaluate(const FusionModel& model, const PatchDataset& dataset, Split split,
                 std::size_t n_threads = 1);
Metrics evaluate_indices(const FusionModel& model, const PatchDataset& dataset,
                         const std::vector<std::size_t>& indices, std::size_t n_threads = 1);

/// Predicted class (0-based) per dataset index, inference mode.
std::vector<std::uint32_t> predict(const FusionModel& model, const PatchDataset& dataset,
                                   const std::vector<std::size_t>& indices,
                                   std::size_t n_threads = 1);

/// One comma-separated line per epoch: epoch,mean_loss,train_OA,test_OA.
std::string history_lines(const std::vector<EpochStats>& history);
void write_history(const std::string& path, const std::vector<EpochStats>& history);

}  // namespace hlfusion
