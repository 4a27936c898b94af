#include "hlfusion/gradcheck.hpp"

#include <cmath>
#include <cstdio>

namespace hlfusion {

std::string GradCheckReport::text() const {
  std::string out;
  char line[160];
  for (const GradCheckGroup& g : groups) {
    std::snprintf(line, sizeof(line), "%-34s size %-6zu max rel err %.3e %s\n", g.name.c_str(),
                  g.size, g.max_rel_err, g.max_rel_err < tolerance ? "ok" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof(line), "worst %.3e tolerance %.1e -> %s\n", worst, tolerance,
                pass ? "PASS" : "FAIL");
  out += line;
  return out;
}

GradCheckReport run_gradcheck(const ModelConfig& config, std::size_t batch_size, double step,
                              double tolerance, std::uint64_t seed, const GradTamper& tamper) {
  config.validate();
  if (batch_size == 0) throw std::invalid_argument("gradcheck: batch must be positive");
  if (step <= 0.0 || tolerance <= 0.0) {
    throw std::invalid_argument("gradcheck: step and tolerance must be positive");
  }

  FusionModel model = FusionModel::init(config);
  const auto params = model.named_parameters();

  // Random batch. Inference mode keeps dropout out of the differentiated path.
  Rng rng(Rng::derive_seed(seed, 17));
  const std::size_t p = config.patch_size;
  std::vector<TensorPtr> hsi, lidar;
  std::vector<std::size_t> labels;
  for (std::size_t s = 0; s < batch_size; ++s) {
    auto h = Tensor::zeros({p, p, config.hsi_channels});
    for (double& v : h->values()) v = rng.uniform();
    auto l = Tensor::zeros({p, p, config.stream_b_channels()});
    for (double& v : l->values()) v = rng.uniform();
    hsi.push_back(h);
    lidar.push_back(l);
    labels.push_back(rng.uniform_index(config.n_classes));
  }

  Rng unused(0);
  auto batch_loss = [&]() {
    double sum = 0.0;
    for (std::size_t s = 0; s < batch_size; ++s) {
      Tape tape;
      auto probs = model_forward(tape, hsi[s], lidar[s], model, false, unused);
      sum += tape.cross_entropy(probs, labels[s])->data()[0];
    }
    return sum / static_cast<double>(batch_size);
  };

  // Analytic gradients of the mean batch loss.
  model.zero_grad();
  const double inv_batch = 1.0 / static_cast<double>(batch_size);
  for (std::size_t s = 0; s < batch_size; ++s) {
    Tape tape;
    auto probs = model_forward(tape, hsi[s], lidar[s], model, false, unused);
    auto loss = tape.cross_entropy(probs, labels[s]);
    tape.backward(loss, inv_batch);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, tensor] : params) {
    analytic.push_back(tensor->grad_values());
    if (tamper) tamper(name, analytic.back());
  }

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = *params[pi].second;
    GradCheckGroup group;
    group.name = params[pi].first;
    group.size = t.size();
    double* value = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = batch_loss();
      value[i] = saved - step;
      const double down = batch_loss();
      value[i] = saved;
      const double fd = (up - down) / (2.0 * step);
      const double rel = std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
      group.max_rel_err = std::max(group.max_rel_err, rel);
    }
    report.worst = std::max(report.worst, group.max_rel_err);
    report.groups.push_back(std::move(group));
  }
  report.pass = report.worst < tolerance;
  model.zero_grad();
  return report;
}

}  // namespace hlfusion
