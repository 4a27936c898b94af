#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hlfusion/model.hpp"

namespace hlfusion {

struct GradCheckGroup {
  std::string name;
  std::size_t size = 0;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;  // one per parameter tensor
  double worst = 0.0;
  double tolerance = 0.0;
  bool pass = false;

  std::string text() const;
};

/// Test hook: mutates the analytic gradient of the named group before
/// comparison, standing in for a corrupted backward rule.
using GradTamper = std::function<void(const std::string& name, std::vector<double>& grad)>;

/// Compares every parameter gradient of the mean batch cross-entropy against
/// central finite differences (relative error |ad-fd|/max(1,|fd|)). The batch
/// is random patches drawn from the seed; inference mode, so the loss path is
/// deterministic.
GradCheckReport run_gradcheck(const ModelConfig& config, std::size_t batch_size, double step,
                              double tolerance, std::uint64_t seed,
                              const GradTamper& tamper = {});

}  // namespace hlfusion
