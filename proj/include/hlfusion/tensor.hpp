#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hlfusion/rng.hpp"

namespace hlfusion {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

/// Dense row-major 64-bit tensor. A tensor that requires grad carries a
/// same-shape gradient buffer which tape ops accumulate into during backward.
class Tensor {
 public:
  Tensor(Shape shape, bool requires_grad);

  static TensorPtr zeros(Shape shape, bool requires_grad = false);
  static TensorPtr full(Shape shape, double value, bool requires_grad = false);
  static TensorPtr from_values(Shape shape, std::vector<double> values,
                               bool requires_grad = false);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool requires_grad() const { return requires_grad_; }
  double* grad() { return grad_.data(); }
  const double* grad() const { return grad_.data(); }
  std::vector<double>& grad_values() { return grad_; }
  const std::vector<double>& grad_values() const { return grad_; }
  void zero_grad();

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;  // empty unless requires_grad_
  bool requires_grad_;
};

/// Records one backward rule per forward operation, in execution order.
/// backward() replays the rules once each, in reverse. Gradients accumulate
/// into parameter buffers until the caller zeroes them, so several losses
/// (or several samples of a batch, each on its own tape) can contribute to
/// one optimizer step.
class Tape {
 public:
  // elementwise and shape ops ------------------------------------------------
  TensorPtr add(const TensorPtr& a, const TensorPtr& b);
  TensorPtr scale(const TensorPtr& x, double factor);
  TensorPtr relu(const TensorPtr& x);
  TensorPtr tanh_act(const TensorPtr& x);
  TensorPtr reshape(const TensorPtr& x, Shape new_shape);
  TensorPtr sum(const TensorPtr& x);

  // linear algebra -----------------------------------------------------------
  TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
  /// a[m,k] * transpose(b[n,k]) -> [m,n]; avoids materializing the transpose.
  TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);
  TensorPtr dense(const TensorPtr& x, const TensorPtr& w, const TensorPtr& b);

  // neural-net ops -----------------------------------------------------------
  /// 3x3 convolution, stride 1, zero padding of one pixel, bias per output
  /// channel. x is [H,W,Cin], w is [3,3,Cin,Cout], b is [Cout].
  TensorPtr conv2d_same(const TensorPtr& x, const TensorPtr& w,
                        const TensorPtr& b);
  /// Normalizes over the channel (last) axis per position.
  TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma,
                       const TensorPtr& beta, double eps);
  TensorPtr softmax_rows(const TensorPtr& x);
  TensorPtr global_avg_pool(const TensorPtr& x);
  TensorPtr concat_channels(const std::vector<TensorPtr>& xs);
  /// Inverted dropout; exact identity (same tensor) when not training or
  /// rate == 0.
  TensorPtr dropout(const TensorPtr& x, double rate, bool training, Rng& rng);

  /// -log(probs[label]) with probs clamped at 1e-12 below.
  TensorPtr cross_entropy(const TensorPtr& probs, std::size_t label);

  /// Seeds d(loss)/d(loss) = seed and replays all recorded rules in reverse.
  /// Grad buffers of the tape's own intermediate outputs are zeroed first, so
  /// leaf (parameter) gradients accumulate cleanly across repeated calls until
  /// the caller resets them.
  void backward(const TensorPtr& loss, double seed = 1.0);

  void clear() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    std::function<void()> backward;
    TensorPtr output;
  };

  void record(const TensorPtr& output, std::function<void()> fn) {
    nodes_.push_back({std::move(fn), output});
  }

  std::vector<Node> nodes_;
};

}  // namespace hlfusion
