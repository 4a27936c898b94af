#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hlfusion/rng.hpp"
#include "hlfusion/tensor.hpp"

namespace hlfusion {

enum class Activation : std::uint32_t { Rectifier = 0, Tanh = 1 };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation a);

/// Architecture hyperparameters. A config plus a seed fully determines the
/// initial parameter values.
struct ModelConfig {
  std::size_t n_stacks = 4;
  std::size_t embed_dim = 128;   // filters per filter block, width of Q/K/V
  std::size_t patch_size = 11;   // odd; center pixel carries the label
  std::size_t hsi_channels = 0;
  std::size_t lidar_channels = 0;
  std::size_t n_classes = 0;
  double dropout_rate = 0.5;
  Activation activation = Activation::Rectifier;
  double ln_eps = 1e-5;
  std::uint64_t seed = 0;
  /// Diagnostic mode: the HSI patch is fed to both streams and the second
  /// stream's stack-1 convolutions take hsi_channels inputs.
  bool single_modality = false;

  void validate() const;
  std::size_t stream_b_channels() const {
    return single_modality ? hsi_channels : lidar_channels;
  }
  /// Length of the concatenated, pooled feature vector: 2 * n_stacks * d.
  std::size_t head_features() const { return 2 * n_stacks * embed_dim; }
};

/// Conv2D -> LayerNorm -> Activation parameter set.
struct FilterBlockParams {
  TensorPtr conv_w;   // [3,3,Cin,d]
  TensorPtr conv_b;   // [d]
  TensorPtr ln_gamma; // [d]
  TensorPtr ln_beta;  // [d]
};

/// Three filter blocks per stream generate the query/key/value maps.
struct EncoderParams {
  FilterBlockParams query, key, value;
};

/// Layer-norm applied after the residual sum in the decoder's output.
struct DecoderParams {
  TensorPtr ln_gamma, ln_beta;  // [d]
};

struct StackParams {
  EncoderParams encoder_h, encoder_l;
  DecoderParams decoder_h, decoder_l;
};

/// Attention matrices captured during a forward pass, in stack order
/// (H stream then L stream per stack).
struct ForwardTrace {
  std::vector<TensorPtr> attention;
};

class FusionModel {
 public:
  /// Allocates and Glorot-initializes all parameters from config.seed.
  static FusionModel init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<StackParams>& stacks() const { return stacks_; }
  const TensorPtr& head_w() const { return head_w_; }
  const TensorPtr& head_b() const { return head_b_; }

  /// Stable name -> tensor listing; the order defines checkpoint layout and
  /// optimizer state slots.
  std::vector<std::pair<std::string, TensorPtr>> named_parameters() const;
  void zero_grad();
  std::size_t parameter_total() const;

 private:
  ModelConfig config_;
  std::vector<StackParams> stacks_;
  TensorPtr head_w_;  // [2*n_stacks*d, n_classes]
  TensorPtr head_b_;  // [n_classes]
};

/// Closed-form parameter count for a config; equals the allocated total.
std::size_t param_count(const ModelConfig& config);

TensorPtr filter_block(Tape& tape, const TensorPtr& x, const FilterBlockParams& params,
                       Activation activation, double ln_eps);

/// [p,p,d] -> [p*p,d]; token r*p+c is map position (r,c).
TensorPtr tokens(Tape& tape, const TensorPtr& x);
TensorPtr untokens(Tape& tape, const TensorPtr& x, std::size_t patch_size);

/// softmax_rows(Q * K^T / sqrt(d)); every row sums to 1.
TensorPtr self_attention(Tape& tape, const TensorPtr& q, const TensorPtr& k);

/// A * V. A must be square with rows summing to 1; each output row is a
/// convex combination of the rows of V.
TensorPtr cross_decode(Tape& tape, const TensorPtr& a, const TensorPtr& v);

/// layer_norm(x1 + x2) per token over channels.
TensorPtr cross_out(Tape& tape, const TensorPtr& x1, const TensorPtr& x2,
                    const DecoderParams& params, double ln_eps);

/// One encoder+decoder pair per stream with cross-wired values: each stream's
/// attention scores decode the other stream's value map, and the stream's own
/// query map is added back before the output layer norm.
std::pair<TensorPtr, TensorPtr> stack_forward(Tape& tape, const TensorPtr& h_in,
                                              const TensorPtr& l_in,
                                              const StackParams& params,
                                              const ModelConfig& config,
                                              ForwardTrace* trace = nullptr);

/// Full network: n_stacks stacks, both stream outputs of every stack
/// concatenated, then GAP -> dropout -> dense -> softmax.
TensorPtr model_forward(Tape& tape, const TensorPtr& h_patch, const TensorPtr& l_patch,
                        const FusionModel& model, bool training, Rng& rng,
                        ForwardTrace* trace = nullptr);

}  // namespace hlfusion
