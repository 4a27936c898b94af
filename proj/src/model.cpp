#include "hlfusion/model.hpp"

#include <cmath>
#include <stdexcept>

#include "hlfusion/init.hpp"

namespace hlfusion {

TensorPtr glorot_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) {
    throw std::invalid_argument("glorot_init: fans must be positive");
  }
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  auto t = Tensor::zeros(std::move(shape), true);
  double* p = t->data();
  const std::size_t n = t->size();
  for (std::size_t i = 0; i < n; ++i) p[i] = rng.uniform(-bound, bound);
  return t;
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::Rectifier;
  if (name == "tanh") return Activation::Tanh;
  throw std::invalid_argument("unknown activation '" + name + "' (relu|tanh)");
}

std::string activation_to_string(Activation a) {
  return a == Activation::Rectifier ? "relu" : "tanh";
}

void ModelConfig::validate() const {
  if (n_stacks == 0 || n_stacks > 8) {
    throw std::invalid_argument("n_stacks must be in 1..8, got " + std::to_string(n_stacks));
  }
  if (embed_dim == 0 || embed_dim > 512) {
    throw std::invalid_argument("embed_dim must be in 1..512, got " + std::to_string(embed_dim));
  }
  if (patch_size == 0 || patch_size % 2 == 0) {
    throw std::invalid_argument("patch_size must be odd and positive, got " +
                                std::to_string(patch_size));
  }
  if (hsi_channels == 0) throw std::invalid_argument("hsi_channels must be positive");
  if (!single_modality && lidar_channels == 0) {
    throw std::invalid_argument("lidar_channels must be positive");
  }
  if (n_classes < 2) throw std::invalid_argument("n_classes must be at least 2");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout_rate must lie in [0,1)");
  }
  if (ln_eps <= 0.0) throw std::invalid_argument("ln_eps must be positive");
}

namespace {

FilterBlockParams init_filter_block(std::size_t c_in, std::size_t d, Rng& rng) {
  FilterBlockParams p;
  p.conv_w = glorot_init({3, 3, c_in, d}, 9 * c_in, 9 * d, rng);
  p.conv_b = Tensor::zeros({d}, true);
  p.ln_gamma = Tensor::full({d}, 1.0, true);
  p.ln_beta = Tensor::zeros({d}, true);
  return p;
}

EncoderParams init_encoder(std::size_t c_in, std::size_t d, Rng& rng) {
  EncoderParams e;
  e.query = init_filter_block(c_in, d, rng);
  e.key = init_filter_block(c_in, d, rng);
  e.value = init_filter_block(c_in, d, rng);
  return e;
}

DecoderParams init_decoder(std::size_t d) {
  DecoderParams p;
  p.ln_gamma = Tensor::full({d}, 1.0, true);
  p.ln_beta = Tensor::zeros({d}, true);
  return p;
}

void collect_filter_block(const std::string& prefix, const FilterBlockParams& p,
                          std::vector<std::pair<std::string, TensorPtr>>& out) {
  out.emplace_back(prefix + ".conv_w", p.conv_w);
  out.emplace_back(prefix + ".conv_b", p.conv_b);
  out.emplace_back(prefix + ".ln_gamma", p.ln_gamma);
  out.emplace_back(prefix + ".ln_beta", p.ln_beta);
}

void collect_encoder(const std::string& prefix, const EncoderParams& e,
                     std::vector<std::pair<std::string, TensorPtr>>& out) {
  collect_filter_block(prefix + ".query", e.query, out);
  collect_filter_block(prefix + ".key", e.key, out);
  collect_filter_block(prefix + ".value", e.value, out);
}

}  // namespace

FusionModel FusionModel::init(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  FusionModel model;
  model.config_ = config;
  const std::size_t d = config.embed_dim;
  for (std::size_t s = 0; s < config.n_stacks; ++s) {
    const std::size_t ch_h = s == 0 ? config.hsi_channels : d;
    const std::size_t ch_l = s == 0 ? config.stream_b_channels() : d;
    StackParams stack;
    stack.encoder_h = init_encoder(ch_h, d, rng);
    stack.encoder_l = init_encoder(ch_l, d, rng);
    stack.decoder_h = init_decoder(d);
    stack.decoder_l = init_decoder(d);
    model.stacks_.push_back(std::move(stack));
  }
  const std::size_t features = config.head_features();
  model.head_w_ = glorot_init({features, config.n_classes}, features, config.n_classes, rng);
  model.head_b_ = Tensor::zeros({config.n_classes}, true);
  return model;
}

std::vector<std::pair<std::string, TensorPtr>> FusionModel::named_parameters() const {
  std::vector<std::pair<std::string, TensorPtr>> out;
  for (std::size_t s = 0; s < stacks_.size(); ++s) {
    const std::string base = "stack" + std::to_string(s + 1);
    collect_encoder(base + ".hsi", stacks_[s].encoder_h, out);
    collect_encoder(base + ".lidar", stacks_[s].encoder_l, out);
    out.emplace_back(base + ".hsi.crossout.ln_gamma", stacks_[s].decoder_h.ln_gamma);
    out.emplace_back(base + ".hsi.crossout.ln_beta", stacks_[s].decoder_h.ln_beta);
    out.emplace_back(base + ".lidar.crossout.ln_gamma", stacks_[s].decoder_l.ln_gamma);
    out.emplace_back(base + ".lidar.crossout.ln_beta", stacks_[s].decoder_l.ln_beta);
  }
  out.emplace_back("head.dense_w", head_w_);
  out.emplace_back("head.dense_b", head_b_);
  return out;
}

void FusionModel::zero_grad() {
  for (auto& [name, tensor] : named_parameters()) {
    (void)name;
    tensor->zero_grad();
  }
}

std::size_t FusionModel::parameter_total() const {
  std::size_t total = 0;
  for (const auto& [name, tensor] : named_parameters()) {
    (void)name;
    total += tensor->size();
  }
  return total;
}

std::size_t param_count(const ModelConfig& config) {
  const std::size_t d = config.embed_dim;
  auto filter_block_size = [d](std::size_t c_in) { return 9 * c_in * d + 3 * d; };
  std::size_t total = 0;
  for (std::size_t s = 0; s < config.n_stacks; ++s) {
    const std::size_t ch_h = s == 0 ? config.hsi_channels : d;
    const std::size_t ch_l = s == 0 ? config.stream_b_channels() : d;
    total += 3 * filter_block_size(ch_h) + 3 * filter_block_size(ch_l);
    total += 4 * d;  // two cross-out layer norms
  }
  total += config.head_features() * config.n_classes + config.n_classes;
  return total;
}

TensorPtr filter_block(Tape& tape, const TensorPtr& x, const FilterBlockParams& params,
                       Activation activation, double ln_eps) {
  auto y = tape.conv2d_same(x, params.conv_w, params.conv_b);
  y = tape.layer_norm(y, params.ln_gamma, params.ln_beta, ln_eps);
  switch (activation) {
    case Activation::Rectifier:
      return tape.relu(y);
    case Activation::Tanh:
      return tape.tanh_act(y);
  }
  throw std::invalid_argument("unknown activation");
}

TensorPtr tokens(Tape& tape, const TensorPtr& x) {
  if (x->rank() != 3) {
    throw std::invalid_argument("tokens: expects [p,p,d], got " + shape_str(x->shape()));
  }
  return tape.reshape(x, {x->dim(0) * x->dim(1), x->dim(2)});
}

TensorPtr untokens(Tape& tape, const TensorPtr& x, std::size_t patch_size) {
  if (x->rank() != 2 || x->dim(0) != patch_size * patch_size) {
    throw std::invalid_argument("untokens: expects [p*p,d] with p=" + std::to_string(patch_size) +
                                ", got " + shape_str(x->shape()));
  }
  return tape.reshape(x, {patch_size, patch_size, x->dim(1)});
}

TensorPtr self_attention(Tape& tape, const TensorPtr& q, const TensorPtr& k) {
  if (q->shape() != k->shape()) {
    throw std::invalid_argument("self_attention: Q " + shape_str(q->shape()) + " and K " +
                                shape_str(k->shape()) + " must match");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q->dim(1)));
  auto scores = tape.scale(tape.matmul_nt(q, k), inv_sqrt_d);
  return tape.softmax_rows(scores);
}

TensorPtr cross_decode(Tape& tape, const TensorPtr& a, const TensorPtr& v) {
  if (a->rank() != 2 || a->dim(0) != a->dim(1)) {
    throw std::invalid_argument("cross_decode: attention must be square, got " +
                                shape_str(a->shape()));
  }
  if (v->rank() != 2 || v->dim(0) != a->dim(0)) {
    throw std::invalid_argument("cross_decode: V " + shape_str(v->shape()) +
                                " row count must equal attention size " + shape_str(a->shape()));
  }
  const std::size_t n = a->dim(0);
  const double* pa = a->data();
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += pa[r * n + c];
    if (std::abs(s - 1.0) > 1e-6) {
      throw std::invalid_argument("cross_decode: attention row " + std::to_string(r) +
                                  " sums to " + std::to_string(s) + ", expected 1");
    }
  }
  return tape.matmul(a, v);
}

TensorPtr cross_out(Tape& tape, const TensorPtr& x1, const TensorPtr& x2,
                    const DecoderParams& params, double ln_eps) {
  return tape.layer_norm(tape.add(x1, x2), params.ln_gamma, params.ln_beta, ln_eps);
}

std::pair<TensorPtr, TensorPtr> stack_forward(Tape& tape, const TensorPtr& h_in,
                                              const TensorPtr& l_in, const StackParams& params,
                                              const ModelConfig& config, ForwardTrace* trace) {
  if (h_in->dim(0) != l_in->dim(0) || h_in->dim(1) != l_in->dim(1)) {
    throw std::invalid_argument("stack_forward: streams must agree spatially, got " +
                                shape_str(h_in->shape()) + " vs " + shape_str(l_in->shape()));
  }
  const std::size_t p = h_in->dim(0);
  const Activation act = config.activation;
  const double eps = config.ln_eps;

  auto q_h = tokens(tape, filter_block(tape, h_in, params.encoder_h.query, act, eps));
  auto k_h = tokens(tape, filter_block(tape, h_in, params.encoder_h.key, act, eps));
  auto v_h = tokens(tape, filter_block(tape, h_in, params.encoder_h.value, act, eps));
  auto q_l = tokens(tape, filter_block(tape, l_in, params.encoder_l.query, act, eps));
  auto k_l = tokens(tape, filter_block(tape, l_in, params.encoder_l.key, act, eps));
  auto v_l = tokens(tape, filter_block(tape, l_in, params.encoder_l.value, act, eps));

  auto attn_h = self_attention(tape, q_h, k_h);
  auto attn_l = self_attention(tape, q_l, k_l);
  if (trace) {
    trace->attention.push_back(attn_h);
    trace->attention.push_back(attn_l);
  }

  // Cross wiring: each stream's scores decode the other stream's values.
  auto decoded_h = cross_decode(tape, attn_h, v_l);
  auto decoded_l = cross_decode(tape, attn_l, v_h);

  auto h_out = untokens(tape, cross_out(tape, decoded_h, q_h, params.decoder_h, eps), p);
  auto l_out = untokens(tape, cross_out(tape, decoded_l, q_l, params.decoder_l, eps), p);
  return {h_out, l_out};
}

TensorPtr model_forward(Tape& tape, const TensorPtr& h_patch, const TensorPtr& l_patch,
                        const FusionModel& model, bool training, Rng& rng, ForwardTrace* trace) {
  const ModelConfig& cfg = model.config();
  const TensorPtr& stream_b = cfg.single_modality ? h_patch : l_patch;
  const std::size_t p = cfg.patch_size;
  if (h_patch->rank() != 3 || h_patch->dim(0) != p || h_patch->dim(1) != p ||
      h_patch->dim(2) != cfg.hsi_channels) {
    throw std::invalid_argument("model_forward: HSI patch " + shape_str(h_patch->shape()) +
                                " does not match config");
  }
  if (stream_b->rank() != 3 || stream_b->dim(0) != p || stream_b->dim(1) != p ||
      stream_b->dim(2) != cfg.stream_b_channels()) {
    throw std::invalid_argument("model_forward: second-stream patch " +
                                shape_str(stream_b->shape()) + " does not match config");
  }

  TensorPtr h = h_patch;
  TensorPtr l = stream_b;
  std::vector<TensorPtr> stack_outputs;
  stack_outputs.reserve(2 * cfg.n_stacks);
  for (const StackParams& stack : model.stacks()) {
    auto [h_out, l_out] = stack_forward(tape, h, l, stack, cfg, trace);
    stack_outputs.push_back(h_out);
    stack_outputs.push_back(l_out);
    h = h_out;
    l = l_out;
  }

  auto features = tape.global_avg_pool(tape.concat_channels(stack_outputs));
  features = tape.dropout(features, cfg.dropout_rate, training, rng);
  auto logits = tape.dense(features, model.head_w(), model.head_b());
  auto probs = tape.softmax_rows(tape.reshape(logits, {1, cfg.n_classes}));
  return tape.reshape(probs, {cfg.n_classes});
}

}  // namespace hlfusion
