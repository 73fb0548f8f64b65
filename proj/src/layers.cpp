#include "diclet/layers.hpp"

#include <cmath>
#include <string>

#include "diclet/error.hpp"

namespace diclet {
namespace {

class GradientReversal : public torch::autograd::Function<GradientReversal> {
 public:
  static torch::Tensor forward(torch::autograd::AutogradContext* ctx, const torch::Tensor& x,
                               double scale) {
    ctx->saved_data["scale"] = scale;
    return x.clone();
  }

  static torch::autograd::tensor_list backward(torch::autograd::AutogradContext* ctx,
                                               torch::autograd::tensor_list grads) {
    const double scale = ctx->saved_data["scale"].toDouble();
    return {grads[0] * -scale, torch::Tensor()};
  }
};

}  // namespace

torch::Tensor reverse_gradient(const torch::Tensor& x, double scale) {
  if (!(scale > 0.0)) throw Error("gradient reversal scale must be positive");
  return GradientReversal::apply(x, scale);
}

torch::Tensor sequence_mask(const torch::Tensor& lengths, int64_t max_len) {
  auto steps = torch::arange(max_len, lengths.options().dtype(torch::kLong));
  return steps.unsqueeze(0) < lengths.to(torch::kLong).unsqueeze(1);
}

torch::Tensor sinusoidal_encoding(int64_t length, int64_t dim, const torch::TensorOptions& opts) {
  auto pos = torch::arange(length, opts.dtype(torch::kDouble)).unsqueeze(1);
  const int64_t half = dim / 2;
  auto freq = torch::exp(torch::arange(half, opts.dtype(torch::kDouble)) *
                         (-std::log(10000.0) / std::max<int64_t>(half, 1)));
  auto angles = pos * freq.unsqueeze(0);
  auto table = torch::cat({torch::sin(angles), torch::cos(angles)}, 1);
  if (table.size(1) < dim) {
    table = torch::cat({table, torch::zeros({length, dim - table.size(1)}, table.options())}, 1);
  }
  return table.to(opts.dtype());
}

torch::Tensor gather_last(const torch::Tensor& seq, const torch::Tensor& lengths) {
  auto idx = (lengths.to(torch::kLong) - 1).clamp_min(0).view({-1, 1, 1});
  idx = idx.expand({seq.size(0), 1, seq.size(2)});
  return seq.gather(1, idx).squeeze(1);
}

SeqConvImpl::SeqConvImpl(int64_t in, int64_t out, int64_t kernel) {
  conv_ = register_module(
      "conv", torch::nn::Conv1d(torch::nn::Conv1dOptions(in, out, kernel).padding(kernel / 2)));
}

torch::Tensor SeqConvImpl::forward(const torch::Tensor& x) {
  return conv_->forward(x.transpose(1, 2)).transpose(1, 2);
}

FFTBlockImpl::FFTBlockImpl(int64_t dim, int64_t heads, int64_t hidden, int64_t kernel) {
  attention_ = register_module("attention",
                               torch::nn::MultiheadAttention(
                                   torch::nn::MultiheadAttentionOptions(dim, heads)));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  ffn_in_ = register_module("ffn_in", SeqConv(dim, hidden, kernel));
  ffn_out_ = register_module("ffn_out", SeqConv(hidden, dim, 1));
}

torch::Tensor FFTBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  // MultiheadAttention is sequence-first.
  auto seq = x.transpose(0, 1);
  auto [attended, weights] =
      attention_->forward(seq, seq, seq, /*key_padding_mask=*/mask.logical_not(),
                          /*need_weights=*/false);
  (void)weights;
  auto h = apply_mask(norm1_(x + attended.transpose(0, 1)), mask);
  auto f = ffn_out_(torch::relu(ffn_in_(h)));
  return apply_mask(norm2_(h + f), mask);
}

ConditionalLayerNormImpl::ConditionalLayerNormImpl(int64_t dim, int64_t cond_dim, double eps)
    : eps_(eps) {
  scale_ = register_module("scale", torch::nn::Linear(cond_dim, dim));
  shift_ = register_module("shift", torch::nn::Linear(cond_dim, dim));
  torch::NoGradGuard guard;
  scale_->weight.zero_();
  scale_->bias.fill_(1.0);
  shift_->weight.zero_();
  shift_->bias.zero_();
}

torch::Tensor ConditionalLayerNormImpl::normalize(const torch::Tensor& x) const {
  auto mean = x.mean(-1, true);
  auto var = (x - mean).pow(2).mean(-1, true);
  return (x - mean) / torch::sqrt(var + eps_);
}

torch::Tensor ConditionalLayerNormImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  auto gamma = scale_(cond).unsqueeze(1);
  auto beta = shift_(cond).unsqueeze(1);
  return normalize(x) * gamma + beta;
}

torch::Tensor classification_nll(const torch::Tensor& logits, const torch::Tensor& labels,
                                 const char* what) {
  const int64_t classes = logits.size(-1);
  if (labels.numel() > 0) {
    const auto lo = labels.min().item<int64_t>();
    const auto hi = labels.max().item<int64_t>();
    if (lo < 0 || hi >= classes) {
      throw Error(std::string(what) + " label out of range: got " +
                  std::to_string(lo < 0 ? lo : hi) + " with " + std::to_string(classes) +
                  " classes");
    }
  }
  auto logp = torch::log_softmax(logits, -1);
  return -logp.gather(-1, labels.to(torch::kLong).unsqueeze(-1)).squeeze(-1).mean();
}

}  // namespace diclet
