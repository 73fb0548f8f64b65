#pragma once

#include <torch/torch.h>

namespace diclet {

/// Identity on the forward pass; multiplies incoming gradients by -scale.
torch::Tensor reverse_gradient(const torch::Tensor& x, double scale);

/// Gradient reversal gate. With `enabled == false` it is a plain identity, which
/// is what the sign-flip checks compare against.
struct GradientReversalGate {
  double scale = 1.0;
  bool enabled = true;

  torch::Tensor operator()(const torch::Tensor& x) const {
    return enabled ? reverse_gradient(x, scale) : x;
  }
};

/// (B, T) boolean mask, true on valid positions.
torch::Tensor sequence_mask(const torch::Tensor& lengths, int64_t max_len);

/// (T, dim) sinusoidal table.
torch::Tensor sinusoidal_encoding(int64_t length, int64_t dim, const torch::TensorOptions& opts);

/// Picks `seq[b, lengths[b] - 1]` for every batch row; seq is (B, T, H).
torch::Tensor gather_last(const torch::Tensor& seq, const torch::Tensor& lengths);

/// Multiplies a (B, T, C) sequence by its (B, T) mask.
inline torch::Tensor apply_mask(const torch::Tensor& x, const torch::Tensor& mask) {
  return x * mask.unsqueeze(-1).to(x.dtype());
}

/// 1-D convolution over a (B, T, C) sequence with "same" padding.
class SeqConvImpl : public torch::nn::Module {
 public:
  SeqConvImpl(int64_t in, int64_t out, int64_t kernel);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv1d conv_{nullptr};
};
TORCH_MODULE(SeqConv);

/// Post-LN feed-forward transformer block: self-attention then a conv FFN.
class FFTBlockImpl : public torch::nn::Module {
 public:
  FFTBlockImpl(int64_t dim, int64_t heads, int64_t hidden, int64_t kernel);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

 private:
  torch::nn::MultiheadAttention attention_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  SeqConv ffn_in_{nullptr}, ffn_out_{nullptr};
};
TORCH_MODULE(FFTBlock);

/// Layer norm whose scale and shift are affine projections of a condition vector.
/// Scale starts at 1 and shift at 0, so an untrained layer is a plain layer norm.
class ConditionalLayerNormImpl : public torch::nn::Module {
 public:
  ConditionalLayerNormImpl(int64_t dim, int64_t cond_dim, double eps = 1e-5);

  /// x: (B, T, dim), cond: (B, cond_dim).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  /// Row-wise zero-mean, unit-variance normalization alone.
  torch::Tensor normalize(const torch::Tensor& x) const;

  torch::nn::Linear& scale_projection() { return scale_; }
  torch::nn::Linear& shift_projection() { return shift_; }

 private:
  double eps_;
  torch::nn::Linear scale_{nullptr}, shift_{nullptr};
};
TORCH_MODULE(ConditionalLayerNorm);

/// Mean negative log-likelihood of `labels` under softmax(`logits`); checks label range.
torch::Tensor classification_nll(const torch::Tensor& logits, const torch::Tensor& labels,
                                 const char* what);

}  // namespace diclet
