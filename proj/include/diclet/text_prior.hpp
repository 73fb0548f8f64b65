#pragma once

#include <span>
#include <vector>

#include <torch/torch.h>

#include "diclet/config.hpp"
#include "diclet/layers.hpp"

namespace diclet {

/// Token ids -> linguistic representation l_i (B, C, d).
/// Pre-net of three convolutions and a linear layer, sinusoidal positions,
/// self-attention blocks, and a final linear projection.
class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(const ModelConfig& cfg);

  /// tokens: (B, C) int64; mask: (B, C) bool.
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& mask);

 private:
  int64_t vocab_;
  torch::nn::Embedding embedding_{nullptr};
  std::vector<SeqConv> prenet_;
  std::vector<torch::nn::LayerNorm> prenet_norms_;
  torch::nn::Linear prenet_out_{nullptr};
  std::vector<FFTBlock> blocks_;
  torch::nn::Linear projection_{nullptr};
};
TORCH_MODULE(TextEncoder);

/// Speaker classifier on l_i: GRU summary -> gradient reversal -> linear.
/// The GRU sits upstream of the gate, so it is optimized adversarially with the encoder.
class TextSpeakerAdversaryImpl : public torch::nn::Module {
 public:
  explicit TextSpeakerAdversaryImpl(const ModelConfig& cfg);

  /// Returns (B, S) logits; lengths are the valid token counts.
  torch::Tensor forward(const torch::Tensor& l, const torch::Tensor& lengths);

  GradientReversalGate gate;
  torch::nn::GRU& gru() { return gru_; }
  torch::nn::Linear& head() { return head_; }

 private:
  torch::nn::GRU gru_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(TextSpeakerAdversary);

/// Per-position token classifier: two linear layers, softmax in the loss.
class ContentClassifierImpl : public torch::nn::Module {
 public:
  explicit ContentClassifierImpl(const ModelConfig& cfg);
  torch::Tensor forward(const torch::Tensor& l);  ///< (B, C, V) logits

 private:
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
};
TORCH_MODULE(ContentClassifier);

/// FastSpeech-style duration predictor with the emotion embedding as an extra input.
class DurationPredictorImpl : public torch::nn::Module {
 public:
  explicit DurationPredictorImpl(const ModelConfig& cfg);

  /// Raw (B, C) frame counts; padded positions are zero.
  torch::Tensor forward(const torch::Tensor& l, const torch::Tensor& emotion,
                        const torch::Tensor& mask);

 private:
  torch::nn::Linear emotion_proj_{nullptr};
  SeqConv conv1_{nullptr}, conv2_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(DurationPredictor);

/// Frame-level stack that turns length-regulated l_i into the prior mean mu_emo:
/// conv, FFT blocks each followed by a conditional layer norm on e_i, output conv.
/// With `conditioned == false` it degrades to a plain projection (no e_i input).
class EmotionalAdaptorImpl : public torch::nn::Module {
 public:
  EmotionalAdaptorImpl(const ModelConfig& cfg, bool conditioned);

  /// expanded: (B, T, d), emotion: (B, E), mask: (B, T) -> (B, T, F).
  torch::Tensor forward(const torch::Tensor& expanded, const torch::Tensor& emotion,
                        const torch::Tensor& mask);

  bool conditioned() const { return conditioned_; }
  std::vector<ConditionalLayerNorm>& norms() { return norms_; }

 private:
  bool conditioned_;
  int64_t max_frames_;
  torch::nn::Embedding positions_{nullptr};
  SeqConv conv_in_{nullptr};
  std::vector<FFTBlock> blocks_;
  std::vector<ConditionalLayerNorm> norms_;
  SeqConv conv_out_{nullptr};
};
TORCH_MODULE(EmotionalAdaptor);

/// Repeats row j of a (C, d) matrix durations[j] times, in order.
torch::Tensor length_regulate(const torch::Tensor& l, std::span<const int64_t> durations);

/// Batched form: l (B, C, d), durations (B, C) int64 with zeros on padding.
/// Returns the (B, T_max, d) expansion and the per-row frame counts.
std::pair<torch::Tensor, torch::Tensor> length_regulate_batch(const torch::Tensor& l,
                                                             const torch::Tensor& durations);

/// NLL of the speaker under the adversary; mean over the batch.
torch::Tensor speaker_adversarial_loss(const torch::Tensor& logits, const torch::Tensor& speakers);

/// Token NLL summed over valid positions, averaged over the batch.
torch::Tensor content_loss(const torch::Tensor& logits, const torch::Tensor& tokens,
                           const torch::Tensor& mask);

/// Mean squared error over valid tokens, in linear frame units.
torch::Tensor duration_loss(const torch::Tensor& predicted, const torch::Tensor& target,
                            const torch::Tensor& mask);

/// Inference-time durations: nearest integer, at least one frame.
std::vector<int64_t> round_durations(const torch::Tensor& predicted);

/// Mean squared error between the prior mean and the target mel over valid frames.
torch::Tensor prior_mel_loss(const torch::Tensor& mu, const torch::Tensor& mel,
                             const torch::Tensor& mask);

inline constexpr double kTextAdversaryWeight = 0.01;

/// L_prior = 0.01 L_ladv + L_c + L_dur + L_mel.
template <typename T>
T prior_loss(const T& ladv, const T& content, const T& duration, const T& mel) {
  return ladv * kTextAdversaryWeight + content + duration + mel;
}

}  // namespace diclet
