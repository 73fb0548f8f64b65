#pragma once

#include <vector>

#include <torch/torch.h>

#include "diclet/config.hpp"
#include "diclet/layers.hpp"

namespace diclet {

/// Reference encoder: strided 2-D convolutions over the mel, a GRU summary of
/// the downsampled frames, and a linear projection to the emotion embedding.
class ReferenceEncoderImpl : public torch::nn::Module {
 public:
  explicit ReferenceEncoderImpl(const ModelConfig& cfg);

  /// mels: (B, T, F); lengths: (B) valid frame counts -> (B, emotion_dim).
  /// Each row only sees its own valid frames, so results do not depend on batch padding.
  torch::Tensor forward(const torch::Tensor& mels, const torch::Tensor& lengths);

 private:
  std::vector<torch::nn::Conv2d> convs_;
  torch::nn::GRU gru_{nullptr};
  torch::nn::Linear projection_{nullptr};
  int64_t bands_;
};
TORCH_MODULE(ReferenceEncoder);

/// Linear + softmax classifier over embeddings, optionally behind a reversal gate.
/// The emotion and speaker classifiers share this structure.
class EmbeddingClassifierImpl : public torch::nn::Module {
 public:
  EmbeddingClassifierImpl(int64_t in, int64_t classes, bool reversed, double grl_scale);
  torch::Tensor forward(const torch::Tensor& e);

  GradientReversalGate gate;
  bool reversed() const { return reversed_; }
  torch::nn::Linear& head() { return head_; }

 private:
  bool reversed_;
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(EmbeddingClassifier);

torch::Tensor emotion_classification_loss(const torch::Tensor& logits,
                                          const torch::Tensor& emotions);

/// Pair statistics behind the orthogonal projection loss.
struct OplTerms {
  torch::Tensor loss;
  torch::Tensor same;       ///< mean cosine over same-label pairs (0 when none)
  torch::Tensor different;  ///< mean cosine over different-label pairs (0 when none)
  int64_t same_pairs = 0;
  int64_t different_pairs = 0;
};

/// L_opl = (1 - E_same) + 0.5 |E_diff| with pair means of cosine similarity.
/// A term whose pair set is empty contributes zero. Throws on a zero-norm embedding.
OplTerms orthogonal_projection_terms(const torch::Tensor& embeddings, const torch::Tensor& labels);

inline torch::Tensor orthogonal_projection_loss(const torch::Tensor& embeddings,
                                                const torch::Tensor& labels) {
  return orthogonal_projection_terms(embeddings, labels).loss;
}

inline constexpr double kEmbeddingAdversaryWeight = 0.2;
inline constexpr double kEmotionWeight = 0.8;

/// 0.2 L_sadv + 0.8 L_emo + L_opl.
template <typename T>
T edm_loss(const T& sadv, const T& emo, const T& opl) {
  return sadv * kEmbeddingAdversaryWeight + emo * kEmotionWeight + opl;
}

}  // namespace diclet
