#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "diclet/config.hpp"
#include "diclet/corpus.hpp"
#include "diclet/diffusion.hpp"
#include "diclet/op_edm.hpp"
#include "diclet/text_prior.hpp"

namespace diclet {

/// Padded mini-batch of utterances with their mels.
struct Batch {
  torch::Tensor tokens;         ///< (B, C) int64
  torch::Tensor token_mask;     ///< (B, C) bool
  torch::Tensor token_lengths;  ///< (B) int64
  torch::Tensor durations;      ///< (B, C) int64, zero on padding
  torch::Tensor mels;           ///< (B, T, F) float
  torch::Tensor frame_mask;     ///< (B, T) bool
  torch::Tensor frame_lengths;  ///< (B) int64
  torch::Tensor speakers;       ///< (B) int64
  torch::Tensor emotions;       ///< (B) int64
  std::vector<std::string> ids;

  int64_t size() const { return tokens.size(0); }
};

Batch make_batch(const std::vector<const Utterance*>& utterances,
                 const std::vector<MelSpectrum>& mels);

/// Pads a list of mels into (B, T, F) plus their lengths.
std::pair<torch::Tensor, torch::Tensor> stack_mels(const std::vector<MelSpectrum>& mels);

torch::Tensor mel_to_tensor(const MelSpectrum& mel);  ///< (T, F)
MelSpectrum tensor_to_mel(const torch::Tensor& values);

/// Every component loss of one step as a double-precision scalar tensor.
/// Weighted sums are formed in double so that logged components recompose exactly.
struct LossTerms {
  torch::Tensor ladv, content, duration, mel, prior;
  torch::Tensor sadv, emo, opl, opedm;
  torch::Tensor diff;
  torch::Tensor total;
};

/// Plain-number copy of LossTerms, as written to the metrics stream.
struct LossBreakdown {
  int64_t step = 0;
  double ladv = 0, content = 0, duration = 0, mel = 0, prior = 0;
  double sadv = 0, emo = 0, opl = 0, opedm = 0;
  double diff = 0, total = 0;

  static LossBreakdown from(const LossTerms& terms, int64_t step);
  bool all_finite() const;
  std::string describe() const;
  bool operator==(const LossBreakdown&) const = default;
};

void to_json(json& j, const LossBreakdown& b);
void from_json(const json& j, LossBreakdown& b);

/// Options that change how a training batch is consumed, not the architecture.
struct StepOptions {
  double t_epsilon = 1e-3;
  /// Random decoder crop length in frames; 0 keeps whole utterances.
  int decoder_segment = 0;
  /// Fixed diffusion times, one per row (tests only).
  std::optional<torch::Tensor> fixed_t;
};

class DicletModelImpl : public torch::nn::Module {
 public:
  DicletModelImpl(const ModelConfig& cfg, const Ablations& ablations);

  const ModelConfig& config() const { return cfg_; }
  const Ablations& ablations() const { return ablations_; }

  /// Emotion embeddings e_i (B, E) of reference mels.
  torch::Tensor embed_reference(const torch::Tensor& mels, const torch::Tensor& lengths);
  torch::Tensor embed_reference(const MelSpectrum& mel);

  /// Prior mean mu_emo for ground-truth durations: (B, T, F) and frame mask.
  torch::Tensor prior_mean(const torch::Tensor& l, const torch::Tensor& durations,
                           const torch::Tensor& emotion, torch::Tensor* frame_mask = nullptr);

  /// All losses of the joint objective for one batch.
  LossTerms compute_losses(const Batch& batch, const DiffusionSchedule& schedule,
                           torch::Generator& gen, const StepOptions& options);

  /// Inference for one utterance: text -> durations -> prior -> reverse ODE.
  /// `emotion` is a (E) or (1, E) embedding.
  torch::Tensor synthesize(const std::vector<int64_t>& tokens, int64_t speaker,
                           const torch::Tensor& emotion, const DiffusionSchedule& schedule,
                           int n_steps, torch::Generator& gen, double temperature = 1.0,
                           std::vector<int64_t>* durations_out = nullptr);

  /// Score estimate for a batch; the decoder sees speaker look-up rows and e_i.
  torch::Tensor score(const torch::Tensor& xt, const torch::Tensor& mu, const torch::Tensor& mask,
                      const torch::Tensor& t, const torch::Tensor& speakers,
                      const torch::Tensor& emotion);

  TextEncoder text_encoder{nullptr};
  TextSpeakerAdversary text_adversary{nullptr};
  ContentClassifier content_classifier{nullptr};
  DurationPredictor duration_predictor{nullptr};
  EmotionalAdaptor adaptor{nullptr};
  ReferenceEncoder reference_encoder{nullptr};
  EmbeddingClassifier emotion_classifier{nullptr};
  EmbeddingClassifier speaker_classifier{nullptr};
  ScoreNetwork decoder{nullptr};
  SpeakerTable speaker_table{nullptr};

 private:
  ModelConfig cfg_;
  Ablations ablations_;
};
TORCH_MODULE(DicletModel);

/// L = L_prior + L_opedm + L_diff.
template <typename T>
T total_loss(const T& prior, const T& opedm, const T& diff) {
  return prior + opedm + diff;
}

}  // namespace diclet
