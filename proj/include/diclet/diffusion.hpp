#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "diclet/config.hpp"

namespace diclet {

/// Linear noise schedule beta(t) = beta0 + (beta1 - beta0) t on t in [0, 1].
class DiffusionSchedule {
 public:
  DiffusionSchedule(double beta0 = 0.05, double beta1 = 20.0);
  explicit DiffusionSchedule(const ScheduleConfig& cfg) : DiffusionSchedule(cfg.beta0, cfg.beta1) {}

  double beta0() const { return beta0_; }
  double beta1() const { return beta1_; }

  double beta(double t) const { return beta0_ + (beta1_ - beta0_) * t; }
  /// B(t) = integral of beta from 0 to t.
  double cumulative(double t) const { return beta0_ * t + 0.5 * (beta1_ - beta0_) * t * t; }
  /// lambda(t) = 1 - exp(-B(t)), the variance of X_t given X_0.
  double lambda(double t) const { return -std::expm1(-cumulative(t)); }

  torch::Tensor beta(const torch::Tensor& t) const { return beta0_ + (beta1_ - beta0_) * t; }
  torch::Tensor cumulative(const torch::Tensor& t) const {
    return beta0_ * t + 0.5 * (beta1_ - beta0_) * t * t;
  }
  torch::Tensor lambda(const torch::Tensor& t) const { return -torch::expm1(-cumulative(t)); }

 private:
  double beta0_;
  double beta1_;
};

/// Score estimate s(X_t, t). `t` has one entry per batch row.
using ScoreFn = std::function<torch::Tensor(const torch::Tensor& xt, const torch::Tensor& t)>;

/// Broadcasts a per-row time vector against a state tensor of any rank.
torch::Tensor expand_time(const torch::Tensor& t, const torch::Tensor& like);

/// Mean of X_t given X_0: mu + (X0 - mu) exp(-B(t)/2).
torch::Tensor marginal_mean(const DiffusionSchedule& s, const torch::Tensor& x0,
                            const torch::Tensor& mu, const torch::Tensor& t);

/// Closed-form sample of the forward process at time t (scalar or one entry per row).
torch::Tensor forward_marginal(const DiffusionSchedule& s, const torch::Tensor& x0,
                               const torch::Tensor& mu, const torch::Tensor& t,
                               torch::Generator& gen);
torch::Tensor forward_marginal(const DiffusionSchedule& s, const torch::Tensor& x0,
                               const torch::Tensor& mu, double t, torch::Generator& gen);

/// grad log p_t(X_t | X_0) = -(X_t - mean_t) / lambda(t). Requires t > 0.
torch::Tensor true_conditional_score(const DiffusionSchedule& s, const torch::Tensor& xt,
                                     const torch::Tensor& x0, const torch::Tensor& mu,
                                     const torch::Tensor& t);

/// lambda_t-weighted score matching loss, averaged over valid elements.
/// x0, mu: (B, ...); mask: same shape as x0 or broadcastable, or undefined for all-valid.
/// t is drawn uniformly on [t_epsilon, 1] per row unless `fixed_t` is given.
torch::Tensor diffusion_loss(const DiffusionSchedule& s, const torch::Tensor& x0,
                             const torch::Tensor& mu, const torch::Tensor& mask,
                             const ScoreFn& score, torch::Generator& gen, double t_epsilon,
                             const std::optional<torch::Tensor>& fixed_t = std::nullopt);

/// Probability-flow ODE dX = 0.5 (mu - X - s) beta dt integrated from t = 1 to 0
/// with explicit Euler on a uniform grid, starting from N(mu, I / temperature).
torch::Tensor reverse_ode_sample(const DiffusionSchedule& s, const torch::Tensor& mu,
                                 const ScoreFn& score, int n_steps, torch::Generator& gen,
                                 double temperature = 1.0);

/// Euler-Maruyama on the reverse-time SDE, starting from N(mu, I).
torch::Tensor reverse_sde_sample(const DiffusionSchedule& s, const torch::Tensor& mu,
                                 const ScoreFn& score, int n_steps, torch::Generator& gen);

// ---------------------------------------------------------------------------
// Score network

class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in, int64_t out, int64_t time_dim, int64_t speaker_dim,
               int64_t emotion_dim, bool conditioned);

  /// x: (B, C, F, T); mask: (B, 1, 1, T); time/speaker/emotion: (B, dim).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask,
                        const torch::Tensor& time, const torch::Tensor& speaker,
                        const torch::Tensor& emotion);

  bool conditioned() const { return conditioned_; }
  torch::nn::Linear& speaker_projection() { return speaker_proj_; }
  torch::nn::Linear& emotion_projection() { return emotion_proj_; }

 private:
  bool conditioned_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, residual_{nullptr};
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear time_proj_{nullptr}, speaker_proj_{nullptr}, emotion_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

/// U-shaped score estimator s_theta(X_t, mu, t, E_spk, e_i).
/// Speaker and emotion embeddings are projected and added inside every residual
/// block; with per-block conditioning disabled they are instead projected to one
/// band-profile each and stacked with the decoder input.
class ScoreNetworkImpl : public torch::nn::Module {
 public:
  ScoreNetworkImpl(const ModelConfig& cfg, bool per_block_conditioning);

  /// xt, mu: (B, T, F); mask: (B, T); t: (B); speaker: (B, speaker_dim); emotion: (B, E).
  /// Pads T and F to the network's stride internally and crops back.
  /// When `activations` is non-null it receives every residual block's output.
  torch::Tensor forward(const torch::Tensor& xt, const torch::Tensor& mu, const torch::Tensor& mask,
                        const torch::Tensor& t, const torch::Tensor& speaker,
                        const torch::Tensor& emotion,
                        std::vector<torch::Tensor>* activations = nullptr);

  bool per_block_conditioning() const { return per_block_; }
  std::vector<ResBlock> residual_blocks() const;
  /// Zeroes every speaker and emotion projection.
  void zero_conditioning();
  int64_t stride() const { return stride_; }

 private:
  bool per_block_;
  int64_t stride_;
  int64_t time_dim_;
  torch::nn::Linear time_fc1_{nullptr}, time_fc2_{nullptr};
  torch::nn::Linear speaker_input_{nullptr}, emotion_input_{nullptr};
  std::vector<std::vector<ResBlock>> down_blocks_;
  std::vector<torch::nn::Conv2d> downsamplers_;
  std::vector<ResBlock> mid_blocks_;
  std::vector<std::vector<ResBlock>> up_blocks_;
  std::vector<torch::nn::ConvTranspose2d> upsamplers_;
  torch::nn::Conv2d final_conv_{nullptr};
  torch::nn::GroupNorm final_norm_{nullptr};
  torch::nn::Conv2d output_{nullptr};
};
TORCH_MODULE(ScoreNetwork);

/// Per-speaker trainable embedding E_spk.
class SpeakerTableImpl : public torch::nn::Module {
 public:
  SpeakerTableImpl(int64_t speakers, int64_t dim);
  /// Throws naming the id when a speaker is unknown.
  torch::Tensor forward(const torch::Tensor& speaker_ids);
  int64_t size() const { return speakers_; }

 private:
  int64_t speakers_;
  torch::nn::Embedding table_{nullptr};
};
TORCH_MODULE(SpeakerTable);

}  // namespace diclet
