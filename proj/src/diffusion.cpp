#include "diclet/diffusion.hpp"

#include <string>

#include "diclet/error.hpp"
#include "diclet/layers.hpp"

namespace diclet {

DiffusionSchedule::DiffusionSchedule(double beta0, double beta1) : beta0_(beta0), beta1_(beta1) {
  if (!(beta0 > 0.0) || !(beta1 >= beta0)) {
    throw Error("noise schedule needs 0 < beta0 <= beta1, got beta0=" + std::to_string(beta0) +
                " beta1=" + std::to_string(beta1));
  }
}

torch::Tensor expand_time(const torch::Tensor& t, const torch::Tensor& like) {
  if (t.dim() == 0) return t.to(like.dtype());
  std::vector<int64_t> shape(static_cast<std::size_t>(like.dim()), 1);
  shape[0] = t.size(0);
  return t.to(like.dtype()).view(shape);
}

namespace {

void check_unit_interval(const torch::Tensor& t) {
  if (t.lt(0.0).any().item<bool>() || t.gt(1.0).any().item<bool>()) {
    throw Error("diffusion time must lie in [0, 1]");
  }
}

torch::Tensor row_times(const torch::Tensor& like, double t) {
  return torch::full({like.size(0)}, t, like.options());
}

}  // namespace

torch::Tensor marginal_mean(const DiffusionSchedule& s, const torch::Tensor& x0,
                            const torch::Tensor& mu, const torch::Tensor& t) {
  // Written as a convex combination so that t = 0 returns X0 bit for bit.
  auto half = -0.5 * s.cumulative(expand_time(t, x0));
  return x0 * torch::exp(half) - mu * torch::expm1(half);
}

torch::Tensor forward_marginal(const DiffusionSchedule& s, const torch::Tensor& x0,
                               const torch::Tensor& mu, const torch::Tensor& t,
                               torch::Generator& gen) {
  if (!x0.sizes().equals(mu.sizes())) throw Error("forward_marginal: X0 and mu shapes differ");
  check_unit_interval(t);
  auto tt = expand_time(t, x0);
  auto noise = torch::randn(x0.sizes(), gen, x0.options());
  return marginal_mean(s, x0, mu, t) + noise * torch::sqrt(s.lambda(tt));
}

torch::Tensor forward_marginal(const DiffusionSchedule& s, const torch::Tensor& x0,
                               const torch::Tensor& mu, double t, torch::Generator& gen) {
  return forward_marginal(s, x0, mu, torch::scalar_tensor(t, x0.options()), gen);
}

torch::Tensor true_conditional_score(const DiffusionSchedule& s, const torch::Tensor& xt,
                                     const torch::Tensor& x0, const torch::Tensor& mu,
                                     const torch::Tensor& t) {
  check_unit_interval(t);
  if (t.le(0.0).any().item<bool>()) {
    throw Error("conditional score is undefined at t = 0 (point mass)");
  }
  auto tt = expand_time(t, xt);
  return -(xt - marginal_mean(s, x0, mu, t)) / s.lambda(tt);
}

torch::Tensor diffusion_loss(const DiffusionSchedule& s, const torch::Tensor& x0,
                             const torch::Tensor& mu, const torch::Tensor& mask,
                             const ScoreFn& score, torch::Generator& gen, double t_epsilon,
                             const std::optional<torch::Tensor>& fixed_t) {
  if (!(t_epsilon > 0.0) || t_epsilon >= 1.0) throw Error("t_epsilon must lie in (0, 1)");
  if (!x0.sizes().equals(mu.sizes())) throw Error("diffusion_loss: X0 and mu shapes differ");

  torch::Tensor t;
  if (fixed_t) {
    t = fixed_t->to(x0.dtype());
  } else {
    t = torch::rand({x0.size(0)}, gen, x0.options()) * (1.0 - t_epsilon) + t_epsilon;
  }
  auto xt = forward_marginal(s, x0, mu, t, gen);
  auto target = true_conditional_score(s, xt, x0, mu, t);
  auto estimate = score(xt, t);
  if (!estimate.sizes().equals(xt.sizes())) throw Error("score estimate has the wrong shape");

  auto weighted = s.lambda(expand_time(t, xt)) * (estimate - target).pow(2);
  if (!mask.defined()) return weighted.mean();
  auto m = mask.to(x0.dtype());
  while (m.dim() < x0.dim()) m = m.unsqueeze(-1);
  m = m.expand_as(x0);
  return (weighted * m).sum() / m.sum().clamp_min(1.0);
}

torch::Tensor reverse_ode_sample(const DiffusionSchedule& s, const torch::Tensor& mu,
                                 const ScoreFn& score, int n_steps, torch::Generator& gen,
                                 double temperature) {
  if (n_steps < 1) throw Error("reverse sampling needs at least one step");
  if (!(temperature > 0.0)) throw Error("temperature must be positive");
  const double h = 1.0 / n_steps;
  auto x = mu + torch::randn(mu.sizes(), gen, mu.options()) / std::sqrt(temperature);
  for (int i = 0; i < n_steps; ++i) {
    const double t = 1.0 - i * h;
    auto est = score(x, row_times(mu, t));
    x = x - 0.5 * (mu - x - est) * (s.beta(t) * h);
  }
  return x;
}

torch::Tensor reverse_sde_sample(const DiffusionSchedule& s, const torch::Tensor& mu,
                                 const ScoreFn& score, int n_steps, torch::Generator& gen) {
  if (n_steps < 1) throw Error("reverse sampling needs at least one step");
  const double h = 1.0 / n_steps;
  auto x = mu + torch::randn(mu.sizes(), gen, mu.options());
  for (int i = 0; i < n_steps; ++i) {
    const double t = 1.0 - i * h;
    const double beta = s.beta(t);
    auto est = score(x, row_times(mu, t));
    auto drift = (0.5 * (mu - x) - est) * beta;
    x = x - drift * h + torch::randn(mu.sizes(), gen, mu.options()) * std::sqrt(beta * h);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Score network

ResBlockImpl::ResBlockImpl(int64_t in, int64_t out, int64_t time_dim, int64_t speaker_dim,
                           int64_t emotion_dim, bool conditioned)
    : conditioned_(conditioned) {
  using namespace torch::nn;
  conv1_ = register_module("conv1", Conv2d(Conv2dOptions(in, out, 3).padding(1)));
  conv2_ = register_module("conv2", Conv2d(Conv2dOptions(out, out, 3).padding(1)));
  norm1_ = register_module("norm1", GroupNorm(GroupNormOptions(8, out)));
  norm2_ = register_module("norm2", GroupNorm(GroupNormOptions(8, out)));
  if (in != out) residual_ = register_module("residual", Conv2d(Conv2dOptions(in, out, 1)));
  time_proj_ = register_module("time_proj", Linear(time_dim, out));
  if (conditioned_) {
    speaker_proj_ = register_module("speaker_proj", Linear(speaker_dim, out));
    emotion_proj_ = register_module("emotion_proj", Linear(emotion_dim, out));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& mask,
                                    const torch::Tensor& time, const torch::Tensor& speaker,
                                    const torch::Tensor& emotion) {
  auto h = torch::mish(norm1_(conv1_(x * mask))) * mask;
  auto cond = time_proj_(torch::mish(time));
  if (conditioned_) cond = cond + speaker_proj_(speaker) + emotion_proj_(emotion);
  h = h + cond.unsqueeze(-1).unsqueeze(-1);
  h = torch::mish(norm2_(conv2_(h * mask))) * mask;
  auto skip = residual_ ? residual_(x * mask) : x * mask;
  return h + skip;
}

ScoreNetworkImpl::ScoreNetworkImpl(const ModelConfig& cfg, bool per_block_conditioning)
    : per_block_(per_block_conditioning), time_dim_(cfg.decoder_channels) {
  using namespace torch::nn;
  const auto levels = cfg.decoder_mults.size();
  stride_ = int64_t{1} << (levels - 1);

  time_fc1_ = register_module("time_fc1", Linear(time_dim_, 4 * time_dim_));
  time_fc2_ = register_module("time_fc2", Linear(4 * time_dim_, time_dim_));

  int64_t in_channels = 2;
  if (!per_block_) {
    speaker_input_ = register_module("speaker_input", Linear(cfg.speaker_dim, cfg.mel_bands));
    emotion_input_ = register_module("emotion_input", Linear(cfg.emotion_dim, cfg.mel_bands));
    in_channels += 2;
  }

  std::vector<int64_t> dims{in_channels};
  for (int m : cfg.decoder_mults) dims.push_back(int64_t{cfg.decoder_channels} * m);

  auto make_block = [&](int64_t in, int64_t out) {
    return ResBlock(in, out, time_dim_, cfg.speaker_dim, cfg.emotion_dim, per_block_);
  };

  for (std::size_t i = 0; i < levels; ++i) {
    std::vector<ResBlock> level;
    for (int k = 0; k < cfg.decoder_blocks_per_level; ++k) {
      level.push_back(register_module("down" + std::to_string(i) + "_" + std::to_string(k),
                                      make_block(k == 0 ? dims[i] : dims[i + 1], dims[i + 1])));
    }
    down_blocks_.push_back(std::move(level));
    if (i + 1 < levels) {
      downsamplers_.push_back(register_module(
          "downsample" + std::to_string(i),
          Conv2d(Conv2dOptions(dims[i + 1], dims[i + 1], 3).stride(2).padding(1))));
    }
  }
  for (int k = 0; k < 2; ++k) {
    mid_blocks_.push_back(
        register_module("mid" + std::to_string(k), make_block(dims.back(), dims.back())));
  }
  for (std::size_t i = levels - 1; i >= 1; --i) {
    const int64_t dim_in = dims[i];
    const int64_t dim_out = dims[i + 1];
    std::vector<ResBlock> level;
    for (int k = 0; k < cfg.decoder_blocks_per_level; ++k) {
      level.push_back(register_module("up" + std::to_string(i) + "_" + std::to_string(k),
                                      make_block(k == 0 ? 2 * dim_out : dim_in, dim_in)));
    }
    up_blocks_.push_back(std::move(level));
    upsamplers_.push_back(register_module(
        "upsample" + std::to_string(i),
        ConvTranspose2d(ConvTranspose2dOptions(dim_in, dim_in, 4).stride(2).padding(1))));
  }
  final_conv_ = register_module("final_conv", Conv2d(Conv2dOptions(dims[1], dims[1], 3).padding(1)));
  final_norm_ = register_module("final_norm", GroupNorm(GroupNormOptions(8, dims[1])));
  output_ = register_module("output", Conv2d(Conv2dOptions(dims[1], 1, 1)));
}

std::vector<ResBlock> ScoreNetworkImpl::residual_blocks() const {
  std::vector<ResBlock> out;
  for (const auto& level : down_blocks_) out.insert(out.end(), level.begin(), level.end());
  out.insert(out.end(), mid_blocks_.begin(), mid_blocks_.end());
  for (const auto& level : up_blocks_) out.insert(out.end(), level.begin(), level.end());
  return out;
}

void ScoreNetworkImpl::zero_conditioning() {
  torch::NoGradGuard guard;
  auto zero = [](torch::nn::Linear& l) {
    l->weight.zero_();
    l->bias.zero_();
  };
  if (per_block_) {
    for (auto block : residual_blocks()) {
      zero(block->speaker_projection());
      zero(block->emotion_projection());
    }
  } else {
    zero(speaker_input_);
    zero(emotion_input_);
  }
}

torch::Tensor ScoreNetworkImpl::forward(const torch::Tensor& xt, const torch::Tensor& mu,
                                        const torch::Tensor& mask, const torch::Tensor& t,
                                        const torch::Tensor& speaker, const torch::Tensor& emotion,
                                        std::vector<torch::Tensor>* activations) {
  if (!xt.sizes().equals(mu.sizes()) || xt.dim() != 3) {
    throw Error("score network: X_t and mu must share a (B, T, F) shape");
  }
  if (mask.size(0) != xt.size(0) || mask.size(1) != xt.size(1)) {
    throw Error("score network: mask does not match X_t");
  }
  const int64_t frames = xt.size(1);
  const int64_t bands = xt.size(2);
  const int64_t pad_t = (stride_ - frames % stride_) % stride_;
  const int64_t pad_f = (stride_ - bands % stride_) % stride_;

  // (B, T, F) -> (B, F, T), padded on both axes.
  auto to_grid = [&](const torch::Tensor& v) {
    return torch::constant_pad_nd(v.transpose(1, 2), {0, pad_t, 0, pad_f}, 0.0);
  };
  std::vector<torch::Tensor> channels{to_grid(xt), to_grid(mu)};
  if (!per_block_) {
    auto band_profile = [&](const torch::Tensor& p) {
      auto grid = p.unsqueeze(-1).expand({p.size(0), p.size(1), frames});
      return torch::constant_pad_nd(grid, {0, pad_t, 0, pad_f}, 0.0);
    };
    channels.push_back(band_profile(speaker_input_(speaker)));
    channels.push_back(band_profile(emotion_input_(emotion)));
  }
  auto x = torch::stack(channels, 1);  // (B, C, F', T')

  auto m = torch::constant_pad_nd(mask.to(xt.dtype()), {0, pad_t}, 0.0).view({mask.size(0), 1, 1, -1});
  std::vector<torch::Tensor> masks{m};

  const auto half = time_dim_ / 2;
  auto freqs = torch::exp(torch::arange(half, t.options()) * (-std::log(10000.0) / (half - 1)));
  auto angles = 1000.0 * t.view({-1, 1}) * freqs.view({1, -1});
  auto temb = torch::cat({torch::sin(angles), torch::cos(angles)}, 1);
  temb = time_fc2_(torch::mish(time_fc1_(temb)));

  auto run = [&](ResBlock& block, const torch::Tensor& in, const torch::Tensor& mk) {
    auto out = block(in, mk, temb, speaker, emotion);
    if (activations) activations->push_back(out);
    return out;
  };

  std::vector<torch::Tensor> hiddens;
  for (std::size_t i = 0; i < down_blocks_.size(); ++i) {
    for (auto& block : down_blocks_[i]) x = run(block, x, masks.back());
    hiddens.push_back(x);
    if (i < downsamplers_.size()) {
      x = downsamplers_[i](x * masks.back());
      masks.push_back(masks.back().index({"...", torch::indexing::Slice(0, torch::indexing::None, 2)}));
    }
  }
  for (auto& block : mid_blocks_) x = run(block, x, masks.back());
  for (std::size_t i = 0; i < up_blocks_.size(); ++i) {
    x = torch::cat({x, hiddens[hiddens.size() - 1 - i]}, 1);
    for (auto& block : up_blocks_[i]) x = run(block, x, masks.back());
    x = upsamplers_[i](x * masks.back());
    masks.pop_back();
  }
  x = torch::mish(final_norm_(final_conv_(x * masks.front()))) * masks.front();
  auto out = output_(x * masks.front()) * masks.front();  // (B, 1, F', T')
  out = out.squeeze(1).index({torch::indexing::Slice(), torch::indexing::Slice(0, bands),
                              torch::indexing::Slice(0, frames)});
  return out.transpose(1, 2);
}

SpeakerTableImpl::SpeakerTableImpl(int64_t speakers, int64_t dim) : speakers_(speakers) {
  table_ = register_module("table", torch::nn::Embedding(speakers, dim));
}

torch::Tensor SpeakerTableImpl::forward(const torch::Tensor& speaker_ids) {
  auto ids = speaker_ids.to(torch::kLong);
  if (ids.numel() > 0) {
    const auto lo = ids.min().item<int64_t>();
    const auto hi = ids.max().item<int64_t>();
    if (lo < 0 || hi >= speakers_) {
      throw Error("unknown speaker id " + std::to_string(lo < 0 ? lo : hi) + " (table has " +
                  std::to_string(speakers_) + " speakers)");
    }
  }
  return table_(ids);
}

}  // namespace diclet
