#include "diclet/text_prior.hpp"

#include <cmath>
#include <string>

#include "diclet/error.hpp"

namespace diclet {

// ---------------------------------------------------------------------------
// Text encoder

TextEncoderImpl::TextEncoderImpl(const ModelConfig& cfg) : vocab_(cfg.vocab_size) {
  const int64_t d = cfg.d_model;
  embedding_ = register_module("embedding", torch::nn::Embedding(cfg.vocab_size, d));
  for (int i = 0; i < 3; ++i) {
    prenet_.push_back(register_module("prenet_conv" + std::to_string(i),
                                      SeqConv(d, d, cfg.prenet_kernel)));
    prenet_norms_.push_back(register_module("prenet_norm" + std::to_string(i),
                                            torch::nn::LayerNorm(torch::nn::LayerNormOptions({d}))));
  }
  prenet_out_ = register_module("prenet_out", torch::nn::Linear(d, d));
  for (int i = 0; i < cfg.text_blocks; ++i) {
    blocks_.push_back(register_module("block" + std::to_string(i),
                                      FFTBlock(d, cfg.attention_heads, cfg.ffn_hidden,
                                               cfg.ffn_kernel)));
  }
  projection_ = register_module("projection", torch::nn::Linear(d, d));
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& tokens, const torch::Tensor& mask) {
  if (tokens.numel() == 0) throw Error("empty token sequence");
  const auto hi = tokens.max().item<int64_t>();
  const auto lo = tokens.min().item<int64_t>();
  if (lo < 0 || hi >= vocab_) {
    throw Error("unknown token id " + std::to_string(lo < 0 ? lo : hi) + " (vocabulary size " +
                std::to_string(vocab_) + ")");
  }
  auto x = apply_mask(embedding_(tokens), mask);
  for (std::size_t i = 0; i < prenet_.size(); ++i) {
    x = apply_mask(torch::relu(prenet_norms_[i](prenet_[i](x))), mask);
  }
  x = prenet_out_(x) + sinusoidal_encoding(x.size(1), x.size(2), x.options()).unsqueeze(0);
  x = apply_mask(x, mask);
  for (auto& block : blocks_) x = block(x, mask);
  return apply_mask(projection_(x), mask);
}

// ---------------------------------------------------------------------------
// Heads

TextSpeakerAdversaryImpl::TextSpeakerAdversaryImpl(const ModelConfig& cfg) {
  gate.scale = cfg.grl_scale;
  gru_ = register_module(
      "gru", torch::nn::GRU(torch::nn::GRUOptions(cfg.d_model, cfg.adversary_hidden)
                                .batch_first(true)));
  head_ = register_module("head", torch::nn::Linear(cfg.adversary_hidden, cfg.num_speakers));
}

torch::Tensor TextSpeakerAdversaryImpl::forward(const torch::Tensor& l,
                                                const torch::Tensor& lengths) {
  auto out = std::get<0>(gru_->forward(l));
  return head_(gate(gather_last(out, lengths)));
}

ContentClassifierImpl::ContentClassifierImpl(const ModelConfig& cfg) {
  fc1_ = register_module("fc1", torch::nn::Linear(cfg.d_model, cfg.content_hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(cfg.content_hidden, cfg.vocab_size));
}

torch::Tensor ContentClassifierImpl::forward(const torch::Tensor& l) {
  return fc2_(torch::relu(fc1_(l)));
}

DurationPredictorImpl::DurationPredictorImpl(const ModelConfig& cfg) {
  const int64_t d = cfg.d_model;
  const int64_t h = cfg.duration_hidden;
  emotion_proj_ = register_module("emotion_proj", torch::nn::Linear(cfg.emotion_dim, d));
  conv1_ = register_module("conv1", SeqConv(d, h, 3));
  conv2_ = register_module("conv2", SeqConv(h, h, 3));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({h})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({h})));
  out_ = register_module("out", torch::nn::Linear(h, 1));
}

torch::Tensor DurationPredictorImpl::forward(const torch::Tensor& l, const torch::Tensor& emotion,
                                             const torch::Tensor& mask) {
  if (emotion.size(-1) != emotion_proj_->options.in_features()) {
    throw Error("emotion embedding width " + std::to_string(emotion.size(-1)) +
                " does not match duration predictor width " +
                std::to_string(emotion_proj_->options.in_features()));
  }
  auto h = apply_mask(l + emotion_proj_(emotion).unsqueeze(1), mask);
  h = apply_mask(norm1_(torch::relu(conv1_(h))), mask);
  h = apply_mask(norm2_(torch::relu(conv2_(h))), mask);
  return out_(h).squeeze(-1) * mask.to(h.dtype());
}

// ---------------------------------------------------------------------------
// Emotional adaptor

EmotionalAdaptorImpl::EmotionalAdaptorImpl(const ModelConfig& cfg, bool conditioned)
    : conditioned_(conditioned), max_frames_(cfg.max_frames) {
  const int64_t d = cfg.d_model;
  if (conditioned_) {
    positions_ = register_module("positions", torch::nn::Embedding(cfg.max_frames, d));
    torch::NoGradGuard guard;
    positions_->weight.normal_(0.0, 0.1);
    conv_in_ = register_module("conv_in", SeqConv(d, d, 3));
    for (int i = 0; i < cfg.adaptor_blocks; ++i) {
      blocks_.push_back(register_module("block" + std::to_string(i),
                                        FFTBlock(d, cfg.attention_heads, cfg.ffn_hidden,
                                                 cfg.ffn_kernel)));
      norms_.push_back(register_module("cond_norm" + std::to_string(i),
                                       ConditionalLayerNorm(d, cfg.emotion_dim)));
    }
  }
  conv_out_ = register_module("conv_out", SeqConv(d, cfg.mel_bands, 1));
}

torch::Tensor EmotionalAdaptorImpl::forward(const torch::Tensor& expanded,
                                            const torch::Tensor& emotion,
                                            const torch::Tensor& mask) {
  if (expanded.dim() != 3 || mask.size(1) != expanded.size(1)) {
    throw Error("emotional adaptor: expanded sequence and mask shapes disagree");
  }
  if (!conditioned_) return apply_mask(conv_out_(expanded), mask);

  const int64_t frames = expanded.size(1);
  if (frames > max_frames_) {
    throw Error("sequence of " + std::to_string(frames) + " frames exceeds max_frames " +
                std::to_string(max_frames_));
  }
  if (emotion.size(-1) != norms_.front()->scale_projection()->options.in_features()) {
    throw Error("emotion embedding width mismatch in emotional adaptor");
  }
  auto pos = positions_(torch::arange(frames, expanded.options().dtype(torch::kLong)));
  auto x = apply_mask(conv_in_(expanded + pos.unsqueeze(0)), mask);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i](x, mask);
    x = apply_mask(norms_[i](x, emotion), mask);
  }
  return apply_mask(conv_out_(x), mask);
}

// ---------------------------------------------------------------------------
// Length regulation

torch::Tensor length_regulate(const torch::Tensor& l, std::span<const int64_t> durations) {
  if (l.dim() != 2) throw Error("length_regulate expects a (C, d) matrix");
  if (static_cast<int64_t>(durations.size()) != l.size(0)) {
    throw Error("length_regulate: " + std::to_string(durations.size()) + " durations for " +
                std::to_string(l.size(0)) + " rows");
  }
  for (auto d : durations) {
    if (d < 1) throw Error("length_regulate: durations must be positive, got " + std::to_string(d));
  }
  auto reps = torch::tensor(std::vector<int64_t>(durations.begin(), durations.end()),
                            torch::TensorOptions().dtype(torch::kLong));
  return torch::repeat_interleave(l, reps, 0);
}

std::pair<torch::Tensor, torch::Tensor> length_regulate_batch(const torch::Tensor& l,
                                                             const torch::Tensor& durations) {
  if (durations.lt(0).any().item<bool>()) throw Error("length_regulate: negative duration");
  std::vector<torch::Tensor> rows;
  rows.reserve(static_cast<std::size_t>(l.size(0)));
  for (int64_t b = 0; b < l.size(0); ++b) {
    rows.push_back(torch::repeat_interleave(l[b], durations[b].to(torch::kLong), 0));
  }
  auto lengths = durations.to(torch::kLong).sum(1);
  return {torch::nn::utils::rnn::pad_sequence(rows, /*batch_first=*/true), lengths};
}

// ---------------------------------------------------------------------------
// Losses

torch::Tensor speaker_adversarial_loss(const torch::Tensor& logits, const torch::Tensor& speakers) {
  return classification_nll(logits, speakers, "speaker");
}

torch::Tensor content_loss(const torch::Tensor& logits, const torch::Tensor& tokens,
                           const torch::Tensor& mask) {
  if (logits.dim() != 3 || logits.size(0) != tokens.size(0) || logits.size(1) != tokens.size(1)) {
    throw Error("content_loss: representation rows do not match token count");
  }
  auto logp = torch::log_softmax(logits, -1);
  auto nll = -logp.gather(-1, tokens.to(torch::kLong).unsqueeze(-1)).squeeze(-1);
  return (nll * mask.to(nll.dtype())).sum() / static_cast<double>(tokens.size(0));
}

torch::Tensor duration_loss(const torch::Tensor& predicted, const torch::Tensor& target,
                            const torch::Tensor& mask) {
  if (!predicted.sizes().equals(target.sizes())) throw Error("duration_loss: shape mismatch");
  auto m = mask.to(predicted.dtype());
  auto diff = predicted - target.to(predicted.dtype());
  return (diff.pow(2) * m).sum() / m.sum().clamp_min(1.0);
}

std::vector<int64_t> round_durations(const torch::Tensor& predicted) {
  // Halves round up, matching std::lround in the corpus generator.
  auto r = (predicted.detach().clamp_min(0.0) + 0.5).floor().clamp_min(1.0).to(torch::kLong).contiguous();
  return {r.data_ptr<int64_t>(), r.data_ptr<int64_t>() + r.numel()};
}

torch::Tensor prior_mel_loss(const torch::Tensor& mu, const torch::Tensor& mel,
                             const torch::Tensor& mask) {
  if (!mu.sizes().equals(mel.sizes())) throw Error("prior_mel_loss: shape mismatch");
  auto m = mask.to(mu.dtype()).unsqueeze(-1);
  return ((mu - mel).pow(2) * m).sum() / (m.sum() * mu.size(-1)).clamp_min(1.0);
}

}  // namespace diclet
