#include "diclet/op_edm.hpp"

#include <string>

#include "diclet/error.hpp"

namespace diclet {

ReferenceEncoderImpl::ReferenceEncoderImpl(const ModelConfig& cfg) : bands_(cfg.mel_bands) {
  int64_t in = 1;
  int64_t freq = cfg.mel_bands;
  for (std::size_t i = 0; i < cfg.reference_channels.size(); ++i) {
    const int64_t out = cfg.reference_channels[i];
    convs_.push_back(register_module(
        "conv" + std::to_string(i),
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1))));
    in = out;
    freq = (freq + 1) / 2;
  }
  gru_ = register_module("gru", torch::nn::GRU(torch::nn::GRUOptions(in * freq,
                                                                     cfg.reference_hidden)
                                                   .batch_first(true)));
  projection_ = register_module("projection",
                                torch::nn::Linear(cfg.reference_hidden, cfg.emotion_dim));
}

torch::Tensor ReferenceEncoderImpl::forward(const torch::Tensor& mels, const torch::Tensor& lengths) {
  if (mels.dim() != 3 || mels.size(1) < 1) throw Error("reference mel must have at least one frame");
  if (mels.size(2) != bands_) {
    throw Error("reference mel has " + std::to_string(mels.size(2)) + " bands, expected " +
                std::to_string(bands_));
  }
  if (lengths.min().item<int64_t>() < 1) throw Error("reference mel must have at least one frame");

  auto x = mels.unsqueeze(1);  // (B, 1, T, F)
  auto len = lengths.to(torch::kLong);
  x = x * sequence_mask(len, x.size(2)).to(x.dtype()).view({x.size(0), 1, -1, 1});
  for (auto& conv : convs_) {
    x = torch::relu(conv(x));
    len = torch::floor_divide(len + 1, 2);
    // Zero the outputs past each row's valid length so padding behaves like
    // the convolution's own zero padding.
    x = x * sequence_mask(len, x.size(2)).to(x.dtype()).view({x.size(0), 1, -1, 1});
  }
  // (B, C, T', F') -> (B, T', C * F')
  x = x.permute({0, 2, 1, 3}).flatten(2);
  auto out = std::get<0>(gru_->forward(x));
  return projection_(gather_last(out, len));
}

EmbeddingClassifierImpl::EmbeddingClassifierImpl(int64_t in, int64_t classes, bool reversed,
                                                 double grl_scale)
    : reversed_(reversed) {
  gate.scale = grl_scale;
  head_ = register_module("head", torch::nn::Linear(in, classes));
}

torch::Tensor EmbeddingClassifierImpl::forward(const torch::Tensor& e) {
  return head_(reversed_ ? gate(e) : e);
}

torch::Tensor emotion_classification_loss(const torch::Tensor& logits,
                                          const torch::Tensor& emotions) {
  return classification_nll(logits, emotions, "emotion");
}

OplTerms orthogonal_projection_terms(const torch::Tensor& embeddings, const torch::Tensor& labels) {
  if (embeddings.dim() != 2 || embeddings.size(0) < 2) {
    throw Error("orthogonal projection loss needs a batch of at least two embeddings");
  }
  if (labels.numel() != embeddings.size(0)) throw Error("one label per embedding required");
  auto norms = embeddings.norm(2, 1);
  if (norms.min().item<double>() <= 0.0) {
    throw Error("zero-norm embedding: cosine similarity undefined");
  }
  auto unit = embeddings / norms.unsqueeze(1);
  auto cos = unit.matmul(unit.t());

  const int64_t n = embeddings.size(0);
  auto lab = labels.to(torch::kLong).view({-1});
  auto off_diag = torch::eye(n, torch::TensorOptions().dtype(torch::kBool)).logical_not();
  auto same_mask = lab.unsqueeze(0).eq(lab.unsqueeze(1)).logical_and(off_diag);
  auto diff_mask = lab.unsqueeze(0).ne(lab.unsqueeze(1));

  OplTerms terms;
  terms.same_pairs = same_mask.sum().item<int64_t>() / 2;
  terms.different_pairs = diff_mask.sum().item<int64_t>() / 2;
  auto zero = torch::zeros({}, cos.options());
  terms.same = terms.same_pairs > 0 ? cos.masked_select(same_mask).mean() : zero;
  terms.different = terms.different_pairs > 0 ? cos.masked_select(diff_mask).mean() : zero;

  terms.loss = zero;
  if (terms.same_pairs > 0) terms.loss = terms.loss + (1.0 - terms.same);
  if (terms.different_pairs > 0) terms.loss = terms.loss + 0.5 * terms.different.abs();
  return terms;
}

}  // namespace diclet
