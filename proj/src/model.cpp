#include "diclet/model.hpp"

#include <cmath>
#include <sstream>

#include "diclet/error.hpp"

namespace diclet {

torch::Tensor mel_to_tensor(const MelSpectrum& mel) {
  return torch::from_blob(const_cast<float*>(mel.values.data()),
                          {static_cast<int64_t>(mel.frames), static_cast<int64_t>(mel.bands)},
                          torch::kFloat)
      .clone();
}

MelSpectrum tensor_to_mel(const torch::Tensor& values) {
  if (values.dim() != 2) throw Error("mel tensor must be (frames, bands)");
  auto v = values.detach().to(torch::kFloat).contiguous();
  MelSpectrum mel(static_cast<std::uint32_t>(v.size(0)), static_cast<std::uint32_t>(v.size(1)));
  std::copy_n(v.data_ptr<float>(), v.numel(), mel.values.begin());
  return mel;
}

std::pair<torch::Tensor, torch::Tensor> stack_mels(const std::vector<MelSpectrum>& mels) {
  if (mels.empty()) throw Error("no mels to stack");
  std::vector<torch::Tensor> rows;
  std::vector<int64_t> lengths;
  for (const auto& m : mels) {
    if (m.bands != mels.front().bands) throw Error("mels in one batch differ in band count");
    rows.push_back(mel_to_tensor(m));
    lengths.push_back(m.frames);
  }
  return {torch::nn::utils::rnn::pad_sequence(rows, /*batch_first=*/true), torch::tensor(lengths)};
}

Batch make_batch(const std::vector<const Utterance*>& utterances,
                 const std::vector<MelSpectrum>& mels) {
  if (utterances.size() != mels.size()) throw Error("one mel per utterance required");
  const auto n = static_cast<int64_t>(utterances.size());
  int64_t max_tokens = 0;
  for (const auto* u : utterances) {
    max_tokens = std::max<int64_t>(max_tokens, static_cast<int64_t>(u->tokens.size()));
  }
  Batch b;
  b.tokens = torch::zeros({n, max_tokens}, torch::kLong);
  b.durations = torch::zeros({n, max_tokens}, torch::kLong);
  b.token_lengths = torch::zeros({n}, torch::kLong);
  b.speakers = torch::zeros({n}, torch::kLong);
  b.emotions = torch::zeros({n}, torch::kLong);
  auto tok = b.tokens.accessor<int64_t, 2>();
  auto dur = b.durations.accessor<int64_t, 2>();
  for (int64_t i = 0; i < n; ++i) {
    const auto& u = *utterances[static_cast<std::size_t>(i)];
    if (u.frames() != static_cast<int>(mels[static_cast<std::size_t>(i)].frames)) {
      throw Error("utterance " + u.id + ": durations do not sum to the mel frame count");
    }
    for (std::size_t j = 0; j < u.tokens.size(); ++j) {
      tok[i][static_cast<int64_t>(j)] = u.tokens[j];
      dur[i][static_cast<int64_t>(j)] = u.durations[j];
    }
    b.token_lengths[i] = static_cast<int64_t>(u.tokens.size());
    b.speakers[i] = u.speaker_id;
    b.emotions[i] = u.emotion_id;
    b.ids.push_back(u.id);
  }
  b.token_mask = sequence_mask(b.token_lengths, max_tokens);
  std::tie(b.mels, b.frame_lengths) = stack_mels(mels);
  b.frame_mask = sequence_mask(b.frame_lengths, b.mels.size(1));
  return b;
}

// ---------------------------------------------------------------------------
// Loss bookkeeping

LossBreakdown LossBreakdown::from(const LossTerms& t, int64_t step) {
  auto v = [](const torch::Tensor& x) { return x.defined() ? x.item<double>() : 0.0; };
  LossBreakdown b;
  b.step = step;
  b.ladv = v(t.ladv);
  b.content = v(t.content);
  b.duration = v(t.duration);
  b.mel = v(t.mel);
  b.prior = v(t.prior);
  b.sadv = v(t.sadv);
  b.emo = v(t.emo);
  b.opl = v(t.opl);
  b.opedm = v(t.opedm);
  b.diff = v(t.diff);
  b.total = v(t.total);
  return b;
}

bool LossBreakdown::all_finite() const {
  for (double x : {ladv, content, duration, mel, prior, sadv, emo, opl, opedm, diff, total}) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string LossBreakdown::describe() const {
  std::ostringstream os;
  os << "L_ladv=" << ladv << " L_c=" << content << " L_dur=" << duration << " L_mel=" << mel
     << " L_sadv=" << sadv << " L_emo=" << emo << " L_opl=" << opl << " L_diff=" << diff
     << " L_total=" << total;
  return os.str();
}

void to_json(json& j, const LossBreakdown& b) {
  j = json{{"step", b.step},   {"L_ladv", b.ladv},   {"L_c", b.content},  {"L_dur", b.duration},
           {"L_mel", b.mel},   {"L_prior", b.prior}, {"L_sadv", b.sadv},  {"L_emo", b.emo},
           {"L_opl", b.opl},   {"L_opedm", b.opedm}, {"L_diff", b.diff},  {"L_total", b.total}};
}

void from_json(const json& j, LossBreakdown& b) {
  j.at("step").get_to(b.step);
  j.at("L_ladv").get_to(b.ladv);
  j.at("L_c").get_to(b.content);
  j.at("L_dur").get_to(b.duration);
  j.at("L_mel").get_to(b.mel);
  j.at("L_prior").get_to(b.prior);
  j.at("L_sadv").get_to(b.sadv);
  j.at("L_emo").get_to(b.emo);
  j.at("L_opl").get_to(b.opl);
  j.at("L_opedm").get_to(b.opedm);
  j.at("L_diff").get_to(b.diff);
  j.at("L_total").get_to(b.total);
}

// ---------------------------------------------------------------------------
// Model

DicletModelImpl::DicletModelImpl(const ModelConfig& cfg, const Ablations& ablations)
    : cfg_(cfg), ablations_(ablations) {
  cfg_.validate();
  text_encoder = register_module("text_encoder", TextEncoder(cfg_));
  text_adversary = register_module("text_adversary", TextSpeakerAdversary(cfg_));
  content_classifier = register_module("content_classifier", ContentClassifier(cfg_));
  duration_predictor = register_module("duration_predictor", DurationPredictor(cfg_));
  adaptor = register_module("adaptor", EmotionalAdaptor(cfg_, !ablations_.no_emotional_adaptor));
  reference_encoder = register_module("reference_encoder", ReferenceEncoder(cfg_));
  emotion_classifier = register_module(
      "emotion_classifier", EmbeddingClassifier(cfg_.emotion_dim, cfg_.num_emotions, false, 1.0));
  speaker_classifier = register_module(
      "speaker_classifier",
      EmbeddingClassifier(cfg_.emotion_dim, cfg_.num_speakers, true, cfg_.grl_scale));
  decoder = register_module("decoder", ScoreNetwork(cfg_, !ablations_.no_per_block_conditioning));
  speaker_table = register_module("speaker_table", SpeakerTable(cfg_.num_speakers, cfg_.speaker_dim));
}

torch::Tensor DicletModelImpl::embed_reference(const torch::Tensor& mels,
                                               const torch::Tensor& lengths) {
  return reference_encoder(mels, lengths);
}

torch::Tensor DicletModelImpl::embed_reference(const MelSpectrum& mel) {
  if (mel.frames == 0) throw Error("reference mel must have at least one frame");
  auto x = mel_to_tensor(mel).unsqueeze(0);
  return reference_encoder(x, torch::tensor({x.size(1)})).squeeze(0);
}

torch::Tensor DicletModelImpl::prior_mean(const torch::Tensor& l, const torch::Tensor& durations,
                                          const torch::Tensor& emotion, torch::Tensor* frame_mask) {
  auto [expanded, lengths] = length_regulate_batch(l, durations);
  auto mask = sequence_mask(lengths, expanded.size(1));
  if (frame_mask) *frame_mask = mask;
  return adaptor(expanded, emotion, mask);
}

torch::Tensor DicletModelImpl::score(const torch::Tensor& xt, const torch::Tensor& mu,
                                     const torch::Tensor& mask, const torch::Tensor& t,
                                     const torch::Tensor& speakers, const torch::Tensor& emotion) {
  return decoder(xt, mu, mask, t, speaker_table(speakers), emotion);
}

namespace {

/// Crops every row to a random window of `segment` frames inside its valid span.
void crop_segments(torch::Tensor& x0, torch::Tensor& mu, torch::Tensor& mask,
                   const torch::Tensor& lengths, int64_t segment, torch::Generator& gen) {
  if (segment <= 0 || x0.size(1) <= segment) return;
  const int64_t n = x0.size(0);
  auto u = torch::rand({n}, gen, torch::kDouble);
  std::vector<torch::Tensor> xs, ms, masks;
  for (int64_t b = 0; b < n; ++b) {
    const int64_t len = lengths[b].item<int64_t>();
    const int64_t room = std::max<int64_t>(len - segment, 0);
    const auto start = static_cast<int64_t>(std::floor(u[b].item<double>() * (room + 1)));
    auto window = torch::indexing::Slice(start, start + segment);
    xs.push_back(x0[b].index({window}));
    ms.push_back(mu[b].index({window}));
    masks.push_back(mask[b].index({window}));
  }
  x0 = torch::stack(xs);
  mu = torch::stack(ms);
  mask = torch::stack(masks);
}

}  // namespace

LossTerms DicletModelImpl::compute_losses(const Batch& batch, const DiffusionSchedule& schedule,
                                          torch::Generator& gen, const StepOptions& options) {
  auto d = [](const torch::Tensor& x) { return x.to(torch::kDouble); };
  const auto zero = torch::zeros({}, torch::kDouble);
  LossTerms out;

  // Prior text encoder.
  auto l = text_encoder(batch.tokens, batch.token_mask);
  out.ladv = d(speaker_adversarial_loss(text_adversary(l, batch.token_lengths), batch.speakers));
  out.content = ablations_.no_content_loss
                    ? zero
                    : d(content_loss(content_classifier(l), batch.tokens, batch.token_mask));

  // Emotion embedding from the utterance's own mel.
  auto e = reference_encoder(batch.mels, batch.frame_lengths);
  out.sadv = d(speaker_adversarial_loss(speaker_classifier(e), batch.speakers));
  out.emo = d(emotion_classification_loss(emotion_classifier(e), batch.emotions));
  out.opl = ablations_.no_opl ? zero : d(orthogonal_projection_loss(e, batch.emotions));
  out.opedm = edm_loss(out.sadv, out.emo, out.opl);

  auto predicted = duration_predictor(l, e, batch.token_mask);
  out.duration = d(duration_loss(predicted, batch.durations, batch.token_mask));

  torch::Tensor frame_mask;
  auto mu = prior_mean(l, batch.durations, e, &frame_mask);
  if (mu.size(1) != batch.mels.size(1)) throw Error("prior length differs from the mel length");
  out.mel = d(prior_mel_loss(mu, batch.mels, batch.frame_mask));
  out.prior = prior_loss(out.ladv, out.content, out.duration, out.mel);

  // Decoder.
  auto x0 = batch.mels;
  auto mu_dec = mu;
  auto mask = batch.frame_mask;
  crop_segments(x0, mu_dec, mask, batch.frame_lengths, options.decoder_segment, gen);
  auto spk = speaker_table(batch.speakers);
  ScoreFn fn = [&](const torch::Tensor& xt, const torch::Tensor& t) {
    return decoder(xt, mu_dec, mask, t, spk, e);
  };
  out.diff = d(diffusion_loss(schedule, x0, mu_dec, mask, fn, gen, options.t_epsilon,
                              options.fixed_t));

  out.total = total_loss(out.prior, out.opedm, out.diff);
  return out;
}

torch::Tensor DicletModelImpl::synthesize(const std::vector<int64_t>& tokens, int64_t speaker,
                                          const torch::Tensor& emotion,
                                          const DiffusionSchedule& schedule, int n_steps,
                                          torch::Generator& gen, double temperature,
                                          std::vector<int64_t>* durations_out) {
  if (tokens.empty()) throw Error("cannot synthesize an empty token sequence");
  if (speaker < 0 || speaker >= cfg_.num_speakers) {
    throw Error("unknown speaker id " + std::to_string(speaker) + " (model has " +
                std::to_string(cfg_.num_speakers) + " speakers)");
  }
  torch::NoGradGuard guard;
  auto e = emotion.dim() == 1 ? emotion.unsqueeze(0) : emotion;
  const auto n = static_cast<int64_t>(tokens.size());
  auto tok = torch::tensor(tokens, torch::kLong).unsqueeze(0);
  auto tmask = torch::ones({1, n}, torch::kBool);
  auto l = text_encoder(tok, tmask);
  auto durations = round_durations(duration_predictor(l, e, tmask).squeeze(0));
  if (durations_out) *durations_out = durations;
  auto dur = torch::tensor(durations, torch::kLong).unsqueeze(0);

  torch::Tensor mask;
  auto mu = prior_mean(l, dur, e, &mask);
  auto spk = speaker_table(torch::tensor({speaker}, torch::kLong));
  ScoreFn fn = [&](const torch::Tensor& xt, const torch::Tensor& t) {
    return decoder(xt, mu, mask, t, spk, e);
  };
  return reverse_ode_sample(schedule, mu, fn, n_steps, gen, temperature).squeeze(0);
}

}  // namespace diclet
