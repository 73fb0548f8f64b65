#include "diclet/training.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "diclet/error.hpp"

namespace diclet {
namespace fs = std::filesystem;

namespace {

std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::vector<std::uint32_t> words;
  for (auto p : parts) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (std::uint64_t{out[0]} << 32) | out[1];
}

constexpr const char* kCheckpointFormat = "diclet-checkpoint-2";

}  // namespace

ModelConfig resolve_model_config(ModelConfig base, const Corpus& corpus,
                                 const LatentSignatures* signatures) {
  if (signatures) {
    base.vocab_size = signatures->vocab_size;
    base.num_speakers = signatures->num_speakers();
    base.num_emotions = signatures->num_categories();
    base.mel_bands = signatures->bands;
    return base;
  }
  if (corpus.utterances.empty()) throw Error("corpus has no utterances");
  int vocab = 0, speakers = 0, emotions = 0;
  for (const auto& u : corpus.utterances) {
    for (int t : u.tokens) vocab = std::max(vocab, t + 1);
    speakers = std::max(speakers, u.speaker_id + 1);
    emotions = std::max(emotions, u.emotion_id + 1);
  }
  base.vocab_size = vocab;
  base.num_speakers = speakers;
  base.num_emotions = emotions;
  base.mel_bands = static_cast<int>(read_mel(corpus.mel_file(corpus.utterances.front())).bands);
  return base;
}

// ---------------------------------------------------------------------------
// Data

TrainingData::TrainingData(const Corpus& corpus, std::uint64_t seed, std::string_view split)
    : seed_(seed) {
  for (const auto* u : corpus.split(split)) {
    utterances_.push_back(*u);
    mels_.push_back(corpus.load_mel(*u));
  }
  if (utterances_.empty()) {
    throw Error("corpus has no '" + std::string(split) + "' utterances");
  }
}

const std::vector<std::size_t>& TrainingData::permutation(int64_t epoch) {
  auto it = permutations_.find(epoch);
  if (it != permutations_.end()) return it->second;
  if (permutations_.size() > 4) permutations_.erase(permutations_.begin());
  std::vector<std::size_t> perm(utterances_.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed({seed_, 0xda7aULL, static_cast<std::uint64_t>(epoch)}));
  std::shuffle(perm.begin(), perm.end(), rng);
  return permutations_.emplace(epoch, std::move(perm)).first->second;
}

std::vector<std::size_t> TrainingData::batch_indices(int64_t step, int batch_size) {
  const auto n = static_cast<int64_t>(utterances_.size());
  std::vector<std::size_t> out;
  for (int64_t k = 0; k < batch_size; ++k) {
    const int64_t p = step * batch_size + k;
    out.push_back(permutation(p / n)[static_cast<std::size_t>(p % n)]);
  }
  return out;
}

Batch TrainingData::batch(int64_t step, int batch_size) {
  std::vector<const Utterance*> utts;
  std::vector<MelSpectrum> mels;
  for (auto i : batch_indices(step, batch_size)) {
    utts.push_back(&utterances_[i]);
    mels.push_back(mels_[i]);
  }
  return make_batch(utts, mels);
}

// ---------------------------------------------------------------------------
// State

TrainState::TrainState(const ModelConfig& model_cfg, const ScheduleConfig& schedule_cfg,
                       const TrainConfig& train_cfg)
    : schedule(schedule_cfg), schedule_config(schedule_cfg), train_config(train_cfg) {
  train_cfg.validate();
  torch::manual_seed(train_cfg.seed);
  model = DicletModel(model_cfg, train_cfg.ablations);
  optimizer = std::make_unique<torch::optim::Adam>(
      model->parameters(), torch::optim::AdamOptions(train_cfg.learning_rate)
                               .betas({train_cfg.adam_beta1, train_cfg.adam_beta2})
                               .eps(train_cfg.adam_eps));
}

torch::Generator TrainState::step_generator(int64_t s) const {
  return at::make_generator<at::CPUGeneratorImpl>(
      mix_seed({train_config.seed, 0xd1ffULL, static_cast<std::uint64_t>(s)}));
}

namespace {

LossTerms step_losses(TrainState& state, const Batch& batch) {
  auto gen = state.step_generator(state.step);
  StepOptions options;
  options.t_epsilon = state.schedule_config.t_epsilon;
  options.decoder_segment = state.train_config.decoder_segment;
  return state.model->compute_losses(batch, state.schedule, gen, options);
}

}  // namespace

LossBreakdown train_step(TrainState& state, const Batch& batch) {
  state.model->train();
  auto terms = step_losses(state, batch);
  auto logged = LossBreakdown::from(terms, state.step);
  if (!logged.all_finite()) {
    throw Error("non-finite loss at step " + std::to_string(state.step) + ": " + logged.describe());
  }
  state.optimizer->zero_grad();
  terms.total.backward();
  if (state.train_config.grad_clip > 0.0) {
    torch::nn::utils::clip_grad_norm_(state.model->parameters(), state.train_config.grad_clip);
  }
  state.optimizer->step();
  ++state.step;
  return logged;
}

LossBreakdown evaluate_losses(TrainState& state, const Batch& batch) {
  torch::NoGradGuard guard;
  state.model->eval();
  return LossBreakdown::from(step_losses(state, batch), state.step);
}

std::vector<LossBreakdown> train_loop(TrainState& state, TrainingData& data,
                                      const TrainLoopOptions& options) {
  std::vector<LossBreakdown> history;
  const int every = state.train_config.checkpoint_every;
  for (int64_t k = 0; k < options.steps; ++k) {
    auto batch = data.batch(state.step, state.train_config.batch_size);
    auto logged = train_step(state, batch);
    if (options.metrics) {
      *options.metrics << json(logged).dump() << '\n';
      options.metrics->flush();
    }
    if (options.on_step) options.on_step(logged);
    history.push_back(logged);
    if (!options.checkpoint_dir.empty() && every > 0 && state.step % every == 0) {
      save_checkpoint(state, options.checkpoint_dir / ("checkpoint_" + std::to_string(state.step) + ".pt"));
    }
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

// Adam keeps its state in a map keyed by tensor address, so its own save()
// writes entries in an order that changes between processes. Walk the
// parameters instead so that the archive bytes only depend on the values.
void save_adam_state(const torch::optim::Adam& opt, torch::serialize::OutputArchive& ar) {
  const auto& params = opt.param_groups().front().params();
  const auto& state = opt.state();
  ar.write("count", c10::IValue(static_cast<int64_t>(params.size())));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = state.find(params[i].unsafeGetTensorImpl());
    if (it == state.end()) continue;
    const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
    torch::serialize::OutputArchive entry;
    entry.write("step", c10::IValue(st.step()));
    entry.write("exp_avg", st.exp_avg(), true);
    entry.write("exp_avg_sq", st.exp_avg_sq(), true);
    ar.write(std::to_string(i), entry);
  }
}

void load_adam_state(torch::optim::Adam& opt, torch::serialize::InputArchive& ar) {
  const auto& params = opt.param_groups().front().params();
  c10::IValue count;
  ar.read("count", count);
  if (count.toInt() != static_cast<int64_t>(params.size())) {
    throw Error("optimizer state has " + std::to_string(count.toInt()) + " parameters, model has " +
                std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    torch::serialize::InputArchive entry;
    if (!ar.try_read(std::to_string(i), entry)) continue;
    auto st = std::make_unique<torch::optim::AdamParamState>();
    c10::IValue step;
    entry.read("step", step);
    st->step(step.toInt());
    torch::Tensor m, v;
    entry.read("exp_avg", m, true);
    entry.read("exp_avg_sq", v, true);
    st->exp_avg(m);
    st->exp_avg_sq(v);
    opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const fs::path& path) {
  json meta{{"format", kCheckpointFormat},
            {"model", state.model->config()},
            {"schedule", state.schedule_config},
            {"train", state.train_config}};
  torch::serialize::OutputArchive root;
  root.write("meta", c10::IValue(meta.dump()));
  root.write("step", c10::IValue(state.step));
  torch::serialize::OutputArchive model_ar;
  state.model->save(model_ar);
  root.write("model", model_ar);
  torch::serialize::OutputArchive opt_ar;
  save_adam_state(*state.optimizer, opt_ar);
  root.write("optimizer", opt_ar);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  try {
    root.save_to(path.string());
  } catch (const c10::Error& e) {
    throw Error("cannot write checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

namespace {

json read_meta(torch::serialize::InputArchive& root, const fs::path& path) {
  c10::IValue meta;
  if (!root.try_read("meta", meta) || !meta.isString()) {
    throw Error("corrupted checkpoint " + path.string() + ": missing configuration record");
  }
  json j;
  try {
    j = json::parse(meta.toStringRef());
  } catch (const json::exception&) {
    throw Error("corrupted checkpoint " + path.string() + ": unreadable configuration record");
  }
  if (j.value("format", std::string()) != kCheckpointFormat) {
    throw Error("corrupted checkpoint " + path.string() + ": unknown format tag");
  }
  return j;
}

void open_archive(torch::serialize::InputArchive& root, const fs::path& path) {
  if (!fs::exists(path)) throw Error("checkpoint not found: " + path.string());
  try {
    root.load_from(path.string());
  } catch (const c10::Error& e) {
    throw Error("corrupted checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
}

}  // namespace

ModelConfig checkpoint_model_config(const fs::path& path) {
  torch::serialize::InputArchive root;
  open_archive(root, path);
  return read_meta(root, path).at("model").get<ModelConfig>();
}

TrainState load_checkpoint(const fs::path& path) {
  torch::serialize::InputArchive root;
  open_archive(root, path);
  auto meta = read_meta(root, path);
  TrainState state(meta.at("model").get<ModelConfig>(), meta.at("schedule").get<ScheduleConfig>(),
                   meta.at("train").get<TrainConfig>());
  try {
    c10::IValue step;
    root.read("step", step);
    state.step = step.toInt();
    torch::serialize::InputArchive model_ar;
    root.read("model", model_ar);
    state.model->load(model_ar);
    torch::serialize::InputArchive opt_ar;
    root.read("optimizer", opt_ar);
    load_adam_state(*state.optimizer, opt_ar);
  } catch (const c10::Error& e) {
    throw Error("corrupted checkpoint " + path.string() + ": " + e.what_without_backtrace());
  }
  return state;
}

MelSpectrum synthesize(TrainState& state, const std::vector<int64_t>& tokens, int64_t speaker,
                       const MelSpectrum& reference, int n_steps, std::uint64_t seed,
                       double temperature, std::vector<int64_t>* durations_out) {
  torch::NoGradGuard guard;
  state.model->eval();
  if (reference.bands != static_cast<std::uint32_t>(state.model->config().mel_bands)) {
    throw Error("reference mel has " + std::to_string(reference.bands) + " bands, model expects " +
                std::to_string(state.model->config().mel_bands));
  }
  for (auto t : tokens) {
    if (t < 0 || t >= state.model->config().vocab_size) {
      throw Error("unknown token id " + std::to_string(t));
    }
  }
  auto e = state.model->embed_reference(reference);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto out = state.model->synthesize(tokens, speaker, e, state.schedule, n_steps, gen, temperature,
                                         durations_out);
  return tensor_to_mel(out);
}

}  // namespace diclet
