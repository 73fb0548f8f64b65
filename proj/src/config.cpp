#include "diclet/config.hpp"

#include <fstream>
#include <sstream>

#include "diclet/error.hpp"

namespace diclet {

ModelConfig ModelConfig::paper_scale() {
  ModelConfig c;
  c.mel_bands = 80;
  c.d_model = 448;
  c.text_blocks = 6;
  c.attention_heads = 8;
  c.ffn_hidden = 1024;
  c.adversary_hidden = 256;
  c.content_hidden = 256;
  c.duration_hidden = 256;
  c.emotion_dim = 256;
  c.reference_channels = {32, 32, 64, 64, 128, 128};
  c.reference_hidden = 128;
  c.speaker_dim = 64;
  c.decoder_channels = 64;
  c.decoder_mults = {1, 2, 4};
  c.decoder_blocks_per_level = 2;
  c.max_frames = 2048;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw Error(std::string("model.") + name + " must be positive");
  };
  positive(vocab_size, "vocab_size");
  positive(num_speakers, "num_speakers");
  positive(mel_bands, "mel_bands");
  positive(d_model, "d_model");
  positive(text_blocks, "text_blocks");
  positive(attention_heads, "attention_heads");
  positive(ffn_hidden, "ffn_hidden");
  positive(emotion_dim, "emotion_dim");
  positive(speaker_dim, "speaker_dim");
  positive(decoder_channels, "decoder_channels");
  positive(max_frames, "max_frames");
  if (num_emotions < 2) throw Error("model.num_emotions must be at least 2");
  if (d_model % attention_heads != 0) throw Error("d_model must be divisible by attention_heads");
  if (prenet_kernel % 2 == 0 || ffn_kernel % 2 == 0) throw Error("kernel sizes must be odd");
  if (reference_channels.empty()) throw Error("model.reference_channels must not be empty");
  if (decoder_mults.size() < 2) throw Error("model.decoder_mults needs at least two levels");
  for (int m : decoder_mults) {
    if ((decoder_channels * m) % 8 != 0) throw Error("decoder widths must be multiples of 8");
  }
  if (decoder_blocks_per_level < 1) throw Error("decoder_blocks_per_level must be >= 1");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"vocab_size", c.vocab_size},
           {"num_speakers", c.num_speakers},
           {"num_emotions", c.num_emotions},
           {"mel_bands", c.mel_bands},
           {"d_model", c.d_model},
           {"text_blocks", c.text_blocks},
           {"attention_heads", c.attention_heads},
           {"prenet_kernel", c.prenet_kernel},
           {"ffn_hidden", c.ffn_hidden},
           {"ffn_kernel", c.ffn_kernel},
           {"adversary_hidden", c.adversary_hidden},
           {"content_hidden", c.content_hidden},
           {"duration_hidden", c.duration_hidden},
           {"adaptor_blocks", c.adaptor_blocks},
           {"max_frames", c.max_frames},
           {"emotion_dim", c.emotion_dim},
           {"reference_channels", c.reference_channels},
           {"reference_hidden", c.reference_hidden},
           {"speaker_dim", c.speaker_dim},
           {"decoder_channels", c.decoder_channels},
           {"decoder_mults", c.decoder_mults},
           {"decoder_blocks_per_level", c.decoder_blocks_per_level},
           {"grl_scale", c.grl_scale}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d = j.value("preset", std::string()) == "paper" ? ModelConfig::paper_scale()
                                                                : ModelConfig{};
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.num_speakers = j.value("num_speakers", d.num_speakers);
  c.num_emotions = j.value("num_emotions", d.num_emotions);
  c.mel_bands = j.value("mel_bands", d.mel_bands);
  c.d_model = j.value("d_model", d.d_model);
  c.text_blocks = j.value("text_blocks", d.text_blocks);
  c.attention_heads = j.value("attention_heads", d.attention_heads);
  c.prenet_kernel = j.value("prenet_kernel", d.prenet_kernel);
  c.ffn_hidden = j.value("ffn_hidden", d.ffn_hidden);
  c.ffn_kernel = j.value("ffn_kernel", d.ffn_kernel);
  c.adversary_hidden = j.value("adversary_hidden", d.adversary_hidden);
  c.content_hidden = j.value("content_hidden", d.content_hidden);
  c.duration_hidden = j.value("duration_hidden", d.duration_hidden);
  c.adaptor_blocks = j.value("adaptor_blocks", d.adaptor_blocks);
  c.max_frames = j.value("max_frames", d.max_frames);
  c.emotion_dim = j.value("emotion_dim", d.emotion_dim);
  c.reference_channels = j.value("reference_channels", d.reference_channels);
  c.reference_hidden = j.value("reference_hidden", d.reference_hidden);
  c.speaker_dim = j.value("speaker_dim", d.speaker_dim);
  c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
  c.decoder_mults = j.value("decoder_mults", d.decoder_mults);
  c.decoder_blocks_per_level = j.value("decoder_blocks_per_level", d.decoder_blocks_per_level);
  c.grl_scale = j.value("grl_scale", d.grl_scale);
}

void check_compatible(const ModelConfig& from_config, const ModelConfig& from_checkpoint) {
  const json a = from_config;
  const json b = from_checkpoint;
  for (const auto& [key, value] : a.items()) {
    if (b.at(key) != value) {
      throw Error("model." + key + " mismatch: config has " + value.dump() +
                  ", checkpoint has " + b.at(key).dump());
    }
  }
}

void to_json(json& j, const ScheduleConfig& c) {
  j = json{{"beta0", c.beta0}, {"beta1", c.beta1}, {"t_epsilon", c.t_epsilon}};
}

void from_json(const json& j, ScheduleConfig& c) {
  ScheduleConfig d;
  c.beta0 = j.value("beta0", d.beta0);
  c.beta1 = j.value("beta1", d.beta1);
  c.t_epsilon = j.value("t_epsilon", d.t_epsilon);
}

void to_json(json& j, const Ablations& a) {
  j = json{{"no_content_loss", a.no_content_loss},
           {"no_emotional_adaptor", a.no_emotional_adaptor},
           {"no_opl", a.no_opl},
           {"no_per_block_conditioning", a.no_per_block_conditioning}};
}

void from_json(const json& j, Ablations& a) {
  a.no_content_loss = j.value("no_content_loss", false);
  a.no_emotional_adaptor = j.value("no_emotional_adaptor", false);
  a.no_opl = j.value("no_opl", false);
  a.no_per_block_conditioning = j.value("no_per_block_conditioning", false);
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error("train.batch_size must be at least 2 (pairwise losses)");
  if (steps < 0) throw Error("train.steps must be nonnegative");
  if (!(learning_rate > 0.0)) throw Error("train.learning_rate must be positive");
  if (checkpoint_every < 0) throw Error("train.checkpoint_every must be nonnegative");
  if (decoder_segment != 0 && decoder_segment < 4) {
    throw Error("train.decoder_segment must be 0 or at least 4");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"seed", c.seed},
           {"batch_size", c.batch_size},
           {"steps", c.steps},
           {"learning_rate", c.learning_rate},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_eps", c.adam_eps},
           {"grad_clip", c.grad_clip},
           {"checkpoint_every", c.checkpoint_every},
           {"decoder_segment", c.decoder_segment},
           {"ablations", c.ablations}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.seed = j.value("seed", d.seed);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.steps = j.value("steps", d.steps);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
  c.adam_eps = j.value("adam_eps", d.adam_eps);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.decoder_segment = j.value("decoder_segment", d.decoder_segment);
  c.ablations = j.value("ablations", Ablations{});
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"seed", c.seed},
           {"ode_steps", c.ode_steps},
           {"temperature", c.temperature},
           {"probe_repeats", c.probe_repeats},
           {"transfer_trials", c.transfer_trials},
           {"oracle_paths", c.oracle_paths},
           {"oracle_ode_samples", c.oracle_ode_samples}};
}

void from_json(const json& j, EvalConfig& c) {
  EvalConfig d;
  c.seed = j.value("seed", d.seed);
  c.ode_steps = j.value("ode_steps", d.ode_steps);
  c.temperature = j.value("temperature", d.temperature);
  c.probe_repeats = j.value("probe_repeats", d.probe_repeats);
  c.transfer_trials = j.value("transfer_trials", d.transfer_trials);
  c.oracle_paths = j.value("oracle_paths", d.oracle_paths);
  c.oracle_ode_samples = j.value("oracle_ode_samples", d.oracle_ode_samples);
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"corpus", c.corpus},
           {"model", c.model},
           {"schedule", c.schedule},
           {"train", c.train},
           {"eval", c.eval}};
}

void from_json(const json& j, RunConfig& c) {
  static const char* kSections[] = {"corpus", "model", "schedule", "train", "eval"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kSections), std::end(kSections), key) == std::end(kSections)) {
      throw Error("unknown config section: " + key);
    }
  }
  c.corpus = j.value("corpus", GenConfig{});
  c.model = j.value("model", ModelConfig{});
  c.schedule = j.value("schedule", ScheduleConfig{});
  c.train = j.value("train", TrainConfig{});
  c.eval = j.value("eval", EvalConfig{});
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read config file: " + path.string());
  try {
    return json::parse(in).get<RunConfig>();
  } catch (const json::exception& e) {
    throw Error("invalid config file " + path.string() + ": " + e.what());
  }
}

}  // namespace diclet
