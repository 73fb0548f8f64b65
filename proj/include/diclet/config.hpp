#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diclet/corpus.hpp"

namespace diclet {

/// Architecture widths. Label-space sizes are filled in from the corpus at train time.
struct ModelConfig {
  int vocab_size = 32;
  int num_speakers = 4;
  int num_emotions = 5;  ///< categories including neutral_N
  int mel_bands = 20;

  // Prior text encoder.
  int d_model = 64;
  int text_blocks = 2;
  int attention_heads = 2;
  int prenet_kernel = 5;
  int ffn_hidden = 128;
  int ffn_kernel = 3;
  int adversary_hidden = 64;
  int content_hidden = 64;
  int duration_hidden = 64;
  int adaptor_blocks = 2;
  int max_frames = 512;

  // OP-EDM.
  int emotion_dim = 32;
  std::vector<int> reference_channels = {16, 32, 32};
  int reference_hidden = 32;

  // Decoder.
  int speaker_dim = 32;
  int decoder_channels = 32;
  std::vector<int> decoder_mults = {1, 2, 2};
  int decoder_blocks_per_level = 1;

  double grl_scale = 1.0;

  /// Widths reported by the paper-scale setup (448-d text, 256-d emotion, 80 bands).
  static ModelConfig paper_scale();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(json& j, const ModelConfig& c);
void from_json(const json& j, ModelConfig& c);

/// Throws naming the first field whose value differs, with both values.
void check_compatible(const ModelConfig& from_config, const ModelConfig& from_checkpoint);

struct ScheduleConfig {
  double beta0 = 0.05;
  double beta1 = 20.0;
  double t_epsilon = 1e-3;
  bool operator==(const ScheduleConfig&) const = default;
};

void to_json(json& j, const ScheduleConfig& c);
void from_json(const json& j, ScheduleConfig& c);

struct Ablations {
  bool no_content_loss = false;
  bool no_emotional_adaptor = false;
  bool no_opl = false;
  bool no_per_block_conditioning = false;
  bool operator==(const Ablations&) const = default;
};

void to_json(json& j, const Ablations& a);
void from_json(const json& j, Ablations& a);

struct TrainConfig {
  std::uint64_t seed = 1;
  int batch_size = 8;
  int steps = 5000;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  int checkpoint_every = 1000;
  /// Frames per decoder training segment; 0 trains on whole utterances.
  int decoder_segment = 0;
  Ablations ablations;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);

struct EvalConfig {
  std::uint64_t seed = 11;
  int ode_steps = 50;
  double temperature = 1.0;
  int probe_repeats = 5;
  int transfer_trials = 10;
  int oracle_paths = 100000;
  int oracle_ode_samples = 10000;
  bool operator==(const EvalConfig&) const = default;
};

void to_json(json& j, const EvalConfig& c);
void from_json(const json& j, EvalConfig& c);

/// One JSON file describes a run: {corpus, model, schedule, train, eval}.
struct RunConfig {
  GenConfig corpus;
  ModelConfig model;
  ScheduleConfig schedule;
  TrainConfig train;
  EvalConfig eval;
};

void to_json(json& j, const RunConfig& c);
void from_json(const json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace diclet
