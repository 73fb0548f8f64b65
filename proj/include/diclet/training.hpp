#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <vector>

#include <torch/torch.h>

#include "diclet/config.hpp"
#include "diclet/corpus.hpp"
#include "diclet/model.hpp"

namespace diclet {

/// Fills the label-space sizes of `base` from the corpus (signatures when available).
ModelConfig resolve_model_config(ModelConfig base, const Corpus& corpus,
                                 const LatentSignatures* signatures);

/// Training utterances with their mels held in memory, and the deterministic
/// batch order: position p of the stream draws from a per-epoch shuffle seeded by
/// (seed, p / N), so any step's batch is a pure function of (seed, step).
class TrainingData {
 public:
  TrainingData(const Corpus& corpus, std::uint64_t seed, std::string_view split = "train");

  std::size_t size() const { return utterances_.size(); }
  Batch batch(int64_t step, int batch_size);
  std::vector<std::size_t> batch_indices(int64_t step, int batch_size);
  const Utterance& utterance(std::size_t i) const { return utterances_[i]; }
  const MelSpectrum& mel(std::size_t i) const { return mels_[i]; }

 private:
  const std::vector<std::size_t>& permutation(int64_t epoch);

  std::uint64_t seed_;
  std::vector<Utterance> utterances_;
  std::vector<MelSpectrum> mels_;
  std::map<int64_t, std::vector<std::size_t>> permutations_;
};

/// Step counter, parameters, and optimizer moments. The random streams of a
/// step are derived from (seed, step), so these three fully determine the rest
/// of the run.
class TrainState {
 public:
  TrainState(const ModelConfig& model, const ScheduleConfig& schedule, const TrainConfig& train);

  DicletModel model{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer;
  DiffusionSchedule schedule;
  ScheduleConfig schedule_config;
  TrainConfig train_config;
  int64_t step = 0;

  /// Generator for the noise of a given step.
  torch::Generator step_generator(int64_t step) const;
};

/// One optimizer update on the joint objective. Throws on a non-finite loss,
/// naming the step and every component.
LossBreakdown train_step(TrainState& state, const Batch& batch);

/// Losses of a batch without an update (same random draws as train_step would use).
LossBreakdown evaluate_losses(TrainState& state, const Batch& batch);

struct TrainLoopOptions {
  int64_t steps = 0;                          ///< updates to run from the current step
  std::ostream* metrics = nullptr;            ///< JSON-lines sink
  std::filesystem::path checkpoint_dir;       ///< empty disables periodic checkpoints
  std::function<void(const LossBreakdown&)> on_step;
};

std::vector<LossBreakdown> train_loop(TrainState& state, TrainingData& data,
                                      const TrainLoopOptions& options);

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Restores a state; throws on a missing or corrupted file.
TrainState load_checkpoint(const std::filesystem::path& path);
/// Reads only the configuration echo of a checkpoint.
ModelConfig checkpoint_model_config(const std::filesystem::path& path);

/// Text + speaker + reference mel -> mel, through the trained pipeline.
MelSpectrum synthesize(TrainState& state, const std::vector<int64_t>& tokens, int64_t speaker,
                       const MelSpectrum& reference, int n_steps, std::uint64_t seed,
                       double temperature = 1.0, std::vector<int64_t>* durations_out = nullptr);

}  // namespace diclet
