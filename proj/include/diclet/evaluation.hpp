#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "diclet/config.hpp"
#include "diclet/corpus.hpp"
#include "diclet/diffusion.hpp"
#include "diclet/training.hpp"

namespace diclet {

/// Multinomial logistic regression on standardized features, fit with L-BFGS.
class LinearProbe {
 public:
  explicit LinearProbe(double l2 = 1e-3, int max_iter = 200) : l2_(l2), max_iter_(max_iter) {}

  void fit(const torch::Tensor& x, const std::vector<int>& labels, int classes);
  std::vector<int> predict(const torch::Tensor& x) const;
  double accuracy(const torch::Tensor& x, const std::vector<int>& labels) const;

 private:
  double l2_;
  int max_iter_;
  torch::Tensor mean_, scale_, weight_, bias_;
};

/// Held-out accuracy of a linear probe under a stratified 80/20 split seeded by
/// `split_seed`. Needs at least two labels and ten samples per label.
double linear_probe(const torch::Tensor& embeddings, const std::vector<int>& labels,
                    std::uint64_t split_seed);

/// Mean of linear_probe over `repeats` consecutive split seeds.
double linear_probe_mean(const torch::Tensor& embeddings, const std::vector<int>& labels,
                         std::uint64_t split_seed, int repeats);

/// Mean pairwise cosine between every pair of groups. Within a group, a vector
/// is not paired with itself unless the group has a single member.
std::vector<std::vector<double>> cosine_report(const std::vector<torch::Tensor>& groups);

/// Principal-component projection to two axes. Axis signs are fixed so that the
/// largest-magnitude loading of each axis is positive.
torch::Tensor project_2d(const torch::Tensor& embeddings);

/// Optional stochastic-neighbor refinement of a 2-D layout (exact t-SNE gradient).
torch::Tensor tsne_refine(const torch::Tensor& embeddings, const torch::Tensor& init,
                          double perplexity, int iterations, std::uint64_t seed);

struct OplStructure {
  double same = 0.0;
  double different = 0.0;
  double loss = 0.0;
  int64_t same_pairs = 0;
  int64_t different_pairs = 0;
};

OplStructure opl_structure_report(const torch::Tensor& embeddings, const std::vector<int>& labels);

/// Gaussian-oracle checks of the diffusion mathematics.
struct DiffusionOracleOptions {
  int paths = 100000;          ///< forward-process paths
  int em_steps = 1000;         ///< Euler-Maruyama steps for the forward SDE
  int sampler_runs = 10000;    ///< reverse-sampler runs
  int sampler_steps = 200;
  double x0 = 2.0;             ///< forward start point
  double mu = 0.0;
  double data_mean = 1.5;      ///< Gaussian data for the reverse-sampler test
  double data_std = 0.5;
  std::vector<double> times = {0.25, 0.5, 1.0};
  std::uint64_t seed = 11;
};

/// Keys: forward (per time: closed-form, marginal-sample and EM moments with
/// relative errors), zero_loss, ode and sde (sample moments vs data moments),
/// plus the worst relative errors.
json diffusion_oracle_report(const DiffusionSchedule& schedule, const DiffusionOracleOptions& options);

/// Unconditional score of X_t when X_0 ~ N(m, s^2) elementwise.
torch::Tensor gaussian_data_score(const DiffusionSchedule& schedule, const torch::Tensor& xt,
                                  const torch::Tensor& t, double mu, double m, double s);

// ---------------------------------------------------------------------------
// Model-level analyses

struct EmbeddingRecord {
  std::string utterance_id;
  int speaker_id = 0;
  int emotion_id = 0;
  std::vector<float> embedding;
};

void to_json(json& j, const EmbeddingRecord& r);
void from_json(const json& j, EmbeddingRecord& r);

/// e_i of every utterance in `utterances`, one batch at a time.
std::vector<EmbeddingRecord> embed_utterances(DicletModel& model, const Corpus& corpus,
                                              const std::vector<const Utterance*>& utterances,
                                              int batch_size = 32);

void write_embeddings(const std::vector<EmbeddingRecord>& records, const std::filesystem::path& path);
std::vector<EmbeddingRecord> read_embeddings(const std::filesystem::path& path);
torch::Tensor embedding_matrix(const std::vector<EmbeddingRecord>& records);

/// Writes id,x,y,speaker_id,emotion_id.
void write_projection_csv(const std::vector<EmbeddingRecord>& records, const torch::Tensor& xy,
                          const std::filesystem::path& path);

struct DisentanglementReport {
  double emotion_probe = 0.0;
  double speaker_probe = 0.0;         ///< within the neutral_N stratum
  double speaker_probe_chance = 0.0;
  double speaker_probe_all = 0.0;     ///< over every held-out reference (speaker and emotion confounded)
  int emotion_classes = 0;
  int speaker_classes = 0;
};

/// Emotion probe over all records; speaker probe over the neutral_N stratum,
/// where emotion is constant and only speaker identity can separate classes.
DisentanglementReport disentanglement_report(const std::vector<EmbeddingRecord>& records,
                                             int neutral_n, std::uint64_t seed, int repeats);

struct TransferTrial {
  int speaker = 0;
  int emotion = 0;
  std::string reference_id;
  std::vector<int64_t> tokens;
  int assigned_speaker = -1;
  int predicted_emotion = -1;
  int frames = 0;
};

struct TransferReport {
  std::vector<TransferTrial> trials;
  double speaker_accuracy = 0.0;
  double emotion_accuracy = 0.0;
};

/// Synthesizes tokens of the language a target speaker never spoke, with an
/// emotional reference from another speaker. The speaker is assigned by the
/// corpus signature regression and the emotion by a probe fit on `reference_records`.
TransferReport cross_transfer_report(TrainState& state, const Corpus& corpus,
                                     const LatentSignatures& signatures,
                                     const std::vector<EmbeddingRecord>& reference_records,
                                     int trials, int ode_steps, double temperature,
                                     std::uint64_t seed);

json to_json_report(const DisentanglementReport& r);
json to_json_report(const TransferReport& r);

}  // namespace diclet
