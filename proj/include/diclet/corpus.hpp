#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diclet/mel.hpp"
#include "json.hpp"

namespace diclet {

using json = nlohmann::json;

/// Name of the pooled category for every utterance of a neutral-only speaker.
inline constexpr std::string_view kNeutralN = "neutral_N";
inline constexpr std::string_view kNeutral = "neutral";

/// Ordered emotion label space; `neutral_N` is always the last entry.
class EmotionCategorySet {
 public:
  EmotionCategorySet() = default;
  /// `emotional` are the categories voiced by emotional speakers (neutral included).
  explicit EmotionCategorySet(std::vector<std::string> emotional);

  const std::vector<std::string>& names() const { return names_; }
  int size() const { return static_cast<int>(names_.size()); }
  int neutral_n() const { return size() - 1; }
  int index_of(std::string_view name) const;
  bool is_neutral(int id) const;

 private:
  std::vector<std::string> names_;
};

struct GenConfig {
  std::uint64_t seed = 7;
  int num_speakers = 4;
  int num_emotional_speakers = 1;
  std::vector<std::string> emotions = {"neutral", "happy", "sad", "angry"};
  /// Per-emotion duration multipliers, parallel to `emotions`; empty draws them from the seed.
  std::vector<double> tempo = {1.0, 0.75, 1.4, 0.85};
  int utterances_per_cell = 114;
  double test_fraction = 0.25;
  int vocab_size = 32;  ///< split evenly between language A (low ids) and B (high ids)
  int bands = 20;
  int tokens_min = 6;
  int tokens_max = 10;
  double base_duration_min = 2.0;
  double base_duration_max = 5.0;
  double noise_sigma = 0.1;
  double token_scale = 1.0;
  double speaker_scale = 0.6;
  double modulation_amplitude = 0.8;
  double period_min = 4.0;
  double period_step = 1.5;
  /// Optional explicit language per speaker (0 = A, 1 = B).
  std::vector<int> speaker_languages;

  void validate() const;
  int num_categories() const { return static_cast<int>(emotions.size()) + 1; }
};

void to_json(json& j, const GenConfig& c);
void from_json(const json& j, GenConfig& c);

struct Utterance {
  std::string id;
  int speaker_id = 0;
  int emotion_id = 0;
  int language_id = 0;
  std::vector<int> tokens;
  std::vector<int> durations;
  std::string mel_path;  ///< relative to the manifest directory
  std::string split = "train";

  int frames() const;
  bool operator==(const Utterance&) const = default;
};

void to_json(json& j, const Utterance& u);
void from_json(const json& j, Utterance& u);

/// Ground-truth generative factors behind every synthetic mel.
struct LatentSignatures {
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  double modulation_amplitude = 0.0;
  std::vector<std::string> categories;
  std::vector<int> speaker_languages;
  std::vector<std::vector<float>> speaker_envelopes;    ///< w_s, one per speaker
  std::vector<std::vector<float>> emotion_modulations;  ///< v_e, one per category
  std::vector<double> emotion_periods;                  ///< P_e in frames
  std::vector<double> duration_multipliers;             ///< rho_e
  std::vector<std::vector<float>> token_patterns;       ///< p_k, one per token id
  int vocab_size = 0;
  int bands = 0;

  int num_speakers() const { return static_cast<int>(speaker_envelopes.size()); }
  int num_categories() const { return static_cast<int>(categories.size()); }
  /// Token ids belonging to a language: [begin, end).
  std::pair<int, int> language_tokens(int language) const;
  /// Emotional modulation a*v_e*sin(2*pi*t/P_e) for one band.
  double modulation(int emotion, int frame, int band) const;

  bool operator==(const LatentSignatures&) const = default;
};

void to_json(json& j, const LatentSignatures& s);
void from_json(const json& j, LatentSignatures& s);

struct Corpus {
  std::filesystem::path root;  ///< directory that mel paths are resolved against
  std::vector<Utterance> utterances;

  std::filesystem::path mel_file(const Utterance& u) const { return root / u.mel_path; }
  std::vector<const Utterance*> split(std::string_view name) const;
  MelSpectrum load_mel(const Utterance& u) const { return read_mel(mel_file(u)); }

  bool operator==(const Corpus& o) const { return utterances == o.utterances; }
};

struct GeneratedCorpus {
  Corpus corpus;
  LatentSignatures signatures;
  std::filesystem::path manifest;
};

inline constexpr std::string_view kManifestName = "manifest.jsonl";
inline constexpr std::string_view kSignaturesName = "signatures.json";

/// Writes mel files, manifest.jsonl and signatures.json under `out_dir`.
GeneratedCorpus generate_corpus(const GenConfig& config, const std::filesystem::path& out_dir);

/// Draws the latent factors alone (pure function of the config).
LatentSignatures draw_signatures(const GenConfig& config);

/// Renders one utterance's mel from the latent factors; `noise_seed` drives epsilon.
MelSpectrum render_mel(const LatentSignatures& sig, const Utterance& utt, std::uint64_t noise_seed);

/// Validates every record and every referenced mel header.
Corpus load_manifest(const std::filesystem::path& path);
void save_manifest(const Corpus& corpus, const std::filesystem::path& path);

LatentSignatures load_signatures(const std::filesystem::path& path);
void save_signatures(const LatentSignatures& sig, const std::filesystem::path& path);

/// Time-averaged mel with token patterns (and the emotion term, when given) removed.
/// Equals w_s exactly for a noiseless corpus utterance.
std::vector<float> speaker_residual(const LatentSignatures& sig, const MelSpectrum& mel,
                                    std::span<const int> tokens, std::span<const int> durations,
                                    std::optional<int> emotion);

/// Least-squares assignment of a residual to the closest speaker envelope.
int assign_speaker(const LatentSignatures& sig, std::span<const float> residual);

}  // namespace diclet
