#include "diclet/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "diclet/error.hpp"

namespace diclet {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// EmotionCategorySet

EmotionCategorySet::EmotionCategorySet(std::vector<std::string> emotional)
    : names_(std::move(emotional)) {
  if (names_.empty()) throw Error("emotion category set needs at least one emotional category");
  for (const auto& n : names_) {
    if (n == kNeutralN) throw Error("neutral_N is reserved and appended automatically");
  }
  names_.emplace_back(kNeutralN);
}

int EmotionCategorySet::index_of(std::string_view name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw Error("unknown emotion category: " + std::string(name));
  return static_cast<int>(it - names_.begin());
}

bool EmotionCategorySet::is_neutral(int id) const {
  return names_.at(static_cast<std::size_t>(id)) == kNeutral || id == neutral_n();
}

// ---------------------------------------------------------------------------
// GenConfig

void GenConfig::validate() const {
  if (num_speakers <= 0) throw Error("corpus needs at least one speaker");
  if (num_emotional_speakers < 0 || num_emotional_speakers > num_speakers) {
    throw Error("num_emotional_speakers must lie in [0, num_speakers]");
  }
  if (emotions.empty()) throw Error("corpus needs at least one emotion category");
  if (utterances_per_cell <= 0) throw Error("utterances_per_cell must be positive");
  if (bands < 4) throw Error("mel band count must be at least 4, got " + std::to_string(bands));
  if (vocab_size < 2 || vocab_size % 2 != 0) throw Error("vocab_size must be even and >= 2");
  if (tokens_min < 1 || tokens_max < tokens_min) throw Error("invalid token count range");
  if (base_duration_min < 0.5 || base_duration_max < base_duration_min) {
    throw Error("invalid base duration range");
  }
  if (noise_sigma < 0.0) throw Error("noise_sigma must be nonnegative");
  if (test_fraction < 0.0 || test_fraction >= 1.0) throw Error("test_fraction must be in [0, 1)");
  if (!tempo.empty()) {
    if (tempo.size() != emotions.size()) throw Error("tempo must be parallel to emotions");
    for (std::size_t i = 0; i < tempo.size(); ++i) {
      if (!(tempo[i] > 0.0)) throw Error("tempo multipliers must be positive");
      if (emotions[i] == kNeutral && tempo[i] != 1.0) throw Error("neutral tempo must equal 1");
    }
  }
  if (!speaker_languages.empty() &&
      speaker_languages.size() != static_cast<std::size_t>(num_speakers)) {
    throw Error("speaker_languages must list one language per speaker");
  }
  for (int l : speaker_languages) {
    if (l != 0 && l != 1) throw Error("speaker languages must be 0 or 1");
  }
  EmotionCategorySet check(emotions);
  (void)check;
}

void to_json(json& j, const GenConfig& c) {
  j = json{{"seed", c.seed},
           {"num_speakers", c.num_speakers},
           {"num_emotional_speakers", c.num_emotional_speakers},
           {"emotions", c.emotions},
           {"tempo", c.tempo},
           {"utterances_per_cell", c.utterances_per_cell},
           {"test_fraction", c.test_fraction},
           {"vocab_size", c.vocab_size},
           {"bands", c.bands},
           {"tokens_min", c.tokens_min},
           {"tokens_max", c.tokens_max},
           {"base_duration_min", c.base_duration_min},
           {"base_duration_max", c.base_duration_max},
           {"noise_sigma", c.noise_sigma},
           {"token_scale", c.token_scale},
           {"speaker_scale", c.speaker_scale},
           {"modulation_amplitude", c.modulation_amplitude},
           {"period_min", c.period_min},
           {"period_step", c.period_step},
           {"speaker_languages", c.speaker_languages}};
}

void from_json(const json& j, GenConfig& c) {
  GenConfig d;
  c.seed = j.value("seed", d.seed);
  c.num_speakers = j.value("num_speakers", d.num_speakers);
  c.num_emotional_speakers = j.value("num_emotional_speakers", d.num_emotional_speakers);
  c.emotions = j.value("emotions", d.emotions);
  // A custom emotion list without tempos draws them from the seed.
  c.tempo = j.contains("tempo") ? j.at("tempo").get<std::vector<double>>()
            : j.contains("emotions") ? std::vector<double>{}
                                     : d.tempo;
  c.utterances_per_cell = j.value("utterances_per_cell", d.utterances_per_cell);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.bands = j.value("bands", d.bands);
  c.tokens_min = j.value("tokens_min", d.tokens_min);
  c.tokens_max = j.value("tokens_max", d.tokens_max);
  c.base_duration_min = j.value("base_duration_min", d.base_duration_min);
  c.base_duration_max = j.value("base_duration_max", d.base_duration_max);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.token_scale = j.value("token_scale", d.token_scale);
  c.speaker_scale = j.value("speaker_scale", d.speaker_scale);
  c.modulation_amplitude = j.value("modulation_amplitude", d.modulation_amplitude);
  c.period_min = j.value("period_min", d.period_min);
  c.period_step = j.value("period_step", d.period_step);
  c.speaker_languages = j.value("speaker_languages", d.speaker_languages);
}

// ---------------------------------------------------------------------------
// Utterance

int Utterance::frames() const { return std::accumulate(durations.begin(), durations.end(), 0); }

void to_json(json& j, const Utterance& u) {
  j = json{{"id", u.id},
           {"speaker_id", u.speaker_id},
           {"emotion_id", u.emotion_id},
           {"language_id", u.language_id},
           {"tokens", u.tokens},
           {"durations", u.durations},
           {"mel_path", u.mel_path},
           {"split", u.split}};
}

void from_json(const json& j, Utterance& u) {
  j.at("id").get_to(u.id);
  j.at("speaker_id").get_to(u.speaker_id);
  j.at("emotion_id").get_to(u.emotion_id);
  j.at("language_id").get_to(u.language_id);
  j.at("tokens").get_to(u.tokens);
  j.at("durations").get_to(u.durations);
  j.at("mel_path").get_to(u.mel_path);
  u.split = j.value("split", std::string("train"));
}

// ---------------------------------------------------------------------------
// LatentSignatures

std::pair<int, int> LatentSignatures::language_tokens(int language) const {
  const int half = vocab_size / 2;
  return language == 0 ? std::pair{0, half} : std::pair{half, vocab_size};
}

double LatentSignatures::modulation(int emotion, int frame, int band) const {
  const double period = emotion_periods[static_cast<std::size_t>(emotion)];
  if (period <= 0.0) return 0.0;
  return modulation_amplitude * emotion_modulations[static_cast<std::size_t>(emotion)][band] *
         std::sin(2.0 * std::numbers::pi * frame / period);
}

void to_json(json& j, const LatentSignatures& s) {
  j = json{{"seed", s.seed},
           {"noise_sigma", s.noise_sigma},
           {"modulation_amplitude", s.modulation_amplitude},
           {"categories", s.categories},
           {"speaker_languages", s.speaker_languages},
           {"w_s", s.speaker_envelopes},
           {"v_e", s.emotion_modulations},
           {"period_e", s.emotion_periods},
           {"rho_e", s.duration_multipliers},
           {"p_k", s.token_patterns},
           {"vocab_size", s.vocab_size},
           {"bands", s.bands}};
}

void from_json(const json& j, LatentSignatures& s) {
  j.at("seed").get_to(s.seed);
  j.at("noise_sigma").get_to(s.noise_sigma);
  j.at("modulation_amplitude").get_to(s.modulation_amplitude);
  j.at("categories").get_to(s.categories);
  j.at("speaker_languages").get_to(s.speaker_languages);
  j.at("w_s").get_to(s.speaker_envelopes);
  j.at("v_e").get_to(s.emotion_modulations);
  j.at("period_e").get_to(s.emotion_periods);
  j.at("rho_e").get_to(s.duration_multipliers);
  j.at("p_k").get_to(s.token_patterns);
  j.at("vocab_size").get_to(s.vocab_size);
  j.at("bands").get_to(s.bands);
}

// ---------------------------------------------------------------------------
// Generation

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::uint64_t> salt) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto s : salt) {
    words.push_back(static_cast<std::uint32_t>(s));
    words.push_back(static_cast<std::uint32_t>(s >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

std::vector<float> gaussian_vector(std::mt19937_64& rng, int n, double scale) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<float>(scale * normal(rng));
  return v;
}

std::string category_slug(const std::string& name) {
  std::string s = name;
  std::replace(s.begin(), s.end(), ' ', '-');
  return s;
}

}  // namespace

LatentSignatures draw_signatures(const GenConfig& config) {
  config.validate();
  const EmotionCategorySet cats(config.emotions);
  auto rng = stream(config.seed, {0x5157u});

  LatentSignatures sig;
  sig.seed = config.seed;
  sig.noise_sigma = config.noise_sigma;
  sig.modulation_amplitude = config.modulation_amplitude;
  sig.categories = cats.names();
  sig.vocab_size = config.vocab_size;
  sig.bands = config.bands;

  if (!config.speaker_languages.empty()) {
    sig.speaker_languages = config.speaker_languages;
  } else {
    // Emotional speakers speak language B; the first half of the neutral-only
    // speakers share it, the rest speak language A only.
    const int neutral_only = config.num_speakers - config.num_emotional_speakers;
    for (int s = 0; s < config.num_speakers; ++s) {
      const int k = s - config.num_emotional_speakers;
      sig.speaker_languages.push_back(k < 0 || k < neutral_only / 2 ? 1 : 0);
    }
  }

  for (int k = 0; k < config.vocab_size; ++k) {
    sig.token_patterns.push_back(gaussian_vector(rng, config.bands, config.token_scale));
  }
  for (int s = 0; s < config.num_speakers; ++s) {
    sig.speaker_envelopes.push_back(gaussian_vector(rng, config.bands, config.speaker_scale));
  }

  std::uniform_real_distribution<double> tempo_draw(0.7, 1.4);
  for (int e = 0; e < cats.size(); ++e) {
    if (e == cats.neutral_n()) {
      // Neutral-only speakers read flat: no modulation, unit tempo.
      sig.emotion_modulations.emplace_back(static_cast<std::size_t>(config.bands), 0.0f);
      sig.emotion_periods.push_back(0.0);
      sig.duration_multipliers.push_back(1.0);
      continue;
    }
    auto v = gaussian_vector(rng, config.bands, 1.0);
    double rms = 0.0;
    for (float x : v) rms += double{x} * x;
    rms = std::sqrt(rms / v.size());
    for (auto& x : v) x = static_cast<float>(x / rms);
    sig.emotion_modulations.push_back(std::move(v));
    sig.emotion_periods.push_back(config.period_min + config.period_step * e);
    const double drawn = tempo_draw(rng);
    if (!config.tempo.empty()) {
      sig.duration_multipliers.push_back(config.tempo[static_cast<std::size_t>(e)]);
    } else {
      sig.duration_multipliers.push_back(cats.names()[e] == kNeutral ? 1.0 : drawn);
    }
  }
  return sig;
}

MelSpectrum render_mel(const LatentSignatures& sig, const Utterance& utt,
                       std::uint64_t noise_seed) {
  const int frames = utt.frames();
  MelSpectrum mel(static_cast<std::uint32_t>(frames), static_cast<std::uint32_t>(sig.bands));
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& w = sig.speaker_envelopes.at(static_cast<std::size_t>(utt.speaker_id));

  int t = 0;
  for (std::size_t j = 0; j < utt.tokens.size(); ++j) {
    const auto& p = sig.token_patterns.at(static_cast<std::size_t>(utt.tokens[j]));
    for (int r = 0; r < utt.durations[j]; ++r, ++t) {
      for (int f = 0; f < sig.bands; ++f) {
        double v = double{p[f]} + double{w[f]} + sig.modulation(utt.emotion_id, t, f);
        if (sig.noise_sigma > 0.0) v += sig.noise_sigma * normal(rng);
        mel.at(t, f) = static_cast<float>(v);
      }
    }
  }
  return mel;
}

GeneratedCorpus generate_corpus(const GenConfig& config, const fs::path& out_dir) {
  GeneratedCorpus out;
  out.signatures = draw_signatures(config);
  const auto& sig = out.signatures;
  const EmotionCategorySet cats(config.emotions);

  fs::create_directories(out_dir / "mels");
  out.corpus.root = out_dir;

  const int n_test = static_cast<int>(std::lround(config.utterances_per_cell * config.test_fraction));
  for (int s = 0; s < config.num_speakers; ++s) {
    std::vector<int> cells;
    if (s < config.num_emotional_speakers) {
      for (int e = 0; e < static_cast<int>(config.emotions.size()); ++e) cells.push_back(e);
    } else {
      cells.push_back(cats.neutral_n());
    }
    const int language = sig.speaker_languages[static_cast<std::size_t>(s)];
    const auto [tok_lo, tok_hi] = sig.language_tokens(language);

    for (int e : cells) {
      const double rho = sig.duration_multipliers[static_cast<std::size_t>(e)];
      for (int i = 0; i < config.utterances_per_cell; ++i) {
        auto rng = stream(config.seed, {std::uint64_t(s), std::uint64_t(e), std::uint64_t(i)});
        std::uniform_int_distribution<int> count(config.tokens_min, config.tokens_max);
        std::uniform_int_distribution<int> token(tok_lo, tok_hi - 1);
        std::uniform_real_distribution<double> base(config.base_duration_min,
                                                     config.base_duration_max);
        Utterance u;
        u.speaker_id = s;
        u.emotion_id = e;
        u.language_id = language;
        const int n_tokens = count(rng);
        for (int k = 0; k < n_tokens; ++k) {
          u.tokens.push_back(token(rng));
          u.durations.push_back(std::max(1, static_cast<int>(std::lround(base(rng) * rho))));
        }
        char idbuf[96];
        std::snprintf(idbuf, sizeof idbuf, "s%d_%s_%04d", s,
                      category_slug(cats.names()[e]).c_str(), i);
        u.id = idbuf;
        u.mel_path = "mels/" + u.id + ".dmel";
        u.split = i >= config.utterances_per_cell - n_test ? "test" : "train";

        write_mel(render_mel(sig, u, rng()), out_dir / u.mel_path);
        out.corpus.utterances.push_back(std::move(u));
      }
    }
  }

  out.manifest = out_dir / kManifestName;
  save_manifest(out.corpus, out.manifest);
  save_signatures(sig, out_dir / kSignaturesName);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest / signatures I/O

std::vector<const Utterance*> Corpus::split(std::string_view name) const {
  std::vector<const Utterance*> out;
  for (const auto& u : utterances) {
    if (u.split == name) out.push_back(&u);
  }
  return out;
}

Corpus load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest: " + path.string());
  Corpus corpus;
  corpus.root = path.parent_path();

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Utterance u;
    try {
      json::parse(line).get_to(u);
    } catch (const json::exception& e) {
      throw Error("malformed manifest record at line " + std::to_string(line_no) + ": " +
                  e.what());
    }
    if (u.tokens.empty()) {
      throw Error("manifest line " + std::to_string(line_no) + ": utterance " + u.id +
                  " has no tokens");
    }
    if (u.tokens.size() != u.durations.size()) {
      throw Error("manifest line " + std::to_string(line_no) + ": utterance " + u.id +
                  " has " + std::to_string(u.tokens.size()) + " tokens but " +
                  std::to_string(u.durations.size()) + " durations");
    }
    if (std::any_of(u.durations.begin(), u.durations.end(), [](int d) { return d < 1; })) {
      throw Error("manifest line " + std::to_string(line_no) + ": utterance " + u.id +
                  " has a duration below 1");
    }
    const fs::path mel = corpus.mel_file(u);
    if (!fs::exists(mel)) {
      throw Error("missing mel file for utterance " + u.id + ": " + mel.string());
    }
    const auto frames = read_mel_frames(mel);
    if (static_cast<int>(frames) != u.frames()) {
      throw Error("utterance " + u.id + ": durations sum to " + std::to_string(u.frames()) +
                  " but mel has " + std::to_string(frames) + " frames");
    }
    corpus.utterances.push_back(std::move(u));
  }
  return corpus;
}

void save_manifest(const Corpus& corpus, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write manifest: " + path.string());
  for (const auto& u : corpus.utterances) out << json(u).dump() << '\n';
}

LatentSignatures load_signatures(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open signatures: " + path.string());
  try {
    return json::parse(in).get<LatentSignatures>();
  } catch (const json::exception& e) {
    throw Error("malformed signatures file " + path.string() + ": " + e.what());
  }
}

void save_signatures(const LatentSignatures& sig, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write signatures: " + path.string());
  out << json(sig).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Speaker-signature oracle

std::vector<float> speaker_residual(const LatentSignatures& sig, const MelSpectrum& mel,
                                    std::span<const int> tokens, std::span<const int> durations,
                                    std::optional<int> emotion) {
  if (tokens.size() != durations.size()) throw Error("tokens and durations differ in length");
  const int total = std::accumulate(durations.begin(), durations.end(), 0);
  if (total != static_cast<int>(mel.frames) || mel.frames == 0) {
    throw Error("durations sum to " + std::to_string(total) + " but mel has " +
                std::to_string(mel.frames) + " frames");
  }
  if (static_cast<int>(mel.bands) != sig.bands) throw Error("mel band count mismatch");

  std::vector<double> acc(static_cast<std::size_t>(sig.bands), 0.0);
  int t = 0;
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    const auto& p = sig.token_patterns.at(static_cast<std::size_t>(tokens[j]));
    for (int r = 0; r < durations[j]; ++r, ++t) {
      for (int f = 0; f < sig.bands; ++f) {
        double v = double{mel.at(t, f)} - p[f];
        if (emotion) v -= sig.modulation(*emotion, t, f);
        acc[f] += v;
      }
    }
  }
  std::vector<float> out(acc.size());
  for (std::size_t f = 0; f < acc.size(); ++f) out[f] = static_cast<float>(acc[f] / total);
  return out;
}

int assign_speaker(const LatentSignatures& sig, std::span<const float> residual) {
  int best = -1;
  double best_err = std::numeric_limits<double>::infinity();
  for (int s = 0; s < sig.num_speakers(); ++s) {
    const auto& w = sig.speaker_envelopes[static_cast<std::size_t>(s)];
    double err = 0.0;
    for (std::size_t f = 0; f < w.size(); ++f) {
      const double d = double{residual[f]} - w[f];
      err += d * d;
    }
    if (err < best_err) {
      best_err = err;
      best = s;
    }
  }
  return best;
}

}  // namespace diclet
