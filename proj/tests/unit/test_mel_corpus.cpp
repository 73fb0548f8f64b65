#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "diclet/corpus.hpp"
#include "diclet/error.hpp"
#include "diclet/mel.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace diclet;
using testing::ScratchDir;
namespace fs = std::filesystem;

namespace {

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("mel: zero matrix round-trips") {
  ScratchDir dir("mel_zero");
  MelSpectrum mel(3, 80);
  write_mel(mel, dir / "z.dmel");
  auto back = read_mel(dir / "z.dmel");
  CHECK(back == mel);
  CHECK(file_bytes(dir / "z.dmel").size() == kMelHeaderBytes + 3 * 80 * 4);
}

TEST_CASE("mel: seeded random matrix is bit-exact against a hand-built byte image") {
  ScratchDir dir("mel_rand");
  std::mt19937_64 rng(1234);
  std::normal_distribution<float> normal(0.0f, 3.0f);
  MelSpectrum mel(100, 80);
  for (auto& v : mel.values) v = normal(rng);
  write_mel(mel, dir / "r.dmel");

  // Independent encoding: magic, two little-endian u32, then raw little-endian floats.
  std::vector<unsigned char> expected = {'D', 'M', 'E', 'L', 100, 0, 0, 0, 80, 0, 0, 0};
  for (float v : mel.values) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i) expected.push_back(static_cast<unsigned char>(bits >> (8 * i)));
  }
  auto bytes = file_bytes(dir / "r.dmel");
  REQUIRE(bytes.size() == expected.size());
  CHECK(std::memcmp(bytes.data(), expected.data(), bytes.size()) == 0);
  CHECK(read_mel(dir / "r.dmel") == mel);
}

TEST_CASE("mel: malformed files are rejected") {
  ScratchDir dir("mel_bad");
  MelSpectrum mel(4, 5, 1.0f);
  write_mel(mel, dir / "ok.dmel");
  auto bytes = file_bytes(dir / "ok.dmel");

  SUBCASE("payload shorter than the header says") {
    std::ofstream(dir / "short.dmel", std::ios::binary).write(bytes.data(), bytes.size() - 4);
    CHECK_THROWS_WITH_AS(read_mel(dir / "short.dmel"), doctest::Contains("payload length mismatch"), Error);
  }
  SUBCASE("header frames*bands disagrees with payload") {
    auto copy = bytes;
    copy[4] = 7;
    std::ofstream(dir / "hdr.dmel", std::ios::binary).write(copy.data(), copy.size());
    CHECK_THROWS_AS(read_mel(dir / "hdr.dmel"), Error);
  }
  SUBCASE("bad magic") {
    auto copy = bytes;
    copy[0] = 'X';
    std::ofstream(dir / "magic.dmel", std::ios::binary).write(copy.data(), copy.size());
    CHECK_THROWS_WITH_AS(read_mel(dir / "magic.dmel"), doctest::Contains("bad mel magic"), Error);
  }
  SUBCASE("truncated header") {
    std::ofstream(dir / "tiny.dmel", std::ios::binary).write(bytes.data(), 6);
    CHECK_THROWS_AS(read_mel(dir / "tiny.dmel"), Error);
  }
}

TEST_CASE("corpus: category set appends neutral_N last") {
  EmotionCategorySet cats({"neutral", "happy"});
  CHECK(cats.size() == 3);
  CHECK(cats.names().back() == kNeutralN);
  CHECK(cats.index_of("happy") == 1);
  CHECK(cats.neutral_n() == 2);
  CHECK(cats.is_neutral(0));
  CHECK(cats.is_neutral(2));
  CHECK_FALSE(cats.is_neutral(1));
  CHECK_THROWS_AS(EmotionCategorySet(std::vector<std::string>{}), Error);
}

TEST_CASE("corpus: counting identity and invariants") {
  ScratchDir dir("corpus_count");
  GenConfig g;
  g.seed = 7;
  g.num_speakers = 2;
  g.num_emotional_speakers = 2;
  g.emotions = {"neutral", "happy"};
  g.tempo = {1.0, 0.8};
  g.utterances_per_cell = 5;
  auto gen = generate_corpus(g, dir.path);
  REQUIRE(gen.corpus.utterances.size() == 20);
  for (const auto& u : gen.corpus.utterances) {
    CHECK(static_cast<int>(read_mel_frames(dir / u.mel_path)) == u.frames());
    CHECK(u.tokens.size() == u.durations.size());
    for (int d : u.durations) CHECK(d >= 1);
  }
  CHECK(fs::exists(dir / std::string(kSignaturesName)));
}

TEST_CASE("corpus: neutral-only speakers carry the neutral_N label") {
  ScratchDir dir("corpus_nn");
  auto gen = generate_corpus(testing::tiny_corpus(4), dir.path);
  const int nn = gen.signatures.num_categories() - 1;
  for (const auto& u : gen.corpus.utterances) {
    if (u.speaker_id >= 1) CHECK(u.emotion_id == nn);
    else CHECK(u.emotion_id != nn);
  }
  CHECK(gen.signatures.duration_multipliers[0] == 1.0);
  CHECK(gen.signatures.duration_multipliers[static_cast<std::size_t>(nn)] == 1.0);
}

TEST_CASE("corpus: generation is a pure function of the config") {
  ScratchDir a("corpus_det_a"), b("corpus_det_b");
  auto g = testing::tiny_corpus(3);
  g.noise_sigma = 0.0;
  auto ga = generate_corpus(g, a.path);
  generate_corpus(g, b.path);
  for (const auto& u : ga.corpus.utterances) {
    CHECK(file_bytes(a / u.mel_path) == file_bytes(b / u.mel_path));
  }
  CHECK(file_bytes(a / "manifest.jsonl") == file_bytes(b / "manifest.jsonl"));
  CHECK(file_bytes(a / "signatures.json") == file_bytes(b / "signatures.json"));

  g.noise_sigma = 0.1;
  ScratchDir c("corpus_det_c"), d("corpus_det_d");
  auto gc = generate_corpus(g, c.path);
  generate_corpus(g, d.path);
  CHECK(file_bytes(c / gc.corpus.utterances[0].mel_path) ==
        file_bytes(d / gc.corpus.utterances[0].mel_path));
}

TEST_CASE("corpus: noiseless speaker residual equals the envelope and regresses to the speaker") {
  ScratchDir dir("corpus_oracle");
  auto g = testing::tiny_corpus(4);
  g.noise_sigma = 0.0;
  auto gen = generate_corpus(g, dir.path);
  const auto& sig = gen.signatures;
  const int S = sig.num_speakers();
  const int F = sig.bands;

  int correct = 0;
  for (const auto& u : gen.corpus.utterances) {
    auto mel = gen.corpus.load_mel(u);
    auto r = speaker_residual(sig, mel, u.tokens, u.durations, u.emotion_id);
    const auto& w = sig.speaker_envelopes[static_cast<std::size_t>(u.speaker_id)];
    for (int f = 0; f < F; ++f) CHECK(std::abs(r[f] - w[f]) < 1e-6);

    // Least-squares oracle: regress the residual on all envelopes jointly
    // (normal equations solved by torch) and pick the largest coefficient.
    auto W = torch::zeros({F, S}, torch::kDouble);
    for (int s = 0; s < S; ++s) {
      for (int f = 0; f < F; ++f) W[f][s] = sig.speaker_envelopes[s][f];
    }
    auto y = torch::tensor(std::vector<double>(r.begin(), r.end()), torch::kDouble).unsqueeze(1);
    auto coef = torch::linalg_solve(W.t().matmul(W), W.t().matmul(y)).squeeze(1);
    correct += coef.argmax().item<int64_t>() == u.speaker_id;
    CHECK(assign_speaker(sig, r) == u.speaker_id);
  }
  CHECK(correct == static_cast<int>(gen.corpus.utterances.size()));
}

TEST_CASE("corpus: emotion duration law holds within 5%") {
  ScratchDir dir("corpus_tempo");
  auto g = testing::tiny_corpus(60);
  g.num_speakers = 1;
  g.num_emotional_speakers = 1;
  auto gen = generate_corpus(g, dir.path);
  std::map<int, std::pair<double, int>> per_emotion;
  for (const auto& u : gen.corpus.utterances) {
    for (int d : u.durations) {
      per_emotion[u.emotion_id].first += d;
      per_emotion[u.emotion_id].second += 1;
    }
  }
  const double neutral = per_emotion[0].first / per_emotion[0].second;
  const double happy = per_emotion[1].first / per_emotion[1].second;
  CHECK(std::abs(happy / neutral - 0.7) / 0.7 < 0.05);
}

TEST_CASE("corpus: invalid generator configs are rejected") {
  ScratchDir dir("corpus_invalid");
  auto g = testing::tiny_corpus();
  g.num_speakers = 0;
  CHECK_THROWS_AS(generate_corpus(g, dir.path), Error);
  g = testing::tiny_corpus();
  g.emotions.clear();
  g.tempo.clear();
  CHECK_THROWS_AS(generate_corpus(g, dir.path), Error);
  g = testing::tiny_corpus();
  g.bands = 3;
  CHECK_THROWS_WITH_AS(generate_corpus(g, dir.path), doctest::Contains("at least 4"), Error);
}

TEST_CASE("manifest: save/load round trip and error paths") {
  ScratchDir dir("manifest");
  auto gen = generate_corpus(testing::tiny_corpus(3), dir.path);
  auto loaded = load_manifest(gen.manifest);
  CHECK(loaded == gen.corpus);

  save_manifest(loaded, dir / "copy.jsonl");
  CHECK(load_manifest(dir / "copy.jsonl") == gen.corpus);

  SUBCASE("missing mel names the utterance") {
    const auto& victim = gen.corpus.utterances[2];
    fs::remove(dir / victim.mel_path);
    CHECK_THROWS_WITH_AS(load_manifest(gen.manifest), doctest::Contains(victim.id.c_str()), Error);
  }
  SUBCASE("malformed record names the line") {
    std::ofstream(dir / "manifest.jsonl", std::ios::app) << "{not json\n";
    const auto line = std::to_string(gen.corpus.utterances.size() + 1);
    CHECK_THROWS_WITH_AS(load_manifest(gen.manifest), doctest::Contains(("line " + line).c_str()), Error);
  }
  SUBCASE("duration/frame mismatch") {
    auto broken = gen.corpus;
    broken.utterances[0].durations[0] += 1;
    save_manifest(broken, dir / "broken.jsonl");
    CHECK_THROWS_WITH_AS(load_manifest(dir / "broken.jsonl"),
                         doctest::Contains(broken.utterances[0].id.c_str()), Error);
  }
}

TEST_CASE("signatures: persisted beside the manifest and reloadable") {
  ScratchDir dir("signatures");
  auto gen = generate_corpus(testing::tiny_corpus(2), dir.path);
  auto back = load_signatures(dir / std::string(kSignaturesName));
  CHECK(back == gen.signatures);
  CHECK(back == draw_signatures(testing::tiny_corpus(2)));
}
