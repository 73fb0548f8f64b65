#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include <torch/torch.h>

#include "diclet/config.hpp"
#include "diclet/corpus.hpp"

namespace testing {

namespace fs = std::filesystem;

/// Fresh scratch directory, removed on destruction.
struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& name)
      : path(fs::temp_directory_path() /
             ("diclet_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  fs::path operator/(const std::string& rel) const { return path / rel; }
};

/// Narrow model so gradient and training tests stay fast.
inline diclet::ModelConfig tiny_model() {
  diclet::ModelConfig c;
  c.vocab_size = 12;
  c.num_speakers = 3;
  c.num_emotions = 3;
  c.mel_bands = 8;
  c.d_model = 16;
  c.text_blocks = 1;
  c.attention_heads = 2;
  c.prenet_kernel = 3;
  c.ffn_hidden = 16;
  c.adversary_hidden = 8;
  c.content_hidden = 8;
  c.duration_hidden = 8;
  c.adaptor_blocks = 1;
  c.max_frames = 128;
  c.emotion_dim = 8;
  c.reference_channels = {4, 4};
  c.reference_hidden = 8;
  c.speaker_dim = 8;
  c.decoder_channels = 8;
  c.decoder_mults = {1, 2};
  return c;
}

/// Small corpus: 3 speakers (one emotional), 2 emotions + neutral_N, F = 8.
inline diclet::GenConfig tiny_corpus(int per_cell = 6) {
  diclet::GenConfig g;
  g.num_speakers = 3;
  g.num_emotional_speakers = 1;
  g.emotions = {"neutral", "happy"};
  g.tempo = {1.0, 0.7};
  g.utterances_per_cell = per_cell;
  g.vocab_size = 12;
  g.bands = 8;
  g.tokens_min = 3;
  g.tokens_max = 5;
  return g;
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max(std::abs(b), 1e-300);
}

}  // namespace testing
