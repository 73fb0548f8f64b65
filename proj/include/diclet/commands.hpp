#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diclet/config.hpp"

namespace diclet {

struct CommonOptions {
  std::optional<std::filesystem::path> config;  ///< defaults apply when absent
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
};

struct GenDataOptions : CommonOptions {};

struct TrainOptions : CommonOptions {
  std::filesystem::path corpus;  ///< manifest.jsonl
  std::optional<int> steps;
  std::optional<int> batch_size;
  std::optional<std::filesystem::path> resume;
  std::vector<std::string> ablations;  ///< flag names to switch on
};

struct SynthOptions : CommonOptions {
  std::filesystem::path checkpoint;
  std::vector<int64_t> tokens;
  int64_t speaker = 0;
  std::filesystem::path ref_mel;
  std::optional<int> steps;
  std::optional<double> temperature;
  std::string output_name = "synth.dmel";
};

struct EvalOptions : CommonOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus;
  std::string split = "test";
  std::optional<int> trials;
  bool tsne = false;
};

/// Config file (or defaults) with --seed applied to the section a command consumes.
RunConfig resolve_run_config(const CommonOptions& options);

/// Parses "3,1,4" into token ids.
std::vector<int64_t> parse_token_list(const std::string& text);

int cmd_gen_data(const GenDataOptions& options);
int cmd_train(const TrainOptions& options);
int cmd_synth(const SynthOptions& options);
int cmd_eval(const EvalOptions& options);

}  // namespace diclet
