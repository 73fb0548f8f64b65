#include "diclet/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "diclet/error.hpp"
#include "diclet/evaluation.hpp"
#include "diclet/training.hpp"

namespace diclet {
namespace fs = std::filesystem;

namespace {

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void prepare_out(const fs::path& out) {
  if (out.empty()) throw Error("--out is required");
  fs::create_directories(out);
}

/// Timestamps live here and nowhere else, so the other outputs stay reproducible.
void write_run_metadata(const fs::path& out, const std::string& command) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[64];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  write_json(json{{"command", command}, {"finished_at", buf}}, out / ("run_meta_" + command + ".json"));
}

std::optional<LatentSignatures> signatures_beside(const fs::path& manifest) {
  auto path = manifest.parent_path() / kSignaturesName;
  if (!fs::exists(path)) return std::nullopt;
  return load_signatures(path);
}

/// Label-space sizes come from the checkpoint; every width from the config must agree.
void check_against_checkpoint(const CommonOptions& options, const ModelConfig& from_checkpoint) {
  if (!options.config) return;
  auto cfg = resolve_run_config(options).model;
  cfg.vocab_size = from_checkpoint.vocab_size;
  cfg.num_speakers = from_checkpoint.num_speakers;
  cfg.num_emotions = from_checkpoint.num_emotions;
  cfg.mel_bands = from_checkpoint.mel_bands;
  check_compatible(cfg, from_checkpoint);
}

void apply_ablation(Ablations& a, const std::string& name) {
  if (name == "no_content_loss") a.no_content_loss = true;
  else if (name == "no_emotional_adaptor") a.no_emotional_adaptor = true;
  else if (name == "no_opl") a.no_opl = true;
  else if (name == "no_per_block_conditioning") a.no_per_block_conditioning = true;
  else throw Error("unknown ablation: " + name);
}

}  // namespace

RunConfig resolve_run_config(const CommonOptions& options) {
  RunConfig cfg = options.config ? load_run_config(*options.config) : RunConfig{};
  if (options.seed) {
    cfg.corpus.seed = *options.seed;
    cfg.train.seed = *options.seed;
    cfg.eval.seed = *options.seed;
  }
  return cfg;
}

std::vector<int64_t> parse_token_list(const std::string& text) {
  std::vector<int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    if (first == std::string::npos) throw Error("empty entry in token list '" + text + "'");
    const auto last = item.find_last_not_of(" \t");
    item = item.substr(first, last - first + 1);
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw Error("invalid token id '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw Error("token list is empty");
  return out;
}

int cmd_gen_data(const GenDataOptions& options) {
  auto cfg = resolve_run_config(options);
  prepare_out(options.out);
  auto generated = generate_corpus(cfg.corpus, options.out);
  std::cout << "wrote " << generated.corpus.utterances.size() << " utterances to "
            << generated.manifest.string() << '\n';
  write_run_metadata(options.out, "gen-data");
  return 0;
}

int cmd_train(const TrainOptions& options) {
  auto cfg = resolve_run_config(options);
  if (options.steps) cfg.train.steps = *options.steps;
  if (options.batch_size) cfg.train.batch_size = *options.batch_size;
  for (const auto& a : options.ablations) apply_ablation(cfg.train.ablations, a);
  cfg.train.validate();
  prepare_out(options.out);

  auto corpus = load_manifest(options.corpus);
  auto signatures = signatures_beside(options.corpus);
  auto model_cfg = resolve_model_config(cfg.model, corpus, signatures ? &*signatures : nullptr);

  std::optional<TrainState> state;
  if (options.resume) {
    state.emplace(load_checkpoint(*options.resume));
    check_compatible(model_cfg, state->model->config());
  } else {
    state.emplace(model_cfg, cfg.schedule, cfg.train);
  }
  cfg.model = model_cfg;
  write_json(cfg, options.out / "config.json");

  TrainingData data(corpus, state->train_config.seed);
  std::ofstream metrics(options.out / "metrics.jsonl", options.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw Error("cannot write metrics stream");

  TrainLoopOptions loop;
  loop.steps = std::max<int64_t>(0, cfg.train.steps - state->step);
  loop.metrics = &metrics;
  loop.checkpoint_dir = options.out / "checkpoints";
  const auto start = std::chrono::steady_clock::now();
  loop.on_step = [&](const LossBreakdown& b) {
    if ((b.step + 1) % 100 == 0) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "step " << b.step + 1 << " L_total=" << b.total << " (" << secs << " s)\n";
    }
  };
  train_loop(*state, data, loop);
  save_checkpoint(*state, options.out / "checkpoint.pt");
  std::cout << "trained to step " << state->step << "; checkpoint "
            << (options.out / "checkpoint.pt").string() << '\n';
  write_run_metadata(options.out, "train");
  return 0;
}

int cmd_synth(const SynthOptions& options) {
  auto cfg = resolve_run_config(options);
  prepare_out(options.out);
  check_against_checkpoint(options, checkpoint_model_config(options.checkpoint));
  auto state = load_checkpoint(options.checkpoint);
  auto reference = read_mel(options.ref_mel);
  const int steps = options.steps.value_or(cfg.eval.ode_steps);
  const double temperature = options.temperature.value_or(cfg.eval.temperature);

  std::vector<int64_t> durations;
  auto mel = synthesize(state, options.tokens, options.speaker, reference, steps, cfg.eval.seed,
                        temperature, &durations);
  write_mel(mel, options.out / options.output_name);
  write_json(json{{"tokens", options.tokens},
                  {"speaker", options.speaker},
                  {"reference", options.ref_mel.string()},
                  {"steps", steps},
                  {"temperature", temperature},
                  {"seed", cfg.eval.seed},
                  {"durations", durations},
                  {"frames", mel.frames}},
             options.out / (fs::path(options.output_name).stem().string() + ".json"));
  std::cout << "wrote " << mel.frames << " frames to " << (options.out / options.output_name).string()
            << '\n';
  return 0;
}

int cmd_eval(const EvalOptions& options) {
  auto cfg = resolve_run_config(options);
  prepare_out(options.out);
  check_against_checkpoint(options, checkpoint_model_config(options.checkpoint));
  auto state = load_checkpoint(options.checkpoint);
  auto corpus = load_manifest(options.corpus);
  auto signatures = signatures_beside(options.corpus);

  auto utterances = corpus.split(options.split);
  if (utterances.empty()) throw Error("corpus has no '" + options.split + "' utterances");
  auto records = embed_utterances(state.model, corpus, utterances);
  write_embeddings(records, options.out / "embeddings.jsonl");

  json report;
  report["checkpoint_step"] = state.step;
  report["split"] = options.split;
  report["utterances"] = records.size();
  const int neutral_n = state.model->config().num_emotions - 1;

  // Each section records its own failure so a weak model still yields a full report.
  auto section = [&](const char* name, auto&& fn) {
    try {
      report[name] = fn();
    } catch (const std::exception& e) {
      report[name] = json{{"error", e.what()}};
    }
  };
  auto matrix = embedding_matrix(records);
  section("disentanglement", [&] {
    return to_json_report(
        disentanglement_report(records, neutral_n, cfg.eval.seed, cfg.eval.probe_repeats));
  });
  auto grouped = [&](auto key) {
    std::map<int, std::vector<int64_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) {
      groups[key(records[i])].push_back(static_cast<int64_t>(i));
    }
    std::vector<int> ids;
    std::vector<torch::Tensor> members;
    for (const auto& [id, idx] : groups) {
      ids.push_back(id);
      members.push_back(matrix.index_select(0, torch::tensor(idx, torch::kLong)));
    }
    return json{{"groups", ids}, {"mean_cosine", cosine_report(members)}};
  };
  section("cosine_by_emotion", [&] { return grouped([](const EmbeddingRecord& r) { return r.emotion_id; }); });
  section("cosine_by_speaker", [&] { return grouped([](const EmbeddingRecord& r) { return r.speaker_id; }); });
  section("opl_structure", [&] {
    std::vector<int> labels;
    for (const auto& r : records) labels.push_back(r.emotion_id);
    auto s = opl_structure_report(matrix, labels);
    return json{{"E_same", s.same},
                {"E_diff", s.different},
                {"L_opl", s.loss},
                {"same_pairs", s.same_pairs},
                {"different_pairs", s.different_pairs}};
  });

  auto xy = project_2d(matrix);
  if (options.tsne) xy = tsne_refine(matrix, xy, std::min(30.0, records.size() / 4.0), 500, cfg.eval.seed);
  write_projection_csv(records, xy, options.out / "projection.csv");
  report["projection"] = options.tsne ? "pca+tsne" : "pca";

  section("diffusion_oracle", [&] {
    DiffusionOracleOptions o;
    o.paths = cfg.eval.oracle_paths;
    o.sampler_runs = cfg.eval.oracle_ode_samples;
    o.seed = cfg.eval.seed;
    return diffusion_oracle_report(state.schedule, o);
  });

  if (signatures) {
    section("cross_transfer", [&] {
      return to_json_report(cross_transfer_report(state, corpus, *signatures, records,
                                                  options.trials.value_or(cfg.eval.transfer_trials),
                                                  cfg.eval.ode_steps, cfg.eval.temperature,
                                                  cfg.eval.seed));
    });
  } else {
    report["cross_transfer"] = json{{"error", "signatures.json not found beside the manifest"}};
  }

  write_json(report, options.out / "report.json");
  std::cout << "wrote report for " << records.size() << " references to "
            << (options.out / "report.json").string() << '\n';
  write_run_metadata(options.out, "eval");
  return 0;
}

}  // namespace diclet
