// Command-line entry point: gen-data, train, synth, eval.
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "diclet/commands.hpp"

namespace {

void add_common(CLI::App* cmd, diclet::CommonOptions& o, std::string& config, std::uint64_t& seed) {
  cmd->add_option("--config", config, "Run configuration JSON")->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory")->required();
  cmd->add_option("--seed", seed, "Seed overriding the config");
}

void finish_common(CLI::App* cmd, diclet::CommonOptions& o, const std::string& config,
                   std::uint64_t seed) {
  if (!config.empty()) o.config = config;
  if (cmd->count("--seed")) o.seed = seed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotion-conditioned diffusion TTS on a synthetic corpus"};
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;

  diclet::GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  add_common(gen_cmd, gen, config, seed);

  diclet::TrainOptions train;
  int train_steps = 0, train_batch = 0;
  std::string resume;
  auto* train_cmd = app.add_subcommand("train", "Train the joint model");
  add_common(train_cmd, train, config, seed);
  train_cmd->add_option("--corpus", train.corpus, "Corpus manifest.jsonl")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--steps", train_steps, "Total optimizer steps");
  train_cmd->add_option("--batch-size", train_batch, "Batch size");
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train_cmd->add_option("--ablation", train.ablations,
                        "no_content_loss | no_emotional_adaptor | no_opl | no_per_block_conditioning");

  diclet::SynthOptions synth;
  std::string tokens;
  int synth_steps = 0;
  double temperature = 1.0;
  auto* synth_cmd = app.add_subcommand("synth", "Synthesize a mel from tokens and a reference");
  add_common(synth_cmd, synth, config, seed);
  synth_cmd->add_option("--checkpoint", synth.checkpoint, "Trained checkpoint")->required();
  synth_cmd->add_option("--tokens", tokens, "Comma-separated token ids")->required();
  synth_cmd->add_option("--speaker", synth.speaker, "Target speaker id")->required();
  synth_cmd->add_option("--ref-mel", synth.ref_mel, "Emotion reference DMEL file")->required();
  synth_cmd->add_option("--steps", synth_steps, "Reverse ODE steps");
  synth_cmd->add_option("--temperature", temperature, "Terminal sample temperature");
  synth_cmd->add_option("--output", synth.output_name, "Output file name inside --out");

  diclet::EvalOptions eval;
  int trials = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Embedding probes, cosine, projection and oracle reports");
  add_common(eval_cmd, eval, config, seed);
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Trained checkpoint")->required();
  eval_cmd->add_option("--corpus", eval.corpus, "Corpus manifest.jsonl")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval.split, "Manifest split to evaluate");
  eval_cmd->add_option("--trials", trials, "Cross-transfer trials");
  eval_cmd->add_flag("--tsne", eval.tsne, "Refine the projection with t-SNE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen_cmd) {
      finish_common(gen_cmd, gen, config, seed);
      return diclet::cmd_gen_data(gen);
    }
    if (*train_cmd) {
      finish_common(train_cmd, train, config, seed);
      if (train_cmd->count("--steps")) train.steps = train_steps;
      if (train_cmd->count("--batch-size")) train.batch_size = train_batch;
      if (!resume.empty()) train.resume = resume;
      return diclet::cmd_train(train);
    }
    if (*synth_cmd) {
      finish_common(synth_cmd, synth, config, seed);
      synth.tokens = diclet::parse_token_list(tokens);
      if (synth_cmd->count("--steps")) synth.steps = synth_steps;
      if (synth_cmd->count("--temperature")) synth.temperature = temperature;
      return diclet::cmd_synth(synth);
    }
    if (*eval_cmd) {
      finish_common(eval_cmd, eval, config, seed);
      if (eval_cmd->count("--trials")) eval.trials = trials;
      return diclet::cmd_eval(eval);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    if (auto nl = msg.find('\n'); nl != std::string::npos) msg.resize(nl);
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
