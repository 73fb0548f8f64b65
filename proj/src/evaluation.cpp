#include "diclet/evaluation.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "diclet/error.hpp"
#include "diclet/op_edm.hpp"

namespace diclet {
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Linear probe

void LinearProbe::fit(const torch::Tensor& x_in, const std::vector<int>& labels, int classes) {
  if (x_in.dim() != 2 || x_in.size(0) != static_cast<int64_t>(labels.size())) {
    throw Error("linear probe: one label per row required");
  }
  auto x = x_in.to(torch::kDouble);
  mean_ = x.mean(0);
  scale_ = x.std(0, /*unbiased=*/false).clamp_min(1e-8);
  auto z = (x - mean_) / scale_;
  auto y = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kLong);

  auto w = torch::zeros({x.size(1), classes}, torch::kDouble).requires_grad_(true);
  auto b = torch::zeros({classes}, torch::kDouble).requires_grad_(true);
  torch::optim::LBFGS opt({w, b}, torch::optim::LBFGSOptions(1.0)
                                      .max_iter(max_iter_)
                                      .line_search_fn("strong_wolfe"));
  auto closure = [&] {
    opt.zero_grad();
    auto loss = torch::nn::functional::cross_entropy(z.matmul(w) + b, y) + l2_ * w.pow(2).sum();
    loss.backward();
    return loss;
  };
  opt.step(closure);
  weight_ = w.detach();
  bias_ = b.detach();
}

std::vector<int> LinearProbe::predict(const torch::Tensor& x) const {
  if (!weight_.defined()) throw Error("linear probe used before fit");
  auto z = (x.to(torch::kDouble) - mean_) / scale_;
  auto pred = (z.matmul(weight_) + bias_).argmax(1).contiguous();
  return {pred.data_ptr<int64_t>(), pred.data_ptr<int64_t>() + pred.numel()};
}

double LinearProbe::accuracy(const torch::Tensor& x, const std::vector<int>& labels) const {
  auto pred = predict(x);
  int hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

torch::Tensor rows(const torch::Tensor& x, const std::vector<int64_t>& idx) {
  return x.index_select(0, torch::tensor(idx, torch::kLong));
}

}  // namespace

double linear_probe(const torch::Tensor& embeddings, const std::vector<int>& labels,
                    std::uint64_t split_seed) {
  if (embeddings.size(0) != static_cast<int64_t>(labels.size())) {
    throw Error("linear probe: one label per embedding required");
  }
  std::map<int, std::vector<int64_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_label[labels[i]].push_back(static_cast<int64_t>(i));
  }
  if (by_label.size() < 2) throw Error("linear probe needs at least two classes, got a single-class input");
  for (const auto& [label, idx] : by_label) {
    if (idx.size() < 10) {
      throw Error("linear probe needs at least 10 samples per label; label " +
                  std::to_string(label) + " has " + std::to_string(idx.size()));
    }
  }

  std::map<int, int> dense;
  for (const auto& [label, idx] : by_label) dense.emplace(label, static_cast<int>(dense.size()));

  std::mt19937_64 rng(split_seed);
  std::vector<int64_t> train_idx, test_idx;
  std::vector<int> train_y, test_y;
  for (auto& [label, idx] : by_label) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * idx.size())));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k < n_test) {
        test_idx.push_back(idx[k]);
        test_y.push_back(dense[label]);
      } else {
        train_idx.push_back(idx[k]);
        train_y.push_back(dense[label]);
      }
    }
  }
  LinearProbe probe;
  probe.fit(rows(embeddings, train_idx), train_y, static_cast<int>(dense.size()));
  return probe.accuracy(rows(embeddings, test_idx), test_y);
}

double linear_probe_mean(const torch::Tensor& embeddings, const std::vector<int>& labels,
                         std::uint64_t split_seed, int repeats) {
  if (repeats < 1) throw Error("probe repeats must be positive");
  double sum = 0.0;
  for (int r = 0; r < repeats; ++r) sum += linear_probe(embeddings, labels, split_seed + r);
  return sum / repeats;
}

// ---------------------------------------------------------------------------
// Cosine / projection / OPL reports

std::vector<std::vector<double>> cosine_report(const std::vector<torch::Tensor>& groups) {
  std::vector<torch::Tensor> unit;
  for (const auto& g : groups) {
    if (g.dim() != 2 || g.size(0) < 1) throw Error("cosine report: every group needs members");
    auto x = g.to(torch::kDouble);
    auto norms = x.norm(2, 1, true);
    if (norms.min().item<double>() <= 0.0) throw Error("cosine report: zero-norm embedding");
    unit.push_back(x / norms);
  }
  const auto k = unit.size();
  std::vector<std::vector<double>> out(k, std::vector<double>(k, 0.0));
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      auto c = unit[a].matmul(unit[b].t());
      const auto n = unit[a].size(0);
      if (a == b && n > 1) {
        out[a][b] = (c.sum() - c.trace()).item<double>() / static_cast<double>(n * (n - 1));
      } else {
        out[a][b] = c.mean().item<double>();
      }
    }
  }
  return out;
}

torch::Tensor project_2d(const torch::Tensor& embeddings) {
  if (embeddings.dim() != 2) throw Error("projection expects an (N, D) matrix");
  auto x = embeddings.to(torch::kDouble);
  const auto n = x.size(0);
  if (n == 0) return torch::zeros({0, 2}, torch::kDouble);
  auto centered = x - x.mean(0, true);
  auto [u, s, vh] = torch::linalg_svd(centered, /*full_matrices=*/false);
  auto axes = torch::zeros({2, x.size(1)}, torch::kDouble);
  const auto k = std::min<int64_t>(2, vh.size(0));
  axes.slice(0, 0, k).copy_(vh.slice(0, 0, k));
  for (int64_t a = 0; a < k; ++a) {
    auto row = axes[a];
    const auto top = row.abs().argmax().item<int64_t>();
    if (row[top].item<double>() < 0.0) axes[a] = -row;
  }
  return centered.matmul(axes.t());
}

torch::Tensor tsne_refine(const torch::Tensor& embeddings, const torch::Tensor& init,
                          double perplexity, int iterations, std::uint64_t seed) {
  auto x = embeddings.to(torch::kDouble);
  const auto n = x.size(0);
  if (init.size(0) != n || init.size(1) != 2) throw Error("t-SNE: init must be (N, 2)");
  if (n < 3) return init.to(torch::kDouble).clone();
  if (!(perplexity > 1.0) || perplexity >= static_cast<double>(n)) {
    throw Error("t-SNE: perplexity must lie in (1, N)");
  }

  // Conditional affinities with a per-row bandwidth found by bisection on entropy.
  auto d2 = torch::cdist(x, x).pow(2);
  auto p = torch::zeros({n, n}, torch::kDouble);
  const double target = std::log(perplexity);
  for (int64_t i = 0; i < n; ++i) {
    auto di = d2[i].clone();
    di[i] = std::numeric_limits<double>::infinity();
    double lo = 1e-20, hi = 1e20, beta = 1.0;
    torch::Tensor row;
    for (int it = 0; it < 64; ++it) {
      row = torch::exp(-(di - di.min()) * beta);
      auto sum = row.sum();
      auto probs = row / sum;
      const double h = -(probs * torch::log(probs.clamp_min(1e-300))).sum().item<double>();
      if (std::abs(h - target) < 1e-6) break;
      if (h > target) {
        lo = beta;
        beta = hi >= 1e20 ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = 0.5 * (beta + lo);
      }
    }
    p[i] = row / row.sum();
  }
  p = ((p + p.t()) / (2.0 * static_cast<double>(n))).clamp_min(1e-12);

  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto y = init.to(torch::kDouble).clone();
  y = y / y.std().clamp_min(1e-12) * 1e-2 + torch::randn(y.sizes(), gen, torch::kDouble) * 1e-4;
  auto velocity = torch::zeros_like(y);
  for (int it = 0; it < iterations; ++it) {
    const double exaggeration = it < iterations / 4 ? 12.0 : 1.0;
    const double momentum = it < iterations / 4 ? 0.5 : 0.8;
    auto num = 1.0 / (1.0 + torch::cdist(y, y).pow(2));
    num.fill_diagonal_(0.0);
    auto q = (num / num.sum()).clamp_min(1e-12);
    auto w = (exaggeration * p - q) * num;
    auto grad = 4.0 * (w.sum(1, true) * y - w.matmul(y));
    velocity = momentum * velocity - 200.0 * grad;
    y = y + velocity;
  }
  return y - y.mean(0, true);
}

OplStructure opl_structure_report(const torch::Tensor& embeddings, const std::vector<int>& labels) {
  torch::NoGradGuard guard;
  auto lab = torch::tensor(std::vector<int64_t>(labels.begin(), labels.end()), torch::kLong);
  auto terms = orthogonal_projection_terms(embeddings.to(torch::kDouble), lab);
  OplStructure r;
  r.same = terms.same.item<double>();
  r.different = terms.different.item<double>();
  r.loss = terms.loss.item<double>();
  r.same_pairs = terms.same_pairs;
  r.different_pairs = terms.different_pairs;
  return r;
}

// ---------------------------------------------------------------------------
// Diffusion oracle

torch::Tensor gaussian_data_score(const DiffusionSchedule& schedule, const torch::Tensor& xt,
                                  const torch::Tensor& t, double mu, double m, double s) {
  auto tt = expand_time(t, xt);
  auto decay = torch::exp(-schedule.cumulative(tt));
  auto mean = mu + (m - mu) * torch::sqrt(decay);
  auto var = s * s * decay + schedule.lambda(tt);
  return -(xt - mean) / var;
}

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
  double second = 0.0;
};

Moments moments(const torch::Tensor& x) {
  auto v = x.to(torch::kDouble).flatten();
  Moments m;
  m.mean = v.mean().item<double>();
  m.var = v.var(/*unbiased=*/false).item<double>();
  m.second = v.pow(2).mean().item<double>();
  return m;
}

double rel(double a, double b) { return std::abs(a - b) / std::abs(b); }

json moments_json(const Moments& m) {
  return json{{"mean", m.mean}, {"variance", m.var}, {"second_moment", m.second}};
}

}  // namespace

json diffusion_oracle_report(const DiffusionSchedule& schedule,
                             const DiffusionOracleOptions& o) {
  torch::NoGradGuard guard;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(o.seed);
  const auto opts = torch::TensorOptions().dtype(torch::kDouble);
  json report;
  report["schedule"] = {{"beta0", schedule.beta0()}, {"beta1", schedule.beta1()}};

  // Forward process: closed form vs marginal sampling vs Euler-Maruyama of the SDE.
  double worst_forward = 0.0;
  json forward = json::array();
  for (double t : o.times) {
    auto x0 = torch::full({o.paths, 1}, o.x0, opts);
    auto mu = torch::full({o.paths, 1}, o.mu, opts);
    auto sampled = moments(forward_marginal(schedule, x0, mu, t, gen));

    auto x = x0.clone();
    const double h = t / o.em_steps;
    for (int i = 0; i < o.em_steps; ++i) {
      const double beta = schedule.beta(i * h);
      x = x + 0.5 * beta * (mu - x) * h + torch::randn(x.sizes(), gen, opts) * std::sqrt(beta * h);
    }
    auto simulated = moments(x);

    Moments exact;
    exact.mean = o.mu + (o.x0 - o.mu) * std::exp(-0.5 * schedule.cumulative(t));
    exact.var = schedule.lambda(t);
    exact.second = exact.mean * exact.mean + exact.var;

    // The first moment is compared on the scale of the paths' RMS: near t = 1 the
    // mean itself shrinks to the size of its own Monte-Carlo error.
    const double rms = std::sqrt(exact.second);
    const double mean_err = std::abs(sampled.mean - simulated.mean) / rms;
    const double var_err = rel(sampled.var, simulated.var);
    const double second_err = rel(sampled.second, simulated.second);
    worst_forward = std::max({worst_forward, mean_err, var_err, second_err});
    forward.push_back({{"t", t},
                       {"closed_form", moments_json(exact)},
                       {"marginal_samples", moments_json(sampled)},
                       {"euler_maruyama", moments_json(simulated)},
                       {"mean_error_rms_scaled", mean_err},
                       {"variance_rel_error", var_err},
                       {"second_moment_rel_error", second_err},
                       {"marginal_vs_closed_mean_rms_scaled", std::abs(sampled.mean - exact.mean) / rms},
                       {"marginal_vs_closed_variance_rel", rel(sampled.var, exact.var)}});
  }
  report["forward"] = forward;
  report["forward_worst_rel_error"] = worst_forward;

  // Score-matching loss with the analytic conditional score.
  {
    auto x0 = torch::randn({4, 16, 8}, gen, opts);
    auto mu = torch::randn({4, 16, 8}, gen, opts);
    auto mask = torch::ones({4, 16}, opts);
    ScoreFn exact = [&](const torch::Tensor& xt, const torch::Tensor& t) {
      return true_conditional_score(schedule, xt, x0, mu, t);
    };
    report["zero_loss"] = diffusion_loss(schedule, x0, mu, mask, exact, gen, 1e-3).item<double>();
  }

  // Reverse samplers with the analytic score of Gaussian data.
  auto sampler_report = [&](bool stochastic) {
    auto mu = torch::full({o.sampler_runs, 1}, o.mu, opts);
    ScoreFn score = [&](const torch::Tensor& xt, const torch::Tensor& t) {
      return gaussian_data_score(schedule, xt, t, o.mu, o.data_mean, o.data_std);
    };
    auto out = stochastic ? reverse_sde_sample(schedule, mu, score, o.sampler_steps, gen)
                          : reverse_ode_sample(schedule, mu, score, o.sampler_steps, gen, 1.0);
    auto m = moments(out);
    const double var = o.data_std * o.data_std;
    return json{{"steps", o.sampler_steps},
                {"runs", o.sampler_runs},
                {"target_mean", o.data_mean},
                {"target_variance", var},
                {"sample", moments_json(m)},
                {"mean_rel_error", rel(m.mean, o.data_mean)},
                {"variance_rel_error", rel(m.var, var)}};
  };
  report["ode"] = sampler_report(false);
  report["sde"] = sampler_report(true);
  return report;
}

// ---------------------------------------------------------------------------
// Embeddings

void to_json(json& j, const EmbeddingRecord& r) {
  j = json{{"utterance_id", r.utterance_id},
           {"speaker_id", r.speaker_id},
           {"emotion_id", r.emotion_id},
           {"embedding", r.embedding}};
}

void from_json(const json& j, EmbeddingRecord& r) {
  j.at("utterance_id").get_to(r.utterance_id);
  j.at("speaker_id").get_to(r.speaker_id);
  j.at("emotion_id").get_to(r.emotion_id);
  j.at("embedding").get_to(r.embedding);
}

std::vector<EmbeddingRecord> embed_utterances(DicletModel& model, const Corpus& corpus,
                                              const std::vector<const Utterance*>& utterances,
                                              int batch_size) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<EmbeddingRecord> out;
  for (std::size_t start = 0; start < utterances.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(utterances.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<MelSpectrum> mels;
    for (auto i = start; i < end; ++i) mels.push_back(corpus.load_mel(*utterances[i]));
    auto [x, lengths] = stack_mels(mels);
    auto e = model->embed_reference(x, lengths).to(torch::kFloat).contiguous();
    for (auto i = start; i < end; ++i) {
      const auto* u = utterances[i];
      auto row = e[static_cast<int64_t>(i - start)];
      EmbeddingRecord r;
      r.utterance_id = u->id;
      r.speaker_id = u->speaker_id;
      r.emotion_id = u->emotion_id;
      r.embedding.assign(row.data_ptr<float>(), row.data_ptr<float>() + row.numel());
      out.push_back(std::move(r));
    }
  }
  return out;
}

void write_embeddings(const std::vector<EmbeddingRecord>& records, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << json(r).dump() << '\n';
}

std::vector<EmbeddingRecord> read_embeddings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<EmbeddingRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line).get<EmbeddingRecord>());
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": malformed embedding record");
    }
  }
  return out;
}

torch::Tensor embedding_matrix(const std::vector<EmbeddingRecord>& records) {
  if (records.empty()) return torch::zeros({0, 0});
  const auto dim = static_cast<int64_t>(records.front().embedding.size());
  auto m = torch::zeros({static_cast<int64_t>(records.size()), dim});
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (static_cast<int64_t>(records[i].embedding.size()) != dim) {
      throw Error("embedding records differ in width");
    }
    m[static_cast<int64_t>(i)] = torch::tensor(records[i].embedding);
  }
  return m;
}

void write_projection_csv(const std::vector<EmbeddingRecord>& records, const torch::Tensor& xy,
                          const fs::path& path) {
  if (xy.size(0) != static_cast<int64_t>(records.size())) {
    throw Error("projection has a different row count than the records");
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "id,x,y,speaker_id,emotion_id\n";
  out.precision(9);
  auto c = xy.to(torch::kDouble).contiguous();
  auto acc = c.accessor<double, 2>();
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto k = static_cast<int64_t>(i);
    out << records[i].utterance_id << ',' << acc[k][0] << ',' << acc[k][1] << ','
        << records[i].speaker_id << ',' << records[i].emotion_id << '\n';
  }
}

// ---------------------------------------------------------------------------
// Disentanglement and transfer

DisentanglementReport disentanglement_report(const std::vector<EmbeddingRecord>& records,
                                             int neutral_n, std::uint64_t seed, int repeats) {
  DisentanglementReport r;
  auto all = embedding_matrix(records);
  std::vector<int> emotions, speakers;
  std::vector<int64_t> stratum;
  std::vector<int> stratum_speakers;
  for (std::size_t i = 0; i < records.size(); ++i) {
    emotions.push_back(records[i].emotion_id);
    speakers.push_back(records[i].speaker_id);
    if (records[i].emotion_id == neutral_n) {
      stratum.push_back(static_cast<int64_t>(i));
      stratum_speakers.push_back(records[i].speaker_id);
    }
  }
  r.emotion_classes = static_cast<int>(std::set<int>(emotions.begin(), emotions.end()).size());
  r.speaker_classes =
      static_cast<int>(std::set<int>(stratum_speakers.begin(), stratum_speakers.end()).size());
  r.emotion_probe = linear_probe_mean(all, emotions, seed, repeats);
  r.speaker_probe = linear_probe_mean(rows(all, stratum), stratum_speakers, seed, repeats);
  r.speaker_probe_chance = 1.0 / r.speaker_classes;
  r.speaker_probe_all = linear_probe_mean(all, speakers, seed, repeats);
  return r;
}

TransferReport cross_transfer_report(TrainState& state, const Corpus& corpus,
                                     const LatentSignatures& signatures,
                                     const std::vector<EmbeddingRecord>& reference_records,
                                     int trials, int ode_steps, double temperature,
                                     std::uint64_t seed) {
  const int neutral_n = signatures.num_categories() - 1;

  // Which speakers voice which categories.
  std::set<int> emotional_speakers;
  std::map<int, std::vector<const Utterance*>> references;  // emotion -> held-out refs
  for (const auto& u : corpus.utterances) {
    if (u.emotion_id != neutral_n) emotional_speakers.insert(u.speaker_id);
  }
  for (const auto* u : corpus.split("test")) {
    if (emotional_speakers.count(u->speaker_id) && u->emotion_id != neutral_n &&
        signatures.categories[static_cast<std::size_t>(u->emotion_id)] != kNeutral) {
      references[u->emotion_id].push_back(u);
    }
  }
  std::vector<int> targets;
  for (int s = 0; s < signatures.num_speakers(); ++s) {
    if (!emotional_speakers.count(s)) targets.push_back(s);
  }
  if (targets.empty() || references.empty()) {
    throw Error("cross transfer needs neutral-only speakers and emotional references");
  }
  // Prefer speakers who never spoke the emotional speakers' language.
  std::set<int> emotional_languages;
  for (int s : emotional_speakers) {
    emotional_languages.insert(signatures.speaker_languages[static_cast<std::size_t>(s)]);
  }
  std::vector<int> foreign;
  for (int s : targets) {
    if (!emotional_languages.count(signatures.speaker_languages[static_cast<std::size_t>(s)])) {
      foreign.push_back(s);
    }
  }
  if (!foreign.empty()) targets = foreign;

  std::vector<int> emotions;
  for (const auto& [e, refs] : references) emotions.push_back(e);

  std::vector<int> labels;
  for (const auto& r : reference_records) labels.push_back(r.emotion_id);
  LinearProbe probe;
  probe.fit(embedding_matrix(reference_records), labels, signatures.num_categories());

  TransferReport report;
  std::mt19937_64 rng(seed);
  int speaker_hits = 0, emotion_hits = 0;
  for (int k = 0; k < trials; ++k) {
    TransferTrial trial;
    trial.speaker = targets[static_cast<std::size_t>(k) % targets.size()];
    trial.emotion = emotions[static_cast<std::size_t>(k / static_cast<int>(targets.size())) % emotions.size()];
    const auto& refs = references[trial.emotion];
    const auto* ref = refs[std::uniform_int_distribution<std::size_t>(0, refs.size() - 1)(rng)];
    trial.reference_id = ref->id;

    const int language = 1 - signatures.speaker_languages[static_cast<std::size_t>(trial.speaker)];
    const auto [lo, hi] = signatures.language_tokens(language);
    std::uniform_int_distribution<int> token(lo, hi - 1);
    for (std::size_t j = 0; j < ref->tokens.size(); ++j) trial.tokens.push_back(token(rng));

    std::vector<int64_t> durations;
    auto mel = synthesize(state, trial.tokens, trial.speaker, corpus.load_mel(*ref), ode_steps,
                          rng(), temperature, &durations);
    trial.frames = static_cast<int>(mel.frames);

    std::vector<int> tok(trial.tokens.begin(), trial.tokens.end());
    std::vector<int> dur(durations.begin(), durations.end());
    trial.assigned_speaker =
        assign_speaker(signatures, speaker_residual(signatures, mel, tok, dur, trial.emotion));
    {
      torch::NoGradGuard guard;
      auto e = state.model->embed_reference(mel).unsqueeze(0);
      trial.predicted_emotion = probe.predict(e).front();
    }
    speaker_hits += trial.assigned_speaker == trial.speaker;
    emotion_hits += trial.predicted_emotion == trial.emotion;
    report.trials.push_back(std::move(trial));
  }
  report.speaker_accuracy = trials > 0 ? static_cast<double>(speaker_hits) / trials : 0.0;
  report.emotion_accuracy = trials > 0 ? static_cast<double>(emotion_hits) / trials : 0.0;
  return report;
}

json to_json_report(const DisentanglementReport& r) {
  return json{{"emotion_probe_accuracy", r.emotion_probe},
              {"emotion_classes", r.emotion_classes},
              {"speaker_probe_accuracy", r.speaker_probe},
              {"speaker_probe_chance", r.speaker_probe_chance},
              {"speaker_probe_classes", r.speaker_classes},
              {"speaker_probe_stratum", std::string(kNeutralN)},
              {"speaker_probe_all_references", r.speaker_probe_all}};
}

json to_json_report(const TransferReport& r) {
  json trials = json::array();
  for (const auto& t : r.trials) {
    trials.push_back({{"speaker", t.speaker},
                      {"emotion", t.emotion},
                      {"reference", t.reference_id},
                      {"tokens", t.tokens},
                      {"frames", t.frames},
                      {"assigned_speaker", t.assigned_speaker},
                      {"predicted_emotion", t.predicted_emotion}});
  }
  return json{{"speaker_accuracy", r.speaker_accuracy},
              {"emotion_accuracy", r.emotion_accuracy},
              {"trials", trials}};
}

}  // namespace diclet
