#include <cmath>

#include "../support/grad_checks.hpp"
#include "diclet/error.hpp"
#include "diclet/op_edm.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace diclet;

namespace {

torch::Tensor labels(std::initializer_list<int64_t> v) { return torch::tensor(std::vector<int64_t>(v), torch::kLong); }

/// Pairwise-mean cosine oracle written out with explicit loops.
std::pair<double, double> pair_means(const torch::Tensor& e, const std::vector<int>& lab) {
  const auto n = e.size(0);
  double same = 0, diff = 0;
  int ns = 0, nd = 0;
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      const double c = (e[i] * e[j]).sum().item<double>() /
                       (e[i].norm().item<double>() * e[j].norm().item<double>());
      if (lab[i] == lab[j]) {
        same += c;
        ++ns;
      } else {
        diff += c;
        ++nd;
      }
    }
  }
  return {ns ? same / ns : 0.0, nd ? diff / nd : 0.0};
}

}  // namespace

TEST_CASE("reference encoder: fixed width for any length, deterministic, padding-invariant") {
  torch::manual_seed(0);
  auto cfg = testing::tiny_model();
  ReferenceEncoder enc(cfg);
  enc->eval();
  for (int64_t T : {1, 10, 500}) {
    auto e = enc(torch::randn({1, T, cfg.mel_bands}), torch::tensor({T}));
    CHECK(e.sizes() == torch::IntArrayRef({1, cfg.emotion_dim}));
  }
  auto mel = torch::randn({1, 23, cfg.mel_bands});
  auto a = enc(mel, torch::tensor({23}));
  CHECK(torch::equal(a, enc(mel, torch::tensor({23}))));

  auto padded = torch::cat({mel, torch::randn({1, 17, cfg.mel_bands})}, 1);
  auto batch = torch::cat({padded, torch::randn({1, 40, cfg.mel_bands})});
  auto b = enc(batch, torch::tensor({23, 40}));
  CHECK(torch::allclose(a[0], b[0], 1e-5, 1e-6));

  CHECK_THROWS_AS(enc(torch::zeros({1, 0, cfg.mel_bands}), torch::tensor({0})), Error);
  CHECK_THROWS_AS(enc(torch::zeros({1, 5, cfg.mel_bands + 1}), torch::tensor({5})), Error);
}

TEST_CASE("embedding speaker adversary: identities and the reversal contract") {
  CHECK(speaker_adversarial_loss(torch::zeros({5, 3}), labels({0, 1, 2, 2, 1})).item<double>() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-6));
  auto sure = torch::full({1, 3}, -1e4);
  sure[0][2] = 1e4;
  CHECK(speaker_adversarial_loss(sure, labels({2})).item<double>() == doctest::Approx(0.0));

  auto r = gradcheck::embedding_path(20, 5, 8);
  CHECK(r.checked == 20);
  CHECK(r.worst_flip < 1e-4);
  CHECK(r.worst_fd < 1e-3);
  CHECK(r.worst_head < 1e-12);
}

TEST_CASE("emotion classification loss: identities and training smoke") {
  const int K = 5;
  CHECK(emotion_classification_loss(torch::zeros({4, K}), labels({0, 1, 4, 3})).item<double>() ==
        doctest::Approx(std::log(K)).epsilon(1e-6));
  auto sure = torch::full({1, K}, -1e4);
  sure[0][4] = 1e4;
  CHECK(emotion_classification_loss(sure, labels({4})).item<double>() == doctest::Approx(0.0));

  torch::manual_seed(3);
  auto cfg = testing::tiny_model();
  ReferenceEncoder enc(cfg);
  EmbeddingClassifier head(cfg.emotion_dim, cfg.num_emotions, false, 1.0);
  auto mels = torch::randn({6, 15, cfg.mel_bands});
  auto lens = torch::full({6}, 15, torch::kLong);
  auto y = labels({0, 1, 2, 0, 1, 2});
  std::vector<torch::Tensor> params = enc->parameters();
  for (auto& p : head->parameters()) params.push_back(p);
  torch::optim::Adam opt(params, torch::optim::AdamOptions(1e-2));
  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    auto loss = emotion_classification_loss(head(enc(mels, lens)), y);
    if (step == 0) first = loss.item<double>();
    last = loss.item<double>();
    loss.backward();
    opt.step();
  }
  CHECK(last < 0.2 * first);
}

TEST_CASE("orthogonal projection loss: worked examples") {
  auto opts = torch::TensorOptions().dtype(torch::kDouble);
  auto perfect = torch::tensor({{1.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}, opts);
  auto t = orthogonal_projection_terms(perfect, labels({0, 0, 1}));
  CHECK(t.same.item<double>() == doctest::Approx(1.0));
  CHECK(t.different.item<double>() == doctest::Approx(0.0));
  CHECK(t.loss.item<double>() == doctest::Approx(0.0));

  auto worst = torch::tensor({{1.0, 0.0}, {0.0, 1.0}}, opts);
  auto w = orthogonal_projection_terms(worst, labels({0, 0}));
  CHECK(w.different_pairs == 0);
  CHECK(w.loss.item<double>() == doctest::Approx(1.0));

  const double h = std::sqrt(2.0) / 2.0;
  auto diag = torch::tensor({{1.0, 0.0}, {h, h}}, opts);
  CHECK(orthogonal_projection_loss(diag, labels({0, 0})).item<double>() ==
        doctest::Approx(1.0 - h).epsilon(1e-9));
  CHECK(std::abs(orthogonal_projection_loss(diag, labels({0, 0})).item<double>() - 0.29289) < 1e-5);

  // Only cross pairs: the same-class term is dropped.
  auto cross = torch::tensor({{1.0, 0.0}, {h, h}}, opts);
  CHECK(orthogonal_projection_loss(cross, labels({0, 1})).item<double>() ==
        doctest::Approx(0.5 * h).epsilon(1e-9));
}

TEST_CASE("orthogonal projection loss: pair-mean oracle, scale invariance, errors") {
  torch::manual_seed(9);
  auto e = torch::randn({9, 6}, torch::kDouble);
  std::vector<int> lab{0, 1, 2, 0, 1, 2, 0, 0, 1};
  auto lt = torch::tensor(std::vector<int64_t>(lab.begin(), lab.end()));
  auto [same, diff] = pair_means(e, lab);
  auto t = orthogonal_projection_terms(e, lt);
  CHECK(t.same.item<double>() == doctest::Approx(same).epsilon(1e-12));
  CHECK(t.different.item<double>() == doctest::Approx(diff).epsilon(1e-12));
  CHECK(t.loss.item<double>() == doctest::Approx((1 - same) + 0.5 * std::abs(diff)).epsilon(1e-12));

  for (int k = 0; k < 9; ++k) {
    auto scaled = e.clone();
    scaled[k] *= 17.5;
    CHECK(std::abs(orthogonal_projection_loss(scaled, lt).item<double>() - t.loss.item<double>()) < 1e-6);
  }

  auto zero = e.clone();
  zero[3].zero_();
  CHECK_THROWS_WITH_AS(orthogonal_projection_loss(zero, lt), doctest::Contains("zero-norm"), Error);
  CHECK_THROWS_AS(orthogonal_projection_loss(e.slice(0, 0, 1), lt.slice(0, 0, 1)), Error);
}

TEST_CASE("orthogonal projection loss: direct optimization clusters and orthogonalizes") {
  torch::manual_seed(10);
  auto e = torch::randn({15, 8}, torch::kDouble).requires_grad_(true);
  auto lab = torch::arange(3, torch::kLong).repeat_interleave(5);
  torch::optim::Adam opt({e}, torch::optim::AdamOptions(0.05));
  for (int step = 0; step < 500; ++step) {
    opt.zero_grad();
    orthogonal_projection_loss(e, lab).backward();
    opt.step();
  }
  torch::NoGradGuard guard;
  auto u = e / e.norm(2, 1, true);
  auto c = u.matmul(u.t());
  double intra = 0, inter = 0, inter_abs = 0;
  int ni = 0, nx = 0;
  for (int i = 0; i < 15; ++i) {
    for (int j = i + 1; j < 15; ++j) {
      if (i / 5 == j / 5) {
        intra += c[i][j].item<double>();
        ++ni;
      } else {
        inter += c[i][j].item<double>();
        inter_abs += std::abs(c[i][j].item<double>());
        ++nx;
      }
    }
  }
  CHECK(intra / ni >= 0.99);
  // The penalty is on the absolute value of the mean cross-class cosine, so
  // that mean goes to zero while single pairs need not. The acceptance run
  // reports the mean of absolute values separately.
  CHECK(std::abs(inter / nx) <= 0.02);
  MESSAGE("mean |inter-class cosine| = " << inter_abs / nx);
}

TEST_CASE("emotion disentangling objective weights") {
  CHECK(edm_loss(1.0, 1.0, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(edm_loss(0.0, 0.0, 0.0) == 0.0);
  CHECK(edm_loss(0.5, 0.25, 0.1) == doctest::Approx(0.4).epsilon(1e-12));
}
