#include <cmath>
#include <random>

#include <ATen/CPUGeneratorImpl.h>

#include "diclet/diffusion.hpp"
#include "diclet/error.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace diclet;

namespace {

const auto kDouble = torch::TensorOptions().dtype(torch::kDouble);

torch::Generator seeded(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

double mean_of(const torch::Tensor& x) { return x.mean().item<double>(); }
double var_of(const torch::Tensor& x) { return x.var(false).item<double>(); }

/// Moments of X_t under the forward SDE when X0 ~ N(m, s^2), written from the
/// closed-form decay of the OU mean and the integrated noise.
struct Gaussian {
  double mean, var;
};
Gaussian marginal_moments(const DiffusionSchedule& sch, double mu, double m, double s, double t) {
  const double B = sch.beta0() * t + 0.5 * (sch.beta1() - sch.beta0()) * t * t;
  return {mu + (m - mu) * std::exp(-B / 2), s * s * std::exp(-B) + (1 - std::exp(-B))};
}

/// Euler-Maruyama of dX = 0.5 (mu - X) beta dt + sqrt(beta) dW from a point mass.
torch::Tensor simulate_forward(const DiffusionSchedule& sch, double x0, double mu, double t_end,
                               int64_t paths, int steps, torch::Generator& gen) {
  auto x = torch::full({paths}, x0, kDouble);
  const double h = t_end / steps;
  for (int i = 0; i < steps; ++i) {
    const double b = sch.beta(i * h);
    x = x + 0.5 * (mu - x) * b * h + torch::randn({paths}, gen, kDouble) * std::sqrt(b * h);
  }
  return x;
}

ScoreFn analytic_score(const DiffusionSchedule& sch, double mu, double m, double s) {
  return [=](const torch::Tensor& xt, const torch::Tensor& t) {
    auto out = torch::empty_like(xt);
    auto flat_t = t.to(torch::kDouble);
    for (int64_t i = 0; i < xt.size(0); ++i) {
      auto g = marginal_moments(sch, mu, m, s, flat_t[i].item<double>());
      out[i] = -(xt[i] - g.mean) / g.var;
    }
    return out;
  };
}

/// Same score, vectorized over a shared time (all rows move together in the samplers).
ScoreFn analytic_score_fast(const DiffusionSchedule& sch, double mu, double m, double s) {
  return [=](const torch::Tensor& xt, const torch::Tensor& t) {
    auto g = marginal_moments(sch, mu, m, s, t[0].item<double>());
    return -(xt - g.mean) / g.var;
  };
}

}  // namespace

TEST_CASE("schedule identities") {
  DiffusionSchedule s;
  CHECK(s.beta0() == 0.05);
  CHECK(s.beta1() == 20.0);
  CHECK(s.cumulative(0.0) == 0.0);
  CHECK(s.lambda(0.0) == 0.0);
  const double h = 1e-5;
  double prev = -1;
  for (double t = 0.01; t < 0.99; t += 0.07) {
    const double fd = (s.cumulative(t + h) - s.cumulative(t - h)) / (2 * h);
    CHECK(std::abs(fd - s.beta(t)) < 1e-6);
    CHECK(s.lambda(t) > prev);
    prev = s.lambda(t);
  }
  CHECK(s.lambda(1.0) == doctest::Approx(1 - std::exp(-10.025)).epsilon(1e-12));
  CHECK_NOTHROW(DiffusionSchedule(20, 20));
  CHECK_THROWS_AS(DiffusionSchedule(0, 20), Error);
  CHECK_THROWS_AS(DiffusionSchedule(5, 1), Error);
}

TEST_CASE("forward marginal: boundary, rng contract, errors") {
  DiffusionSchedule s;
  auto gen = seeded(1);
  auto x0 = torch::randn({4, 6}, kDouble);
  auto mu = torch::randn({4, 6}, kDouble);
  CHECK(torch::equal(forward_marginal(s, x0, mu, 0.0, gen), x0));

  auto g1 = seeded(5), g2 = seeded(5), g3 = seeded(6);
  auto a = forward_marginal(s, x0, mu, 0.4, g1);
  CHECK(torch::equal(a, forward_marginal(s, x0, mu, 0.4, g2)));
  CHECK_FALSE(torch::equal(a, forward_marginal(s, x0, mu, 0.4, g3)));

  CHECK_THROWS_AS(forward_marginal(s, x0, mu, 1.5, gen), Error);
  CHECK_THROWS_AS(forward_marginal(s, x0, mu, -0.1, gen), Error);
  CHECK_THROWS_AS(forward_marginal(s, x0, mu.slice(1, 0, 3), 0.5, gen), Error);
}

TEST_CASE("forward marginal agrees with closed form and with Euler-Maruyama simulation") {
  DiffusionSchedule s;
  const int64_t n = 100000;
  auto x0 = torch::full({n}, 2.0, kDouble);
  auto mu = torch::zeros({n}, kDouble);
  for (double t : {0.25, 0.5, 1.0}) {
    CAPTURE(t);
    auto g = seeded(11);
    auto closed = forward_marginal(s, x0, mu, t, g);
    auto sim_gen = seeded(12);
    auto sim = simulate_forward(s, 2.0, 0.0, t, n, 1000, sim_gen);
    auto want = marginal_moments(s, 0.0, 2.0, 0.0, t);
    const double rms = std::sqrt(want.var + want.mean * want.mean);
    // The mean decays towards zero, so it is compared on the scale of the spread.
    CHECK(std::abs(mean_of(closed) - want.mean) / rms < 0.02);
    CHECK(std::abs(mean_of(sim) - want.mean) / rms < 0.02);
    CHECK(testing::rel_diff(var_of(closed), want.var) < 0.02);
    CHECK(testing::rel_diff(var_of(sim), want.var) < 0.02);
    CHECK(testing::rel_diff(var_of(sim), var_of(closed)) < 0.02);
  }
}

TEST_CASE("forward marginal: constant beta 20 from X0 = 2") {
  DiffusionSchedule s(20, 20);
  const int64_t n = 100000;
  auto g = seeded(3);
  auto x = forward_marginal(s, torch::full({n}, 2.0, kDouble), torch::zeros({n}, kDouble), 1.0, g);
  const double mean = 2 * std::exp(-10.0);
  const double var = -std::expm1(-20.0);
  CHECK(mean == doctest::Approx(9.08e-5).epsilon(1e-3));
  CHECK(marginal_mean(s, torch::full({1}, 2.0, kDouble), torch::zeros({1}, kDouble),
                      torch::ones({1}, kDouble))
            .item<double>() == doctest::Approx(mean).epsilon(1e-12));
  // At 1e5 draws the sample mean has standard error ~3e-3, far above 9e-5.
  CHECK(std::abs(mean_of(x) - mean) < 4 * std::sqrt(var / n));
  CHECK(testing::rel_diff(var_of(x), var) < 0.02);
}

TEST_CASE("true conditional score: worked examples and log-density finite differences") {
  DiffusionSchedule s;
  auto x0 = torch::randn({3, 5}, kDouble);
  auto mu = torch::randn({3, 5}, kDouble);
  auto t = torch::tensor({0.2, 0.5, 0.9}, kDouble);
  auto mean = marginal_mean(s, x0, mu, t);
  CHECK(true_conditional_score(s, mean, x0, mu, t).abs().max().item<double>() == 0.0);

  // lambda(t) = 0.5 at B(t) = ln 2.
  DiffusionSchedule c(1.0, 1.0);
  const double t_half = std::log(2.0);
  auto one = torch::ones({1, 1}, kDouble);
  auto zero = torch::zeros({1, 1}, kDouble);
  auto th = torch::full({1}, t_half, kDouble);
  auto m = marginal_mean(c, one, zero, th);
  CHECK(true_conditional_score(c, m + 1, one, zero, th).item<double>() == doctest::Approx(-2.0));

  auto xt = mean + torch::randn({3, 5}, kDouble);
  auto score = true_conditional_score(s, xt, x0, mu, t);
  auto lam = s.lambda(t).unsqueeze(1);
  auto logpdf = [&](const torch::Tensor& x) {
    return (-(x - mean).pow(2) / (2 * lam) - 0.5 * torch::log(2 * M_PI * lam));
  };
  const double h = 1e-6;
  auto fd = (logpdf(xt + h) - logpdf(xt - h)) / (2 * h);
  CHECK((fd - score).abs().max().item<double>() < 1e-5);

  CHECK_THROWS_WITH_AS(true_conditional_score(s, xt, x0, mu, torch::zeros({3}, kDouble)),
                       doctest::Contains("t = 0"), Error);
}

TEST_CASE("diffusion loss: oracle zero, Monte-Carlo expectation, finite near epsilon") {
  DiffusionSchedule s;
  auto x0 = torch::randn({8, 12, 4}, kDouble);
  auto mu = torch::randn({8, 12, 4}, kDouble);
  auto mask = torch::ones({8, 12}, kDouble);
  mask.slice(1, 9).zero_();

  auto g = seeded(21);
  auto oracle = [&](const torch::Tensor& xt, const torch::Tensor& t) {
    return true_conditional_score(s, xt, x0, mu, t);
  };
  CHECK(diffusion_loss(s, x0, mu, mask, oracle, g, 1e-3).item<double>() < 1e-10);

  // With a zero estimate the loss is lambda * |xi / sqrt(lambda)|^2 = xi^2 per element: expectation 1.
  const int64_t n = 10000;
  auto big0 = torch::randn({n, 1}, kDouble);
  auto bigmu = torch::zeros({n, 1}, kDouble);
  auto zero_fn = [](const torch::Tensor& xt, const torch::Tensor&) { return torch::zeros_like(xt); };
  auto g2 = seeded(22);
  const double loss = diffusion_loss(s, big0, bigmu, {}, zero_fn, g2, 1e-3).item<double>();
  auto g3 = seeded(23);
  auto t = torch::rand({n}, g3, kDouble) * (1 - 1e-3) + 1e-3;
  auto xt = forward_marginal(s, big0, bigmu, t, g3);
  auto target = true_conditional_score(s, xt, big0, bigmu, t);
  const double mc = (s.lambda(t).unsqueeze(1) * target.pow(2)).mean().item<double>();
  CHECK(testing::rel_diff(loss, 1.0) < 0.03);
  CHECK(testing::rel_diff(loss, mc) < 0.03);

  auto g4 = seeded(24);
  auto at_eps = diffusion_loss(s, x0, mu, mask, zero_fn, g4, 1e-3,
                               torch::full({8}, 1e-3, kDouble));
  CHECK(std::isfinite(at_eps.item<double>()));
  CHECK(at_eps.item<double>() >= 0.0);

  CHECK_THROWS_AS(diffusion_loss(s, x0, mu, mask, zero_fn, g4, 0.0), Error);
}

TEST_CASE("score network: shapes, zero conditioning, per-block injection") {
  torch::manual_seed(2);
  auto cfg = testing::tiny_model();
  ScoreNetwork net(cfg, true);
  net->eval();
  const int64_t F = cfg.mel_bands;
  auto spk = torch::randn({2, cfg.speaker_dim});
  auto emo = torch::randn({2, cfg.emotion_dim});
  auto t = torch::tensor({0.3, 0.8});
  for (int64_t T : {8, 64, 13}) {
    auto xt = torch::randn({2, T, F});
    auto out = net(xt, torch::randn({2, T, F}), torch::ones({2, T}), t, spk, emo);
    CHECK(out.sizes() == xt.sizes());
  }

  auto xt = torch::randn({2, 16, F});
  auto mu = torch::randn({2, 16, F});
  auto mask = torch::ones({2, 16});
  auto a = net(xt, mu, mask, t, spk, emo);
  CHECK(torch::equal(a, net(xt, mu, mask, t, spk, emo)));

  // Emotion change reaches every residual block.
  std::vector<torch::Tensor> base, moved;
  net(xt, mu, mask, t, spk, emo, &base);
  net(xt, mu, mask, t, spk, emo + 1.0, &moved);
  REQUIRE(base.size() == net->residual_blocks().size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CAPTURE(i);
    CHECK((base[i] - moved[i]).abs().max().item<double>() > 0.0);
  }

  net->zero_conditioning();
  auto z1 = net(xt, mu, mask, t, spk, emo);
  auto z2 = net(xt, mu, mask, t, torch::randn_like(spk), torch::randn_like(emo));
  CHECK(torch::equal(z1, z2));

  CHECK_THROWS_AS(net(xt, mu.slice(1, 0, 8), mask, t, spk, emo), Error);
}

TEST_CASE("score network without per-block conditioning still sees the conditioning once") {
  torch::manual_seed(4);
  auto cfg = testing::tiny_model();
  ScoreNetwork net(cfg, false);
  net->eval();
  for (const auto& b : net->residual_blocks()) CHECK_FALSE(b->conditioned());
  auto xt = torch::randn({1, 8, cfg.mel_bands});
  auto mu = torch::randn({1, 8, cfg.mel_bands});
  auto mask = torch::ones({1, 8});
  auto t = torch::tensor({0.5});
  auto spk = torch::randn({1, cfg.speaker_dim});
  auto a = net(xt, mu, mask, t, spk, torch::zeros({1, cfg.emotion_dim}));
  auto b = net(xt, mu, mask, t, spk, torch::ones({1, cfg.emotion_dim}));
  CHECK_FALSE(torch::equal(a, b));
}

TEST_CASE("speaker table rejects unknown ids by name") {
  SpeakerTable table(3, 8);
  CHECK(table(torch::tensor({0, 2})).sizes() == torch::IntArrayRef({2, 8}));
  CHECK_THROWS_WITH_AS(table(torch::tensor({1, 5})), doctest::Contains("unknown speaker id 5"), Error);
  CHECK_THROWS_WITH_AS(table(torch::tensor({-1})), doctest::Contains("unknown speaker id -1"), Error);
}

TEST_CASE("diffusion loss gradient matches finite differences at random parameters") {
  torch::manual_seed(5);
  auto cfg = testing::tiny_model();
  ScoreNetwork net(cfg, true);
  net->to(torch::kDouble);
  DiffusionSchedule s;
  auto x0 = torch::randn({2, 8, cfg.mel_bands}, kDouble);
  auto mu = torch::randn({2, 8, cfg.mel_bands}, kDouble);
  auto mask = torch::ones({2, 8}, kDouble);
  auto spk = torch::randn({2, cfg.speaker_dim}, kDouble);
  auto emo = torch::randn({2, cfg.emotion_dim}, kDouble);
  auto fixed_t = torch::tensor({0.35, 0.7}, kDouble);
  auto loss = [&] {
    auto g = seeded(31);
    ScoreFn fn = [&](const torch::Tensor& xt, const torch::Tensor& t) {
      return net(xt, mu, mask, t, spk, emo);
    };
    return diffusion_loss(s, x0, mu, mask, fn, g, 1e-3, fixed_t);
  };

  net->zero_grad();
  loss().backward();
  auto params = net->parameters();
  std::mt19937_64 rng(7);
  int checked = 0;
  double worst = 0;
  for (int tries = 0; tries < 10000 && checked < 10; ++tries) {
    auto& p = params[std::uniform_int_distribution<std::size_t>(0, params.size() - 1)(rng)];
    const auto idx = std::uniform_int_distribution<int64_t>(0, p.numel() - 1)(rng);
    const double g = p.grad().view(-1)[idx].item<double>();
    if (std::abs(g) < 1e-6) continue;
    torch::NoGradGuard guard;
    auto flat = p.view(-1);
    const double orig = flat[idx].item<double>();
    const double h = 1e-6;
    flat[idx] = orig + h;
    const double up = loss().item<double>();
    flat[idx] = orig - h;
    const double down = loss().item<double>();
    flat[idx] = orig;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(g - fd) / std::max(std::abs(fd), 1e-12));
    ++checked;
  }
  CHECK(checked == 10);
  CHECK(worst < 1e-3);
}

TEST_CASE("reverse ODE: Gaussian analytic-score oracle, temperature, determinism") {
  DiffusionSchedule s;
  const double m = 1.5, sd = 0.5;
  const int64_t n = 10000;
  auto mu = torch::zeros({n}, kDouble);
  auto g = seeded(41);
  auto x = reverse_ode_sample(s, mu, analytic_score_fast(s, 0.0, m, sd), 200, g);
  CHECK(testing::rel_diff(mean_of(x), m) < 0.03);
  CHECK(testing::rel_diff(var_of(x), sd * sd) < 0.03);

  // The per-row score agrees with the shared-time shortcut.
  auto small = torch::randn({5}, kDouble);
  auto tt = torch::full({5}, 0.4, kDouble);
  CHECK(torch::allclose(analytic_score(s, 0.0, m, sd)(small, tt), analytic_score_fast(s, 0.0, m, sd)(small, tt)));

  // With the score of N(mu, I) the drift vanishes, so the output is the initial draw.
  auto mu2 = torch::full({n}, 0.7, kDouble);
  ScoreFn standard = [&](const torch::Tensor& xt, const torch::Tensor&) { return -(xt - mu2); };
  auto ga = seeded(42);
  auto init = reverse_ode_sample(s, mu2, standard, 10, ga);
  CHECK(std::abs(mean_of(init) - 0.7) < 0.04);
  CHECK(testing::rel_diff(var_of(init), 1.0) < 0.05);
  auto gt = seeded(42);
  auto hot = reverse_ode_sample(s, mu2, standard, 10, gt, 4.0);
  CHECK(testing::rel_diff(var_of(hot), 0.25) < 0.05);

  auto g1 = seeded(43), g2 = seeded(43), g3 = seeded(44);
  auto score = analytic_score_fast(s, 0.0, m, sd);
  auto mu3 = torch::zeros({4, 3}, kDouble);
  auto a = reverse_ode_sample(s, mu3, score, 20, g1);
  CHECK(torch::equal(a, reverse_ode_sample(s, mu3, score, 20, g2)));
  CHECK_FALSE(torch::equal(a, reverse_ode_sample(s, mu3, score, 20, g3)));

  auto one = reverse_ode_sample(s, mu3, score, 1, g1);
  CHECK(torch::isfinite(one).all().item<bool>());
  CHECK_THROWS_AS(reverse_ode_sample(s, mu3, score, 0, g1), Error);
  CHECK_THROWS_AS(reverse_ode_sample(s, mu3, score, 5, g1, 0.0), Error);
}

TEST_CASE("reverse SDE: Gaussian analytic-score oracle and determinism") {
  DiffusionSchedule s;
  const double m = 1.5, sd = 0.5;
  const int64_t n = 10000;
  auto mu = torch::zeros({n}, kDouble);
  auto g = seeded(51);
  auto x = reverse_sde_sample(s, mu, analytic_score_fast(s, 0.0, m, sd), 200, g);
  CHECK(testing::rel_diff(mean_of(x), m) < 0.04);
  CHECK(testing::rel_diff(var_of(x), sd * sd) < 0.04);

  auto mu3 = torch::zeros({4, 3}, kDouble);
  auto score = analytic_score_fast(s, 0.0, m, sd);
  auto g1 = seeded(52), g2 = seeded(52);
  CHECK(torch::equal(reverse_sde_sample(s, mu3, score, 30, g1), reverse_sde_sample(s, mu3, score, 30, g2)));
  auto one = reverse_sde_sample(s, mu3, score, 1, g1);
  CHECK(torch::isfinite(one).all().item<bool>());
}
