#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedsim/dp.hpp"
#include "fedsim/error.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/stats.hpp"

using namespace fedsim;
using namespace fedsim::dp;

namespace {

double l2(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

// Independent accountant written straight from the mechanism definitions,
// using lgamma-based binomial terms in long double arithmetic. Shares no
// code with the library path.
double rdp_oracle(double order, double q, double z) {
  if (q == 0.0) return 0.0;
  if (q == 1.0) return order / (2.0 * z * z);
  const int n = static_cast<int>(std::ceil(order - 1e-9));
  long double max_t = -1e4932L;
  std::vector<long double> terms;
  for (int k = 0; k <= n; ++k) {
    const long double log_binom =
        lgammal(n + 1.0L) - lgammal(k + 1.0L) -
        lgammal(n - k + 1.0L);
    const long double t = log_binom + k * logl((long double)q) +
                          (n - k) * log1pl(-(long double)q) +
                          ((long double)k * (k - 1)) / (2.0L * z * z);
    terms.push_back(t);
    max_t = std::max(max_t, t);
  }
  long double acc = 0.0L;
  for (long double t : terms) acc += expl(t - max_t);
  const long double log_a = max_t + logl(acc);
  return static_cast<double>(std::max(0.0L, log_a) / (n - 1.0L));
}

nn::ModelSpec tiny_spec(nn::Arch arch = nn::Arch::anfr) {
  nn::ModelSpec s = nn::ModelSpec::for_arch(arch);
  s.widths = {4, 8};
  s.depths = {1, 1};
  s.num_classes = 3;
  s.groups = 2;
  s.se_reduction = 2;
  s.in_channels = 3;
  s.in_height = 8;
  s.in_width = 8;
  return s;
}

}  // namespace

TEST_CASE("clipping is inactive below the bound and exact at it") {
  Rng rng(3);
  std::vector<std::vector<double>> grads;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> g(10);
    for (double& x : g) x = rng.normal(0.0, 0.01);
    grads.push_back(std::move(g));
  }
  const auto sum = clip_per_sample(grads, 10.0);
  std::vector<double> plain(10, 0.0);
  for (const auto& g : grads) {
    for (size_t i = 0; i < g.size(); ++i) plain[i] += g[i];
  }
  for (size_t i = 0; i < plain.size(); ++i) {
    CHECK(sum[i] == doctest::Approx(plain[i]).epsilon(1e-15));
  }

  // A gradient of norm 2C comes out with norm exactly C.
  std::vector<double> big(4, 0.0);
  big[0] = 2.0;
  const auto clipped = clip_per_sample({big}, 1.0);
  CHECK(l2(clipped) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("every clipped per-sample norm stays within the bound") {
  Rng rng(5);
  const double c = 0.75;
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> g(17);
    for (double& x : g) x = rng.normal(0.0, 2.0);
    const auto clipped = clip_per_sample({g}, c);
    CHECK(l2(clipped) <= c + 1e-12);
  }
}

TEST_CASE("noising: vanishing noise, determinism, and the std scale") {
  std::vector<double> sum{1.0, -2.0, 3.0, 0.5};

  SUBCASE("vanishing noise returns the clipped mean") {
    const auto out = noise_and_average(sum, 1e-12, 1.0, 4, 7);
    for (size_t i = 0; i < sum.size(); ++i) {
      CHECK(std::abs(out[i] - sum[i] / 4.0) < 1e-9);
    }
  }

  SUBCASE("identical seeds give bit-identical noise") {
    const auto a = noise_and_average(sum, 1.1, 1.0, 4, 99);
    const auto b = noise_and_average(sum, 1.1, 1.0, 4, 99);
    CHECK(a == b);
  }

  SUBCASE("empirical noise std matches z C / B") {
    const double z = 1.1, c = 1.0;
    const int batch = 8;
    std::vector<double> zero(10, 0.0);
    std::vector<double> draws;
    for (int rep = 0; rep < 1000; ++rep) {
      const auto out = noise_and_average(zero, z, c, batch, 1000 + rep);
      draws.insert(draws.end(), out.begin(), out.end());
    }
    const double sd = stats::stddev(draws);
    CHECK(std::abs(sd - z * c / batch) < 0.05 * z * c / batch);
  }
}

TEST_CASE("rdp accountant basics") {
  auto ledger = PrivacyLedger::make(default_order_grid(), 0.01, 1.1);

  SUBCASE("zero steps spend zero budget") {
    const auto r = rdp_epsilon(ledger, 1e-5);
    CHECK(r.epsilon == 0.0);
  }

  SUBCASE("full-batch single step matches the Gaussian mechanism") {
    auto full = PrivacyLedger::make(default_order_grid(), 1.0, 2.0);
    full.add_steps(1);
    const double delta = 1e-6;
    const auto r = rdp_epsilon(full, delta);
    double best = 1e300;
    for (double a : full.orders) {
      best = std::min(best, a / (2.0 * 2.0 * 2.0) +
                                std::log(1.0 / delta) / (a - 1.0));
    }
    CHECK(r.epsilon == doctest::Approx(best).epsilon(1e-12));
  }

  SUBCASE("epsilon is monotone in steps, noise, and sample rate") {
    auto l1 = PrivacyLedger::make(default_order_grid(), 0.01, 1.1);
    l1.add_steps(100);
    auto l2 = PrivacyLedger::make(default_order_grid(), 0.01, 1.1);
    l2.add_steps(200);
    CHECK(rdp_epsilon(l2, 1e-5).epsilon > rdp_epsilon(l1, 1e-5).epsilon);

    auto quieter = PrivacyLedger::make(default_order_grid(), 0.01, 2.2);
    quieter.add_steps(100);
    CHECK(rdp_epsilon(quieter, 1e-5).epsilon <
          rdp_epsilon(l1, 1e-5).epsilon);

    auto denser = PrivacyLedger::make(default_order_grid(), 0.05, 1.1);
    denser.add_steps(100);
    CHECK(rdp_epsilon(denser, 1e-5).epsilon > rdp_epsilon(l1, 1e-5).epsilon);
  }

  SUBCASE("delta outside (0,1) is rejected") {
    CHECK_THROWS_AS(rdp_epsilon(ledger, 0.0), ConfigError);
    CHECK_THROWS_AS(rdp_epsilon(ledger, 1.0), ConfigError);
  }
}

TEST_CASE("rdp per-step values agree with the independent oracle") {
  for (double q : {0.001, 0.01, 0.1, 1.0}) {
    for (double z : {0.8, 1.1, 2.0}) {
      for (double order : {1.25, 1.5, 2.0, 8.0, 64.0, 512.0}) {
        const double mine = rdp_subsampled_gaussian(order, q, z);
        const double ref = rdp_oracle(order, q, z);
        CHECK(std::abs(mine - ref) <= 1e-6 * std::max(1e-300, std::abs(ref)));
      }
    }
  }
}

TEST_CASE("dp_local_step rejects batch-norm models") {
  nn::Model bn = nn::build_model(tiny_spec(nn::Arch::bn_resnet), 1);
  Rng rng(11);
  Tensor x = Tensor::randn(Shape{2, 3, 8, 8}, rng);
  Tensor y = Tensor::from_values(Shape{2}, {0.0, 1.0});
  ClientOptimizer opt(OptimizerKind::sgd);
  DpConfig cfg;
  auto ledger = PrivacyLedger::make(default_order_grid(), 0.1, 1.1);
  CHECK_THROWS_AS(dp_local_step(bn, x, y, ops::LossKind::cross_entropy, {},
                                2.0, opt, 0.05, cfg, ledger, 1),
                  ConfigError);
  CHECK(ledger.steps == 0);
}

TEST_CASE("dp machinery disabled reduces to a plain SGD step") {
  nn::ModelSpec spec = tiny_spec();
  Rng rng(13);
  Tensor x = Tensor::randn(Shape{4, 3, 8, 8}, rng);
  Tensor y = Tensor::from_values(Shape{4}, {0.0, 1.0, 2.0, 0.0});

  nn::Model plain = nn::build_model(spec, 7);
  {
    Tape tape;
    TapeScope scope(tape);
    backward(ops::cross_entropy(plain.forward(x, true), y));
  }
  auto params = plain.named_parameters();
  for (auto& [name, t] : params) {
    auto& v = t.mutable_values();
    if (!t.has_grad()) continue;
    const auto& g = t.grad();
    for (size_t i = 0; i < v.size(); ++i) v[i] -= 0.05 * g[i];
  }

  nn::Model dp_model = nn::build_model(spec, 7);
  ClientOptimizer opt(OptimizerKind::sgd);
  DpConfig cfg;
  cfg.clip_norm = 1e3;  // far above any gradient norm here
  cfg.noise_multiplier = 1e-12;
  auto ledger = PrivacyLedger::make(default_order_grid(), 1.0, 1.1);
  dp_local_step(dp_model, x, y, ops::LossKind::cross_entropy, {}, 2.0, opt,
                0.05, cfg, ledger, 3);
  CHECK(ledger.steps == 1);

  const auto a = plain.export_state();
  const auto b = dp_model.export_state();
  for (size_t e = 0; e < a.size(); ++e) {
    for (size_t j = 0; j < a[e].values.size(); ++j) {
      CHECK(std::abs(a[e].values[j] - b[e].values[j]) < 1e-8);
    }
  }
}

TEST_CASE("spent budget grows strictly with every step") {
  auto ledger = PrivacyLedger::make(default_order_grid(), 0.02, 1.1);
  double prev = 0.0;
  for (int step = 1; step <= 100; ++step) {
    ledger.add_steps(1);
    const double eps = rdp_epsilon(ledger, 1e-5).epsilon;
    CHECK(eps > prev);
    prev = eps;
  }
}
