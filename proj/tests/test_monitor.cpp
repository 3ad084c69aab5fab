#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mlab/errors.hpp"
#include "mlab/monitor.hpp"

using namespace mlab;

namespace {

Trajectory make_traj(std::vector<double> lp_train, std::vector<double> lp_rollout) {
  Trajectory t;
  t.tokens.assign(lp_train.size(), 1);
  t.logprob_train = std::move(lp_train);
  t.logprob_rollout = std::move(lp_rollout);
  return t;
}

}  // namespace

TEST_CASE("log_ppl: deterministic policy scores zero") {
  const auto traj = make_traj({0.0, 0.0, 0.0}, {0.0, 0.0, 0.0});
  CHECK(log_ppl(traj, EngineKind::train) == 0.0);
}

TEST_CASE("log_ppl: uniform policy V=4 T=3 gives 3 ln 4") {
  const double lp = std::log(0.25);
  const auto traj = make_traj({lp, lp, lp}, {lp, lp, lp});
  CHECK(log_ppl(traj, EngineKind::train) == doctest::Approx(3.0 * std::log(4.0)));
  CHECK(log_ppl(traj, EngineKind::train) == doctest::Approx(4.158883).epsilon(1e-6));
}

TEST_CASE("log_ppl: random scores match direct recomputation") {
  Rng rng(42);
  for (int i = 0; i < 50; ++i) {
    const int len = 1 + static_cast<int>(rng.uniform() * 10);
    std::vector<double> lp(len);
    for (double& x : lp) x = -3.0 * rng.uniform();
    double expected = 0.0;
    for (double x : lp) expected -= x;
    const auto traj = make_traj(lp, lp);
    CHECK(log_ppl(traj, EngineKind::rollout) == doctest::Approx(expected).epsilon(1e-15));
    CHECK(log_ppl(traj, EngineKind::rollout) >= 0.0);
  }
}

TEST_CASE("log_ppl: missing scores are a contract error") {
  auto traj = make_traj({-0.5, -0.5}, {-0.5, -0.5});
  traj.logprob_train.pop_back();
  CHECK_THROWS_AS(log_ppl(traj, EngineKind::train), ContractError);
}

TEST_CASE("mismatch indicator: worked examples") {
  // identical engines
  std::vector<Trajectory> same = {make_traj({-1.0, -2.0}, {-1.0, -2.0})};
  CHECK(mismatch_indicator(same) == 0.0);

  // single trajectory with log-ppls 5.0 and 4.2
  std::vector<Trajectory> one = {make_traj({-2.5, -2.5}, {-2.1, -2.1})};
  CHECK(mismatch_indicator(one) == doctest::Approx(0.8).epsilon(1e-12));

  CHECK_THROWS_AS(mismatch_indicator({}), ContractError);
}

TEST_CASE("mismatch indicator: batch of 64 equals the brute-force mean") {
  Rng rng(9);
  std::vector<Trajectory> batch;
  double expected = 0.0;
  for (int i = 0; i < 64; ++i) {
    const int len = 1 + static_cast<int>(rng.uniform() * 8);
    std::vector<double> a(len), b(len);
    double ppl_a = 0.0, ppl_b = 0.0;
    for (int t = 0; t < len; ++t) {
      a[t] = -2.0 * rng.uniform();
      b[t] = -2.0 * rng.uniform();
      ppl_a -= a[t];
      ppl_b -= b[t];
    }
    expected += std::fabs(ppl_a - ppl_b);
    batch.push_back(make_traj(a, b));
  }
  expected /= 64.0;
  CHECK(mismatch_indicator(batch) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("EMA smoother") {
  EmaSmoother constant(0.9);
  for (int i = 0; i < 10; ++i) CHECK(constant.update(3.25) == 3.25);

  EmaSmoother two(0.9);
  CHECK(two.update(1.0) == 1.0);  // first value initializes
  CHECK(two.update(2.0) == doctest::Approx(1.1).epsilon(1e-12));

  // long series vs closed-form recomputation
  EmaSmoother ema(0.8);
  Rng rng(5);
  double reference = 0.0;
  bool first = true;
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform();
    reference = first ? x : 0.8 * reference + 0.2 * x;
    first = false;
    CHECK(ema.update(x) == doctest::Approx(reference).epsilon(1e-12));
  }

  CHECK_THROWS_AS(EmaSmoother(0.0), ConfigError);
  CHECK_THROWS_AS(EmaSmoother(1.0), ConfigError);
}

TEST_CASE("surge detector: constant lengths never trigger") {
  SurgeDetector detector({20, 2.5});
  for (long step = 1; step <= 200; ++step) detector.observe(step, 1000.0);
  CHECK_FALSE(detector.surge_step().has_value());
}

TEST_CASE("surge detector: the trace from 1000 to 3500 triggers at step 100") {
  SurgeDetector detector({20, 2.5});
  for (long step = 1; step <= 99; ++step) detector.observe(step, 1000.0);
  for (long step = 100; step <= 140; ++step) detector.observe(step, 3500.0);
  REQUIRE(detector.surge_step().has_value());
  CHECK(*detector.surge_step() == 100);
  CHECK(detector.baseline() == doctest::Approx(1000.0));
}

TEST_CASE("surge detector: no trigger inside the first window") {
  SurgeDetector detector({20, 1.1});
  for (long step = 1; step <= 20; ++step) detector.observe(step, 1000.0 * step);
  CHECK_FALSE(detector.surge_step().has_value());
}

TEST_CASE("surge detector: effectively infinite factor never triggers") {
  SurgeDetector detector({20, 1e18});
  for (long step = 1; step <= 99; ++step) detector.observe(step, 1000.0);
  for (long step = 100; step <= 300; ++step) detector.observe(step, 1e9);
  CHECK_FALSE(detector.surge_step().has_value());
}

TEST_CASE("surge detector: first trigger latches") {
  SurgeDetector detector({10, 2.0});
  for (long step = 1; step <= 30; ++step) detector.observe(step, 100.0);
  detector.observe(31, 500.0);
  REQUIRE(detector.surge_step().has_value());
  CHECK(*detector.surge_step() == 31);
  const double frozen_baseline = detector.baseline();
  for (long step = 32; step <= 200; ++step) detector.observe(step, 50000.0);
  CHECK(*detector.surge_step() == 31);
  CHECK(detector.baseline() == frozen_baseline);
}

TEST_CASE("surge detector: scale invariance of the trigger step") {
  for (double scale : {1.0, 1000.0, 1e-3}) {
    SurgeDetector detector({15, 2.5});
    std::optional<long> when;
    Rng rng(31);
    for (long step = 1; step <= 300; ++step) {
      const double base = step < 120 ? 10.0 : 35.0;
      detector.observe(step, scale * base * (1.0 + 0.01 * rng.uniform()));
      if (detector.surge_step() && !when) when = detector.surge_step();
    }
    REQUIRE(when.has_value());
    CHECK(*when == 120);
  }
}

TEST_CASE("surge detector config validation") {
  CHECK_THROWS_AS(SurgeDetector({0, 2.0}), ConfigError);
  CHECK_THROWS_AS(SurgeDetector({10, 0.0}), ConfigError);
}
