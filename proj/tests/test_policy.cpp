#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mlab/errors.hpp"
#include "mlab/policy.hpp"
#include "mlab/vecops.hpp"

using namespace mlab;

namespace {

PolicyParams random_params(int feature_dim, int vocab, std::uint64_t seed,
                           double scale = 0.7) {
  return init_policy(feature_dim, vocab, seed, scale, 0.0);
}

std::vector<State> some_states(int vocab, int count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<State> states;
  for (int i = 0; i < count; ++i) {
    State s;
    const int len = static_cast<int>(rng.uniform() * 5);
    for (int k = 0; k < len; ++k) {
      s.prefix.push_back(1 + static_cast<int>(rng.uniform() * (vocab - 1)));
    }
    states.push_back(std::move(s));
  }
  return states;
}

}  // namespace

TEST_CASE("mismatch none: engines bit-identical under every precision") {
  const auto params = random_params(12, 5, 11);
  for (auto precision : {fpemu::Precision::exact, fpemu::Precision::bf16_like,
                         fpemu::Precision::fp16_like}) {
    const auto engines = make_engines(MismatchMode::none, precision, 0.0, 99);
    for (const auto& s : some_states(5, 20, 5)) {
      const auto p = token_distribution(params, engines.train, s);
      const auto q = token_distribution(params, engines.rollout, s);
      CHECK(p == q);
    }
  }
}

TEST_CASE("controlled-tv with tv_scale 0 has zero TV") {
  const auto params = random_params(12, 4, 3);
  const auto engines = make_engines(MismatchMode::controlled_tv,
                                    fpemu::Precision::exact, 0.0, 1234);
  const auto states = some_states(4, 25, 8);
  const auto report = realized_tv(params, engines, states);
  CHECK(report.delta_max == 0.0);
}

TEST_CASE("reduction-order mode: dense 8-logit state diverges under bf16-like rounding") {
  // a state whose feature vector is dense, driven through the generic logit
  // path; vocab 8
  PolicyParams params = random_params(8, 8, 21, 1.3);
  std::vector<double> features = {0.9, -0.4, 1.7, 0.05, -1.1, 0.33, 2.2, -0.66};

  const auto engines = make_engines(MismatchMode::reduction_order,
                                    fpemu::Precision::bf16_like, 0.0, 0);
  const auto logits_train = logits_from_features(params, engines.train, features);
  const auto logits_rollout = logits_from_features(params, engines.rollout, features);

  // independent high-precision recomputation of both orders
  auto rr = [](double x) { return fpemu::round_significand(x, 8); };
  int differing = 0;
  for (int a = 0; a < 8; ++a) {
    std::vector<double> prods(8);
    for (int f = 0; f < 8; ++f) prods[f] = rr(rr(features[f]) * rr(params.at(f, a)));
    double seq = prods[0];
    for (int f = 1; f < 8; ++f) seq = rr(seq + prods[f]);
    std::function<double(int, int)> tree = [&](int lo, int hi) -> double {
      if (hi - lo == 1) return prods[lo];
      const int mid = lo + (hi - lo) / 2;
      return rr(tree(lo, mid) + tree(mid, hi));
    };
    const double pair = tree(0, 8);
    CHECK(logits_rollout[a] == seq);   // rollout folds left
    CHECK(logits_train[a] == pair);    // train reduces pairwise
    differing += (seq != pair);
  }
  CHECK(differing > 0);

  // and the downstream distributions differ too
  const auto p = distribution_from_logits(logits_train, engines.train);
  const auto q = distribution_from_logits(logits_rollout, engines.rollout);
  CHECK(p != q);
}

TEST_CASE("distributions normalize within tolerance") {
  const auto params = random_params(16, 6, 17, 2.0);
  for (auto precision : {fpemu::Precision::exact, fpemu::Precision::bf16_like,
                         fpemu::Precision::fp16_like}) {
    for (auto mode : {MismatchMode::none, MismatchMode::reduction_order,
                      MismatchMode::controlled_tv}) {
      const auto engines = make_engines(mode, precision, 0.8, 7);
      for (const auto& s : some_states(6, 15, precision == fpemu::Precision::exact
                                                  ? 31
                                                  : 32)) {
        for (const auto* engine : {&engines.train, &engines.rollout}) {
          const auto p = token_distribution(params, *engine, s);
          double total = 0.0;
          for (double v : p) {
            CHECK(v >= 0.0);
            total += v;
          }
          const double tol =
              precision == fpemu::Precision::exact ? 1e-12 : 1e-6;
          CHECK(std::fabs(total - 1.0) <= tol);
        }
      }
    }
  }
}

TEST_CASE("non-finite logits raise a numeric error") {
  auto params = random_params(8, 3, 5);
  // the empty-prefix state reads feature row 0
  params.theta[0] = std::numeric_limits<double>::infinity();
  const EngineConfig engine{EngineKind::train, MismatchMode::none,
                            fpemu::Precision::exact, 0.0, 0};
  const State root;
  CHECK(feature_index(params, root) == 0);
  CHECK_THROWS_AS(token_distribution(params, engine, root), NumericError);
}

TEST_CASE("realized TV: identical engines give zero, mixture matches closed form") {
  const auto params = random_params(10, 4, 13);
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  const auto states = some_states(4, 10, 3);
  CHECK(realized_tv(params, engines, states).delta_max == 0.0);

  // mu = (1-eps) pi + eps point-mass at a*: TV = eps (1 - pi(a*))
  const State s = states.front();
  const auto pi = token_distribution(params, engines.train, s);
  for (double eps : {0.05, 0.3, 0.9}) {
    for (int target = 0; target < 4; ++target) {
      std::vector<double> mu(pi.size());
      for (std::size_t a = 0; a < pi.size(); ++a) {
        mu[a] = (1.0 - eps) * pi[a] + (a == static_cast<std::size_t>(target) ? eps : 0.0);
      }
      CHECK(tv_distance(pi, mu) ==
            doctest::Approx(eps * (1.0 - pi[target])).epsilon(1e-12));
    }
  }
}

TEST_CASE("realized TV is nondecreasing in tv_scale") {
  const auto params = random_params(14, 5, 23);
  const auto states = some_states(5, 30, 77);
  double prev = -1.0;
  for (double scale : {0.0, 0.1, 0.25, 0.5, 1.0, 2.0}) {
    const auto engines = make_engines(MismatchMode::controlled_tv,
                                      fpemu::Precision::exact, scale, 42);
    const double delta = realized_tv(params, engines, states).delta_max;
    CHECK(delta >= prev);
    prev = delta;
  }
}

TEST_CASE("score function: uniform softmax Jacobian for V=2") {
  PolicyParams params;
  params.feature_dim = 4;
  params.vocab_size = 2;
  params.theta.assign(8, 0.0);  // all-equal logits -> uniform policy
  const EngineConfig engine{EngineKind::train, MismatchMode::none,
                            fpemu::Precision::exact, 0.0, 0};
  State s;  // empty prefix
  const auto grad = score_function(params, engine, s, 0);
  const int row = feature_index(params, s);
  for (int f = 0; f < 4; ++f) {
    for (int a = 0; a < 2; ++a) {
      const double expected = f == row ? (a == 0 ? 0.5 : -0.5) : 0.0;
      CHECK(grad[f * 2 + a] == doctest::Approx(expected).epsilon(1e-15));
    }
  }
}

TEST_CASE("score bound: closed form for a uniform policy on one state") {
  for (int vocab : {2, 3, 5}) {
    PolicyParams params;
    params.feature_dim = 3;
    params.vocab_size = vocab;
    params.theta.assign(static_cast<std::size_t>(3) * vocab, 0.0);
    const EngineConfig engine{EngineKind::train, MismatchMode::none,
                              fpemu::Precision::exact, 0.0, 0};
    const State s;
    const double v = vocab;
    // ||onehot(a) - uniform||_2 with unit one-hot feature
    const double expected =
        std::sqrt((1.0 - 1.0 / v) * (1.0 - 1.0 / v) + (v - 1.0) / (v * v));
    CHECK(score_bound(params, engine, std::vector<State>{s}) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("sample_trajectory: no mismatch means bitwise-equal per-token scores") {
  const auto params = random_params(20, 5, 3);
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  SyntheticTask task;
  task.vocab_size = 5;
  task.max_response_length = 30;
  Rng rng(99);
  const auto traj = sample_trajectory(params, engines, env_ref(task), 0, rng);
  REQUIRE(traj.length() >= 1);
  CHECK(traj.logprob_train == traj.logprob_rollout);
  CHECK(traj.logprob_train.size() == traj.tokens.size());
  for (double lp : traj.logprob_train) CHECK(lp <= 0.0);
}

TEST_CASE("sample_trajectory: saturated policy emits the argmax sequence") {
  PolicyParams params = random_params(20, 5, 31, 0.01);
  // slam the EOS logit: argmax everywhere, episode ends immediately
  for (int f = 0; f < params.feature_dim; ++f) params.at(f, kEosToken) += 30.0;
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  SyntheticTask task;
  task.vocab_size = 5;
  task.max_response_length = 30;
  Rng rng(5);
  const auto traj = sample_trajectory(params, engines, env_ref(task), 0, rng);
  CHECK(traj.tokens == std::vector<int>{kEosToken});
  CHECK(traj.logprob_train[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK_FALSE(traj.eos_forced);
}

TEST_CASE("sample_trajectory: cap reached without EOS is flagged") {
  PolicyParams params = random_params(20, 5, 31, 0.01);
  for (int f = 0; f < params.feature_dim; ++f) params.at(f, kEosToken) -= 30.0;
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  SyntheticTask task;
  task.vocab_size = 5;
  task.max_response_length = 12;
  Rng rng(5);
  const auto traj = sample_trajectory(params, engines, env_ref(task), 0, rng);
  CHECK(traj.length() == 12);
  CHECK(traj.eos_forced);
}

TEST_CASE("sample_trajectory: fixed seed replays identically") {
  const auto params = random_params(24, 6, 7);
  const auto engines = make_engines(MismatchMode::controlled_tv,
                                    fpemu::Precision::exact, 0.7, 11);
  SyntheticTask task;
  task.vocab_size = 6;
  task.max_response_length = 40;
  for (std::uint64_t seed : {1ull, 77ull, 991ull}) {
    Rng a(seed), b(seed);
    const auto t1 = sample_trajectory(params, engines, env_ref(task), 0, a);
    const auto t2 = sample_trajectory(params, engines, env_ref(task), 0, b);
    CHECK(t1.tokens == t2.tokens);
    CHECK(t1.logprob_train == t2.logprob_train);
    CHECK(t1.logprob_rollout == t2.logprob_rollout);
    CHECK(t1.reward == t2.reward);
  }
}

TEST_CASE("sample_trajectory requires a rollout-kind engine") {
  const auto params = random_params(8, 3, 2);
  auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  engines.rollout.kind = EngineKind::train;
  SyntheticTask task;
  task.vocab_size = 3;
  Rng rng(1);
  CHECK_THROWS_AS(sample_trajectory(params, engines, env_ref(task), 0, rng),
                  ContractError);
}

TEST_CASE("trajectory entropy stays within [0, ln V] per token") {
  const auto params = random_params(16, 6, 19);
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  SyntheticTask task;
  task.vocab_size = 6;
  task.max_response_length = 25;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const auto traj = sample_trajectory(params, engines, env_ref(task), 0, rng);
    CHECK(traj.entropy_sum_train >= 0.0);
    CHECK(traj.entropy_sum_train <= traj.length() * std::log(6.0) + 1e-9);
  }
}
