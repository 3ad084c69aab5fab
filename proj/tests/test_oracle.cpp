#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "mlab/errors.hpp"
#include "mlab/oracle.hpp"
#include "mlab/vecops.hpp"

using namespace mlab;
using namespace mlab::oracle;

namespace {

MdpSpec tiny_spec(int vocab, int horizon) {
  MdpSpec spec;
  spec.vocab_size = vocab;
  spec.max_horizon = horizon;
  return spec;
}

}  // namespace

TEST_CASE("exact gradient: zero rewards give the zero vector") {
  auto spec = tiny_spec(3, 3);  // empty reward set
  const auto params = grid_params(3, 3, 5);
  const auto engines = make_engines(MismatchMode::controlled_tv,
                                    fpemu::Precision::exact, 0.5, 3);
  const auto grad = exact_policy_gradient(spec, params, engines.rollout, engines.train);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("exact gradient: pi == mu makes ideal and actual coincide") {
  auto spec = grid_mdp(3, 3, 7);
  const auto params = grid_params(3, 3, 7);
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  const auto ideal = exact_policy_gradient(spec, params, engines.train, engines.train);
  const auto actual = exact_policy_gradient(spec, params, engines.rollout, engines.train);
  CHECK(l2_norm(sub(ideal, actual)) == 0.0);
}

TEST_CASE("exact gradient: V=2 T=1 matches the two-term hand expansion") {
  auto spec = tiny_spec(2, 1);
  spec.reward_set[{0}] = 1;  // only EOS rewarded
  const auto params = grid_params(2, 1, 3);
  const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
  const State root;
  const auto p = token_distribution(params, engines.train, root);

  // sum_a pi(a) R(a) grad log pi(a); R = [1, 0]
  std::vector<double> expected(params.theta.size(), 0.0);
  const auto score0 = score_function(params, engines.train, root, 0);
  axpy(p[0] * 1.0, score0, expected);

  const auto got = exact_policy_gradient(spec, params, engines.train, engines.train);
  REQUIRE(got.size() == expected.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-14));
  }
}

TEST_CASE("enumeration completeness: trajectory probabilities sum to one") {
  for (std::uint64_t seed : {1ull, 2ull}) {
    auto spec = grid_mdp(3, 4, seed);
    const auto params = grid_params(3, 4, seed);
    const auto engines = make_engines(MismatchMode::controlled_tv,
                                      fpemu::Precision::exact, 0.8, 5);
    for (const auto* engine : {&engines.train, &engines.rollout}) {
      double total = 0.0;
      for (const auto& out : enumerate_trajectories(spec)) {
        double prob = 1.0;
        State state;
        for (int tok : out.sequence) {
          prob *= token_distribution(params, *engine, state)[tok];
          state.prefix.push_back(tok);
        }
        total += prob;
      }
      CHECK(std::fabs(total - 1.0) <= 1e-10);
    }
  }
}

TEST_CASE("lemma 1: dual-side residual at machine precision") {
  SUBCASE("T=1 is the identity by construction") {
    auto spec = grid_mdp(3, 1, 11);
    const auto params = grid_params(3, 1, 11);
    const auto engines = make_engines(MismatchMode::controlled_tv,
                                      fpemu::Precision::exact, 0.7, 9);
    CHECK(verify_lemma1(spec, params, engines) <= 1e-12);
  }
  SUBCASE("V=2 T=3, random params, mismatched engines") {
    auto spec = grid_mdp(2, 3, 13);
    const auto params = grid_params(2, 3, 13);
    const auto engines = make_engines(MismatchMode::controlled_tv,
                                      fpemu::Precision::exact, 0.6, 21);
    CHECK(verify_lemma1(spec, params, engines) <= 1e-10);
  }
  SUBCASE("pi == mu") {
    auto spec = grid_mdp(2, 3, 17);
    const auto params = grid_params(2, 3, 17);
    const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
    CHECK(verify_lemma1(spec, params, engines) <= 1e-10);
  }
}

TEST_CASE("lemma 2: occupancy drift is bounded by 2 t delta_max") {
  SUBCASE("delta_0 is exactly zero and zero mismatch keeps every delta zero") {
    auto spec = grid_mdp(3, 4, 19);
    const auto params = grid_params(3, 4, 19);
    const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
    const auto table = verify_lemma2(spec, params, engines);
    REQUIRE_FALSE(table.delta.empty());
    CHECK(table.delta[0] == 0.0);
    for (double d : table.delta) CHECK(d == 0.0);
    CHECK(table.all_within_bound);
  }
  SUBCASE("controlled-tv sweep at T=6") {
    auto spec = grid_mdp(2, 6, 23);
    const auto params = grid_params(2, 6, 23);
    for (double scale : {0.05, 0.2, 0.5, 1.0, 2.0}) {
      const auto engines = make_engines(MismatchMode::controlled_tv,
                                        fpemu::Precision::exact, scale, 31);
      const auto table = verify_lemma2(spec, params, engines);
      CHECK(table.delta[0] == 0.0);
      CHECK(table.all_within_bound);
      for (std::size_t t = 0; t < table.delta.size(); ++t) {
        CHECK(table.delta[t] <= table.bound[t] + 1e-12);
      }
    }
  }
}

TEST_CASE("theorem 1: base cases") {
  SUBCASE("zero mismatch: lhs = rhs = 0") {
    auto spec = grid_mdp(2, 3, 29);
    const auto params = grid_params(2, 3, 29);
    const auto engines = make_engines(MismatchMode::none, fpemu::Precision::exact, 0, 0);
    const auto report = verify_theorem1(spec, params, engines);
    CHECK(report.lhs == 0.0);
    CHECK(report.rhs == 0.0);
    CHECK(report.satisfied);
  }
  SUBCASE("T=1: lhs <= 2 B delta_max") {
    auto spec = grid_mdp(3, 1, 31);
    const auto params = grid_params(3, 1, 31);
    const auto engines = make_engines(MismatchMode::controlled_tv,
                                      fpemu::Precision::exact, 0.9, 41);
    const auto report = verify_theorem1(spec, params, engines);
    CHECK(report.delta_max > 0.0);
    CHECK(report.lhs <= 2.0 * report.score_bound * report.delta_max + 1e-12);
    CHECK(report.satisfied);
  }
}

TEST_CASE("theorem 1 also holds under precision-emulated engine pairs") {
  auto spec = grid_mdp(3, 4, 37);
  const auto params = grid_params(3, 4, 37);
  for (auto precision : {fpemu::Precision::bf16_like, fpemu::Precision::fp16_like}) {
    const auto engines =
        make_engines(MismatchMode::reduction_order, precision, 0.0, 0);
    const auto report = verify_theorem1(spec, params, engines);
    CHECK(report.satisfied);
  }
}

TEST_CASE("seq-level IS expectation is unbiased; token-level is not") {
  // a 2-step fixed-horizon MDP whose reward couples the two tokens
  MdpSpec spec = tiny_spec(3, 2);
  spec.eos_token = std::nullopt;
  spec.reward_set[{0, 0}] = 1;
  spec.reward_set[{1, 1}] = 1;
  spec.reward_set[{2, 2}] = 1;
  const auto params = grid_params(3, 2, 41);
  const auto engines = make_engines(MismatchMode::controlled_tv,
                                    fpemu::Precision::exact, 0.8, 51);
  const auto ideal = exact_policy_gradient(spec, params, engines.train, engines.train);

  const auto seq_is = exact_estimator_expectation(spec, params, engines,
                                                  EstimatorKind::is_seq);
  CHECK(l2_norm(sub(seq_is, ideal)) <= 1e-10);

  const auto token_is = exact_estimator_expectation(spec, params, engines,
                                                    EstimatorKind::is_token);
  const double delta_max =
      realized_tv(params, engines, enumerate_states(spec)).delta_max;
  CHECK(delta_max > 0.0);
  CHECK(l2_norm(sub(token_is, ideal)) > 1e-6);  // the sequence-level bias
}

TEST_CASE("exact TIS/MIS expectations degenerate correctly") {
  auto spec = grid_mdp(3, 3, 43);
  const auto params = grid_params(3, 3, 43);
  const auto engines = make_engines(MismatchMode::controlled_tv,
                                    fpemu::Precision::exact, 0.5, 61);
  const auto is_seq = exact_estimator_expectation(spec, params, engines,
                                                  EstimatorKind::is_seq);
  const auto tis_huge = exact_estimator_expectation(spec, params, engines,
                                                    EstimatorKind::tis_seq, 1e18);
  const auto mis_huge = exact_estimator_expectation(spec, params, engines,
                                                    EstimatorKind::mis_seq, 1e18);
  CHECK(l2_norm(sub(tis_huge, is_seq)) <= 1e-14);
  CHECK(l2_norm(sub(mis_huge, is_seq)) <= 1e-14);

  CHECK_THROWS_AS(exact_estimator_expectation(spec, params, engines,
                                              EstimatorKind::tis_seq, 0.0),
                  ConfigError);
  CHECK_THROWS_AS(exact_estimator_expectation(spec, params, engines,
                                              EstimatorKind::vanilla),
                  ContractError);
}

TEST_CASE("verification grid: clean across the default ranges") {
  GridConfig config;
  config.horizons = {1, 2, 3, 4};  // the full T range runs in the acceptance suite
  const auto results = run_verification_grid(config);
  CHECK(results.size() == 2 * 4 * 5 * 3);
  for (const auto& point : results) {
    CAPTURE(point.vocab);
    CAPTURE(point.horizon);
    CAPTURE(point.tv_scale);
    CAPTURE(point.param_seed);
    CHECK(point.theorem.satisfied);
    CHECK(point.lemma1_residual <= 1e-10);
    CHECK(point.lemma2_ok);
    CHECK(point.seq_is_gap <= 1e-10);
  }
}

TEST_CASE("appendix A identities: degenerate and Var-only models") {
  SUBCASE("no bias, no noise: estimates are exact") {
    NoiseModel model;
    model.true_gradient = {1.0, -2.0, 0.5};
    model.bias = {0.0, 0.0, 0.0};
    model.noise_variance = 0.0;
    const auto report = check_expectation_identities(model, 10'000, 1);
    CHECK(report.inner.mean == doctest::Approx(report.inner_expected).epsilon(1e-15));
    CHECK(report.sqnorm.mean == doctest::Approx(report.sqnorm_expected).epsilon(1e-15));
    CHECK(report.inner.std_error == doctest::Approx(0.0));
    CHECK(report.ok);
  }
  SUBCASE("no bias: E||g_hat||^2 - ||grad||^2 estimates Var") {
    NoiseModel model;
    model.true_gradient = {1.0, -1.0, 2.0, 0.5};
    model.bias = {0.0, 0.0, 0.0, 0.0};
    model.noise_variance = 2.5;
    const auto report = check_expectation_identities(model, 50'000, 2);
    const double estimated_var = report.sqnorm.mean - dot(model.true_gradient,
                                                          model.true_gradient);
    CHECK(std::fabs(estimated_var - 2.5) <= 3.0 * report.sqnorm.std_error);
    CHECK(report.ok);
  }
  SUBCASE("sample floor enforced") {
    NoiseModel model;
    model.true_gradient = {1.0};
    model.bias = {0.0};
    CHECK_THROWS_AS(check_expectation_identities(model, 9'999, 1), ConfigError);
  }
}

TEST_CASE("appendix A scaling: noise penalty slope 2, progress slope 1") {
  const auto report = noise_scaling_quadratic(8, 4.0, 20'000, 11);
  CHECK(std::fabs(report.noise_slope - 2.0) <= 0.1);
  CHECK(std::fabs(report.progress_slope - 1.0) <= 0.1);
  CHECK(report.ok);
}

TEST_CASE("Monte-Carlo standard error halves when samples quadruple") {
  NoiseModel model;
  model.true_gradient = {1.0, -2.0, 0.5, 0.25, -1.5, 3.0, -0.75, 0.1};
  model.bias = {0.3, -0.1, 0.2, 0.0, 0.05, -0.2, 0.15, -0.05};
  model.noise_variance = 4.0;
  const auto small = check_expectation_identities(model, 20'000, 3);
  const auto large = check_expectation_identities(model, 80'000, 4);
  const double ratio = small.sqnorm.std_error / large.sqnorm.std_error;
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("score function gradcheck against central differences") {
  const auto report = gradcheck_score_function(120, 2024);
  CHECK(report.trials == 120);
  CHECK(report.max_rel_error <= 1e-5);
  CHECK(report.ok);
}
