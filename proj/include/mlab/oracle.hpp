#pragma once

// Exact-enumeration and Monte-Carlo verification of the theory: the true
// policy gradient and its mismatched counterpart, the token-level
// conversion identity, the state-occupancy drift bound, the full gradient
// discrepancy bound lhs <= 2*B*Delta_max*T^2, and the bias/variance
// decomposition of a noisy update step. Everything here is independent of
// the sampling-based estimator path it cross-checks.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlab/estimators.hpp"
#include "mlab/policy.hpp"
#include "mlab/toyenv.hpp"

namespace mlab::oracle {

// sum over complete trajectories of P_sampling(tau) * R(tau) * sum_t
// score_scoring(s_t, a_t). sampling == scoring == train gives the ideal
// gradient; sampling = rollout gives the gradient actually followed.
std::vector<double> exact_policy_gradient(const MdpSpec& spec,
                                          const PolicyParams& params,
                                          const EngineConfig& sampling_engine,
                                          const EngineConfig& scoring_engine);

// Exact expectation (under the rollout engine) of an IS-family estimator.
// Supported kinds: is_seq, is_token, tis_seq, tis_token, mis_seq, mis_token.
std::vector<double> exact_estimator_expectation(const MdpSpec& spec,
                                                const PolicyParams& params,
                                                const EnginePair& engines,
                                                EstimatorKind kind,
                                                double clip_c = 0.0);

// L2 gap between the sequence-level expectation E_{y~mu}[R * grad log pi]
// and its occupancy form sum_s d_mu(s) E_{a~mu}[Q_mu(s,a) grad log pi(a|s)],
// with Q_mu the expected terminal reward from (s, a) under mu.
double verify_lemma1(const MdpSpec& spec, const PolicyParams& params,
                     const EnginePair& engines);

struct OccupancyTable {
  std::vector<double> delta;  // ||d_pi,t - d_mu,t||_1 over alive states, t = 0..T-1
  std::vector<double> bound;  // 2 * t * delta_max
  double delta_max = 0.0;     // measured sup-state TV between the engines
  bool all_within_bound = true;
};

OccupancyTable verify_lemma2(const MdpSpec& spec, const PolicyParams& params,
                             const EnginePair& engines);

struct TheoremReport {
  int vocab = 0;
  int horizon = 0;
  double score_bound = 0.0;  // B
  double delta_max = 0.0;
  double lhs = 0.0;          // ||grad_actual - grad_ideal||_2
  double rhs = 0.0;          // 2 * B * delta_max * T^2
  bool satisfied = false;    // lhs <= rhs + 1e-12
};

TheoremReport verify_theorem1(const MdpSpec& spec, const PolicyParams& params,
                              const EnginePair& engines);

// ---------------------------------------------------------------------------
// Noisy-update decomposition checks

struct NoiseModel {
  std::vector<double> true_gradient;
  std::vector<double> bias;
  double noise_variance = 0.0;  // E||xi||^2, isotropic
  double smoothness = 1.0;      // L
  double step_size = 0.0;       // eta
};

struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

struct IdentityReport {
  McEstimate inner;        // E[<grad J, g_hat>]
  double inner_expected = 0.0;
  McEstimate sqnorm;       // E[||g_hat||^2]
  double sqnorm_expected = 0.0;
  bool ok = false;         // both within 3 standard errors
};

IdentityReport check_expectation_identities(const NoiseModel& model, long samples,
                                            std::uint64_t seed);

struct ScalingReport {
  std::vector<double> etas;
  std::vector<double> noise_penalty;  // |per-step loss attributable to noise|
  std::vector<double> progress;       // deterministic per-step gain
  double noise_slope = 0.0;           // expected ~2
  double progress_slope = 0.0;        // expected ~1
  bool ok = false;
};

// One-step updates theta + eta * g_hat on J(theta) = -1/2 ||theta||^2
// (L = 1). The noise penalty is measured from antithetic +/-xi pairs so the
// mean-zero linear term cancels exactly and the eta^2 term is resolvable at
// small eta.
ScalingReport noise_scaling_quadratic(int dim, double noise_variance, long pairs,
                                      std::uint64_t seed,
                                      std::span<const double> etas = {});

struct AppendixAResult {
  IdentityReport identities;
  std::optional<ScalingReport> scaling;  // skipped when Var = 0
  bool ok = false;
};

// Identities on the given model plus the eta^2-vs-eta scaling law on the
// quadratic testbed. samples must be >= 10^4.
AppendixAResult verify_appendix_a(const NoiseModel& model, long samples,
                                  std::uint64_t seed);

// ---------------------------------------------------------------------------
// Gradient correctness

struct GradCheckReport {
  int trials = 0;
  double max_rel_error = 0.0;
  bool ok = false;
};

// Analytic score function vs central finite differences of log pi(a|s) on
// random (params, state, action) triples, all in exact mode.
GradCheckReport gradcheck_score_function(int trials, std::uint64_t seed,
                                         double h = 1e-5, double tolerance = 1e-5);

// ---------------------------------------------------------------------------
// Verification grid

struct GridConfig {
  std::vector<int> vocabs = {2, 3};
  std::vector<int> horizons = {1, 2, 3, 4, 5, 6};
  std::vector<double> tv_scales = {0.0, 0.05, 0.1, 0.2, 0.4};
  std::vector<std::uint64_t> param_seeds = {1, 2, 3};
  fpemu::Precision precision = fpemu::Precision::exact;
};

struct GridPointResult {
  int vocab = 0;
  int horizon = 0;
  double tv_scale = 0.0;
  std::uint64_t param_seed = 0;
  TheoremReport theorem;
  double lemma1_residual = 0.0;
  bool lemma2_ok = true;
  double lemma2_delta0 = 0.0;
  double seq_is_gap = 0.0;  // || exact seq-IS expectation - ideal gradient ||
};

// Random binary rewards (p = 1/2 per complete sequence) and random policy
// parameters, both derived from the seed.
MdpSpec grid_mdp(int vocab, int horizon, std::uint64_t seed);
PolicyParams grid_params(int vocab, int horizon, std::uint64_t seed);

std::vector<GridPointResult> run_verification_grid(const GridConfig& config);

}  // namespace mlab::oracle
