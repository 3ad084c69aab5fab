#pragma once

// Small autoregressive softmax policy with analytic gradients, evaluated by
// two engines whose numerics deliberately diverge. The train engine is the
// scoring/update side; the rollout engine is the sampling side. With
// mismatch disabled the two produce bit-identical distributions; the
// mismatch modes introduce either reduction-order non-associativity under
// reduced-precision rounding or a seeded, additive logit perturbation whose
// realized total-variation distance is measured, never assumed.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mlab/fpemu.hpp"
#include "mlab/rng.hpp"
#include "mlab/state.hpp"
#include "mlab/toyenv.hpp"

namespace mlab {

enum class EngineKind { train, rollout };
enum class MismatchMode { none, reduction_order, controlled_tv };

struct EngineConfig {
  EngineKind kind = EngineKind::train;
  MismatchMode mismatch_mode = MismatchMode::none;
  fpemu::Precision precision = fpemu::Precision::exact;
  double tv_scale = 0.0;          // controlled_tv only
  std::uint64_t perturbation_seed = 0;
};

struct EnginePair {
  EngineConfig train;
  EngineConfig rollout;
};

EnginePair make_engines(MismatchMode mode, fpemu::Precision precision,
                        double tv_scale, std::uint64_t perturbation_seed);

enum class FeatureMapKind {
  // one-hot over (prompt, position, previous token), wrapped modulo
  // feature_dim when the raw index space is larger than the table
  position_prev_onehot,
};

struct PolicyParams {
  int feature_dim = 0;
  int vocab_size = 0;
  std::vector<double> theta;  // row-major [feature_dim][vocab_size]
  FeatureMapKind feature_map = FeatureMapKind::position_prev_onehot;

  double& at(int feature, int action) { return theta[static_cast<std::size_t>(feature) * vocab_size + action]; }
  double at(int feature, int action) const { return theta[static_cast<std::size_t>(feature) * vocab_size + action]; }

  void validate() const;  // shapes consistent, all entries finite
};

// Random init: N(0, init_scale^2) entries plus a constant offset on the EOS
// column so initial episode lengths are moderate.
PolicyParams init_policy(int feature_dim, int vocab_size, std::uint64_t seed,
                         double init_scale = 0.1, double eos_logit_init = 0.0);

int feature_index(const PolicyParams& params, const State& state);

// Deterministic per-(seed, state, action) value in [-1, 1); independent of
// call order by construction.
double perturbation_unit(std::uint64_t seed, const State& state, int action);

// Next-token distribution emitted by the given engine. Always a valid
// distribution (renormalized in double at the end); the engines diverge
// through rounded logits, rounded exponentials, the engine's reduction
// order on the normalizer, and rounded divisions. Throws NumericError on
// non-finite logits.
std::vector<double> token_distribution(const PolicyParams& params,
                                       const EngineConfig& engine,
                                       const State& state);

// Generic-logit variant used where a dense feature vector is supplied
// directly (tests and diagnostics). Same pipeline as token_distribution.
std::vector<double> distribution_from_logits(std::vector<double> logits,
                                             const EngineConfig& engine);
std::vector<double> logits_from_features(const PolicyParams& params,
                                         const EngineConfig& engine,
                                         std::span<const double> features);

struct TvReport {
  std::vector<double> per_state;
  double delta_max = 0.0;
};

// TV(s) = 1/2 sum_a |pi(a|s) - mu(a|s)| for each state; delta_max is the max.
TvReport realized_tv(const PolicyParams& params, const EnginePair& engines,
                     std::span<const State> states);

// Analytic score of the scoring distribution: feature outer (onehot(a) - p),
// flattened to the theta layout. When the engine is exact this is the exact
// softmax-policy gradient of log pi(a|s).
std::vector<double> score_function(const PolicyParams& params,
                                   const EngineConfig& engine,
                                   const State& state, int action);

// Max L2 norm of the score function over the given states and all actions.
double score_bound(const PolicyParams& params, const EngineConfig& engine,
                   std::span<const State> states);

struct Trajectory {
  int prompt = 0;
  std::vector<int> tokens;
  std::vector<double> logprob_train;
  std::vector<double> logprob_rollout;
  int reward = 0;
  bool eos_forced = false;          // hit the cap without sampling EOS
  double entropy_sum_train = 0.0;   // sum over steps of H(train distribution)

  int length() const { return static_cast<int>(tokens.size()); }
};

// Sample autoregressively from the rollout engine, re-score the same tokens
// with the train engine, attach the reward. engines.rollout must have
// rollout kind. One uniform draw per token.
Trajectory sample_trajectory(const PolicyParams& params, const EnginePair& engines,
                             const EnvRef& env, int prompt, Rng& rng);

}  // namespace mlab
