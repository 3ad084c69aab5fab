#pragma once

// The gradient-estimator family: plain REINFORCE over whichever engine
// sampled the batch, importance-sampling correction at token or sequence
// level, its truncated (TIS) and masked (MIS) variants, the asymmetric
// PPO clipped surrogate, leave-one-out advantages, and the all-0/all-1
// rejection filter. All ratio arithmetic happens in log space with a
// saturation guard. Batch reductions run trajectory-by-trajectory in index
// order so this module introduces no reduction-order effects of its own.

#include <optional>
#include <span>
#include <vector>

#include "mlab/policy.hpp"

namespace mlab {

enum class EstimatorKind {
  vanilla,    // on-policy REINFORCE (batch sampled and scored by pi)
  actual,     // same formula on mu-sampled batch: the biased gradient
  is_seq,
  is_token,
  tis_token,
  tis_seq,
  mis_token,
  mis_seq,
  ppo_clip,
};

enum class IsLevel { token, sequence };

struct GradientEstimate {
  std::vector<double> vector;  // flat, PolicyParams layout
  EstimatorKind kind = EstimatorKind::vanilla;
  int batch_size = 0;
};

struct RatioStats {
  std::vector<double> log_ratio_seq;  // per trajectory, sum of token log ratios
  double clip_threshold = 0.0;        // C (infinity when not applicable)
  double clipped_fraction = 0.0;      // clipped/masked share at the applied level
  long saturated_count = 0;           // |log rho| beyond the guard
};

struct EstimateResult {
  GradientEstimate grad;
  RatioStats ratios;
};

// Everything needed to rebuild per-state scoring distributions for a batch.
struct BatchContext {
  const PolicyParams& params;
  EngineConfig train_engine;
  std::optional<int> eos_token = kEosToken;
  double log_ratio_guard = 50.0;
};

// Each returns nullopt for an empty batch (step skipped). `weights` holds
// the per-trajectory scalar (raw binary reward in oracle/theorem work,
// RLOO advantage in training) and must match the batch length.
std::optional<EstimateResult> grad_vanilla(const BatchContext& ctx,
                                           std::span<const Trajectory> batch,
                                           std::span<const double> weights);
std::optional<EstimateResult> grad_actual(const BatchContext& ctx,
                                          std::span<const Trajectory> batch,
                                          std::span<const double> weights);
std::optional<EstimateResult> grad_is(const BatchContext& ctx,
                                      std::span<const Trajectory> batch,
                                      std::span<const double> weights, IsLevel level);
std::optional<EstimateResult> grad_tis(const BatchContext& ctx,
                                       std::span<const Trajectory> batch,
                                       std::span<const double> weights, IsLevel level,
                                       double clip_c);
std::optional<EstimateResult> grad_mis(const BatchContext& ctx,
                                       std::span<const Trajectory> batch,
                                       std::span<const double> weights, IsLevel level,
                                       double clip_c);

// Asymmetric clipped surrogate with per-token ratios; terms where the
// clipped branch is active contribute no gradient.
std::optional<EstimateResult> ppo_clip_surrogate(const BatchContext& ctx,
                                                 std::span<const Trajectory> batch,
                                                 std::span<const double> advantages,
                                                 double eps_low, double eps_high);

// A_i = R_i - mean_{j != i} R_j. Requires n >= 2.
std::vector<double> rloo_advantages(std::span<const double> group_rewards);

// Indices of groups that are neither all-0 nor all-1.
std::vector<std::size_t> rejection_filter(std::span<const std::vector<Trajectory>> groups);

}  // namespace mlab
