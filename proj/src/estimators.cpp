#include "mlab/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlab/errors.hpp"

namespace mlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Correction { none, is, tis, mis };

double clamp_log_ratio(double log_rho, double guard, long& saturated) {
  if (std::fabs(log_rho) > guard) {
    ++saturated;
    return std::copysign(guard, log_rho);
  }
  return log_rho;
}

// min(rho, C) for TIS, rho * 1(rho <= C) for MIS; counts terms the
// correction actually altered.
double corrected_ratio(double rho, Correction corr, double clip_c, long& clipped) {
  switch (corr) {
    case Correction::tis:
      if (rho > clip_c) {
        ++clipped;
        return clip_c;
      }
      return rho;
    case Correction::mis:
      if (rho > clip_c) {
        ++clipped;
        return 0.0;
      }
      return rho;
    default:
      return rho;
  }
}

void check_batch(const BatchContext& ctx, std::span<const Trajectory> batch,
                 std::span<const double> weights) {
  if (weights.size() != batch.size()) {
    throw ContractError("estimator: weights/batch length mismatch");
  }
  for (const auto& traj : batch) {
    if (traj.logprob_train.size() != traj.tokens.size() ||
        traj.logprob_rollout.size() != traj.tokens.size()) {
      throw ContractError("estimator: trajectory is missing per-token scores");
    }
  }
  (void)ctx;
}

std::optional<EstimateResult> weighted_gradient(const BatchContext& ctx,
                                                std::span<const Trajectory> batch,
                                                std::span<const double> weights,
                                                Correction corr, IsLevel level,
                                                double clip_c, EstimatorKind kind) {
  if ((corr == Correction::tis || corr == Correction::mis) && !(clip_c > 0.0)) {
    throw ConfigError("estimator: clip threshold C must be > 0");
  }
  if (batch.empty()) return std::nullopt;
  check_batch(ctx, batch, weights);

  EstimateResult result;
  result.grad.vector.assign(ctx.params.theta.size(), 0.0);
  result.grad.kind = kind;
  result.grad.batch_size = static_cast<int>(batch.size());
  result.ratios.clip_threshold =
      (corr == Correction::tis || corr == Correction::mis) ? clip_c : kInf;

  const int vocab = ctx.params.vocab_size;
  long terms = 0;
  long clipped = 0;
  std::vector<double>& grad = result.grad.vector;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& traj = batch[i];
    const int len = traj.length();

    double seq_log_ratio = 0.0;
    for (int t = 0; t < len; ++t) {
      seq_log_ratio += traj.logprob_train[t] - traj.logprob_rollout[t];
    }
    result.ratios.log_ratio_seq.push_back(seq_log_ratio);

    double seq_factor = 1.0;
    if (level == IsLevel::sequence) {
      const double rho_seq =
          std::exp(clamp_log_ratio(seq_log_ratio, ctx.log_ratio_guard,
                                   result.ratios.saturated_count));
      seq_factor = corrected_ratio(rho_seq, corr, clip_c, clipped);
      ++terms;
    }

    State state{traj.prompt, {}};
    state.prefix.reserve(len);
    for (int t = 0; t < len; ++t) {
      double factor = seq_factor;
      if (level == IsLevel::token) {
        const double log_rho = traj.logprob_train[t] - traj.logprob_rollout[t];
        const double rho = std::exp(clamp_log_ratio(
            log_rho, ctx.log_ratio_guard, result.ratios.saturated_count));
        factor = corrected_ratio(rho, corr, clip_c, clipped);
        ++terms;
      }
      const double coeff = weights[i] * factor;
      const auto p = token_distribution(ctx.params, ctx.train_engine, state);
      const std::size_t row =
          static_cast<std::size_t>(feature_index(ctx.params, state)) * vocab;
      const int action = traj.tokens[t];
      for (int b = 0; b < vocab; ++b) grad[row + b] -= coeff * p[b];
      grad[row + action] += coeff;
      if (t + 1 < len) state.prefix.push_back(action);
    }
  }

  // corr == none applies factor 1.0 through the same loop, so the
  // zero-mismatch degeneracies hold bitwise
  if (corr != Correction::none && terms > 0) {
    result.ratios.clipped_fraction =
        static_cast<double>(clipped) / static_cast<double>(terms);
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv_n;
  return result;
}

}  // namespace

std::optional<EstimateResult> grad_vanilla(const BatchContext& ctx,
                                           std::span<const Trajectory> batch,
                                           std::span<const double> weights) {
  return weighted_gradient(ctx, batch, weights, Correction::none, IsLevel::token,
                           kInf, EstimatorKind::vanilla);
}

std::optional<EstimateResult> grad_actual(const BatchContext& ctx,
                                          std::span<const Trajectory> batch,
                                          std::span<const double> weights) {
  return weighted_gradient(ctx, batch, weights, Correction::none, IsLevel::token,
                           kInf, EstimatorKind::actual);
}

std::optional<EstimateResult> grad_is(const BatchContext& ctx,
                                      std::span<const Trajectory> batch,
                                      std::span<const double> weights, IsLevel level) {
  return weighted_gradient(ctx, batch, weights, Correction::is, level, kInf,
                           level == IsLevel::token ? EstimatorKind::is_token
                                                   : EstimatorKind::is_seq);
}

std::optional<EstimateResult> grad_tis(const BatchContext& ctx,
                                       std::span<const Trajectory> batch,
                                       std::span<const double> weights, IsLevel level,
                                       double clip_c) {
  return weighted_gradient(ctx, batch, weights, Correction::tis, level, clip_c,
                           level == IsLevel::token ? EstimatorKind::tis_token
                                                   : EstimatorKind::tis_seq);
}

std::optional<EstimateResult> grad_mis(const BatchContext& ctx,
                                       std::span<const Trajectory> batch,
                                       std::span<const double> weights, IsLevel level,
                                       double clip_c) {
  return weighted_gradient(ctx, batch, weights, Correction::mis, level, clip_c,
                           level == IsLevel::token ? EstimatorKind::mis_token
                                                   : EstimatorKind::mis_seq);
}

std::optional<EstimateResult> ppo_clip_surrogate(const BatchContext& ctx,
                                                 std::span<const Trajectory> batch,
                                                 std::span<const double> advantages,
                                                 double eps_low, double eps_high) {
  if (eps_low <= 0.0 || eps_low >= 1.0 || eps_high <= 0.0 || eps_high >= 1.0) {
    throw ConfigError("ppo_clip: eps_low/eps_high must lie in (0, 1)");
  }
  if (batch.empty()) return std::nullopt;
  check_batch(ctx, batch, advantages);

  EstimateResult result;
  result.grad.vector.assign(ctx.params.theta.size(), 0.0);
  result.grad.kind = EstimatorKind::ppo_clip;
  result.grad.batch_size = static_cast<int>(batch.size());
  result.ratios.clip_threshold = 1.0 + eps_high;

  const int vocab = ctx.params.vocab_size;
  const double lo = 1.0 - eps_low;
  const double hi = 1.0 + eps_high;
  long terms = 0;
  long clipped = 0;
  std::vector<double>& grad = result.grad.vector;

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Trajectory& traj = batch[i];
    const double adv = advantages[i];
    double seq_log_ratio = 0.0;
    State state{traj.prompt, {}};
    for (int t = 0; t < traj.length(); ++t) {
      const double log_rho = traj.logprob_train[t] - traj.logprob_rollout[t];
      seq_log_ratio += log_rho;
      const double rho = std::exp(clamp_log_ratio(
          log_rho, ctx.log_ratio_guard, result.ratios.saturated_count));
      const double clipped_rho = std::clamp(rho, lo, hi);
      ++terms;
      // surrogate is min(rho*A, clip(rho)*A); only the unclipped branch
      // carries gradient through the ratio
      double coeff = 0.0;
      if (rho * adv <= clipped_rho * adv) {
        coeff = adv * rho;
      } else {
        ++clipped;
      }
      const auto p = token_distribution(ctx.params, ctx.train_engine, state);
      const std::size_t row =
          static_cast<std::size_t>(feature_index(ctx.params, state)) * vocab;
      const int action = traj.tokens[t];
      for (int b = 0; b < vocab; ++b) grad[row + b] -= coeff * p[b];
      grad[row + action] += coeff;
      if (t + 1 < traj.length()) state.prefix.push_back(action);
    }
    result.ratios.log_ratio_seq.push_back(seq_log_ratio);
  }

  if (terms > 0) {
    result.ratios.clipped_fraction =
        static_cast<double>(clipped) / static_cast<double>(terms);
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (double& g : grad) g *= inv_n;
  return result;
}

std::vector<double> rloo_advantages(std::span<const double> group_rewards) {
  const std::size_t n = group_rewards.size();
  if (n < 2) throw ConfigError("rloo_advantages: need at least 2 rollouts per prompt");
  double total = 0.0;
  for (double r : group_rewards) total += r;
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) {
    adv[i] = group_rewards[i] - (total - group_rewards[i]) / static_cast<double>(n - 1);
  }
  return adv;
}

std::vector<std::size_t> rejection_filter(std::span<const std::vector<Trajectory>> groups) {
  std::vector<std::size_t> kept;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    if (group.empty()) continue;
    bool all_same = true;
    for (const auto& traj : group) {
      if (traj.reward != group.front().reward) {
        all_same = false;
        break;
      }
    }
    if (!all_same) kept.push_back(g);
  }
  return kept;
}

}  // namespace mlab
