#include "mlab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "mlab/errors.hpp"
#include "mlab/vecops.hpp"

namespace mlab {

void ExperimentConfig::validate() const {
  task.validate();
  if (policy.feature_dim < 1) throw ConfigError("config: feature_dim must be >= 1");
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (rollouts_per_prompt < 2) {
    throw ConfigError("config: rollouts_per_prompt must be >= 2 (RLOO)");
  }
  if (!(grad_clip_threshold > 0.0)) {
    throw ConfigError("config: grad_clip_threshold must be > 0");
  }
  if (total_steps < 0) throw ConfigError("config: total_steps must be >= 0");
  if (dataset_fraction <= 0.0 || dataset_fraction > 1.0) {
    throw ConfigError("config: dataset_fraction must be in (0, 1]");
  }
  if (prompt_pool < 1) throw ConfigError("config: prompt_pool must be >= 1");
  if (empty_batch_patience < 1) {
    throw ConfigError("config: empty_batch_patience must be >= 1");
  }
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
}

std::string to_string(RunStatus status) {
  switch (status) {
    case RunStatus::completed: return "completed";
    case RunStatus::collapsed: return "collapsed";
    case RunStatus::empty_batch_stall: return "empty-batch-stall";
  }
  return "completed";
}

std::vector<double> grad_clip(std::vector<double> v, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("grad_clip: threshold must be > 0");
  const double norm = l2_norm(v);
  if (norm > threshold) {
    const double scale = threshold / norm;
    for (double& x : v) x *= scale;
  }
  return v;
}

namespace {

std::optional<EstimateResult> estimate(const ExperimentConfig& cfg,
                                       const BatchContext& ctx,
                                       std::span<const Trajectory> batch,
                                       std::span<const double> advantages) {
  switch (cfg.estimator.kind) {
    case EstimatorSelect::none:
      return grad_actual(ctx, batch, advantages);
    case EstimatorSelect::is:
      return grad_is(ctx, batch, advantages, cfg.estimator.level);
    case EstimatorSelect::tis:
      return grad_tis(ctx, batch, advantages, cfg.estimator.level, cfg.estimator.clip_c);
    case EstimatorSelect::mis:
      return grad_mis(ctx, batch, advantages, cfg.estimator.level, cfg.estimator.clip_c);
    case EstimatorSelect::ppo_clip:
      return ppo_clip_surrogate(ctx, batch, advantages, cfg.estimator.eps_low,
                                cfg.estimator.eps_high);
  }
  return std::nullopt;
}

// Fills slots [0, n) with per-slot seeded trajectories, chunked over
// `threads` workers. Slot content depends only on (seed, step, slot).
void sample_step(const ExperimentConfig& cfg, const PolicyParams& params,
                 const EnginePair& engines, const EnvRef& env,
                 std::span<const int> prompts, long step,
                 std::vector<Trajectory>& out) {
  const std::size_t total = out.size();
  auto worker = [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(j) + 1));
      const int prompt = prompts[j / cfg.rollouts_per_prompt];
      out[j] = sample_trajectory(params, engines, env, prompt, rng);
    }
  };
  const int threads = std::min<long>(cfg.threads, static_cast<long>(total));
  if (threads <= 1) {
    worker(0, total);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (total + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(total, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back(worker, begin, end);
  }
  for (auto& t : pool) t.join();
}

}  // namespace

RunLog train(const ExperimentConfig& config) {
  config.validate();
  RunLog log;
  log.config = config;

  PolicyParams params =
      init_policy(config.policy.feature_dim, config.task.vocab_size,
                  mix_seed(config.seed, 0x1217ULL), config.policy.init_scale,
                  config.policy.eos_logit_init);
  const EnginePair engines =
      make_engines(config.engines.mode, config.engines.precision,
                   config.engines.tv_scale, config.engines.perturbation_seed);
  const EnvRef env = env_ref(config.task);
  LrScheduler scheduler(config.scheduler);
  SurgeDetector surge(config.surge);
  EmaSmoother grad_ema(config.grad_norm_smoothing);
  EmaSmoother reward_ema(config.collapse.ema);
  BatchContext ctx{params, engines.train, env.eos_token,
                   config.estimator.log_ratio_guard};

  const int active_prompts = std::max(
      1, static_cast<int>(std::lround(config.dataset_fraction * config.prompt_pool)));
  const int group_count = config.batch_size;
  const int n = config.rollouts_per_prompt;

  double reward_peak = 0.0;
  int below_peak_streak = 0;
  int consecutive_empty = 0;

  std::vector<Trajectory> batch(static_cast<std::size_t>(group_count) * n);
  for (long step = 1; step <= config.total_steps; ++step) {
    scheduler.begin_step(step);
    const double eta = scheduler.lr();

    Rng prompt_rng(mix_seed(config.seed, static_cast<std::uint64_t>(step), 0xA001ULL));
    std::vector<int> prompts(group_count);
    for (int g = 0; g < group_count; ++g) {
      prompts[g] = static_cast<int>(prompt_rng.uniform() * active_prompts);
    }

    sample_step(config, params, engines, env, prompts, step, batch);

    MetricsRecord rec;
    rec.step = step;
    double total_len = 0.0, total_reward = 0.0, total_entropy = 0.0;
    for (const auto& traj : batch) {
      total_len += traj.length();
      total_reward += traj.reward;
      total_entropy += traj.entropy_sum_train;
    }
    rec.avg_response_length = total_len / static_cast<double>(batch.size());
    rec.reward_mean = total_reward / static_cast<double>(batch.size());
    rec.entropy = total_len > 0.0 ? total_entropy / total_len : 0.0;
    rec.log_ppl_abs_diff = mismatch_indicator(batch);
    rec.learning_rate = eta;

    // group, reject, weight
    std::vector<std::vector<Trajectory>> groups(group_count);
    for (int g = 0; g < group_count; ++g) {
      groups[g].assign(batch.begin() + static_cast<std::ptrdiff_t>(g) * n,
                       batch.begin() + static_cast<std::ptrdiff_t>(g + 1) * n);
    }
    const auto kept = rejection_filter(groups);
    std::vector<Trajectory> survivors;
    std::vector<double> advantages;
    for (std::size_t g : kept) {
      std::vector<double> rewards(n);
      for (int k = 0; k < n; ++k) rewards[k] = groups[g][k].reward;
      const auto adv = rloo_advantages(rewards);
      for (int k = 0; k < n; ++k) {
        survivors.push_back(std::move(groups[g][k]));
        advantages.push_back(adv[k]);
      }
    }

    const auto result = estimate(config, ctx, survivors, advantages);
    if (result) {
      consecutive_empty = 0;
      rec.grad_norm = l2_norm(result->grad.vector);
      rec.masked_or_clipped_fraction = result->ratios.clipped_fraction;
      const auto update = grad_clip(result->grad.vector, config.grad_clip_threshold);
      for (std::size_t i = 0; i < params.theta.size(); ++i) {
        params.theta[i] += eta * update[i];
      }
    } else {
      ++consecutive_empty;
    }
    rec.grad_norm_smoothed = grad_ema.update(rec.grad_norm);

    const double smoothed_reward = reward_ema.update(rec.reward_mean);
    reward_peak = std::max(reward_peak, smoothed_reward);
    if (reward_peak >= config.collapse.min_peak &&
        smoothed_reward < config.collapse.drop_ratio * reward_peak) {
      ++below_peak_streak;
      if (below_peak_streak >= config.collapse.patience && !log.collapse_step) {
        log.collapse_step = step;
      }
    } else {
      below_peak_streak = 0;
    }

    surge.observe(step, rec.avg_response_length);
    if (surge.surge_step() && config.scheduler.mode == SchedulerMode::adaptive &&
        !scheduler.armed()) {
      scheduler.arm_from_surge(*surge.surge_step(), step);
    }

    log.records.push_back(rec);
    if (consecutive_empty > config.empty_batch_patience) {
      log.status = RunStatus::empty_batch_stall;
      break;
    }
  }

  log.surge_step = surge.surge_step();
  log.t_decay = scheduler.t_decay();
  log.final_params = std::move(params);
  if (log.status != RunStatus::empty_batch_stall && log.collapse_step) {
    log.status = RunStatus::collapsed;
  }
  return log;
}

}  // namespace mlab
