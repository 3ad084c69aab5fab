#include "mlab/scheduler.hpp"

#include <algorithm>
#include <cmath>

#include "mlab/errors.hpp"

namespace mlab {

LrScheduler::LrScheduler(const SchedulerConfig& config)
    : config_(config),
      eta_inf_(config.eta_0 * config.min_lr_ratio),
      eta_t_(config.eta_0) {
  if (config.eta_0 <= 0.0) throw ConfigError("scheduler: eta_0 must be > 0");
  if (config.min_lr_ratio <= 0.0 || config.min_lr_ratio > 1.0) {
    throw ConfigError("scheduler: min_lr_ratio must be in (0, 1]");
  }
  if (config.mode == SchedulerMode::static_mode) {
    if (!config.t_decay) throw ConfigError("scheduler: static mode requires t_decay");
    if (*config.t_decay <= 0) throw ConfigError("scheduler: t_decay must be > 0");
    t_decay_ = config.t_decay;
  } else {
    if (config.t_decay) {
      throw ConfigError("scheduler: adaptive mode arms t_decay from the surge");
    }
    if (!(config.heuristic_factor > 0.0)) {
      throw ConfigError("scheduler: heuristic_factor must be > 0");
    }
  }
}

void LrScheduler::begin_step(long t) {
  if (t < 1) throw ContractError("scheduler: steps are 1-based");
  if (t_decay_ && t % *t_decay_ == 0) {
    eta_t_ = std::max(eta_t_ / 2.0, eta_inf_);
  }
}

void LrScheduler::arm_from_surge(long surge_step, long current_step) {
  if (config_.mode != SchedulerMode::adaptive) {
    throw ContractError("scheduler: arm_from_surge requires adaptive mode");
  }
  if (t_decay_) throw ContractError("scheduler: already armed");
  if (surge_step < 1) throw ContractError("scheduler: surge_step must be >= 1");
  const long period =
      static_cast<long>(std::floor(config_.heuristic_factor * surge_step + 0.5));
  t_decay_ = std::max(1l, period);
  // catch up on halvings that a step-0 arming would already have applied
  eta_t_ = closed_form(config_.eta_0, eta_inf_, *t_decay_, current_step);
}

double LrScheduler::closed_form(double eta_0, double eta_inf, long t_decay, long t) {
  if (t_decay <= 0) throw ConfigError("scheduler: t_decay must be > 0");
  const long halvings = t < 0 ? 0 : t / t_decay;
  const int k = static_cast<int>(std::min(halvings, 2000l));
  return std::max(std::ldexp(eta_0, -k), eta_inf);
}

}  // namespace mlab
