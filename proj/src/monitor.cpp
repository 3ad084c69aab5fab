#include "mlab/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mlab/errors.hpp"

namespace mlab {

double log_ppl(const Trajectory& traj, EngineKind which_engine) {
  const auto& scores = which_engine == EngineKind::train ? traj.logprob_train
                                                         : traj.logprob_rollout;
  if (scores.size() != traj.tokens.size()) {
    throw ContractError("log_ppl: per-token scores missing for trajectory");
  }
  double total = 0.0;
  for (double lp : scores) total -= lp;
  return total;
}

double mismatch_indicator(std::span<const Trajectory> batch) {
  if (batch.empty()) throw ContractError("mismatch_indicator: empty batch");
  double acc = 0.0;
  for (const auto& traj : batch) {
    acc += std::fabs(log_ppl(traj, EngineKind::train) - log_ppl(traj, EngineKind::rollout));
  }
  return acc / static_cast<double>(batch.size());
}

EmaSmoother::EmaSmoother(double smoothing) : smoothing_(smoothing) {
  if (smoothing <= 0.0 || smoothing >= 1.0) {
    throw ConfigError("EmaSmoother: smoothing must be in (0, 1)");
  }
}

double EmaSmoother::update(double x) {
  value_ = value_ ? smoothing_ * *value_ + (1.0 - smoothing_) * x : x;
  return *value_;
}

SurgeDetector::SurgeDetector(SurgeConfig config)
    : config_(config), baseline_(std::numeric_limits<double>::quiet_NaN()) {
  if (config.window < 1) throw ConfigError("SurgeDetector: window must be >= 1");
  if (!(config.factor > 0.0)) throw ConfigError("SurgeDetector: factor must be > 0");
}

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void SurgeDetector::observe(long step, double avg_length) {
  if (surge_step_) return;  // latched; baseline frozen
  if (static_cast<int>(window_.size()) >= config_.window) {
    baseline_ = median({window_.begin(), window_.end()});
    if (avg_length >= config_.factor * baseline_) {
      surge_step_ = step;
      return;
    }
  }
  window_.push_back(avg_length);
  if (static_cast<int>(window_.size()) > config_.window) window_.pop_front();
}

}  // namespace mlab
