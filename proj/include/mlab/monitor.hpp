#pragma once

// Diagnostic signals: trajectory log perplexity under either engine, the
// batch mismatch indicator (mean |log ppl difference|), EMA-smoothed
// gradient norm, and the response-length surge detector that feeds the
// adaptive scheduler.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>

#include "mlab/policy.hpp"

namespace mlab {

struct MetricsRecord {
  long step = 0;
  double avg_response_length = 0.0;
  double log_ppl_abs_diff = 0.0;
  double grad_norm = 0.0;
  double grad_norm_smoothed = 0.0;
  double learning_rate = 0.0;
  double reward_mean = 0.0;
  double masked_or_clipped_fraction = 0.0;
  double entropy = 0.0;
};

// -sum_t log p(y_t | x, y_<t) for the chosen engine's stored scores.
double log_ppl(const Trajectory& traj, EngineKind which_engine);

// (1/N) sum_i |log_ppl(tau_i, train) - log_ppl(tau_i, rollout)|
double mismatch_indicator(std::span<const Trajectory> batch);

// Exponential moving average; the first observation initializes the value.
class EmaSmoother {
 public:
  explicit EmaSmoother(double smoothing);
  double update(double x);
  std::optional<double> value() const { return value_; }

 private:
  double smoothing_;
  std::optional<double> value_;
};

struct SurgeConfig {
  int window = 20;       // W: trailing steps forming the baseline
  double factor = 2.5;   // kappa: trigger when length >= factor * baseline
};

// Latches the first step whose average response length reaches
// factor x (trailing median of the previous `window` lengths). No trigger
// is possible before the window has filled; once triggered the baseline is
// frozen and the surge step never changes.
class SurgeDetector {
 public:
  explicit SurgeDetector(SurgeConfig config);

  void observe(long step, double avg_length);

  std::optional<long> surge_step() const { return surge_step_; }
  double baseline() const { return baseline_; }

 private:
  SurgeConfig config_;
  std::deque<double> window_;
  std::optional<long> surge_step_;
  double baseline_;
};

}  // namespace mlab
