#pragma once

// Length-decay learning-rate scheduler: hold the initial rate, then halve
// every T_decay steps down to a floor. In adaptive mode T_decay is armed
// from the detected response-length surge step, scaled by a heuristic
// factor (default 1.8).

#include <cstdint>
#include <optional>

namespace mlab {

enum class SchedulerMode { static_mode, adaptive };

struct SchedulerConfig {
  SchedulerMode mode = SchedulerMode::static_mode;
  double eta_0 = 1e-6;
  double min_lr_ratio = 0.1;             // eta_inf = min_lr_ratio * eta_0
  std::optional<long> t_decay;           // required in static mode
  double heuristic_factor = 1.8;         // adaptive mode multiplier
};

class LrScheduler {
 public:
  explicit LrScheduler(const SchedulerConfig& config);

  // Apply the halving rule for step t (1-based): when t is a multiple of
  // T_decay, eta <- max(eta/2, eta_inf). No-op while unarmed.
  void begin_step(long t);

  double lr() const { return eta_t_; }
  double eta_inf() const { return eta_inf_; }
  bool armed() const { return t_decay_.has_value(); }
  std::optional<long> t_decay() const { return t_decay_; }

  // Adaptive mode only: set T_decay = round(heuristic_factor * surge_step),
  // half-up. If current_step is already past one or more decay boundaries,
  // the missed halvings are applied immediately so that eta matches the
  // closed form from this step on. Arming twice is a contract error.
  void arm_from_surge(long surge_step, long current_step);

  // max(eta_0 * 2^(-floor(t / t_decay)), eta_inf)
  static double closed_form(double eta_0, double eta_inf, long t_decay, long t);

 private:
  SchedulerConfig config_;
  double eta_inf_;
  double eta_t_;
  std::optional<long> t_decay_;
};

}  // namespace mlab
