#pragma once

// Experiment driver: wires the policy, estimators, monitor and scheduler
// into a deterministic training loop. One step is a barrier: rollouts may
// be generated in parallel (each trajectory owns a seed-derived stream),
// then a single-threaded reduce/update commits the step, so results are
// invariant to the thread count.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mlab/estimators.hpp"
#include "mlab/monitor.hpp"
#include "mlab/policy.hpp"
#include "mlab/scheduler.hpp"
#include "mlab/toyenv.hpp"

namespace mlab {

struct PolicyInitConfig {
  int feature_dim = 256;
  double init_scale = 0.1;
  double eos_logit_init = -1.0;
};

struct EngineSetup {
  MismatchMode mode = MismatchMode::none;
  fpemu::Precision precision = fpemu::Precision::exact;
  double tv_scale = 0.0;
  std::uint64_t perturbation_seed = 1234;
};

enum class EstimatorSelect { none, is, tis, mis, ppo_clip };

struct EstimatorConfig {
  EstimatorSelect kind = EstimatorSelect::none;
  IsLevel level = IsLevel::token;
  double clip_c = 2.0;
  double eps_low = 0.2;
  double eps_high = 0.28;
  double log_ratio_guard = 50.0;
};

// Operational collapse rule: the reward EMA staying below drop_ratio x its
// running peak for `patience` consecutive steps. Tracking starts only once
// the peak has cleared min_peak, so noise around a never-learned policy
// does not register as a collapse.
struct CollapseConfig {
  double ema = 0.9;
  double drop_ratio = 0.5;
  int patience = 20;
  double min_peak = 0.1;
};

struct ExperimentConfig {
  SyntheticTask task;
  PolicyInitConfig policy;
  EngineSetup engines;
  EstimatorConfig estimator;
  SchedulerConfig scheduler;
  SurgeConfig surge;
  CollapseConfig collapse;
  int batch_size = 64;           // prompt groups per step
  int rollouts_per_prompt = 16;  // n
  double grad_clip_threshold = 1.0;
  long total_steps = 100;
  std::uint64_t seed = 1;
  double dataset_fraction = 1.0;  // share of the prompt pool in play
  int prompt_pool = 16;
  int empty_batch_patience = 50;
  double grad_norm_smoothing = 0.9;
  int threads = 1;  // execution detail, excluded from config snapshots

  void validate() const;
};

enum class RunStatus { completed, collapsed, empty_batch_stall };

std::string to_string(RunStatus status);

struct RunLog {
  ExperimentConfig config;
  std::vector<MetricsRecord> records;
  RunStatus status = RunStatus::completed;
  std::optional<long> collapse_step;
  std::optional<long> surge_step;
  std::optional<long> t_decay;  // resolved decay period, if any
  PolicyParams final_params;    // checkpoint of theta at run end
};

// Rescale to the threshold norm when above it; identity otherwise.
std::vector<double> grad_clip(std::vector<double> v, double threshold);

RunLog train(const ExperimentConfig& config);

}  // namespace mlab
