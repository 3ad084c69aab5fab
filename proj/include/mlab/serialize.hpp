#pragma once

// JSON/CSV interchange: experiment configs, environment specs, policy
// checkpoints, per-step metrics (JSONL + flat CSV with a fixed column
// order) and verification reports. Doubles are printed with shortest
// round-trip formatting so that identical runs serialize to identical
// bytes.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mlab/harness.hpp"
#include "mlab/oracle.hpp"

namespace mlab {

std::string format_double(double x);

// enum <-> string
std::string to_string(MismatchMode mode);
std::string to_string(fpemu::Precision precision);
std::string to_string(EstimatorSelect kind);
std::string to_string(IsLevel level);
std::string to_string(SchedulerMode mode);
MismatchMode mismatch_mode_from_string(const std::string& s);
fpemu::Precision precision_from_string(const std::string& s);
EstimatorSelect estimator_select_from_string(const std::string& s);
IsLevel is_level_from_string(const std::string& s);
SchedulerMode scheduler_mode_from_string(const std::string& s);

nlohmann::json to_json(const SyntheticTask& task);
SyntheticTask synthetic_task_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MdpSpec& spec);
MdpSpec mdp_spec_from_json(const nlohmann::json& j);

// checkpoint with explicit shape header
nlohmann::json to_json(const PolicyParams& params);
PolicyParams policy_params_from_json(const nlohmann::json& j);

// snapshot omits the thread count (execution detail, not experiment identity)
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const MetricsRecord& rec);

inline constexpr const char* kMetricsCsvHeader =
    "step,avg_response_length,log_ppl_abs_diff,grad_norm,grad_norm_smoothed,"
    "learning_rate,reward_mean,masked_or_clipped_fraction,entropy";

std::string metrics_csv_row(const MetricsRecord& rec);

std::string runlog_to_csv(const RunLog& log);
std::string runlog_to_jsonl(const RunLog& log);

nlohmann::json to_json(const oracle::TheoremReport& report);
nlohmann::json to_json(const oracle::GridPointResult& point);
std::string grid_results_to_csv(std::span<const oracle::GridPointResult> results);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace mlab
