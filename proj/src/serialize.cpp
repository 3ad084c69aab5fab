#include "mlab/serialize.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mlab/errors.hpp"

namespace mlab {

std::string format_double(double x) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

std::string to_string(MismatchMode mode) {
  switch (mode) {
    case MismatchMode::none: return "none";
    case MismatchMode::reduction_order: return "reduction-order";
    case MismatchMode::controlled_tv: return "controlled-tv";
  }
  return "none";
}

MismatchMode mismatch_mode_from_string(const std::string& s) {
  if (s == "none") return MismatchMode::none;
  if (s == "reduction-order") return MismatchMode::reduction_order;
  if (s == "controlled-tv") return MismatchMode::controlled_tv;
  throw ConfigError("unknown mismatch_mode: " + s);
}

std::string to_string(fpemu::Precision precision) {
  switch (precision) {
    case fpemu::Precision::exact: return "exact";
    case fpemu::Precision::bf16_like: return "bf16-like";
    case fpemu::Precision::fp16_like: return "fp16-like";
  }
  return "exact";
}

fpemu::Precision precision_from_string(const std::string& s) {
  if (s == "exact") return fpemu::Precision::exact;
  if (s == "bf16-like") return fpemu::Precision::bf16_like;
  if (s == "fp16-like") return fpemu::Precision::fp16_like;
  throw ConfigError("unknown precision_emulation: " + s);
}

std::string to_string(EstimatorSelect kind) {
  switch (kind) {
    case EstimatorSelect::none: return "none";
    case EstimatorSelect::is: return "is";
    case EstimatorSelect::tis: return "tis";
    case EstimatorSelect::mis: return "mis";
    case EstimatorSelect::ppo_clip: return "ppo_clip";
  }
  return "none";
}

EstimatorSelect estimator_select_from_string(const std::string& s) {
  if (s == "none") return EstimatorSelect::none;
  if (s == "is") return EstimatorSelect::is;
  if (s == "tis") return EstimatorSelect::tis;
  if (s == "mis") return EstimatorSelect::mis;
  if (s == "ppo_clip") return EstimatorSelect::ppo_clip;
  throw ConfigError("unknown estimator kind: " + s);
}

std::string to_string(IsLevel level) {
  return level == IsLevel::token ? "token" : "seq";
}

IsLevel is_level_from_string(const std::string& s) {
  if (s == "token") return IsLevel::token;
  if (s == "seq" || s == "sequence") return IsLevel::sequence;
  throw ConfigError("unknown IS level: " + s);
}

std::string to_string(SchedulerMode mode) {
  return mode == SchedulerMode::static_mode ? "static" : "adaptive";
}

SchedulerMode scheduler_mode_from_string(const std::string& s) {
  if (s == "static") return SchedulerMode::static_mode;
  if (s == "adaptive") return SchedulerMode::adaptive;
  throw ConfigError("unknown scheduler mode: " + s);
}

nlohmann::json to_json(const SyntheticTask& task) {
  return {{"type", "synthetic"},
          {"vocab_size", task.vocab_size},
          {"max_response_length", task.max_response_length},
          {"target_predicate", to_string(task.target_predicate)},
          {"length_bias", task.length_bias}};
}

SyntheticTask synthetic_task_from_json(const nlohmann::json& j) {
  SyntheticTask task;
  task.vocab_size = j.value("vocab_size", task.vocab_size);
  task.max_response_length = j.value("max_response_length", task.max_response_length);
  if (j.contains("target_predicate")) {
    task.target_predicate = predicate_from_string(j.at("target_predicate"));
  }
  task.length_bias = j.value("length_bias", task.length_bias);
  task.validate();
  return task;
}

nlohmann::json to_json(const MdpSpec& spec) {
  nlohmann::json rewards = nlohmann::json::array();
  for (const auto& [seq, r] : spec.reward_set) {
    rewards.push_back({{"sequence", seq}, {"reward", r}});
  }
  nlohmann::json j{{"type", "mdp"},
                   {"vocab_size", spec.vocab_size},
                   {"max_horizon", spec.max_horizon},
                   {"prompt_distribution", spec.prompt_distribution},
                   {"reward_set", rewards},
                   {"enumeration_budget", spec.enumeration_budget}};
  if (spec.eos_token) {
    j["eos_token"] = *spec.eos_token;
  } else {
    j["eos_token"] = nullptr;
  }
  return j;
}

MdpSpec mdp_spec_from_json(const nlohmann::json& j) {
  MdpSpec spec;
  spec.vocab_size = j.value("vocab_size", spec.vocab_size);
  spec.max_horizon = j.value("max_horizon", spec.max_horizon);
  if (j.contains("prompt_distribution")) {
    spec.prompt_distribution = j.at("prompt_distribution").get<std::vector<double>>();
  }
  if (j.contains("eos_token")) {
    if (j.at("eos_token").is_null()) {
      spec.eos_token = std::nullopt;
    } else {
      spec.eos_token = j.at("eos_token").get<int>();
    }
  }
  spec.enumeration_budget = j.value("enumeration_budget", spec.enumeration_budget);
  if (j.contains("reward_set")) {
    for (const auto& entry : j.at("reward_set")) {
      spec.reward_set[entry.at("sequence").get<std::vector<int>>()] =
          entry.at("reward").get<int>();
    }
  }
  spec.validate();
  return spec;
}

nlohmann::json to_json(const PolicyParams& params) {
  return {{"feature_dim", params.feature_dim},
          {"vocab_size", params.vocab_size},
          {"feature_map", "position_prev_onehot"},
          {"theta", params.theta}};
}

PolicyParams policy_params_from_json(const nlohmann::json& j) {
  PolicyParams params;
  params.feature_dim = j.at("feature_dim").get<int>();
  params.vocab_size = j.at("vocab_size").get<int>();
  params.theta = j.at("theta").get<std::vector<double>>();
  params.validate();
  return params;
}

nlohmann::json to_json(const ExperimentConfig& config) {
  nlohmann::json scheduler{{"mode", to_string(config.scheduler.mode)},
                           {"eta_0", config.scheduler.eta_0},
                           {"min_lr_ratio", config.scheduler.min_lr_ratio},
                           {"heuristic_factor", config.scheduler.heuristic_factor}};
  if (config.scheduler.t_decay) scheduler["t_decay"] = *config.scheduler.t_decay;
  return {{"env", to_json(config.task)},
          {"policy",
           {{"feature_dim", config.policy.feature_dim},
            {"init_scale", config.policy.init_scale},
            {"eos_logit_init", config.policy.eos_logit_init}}},
          {"engines",
           {{"mismatch_mode", to_string(config.engines.mode)},
            {"precision_emulation", to_string(config.engines.precision)},
            {"tv_scale", config.engines.tv_scale},
            {"perturbation_seed", config.engines.perturbation_seed}}},
          {"estimator",
           {{"kind", to_string(config.estimator.kind)},
            {"level", to_string(config.estimator.level)},
            {"clip_c", config.estimator.clip_c},
            {"eps_low", config.estimator.eps_low},
            {"eps_high", config.estimator.eps_high},
            {"log_ratio_guard", config.estimator.log_ratio_guard}}},
          {"scheduler", scheduler},
          {"surge", {{"window", config.surge.window}, {"factor", config.surge.factor}}},
          {"collapse",
           {{"ema", config.collapse.ema},
            {"drop_ratio", config.collapse.drop_ratio},
            {"patience", config.collapse.patience},
            {"min_peak", config.collapse.min_peak}}},
          {"batch_size", config.batch_size},
          {"rollouts_per_prompt", config.rollouts_per_prompt},
          {"grad_clip_threshold", config.grad_clip_threshold},
          {"total_steps", config.total_steps},
          {"seed", config.seed},
          {"dataset_fraction", config.dataset_fraction},
          {"prompt_pool", config.prompt_pool},
          {"empty_batch_patience", config.empty_batch_patience},
          {"grad_norm_smoothing", config.grad_norm_smoothing}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  ExperimentConfig config;
  if (j.contains("env")) config.task = synthetic_task_from_json(j.at("env"));
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    config.policy.feature_dim = p.value("feature_dim", config.policy.feature_dim);
    config.policy.init_scale = p.value("init_scale", config.policy.init_scale);
    config.policy.eos_logit_init =
        p.value("eos_logit_init", config.policy.eos_logit_init);
  }
  if (j.contains("engines")) {
    const auto& e = j.at("engines");
    if (e.contains("mismatch_mode")) {
      config.engines.mode = mismatch_mode_from_string(e.at("mismatch_mode"));
    }
    if (e.contains("precision_emulation")) {
      config.engines.precision = precision_from_string(e.at("precision_emulation"));
    }
    config.engines.tv_scale = e.value("tv_scale", config.engines.tv_scale);
    config.engines.perturbation_seed =
        e.value("perturbation_seed", config.engines.perturbation_seed);
  }
  if (j.contains("estimator")) {
    const auto& e = j.at("estimator");
    if (e.contains("kind")) {
      config.estimator.kind = estimator_select_from_string(e.at("kind"));
    }
    if (e.contains("level")) {
      config.estimator.level = is_level_from_string(e.at("level"));
    }
    config.estimator.clip_c = e.value("clip_c", config.estimator.clip_c);
    config.estimator.eps_low = e.value("eps_low", config.estimator.eps_low);
    config.estimator.eps_high = e.value("eps_high", config.estimator.eps_high);
    config.estimator.log_ratio_guard =
        e.value("log_ratio_guard", config.estimator.log_ratio_guard);
  }
  if (j.contains("scheduler")) {
    const auto& s = j.at("scheduler");
    if (s.contains("mode")) {
      config.scheduler.mode = scheduler_mode_from_string(s.at("mode"));
    }
    config.scheduler.eta_0 = s.value("eta_0", config.scheduler.eta_0);
    config.scheduler.min_lr_ratio = s.value("min_lr_ratio", config.scheduler.min_lr_ratio);
    if (s.contains("t_decay")) config.scheduler.t_decay = s.at("t_decay").get<long>();
    config.scheduler.heuristic_factor =
        s.value("heuristic_factor", config.scheduler.heuristic_factor);
  }
  if (j.contains("surge")) {
    config.surge.window = j.at("surge").value("window", config.surge.window);
    config.surge.factor = j.at("surge").value("factor", config.surge.factor);
  }
  if (j.contains("collapse")) {
    const auto& c = j.at("collapse");
    config.collapse.ema = c.value("ema", config.collapse.ema);
    config.collapse.drop_ratio = c.value("drop_ratio", config.collapse.drop_ratio);
    config.collapse.patience = c.value("patience", config.collapse.patience);
    config.collapse.min_peak = c.value("min_peak", config.collapse.min_peak);
  }
  config.batch_size = j.value("batch_size", config.batch_size);
  config.rollouts_per_prompt = j.value("rollouts_per_prompt", config.rollouts_per_prompt);
  config.grad_clip_threshold = j.value("grad_clip_threshold", config.grad_clip_threshold);
  config.total_steps = j.value("total_steps", config.total_steps);
  config.seed = j.value("seed", config.seed);
  config.dataset_fraction = j.value("dataset_fraction", config.dataset_fraction);
  config.prompt_pool = j.value("prompt_pool", config.prompt_pool);
  config.empty_batch_patience =
      j.value("empty_batch_patience", config.empty_batch_patience);
  config.grad_norm_smoothing =
      j.value("grad_norm_smoothing", config.grad_norm_smoothing);
  config.validate();
  return config;
}

nlohmann::json to_json(const MetricsRecord& rec) {
  return {{"step", rec.step},
          {"avg_response_length", rec.avg_response_length},
          {"log_ppl_abs_diff", rec.log_ppl_abs_diff},
          {"grad_norm", rec.grad_norm},
          {"grad_norm_smoothed", rec.grad_norm_smoothed},
          {"learning_rate", rec.learning_rate},
          {"reward_mean", rec.reward_mean},
          {"masked_or_clipped_fraction", rec.masked_or_clipped_fraction},
          {"entropy", rec.entropy}};
}

std::string metrics_csv_row(const MetricsRecord& rec) {
  std::string row = std::to_string(rec.step);
  for (double v : {rec.avg_response_length, rec.log_ppl_abs_diff, rec.grad_norm,
                   rec.grad_norm_smoothed, rec.learning_rate, rec.reward_mean,
                   rec.masked_or_clipped_fraction, rec.entropy}) {
    row += ',';
    row += format_double(v);
  }
  return row;
}

std::string runlog_to_csv(const RunLog& log) {
  std::string out = kMetricsCsvHeader;
  out += '\n';
  for (const auto& rec : log.records) {
    out += metrics_csv_row(rec);
    out += '\n';
  }
  return out;
}

std::string runlog_to_jsonl(const RunLog& log) {
  std::string out;
  out += nlohmann::json{{"config", to_json(log.config)}}.dump();
  out += '\n';
  for (const auto& rec : log.records) {
    out += to_json(rec).dump();
    out += '\n';
  }
  nlohmann::json footer{{"status", to_string(log.status)}};
  footer["collapse_step"] =
      log.collapse_step ? nlohmann::json(*log.collapse_step) : nlohmann::json(nullptr);
  footer["surge_step"] =
      log.surge_step ? nlohmann::json(*log.surge_step) : nlohmann::json(nullptr);
  footer["t_decay"] = log.t_decay ? nlohmann::json(*log.t_decay) : nlohmann::json(nullptr);
  out += footer.dump();
  out += '\n';
  return out;
}

nlohmann::json to_json(const oracle::TheoremReport& report) {
  return {{"vocab", report.vocab},
          {"horizon", report.horizon},
          {"score_bound", report.score_bound},
          {"delta_max", report.delta_max},
          {"lhs", report.lhs},
          {"rhs", report.rhs},
          {"satisfied", report.satisfied}};
}

nlohmann::json to_json(const oracle::GridPointResult& point) {
  nlohmann::json j = to_json(point.theorem);
  j["tv_scale"] = point.tv_scale;
  j["param_seed"] = point.param_seed;
  j["lemma1_residual"] = point.lemma1_residual;
  j["lemma2_ok"] = point.lemma2_ok;
  j["seq_is_gap"] = point.seq_is_gap;
  return j;
}

std::string grid_results_to_csv(std::span<const oracle::GridPointResult> results) {
  std::string out =
      "vocab,horizon,tv_scale,param_seed,score_bound,delta_max,lhs,rhs,"
      "satisfied,lemma1_residual,lemma2_ok,seq_is_gap\n";
  for (const auto& p : results) {
    out += std::to_string(p.vocab) + ',' + std::to_string(p.horizon) + ',' +
           format_double(p.tv_scale) + ',' + std::to_string(p.param_seed) + ',' +
           format_double(p.theorem.score_bound) + ',' +
           format_double(p.theorem.delta_max) + ',' + format_double(p.theorem.lhs) +
           ',' + format_double(p.theorem.rhs) + ',' +
           (p.theorem.satisfied ? "1" : "0") + ',' +
           format_double(p.lemma1_residual) + ',' + (p.lemma2_ok ? "1" : "0") + ',' +
           format_double(p.seq_is_gap) + '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << content;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace mlab
