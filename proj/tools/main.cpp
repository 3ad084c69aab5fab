// Command-line front end: training runs, experiment suites and the theory
// verification commands. Verification subcommands exit nonzero on any
// violated bound or identity.

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlab/harness.hpp"
#include "mlab/oracle.hpp"
#include "mlab/serialize.hpp"
#include "mlab/suites.hpp"

namespace {

std::uint64_t seed_override(std::uint64_t seed) {
  if (const char* env = std::getenv("MLAB_SEED")) {
    return std::strtoull(env, nullptr, 10);
  }
  return seed;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  mlab::ExperimentConfig config = mlab::experiment_config_from_json(
      nlohmann::json::parse(mlab::read_text_file(config_path)));
  config.seed = seed_override(config.seed);
  const mlab::RunLog log = mlab::train(config);
  const std::filesystem::path dir(out_dir);
  mlab::write_text_file(dir / "metrics.csv", mlab::runlog_to_csv(log));
  mlab::write_text_file(dir / "run.jsonl", mlab::runlog_to_jsonl(log));
  mlab::write_text_file(dir / "summary.json",
                        mlab::summarize_run(log).dump(2) + "\n");
  mlab::write_text_file(dir / "checkpoint.json",
                        mlab::to_json(log.final_params).dump() + "\n");
  std::cout << "status: " << mlab::to_string(log.status) << "  steps: "
            << log.records.size();
  if (log.surge_step) std::cout << "  surge_step: " << *log.surge_step;
  if (log.collapse_step) std::cout << "  collapse_step: " << *log.collapse_step;
  std::cout << "\nwrote " << (dir / "metrics.csv").string() << '\n';
  return 0;
}

int cmd_suite(const std::string& name, const std::string& out_dir,
              const std::string& config_path) {
  std::optional<mlab::ExperimentConfig> base;
  if (!config_path.empty()) {
    base = mlab::experiment_config_from_json(
        nlohmann::json::parse(mlab::read_text_file(config_path)));
  }
  const auto summary = mlab::run_suite(name, out_dir, base);
  std::cout << summary.dump(2) << '\n';
  return 0;
}

int cmd_verify_theorem(const std::string& out_dir) {
  const auto results = mlab::oracle::run_verification_grid({});
  int violations = 0;
  for (const auto& point : results) {
    if (!point.theorem.satisfied) ++violations;
  }
  if (!out_dir.empty()) {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& point : results) all.push_back(mlab::to_json(point));
    mlab::write_text_file(std::filesystem::path(out_dir) / "theorem_grid.json",
                          all.dump(2) + "\n");
    mlab::write_text_file(std::filesystem::path(out_dir) / "theorem_grid.csv",
                          mlab::grid_results_to_csv(results));
  }
  std::cout << "theorem grid: " << results.size() << " points, " << violations
            << " violations\n";
  return violations == 0 ? 0 : 1;
}

int cmd_verify_lemmas(const std::string& out_dir) {
  const auto results = mlab::oracle::run_verification_grid({});
  int failures = 0;
  double worst_residual = 0.0;
  for (const auto& point : results) {
    worst_residual = std::max(worst_residual, point.lemma1_residual);
    if (point.lemma1_residual > 1e-10 || !point.lemma2_ok) ++failures;
  }
  if (!out_dir.empty()) {
    mlab::write_text_file(std::filesystem::path(out_dir) / "lemma_grid.csv",
                          mlab::grid_results_to_csv(results));
  }
  std::cout << "lemmas: " << results.size() << " points, " << failures
            << " failures, worst lemma1 residual " << worst_residual << '\n';
  return failures == 0 ? 0 : 1;
}

int cmd_verify_appendix_a(long samples, std::uint64_t seed) {
  mlab::oracle::NoiseModel model;
  model.true_gradient = {1.0, -2.0, 0.5, 0.25, -1.5, 3.0, -0.75, 0.1};
  model.bias = {0.3, -0.1, 0.2, 0.0, 0.05, -0.2, 0.15, -0.05};
  model.noise_variance = 4.0;
  model.smoothness = 1.0;
  const auto result = mlab::oracle::verify_appendix_a(model, samples, seed);
  std::cout << "inner identity:  mean " << result.identities.inner.mean
            << "  expected " << result.identities.inner_expected << "  (se "
            << result.identities.inner.std_error << ")\n";
  std::cout << "sqnorm identity: mean " << result.identities.sqnorm.mean
            << "  expected " << result.identities.sqnorm_expected << "  (se "
            << result.identities.sqnorm.std_error << ")\n";
  if (result.scaling) {
    std::cout << "noise slope " << result.scaling->noise_slope
              << "  progress slope " << result.scaling->progress_slope << '\n';
  }
  std::cout << (result.ok ? "appendix-a: ok" : "appendix-a: FAILED") << '\n';
  return result.ok ? 0 : 1;
}

int cmd_gradcheck(int trials, std::uint64_t seed) {
  const auto report = mlab::oracle::gradcheck_score_function(trials, seed);
  std::cout << "gradcheck: " << report.trials << " trials, max rel error "
            << report.max_rel_error << (report.ok ? " (ok)" : " (FAILED)") << '\n';
  return report.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"training-inference mismatch laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out", suite_name;
  long samples = 100'000;
  std::uint64_t seed = 1;
  int trials = 200;

  auto* train = app.add_subcommand("train", "run one training experiment");
  train->add_option("--config", config_path, "experiment config JSON")->required();
  train->add_option("--out", out_dir, "output directory");

  auto* suite = app.add_subcommand("suite", "run a comparative experiment suite");
  suite->add_option("name", suite_name, "one of: baseline-vs-scheduler, "
                    "decay-period-sweep, is-ablation, precision-ablation, "
                    "dataset-fraction")->required();
  suite->add_option("--out", out_dir, "output directory");
  suite->add_option("--config", config_path, "base experiment config JSON");

  auto* theorem = app.add_subcommand("verify-theorem",
                                     "gradient-gap bound on the enumeration grid");
  theorem->add_option("--out", out_dir, "report directory");

  auto* lemmas = app.add_subcommand("verify-lemmas",
                                    "conversion identity and occupancy drift");
  lemmas->add_option("--out", out_dir, "report directory");

  auto* appendix = app.add_subcommand("verify-appendix-a",
                                      "noisy-update expectation identities and "
                                      "step-size scaling");
  appendix->add_option("--samples", samples, "Monte-Carlo sample count");
  appendix->add_option("--seed", seed, "random seed");

  auto* gradcheck = app.add_subcommand("gradcheck",
                                       "score function vs finite differences");
  gradcheck->add_option("--trials", trials, "random triples to test");
  gradcheck->add_option("--seed", seed, "random seed");

  auto* print_config = app.add_subcommand("print-config",
                                          "emit the default experiment config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path, out_dir);
    if (suite->parsed()) return cmd_suite(suite_name, out_dir, config_path);
    if (theorem->parsed()) return cmd_verify_theorem(out_dir);
    if (lemmas->parsed()) return cmd_verify_lemmas(out_dir);
    if (appendix->parsed()) return cmd_verify_appendix_a(samples, seed);
    if (gradcheck->parsed()) return cmd_gradcheck(trials, seed);
    if (print_config->parsed()) {
      std::cout << mlab::to_json(mlab::default_suite_config()).dump(2) << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
