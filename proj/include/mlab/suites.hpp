#pragma once

// Comparative experiment suites: matrices of training runs with aligned
// CSV/JSONL logs per run and a JSON comparison summary (peak reward, final
// mismatch indicator, collapse step if any).

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mlab/harness.hpp"

namespace mlab {

std::vector<std::string> suite_names();

// The shared desk-scale setup the suites start from: a length-growing task
// under controlled-tv mismatch strong enough that the constant-LR baseline
// destabilizes after the length surge.
ExperimentConfig default_suite_config();

nlohmann::json summarize_run(const RunLog& log);

nlohmann::json run_suite(const std::string& name,
                         const std::filesystem::path& out_dir,
                         std::optional<ExperimentConfig> base = std::nullopt);

}  // namespace mlab
