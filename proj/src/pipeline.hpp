#pragma once

#include <string>

#include "json.hpp"

namespace graphfm {

// Config-driven pipeline stages shared by the C API and (through it) the
// CLI. Each takes a JSON config, writes its artifacts, and returns
// {"report": <deterministic metrics/echo>, "runtime": <wall time, peak rss>}.
// Config schemas are documented in the README.

nlohmann::json run_generate(const nlohmann::json& config);
nlohmann::json run_pretrain(const nlohmann::json& config);
nlohmann::json run_evaluate(const nlohmann::json& config);

}  // namespace graphfm
