#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prm/admm.hpp"
#include "prm/metrics.hpp"
#include "prm/purify.hpp"
#include "prm/train.hpp"

namespace prm {

// One budget knob as written in a config: >= 1 is an exact keep-count,
// in (0,1) a keep-fraction resolved against the layer (rounded up).
struct BudgetSpec {
    double filters = 0.0;  // 0 = unconstrained
    double columns = 0.0;
};

struct RunConfig {
    std::map<std::string, std::string> raw;  // every accepted key, echoable

    std::uint64_t seed = 1;
    bool deterministic = true;
    std::string model = "lenet5";  // lenet5 | tiny-resnet
    std::string mnist_dir = "data/mnist";
    std::vector<std::string> cifar_files;
    std::vector<std::string> cifar_test_files;

    TrainOptions train;
    AdmmOptions admm;
    TrainOptions retrain;

    std::map<std::string, BudgetSpec> budgets;
    PurifyConfig purify;
    ReportFormat report_format = ReportFormat::Table;
};

// Flat `key = value` lines; '#' starts a comment; blank lines ignored.
// Duplicate keys and unknown keys are configuration errors.
RunConfig parse_config_text(const std::string& text, const std::string& what);
RunConfig parse_config_file(const std::string& path);

// Apply one key/value (same key space as the file); used for CLI overrides.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Turn fractions into concrete counts against the model's layer shapes.
BudgetMap resolve_budgets(const RunConfig& cfg, const LayerGraph& graph);

}  // namespace prm
