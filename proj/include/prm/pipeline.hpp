#pragma once

#include <ostream>
#include <string>

#include "prm/admm.hpp"
#include "prm/config.hpp"
#include "prm/dataio.hpp"
#include "prm/graph.hpp"
#include "prm/metrics.hpp"
#include "prm/purify.hpp"

namespace prm {

// Reads PRM_THREADS (default 1) and pins the math backend's thread count.
void configure_threads();

// Model plus the run state that rides along in checkpoints.
struct RunState {
    LayerGraph graph;
    CheckpointExtras extras;
};

RunState fresh_model(const RunConfig& cfg);
RunState load_state(const std::string& path);
void save_state(const std::string& path, const RunState& state, const RunConfig& cfg);

Dataset load_train_data(const RunConfig& cfg);
Dataset load_test_data(const RunConfig& cfg);

// Stages. Each mutates the state in place and logs one line per step.
void stage_train(RunState& st, const RunConfig& cfg, const Dataset& train, std::ostream* log);
void stage_admm(RunState& st, const RunConfig& cfg, const Dataset& train, std::ostream* log);
void stage_retrain(RunState& st, const RunConfig& cfg, const Dataset& train, std::ostream* log);
void stage_purify(RunState& st, const RunConfig& cfg, std::ostream* log);
void stage_compact(RunState& st, std::ostream* log);
CompressionStats stats_of(const RunState& st);

struct PipelineResult {
    EvalResult baseline;
    EvalResult after_retrain;
    EvalResult after_purify;
    CompressionStats stats_pruned;    // after hard prune + retrain
    CompressionStats stats_purified;  // after purify + compact
};

// train -> admm -> hard prune -> masked retrain -> purify -> compact,
// evaluating on the test set at each accuracy checkpoint. No fine-tuning
// happens after purification.
PipelineResult run_pipeline(RunState& st, const RunConfig& cfg, const Dataset& train,
                            const Dataset& test, std::ostream* log);

}  // namespace prm
