#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <string>

#include "prm/dataio.hpp"
#include "prm/graph.hpp"
#include "prm/nn.hpp"

namespace prm {

struct TrainOptions {
    int epochs = 1;
    std::size_t batch_size = 64;
    OptimizerHyper hyper;
    std::uint64_t seed = 1;
};

// Per-parameter optimizer moments, keyed by layer name.
struct ParamStates {
    std::map<std::string, OptimizerState> weights;
    std::map<std::string, OptimizerState> biases;
};

// Portable in-place Fisher-Yates; std::shuffle's draw sequence is not pinned
// by the standard, this one is.
void deterministic_shuffle(std::vector<std::size_t>& idx, std::mt19937_64& rng);

// Apply one optimizer update from already-computed gradients. With a mask,
// dropped weights get zero gradient and are re-zeroed after the step so
// moment estimates can never resurrect them.
void apply_gradients(LayerGraph& graph, const LossValue& loss, ParamStates& states,
                     const OptimizerHyper& hyper, const WeightMask* mask = nullptr);

// One shuffled pass over the dataset; returns mean training loss.
double train_epoch(LayerGraph& graph, const Dataset& ds, const TrainOptions& opt,
                   ParamStates& states, std::mt19937_64& rng, const WeightMask* mask = nullptr);

// Full training run (fresh optimizer state, epochs from opt). Logs one line
// per epoch to `log` when non-null.
void train(LayerGraph& graph, const Dataset& ds, const TrainOptions& opt,
           std::ostream* log = nullptr);

}  // namespace prm
