#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "prm/dataio.hpp"
#include "prm/graph.hpp"
#include "prm/train.hpp"

namespace prm {

// Per-layer structured sparsity target on the lowered weight matrix
// (conv [F,C,Kh,Kw] squashes to F x C*Kh*Kw; fc is already a matrix).
// A zero count means the dimension is unconstrained.
struct StructuredBudget {
    std::size_t keep_filters = 0;
    std::size_t keep_columns = 0;

    bool constrained() const { return keep_filters != 0 || keep_columns != 0; }
};

using BudgetMap = std::map<std::string, StructuredBudget>;

// Auxiliary/dual variables, one pair per budgeted layer (scaled form).
using AdmmState = AdmmSection;

struct AdmmOptions {
    double rho = 1e-3;
    int iterations = 9;
    int epochs_per_iteration = 1;
    TrainOptions train;
};

// Keep the keep_filters rows of largest squared norm, then among the
// survivors the keep_columns columns of largest squared norm; zero the rest.
// Ties break toward the lower index. `support` (when non-null) receives a
// 0/1 byte per weight marking the kept support in tensor layout order.
Tensor project_structured(const Tensor& w, const StructuredBudget& budget,
                          std::vector<std::uint8_t>* support = nullptr);

// Exhaustive search over row/column subsets; reference oracle for small
// matrices only (cost is binomial in both dimensions).
Tensor project_structured_joint(const Tensor& w, const StructuredBudget& budget);

// Y = project(W), U = 0 for every budgeted layer. Warns when a budgeted
// layer is all-zero, which makes the projection arbitrary.
AdmmState init_admm(const LayerGraph& graph, const BudgetMap& budgets, double rho);

// Batch loss augmented with the quadratic coupling: value becomes
// f + (rho/2) sum |W - Y + U|_F^2 and each constrained layer's weight
// gradient gains rho (W - Y + U). Bias gradients are untouched.
LossValue augmented_loss(const LayerGraph& graph, const Batch& batch, const AdmmState& state);

// One round: epochs_per_iteration proximal epochs on
// loss + (rho/2)|W - Y + U|^2, then Y <- project(W + U) and U <- U + W - Y.
// Returns each budgeted layer's relative primal residual |W - Y|_F / |W|_F.
std::map<std::string, double> admm_iteration(LayerGraph& graph, const Dataset& ds,
                                             const BudgetMap& budgets, AdmmState& state,
                                             const AdmmOptions& opt, ParamStates& states,
                                             std::mt19937_64& rng);

// W <- project(W) in place; returns the survivor mask for retraining.
WeightMask hard_prune(LayerGraph& graph, const BudgetMap& budgets);

// Gradient-masked fine-tuning on the pruned support. Weights outside the
// mask are zeroed on entry and pinned at zero throughout.
void masked_retrain(LayerGraph& graph, const Dataset& ds, const WeightMask& mask,
                    const TrainOptions& opt, std::ostream* log = nullptr);

}  // namespace prm
