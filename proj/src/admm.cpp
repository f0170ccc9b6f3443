#include "prm/admm.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <numeric>

#include "prm/errors.hpp"

namespace prm {

namespace {

// Indices of the k largest values, ties to the lower index. k == 0 or
// k >= size keeps everything.
std::vector<std::size_t> top_k(const std::vector<double>& values, std::size_t k) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (k == 0 || k >= values.size()) return order;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

void check_budget(const Tensor& w, const StructuredBudget& b, const std::string& what) {
    if (b.keep_filters > lowered_rows(w) || b.keep_columns > lowered_cols(w))
        throw UsageError(what + ": budget exceeds layer dimensions");
}

}  // namespace

Tensor project_structured(const Tensor& w, const StructuredBudget& budget,
                          std::vector<std::uint8_t>* support) {
    // The lowered matrix is a pure reshape of the tensor, so we can index the
    // flat buffer directly: element (r, c) lives at r*cols + c.
    const std::size_t rows = lowered_rows(w);
    const std::size_t cols = lowered_cols(w);
    check_budget(w, budget, "project");

    std::vector<double> row_norm(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            double v = w.data[r * cols + c];
            row_norm[r] += v * v;
        }
    std::vector<std::size_t> keep_rows = top_k(row_norm, budget.keep_filters);

    std::vector<double> col_norm(cols, 0.0);
    for (std::size_t r : keep_rows)
        for (std::size_t c = 0; c < cols; ++c) {
            double v = w.data[r * cols + c];
            col_norm[c] += v * v;
        }
    std::vector<std::size_t> keep_cols = top_k(col_norm, budget.keep_columns);

    std::vector<std::uint8_t> row_keep(rows, 0), col_keep(cols, 0);
    for (std::size_t r : keep_rows) row_keep[r] = 1;
    for (std::size_t c : keep_cols) col_keep[c] = 1;

    Tensor out = Tensor::zeros(w.dims);
    if (support) support->assign(w.numel(), 0);
    for (std::size_t r = 0; r < rows; ++r) {
        if (!row_keep[r]) continue;
        for (std::size_t c = 0; c < cols; ++c) {
            if (!col_keep[c]) continue;
            out.data[r * cols + c] = w.data[r * cols + c];
            if (support) (*support)[r * cols + c] = 1;
        }
    }
    return out;
}

namespace {

// All k-combinations of [0, n) in lexicographic order.
void combinations(std::size_t n, std::size_t k,
                  const std::function<void(const std::vector<std::size_t>&)>& fn) {
    if (k > n) return;
    std::vector<std::size_t> pick(k);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    while (true) {
        fn(pick);
        bool advanced = false;
        for (std::size_t i = k; i-- > 0;) {
            if (pick[i] < n - k + i) {
                ++pick[i];
                for (std::size_t j = i + 1; j < k; ++j) pick[j] = pick[j - 1] + 1;
                advanced = true;
                break;
            }
        }
        if (!advanced) return;
    }
}

}  // namespace

Tensor project_structured_joint(const Tensor& w, const StructuredBudget& budget) {
    const std::size_t rows = lowered_rows(w);
    const std::size_t cols = lowered_cols(w);
    check_budget(w, budget, "project");
    if (rows > 12 || cols > 14)
        throw UsageError("joint projection is exhaustive; matrix too large");

    std::size_t kr = budget.keep_filters == 0 ? rows : budget.keep_filters;
    std::size_t kc = budget.keep_columns == 0 ? cols : budget.keep_columns;

    double best = -1.0;
    std::vector<std::size_t> best_rows, best_cols;
    combinations(rows, kr, [&](const std::vector<std::size_t>& rsel) {
        combinations(cols, kc, [&](const std::vector<std::size_t>& csel) {
            double score = 0.0;
            for (std::size_t r : rsel)
                for (std::size_t c : csel) {
                    double v = w.data[r * cols + c];
                    score += v * v;
                }
            if (score > best) {  // lex-first combination wins ties
                best = score;
                best_rows = rsel;
                best_cols = csel;
            }
        });
    });

    Tensor out = Tensor::zeros(w.dims);
    for (std::size_t r : best_rows)
        for (std::size_t c : best_cols) out.data[r * cols + c] = w.data[r * cols + c];
    return out;
}

AdmmState init_admm(const LayerGraph& graph, const BudgetMap& budgets, double rho) {
    if (!(rho > 0.0)) throw UsageError("rho must be positive");
    AdmmState st;
    st.rho = rho;
    for (const auto& [name, budget] : budgets) {
        if (!budget.constrained()) continue;
        const LayerNode& nd = graph.node(name);
        if (!nd.weighted()) throw UsageError("budget for unweighted layer '" + name + "'");
        check_budget(nd.weights, budget, "layer '" + name + "'");
        if (nd.weights.sum_squares() == 0.0)
            std::cerr << "warning: layer '" << name
                      << "' is all-zero; projection target is arbitrary\n";
        st.y[name] = project_structured(nd.weights, budget);
        st.u[name] = Tensor::zeros(nd.weights.dims);
        st.budgets[name] = {budget.keep_filters, budget.keep_columns};
    }
    if (st.y.empty()) throw UsageError("no constrained layers in budget");
    return st;
}

LossValue augmented_loss(const LayerGraph& graph, const Batch& batch, const AdmmState& state) {
    auto [logits, loss] = model_forward(graph, batch);
    const double rho = state.rho;
    for (const auto& [name, y] : state.y) {
        const Tensor& w = graph.node(name).weights;
        const Tensor& u = state.u.at(name);
        Tensor& g = loss.gradients.at(name);
        if (y.numel() != w.numel())
            throw ShapeError("admm state does not match layer '" + name + "'");
        for (std::size_t j = 0; j < g.data.size(); ++j) {
            double d = w.data[j] - y.data[j] + u.data[j];
            g.data[j] += rho * d;
            loss.value += 0.5 * rho * d * d;
        }
    }
    return loss;
}

std::map<std::string, double> admm_iteration(LayerGraph& graph, const Dataset& ds,
                                             const BudgetMap& budgets, AdmmState& state,
                                             const AdmmOptions& opt, ParamStates& states,
                                             std::mt19937_64& rng) {
    if (state.y.empty()) throw UsageError("admm state is uninitialized");

    // Proximal phase: plain training epochs with the quadratic coupling term
    // folded into each batch gradient.
    for (int e = 0; e < opt.epochs_per_iteration; ++e) {
        std::vector<std::size_t> idx(ds.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        deterministic_shuffle(idx, rng);
        for (std::size_t at = 0; at < idx.size(); at += opt.train.batch_size) {
            std::size_t n = std::min(opt.train.batch_size, idx.size() - at);
            Batch batch = ds.make_batch(idx.data() + at, n);
            LossValue loss = augmented_loss(graph, batch, state);
            apply_gradients(graph, loss, states, opt.train.hyper);
        }
    }

    // Projection and dual updates.
    std::map<std::string, double> residual;
    for (auto& [name, y] : state.y) {
        const Tensor& w = graph.node(name).weights;
        Tensor& u = state.u.at(name);

        Tensor wu = w;
        for (std::size_t j = 0; j < wu.data.size(); ++j) wu.data[j] += u.data[j];
        y = project_structured(wu, budgets.at(name));

        double diff2 = 0.0;
        for (std::size_t j = 0; j < u.data.size(); ++j) {
            double d = w.data[j] - y.data[j];
            u.data[j] += d;
            diff2 += d * d;
        }
        double w2 = w.sum_squares();
        residual[name] = w2 > 0.0 ? std::sqrt(diff2 / w2) : std::sqrt(diff2);
    }
    ++state.iterations_done;
    return residual;
}

WeightMask hard_prune(LayerGraph& graph, const BudgetMap& budgets) {
    WeightMask mask;
    for (const auto& [name, budget] : budgets) {
        if (!budget.constrained()) continue;
        LayerNode& nd = graph.node(name);
        std::vector<std::uint8_t> support;
        nd.weights = project_structured(nd.weights, budget, &support);
        mask[name] = std::move(support);
    }
    if (mask.empty()) throw UsageError("no constrained layers in budget");
    return mask;
}

void masked_retrain(LayerGraph& graph, const Dataset& ds, const WeightMask& mask,
                    const TrainOptions& opt, std::ostream* log) {
    for (const auto& [name, bits] : mask) {
        LayerNode& nd = graph.node(name);
        if (bits.size() != nd.weights.numel())
            throw ShapeError("mask size mismatch for layer '" + name + "'");
        for (std::size_t j = 0; j < bits.size(); ++j)
            if (!bits[j]) nd.weights.data[j] = 0.0;
    }
    ParamStates states;
    std::mt19937_64 rng(opt.seed);
    for (int e = 0; e < opt.epochs; ++e) {
        double loss = train_epoch(graph, ds, opt, states, rng, &mask);
        if (log) *log << "retrain epoch " << (e + 1) << "/" << opt.epochs
                      << "  train_loss=" << loss << "\n";
    }
}

}  // namespace prm
