#include "prm/pipeline.hpp"

#include <Eigen/Core>
#include <cstdlib>
#include <sstream>

#include "prm/errors.hpp"
#include "prm/train.hpp"

namespace prm {

void configure_threads() {
    int n = 1;
    if (const char* env = std::getenv("PRM_THREADS")) {
        try {
            std::size_t used = 0;
            n = std::stoi(env, &used);
            if (used != std::string(env).size() || n < 1) throw std::invalid_argument(env);
        } catch (const std::exception&) {
            throw UsageError(std::string("PRM_THREADS must be a positive integer, got '") + env +
                             "'");
        }
    }
    Eigen::setNbThreads(n);
}

RunState fresh_model(const RunConfig& cfg) {
    RunState st;
    st.graph = cfg.model == "lenet5" ? build_lenet5(cfg.seed) : build_tiny_resnet(cfg.seed);
    for (int id : st.graph.weighted_ids()) {
        const LayerNode& nd = st.graph.nodes[static_cast<std::size_t>(id)];
        st.extras.baseline_counts[nd.name] = nd.weights.numel();
    }
    std::ostringstream echo;
    for (const auto& [k, v] : cfg.raw) echo << k << " = " << v << "\n";
    st.extras.config_echo = echo.str();
    return st;
}

RunState load_state(const std::string& path) {
    RunState st;
    st.graph = load_checkpoint(path, &st.extras);
    return st;
}

void save_state(const std::string& path, const RunState& state, const RunConfig& cfg) {
    CheckpointExtras extras = state.extras;  // refresh the echo, keep the caller intact
    std::ostringstream echo;
    for (const auto& [k, v] : cfg.raw) echo << k << " = " << v << "\n";
    if (!echo.str().empty()) extras.config_echo = echo.str();
    save_checkpoint(path, state.graph, extras);
}

Dataset load_train_data(const RunConfig& cfg) {
    if (cfg.model == "lenet5") return load_mnist_dir(cfg.mnist_dir, /*train=*/true);
    if (cfg.cifar_files.empty()) throw UsageError("data.cifar_files is required for this model");
    return load_cifar10(cfg.cifar_files);
}

Dataset load_test_data(const RunConfig& cfg) {
    if (cfg.model == "lenet5") return load_mnist_dir(cfg.mnist_dir, /*train=*/false);
    const auto& files = cfg.cifar_test_files.empty() ? cfg.cifar_files : cfg.cifar_test_files;
    return load_cifar10(files);
}

void stage_train(RunState& st, const RunConfig& cfg, const Dataset& train, std::ostream* log) {
    TrainOptions opt = cfg.train;
    opt.seed = cfg.seed;
    prm::train(st.graph, train, opt, log);
}

void stage_admm(RunState& st, const RunConfig& cfg, const Dataset& train, std::ostream* log) {
    BudgetMap budgets = resolve_budgets(cfg, st.graph);
    if (budgets.empty()) throw UsageError("no layer budgets configured");

    AdmmOptions opt = cfg.admm;
    opt.train.seed = cfg.seed;

    AdmmState state;
    if (!st.extras.admm.empty()) {
        state = st.extras.admm;  // resume
        if (log)
            *log << "resuming admm state (rho=" << state.rho << ", " << state.iterations_done
                 << " iterations done)\n";
        if (state.rho != opt.rho)
            throw UsageError("checkpoint admm state has rho=" + std::to_string(state.rho) +
                             ", config wants " + std::to_string(opt.rho));
        for (const auto& [name, budget] : budgets) {
            auto it = state.budgets.find(name);
            if (it == state.budgets.end() || it->second[0] != budget.keep_filters ||
                it->second[1] != budget.keep_columns)
                throw UsageError("checkpoint admm budgets do not match config for layer '" +
                                 name + "'");
        }
    } else {
        state = init_admm(st.graph, budgets, opt.rho);
    }

    ParamStates params;
    std::mt19937_64 rng(cfg.seed + 0x9e3779b97f4a7c15ULL);
    for (int it = 0; it < opt.iterations; ++it) {
        auto residual = admm_iteration(st.graph, train, budgets, state, opt, params, rng);
        if (log) {
            *log << "admm iteration " << state.iterations_done << "  residual:";
            for (const auto& [name, r] : residual) *log << ' ' << name << '=' << r;
            *log << '\n';
        }
    }

    st.extras.mask = hard_prune(st.graph, budgets);
    st.extras.admm = std::move(state);
    if (log) {
        CompressionStats cs = stats_of(st);
        *log << "hard prune: " << cs.nonzero << "/" << cs.total << " weights remain\n";
    }
}

void stage_retrain(RunState& st, const RunConfig& cfg, const Dataset& train, std::ostream* log) {
    if (st.extras.mask.empty())
        throw UsageError("no pruning mask in checkpoint; run the admm stage first");
    TrainOptions opt = cfg.retrain;
    opt.seed = cfg.seed + 1;
    masked_retrain(st.graph, train, st.extras.mask, opt, log);
}

void stage_purify(RunState& st, const RunConfig& cfg, std::ostream* log) {
    std::vector<PurifyAction> actions = purify(st.graph, cfg.purify);
    for (const PurifyAction& a : actions) st.extras.purify_log.push_back(to_line(a));
    if (log) *log << "purify: " << actions.size() << " structures removed\n";
}

void stage_compact(RunState& st, std::ostream* log) {
    CompactResult res = compact(st.graph);
    st.extras.mask.clear();  // mask indices no longer line up with tensors
    st.extras.admm = {};
    if (log) {
        *log << "compact:";
        for (const auto& [name, kept] : res.kept_filters) {
            const LayerNode& nd = st.graph.node(name);
            *log << ' ' << name << '=' << kept.size() << "x" << lowered_cols(nd.weights);
        }
        *log << '\n';
    }
}

CompressionStats stats_of(const RunState& st) {
    const auto* baseline =
        st.extras.baseline_counts.empty() ? nullptr : &st.extras.baseline_counts;
    return compression_stats(st.graph, baseline);
}

PipelineResult run_pipeline(RunState& st, const RunConfig& cfg, const Dataset& train,
                            const Dataset& test, std::ostream* log) {
    PipelineResult out;

    stage_train(st, cfg, train, log);
    out.baseline = evaluate(st.graph, test);
    if (log) *log << "baseline test accuracy " << out.baseline.accuracy << "\n";

    stage_admm(st, cfg, train, log);
    stage_retrain(st, cfg, train, log);
    out.after_retrain = evaluate(st.graph, test);
    out.stats_pruned = stats_of(st);
    if (log)
        *log << "after retrain: accuracy " << out.after_retrain.accuracy << ", nonzero rate "
             << out.stats_pruned.nonzero_rate() << "x\n";

    stage_purify(st, cfg, log);
    stage_compact(st, log);
    out.after_purify = evaluate(st.graph, test);
    out.stats_purified = stats_of(st);
    if (log)
        *log << "after purify: accuracy " << out.after_purify.accuracy << ", structural rate "
             << out.stats_purified.structural_rate() << "x\n";

    return out;
}

}  // namespace prm
