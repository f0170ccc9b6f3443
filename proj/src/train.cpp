#include "prm/train.hpp"

#include <numeric>

#include "prm/errors.hpp"

namespace prm {

void deterministic_shuffle(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(idx[i - 1], idx[j]);
    }
}

void apply_gradients(LayerGraph& graph, const LossValue& loss, ParamStates& states,
                     const OptimizerHyper& hyper, const WeightMask* mask) {
    for (int id : graph.weighted_ids()) {
        LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
        auto git = loss.gradients.find(nd.name);
        auto bit = loss.bias_gradients.find(nd.name);
        if (git == loss.gradients.end() || bit == loss.bias_gradients.end())
            throw NumericError("missing gradient for layer '" + nd.name + "'");

        const std::vector<std::uint8_t>* keep = nullptr;
        if (mask) {
            auto mit = mask->find(nd.name);
            if (mit != mask->end()) {
                if (mit->second.size() != nd.weights.numel())
                    throw ShapeError("mask size mismatch for layer '" + nd.name + "'");
                keep = &mit->second;
            }
        }

        if (keep) {
            Tensor g = git->second;
            for (std::size_t j = 0; j < g.data.size(); ++j)
                if (!(*keep)[j]) g.data[j] = 0.0;
            optimizer_step(nd.weights, g, states.weights[nd.name], hyper);
            for (std::size_t j = 0; j < nd.weights.data.size(); ++j)
                if (!(*keep)[j]) nd.weights.data[j] = 0.0;
        } else {
            optimizer_step(nd.weights, git->second, states.weights[nd.name], hyper);
        }
        optimizer_step(nd.bias, bit->second, states.biases[nd.name], hyper);
    }
}

double train_epoch(LayerGraph& graph, const Dataset& ds, const TrainOptions& opt,
                   ParamStates& states, std::mt19937_64& rng, const WeightMask* mask) {
    if (ds.size() == 0) throw DataError("empty dataset");
    if (opt.batch_size == 0) throw UsageError("batch_size must be positive");

    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    deterministic_shuffle(idx, rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t at = 0; at < idx.size(); at += opt.batch_size) {
        std::size_t n = std::min(opt.batch_size, idx.size() - at);
        Batch batch = ds.make_batch(idx.data() + at, n);
        auto [logits, loss] = model_forward(graph, batch);
        apply_gradients(graph, loss, states, opt.hyper, mask);
        loss_sum += loss.value * static_cast<double>(n);
        seen += n;
    }
    return loss_sum / static_cast<double>(seen);
}

void train(LayerGraph& graph, const Dataset& ds, const TrainOptions& opt, std::ostream* log) {
    ParamStates states;
    std::mt19937_64 rng(opt.seed);
    for (int e = 0; e < opt.epochs; ++e) {
        double loss = train_epoch(graph, ds, opt, states, rng);
        if (log) *log << "epoch " << (e + 1) << "/" << opt.epochs << "  train_loss=" << loss << "\n";
    }
}

}  // namespace prm
