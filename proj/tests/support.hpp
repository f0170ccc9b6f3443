#pragma once

// Shared fixtures and oracles for the test suites.

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "prm/dataio.hpp"
#include "prm/graph.hpp"
#include "prm/tensor.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        auto base = std::filesystem::temp_directory_path();
        std::random_device rd;
        path = base / ("prm_test_" + std::to_string(rd()) + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline prm::Tensor random_tensor(std::vector<std::size_t> dims, std::mt19937_64& rng,
                                 double scale = 1.0) {
    prm::Tensor t = prm::Tensor::zeros(std::move(dims));
    std::normal_distribution<double> dist(0.0, scale);
    for (double& v : t.data) v = dist(rng);
    return t;
}

// Random dataset in [0,255] bytes with labels over num_classes.
inline prm::Dataset random_dataset(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                   std::size_t num_classes, std::uint64_t seed) {
    prm::Dataset ds;
    ds.channels = c;
    ds.height = h;
    ds.width = w;
    std::mt19937_64 rng(seed);
    ds.pixels.resize(n * c * h * w);
    for (auto& p : ds.pixels) p = static_cast<std::uint8_t>(rng() % 256);
    ds.labels.resize(n);
    for (auto& l : ds.labels) l = static_cast<int>(rng() % num_classes);
    return ds;
}

// Reference six-loop convolution (stride 1, no padding).
inline prm::Tensor naive_conv(const prm::Tensor& x, const prm::Tensor& w, const prm::Tensor& b) {
    const std::size_t n = x.dims[0], c = x.dims[1], h = x.dims[2], ww = x.dims[3];
    const std::size_t f = w.dims[0], kh = w.dims[2], kw = w.dims[3];
    const std::size_t oh = h - kh + 1, ow = ww - kw + 1;
    prm::Tensor y = prm::Tensor::zeros({n, f, oh, ow});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < f; ++m)
            for (std::size_t p = 0; p < oh; ++p)
                for (std::size_t q = 0; q < ow; ++q) {
                    double acc = b.data[m];
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v)
                                acc += w.at({m, ch, u, v}) * x.at({i, ch, p + u, q + v});
                    y.at({i, m, p, q}) = acc;
                }
    return y;
}

inline double max_abs_diff(const prm::Tensor& a, const prm::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double rel_err(double got, double want) {
    double denom = std::max({1e-8, std::abs(got), std::abs(want)});
    return std::abs(got - want) / denom;
}

// Tiny conv net for gradient checks: input [2,6,6] -> conv(2->3,3x3) ->
// maxpool -> flatten -> fc(12->4) -> output.
inline prm::LayerGraph tiny_conv_graph(std::uint64_t seed) {
    prm::LayerGraph out;
    out.num_classes = 4;
    out.input_dims = {2, 6, 6};
    std::mt19937_64 rng(seed);

    auto push = [&](prm::LayerNode nd, std::vector<int> inputs) {
        int id = static_cast<int>(out.nodes.size());
        nd.inputs = std::move(inputs);
        for (int src : nd.inputs) out.nodes[static_cast<std::size_t>(src)].outputs.push_back(id);
        out.nodes.push_back(std::move(nd));
        return id;
    };

    int x = push({.name = "input", .kind = prm::LayerKind::Input}, {});
    prm::LayerNode conv{.name = "conv", .kind = prm::LayerKind::Conv};
    conv.weights = prm::he_normal({3, 2, 3, 3}, 18, rng);
    conv.bias = random_tensor({3}, rng, 0.1);
    x = push(std::move(conv), {x});
    x = push({.name = "pool", .kind = prm::LayerKind::MaxPool}, {x});
    x = push({.name = "flatten", .kind = prm::LayerKind::Flatten}, {x});
    prm::LayerNode fc{.name = "fc", .kind = prm::LayerKind::Fc};
    fc.weights = prm::he_normal({4, 12}, 12, rng);
    fc.bias = random_tensor({4}, rng, 0.1);
    x = push(std::move(fc), {x});
    push({.name = "output", .kind = prm::LayerKind::Output}, {x});
    out.validate();
    return out;
}

}  // namespace testutil
