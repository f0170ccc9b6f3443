#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prm/graph.hpp"
#include "prm/nn.hpp"
#include "prm/tensor.hpp"

namespace prm {

// Images kept as raw bytes; batches materialize to doubles in [0,1].
struct Dataset {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> pixels;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    std::size_t image_numel() const { return channels * height * width; }
    Batch make_batch(const std::size_t* idx, std::size_t n) const;
    Batch batch_range(std::size_t begin, std::size_t end) const;
};

// IDX-format loaders (big-endian headers, magic 0x803 images / 0x801 labels).
Dataset load_mnist(const std::string& images_path, const std::string& labels_path);
Dataset load_mnist_dir(const std::string& dir, bool train);

// CIFAR-10 binary batches: 3073-byte records, 1 label byte + 3*32*32 pixels.
Dataset load_cifar10(const std::vector<std::string>& bin_paths);

// ---- checkpoint format ----
//
// Binary container: magic "PRMC", u16 version, then length-framed sections
// (u8 id + u64 payload size). Required sections carry topology and tensors;
// optional ones carry optimizer-free run state. Unknown section ids are
// skipped with a warning so newer files stay readable.

using WeightMask = std::map<std::string, std::vector<std::uint8_t>>;

struct AdmmSection {
    double rho = 0.0;
    std::uint64_t iterations_done = 0;
    std::map<std::string, Tensor> y;
    std::map<std::string, Tensor> u;
    // Per-layer {keep_filters, keep_columns}, persisted so a run can resume.
    std::map<std::string, std::array<std::uint64_t, 2>> budgets;
    bool empty() const { return y.empty(); }
};

struct CheckpointExtras {
    AdmmSection admm;
    WeightMask mask;
    std::vector<std::string> purify_log;
    std::string config_echo;
    std::map<std::string, std::size_t> baseline_counts;
};

void save_checkpoint(const std::string& path, const LayerGraph& graph,
                     const CheckpointExtras& extras = {});
LayerGraph load_checkpoint(const std::string& path, CheckpointExtras* extras = nullptr);

}  // namespace prm
