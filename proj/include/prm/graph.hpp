#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "prm/nn.hpp"
#include "prm/tensor.hpp"

namespace prm {

enum class LayerKind : std::uint8_t {
    Input = 0,
    Conv = 1,
    MaxPool = 2,
    Relu = 3,
    Flatten = 4,
    Fc = 5,
    ResidualAdd = 6,
    Output = 7,
};

const char* layer_kind_name(LayerKind k);

struct LayerNode {
    std::string name;
    LayerKind kind = LayerKind::Input;
    Tensor weights;  // conv [F,C,Kh,Kw] or fc [out,in]; empty otherwise
    Tensor bias;     // [F]; empty otherwise
    std::vector<int> inputs;
    std::vector<int> outputs;

    bool weighted() const { return kind == LayerKind::Conv || kind == LayerKind::Fc; }
    std::size_t filter_count() const { return weights.dims[0]; }
};

// Directed layer graph, nodes stored in topological order (every node's
// inputs have smaller ids). Single input node, single output node.
struct LayerGraph {
    std::vector<LayerNode> nodes;
    std::vector<std::size_t> input_dims;  // [C,H,W]
    std::size_t num_classes = 0;

    int input_node() const;
    int output_node() const;
    int node_id(const std::string& name) const;  // -1 if absent
    const LayerNode& node(const std::string& name) const;
    LayerNode& node(const std::string& name);
    std::vector<int> weighted_ids() const;

    // Total conv/fc weight count; biases are excluded everywhere counting or
    // pruning is concerned.
    std::size_t prunable_weight_count() const;

    void validate() const;

    // Output dims per node, batch dim excluded. Index by node id.
    std::vector<std::vector<std::size_t>> infer_shapes() const;
};

LayerGraph build_lenet5(std::uint64_t seed = 1);
LayerGraph build_tiny_resnet(std::uint64_t seed = 1);

// ---- channel/column bookkeeping ----

// Column ownership of a weighted layer's lowered matrix. Group j owns the
// delta consecutive columns [j*delta, (j+1)*delta): kernel-sized blocks for
// conv, spatial blocks for fc fed through flatten, single columns otherwise.
struct ChannelColumnMap {
    std::string layer_name;
    std::size_t groups = 0;
    std::size_t delta = 0;

    std::pair<std::size_t, std::size_t> group_range(std::size_t j) const {
        return {j * delta, (j + 1) * delta};
    }
    std::size_t total_columns() const { return groups * delta; }
};

ChannelColumnMap channel_column_map(const LayerGraph& graph, int node_id);
ChannelColumnMap channel_column_map(const LayerGraph& graph, const std::string& layer_name);

// ---- wiring queries ----

struct FilterRef {
    int node = -1;
    std::size_t index = 0;
    bool operator==(const FilterRef&) const = default;
};

struct ChannelRef {
    int node = -1;
    std::size_t group = 0;
    bool operator==(const ChannelRef&) const = default;
};

// Producer filters feeding one channel group of a weighted layer, traced
// through relu/maxpool/flatten (index-preserving) and residualAdd (both
// branches contribute). fed_by_input marks channels wired to raw input data.
struct UpstreamSources {
    std::vector<FilterRef> filters;
    bool fed_by_input = false;
};

// Consumer channel groups of one filter, traced forward the same way.
// feeds_output marks filters wired to the logits.
struct DownstreamConsumers {
    std::vector<ChannelRef> channels;
    bool feeds_output = false;
};

UpstreamSources upstream_of(const LayerGraph& graph, int node_id, std::size_t group);
DownstreamConsumers downstream_of(const LayerGraph& graph, int node_id, std::size_t filter);

// ---- execution ----

// Forward pass; returns logits [n, num_classes].
Tensor graph_forward(const LayerGraph& graph, const Tensor& images);

// Forward plus reverse-mode gradients of mean softmax cross-entropy.
std::pair<Tensor, LossValue> model_forward(const LayerGraph& graph, const Batch& batch);

}  // namespace prm
