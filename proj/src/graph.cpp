#include "prm/graph.hpp"

#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

#include "prm/errors.hpp"

namespace prm {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Conv: return "conv";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Relu: return "relu";
        case LayerKind::Flatten: return "flatten";
        case LayerKind::Fc: return "fc";
        case LayerKind::ResidualAdd: return "residualAdd";
        case LayerKind::Output: return "output";
    }
    return "?";
}

int LayerGraph::input_node() const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].kind == LayerKind::Input) return static_cast<int>(i);
    throw ShapeError("graph has no input node");
}

int LayerGraph::output_node() const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].kind == LayerKind::Output) return static_cast<int>(i);
    throw ShapeError("graph has no output node");
}

int LayerGraph::node_id(const std::string& name) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].name == name) return static_cast<int>(i);
    return -1;
}

const LayerNode& LayerGraph::node(const std::string& name) const {
    int id = node_id(name);
    if (id < 0) throw ShapeError("no layer named '" + name + "'");
    return nodes[static_cast<std::size_t>(id)];
}

LayerNode& LayerGraph::node(const std::string& name) {
    int id = node_id(name);
    if (id < 0) throw ShapeError("no layer named '" + name + "'");
    return nodes[static_cast<std::size_t>(id)];
}

std::vector<int> LayerGraph::weighted_ids() const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].weighted()) ids.push_back(static_cast<int>(i));
    return ids;
}

std::size_t LayerGraph::prunable_weight_count() const {
    std::size_t n = 0;
    for (const auto& nd : nodes)
        if (nd.weighted()) n += nd.weights.numel();
    return n;
}

void LayerGraph::validate() const {
    if (nodes.empty()) throw ShapeError("graph is empty");
    if (input_dims.size() != 3) throw ShapeError("input_dims must be [C,H,W]");
    if (num_classes == 0) throw ShapeError("num_classes must be positive");

    int inputs_seen = 0;
    int outputs_seen = 0;
    std::set<std::string> names;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const LayerNode& nd = nodes[i];
        if (nd.name.empty()) throw ShapeError("unnamed node");
        if (!names.insert(nd.name).second)
            throw ShapeError("duplicate layer name '" + nd.name + "'");

        if (nd.kind == LayerKind::Input) ++inputs_seen;
        if (nd.kind == LayerKind::Output) ++outputs_seen;

        std::size_t want_in = 1;
        if (nd.kind == LayerKind::Input) want_in = 0;
        if (nd.kind == LayerKind::ResidualAdd) want_in = 2;
        if (nd.inputs.size() != want_in)
            throw ShapeError("layer '" + nd.name + "' expects " + std::to_string(want_in) +
                             " inputs, has " + std::to_string(nd.inputs.size()));

        for (int src : nd.inputs) {
            if (src < 0 || static_cast<std::size_t>(src) >= i)
                throw ShapeError("layer '" + nd.name + "' input out of topological order");
            const auto& up = nodes[static_cast<std::size_t>(src)].outputs;
            if (std::find(up.begin(), up.end(), static_cast<int>(i)) == up.end())
                throw ShapeError("edge " + nodes[static_cast<std::size_t>(src)].name + " -> " +
                                 nd.name + " not mirrored in outputs");
        }
        for (int dst : nd.outputs) {
            if (dst <= static_cast<int>(i) || static_cast<std::size_t>(dst) >= nodes.size())
                throw ShapeError("layer '" + nd.name + "' output out of topological order");
            const auto& down = nodes[static_cast<std::size_t>(dst)].inputs;
            if (std::find(down.begin(), down.end(), static_cast<int>(i)) == down.end())
                throw ShapeError("edge " + nd.name + " -> " +
                                 nodes[static_cast<std::size_t>(dst)].name + " not mirrored in inputs");
        }
        if (nd.kind == LayerKind::Output) {
            if (!nd.outputs.empty()) throw ShapeError("output node must be terminal");
        } else if (nd.outputs.empty()) {
            throw ShapeError("layer '" + nd.name + "' feeds nothing");
        }

        if (nd.weighted()) {
            std::size_t want_rank = nd.kind == LayerKind::Conv ? 4 : 2;
            if (nd.weights.rank() != want_rank)
                throw ShapeError("layer '" + nd.name + "' weights must be rank " +
                                 std::to_string(want_rank) + ", got " + nd.weights.dims_str());
            if (nd.bias.dims != std::vector<std::size_t>{nd.weights.dims[0]})
                throw ShapeError("layer '" + nd.name + "' bias must be [" +
                                 std::to_string(nd.weights.dims[0]) + "]");
        } else if (!nd.weights.empty() || !nd.bias.empty()) {
            throw ShapeError("layer '" + nd.name + "' must not carry weights");
        }
    }
    if (inputs_seen != 1) throw ShapeError("graph needs exactly one input node");
    if (outputs_seen != 1) throw ShapeError("graph needs exactly one output node");

    infer_shapes();  // throws on any edge mismatch
}

std::vector<std::vector<std::size_t>> LayerGraph::infer_shapes() const {
    std::vector<std::vector<std::size_t>> shape(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const LayerNode& nd = nodes[i];
        auto in_shape = [&](std::size_t k) -> const std::vector<std::size_t>& {
            return shape[static_cast<std::size_t>(nd.inputs[k])];
        };
        auto edge = [&](std::size_t k) {
            return "edge " + nodes[static_cast<std::size_t>(nd.inputs[k])].name + " -> " + nd.name;
        };
        switch (nd.kind) {
            case LayerKind::Input:
                shape[i] = input_dims;
                break;
            case LayerKind::Conv: {
                const auto& s = in_shape(0);
                if (s.size() != 3) throw ShapeError(edge(0) + ": conv needs [C,H,W] input");
                std::size_t f = nd.weights.dims[0], c = nd.weights.dims[1];
                std::size_t kh = nd.weights.dims[2], kw = nd.weights.dims[3];
                if (s[0] != c)
                    throw ShapeError(edge(0) + ": channel mismatch, input has " +
                                     std::to_string(s[0]) + ", weights expect " + std::to_string(c));
                if (s[1] < kh || s[2] < kw)
                    throw ShapeError(edge(0) + ": kernel larger than input");
                shape[i] = {f, s[1] - kh + 1, s[2] - kw + 1};
                break;
            }
            case LayerKind::MaxPool: {
                const auto& s = in_shape(0);
                if (s.size() != 3) throw ShapeError(edge(0) + ": maxpool needs [C,H,W] input");
                if (s[1] % 2 != 0 || s[2] % 2 != 0)
                    throw ShapeError(edge(0) + ": maxpool needs even spatial dims");
                shape[i] = {s[0], s[1] / 2, s[2] / 2};
                break;
            }
            case LayerKind::Relu:
                shape[i] = in_shape(0);
                break;
            case LayerKind::Flatten: {
                const auto& s = in_shape(0);
                shape[i] = {checked_numel(s)};
                break;
            }
            case LayerKind::Fc: {
                const auto& s = in_shape(0);
                if (s.size() != 1) throw ShapeError(edge(0) + ": fc needs flat input");
                if (s[0] != nd.weights.dims[1])
                    throw ShapeError(edge(0) + ": fc expects " + std::to_string(nd.weights.dims[1]) +
                                     " features, got " + std::to_string(s[0]));
                shape[i] = {nd.weights.dims[0]};
                break;
            }
            case LayerKind::ResidualAdd: {
                if (in_shape(0) != in_shape(1))
                    throw ShapeError(edge(1) + ": residualAdd branch shapes differ");
                shape[i] = in_shape(0);
                break;
            }
            case LayerKind::Output: {
                const auto& s = in_shape(0);
                if (s != std::vector<std::size_t>{num_classes})
                    throw ShapeError(edge(0) + ": output expects [" + std::to_string(num_classes) + "]");
                shape[i] = s;
                break;
            }
        }
    }
    return shape;
}

// ---- builders ----

namespace {

struct GraphBuilder {
    LayerGraph g;

    int add(LayerNode nd, std::vector<int> inputs) {
        int id = static_cast<int>(g.nodes.size());
        nd.inputs = std::move(inputs);
        for (int src : nd.inputs) g.nodes[static_cast<std::size_t>(src)].outputs.push_back(id);
        g.nodes.push_back(std::move(nd));
        return id;
    }

    int input(std::vector<std::size_t> dims) {
        g.input_dims = std::move(dims);
        return add({.name = "input", .kind = LayerKind::Input}, {});
    }
    int conv(const std::string& name, int src, std::size_t f, std::size_t c, std::size_t k,
             std::mt19937_64& rng) {
        LayerNode nd{.name = name, .kind = LayerKind::Conv};
        nd.weights = he_normal({f, c, k, k}, c * k * k, rng);
        nd.bias = Tensor::zeros({f});
        return add(std::move(nd), {src});
    }
    int fc(const std::string& name, int src, std::size_t out, std::size_t in, std::mt19937_64& rng) {
        LayerNode nd{.name = name, .kind = LayerKind::Fc};
        nd.weights = he_normal({out, in}, in, rng);
        nd.bias = Tensor::zeros({out});
        return add(std::move(nd), {src});
    }
    int pool(const std::string& name, int src) {
        return add({.name = name, .kind = LayerKind::MaxPool}, {src});
    }
    int relu(const std::string& name, int src) {
        return add({.name = name, .kind = LayerKind::Relu}, {src});
    }
    int flatten(const std::string& name, int src) {
        return add({.name = name, .kind = LayerKind::Flatten}, {src});
    }
    int res_add(const std::string& name, int a, int b) {
        return add({.name = name, .kind = LayerKind::ResidualAdd}, {a, b});
    }
    int output(int src) { return add({.name = "output", .kind = LayerKind::Output}, {src}); }
};

}  // namespace

LayerGraph build_lenet5(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GraphBuilder b;
    b.g.num_classes = 10;
    int x = b.input({1, 28, 28});
    x = b.conv("conv1", x, 20, 1, 5, rng);
    x = b.pool("pool1", x);
    x = b.conv("conv2", x, 50, 20, 5, rng);
    x = b.pool("pool2", x);
    x = b.flatten("flatten", x);
    x = b.fc("fc1", x, 500, 800, rng);
    x = b.relu("relu1", x);
    x = b.fc("fc2", x, 10, 500, rng);
    b.output(x);
    b.g.validate();
    return b.g;
}

LayerGraph build_tiny_resnet(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GraphBuilder b;
    b.g.num_classes = 10;
    int x = b.input({3, 32, 32});
    x = b.conv("stem", x, 8, 3, 3, rng);
    x = b.relu("relu_stem", x);
    int trunk = b.pool("pool1", x);
    int y = b.conv("branch1", trunk, 8, 8, 1, rng);
    y = b.relu("relu_b1", y);
    y = b.conv("branch2", y, 8, 8, 1, rng);
    int joined = b.res_add("join", trunk, y);
    joined = b.relu("relu_join", joined);
    int flat = b.flatten("flatten", joined);
    int h = b.fc("fc1", flat, 32, 8 * 15 * 15, rng);
    h = b.relu("relu_fc", h);
    int logits = b.fc("fc2", h, 10, 32, rng);
    b.output(logits);
    b.g.validate();
    return b.g;
}

// ---- channel/column bookkeeping ----

ChannelColumnMap channel_column_map(const LayerGraph& graph, int node_id) {
    const LayerNode& nd = graph.nodes.at(static_cast<std::size_t>(node_id));
    if (!nd.weighted())
        throw ShapeError("layer '" + nd.name + "' has no columns to map");

    ChannelColumnMap m;
    m.layer_name = nd.name;
    if (nd.kind == LayerKind::Conv) {
        m.groups = nd.weights.dims[1];
        m.delta = nd.weights.dims[2] * nd.weights.dims[3];
        return m;
    }

    // fc: if the features arrive through a flatten of a [C,H,W] map, columns
    // group into C blocks of H*W; otherwise every feature is its own group.
    auto shapes = graph.infer_shapes();
    int src = nd.inputs[0];
    while (graph.nodes[static_cast<std::size_t>(src)].kind == LayerKind::Relu)
        src = graph.nodes[static_cast<std::size_t>(src)].inputs[0];
    const LayerNode& up = graph.nodes[static_cast<std::size_t>(src)];
    if (up.kind == LayerKind::Flatten) {
        const auto& fed = shapes[static_cast<std::size_t>(up.inputs[0])];
        if (fed.size() == 3) {
            m.groups = fed[0];
            m.delta = fed[1] * fed[2];
            return m;
        }
    }
    m.groups = nd.weights.dims[1];
    m.delta = 1;
    return m;
}

ChannelColumnMap channel_column_map(const LayerGraph& graph, const std::string& layer_name) {
    return channel_column_map(graph, graph.node_id(layer_name));
}

// ---- wiring queries ----

namespace {

void walk_up(const LayerGraph& g, int id, std::size_t channel, UpstreamSources& out) {
    const LayerNode& nd = g.nodes[static_cast<std::size_t>(id)];
    switch (nd.kind) {
        case LayerKind::Input:
            out.fed_by_input = true;
            return;
        case LayerKind::Conv:
        case LayerKind::Fc: {
            FilterRef ref{id, channel};
            if (std::find(out.filters.begin(), out.filters.end(), ref) == out.filters.end())
                out.filters.push_back(ref);
            return;
        }
        case LayerKind::ResidualAdd:
            walk_up(g, nd.inputs[0], channel, out);
            walk_up(g, nd.inputs[1], channel, out);
            return;
        default:
            walk_up(g, nd.inputs[0], channel, out);
            return;
    }
}

void walk_down(const LayerGraph& g, int id, std::size_t channel, DownstreamConsumers& out) {
    const LayerNode& nd = g.nodes[static_cast<std::size_t>(id)];
    switch (nd.kind) {
        case LayerKind::Output:
            out.feeds_output = true;
            return;
        case LayerKind::Conv:
        case LayerKind::Fc: {
            ChannelRef ref{id, channel};
            if (std::find(out.channels.begin(), out.channels.end(), ref) == out.channels.end())
                out.channels.push_back(ref);
            return;
        }
        default:
            for (int dst : nd.outputs) walk_down(g, dst, channel, out);
            return;
    }
}

}  // namespace

UpstreamSources upstream_of(const LayerGraph& graph, int node_id, std::size_t group) {
    const LayerNode& nd = graph.nodes.at(static_cast<std::size_t>(node_id));
    if (!nd.weighted()) throw ShapeError("upstream_of wants a weighted layer");
    ChannelColumnMap m = channel_column_map(graph, node_id);
    if (group >= m.groups)
        throw ShapeError("layer '" + nd.name + "' has " + std::to_string(m.groups) +
                         " channel groups, asked for " + std::to_string(group));
    UpstreamSources out;
    walk_up(graph, nd.inputs[0], group, out);
    return out;
}

DownstreamConsumers downstream_of(const LayerGraph& graph, int node_id, std::size_t filter) {
    const LayerNode& nd = graph.nodes.at(static_cast<std::size_t>(node_id));
    if (!nd.weighted()) throw ShapeError("downstream_of wants a weighted layer");
    if (filter >= nd.filter_count())
        throw ShapeError("layer '" + nd.name + "' has " + std::to_string(nd.filter_count()) +
                         " filters, asked for " + std::to_string(filter));
    DownstreamConsumers out;
    for (int dst : nd.outputs) walk_down(graph, dst, filter, out);
    return out;
}

// ---- execution ----

namespace {

struct Executor {
    const LayerGraph& g;
    std::vector<Tensor> act;
    std::vector<std::vector<std::int32_t>> pool_argmax;

    explicit Executor(const LayerGraph& graph)
        : g(graph), act(graph.nodes.size()), pool_argmax(graph.nodes.size()) {}

    const Tensor& in(const LayerNode& nd, std::size_t k = 0) const {
        return act[static_cast<std::size_t>(nd.inputs[k])];
    }

    void forward(const Tensor& images) {
        if (images.rank() != 4)
            throw ShapeError("graph input must be [n,C,H,W], got " + images.dims_str());
        for (std::size_t i = 0; i < g.nodes.size(); ++i) {
            const LayerNode& nd = g.nodes[i];
            try {
                switch (nd.kind) {
                    case LayerKind::Input: {
                        std::vector<std::size_t> want{images.dims[0], g.input_dims[0],
                                                      g.input_dims[1], g.input_dims[2]};
                        if (images.dims != want)
                            throw ShapeError("expected " + Tensor::zeros(want).dims_str() +
                                             ", got " + images.dims_str());
                        act[i] = images;
                        break;
                    }
                    case LayerKind::Conv:
                        act[i] = conv2d_forward(in(nd), nd.weights, nd.bias);
                        break;
                    case LayerKind::MaxPool:
                        act[i] = maxpool2_forward(in(nd), pool_argmax[i]);
                        break;
                    case LayerKind::Relu:
                        act[i] = relu_forward(in(nd));
                        break;
                    case LayerKind::Flatten: {
                        const Tensor& x = in(nd);
                        Tensor flat = x;
                        flat.dims = {x.dims[0], x.numel() / x.dims[0]};
                        act[i] = std::move(flat);
                        break;
                    }
                    case LayerKind::Fc:
                        act[i] = linear_forward(in(nd), nd.weights, nd.bias);
                        break;
                    case LayerKind::ResidualAdd: {
                        const Tensor& a = in(nd, 0);
                        const Tensor& bb = in(nd, 1);
                        if (!a.same_dims(bb))
                            throw ShapeError("branch shapes differ: " + a.dims_str() + " vs " +
                                             bb.dims_str());
                        Tensor s = a;
                        for (std::size_t j = 0; j < s.data.size(); ++j) s.data[j] += bb.data[j];
                        act[i] = std::move(s);
                        break;
                    }
                    case LayerKind::Output:
                        act[i] = in(nd);
                        break;
                }
            } catch (const ShapeError& e) {
                std::string where = nd.inputs.empty()
                                        ? nd.name
                                        : g.nodes[static_cast<std::size_t>(nd.inputs[0])].name +
                                              " -> " + nd.name;
                throw ShapeError("at " + where + ": " + e.what());
            }
        }
    }

    LossValue backward(const Tensor& grad_logits) {
        std::vector<Tensor> grad(g.nodes.size());
        auto feed = [&](int src, Tensor&& gsrc) {
            Tensor& slot = grad[static_cast<std::size_t>(src)];
            if (slot.empty()) {
                slot = std::move(gsrc);
            } else {
                for (std::size_t j = 0; j < slot.data.size(); ++j) slot.data[j] += gsrc.data[j];
            }
        };

        LossValue lv;
        grad[static_cast<std::size_t>(g.output_node())] = grad_logits;
        for (std::size_t ri = g.nodes.size(); ri-- > 0;) {
            const LayerNode& nd = g.nodes[ri];
            Tensor& gout = grad[ri];
            if (nd.kind == LayerKind::Input || gout.empty()) continue;
            int src = nd.inputs[0];
            bool src_is_input = g.nodes[static_cast<std::size_t>(src)].kind == LayerKind::Input;
            switch (nd.kind) {
                case LayerKind::Conv: {
                    Tensor gw, gb, gx;
                    conv2d_backward(in(nd), nd.weights, gout, src_is_input ? nullptr : &gx, gw, gb);
                    lv.gradients[nd.name] = std::move(gw);
                    lv.bias_gradients[nd.name] = std::move(gb);
                    if (!src_is_input) feed(src, std::move(gx));
                    break;
                }
                case LayerKind::Fc: {
                    Tensor gw, gb, gx;
                    linear_backward(in(nd), nd.weights, gout, &gx, gw, gb);
                    lv.gradients[nd.name] = std::move(gw);
                    lv.bias_gradients[nd.name] = std::move(gb);
                    feed(src, std::move(gx));
                    break;
                }
                case LayerKind::MaxPool:
                    feed(src, maxpool2_backward(gout, pool_argmax[ri], in(nd).dims));
                    break;
                case LayerKind::Relu:
                    feed(src, relu_backward(gout, act[ri]));
                    break;
                case LayerKind::Flatten: {
                    Tensor gx = gout;
                    gx.dims = in(nd).dims;
                    feed(src, std::move(gx));
                    break;
                }
                case LayerKind::ResidualAdd: {
                    Tensor copy = gout;
                    feed(nd.inputs[0], std::move(copy));
                    feed(nd.inputs[1], std::move(gout));
                    break;
                }
                case LayerKind::Output:
                    feed(src, std::move(gout));
                    break;
                default:
                    break;
            }
        }
        return lv;
    }
};

}  // namespace

Tensor graph_forward(const LayerGraph& graph, const Tensor& images) {
    Executor ex(graph);
    ex.forward(images);
    return ex.act[static_cast<std::size_t>(graph.output_node())];
}

std::pair<Tensor, LossValue> model_forward(const LayerGraph& graph, const Batch& batch) {
    batch.validate(graph.num_classes);
    Executor ex(graph);
    ex.forward(batch.images);
    Tensor logits = ex.act[static_cast<std::size_t>(graph.output_node())];
    Tensor grad_logits;
    double loss = softmax_cross_entropy(logits, batch.labels, &grad_logits);
    LossValue lv = ex.backward(grad_logits);
    lv.value = loss;
    return {std::move(logits), std::move(lv)};
}

}  // namespace prm
