#include "prm/purify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "prm/errors.hpp"

namespace prm {

namespace {

double row_norm2(const Tensor& w, std::size_t r) {
    const std::size_t cols = lowered_cols(w);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
        double v = w.data[r * cols + c];
        s += v * v;
    }
    return s;
}

double col_norm2(const Tensor& w, std::size_t c) {
    const std::size_t rows = lowered_rows(w);
    const std::size_t cols = lowered_cols(w);
    double s = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        double v = w.data[r * cols + c];
        s += v * v;
    }
    return s;
}

bool group_all_zero(const Tensor& w, const ChannelColumnMap& map, std::size_t group) {
    const std::size_t rows = lowered_rows(w);
    const std::size_t cols = lowered_cols(w);
    auto [lo, hi] = map.group_range(group);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = lo; c < hi; ++c)
            if (w.data[r * cols + c] != 0.0) return false;
    return true;
}

bool blank_filter(const LayerNode& nd, std::size_t m) {
    return row_norm2(nd.weights, m) == 0.0 && nd.bias.data[m] == 0.0;
}

void zero_group(Tensor& w, const ChannelColumnMap& map, std::size_t group) {
    const std::size_t rows = lowered_rows(w);
    const std::size_t cols = lowered_cols(w);
    auto [lo, hi] = map.group_range(group);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = lo; c < hi; ++c) w.data[r * cols + c] = 0.0;
}

void zero_filter(LayerNode& nd, std::size_t m) {
    const std::size_t cols = lowered_cols(nd.weights);
    for (std::size_t c = 0; c < cols; ++c) nd.weights.data[m * cols + c] = 0.0;
    nd.bias.data[m] = 0.0;
}

std::size_t live_group_count(const Tensor& w, const ChannelColumnMap& map) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < map.groups; ++j)
        if (!group_all_zero(w, map, j)) ++n;
    return n;
}

std::size_t live_filter_count(const LayerNode& nd) {
    std::size_t n = 0;
    for (std::size_t m = 0; m < nd.filter_count(); ++m)
        if (!blank_filter(nd, m)) ++n;
    return n;
}

}  // namespace

double emptiness_ratio(const Tensor& w, const ChannelColumnMap& map, std::size_t group,
                       double th1) {
    if (group >= map.groups) throw ShapeError("channel group out of range");
    auto [lo, hi] = map.group_range(group);
    std::size_t alive = 0;
    for (std::size_t c = lo; c < hi; ++c) {
        double n2 = col_norm2(w, c);
        if (n2 > 0.0 && n2 >= th1) ++alive;
    }
    return static_cast<double>(alive) / static_cast<double>(map.delta);
}

double importance_score(const Tensor& w, const ChannelColumnMap& map, std::size_t group) {
    if (group >= map.groups) throw ShapeError("channel group out of range");
    auto [lo, hi] = map.group_range(group);
    double sum = 0.0;
    for (std::size_t c = lo; c < hi; ++c) sum += col_norm2(w, c);
    return sum / static_cast<double>(map.delta);
}

std::vector<ChannelStats> channel_stats(const Tensor& w, const ChannelColumnMap& map, double th1) {
    std::vector<ChannelStats> stats(map.groups);
    for (std::size_t j = 0; j < map.groups; ++j) {
        stats[j].group = j;
        stats[j].eta = emptiness_ratio(w, map, j, th1);
        stats[j].sigma = importance_score(w, map, j);
        stats[j].all_zero = group_all_zero(w, map, j);
    }
    return stats;
}

// ---- action log ----

std::string to_line(const PurifyAction& a) {
    char buf[320];
    if (a.kind == PurifyAction::Kind::Channel) {
        std::snprintf(buf, sizeof buf, "PRUNE_CHANNEL layer=%s j=%zu eta=%.17g sigma=%.17g rule=%s",
                      a.layer.c_str(), a.index, a.eta, a.sigma, a.rule.c_str());
    } else {
        std::snprintf(buf, sizeof buf, "PRUNE_FILTER layer=%s m=%zu norm=%.17g bias=%.17g rule=%s",
                      a.layer.c_str(), a.index, a.norm, a.bias, a.rule.c_str());
    }
    return buf;
}

PurifyAction parse_line(const std::string& line) {
    std::istringstream in(line);
    std::string head;
    in >> head;
    PurifyAction a;
    if (head == "PRUNE_CHANNEL")
        a.kind = PurifyAction::Kind::Channel;
    else if (head == "PRUNE_FILTER")
        a.kind = PurifyAction::Kind::Filter;
    else
        throw FormatError("bad purify log line: '" + line + "'");

    std::string tok;
    while (in >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw FormatError("bad purify log token: '" + tok + "'");
        std::string key = tok.substr(0, eq);
        std::string val = tok.substr(eq + 1);
        try {
            if (key == "layer")
                a.layer = val;
            else if (key == "j" || key == "m")
                a.index = std::stoull(val);
            else if (key == "eta")
                a.eta = std::stod(val);
            else if (key == "sigma")
                a.sigma = std::stod(val);
            else if (key == "norm")
                a.norm = std::stod(val);
            else if (key == "bias")
                a.bias = std::stod(val);
            else if (key == "rule")
                a.rule = val;
            else
                throw FormatError("unknown purify log key: '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw FormatError("bad purify log value: '" + tok + "'");
        } catch (const std::out_of_range&) {
            throw FormatError("bad purify log value: '" + tok + "'");
        }
    }
    if (a.layer.empty() || a.rule.empty())
        throw FormatError("incomplete purify log line: '" + line + "'");
    return a;
}

// ---- threshold purification ----

std::vector<PurifyAction> purify(LayerGraph& graph, const PurifyConfig& config) {
    graph.validate();
    std::vector<PurifyAction> actions;

    bool changed = true;
    while (changed) {
        changed = false;
        for (int id : graph.weighted_ids()) {
            LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
            const PurifyThresholds& th = config.for_layer(nd.name);
            ChannelColumnMap map = channel_column_map(graph, id);

            for (std::size_t j = 0; j < map.groups; ++j) {
                if (group_all_zero(nd.weights, map, j)) continue;

                UpstreamSources ups = upstream_of(graph, id, j);
                bool dead_feed = !ups.fed_by_input && !ups.filters.empty();
                for (const FilterRef& f : ups.filters)
                    dead_feed = dead_feed &&
                                blank_filter(graph.nodes[static_cast<std::size_t>(f.node)], f.index);

                double eta = emptiness_ratio(nd.weights, map, j, th.th1);
                double sigma = importance_score(nd.weights, map, j);
                bool th_fire = eta < th.th2 && sigma < th.th3;
                if (!dead_feed && !th_fire) continue;

                if (!dead_feed && live_group_count(nd.weights, map) == 1)
                    throw NumericError("purify would remove the last live channel of layer '" +
                                       nd.name + "'");
                zero_group(nd.weights, map, j);
                actions.push_back({PurifyAction::Kind::Channel, nd.name, j, eta, sigma, 0.0, 0.0,
                                   dead_feed ? "propagated" : "th"});
                changed = true;
            }

            for (std::size_t m = 0; m < nd.filter_count(); ++m) {
                if (blank_filter(nd, m)) continue;

                DownstreamConsumers down = downstream_of(graph, id, m);
                bool unused = !down.feeds_output && !down.channels.empty();
                for (const ChannelRef& c : down.channels) {
                    const LayerNode& cons = graph.nodes[static_cast<std::size_t>(c.node)];
                    unused = unused &&
                             group_all_zero(cons.weights, channel_column_map(graph, c.node), c.group);
                }

                double n2 = row_norm2(nd.weights, m);
                bool th_fire = n2 < th.th4;
                if (!unused && !th_fire) continue;

                if (!unused && live_filter_count(nd) == 1)
                    throw NumericError("purify would remove the last live filter of layer '" +
                                       nd.name + "'");
                double bias = nd.bias.data[m];
                zero_filter(nd, m);
                actions.push_back({PurifyAction::Kind::Filter, nd.name, m, 0.0, 0.0, n2, bias,
                                   unused ? "propagated" : "th4"});
                changed = true;
            }
        }
    }
    return actions;
}

// ---- exact propagation (independent liveness fixpoint) ----

namespace {

// Channel index spaces: each weighted layer writes one, pass-through nodes
// forward it, residualAdd unifies its two producers' spaces.
struct SpaceModel {
    std::vector<int> parent;          // union-find over provisional ids
    std::vector<int> out_space;       // per node, resolved after build
    std::vector<std::size_t> width;   // per provisional id

    int find(int x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            parent[static_cast<std::size_t>(x)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
            x = parent[static_cast<std::size_t>(x)];
        }
        return x;
    }
    void merge(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[static_cast<std::size_t>(b)] = a;
    }
};

SpaceModel build_spaces(const LayerGraph& g) {
    SpaceModel sm;
    sm.out_space.assign(g.nodes.size(), -1);
    auto shapes = g.infer_shapes();

    auto fresh = [&](std::size_t w) {
        int id = static_cast<int>(sm.parent.size());
        sm.parent.push_back(id);
        sm.width.push_back(w);
        return id;
    };

    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const LayerNode& nd = g.nodes[i];
        switch (nd.kind) {
            case LayerKind::Input:
                sm.out_space[i] = fresh(g.input_dims[0]);
                break;
            case LayerKind::Conv:
            case LayerKind::Fc:
                sm.out_space[i] = fresh(nd.filter_count());
                break;
            case LayerKind::ResidualAdd: {
                int a = sm.out_space[static_cast<std::size_t>(nd.inputs[0])];
                int b = sm.out_space[static_cast<std::size_t>(nd.inputs[1])];
                sm.merge(a, b);
                sm.out_space[i] = sm.find(a);
                break;
            }
            default:
                sm.out_space[i] = sm.out_space[static_cast<std::size_t>(nd.inputs[0])];
                break;
        }
    }
    for (auto& s : sm.out_space) s = sm.find(s);
    (void)shapes;
    return sm;
}

}  // namespace

std::vector<PurifyAction> propagate_unused_paths(LayerGraph& graph) {
    graph.validate();
    const std::size_t n = graph.nodes.size();

    std::vector<PurifyAction> actions;
    bool changed = true;
    while (changed) {
        changed = false;

        // Forward sweep (nodes are stored in topological order): carry[i][j]
        // says channel j of node i's output can hold a nonzero activation. A
        // residual join carries a position when either branch does, so a blank
        // map summed with a live one stays live.
        std::vector<std::vector<std::uint8_t>> carry(n);
        for (std::size_t i = 0; i < n; ++i) {
            const LayerNode& nd = graph.nodes[i];
            switch (nd.kind) {
                case LayerKind::Input:
                    carry[i].assign(graph.input_dims[0], 1);
                    break;
                case LayerKind::Conv:
                case LayerKind::Fc:
                    carry[i].assign(nd.filter_count(), 0);
                    for (std::size_t m = 0; m < nd.filter_count(); ++m)
                        if (!blank_filter(nd, m)) carry[i][m] = 1;
                    break;
                case LayerKind::ResidualAdd: {
                    const auto& a = carry[static_cast<std::size_t>(nd.inputs[0])];
                    const auto& b = carry[static_cast<std::size_t>(nd.inputs[1])];
                    carry[i].resize(a.size());
                    for (std::size_t j = 0; j < a.size(); ++j) carry[i][j] = a[j] | b[j];
                    break;
                }
                default:
                    carry[i] = carry[static_cast<std::size_t>(nd.inputs[0])];
                    break;
            }
        }

        // Backward sweep: read[i][j] says some consumer actually uses channel
        // j of node i's output. Logits are always read; a residual join
        // forwards its demand to both branches.
        std::vector<std::vector<std::uint8_t>> read(n);
        for (std::size_t i = 0; i < n; ++i) read[i].assign(carry[i].size(), 0);
        for (std::size_t i = n; i-- > 0;) {
            const LayerNode& nd = graph.nodes[i];
            switch (nd.kind) {
                case LayerKind::Input:
                    break;
                case LayerKind::Output:
                    for (auto& v : read[static_cast<std::size_t>(nd.inputs[0])]) v = 1;
                    break;
                case LayerKind::Conv:
                case LayerKind::Fc: {
                    ChannelColumnMap map = channel_column_map(graph, static_cast<int>(i));
                    auto& bits = read[static_cast<std::size_t>(nd.inputs[0])];
                    for (std::size_t j = 0; j < map.groups; ++j)
                        if (!group_all_zero(nd.weights, map, j)) bits[j] = 1;
                    break;
                }
                case LayerKind::ResidualAdd:
                    for (int src : nd.inputs) {
                        auto& bits = read[static_cast<std::size_t>(src)];
                        for (std::size_t j = 0; j < bits.size(); ++j) bits[j] |= read[i][j];
                    }
                    break;
                default: {
                    auto& bits = read[static_cast<std::size_t>(nd.inputs[0])];
                    for (std::size_t j = 0; j < bits.size(); ++j) bits[j] |= read[i][j];
                    break;
                }
            }
        }

        for (int id : graph.weighted_ids()) {
            LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];

            // Consumer side: a group whose input position carries nothing
            // multiplies exact zeros.
            ChannelColumnMap map = channel_column_map(graph, id);
            const auto& cin = carry[static_cast<std::size_t>(nd.inputs[0])];
            for (std::size_t j = 0; j < map.groups; ++j) {
                if (cin[j] || group_all_zero(nd.weights, map, j)) continue;
                zero_group(nd.weights, map, j);
                actions.push_back(
                    {PurifyAction::Kind::Channel, nd.name, j, 0.0, 0.0, 0.0, 0.0, "propagated"});
                changed = true;
            }

            // Producer side: a filter nobody reads computes nothing.
            const auto& rd = read[static_cast<std::size_t>(id)];
            for (std::size_t m = 0; m < nd.filter_count(); ++m) {
                if (rd[m] || blank_filter(nd, m)) continue;
                double n2 = row_norm2(nd.weights, m);
                double bias = nd.bias.data[m];
                zero_filter(nd, m);
                actions.push_back(
                    {PurifyAction::Kind::Filter, nd.name, m, 0.0, 0.0, n2, bias, "propagated"});
                changed = true;
            }
        }
    }
    return actions;
}

void apply_purify_log(LayerGraph& graph, const std::vector<PurifyAction>& actions) {
    for (const PurifyAction& a : actions) {
        int id = graph.node_id(a.layer);
        if (id < 0 || !graph.nodes[static_cast<std::size_t>(id)].weighted())
            throw FormatError("purify log names unknown layer '" + a.layer + "'");
        LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
        if (a.kind == PurifyAction::Kind::Channel) {
            ChannelColumnMap map = channel_column_map(graph, id);
            if (a.index >= map.groups)
                throw ShapeError("purify log channel index out of range for '" + a.layer + "'");
            zero_group(nd.weights, map, a.index);
        } else {
            if (a.index >= nd.filter_count())
                throw ShapeError("purify log filter index out of range for '" + a.layer + "'");
            zero_filter(nd, a.index);
        }
    }
}

// ---- physical compaction ----

CompactResult compact(LayerGraph& graph) {
    graph.validate();
    SpaceModel sm = build_spaces(graph);
    const int input_space = sm.out_space[static_cast<std::size_t>(graph.input_node())];
    const int output_space = sm.out_space[static_cast<std::size_t>(graph.output_node())];

    // Live index set per space: union of non-blank producer filters; the
    // data boundary spaces stay whole.
    std::map<int, std::vector<std::uint8_t>> live;
    for (std::size_t i = 0; i < sm.parent.size(); ++i) {
        int s = sm.find(static_cast<int>(i));
        auto& bits = live[s];
        if (bits.empty()) bits.assign(sm.width[static_cast<std::size_t>(s)], 0);
    }
    for (auto& v : live[input_space]) v = 1;
    for (auto& v : live[output_space]) v = 1;
    for (int id : graph.weighted_ids()) {
        const LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
        auto& bits = live[sm.out_space[static_cast<std::size_t>(id)]];
        for (std::size_t m = 0; m < nd.filter_count(); ++m)
            if (!blank_filter(nd, m)) bits[m] = 1;
    }

    auto kept_of = [&](int s) {
        std::vector<std::size_t> kept;
        const auto& bits = live.at(s);
        for (std::size_t i = 0; i < bits.size(); ++i)
            if (bits[i]) kept.push_back(i);
        return kept;
    };

    // Plan first against the old shapes, then rebuild.
    struct Plan {
        int id;
        std::vector<std::size_t> rows;
        std::vector<std::size_t> groups;
        std::size_t delta;
    };
    std::vector<Plan> plans;
    CompactResult result;
    for (int id : graph.weighted_ids()) {
        const LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
        Plan p;
        p.id = id;
        p.rows = kept_of(sm.out_space[static_cast<std::size_t>(id)]);
        p.groups = kept_of(sm.out_space[static_cast<std::size_t>(nd.inputs[0])]);
        p.delta = channel_column_map(graph, id).delta;
        if (p.rows.empty())
            throw NumericError("compact would leave layer '" + nd.name + "' without filters");
        if (p.groups.empty())
            throw NumericError("compact would leave layer '" + nd.name + "' without channels");
        result.kept_filters[nd.name] = p.rows;
        result.kept_groups[nd.name] = p.groups;
        plans.push_back(std::move(p));
    }

    for (const Plan& p : plans) {
        LayerNode& nd = graph.nodes[static_cast<std::size_t>(p.id)];
        const Tensor& w = nd.weights;
        const std::size_t old_cols = lowered_cols(w);

        std::vector<std::size_t> new_dims;
        if (nd.kind == LayerKind::Conv)
            new_dims = {p.rows.size(), p.groups.size(), w.dims[2], w.dims[3]};
        else
            new_dims = {p.rows.size(), p.groups.size() * p.delta};

        Tensor nw = Tensor::zeros(new_dims);
        const std::size_t new_cols = p.groups.size() * p.delta;
        for (std::size_t ri = 0; ri < p.rows.size(); ++ri)
            for (std::size_t gi = 0; gi < p.groups.size(); ++gi)
                for (std::size_t k = 0; k < p.delta; ++k)
                    nw.data[ri * new_cols + gi * p.delta + k] =
                        w.data[p.rows[ri] * old_cols + p.groups[gi] * p.delta + k];

        Tensor nb = Tensor::zeros({p.rows.size()});
        for (std::size_t ri = 0; ri < p.rows.size(); ++ri)
            nb.data[ri] = nd.bias.data[p.rows[ri]];

        nd.weights = std::move(nw);
        nd.bias = std::move(nb);
    }

    graph.validate();
    return result;
}

}  // namespace prm
