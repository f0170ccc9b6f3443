#pragma once

#include <map>
#include <string>
#include <vector>

#include "prm/graph.hpp"

namespace prm {

// Threshold knobs for purification. th1 is the squared-norm floor below
// which a column counts as empty; th2 bounds the alive-column ratio and th3
// the mean column energy under which a channel group is discarded; th4 is
// the squared-norm floor for whole filters.
struct PurifyThresholds {
    double th1 = 0.0;
    double th2 = 0.0;
    double th3 = 0.0;
    double th4 = 0.0;
};

struct PurifyConfig {
    PurifyThresholds defaults;
    std::map<std::string, PurifyThresholds> per_layer;

    const PurifyThresholds& for_layer(const std::string& name) const {
        auto it = per_layer.find(name);
        return it == per_layer.end() ? defaults : it->second;
    }
};

// Fraction of a channel group's columns that are alive: squared norm both
// positive and >= th1. A group scoring below th2 is mostly hollow.
double emptiness_ratio(const Tensor& w, const ChannelColumnMap& map, std::size_t group,
                       double th1);

// Mean squared column norm over the group's columns.
double importance_score(const Tensor& w, const ChannelColumnMap& map, std::size_t group);

struct ChannelStats {
    std::size_t group = 0;
    double eta = 0.0;
    double sigma = 0.0;
    bool all_zero = true;
};

std::vector<ChannelStats> channel_stats(const Tensor& w, const ChannelColumnMap& map, double th1);

// One recorded mutation. Channel actions zero a column group; filter actions
// zero a row and its bias.
struct PurifyAction {
    enum class Kind { Channel, Filter };
    Kind kind = Kind::Channel;
    std::string layer;
    std::size_t index = 0;
    double eta = 0.0;    // channel only
    double sigma = 0.0;  // channel only
    double norm = 0.0;   // filter only: squared row norm at prune time
    double bias = 0.0;   // filter only: bias value discarded with the filter
    std::string rule;    // "th" / "propagated" for channels, "th4" / "propagated" for filters

    bool operator==(const PurifyAction&) const = default;
};

std::string to_line(const PurifyAction& a);
PurifyAction parse_line(const std::string& line);

// Threshold-guided structural cleanup, run to a fixpoint: hollow channel
// groups and weak filters are zeroed, and structures whose every producer or
// consumer is already dead are zeroed exactly. Throws NumericError before an
// action would leave a layer without live filters or live channels.
std::vector<PurifyAction> purify(LayerGraph& graph, const PurifyConfig& config);

// Exact dead-structure propagation only: no thresholds, no accuracy change.
// A filter is blank when its weights and bias are all zero; a channel group
// is dead when its columns are all zero. Implemented as a plain liveness
// fixpoint over the wiring, independent of the threshold machinery.
std::vector<PurifyAction> propagate_unused_paths(LayerGraph& graph);

// Re-apply a recorded action list to an identically shaped graph.
void apply_purify_log(LayerGraph& graph, const std::vector<PurifyAction>& actions);

// Physically shrink tensors: drop blank filters and dead channel groups
// consistently across the wiring (residualAdd branches keep the union of
// their live indices; the input and logits boundaries are never compacted).
struct CompactResult {
    std::map<std::string, std::vector<std::size_t>> kept_filters;
    std::map<std::string, std::vector<std::size_t>> kept_groups;
};

CompactResult compact(LayerGraph& graph);

}  // namespace prm
