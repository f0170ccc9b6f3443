#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "prm/dataio.hpp"
#include "prm/graph.hpp"

namespace prm {

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    std::size_t count = 0;
};

// Top-1 accuracy and mean cross-entropy. Per-sample losses are accumulated
// in dataset order, so the result is independent of batch_size.
EvalResult evaluate(const LayerGraph& graph, const Dataset& ds, std::size_t batch_size = 256);

struct LayerStats {
    std::string name;
    std::size_t total = 0;
    std::size_t nonzero = 0;
    std::size_t live_filters = 0;
    std::size_t total_filters = 0;
    std::size_t live_columns = 0;
    std::size_t total_columns = 0;

    // Dense storage of the live sub-matrix in the lowered view.
    std::size_t structural() const { return live_filters * live_columns; }
};

struct CompressionStats {
    std::vector<LayerStats> layers;
    std::size_t total = 0;
    std::size_t nonzero = 0;
    std::size_t structural = 0;
    std::size_t baseline_total = 0;  // uncompressed reference weight count

    double nonzero_rate() const;     // baseline_total / nonzero
    double structural_rate() const;  // baseline_total / structural
};

// Weight-level and structure-level counts per layer; biases are excluded.
// A filter is live when its row or bias is nonzero; a column is live when
// any weight in it is nonzero. `baseline` supplies pre-compaction per-layer
// totals (defaults to the current totals).
CompressionStats compression_stats(const LayerGraph& graph,
                                   const std::map<std::string, std::size_t>* baseline = nullptr);

enum class ReportFormat { Csv, Table };

// Csv: pinned header row plus one row per layer and a TOTAL row.
// Table: aligned columns, compression rates, and a config echo.
void emit_report(std::ostream& out, const CompressionStats& stats, ReportFormat format,
                 const std::map<std::string, std::string>& config_echo = {});

}  // namespace prm
