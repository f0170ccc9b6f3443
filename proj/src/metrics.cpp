#include "prm/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <iomanip>

#include "prm/errors.hpp"
#include "prm/nn.hpp"

namespace prm {

EvalResult evaluate(const LayerGraph& graph, const Dataset& ds, std::size_t batch_size) {
    if (ds.size() == 0) throw DataError("empty dataset");
    if (batch_size == 0) throw UsageError("batch_size must be positive");

    EvalResult res;
    res.count = ds.size();
    std::size_t correct = 0;
    double loss_sum = 0.0;
    std::vector<double> losses;

    for (std::size_t at = 0; at < ds.size(); at += batch_size) {
        std::size_t end = std::min(ds.size(), at + batch_size);
        Batch batch = ds.batch_range(at, end);
        Tensor logits = graph_forward(graph, batch.images);

        std::size_t n = batch.size();
        std::size_t k = graph.num_classes;
        for (std::size_t i = 0; i < n; ++i) {
            const double* row = logits.data.data() + i * k;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (row[c] > row[best]) best = c;
            if (static_cast<int>(best) == batch.labels[i]) ++correct;
        }
        per_sample_cross_entropy(logits, batch.labels, losses);
        for (double l : losses) loss_sum += l;
    }

    res.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    res.mean_loss = loss_sum / static_cast<double>(ds.size());
    return res;
}

double CompressionStats::nonzero_rate() const {
    return nonzero == 0 ? 0.0 : static_cast<double>(baseline_total) / static_cast<double>(nonzero);
}

double CompressionStats::structural_rate() const {
    return structural == 0 ? 0.0
                           : static_cast<double>(baseline_total) / static_cast<double>(structural);
}

CompressionStats compression_stats(const LayerGraph& graph,
                                   const std::map<std::string, std::size_t>* baseline) {
    CompressionStats cs;
    for (int id : graph.weighted_ids()) {
        const LayerNode& nd = graph.nodes[static_cast<std::size_t>(id)];
        const Tensor& w = nd.weights;
        const std::size_t rows = lowered_rows(w);
        const std::size_t cols = lowered_cols(w);

        LayerStats ls;
        ls.name = nd.name;
        ls.total = w.numel();
        ls.nonzero = w.count_nonzero();
        ls.total_filters = rows;
        ls.total_columns = cols;

        for (std::size_t r = 0; r < rows; ++r) {
            bool any = nd.bias.data[r] != 0.0;
            for (std::size_t c = 0; c < cols && !any; ++c) any = w.data[r * cols + c] != 0.0;
            if (any) ++ls.live_filters;
        }
        for (std::size_t c = 0; c < cols; ++c) {
            bool any = false;
            for (std::size_t r = 0; r < rows && !any; ++r) any = w.data[r * cols + c] != 0.0;
            if (any) ++ls.live_columns;
        }

        cs.total += ls.total;
        cs.nonzero += ls.nonzero;
        cs.structural += ls.structural();
        cs.baseline_total +=
            baseline && baseline->count(nd.name) ? baseline->at(nd.name) : ls.total;
        cs.layers.push_back(std::move(ls));
    }
    return cs;
}

void emit_report(std::ostream& out, const CompressionStats& stats, ReportFormat format,
                 const std::map<std::string, std::string>& config_echo) {
    if (format == ReportFormat::Csv) {
        out << "layer,total,nonzero,live_filters,total_filters,live_columns,total_columns\n";
        for (const LayerStats& ls : stats.layers)
            out << ls.name << ',' << ls.total << ',' << ls.nonzero << ',' << ls.live_filters << ','
                << ls.total_filters << ',' << ls.live_columns << ',' << ls.total_columns << '\n';
        out << "TOTAL," << stats.total << ',' << stats.nonzero << ",,,,\n";
        return;
    }

    auto line = [&](const std::string& name, std::size_t total, std::size_t nonzero,
                    const std::string& filters, const std::string& columns) {
        out << std::left << std::setw(10) << name << std::right << std::setw(10) << total
            << std::setw(10) << nonzero << std::setw(14) << filters << std::setw(14) << columns
            << '\n';
    };

    out << std::left << std::setw(10) << "layer" << std::right << std::setw(10) << "total"
        << std::setw(10) << "nonzero" << std::setw(14) << "filters" << std::setw(14) << "columns"
        << '\n';
    for (const LayerStats& ls : stats.layers) {
        line(ls.name, ls.total, ls.nonzero,
             std::to_string(ls.live_filters) + "/" + std::to_string(ls.total_filters),
             std::to_string(ls.live_columns) + "/" + std::to_string(ls.total_columns));
    }
    line("TOTAL", stats.total, stats.nonzero, "", "");

    char buf[128];
    std::snprintf(buf, sizeof buf, "%.2f", stats.nonzero_rate());
    out << "nonzero compression: " << buf << "x\n";
    std::snprintf(buf, sizeof buf, "%.2f", stats.structural_rate());
    out << "structural compression: " << buf << "x\n";
    if (!config_echo.empty()) {
        out << "config:\n";
        for (const auto& [k, v] : config_echo) out << "  " << k << " = " << v << '\n';
    }
}

}  // namespace prm
