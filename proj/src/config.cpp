#include "prm/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "prm/errors.hpp"

namespace prm {

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& val) {
    try {
        std::size_t used = 0;
        double v = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': bad number '" + val + "'");
    }
}

std::uint64_t parse_uint(const std::string& key, const std::string& val) {
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(val, &used);
        if (used != val.size() || (!val.empty() && val[0] == '-'))
            throw std::invalid_argument(val);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': bad integer '" + val + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1") return true;
    if (val == "false" || val == "0") return false;
    throw UsageError("config key '" + key + "': bad boolean '" + val + "'");
}

OptimizerKind parse_optimizer(const std::string& key, const std::string& val) {
    if (val == "adam") return OptimizerKind::Adam;
    if (val == "sgd") return OptimizerKind::Sgd;
    throw UsageError("config key '" + key + "': unknown optimizer '" + val + "'");
}

double parse_budget_value(const std::string& key, const std::string& val) {
    double v = parse_double(key, val);
    if (v <= 0.0)
        throw UsageError("config key '" + key + "': budget must be positive (omit the key to "
                         "leave the dimension unconstrained)");
    if (v >= 1.0 && v != std::floor(v))
        throw UsageError("config key '" + key + "': keep-counts must be whole numbers");
    return v;
}

// purify.thN or purify.<layer>.thN
bool apply_purify_key(RunConfig& cfg, const std::string& key, const std::string& val) {
    std::string rest = key.substr(7);  // past "purify."
    PurifyThresholds* th = &cfg.purify.defaults;
    auto dot = rest.rfind('.');
    if (dot != std::string::npos) {
        // Per-layer blocks start from the defaults configured so far, so set
        // purify.thN before purify.<layer>.thN.
        std::string layer = rest.substr(0, dot);
        th = &cfg.purify.per_layer.try_emplace(layer, cfg.purify.defaults).first->second;
        rest = rest.substr(dot + 1);
    }
    double v = parse_double(key, val);
    if (v < 0.0) throw UsageError("config key '" + key + "': thresholds are non-negative");
    if (rest == "th1")
        th->th1 = v;
    else if (rest == "th2")
        th->th2 = v;
    else if (rest == "th3")
        th->th3 = v;
    else if (rest == "th4")
        th->th4 = v;
    else
        return false;
    return true;
}

// budget.<layer>.filters / budget.<layer>.columns
bool apply_budget_key(RunConfig& cfg, const std::string& key, const std::string& val) {
    std::string rest = key.substr(7);  // past "budget."
    auto dot = rest.rfind('.');
    if (dot == std::string::npos) return false;
    std::string layer = rest.substr(0, dot);
    std::string which = rest.substr(dot + 1);
    if (layer.empty()) return false;
    double v = parse_budget_value(key, val);
    if (which == "filters")
        cfg.budgets[layer].filters = v;
    else if (which == "columns")
        cfg.budgets[layer].columns = v;
    else
        return false;
    return true;
}

}  // namespace

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
    bool ok = true;
    if (key == "seed")
        cfg.seed = parse_uint(key, value);
    else if (key == "deterministic")
        cfg.deterministic = parse_bool(key, value);
    else if (key == "model") {
        if (value != "lenet5" && value != "tiny-resnet")
            throw UsageError("config key 'model': unknown model '" + value + "'");
        cfg.model = value;
    } else if (key == "data.mnist_dir")
        cfg.mnist_dir = value;
    else if (key == "data.cifar_files" || key == "data.cifar_test_files") {
        auto& files = key == "data.cifar_files" ? cfg.cifar_files : cfg.cifar_test_files;
        files.clear();
        std::istringstream in(value);
        std::string part;
        while (std::getline(in, part, ',')) {
            part = trim(part);
            if (!part.empty()) files.push_back(part);
        }
    } else if (key == "train.epochs")
        cfg.train.epochs = static_cast<int>(parse_uint(key, value));
    else if (key == "train.batch_size")
        cfg.train.batch_size = parse_uint(key, value);
    else if (key == "train.lr")
        cfg.train.hyper.lr = parse_double(key, value);
    else if (key == "train.optimizer")
        cfg.train.hyper.kind = parse_optimizer(key, value);
    else if (key == "admm.rho")
        cfg.admm.rho = parse_double(key, value);
    else if (key == "admm.iterations")
        cfg.admm.iterations = static_cast<int>(parse_uint(key, value));
    else if (key == "admm.epochs_per_iteration")
        cfg.admm.epochs_per_iteration = static_cast<int>(parse_uint(key, value));
    else if (key == "admm.lr")
        cfg.admm.train.hyper.lr = parse_double(key, value);
    else if (key == "admm.batch_size")
        cfg.admm.train.batch_size = parse_uint(key, value);
    else if (key == "retrain.epochs")
        cfg.retrain.epochs = static_cast<int>(parse_uint(key, value));
    else if (key == "retrain.lr")
        cfg.retrain.hyper.lr = parse_double(key, value);
    else if (key == "retrain.batch_size")
        cfg.retrain.batch_size = parse_uint(key, value);
    else if (key == "report.format") {
        if (value == "csv")
            cfg.report_format = ReportFormat::Csv;
        else if (value == "table")
            cfg.report_format = ReportFormat::Table;
        else
            throw UsageError("config key 'report.format': want csv or table");
    } else if (key.rfind("purify.", 0) == 0)
        ok = apply_purify_key(cfg, key, value);
    else if (key.rfind("budget.", 0) == 0)
        ok = apply_budget_key(cfg, key, value);
    else
        ok = false;
    if (!ok) throw UsageError("unknown config key '" + key + "'");
    cfg.raw[key] = value;
}

RunConfig parse_config_text(const std::string& text, const std::string& what) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(what + ":" + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw UsageError(what + ":" + std::to_string(lineno) + ": empty key");
        if (auto it = seen.find(key); it != seen.end())
            throw UsageError(what + ":" + std::to_string(lineno) + ": duplicate key '" + key +
                             "' (first set on line " + std::to_string(it->second) + ")");
        seen[key] = lineno;
        try {
            apply_override(cfg, key, val);
        } catch (const UsageError& e) {
            throw UsageError(what + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config_text(buf.str(), path);
}

BudgetMap resolve_budgets(const RunConfig& cfg, const LayerGraph& graph) {
    BudgetMap out;
    for (const auto& [layer, spec] : cfg.budgets) {
        int id = graph.node_id(layer);
        if (id < 0 || !graph.nodes[static_cast<std::size_t>(id)].weighted())
            throw UsageError("budget for unknown or unweighted layer '" + layer + "'");
        const Tensor& w = graph.nodes[static_cast<std::size_t>(id)].weights;

        auto resolve = [&](double v, std::size_t dim, const char* which) -> std::size_t {
            if (v == 0.0) return 0;
            std::size_t n = v < 1.0 ? static_cast<std::size_t>(std::ceil(v * static_cast<double>(dim)))
                                    : static_cast<std::size_t>(v);
            if (n == 0) n = 1;
            if (n > dim)
                throw UsageError("budget." + layer + "." + which + " exceeds layer dimension " +
                                 std::to_string(dim));
            return n;
        };
        StructuredBudget b;
        b.keep_filters = resolve(spec.filters, lowered_rows(w), "filters");
        b.keep_columns = resolve(spec.columns, lowered_cols(w), "columns");
        if (b.constrained()) out[layer] = b;
    }
    return out;
}

}  // namespace prm
