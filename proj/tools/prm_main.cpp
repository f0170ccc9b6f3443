#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prm/errors.hpp"
#include "prm/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string in_path;
    std::string out_path;
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_in) {
    cmd->add_option("--config", args.config_path, "run configuration file");
    auto* in = cmd->add_option("--in", args.in_path, "input checkpoint");
    if (needs_in) in->required();
    cmd->add_option("--out", args.out_path, "output checkpoint");
    cmd->add_option("--set", args.overrides, "config override key=value (repeatable)")
        ->expected(-1);
}

prm::RunConfig make_config(const CommonArgs& args, const std::vector<std::string>& extra = {}) {
    prm::RunConfig cfg;
    if (!args.config_path.empty()) cfg = prm::parse_config_file(args.config_path);
    for (const std::string& kv : args.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw prm::UsageError("--set wants key=value, got '" + kv + "'");
        prm::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const std::string& kv : extra) {
        auto eq = kv.find('=');
        prm::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structured pruning toolkit"};
    app.require_subcommand(1);

    CommonArgs train_args, admm_args, retrain_args, purify_args, compact_args, eval_args,
        report_args, pipeline_args;

    // Frequently used knobs that are nicer as first-class flags.
    std::string rho, seed, th1, th2, th3, th4, deterministic;
    auto add_knobs = [&](CLI::App* cmd) {
        cmd->add_option("--rho", rho, "admm penalty weight");
        cmd->add_option("--seed", seed, "run seed");
        cmd->add_option("--th1", th1, "column emptiness floor");
        cmd->add_option("--th2", th2, "alive-ratio ceiling");
        cmd->add_option("--th3", th3, "importance ceiling");
        cmd->add_option("--th4", th4, "filter norm floor");
        cmd->add_option("--deterministic", deterministic, "true|false");
    };
    auto knob_overrides = [&]() {
        std::vector<std::string> out;
        if (!rho.empty()) out.push_back("admm.rho=" + rho);
        if (!seed.empty()) out.push_back("seed=" + seed);
        if (!th1.empty()) out.push_back("purify.th1=" + th1);
        if (!th2.empty()) out.push_back("purify.th2=" + th2);
        if (!th3.empty()) out.push_back("purify.th3=" + th3);
        if (!th4.empty()) out.push_back("purify.th4=" + th4);
        if (!deterministic.empty()) out.push_back("deterministic=" + deterministic);
        return out;
    };

    auto* c_train = app.add_subcommand("train", "train a fresh model");
    add_common(c_train, train_args, false);
    add_knobs(c_train);

    auto* c_admm = app.add_subcommand("admm", "run admm iterations and hard-prune");
    add_common(c_admm, admm_args, true);
    add_knobs(c_admm);

    auto* c_retrain = app.add_subcommand("retrain", "masked fine-tuning on the pruned support");
    add_common(c_retrain, retrain_args, true);
    add_knobs(c_retrain);

    auto* c_purify = app.add_subcommand("purify", "threshold purification");
    add_common(c_purify, purify_args, true);
    add_knobs(c_purify);

    auto* c_compact = app.add_subcommand("compact", "physically drop dead structures");
    add_common(c_compact, compact_args, true);

    auto* c_eval = app.add_subcommand("eval", "test-set accuracy and loss");
    add_common(c_eval, eval_args, true);

    std::string report_format, report_file;
    auto* c_report = app.add_subcommand("report", "compression statistics");
    add_common(c_report, report_args, true);
    c_report->add_option("--format", report_format, "csv|table");
    c_report->add_option("--file", report_file, "write to file instead of stdout");

    auto* c_pipeline = app.add_subcommand("pipeline", "full train/prune/purify run");
    add_common(c_pipeline, pipeline_args, false);
    add_knobs(c_pipeline);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        prm::configure_threads();
        std::ostream* log = &std::cout;

        if (c_train->parsed()) {
            prm::RunConfig cfg = make_config(train_args, knob_overrides());
            prm::RunState st = prm::fresh_model(cfg);
            prm::Dataset train = prm::load_train_data(cfg);
            prm::stage_train(st, cfg, train, log);
            if (!train_args.out_path.empty()) prm::save_state(train_args.out_path, st, cfg);
        } else if (c_admm->parsed()) {
            prm::RunConfig cfg = make_config(admm_args, knob_overrides());
            prm::RunState st = prm::load_state(admm_args.in_path);
            prm::Dataset train = prm::load_train_data(cfg);
            prm::stage_admm(st, cfg, train, log);
            if (!admm_args.out_path.empty()) prm::save_state(admm_args.out_path, st, cfg);
        } else if (c_retrain->parsed()) {
            prm::RunConfig cfg = make_config(retrain_args, knob_overrides());
            prm::RunState st = prm::load_state(retrain_args.in_path);
            prm::Dataset train = prm::load_train_data(cfg);
            prm::stage_retrain(st, cfg, train, log);
            if (!retrain_args.out_path.empty()) prm::save_state(retrain_args.out_path, st, cfg);
        } else if (c_purify->parsed()) {
            prm::RunConfig cfg = make_config(purify_args, knob_overrides());
            prm::RunState st = prm::load_state(purify_args.in_path);
            prm::stage_purify(st, cfg, log);
            if (!purify_args.out_path.empty()) prm::save_state(purify_args.out_path, st, cfg);
        } else if (c_compact->parsed()) {
            prm::RunConfig cfg = make_config(compact_args);
            prm::RunState st = prm::load_state(compact_args.in_path);
            prm::stage_compact(st, log);
            if (!compact_args.out_path.empty()) prm::save_state(compact_args.out_path, st, cfg);
        } else if (c_eval->parsed()) {
            prm::RunConfig cfg = make_config(eval_args);
            prm::RunState st = prm::load_state(eval_args.in_path);
            prm::Dataset test = prm::load_test_data(cfg);
            prm::EvalResult r = prm::evaluate(st.graph, test);
            std::cout << "accuracy " << r.accuracy << "  mean_loss " << r.mean_loss << "  n "
                      << r.count << "\n";
        } else if (c_report->parsed()) {
            prm::RunConfig cfg = make_config(report_args);
            if (!report_format.empty())
                prm::apply_override(cfg, "report.format", report_format);
            prm::RunState st = prm::load_state(report_args.in_path);
            prm::CompressionStats stats = prm::stats_of(st);

            std::map<std::string, std::string> echo;
            std::istringstream in(st.extras.config_echo);
            std::string line;
            while (std::getline(in, line)) {
                auto eq = line.find('=');
                if (eq == std::string::npos) continue;
                auto strip = [](std::string s) {
                    auto b = s.find_first_not_of(' ');
                    auto e = s.find_last_not_of(' ');
                    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
                };
                echo[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
            }

            if (report_file.empty()) {
                prm::emit_report(std::cout, stats, cfg.report_format, echo);
            } else {
                std::ofstream f(report_file);
                if (!f) throw prm::DataError("cannot open '" + report_file + "' for writing");
                prm::emit_report(f, stats, cfg.report_format, echo);
            }
        } else if (c_pipeline->parsed()) {
            prm::RunConfig cfg = make_config(pipeline_args, knob_overrides());
            prm::RunState st = pipeline_args.in_path.empty()
                                   ? prm::fresh_model(cfg)
                                   : prm::load_state(pipeline_args.in_path);
            prm::Dataset train = prm::load_train_data(cfg);
            prm::Dataset test = prm::load_test_data(cfg);
            prm::PipelineResult res = prm::run_pipeline(st, cfg, train, test, log);
            if (!pipeline_args.out_path.empty()) prm::save_state(pipeline_args.out_path, st, cfg);
            std::cout << "final: accuracy " << res.after_purify.accuracy << "  nonzero rate "
                      << res.stats_purified.nonzero_rate() << "x  structural rate "
                      << res.stats_purified.structural_rate() << "x\n";
        }
        return 0;
    } catch (const prm::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const prm::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const prm::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const prm::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}
