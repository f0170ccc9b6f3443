#include <sys/wait.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "support.hpp"

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr combined
};

std::string prm_bin() {
    const char* bin = std::getenv("PRM_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "PRM_BIN must point at the prm binary");
    return bin;
}

RunResult run(const std::string& args, const std::string& env = "") {
    std::string cmd = env + (env.empty() ? "" : " ") + "\"" + prm_bin() + "\" " + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult res;
    std::array<char, 4096> buf;
    while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) res.output += buf.data();
    int status = ::pclose(pipe);
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return res;
}

void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back(static_cast<std::uint8_t>(x >> 24));
    v.push_back(static_cast<std::uint8_t>(x >> 16));
    v.push_back(static_cast<std::uint8_t>(x >> 8));
    v.push_back(static_cast<std::uint8_t>(x));
}

void write_idx_pair(const std::string& images_path, const std::string& labels_path,
                    std::size_t n, std::uint64_t seed) {
    std::vector<std::uint8_t> img;
    push_be32(img, 0x803);
    push_be32(img, static_cast<std::uint32_t>(n));
    push_be32(img, 28);
    push_be32(img, 28);
    std::uint64_t s = seed;
    auto next = [&s] {
        s = s * 6364136223846793005ULL + 1442695040888963407ULL;
        return static_cast<std::uint8_t>(s >> 56);
    };
    for (std::size_t i = 0; i < n * 28 * 28; ++i) img.push_back(next());

    std::vector<std::uint8_t> lab;
    push_be32(lab, 0x801);
    push_be32(lab, static_cast<std::uint32_t>(n));
    for (std::size_t i = 0; i < n; ++i) lab.push_back(static_cast<std::uint8_t>(next() % 10));

    std::ofstream fi(images_path, std::ios::binary);
    fi.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    std::ofstream fl(labels_path, std::ios::binary);
    fl.write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
    REQUIRE(bool(fi));
    REQUIRE(bool(fl));
}

// Synthetic MNIST-shaped directory plus a run config pointing at it.
struct CliFixture {
    testutil::TempDir tmp;
    std::string config;

    CliFixture() {
        write_idx_pair(tmp.file("train-images-idx3-ubyte"), tmp.file("train-labels-idx1-ubyte"),
                       32, 7);
        write_idx_pair(tmp.file("t10k-images-idx3-ubyte"), tmp.file("t10k-labels-idx1-ubyte"),
                       16, 8);
        config = tmp.file("run.cfg");
        std::ofstream f(config);
        f << "seed = 3\n"
          << "model = lenet5\n"
          << "data.mnist_dir = " << tmp.path.string() << "\n"
          << "train.epochs = 1\n"
          << "train.batch_size = 8\n"
          << "train.lr = 0.01\n"
          << "admm.rho = 0.01\n"
          << "admm.iterations = 2\n"
          << "admm.epochs_per_iteration = 1\n"
          << "admm.batch_size = 8\n"
          << "admm.lr = 0.005\n"
          << "retrain.epochs = 1\n"
          << "retrain.batch_size = 8\n"
          << "retrain.lr = 0.001\n"
          << "budget.conv1.filters = 10\n"
          << "budget.conv2.filters = 25\n"
          << "budget.fc1.columns = 400\n";
    }
};

}  // namespace

TEST_CASE("cli reports usage problems with exit code 2") {
    RunResult help = run("--help");
    CHECK(help.exit_code == 0);
    for (const char* sub :
         {"train", "admm", "retrain", "purify", "compact", "eval", "report", "pipeline"})
        CHECK(help.output.find(sub) != std::string::npos);

    CHECK(run("").exit_code == 2);                     // a subcommand is required
    CHECK(run("explode").exit_code == 2);              // unknown subcommand
    CHECK(run("train --bogus-flag").exit_code == 2);   // unknown flag
    CHECK(run("eval").exit_code == 2);                 // --in is required
    CHECK(run("purify --in x --th2 oops").exit_code == 2);

    RunResult bad_cfg = run("train --config /does/not/exist.cfg");
    CHECK(bad_cfg.exit_code == 2);
    CHECK(bad_cfg.output.find("cannot open config file") != std::string::npos);

    RunResult bad_set = run("train --set admm.rho");
    CHECK(bad_set.exit_code == 2);
    CHECK(bad_set.output.find("key=value") != std::string::npos);

    RunResult bad_key = run("train --set no.such.key=1");
    CHECK(bad_key.exit_code == 2);
    CHECK(bad_key.output.find("unknown config key") != std::string::npos);
}

TEST_CASE("cli reports data problems with exit code 3") {
    RunResult r = run("eval --in /does/not/exist.prmc");
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("error:") != std::string::npos);

    testutil::TempDir tmp;
    {
        std::ofstream f(tmp.file("junk.prmc"), std::ios::binary);
        f << "this is not a checkpoint";
    }
    RunResult junk = run("eval --in \"" + tmp.file("junk.prmc") + "\"");
    CHECK(junk.exit_code == 3);
    CHECK(junk.output.find("bad magic") != std::string::npos);
}

TEST_CASE("cli rejects a bad thread count before doing any work") {
    RunResult r = run("eval --in /irrelevant.prmc", "PRM_THREADS=abc");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("PRM_THREADS") != std::string::npos);
}

TEST_CASE("cli drives the whole pruning chain") {
    CliFixture fx;
    const std::string cfg = " --config \"" + fx.config + "\"";
    const std::string model = fx.tmp.file("model.prmc");
    const std::string pruned = fx.tmp.file("pruned.prmc");
    const std::string purified = fx.tmp.file("purified.prmc");

    RunResult train = run("train" + cfg + " --out \"" + model + "\"");
    REQUIRE_MESSAGE(train.exit_code == 0, train.output);
    CHECK(train.output.find("epoch") != std::string::npos);

    RunResult eval0 = run("eval --in \"" + model + "\"" + cfg, "PRM_THREADS=2");
    REQUIRE_MESSAGE(eval0.exit_code == 0, eval0.output);
    CHECK(eval0.output.find("accuracy") != std::string::npos);

    // admm without budgets is a configuration error
    RunResult no_budget = run("admm --in \"" + model + "\" --out \"" + pruned + "\"" +
                              " --set data.mnist_dir=" + fx.tmp.path.string());
    CHECK(no_budget.exit_code == 2);
    CHECK(no_budget.output.find("no layer budgets") != std::string::npos);

    // retrain before admm is a usage error: there is no mask yet
    RunResult early = run("retrain --in \"" + model + "\"" + cfg);
    CHECK(early.exit_code == 2);
    CHECK(early.output.find("mask") != std::string::npos);

    RunResult admm = run("admm" + cfg + " --in \"" + model + "\" --out \"" + pruned + "\"");
    REQUIRE_MESSAGE(admm.exit_code == 0, admm.output);
    CHECK(admm.output.find("admm iteration 1 ") != std::string::npos);
    CHECK(admm.output.find("admm iteration 2 ") != std::string::npos);
    CHECK(admm.output.find("hard prune:") != std::string::npos);

    RunResult retrain = run("retrain" + cfg + " --in \"" + pruned + "\" --out \"" + pruned + "\"");
    REQUIRE_MESSAGE(retrain.exit_code == 0, retrain.output);

    RunResult purify = run("purify" + cfg + " --in \"" + pruned + "\" --out \"" + purified +
                           "\" --th4 1e-12");
    REQUIRE_MESSAGE(purify.exit_code == 0, purify.output);
    CHECK(purify.output.find("purify:") != std::string::npos);
    CHECK(purify.output.find(" 0 structures") == std::string::npos);

    RunResult compacted =
        run("compact --in \"" + purified + "\" --out \"" + purified + "\"");
    REQUIRE_MESSAGE(compacted.exit_code == 0, compacted.output);
    CHECK(compacted.output.find("compact:") != std::string::npos);

    RunResult eval1 = run("eval --in \"" + purified + "\"" + cfg);
    REQUIRE_MESSAGE(eval1.exit_code == 0, eval1.output);
    CHECK(eval1.output.find("accuracy") != std::string::npos);

    RunResult csv = run("report --in \"" + purified + "\" --format csv");
    REQUIRE_MESSAGE(csv.exit_code == 0, csv.output);
    CHECK(csv.output.find(
              "layer,total,nonzero,live_filters,total_filters,live_columns,total_columns") !=
          std::string::npos);
    CHECK(csv.output.find("conv1,250,") != std::string::npos);  // 10 filters survive compaction
    CHECK(csv.output.find("TOTAL,") != std::string::npos);

    RunResult table = run("report --in \"" + purified + "\" --format table");
    REQUIRE_MESSAGE(table.exit_code == 0, table.output);
    CHECK(table.output.find("nonzero compression:") != std::string::npos);
    CHECK(table.output.find("structural compression:") != std::string::npos);
    CHECK(table.output.find("config:") != std::string::npos);  // echo rides the checkpoint

    const std::string report_path = fx.tmp.file("report.csv");
    RunResult to_file =
        run("report --in \"" + purified + "\" --format csv --file \"" + report_path + "\"");
    REQUIRE(to_file.exit_code == 0);
    std::ifstream f(report_path);
    std::string header;
    std::getline(f, header);
    CHECK(header == "layer,total,nonzero,live_filters,total_filters,live_columns,total_columns");

    // a numeric failure: thresholds that would empty a layer
    RunResult fatal = run("purify" + cfg + " --in \"" + model +
                          "\" --th1 1e18 --th2 0.5 --th3 1e18");
    CHECK(fatal.exit_code == 4);
    CHECK(fatal.output.find("last live channel") != std::string::npos);
}
