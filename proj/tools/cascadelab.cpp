// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cascadelab/experiment.hpp"

namespace {

using namespace cascadelab;

constexpr int kOk = 0;
constexpr int kConfigInvalid = 2;
constexpr int kRuntimeFailure = 3;

enum class Command { Run, Figures, Validate };

int execute(Command cmd, const std::string& path)
{
    ExperimentConfig cfg;
    std::size_t threads = 1;
    try {
        cfg = load_config(path);
        threads = resolve_threads(cfg);
    } catch (const std::exception& e) {
        std::cerr << "cascadelab: invalid config: " << e.what() << "\n";
        return kConfigInvalid;
    }
    if (cmd == Command::Validate) {
        std::cout << "ok " << to_string(cfg.kind) << " config_hash=" << cfg.hash << "\n";
        return kOk;
    }

    try {
        const auto start = std::chrono::steady_clock::now();
        Artifacts a = cmd == Command::Run ? run_experiment(cfg, threads) : emit_figure_data(cfg, threads);
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        // Wall time and thread count change between runs, so they live in a
        // sidecar and the main outputs stay byte-identical.
        Json timing = {{"config_hash", cfg.hash}, {"seed", cfg.seed}, {"threads", threads}, {"wall_seconds", wall}};
        const std::string suffix = cmd == Command::Run ? ".timing.json" : "_figures.timing.json";
        a.files.push_back({cfg.output_prefix + suffix, timing.dump(2) + "\n"});
        for (const auto& f : write_atomically(cfg.output_dir, a.files))
            std::cout << f << "\n";
    } catch (const std::exception& e) {
        std::cerr << "cascadelab: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return kOk;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Critical branching cascade simulator"};
    app.require_subcommand(1);
    std::string path;
    Command cmd = Command::Run;
    struct Entry
    {
        const char* name;
        const char* help;
        Command cmd;
    };
    for (const Entry& e : {Entry{"run", "Run the configured experiment", Command::Run},
                           Entry{"figures", "Write node tables for plotting", Command::Figures},
                           Entry{"validate", "Check a config without running it", Command::Validate}}) {
        auto* sub = app.add_subcommand(e.name, e.help);
        sub->add_option("config", path, "JSON config file")->required();
        sub->callback([&cmd, c = e.cmd] { cmd = c; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigInvalid;
    }
    return execute(cmd, path);
}
