// towerlab: run, verify and sweep experiments from a flat key = value config.

#include <CLI11.hpp>

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "towerlab/config.hpp"
#include "towerlab/pipeline.hpp"

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quenched correlation decay on random towers"};
    app.set_version_flag("--version", towerlab::kVersion);
    app.require_subcommand(1);

    std::string config_path, only, param, values;
    int workers = 0;
    app.add_option("--workers", workers, "worker threads (overrides run.workers)")->check(CLI::PositiveNumber);

    auto* run = app.add_subcommand("run", "run the full pipeline and write a results directory");
    run->add_option("config", config_path, "config file")->required();

    auto* verify = app.add_subcommand("verify", "run the named checks and report pass/fail");
    verify->add_option("config", config_path, "config file")->required();
    verify->add_option("--only", only, "run a single check");

    auto* sweep = app.add_subcommand("sweep", "run the pipeline once per value of one key");
    sweep->add_option("config", config_path, "config file")->required();
    sweep->add_option("--param", param, "dotted config key")->required();
    sweep->add_option("--values", values, "comma-separated values")->required();

    auto* checks = app.add_subcommand("checks", "list check names");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (checks->parsed()) {
        for (const std::string& n : towerlab::check_names()) std::cout << n << "\n";
        return 0;
    }

    try {
        towerlab::Config cfg = towerlab::load_config(config_path);
        if (workers > 0) cfg.run.workers = workers;
        if (run->parsed()) {
            std::string dir;
            const int code = towerlab::run_experiment(cfg, std::cerr, &dir);
            std::cout << dir << "\n";
            return code;
        }
        if (verify->parsed()) return towerlab::verify_suite(cfg, only, std::cout);
        if (sweep->parsed()) return towerlab::sweep(cfg, param, split_list(values), std::cerr);
    } catch (const towerlab::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
    return 3;
}
