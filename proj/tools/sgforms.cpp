// Command-line driver for the experiment suites.
//
//   sgforms <verb> --config cfg.json [--out dir] [--seed s] [--level m] [--workers k]
//   sgforms dump-gasket --level m [--out file.csv]
//
// Exit codes: 0 every verdict passed, 1 a verdict failed, 2 config or resource error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <thread>

#include "sgforms/experiments.hpp"

namespace {

struct Args {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> level;
    unsigned workers = std::max(1u, std::thread::hardware_concurrency());
};

sgforms::ExperimentConfig load(const Args& a) {
    auto j = [&] {
        std::ifstream in(a.config);
        if (!in) throw sgforms::ConfigError({"cannot read config file " + a.config});
        try {
            return nlohmann::json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw sgforms::ConfigError({std::string("config is not valid JSON: ") + e.what()});
        }
    }();
    // overrides go through the same validation as the file itself
    if (j.is_object()) {
        if (a.seed) j["mc"]["seed"] = *a.seed;
        if (a.level) {
            j["levels"]["grid"] = *a.level;
            j["levels"]["quadrature"] = *a.level;
        }
        if (!a.out.empty()) j["output"] = a.out;
    }
    return sgforms::parse_config(j);
}

int run(const std::vector<std::string>& suites, const Args& a) {
    const auto cfg = load(a);
    sgforms::RunOptions opt;
    opt.workers = a.workers;
    std::vector<sgforms::ResultTable> tables;
    for (const auto& s : suites) {
        const auto start = std::chrono::steady_clock::now();
        tables.push_back(sgforms::run_suite(s, cfg, opt));
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::cerr << s << ": " << tables.back().rows.size() << " rows in " << secs << " s\n";
    }
    sgforms::write_outputs(cfg.output, cfg, tables);
    bool ok = true;
    for (const auto& t : tables)
        for (const auto& [name, pass] : t.verdicts) {
            std::cout << (pass ? "PASS " : "FAIL ") << t.suite << '.' << name << '\n';
            ok = ok && pass;
        }
    std::cout << "config_hash " << sgforms::config_hash(cfg) << "\noutput " << cfg.output << '\n';
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete and Besov energies on the Sierpinski gasket: experiment driver"};
    app.require_subcommand(1);
    Args a;
    std::vector<std::string> chosen;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", a.config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", a.out, "output directory (overrides config)");
        sub->add_option("--seed", a.seed, "random seed (overrides config)");
        sub->add_option("--level", a.level, "grid and quadrature level (overrides config)");
        sub->add_option("--workers", a.workers, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
    };
    for (const auto& name : sgforms::suite_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " suite");
        add_common(sub);
        sub->callback([&, name] { chosen = {name}; });
    }
    auto* all = app.add_subcommand("all", "run every suite");
    add_common(all);
    all->callback([&] { chosen = sgforms::suite_names(); });

    int dump_level = 3;
    std::string dump_out;
    auto* dump = app.add_subcommand("dump-gasket", "write the level-m vertex table as CSV");
    dump->add_option("--level", dump_level, "mesh level")->check(CLI::Range(0, sgforms::kMaxMeshLevel));
    dump->add_option("--out", dump_out, "output file (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (dump->parsed()) {
            if (dump_out.empty()) {
                sgforms::write_vertices_csv(std::cout, dump_level);
            } else {
                std::ofstream os(dump_out);
                if (!os) throw std::runtime_error("cannot write " + dump_out);
                sgforms::write_vertices_csv(os, dump_level);
            }
            return 0;
        }
        return run(chosen, a);
    } catch (const sgforms::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
