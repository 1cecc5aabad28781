// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
//
//   acceptance <source dir> [workers]

#include <Eigen/Dense>

#include <chrono>
#include <fstream>
#include <iostream>

#include "sgforms/experiments.hpp"

using namespace sgforms;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void report(int k, const Outcome& o, double secs, double budget) {
    const bool ok = o.pass && secs < budget;
    failures += !ok;
    char t[64];
    std::snprintf(t, sizeof t, "%.2f s / %.0f s", secs, budget);
    std::cout << (ok ? "PASS" : "FAIL") << "  criterion " << k << "  [" << t << "]  " << o.detail << (secs < budget ? "" : "  (over time budget)")
              << std::endl;
}

template <typename Fn>
void criterion(int k, double budget, Fn&& fn) {
    const auto start = Clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    report(k, o, std::chrono::duration<double>(Clock::now() - start).count(), budget);
}

std::string fmt(double x) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", x);
    return b;
}

// Minimiser of the level-(m+1) cell pair sum over the new vertices, from the
// normal equations assembled cell by cell.
std::vector<double> oracle_extension(const GridFunction<double>& g) {
    const int m = g.level();
    const Mesh& fine = mesh(m + 1);
    const auto nold = static_cast<Eigen::Index>(vertex_count(m));
    const auto n = static_cast<Eigen::Index>(fine.size()) - nold;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    for (const auto& cell : fine.cells)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                if (i == j) continue;
                // d/dx_p of (x_p - x_q)^2 summed over both orders: 4 (x_p - x_q)
                const auto p = static_cast<Eigen::Index>(cell[static_cast<std::size_t>(i)]);
                const auto q = static_cast<Eigen::Index>(cell[static_cast<std::size_t>(j)]);
                if (p < nold) continue;
                A(p - nold, p - nold) += 1;
                if (q < nold)
                    rhs(p - nold) += g[static_cast<std::size_t>(q)];
                else
                    A(p - nold, q - nold) -= 1;
            }
    Eigen::VectorXd x = A.ldlt().solve(rhs);
    return {x.data(), x.data() + x.size()};
}

const json* find_row(const json& rows, const std::string& function, const char* key, double value) {
    for (const auto& r : rows)
        if (r["function"] == function && r[key].get<double>() == value) return &r;
    return nullptr;
}

std::string read_without_timestamp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::string line, out;
    while (std::getline(in, line))
        if (line.find("\"timestamp\"") == std::string::npos) out += line + '\n';
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::cerr << "usage: acceptance <source dir> [workers]\n";
        return 2;
    }
    const fs::path root = argv[1];
    const unsigned workers = argc > 2 ? static_cast<unsigned>(std::stoul(argv[2])) : 8u;
    const fs::path golden_dir = root / "tests" / "golden" / "acceptance";
    const auto cfg = load_config(golden_dir / "config.json");
    RunOptions opt;
    opt.workers = workers;
    std::cout << "config " << (golden_dir / "config.json").string() << "  hash " << config_hash(cfg) << "  workers " << workers << std::endl;

    criterion(1, 1.0, [] {
        Outcome o;
        for (int m = 0; m <= 8; ++m) {
            const auto want = static_cast<std::size_t>((ipow(3.0, m + 1) + 3) / 2);
            if (mesh(m).size() != want || enumerate_vertices(m).size() != want) o = {false, "vertex count wrong at m=" + std::to_string(m)};
        }
        for (int n = 0; n <= 8 && o.pass; ++n) {
            Rational total = 0;
            for (std::uint64_t code = 0; code < pow3(n); ++code) total += Cell{Word::from_code(code, n)}.measure();
            if (total != 1) o = {false, "measure sum != 1 at n=" + std::to_string(n)};
            const Rational side = Rational(1, static_cast<long long>(std::uint64_t{1} << (2 * n)));
            const Mesh& g = mesh(n);
            for (const auto& c : g.cells)
                for (int i = 0; i < 3; ++i)
                    for (int j = i + 1; j < 3; ++j)
                        if (squared_distance(g.vertices[c[static_cast<std::size_t>(i)]], g.vertices[c[static_cast<std::size_t>(j)]]).exact() != side)
                            o = {false, "intra-cell distance != 2^-n at n=" + std::to_string(n)};
        }
        if (o.pass) o.detail = "#V_m = (3^(m+1)+3)/2 for m=0..8; measure sums and intra-cell distances exact for n=0..8";
        return o;
    });

    criterion(2, 5.0, [] {
        const auto a = local_energy_sequence(TestFunction::harmonic(1, 0, 0).grid(6), 6).a;
        double worst_a = 0;
        for (int n = 1; n <= 6; ++n) worst_a = std::max(worst_a, std::abs(a[static_cast<std::size_t>(n - 1)] - 4.0) / 4.0);
        double worst_ext = 0;
        std::uint64_t state = 12345;
        for (int m = 0; m <= 3; ++m)
            for (int rep = 0; rep < 3; ++rep) {
                std::vector<double> v(vertex_count(m));
                for (auto& x : v) {
                    state = splitmix64(state);
                    x = static_cast<double>(state >> 11) * 0x1.0p-53 * 2.0 - 1.0;
                }
                const GridFunction<double> g(m, v);
                const auto ext = harmonic_extend(g);
                const auto oracle = oracle_extension(g);
                for (std::size_t i = 0; i < oracle.size(); ++i) worst_ext = std::max(worst_ext, std::abs(ext[vertex_count(m) + i] - oracle[i]));
            }
        return Outcome{worst_a <= 1e-10 && worst_ext <= 1e-9,
                       "max |a_n-4|/4 (n=1..6) = " + fmt(worst_a) + " (<= 1e-10); max |extension - oracle| (m<=3) = " + fmt(worst_ext) + " (<= 1e-9)"};
    });

    std::vector<ResultTable> tables;
    criterion(3, 10.0, [&] {
        tables.push_back(run_monotone(cfg, opt));
        const auto& t = tables.back();
        double worst = 0;
        bool found = false;
        for (const auto& row : t.rows) {
            if (std::get<std::string>(row[0]) != "harmonic(1,0,0)") continue;
            found = true;
            const double lambda = std::get<double>(row[t.column("lambda")]);
            worst = std::max(worst, std::abs(std::get<double>(row[t.column("partial")]) - 4.0 * (1.0 - std::pow(5.0 * lambda, -30))));
        }
        const bool ok = found && cfg.monotone.tail_levels == 30 && t.verdicts.at("a_n_nondecreasing_exact") &&
                        t.verdicts.at("completed_nonincreasing_in_lambda") && worst <= 1e-9;
        return Outcome{ok, std::string("exact a_n nondecreasing: ") + (t.verdicts.at("a_n_nondecreasing_exact") ? "yes" : "no") +
                               "; nonincreasing in lambda: " + (t.verdicts.at("completed_nonincreasing_in_lambda") ? "yes" : "no") +
                               "; closed form error at N=30: " + fmt(worst)};
    });

    json equivalence;
    criterion(4, 300.0, [&] {
        tables.push_back(run_equivalence(cfg, opt));
        equivalence = to_json(tables.back(), config_hash(cfg), "");
        std::ifstream in(golden_dir / "equivalence.json");
        const json golden = json::parse(in);
        if (golden["metadata"]["config_hash"] != config_hash(cfg)) return Outcome{false, "golden was produced from a different config"};
        const double C = golden["summary"]["C"];
        double worst_drift = 0;
        bool inside = true;
        int count = 0;
        for (const auto& r : equivalence["rows"]) {
            if (r["ratio"].is_null()) continue;
            ++count;
            const double ratio = r["ratio"];
            inside = inside && ratio >= 1.0 / C && ratio <= C;
            const json* g = find_row(golden["rows"], r["function"], "beta", r["beta"]);
            if (!g) return Outcome{false, "row missing from golden"};
            worst_drift = std::max(worst_drift, std::abs(ratio / (*g)["ratio"].get<double>() - 1.0));
        }
        const bool ok = cfg.levels.grid == 9 && cfg.levels.truncation == 6 && count == 25 && inside && worst_drift <= 0.05;
        return Outcome{ok, "m=9 N=6, " + std::to_string(count) + " ratios in [" + fmt(equivalence["summary"]["min_ratio"]) + ", " +
                               fmt(equivalence["summary"]["max_ratio"]) + "] within [1/C, C], C = " + fmt(C) + "; max drift from golden " +
                               fmt(100 * worst_drift) + "% (<= 5%)"};
    });

    criterion(5, 300.0, [&] {
        if (equivalence.is_null()) return Outcome{false, "equivalence run missing"};
        double worst = 0;
        bool ok = cfg.mc.samples == 1000000;
        for (const auto& r : equivalence["rows"]) {
            worst = std::max(worst, r["mc_z"].get<double>());
            ok = ok && r["mc_agree"].get<bool>();
        }
        return Outcome{ok, "10^6 samples, seed " + std::to_string(cfg.seed()) + ": max |mc - annulus| / stderr = " + fmt(worst) + " (<= 3)"};
    });

    criterion(6, 300.0, [&] {
        if (equivalence.is_null()) return Outcome{false, "equivalence run missing"};
        bool ok = cfg.hoelder.coarse_level == 5 && cfg.hoelder.fine_level == 7;
        double worst = 0;
        int count = 0;
        for (const auto& h : equivalence["summary"]["hoelder"]) {
            const double r5 = h["ratio_coarse"], r7 = h["ratio_fine"];
            ++count;
            ok = ok && std::isfinite(r7) && r5 > 0 && std::abs(r7 / r5 - 1.0) <= 0.10;
            worst = std::max(worst, std::abs(r7 / r5 - 1.0));
        }
        ok = ok && count == 10;
        return Outcome{ok, std::to_string(count) + " (function, beta) pairs at beta 1.7, 2.2; max |r_7/r_5 - 1| = " + fmt(worst) + " (<= 0.10)"};
    });

    criterion(7, 10.0, [&] {
        tables.push_back(run_trace(cfg, opt));
        bool ok = tables.back().verdicts.at("termwise_inequality") && cfg.levels.truncation == 6;
        // the n = 0 term as well
        for (const auto& f : cfg.corpus) {
            const auto u = f.grid(cfg.levels.grid);
            const auto v = trace_restrict(u);
            ok = ok && interval_level_sum(v, 0) <= level_pair_sum(u, 0);
        }
        const auto exact = energy_minimizing_interpolation<Rational>({Rational(0), Rational(1), Rational(0)}, 1);
        const bool exact_mid = exact.at(DyadicPoint(1, 1, 0)) == Rational(2, 5);
        const auto v = trace_restrict(TestFunction::harmonic(0, 1, 0).grid(cfg.levels.grid));
        const bool float_mid = v.values[v.values.size() / 2] == 0.4;
        ok = ok && exact_mid && float_mid;
        return Outcome{ok, std::string("termwise inequality at n=0..6 for all functions and beta1: ") +
                               (tables.back().verdicts.at("termwise_inequality") ? "holds" : "fails") + "; trace of harmonic(0,1,0) at 1/2 = 2/5: " +
                               (exact_mid && float_mid ? "yes" : "no")};
    });

    criterion(8, 900.0, [&] {
        tables.push_back(run_kernels(cfg, opt));
        const auto& t = tables.back();
        std::vector<double> gaps;
        for (const auto& row : t.rows)
            if (std::get<std::string>(row[0]) == "harmonic(1,0,0)") gaps.push_back(std::abs(std::get<double>(row[t.column("weighted_energy")]) - 4.0) / 4.0);
        const std::size_t k = gaps.size();
        const bool trend = k >= 3 && gaps[k - 1] < gaps[k - 2] && gaps[k - 2] < gaps[k - 3];
        const bool ok = k == 4 && trend && gaps.back() <= 0.10 && t.verdicts.at("sandwich_where_slack_below_1") && t.verdicts.at("slack_strictly_decreasing");
        std::string g;
        for (double x : gaps) g += (g.empty() ? "" : ", ") + fmt(x);
        return Outcome{ok, "C-hat " + fmt(t.summary["c_hat"]) + " (" + t.summary["c_hat_source"].get<std::string>() +
                               "); sandwich where slack < 1: " + (t.verdicts.at("sandwich_where_slack_below_1") ? "holds" : "fails") +
                               "; slack decreasing: " + (t.verdicts.at("slack_strictly_decreasing") ? "yes" : "no") +
                               "; harmonic(1,0,0) rel gap i=1..4: " + g};
    });

    criterion(9, 900.0, [&] {
        // the tables above (run with `workers` threads) against two single-thread runs of `all`
        std::vector<ResultTable> ordered;
        for (const auto& name : suite_names())
            for (const auto& t : tables)
                if (t.suite == name) ordered.push_back(t);
        const auto base = fs::temp_directory_path() / ("sgforms_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(base);
        write_outputs(base / "a", cfg, ordered);
        RunOptions one;
        one.workers = 1;
        for (const char* sub : {"b", "c"}) {
            std::vector<ResultTable> again;
            for (const auto& name : suite_names()) again.push_back(run_suite(name, cfg, one));
            write_outputs(base / sub, cfg, again);
        }
        bool ok = ordered.size() == 4;
        int files = 0;
        for (const auto& entry : fs::directory_iterator(base / "a")) {
            const auto name = entry.path().filename();
            const auto a = read_without_timestamp(entry.path());
            ok = ok && a == read_without_timestamp(base / "b" / name) && a == read_without_timestamp(base / "c" / name);
            ++files;
        }
        fs::remove_all(base);
        return Outcome{ok && files == 9, std::to_string(files) + " output files byte-identical (timestamp excluded) across " + std::to_string(workers) +
                                             " vs 1 workers and a repeated run"};
    });

    std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
    return failures == 0 ? 0 : 1;
}
