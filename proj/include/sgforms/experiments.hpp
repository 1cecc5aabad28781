#pragma once

// Experiment driver: strict JSON config, the four suites, result tables
// (CSV + JSON), golden comparison and the run manifest.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgforms/functions.hpp"
#include "sgforms/kernels.hpp"
#include "sgforms/parallel.hpp"
#include "sgforms/seminorms.hpp"

#ifndef SGFORMS_VERSION
#define SGFORMS_VERSION "0.1.0"
#endif

namespace sgforms {

using nlohmann::json;

/// Invalid configuration; carries every problem found.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> problems) : std::runtime_error(join(problems)), problems_(std::move(problems)) {}
    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid config:";
        for (const auto& x : p) s += "\n  - " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

struct ExperimentConfig {
    struct Levels {
        int grid = 7;
        int truncation = 5;
        int quadrature = 7;
    };
    struct Mc {
        std::uint64_t samples = 100000;
        std::optional<std::uint64_t> seed;
    };
    struct Kernel {
        int i_max = 4;
        int gamma = 0;  ///< 0: minimal admissible
        std::string delta_schedule = "one_minus_two_pow_neg_i";
        std::string beta_schedule = "beta_star_minus_halving";
        std::optional<double> c_hat;
        std::string estimator = "pairsum";
        int explicit_cap = 7;
        std::uint64_t mc_samples_per_pair = 16;
    };
    struct Monotone {
        std::vector<double> lambda_grid{0.21, 0.24, 0.27, 0.30, 0.33};
        int tail_levels = 30;
    };
    struct Hoelder {
        std::vector<double> betas{1.7, 2.2};
        int coarse_level = 5;
        int fine_level = 7;
    };

    int version = 1;
    std::vector<TestFunction> corpus;
    std::vector<double> beta_grid;
    Levels levels;
    Mc mc;
    Kernel kernel;
    Monotone monotone;
    Hoelder hoelder;
    std::string output = "out";

    std::uint64_t seed() const { return mc.seed.value_or(0); }
};

inline json to_json(const ExperimentConfig& c) {
    json corpus = json::array();
    for (const auto& f : c.corpus) corpus.push_back(to_json(f));
    json kernel{{"i_max", c.kernel.i_max},
                {"gamma", c.kernel.gamma},
                {"delta_schedule", c.kernel.delta_schedule},
                {"beta_schedule", c.kernel.beta_schedule},
                {"estimator", c.kernel.estimator},
                {"explicit_cap", c.kernel.explicit_cap},
                {"mc_samples_per_pair", c.kernel.mc_samples_per_pair}};
    if (c.kernel.c_hat) kernel["c_hat"] = *c.kernel.c_hat;
    json mc{{"samples", c.mc.samples}};
    if (c.mc.seed) mc["seed"] = *c.mc.seed;
    return json{{"version", c.version},
                {"corpus", corpus},
                {"beta_grid", c.beta_grid},
                {"levels", {{"grid", c.levels.grid}, {"truncation", c.levels.truncation}, {"quadrature", c.levels.quadrature}}},
                {"mc", mc},
                {"kernel", kernel},
                {"monotone", {{"lambda_grid", c.monotone.lambda_grid}, {"tail_levels", c.monotone.tail_levels}}},
                {"hoelder", {{"betas", c.hoelder.betas}, {"coarse_level", c.hoelder.coarse_level}, {"fine_level", c.hoelder.fine_level}}},
                {"output", c.output}};
}

namespace detail {

class ConfigReader {
public:
    std::vector<std::string> problems;

    void allow(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
        if (!j.is_object()) {
            problems.push_back(where + " must be an object");
            return;
        }
        for (const auto& [k, _] : j.items()) {
            bool ok = false;
            for (const char* key : keys) ok = ok || k == key;
            if (!ok) problems.push_back("unknown field " + where + "." + k);
        }
    }

    template <typename T>
    void read(const json& j, const char* key, const std::string& where, T& out, bool required) {
        if (!j.is_object() || !j.contains(key)) {
            if (required) problems.push_back("missing field " + where + "." + key);
            return;
        }
        try {
            out = j.at(key).get<T>();
        } catch (const std::exception& e) {
            problems.push_back("bad value for " + where + "." + key + ": " + e.what());
        }
    }

    void check(bool ok, const std::string& msg) {
        if (!ok) problems.push_back(msg);
    }
};

}  // namespace detail

/// Strict parse: unknown fields, wrong types and violated invariants are
/// all reported together.
inline ExperimentConfig parse_config(const json& j) {
    detail::ConfigReader r;
    ExperimentConfig c;
    r.allow(j, "config", {"version", "corpus", "beta_grid", "levels", "mc", "kernel", "monotone", "hoelder", "output"});
    if (!j.is_object()) throw ConfigError(r.problems);
    r.read(j, "version", "config", c.version, true);
    r.check(c.version == 1, "unsupported config version " + std::to_string(c.version));
    if (j.contains("corpus") && j["corpus"].is_array()) {
        for (std::size_t k = 0; k < j["corpus"].size(); ++k) {
            try {
                c.corpus.push_back(test_function_from_json(j["corpus"][k]));
            } catch (const std::exception& e) {
                r.problems.push_back("corpus[" + std::to_string(k) + "]: " + e.what());
            }
        }
        r.check(!c.corpus.empty(), "corpus is empty");
    } else {
        r.problems.push_back("missing or non-array field config.corpus");
    }
    r.read(j, "beta_grid", "config", c.beta_grid, true);
    for (double b : c.beta_grid) r.check(b > kAlpha && b < kBetaStar, "beta_grid value " + std::to_string(b) + " outside (alpha, beta*)");
    r.check(!c.beta_grid.empty() || !j.contains("beta_grid"), "beta_grid is empty");

    if (j.contains("levels")) {
        const auto& l = j["levels"];
        r.allow(l, "levels", {"grid", "truncation", "quadrature"});
        r.read(l, "grid", "levels", c.levels.grid, true);
        r.read(l, "truncation", "levels", c.levels.truncation, true);
        r.read(l, "quadrature", "levels", c.levels.quadrature, true);
    } else {
        r.problems.push_back("missing field config.levels");
    }
    const auto& lv = c.levels;
    r.check(lv.truncation >= 1, "levels.truncation must be >= 1");
    r.check(lv.grid >= lv.truncation + 2, "levels.grid must be >= truncation + 2");
    r.check(lv.quadrature >= lv.truncation + 2, "levels.quadrature must be >= truncation + 2");
    r.check(lv.quadrature <= lv.grid, "levels.quadrature must not exceed levels.grid");
    r.check(lv.grid <= kMaxMeshLevel, "levels.grid exceeds the mesh limit " + std::to_string(kMaxMeshLevel));

    if (j.contains("mc")) {
        const auto& m = j["mc"];
        r.allow(m, "mc", {"samples", "seed"});
        r.read(m, "samples", "mc", c.mc.samples, true);
        std::uint64_t seed = 0;
        if (m.is_object() && m.contains("seed")) {
            r.read(m, "seed", "mc", seed, true);
            c.mc.seed = seed;
        }
    } else {
        r.problems.push_back("missing field config.mc");
    }
    r.check(c.mc.samples == 0 || c.mc.seed.has_value(), "mc.seed is required when mc.samples > 0");

    if (j.contains("kernel")) {
        const auto& k = j["kernel"];
        r.allow(k, "kernel", {"i_max", "gamma", "delta_schedule", "beta_schedule", "c_hat", "estimator", "explicit_cap", "mc_samples_per_pair"});
        r.read(k, "i_max", "kernel", c.kernel.i_max, true);
        r.read(k, "gamma", "kernel", c.kernel.gamma, true);
        r.read(k, "delta_schedule", "kernel", c.kernel.delta_schedule, true);
        r.read(k, "beta_schedule", "kernel", c.kernel.beta_schedule, true);
        r.read(k, "estimator", "kernel", c.kernel.estimator, false);
        r.read(k, "explicit_cap", "kernel", c.kernel.explicit_cap, false);
        r.read(k, "mc_samples_per_pair", "kernel", c.kernel.mc_samples_per_pair, false);
        double c_hat = 0;
        if (k.is_object() && k.contains("c_hat")) {
            r.read(k, "c_hat", "kernel", c_hat, true);
            r.check(c_hat > 0, "kernel.c_hat must be positive");
            c.kernel.c_hat = c_hat;
        }
    } else {
        r.problems.push_back("missing field config.kernel");
    }
    r.check(c.kernel.i_max >= 1, "kernel.i_max must be >= 1");
    r.check(c.kernel.gamma >= 0, "kernel.gamma must be >= 0 (0 = minimal admissible)");
    r.check(c.kernel.estimator == "pairsum" || c.kernel.estimator == "monte_carlo", "kernel.estimator must be pairsum or monte_carlo");
    r.check(c.kernel.explicit_cap >= 1, "kernel.explicit_cap must be >= 1");
    r.check(c.kernel.estimator != "monte_carlo" || c.kernel.mc_samples_per_pair >= 10, "kernel.mc_samples_per_pair must be >= 10");
    try {
        if (c.kernel.i_max >= 1 && c.kernel.gamma >= 0) kernel_schedule(c.kernel.i_max, c.kernel.gamma, c.kernel.delta_schedule, c.kernel.beta_schedule);
    } catch (const std::exception& e) {
        r.problems.push_back(std::string("kernel: ") + e.what());
    }

    if (j.contains("monotone")) {
        const auto& m = j["monotone"];
        r.allow(m, "monotone", {"lambda_grid", "tail_levels"});
        r.read(m, "lambda_grid", "monotone", c.monotone.lambda_grid, false);
        r.read(m, "tail_levels", "monotone", c.monotone.tail_levels, false);
    }
    for (double l : c.monotone.lambda_grid) r.check(l > 0.2 && l < 1.0 / 3.0, "monotone.lambda_grid value " + std::to_string(l) + " outside (1/5, 1/3)");
    r.check(c.monotone.tail_levels >= c.levels.grid, "monotone.tail_levels must be >= levels.grid");

    if (j.contains("hoelder")) {
        const auto& h = j["hoelder"];
        r.allow(h, "hoelder", {"betas", "coarse_level", "fine_level"});
        r.read(h, "betas", "hoelder", c.hoelder.betas, false);
        r.read(h, "coarse_level", "hoelder", c.hoelder.coarse_level, false);
        r.read(h, "fine_level", "hoelder", c.hoelder.fine_level, false);
    }
    for (double b : c.hoelder.betas) r.check(b > kAlpha && b < kBetaStar, "hoelder.betas value " + std::to_string(b) + " outside (alpha, beta*)");
    r.check(c.hoelder.coarse_level >= 1 && c.hoelder.coarse_level <= c.hoelder.fine_level, "hoelder levels must satisfy 1 <= coarse <= fine");
    r.check(c.hoelder.fine_level <= c.levels.grid, "hoelder.fine_level must not exceed levels.grid");

    r.read(j, "output", "config", c.output, true);
    if (!r.problems.empty()) throw ConfigError(r.problems);
    return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError({"cannot read config file " + path.string()});
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError({std::string("config is not valid JSON: ") + e.what()});
    }
    return parse_config(j);
}

/// The config minus the output directory: everything that can change a result.
inline json canonical_config(const ExperimentConfig& c) {
    json j = to_json(c);
    j.erase("output");
    return j;
}

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
    const std::string s = canonical_config(c).dump();
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char ch : s) h = (h ^ ch) * 0x100000001B3ull;
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Result tables

using Value = std::variant<std::monostate, std::string, std::int64_t, double, bool>;

inline std::string format_double(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline json value_to_json(const Value& v) {
    return std::visit(
        [](const auto& x) -> json {
            using X = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<X, std::monostate>) {
                return nullptr;
            } else if constexpr (std::is_same_v<X, double>) {
                if (!std::isfinite(x)) return format_double(x);
                return x;
            } else {
                return x;
            }
        },
        v);
}

struct ResultTable {
    std::string suite;
    std::vector<std::string> columns;
    std::vector<std::vector<Value>> rows;
    json summary = json::object();
    std::map<std::string, bool> verdicts;

    void add_row(std::vector<Value> row) {
        if (row.size() != columns.size()) throw std::logic_error("row width does not match columns in suite " + suite);
        rows.push_back(std::move(row));
    }

    bool passed() const {
        for (const auto& [_, ok] : verdicts)
            if (!ok) return false;
        return true;
    }

    std::size_t column(const std::string& name) const {
        for (std::size_t k = 0; k < columns.size(); ++k)
            if (columns[k] == name) return k;
        throw std::out_of_range("no column " + name + " in suite " + suite);
    }
};

inline void write_csv(std::ostream& os, const ResultTable& t, const std::string& hash) {
    os << "# suite=" << t.suite << " config_hash=" << hash << " code_version=" << SGFORMS_VERSION << '\n';
    for (std::size_t k = 0; k < t.columns.size(); ++k) os << (k ? "," : "") << t.columns[k];
    os << '\n';
    for (const auto& row : t.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) os << ',';
            std::visit(
                [&](const auto& x) {
                    using X = std::decay_t<decltype(x)>;
                    if constexpr (std::is_same_v<X, std::monostate>) {
                    } else if constexpr (std::is_same_v<X, double>) {
                        os << format_double(x);
                    } else if constexpr (std::is_same_v<X, bool>) {
                        os << (x ? "true" : "false");
                    } else if constexpr (std::is_same_v<X, std::string>) {
                        if (x.find_first_of(",\"") != std::string::npos) {
                            os << '"';
                            for (char c : x) os << (c == '"' ? "\"\"" : std::string(1, c));
                            os << '"';
                        } else {
                            os << x;
                        }
                    } else {
                        os << x;
                    }
                },
                row[k]);
        }
        os << '\n';
    }
}

inline std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// JSON form; the timestamp is the only field that varies between runs.
inline json to_json(const ResultTable& t, const std::string& hash, const std::string& timestamp) {
    json rows = json::array();
    for (const auto& row : t.rows) {
        json r = json::object();
        for (std::size_t k = 0; k < row.size(); ++k) r[t.columns[k]] = value_to_json(row[k]);
        rows.push_back(r);
    }
    return json{{"suite", t.suite},
                {"metadata", {{"config_hash", hash}, {"code_version", SGFORMS_VERSION}, {"timestamp", timestamp}}},
                {"columns", t.columns},
                {"rows", rows},
                {"summary", t.summary},
                {"verdicts", t.verdicts}};
}

inline std::string dump_json(const json& j) {
    // %.17g numbers, so files round-trip exactly
    std::string s = j.dump(2);
    return s + "\n";
}

// ---------------------------------------------------------------------------
// Suites

struct RunOptions {
    unsigned workers = 1;
};

namespace detail {

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

inline Value opt_double(double x, bool present) { return present ? Value{x} : Value{}; }

struct FunctionData {
    GridFunction<double> grid;
    std::optional<PairHistogram> fine, coarse;
};

}  // namespace detail

/// Per (function, beta): discrete E_beta, annulus quadrature, Monte Carlo,
/// their ratio, and the start-level / radius robustness range.  The
/// summary also carries the Hoelder ratios.
inline ResultTable run_equivalence(const ExperimentConfig& c, const RunOptions& opt = {}) {
    ResultTable t;
    t.suite = "equivalence";
    t.columns = {"function", "beta",     "E_beta_partial", "annulus",  "annulus_error", "lemma_weighted", "mc",
                 "mc_stderr", "mc_discarded", "ratio",   "mc_z",     "mc_agree",      "robust_min",     "robust_max"};
    const int m = c.levels.grid, q = c.levels.quadrature, N = c.levels.truncation;
    const std::size_t nf = c.corpus.size(), nb = c.beta_grid.size();
    const StreamSeed root = StreamSeed(c.seed()).child("equivalence");

    struct Cell {
        double E = 0, ann = 0, ann_err = 0, lemma = 0, robust_min = 0, robust_max = 0;
        BesovEstimate mc;
        bool constant = false;
    };
    // one task per function: histograms are the expensive part
    auto per_function = parallel_map<std::vector<Cell>>(nf, opt.workers, [&](std::size_t k) {
        const auto u = c.corpus[k].grid(m);
        const auto table = CellTable::build(u, q);
        const auto fine = PairHistogram::build(table);
        const auto coarse = PairHistogram::build(CellTable::build(u, q - 1));
        std::vector<Cell> out(nb);
        for (std::size_t b = 0; b < nb; ++b) {
            const double beta = c.beta_grid[b];
            Cell& cell = out[b];
            cell.constant = u.is_constant();
            cell.E = seminorm_report(u, beta, N).E_beta_partial;
            const auto ann = besov_annulus_sum(fine, &coarse, beta, N);
            cell.ann = ann.value;
            cell.ann_err = ann.error;
            cell.lemma = ann.lemma_weighted;
            if (c.mc.samples > 0) {
                MonteCarloOptions mo;
                mo.samples = c.mc.samples;
                mo.seed = root.child(k).child(b).value();
                cell.mc = besov_monte_carlo(table, beta, mo);
            }
            // start level N0 in {0,1,2}, radius c in {1/2,1,2}, relative to the default
            double lo = INFINITY, hi = 0;
            if (!cell.constant) {
                for (int n0 : {0, 1, 2})
                    for (int qq : {1, 4, 16}) {
                        const double r = fine.ball_sum(beta, n0, N, qq) / ann.lemma_weighted;
                        lo = std::min(lo, r);
                        hi = std::max(hi, r);
                    }
            }
            cell.robust_min = cell.constant ? 0 : lo;
            cell.robust_max = cell.constant ? 0 : hi;
        }
        return out;
    });

    double rmin = INFINITY, rmax = 0;
    bool all_agree = true, nonnegative = true, robust_finite = true;
    for (std::size_t k = 0; k < nf; ++k) {
        for (std::size_t b = 0; b < nb; ++b) {
            const auto& x = per_function[k][b];
            const bool mc = c.mc.samples > 0;
            double z = 0;
            bool agree = true;
            if (mc) {
                const double diff = std::abs(x.mc.value - x.ann);
                z = x.mc.error > 0 ? diff / x.mc.error : (diff == 0 ? 0 : INFINITY);
                agree = z <= 3.0;
            }
            all_agree = all_agree && agree;
            nonnegative = nonnegative && x.ann >= 0 && x.E >= 0;
            double ratio = detail::nan();
            if (!x.constant) {
                ratio = x.ann / x.E;
                rmin = std::min(rmin, ratio);
                rmax = std::max(rmax, ratio);
                robust_finite = robust_finite && std::isfinite(x.robust_min) && std::isfinite(x.robust_max) && x.robust_min > 0;
            }
            t.add_row({c.corpus[k].name(), c.beta_grid[b], x.E, x.ann, x.ann_err, x.lemma, detail::opt_double(x.mc.value, mc),
                       detail::opt_double(x.mc.error, mc), mc ? Value{static_cast<std::int64_t>(x.mc.discarded)} : Value{},
                       detail::opt_double(ratio, !x.constant), detail::opt_double(z, mc), agree, detail::opt_double(x.robust_min, !x.constant),
                       detail::opt_double(x.robust_max, !x.constant)});
        }
    }
    const bool have_ratio = rmax > 0;
    t.summary["min_ratio"] = have_ratio ? json(rmin) : json(nullptr);
    t.summary["max_ratio"] = have_ratio ? json(rmax) : json(nullptr);
    t.summary["C"] = have_ratio ? json(std::max(rmax, 1.0 / rmin)) : json(nullptr);
    t.summary["spread"] = have_ratio ? json(rmax / rmin) : json(nullptr);
    t.verdicts["ratio_spread_below_1e3"] = !have_ratio || rmax / rmin < 1e3;
    t.verdicts["estimates_nonnegative"] = nonnegative;
    if (c.mc.samples > 0) t.verdicts["mc_within_3_stderr"] = all_agree;
    t.verdicts["robustness_finite"] = robust_finite;

    // Hoelder ratios with E(u) from the fine-level quadrature
    json hold = json::array();
    bool hoelder_ok = true;
    const int hc = c.hoelder.coarse_level, hf = c.hoelder.fine_level;
    auto hoelder_rows = parallel_map<std::vector<json>>(nf, opt.workers, [&](std::size_t k) {
        const auto u = c.corpus[k].grid(hf);
        std::vector<json> out;
        if (u.is_constant()) return out;
        const auto hist = PairHistogram::build(CellTable::build(u, hf));
        for (double beta : c.hoelder.betas) {
            const double E = hist.direct_integral(beta);
            const double r5 = hoelder_ratio(u, beta, E, hc), r7 = hoelder_ratio(u, beta, E, hf);
            out.push_back(json{{"function", c.corpus[k].name()}, {"beta", beta}, {"energy", E}, {"coarse_level", hc}, {"fine_level", hf},
                               {"ratio_coarse", r5}, {"ratio_fine", r7}, {"change", r7 / r5 - 1.0}, {"stable", std::isfinite(r7) && r7 >= r5 && r7 <= 1.1 * r5}});
        }
        return out;
    });
    for (const auto& rows : hoelder_rows)
        for (const auto& r : rows) {
            hoelder_ok = hoelder_ok && r["stable"].get<bool>();
            hold.push_back(r);
        }
    t.summary["hoelder"] = hold;
    t.verdicts["hoelder_stable_10pct"] = hoelder_ok;
    return t;
}

/// Per (function, lambda): the truncated and tail-completed weighted sums.
inline ResultTable run_monotone(const ExperimentConfig& c, const RunOptions& opt = {}) {
    ResultTable t;
    t.suite = "monotone";
    t.columns = {"function", "lambda", "N", "partial", "tail_bound", "completed", "a_N", "gap", "closed_form", "closed_form_error"};
    const int m = c.levels.grid, N = c.monotone.tail_levels;
    struct Fn {
        std::vector<double> a;
        bool exact_nondecreasing = true, constant_a = false;
    };
    auto data = parallel_map<Fn>(c.corpus.size(), opt.workers, [&](std::size_t k) {
        Fn f;
        const auto exact = exact_local_energies(c.corpus[k].exact_grid(m), m);
        f.exact_nondecreasing = is_nondecreasing<Rational>(exact);
        f.constant_a = std::all_of(exact.begin(), exact.end(), [&](const Rational& x) { return x == exact.front(); });
        f.a = extend_energies(local_energy_sequence(c.corpus[k].grid(m), m).a, N);
        return f;
    });
    bool a_mono = true, lambda_mono = true, closed_ok = true, below = true;
    json energies = json::object();
    for (std::size_t k = 0; k < c.corpus.size(); ++k) {
        const auto& f = data[k];
        a_mono = a_mono && f.exact_nondecreasing;
        energies[c.corpus[k].name()] = {{"a_n", std::vector<double>(f.a.begin(), f.a.begin() + m)}, {"exact_nondecreasing", f.exact_nondecreasing}};
        std::vector<double> lambdas = c.monotone.lambda_grid;
        std::sort(lambdas.begin(), lambdas.end());
        double prev = INFINITY;
        for (double lambda : lambdas) {
            const auto w = weighted_tail_sum(f.a, lambda, N);
            const double aN = f.a.back();
            lambda_mono = lambda_mono && w.completed <= prev * (1 + 1e-12) + 1e-300;
            prev = w.completed;
            below = below && w.completed <= aN * (1 + 1e-12);
            double closed = detail::nan(), err = detail::nan();
            if (f.constant_a) {
                closed = aN * (1.0 - std::pow(5.0 * lambda, -N));
                err = std::abs(w.partial - closed);
                closed_ok = closed_ok && err <= 1e-9;
            }
            t.add_row({c.corpus[k].name(), lambda, static_cast<std::int64_t>(N), w.partial, w.tail_bound, w.completed, aN, aN - w.completed,
                       detail::opt_double(closed, f.constant_a), detail::opt_double(err, f.constant_a)});
        }
    }
    t.summary["energies"] = energies;
    t.verdicts["a_n_nondecreasing_exact"] = a_mono;
    t.verdicts["completed_nonincreasing_in_lambda"] = lambda_mono;
    t.verdicts["completed_below_a_N"] = below;
    t.verdicts["closed_form_1e-9"] = closed_ok;
    return t;
}

/// Per (function, beta1): the trace semi-norm at beta2 = beta1 - alpha + 1
/// against the gasket semi-norm, with the level-by-level comparison.
inline ResultTable run_trace(const ExperimentConfig& c, const RunOptions& opt = {}) {
    ResultTable t;
    t.suite = "trace";
    t.columns = {"function", "beta1", "beta2", "interval_seminorm", "sg_partial", "ratio", "termwise_holds", "strict_levels", "min_margin"};
    const int m = c.levels.grid, N = c.levels.truncation;
    const std::size_t nb = c.beta_grid.size();
    struct Out {
        std::vector<std::vector<TraceLevel>> levels;
        std::vector<double> interval, sg;
    };
    auto data = parallel_map<Out>(c.corpus.size(), opt.workers, [&](std::size_t k) {
        Out o;
        const auto u = c.corpus[k].grid(m);
        const auto v = trace_restrict(u);
        for (double b1 : c.beta_grid) {
            o.levels.push_back(trace_termwise(u, b1, N));
            o.interval.push_back(interval_seminorm(v, b1 - kAlpha + 1.0, N));
            o.sg.push_back(seminorm_report(u, b1, N).E_beta_partial);
        }
        return o;
    });
    bool all_hold = true;
    json detail = json::array();
    for (std::size_t k = 0; k < c.corpus.size(); ++k) {
        for (std::size_t b = 0; b < nb; ++b) {
            const auto& lv = data[k].levels[b];
            bool holds = true;
            std::int64_t strict = 0;
            double margin = INFINITY;
            std::vector<double> it, gt;
            for (const auto& l : lv) {
                holds = holds && l.holds;
                strict += l.interval_term < l.gasket_term;
                margin = std::min(margin, l.gasket_term - l.interval_term);
                it.push_back(l.interval_term);
                gt.push_back(l.gasket_term);
            }
            all_hold = all_hold && holds;
            const double sg = data[k].sg[b], iv = data[k].interval[b];
            t.add_row({c.corpus[k].name(), c.beta_grid[b], c.beta_grid[b] - kAlpha + 1.0, iv, sg, detail::opt_double(iv / sg, sg > 0), holds, strict,
                       margin});
            detail.push_back({{"function", c.corpus[k].name()}, {"beta1", c.beta_grid[b]}, {"interval_terms", it}, {"gasket_terms", gt}});
        }
    }
    t.summary["levels"] = detail;
    t.verdicts["termwise_inequality"] = all_hold;
    return t;
}

/// Per (function, i): the a_i-weighted energy, its parts, the sandwich
/// against the discrete sum, and the gap to a_m.
inline ResultTable run_kernels(const ExperimentConfig& c, const RunOptions& opt = {}) {
    ResultTable t;
    t.suite = "kernels";
    t.columns = {"function",      "i",          "beta_i",        "gamma",          "phi",
                 "delta_i",       "weighted_energy", "c_part",   "plain_part",     "sandwich_lower",
                 "sandwich_middle", "sandwich_upper", "slack",   "sandwich_holds", "bound_vacuous",
                 "a_inf_reference", "rel_gap",   "explicit_levels", "point_mass_levels", "c_error",
                 "point_mass_error", "plain_error"};
    const auto specs = kernel_schedule(c.kernel.i_max, c.kernel.gamma, c.kernel.delta_schedule, c.kernel.beta_schedule);
    const int m = c.levels.grid, q = c.levels.quadrature;
    KernelOptions ko;
    ko.estimator = c.kernel.estimator;
    ko.explicit_cap = c.kernel.explicit_cap;
    ko.mc_samples_per_pair = c.kernel.mc_samples_per_pair;

    struct Row {
        KernelEnergy energy;
        SandwichReport sandwich;
    };
    struct Fn {
        std::vector<Row> rows;
        double a_ref = 0;
        bool constant = false, harmonic = false;
    };
    // one task per function; inner sums run single-threaded
    auto data = parallel_map<Fn>(c.corpus.size(), opt.workers, [&](std::size_t k) {
        const auto u = c.corpus[k].grid(m);
        const auto fine = PairHistogram::build(CellTable::build(u, q));
        const auto coarse = PairHistogram::build(CellTable::build(u, q - 1));
        Fn f;
        f.constant = u.is_constant();
        f.harmonic = std::holds_alternative<HarmonicKind>(c.corpus[k].kind());
        f.a_ref = local_energy_sequence(u, m).a.back();
        KernelOptions local = ko;
        local.workers = 1;
        local.seed = StreamSeed(c.seed()).child("kernels").child(k).value();
        for (const auto& s : specs) f.rows.push_back({weighted_kernel_energy(u, s, local, fine, &coarse), kernel_sandwich_check(u, s, 0.0, local)});
        return f;
    });
    // calibrate C-hat unless frozen in the config
    double worst = 0;
    for (const auto& f : data)
        for (const auto& r : f.rows) worst = std::max(worst, r.sandwich.deviation);
    const bool frozen = c.kernel.c_hat.has_value();
    const double c_hat = frozen ? *c.kernel.c_hat : 2.0 * worst;

    bool sandwich_ok = true, slack_decreasing = true, trend_ok = true, final_ok = true, constant_zero = true;
    for (std::size_t k = 0; k < c.corpus.size(); ++k) {
        auto& f = data[k];
        std::vector<double> gaps;
        for (std::size_t s = 0; s < specs.size(); ++s) {
            auto& r = f.rows[s];
            const double factor = sandwich_factor(specs[s]);
            auto& sw = r.sandwich;
            sw.slack = c_hat * factor;
            sw.lower = (1.0 - sw.slack) * sw.reference;
            sw.upper = (1.0 + sw.slack) * sw.reference;
            sw.vacuous = !(sw.slack < 1.0);
            sw.holds = sw.lower <= sw.middle && sw.middle <= sw.upper;
            if (!sw.vacuous) sandwich_ok = sandwich_ok && sw.holds;
            if (s > 0) slack_decreasing = slack_decreasing && factor < sandwich_factor(specs[s - 1]);
            const double gap = f.a_ref > 0 ? std::abs(r.energy.value - f.a_ref) / f.a_ref : detail::nan();
            if (!f.constant) gaps.push_back(gap);
            if (f.constant) constant_zero = constant_zero && r.energy.value == 0.0;
            const auto& sp = specs[s];
            t.add_row({c.corpus[k].name(), static_cast<std::int64_t>(sp.i), sp.beta_i, static_cast<std::int64_t>(sp.gamma),
                       static_cast<std::int64_t>(sp.phi), sp.delta_i, r.energy.value, r.energy.c_part, r.energy.plain_part, sw.lower, sw.middle,
                       sw.upper, sw.slack, sw.holds, sw.vacuous, f.a_ref, detail::opt_double(gap, !f.constant),
                       static_cast<std::int64_t>(r.energy.explicit_levels), static_cast<std::int64_t>(r.energy.point_mass_levels), r.energy.c_error,
                       r.energy.point_mass_error, r.energy.plain_error});
        }
        if (!f.constant && gaps.size() >= 3) {
            for (std::size_t s = gaps.size() - 2; s < gaps.size(); ++s) trend_ok = trend_ok && gaps[s] < gaps[s - 1];
        }
        if (!f.constant && f.harmonic && !gaps.empty()) final_ok = final_ok && gaps.back() <= 0.10;
    }
    t.summary["c_hat"] = c_hat;
    t.summary["c_hat_source"] = frozen ? "config" : "calibrated";
    t.summary["max_deviation"] = worst;
    json sched = json::array();
    for (const auto& s : specs) sched.push_back(s);
    t.summary["schedule"] = sched;
    t.verdicts["sandwich_where_slack_below_1"] = sandwich_ok;
    t.verdicts["slack_strictly_decreasing"] = slack_decreasing;
    t.verdicts["gap_decreasing_last_three"] = trend_ok;
    t.verdicts["harmonic_final_gap_10pct"] = final_ok;
    t.verdicts["constant_zero"] = constant_zero;
    return t;
}

inline const std::vector<std::string>& suite_names() {
    static const std::vector<std::string> names{"equivalence", "monotone", "trace", "kernels"};
    return names;
}

inline ResultTable run_suite(const std::string& name, const ExperimentConfig& c, const RunOptions& opt = {}) {
    if (name == "equivalence") return run_equivalence(c, opt);
    if (name == "monotone") return run_monotone(c, opt);
    if (name == "trace") return run_trace(c, opt);
    if (name == "kernels") return run_kernels(c, opt);
    throw DomainError("unknown suite \"" + name + "\"");
}

/// Writes <suite>.csv and <suite>.json for every table and manifest.json.
inline json write_outputs(const std::filesystem::path& dir, const ExperimentConfig& c, const std::vector<ResultTable>& tables) {
    std::filesystem::create_directories(dir);
    const std::string hash = config_hash(c);
    const std::string stamp = utc_timestamp();
    json suites = json::object();
    for (const auto& t : tables) {
        {
            std::ofstream os(dir / (t.suite + ".csv"), std::ios::binary);
            write_csv(os, t, hash);
            if (!os) throw std::runtime_error("cannot write " + (dir / (t.suite + ".csv")).string());
        }
        {
            std::ofstream os(dir / (t.suite + ".json"), std::ios::binary);
            os << dump_json(to_json(t, hash, stamp));
            if (!os) throw std::runtime_error("cannot write " + (dir / (t.suite + ".json")).string());
        }
        suites[t.suite] = {{"passed", t.passed()}, {"verdicts", t.verdicts}};
    }
    json manifest{{"config_hash", hash},
                  {"code_version", SGFORMS_VERSION},
                  {"timestamp", stamp},
                  {"config", canonical_config(c)},
                  {"versions", {{"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                        std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                                {"boost", std::to_string(BOOST_VERSION)}}},
                  {"suites", suites}};
    std::ofstream os(dir / "manifest.json", std::ios::binary);
    os << dump_json(manifest);
    return manifest;
}

// ---------------------------------------------------------------------------
// Golden comparison

struct GoldenTolerance {
    double relative = 1e-9;                     ///< deterministic float columns
    std::map<std::string, double> relative_by_column;  ///< overrides
    std::map<std::string, std::string> stderr_column;  ///< MC column -> its stderr column
    double stderr_multiple = 4.0;
};

/// Differences between a table and its golden JSON; empty when they agree.
/// Integer, string and boolean cells must be equal; the timestamp is ignored.
inline std::vector<std::string> compare_to_golden(const ResultTable& t, const json& golden, const GoldenTolerance& tol) {
    std::vector<std::string> diffs;
    if (golden.at("suite") != t.suite) diffs.push_back("suite mismatch");
    if (golden.at("columns").get<std::vector<std::string>>() != t.columns) {
        diffs.push_back("column mismatch");
        return diffs;
    }
    const auto& rows = golden.at("rows");
    if (rows.size() != t.rows.size()) {
        diffs.push_back("row count " + std::to_string(t.rows.size()) + " vs golden " + std::to_string(rows.size()));
        return diffs;
    }
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        for (std::size_t k = 0; k < t.columns.size(); ++k) {
            const auto& name = t.columns[k];
            const json have = value_to_json(t.rows[r][k]);
            const json& want = rows[r].at(name);
            const std::string where = "row " + std::to_string(r) + " column " + name;
            if (have.is_number_float() && want.is_number()) {
                const double a = have.get<double>(), b = want.get<double>();
                if (auto it = tol.stderr_column.find(name); it != tol.stderr_column.end()) {
                    const json& se = rows[r].at(it->second);
                    const double s = se.is_number() ? se.get<double>() : 0.0;
                    if (std::abs(a - b) > tol.stderr_multiple * s + 1e-12 * std::abs(b))
                        diffs.push_back(where + ": " + format_double(a) + " vs golden " + format_double(b) + " (> " + format_double(tol.stderr_multiple) + " stderr)");
                    continue;
                }
                double rel = tol.relative;
                if (auto it = tol.relative_by_column.find(name); it != tol.relative_by_column.end()) rel = it->second;
                if (std::abs(a - b) > rel * std::max(std::abs(a), std::abs(b)) + 1e-14)
                    diffs.push_back(where + ": " + format_double(a) + " vs golden " + format_double(b));
            } else if (have != want) {
                diffs.push_back(where + ": " + have.dump() + " vs golden " + want.dump());
            }
        }
    }
    return diffs;
}

inline GoldenTolerance default_tolerance(const std::string& suite) {
    GoldenTolerance tol;
    if (suite == "equivalence") tol.stderr_column = {{"mc", "mc_stderr"}};
    if (suite == "kernels") {
        // derived from the calibrated C-hat and tiny differences of near-equal sums
        tol.relative_by_column = {{"c_error", 1e-3}, {"point_mass_error", 1e-6}};
    }
    return tol;
}

}  // namespace sgforms
