#pragma once

// Semi-norms on the gasket: the discrete level sums b_n and their weighted
// totals, renormalised local energies, quadrature and Monte-Carlo estimates
// of the Besov double integral, the Hoelder ratio, and the trace to [0,1].
//
// Conventions:
//   * pair sums run over ordered pairs p != q of a cell's corners;
//   * 2^{alpha n} is always 3^n, never exp2(log2(3) n);
//   * a GridFunction of level m stands for its harmonic extension, so
//     b_n = (3/5)^{n-m} b_m for n > m.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgforms/functions.hpp"
#include "sgforms/gasket.hpp"
#include "sgforms/parallel.hpp"

namespace sgforms {

/// Hausdorff dimension log 3 / log 2.  Only used inside |x-y|^s kernels.
inline const double kAlpha = std::log2(3.0);
/// Walk dimension log 5 / log 2.
inline const double kBetaStar = std::log2(5.0);

/// 3^n as a double (exact for n <= 33).
inline double pow3d(int n) {
    double r = 1.0;
    for (int k = 0; k < n; ++k) r *= 3.0;
    return r;
}

/// x^n by repeated multiplication.
inline double ipow(double x, int n) {
    double r = 1.0;
    for (int k = 0; k < n; ++k) r *= x;
    return r;
}

/// 2^{(beta - alpha) n} = 2^{beta n} / 3^n.
inline double level_weight(double beta, int n) { return std::exp2(beta * n) / pow3d(n); }

/// Pairwise summation with a fixed tree shape.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

template <typename T>
T cell_pair_sum(const std::array<T, 3>& u) {
    const T d01 = u[0] - u[1], d02 = u[0] - u[2], d12 = u[1] - u[2];
    return T(2) * (d01 * d01 + d02 * d02 + d12 * d12);
}

/// b_n = sum over w in W_n, ordered p != q in V_w of (u(p) - u(q))^2.
template <typename T>
T level_pair_sum(const GridFunction<T>& u, int n) {
    if (n < 0 || n > u.level())
        throw DomainError("level_pair_sum: level " + std::to_string(n) + " outside 0.." + std::to_string(u.level()));
    const Mesh& g = mesh(n);
    if constexpr (std::is_same_v<T, double>) {
        std::vector<double> per_cell(g.cells.size());
        for (std::size_t code = 0; code < g.cells.size(); ++code) {
            const auto& c = g.cells[code];
            per_cell[code] = cell_pair_sum<double>({u[c[0]], u[c[1]], u[c[2]]});
        }
        return pairwise_sum(per_cell);
    } else {
        T total(0);
        for (const auto& c : g.cells) total += cell_pair_sum<T>({u[c[0]], u[c[1]], u[c[2]]});
        return total;
    }
}

inline Rational level_pair_sum(const ExactGrid& u, int n) { return u.square_scale * level_pair_sum(u.values, n); }

// ---------------------------------------------------------------------------
// Renormalised energies

struct LocalEnergySequence {
    std::vector<double> a;           ///< a[k] = a_{k+1}
    std::vector<double> increments;  ///< a_{n+1} - a_n, n = 1..N-1
    double e_loc_estimate() const { return a.empty() ? 0.0 : a.back(); }
};

/// a_n = (5/3)^n b_n for n = 1..N.
inline LocalEnergySequence local_energy_sequence(const GridFunction<double>& u, int N) {
    if (N > u.level()) throw DomainError("local_energy_sequence: N exceeds grid level");
    LocalEnergySequence out;
    double scale = 1.0;
    for (int n = 1; n <= N; ++n) {
        scale *= 5.0 / 3.0;
        out.a.push_back(scale * level_pair_sum(u, n));
    }
    for (std::size_t k = 1; k < out.a.size(); ++k) out.increments.push_back(out.a[k] - out.a[k - 1]);
    return out;
}

/// Exact a_1..a_N.
inline std::vector<Rational> exact_local_energies(const ExactGrid& u, int N) {
    if (N > u.values.level()) throw DomainError("exact_local_energies: N exceeds grid level");
    std::vector<Rational> a;
    Rational scale(1);
    for (int n = 1; n <= N; ++n) {
        scale *= Rational(5, 3);
        a.push_back(scale * level_pair_sum(u, n));
    }
    return a;
}

template <typename T>
bool is_nondecreasing(std::span<const T> a) {
    for (std::size_t k = 1; k < a.size(); ++k)
        if (a[k] < a[k - 1]) return false;
    return true;
}

/// Continues a_1..a_m to length N with the constant a_m (the energies of the
/// harmonic extension beyond level m).
inline std::vector<double> extend_energies(std::vector<double> a, int N) {
    if (a.empty()) throw DomainError("extend_energies: empty sequence");
    while (static_cast<int>(a.size()) < N) a.push_back(a.back());
    return a;
}

struct WeightedTailSum {
    double partial = 0.0;     ///< (5 lambda - 1) sum_{n<=N} (5 lambda)^{-n} a_n
    double tail_bound = 0.0;  ///< (5 lambda)^{-N} a_N
    double completed = 0.0;   ///< a_1 + sum_{n<N} (5 lambda)^{-n} (a_{n+1} - a_n)
};

/// The truncated weighted sum and its completion with the constant tail
/// a_n = a_N for n > N.  `completed` is computed from the increments, so it
/// is monotone in lambda whenever the increments are nonnegative.
inline WeightedTailSum weighted_tail_sum(std::span<const double> a, double lambda, int N) {
    if (!(lambda > 0.2 && lambda < 1.0 / 3.0)) throw DomainError("weighted_tail_sum: lambda must lie in (1/5, 1/3)");
    if (N < 1 || N > static_cast<int>(a.size())) throw DomainError("weighted_tail_sum: truncation out of range");
    const double q = 5.0 * lambda;
    const double t = 1.0 / q;
    WeightedTailSum out;
    std::vector<double> terms;
    double tn = 1.0;
    for (int n = 1; n <= N; ++n) {
        tn *= t;
        terms.push_back(tn * a[static_cast<std::size_t>(n - 1)]);
    }
    out.partial = (q - 1.0) * pairwise_sum(terms);
    out.tail_bound = tn * a[static_cast<std::size_t>(N - 1)];
    double completed = a[0];
    tn = 1.0;
    for (int n = 1; n < N; ++n) {
        tn *= t;
        completed += tn * (a[static_cast<std::size_t>(n)] - a[static_cast<std::size_t>(n - 1)]);
    }
    out.completed = completed;
    return out;
}

// ---------------------------------------------------------------------------
// SemiNormReport

struct SemiNormReport {
    double beta = 0.0;
    int levels = 0;
    std::vector<double> b_n;
    std::vector<double> a_n;
    double E_beta_partial = 0.0;
    double weighted_total = 0.0;
    bool tail_flag = false;
};

/// b_n, a_n and the partial E_beta for n = 1..N.
inline SemiNormReport seminorm_report(const GridFunction<double>& u, double beta, int N) {
    if (N < 1 || N > u.level()) throw DomainError("seminorm_report: N must lie in 1..level");
    SemiNormReport r;
    r.beta = beta;
    r.levels = N;
    double scale = 1.0;
    std::vector<double> terms;
    for (int n = 1; n <= N; ++n) {
        scale *= 5.0 / 3.0;
        const double b = level_pair_sum(u, n);
        r.b_n.push_back(b);
        r.a_n.push_back(scale * b);
        terms.push_back(level_weight(beta, n) * b);
    }
    r.E_beta_partial = pairwise_sum(terms);
    r.weighted_total = (5.0 * std::exp2(-beta) - 1.0) * r.E_beta_partial;
    if (r.E_beta_partial == 0.0) {
        r.tail_flag = true;
    } else if (N >= 2) {
        r.tail_flag = terms[static_cast<std::size_t>(N - 1)] < terms[static_cast<std::size_t>(N - 2)];
    }
    return r;
}

inline void to_json(nlohmann::json& j, const SemiNormReport& r) {
    j = nlohmann::json{{"beta", r.beta},
                       {"levels", r.levels},
                       {"b_n", r.b_n},
                       {"a_n", r.a_n},
                       {"E_beta_partial", r.E_beta_partial},
                       {"weighted_total", r.weighted_total},
                       {"tail_flag", r.tail_flag}};
}

// ---------------------------------------------------------------------------
// Cell tables and the pair-distance histogram

/// Level-m cells as quadrature nodes: representative value (corner mean) and
/// centroid on an integer lattice: |c_w - c_v|^2 = (dcx^2 + 3 dcy^2) / 4^{m+1}.
struct CellTable {
    int level = 0;
    std::vector<double> value;
    std::vector<std::int64_t> cx;
    std::vector<std::int64_t> cy;

    static CellTable build(const GridFunction<double>& u, int m) {
        if (m > u.level()) throw DomainError("quadrature level exceeds grid level");
        const Mesh& g = mesh(m);
        CellTable t;
        t.level = m;
        const std::size_t n = g.cells.size();
        t.value.resize(n);
        t.cx.resize(n);
        t.cy.resize(n);
        for (std::size_t code = 0; code < n; ++code) {
            const auto& c = g.cells[code];
            std::int64_t X = 0, Y = 0;
            for (auto id : c) {
                auto [a, b] = g.vertices[id].at_scale(m + 1);
                X += a;
                Y += b;
            }
            // Corners of an upward cell are (k, j), (k+2, j), (k+1, j+1) at
            // scale m+1, so X = 3(k+1) and Y = 3j + 1.
            if (X % 3 != 0 || (Y - 1) % 3 != 0) throw std::logic_error("cell centroid off lattice");
            t.cx[code] = X / 3;
            t.cy[code] = (Y - 1) / 3;
            t.value[code] = (u[c[0]] + u[c[1]] + u[c[2]]) / 3.0;
        }
        return t;
    }

    std::size_t size() const { return value.size(); }

    std::int64_t key(std::size_t i, std::size_t j) const {
        const std::int64_t dx = cx[i] - cx[j], dy = cy[i] - cy[j];
        return dx * dx + 3 * dy * dy;
    }
    /// Squared centroid distance for a lattice key.
    double squared_distance(std::int64_t key) const { return std::ldexp(static_cast<double>(key), -2 * (level + 1)); }
};

/// For every squared centroid distance, the sum over ordered cell pairs of
/// (u_w - u_v)^2 and the number of such pairs.
class PairHistogram {
public:
    struct Bin {
        std::int64_t key;
        double sum;
        std::uint64_t count;
    };

    static PairHistogram build(const CellTable& t) {
        const std::size_t n = t.size();
        std::int64_t min_x = *std::min_element(t.cx.begin(), t.cx.end());
        std::int64_t max_x = *std::max_element(t.cx.begin(), t.cx.end());
        std::int64_t min_y = *std::min_element(t.cy.begin(), t.cy.end());
        std::int64_t max_y = *std::max_element(t.cy.begin(), t.cy.end());
        const std::int64_t max_key = (max_x - min_x) * (max_x - min_x) + 3 * (max_y - min_y) * (max_y - min_y);
        std::vector<double> sums(static_cast<std::size_t>(max_key) + 1, 0.0);
        std::vector<std::uint64_t> counts(static_cast<std::size_t>(max_key) + 1, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double ui = t.value[i];
            const std::int64_t xi = t.cx[i], yi = t.cy[i];
            for (std::size_t j = i + 1; j < n; ++j) {
                const std::int64_t dx = xi - t.cx[j], dy = yi - t.cy[j];
                const auto k = static_cast<std::size_t>(dx * dx + 3 * dy * dy);
                const double d = ui - t.value[j];
                sums[k] += d * d;
                ++counts[k];
            }
        }
        PairHistogram h;
        h.level_ = t.level;
        for (std::size_t k = 0; k < sums.size(); ++k)
            if (counts[k] != 0) h.bins_.push_back({static_cast<std::int64_t>(k), 2.0 * sums[k], 2 * counts[k]});
        return h;
    }

    int level() const { return level_; }
    std::span<const Bin> bins() const { return bins_; }

    double squared_distance(std::int64_t key) const { return std::ldexp(static_cast<double>(key), -2 * (level_ + 1)); }

    /// sum over ordered pairs w != v of 3^{-2m} (u_w - u_v)^2 / |c_w - c_v|^{alpha+beta}.
    double direct_integral(double beta) const {
        std::vector<double> terms;
        terms.reserve(bins_.size());
        const double weight = 1.0 / (pow3d(level_) * pow3d(level_));
        for (const auto& b : bins_) terms.push_back(weight * b.sum * std::pow(squared_distance(b.key), -(kAlpha + beta) / 2.0));
        return pairwise_sum(terms);
    }

    /// Contributions of the direct integral split by distance: bucket n < N
    /// holds 2^{-n-1} <= d < 2^{-n}; bucket N holds d < 2^{-N}.
    std::vector<double> annulus_contributions(double beta, int N) const {
        std::vector<std::vector<double>> terms(static_cast<std::size_t>(N) + 1);
        const double weight = 1.0 / (pow3d(level_) * pow3d(level_));
        for (const auto& b : bins_) {
            int n = 0;
            while (n < N && 4 * b.key < threshold(n + 1, 4)) ++n;
            terms[static_cast<std::size_t>(n)].push_back(weight * b.sum * std::pow(squared_distance(b.key), -(kAlpha + beta) / 2.0));
        }
        std::vector<double> out;
        for (auto& t : terms) out.push_back(pairwise_sum(t));
        return out;
    }

    /// D_n(c) = integral of (u(x)-u(y))^2 over |x - y| < c 2^{-n}, with
    /// c^2 = c_sq_quarters / 4.
    double ball_integral(int n, int c_sq_quarters = 4) const {
        const double weight = 1.0 / (pow3d(level_) * pow3d(level_));
        std::vector<double> terms;
        for (const auto& b : bins_)
            if (4 * b.key < threshold(n, c_sq_quarters)) terms.push_back(b.sum);
        return weight * pairwise_sum(terms);
    }

    /// sum_{n=N0}^{N} 2^{(alpha+beta) n} D_n(c).
    double ball_sum(double beta, int N0, int N, int c_sq_quarters = 4) const {
        std::vector<double> terms;
        for (int n = N0; n <= N; ++n) terms.push_back(pow3d(n) * std::exp2(beta * n) * ball_integral(n, c_sq_quarters));
        return pairwise_sum(terms);
    }

    std::uint64_t pair_count() const {
        std::uint64_t c = 0;
        for (const auto& b : bins_) c += b.count;
        return c;
    }

private:
    /// 4 * (c 2^{-n})^2 * 4^{m+1} for c^2 = q / 4, i.e. q * 4^{m+1-n}.
    std::int64_t threshold(int n, int q) const {
        const int e = level_ + 1 - n;
        if (e < 0) return 0;
        return static_cast<std::int64_t>(q) << (2 * e);
    }

    int level_ = 0;
    std::vector<Bin> bins_;
};

// ---------------------------------------------------------------------------
// Besov estimates

struct BesovEstimate {
    double value = 0.0;
    std::string method;
    int level = 0;
    double error = 0.0;
    std::optional<std::uint64_t> seed;
    std::vector<double> annuli;          ///< annulus_pairsum: per-annulus contributions
    double lemma_weighted = 0.0;         ///< annulus_pairsum: sum_{n=0}^{N} 2^{(alpha+beta)n} D_n
    std::uint64_t samples = 0;           ///< monte_carlo
    std::uint64_t discarded = 0;         ///< monte_carlo: resampled X = Y collisions
};

inline void to_json(nlohmann::json& j, const BesovEstimate& e) {
    j = nlohmann::json{{"value", e.value}, {"method", e.method}, {"level", e.level}, {"error", e.error}};
    if (e.seed) j["seed"] = *e.seed; else j["seed"] = nullptr;
    if (e.method == "annulus_pairsum") {
        j["annuli"] = e.annuli;
        j["lemma_weighted"] = e.lemma_weighted;
    } else {
        j["samples"] = e.samples;
        j["discarded"] = e.discarded;
    }
}

/// Quadrature of the Besov double integral over level-m cell pairs,
/// organised by distance annuli.  `coarse` (level m-1) supplies the
/// discretisation indicator reported as `error`.
inline BesovEstimate besov_annulus_sum(const PairHistogram& fine, const PairHistogram* coarse, double beta, int N) {
    if (fine.level() < N + 2) throw DomainError("besov_annulus_sum: quadrature level must be at least N + 2");
    BesovEstimate e;
    e.method = "annulus_pairsum";
    e.level = fine.level();
    e.annuli = fine.annulus_contributions(beta, N);
    e.value = pairwise_sum(e.annuli);
    e.lemma_weighted = fine.ball_sum(beta, 0, N);
    if (coarse) e.error = std::abs(e.value - coarse->direct_integral(beta));
    return e;
}

inline BesovEstimate besov_annulus_sum(const GridFunction<double>& u, double beta, int N, int m) {
    if (m < N + 2) throw DomainError("besov_annulus_sum: quadrature level must be at least N + 2");
    if (m > u.level()) throw DomainError("besov_annulus_sum: quadrature level exceeds grid level");
    const auto fine = PairHistogram::build(CellTable::build(u, m));
    const auto coarse = PairHistogram::build(CellTable::build(u, m - 1));
    return besov_annulus_sum(fine, &coarse, beta, N);
}

struct MonteCarloOptions {
    std::uint64_t samples = 100000;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::uint64_t block = 1u << 16;
};

/// Monte-Carlo estimate of the same level-m quadrature: X, Y are uniform
/// level-m cells (uniform digit strings); X = Y draws are resampled and the
/// mean is rescaled by (1 - 3^{-m}) so it targets the ordered-pair sum.
inline BesovEstimate besov_monte_carlo(const CellTable& t, double beta, const MonteCarloOptions& opt) {
    if (opt.samples < 1) throw DomainError("besov_monte_carlo: need at least one sample");
    const std::uint64_t ncells = t.size();
    if (ncells < 2) throw DomainError("besov_monte_carlo: quadrature level must be at least 1");
    const std::uint64_t nblocks = (opt.samples + opt.block - 1) / opt.block;
    struct Partial {
        double sum = 0, sumsq = 0;
        std::uint64_t discarded = 0;
    };
    const StreamSeed root(opt.seed);
    const double exponent = -(kAlpha + beta) / 2.0;
    auto partials = parallel_map<Partial>(nblocks, opt.workers, [&](std::size_t b) {
        auto gen = root.child("besov_monte_carlo").child(b).engine();
        const std::uint64_t begin = b * opt.block;
        const std::uint64_t end = std::min(opt.samples, begin + opt.block);
        Partial p;
        for (std::uint64_t s = begin; s < end; ++s) {
            std::uint64_t x, y;
            for (;;) {
                x = uniform_below(gen, ncells);
                y = uniform_below(gen, ncells);
                if (x != y) break;
                ++p.discarded;
            }
            const double d = t.value[x] - t.value[y];
            const double f = d * d * std::pow(t.squared_distance(t.key(x, y)), exponent);
            p.sum += f;
            p.sumsq += f * f;
        }
        return p;
    });
    double sum = 0, sumsq = 0;
    std::uint64_t discarded = 0;
    for (const auto& p : partials) {
        sum += p.sum;
        sumsq += p.sumsq;
        discarded += p.discarded;
    }
    const double n = static_cast<double>(opt.samples);
    const double mean = sum / n;
    const double var = opt.samples > 1 ? std::max(0.0, (sumsq - n * mean * mean) / (n - 1.0)) : 0.0;
    const double correction = 1.0 - 1.0 / static_cast<double>(ncells);
    BesovEstimate e;
    e.method = "monte_carlo";
    e.level = t.level;
    e.value = mean * correction;
    e.error = std::sqrt(var / n) * correction;
    e.seed = opt.seed;
    e.samples = opt.samples;
    e.discarded = discarded;
    return e;
}

inline BesovEstimate besov_monte_carlo(const GridFunction<double>& u, double beta, const MonteCarloOptions& opt) {
    return besov_monte_carlo(CellTable::build(u, u.level()), beta, opt);
}

// ---------------------------------------------------------------------------
// Hoelder ratio

/// max over p != q in V_k of (u(p) - u(q))^2 / (E |p - q|^{beta - alpha}).
inline double hoelder_ratio(const GridFunction<double>& u, double beta, double energy, int k) {
    if (k > u.level()) throw DomainError("hoelder_ratio: level exceeds grid level");
    const GridFunction<double> v = u.restrict_to(k);
    if (v.is_constant()) return 0.0;
    if (!(energy > 0.0)) throw DomainError("hoelder_ratio: zero energy for a nonconstant function");
    const Mesh& g = mesh(k);
    const double e = (beta - kAlpha) / 2.0;
    double best = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        for (std::size_t j = i + 1; j < g.size(); ++j) {
            const double d = v[i] - v[j];
            if (d == 0.0) continue;
            const double r = d * d / std::pow(squared_distance(g.vertices[i], g.vertices[j]).value(), e);
            best = std::max(best, r);
        }
    }
    return best / energy;
}

inline double hoelder_ratio(const GridFunction<double>& u, double beta, double energy) {
    return hoelder_ratio(u, beta, energy, u.level());
}

// ---------------------------------------------------------------------------
// Unit interval and trace

/// Values on the dyadic points i / 2^level of [0, 1].
struct DyadicGrid {
    int level = 0;
    std::vector<double> values;
};

/// sum_{n=1}^{N} 2^{(beta2-1) n} sum_i (v(i/2^n) - v((i+1)/2^n))^2.
inline double interval_level_sum(const DyadicGrid& v, int n) {
    if (n > v.level) throw DomainError("interval level exceeds grid level");
    const std::size_t stride = std::size_t{1} << (v.level - n);
    std::vector<double> terms;
    for (std::size_t i = 0; i + stride < v.values.size(); i += stride) {
        const double d = v.values[i] - v.values[i + stride];
        terms.push_back(d * d);
    }
    return pairwise_sum(terms);
}

inline double interval_seminorm(const DyadicGrid& v, double beta2, int N) {
    if (!(beta2 > 1.0)) throw DomainError("interval_seminorm: beta must exceed 1");
    if (v.values.size() != (std::size_t{1} << v.level) + 1) throw DomainError("interval grid has wrong size");
    if (N > v.level) throw DomainError("interval_seminorm: N exceeds grid level");
    std::vector<double> terms;
    for (int n = 1; n <= N; ++n) terms.push_back(std::exp2((beta2 - 1.0) * n) * interval_level_sum(v, n));
    return pairwise_sum(terms);
}

/// Restriction to the bottom edge [p_0, p_1].
inline DyadicGrid trace_restrict(const GridFunction<double>& u) {
    const int m = u.level();
    DyadicGrid v;
    v.level = m;
    const std::int64_t count = std::int64_t{1} << m;
    for (std::int64_t i = 0; i <= count; ++i) v.values.push_back(u.at(DyadicPoint(m, i, 0)));
    return v;
}

struct TraceLevel {
    int n = 0;
    double interval_term = 0.0;  ///< 2^{(beta2-1)n} * 1D pair sum
    double gasket_term = 0.0;    ///< 2^{(beta1-alpha)n} * b_n
    bool holds = false;
};

/// Level-by-level comparison with beta2 = beta1 - alpha + 1.
inline std::vector<TraceLevel> trace_termwise(const GridFunction<double>& u, double beta1, int N) {
    if (N > u.level()) throw DomainError("trace_termwise: N exceeds grid level");
    const double beta2 = beta1 - kAlpha + 1.0;
    const DyadicGrid v = trace_restrict(u);
    std::vector<TraceLevel> out;
    for (int n = 1; n <= N; ++n) {
        TraceLevel t;
        t.n = n;
        t.interval_term = std::exp2((beta2 - 1.0) * n) * interval_level_sum(v, n);
        t.gasket_term = level_weight(beta1, n) * level_pair_sum(u, n);
        t.holds = t.interval_term <= t.gasket_term;
        out.push_back(t);
    }
    return out;
}

}  // namespace sgforms
