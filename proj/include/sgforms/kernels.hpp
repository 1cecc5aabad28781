#pragma once

// Jumping kernels built from deep cells K_{w d^r} (d repeated r = gamma n i
// times) around the corners of level-n cells, their truncations, and the
// weighted non-local energies they define.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgforms/functions.hpp"
#include "sgforms/gasket.hpp"
#include "sgforms/parallel.hpp"
#include "sgforms/seminorms.hpp"

namespace sgforms {

struct KernelSpec {
    int i = 1;
    double beta_i = 2.0;
    int gamma = 1;
    int phi = 1;
    double delta_i = 0.5;

    double lambda() const { return std::exp2(-beta_i); }
    /// 5 lambda - 1, the prefactor of the weighted energy.
    double weight() const { return 5.0 * lambda() - 1.0; }
    /// Repeat count of the deep cells at level n.
    std::int64_t repeats(int n) const { return static_cast<std::int64_t>(gamma) * n * i; }
};

inline void to_json(nlohmann::json& j, const KernelSpec& s) {
    j = nlohmann::json{{"i", s.i}, {"beta_i", s.beta_i}, {"gamma", s.gamma}, {"phi", s.phi}, {"delta_i", s.delta_i}, {"lambda_i", s.lambda()}};
}

/// alpha - gamma i < 0 and alpha - ((beta - alpha)/2) gamma i < 0.
inline bool gamma_admissible(int gamma, int i, double beta) {
    const double gi = static_cast<double>(gamma) * i;
    return kAlpha - gi < 0.0 && kAlpha - (beta - kAlpha) / 2.0 * gi < 0.0;
}

/// Smallest admissible gamma at index i.
inline int minimal_gamma(int i, double beta) {
    if (!(beta > kAlpha && beta < kBetaStar)) throw DomainError("minimal_gamma: beta must lie in (alpha, beta*)");
    int g = 1;
    while (!gamma_admissible(g, i, beta)) ++g;
    return g;
}

/// Checked construction.  gamma must be admissible at (i_ref, beta_ref), the
/// smallest index of the schedule this KernelSpec belongs to (defaults to its own i).
inline KernelSpec make_kernel_spec(int i, double beta_i, int gamma, int phi, double delta_i, std::optional<std::pair<int, double>> ref = {}) {
    if (i < 1) throw DomainError("kernel index must be >= 1");
    if (!(beta_i > kAlpha && beta_i < kBetaStar)) throw DomainError("beta_i must lie in (alpha, beta*)");
    if (gamma < 1) throw DomainError("gamma must be a positive integer");
    if (phi < 1) throw DomainError("phi must be a positive integer");
    if (!(delta_i > 0.0 && delta_i < 1.0)) throw DomainError("delta_i must lie in (0, 1)");
    const auto [ri, rb] = ref.value_or(std::pair{i, beta_i});
    if (!gamma_admissible(gamma, ri, rb))
        throw DomainError("gamma = " + std::to_string(gamma) + " is not admissible at i = " + std::to_string(ri) +
                          " (needs alpha - gamma i < 0 and alpha - (beta - alpha) gamma i / 2 < 0)");
    KernelSpec s{i, beta_i, gamma, phi, delta_i};
    if (!(s.weight() * phi >= i)) throw DomainError("phi too small: (5 lambda - 1) phi < i");
    return s;
}

/// Smallest integer phi with w * phi >= i.
inline int choose_phi_for_weight(int i, double w) {
    if (!(w > 0.0)) throw DomainError("choose_phi: weight 5 * 2^-beta - 1 must be positive");
    double guess = std::ceil(i / w);
    if (guess > 1e9) throw DomainError("choose_phi: phi out of range");
    auto phi = static_cast<int>(guess);
    while (phi > 1 && w * (phi - 1) >= i) --phi;
    while (w * phi < i) ++phi;
    return phi;
}

/// choose_phi for beta_i, kept >= the previous index's value.
inline int choose_phi(int i, double beta_i, int previous = 0) {
    if (!(beta_i > kAlpha)) throw DomainError("choose_phi: beta must exceed alpha");
    if (!(beta_i < kBetaStar)) throw DomainError("choose_phi: beta must be below beta*");
    return std::max(previous, choose_phi_for_weight(i, 5.0 * std::exp2(-beta_i) - 1.0));
}

inline double delta_schedule(const std::string& id, int i) {
    if (id == "one_minus_two_pow_neg_i") return 1.0 - std::ldexp(1.0, -i);
    throw DomainError("unknown delta schedule \"" + id + "\"");
}

inline double beta_schedule(const std::string& id, int i) {
    if (id == "beta_star_minus_halving") return kBetaStar - (kBetaStar - kAlpha) * std::ldexp(1.0, -i);
    throw DomainError("unknown beta schedule \"" + id + "\"");
}

/// Specs for i = 1..i_max.  gamma = 0 picks the minimal admissible value at i = 1.
inline std::vector<KernelSpec> kernel_schedule(int i_max, int gamma, const std::string& delta_id, const std::string& beta_id) {
    if (i_max < 1) throw DomainError("i_max must be >= 1");
    const double beta1 = beta_schedule(beta_id, 1);
    if (gamma == 0) gamma = minimal_gamma(1, beta1);
    std::vector<KernelSpec> out;
    int phi = 0;
    for (int i = 1; i <= i_max; ++i) {
        const double b = beta_schedule(beta_id, i);
        phi = choose_phi(i, b, phi);
        out.push_back(make_kernel_spec(i, b, gamma, phi, delta_schedule(delta_id, i), std::pair{1, beta1}));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Deep cells

/// K_{w d^r}: the cell of depth |w| + r shrinking onto the corner p = P_{w d}.
struct DeepCell {
    Word base;
    int digit = 0;
    std::int64_t repeats = 0;
    int index = 0;  ///< kernel index i, for error messages

    int n() const { return base.size(); }
    std::int64_t depth() const { return n() + repeats; }
    DyadicPoint point() const { return cell_point(base.append(digit)); }
    Rational measure() const { return Rational(1, boost::multiprecision::pow(BigInt(3), static_cast<unsigned>(depth()))); }
    double radius() const { return std::ldexp(1.0, -static_cast<int>(depth())); }

    Word address() const {
        if (depth() > kMaxDepth)
            throw DepthOverflow("deep cell at n = " + std::to_string(n()) + ", i = " + std::to_string(index) + " has depth " +
                                std::to_string(depth()) + " > " + std::to_string(kMaxDepth));
        return base.concat(Word::repeated(digit, static_cast<int>(repeats)));
    }

    /// Whether a point with address `a` lies in this cell (prefix test).
    bool contains(const Word& a) const {
        if (a.size() < depth()) throw DomainError("address shorter than deep cell depth");
        if (!a.has_prefix(base)) return false;
        for (std::int64_t k = 0; k < repeats; ++k)
            if (a.digit(n() + static_cast<int>(k)) != digit) return false;
        return true;
    }
};

inline DeepCell deep_cell(const Word& w, const DyadicPoint& p, const KernelSpec& spec) {
    if (w.empty()) throw DomainError("deep cells need n >= 1");
    const auto v = cell_vertices(w);
    for (int d = 0; d < 3; ++d)
        if (v[static_cast<std::size_t>(d)] == p) return DeepCell{w, d, spec.repeats(w.size()), spec.i};
    throw DomainError("point is not a corner of cell " + w.to_string());
}

/// Largest n whose deep cells fit in `depth` digits.
inline int deep_levels_within(const KernelSpec& spec, int depth) {
    int n = 0;
    while (n + 1 + spec.repeats(n + 1) <= depth) ++n;
    return n;
}

/// c_i (truncated = false, levels while deep cells fit in the address
/// depth) or C_i (truncated = true, n <= phi).  Each point is given by all of
/// its addresses of a common depth D; a (w, p) is counted once if any
/// address of the point lies in K_{w d^r}.
inline double kernel_value(std::span<const Word> xs, std::span<const Word> ys, const KernelSpec& spec, bool truncated) {
    if (xs.empty() || ys.empty()) throw DomainError("kernel_value: empty address set");
    const int D = xs.front().size();
    for (const auto& a : xs)
        if (a.size() != D) throw DomainError("kernel_value: addresses must share one depth");
    for (const auto& a : ys)
        if (a.size() != D) throw DomainError("kernel_value: addresses must share one depth");
    int top = deep_levels_within(spec, D);
    if (truncated) {
        if (top < spec.phi)
            throw DomainError("kernel_value: address depth " + std::to_string(D) + " is below the deepest truncated deep cell (" +
                              std::to_string(spec.phi + spec.repeats(spec.phi)) + ")");
        top = spec.phi;
    }
    // Per n, the matching (w code, d) pairs of each point.
    auto matches = [&](std::span<const Word> addrs, int n) {
        std::vector<std::pair<std::uint64_t, int>> out;
        const auto r = spec.repeats(n);
        for (const auto& a : addrs) {
            const int d = a.digit(n);
            bool ok = true;
            for (std::int64_t k = 1; k < r && ok; ++k) ok = a.digit(n + static_cast<int>(k)) == d;
            if (ok) out.emplace_back(a.prefix(n).code(), d);
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    };
    double total = 0.0;
    for (int n = 1; n <= top; ++n) {
        const auto mx = matches(xs, n), my = matches(ys, n);
        int count = 0;
        for (const auto& [wx, dx] : mx)
            for (const auto& [wy, dy] : my)
                if (wx == wy && dx != dy) ++count;
        // 2^{-2 alpha n} / (nu nu) = 9^{-n} 9^{n + r} = 9^r
        if (count) total += count * std::pow(9.0, static_cast<double>(spec.repeats(n)));
    }
    return total;
}

inline double kernel_value(const Word& x, const Word& y, const KernelSpec& spec, bool truncated) {
    return kernel_value(std::span<const Word>(&x, 1), std::span<const Word>(&y, 1), spec, truncated);
}

/// a_i = delta C_i + (1 - delta).
inline double blended_kernel_value(std::span<const Word> xs, std::span<const Word> ys, const KernelSpec& spec) {
    return spec.delta_i * kernel_value(xs, ys, spec, true) + (1.0 - spec.delta_i);
}

/// Upper bound of C_i: sum_{n<=phi} 9^{gamma n i} times the largest number
/// of (w, p, q) a pair of points can share at level n (2 once r >= 2,
/// when deep cells of one w are disjoint; 4 for r = 1).
inline double kernel_max(const KernelSpec& spec) {
    double s = 0.0;
    for (int n = 1; n <= spec.phi; ++n) {
        const auto r = spec.repeats(n);
        s += (r >= 2 ? 2.0 : 4.0) * std::pow(9.0, static_cast<double>(r));
    }
    return s;
}

/// sum over (w, p != q) at level n of nu(K_p) nu(K_q) 2^{-2 alpha n} / (nu(K_p) nu(K_q)), i.e. 6 * 3^n * 9^{-n}.
inline Rational layer_mass(const KernelSpec& spec, int n) {
    Rational total = 0;
    const Rational level_weight(1, boost::multiprecision::pow(BigInt(9), static_cast<unsigned>(n)));
    for (std::uint64_t c = 0; c < pow3(n); ++c) {
        const Word w = Word::from_code(c, n);
        const auto v = cell_vertices(w);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                if (a == b) continue;
                const auto kp = deep_cell(w, v[static_cast<std::size_t>(a)], spec);
                const auto kq = deep_cell(w, v[static_cast<std::size_t>(b)], spec);
                total += kp.measure() * kq.measure() * level_weight / (kp.measure() * kq.measure());
            }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Deep-cell pair averages

namespace detail {

inline std::array<double, 3> repeat_child(std::array<double, 3> v, int d, std::int64_t r) {
    for (std::int64_t k = 0; k < r; ++k) {
        const auto next = child_corner_values(v, d);
        if (next == v) break;
        v = next;
    }
    return v;
}

/// Corner values of K_{w d^r s}: grid values as deep as the grid level
/// reaches, harmonic child maps below it.
inline std::array<double, 3> path_corner_values(const GridFunction<double>& u, const Word& w, int d, std::int64_t r, const Word& sub) {
    const int L = u.level();
    Word head = w.size() <= L ? w : w.prefix(L);
    std::int64_t used_r = 0;
    int used_sub = 0;
    if (w.size() <= L) {
        used_r = std::min<std::int64_t>(r, L - w.size());
        head = w.concat(Word::repeated(d, static_cast<int>(used_r)));
        if (used_r == r) {
            used_sub = std::min(sub.size(), L - head.size());
            head = head.concat(sub.prefix(used_sub));
        }
    }
    auto v = u.corner_values(head);
    for (int k = head.size(); k < w.size(); ++k) v = child_corner_values(v, w.digit(k));
    v = repeat_child(v, d, r - used_r);
    for (int k = used_sub; k < sub.size(); ++k) v = child_corner_values(v, sub.digit(k));
    return v;
}

inline double path_mean(const GridFunction<double>& u, const Word& w, int d, std::int64_t r, const Word& sub) {
    const auto v = path_corner_values(u, w, d, r, sub);
    return (v[0] + v[1] + v[2]) / 3.0;
}

/// Sub-cells of a unit cell at `levels` extra levels: centroid offset from
/// corner d (in units of the cell side) and the word.
struct SubCell {
    double dx, dy;
    Word word;
};

inline std::vector<SubCell> sub_cells(int d, int levels) {
    std::vector<SubCell> out;
    const DyadicPoint pd = corner(d);
    for (std::uint64_t c = 0; c < pow3(levels); ++c) {
        const Word v = Word::from_code(c, levels);
        const auto cv = cell_vertices(v);
        double x = 0, y = 0;
        for (const auto& q : cv) {
            x += q.x() / 3.0;
            y += q.y() / 3.0;
        }
        out.push_back({x - pd.x(), y - pd.y(), v});
    }
    return out;
}

}  // namespace detail

/// (1/nu nu) integral over K_{w a^r} x K_{w b^r} of (u(x)-u(y))^2 / |x-y|^{alpha+beta},
/// by a pair sum over sub-cells `levels` deeper inside each deep cell.
inline double deep_pair_average(const GridFunction<double>& u, const Word& w, int a, int b, const KernelSpec& spec, int levels = 2) {
    if (a == b) throw DomainError("deep_pair_average: corners must differ");
    const int n = w.size();
    const auto r = spec.repeats(n);
    const auto sa = detail::sub_cells(a, levels), sb = detail::sub_cells(b, levels);
    const DyadicPoint pa = corner(a), pb = corner(b);
    const double shrink = std::ldexp(1.0, -static_cast<int>(std::min<std::int64_t>(r, 1000)));
    const double scale = std::ldexp(1.0, -n);
    const double e = -(kAlpha + spec.beta_i) / 2.0;
    std::vector<double> ua, ub;
    for (const auto& s : sa) ua.push_back(detail::path_mean(u, w, a, r, s.word));
    for (const auto& s : sb) ub.push_back(detail::path_mean(u, w, b, r, s.word));
    std::vector<double> terms;
    terms.reserve(sa.size() * sb.size());
    for (std::size_t k = 0; k < sa.size(); ++k)
        for (std::size_t l = 0; l < sb.size(); ++l) {
            const double dx = scale * ((pa.x() - pb.x()) + shrink * (sa[k].dx - sb[l].dx));
            const double dy = scale * ((pa.y() - pb.y()) + shrink * (sa[k].dy - sb[l].dy));
            const double du = ua[k] - ub[l];
            terms.push_back(du * du * std::pow(dx * dx + dy * dy, e));
        }
    return pairwise_sum(terms) / static_cast<double>(terms.size());
}

/// The same average by Monte Carlo: `samples` uniform pairs of depth-`depth`
/// sub-addresses inside the two deep cells.  Returns mean and standard error.
inline std::pair<double, double> deep_pair_average_mc(const GridFunction<double>& u, const Word& w, int a, int b, const KernelSpec& spec,
                                                      std::uint64_t samples, const StreamSeed& seed, int depth = 12) {
    if (samples < 10) throw DomainError("deep_pair_average_mc: at least 10 samples per cell pair");
    const int n = w.size();
    const auto r = spec.repeats(n);
    const DyadicPoint pa = corner(a), pb = corner(b);
    const double shrink = std::ldexp(1.0, -static_cast<int>(std::min<std::int64_t>(r, 1000)));
    const double scale = std::ldexp(1.0, -n);
    const double e = -(kAlpha + spec.beta_i) / 2.0;
    auto gen = seed.engine();
    auto draw = [&](int d, double& ox, double& oy) {
        // centroid of a uniform depth-`depth` sub-cell, relative to corner d
        double x = 0, y = 0, s = 1.0;
        Word sub;
        for (int k = 0; k < depth; ++k) {
            const int digit = static_cast<int>(uniform_below(gen, 3));
            sub = sub.append(digit);
            s *= 0.5;
            const DyadicPoint c = corner(digit);
            x += s * c.x();
            y += s * c.y();
        }
        // sub-cell centroid = sum_k 2^{-k} p_{digit_k} + 2^{-depth} * (centroid of K)
        x += s * 0.5;
        y += s * std::sqrt(3.0) / 6.0;
        const DyadicPoint pd = corner(d);
        ox = x - pd.x();
        oy = y - pd.y();
        return detail::path_mean(u, w, d, r, sub);
    };
    double sum = 0, sumsq = 0;
    for (std::uint64_t s = 0; s < samples; ++s) {
        double ax, ay, bx, by;
        const double ux = draw(a, ax, ay);
        const double uy = draw(b, bx, by);
        const double dx = scale * ((pa.x() - pb.x()) + shrink * (ax - bx));
        const double dy = scale * ((pa.y() - pb.y()) + shrink * (ay - by));
        const double f = (ux - uy) * (ux - uy) * std::pow(dx * dx + dy * dy, e);
        sum += f;
        sumsq += f * f;
    }
    const double m = sum / static_cast<double>(samples);
    const double var = std::max(0.0, (sumsq - samples * m * m) / static_cast<double>(samples - 1));
    return {m, std::sqrt(var / static_cast<double>(samples))};
}

// ---------------------------------------------------------------------------
// Kernel-weighted energies

struct KernelOptions {
    std::string estimator = "pairsum";  ///< pairsum | monte_carlo
    int explicit_cap = 7;               ///< deepest n whose deep-cell averages are computed
    int sub_levels = 2;
    std::uint64_t mc_samples_per_pair = 16;
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

/// sum_{n in [1, top]} 2^{-2 alpha n} sum_{w, p != q} (deep-cell pair average),
/// one entry per n.  `error` collects per-level |levels - (levels - 1)|
/// sub-cell differences (pairsum) or standard errors (monte_carlo).
struct DeepLayerSums {
    std::vector<double> value;
    std::vector<double> error;
};

inline DeepLayerSums deep_layer_sums(const GridFunction<double>& u, const KernelSpec& spec, int top, const KernelOptions& opt) {
    DeepLayerSums out;
    const bool mc = opt.estimator == "monte_carlo";
    if (!mc && opt.estimator != "pairsum") throw DomainError("unknown kernel estimator \"" + opt.estimator + "\"");
    const StreamSeed root = StreamSeed(opt.seed).child("kernel_deep_cells").child(static_cast<std::uint64_t>(spec.i));
    for (int n = 1; n <= top; ++n) {
        const std::uint64_t cells = pow3(n);
        struct Acc {
            double value = 0, error = 0;
        };
        auto parts = parallel_map<Acc>(cells, opt.workers, [&](std::size_t code) {
            const Word w = Word::from_code(code, n);
            Acc acc;
            std::vector<double> vals, errs;
            for (int a = 0; a < 3; ++a)
                for (int b = 0; b < 3; ++b) {
                    if (a == b) continue;
                    if (mc) {
                        const auto seed = root.child(static_cast<std::uint64_t>(n)).child(code).child(static_cast<std::uint64_t>(3 * a + b));
                        const auto [m, se] = deep_pair_average_mc(u, w, a, b, spec, opt.mc_samples_per_pair, seed);
                        vals.push_back(m);
                        errs.push_back(se * se);
                    } else {
                        const double fine = deep_pair_average(u, w, a, b, spec, opt.sub_levels);
                        const double coarse = deep_pair_average(u, w, a, b, spec, std::max(0, opt.sub_levels - 1));
                        vals.push_back(fine);
                        errs.push_back(std::abs(fine - coarse));
                    }
                }
            acc.value = pairwise_sum(vals);
            acc.error = pairwise_sum(errs);
            return acc;
        });
        std::vector<double> v, e;
        for (const auto& p : parts) {
            v.push_back(p.value);
            e.push_back(p.error);
        }
        const double w = std::pow(9.0, -n);
        out.value.push_back(w * pairwise_sum(v));
        out.error.push_back(mc ? w * std::sqrt(pairwise_sum(e)) : w * pairwise_sum(e));
    }
    return out;
}

/// b_n for any n: the pair sum on the grid, (3/5)^{n-m} b_m beyond it (the
/// function is harmonic below its grid level).
inline double pair_sum_any(const GridFunction<double>& u, int n) {
    const int m = u.level();
    if (n <= m) return level_pair_sum(u, n);
    return ipow(0.6, n - m) * level_pair_sum(u, m);
}

struct KernelEnergy {
    double value = 0.0;       ///< (5 lambda - 1) (delta C part + (1 - delta) plain part)
    double c_part = 0.0;      ///< the C_i-weighted integral
    double plain_part = 0.0;  ///< the Besov integral at beta_i (level-m quadrature)
    double discrete_reference = 0.0;  ///< sum_{n<=phi} 2^{(beta-alpha)n} b_n
    int explicit_levels = 0;
    int point_mass_levels = 0;
    double c_error = 0.0;           ///< sub-cell discretisation or MC error of the explicit levels
    double point_mass_error = 0.0;  ///< bound for the point-mass levels
    double plain_error = 0.0;
};

inline void to_json(nlohmann::json& j, const KernelEnergy& k) {
    j = nlohmann::json{{"value", k.value},
                       {"c_part", k.c_part},
                       {"plain_part", k.plain_part},
                       {"discrete_reference", k.discrete_reference},
                       {"explicit_levels", k.explicit_levels},
                       {"point_mass_levels", k.point_mass_levels},
                       {"c_error", k.c_error},
                       {"point_mass_error", k.point_mass_error},
                       {"plain_error", k.plain_error}};
}

/// (5 lambda_i - 1) times the a_i-weighted Besov integral.  Levels n beyond
/// opt.explicit_cap use the point mass 2^{(beta-alpha)n} b_n; their error
/// is bounded by the largest relative deviation seen on the explicit levels.
/// `plain` and `plain_coarse` are the quadrature histograms at levels m and m-1.
inline KernelEnergy weighted_kernel_energy(const GridFunction<double>& u, const KernelSpec& spec, const KernelOptions& opt,
                                           const PairHistogram& plain, const PairHistogram* plain_coarse = nullptr) {
    KernelEnergy k;
    const int top = std::min({spec.phi, opt.explicit_cap, std::max(1, u.level())});
    k.explicit_levels = top;
    k.point_mass_levels = spec.phi - top;
    const auto layers = deep_layer_sums(u, spec, top, opt);
    std::vector<double> c_terms = layers.value, ref_terms;
    double worst = 0.0;
    for (int n = 1; n <= spec.phi; ++n) {
        const double pm = level_weight(spec.beta_i, n) * pair_sum_any(u, n);
        ref_terms.push_back(pm);
        if (n <= top) {
            if (pm > 0.0) worst = std::max(worst, std::abs(layers.value[static_cast<std::size_t>(n - 1)] - pm) / pm);
        } else {
            c_terms.push_back(pm);
        }
    }
    k.c_part = pairwise_sum(c_terms);
    k.discrete_reference = pairwise_sum(ref_terms);
    k.c_error = pairwise_sum(layers.error);
    if (k.point_mass_levels > 0) k.point_mass_error = worst * pairwise_sum(std::span<const double>(ref_terms).subspan(static_cast<std::size_t>(top)));
    k.plain_part = plain.direct_integral(spec.beta_i);
    if (plain_coarse) k.plain_error = std::abs(k.plain_part - plain_coarse->direct_integral(spec.beta_i));
    k.value = spec.weight() * (spec.delta_i * k.c_part + (1.0 - spec.delta_i) * k.plain_part);
    return k;
}

inline KernelEnergy weighted_kernel_energy(const GridFunction<double>& u, const KernelSpec& spec, const KernelOptions& opt, int quadrature_level) {
    const auto fine = PairHistogram::build(CellTable::build(u, quadrature_level));
    return weighted_kernel_energy(u, spec, opt, fine);
}

// ---------------------------------------------------------------------------
// Sandwich

/// 2^{alpha - gamma i}/(1 - .) + 2^{alpha - ((beta-alpha)/2) gamma i}/(1 - .);
/// infinite when either ratio is >= 1.
inline double sandwich_factor(const KernelSpec& spec) {
    const double gi = static_cast<double>(spec.gamma) * spec.i;
    const double t1 = std::exp2(kAlpha - gi);
    const double t2 = std::exp2(kAlpha - (spec.beta_i - kAlpha) / 2.0 * gi);
    if (t1 >= 1.0 || t2 >= 1.0) return INFINITY;
    return t1 / (1.0 - t1) + t2 / (1.0 - t2);
}

inline double sandwich_slack(const KernelSpec& spec, double c_hat) { return c_hat * sandwich_factor(spec); }

struct SandwichReport {
    double lower = 0.0;
    double middle = 0.0;  ///< c_i-weighted integral over levels 1..levels
    double upper = 0.0;
    double reference = 0.0;  ///< sum_{n<=levels} 2^{(beta-alpha)n} b_n
    double slack = 0.0;
    double deviation = 0.0;  ///< |middle - reference| / (reference * factor), for calibration
    int levels = 0;
    bool vacuous = false;
    bool holds = false;
};

inline void to_json(nlohmann::json& j, const SandwichReport& s) {
    j = nlohmann::json{{"lower", s.lower},   {"middle", s.middle},       {"upper", s.upper},   {"reference", s.reference},
                       {"slack", s.slack},   {"deviation", s.deviation}, {"levels", s.levels}, {"vacuous", s.vacuous},
                       {"holds", s.holds}};
}

/// Compares the c_i-weighted integral with the discrete sum over the levels
/// the grid resolves (n <= min(level, explicit_cap)).
inline SandwichReport kernel_sandwich_check(const GridFunction<double>& u, const KernelSpec& spec, double c_hat, const KernelOptions& opt = {}) {
    SandwichReport s;
    s.levels = std::max(1, std::min(u.level(), opt.explicit_cap));
    const auto layers = deep_layer_sums(u, spec, s.levels, opt);
    std::vector<double> ref;
    for (int n = 1; n <= s.levels; ++n) ref.push_back(level_weight(spec.beta_i, n) * level_pair_sum(u, n));
    s.middle = pairwise_sum(layers.value);
    s.reference = pairwise_sum(ref);
    const double factor = sandwich_factor(spec);
    s.slack = c_hat * factor;
    s.lower = (1.0 - s.slack) * s.reference;
    s.upper = (1.0 + s.slack) * s.reference;
    s.deviation = s.reference > 0.0 && std::isfinite(factor) ? std::abs(s.middle - s.reference) / (s.reference * factor) : 0.0;
    s.vacuous = !(s.slack < 1.0);
    s.holds = s.lower <= s.middle && s.middle <= s.upper;
    return s;
}

}  // namespace sgforms
