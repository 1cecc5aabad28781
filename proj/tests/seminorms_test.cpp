#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "sgforms/functions.hpp"
#include "sgforms/seminorms.hpp"

using namespace sgforms;

namespace {

const double kLog3 = std::log2(3.0);

// b_n straight from the definition: every word, every ordered pair of
// distinct corners, values looked up by point.
Rational brute_pair_sum(const GridFunction<Rational>& u, int n) {
    Rational s = 0;
    for (std::uint64_t c = 0; c < pow3(n); ++c) {
        auto v = cell_vertices(Word::from_code(c, n));
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) {
                    Rational d = u.at(v[static_cast<std::size_t>(i)]) - u.at(v[static_cast<std::size_t>(j)]);
                    s += d * d;
                }
    }
    return s;
}

struct Node {
    double x, y, value;
};

// Level-m cells with float centroids, from cell_vertices.
std::vector<Node> brute_nodes(const GridFunction<double>& u, int m) {
    std::vector<Node> out;
    for (std::uint64_t c = 0; c < pow3(m); ++c) {
        Word w = Word::from_code(c, m);
        auto v = cell_vertices(w);
        Node n{0, 0, 0};
        for (const auto& p : v) {
            n.x += p.x() / 3;
            n.y += p.y() / 3;
        }
        n.value = sample_at(u, w);
        out.push_back(n);
    }
    return out;
}

double brute_integral(const std::vector<Node>& nodes, int m, double beta, double rmin, double rmax) {
    const double w = std::pow(3.0, -2.0 * m);
    double s = 0;
    for (const auto& a : nodes)
        for (const auto& b : nodes) {
            if (&a == &b) continue;
            const double r = std::hypot(a.x - b.x, a.y - b.y);
            if (r >= rmin && r < rmax) s += w * (a.value - b.value) * (a.value - b.value) * std::pow(r, -(kLog3 + beta));
        }
    return s;
}

std::vector<TestFunction> corpus() {
    return {TestFunction::harmonic(1, 0, 0), TestFunction::coordinate_x(), TestFunction::coordinate_y(),
            TestFunction::hoelder_probe(Word::parse("00"))};
}

}  // namespace

TEST(LevelPairSum, UnitBoundaryFirstLevel) {
    auto u = energy_minimizing_interpolation<Rational>({Rational(1), Rational(0), Rational(0)}, 1);
    EXPECT_EQ(level_pair_sum(u, 1), Rational(12, 5));
    EXPECT_EQ(Rational(5, 3) * level_pair_sum(u, 1), Rational(4));
    EXPECT_EQ(level_pair_sum(u, 0), Rational(4));
}

TEST(LevelPairSum, MatchesDefinition) {
    for (const auto& f : corpus()) {
        auto g = f.exact_grid(5);
        for (int n = 0; n <= 5; ++n) {
            EXPECT_EQ(level_pair_sum(g.values, n), brute_pair_sum(g.values, n)) << f.name() << " n=" << n;
            EXPECT_NEAR(level_pair_sum(f.grid(5), n), (g.square_scale * brute_pair_sum(g.values, n)).convert_to<double>(), 1e-12);
        }
    }
}

TEST(LevelPairSum, ConstantIsZeroAndRejectsDeepLevels) {
    auto c = GridFunction<double>::constant(4, 2.0);
    for (int n = 0; n <= 4; ++n) EXPECT_EQ(level_pair_sum(c, n), 0.0);
    EXPECT_THROW(level_pair_sum(c, 5), DomainError);
}

TEST(LocalEnergy, HarmonicIsFourConstantIsZero) {
    auto a = local_energy_sequence(TestFunction::harmonic(1, 0, 0).grid(6), 6);
    for (double x : a.a) EXPECT_NEAR(x, 4.0, 1e-12);
    for (double d : a.increments) EXPECT_NEAR(d, 0.0, 1e-12);
    EXPECT_NEAR(a.e_loc_estimate(), 4.0, 1e-12);
    for (double x : local_energy_sequence(TestFunction::constant(1).grid(4), 4).a) EXPECT_EQ(x, 0.0);
}

TEST(LocalEnergy, NondecreasingExactlyOnCorpus) {
    for (const auto& f : corpus()) {
        for (int m = 1; m <= 5; ++m) {
            auto g = f.exact_grid(m + 2);
            auto a = exact_local_energies(g, m + 2);
            EXPECT_TRUE(is_nondecreasing<Rational>(a)) << f.name();
        }
    }
    // the coordinate functions actually increase
    auto a = exact_local_energies(TestFunction::coordinate_x().exact_grid(5), 5);
    EXPECT_LT(a[0], a[4]);
}

TEST(LocalEnergy, ArbitraryGridExtendedHarmonicallyIsNondecreasing) {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<Rational> v(vertex_count(3));
        for (auto& x : v) x = Rational(static_cast<long long>(gen() % 201) - 100, 7);
        auto g = extend_to(GridFunction<Rational>(3, v), 6);
        auto a = exact_local_energies(ExactGrid{g, Rational(1)}, 6);
        EXPECT_TRUE(is_nondecreasing<Rational>(a));
        EXPECT_EQ(a[3], a[5]);
    }
}

TEST(WeightedTailSum, ConstantSequenceClosedForm) {
    std::vector<double> a(30, 4.0);
    for (double lambda : {0.21, 0.24, 0.27, 0.30, 0.33}) {
        auto r = weighted_tail_sum(a, lambda, 30);
        const double closed = 4.0 * (1.0 - std::pow(5 * lambda, -30));
        EXPECT_NEAR(r.partial, closed, 1e-12);
        EXPECT_NEAR(r.partial + r.tail_bound, 4.0, 1e-12);
        EXPECT_DOUBLE_EQ(r.completed, 4.0);
        EXPECT_LE(r.partial, 4.0);
    }
}

TEST(WeightedTailSum, ConstantSequenceLimit) {
    std::vector<double> a(2000, 4.0);
    for (double lambda : {0.21, 0.27, 0.33}) EXPECT_NEAR(weighted_tail_sum(a, lambda, 2000).partial, 4.0, 1e-6);
    // N = 30 is only close to the limit near lambda = 1/3
    std::vector<double> b(30, 4.0);
    EXPECT_NEAR(weighted_tail_sum(b, 0.3333, 30).partial, 4.0, 1e-6);
    EXPECT_LT(weighted_tail_sum(b, 0.21, 30).partial, 3.1);
}

TEST(WeightedTailSum, TailBoundAndCompletion) {
    std::vector<double> a{1, 1.5, 2, 2.2, 2.3, 2.35};
    for (double lambda : {0.21, 0.25, 0.3}) {
        auto r = weighted_tail_sum(a, lambda, 6);
        const double q = 5 * lambda;
        double direct = 0;
        for (int n = 1; n <= 6; ++n) direct += std::pow(q, -n) * a[static_cast<std::size_t>(n - 1)];
        EXPECT_NEAR(r.partial, (q - 1) * direct, 1e-12);
        EXPECT_NEAR(r.completed, r.partial + r.tail_bound, 1e-12);
        EXPECT_LE(r.completed, a.back() + 1e-12);
    }
}

TEST(WeightedTailSum, CompletedNonincreasingInLambda) {
    const std::vector<double> grid{0.21, 0.24, 0.27, 0.30, 1.0 / 3.0 - 1e-9};
    for (const auto& f : corpus()) {
        auto a = extend_energies(local_energy_sequence(f.grid(8), 8).a, 30);
        double prev = INFINITY;
        for (double lambda : grid) {
            auto r = weighted_tail_sum(a, lambda, 30);
            EXPECT_LE(r.completed, prev + 1e-12) << f.name();
            EXPECT_LE(r.completed, a.back() + 1e-12);
            prev = r.completed;
        }
    }
}

TEST(WeightedTailSum, RejectsLambdaOutsideInterval) {
    std::vector<double> a(5, 1.0);
    EXPECT_THROW(weighted_tail_sum(a, 0.2, 5), DomainError);
    EXPECT_THROW(weighted_tail_sum(a, 1.0 / 3.0, 5), DomainError);
    EXPECT_THROW(weighted_tail_sum(a, 0.25, 6), DomainError);
}

TEST(ExponentIdentity, WeightEqualsLambdaForm) {
    auto u = TestFunction::coordinate_y().grid(8);
    auto a = local_energy_sequence(u, 8).a;
    for (double beta = 1.65; beta <= 2.30 + 1e-9; beta += 0.05) {
        const double q = 5.0 * std::exp2(-beta);
        for (int n = 1; n <= 8; ++n) {
            const double lhs = level_weight(beta, n) * level_pair_sum(u, n);
            const double rhs = std::pow(q, -n) * a[static_cast<std::size_t>(n - 1)];
            EXPECT_NEAR(lhs / rhs, 1.0, 1e-13) << beta << " " << n;
        }
    }
    for (int n = 0; n <= 30; ++n) EXPECT_EQ(pow3d(n), std::pow(3.0, n));
}

TEST(SemiNormReport, HarmonicPartialSum) {
    auto r = seminorm_report(TestFunction::harmonic(1, 0, 0).grid(6), 1.7, 6);
    const double q = 5.0 * std::exp2(-1.7);
    double expect = 0;
    for (int n = 1; n <= 6; ++n) expect += 4.0 * std::pow(q, -n);
    EXPECT_NEAR(r.E_beta_partial, expect, 1e-12);
    EXPECT_NEAR(r.weighted_total, (q - 1) * expect, 1e-12);
    EXPECT_TRUE(r.tail_flag);
    auto c = seminorm_report(TestFunction::constant(2).grid(3), 1.8, 3);
    EXPECT_EQ(c.E_beta_partial, 0.0);
    nlohmann::json j = r;
    EXPECT_TRUE(j.contains("E_beta_partial"));
    EXPECT_EQ(j["b_n"].size(), 6u);
}

TEST(PairHistogram, DirectIntegralMatchesBruteForce) {
    for (const auto& f : corpus()) {
        for (int m = 2; m <= 4; ++m) {
            auto g = f.grid(m);
            auto hist = PairHistogram::build(CellTable::build(g, m));
            auto nodes = brute_nodes(g, m);
            EXPECT_EQ(hist.pair_count(), pow3(m) * (pow3(m) - 1));
            for (double beta : {1.65, 2.0, 2.3}) {
                const double want = brute_integral(nodes, m, beta, 0, INFINITY);
                EXPECT_NEAR(hist.direct_integral(beta) / want, 1.0, 1e-10) << f.name();
            }
        }
    }
}

TEST(PairHistogram, AnnuliPartitionTheIntegral) {
    auto g = TestFunction::coordinate_x().grid(5);
    auto hist = PairHistogram::build(CellTable::build(g, 5));
    auto nodes = brute_nodes(g, 5);
    const int N = 3;
    auto ann = hist.annulus_contributions(1.8, N);
    ASSERT_EQ(ann.size(), static_cast<std::size_t>(N + 1));
    double total = 0;
    for (int n = 0; n <= N; ++n) {
        const double hi = std::ldexp(1.0, -n), lo = n == N ? 0.0 : std::ldexp(1.0, -n - 1);
        // tiny shifts keep float centroid distances on the exact side of a tie
        EXPECT_NEAR(ann[static_cast<std::size_t>(n)], brute_integral(nodes, 5, 1.8, lo - 1e-12, hi - 1e-12), 1e-9) << n;
        total += ann[static_cast<std::size_t>(n)];
    }
    EXPECT_NEAR(total / hist.direct_integral(1.8), 1.0, 1e-12);
}

TEST(PairHistogram, BallSumMatchesDefinition) {
    auto g = TestFunction::harmonic(1, 0, 0).grid(5);
    auto hist = PairHistogram::build(CellTable::build(g, 5));
    auto nodes = brute_nodes(g, 5);
    const double w = std::pow(3.0, -10.0);
    for (int q : {1, 4, 16}) {
        const double c = std::sqrt(q / 4.0);
        double want = 0;
        for (int n = 1; n <= 3; ++n) {
            double dn = 0;
            for (const auto& a : nodes)
                for (const auto& b : nodes)
                    if (&a != &b && std::hypot(a.x - b.x, a.y - b.y) < c * std::ldexp(1.0, -n) - 1e-12)
                        dn += w * (a.value - b.value) * (a.value - b.value);
            want += std::pow(3.0, n) * std::exp2(1.9 * n) * dn;
        }
        EXPECT_NEAR(hist.ball_sum(1.9, 1, 3, q) / want, 1.0, 1e-10) << q;
    }
}

TEST(BesovAnnulus, ConstantIsZeroAndGuards) {
    auto c = TestFunction::constant(1).grid(5);
    auto e = besov_annulus_sum(c, 1.7, 3, 5);
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.method, "annulus_pairsum");
    EXPECT_THROW(besov_annulus_sum(c, 1.7, 4, 5), DomainError);
    EXPECT_THROW(besov_annulus_sum(c, 1.7, 3, 6), DomainError);
}

TEST(BesovAnnulus, ComparableToDiscreteSeminormAcrossBeta) {
    auto g = TestFunction::harmonic(1, 0, 0).grid(7);
    auto fine = PairHistogram::build(CellTable::build(g, 7));
    double lo = INFINITY, hi = 0;
    for (double beta = 1.65; beta <= 2.3 + 1e-9; beta += 0.05) {
        auto e = besov_annulus_sum(fine, nullptr, beta, 5);
        auto s = seminorm_report(g, beta, 5);
        EXPECT_GT(e.value, 0.0);
        lo = std::min(lo, e.value / s.E_beta_partial);
        hi = std::max(hi, e.value / s.E_beta_partial);
    }
    EXPECT_LT(hi / lo, 100.0);
}

TEST(BesovMonteCarlo, ConstantGivesZero) {
    auto e = besov_monte_carlo(TestFunction::constant(3).grid(4), 1.7, {1000, 9, 1});
    EXPECT_EQ(e.value, 0.0);
    EXPECT_EQ(e.error, 0.0);
    EXPECT_EQ(e.samples, 1000u);
}

TEST(BesovMonteCarlo, BitReproducibleAcrossWorkers) {
    auto t = CellTable::build(TestFunction::coordinate_x().grid(5), 5);
    MonteCarloOptions o{200000, 42, 1, 1u << 12};
    auto a = besov_monte_carlo(t, 1.8, o);
    auto b = besov_monte_carlo(t, 1.8, o);
    o.workers = 6;
    auto c = besov_monte_carlo(t, 1.8, o);
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.value, c.value);
    EXPECT_EQ(a.error, c.error);
    EXPECT_EQ(a.discarded, c.discarded);
    o.seed = 43;
    EXPECT_NE(besov_monte_carlo(t, 1.8, o).value, a.value);
}

TEST(BesovMonteCarlo, AgreesWithQuadrature) {
    for (const auto& f : corpus()) {
        auto g = f.grid(5);
        auto t = CellTable::build(g, 5);
        const double exact = PairHistogram::build(t).direct_integral(1.7);
        auto e = besov_monte_carlo(t, 1.7, {400000, 7, 2});
        EXPECT_LT(std::abs(e.value - exact), 4 * e.error) << f.name();
        // about 1 in 243 draws collides
        EXPECT_GT(e.discarded, 0u);
        EXPECT_LT(e.discarded, 400000u / 100);
    }
}

TEST(BesovMonteCarlo, NondecreasingInBetaForSharedSeed) {
    // every pair distance is at most 1, so the integrand grows with beta
    for (const auto& f : corpus()) {
        auto t = CellTable::build(f.grid(6), 6);
        auto lo = besov_monte_carlo(t, 1.65, {100000, 1, 1});
        auto hi = besov_monte_carlo(t, 2.2, {100000, 1, 1});
        EXPECT_LE(lo.value, hi.value) << f.name();
        EXPECT_EQ(lo.discarded, hi.discarded);
    }
}

TEST(HoelderRatio, MatchesBruteForceAndGrowsWithLevel) {
    auto g = TestFunction::harmonic(1, 0, 0).grid(4);
    const double E = 3.0, beta = 1.7;
    double want = 0;
    const Mesh& m = mesh(3);
    for (const auto& p : m.vertices)
        for (const auto& q : m.vertices) {
            if (p == q) continue;
            const double d = g.at(p) - g.at(q);
            const double r = std::hypot(p.x() - q.x(), p.y() - q.y());
            want = std::max(want, d * d / (E * std::pow(r, beta - kLog3)));
        }
    EXPECT_NEAR(hoelder_ratio(g, beta, E, 3) / want, 1.0, 1e-12);
    EXPECT_LE(hoelder_ratio(g, beta, E, 3), hoelder_ratio(g, beta, E, 4));
    EXPECT_EQ(hoelder_ratio(TestFunction::constant(1).grid(3), beta, 0.0), 0.0);
    EXPECT_THROW(hoelder_ratio(g, beta, 0.0), DomainError);
}

TEST(IntervalSeminorm, Examples) {
    DyadicGrid id{20, {}};
    for (std::size_t i = 0; i <= (1u << 20); ++i) id.values.push_back(std::ldexp(static_cast<double>(i), -20));
    EXPECT_NEAR(interval_seminorm(id, 1.5, 20), (1 - std::ldexp(1.0, -10)) / (std::sqrt(2.0) - 1), 1e-9);
    EXPECT_NEAR(interval_seminorm(id, 1.5, 20), 2.4118, 1e-4);
    for (int N : {1, 5, 12}) EXPECT_NEAR(interval_seminorm(id, 2.0, N), N, 1e-12);
    DyadicGrid c{4, std::vector<double>(17, 0.3)};
    EXPECT_EQ(interval_seminorm(c, 1.5, 4), 0.0);
    EXPECT_THROW(interval_seminorm(c, 1.0, 4), DomainError);
}

TEST(Trace, Examples) {
    auto v = trace_restrict(TestFunction::coordinate_x().grid(6));
    for (std::size_t i = 0; i < v.values.size(); ++i) EXPECT_EQ(v.values[i], std::ldexp(static_cast<double>(i), -6));
    auto h = energy_minimizing_interpolation<Rational>({Rational(0), Rational(1), Rational(0)}, 1);
    EXPECT_EQ(h.at(DyadicPoint(1, 1, 0)), Rational(2, 5));
    auto w = trace_restrict(TestFunction::harmonic(0, 1, 0).grid(1));
    ASSERT_EQ(w.values.size(), 3u);
    EXPECT_EQ(w.values[0], 0.0);
    EXPECT_DOUBLE_EQ(w.values[1], 0.4);
    EXPECT_EQ(w.values[2], 1.0);
}

TEST(Trace, TermwiseInequalityOnCorpus) {
    for (const auto& f : corpus()) {
        auto g = f.grid(7);
        for (double beta1 = 1.65; beta1 <= 2.3 + 1e-9; beta1 += 0.05)
            for (const auto& t : trace_termwise(g, beta1, 7)) EXPECT_TRUE(t.holds) << f.name() << " n=" << t.n;
    }
}
