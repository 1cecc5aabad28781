#pragma once

// Real-valued functions on the gasket: values on V_m plus the harmonic
// (energy-minimising) rule that defines them on every finer level.

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <optional>
#include <span>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgforms/gasket.hpp"

namespace sgforms {

/// Values on every vertex of V_m, indexed by the stable vertex id.
template <typename T = double>
class GridFunction {
public:
    GridFunction() = default;
    GridFunction(int level, std::vector<T> values) : level_(level), values_(std::move(values)) {
        if (values_.size() != vertex_count(level_))
            throw DomainError("grid function needs " + std::to_string(vertex_count(level_)) + " values at level " +
                              std::to_string(level_) + ", got " + std::to_string(values_.size()));
    }

    static GridFunction constant(int level, const T& c) { return GridFunction(level, std::vector<T>(vertex_count(level), c)); }

    int level() const { return level_; }
    std::span<const T> values() const { return values_; }
    const T& operator[](std::size_t id) const { return values_[id]; }

    /// Value at a vertex of V_{m'} with m' <= level.
    const T& at(const DyadicPoint& p) const { return values_[mesh(level_).id(p)]; }

    /// Corner values of a cell of level <= this level.
    std::array<T, 3> corner_values(const Word& w) const {
        if (w.size() > level_) throw DomainError("cell " + w.to_string() + " is deeper than grid level " + std::to_string(level_));
        const auto& c = mesh(w.size()).cell(w);
        return {values_[c[0]], values_[c[1]], values_[c[2]]};
    }

    /// Values on V_k for k <= level (ids are stable, so this is a prefix).
    GridFunction restrict_to(int k) const {
        if (k > level_) throw DomainError("cannot restrict to a finer level");
        return GridFunction(k, std::vector<T>(values_.begin(), values_.begin() + static_cast<std::ptrdiff_t>(vertex_count(k))));
    }

    template <typename U>
    GridFunction<U> cast() const {
        std::vector<U> out;
        out.reserve(values_.size());
        for (const auto& v : values_) out.push_back(static_cast<U>(v));
        return GridFunction<U>(level_, std::move(out));
    }

    bool is_constant() const {
        return std::all_of(values_.begin(), values_.end(), [&](const T& v) { return v == values_.front(); });
    }

private:
    int level_ = 0;
    std::vector<T> values_;
};

/// Values at the children of a cell with corner values (u0, u1, u2): the
/// midpoint between corners j and l (opposite corner c) gets
/// (2 u_j + 2 u_l + u_c) / 5, the unique minimiser of the child pair sums.
template <typename T>
std::array<T, 3> child_corner_values(const std::array<T, 3>& u, int d) {
    std::array<T, 3> out;
    for (int c = 0; c < 3; ++c) {
        if (c == d) {
            out[c] = u[d];
        } else {
            const int k = 3 - d - c;
            out[c] = (T(2) * u[d] + T(2) * u[c] + u[k]) / T(5);
        }
    }
    return out;
}

template <typename T>
GridFunction<T> harmonic_extend(const GridFunction<T>& g) {
    const int m = g.level();
    const Mesh& coarse = mesh(m);
    const Mesh& fine = mesh(m + 1);
    std::vector<T> out(fine.size());
    std::copy(g.values().begin(), g.values().end(), out.begin());
    const std::size_t ncoarse = coarse.cells.size();
    for (std::size_t code = 0; code < ncoarse; ++code) {
        const auto& cv = coarse.cells[code];
        const std::array<T, 3> u{g[cv[0]], g[cv[1]], g[cv[2]]};
        for (int d = 0; d < 3; ++d) {
            const auto& child = fine.cells[code + static_cast<std::size_t>(d) * ncoarse];
            const auto vals = child_corner_values(u, d);
            for (int c = 0; c < 3; ++c)
                if (c != d) out[child[c]] = vals[c];
        }
    }
    return GridFunction<T>(m + 1, std::move(out));
}

template <typename T>
GridFunction<T> extend_to(GridFunction<T> g, int m) {
    if (m < g.level()) return g.restrict_to(m);
    while (g.level() < m) g = harmonic_extend(g);
    return g;
}

template <typename T>
GridFunction<T> energy_minimizing_interpolation(const std::array<T, 3>& boundary, int m) {
    if (m < 0) throw DomainError("negative level");
    GridFunction<T> g(0, std::vector<T>(boundary.begin(), boundary.end()));
    return extend_to(std::move(g), m);
}

/// Cell representative value: mean of the three corner values.
template <typename T>
T sample_at(const GridFunction<T>& g, const Word& w) {
    const auto v = g.corner_values(w);
    return (v[0] + v[1] + v[2]) / T(3);
}

// ---------------------------------------------------------------------------
// Test functions

struct HarmonicKind {
    std::array<double, 3> boundary{};
};
struct CoordinateXKind {};
struct CoordinateYKind {};
struct HoelderProbeKind {
    Word word;
};
struct CustomKind {
    int level = 0;
    std::vector<double> values;
};

/// A grid function in exact arithmetic, up to a rational factor on squares:
/// the represented function is sqrt(square_scale) * values.  Every quadratic
/// quantity computed from `values` is multiplied by `square_scale`.
struct ExactGrid {
    GridFunction<Rational> values;
    Rational square_scale{1};
};

/// Descriptor of a function in the experiment corpus.
class TestFunction {
public:
    using Kind = std::variant<HarmonicKind, CoordinateXKind, CoordinateYKind, HoelderProbeKind, CustomKind>;

    TestFunction() = default;
    explicit TestFunction(Kind k) : kind_(std::move(k)) {}

    static TestFunction harmonic(double b0, double b1, double b2) { return TestFunction(HarmonicKind{{b0, b1, b2}}); }
    static TestFunction constant(double c) { return harmonic(c, c, c); }
    static TestFunction coordinate_x() { return TestFunction(CoordinateXKind{}); }
    static TestFunction coordinate_y() { return TestFunction(CoordinateYKind{}); }
    static TestFunction hoelder_probe(const Word& w) { return TestFunction(HoelderProbeKind{w}); }
    static TestFunction custom(int level, std::vector<double> values) { return TestFunction(CustomKind{level, std::move(values)}); }

    const Kind& kind() const { return kind_; }

    std::string name() const {
        return std::visit(
            [](const auto& k) -> std::string {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, HarmonicKind>) {
                    std::ostringstream os;
                    os << "harmonic(" << k.boundary[0] << "," << k.boundary[1] << "," << k.boundary[2] << ")";
                    return os.str();
                } else if constexpr (std::is_same_v<K, CoordinateXKind>) {
                    return "coordinate_x";
                } else if constexpr (std::is_same_v<K, CoordinateYKind>) {
                    return "coordinate_y";
                } else if constexpr (std::is_same_v<K, HoelderProbeKind>) {
                    return "hoelder_probe(" + k.word.to_string() + ")";
                } else {
                    return "custom(level=" + std::to_string(k.level) + ")";
                }
            },
            kind_);
    }

    GridFunction<double> grid(int m) const {
        return std::visit(
            [m](const auto& k) -> GridFunction<double> {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, HarmonicKind>) {
                    return energy_minimizing_interpolation<double>(k.boundary, m);
                } else if constexpr (std::is_same_v<K, CoordinateXKind>) {
                    const Mesh& g = mesh(m);
                    std::vector<double> v;
                    v.reserve(g.size());
                    for (const auto& p : g.vertices) v.push_back(p.x());
                    return GridFunction<double>(m, std::move(v));
                } else if constexpr (std::is_same_v<K, CoordinateYKind>) {
                    const Mesh& g = mesh(m);
                    std::vector<double> v;
                    v.reserve(g.size());
                    for (const auto& p : g.vertices) v.push_back(p.y());
                    return GridFunction<double>(m, std::move(v));
                } else if constexpr (std::is_same_v<K, HoelderProbeKind>) {
                    return extend_to(probe_indicator<double>(k.word), m);
                } else {
                    return extend_to(GridFunction<double>(k.level, k.values), m);
                }
            },
            kind_);
    }

    /// Exact-arithmetic representative.  Boundary and table values are taken
    /// as the exact binary rationals they are stored as.
    ExactGrid exact_grid(int m) const {
        return std::visit(
            [m](const auto& k) -> ExactGrid {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, HarmonicKind>) {
                    std::array<Rational, 3> b{to_rational(k.boundary[0]), to_rational(k.boundary[1]), to_rational(k.boundary[2])};
                    return {energy_minimizing_interpolation<Rational>(b, m), Rational(1)};
                } else if constexpr (std::is_same_v<K, CoordinateXKind>) {
                    const Mesh& g = mesh(m);
                    std::vector<Rational> v;
                    v.reserve(g.size());
                    for (const auto& p : g.vertices) v.emplace_back(BigInt(p.a()), BigInt(1) << p.scale());
                    return {GridFunction<Rational>(m, std::move(v)), Rational(1)};
                } else if constexpr (std::is_same_v<K, CoordinateYKind>) {
                    // y = sqrt(3) * b / 2^s
                    const Mesh& g = mesh(m);
                    std::vector<Rational> v;
                    v.reserve(g.size());
                    for (const auto& p : g.vertices) v.emplace_back(BigInt(p.b()), BigInt(1) << p.scale());
                    return {GridFunction<Rational>(m, std::move(v)), Rational(3)};
                } else if constexpr (std::is_same_v<K, HoelderProbeKind>) {
                    return {extend_to(probe_indicator<Rational>(k.word), m), Rational(1)};
                } else {
                    std::vector<Rational> v;
                    v.reserve(k.values.size());
                    for (double x : k.values) v.push_back(to_rational(x));
                    return {extend_to(GridFunction<Rational>(k.level, std::move(v)), m), Rational(1)};
                }
            },
            kind_);
    }

    static Rational to_rational(double x) {
        if (!std::isfinite(x)) throw DomainError("non-finite function value");
        int exp = 0;
        double mant = std::frexp(x, &exp);
        // mant * 2^53 is an integer.
        const auto num = static_cast<std::int64_t>(std::ldexp(mant, 53));
        exp -= 53;
        Rational r{BigInt(num)};
        if (exp >= 0) r *= Rational(BigInt(1) << exp);
        else r /= Rational(BigInt(1) << (-exp));
        return r;
    }

    /// 1 on the corners of K_w, 0 on the rest of V_{|w|}.
    template <typename T>
    static GridFunction<T> probe_indicator(const Word& w) {
        const int n = w.size();
        std::vector<T> v(vertex_count(n), T(0));
        for (auto id : mesh(n).cell(w)) v[id] = T(1);
        return GridFunction<T>(n, std::move(v));
    }

private:
    Kind kind_ = HarmonicKind{};
};

// ---------------------------------------------------------------------------
// Serialisation

inline nlohmann::json to_json(const TestFunction& f) {
    using nlohmann::json;
    return std::visit(
        [](const auto& k) -> json {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, HarmonicKind>) {
                return json{{"kind", "harmonic"}, {"boundary", k.boundary}};
            } else if constexpr (std::is_same_v<K, CoordinateXKind>) {
                return json{{"kind", "coordinate_x"}};
            } else if constexpr (std::is_same_v<K, CoordinateYKind>) {
                return json{{"kind", "coordinate_y"}};
            } else if constexpr (std::is_same_v<K, HoelderProbeKind>) {
                return json{{"kind", "hoelder_probe"}, {"word", k.word.to_string()}};
            } else {
                return json{{"kind", "custom"}, {"level", k.level}, {"values", k.values}};
            }
        },
        f.kind());
}

/// Strict parse: unknown keys or kinds are errors.
inline TestFunction test_function_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind")) throw DomainError("test function needs a \"kind\"");
    const std::string kind = j.at("kind").get<std::string>();
    auto allow = [&](std::initializer_list<const char*> keys) {
        for (const auto& [key, _] : j.items()) {
            bool ok = key == "kind";
            for (const char* k : keys) ok = ok || key == k;
            if (!ok) throw DomainError("unknown field \"" + key + "\" in " + kind + " test function");
        }
    };
    if (kind == "harmonic") {
        allow({"boundary"});
        auto b = j.at("boundary").get<std::vector<double>>();
        if (b.size() != 3) throw DomainError("harmonic boundary needs 3 values");
        return TestFunction::harmonic(b[0], b[1], b[2]);
    }
    if (kind == "constant") {
        allow({"value"});
        return TestFunction::constant(j.at("value").get<double>());
    }
    if (kind == "coordinate_x") {
        allow({});
        return TestFunction::coordinate_x();
    }
    if (kind == "coordinate_y") {
        allow({});
        return TestFunction::coordinate_y();
    }
    if (kind == "hoelder_probe") {
        allow({"word"});
        return TestFunction::hoelder_probe(Word::parse(j.at("word").get<std::string>()));
    }
    if (kind == "custom") {
        allow({"level", "values"});
        return TestFunction::custom(j.at("level").get<int>(), j.at("values").get<std::vector<double>>());
    }
    throw DomainError("unknown test function kind \"" + kind + "\"");
}

inline nlohmann::json to_json(const GridFunction<double>& g) {
    return nlohmann::json{{"level", g.level()}, {"values", std::vector<double>(g.values().begin(), g.values().end())}};
}

inline GridFunction<double> grid_function_from_json(const nlohmann::json& j) {
    return GridFunction<double>(j.at("level").get<int>(), j.at("values").get<std::vector<double>>());
}

/// CSV: vertex id, s, a, b, value.
inline void write_csv(std::ostream& os, const GridFunction<double>& g) {
    const Mesh& m = mesh(g.level());
    os << "id,s,a,b,value\n";
    char buf[48];
    for (std::size_t id = 0; id < m.size(); ++id) {
        const auto& p = m.vertices[id];
        std::snprintf(buf, sizeof buf, "%.17g", g[id]);
        os << id << ',' << p.scale() << ',' << p.a() << ',' << p.b() << ',' << buf << '\n';
    }
}

/// Reads the CSV written by write_csv.  Rows may come in any order; the
/// level is inferred from the row count and every vertex must be present.
inline GridFunction<double> read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("id,s,a,b,value", 0) != 0) throw DomainError("missing grid CSV header");
    std::vector<std::pair<DyadicPoint, double>> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string field;
        std::vector<std::string> f;
        while (std::getline(ls, field, ',')) f.push_back(field);
        if (f.size() != 5) throw DomainError("grid CSV row needs 5 fields: " + line);
        rows.emplace_back(DyadicPoint(std::stoi(f[1]), std::stoll(f[2]), std::stoll(f[3])), std::stod(f[4]));
    }
    int level = -1;
    for (int m = 0; m <= kMaxMeshLevel; ++m)
        if (vertex_count(m) == rows.size()) level = m;
    if (level < 0) throw DomainError("grid CSV row count matches no level");
    const Mesh& m = mesh(level);
    std::vector<double> v(m.size());
    std::vector<bool> seen(m.size(), false);
    for (const auto& [p, val] : rows) {
        const auto id = m.id(p);
        if (seen[id]) throw DomainError("duplicate vertex in grid CSV");
        seen[id] = true;
        v[id] = val;
    }
    return GridFunction<double>(level, std::move(v));
}

}  // namespace sgforms
