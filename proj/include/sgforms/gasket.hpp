#pragma once

// Exact geometry, addressing and measure on the Sierpinski gasket.
//
// Points are dyadic rationals (a / 2^s, b * sqrt(3) / 2^s); every vertex of
// every level lives on this lattice, so gluing of cell corners is decided by
// integer equality.  Words are packed base-3 integers, first symbol in the
// least significant digit, so a prefix test is a single modulo.

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace sgforms {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// Deepest word the packed representation holds: 3^40 < 2^64.
inline constexpr int kMaxDepth = 40;
/// Largest level for which the full vertex/cell mesh is materialised.
inline constexpr int kMaxMeshLevel = 13;

class DomainError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DepthOverflow : public std::length_error {
public:
    using std::length_error::length_error;
};

inline constexpr std::array<std::uint64_t, kMaxDepth + 1> kPow3 = [] {
    std::array<std::uint64_t, kMaxDepth + 1> t{};
    t[0] = 1;
    for (int i = 1; i <= kMaxDepth; ++i) t[i] = t[i - 1] * 3;
    return t;
}();

inline std::uint64_t pow3(int n) {
    if (n < 0 || n > kMaxDepth) throw DepthOverflow("pow3: exponent out of range");
    return kPow3[static_cast<std::size_t>(n)];
}

// ---------------------------------------------------------------------------
// Word

/// Address w_1...w_n in {0,1,2}^n.  The empty word denotes the whole gasket.
class Word {
public:
    constexpr Word() = default;

    static Word from_code(std::uint64_t code, int length) {
        if (length < 0 || length > kMaxDepth) throw DepthOverflow("word length " + std::to_string(length) + " exceeds maximum depth");
        if (code >= kPow3[static_cast<std::size_t>(length)]) throw DomainError("word code out of range");
        Word w;
        w.code_ = code;
        w.length_ = static_cast<std::uint8_t>(length);
        return w;
    }

    static Word parse(std::string_view digits) {
        Word w;
        for (char c : digits) {
            if (c < '0' || c > '2') throw DomainError(std::string("invalid word digit '") + c + "'");
            w = w.append(c - '0');
        }
        return w;
    }

    static Word repeated(int digit, int count) {
        Word w;
        for (int k = 0; k < count; ++k) w = w.append(digit);
        return w;
    }

    int size() const { return length_; }
    bool empty() const { return length_ == 0; }
    std::uint64_t code() const { return code_; }

    /// Symbol w_{k+1} (0-based position k).
    int digit(int k) const {
        if (k < 0 || k >= length_) throw DomainError("word digit index out of range");
        return static_cast<int>((code_ / kPow3[static_cast<std::size_t>(k)]) % 3);
    }

    int back() const { return digit(length_ - 1); }

    Word append(int d) const {
        if (d < 0 || d > 2) throw DomainError("digit must be 0, 1 or 2");
        if (length_ >= kMaxDepth) throw DepthOverflow("word depth would exceed " + std::to_string(kMaxDepth));
        Word w;
        w.code_ = code_ + static_cast<std::uint64_t>(d) * kPow3[length_];
        w.length_ = static_cast<std::uint8_t>(length_ + 1);
        return w;
    }

    Word concat(const Word& tail) const {
        if (length_ + tail.length_ > kMaxDepth) throw DepthOverflow("word depth would exceed " + std::to_string(kMaxDepth));
        Word w;
        w.code_ = code_ + tail.code_ * kPow3[length_];
        w.length_ = static_cast<std::uint8_t>(length_ + tail.length_);
        return w;
    }

    Word prefix(int n) const {
        if (n < 0 || n > length_) throw DomainError("prefix longer than word");
        return from_code(code_ % kPow3[static_cast<std::size_t>(n)], n);
    }

    bool has_prefix(const Word& p) const {
        return p.length_ <= length_ && code_ % kPow3[p.length_] == p.code_;
    }

    std::string to_string() const {
        std::string s;
        s.reserve(length_);
        for (int k = 0; k < length_; ++k) s.push_back(static_cast<char>('0' + digit(k)));
        return s;
    }

    friend bool operator==(const Word&, const Word&) = default;
    friend auto operator<=>(const Word& a, const Word& b) {
        if (a.length_ != b.length_) return a.length_ <=> b.length_;
        return a.to_string() <=> b.to_string();
    }

private:
    std::uint64_t code_ = 0;
    std::uint8_t length_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const Word& w) { return os << '"' << w.to_string() << '"'; }

// ---------------------------------------------------------------------------
// DyadicPoint

/// The planar point (a / 2^s, b * sqrt(3) / 2^s), kept in canonical form.
class DyadicPoint {
public:
    constexpr DyadicPoint() = default;
    DyadicPoint(int s, std::int64_t a, std::int64_t b) : s_(s), a_(a), b_(b) {
        if (s < 0) throw DomainError("negative dyadic scale");
        canonicalize();
    }

    int scale() const { return s_; }
    std::int64_t a() const { return a_; }
    std::int64_t b() const { return b_; }

    double x() const { return std::ldexp(static_cast<double>(a_), -s_); }
    double y() const { return std::ldexp(static_cast<double>(b_), -s_) * std::sqrt(3.0); }

    /// Numerators at a (larger or equal) scale.
    std::pair<std::int64_t, std::int64_t> at_scale(int s) const {
        if (s < s_) throw DomainError("cannot express point at a coarser scale");
        if (s - s_ > 62) throw DepthOverflow("dyadic rescale overflow");
        return {a_ << (s - s_), b_ << (s - s_)};
    }

    friend bool operator==(const DyadicPoint&, const DyadicPoint&) = default;

    friend DyadicPoint operator+(const DyadicPoint& p, const DyadicPoint& q) {
        int s = std::max(p.s_, q.s_);
        auto [pa, pb] = p.at_scale(s);
        auto [qa, qb] = q.at_scale(s);
        return DyadicPoint(s, pa + qa, pb + qb);
    }
    friend DyadicPoint operator-(const DyadicPoint& p, const DyadicPoint& q) {
        int s = std::max(p.s_, q.s_);
        auto [pa, pb] = p.at_scale(s);
        auto [qa, qb] = q.at_scale(s);
        return DyadicPoint(s, pa - qa, pb - qb);
    }

    DyadicPoint halved() const {
        if (s_ >= 62) throw DepthOverflow("dyadic scale overflow");
        return DyadicPoint(s_ + 1, a_, b_);
    }
    DyadicPoint doubled() const {
        if (s_ > 0) return DyadicPoint(s_ - 1, a_, b_);
        return DyadicPoint(0, a_ * 2, b_ * 2);
    }

private:
    void canonicalize() {
        while (s_ > 0 && (a_ % 2 == 0) && (b_ % 2 == 0)) {
            a_ /= 2;
            b_ /= 2;
            --s_;
        }
    }

    int s_ = 0;
    std::int64_t a_ = 0;
    std::int64_t b_ = 0;
};

inline std::ostream& operator<<(std::ostream& os, const DyadicPoint& p) {
    return os << "(s=" << p.scale() << ",a=" << p.a() << ",b=" << p.b() << ")";
}

struct DyadicPointHash {
    std::size_t operator()(const DyadicPoint& p) const noexcept {
        std::uint64_t h = static_cast<std::uint64_t>(p.scale()) * 0x9E3779B97F4A7C15ull;
        h ^= static_cast<std::uint64_t>(p.a()) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        h ^= static_cast<std::uint64_t>(p.b()) + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        return static_cast<std::size_t>(h);
    }
};

/// Exact squared distance as numerator / 4^scale.
struct SquaredDistance {
    __int128 numerator = 0;
    int scale = 0;

    double value() const { return std::ldexp(static_cast<double>(numerator), -2 * scale); }
    Rational exact() const {
        BigInt num = 0;
        __int128 n = numerator;
        // cpp_int has no __int128 constructor on every platform; split.
        num = BigInt(static_cast<std::uint64_t>(n >> 64)) << 64;
        num += BigInt(static_cast<std::uint64_t>(n & 0xFFFFFFFFFFFFFFFFull));
        return Rational(num, BigInt(1) << (2 * scale));
    }
};

inline SquaredDistance squared_distance(const DyadicPoint& p, const DyadicPoint& q) {
    int s = std::max(p.scale(), q.scale());
    auto [pa, pb] = p.at_scale(s);
    auto [qa, qb] = q.at_scale(s);
    __int128 da = pa - qa;
    __int128 db = pb - qb;
    return {da * da + 3 * db * db, s};
}

inline double distance(const DyadicPoint& p, const DyadicPoint& q) { return std::sqrt(squared_distance(p, q).value()); }

/// Corners of the unit triangle: p_0 = (0,0), p_1 = (1,0), p_2 = (1/2, sqrt3/2).
inline DyadicPoint corner(int d) {
    switch (d) {
        case 0: return DyadicPoint(0, 0, 0);
        case 1: return DyadicPoint(0, 1, 0);
        case 2: return DyadicPoint(1, 1, 1);
        default: throw DomainError("corner index must be 0, 1 or 2");
    }
}

// ---------------------------------------------------------------------------
// Contractions, cells

/// f_d(x) = (x + p_d) / 2.
inline DyadicPoint contract(const DyadicPoint& x, int digit) { return (x + corner(digit)).halved(); }

/// f_d^{-1}(x) = 2x - p_d.
inline DyadicPoint expand(const DyadicPoint& x, int digit) { return x.doubled() - corner(digit); }

/// f_{w_1} o ... o f_{w_n}(x).
inline DyadicPoint apply_word(const Word& w, DyadicPoint x) {
    for (int k = w.size() - 1; k >= 0; --k) x = contract(x, w.digit(k));
    return x;
}

/// V_w, ordered as the images of p_0, p_1, p_2.
inline std::array<DyadicPoint, 3> cell_vertices(const Word& w) {
    return {apply_word(w, corner(0)), apply_word(w, corner(1)), apply_word(w, corner(2))};
}

/// P_w = f_{w_1} o ... o f_{w_{n-1}}(p_{w_n}).
inline DyadicPoint cell_point(const Word& w) {
    if (w.empty()) throw DomainError("cell_point is undefined for the empty word");
    return apply_word(w.prefix(w.size() - 1), corner(w.back()));
}

struct Cell {
    Word word;

    int level() const { return word.size(); }
    double diameter() const { return std::ldexp(1.0, -level()); }
    Rational measure() const { return Rational(1, BigInt(pow3(level()))); }
    std::array<DyadicPoint, 3> vertices() const { return cell_vertices(word); }
};

// ---------------------------------------------------------------------------
// Membership and location

/// Point lies in the closed unit triangle.
inline bool in_triangle(const DyadicPoint& p) {
    const std::int64_t a = p.a(), b = p.b();
    if (p.scale() > 62) return false;
    const std::int64_t one = std::int64_t{1} << p.scale();
    return b >= 0 && b <= a && b <= one - a;
}

inline bool on_gasket(const DyadicPoint& p) {
    if (!in_triangle(p)) return false;
    for (int d = 0; d < 3; ++d)
        if (p == corner(d)) return true;
    if (p.scale() == 0) return false;
    for (int d = 0; d < 3; ++d) {
        DyadicPoint q = expand(p, d);
        if (in_triangle(q) && on_gasket(q)) return true;
    }
    return false;
}

/// All words of length `depth` whose cell contains `point` (sorted).  At most
/// two: a junction vertex belongs to exactly two cells of each finer level.
inline std::vector<Word> locate(const DyadicPoint& point, int depth) {
    if (depth < 0 || depth > kMaxDepth) throw DepthOverflow("locate depth out of range");
    if (!on_gasket(point)) throw DomainError("point is not on the gasket");
    std::vector<std::pair<Word, DyadicPoint>> frontier{{Word{}, point}};
    for (int level = 0; level < depth; ++level) {
        std::vector<std::pair<Word, DyadicPoint>> next;
        for (const auto& [w, local] : frontier) {
            for (int d = 0; d < 3; ++d) {
                DyadicPoint q = expand(local, d);
                if (in_triangle(q) && on_gasket(q)) next.emplace_back(w.append(d), q);
            }
        }
        frontier = std::move(next);
    }
    std::vector<Word> out;
    out.reserve(frontier.size());
    for (auto& [w, _] : frontier) out.push_back(w);
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Level meshes

/// Number of vertices of V_m: (3^{m+1} + 3) / 2.
inline std::size_t vertex_count(int m) { return static_cast<std::size_t>((pow3(m + 1) + 3) / 2); }

/// V_m with stable ids (vertices of V_k come first, for every k <= m) and the
/// corner ids of every level-m cell, indexed by word code.
struct Mesh {
    int level = 0;
    std::vector<DyadicPoint> vertices;
    std::vector<std::array<std::uint32_t, 3>> cells;
    std::unordered_map<DyadicPoint, std::uint32_t, DyadicPointHash> index;

    std::size_t size() const { return vertices.size(); }

    std::uint32_t id(const DyadicPoint& p) const {
        auto it = index.find(p);
        if (it == index.end()) throw DomainError("point is not a vertex of V_" + std::to_string(level));
        return it->second;
    }

    const std::array<std::uint32_t, 3>& cell(const Word& w) const {
        if (w.size() != level) throw DomainError("cell word length does not match mesh level");
        return cells[static_cast<std::size_t>(w.code())];
    }
};

namespace detail {

inline Mesh refine(const Mesh& coarse) {
    Mesh fine;
    fine.level = coarse.level + 1;
    fine.vertices = coarse.vertices;
    fine.index = coarse.index;
    const std::size_t ncoarse = coarse.cells.size();
    fine.cells.resize(ncoarse * 3);
    // Midpoint opposite corner c of each coarse cell.
    for (std::size_t code = 0; code < ncoarse; ++code) {
        const auto& cv = coarse.cells[code];
        std::array<std::uint32_t, 3> mid{};
        for (int c = 0; c < 3; ++c) {
            const int j = (c + 1) % 3, l = (c + 2) % 3;
            DyadicPoint m = (fine.vertices[cv[j]] + fine.vertices[cv[l]]).halved();
            auto [it, inserted] = fine.index.try_emplace(m, static_cast<std::uint32_t>(fine.vertices.size()));
            if (inserted) fine.vertices.push_back(m);
            mid[c] = it->second;
        }
        for (int d = 0; d < 3; ++d) {
            std::array<std::uint32_t, 3> child{};
            for (int c = 0; c < 3; ++c) child[c] = (c == d) ? cv[d] : mid[3 - d - c];
            fine.cells[code + static_cast<std::size_t>(d) * ncoarse] = child;
        }
    }
    return fine;
}

inline Mesh base_mesh() {
    Mesh m;
    m.level = 0;
    for (int d = 0; d < 3; ++d) {
        m.vertices.push_back(corner(d));
        m.index.emplace(corner(d), static_cast<std::uint32_t>(d));
    }
    m.cells.push_back({0, 1, 2});
    return m;
}

}  // namespace detail

/// Cached mesh of level m.  Thread-safe; references stay valid for the
/// lifetime of the process.
inline const Mesh& mesh(int m) {
    if (m < 0) throw DomainError("negative level");
    if (m > kMaxMeshLevel)
        throw DepthOverflow("mesh level " + std::to_string(m) + " exceeds configured maximum " + std::to_string(kMaxMeshLevel));
    static std::mutex guard;
    static std::deque<std::unique_ptr<const Mesh>> cache;
    std::lock_guard lock(guard);
    if (cache.empty()) cache.push_back(std::make_unique<const Mesh>(detail::base_mesh()));
    while (static_cast<int>(cache.size()) <= m) cache.push_back(std::make_unique<const Mesh>(detail::refine(*cache.back())));
    return *cache[static_cast<std::size_t>(m)];
}

/// Canonical id of every point of V_m.
inline const std::unordered_map<DyadicPoint, std::uint32_t, DyadicPointHash>& enumerate_vertices(int m) { return mesh(m).index; }

/// Debug dump of V_m: id,s,a,b,x_float,y_float.
inline void write_vertices_csv(std::ostream& os, int m) {
    const Mesh& g = mesh(m);
    os << "id,s,a,b,x_float,y_float\n";
    char buf[64];
    for (std::size_t id = 0; id < g.vertices.size(); ++id) {
        const auto& p = g.vertices[id];
        os << id << ',' << p.scale() << ',' << p.a() << ',' << p.b();
        std::snprintf(buf, sizeof buf, ",%.17g", p.x());
        os << buf;
        std::snprintf(buf, sizeof buf, ",%.17g\n", p.y());
        os << buf;
    }
}

}  // namespace sgforms
