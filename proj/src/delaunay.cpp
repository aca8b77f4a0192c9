#include "slhsi/delaunay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {

using Vec2 = Eigen::Vector2d;

double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
    return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

struct Tri {
    TriangleIndices v;
    Vec2 center;
    double radius2;
};

Tri make_tri(int a, int b, int c, const std::vector<Vec2>& p) {
    if (orient(p[a], p[b], p[c]) < 0.0) std::swap(b, c);
    const Vec2 A = p[a];
    const Vec2 B = p[b] - A;
    const Vec2 C = p[c] - A;
    const double d = 2.0 * (B.x() * C.y() - B.y() * C.x());
    Vec2 center;
    if (std::abs(d) < 1e-300) {
        center = Vec2(1e300, 1e300);
    } else {
        const double b2 = B.squaredNorm();
        const double c2 = C.squaredNorm();
        center = A + Vec2((C.y() * b2 - B.y() * c2) / d, (B.x() * c2 - C.x() * b2) / d);
    }
    return {{a, b, c}, center, (center - A).squaredNorm()};
}

// splitmix64, used for reproducible tie-breaking offsets.
double hash_unit(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    x ^= x >> 31;
    return static_cast<double>(x >> 11) / static_cast<double>(1ULL << 53) - 0.5;
}

}  // namespace

std::vector<TriangleIndices> delaunay_triangulate(const std::vector<Vec2>& input) {
    const int n = static_cast<int>(input.size());
    if (n < 3) throw Error(ErrorCode::DegenerateTriangulation, "degenerate triangulation: fewer than 3 points");

    Vec2 lo = input[0];
    Vec2 hi = input[0];
    for (const auto& q : input) {
        lo = lo.cwiseMin(q);
        hi = hi.cwiseMax(q);
    }
    const double scale = std::max((hi - lo).maxCoeff(), 1e-12);
    bool collinear = true;
    for (int i = 2; i < n && collinear; ++i) {
        collinear = std::abs(orient(input[0], input[1], input[i])) <= 1e-12 * scale * scale;
    }
    if (collinear) throw Error(ErrorCode::DegenerateTriangulation, "degenerate triangulation: collinear points");

    std::vector<Vec2> p(input);
    for (int i = 0; i < n; ++i) {
        p[i] += 1e-10 * scale * Vec2(hash_unit(2 * static_cast<std::uint64_t>(i)),
                                     hash_unit(2 * static_cast<std::uint64_t>(i) + 1));
    }
    const Vec2 mid = 0.5 * (lo + hi);
    const double big = 100.0 * scale;
    p.push_back(mid + Vec2(-big, -big));
    p.push_back(mid + Vec2(big, -big));
    p.push_back(mid + Vec2(0.0, big));

    std::vector<Tri> tris{make_tri(n, n + 1, n + 2, p)};
    for (int i = 0; i < n; ++i) {
        const Vec2& q = p[i];
        std::map<std::pair<int, int>, int> edge_count;
        std::vector<Tri> keep;
        keep.reserve(tris.size() + 2);
        for (const auto& t : tris) {
            if ((q - t.center).squaredNorm() < t.radius2) {
                for (int e = 0; e < 3; ++e) {
                    int a = t.v[e];
                    int b = t.v[(e + 1) % 3];
                    if (a > b) std::swap(a, b);
                    ++edge_count[{a, b}];
                }
            } else {
                keep.push_back(t);
            }
        }
        for (const auto& [edge, count] : edge_count) {
            if (count == 1) keep.push_back(make_tri(edge.first, edge.second, i, p));
        }
        tris = std::move(keep);
    }

    std::vector<TriangleIndices> out;
    for (const auto& t : tris) {
        if (t.v[0] >= n || t.v[1] >= n || t.v[2] >= n) continue;
        out.push_back(t.v);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace slhsi
