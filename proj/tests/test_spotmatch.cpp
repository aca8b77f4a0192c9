#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "slhsi/delaunay.hpp"
#include "slhsi/error.hpp"
#include "slhsi/scenario.hpp"
#include "slhsi/spotmatch.hpp"

using namespace slhsi;

namespace {

std::set<std::pair<int, int>> edge_set(const std::vector<TriangleIndices>& tris) {
    std::set<std::pair<int, int>> e;
    for (const auto& t : tris)
        for (int k = 0; k < 3; ++k) e.insert(std::minmax(t[k], t[(k + 1) % 3]));
    return e;
}

// Zero-noise or noisy frame with ideal detections and its truth correspondence.
struct Scenario {
    CalibrationBundle bundle = default_bundle();
    MatchConfig config;
    SpotPatternSpec pattern;
    ReferenceImage reference_image;
    ReferenceSpots reference;
    RenderedFrame frame;
    CapturedSpots captured;
    std::map<int, int> truth;
    int annotated = 0;

    Scenario(SceneClass kind, std::uint64_t seed, double sigma = 0.0, double dropout = 0.0) {
        pattern = generate_pattern(kMaxSpots, 100 + seed);
        reference_image = generate_reference_image(pattern, bundle);
        reference = prepare_reference(reference_image, bundle, config);
        NoiseModel n;
        n.pixel_noise_sigma = sigma;
        n.spot_dropout_fraction = dropout;
        frame = render_frame(pattern, random_scene(kind, seed), bundle, n, 7 + seed);
        captured = prepare_captured(truth_detections(frame), 640, 480, config);
        for (const auto& t : frame.truth)
            if (t.visible) truth[annotated++] = t.spot_id;
    }
};

MatchSet truth_set(const std::map<int, int>& truth) {
    MatchSet m;
    for (const auto& [c, r] : truth) m.matches.push_back({c, r, 0.0, MatchFlag::Initial});
    return m;
}

double smooth_field(double x, double y, int c) {
    return 0.5 + 0.3 * std::sin(0.09 * x + 0.05 * y + c) + 0.15 * std::cos(0.04 * x - 0.07 * y + 2 * c);
}

}  // namespace

// ---- Delaunay / graph ------------------------------------------------------

TEST(Delaunay, SquareHasFourSidesAndOneDiagonal) {
    const auto tris = delaunay_triangulate({Vec2(0, 0), Vec2(1, 0), Vec2(1, 1.001), Vec2(0, 1)});
    EXPECT_EQ(tris.size(), 2u);
    EXPECT_EQ(edge_set(tris).size(), 5u);
}

TEST(Delaunay, EmptyCircumcircleOnRandomPoints) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 500.0);
    std::vector<Vec2> pts(150);
    for (auto& p : pts) p = Vec2(u(rng), u(rng));
    const auto tris = delaunay_triangulate(pts);
    ASSERT_FALSE(tris.empty());
    for (const auto& t : tris) {
        const Vec2 a = pts[t[0]], b = pts[t[1]], c = pts[t[2]];
        const double d = 2 * (a.x() * (b.y() - c.y()) + b.x() * (c.y() - a.y()) + c.x() * (a.y() - b.y()));
        const Vec2 o((a.squaredNorm() * (b.y() - c.y()) + b.squaredNorm() * (c.y() - a.y()) + c.squaredNorm() * (a.y() - b.y())) / d,
                     (a.squaredNorm() * (c.x() - b.x()) + b.squaredNorm() * (a.x() - c.x()) + c.squaredNorm() * (b.x() - a.x())) / d);
        const double r = (a - o).norm();
        for (std::size_t k = 0; k < pts.size(); ++k) {
            if (static_cast<int>(k) == t[0] || static_cast<int>(k) == t[1] || static_cast<int>(k) == t[2]) continue;
            EXPECT_GT((pts[k] - o).norm(), r - 1e-9 * r);
        }
    }
    // Euler: a triangulation of n points with h hull vertices has 2n - 2 - h triangles.
    EXPECT_LE(tris.size(), 2 * pts.size() - 5);
}

TEST(Delaunay, CollinearPointsThrow) {
    EXPECT_THROW(delaunay_triangulate({Vec2(0, 0), Vec2(1, 1), Vec2(2, 2), Vec2(3, 3)}), Error);
    EXPECT_THROW(delaunay_triangulate({Vec2(0, 0), Vec2(1, 1)}), Error);
}

TEST(Graph, GridRadiusIsHalfPitch) {
    std::vector<Vec2> pts;
    for (int j = 0; j < 8; ++j)
        for (int i = 0; i < 10; ++i) pts.emplace_back(20.0 * i + 1e-3 * ((i * 7 + j * 3) % 5), 20.0 * j);
    const NeighborGraph g = build_graph(pts);
    // Vertices owning extra diagonals sit between pitch and (1 + sqrt2)/2 pitch.
    for (int v = 0; v < g.size(); ++v) {
        EXPECT_GE(g.radius[v], 10.0 - 1e-3);
        EXPECT_LE(g.radius[v], 5.0 * (1.0 + std::sqrt(2.0)) + 1e-3);
    }
    EXPECT_NEAR(quantile(g.radius, 0.5), 10.0, 0.05);
    EXPECT_TRUE(g.adjacent(0, 1));
    EXPECT_FALSE(g.adjacent(0, 2));
}

// ---- Descriptors -------------------------------------------------------------

TEST(Descriptor, ConstantImageGivesConstantRows) {
    Image img(50, 50, 3);
    for (int y = 0; y < 50; ++y)
        for (int x = 0; x < 50; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = 0.1f * (c + 2);
    const SpotDescriptor d = build_descriptor(img, Vec2(25.3, 24.6), 7.0);
    for (int i = 0; i < kDescriptorDirections; ++i)
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(d(i, c), 0.1 * (c + 2), 1e-6);
}

TEST(Descriptor, RotatedImageShiftsRows) {
    const Vec2 center(60, 60);
    const double radius = 12.0;
    const auto render = [&](double theta) {
        Image img(121, 121, 3);
        const Eigen::Rotation2Dd inv(-theta);
        for (int y = 0; y < 121; ++y)
            for (int x = 0; x < 121; ++x) {
                const Vec2 q = inv * (Vec2(x, y) - center) + center;
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(smooth_field(q.x(), q.y(), c));
            }
        return img;
    };
    const SpotDescriptor base = build_descriptor(render(0.0), center, radius);
    for (int k : {1, 5, 13, 31}) {
        const SpotDescriptor rot = build_descriptor(render(2 * M_PI * k / 32), center, radius);
        double worst = 0.0;
        for (int i = 0; i < 32; ++i) worst = std::max(worst, (rot.row(i) - base.row((i - k + 32) % 32)).cwiseAbs().maxCoeff());
        EXPECT_LT(worst, 1e-3) << "k=" << k;
        // Rotating the captured view by k steps is undone by a shift of 32 - k.
        const DescriptorDistance d = descriptor_distance(rot, ReferenceDescriptorSet::from_base(base));
        EXPECT_EQ(d.best_shift, (32 - k) % 32);
        EXPECT_LT(d.distance, 1e-3);
    }
}

TEST(Descriptor, HalfPlaneSplitsRowsByAngle) {
    Image img(40, 40, 3);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) img.at(x, y, x < 20 ? 0 : 2) = 1.0f;
    const SpotDescriptor d = build_descriptor(img, Vec2(19.5, 19.5), 8.0);
    for (int i = 0; i < 32; ++i) {
        const double c = std::cos(2 * M_PI * i / 32);
        if (std::abs(c) < 0.2) continue;
        EXPECT_NEAR(d(i, c > 0 ? 2 : 0), 1.0, 1e-6) << i;
        EXPECT_NEAR(d(i, c > 0 ? 0 : 2), 0.0, 1e-6) << i;
    }
}

TEST(Descriptor, DistanceOfIdenticalIsZero) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    const SpotDescriptor a = SpotDescriptor::NullaryExpr([&] { return u(rng); });
    const DescriptorDistance d = descriptor_distance(a, ReferenceDescriptorSet::from_base(a));
    EXPECT_EQ(d.distance, 0.0);
    EXPECT_EQ(d.best_shift, 0);
}

TEST(Descriptor, FiveRowShiftFound) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    const SpotDescriptor base = SpotDescriptor::NullaryExpr([&] { return u(rng); });
    SpotDescriptor shifted;
    for (int i = 0; i < 32; ++i) shifted.row(i) = base.row((i + 5) % 32);
    const DescriptorDistance d = descriptor_distance(shifted, ReferenceDescriptorSet::from_base(base));
    EXPECT_EQ(d.distance, 0.0);
    EXPECT_EQ(d.best_shift, 5);
}

TEST(Descriptor, DistanceEqualsExhaustiveMinimum) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const SpotDescriptor a = SpotDescriptor::NullaryExpr([&] { return u(rng); });
        const SpotDescriptor b = SpotDescriptor::NullaryExpr([&] { return u(rng); });
        double best = 1e300;
        int best_k = -1;
        for (int k = 0; k < 32; ++k) {
            double s = 0.0;
            for (int i = 0; i < 32; ++i)
                for (int c = 0; c < 3; ++c) s += std::pow(a(i, c) - b((i + k) % 32, c), 2);
            if (s < best) {
                best = s;
                best_k = k;
            }
        }
        const DescriptorDistance d = descriptor_distance(a, ReferenceDescriptorSet::from_base(b));
        EXPECT_NEAR(d.distance, std::sqrt(best) / std::sqrt(96.0), 1e-12);
        EXPECT_EQ(d.best_shift, best_k);
    }
}

// ---- Matching ------------------------------------------------------------------

TEST(Matching, ZeroNoiseIsExact) {
    for (auto kind : {SceneClass::Plane, SceneClass::Cylinder, SceneClass::Tissue}) {
        const Scenario s(kind, 0);
        const MatchSet m = match_spots(s.captured, s.reference, s.bundle, s.config);
        const MatchEvaluation e = evaluate_matching(m, s.truth, s.annotated);
        EXPECT_EQ(e.sensitivity, 1.0);
        EXPECT_EQ(e.precision, 1.0);
    }
}

TEST(Matching, InitialSeedsArePrecise) {
    const Scenario s(SceneClass::Plane, 1);
    const MatchSet m = initial_match(s.captured, s.reference, s.bundle, s.config);
    const MatchEvaluation e = evaluate_matching(m, s.truth, s.annotated);
    EXPECT_GT(e.predicted, 10);
    EXPECT_EQ(e.precision, 1.0);
}

TEST(Matching, OffEpipolarCandidateNeverMatched) {
    Scenario s(SceneClass::Plane, 2);
    // Give captured spot 0 the exact descriptor of a reference spot far off its epipolar line.
    const int c = 0;
    int far = -1;
    for (int r = 0; r < static_cast<int>(s.reference.spots.size()); ++r) {
        if (line_distance(s.reference.epipolar_lines[r], s.captured.centers[c]) > 50.0) {
            far = r;
            break;
        }
    }
    ASSERT_GE(far, 0);
    s.captured.descriptors[c] = s.reference.descriptor_sets[far].base();
    EXPECT_FALSE(geometrically_admissible(s.captured, c, s.reference, far, s.bundle, s.config));
    const MatchSet m = match_spots(s.captured, s.reference, s.bundle, s.config);
    for (const auto& x : m.matches) EXPECT_FALSE(x.captured == c && x.reference == far);
}

TEST(Matching, PropagationImprovesNoisySensitivity) {
    const Scenario s(SceneClass::Cylinder, 2, 0.01, 0.1);
    const auto init = evaluate_matching(initial_match(s.captured, s.reference, s.bundle, s.config), s.truth, s.annotated);
    const auto full = evaluate_matching(match_spots(s.captured, s.reference, s.bundle, s.config), s.truth, s.annotated);
    EXPECT_LT(init.sensitivity, full.sensitivity);
}

TEST(Prune, ConsistentSetUnchanged) {
    const Scenario s(SceneClass::Plane, 3);
    const MatchSet in = truth_set(s.truth);
    const MatchSet out = prune(in, s.captured.graph, s.reference.graph, s.config);
    EXPECT_EQ(out.correspondence(), in.correspondence());
}

TEST(Prune, SwappedPairRemoved) {
    const Scenario s(SceneClass::Plane, 3);
    MatchSet in = truth_set(s.truth);
    // Swap the references of two far-apart captured spots.
    const int a = 5;
    int b = -1;
    for (const auto& [c, r] : s.truth)
        if ((s.captured.centers[c] - s.captured.centers[a]).norm() > 200.0) {
            b = c;
            break;
        }
    ASSERT_GE(b, 0);
    std::swap(in.matches[a].reference, in.matches[b].reference);
    const auto out = prune(in, s.captured.graph, s.reference.graph, s.config).correspondence();
    EXPECT_FALSE(out.count(a));
    EXPECT_FALSE(out.count(b));
    EXPECT_EQ(out.size(), s.truth.size() - 2);
}

TEST(Prune, EmptyStaysEmpty) {
    const Scenario s(SceneClass::Plane, 3);
    EXPECT_EQ(prune(MatchSet{}, s.captured.graph, s.reference.graph, s.config).active_count(), 0);
}

TEST(Propagate, PerfectSetIsAFixpoint) {
    const Scenario s(SceneClass::Tissue, 4);
    const MatchSet in = truth_set(s.truth);
    const MatchSet out = propagate(in, s.captured, s.reference, s.bundle, s.config);
    EXPECT_EQ(out.correspondence(), in.correspondence());
    EXPECT_TRUE(out.converged);
    EXPECT_LE(out.round_counts.size(), 2u);
}

TEST(Propagate, SingleSeedRecoversFrame) {
    for (std::uint64_t seed : {5u, 6u}) {
        const Scenario s(SceneClass::Plane, seed);
        MatchSet seed_set;
        const auto mid = std::next(s.truth.begin(), static_cast<long>(s.truth.size() / 2));
        seed_set.matches.push_back({mid->first, mid->second, 0.0, MatchFlag::Initial});
        MatchConfig cfg = s.config;
        cfg.max_propagation_rounds = 100;
        const MatchSet out = propagate(seed_set, s.captured, s.reference, s.bundle, cfg);
        const MatchEvaluation e = evaluate_matching(out, s.truth, s.annotated);
        EXPECT_GE(e.sensitivity, 0.95);
        EXPECT_EQ(e.precision, 1.0);
    }
}

TEST(Propagate, RoundCapHolds) {
    const Scenario s(SceneClass::Cylinder, 7, 0.02, 0.2);
    MatchConfig cfg = s.config;
    cfg.propagation_threshold = 10.0;  // accept anything nearby
    cfg.propagation_ratio = 1.0;
    cfg.prune_fraction = 1.0;          // and prune nearly everything
    for (int cap : {1, 3}) {
        cfg.max_propagation_rounds = cap;
        const MatchSet m = match_spots(s.captured, s.reference, s.bundle, cfg);
        EXPECT_LE(static_cast<int>(m.round_counts.size()), cap);
        EXPECT_TRUE(m.is_one_to_one());
    }
}

TEST(Invariants, OneToOneAndEpipolarAfterEveryStage) {
    for (std::uint64_t seed : {8u, 9u}) {
        const Scenario s(SceneClass::Tissue, seed, 0.01, 0.1);
        const MatchSet a = initial_match(s.captured, s.reference, s.bundle, s.config);
        const MatchSet b = prune(a, s.captured.graph, s.reference.graph, s.config);
        const MatchSet c = propagate(b, s.captured, s.reference, s.bundle, s.config);
        for (const MatchSet* m : {&a, &b, &c}) {
            EXPECT_TRUE(m->is_one_to_one());
            for (const auto& x : m->active()) {
                EXPECT_LE(line_distance(s.reference.epipolar_lines[x.reference], s.captured.centers[x.captured]),
                          s.config.epipolar_band_halfwidth);
            }
        }
        EXPECT_LE(static_cast<int>(c.round_counts.size()), s.config.max_propagation_rounds);
    }
}

TEST(Evaluate, PerfectAndEmptyPredictions) {
    const std::map<int, int> truth{{0, 3}, {1, 7}, {2, 9}};
    const MatchEvaluation p = evaluate_matching(truth_set(truth), truth, 3);
    EXPECT_EQ(p.sensitivity, 1.0);
    EXPECT_EQ(p.precision, 1.0);
    EXPECT_TRUE(p.precision_defined);
    const MatchEvaluation e = evaluate_matching(MatchSet{}, truth, 3);
    EXPECT_EQ(e.sensitivity, 0.0);
    EXPECT_EQ(e.precision, 0.0);
    EXPECT_FALSE(e.precision_defined);
}
