#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "slhsi/scenario.hpp"
#include "slhsi/spotdetect.hpp"

using namespace slhsi;

namespace {

DensityMap bumps(int w, int h, const std::vector<std::pair<Vec2, double>>& peaks, double sigma = 2.0) {
    DensityMap d{Image(w, h, 1, -1.0f)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (const auto& [c, a] : peaks)
                d.map.at(x, y) += static_cast<float>(a * std::exp(-0.5 * (Vec2(x, y) - c).squaredNorm() / (sigma * sigma)));
    return d;
}

const RenderedFrame& clean_frame() {
    static const RenderedFrame f = render_frame(generate_pattern(kMaxSpots, 12), plane_scene(), default_bundle(),
                                                NoiseModel{}, 1);
    return f;
}

// Fraction of truth spots with a detection within `tol`, and the worst such distance.
std::pair<int, double> coverage(const SpotDetection& d, const RenderedFrame& f, double tol) {
    std::vector<Vec2> c;
    for (const auto& s : d) c.push_back(s.center);
    const TruthAssociation a = associate_truth(f, c, tol);
    double worst = 0.0;
    for (const auto& [i, id] : a.captured_to_reference) worst = std::max(worst, (c[i] - f.truth[id].camera_center).norm());
    return {static_cast<int>(a.captured_to_reference.size()), worst};
}

}  // namespace

TEST(Density, MatchesChannelDifference) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 2.0);
    Tensor s(2, 8, 12);
    for (double& v : s.data) v = g(rng);
    const DensityMap d = density_map(s);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 12; ++x) EXPECT_FLOAT_EQ(d.map.at(x, y), static_cast<float>(s.at(1, y, x) - s.at(0, y, x)));
}

TEST(Density, EqualChannelsGiveZero) {
    const DensityMap d = density_map(Tensor(2, 4, 4, 0.7));
    for (float v : d.map.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Density, PureForegroundGivesOnes) {
    Tensor s(2, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) s.at(1, y, x) = 1.0;
    const DensityMap d = density_map(s);
    for (float v : d.map.data()) EXPECT_EQ(v, 1.0f);
}

TEST(DetectSpots, SingleBumpLocalized) {
    const Image img(64, 64, 3, 0.5f);
    const SpotDetection d = detect_spots(bumps(64, 64, {{Vec2(30.0, 40.0), 3.0}}), 4.0, 0.0, img);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_LT((d[0].center - Vec2(30.0, 40.0)).norm(), 0.2);
}

TEST(DetectSpots, CloseBumpsKeepTheHigher) {
    const Image img(64, 64, 3, 0.5f);
    const SpotDetection d =
        detect_spots(bumps(64, 64, {{Vec2(30, 30), 3.0}, {Vec2(34.5, 30), 4.0}}, 1.0), 6.0, 0.0, img);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_LT((d[0].center - Vec2(34.5, 30)).norm(), 0.3);
}

TEST(Baseline, BlankImageIsEmpty) {
    const BaselineDetectorOptions o;
    EXPECT_TRUE(baseline_detect(Image(64, 48, 3, 0.2f), o.sigma_small, o.sigma_large, o.threshold, o.nms_radius).empty());
}

TEST(Baseline, SingleBlobLocalized) {
    Image img(64, 64, 3, 0.04f);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(x, y, c) += static_cast<float>(0.8 * std::exp(-0.5 * (Vec2(x, y) - Vec2(30, 40)).squaredNorm() / 4.0));
    const BaselineDetectorOptions o;
    const SpotDetection d = baseline_detect(img, o.sigma_small, o.sigma_large, o.threshold, o.nms_radius);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_LT((d[0].center - Vec2(30, 40)).norm(), 0.2);
}

TEST(Baseline, CleanFrameFindsEverySpot) {
    const BaselineDetectorOptions o;
    const SpotDetection d =
        baseline_detect(clean_frame().image, o.sigma_small, o.sigma_large, o.threshold, o.nms_radius);
    EXPECT_EQ(d.size(), 171u);
    const auto [found, worst] = coverage(d, clean_frame(), 0.5);
    EXPECT_EQ(found, 171);
    EXPECT_LT(worst, 0.5);
}

TEST(Fcn, CleanFrameFindsEverySpot) {
    const FcnModel m = FcnModel::load(data_directory() / "fcn_model.json");
    const SpotDetection d = fcn_detect(m, clean_frame().image);
    EXPECT_EQ(d.size(), 171u);
    const auto [found, worst] = coverage(d, clean_frame(), 0.5);
    EXPECT_EQ(found, 171);
    EXPECT_LT(worst, 0.5);
}

TEST(Fcn, AgreesWithBaselineOnCleanFrames) {
    const FcnModel m = FcnModel::load(data_directory() / "fcn_model.json");
    const BaselineDetectorOptions o;
    int agree = 0, total = 0;
    for (int k = 0; k < 3; ++k) {
        const RenderedFrame f = render_frame(generate_pattern(kMaxSpots, 30 + k), random_scene(SceneClass::Cylinder, k),
                                             default_bundle(), NoiseModel{}, 1);
        const SpotDetection a = fcn_detect(m, f.image);
        const SpotDetection b = baseline_detect(f.image, o.sigma_small, o.sigma_large, o.threshold, o.nms_radius);
        std::vector<std::pair<int, Vec2>> labelled;
        for (int i = 0; i < static_cast<int>(b.size()); ++i) labelled.emplace_back(i, b[i].center);
        std::vector<Vec2> ca;
        for (const auto& s : a) ca.push_back(s.center);
        agree += static_cast<int>(associate_detections(ca, labelled, 1.0).size());
        total += static_cast<int>(std::max(a.size(), b.size()));
    }
    EXPECT_GE(agree, 0.95 * total);
}

TEST(Color, MeanDiskOfConstantImage) {
    Image img(20, 20, 3);
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 20; ++x) {
            img.at(x, y, 0) = 0.2f;
            img.at(x, y, 1) = 0.4f;
            img.at(x, y, 2) = 0.6f;
        }
    EXPECT_LT((mean_disk_rgb(img, Vec2(10.3, 9.7), 2.0) - Vec3(0.2, 0.4, 0.6)).norm(), 1e-6);
}
