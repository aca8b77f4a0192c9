#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "slhsi/error.hpp"
#include "slhsi/io.hpp"
#include "slhsi/scenario.hpp"

using namespace slhsi;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "slhsi_test_io";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST(Json, BundleRoundTrip) {
    const CalibrationBundle b = default_bundle();
    const fs::path p = temp_path("bundle.json");
    write_json(to_json(b), p);
    const CalibrationBundle back = bundle_from_json(read_json(p));
    EXPECT_LT((back.camera.pose.rotation - b.camera.pose.rotation).norm(), 1e-12);
    EXPECT_LT((back.projector.pose.rotation - b.projector.pose.rotation).norm(), 1e-12);
    EXPECT_LT((back.projector.pose.translation - b.projector.pose.translation).norm(), 1e-12);
    EXPECT_EQ(back.camera.intrinsics.image_width, b.camera.intrinsics.image_width);
    EXPECT_DOUBLE_EQ(back.projector.intrinsics.fx, b.projector.intrinsics.fx);
    EXPECT_LT((back.reference_plane_homography.matrix - b.reference_plane_homography.matrix).norm(), 1e-9);
}

TEST(Json, BadBundleRejected) {
    Json j = to_json(default_bundle());
    j["camera"]["intrinsics"]["fx"] = -1.0;
    EXPECT_THROW(bundle_from_json(j), Error);
}

TEST(Json, PatternRoundTrip) {
    const SpotPatternSpec p = generate_pattern(kMaxSpots, 9);
    const SpotPatternSpec back = pattern_from_json(to_json(p));
    ASSERT_EQ(back.spots.size(), p.spots.size());
    for (std::size_t k = 0; k < p.spots.size(); ++k) {
        EXPECT_DOUBLE_EQ(back.spots[k].wavelength_nm, p.spots[k].wavelength_nm);
        EXPECT_LT((back.spots[k].projector_pixel - p.spots[k].projector_pixel).norm(), 1e-12);
    }
}

TEST(Json, BandsAndCalibrationRoundTrip) {
    const std::vector<BandRange> bands{{0, 3}, {5, 9}, {12, 12}};
    const auto back = bands_from_json(to_json(bands));
    ASSERT_EQ(back.size(), 3u);
    EXPECT_EQ(back[2].first, 12);
    EXPECT_EQ(back[1].last, 9);
    const WavelengthCalibration c{1.0312, 447.25, 0.04};
    const WavelengthCalibration cb = calibration_from_json(to_json(c));
    EXPECT_DOUBLE_EQ(cb.slope, c.slope);
    EXPECT_DOUBLE_EQ(cb.intercept, c.intercept);
}

TEST(Json, MissingFileIsIoError) {
    try {
        read_json(temp_path("does_not_exist.json"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::Io);
    }
}

TEST(Csv, DetectionsRoundTrip) {
    SpotDetection d{{Vec2(1.0 / 3.0, 200.125), 0.75, Vec3(0.1, 0.2, 0.3)}, {Vec2(639.5, 0.0), 12.0, Vec3(1, 0, 0)}};
    const fs::path p = temp_path("det.csv");
    write_detections_csv(d, p);
    const SpotDetection back = read_detections_csv(p);
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(back[i].center.x(), d[i].center.x(), 1e-9);
        EXPECT_NEAR(back[i].center.y(), d[i].center.y(), 1e-9);
        EXPECT_NEAR(back[i].score, d[i].score, 1e-9);
        EXPECT_LT((back[i].rgb - d[i].rgb).norm(), 1e-9);
    }
}

TEST(Csv, MatchesRoundTripIncludingFlags) {
    MatchSet m;
    m.matches = {{0, 10, 0.05, MatchFlag::Initial}, {1, 11, 0.3, MatchFlag::Propagated}};
    const fs::path p = temp_path("matches.csv");
    write_matches_csv(m, p);
    const MatchSet back = read_matches_csv(p);
    ASSERT_EQ(back.matches.size(), 2u);
    EXPECT_EQ(back.matches[1].reference, 11);
    EXPECT_EQ(back.matches[1].flag, MatchFlag::Propagated);
    EXPECT_NEAR(back.matches[0].distance, 0.05, 1e-12);
    for (MatchFlag f : {MatchFlag::Initial, MatchFlag::Propagated})
        EXPECT_EQ(match_flag_from_string(to_string(f)), f);
}

TEST(Csv, MalformedMatchesRejected) {
    const fs::path p = temp_path("bad_matches.csv");
    std::ofstream(p) << "captured_idx,reference_idx,distance,flag\n1,x,0.1,initial\n";
    EXPECT_THROW(read_matches_csv(p), Error);
}

TEST(Csv, SpectrumKeepsMaskedSamples) {
    Spectrum s{{500, 501, 502}, {0.5, std::nan(""), 0.25}};
    const fs::path p = temp_path("spectrum.csv");
    write_spectrum_csv(s, p);
    const Spectrum back = read_spectrum_csv(p);
    ASSERT_EQ(back.size(), 3u);
    EXPECT_DOUBLE_EQ(back.values[0], 0.5);
    EXPECT_FALSE(back.valid(1));
    EXPECT_DOUBLE_EQ(back.wavelengths[2], 502.0);
}

TEST(Table, MeanSdAndText) {
    const MeanSd m = mean_sd({1.0, 2.0, 3.0});
    EXPECT_DOUBLE_EQ(m.mean, 2.0);
    EXPECT_DOUBLE_EQ(m.sd, 1.0);
    MatchEvaluation e;
    e.sensitivity = 0.9;
    e.precision = 1.0;
    e.precision_defined = true;
    e.true_positives = 9;
    e.annotated = 10;
    e.predicted = 9;
    const std::vector<MatchingTableRow> rows{{"plane", {e, e}}};
    const std::string text = matching_table_text(rows);
    EXPECT_NE(text.find("Sensitivity"), std::string::npos);
    EXPECT_NE(text.find("Precision"), std::string::npos);
    EXPECT_NE(text.find("0.900 +/- 0.000"), std::string::npos);
    const Json j = matching_table_json(rows);
    ASSERT_EQ(j["rows"].size(), 1u);
    EXPECT_EQ(j["rows"][0]["name"], "plane");
    EXPECT_DOUBLE_EQ(j["rows"][0]["sensitivity"]["mean"].get<double>(), 0.9);
}
