#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "slhsi_test_cli";

struct Result {
    int code = -1;
    std::string output;
};

Result run(const std::string& args) {
    const fs::path log = kRoot / "last_output.txt";
    fs::create_directories(kRoot);
    const std::string cmd = std::string(SLHSI_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string dir(const std::string& name) {
    const fs::path p = kRoot / name;
    fs::remove_all(p);
    return p.string();
}

}  // namespace

TEST(Cli, SimulateWritesRunDirectory) {
    const std::string out = dir("sim");
    const Result r = run("simulate --scene cylinder --frames 2 --seed 4 --out-dir " + out);
    ASSERT_EQ(r.code, 0) << r.output;
    for (const char* f : {"calibration.json", "pattern.json", "reference.png", "frame_000.png", "frame_001.png",
                          "truth_001.json", "manifest.json", "spectral/hsi_001.pfm", "spectral/white.pfm"})
        EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;
}

TEST(Cli, SimulateIsDeterministic) {
    const std::string a = dir("det_a"), b = dir("det_b");
    ASSERT_EQ(run("simulate --scene tissue --frames 2 --seed 8 --noise-sigma 0.02 --dropout 0.1 --out-dir " + a).code, 0);
    ASSERT_EQ(run("simulate --scene tissue --frames 2 --seed 8 --noise-sigma 0.02 --dropout 0.1 --out-dir " + b).code, 0);
    int compared = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path rel = fs::relative(e.path(), a);
        EXPECT_EQ(slurp(e.path()), slurp(fs::path(b) / rel)) << rel;
        ++compared;
    }
    EXPECT_GT(compared, 10);
}

TEST(Cli, TooManySpotsRejected) {
    const Result r = run("simulate --spots 200 --out-dir " + dir("bad"));
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.output.find("spots"), std::string::npos);
}

TEST(Cli, UnknownSceneRejected) {
    EXPECT_NE(run("simulate --scene teapot --out-dir " + dir("bad2")).code, 0);
}

TEST(Cli, PipelineWithBothDetectors) {
    const std::string sim = dir("pipe_sim");
    ASSERT_EQ(run("simulate --scene target --frames 1 --seed 2 --out-dir " + sim).code, 0);
    for (const std::string det : {"fcn", "baseline"}) {
        const std::string out = dir("pipe_" + det);
        const Result r = run("pipeline --detector " + det + " --in-dir " + sim + " --out-dir " + out);
        ASSERT_EQ(r.code, 0) << r.output;
        for (const char* f : {"hybrid_000.csv", "hybrid_000.ply", "hybrid_sto2_000.ply", "timing.txt", "matches_000.csv"})
            EXPECT_TRUE(fs::exists(fs::path(out) / f)) << det << " " << f;
        EXPECT_NE(slurp(fs::path(out) / "timing.txt").find("80 ms"), std::string::npos);
    }
}

TEST(Cli, SkipSpectraGivesShapeOnly) {
    const std::string out = dir("shape");
    const Result r = run("pipeline --skip-spectra --detector baseline --seed 3 --out-dir " + out);
    ASSERT_EQ(r.code, 0) << r.output;
    std::ifstream in(fs::path(out) / "hybrid_000.csv");
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(line.substr(line.size() - 5), ",,,,,");
        ++rows;
    }
    EXPECT_GT(rows, 50);
    EXPECT_FALSE(fs::exists(fs::path(out) / "fiber_map.json"));
}

TEST(Cli, StagesChainThroughFiles) {
    const std::string out = dir("stages");
    ASSERT_EQ(run("simulate --scene plane --frames 1 --out-dir " + out).code, 0);
    ASSERT_EQ(run("detect --detector baseline --out-dir " + out).code, 0);
    ASSERT_EQ(run("match --out-dir " + out).code, 0);
    ASSERT_EQ(run("reconstruct --out-dir " + out).code, 0);
    ASSERT_EQ(run("spectra --out-dir " + out).code, 0);
    for (const char* f : {"detections_000.csv", "matches_000.csv", "surface_000.csv", "sto2_000.csv"})
        EXPECT_TRUE(fs::exists(fs::path(out) / f)) << f;
    const std::string manifest = slurp(fs::path(out) / "manifest.json");
    EXPECT_NE(manifest.find("\"scene\": \"plane\""), std::string::npos);
    EXPECT_NE(manifest.find("surface_000.csv"), std::string::npos);
}

TEST(Cli, EvaluatePerfectEmptyAndMismatched) {
    const std::string sim = dir("eval_sim");
    ASSERT_EQ(run("simulate --scene plane --frames 2 --out-dir " + sim).code, 0);
    const std::string out = dir("eval_pipe");
    ASSERT_EQ(run("pipeline --detector baseline --skip-spectra --in-dir " + sim + " --out-dir " + out).code, 0);

    Result r = run("evaluate --in-dir " + out + " --out-dir " + dir("eval_a"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("1.000 +/- 0.000    1.000 +/- 0.000"), std::string::npos) << r.output;

    // Empty prediction: zeros and a warning.
    std::ofstream(fs::path(out) / "matches_001.csv") << "captured_idx,reference_idx,distance,flag\n";
    std::ofstream(fs::path(out) / "matches_000.csv") << "captured_idx,reference_idx,distance,flag\n";
    r = run("evaluate --in-dir " + out + " --out-dir " + dir("eval_b"));
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("warning"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("0.000 +/- 0.000"), std::string::npos) << r.output;

    fs::remove(fs::path(out) / "matches_001.csv");
    r = run("evaluate --in-dir " + out + " --out-dir " + dir("eval_c"));
    EXPECT_NE(r.code, 0);
    EXPECT_NE(r.output.find("error"), std::string::npos) << r.output;
}

TEST(Cli, ConfigFileAndFlagPrecedence) {
    const fs::path cfg = kRoot / "run.ini";
    fs::create_directories(kRoot);
    std::ofstream(cfg) << "scene=cylinder\nframes=1\nseed=5\n";
    const std::string out = dir("cfg");
    ASSERT_EQ(run("simulate --config " + cfg.string() + " --frames 2 --out-dir " + out).code, 0);
    const std::string manifest = slurp(fs::path(out) / "manifest.json");
    EXPECT_NE(manifest.find("\"scene\": \"cylinder\""), std::string::npos);
    EXPECT_TRUE(fs::exists(fs::path(out) / "frame_001.png"));
}
