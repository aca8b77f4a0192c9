// slhsi command-line front end: per-stage subcommands plus an end-to-end pipeline.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "slhsi/error.hpp"
#include "slhsi/fcn.hpp"
#include "slhsi/hybrid.hpp"
#include "slhsi/image.hpp"
#include "slhsi/io.hpp"
#include "slhsi/scenario.hpp"
#include "slhsi/simulator.hpp"
#include "slhsi/spectra.hpp"
#include "slhsi/spotdetect.hpp"
#include "slhsi/spotmatch.hpp"

namespace fs = std::filesystem;
using namespace slhsi;

namespace {

struct StageFailure : std::runtime_error {
    StageFailure(std::string stage_name, const std::string& message)
        : std::runtime_error(message), stage(std::move(stage_name)) {}
    std::string stage;
};

template <class F>
auto stage(const std::string& name, F&& body) {
    try {
        return body();
    } catch (const StageFailure&) {
        throw;
    } catch (const std::exception& e) {
        throw StageFailure(name, e.what());
    }
}

struct Options {
    std::string scene;
    std::string heightfield;
    int spots = kMaxSpots;
    std::uint64_t seed = 1;
    int frames = 1;
    int frame = -1;  // all frames
    double noise_sigma = 0.0;
    double dropout = 0.0;
    double spectral_noise = 0.0;
    std::string detector = "fcn";
    std::string model;
    std::string threshold;  // number | auto; empty keeps the default
    std::optional<double> epipolar_band;
    std::optional<double> alpha;
    std::optional<double> propagation_threshold;
    std::optional<int> max_rounds;
    std::optional<double> residual_ceiling;
    std::vector<std::string> in_dirs;
    std::string config;
    std::string out_dir = ".";
    bool skip_spectra = false;

    // train
    int base_images = 17;
    int augmentations = 4;
    std::optional<int> coarse_iters;
    std::optional<int> fine_iters;
    std::optional<int> base_dim;
};

std::string indexed(const std::string& stem, int index, const std::string& ext) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_%03d", index);
    return stem + buf + ext;
}

// Collects written files for the manifest.
class OutputDir {
public:
    explicit OutputDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }
    fs::path operator()(const std::string& name) {
        files_.insert(name);
        fs::create_directories((root_ / name).parent_path());
        return root_ / name;
    }
    const fs::path& root() const { return root_; }
    Json file_list() const { return Json(std::vector<std::string>(files_.begin(), files_.end())); }

private:
    fs::path root_;
    std::set<std::string> files_;
};

Json noise_json(const NoiseModel& n) {
    return {{"pixel_noise_sigma", n.pixel_noise_sigma},
            {"spot_dropout_fraction", n.spot_dropout_fraction},
            {"spectral_noise_sigma", n.spectral_noise_sigma}};
}

Json match_config_json(const MatchConfig& c) {
    return {{"distance_threshold", c.distance_threshold},
            {"propagation_threshold", c.propagation_threshold},
            {"epipolar_band_halfwidth", c.epipolar_band_halfwidth},
            {"max_propagation_rounds", c.max_propagation_rounds},
            {"neighborhood_alpha", c.neighborhood_alpha},
            {"prune_fraction", c.prune_fraction},
            {"prune_hops", c.prune_hops},
            {"disparity_tolerance", c.disparity_tolerance},
            {"propagation_ratio", c.propagation_ratio},
            {"initial_ratio", c.initial_ratio}};
}

// Run-creating commands (simulate, pipeline, train) own the top level; stage
// commands add an entry under "stages" of an existing manifest.
void write_manifest(OutputDir& out, const std::string& command, Json body, bool stage_entry = false) {
    const fs::path path = out.root() / "manifest.json";
    Json j;
    std::set<std::string> outputs;
    if (stage_entry && fs::exists(path)) {
        j = read_json(path);
        for (const auto& f : j.value("outputs", Json::array())) outputs.insert(f.get<std::string>());
        j.erase("outputs");
        j["stages"][command] = body;
    } else {
        j["command"] = command;
        for (auto& [k, v] : body.items()) j[k] = v;
    }
    for (const auto& f : out.file_list()) outputs.insert(f.get<std::string>());
    j["outputs"] = std::vector<std::string>(outputs.begin(), outputs.end());
    write_json(j, path);
}

NoiseModel noise_from(const Options& o) {
    NoiseModel n;
    n.pixel_noise_sigma = o.noise_sigma;
    n.spot_dropout_fraction = o.dropout;
    n.spectral_noise_sigma = o.spectral_noise;
    return n;
}

// Match settings from flags; `auto` threshold needs the reference.
MatchConfig match_config_from(const Options& o, const ReferenceImage& reference_image,
                              const CalibrationBundle& bundle) {
    MatchConfig c;
    if (o.epipolar_band) c.epipolar_band_halfwidth = *o.epipolar_band;
    if (o.alpha) c.neighborhood_alpha = *o.alpha;
    if (o.propagation_threshold) c.propagation_threshold = *o.propagation_threshold;
    if (o.max_rounds) c.max_propagation_rounds = *o.max_rounds;
    if (o.threshold == "auto") {
        c.validate();
        const ReferenceSpots spots = prepare_reference(reference_image, bundle, c);
        c.distance_threshold = self_match_threshold(reference_image, spots, c);
    } else if (!o.threshold.empty()) {
        try {
            std::size_t used = 0;
            c.distance_threshold = std::stod(o.threshold, &used);
            if (used != o.threshold.size()) throw std::invalid_argument("trailing");
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::InvalidArgument, "threshold: expected a number or 'auto', got '" + o.threshold + "'");
        }
    }
    c.validate();
    return c;
}

std::optional<FcnModel> load_detector_model(const Options& o) {
    if (o.detector == "baseline") return std::nullopt;
    const fs::path path = o.model.empty() ? data_directory() / "fcn_model.json" : fs::path(o.model);
    return FcnModel::load(path);
}

DetectorChoice detector_from(const std::optional<FcnModel>& model) {
    DetectorChoice d;
    d.model = model ? &*model : nullptr;
    return d;
}

// ---------------------------------------------------------------------------
// Run directory produced by `simulate`

void write_spectral_frame(const SpectralFrame& frame, OutputDir& out, const std::string& name) {
    write_pfm(frame.image, out(name));
}

struct RunDir {
    fs::path root;
    Json manifest;
    CalibrationBundle bundle;
    SpotPatternSpec pattern;
    ReferenceImage reference;
    int frames = 0;

    fs::path operator/(const std::string& name) const { return root / name; }
    bool has(const std::string& name) const { return fs::exists(root / name); }

    std::vector<int> frame_indices(int only) const {
        std::vector<int> idx;
        for (int f = 0; f < frames; ++f) {
            if (only < 0 || only == f) idx.push_back(f);
        }
        if (only >= frames) throw Error(ErrorCode::InvalidArgument, "frame: index out of range");
        return idx;
    }
};

RunDir load_run(const fs::path& root) {
    RunDir r;
    r.root = root;
    r.manifest = read_json(root / "manifest.json");
    r.bundle = bundle_from_json(read_json(root / "calibration.json"));
    r.pattern = pattern_from_json(read_json(root / "pattern.json"));
    r.reference = generate_reference_image(r.pattern, r.bundle);
    r.frames = r.manifest.value("frames", 0);
    return r;
}

SpectralInputs load_spectral_inputs(const RunDir& run, int frame) {
    const Json meta = read_json(run / "spectral/spectral.json");
    const auto bands = bands_from_json(meta.at("bands"));
    const auto lasers = meta.at("laser_wavelengths_nm").get<std::vector<double>>();
    auto load = [&](const std::string& name) { return SpectralFrame{read_pfm(run / name), bands}; };
    return build_spectral_inputs(load("spectral/" + indexed("hsi", frame, ".pfm")), load("spectral/white.pfm"),
                                 load("spectral/laser.pfm"), lasers, load("spectral/encoding.pfm"), run.pattern);
}

void write_run_inputs(const SimulatedRun& run, OutputDir& out) {
    write_json(to_json(run.bundle), out("calibration.json"));
    write_json(to_json(run.pattern), out("pattern.json"));
    write_png(run.reference.image, out("reference.png"));
    for (int f = 0; f < static_cast<int>(run.frames.size()); ++f) {
        write_png(run.frames[f].image, out(indexed("frame", f, ".png")));
        write_json(to_json(run.frames[f]), out(indexed("truth", f, ".json")));
    }
    if (!run.config.spectral) return;
    write_spectral_frame(run.white, out, "spectral/white.pfm");
    write_spectral_frame(run.laser, out, "spectral/laser.pfm");
    write_spectral_frame(run.encoding, out, "spectral/encoding.pfm");
    for (int f = 0; f < static_cast<int>(run.hyperspectral.size()); ++f) {
        write_spectral_frame(run.hyperspectral[f], out, "spectral/" + indexed("hsi", f, ".pfm"));
    }
    Json meta;
    meta["bands"] = to_json(run.white.bands);
    meta["laser_wavelengths_nm"] = run.laser_wavelengths_nm;
    write_json(meta, out("spectral/spectral.json"));
}

Json scenario_json(const ScenarioConfig& c) {
    Json j;
    j["scene"] = c.scene;
    j["seed"] = c.seed;
    j["spots"] = c.spots;
    j["frames"] = c.frames;
    j["noise"] = noise_json(c.noise);
    j["spectral"] = c.spectral;
    return j;
}

ScenarioConfig scenario_from(const Options& o, const std::string& default_scene) {
    ScenarioConfig c;
    c.scene = o.scene.empty() ? default_scene : o.scene;
    c.heightfield_path = o.heightfield;
    c.spots = o.spots;
    c.seed = o.seed;
    c.frames = o.frames;
    c.noise = noise_from(o);
    c.spectral = !o.skip_spectra;
    return c;
}

fs::path single_input(const Options& o, const fs::path& fallback) {
    if (o.in_dirs.size() > 1) throw Error(ErrorCode::InvalidArgument, "in-dir: this command takes one directory");
    return o.in_dirs.empty() ? fallback : fs::path(o.in_dirs.front());
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_simulate(const Options& o) {
    const ScenarioConfig config = scenario_from(o, "plane");
    const SimulatedRun run = stage("simulate", [&] { return simulate_run(config); });
    OutputDir out(o.out_dir);
    stage("write", [&] {
        write_run_inputs(run, out);
        Json body = scenario_json(config);
        write_manifest(out, "simulate", body);
    });
    std::cout << "simulated " << run.frames.size() << " frame(s) of scene '" << config.scene << "' into "
              << out.root().string() << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    TrainConfig tc;
    tc.seed = o.seed;
    if (o.coarse_iters) tc.coarse_iters = *o.coarse_iters;
    if (o.fine_iters) tc.fine_iters = *o.fine_iters;
    if (o.base_dim) tc.base_dim = *o.base_dim;
    stage("train", [&] { tc.validate(); });
    const auto samples =
        stage("simulate", [&] { return make_training_set(o.base_images, o.augmentations, o.seed); });
    const TrainResult result = stage("train", [&] {
        return train_fcn(FcnModel::create(tc.base_dim, o.seed), samples, tc, [](const LossRecord& r) {
            if (r.iteration % 100 == 0) std::cout << "iter " << r.iteration << " loss " << r.loss << "\n";
        });
    });
    OutputDir out(o.out_dir);
    stage("write", [&] {
        result.model.save(out("fcn_model.json"));
        write_loss_csv(result.curve, out("loss.csv"));
        Json body;
        body["seed"] = o.seed;
        body["base_images"] = o.base_images;
        body["augmentations"] = o.augmentations;
        body["samples"] = samples.size();
        body["train"] = {{"momentum", tc.momentum},     {"weight_decay", tc.weight_decay},
                         {"coarse_lr", tc.coarse_lr},   {"coarse_iters", tc.coarse_iters},
                         {"fine_lr", tc.fine_lr},       {"fine_iters", tc.fine_iters},
                         {"batch_size", tc.batch_size}, {"patch_size", tc.patch_size},
                         {"base_dim", tc.base_dim}};
        write_manifest(out, "train", body);
    });
    std::cout << "final loss " << (result.curve.empty() ? 0.0 : result.curve.back().loss) << "\n";
    return 0;
}

int cmd_detect(const Options& o) {
    const RunDir run = stage("load", [&] { return load_run(single_input(o, o.out_dir)); });
    const auto model = stage("detect", [&] { return load_detector_model(o); });
    const DetectorChoice detector = detector_from(model);
    OutputDir out(o.out_dir);
    for (int f : run.frame_indices(o.frame)) {
        const Image image = stage("load", [&] { return read_png(run / indexed("frame", f, ".png")); });
        const SpotDetection d = stage("detect", [&] { return run_detector(image, detector); });
        stage("write", [&] { write_detections_csv(d, out(indexed("detections", f, ".csv"))); });
        std::cout << "frame " << f << ": " << d.size() << " spots\n";
    }
    write_manifest(out, "detect", {{"detector", o.detector}, {"frames", run.frames}}, true);
    return 0;
}

int cmd_match(const Options& o) {
    const RunDir run = stage("load", [&] { return load_run(single_input(o, o.out_dir)); });
    const MatchConfig config = stage("match", [&] { return match_config_from(o, run.reference, run.bundle); });
    const ReferenceSpots reference = stage("match", [&] { return prepare_reference(run.reference, run.bundle, config); });
    OutputDir out(o.out_dir);
    const auto& cam = run.bundle.camera.intrinsics;
    for (int f : run.frame_indices(o.frame)) {
        const SpotDetection d =
            stage("load", [&] { return read_detections_csv(fs::path(o.out_dir) / indexed("detections", f, ".csv")); });
        const MatchSet m = stage("match", [&] {
            const CapturedSpots captured = prepare_captured(d, cam.image_width, cam.image_height, config);
            return match_spots(captured, reference, run.bundle, config);
        });
        stage("write", [&] { write_matches_csv(m, out(indexed("matches", f, ".csv"))); });
        std::cout << "frame " << f << ": " << m.active_count() << " matches\n";
    }
    write_manifest(out, "match", {{"frames", run.frames}, {"match", match_config_json(config)}}, true);
    return 0;
}

std::vector<Vec2> centers_of(const SpotDetection& d) {
    std::vector<Vec2> c;
    for (const auto& s : d) c.push_back(s.center);
    return c;
}

ReconstructOptions reconstruct_options_from(const Options& o) {
    ReconstructOptions r;
    if (o.residual_ceiling) r.residual_ceiling_px = *o.residual_ceiling;
    return r;
}

int cmd_reconstruct(const Options& o) {
    const RunDir run = stage("load", [&] { return load_run(single_input(o, o.out_dir)); });
    OutputDir out(o.out_dir);
    const fs::path work(o.out_dir);
    for (int f : run.frame_indices(o.frame)) {
        const SpotDetection d = stage("load", [&] { return read_detections_csv(work / indexed("detections", f, ".csv")); });
        const MatchSet m = stage("load", [&] { return read_matches_csv(work / indexed("matches", f, ".csv")); });
        const ReconstructedSurface s = stage("triangulate", [&] {
            return reconstruct(m, centers_of(d), run.reference.spots, run.bundle, reconstruct_options_from(o));
        });
        stage("write", [&] {
            const HybridFrame h = without_spectra(s);
            export_csv(h, out(indexed("surface", f, ".csv")));
            export_ply(h, out(indexed("surface", f, ".ply")));
        });
        std::cout << "frame " << f << ": " << s.points.size() << " points, " << s.mesh.size() << " triangles\n";
    }
    write_manifest(out, "reconstruct", {{"frames", run.frames}}, true);
    return 0;
}

void write_spectral_products(const SpectralInputs& in, const std::vector<BandAttributes>& bands, OutputDir& out,
                             int frame) {
    std::vector<StO2ReportRow> rows;
    std::ostringstream refl;
    refl << "spot_id,wavelength_nm,reflectance\n";
    char buf[96];
    for (int k = 0; k < static_cast<int>(in.fiber_map.spot_to_band.size()); ++k) {
        const BandAttributes& b = bands.at(static_cast<std::size_t>(in.fiber_map.spot_to_band[k]));
        if (b.fit) rows.push_back({k, *b.fit});
        if (!b.reflectance) continue;
        for (std::size_t i = 0; i < b.reflectance->wavelengths.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g\n", k, b.reflectance->wavelengths[i],
                          b.reflectance->values[i]);
            refl << buf;
        }
    }
    write_sto2_report_csv(rows, out(indexed("sto2", frame, ".csv")));
    write_text(refl.str(), out(indexed("reflectance", frame, ".csv")));
}

int cmd_spectra(const Options& o) {
    const RunDir run = stage("load", [&] { return load_run(single_input(o, o.out_dir)); });
    if (!run.has("spectral/spectral.json")) {
        throw StageFailure("spectra", "run directory has no spectral frames");
    }
    OutputDir out(o.out_dir);
    for (int f : run.frame_indices(o.frame)) {
        const SpectralInputs in = stage("spectra", [&] { return load_spectral_inputs(run, f); });
        const auto bands = stage("spectra", [&] { return process_spectral_frame(in); });
        stage("write", [&] {
            write_json(to_json(in.calibration), out("wavelength_calibration.json"));
            write_json(Json{{"spot_to_band", in.fiber_map.spot_to_band}}, out("fiber_map.json"));
            write_spectral_products(in, bands, out, f);
        });
        int accepted = 0;
        for (const auto& b : bands) accepted += b.fit && b.fit->accepted ? 1 : 0;
        std::cout << "frame " << f << ": " << bands.size() << " bands, " << accepted << " accepted StO2 fits\n";
    }
    write_manifest(out, "spectra", {{"frames", run.frames}}, true);
    return 0;
}

int cmd_pipeline(const Options& o) {
    OutputDir out(o.out_dir);
    std::optional<RunDir> loaded;
    std::optional<SimulatedRun> simulated;
    Json body;
    if (!o.in_dirs.empty()) {
        loaded = stage("load", [&] { return load_run(single_input(o, o.out_dir)); });
        body["input"] = loaded->manifest;
        if (loaded->manifest.contains("scene")) body["scene"] = loaded->manifest.at("scene");
    } else {
        const ScenarioConfig config = scenario_from(o, "target");
        simulated = stage("simulate", [&] { return simulate_run(config); });
        stage("write", [&] { write_run_inputs(*simulated, out); });
        body = scenario_json(config);
    }
    const CalibrationBundle& bundle = loaded ? loaded->bundle : simulated->bundle;
    const ReferenceImage& reference_image = loaded ? loaded->reference : simulated->reference;
    const int frames = loaded ? loaded->frames : static_cast<int>(simulated->frames.size());
    const bool spectral = !o.skip_spectra && (loaded ? loaded->has("spectral/spectral.json") : simulated->config.spectral);

    const auto model = stage("detect", [&] { return load_detector_model(o); });
    const DetectorChoice detector = detector_from(model);
    const MatchConfig config = stage("match", [&] { return match_config_from(o, reference_image, bundle); });
    const ReferenceSpots reference = stage("match", [&] { return prepare_reference(reference_image, bundle, config); });

    std::vector<int> indices;
    if (loaded) {
        indices = loaded->frame_indices(o.frame);
    } else {
        for (int f = 0; f < frames; ++f) indices.push_back(f);
    }
    std::vector<StageTiming> timings;
    for (int f : indices) {
        const Image image = loaded ? stage("load", [&] { return read_png(*loaded / indexed("frame", f, ".png")); })
                                   : simulated->frames[f].image;
        std::optional<SpectralInputs> spectra;
        if (spectral) {
            spectra = stage("spectra", [&] {
                if (loaded) return load_spectral_inputs(*loaded, f);
                const SimulatedRun& r = *simulated;
                return build_spectral_inputs(r.hyperspectral[f], r.white, r.laser, r.laser_wavelengths_nm, r.encoding,
                                             r.pattern);
            });
        }
        if (loaded && fs::absolute(loaded->root) != fs::absolute(out.root())) {
            stage("write", [&] {
                const std::string name = indexed("truth", f, ".json");
                if (loaded->has(name)) fs::copy_file(*loaded / name, out(name), fs::copy_options::overwrite_existing);
            });
        }
        const FrameResult result = stage("pipeline", [&] {
            return run_frame(image, reference, bundle, detector, config, reconstruct_options_from(o),
                             spectra ? &*spectra : nullptr);
        });
        stage("write", [&] {
            write_detections_csv(result.detections, out(indexed("detections", f, ".csv")));
            write_matches_csv(result.matches, out(indexed("matches", f, ".csv")));
            export_csv(result.hybrid, out(indexed("hybrid", f, ".csv")));
            export_ply(result.hybrid, out(indexed("hybrid", f, ".ply")), ColorMode::Rgb);
            if (spectra) {
                export_ply(result.hybrid, out(indexed("hybrid_sto2", f, ".ply")), ColorMode::StO2);
                write_json(Json{{"spot_to_band", spectra->fiber_map.spot_to_band}}, out("fiber_map.json"));
                write_json(to_json(spectra->calibration), out("wavelength_calibration.json"));
            }
        });
        timings.push_back(result.hybrid.timing);
        int with_sto2 = 0;
        for (const auto& p : result.hybrid.points) with_sto2 += p.sto2 ? 1 : 0;
        std::cout << "frame " << f << ": " << result.detections.size() << " spots, " << result.matches.active_count()
                  << " matches, " << result.hybrid.points.size() << " points";
        if (spectra) std::cout << ", " << with_sto2 << " with StO2";
        std::cout << "\n";
    }
    // Timing varies run to run, so it lives outside the manifest's deterministic set.
    stage("write", [&] { write_text(timing_report(timings), fs::path(o.out_dir) / "timing.txt"); });
    body["detector"] = o.detector;
    body["spectra"] = spectral;
    body["match"] = match_config_json(config);
    write_manifest(out, "pipeline", body);
    std::cout << timing_report(timings);
    return 0;
}

std::set<int> indexed_files(const fs::path& dir, const std::string& stem, const std::string& ext) {
    std::set<int> found;
    if (!fs::is_directory(dir)) return found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() != stem.size() + 4 + ext.size()) continue;
        if (name.rfind(stem + "_", 0) != 0 || name.substr(name.size() - ext.size()) != ext) continue;
        const std::string digits = name.substr(stem.size() + 1, 3);
        if (std::all_of(digits.begin(), digits.end(), ::isdigit)) found.insert(std::stoi(digits));
    }
    return found;
}

int cmd_evaluate(const Options& o) {
    std::vector<std::string> dirs = o.in_dirs;
    if (dirs.empty()) dirs.push_back(o.out_dir);
    std::vector<MatchingTableRow> rows;
    for (const auto& dir : dirs) {
        MatchingTableRow row = stage("evaluate", [&] {
            const Json manifest = read_json(fs::path(dir) / "manifest.json");
            MatchingTableRow r;
            r.name = manifest.value("scene", fs::path(dir).filename().string());
            const auto truth = indexed_files(dir, "truth", ".json");
            const auto predicted = indexed_files(dir, "matches", ".csv");
            if (truth != predicted) {
                throw Error(ErrorCode::InvalidArgument, "mismatched frame sets in " + dir + ": " +
                                                            std::to_string(truth.size()) + " truth vs " +
                                                            std::to_string(predicted.size()) + " prediction files");
            }
            if (truth.empty()) throw Error(ErrorCode::InvalidArgument, "no frames to evaluate in " + dir);
            for (int f : truth) {
                RenderedFrame frame;
                frame.truth = truth_from_json(read_json(fs::path(dir) / indexed("truth", f, ".json")));
                const SpotDetection d = read_detections_csv(fs::path(dir) / indexed("detections", f, ".csv"));
                const MatchSet m = read_matches_csv(fs::path(dir) / indexed("matches", f, ".csv"));
                const TruthAssociation a = associate_truth(frame, centers_of(d));
                r.frames.push_back(evaluate_matching(m, a.captured_to_reference, a.annotated));
            }
            return r;
        });
        rows.push_back(std::move(row));
    }
    OutputDir out(o.out_dir);
    const Json table = matching_table_json(rows);
    const std::string text = matching_table_text(rows);
    stage("write", [&] {
        write_json(table, out("matching_report.json"));
        write_text(text, out("matching_report.txt"));
        write_manifest(out, "evaluate", {{"inputs", dirs}}, true);
    });
    std::cout << text;
    for (const auto& r : table.at("rows")) {
        if (r.contains("warning")) std::cerr << "warning: " << r.at("name").get<std::string>() << ": "
                                             << r.at("warning").get<std::string>() << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------
// Flags

enum Flag : unsigned {
    kScene = 1u << 0,
    kNoise = 1u << 1,
    kDetector = 1u << 2,
    kMatch = 1u << 3,
    kInput = 1u << 4,
    kFrame = 1u << 5,
    kSpectra = 1u << 6,
    kTrain = 1u << 7,
    kRecon = 1u << 8,
};

CLI::App* add_command(CLI::App& app, const std::string& name, const std::string& help, Options& o, unsigned flags) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "key=value file; command-line flags take precedence");
    sub->add_option("--out-dir", o.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "random seed")->capture_default_str();
    if (flags & kScene) {
        sub->add_option("--scene", o.scene, "plane | cylinder | tissue | target | heightfield")
            ->check(CLI::IsMember(scene_names()));
        sub->add_option("--heightfield", o.heightfield, "CSV (mm) or PGM height grid for --scene heightfield");
        sub->add_option("--spots", o.spots, "number of projected spots (max 171)")->capture_default_str();
        sub->add_option("--frames", o.frames, "number of frames")->capture_default_str();
    }
    if (flags & kNoise) {
        sub->add_option("--noise-sigma", o.noise_sigma, "pixel noise sigma (intensity)")->capture_default_str();
        sub->add_option("--dropout", o.dropout, "spot dropout fraction")->capture_default_str();
        sub->add_option("--spectral-noise", o.spectral_noise, "spectral noise, fraction of white peak")
            ->capture_default_str();
    }
    if (flags & kSpectra) sub->add_flag("--skip-spectra", o.skip_spectra, "shape-only output");
    if (flags & kDetector) {
        sub->add_option("--detector", o.detector, "fcn | baseline")
            ->check(CLI::IsMember({"fcn", "baseline"}))
            ->capture_default_str();
        sub->add_option("--model", o.model, "FCN weights (default: <data dir>/fcn_model.json)");
    }
    if (flags & kMatch) {
        sub->add_option("--threshold", o.threshold, "descriptor distance threshold: number | auto");
        sub->add_option("--epipolar-band", o.epipolar_band, "epipolar band half-width (px)");
        sub->add_option("--alpha", o.alpha, "neighbourhood radius factor");
        sub->add_option("--propagation-threshold", o.propagation_threshold, "distance bound during propagation");
        sub->add_option("--max-rounds", o.max_rounds, "propagation round cap");
    }
    if (flags & kRecon) sub->add_option("--residual-ceiling", o.residual_ceiling, "reprojection residual cap (px)");
    if (flags & kInput) {
        sub->add_option("--in-dir", o.in_dirs, "input run directory (default: --out-dir)")
            ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    }
    if (flags & kFrame) sub->add_option("--frame", o.frame, "process one frame index only");
    if (flags & kTrain) {
        sub->add_option("--base-images", o.base_images, "synthetic base images")->capture_default_str();
        sub->add_option("--augment", o.augmentations, "augmentations per base image")->capture_default_str();
        sub->add_option("--coarse-iters", o.coarse_iters, "end of the coarse learning-rate stage");
        sub->add_option("--fine-iters", o.fine_iters, "total iterations");
        sub->add_option("--base-dim", o.base_dim, "channels of the first layer");
    }
    return sub;
}

// Expands `--config FILE` into `--key=value` arguments placed right after the
// subcommand, so later command-line flags override them (last value wins).
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    std::string file;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) file = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) file = args[i].substr(9);
    }
    if (file.empty()) return args;
    std::ifstream in(file);
    if (!in) throw Error(ErrorCode::Io, "config: cannot read " + file);
    std::vector<std::string> extra;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto trim = [](std::string t) {
            const auto a = t.find_first_not_of(" \t\r");
            const auto b = t.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : t.substr(a, b - a + 1);
        };
        line = trim(line.substr(0, line.find_first_of("#;")));
        if (line.empty() || line.front() == '[') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw Error(ErrorCode::InvalidArgument, "config: " + file + ":" + std::to_string(number) + ": expected key=value");
        }
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        extra.push_back("--" + trim(line.substr(0, eq)) + "=" + value);
    }
    const auto sub = std::find_if(args.begin() + 1, args.end(), [](const std::string& a) { return a.empty() || a[0] != '-'; });
    if (sub == args.end()) return args;
    args.insert(sub + 1, extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Structured light and hyperspectral fusion toolkit", "slhsi"};
    app.require_subcommand(1);
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    Options o;

    auto* simulate = add_command(app, "simulate", "render frames, truth and calibration", o, kScene | kNoise | kSpectra);
    auto* train = add_command(app, "train", "train the FCN spot detector on synthetic data", o, kTrain);
    auto* detect = add_command(app, "detect", "detect spots in simulated frames", o, kDetector | kInput | kFrame);
    auto* match = add_command(app, "match", "match detections to the reference pattern", o, kMatch | kInput | kFrame);
    auto* recon = add_command(app, "reconstruct", "triangulate matched spots", o, kInput | kFrame | kRecon);
    auto* spectra = add_command(app, "spectra", "calibrate, map fibres and fit StO2", o, kInput | kFrame);
    auto* pipeline = add_command(app, "pipeline", "end-to-end run with PLY/CSV export", o,
                                 kScene | kNoise | kDetector | kMatch | kInput | kFrame | kSpectra | kRecon);
    pipeline->alias("hybrid");
    auto* evaluate = add_command(app, "evaluate", "matching sensitivity/precision report", o, kInput);

    std::vector<std::string> args;
    try {
        args = expand_config(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error [config]: " << e.what() << "\n";
        return 2;
    }
    std::reverse(args.begin(), args.end());
    args.pop_back();
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (o.spots < 1 || o.spots > kMaxSpots) {
            throw Error(ErrorCode::InvalidArgument,
                        "spots: must be in 1.." + std::to_string(kMaxSpots) + ", got " + std::to_string(o.spots));
        }
        if (*simulate) return cmd_simulate(o);
        if (*train) return cmd_train(o);
        if (*detect) return cmd_detect(o);
        if (*match) return cmd_match(o);
        if (*recon) return cmd_reconstruct(o);
        if (*spectra) return cmd_spectra(o);
        if (*pipeline) return cmd_pipeline(o);
        if (*evaluate) return cmd_evaluate(o);
    } catch (const StageFailure& e) {
        std::cerr << "error [" << e.stage << "]: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error [config]: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
