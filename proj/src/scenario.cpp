#include "slhsi/scenario.hpp"

#include <algorithm>
#include <cmath>

#include "slhsi/error.hpp"

namespace slhsi {

const std::vector<std::string>& scene_names() {
    static const std::vector<std::string> names{"plane", "cylinder", "tissue", "target", "heightfield"};
    return names;
}

Spectrum haemoglobin_reflectance(const ChromophoreBasis& basis, const std::vector<double>& grid, double sto2,
                                 double total, double offset) {
    const ChromophoreBasis b = basis.resampled(grid);
    double peak = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) peak = std::max({peak, b.oxy[i], b.deoxy[i]});
    Spectrum s;
    s.wavelengths = grid;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const double a = total * (sto2 * b.oxy[i] + (1.0 - sto2) * b.deoxy[i]) / peak + offset;
        s.values.push_back(std::pow(10.0, -a));
    }
    return s;
}

Scene make_scene(const std::string& name, std::uint64_t seed, const std::string& heightfield_path) {
    if (name == "plane") return random_scene(SceneClass::Plane, seed);
    if (name == "cylinder") return random_scene(SceneClass::Cylinder, seed);
    if (name == "tissue") {
        Scene scene = random_scene(SceneClass::Tissue, seed);
        const auto grid = wavelength_grid(450.0, 720.0, 1.0);
        scene.base_reflectance = haemoglobin_reflectance(default_chromophore_basis(), grid, 0.7);
        return scene;
    }
    if (name == "target") {
        Scene scene = cylinder_scene(100.0, 80.0);
        add_three_band_target(scene, -30.0, 30.0);
        return scene;
    }
    if (name == "heightfield") {
        if (heightfield_path.empty()) throw Error(ErrorCode::InvalidArgument, "heightfield scene needs a path");
        return heightfield_scene(heightfield_path);
    }
    throw Error(ErrorCode::InvalidArgument, "unknown scene '" + name + "'");
}

WavelengthCalibration calibrate_from_laser_frame(const SpectralFrame& laser,
                                                 const std::vector<double>& laser_wavelengths_nm) {
    if (laser.bands.empty()) throw Error(ErrorCode::EmptyBand, "laser frame has no bands");
    std::vector<double> profile(static_cast<std::size_t>(laser.image.height()), 0.0);
    for (int b = 0; b < static_cast<int>(laser.bands.size()); ++b) {
        const auto p = extract_fiber_spectrum(laser, b);
        for (std::size_t i = 0; i < p.size(); ++i) profile[i] += p[i];
    }
    const std::vector<double> rows = locate_peaks(profile, static_cast<int>(laser_wavelengths_nm.size()));
    std::vector<double> wl = laser_wavelengths_nm;
    std::sort(wl.begin(), wl.end());
    if (rows.size() != wl.size()) throw Error(ErrorCode::InvalidArgument, "laser peaks not all found");
    std::vector<LaserLine> lines;
    for (std::size_t i = 0; i < wl.size(); ++i) lines.push_back({wl[i], rows[i]});
    return calibrate_wavelength(lines);
}

SpectralInputs build_spectral_inputs(const SpectralFrame& hyperspectral, const SpectralFrame& white,
                                     const SpectralFrame& laser, const std::vector<double>& laser_wavelengths_nm,
                                     const SpectralFrame& encoding, const SpotPatternSpec& pattern) {
    SpectralInputs in;
    in.frame = hyperspectral;
    in.white = white;
    in.calibration = calibrate_from_laser_frame(laser, laser_wavelengths_nm);
    std::vector<double> distal;
    for (const auto& s : pattern.spots) distal.push_back(s.wavelength_nm);
    std::vector<double> proximal;
    for (int b = 0; b < static_cast<int>(encoding.bands.size()); ++b) {
        proximal.push_back(band_mean_wavelength(encoding, b, in.calibration));
    }
    in.fiber_map = map_fibers(distal, proximal);
    in.basis = default_chromophore_basis();
    in.ccd = default_ccd_sensitivity();
    return in;
}

SimulatedRun simulate_run(const ScenarioConfig& config) {
    if (config.spots < 1 || config.spots > kMaxSpots) {
        throw Error(ErrorCode::InvalidArgument,
                    "spots: must be in 1.." + std::to_string(kMaxSpots) + ", got " + std::to_string(config.spots));
    }
    if (config.frames < 1) throw Error(ErrorCode::InvalidArgument, "frames: must be >= 1");
    config.noise.validate();

    SimulatedRun run;
    run.config = config;
    run.bundle = default_bundle();
    run.pattern = generate_pattern(config.spots, config.seed);
    run.reference = generate_reference_image(run.pattern, run.bundle);

    std::vector<double> wavelengths;
    for (const auto& s : run.pattern.spots) wavelengths.push_back(s.wavelength_nm);
    const std::vector<int> permutation = fiber_permutation(run.pattern);
    const auto grid = run.spectrograph.calibration.grid(run.spectrograph.rows);
    std::vector<Spectrum> white_reference;
    if (config.spectral) {
        white_reference = default_white_reference(config.spots, run.spectrograph, config.seed + 17);
        run.laser_wavelengths_nm = {473.0, 532.0, 589.0, 633.0, 690.0};
        run.laser = synth_laser_frame(run.spectrograph, config.spots, run.laser_wavelengths_nm);
        run.encoding = synth_encoding_frame(run.spectrograph, wavelengths, permutation);
        run.white = synth_white_frame(run.spectrograph, white_reference);
    }

    for (int f = 0; f < config.frames; ++f) {
        const std::uint64_t frame_seed = config.seed * 1000003ULL + static_cast<std::uint64_t>(f);
        Scene scene = make_scene(config.scene, frame_seed, config.heightfield_path);
        RenderedFrame frame = render_frame(run.pattern, scene, run.bundle, config.noise, frame_seed);
        if (config.spectral) {
            assign_fiber_reflectance(scene, frame, grid);
            run.hyperspectral.push_back(synth_hyperspectral_frame(scene.fiber_reflectance, permutation,
                                                                  run.spectrograph, white_reference, config.noise,
                                                                  frame_seed + 1));
        }
        run.frames.push_back(std::move(frame));
        run.scenes.push_back(std::move(scene));
    }
    return run;
}

TruthAssociation associate_truth(const RenderedFrame& frame, const std::vector<Vec2>& detections,
                                 double tolerance_px) {
    std::vector<std::pair<int, Vec2>> labelled;
    for (const auto& t : frame.truth) {
        if (t.visible) labelled.emplace_back(t.spot_id, t.camera_center);
    }
    return {associate_detections(detections, labelled, tolerance_px), static_cast<int>(labelled.size())};
}

SpotDetection truth_detections(const RenderedFrame& frame, double color_radius) {
    SpotDetection out;
    for (const auto& t : frame.truth) {
        if (!t.visible) continue;
        Detection d;
        d.center = t.camera_center;
        d.score = 1.0;
        d.rgb = mean_disk_rgb(frame.image, t.camera_center, color_radius);
        out.push_back(d);
    }
    return out;
}

}  // namespace slhsi
