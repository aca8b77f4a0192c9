#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slhsi/hybrid.hpp"
#include "slhsi/simulator.hpp"
#include "slhsi/spectra.hpp"
#include "slhsi/spotmatch.hpp"

namespace slhsi {

/// Names accepted by make_scene.
const std::vector<std::string>& scene_names();

/// plane | cylinder | tissue: random instance of the class; target: cylinder
/// with three axial colour bands; heightfield: surface from `heightfield_path`.
Scene make_scene(const std::string& name, std::uint64_t seed, const std::string& heightfield_path = {});

/// Reflectance 10^-A of a haemoglobin absorber with the given saturation,
/// A = total * (s * eps_oxy + (1 - s) * eps_deoxy) / max(eps) + offset.
Spectrum haemoglobin_reflectance(const ChromophoreBasis& basis, const std::vector<double>& grid, double sto2,
                                 double total = 0.6, double offset = 0.05);

struct ScenarioConfig {
    std::string scene = "plane";
    std::string heightfield_path;
    int spots = kMaxSpots;
    std::uint64_t seed = 1;
    int frames = 1;
    NoiseModel noise;
    bool spectral = true;
};

struct SimulatedRun {
    ScenarioConfig config;
    CalibrationBundle bundle;
    SpotPatternSpec pattern;
    ReferenceImage reference;
    std::vector<RenderedFrame> frames;
    std::vector<Scene> scenes;  // fiber_reflectance filled per frame

    SpectrographModel spectrograph;
    std::vector<double> laser_wavelengths_nm;
    SpectralFrame laser;
    SpectralFrame encoding;
    SpectralFrame white;
    std::vector<SpectralFrame> hyperspectral;  // one per frame
};

SimulatedRun simulate_run(const ScenarioConfig& config);

/// Laser-line wavelength calibration, wavelength-sorting fibre map and default
/// chromophore/CCD models for one hyperspectral frame.
SpectralInputs build_spectral_inputs(const SpectralFrame& hyperspectral, const SpectralFrame& white,
                                     const SpectralFrame& laser, const std::vector<double>& laser_wavelengths_nm,
                                     const SpectralFrame& encoding, const SpotPatternSpec& pattern);

WavelengthCalibration calibrate_from_laser_frame(const SpectralFrame& laser,
                                                 const std::vector<double>& laser_wavelengths_nm);

struct TruthAssociation {
    std::map<int, int> captured_to_reference;  // detection index -> spot id
    int annotated = 0;                          // visible spots
};

TruthAssociation associate_truth(const RenderedFrame& frame, const std::vector<Vec2>& detections,
                                 double tolerance_px = 2.0);

/// Ideal detections: truth centers of visible spots, colour measured on the image.
SpotDetection truth_detections(const RenderedFrame& frame, double color_radius = 2.0);

}  // namespace slhsi
