#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "slhsi/delaunay.hpp"
#include "slhsi/fcn.hpp"
#include "slhsi/geometry.hpp"
#include "slhsi/spectra.hpp"
#include "slhsi/spotdetect.hpp"
#include "slhsi/spotmatch.hpp"

namespace slhsi {

struct SurfacePoint {
    int spot_id = -1;          // reference / pattern index
    int captured_index = -1;
    Vec2 camera_pixel = Vec2::Zero();
    Vec3 point = Vec3::Zero();  // world mm
    double residual_px = 0.0;
};

struct ReconstructedSurface {
    std::vector<SurfacePoint> points;
    std::vector<TriangleIndices> mesh;  // indices into points, image-plane Delaunay
    int rejected_residual = 0;
    int rejected_geometry = 0;
    bool empty = true;
};

struct ReconstructOptions {
    double residual_ceiling_px = 2.0;
    bool build_mesh = true;
};

ReconstructedSurface reconstruct(const MatchSet& matches, const std::vector<Vec2>& captured_centers,
                                 const std::vector<ReferenceSpot>& reference, const CalibrationBundle& bundle,
                                 const ReconstructOptions& options = {});

/// Spectral products of one sensor band. Absent members mean "not available".
struct BandAttributes {
    std::optional<Spectrum> reflectance;
    std::optional<StO2Result> fit;
    std::optional<Vec3> rgb;
};

struct HybridPoint {
    SurfacePoint surface;
    bool mapped = false;
    std::optional<Spectrum> reflectance;
    std::optional<double> sto2;       // only for accepted fits
    std::optional<double> r_squared;  // whenever a fit ran
    std::optional<Vec3> rgb;
};

struct StageTiming {
    double detect_ms = 0.0;
    double match_ms = 0.0;
    double triangulate_ms = 0.0;
    double spectra_ms = 0.0;

    double total_ms() const { return detect_ms + match_ms + triangulate_ms + spectra_ms; }
};

struct HybridFrame {
    std::vector<HybridPoint> points;
    std::vector<TriangleIndices> mesh;
    int unmapped = 0;
    StageTiming timing;
};

/// Spot k receives the attributes of band fiber_map.spot_to_band[k].
HybridFrame attach_spectra(const ReconstructedSurface& surface, const FiberMap& fiber_map,
                           const std::vector<BandAttributes>& bands);

/// Shape-only frame.
HybridFrame without_spectra(const ReconstructedSurface& surface);

enum class ColorMode { Rgb, StO2 };

/// Piecewise-linear saturation colormap, stops at 0, 0.25, 0.5, 0.75, 1:
/// (0,0,0.5) (0,0.5,1) (0.5,1,0.5) (1,0.5,0) (0.5,0,0).
Vec3 sto2_colormap(double sto2);

/// ASCII PLY, per-vertex uchar colour, faces from the mesh. Points without the
/// requested attribute are grey.
void export_ply(const HybridFrame& frame, const std::filesystem::path& path, ColorMode mode = ColorMode::Rgb);

/// spot_id,x,y,z,sto2,r2,r,g,b; absent values are empty fields.
void export_csv(const HybridFrame& frame, const std::filesystem::path& path);

struct PointRecord {
    int spot_id = -1;
    Vec3 xyz = Vec3::Zero();
    std::optional<double> sto2;
    std::optional<double> r_squared;
    std::optional<Vec3> rgb;
};

std::vector<PointRecord> import_csv(const std::filesystem::path& path);
std::vector<PointRecord> to_records(const HybridFrame& frame);

/// Per-stage mean and sd over frames, with the reference figure in the header.
std::string timing_report(const std::vector<StageTiming>& frames);

// ---------------------------------------------------------------------------
// Per-frame pipeline

struct BaselineDetectorOptions {
    double sigma_small = 1.5;
    double sigma_large = 4.0;
    double threshold = 0.02;
    double nms_radius = 5.0;
};

struct DetectorChoice {
    const FcnModel* model = nullptr;  // baseline detector when null
    FcnDetectorOptions fcn;
    BaselineDetectorOptions baseline;
};

SpotDetection run_detector(const Image& image, const DetectorChoice& detector);

struct SpectralInputs {
    SpectralFrame frame;
    SpectralFrame white;
    WavelengthCalibration calibration;
    FiberMap fiber_map;
    ChromophoreBasis basis;
    SensorSensitivity ccd;
};

/// Band-wise reflectance, StO2 fit and RGB.
std::vector<BandAttributes> process_spectral_frame(const SpectralInputs& inputs);

struct FrameResult {
    SpotDetection detections;
    CapturedSpots captured;
    MatchSet matches;
    ReconstructedSurface surface;
    HybridFrame hybrid;
};

/// detect -> match -> triangulate -> spectra -> attach, timing each stage.
FrameResult run_frame(const Image& image, const ReferenceSpots& reference, const CalibrationBundle& bundle,
                      const DetectorChoice& detector, const MatchConfig& match_config,
                      const ReconstructOptions& reconstruct_options, const SpectralInputs* spectra);

}  // namespace slhsi
