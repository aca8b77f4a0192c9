#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <variant>
#include <vector>

#include "slhsi/geometry.hpp"
#include "slhsi/image.hpp"
#include "slhsi/pattern.hpp"
#include "slhsi/spectra.hpp"

namespace slhsi {

// ---------------------------------------------------------------------------
// Pattern

/// Jittered-grid pattern of `count` spots. Wavelengths follow a linear ramp over
/// the proximal linear array, shuffled by a seeded permutation (incoherent bundle).
SpotPatternSpec generate_pattern(int count, std::uint64_t seed, int projector_width = 640,
                                 int projector_height = 480);

/// Wavelength ramp across the proximal linear array.
std::vector<double> array_wavelengths(int count, double first_nm = 450.0, double last_nm = 720.0);

/// Spot index -> proximal band index implied by the pattern's wavelengths.
std::vector<int> fiber_permutation(const SpotPatternSpec& pattern);

inline constexpr double kReferencePlaneMm = 100.0;

/// Default endoscope geometry: 30 mm baseline, projector toed in by 12 degrees,
/// f = 450 px on 640x480 sensors. The reference image is the pattern as seen by
/// the camera on the plane z = kReferencePlaneMm.
CalibrationBundle default_bundle();

// ---------------------------------------------------------------------------
// Scene

struct PlaneSurface {
    Vec3 point{0.0, 0.0, 100.0};
    Vec3 normal{0.0, 0.0, -1.0};
};

struct CylinderSurface {
    Vec3 axis_point{0.0, 0.0, 140.0};
    Vec3 axis_direction{0.0, 1.0, 0.0};
    double radius = 40.0;
};

/// z = heights(x, y) over a regular grid in world x/y (mm), bilinear in between.
struct HeightfieldSurface {
    double x0 = -80.0;
    double y0 = -60.0;
    double spacing = 2.0;
    int nx = 0;
    int ny = 0;
    std::vector<double> heights;
    // Cached extent of `heights`; recomputed per query while NaN.
    double z_min = std::numeric_limits<double>::quiet_NaN();
    double z_max = std::numeric_limits<double>::quiet_NaN();

    std::optional<double> height(double x, double y) const;
    void update_bounds();
};

using Surface = std::variant<PlaneSurface, CylinderSurface, HeightfieldSurface>;

/// First intersection distance along the ray (> min_distance), if any.
std::optional<double> intersect(const Surface& surface, const Ray& ray, double min_distance = 1e-6);

/// Slab of uniform material between world y_min and y_max.
struct MaterialRegion {
    double y_min = 0.0;
    double y_max = 0.0;
    Spectrum reflectance;
    Vec3 albedo = Vec3::Ones();
};

struct Scene {
    Surface surface = PlaneSurface{};
    Vec3 base_albedo = Vec3::Ones();
    Spectrum base_reflectance;  // empty means flat 1.0
    std::vector<MaterialRegion> regions;
    /// True reflectance seen by each distal fibre, indexed by spot id.
    std::vector<Spectrum> fiber_reflectance;

    Vec3 albedo_at(const Vec3& point) const;
    Spectrum reflectance_at(const Vec3& point, const std::vector<double>& grid) const;
};

Scene plane_scene(double distance_mm = 100.0, double tilt_x_deg = 0.0, double tilt_y_deg = 0.0);
Scene cylinder_scene(double front_distance_mm = 100.0, double radius_mm = 40.0);
/// Smooth random bumps on a base plane, imitating a tissue surface.
Scene tissue_scene(std::uint64_t seed, double distance_mm = 100.0, double amplitude_mm = 8.0);
/// Heightfield grid read from CSV (rows of comma-separated heights in mm) or
/// PGM (grey level scaled to [0, max_height_mm]); relief rises toward the camera
/// from the base plane at `base_distance_mm`.
Scene heightfield_scene(const std::filesystem::path& path, double base_distance_mm = 100.0,
                        double spacing_mm = 2.0, double max_height_mm = 10.0);

/// Smooth coloured-target reflectance curves (red, green, blue dominated).
Spectrum red_reflectance(const std::vector<double>& grid);
Spectrum green_reflectance(const std::vector<double>& grid);
Spectrum blue_reflectance(const std::vector<double>& grid);

/// Splits the scene into three y-slabs (red, green, blue) across [y_min, y_max].
void add_three_band_target(Scene& scene, double y_min, double y_max);

// ---------------------------------------------------------------------------
// SL rendering

struct NoiseModel {
    double pixel_noise_sigma = 0.0;
    Eigen::Vector2d illumination_gradient = Eigen::Vector2d::Zero();  // relative change across the image
    double spot_dropout_fraction = 0.0;
    double spectral_noise_sigma = 0.0;  // fraction of the white-reference peak

    void validate() const;
};

struct RenderOptions {
    double spot_sigma_px = 2.0;
    double spot_gain = 0.9;
    double ambient = 0.04;
};

struct TruthSpot {
    int spot_id = 0;
    Vec2 camera_center = Vec2::Zero();
    Vec2 projector_pixel = Vec2::Zero();
    Vec3 point = Vec3::Zero();
    bool visible = false;
    bool dropped = false;
    bool occluded = false;
    bool hit_surface = false;
};

struct RenderedFrame {
    Image image;
    std::vector<TruthSpot> truth;
    std::vector<int> fiber_permutation;
    std::uint64_t seed = 0;

    int visible_count() const;
};

RenderedFrame render_frame(const SpotPatternSpec& pattern, const Scene& scene, const CalibrationBundle& bundle,
                           const NoiseModel& noise, std::uint64_t seed, const RenderOptions& options = {});

/// Fills scene.fiber_reflectance from the material under each spot's truth point.
void assign_fiber_reflectance(Scene& scene, const RenderedFrame& frame, const std::vector<double>& grid);

// ---------------------------------------------------------------------------
// Hyperspectral sensor

struct SpectrographModel {
    int rows = 271;
    int band_width = 4;
    int band_gap = 2;
    WavelengthCalibration calibration{1.0, 450.0, 0.0};
};

/// Lamp x fibre-transmission response per proximal band, on the sensor row grid.
std::vector<Spectrum> default_white_reference(int fibers, const SpectrographModel& model, std::uint64_t seed);

/// Sensor frame: band of proximal index b holds reflectance of the spot mapped to b
/// times white_reference[b], plus noise.
SpectralFrame synth_hyperspectral_frame(const std::vector<Spectrum>& fiber_reflectance,
                                        const std::vector<int>& spot_to_band, const SpectrographModel& model,
                                        const std::vector<Spectrum>& white_reference, const NoiseModel& noise,
                                        std::uint64_t seed);

SpectralFrame synth_white_frame(const SpectrographModel& model, const std::vector<Spectrum>& white_reference);

/// Structured-light illumination seen through the bundle: band spot_to_band[k]
/// holds a narrow line at the wavelength of spot k.
SpectralFrame synth_encoding_frame(const SpectrographModel& model, const std::vector<double>& spot_wavelengths_nm,
                                   const std::vector<int>& spot_to_band, double line_sigma_rows = 1.5);

/// Laser lines of known wavelength, Gaussian along the spectral axis.
SpectralFrame synth_laser_frame(const SpectrographModel& model, int fibers, const std::vector<double>& wavelengths_nm,
                                double line_sigma_rows = 1.5);

// ---------------------------------------------------------------------------
// Training data

struct TrainingSample {
    Image image;  // RGB, halved resolution
    Image mask;   // 1 channel, 1 = spot
};

struct TrainingSetOptions {
    int crop_size = 128;
    double mask_radius = 2.0;  // px at halved resolution
    double max_pixel_noise = 0.03;
};

Image draw_disk_mask(int width, int height, const std::vector<Vec2>& centers, double radius);

/// Renders `n_base` random scenes (halved), then `augmentations_per_image` random
/// resize/flip/rotation variants of each, all cropped to crop_size.
std::vector<TrainingSample> make_training_set(int n_base, int augmentations_per_image, std::uint64_t seed,
                                              const TrainingSetOptions& options = {});

/// A random scene of one of the three classes, used for training and evaluation.
enum class SceneClass { Plane, Cylinder, Tissue };
Scene random_scene(SceneClass kind, std::uint64_t seed);

}  // namespace slhsi
