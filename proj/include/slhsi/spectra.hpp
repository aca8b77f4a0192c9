#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "slhsi/image.hpp"

namespace slhsi {

/// Sampled spectrum. Masked samples hold NaN.
struct Spectrum {
    std::vector<double> wavelengths;  // nm, strictly increasing
    std::vector<double> values;

    std::size_t size() const { return wavelengths.size(); }
    bool valid(std::size_t i) const;
    void validate() const;
    /// Linear interpolation; NaN outside the sampled range.
    double at(double wavelength_nm) const;
    Spectrum resampled(const std::vector<double>& grid) const;
};

std::vector<double> wavelength_grid(double start_nm, double stop_nm, double step_nm);

/// Column range [first, last] of one fibre on the spectrograph sensor.
struct BandRange {
    int first = 0;
    int last = -1;
    int width() const { return last - first + 1; }
};

/// Spectrograph sensor image: rows are the spectral axis, one column band per
/// proximal fibre position.
struct SpectralFrame {
    Image image;  // single channel
    std::vector<BandRange> bands;
};

/// Evenly spaced bands of `band_width` columns separated by `gap` dark columns.
std::vector<BandRange> make_band_layout(int fibers, int band_width, int gap);

struct WavelengthCalibration {
    double slope = 1.0;       // nm per row
    double intercept = 0.0;   // nm at row 0
    double residual_rms = 0.0;

    double wavelength_at(double row) const { return intercept + slope * row; }
    double row_at(double wavelength_nm) const { return (wavelength_nm - intercept) / slope; }
    std::vector<double> grid(int rows) const;
};

struct LaserLine {
    double wavelength_nm = 0.0;
    double peak_row = 0.0;
};

/// Distal spot index -> proximal sensor band index.
struct FiberMap {
    std::vector<int> spot_to_band;

    std::vector<int> band_to_spot() const;
    bool is_bijection() const;
};

FiberMap map_fibers(const std::vector<double>& distal_wavelengths, const std::vector<double>& proximal_wavelengths,
                    double tolerance_nm = 0.1);

/// Per-row mean across the band's columns.
std::vector<double> extract_fiber_spectrum(const SpectralFrame& frame, int band);

/// Intensity-weighted mean wavelength of one band.
double band_mean_wavelength(const SpectralFrame& frame, int band, const WavelengthCalibration& calibration);

WavelengthCalibration calibrate_wavelength(const std::vector<LaserLine>& lines);

/// Sub-row positions of the `count` strongest local maxima, sorted by row.
std::vector<double> locate_peaks(const std::vector<double>& profile, int count, int min_separation = 5);

Spectrum to_spectrum(const std::vector<double>& raw, const WavelengthCalibration& calibration);

/// Pointwise raw / white. Samples where white < floor_fraction * max(white) are masked.
Spectrum normalize_reflectance(const Spectrum& raw, const Spectrum& white_reference,
                               double floor_fraction = 1e-6);

/// A = -log10 R with nonpositive reflectance masked.
Spectrum absorbance(const Spectrum& reflectance);

struct ChromophoreBasis {
    std::vector<double> wavelengths;
    std::vector<double> oxy;    // HbO2 molar extinction, cm^-1 M^-1
    std::vector<double> deoxy;  // Hb
    std::string source;

    ChromophoreBasis resampled(const std::vector<double>& grid) const;
};

ChromophoreBasis load_chromophore_basis(const std::filesystem::path& csv_path);
/// Directory holding bundled data assets; SLHSI_DATA_DIR overrides the build-time default.
std::filesystem::path data_directory();
ChromophoreBasis default_chromophore_basis();

struct StO2Result {
    double sto2 = 0.0;
    double c_oxy = 0.0;
    double c_deoxy = 0.0;
    double c_constant = 0.0;
    double c_slope = 0.0;  // per nm
    double r_squared = 0.0;
    bool accepted = false;
    bool clamped = false;
    int samples = 0;
};

inline constexpr double kStO2MinRSquared = 0.8;

/// A(l) ~ c_oxy*eps_oxy(l) + c_deoxy*eps_deoxy(l) + c_constant + c_slope*l.
StO2Result fit_sto2(const Spectrum& absorbance, const ChromophoreBasis& basis);

/// Normalized spectral sensitivities of a colour sensor (R, G, B).
struct SensorSensitivity {
    std::array<Spectrum, 3> channels;
};

/// Raised-cosine channel curves with compact support: B 410-510 nm, G 490-600 nm, R 580-700 nm.
SensorSensitivity default_ccd_sensitivity();

Eigen::Vector3d rgb_from_spectrum(const Spectrum& reflectance, const SensorSensitivity& sensitivity);

/// Mean of |measured - gold| / max(gold, floor) over the measured grid.
double spectral_error(const Spectrum& measured, const Spectrum& gold, double floor = 0.01);

}  // namespace slhsi
