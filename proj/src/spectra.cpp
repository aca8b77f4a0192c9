#include "slhsi/spectra.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

bool Spectrum::valid(std::size_t i) const { return i < values.size() && std::isfinite(values[i]); }

void Spectrum::validate() const {
    if (wavelengths.size() != values.size()) {
        throw Error(ErrorCode::InvalidArgument, "spectrum wavelength/value length mismatch");
    }
    for (std::size_t i = 1; i < wavelengths.size(); ++i) {
        if (!(wavelengths[i] > wavelengths[i - 1])) {
            throw Error(ErrorCode::InvalidArgument, "spectrum wavelengths must increase strictly");
        }
    }
}

double Spectrum::at(double wl) const {
    if (wavelengths.empty() || wl < wavelengths.front() || wl > wavelengths.back()) return kNaN;
    const auto it = std::lower_bound(wavelengths.begin(), wavelengths.end(), wl);
    const auto i = static_cast<std::size_t>(it - wavelengths.begin());
    if (wavelengths[i] == wl) return values[i];
    const double t = (wl - wavelengths[i - 1]) / (wavelengths[i] - wavelengths[i - 1]);
    return (1.0 - t) * values[i - 1] + t * values[i];
}

Spectrum Spectrum::resampled(const std::vector<double>& grid) const {
    Spectrum out;
    out.wavelengths = grid;
    out.values.reserve(grid.size());
    for (double wl : grid) out.values.push_back(at(wl));
    return out;
}

std::vector<double> wavelength_grid(double start_nm, double stop_nm, double step_nm) {
    std::vector<double> grid;
    const int n = static_cast<int>(std::floor((stop_nm - start_nm) / step_nm + 1e-9)) + 1;
    for (int i = 0; i < n; ++i) grid.push_back(start_nm + i * step_nm);
    return grid;
}

std::vector<BandRange> make_band_layout(int fibers, int band_width, int gap) {
    std::vector<BandRange> bands;
    for (int b = 0; b < fibers; ++b) {
        const int first = b * (band_width + gap) + gap;
        bands.push_back({first, first + band_width - 1});
    }
    return bands;
}

std::vector<double> WavelengthCalibration::grid(int rows) const {
    std::vector<double> g(rows);
    for (int r = 0; r < rows; ++r) g[r] = wavelength_at(r);
    if (slope < 0.0) std::reverse(g.begin(), g.end());
    return g;
}

std::vector<int> FiberMap::band_to_spot() const {
    std::vector<int> inv(spot_to_band.size(), -1);
    for (std::size_t s = 0; s < spot_to_band.size(); ++s) inv[spot_to_band[s]] = static_cast<int>(s);
    return inv;
}

bool FiberMap::is_bijection() const {
    std::vector<bool> seen(spot_to_band.size(), false);
    for (int b : spot_to_band) {
        if (b < 0 || b >= static_cast<int>(seen.size()) || seen[b]) return false;
        seen[b] = true;
    }
    return true;
}

namespace {

std::vector<int> argsort(const std::vector<double>& v) {
    std::vector<int> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    return idx;
}

void check_distinct(const std::vector<double>& v, const std::vector<int>& order, double tol, const char* which) {
    for (std::size_t i = 1; i < order.size(); ++i) {
        if (v[order[i]] - v[order[i - 1]] < tol) {
            throw Error(ErrorCode::AmbiguousFiberMapping,
                        std::string("ambiguous fiber mapping: duplicate ") + which + " wavelength");
        }
    }
}

}  // namespace

FiberMap map_fibers(const std::vector<double>& distal, const std::vector<double>& proximal, double tolerance_nm) {
    if (distal.size() != proximal.size()) {
        throw Error(ErrorCode::InvalidArgument, "distal and proximal wavelength lists differ in length");
    }
    const auto d = argsort(distal);
    const auto p = argsort(proximal);
    check_distinct(distal, d, tolerance_nm, "distal");
    check_distinct(proximal, p, tolerance_nm, "proximal");
    FiberMap map;
    map.spot_to_band.assign(distal.size(), -1);
    for (std::size_t rank = 0; rank < d.size(); ++rank) map.spot_to_band[d[rank]] = p[rank];
    return map;
}

std::vector<double> extract_fiber_spectrum(const SpectralFrame& frame, int band) {
    if (band < 0 || band >= static_cast<int>(frame.bands.size())) {
        throw Error(ErrorCode::EmptyBand, "fiber band " + std::to_string(band) + " not defined");
    }
    const BandRange r = frame.bands[band];
    if (r.width() <= 0 || r.first < 0 || r.last >= frame.image.width()) {
        throw Error(ErrorCode::EmptyBand, "fiber band " + std::to_string(band) + " is empty");
    }
    std::vector<double> out(frame.image.height());
    for (int row = 0; row < frame.image.height(); ++row) {
        double sum = 0.0;
        for (int col = r.first; col <= r.last; ++col) sum += frame.image.at(col, row);
        out[row] = sum / r.width();
    }
    return out;
}

double band_mean_wavelength(const SpectralFrame& frame, int band, const WavelengthCalibration& calibration) {
    const std::vector<double> profile = extract_fiber_spectrum(frame, band);
    double sw = 0.0;
    double swl = 0.0;
    for (std::size_t row = 0; row < profile.size(); ++row) {
        const double w = std::max(0.0, profile[row]);
        sw += w;
        swl += w * calibration.wavelength_at(static_cast<double>(row));
    }
    if (!(sw > 0.0)) throw Error(ErrorCode::EmptyBand, "band " + std::to_string(band) + " carries no signal");
    return swl / sw;
}

WavelengthCalibration calibrate_wavelength(const std::vector<LaserLine>& lines) {
    if (lines.size() < 2) throw Error(ErrorCode::InvalidArgument, "wavelength calibration needs >= 2 lines");
    const double n = static_cast<double>(lines.size());
    double mean_row = 0.0;
    double mean_wl = 0.0;
    for (const auto& l : lines) {
        mean_row += l.peak_row;
        mean_wl += l.wavelength_nm;
    }
    mean_row /= n;
    mean_wl /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    for (const auto& l : lines) {
        sxx += (l.peak_row - mean_row) * (l.peak_row - mean_row);
        sxy += (l.peak_row - mean_row) * (l.wavelength_nm - mean_wl);
    }
    if (sxx <= 0.0) throw Error(ErrorCode::InvalidArgument, "wavelength calibration rows are identical");
    WavelengthCalibration cal;
    cal.slope = sxy / sxx;
    cal.intercept = mean_wl - cal.slope * mean_row;
    double sq = 0.0;
    for (const auto& l : lines) {
        const double r = cal.wavelength_at(l.peak_row) - l.wavelength_nm;
        sq += r * r;
    }
    cal.residual_rms = std::sqrt(sq / n);
    return cal;
}

std::vector<double> locate_peaks(const std::vector<double>& profile, int count, int min_separation) {
    const int n = static_cast<int>(profile.size());
    std::vector<int> maxima;
    for (int i = 1; i + 1 < n; ++i) {
        if (profile[i] > profile[i - 1] && profile[i] >= profile[i + 1]) maxima.push_back(i);
    }
    std::stable_sort(maxima.begin(), maxima.end(), [&](int a, int b) { return profile[a] > profile[b]; });
    std::vector<int> chosen;
    for (int m : maxima) {
        if (static_cast<int>(chosen.size()) == count) break;
        bool clear = true;
        for (int c : chosen) clear = clear && std::abs(c - m) >= min_separation;
        if (clear) chosen.push_back(m);
    }
    std::vector<double> rows;
    for (int m : chosen) {
        const double a = profile[m - 1];
        const double b = profile[m];
        const double c = profile[m + 1];
        const double denom = a - 2.0 * b + c;
        rows.push_back(denom < 0.0 ? m + 0.5 * (a - c) / denom : m);
    }
    std::sort(rows.begin(), rows.end());
    return rows;
}

Spectrum to_spectrum(const std::vector<double>& raw, const WavelengthCalibration& calibration) {
    Spectrum s;
    const int rows = static_cast<int>(raw.size());
    s.wavelengths = calibration.grid(rows);
    s.values = raw;
    if (calibration.slope < 0.0) std::reverse(s.values.begin(), s.values.end());
    return s;
}

Spectrum normalize_reflectance(const Spectrum& raw, const Spectrum& white, double floor_fraction) {
    raw.validate();
    white.validate();
    if (raw.wavelengths != white.wavelengths) {
        throw Error(ErrorCode::InvalidArgument, "raw and white reference spectra are on different grids");
    }
    double peak = 0.0;
    for (std::size_t i = 0; i < white.size(); ++i) {
        if (white.valid(i)) peak = std::max(peak, white.values[i]);
    }
    if (!(peak > 0.0)) throw Error(ErrorCode::ReferenceBelowFloor, "white reference entirely below floor");
    const double floor = floor_fraction * peak;
    Spectrum out;
    out.wavelengths = raw.wavelengths;
    out.values.resize(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out.values[i] = (white.valid(i) && white.values[i] >= floor) ? raw.values[i] / white.values[i] : kNaN;
    }
    return out;
}

Spectrum absorbance(const Spectrum& reflectance) {
    Spectrum out;
    out.wavelengths = reflectance.wavelengths;
    out.values.resize(reflectance.size());
    for (std::size_t i = 0; i < reflectance.size(); ++i) {
        const double r = reflectance.values[i];
        out.values[i] = (std::isfinite(r) && r > 0.0) ? -std::log10(r) : kNaN;
    }
    return out;
}

ChromophoreBasis ChromophoreBasis::resampled(const std::vector<double>& grid) const {
    const Spectrum o{wavelengths, oxy};
    const Spectrum d{wavelengths, deoxy};
    ChromophoreBasis out;
    out.wavelengths = grid;
    out.oxy = o.resampled(grid).values;
    out.deoxy = d.resampled(grid).values;
    out.source = source;
    return out;
}

ChromophoreBasis load_chromophore_basis(const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw Error(ErrorCode::Io, "cannot open chromophore table " + csv_path.string());
    ChromophoreBasis basis;
    std::string line;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find("source:");
            if (pos != std::string::npos) basis.source = line.substr(pos + 7);
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream fields(line);
        double wl = 0.0;
        double o = 0.0;
        double d = 0.0;
        if (!(fields >> wl >> o >> d)) throw Error(ErrorCode::Io, "malformed row in " + csv_path.string());
        if (o < 0.0 || d < 0.0) throw Error(ErrorCode::InvalidArgument, "negative extinction coefficient");
        basis.wavelengths.push_back(wl);
        basis.oxy.push_back(o);
        basis.deoxy.push_back(d);
    }
    Spectrum{basis.wavelengths, basis.oxy}.validate();
    if (basis.wavelengths.size() < 2) throw Error(ErrorCode::Io, "chromophore table too short");
    return basis;
}

std::filesystem::path data_directory() {
    if (const char* env = std::getenv("SLHSI_DATA_DIR"); env != nullptr && *env != '\0') return env;
    return SLHSI_DEFAULT_DATA_DIR;
}

ChromophoreBasis default_chromophore_basis() {
    return load_chromophore_basis(data_directory() / "hemoglobin_extinction.csv");
}

namespace {

struct LinearFit {
    Eigen::VectorXd coef;
    Eigen::VectorXd residual;
};

LinearFit solve_least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& target) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < design.cols()) throw Error(ErrorCode::RankDeficientFit, "rank-deficient StO2 design matrix");
    LinearFit fit;
    fit.coef = qr.solve(target);
    fit.residual = target - design * fit.coef;
    return fit;
}

}  // namespace

StO2Result fit_sto2(const Spectrum& absorbance_spectrum, const ChromophoreBasis& basis) {
    absorbance_spectrum.validate();
    const ChromophoreBasis b = basis.resampled(absorbance_spectrum.wavelengths);
    std::vector<int> rows;
    for (std::size_t i = 0; i < absorbance_spectrum.size(); ++i) {
        if (absorbance_spectrum.valid(i) && std::isfinite(b.oxy[i]) && std::isfinite(b.deoxy[i])) {
            rows.push_back(static_cast<int>(i));
        }
    }
    const int n = static_cast<int>(rows.size());
    if (n < 10) throw Error(ErrorCode::InvalidArgument, "StO2 fit needs >= 10 valid wavelengths");

    // Shared scale for both chromophores keeps their ratio meaningful.
    double eps_scale = 0.0;
    double wl_mean = 0.0;
    for (int i : rows) {
        eps_scale = std::max({eps_scale, b.oxy[i], b.deoxy[i]});
        wl_mean += absorbance_spectrum.wavelengths[i];
    }
    wl_mean /= n;
    double wl_scale = 0.0;
    for (int i : rows) wl_scale = std::max(wl_scale, std::abs(absorbance_spectrum.wavelengths[i] - wl_mean));
    if (eps_scale <= 0.0) throw Error(ErrorCode::RankDeficientFit, "rank-deficient StO2 design matrix");
    if (wl_scale <= 0.0) wl_scale = 1.0;

    Eigen::MatrixXd full(n, 4);
    Eigen::VectorXd target(n);
    for (int k = 0; k < n; ++k) {
        const int i = rows[k];
        full(k, 0) = b.oxy[i] / eps_scale;
        full(k, 1) = b.deoxy[i] / eps_scale;
        full(k, 2) = 1.0;
        full(k, 3) = (absorbance_spectrum.wavelengths[i] - wl_mean) / wl_scale;
        target(k) = absorbance_spectrum.values[i];
    }
    // Rank is judged on the complete model before any clamping.
    LinearFit fit = solve_least_squares(full, target);
    std::array<bool, 2> active{true, true};
    StO2Result result;
    for (int pass = 0; pass < 2 && (fit.coef(0) < 0.0 || fit.coef(1) < 0.0); ++pass) {
        // Drop the more negative chromophore, refit, repeat once if needed.
        const int drop = active[0] && active[1] ? (fit.coef(0) < fit.coef(1) ? 0 : 1) : (active[0] ? 0 : 1);
        active[drop] = false;
        result.clamped = true;
        std::vector<int> cols;
        for (int c = 0; c < 2; ++c)
            if (active[c]) cols.push_back(c);
        cols.push_back(2);
        cols.push_back(3);
        Eigen::MatrixXd reduced(n, static_cast<int>(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c) reduced.col(static_cast<int>(c)) = full.col(cols[c]);
        const LinearFit sub = solve_least_squares(reduced, target);
        fit.coef = Eigen::Vector4d::Zero();
        for (std::size_t c = 0; c < cols.size(); ++c) fit.coef(cols[c]) = sub.coef(static_cast<int>(c));
        fit.residual = sub.residual;
        if (!active[0] && !active[1]) break;
    }

    result.c_oxy = fit.coef(0) / eps_scale;
    result.c_deoxy = fit.coef(1) / eps_scale;
    result.c_slope = fit.coef(3) / wl_scale;
    result.c_constant = fit.coef(2) - result.c_slope * wl_mean;
    result.samples = n;

    const double mean = target.mean();
    const double ss_tot = (target.array() - mean).square().sum();
    const double ss_res = fit.residual.squaredNorm();
    result.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);

    const double total = result.c_oxy + result.c_deoxy;
    result.sto2 = total > 0.0 ? result.c_oxy / total : 0.0;
    result.accepted = total > 0.0 && result.r_squared >= kStO2MinRSquared;
    return result;
}

SensorSensitivity default_ccd_sensitivity() {
    const auto grid = wavelength_grid(400.0, 720.0, 1.0);
    const std::array<std::pair<double, double>, 3> bumps{{{640.0, 60.0}, {545.0, 55.0}, {460.0, 50.0}}};
    SensorSensitivity s;
    for (int c = 0; c < 3; ++c) {
        const auto [center, half_width] = bumps[c];
        s.channels[c].wavelengths = grid;
        for (double wl : grid) {
            const double u = (wl - center) / half_width;
            s.channels[c].values.push_back(std::abs(u) <= 1.0 ? 0.5 * (1.0 + std::cos(std::numbers::pi * u)) : 0.0);
        }
    }
    return s;
}

Eigen::Vector3d rgb_from_spectrum(const Spectrum& reflectance, const SensorSensitivity& sensitivity) {
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
    for (int c = 0; c < 3; ++c) {
        const Spectrum& curve = sensitivity.channels[c];
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 1; i < reflectance.size(); ++i) {
            if (!reflectance.valid(i - 1) || !reflectance.valid(i)) continue;
            const double wl0 = reflectance.wavelengths[i - 1];
            const double wl1 = reflectance.wavelengths[i];
            double s0 = curve.at(wl0);
            double s1 = curve.at(wl1);
            if (!std::isfinite(s0)) s0 = 0.0;
            if (!std::isfinite(s1)) s1 = 0.0;
            const double h = wl1 - wl0;
            num += 0.5 * h * (reflectance.values[i - 1] * s0 + reflectance.values[i] * s1);
            den += 0.5 * h * (s0 + s1);
        }
        rgb(c) = den > 0.0 ? num / den : 0.0;
    }
    return rgb;
}

double spectral_error(const Spectrum& measured, const Spectrum& gold, double floor) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < measured.size(); ++i) {
        if (!measured.valid(i)) continue;
        const double g = gold.at(measured.wavelengths[i]);
        if (!std::isfinite(g)) continue;
        sum += std::abs(measured.values[i] - g) / std::max(g, floor);
        ++n;
    }
    return n > 0 ? sum / n : kNaN;
}

}  // namespace slhsi
