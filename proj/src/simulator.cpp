#include "slhsi/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double uniform(std::mt19937_64& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

// ---------------------------------------------------------------------------
// Pattern

std::vector<double> array_wavelengths(int count, double first_nm, double last_nm) {
    std::vector<double> wl(count);
    for (int i = 0; i < count; ++i) {
        wl[i] = count == 1 ? 0.5 * (first_nm + last_nm) : first_nm + (last_nm - first_nm) * i / (count - 1);
    }
    return wl;
}

SpotPatternSpec generate_pattern(int count, std::uint64_t seed, int projector_width, int projector_height) {
    if (count < 1 || count > kMaxSpots) {
        throw Error(ErrorCode::InvalidArgument, "spot count must be in [1, 171], got " + std::to_string(count));
    }
    std::mt19937_64 rng(seed);
    SpotPatternSpec pattern;
    pattern.projector_width = projector_width;
    pattern.projector_height = projector_height;

    const double aspect = static_cast<double>(projector_width) / projector_height;
    const int cols = static_cast<int>(std::ceil(std::sqrt(count * aspect)));
    const int rows = (count + cols - 1) / cols;
    const double pitch = std::min(0.8 * projector_width / cols, 0.8 * projector_height / rows);
    const Vec2 center(0.5 * (projector_width - 1), 0.5 * (projector_height - 1));
    const double jitter = count == 1 ? 0.0 : 0.25 * pitch;

    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const auto ramp = array_wavelengths(count);

    for (int k = 0; k < count; ++k) {
        const int r = k / cols;
        const int c = k % cols;
        const int in_row = std::min(cols, count - r * cols);
        PatternSpot spot;
        spot.projector_pixel = center + Vec2((c - 0.5 * (in_row - 1)) * pitch, (r - 0.5 * (rows - 1)) * pitch);
        spot.projector_pixel += Vec2(uniform(rng, -jitter, jitter), uniform(rng, -jitter, jitter));
        spot.wavelength_nm = ramp[order[k]];
        spot.rgb = wavelength_to_rgb(spot.wavelength_nm);
        pattern.spots.push_back(spot);
    }
    pattern.validate();
    return pattern;
}

std::vector<int> fiber_permutation(const SpotPatternSpec& pattern) {
    const int n = static_cast<int>(pattern.spots.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return pattern.spots[a].wavelength_nm < pattern.spots[b].wavelength_nm; });
    std::vector<int> spot_to_band(n);
    for (int rank = 0; rank < n; ++rank) spot_to_band[order[rank]] = rank;
    return spot_to_band;
}

CalibrationBundle default_bundle() {
    CalibrationBundle bundle;
    const Intrinsics k{450.0, 450.0, 319.5, 239.5, 640, 480};
    bundle.camera.intrinsics = k;
    bundle.projector.intrinsics = k;
    const double baseline = 30.0;
    const double toe_in = 12.0 * kDeg;
    const Vec3 center(baseline, 0.0, 0.0);
    bundle.projector.pose = Pose::look_at(center, center + Vec3(-std::sin(toe_in), 0.0, std::cos(toe_in)));
    bundle.reference_plane_homography = plane_induced_homography(bundle, Vec3::UnitZ(), kReferencePlaneMm);
    return bundle;
}

// ---------------------------------------------------------------------------
// Surfaces

std::optional<double> HeightfieldSurface::height(double x, double y) const {
    const double u = (x - x0) / spacing;
    const double v = (y - y0) / spacing;
    if (nx < 2 || ny < 2 || u < 0.0 || v < 0.0 || u > nx - 1 || v > ny - 1) return std::nullopt;
    const int i = std::min(static_cast<int>(u), nx - 2);
    const int j = std::min(static_cast<int>(v), ny - 2);
    const double fu = u - i;
    const double fv = v - j;
    const auto h = [&](int a, int b) { return heights[static_cast<std::size_t>(b) * nx + a]; };
    return (1 - fv) * ((1 - fu) * h(i, j) + fu * h(i + 1, j)) + fv * ((1 - fu) * h(i, j + 1) + fu * h(i + 1, j + 1));
}

namespace {

std::optional<double> intersect_plane(const PlaneSurface& s, const Ray& ray, double min_distance) {
    const double denom = s.normal.dot(ray.direction);
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double t = s.normal.dot(s.point - ray.origin) / denom;
    if (t <= min_distance) return std::nullopt;
    return t;
}

std::optional<double> intersect_cylinder(const CylinderSurface& s, const Ray& ray, double min_distance) {
    const Vec3 u = s.axis_direction.normalized();
    const Vec3 w = ray.origin - s.axis_point;
    const Vec3 dp = ray.direction - ray.direction.dot(u) * u;
    const Vec3 wp = w - w.dot(u) * u;
    const double a = dp.squaredNorm();
    const double b = 2.0 * dp.dot(wp);
    const double c = wp.squaredNorm() - s.radius * s.radius;
    if (a < 1e-15) return std::nullopt;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / (2.0 * a);
    const double t1 = (-b + sq) / (2.0 * a);
    if (t0 > min_distance) return t0;
    if (t1 > min_distance) return t1;
    return std::nullopt;
}

}  // namespace

void HeightfieldSurface::update_bounds() {
    if (heights.empty()) return;
    const auto [a, b] = std::minmax_element(heights.begin(), heights.end());
    z_min = *a;
    z_max = *b;
}

namespace {

std::optional<double> intersect_heightfield(const HeightfieldSurface& s, const Ray& ray, double min_distance) {
    if (s.heights.empty() || ray.direction.z() <= 1e-9) return std::nullopt;
    double lo = s.z_min;
    double hi = s.z_max;
    if (std::isnan(lo) || std::isnan(hi)) {
        const auto [a, b] = std::minmax_element(s.heights.begin(), s.heights.end());
        lo = *a;
        hi = *b;
    }
    double t_begin = std::max(min_distance, (lo - 1e-6 - ray.origin.z()) / ray.direction.z());
    const double t_end = (hi + 1e-6 - ray.origin.z()) / ray.direction.z();
    if (t_end <= t_begin) return std::nullopt;
    const auto f = [&](double t) -> std::optional<double> {
        const Vec3 p = ray.point_at(t);
        const auto h = s.height(p.x(), p.y());
        if (!h) return std::nullopt;
        return p.z() - *h;
    };
    const double step = 0.25 * s.spacing;
    double t_prev = t_begin;
    auto f_prev = f(t_prev);
    for (double t = t_begin + step; t_prev < t_end; t += step) {
        const double tc = std::min(t, t_end);
        const auto fc = f(tc);
        if (f_prev && fc && *f_prev < 0.0 && *fc >= 0.0) {
            double a = t_prev;
            double b = tc;
            for (int it = 0; it < 60; ++it) {
                const double m = 0.5 * (a + b);
                const auto fm = f(m);
                if (fm && *fm < 0.0) {
                    a = m;
                } else {
                    b = m;
                }
            }
            return 0.5 * (a + b);
        }
        t_prev = tc;
        f_prev = fc;
    }
    return std::nullopt;
}

}  // namespace

std::optional<double> intersect(const Surface& surface, const Ray& ray, double min_distance) {
    return std::visit(
        [&](const auto& s) -> std::optional<double> {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, PlaneSurface>) return intersect_plane(s, ray, min_distance);
            if constexpr (std::is_same_v<T, CylinderSurface>) return intersect_cylinder(s, ray, min_distance);
            if constexpr (std::is_same_v<T, HeightfieldSurface>) return intersect_heightfield(s, ray, min_distance);
        },
        surface);
}

// ---------------------------------------------------------------------------
// Scenes

Vec3 Scene::albedo_at(const Vec3& point) const {
    for (const auto& r : regions) {
        if (point.y() >= r.y_min && point.y() < r.y_max) return r.albedo;
    }
    return base_albedo;
}

Spectrum Scene::reflectance_at(const Vec3& point, const std::vector<double>& grid) const {
    for (const auto& r : regions) {
        if (point.y() >= r.y_min && point.y() < r.y_max) return r.reflectance.resampled(grid);
    }
    if (!base_reflectance.wavelengths.empty()) return base_reflectance.resampled(grid);
    return Spectrum{grid, std::vector<double>(grid.size(), 1.0)};
}

Scene plane_scene(double distance_mm, double tilt_x_deg, double tilt_y_deg) {
    Scene scene;
    const Mat3 r = (Eigen::AngleAxisd(tilt_y_deg * kDeg, Vec3::UnitY()) *
                    Eigen::AngleAxisd(tilt_x_deg * kDeg, Vec3::UnitX()))
                       .toRotationMatrix();
    scene.surface = PlaneSurface{Vec3(0.0, 0.0, distance_mm), r * Vec3(0.0, 0.0, -1.0)};
    return scene;
}

Scene cylinder_scene(double front_distance_mm, double radius_mm) {
    Scene scene;
    scene.surface = CylinderSurface{Vec3(0.0, 0.0, front_distance_mm + radius_mm), Vec3::UnitY(), radius_mm};
    return scene;
}

Scene tissue_scene(std::uint64_t seed, double distance_mm, double amplitude_mm) {
    std::mt19937_64 rng(seed);
    HeightfieldSurface hf;
    hf.x0 = -100.0;
    hf.y0 = -80.0;
    hf.spacing = 2.0;
    hf.nx = 101;
    hf.ny = 81;
    struct Bump {
        Vec2 c;
        double a;
        double s;
    };
    std::vector<Bump> bumps;
    for (int k = 0; k < 6; ++k) {
        bumps.push_back({Vec2(uniform(rng, -50, 50), uniform(rng, -40, 40)), uniform(rng, -amplitude_mm, amplitude_mm),
                         uniform(rng, 15, 35)});
    }
    hf.heights.resize(static_cast<std::size_t>(hf.nx) * hf.ny);
    for (int j = 0; j < hf.ny; ++j) {
        for (int i = 0; i < hf.nx; ++i) {
            const Vec2 p(hf.x0 + i * hf.spacing, hf.y0 + j * hf.spacing);
            double z = distance_mm;
            for (const auto& b : bumps) z += b.a * std::exp(-0.5 * (p - b.c).squaredNorm() / (b.s * b.s));
            hf.heights[static_cast<std::size_t>(j) * hf.nx + i] = z;
        }
    }
    Scene scene;
    hf.update_bounds();
    scene.surface = std::move(hf);
    scene.base_albedo = Vec3(1.0, 0.8, 0.74);
    return scene;
}

Scene heightfield_scene(const std::filesystem::path& path, double base_distance_mm, double spacing_mm,
                        double max_height_mm) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open heightfield " + path.string());
    HeightfieldSurface hf;
    hf.spacing = spacing_mm;
    if (path.extension() == ".pgm") {
        std::string magic;
        int w = 0;
        int h = 0;
        int maxval = 0;
        in >> magic;
        const auto skip_comments = [&] {
            in >> std::ws;
            while (in.peek() == '#') {
                std::string dummy;
                std::getline(in, dummy);
                in >> std::ws;
            }
        };
        skip_comments();
        in >> w;
        skip_comments();
        in >> h;
        skip_comments();
        in >> maxval;
        in.get();
        if ((magic != "P2" && magic != "P5") || w < 2 || h < 2 || maxval <= 0 || maxval > 255) {
            throw Error(ErrorCode::Io, "unsupported PGM heightfield " + path.string());
        }
        hf.nx = w;
        hf.ny = h;
        for (int k = 0; k < w * h; ++k) {
            int v = 0;
            if (magic == "P5") {
                v = in.get();
            } else {
                in >> v;
            }
            if (!in) throw Error(ErrorCode::Io, "truncated PGM heightfield " + path.string());
            hf.heights.push_back(max_height_mm * v / maxval);
        }
    } else {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::replace(line.begin(), line.end(), ',', ' ');
            std::istringstream row(line);
            std::vector<double> values;
            double v = 0.0;
            while (row >> v) values.push_back(v);
            if (hf.nx == 0) hf.nx = static_cast<int>(values.size());
            if (static_cast<int>(values.size()) != hf.nx) {
                throw Error(ErrorCode::Io, "ragged heightfield CSV " + path.string());
            }
            hf.heights.insert(hf.heights.end(), values.begin(), values.end());
            ++hf.ny;
        }
        if (hf.nx < 2 || hf.ny < 2) throw Error(ErrorCode::Io, "heightfield CSV needs at least 2x2 samples");
    }
    // Heights are relief toward the camera: larger values sit closer.
    for (double& z : hf.heights) z = base_distance_mm - z;
    hf.x0 = -0.5 * (hf.nx - 1) * spacing_mm;
    hf.y0 = -0.5 * (hf.ny - 1) * spacing_mm;
    Scene scene;
    hf.update_bounds();
    scene.surface = std::move(hf);
    return scene;
}

namespace {

Spectrum make_curve(const std::vector<double>& grid, auto&& f) {
    Spectrum s;
    s.wavelengths = grid;
    for (double wl : grid) s.values.push_back(f(wl));
    return s;
}

double gauss(double x, double mu, double sigma) { return std::exp(-0.5 * (x - mu) * (x - mu) / (sigma * sigma)); }

}  // namespace

Spectrum red_reflectance(const std::vector<double>& grid) {
    return make_curve(grid, [](double wl) { return 0.05 + 0.65 / (1.0 + std::exp(-(wl - 600.0) / 12.0)); });
}

Spectrum green_reflectance(const std::vector<double>& grid) {
    return make_curve(grid, [](double wl) { return 0.06 + 0.5 * gauss(wl, 535.0, 32.0); });
}

Spectrum blue_reflectance(const std::vector<double>& grid) {
    return make_curve(grid, [](double wl) { return 0.06 + 0.55 * gauss(wl, 460.0, 35.0); });
}

void add_three_band_target(Scene& scene, double y_min, double y_max) {
    const auto grid = wavelength_grid(400.0, 750.0, 1.0);
    const auto sensor = default_ccd_sensitivity();
    const std::array<Spectrum, 3> curves{red_reflectance(grid), green_reflectance(grid), blue_reflectance(grid)};
    const double h = (y_max - y_min) / 3.0;
    scene.regions.clear();
    for (int k = 0; k < 3; ++k) {
        MaterialRegion r;
        r.y_min = y_min + k * h;
        r.y_max = y_min + (k + 1) * h;
        r.reflectance = curves[k];
        r.albedo = rgb_from_spectrum(curves[k], sensor);
        scene.regions.push_back(r);
    }
}

// ---------------------------------------------------------------------------
// SL rendering

void NoiseModel::validate() const {
    if (pixel_noise_sigma < 0.0 || spectral_noise_sigma < 0.0 || spot_dropout_fraction < 0.0 ||
        spot_dropout_fraction > 1.0) {
        throw Error(ErrorCode::InvalidArgument, "noise parameters must be non-negative, dropout <= 1");
    }
}

int RenderedFrame::visible_count() const {
    return static_cast<int>(std::count_if(truth.begin(), truth.end(), [](const TruthSpot& t) { return t.visible; }));
}

RenderedFrame render_frame(const SpotPatternSpec& pattern, const Scene& scene, const CalibrationBundle& bundle,
                           const NoiseModel& noise, std::uint64_t seed, const RenderOptions& options) {
    noise.validate();
    std::mt19937_64 rng(seed);
    const Intrinsics& cam = bundle.camera.intrinsics;
    const Vec3 cam_center = bundle.camera.pose.center();

    RenderedFrame frame;
    frame.seed = seed;
    frame.fiber_permutation = fiber_permutation(pattern);
    std::bernoulli_distribution drop(noise.spot_dropout_fraction);

    for (int k = 0; k < static_cast<int>(pattern.spots.size()); ++k) {
        TruthSpot t;
        t.spot_id = k;
        t.projector_pixel = pattern.spots[k].projector_pixel;
        t.dropped = drop(rng);
        const Ray pr = backproject(bundle.projector.intrinsics, bundle.projector.pose, t.projector_pixel);
        if (const auto hit = intersect(scene.surface, pr)) {
            t.hit_surface = true;
            t.point = pr.point_at(*hit);
            const Vec3 pc = bundle.camera.pose.rotation * t.point + bundle.camera.pose.translation;
            if (pc.z() > 0.0) {
                t.camera_center = project(cam, bundle.camera.pose, t.point);
                const Ray cr{cam_center, (t.point - cam_center).normalized()};
                const double dist = (t.point - cam_center).norm();
                const auto first = intersect(scene.surface, cr);
                t.occluded = first && *first < dist - 1e-3;
                const bool inside = t.camera_center.x() >= 0.0 && t.camera_center.y() >= 0.0 &&
                                    t.camera_center.x() <= cam.image_width - 1.0 &&
                                    t.camera_center.y() <= cam.image_height - 1.0;
                t.visible = inside && !t.occluded && !t.dropped;
            }
        }
        frame.truth.push_back(t);
    }

    const int w = cam.image_width;
    const int h = cam.image_height;
    Image img(w, h, 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const Ray r = backproject(cam, bundle.camera.pose, Vec2(x, y));
            if (const auto hit = intersect(scene.surface, r)) {
                const Vec3 a = scene.albedo_at(r.point_at(*hit));
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(options.ambient * a(c));
            }
        }
    }

    const double sigma = options.spot_sigma_px;
    const int radius = static_cast<int>(std::ceil(4.5 * sigma));
    for (int k = 0; k < static_cast<int>(frame.truth.size()); ++k) {
        const TruthSpot& t = frame.truth[k];
        if (!t.visible) continue;
        const Vec3 amp = options.spot_gain * pattern.spots[k].rgb.cwiseProduct(scene.albedo_at(t.point));
        const int x0 = static_cast<int>(std::floor(t.camera_center.x()));
        const int y0 = static_cast<int>(std::floor(t.camera_center.y()));
        for (int y = std::max(0, y0 - radius); y <= std::min(h - 1, y0 + radius + 1); ++y) {
            for (int x = std::max(0, x0 - radius); x <= std::min(w - 1, x0 + radius + 1); ++x) {
                const double g = std::exp(-0.5 * (Vec2(x, y) - t.camera_center).squaredNorm() / (sigma * sigma));
                for (int c = 0; c < 3; ++c) img.at(x, y, c) += static_cast<float>(g * amp(c));
            }
        }
    }

    std::normal_distribution<double> gaussian(0.0, 1.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double illum =
                std::max(0.0, 1.0 + noise.illumination_gradient.x() * (x - 0.5 * (w - 1)) / w +
                                  noise.illumination_gradient.y() * (y - 0.5 * (h - 1)) / h);
            for (int c = 0; c < 3; ++c) {
                double v = img.at(x, y, c) * illum;
                if (noise.pixel_noise_sigma > 0.0) v += noise.pixel_noise_sigma * gaussian(rng);
                img.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    frame.image = std::move(img);
    return frame;
}

void assign_fiber_reflectance(Scene& scene, const RenderedFrame& frame, const std::vector<double>& grid) {
    scene.fiber_reflectance.clear();
    for (const auto& t : frame.truth) {
        scene.fiber_reflectance.push_back(t.hit_surface ? scene.reflectance_at(t.point, grid)
                                                        : Spectrum{grid, std::vector<double>(grid.size(), 0.0)});
    }
}

// ---------------------------------------------------------------------------
// Hyperspectral sensor

std::vector<Spectrum> default_white_reference(int fibers, const SpectrographModel& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto grid = model.calibration.grid(model.rows);
    std::vector<Spectrum> out;
    for (int b = 0; b < fibers; ++b) {
        const double transmission = uniform(rng, 0.6, 1.0);
        Spectrum s;
        s.wavelengths = grid;
        for (double wl : grid) {
            const double lamp = 0.6 + 0.4 * gauss(wl, 560.0, 120.0);
            const double response = 0.3 + 0.7 / (1.0 + std::exp(-(wl - 470.0) / 20.0));
            s.values.push_back(3000.0 * transmission * lamp * response);
        }
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

SpectralFrame blank_spectral_frame(const SpectrographModel& model, int fibers) {
    SpectralFrame frame;
    frame.bands = make_band_layout(fibers, model.band_width, model.band_gap);
    const int width = fibers == 0 ? model.band_gap : frame.bands.back().last + 1 + model.band_gap;
    frame.image = Image(width, model.rows, 1);
    return frame;
}

}  // namespace

SpectralFrame synth_hyperspectral_frame(const std::vector<Spectrum>& fiber_reflectance,
                                        const std::vector<int>& spot_to_band, const SpectrographModel& model,
                                        const std::vector<Spectrum>& white_reference, const NoiseModel& noise,
                                        std::uint64_t seed) {
    noise.validate();
    const int fibers = static_cast<int>(spot_to_band.size());
    if (fiber_reflectance.size() != spot_to_band.size() || white_reference.size() != spot_to_band.size()) {
        throw Error(ErrorCode::InvalidArgument, "hyperspectral inputs disagree on fibre count");
    }
    SpectralFrame frame = blank_spectral_frame(model, fibers);
    double peak = 0.0;
    for (const auto& w : white_reference)
        for (double v : w.values) peak = std::max(peak, v);

    for (int spot = 0; spot < fibers; ++spot) {
        const int band = spot_to_band[spot];
        const BandRange r = frame.bands[band];
        for (int row = 0; row < model.rows; ++row) {
            const double wl = model.calibration.wavelength_at(row);
            double refl = fiber_reflectance[spot].at(wl);
            if (!std::isfinite(refl)) refl = 0.0;
            double white = white_reference[band].at(wl);
            if (!std::isfinite(white)) white = 0.0;
            for (int col = r.first; col <= r.last; ++col) frame.image.at(col, row) = static_cast<float>(refl * white);
        }
    }
    if (noise.spectral_noise_sigma > 0.0) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gaussian(0.0, noise.spectral_noise_sigma * peak);
        for (float& v : frame.image.data()) v = static_cast<float>(v + gaussian(rng));
    }
    return frame;
}

SpectralFrame synth_white_frame(const SpectrographModel& model, const std::vector<Spectrum>& white_reference) {
    const int fibers = static_cast<int>(white_reference.size());
    SpectralFrame frame = blank_spectral_frame(model, fibers);
    for (int band = 0; band < fibers; ++band) {
        const BandRange r = frame.bands[band];
        for (int row = 0; row < model.rows; ++row) {
            double white = white_reference[band].at(model.calibration.wavelength_at(row));
            if (!std::isfinite(white)) white = 0.0;
            for (int col = r.first; col <= r.last; ++col)
                frame.image.at(col, row) = static_cast<float>(1.0 * white);
        }
    }
    return frame;
}

SpectralFrame synth_encoding_frame(const SpectrographModel& model, const std::vector<double>& spot_wavelengths_nm,
                                   const std::vector<int>& spot_to_band, double line_sigma_rows) {
    if (spot_wavelengths_nm.size() != spot_to_band.size()) {
        throw Error(ErrorCode::InvalidArgument, "encoding frame inputs disagree on fibre count");
    }
    SpectralFrame frame = blank_spectral_frame(model, static_cast<int>(spot_to_band.size()));
    for (std::size_t k = 0; k < spot_to_band.size(); ++k) {
        const BandRange r = frame.bands.at(static_cast<std::size_t>(spot_to_band[k]));
        const double center = model.calibration.row_at(spot_wavelengths_nm[k]);
        for (int row = 0; row < model.rows; ++row) {
            const float v = static_cast<float>(1000.0 * gauss(row, center, line_sigma_rows));
            for (int col = r.first; col <= r.last; ++col) frame.image.at(col, row) = v;
        }
    }
    return frame;
}

SpectralFrame synth_laser_frame(const SpectrographModel& model, int fibers, const std::vector<double>& wavelengths_nm,
                                double line_sigma_rows) {
    SpectralFrame frame = blank_spectral_frame(model, fibers);
    for (int row = 0; row < model.rows; ++row) {
        double v = 0.0;
        for (double wl : wavelengths_nm) v += 1000.0 * gauss(row, model.calibration.row_at(wl), line_sigma_rows);
        for (const auto& r : frame.bands)
            for (int col = r.first; col <= r.last; ++col) frame.image.at(col, row) = static_cast<float>(v);
    }
    return frame;
}

// ---------------------------------------------------------------------------
// Training data

Image draw_disk_mask(int width, int height, const std::vector<Vec2>& centers, double radius) {
    Image mask(width, height, 1);
    const int r = static_cast<int>(std::ceil(radius));
    for (const auto& c : centers) {
        const int cx = static_cast<int>(std::lround(c.x()));
        const int cy = static_cast<int>(std::lround(c.y()));
        for (int y = std::max(0, cy - r - 1); y <= std::min(height - 1, cy + r + 1); ++y)
            for (int x = std::max(0, cx - r - 1); x <= std::min(width - 1, cx + r + 1); ++x)
                if ((Vec2(x, y) - c).squaredNorm() <= radius * radius) mask.at(x, y) = 1.0f;
    }
    return mask;
}

Scene random_scene(SceneClass kind, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    switch (kind) {
        case SceneClass::Plane:
            return plane_scene(uniform(rng, 88.0, 112.0), uniform(rng, -15.0, 15.0), uniform(rng, -15.0, 15.0));
        case SceneClass::Cylinder:
            return cylinder_scene(uniform(rng, 90.0, 105.0), uniform(rng, 30.0, 60.0));
        case SceneClass::Tissue:
            return tissue_scene(rng(), uniform(rng, 92.0, 108.0), uniform(rng, 4.0, 9.0));
    }
    return plane_scene();
}

namespace {

TrainingSample random_crop(const Image& image, const Image& mask, int size, std::mt19937_64& rng) {
    const int max_x = image.width() - size;
    const int max_y = image.height() - size;
    if (max_x < 0 || max_y < 0) throw Error(ErrorCode::InvalidArgument, "training crop larger than image");
    // Keep to the central region so rotated corners rarely enter the crop.
    const int x0 = std::uniform_int_distribution<int>(max_x / 4, max_x - max_x / 4)(rng);
    const int y0 = std::uniform_int_distribution<int>(max_y / 4, max_y - max_y / 4)(rng);
    return {crop(image, x0, y0, size, size), crop(mask, x0, y0, size, size)};
}

}  // namespace

std::vector<TrainingSample> make_training_set(int n_base, int augmentations_per_image, std::uint64_t seed,
                                              const TrainingSetOptions& options) {
    if (n_base < 1) throw Error(ErrorCode::InvalidArgument, "training set needs at least one base image");
    std::mt19937_64 rng(seed);
    const CalibrationBundle bundle = default_bundle();
    std::vector<TrainingSample> out;
    for (int i = 0; i < n_base; ++i) {
        const auto kind = static_cast<SceneClass>(i % 3);
        Scene scene = random_scene(kind, rng());
        if (uniform(rng, 0.0, 1.0) < 0.3) {
            add_three_band_target(scene, uniform(rng, -40.0, -10.0), uniform(rng, 10.0, 40.0));
        } else {
            scene.base_albedo = Vec3(uniform(rng, 0.7, 1.0), uniform(rng, 0.6, 1.0), uniform(rng, 0.6, 1.0));
        }
        const SpotPatternSpec pattern = generate_pattern(kMaxSpots, rng());
        NoiseModel noise;
        noise.pixel_noise_sigma = uniform(rng, 0.0, options.max_pixel_noise);
        noise.illumination_gradient = Eigen::Vector2d(uniform(rng, -0.4, 0.4), uniform(rng, -0.4, 0.4));
        noise.spot_dropout_fraction = uniform(rng, 0.0, 0.2);
        RenderOptions render;
        render.spot_sigma_px = uniform(rng, 1.7, 2.4);
        render.spot_gain = uniform(rng, 0.6, 1.0);
        const RenderedFrame frame = render_frame(pattern, scene, bundle, noise, rng(), render);

        const Image half = halve(frame.image);
        std::vector<Vec2> centers;
        for (const auto& t : frame.truth)
            if (t.visible) centers.push_back((t.camera_center - Vec2(0.5, 0.5)) / 2.0);
        const Image mask = draw_disk_mask(half.width(), half.height(), centers, options.mask_radius);

        out.push_back(random_crop(half, mask, options.crop_size, rng));
        for (int a = 0; a < augmentations_per_image; ++a) {
            const double scale = uniform(rng, 0.75, 1.25);
            const int w = static_cast<int>(std::lround(half.width() * scale));
            const int h = static_cast<int>(std::lround(half.height() * scale));
            Image img = resize(half, w, h);
            Image m = resize(mask, w, h, true);
            if (uniform(rng, 0.0, 1.0) < 0.5) {
                img = flip_horizontal(img);
                m = flip_horizontal(m);
            }
            if (uniform(rng, 0.0, 1.0) < 0.5) {
                img = flip_vertical(img);
                m = flip_vertical(m);
            }
            const int turns = std::uniform_int_distribution<int>(0, 3)(rng);
            img = rotate90(img, turns);
            m = rotate90(m, turns);
            if (uniform(rng, 0.0, 1.0) < 0.5) {
                const double angle = uniform(rng, -0.5, 0.5);
                img = rotate(img, angle);
                m = rotate(m, angle, true);
            }
            out.push_back(random_crop(img, m, options.crop_size, rng));
        }
    }
    return out;
}

}  // namespace slhsi
