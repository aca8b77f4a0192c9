#include "slhsi/hybrid.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

int to_byte(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw Error(ErrorCode::Io, "not a number: '" + s + "'");
    return v;
}

std::optional<double> parse_optional(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return parse_number(s);
}

}  // namespace

ReconstructedSurface reconstruct(const MatchSet& matches, const std::vector<Vec2>& captured_centers,
                                 const std::vector<ReferenceSpot>& reference, const CalibrationBundle& bundle,
                                 const ReconstructOptions& options) {
    ReconstructedSurface surface;
    std::vector<Match> active = matches.active();
    std::sort(active.begin(), active.end(), [](const Match& a, const Match& b) { return a.reference < b.reference; });
    for (const auto& m : active) {
        const Vec2 pixel = captured_centers.at(static_cast<std::size_t>(m.captured));
        const Vec2 proj = reference.at(static_cast<std::size_t>(m.reference)).projector_pixel;
        try {
            const Triangulation t = triangulate(bundle, pixel, proj);
            if (t.reprojection_residual > options.residual_ceiling_px) {
                ++surface.rejected_residual;
                continue;
            }
            surface.points.push_back({m.reference, m.captured, pixel, t.point, t.reprojection_residual});
        } catch (const Error&) {
            ++surface.rejected_geometry;
        }
    }
    surface.empty = surface.points.empty();
    if (options.build_mesh && surface.points.size() >= 3) {
        std::vector<Vec2> pixels;
        for (const auto& p : surface.points) pixels.push_back(p.camera_pixel);
        try {
            surface.mesh = delaunay_triangulate(pixels);
        } catch (const Error&) {
            surface.mesh.clear();
        }
    }
    return surface;
}

HybridFrame without_spectra(const ReconstructedSurface& surface) {
    HybridFrame frame;
    frame.mesh = surface.mesh;
    for (const auto& p : surface.points) frame.points.push_back({p, false, {}, {}, {}, {}});
    return frame;
}

HybridFrame attach_spectra(const ReconstructedSurface& surface, const FiberMap& fiber_map,
                           const std::vector<BandAttributes>& bands) {
    HybridFrame frame = without_spectra(surface);
    for (auto& hp : frame.points) {
        const int id = hp.surface.spot_id;
        if (id < 0 || id >= static_cast<int>(fiber_map.spot_to_band.size())) {
            ++frame.unmapped;
            continue;
        }
        const int band = fiber_map.spot_to_band[static_cast<std::size_t>(id)];
        if (band < 0 || band >= static_cast<int>(bands.size())) {
            ++frame.unmapped;
            continue;
        }
        const BandAttributes& a = bands[static_cast<std::size_t>(band)];
        hp.mapped = true;
        hp.reflectance = a.reflectance;
        hp.rgb = a.rgb;
        if (a.fit) {
            hp.r_squared = a.fit->r_squared;
            if (a.fit->accepted) hp.sto2 = a.fit->sto2;
        }
    }
    return frame;
}

Vec3 sto2_colormap(double sto2) {
    static const std::array<Vec3, 5> stops = {Vec3(0.0, 0.0, 0.5), Vec3(0.0, 0.5, 1.0), Vec3(0.5, 1.0, 0.5),
                                              Vec3(1.0, 0.5, 0.0), Vec3(0.5, 0.0, 0.0)};
    const double s = std::clamp(sto2, 0.0, 1.0) * 4.0;
    const int i = std::min(3, static_cast<int>(std::floor(s)));
    const double f = s - i;
    return (1.0 - f) * stops[static_cast<std::size_t>(i)] + f * stops[static_cast<std::size_t>(i) + 1];
}

void export_ply(const HybridFrame& frame, const std::filesystem::path& path, ColorMode mode) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << "ply\nformat ascii 1.0\ncomment slhsi hybrid frame\n";
    out << "element vertex " << frame.points.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "element face " << frame.mesh.size() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (const auto& p : frame.points) {
        Vec3 color(0.5, 0.5, 0.5);
        if (mode == ColorMode::Rgb && p.rgb) color = *p.rgb;
        if (mode == ColorMode::StO2 && p.sto2) color = sto2_colormap(*p.sto2);
        const Vec3& x = p.surface.point;
        out << format_number(x.x()) << ' ' << format_number(x.y()) << ' ' << format_number(x.z()) << ' '
            << to_byte(color.x()) << ' ' << to_byte(color.y()) << ' ' << to_byte(color.z()) << '\n';
    }
    for (const auto& t : frame.mesh) out << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<PointRecord> to_records(const HybridFrame& frame) {
    std::vector<PointRecord> out;
    for (const auto& p : frame.points) out.push_back({p.surface.spot_id, p.surface.point, p.sto2, p.r_squared, p.rgb});
    return out;
}

void export_csv(const HybridFrame& frame, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    out << "spot_id,x,y,z,sto2,r2,r,g,b\n";
    for (const auto& rec : to_records(frame)) {
        out << rec.spot_id << ',' << format_number(rec.xyz.x()) << ',' << format_number(rec.xyz.y()) << ','
            << format_number(rec.xyz.z()) << ',' << (rec.sto2 ? format_number(*rec.sto2) : "") << ','
            << (rec.r_squared ? format_number(*rec.r_squared) : "");
        for (int c = 0; c < 3; ++c) out << ',' << (rec.rgb ? format_number((*rec.rgb)[c]) : "");
        out << '\n';
    }
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

std::vector<PointRecord> import_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("spot_id,x,y,z,sto2,r2,r,g,b", 0) != 0) {
        throw Error(ErrorCode::Io, "unexpected header in " + path.string());
    }
    std::vector<PointRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 9) throw Error(ErrorCode::Io, "malformed row in " + path.string() + ": " + line);
        PointRecord rec;
        rec.spot_id = static_cast<int>(parse_number(f[0]));
        rec.xyz = Vec3(parse_number(f[1]), parse_number(f[2]), parse_number(f[3]));
        rec.sto2 = parse_optional(f[4]);
        rec.r_squared = parse_optional(f[5]);
        if (!f[6].empty()) rec.rgb = Vec3(parse_number(f[6]), parse_number(f[7]), parse_number(f[8]));
        out.push_back(rec);
    }
    return out;
}

std::string timing_report(const std::vector<StageTiming>& frames) {
    const auto stats = [&](auto getter) {
        double sum = 0.0;
        for (const auto& f : frames) sum += getter(f);
        const double n = static_cast<double>(frames.size());
        const double mean = frames.empty() ? 0.0 : sum / n;
        double var = 0.0;
        for (const auto& f : frames) var += (getter(f) - mean) * (getter(f) - mean);
        const double sd = frames.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
        return std::pair{mean, sd};
    };
    std::ostringstream out;
    out << "# per-frame timing, " << frames.size() << " frames, ms (mean +/- sd)\n";
    out << "# reference: ~80 ms per frame for the original GPU-assisted system\n";
    const std::pair<const char*, std::function<double(const StageTiming&)>> rows[] = {
        {"detect", [](const StageTiming& t) { return t.detect_ms; }},
        {"match", [](const StageTiming& t) { return t.match_ms; }},
        {"triangulate", [](const StageTiming& t) { return t.triangulate_ms; }},
        {"spectra", [](const StageTiming& t) { return t.spectra_ms; }},
        {"total", [](const StageTiming& t) { return t.total_ms(); }},
    };
    for (const auto& [name, getter] : rows) {
        const auto [mean, sd] = stats(getter);
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-12s %10.3f +/- %.3f\n", name, mean, sd);
        out << buf;
    }
    return out.str();
}

SpotDetection run_detector(const Image& image, const DetectorChoice& detector) {
    if (detector.model) return fcn_detect(*detector.model, image, detector.fcn);
    const auto& b = detector.baseline;
    return baseline_detect(image, b.sigma_small, b.sigma_large, b.threshold, b.nms_radius);
}

std::vector<BandAttributes> process_spectral_frame(const SpectralInputs& inputs) {
    std::vector<BandAttributes> out(inputs.frame.bands.size());
    for (std::size_t b = 0; b < inputs.frame.bands.size(); ++b) {
        BandAttributes& a = out[b];
        try {
            const Spectrum raw = to_spectrum(extract_fiber_spectrum(inputs.frame, static_cast<int>(b)),
                                             inputs.calibration);
            const Spectrum white = to_spectrum(extract_fiber_spectrum(inputs.white, static_cast<int>(b)),
                                               inputs.calibration);
            a.reflectance = normalize_reflectance(raw, white);
        } catch (const Error&) {
            continue;
        }
        a.rgb = rgb_from_spectrum(*a.reflectance, inputs.ccd);
        try {
            a.fit = fit_sto2(absorbance(*a.reflectance), inputs.basis);
        } catch (const Error&) {
            a.fit.reset();
        }
    }
    return out;
}

FrameResult run_frame(const Image& image, const ReferenceSpots& reference, const CalibrationBundle& bundle,
                      const DetectorChoice& detector, const MatchConfig& match_config,
                      const ReconstructOptions& reconstruct_options, const SpectralInputs* spectra) {
    FrameResult r;
    StageTiming timing;

    auto t0 = Clock::now();
    r.detections = run_detector(image, detector);
    timing.detect_ms = elapsed_ms(t0);

    t0 = Clock::now();
    r.captured = prepare_captured(r.detections, image.width(), image.height(), match_config);
    if (r.captured.graph.size() > 0) r.matches = match_spots(r.captured, reference, bundle, match_config);
    timing.match_ms = elapsed_ms(t0);

    t0 = Clock::now();
    r.surface = reconstruct(r.matches, r.captured.centers, reference.spots, bundle, reconstruct_options);
    timing.triangulate_ms = elapsed_ms(t0);

    t0 = Clock::now();
    if (spectra) {
        r.hybrid = attach_spectra(r.surface, spectra->fiber_map, process_spectral_frame(*spectra));
    } else {
        r.hybrid = without_spectra(r.surface);
    }
    timing.spectra_ms = elapsed_ms(t0);

    r.hybrid.timing = timing;
    return r;
}

}  // namespace slhsi
