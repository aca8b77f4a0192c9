#include "slhsi/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "slhsi/error.hpp"

namespace slhsi {

namespace {

Json matrix_json(const Mat3& m) {
    Json rows = Json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
}

Mat3 matrix_from_json(const Json& j) {
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
    }
    return m;
}

Json vec_json(const Eigen::VectorXd& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec2 vec2_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
Vec3 vec3_from_json(const Json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

Json device_json(const Device& d) {
    const Intrinsics& k = d.intrinsics;
    return Json{{"intrinsics",
                 {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.image_width},
                  {"height", k.image_height}}},
                {"rotation", matrix_json(d.pose.rotation)},
                {"translation", vec_json(d.pose.translation)}};
}

Device device_from_json(const Json& j) {
    Device d;
    const Json& k = j.at("intrinsics");
    d.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                    k.at("cy").get<double>(), k.at("width").get<int>(),  k.at("height").get<int>()};
    d.pose.rotation = matrix_from_json(j.at("rotation"));
    d.pose.translation = vec3_from_json(j.at("translation"));
    return d;
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
    return out;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path, const std::string& header) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != header) {
        throw Error(ErrorCode::Io, "expected header '" + header + "' in " + path.string());
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::string f;
        std::istringstream ls(line);
        while (std::getline(ls, f, ',')) fields.push_back(f);
        rows.push_back(std::move(fields));
    }
    return rows;
}

double parse_double(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw Error(ErrorCode::Io, "not a number: '" + s + "'");
    return v;
}

int parse_int(const std::string& s) {
    int v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) throw Error(ErrorCode::Io, "not an integer: '" + s + "'");
    return v;
}

}  // namespace

Json to_json(const CalibrationBundle& bundle) {
    return Json{{"camera", device_json(bundle.camera)},
                {"projector", device_json(bundle.projector)},
                {"homography", matrix_json(bundle.reference_plane_homography.matrix)}};
}

CalibrationBundle bundle_from_json(const Json& j) {
    CalibrationBundle b;
    b.camera = device_from_json(j.at("camera"));
    b.projector = device_from_json(j.at("projector"));
    b.reference_plane_homography.matrix = matrix_from_json(j.at("homography"));
    b.validate();
    return b;
}

Json to_json(const SpotPatternSpec& pattern) {
    Json spots = Json::array();
    for (const auto& s : pattern.spots) {
        spots.push_back({{"projector_pixel", vec_json(s.projector_pixel)},
                         {"wavelength_nm", s.wavelength_nm},
                         {"rgb", vec_json(s.rgb)}});
    }
    return Json{{"projector_width", pattern.projector_width},
                {"projector_height", pattern.projector_height},
                {"spots", spots}};
}

SpotPatternSpec pattern_from_json(const Json& j) {
    SpotPatternSpec p;
    p.projector_width = j.at("projector_width").get<int>();
    p.projector_height = j.at("projector_height").get<int>();
    for (const auto& s : j.at("spots")) {
        p.spots.push_back({vec2_from_json(s.at("projector_pixel")), s.at("wavelength_nm").get<double>(),
                           vec3_from_json(s.at("rgb"))});
    }
    p.validate();
    return p;
}

Json to_json(const RenderedFrame& frame) {
    Json spots = Json::array();
    for (const auto& t : frame.truth) {
        spots.push_back({{"spot_id", t.spot_id},
                         {"camera_center", vec_json(t.camera_center)},
                         {"projector_pixel", vec_json(t.projector_pixel)},
                         {"point", vec_json(t.point)},
                         {"visible", t.visible},
                         {"dropped", t.dropped},
                         {"occluded", t.occluded},
                         {"hit_surface", t.hit_surface}});
    }
    return Json{{"seed", frame.seed},
                {"visible_count", frame.visible_count()},
                {"fiber_permutation", frame.fiber_permutation},
                {"spots", spots}};
}

std::vector<TruthSpot> truth_from_json(const Json& j) {
    std::vector<TruthSpot> out;
    for (const auto& s : j.at("spots")) {
        TruthSpot t;
        t.spot_id = s.at("spot_id").get<int>();
        t.camera_center = vec2_from_json(s.at("camera_center"));
        t.projector_pixel = vec2_from_json(s.at("projector_pixel"));
        t.point = vec3_from_json(s.at("point"));
        t.visible = s.at("visible").get<bool>();
        t.dropped = s.at("dropped").get<bool>();
        t.occluded = s.at("occluded").get<bool>();
        t.hit_surface = s.at("hit_surface").get<bool>();
        out.push_back(t);
    }
    return out;
}

Json to_json(const std::vector<BandRange>& bands) {
    Json a = Json::array();
    for (const auto& b : bands) a.push_back({b.first, b.last});
    return Json{{"bands", a}};
}

std::vector<BandRange> bands_from_json(const Json& j) {
    std::vector<BandRange> out;
    for (const auto& b : j.at("bands")) out.push_back({b.at(0).get<int>(), b.at(1).get<int>()});
    return out;
}

Json to_json(const WavelengthCalibration& c) {
    return Json{{"slope_nm_per_row", c.slope}, {"intercept_nm", c.intercept}, {"residual_rms_nm", c.residual_rms}};
}

WavelengthCalibration calibration_from_json(const Json& j) {
    return {j.at("slope_nm_per_row").get<double>(), j.at("intercept_nm").get<double>(),
            j.value("residual_rms_nm", 0.0)};
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::Io, "invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const Json& j, const std::filesystem::path& path) { write_text(j.dump(2) + "\n", path); }

void write_text(const std::string& text, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << text;
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void write_detections_csv(const SpotDetection& detections, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "x,y,score,r,g,b\n";
    for (const auto& d : detections) {
        out << fmt(d.center.x()) << ',' << fmt(d.center.y()) << ',' << fmt(d.score) << ',' << fmt(d.rgb.x()) << ','
            << fmt(d.rgb.y()) << ',' << fmt(d.rgb.z()) << '\n';
    }
}

SpotDetection read_detections_csv(const std::filesystem::path& path) {
    SpotDetection out;
    for (const auto& f : read_csv_rows(path, "x,y,score,r,g,b")) {
        if (f.size() != 6) throw Error(ErrorCode::Io, "malformed detection row in " + path.string());
        Detection d;
        d.center = {parse_double(f[0]), parse_double(f[1])};
        d.score = parse_double(f[2]);
        d.rgb = {parse_double(f[3]), parse_double(f[4]), parse_double(f[5])};
        out.push_back(d);
    }
    return out;
}

void write_matches_csv(const MatchSet& matches, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "captured_idx,reference_idx,distance,flag\n";
    for (const auto& m : matches.matches) {
        out << m.captured << ',' << m.reference << ',' << fmt(m.distance) << ',' << to_string(m.flag) << '\n';
    }
}

MatchSet read_matches_csv(const std::filesystem::path& path) {
    MatchSet out;
    for (const auto& f : read_csv_rows(path, "captured_idx,reference_idx,distance,flag")) {
        if (f.size() != 4) throw Error(ErrorCode::Io, "malformed match row in " + path.string());
        out.matches.push_back({parse_int(f[0]), parse_int(f[1]), parse_double(f[2]), match_flag_from_string(f[3])});
    }
    return out;
}

void write_spectrum_csv(const Spectrum& spectrum, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "wavelength_nm,value\n";
    for (std::size_t i = 0; i < spectrum.size(); ++i) {
        out << fmt(spectrum.wavelengths[i]) << ',' << fmt(spectrum.values[i]) << '\n';
    }
}

Spectrum read_spectrum_csv(const std::filesystem::path& path) {
    Spectrum s;
    for (const auto& f : read_csv_rows(path, "wavelength_nm,value")) {
        if (f.size() != 2) throw Error(ErrorCode::Io, "malformed spectrum row in " + path.string());
        s.wavelengths.push_back(parse_double(f[0]));
        s.values.push_back(parse_double(f[1]));
    }
    s.validate();
    return s;
}

void write_sto2_report_csv(const std::vector<StO2ReportRow>& rows, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "spot_id,sto2,r2,accepted\n";
    for (const auto& r : rows) {
        out << r.spot_id << ',' << fmt(r.result.sto2) << ',' << fmt(r.result.r_squared) << ','
            << (r.result.accepted ? 1 : 0) << '\n';
    }
}

MeanSd mean_sd(const std::vector<double>& values) {
    MeanSd m;
    if (values.empty()) return m;
    for (double v : values) m.mean += v;
    m.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - m.mean) * (v - m.mean);
        m.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return m;
}

namespace {

struct RowStats {
    MeanSd annotated, true_positives, sensitivity, precision;
    int undefined_precision = 0;
};

RowStats row_stats(const MatchingTableRow& row) {
    std::vector<double> a, tp, s, p;
    RowStats out;
    for (const auto& e : row.frames) {
        a.push_back(e.annotated);
        tp.push_back(e.true_positives);
        s.push_back(e.sensitivity);
        p.push_back(e.precision);
        if (!e.precision_defined) ++out.undefined_precision;
    }
    out.annotated = mean_sd(a);
    out.true_positives = mean_sd(tp);
    out.sensitivity = mean_sd(s);
    out.precision = mean_sd(p);
    return out;
}

Json mean_sd_json(const MeanSd& m) { return Json{{"mean", m.mean}, {"sd", m.sd}}; }

}  // namespace

Json matching_table_json(const std::vector<MatchingTableRow>& rows) {
    Json out = Json::array();
    for (const auto& row : rows) {
        const RowStats s = row_stats(row);
        Json r{{"name", row.name},
               {"frames", row.frames.size()},
               {"annotated_matches", mean_sd_json(s.annotated)},
               {"true_positives", mean_sd_json(s.true_positives)},
               {"sensitivity", mean_sd_json(s.sensitivity)},
               {"precision", mean_sd_json(s.precision)}};
        if (s.undefined_precision > 0) {
            r["warning"] = std::to_string(s.undefined_precision) + " frame(s) with no predicted matches";
        }
        out.push_back(r);
    }
    return Json{{"columns", {"annotated_matches", "true_positives", "sensitivity", "precision"}}, {"rows", out}};
}

std::string matching_table_text(const std::vector<MatchingTableRow>& rows) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-14s %-18s %-18s %-18s %-18s\n", "", "Annotated", "True positive",
                  "Sensitivity", "Precision");
    out << buf;
    for (const auto& row : rows) {
        const RowStats s = row_stats(row);
        std::snprintf(buf, sizeof buf, "%-14s %7.1f +/- %-7.1f %7.1f +/- %-7.1f %6.3f +/- %-7.3f %6.3f +/- %-7.3f\n",
                      row.name.c_str(), s.annotated.mean, s.annotated.sd, s.true_positives.mean, s.true_positives.sd,
                      s.sensitivity.mean, s.sensitivity.sd, s.precision.mean, s.precision.sd);
        out << buf;
    }
    return out.str();
}

}  // namespace slhsi
