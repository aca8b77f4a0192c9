#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "slhsi/geometry.hpp"
#include "slhsi/pattern.hpp"
#include "slhsi/simulator.hpp"
#include "slhsi/spectra.hpp"
#include "slhsi/spotdetect.hpp"
#include "slhsi/spotmatch.hpp"

namespace slhsi {

using Json = nlohmann::ordered_json;

Json to_json(const CalibrationBundle& bundle);
CalibrationBundle bundle_from_json(const Json& j);

Json to_json(const SpotPatternSpec& pattern);
SpotPatternSpec pattern_from_json(const Json& j);

Json to_json(const RenderedFrame& frame);  // truth and permutation, not pixels
std::vector<TruthSpot> truth_from_json(const Json& j);

Json to_json(const std::vector<BandRange>& bands);
std::vector<BandRange> bands_from_json(const Json& j);

Json to_json(const WavelengthCalibration& calibration);
WavelengthCalibration calibration_from_json(const Json& j);

Json read_json(const std::filesystem::path& path);
/// Pretty-printed with a trailing newline.
void write_json(const Json& j, const std::filesystem::path& path);
void write_text(const std::string& text, const std::filesystem::path& path);

/// x,y,score,r,g,b
void write_detections_csv(const SpotDetection& detections, const std::filesystem::path& path);
SpotDetection read_detections_csv(const std::filesystem::path& path);

/// captured_idx,reference_idx,distance,flag
void write_matches_csv(const MatchSet& matches, const std::filesystem::path& path);
MatchSet read_matches_csv(const std::filesystem::path& path);

/// wavelength_nm,value (masked samples written as nan)
void write_spectrum_csv(const Spectrum& spectrum, const std::filesystem::path& path);
Spectrum read_spectrum_csv(const std::filesystem::path& path);

struct StO2ReportRow {
    int spot_id = -1;
    StO2Result result;
};

/// spot_id,sto2,r2,accepted
void write_sto2_report_csv(const std::vector<StO2ReportRow>& rows, const std::filesystem::path& path);

/// One row of a matching validation table.
struct MatchingTableRow {
    std::string name;
    std::vector<MatchEvaluation> frames;
};

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
};

MeanSd mean_sd(const std::vector<double>& values);

/// Columns: annotated matches, true positives, sensitivity, precision (mean +/- sd).
Json matching_table_json(const std::vector<MatchingTableRow>& rows);
std::string matching_table_text(const std::vector<MatchingTableRow>& rows);

}  // namespace slhsi
