#pragma once

#include <array>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "slhsi/delaunay.hpp"
#include "slhsi/geometry.hpp"
#include "slhsi/image.hpp"
#include "slhsi/spotdetect.hpp"

namespace slhsi {

struct NeighborGraph {
    std::vector<Vec2> centers;
    std::vector<TriangleIndices> triangles;
    std::vector<std::vector<int>> adjacency;  // sorted neighbor lists
    std::vector<double> median_edge;          // px
    std::vector<double> radius;               // px, alpha * median_edge

    int size() const { return static_cast<int>(centers.size()); }
    bool adjacent(int a, int b) const;
    /// Vertices reachable in 1..hops steps, sorted, excluding `v`.
    std::vector<int> within_hops(int v, int hops) const;
    std::vector<std::pair<int, int>> edges() const;
};

NeighborGraph build_graph(const std::vector<Vec2>& centers, double alpha = 0.5);

constexpr int kDescriptorDirections = 32;
using SpotDescriptor = Eigen::Matrix<double, kDescriptorDirections, 3>;

/// Row i is the bilinear RGB at center + radius * (cos t_i, sin t_i), t_i = i * 2pi/32.
/// `clamped` is set when any sample falls outside the image.
SpotDescriptor build_descriptor(const Image& image, const Vec2& center, double radius, bool* clamped = nullptr);

struct ReferenceDescriptorSet {
    std::array<SpotDescriptor, kDescriptorDirections> shifts;  // shifts[k].row(i) = base.row((i+k) % 32)

    static ReferenceDescriptorSet from_base(const SpotDescriptor& base);
    const SpotDescriptor& base() const { return shifts[0]; }
};

struct DescriptorDistance {
    double distance = 0.0;
    int best_shift = 0;
};

/// Minimum over the 32 shifts of the Frobenius difference, divided by sqrt(96).
DescriptorDistance descriptor_distance(const SpotDescriptor& captured, const ReferenceDescriptorSet& reference);

/// Unit-length RGB; zero stays zero.
Vec3 normalize_color(const Vec3& rgb);

/// Each pixel takes the normalized colour of its nearest spot when that spot is
/// within `reach[i]` px, black otherwise.
Image paint_color_field(int width, int height, const std::vector<Vec2>& centers, const std::vector<Vec3>& colors,
                        const std::vector<double>& reach);

struct MatchConfig {
    double distance_threshold = 0.12;
    double propagation_threshold = 0.5;  // looser bound for candidates next to an accepted match
    double epipolar_band_halfwidth = 3.0;
    int max_propagation_rounds = 20;
    double neighborhood_alpha = 0.5;
    double paint_reach = 1.0;           // colour field cutoff, in median edge lengths
    double prune_fraction = 0.5;        // beta
    int prune_hops = 3;
    double disparity_tolerance = 0.5;   // in reference median edge lengths
    int propagation_hops = 1;
    double propagation_ratio = 0.9;     // best must beat the runner-up by this factor
    double initial_ratio = 0.9;         // same test for seeds, over the whole epipolar band
    double min_depth_mm = 1.0;          // triangulated depth window for candidates
    double max_depth_mm = 1000.0;

    void validate() const;
};

enum class MatchFlag { Initial, Propagated, Pruned };

const char* to_string(MatchFlag flag);
MatchFlag match_flag_from_string(const std::string& text);

struct Match {
    int captured = -1;
    int reference = -1;
    double distance = 0.0;
    MatchFlag flag = MatchFlag::Initial;
};

struct MatchSet {
    std::vector<Match> matches;  // pruned entries are kept for reporting
    bool converged = true;
    std::vector<int> round_counts;  // active count after each propagation round

    std::vector<Match> active() const;
    int active_count() const;
    bool is_one_to_one() const;
    /// captured index -> reference index over active matches
    std::map<int, int> correspondence() const;
};

struct CapturedSpots {
    std::vector<Vec2> centers;
    NeighborGraph graph;
    Image color_field;
    std::vector<SpotDescriptor> descriptors;
};

struct ReferenceSpots {
    std::vector<ReferenceSpot> spots;
    NeighborGraph graph;
    Image color_field;
    std::vector<ReferenceDescriptorSet> descriptor_sets;
    std::vector<Vec3> epipolar_lines;  // camera-image lines, filled by prepare_reference
};

CapturedSpots prepare_captured(const SpotDetection& detections, int image_width, int image_height,
                               const MatchConfig& config);
ReferenceSpots prepare_reference(const ReferenceImage& reference, const CalibrationBundle& bundle,
                                 const MatchConfig& config);

/// q-quantile of the distances between each reference spot's descriptor, rebuilt
/// from colours measured on the reference image, and its own descriptor set.
double self_match_threshold(const ReferenceImage& image, const ReferenceSpots& reference, const MatchConfig& config,
                            double q = 0.9);

/// Epipolar band and depth window test for one candidate pair.
bool geometrically_admissible(const CapturedSpots& captured, int c, const ReferenceSpots& reference, int r,
                              const CalibrationBundle& bundle, const MatchConfig& config);

MatchSet initial_match(const CapturedSpots& captured, const ReferenceSpots& reference,
                       const CalibrationBundle& bundle, const MatchConfig& config);
MatchSet prune(const MatchSet& matches, const NeighborGraph& captured, const NeighborGraph& reference,
               const MatchConfig& config = {});
MatchSet propagate(const MatchSet& matches, const CapturedSpots& captured, const ReferenceSpots& reference,
                   const CalibrationBundle& bundle, const MatchConfig& config);

/// initial_match -> prune -> propagate.
MatchSet match_spots(const CapturedSpots& captured, const ReferenceSpots& reference,
                     const CalibrationBundle& bundle, const MatchConfig& config);

struct MatchEvaluation {
    double sensitivity = 0.0;
    double precision = 0.0;
    bool precision_defined = false;
    int true_positives = 0;
    int annotated = 0;
    int predicted = 0;
};

/// `truth` maps captured index -> reference index; `annotated` is the number of
/// spots that should have been matched.
MatchEvaluation evaluate_matching(const MatchSet& predicted, const std::map<int, int>& truth, int annotated);

/// One-to-one association of detections to labelled points within `tolerance` px,
/// closest pairs first. Returns detection index -> label.
std::map<int, int> associate_detections(const std::vector<Vec2>& detections,
                                        const std::vector<std::pair<int, Vec2>>& labelled, double tolerance);

/// q-quantile (linear interpolation) of a sample.
double quantile(std::vector<double> values, double q);

}  // namespace slhsi
