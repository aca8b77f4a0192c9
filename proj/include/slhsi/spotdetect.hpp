#pragma once

#include <vector>

#include "slhsi/fcn.hpp"
#include "slhsi/geometry.hpp"
#include "slhsi/image.hpp"

namespace slhsi {

/// Foreground score minus background score, single channel.
struct DensityMap {
    Image map;
};

DensityMap density_map(const Tensor& scores);

struct Detection {
    Vec2 center;
    double score = 0.0;
    Vec3 rgb = Vec3::Zero();
};

using SpotDetection = std::vector<Detection>;

/// Local maxima of the density above `threshold`, refined by a 3x3 quadratic fit
/// and greedily suppressed (highest first) so no two centers are closer than
/// `nms_radius`. Colour is the mean RGB over a disk of `color_radius` px.
SpotDetection detect_spots(const DensityMap& density, double nms_radius, double threshold, const Image& image,
                           double color_radius = 2.0);

/// Difference-of-Gaussians blob detector on luminance; same output contract.
SpotDetection baseline_detect(const Image& image, double sigma_small, double sigma_large, double threshold,
                              double nms_radius = 6.0);

Vec3 mean_disk_rgb(const Image& image, const Vec2& center, double radius);

/// Sub-pixel peak of the brightest luminance pixel within `radius`, from
/// parabolas fitted to background-subtracted log intensity.
Vec2 refine_peak(const Image& image, const Vec2& center, double radius);

struct FcnDetectorOptions {
    double nms_radius = 4.0;   // px at the halved resolution
    double threshold = 0.0;    // density > 0 <=> foreground probability > 0.5
    bool refine = true;        // peak refinement on the full-resolution image
    double refine_radius = 3.0;
    int border_margin = 16;    // reflect padding (halved px) that keeps zero-padding artefacts off the frame
};

/// Halves the frame, pads to the network stride, runs the FCN and maps the
/// detections back to full-resolution pixel coordinates.
SpotDetection fcn_detect(const FcnModel& model, const Image& image, const FcnDetectorOptions& options = {});

}  // namespace slhsi
