#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace slhsi {

/// Number of fibres in the probe bundle, and thus the maximum spot count.
inline constexpr int kMaxSpots = 171;

struct PatternSpot {
    Eigen::Vector2d projector_pixel;
    double wavelength_nm = 0.0;
    Eigen::Vector3d rgb = Eigen::Vector3d::Zero();
};

/// Projected spot pattern. Spot index is the distal fibre index.
struct SpotPatternSpec {
    std::vector<PatternSpot> spots;
    int projector_width = 0;
    int projector_height = 0;

    /// Throws if wavelengths repeat or spots leave the projector image.
    void validate() const;
};

/// Approximate display colour of a monochromatic wavelength, each channel in [0, 1].
Eigen::Vector3d wavelength_to_rgb(double wavelength_nm);

}  // namespace slhsi
