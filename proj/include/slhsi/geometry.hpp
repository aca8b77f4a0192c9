#pragma once

#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "slhsi/image.hpp"
#include "slhsi/pattern.hpp"

namespace slhsi {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole intrinsics, no distortion.
struct Intrinsics {
    double fx = 0.0;
    double fy = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    int image_width = 0;
    int image_height = 0;

    Mat3 matrix() const;
    void validate() const;
};

/// World-to-device transform: x_device = rotation * x_world + translation (mm).
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    /// Device optical center in world coordinates.
    Vec3 center() const { return -rotation.transpose() * translation; }
    void validate() const;

    /// Pose of a device at `center` whose optical axis (+z) points at `target`,
    /// with image +y as close as possible to `down`.
    static Pose look_at(const Vec3& center, const Vec3& target, const Vec3& down = Vec3::UnitY());
};

struct Homography {
    Mat3 matrix = Mat3::Identity();

    Vec2 apply(const Vec2& p) const;
    Homography inverse() const;
    /// Scales so the bottom-right entry is 1 when it is nonzero.
    void normalize();
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 direction = Vec3::UnitZ();

    Vec3 point_at(double distance) const { return origin + distance * direction; }
};

struct Device {
    Intrinsics intrinsics;
    Pose pose;
};

/// Camera and projector (modelled as an inverse camera) in one world frame.
/// The reference-plane homography maps projector pixels to reference-image pixels.
struct CalibrationBundle {
    Device camera;
    Device projector;
    Homography reference_plane_homography;

    void validate() const;
};

Vec2 project(const Intrinsics& intrinsics, const Pose& pose, const Vec3& point);
Ray backproject(const Intrinsics& intrinsics, const Pose& pose, const Vec2& pixel);

struct Triangulation {
    Vec3 point;
    double reprojection_residual = 0.0;  // px, max over both views
};

/// Midpoint of the common perpendicular of the camera and projector rays.
Triangulation triangulate(const CalibrationBundle& bundle, const Vec2& cam_pixel, const Vec2& proj_pixel);

/// Fundamental matrix F with cam^T F proj = 0.
Mat3 fundamental_matrix(const CalibrationBundle& bundle);
/// Camera-image line (a, b, c), a^2 + b^2 = 1, for a projector pixel.
Vec3 epipolar_line(const CalibrationBundle& bundle, const Vec2& proj_pixel);
inline double line_distance(const Vec3& line, const Vec2& pixel) {
    return std::abs(line.x() * pixel.x() + line.y() * pixel.y() + line.z());
}

/// Projector-to-camera pixel mapping induced by the world plane {X : normal . X = offset}.
Homography plane_induced_homography(const CalibrationBundle& bundle, const Vec3& normal, double offset);

struct HomographyFit {
    Homography homography;
    double rms_error = 0.0;  // px, forward mapping error on the inputs
};

/// Normalized DLT over (source, destination) pairs.
HomographyFit estimate_homography(const std::vector<std::pair<Vec2, Vec2>>& pairs);

struct ReferenceSpot {
    Vec2 center;           // reference image px
    Vec2 projector_pixel;  // pattern coordinate
    Vec3 rgb;
    bool in_bounds = true;
};

struct ReferenceImage {
    Image image;
    std::vector<ReferenceSpot> spots;
};

/// Synthesizes the reference view of `pattern` through the bundle's reference-plane
/// homography, on a canvas the size of the camera image. Spots are rendered as
/// Gaussian blobs of `spot_sigma` px.
ReferenceImage generate_reference_image(const SpotPatternSpec& pattern, const CalibrationBundle& bundle,
                                        double spot_sigma = 2.0);

}  // namespace slhsi
