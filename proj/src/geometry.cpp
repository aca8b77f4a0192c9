#include "slhsi/geometry.hpp"

#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "slhsi/error.hpp"

namespace slhsi {

Mat3 Intrinsics::matrix() const {
    Mat3 k;
    k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
}

void Intrinsics::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw Error(ErrorCode::InvalidArgument, "focal lengths must be positive");
    if (!(cx >= 0.0 && cx < image_width) || !(cy >= 0.0 && cy < image_height)) {
        throw Error(ErrorCode::InvalidArgument, "principal point outside sensor");
    }
}

void Pose::validate() const {
    const double ortho = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9 || std::abs(rotation.determinant() - 1.0) > 1e-9) {
        throw Error(ErrorCode::InvalidArgument, "pose rotation is not a proper rotation");
    }
}

Pose Pose::look_at(const Vec3& center, const Vec3& target, const Vec3& down) {
    const Vec3 z = (target - center).normalized();
    Vec3 y = down - down.dot(z) * z;
    y.normalize();
    const Vec3 x = y.cross(z);
    Pose pose;
    pose.rotation.row(0) = x.transpose();
    pose.rotation.row(1) = y.transpose();
    pose.rotation.row(2) = z.transpose();
    pose.translation = -pose.rotation * center;
    return pose;
}

Vec2 Homography::apply(const Vec2& p) const {
    const Vec3 q = matrix * p.homogeneous();
    return q.hnormalized();
}

Homography Homography::inverse() const {
    Homography inv{matrix.inverse()};
    inv.normalize();
    return inv;
}

void Homography::normalize() {
    if (std::abs(matrix(2, 2)) > 1e-300) matrix /= matrix(2, 2);
}

void CalibrationBundle::validate() const {
    camera.intrinsics.validate();
    camera.pose.validate();
    projector.intrinsics.validate();
    projector.pose.validate();
    if (std::abs(reference_plane_homography.matrix.determinant()) < 1e-300) {
        throw Error(ErrorCode::InvalidArgument, "reference-plane homography is singular");
    }
}

Vec2 project(const Intrinsics& intrinsics, const Pose& pose, const Vec3& point) {
    const Vec3 pc = pose.rotation * point + pose.translation;
    if (!(pc.z() > 0.0)) throw Error(ErrorCode::DegenerateProjection, "degenerate projection");
    return {intrinsics.fx * pc.x() / pc.z() + intrinsics.cx, intrinsics.fy * pc.y() / pc.z() + intrinsics.cy};
}

Ray backproject(const Intrinsics& intrinsics, const Pose& pose, const Vec2& pixel) {
    const Vec3 dir_device((pixel.x() - intrinsics.cx) / intrinsics.fx, (pixel.y() - intrinsics.cy) / intrinsics.fy,
                          1.0);
    Ray ray;
    ray.origin = pose.center();
    ray.direction = (pose.rotation.transpose() * dir_device).normalized();
    return ray;
}

Triangulation triangulate(const CalibrationBundle& bundle, const Vec2& cam_pixel, const Vec2& proj_pixel) {
    const Ray rc = backproject(bundle.camera.intrinsics, bundle.camera.pose, cam_pixel);
    const Ray rp = backproject(bundle.projector.intrinsics, bundle.projector.pose, proj_pixel);
    const double b = rc.direction.dot(rp.direction);
    const double sin_angle = rc.direction.cross(rp.direction).norm();
    if (sin_angle < 1e-6) throw Error(ErrorCode::DegenerateTriangulation, "degenerate triangulation");

    const Vec3 w0 = rc.origin - rp.origin;
    const double d = rc.direction.dot(w0);
    const double e = rp.direction.dot(w0);
    const double denom = 1.0 - b * b;
    const double s = (b * e - d) / denom;
    const double t = (e - b * d) / denom;
    if (!(s > 0.0) || !(t > 0.0)) throw Error(ErrorCode::BehindCamera, "behind camera");

    Triangulation out;
    out.point = 0.5 * (rc.point_at(s) + rp.point_at(t));
    const double ec = (project(bundle.camera.intrinsics, bundle.camera.pose, out.point) - cam_pixel).norm();
    const double ep =
        (project(bundle.projector.intrinsics, bundle.projector.pose, out.point) - proj_pixel).norm();
    out.reprojection_residual = std::max(ec, ep);
    return out;
}

Mat3 fundamental_matrix(const CalibrationBundle& bundle) {
    const Pose& cam = bundle.camera.pose;
    const Pose& proj = bundle.projector.pose;
    const Mat3 r = cam.rotation * proj.rotation.transpose();
    const Vec3 t = cam.translation - r * proj.translation;
    Mat3 tx;
    tx << 0.0, -t.z(), t.y(), t.z(), 0.0, -t.x(), -t.y(), t.x(), 0.0;
    const Mat3 essential = tx * r;
    return bundle.camera.intrinsics.matrix().inverse().transpose() * essential *
           bundle.projector.intrinsics.matrix().inverse();
}

Vec3 epipolar_line(const CalibrationBundle& bundle, const Vec2& proj_pixel) {
    Vec3 line = fundamental_matrix(bundle) * proj_pixel.homogeneous();
    const double n = line.head<2>().norm();
    if (n > 0.0) line /= n;
    return line;
}

namespace {

// Isotropic normalization: centroid to origin, mean distance sqrt(2).
Mat3 normalizing_transform(const std::vector<Vec2>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double dist = 0.0;
    for (const auto& p : pts) dist += (p - mean).norm();
    dist /= static_cast<double>(pts.size());
    const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
    Mat3 t;
    t << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
    return t;
}

}  // namespace

HomographyFit estimate_homography(const std::vector<std::pair<Vec2, Vec2>>& pairs) {
    const int n = static_cast<int>(pairs.size());
    if (n < 4) throw Error(ErrorCode::InvalidArgument, "homography needs at least 4 pairs");

    std::vector<Vec2> src;
    std::vector<Vec2> dst;
    for (const auto& [a, b] : pairs) {
        src.push_back(a);
        dst.push_back(b);
    }
    const Mat3 ts = normalizing_transform(src);
    const Mat3 td = normalizing_transform(dst);

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(std::max(2 * n, 9), 9);
    for (int i = 0; i < n; ++i) {
        const Vec3 p = ts * src[i].homogeneous();
        const Vec3 q = td * dst[i].homogeneous();
        a.row(2 * i) << 0, 0, 0, -q.z() * p.x(), -q.z() * p.y(), -q.z() * p.z(), q.y() * p.x(), q.y() * p.y(),
            q.y() * p.z();
        a.row(2 * i + 1) << q.z() * p.x(), q.z() * p.y(), q.z() * p.z(), 0, 0, 0, -q.x() * p.x(), -q.x() * p.y(),
            -q.x() * p.z();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv(0) <= 0.0 || sv(7) / sv(0) < 1e-10) {
        throw Error(ErrorCode::RankDeficientHomography, "rank-deficient homography");
    }
    const Eigen::VectorXd h = svd.matrixV().col(8);
    Mat3 hn;
    hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

    HomographyFit fit;
    fit.homography.matrix = td.inverse() * hn * ts;
    if (std::abs(fit.homography.matrix.determinant()) < 1e-14 * std::pow(fit.homography.matrix.norm(), 3)) {
        throw Error(ErrorCode::RankDeficientHomography, "rank-deficient homography");
    }
    fit.homography.normalize();
    double sq = 0.0;
    for (int i = 0; i < n; ++i) sq += (fit.homography.apply(src[i]) - dst[i]).squaredNorm();
    fit.rms_error = std::sqrt(sq / n);
    return fit;
}

Homography plane_induced_homography(const CalibrationBundle& bundle, const Vec3& normal, double offset) {
    const Pose& pc = bundle.camera.pose;
    const Pose& pp = bundle.projector.pose;
    const Mat3 r = pc.rotation * pp.rotation.transpose();
    const Vec3 t = pc.translation - r * pp.translation;
    // Plane in projector coordinates: n_p . X = d_p.
    const Vec3 n_p = pp.rotation * normal;
    const double d_p = offset + n_p.dot(pp.translation);
    if (std::abs(d_p) < 1e-12) {
        throw Error(ErrorCode::InvalidArgument, "reference plane passes through the projector center");
    }
    Homography h;
    h.matrix = bundle.camera.intrinsics.matrix() * (r + t * n_p.transpose() / d_p) *
               bundle.projector.intrinsics.matrix().inverse();
    h.normalize();
    return h;
}

ReferenceImage generate_reference_image(const SpotPatternSpec& pattern, const CalibrationBundle& bundle,
                                        double spot_sigma) {
    const int w = bundle.camera.intrinsics.image_width;
    const int h = bundle.camera.intrinsics.image_height;
    ReferenceImage ref;
    ref.image = Image(w, h, 3);
    const int radius = static_cast<int>(std::ceil(4.0 * spot_sigma));
    for (const auto& spot : pattern.spots) {
        ReferenceSpot rs;
        rs.projector_pixel = spot.projector_pixel;
        rs.center = bundle.reference_plane_homography.apply(spot.projector_pixel);
        rs.rgb = spot.rgb;
        rs.in_bounds = ref.image.contains(rs.center.x(), rs.center.y());
        ref.spots.push_back(rs);
        if (!rs.in_bounds) continue;
        const int x0 = static_cast<int>(std::floor(rs.center.x()));
        const int y0 = static_cast<int>(std::floor(rs.center.y()));
        for (int y = std::max(0, y0 - radius); y <= std::min(h - 1, y0 + radius + 1); ++y) {
            for (int x = std::max(0, x0 - radius); x <= std::min(w - 1, x0 + radius + 1); ++x) {
                const double d2 = (Vec2(x, y) - rs.center).squaredNorm();
                const double g = std::exp(-0.5 * d2 / (spot_sigma * spot_sigma));
                for (int c = 0; c < 3; ++c) {
                    ref.image.at(x, y, c) = std::min(1.0f, ref.image.at(x, y, c) + static_cast<float>(g * rs.rgb(c)));
                }
            }
        }
    }
    return ref;
}

}  // namespace slhsi
