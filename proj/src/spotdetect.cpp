#include "slhsi/spotdetect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "slhsi/error.hpp"

namespace slhsi {

DensityMap density_map(const Tensor& scores) {
    if (scores.channels != 2) throw Error(ErrorCode::InvalidArgument, "density map needs 2-channel scores");
    DensityMap d{Image(scores.width, scores.height, 1)};
    const std::size_t plane = scores.plane();
    for (std::size_t i = 0; i < plane; ++i) {
        d.map.data()[i] = static_cast<float>(scores.data[plane + i] - scores.data[i]);
    }
    return d;
}

Vec3 mean_disk_rgb(const Image& image, const Vec2& center, double radius) {
    Vec3 sum = Vec3::Zero();
    int n = 0;
    const int r = static_cast<int>(std::ceil(radius));
    const int cx = static_cast<int>(std::lround(center.x()));
    const int cy = static_cast<int>(std::lround(center.y()));
    for (int y = cy - r; y <= cy + r; ++y) {
        for (int x = cx - r; x <= cx + r; ++x) {
            if (x < 0 || y < 0 || x >= image.width() || y >= image.height()) continue;
            if ((Vec2(x, y) - center).squaredNorm() > radius * radius) continue;
            for (int c = 0; c < 3; ++c) sum(c) += image.at(x, y, std::min(c, image.channels() - 1));
            ++n;
        }
    }
    return n > 0 ? Vec3(sum / n) : Vec3(image.sample_rgb(center.x(), center.y()));
}

namespace {

// Stationary point of a least-squares quadratic over the 3x3 patch; falls back to
// separable parabolas when the 2-D fit is not a maximum or leaves the patch.
Vec2 quadratic_peak(const Image& m, int x, int y) {
    const auto v = [&](int dx, int dy) {
        const int xx = std::clamp(x + dx, 0, m.width() - 1);
        const int yy = std::clamp(y + dy, 0, m.height() - 1);
        return static_cast<double>(m.at(xx, yy));
    };
    Eigen::Matrix<double, 9, 6> a;
    Eigen::Matrix<double, 9, 1> b;
    int k = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, ++k) {
            a.row(k) << 1.0, dx, dy, dx * dx, dx * dy, dy * dy;
            b(k) = v(dx, dy);
        }
    }
    const Eigen::Matrix<double, 6, 1> c = a.colPivHouseholderQr().solve(b);
    Eigen::Matrix2d hess;
    hess << 2 * c(3), c(4), c(4), 2 * c(5);
    const Eigen::Vector2d grad(c(1), c(2));
    if (hess.determinant() > 0.0 && hess(0, 0) < 0.0) {
        const Eigen::Vector2d off = -hess.inverse() * grad;
        if (std::abs(off.x()) <= 1.0 && std::abs(off.y()) <= 1.0) return Vec2(x + off.x(), y + off.y());
    }
    const auto parabola = [](double l, double m0, double r) {
        const double denom = l - 2.0 * m0 + r;
        return denom < 0.0 ? std::clamp(0.5 * (l - r) / denom, -0.5, 0.5) : 0.0;
    };
    return Vec2(x + parabola(v(-1, 0), v(0, 0), v(1, 0)), y + parabola(v(0, -1), v(0, 0), v(0, 1)));
}

}  // namespace

SpotDetection detect_spots(const DensityMap& density, double nms_radius, double threshold, const Image& image,
                           double color_radius) {
    if (nms_radius < 1.0) throw Error(ErrorCode::InvalidArgument, "nms_radius must be >= 1");
    const Image& m = density.map;
    struct Candidate {
        int x;
        int y;
        double score;
    };
    std::vector<Candidate> candidates;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            const float s = m.at(x, y);
            if (!(s > threshold)) continue;
            bool is_max = true;
            for (int dy = -1; dy <= 1 && is_max; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dx == 0 && dy == 0) continue;
                    const int xx = x + dx;
                    const int yy = y + dy;
                    if (xx < 0 || yy < 0 || xx >= m.width() || yy >= m.height()) continue;
                    const float n = m.at(xx, yy);
                    // Ties go to the earlier pixel in raster order.
                    if (n > s || (n == s && (dy < 0 || (dy == 0 && dx < 0)))) {
                        is_max = false;
                        break;
                    }
                }
            }
            if (is_max) candidates.push_back({x, y, s});
        }
    }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

    SpotDetection out;
    for (const auto& c : candidates) {
        const Vec2 center = quadratic_peak(m, c.x, c.y);
        const bool clear = std::none_of(out.begin(), out.end(), [&](const Detection& d) {
            return (d.center - center).norm() < nms_radius;
        });
        if (!clear) continue;
        out.push_back({center, c.score, image.empty() ? Vec3::Zero() : mean_disk_rgb(image, center, color_radius)});
    }
    return out;
}

SpotDetection baseline_detect(const Image& image, double sigma_small, double sigma_large, double threshold,
                              double nms_radius) {
    const Image lum = luminance(image);
    const Image a = gaussian_blur(lum, sigma_small);
    const Image b = gaussian_blur(lum, sigma_large);
    DensityMap dog{Image(lum.width(), lum.height(), 1)};
    for (std::size_t i = 0; i < dog.map.data().size(); ++i) dog.map.data()[i] = a.data()[i] - b.data()[i];
    return detect_spots(dog, nms_radius, threshold, image);
}

Vec2 refine_peak(const Image& image, const Vec2& center, double radius) {
    const Image* img = &image;
    const auto lum = [&](int x, int y) {
        x = std::clamp(x, 0, img->width() - 1);
        y = std::clamp(y, 0, img->height() - 1);
        double v = 0.0;
        for (int c = 0; c < img->channels(); ++c) v += img->at(x, y, c);
        return v;
    };
    const int r = static_cast<int>(std::ceil(radius));
    const int cx = static_cast<int>(std::lround(center.x()));
    const int cy = static_cast<int>(std::lround(center.y()));
    int bx = cx;
    int by = cy;
    double best = -std::numeric_limits<double>::infinity();
    double floor = std::numeric_limits<double>::infinity();
    for (int y = cy - r - 2; y <= cy + r + 2; ++y) {
        for (int x = cx - r - 2; x <= cx + r + 2; ++x) {
            const double v = lum(x, y);
            floor = std::min(floor, v);
            if ((Vec2(x, y) - center).squaredNorm() <= radius * radius && v > best) {
                best = v;
                bx = x;
                by = y;
            }
        }
    }
    // A Gaussian blob is a parabola in log intensity.
    const auto log_at = [&](int x, int y) { return std::log(std::max(lum(x, y) - floor, 1e-6)); };
    const auto offset = [](double l, double m, double rr) {
        const double denom = l - 2.0 * m + rr;
        return denom < 0.0 ? std::clamp(0.5 * (l - rr) / denom, -0.5, 0.5) : 0.0;
    };
    const double c0 = log_at(bx, by);
    const Vec2 refined(bx + offset(log_at(bx - 1, by), c0, log_at(bx + 1, by)),
                       by + offset(log_at(bx, by - 1), c0, log_at(bx, by + 1)));
    return (refined - center).norm() <= radius + 1.0 ? refined : center;
}

SpotDetection fcn_detect(const FcnModel& model, const Image& image, const FcnDetectorOptions& options) {
    const Image half = halve(image);
    const int m = options.border_margin;
    const Image padded = pad_reflect(half, m, FcnModel::kTotalStride);
    const Tensor scores = fcn_forward(model, padded);
    DensityMap density = density_map(scores);
    density.map = crop(density.map, m, m, half.width(), half.height());
    SpotDetection half_det = detect_spots(density, options.nms_radius, options.threshold, Image{});
    SpotDetection out;
    for (auto d : half_det) {
        d.center = 2.0 * d.center + Vec2(0.5, 0.5);
        if (options.refine) d.center = refine_peak(image, d.center, options.refine_radius);
        d.rgb = mean_disk_rgb(image, d.center, 2.0);
        out.push_back(d);
    }
    return out;
}

}  // namespace slhsi
