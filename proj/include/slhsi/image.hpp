#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace slhsi {

/// Interleaved float image, row-major, `channels` samples per pixel.
/// Pixel (x, y) has its center at integer coordinates (x, y).
class Image {
public:
    Image() = default;
    Image(int width, int height, int channels, float fill = 0.0f);

    int width() const { return width_; }
    int height() const { return height_; }
    int channels() const { return channels_; }
    bool empty() const { return data_.empty(); }

    float& at(int x, int y, int c = 0) {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }
    float at(int x, int y, int c = 0) const {
        return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
    }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    bool contains(double x, double y) const {
        return x >= 0.0 && y >= 0.0 && x <= width_ - 1.0 && y <= height_ - 1.0;
    }

    /// Bilinear sample with border clamping.
    float sample(double x, double y, int c = 0) const;
    Eigen::Vector3d sample_rgb(double x, double y) const;

    bool operator==(const Image& other) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    int channels_ = 0;
    std::vector<float> data_;
};

Image halve(const Image& image);
Image flip_horizontal(const Image& image);
Image flip_vertical(const Image& image);
/// Rotates by `quarter_turns` x 90 degrees in the same sense as rotate().
Image rotate90(const Image& image, int quarter_turns);
/// Rotates content about the image center by `radians`, measured in image
/// coordinates (positive turns +x toward +y). Output keeps the input size;
/// uncovered pixels are zero.
Image rotate(const Image& image, double radians, bool nearest = false);
Image resize(const Image& image, int width, int height, bool nearest = false);
Image crop(const Image& image, int x0, int y0, int width, int height);
/// Reflect-pads right/bottom so both sizes are multiples of `multiple`.
Image pad_reflect_to_multiple(const Image& image, int multiple);
/// Reflect-pads `margin` px on every side, then right/bottom up to a multiple of `multiple`.
Image pad_reflect(const Image& image, int margin, int multiple = 1);
Image luminance(const Image& image);
Image gaussian_blur(const Image& image, double sigma);

void write_png(const Image& image, const std::filesystem::path& path);
Image read_png(const std::filesystem::path& path);
void write_pfm(const Image& image, const std::filesystem::path& path);
Image read_pfm(const std::filesystem::path& path);
/// Dispatches on extension (.png or .pfm).
Image read_image(const std::filesystem::path& path);

}  // namespace slhsi
