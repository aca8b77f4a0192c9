#include "slhsi/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <png.h>

#include "slhsi/error.hpp"

namespace slhsi {

Image::Image(int width, int height, int channels, float fill)
    : width_(width), height_(height), channels_(channels) {
    if (width < 0 || height < 0 || channels <= 0) {
        throw Error(ErrorCode::InvalidArgument, "invalid image dimensions");
    }
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

float Image::sample(double x, double y, int c) const {
    x = std::clamp(x, 0.0, width_ - 1.0);
    y = std::clamp(y, 0.0, height_ - 1.0);
    const int x0 = std::min(static_cast<int>(x), width_ - 1);
    const int y0 = std::min(static_cast<int>(y), height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double top = (1.0 - fx) * at(x0, y0, c) + fx * at(x1, y0, c);
    const double bottom = (1.0 - fx) * at(x0, y1, c) + fx * at(x1, y1, c);
    return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

Eigen::Vector3d Image::sample_rgb(double x, double y) const {
    if (channels_ < 3) {
        const double v = sample(x, y, 0);
        return {v, v, v};
    }
    return {sample(x, y, 0), sample(x, y, 1), sample(x, y, 2)};
}

Image halve(const Image& image) {
    Image out(image.width() / 2, image.height() / 2, image.channels());
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            for (int c = 0; c < image.channels(); ++c) {
                out.at(x, y, c) = 0.25f * (image.at(2 * x, 2 * y, c) + image.at(2 * x + 1, 2 * y, c) +
                                           image.at(2 * x, 2 * y + 1, c) +
                                           image.at(2 * x + 1, 2 * y + 1, c));
            }
        }
    }
    return out;
}

Image flip_horizontal(const Image& image) {
    Image out(image.width(), image.height(), image.channels());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < image.channels(); ++c)
                out.at(x, y, c) = image.at(image.width() - 1 - x, y, c);
    return out;
}

Image flip_vertical(const Image& image) {
    Image out(image.width(), image.height(), image.channels());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < image.channels(); ++c)
                out.at(x, y, c) = image.at(x, image.height() - 1 - y, c);
    return out;
}

Image rotate90(const Image& image, int quarter_turns) {
    quarter_turns = ((quarter_turns % 4) + 4) % 4;
    Image current = image;
    for (int t = 0; t < quarter_turns; ++t) {
        const int w = current.width();
        const int h = current.height();
        Image out(h, w, current.channels());
        // dest(x', y') = src(y', h - 1 - x')
        for (int yd = 0; yd < w; ++yd)
            for (int xd = 0; xd < h; ++xd)
                for (int c = 0; c < current.channels(); ++c)
                    out.at(xd, yd, c) = current.at(yd, h - 1 - xd, c);
        current = std::move(out);
    }
    return current;
}

Image rotate(const Image& image, double radians, bool nearest) {
    Image out(image.width(), image.height(), image.channels());
    const double cx = 0.5 * (image.width() - 1);
    const double cy = 0.5 * (image.height() - 1);
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            const double u = x - cx;
            const double v = y - cy;
            // inverse rotation
            double sx = c * u + s * v + cx;
            double sy = -s * u + c * v + cy;
            if (sx < -0.5 || sy < -0.5 || sx > image.width() - 0.5 || sy > image.height() - 0.5) continue;
            if (nearest) {
                const int ix = std::clamp(static_cast<int>(std::lround(sx)), 0, image.width() - 1);
                const int iy = std::clamp(static_cast<int>(std::lround(sy)), 0, image.height() - 1);
                for (int ch = 0; ch < image.channels(); ++ch) out.at(x, y, ch) = image.at(ix, iy, ch);
            } else {
                for (int ch = 0; ch < image.channels(); ++ch) out.at(x, y, ch) = image.sample(sx, sy, ch);
            }
        }
    }
    return out;
}

Image resize(const Image& image, int width, int height, bool nearest) {
    Image out(width, height, image.channels());
    const double sx = static_cast<double>(image.width()) / width;
    const double sy = static_cast<double>(image.height()) / height;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5) * sx - 0.5;
            const double v = (y + 0.5) * sy - 0.5;
            if (nearest) {
                const int ix = std::clamp(static_cast<int>(std::lround(u)), 0, image.width() - 1);
                const int iy = std::clamp(static_cast<int>(std::lround(v)), 0, image.height() - 1);
                for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(ix, iy, c);
            } else {
                for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.sample(u, v, c);
            }
        }
    }
    return out;
}

Image crop(const Image& image, int x0, int y0, int width, int height) {
    if (x0 < 0 || y0 < 0 || x0 + width > image.width() || y0 + height > image.height()) {
        throw Error(ErrorCode::InvalidArgument, "crop window outside image");
    }
    Image out(width, height, image.channels());
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(x0 + x, y0 + y, c);
    return out;
}

namespace {

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

}  // namespace

Image pad_reflect_to_multiple(const Image& image, int multiple) { return pad_reflect(image, 0, multiple); }

Image pad_reflect(const Image& image, int margin, int multiple) {
    const int w = (image.width() + 2 * margin + multiple - 1) / multiple * multiple;
    const int h = (image.height() + 2 * margin + multiple - 1) / multiple * multiple;
    Image out(w, h, image.channels());
    for (int y = 0; y < h; ++y) {
        const int sy = reflect_index(y - margin, image.height());
        for (int x = 0; x < w; ++x) {
            const int sx = reflect_index(x - margin, image.width());
            for (int c = 0; c < image.channels(); ++c) out.at(x, y, c) = image.at(sx, sy, c);
        }
    }
    return out;
}

Image luminance(const Image& image) {
    Image out(image.width(), image.height(), 1);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            float sum = 0.0f;
            for (int c = 0; c < image.channels(); ++c) sum += image.at(x, y, c);
            out.at(x, y) = sum / static_cast<float>(image.channels());
        }
    }
    return out;
}

Image gaussian_blur(const Image& image, double sigma) {
    if (sigma <= 0.0) return image;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.5 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        total += kernel[i + radius];
    }
    for (double& k : kernel) k /= total;

    const int w = image.width();
    const int h = image.height();
    Image tmp(w, h, image.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < image.channels(); ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * image.at(reflect_index(x + i, w), y, c);
                tmp.at(x, y, c) = static_cast<float>(acc);
            }
    Image out(w, h, image.channels());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < image.channels(); ++c) {
                double acc = 0.0;
                for (int i = -radius; i <= radius; ++i)
                    acc += kernel[i + radius] * tmp.at(x, reflect_index(y + i, h), c);
                out.at(x, y, c) = static_cast<float>(acc);
            }
    return out;
}

// ---------------------------------------------------------------------------
// File I/O

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
    return f;
}

}  // namespace

void write_png(const Image& image, const std::filesystem::path& path) {
    if (image.channels() != 1 && image.channels() != 3) {
        throw Error(ErrorCode::InvalidArgument, "PNG export supports 1 or 3 channels");
    }
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::Io, "libpng init failed for " + path.string());
    }
    std::vector<png_byte> row(static_cast<std::size_t>(image.width()) * image.channels());
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error(ErrorCode::Io, "PNG write failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, image.width(), image.height(), 8,
                 image.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            for (int c = 0; c < image.channels(); ++c) {
                const float v = std::clamp(image.at(x, y, c), 0.0f, 1.0f);
                row[static_cast<std::size_t>(x) * image.channels() + c] =
                    static_cast<png_byte>(std::lround(v * 255.0f));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::Io, "libpng init failed for " + path.string());
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error(ErrorCode::Io, "PNG read failed: " + path.string());
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int channels = png_get_channels(png, info);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    Image out(w, h, channels);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c)
                out.at(x, y, c) = row[static_cast<std::size_t>(x) * channels + c] / 255.0f;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

// PFM stores rows bottom-to-top, little-endian when the scale is negative.
void write_pfm(const Image& image, const std::filesystem::path& path) {
    if (image.channels() != 1 && image.channels() != 3) {
        throw Error(ErrorCode::InvalidArgument, "PFM export supports 1 or 3 channels");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string());
    out << (image.channels() == 3 ? "PF" : "Pf") << "\n"
        << image.width() << " " << image.height() << "\n-1.0\n";
    const std::size_t row_len = static_cast<std::size_t>(image.width()) * image.channels();
    for (int y = image.height() - 1; y >= 0; --y) {
        out.write(reinterpret_cast<const char*>(image.data().data() + y * row_len),
                  static_cast<std::streamsize>(row_len * sizeof(float)));
    }
    if (!out) throw Error(ErrorCode::Io, "PFM write failed: " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    std::string magic;
    int w = 0;
    int h = 0;
    double scale = 0.0;
    in >> magic >> w >> h >> scale;
    in.get();
    if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || scale >= 0.0) {
        throw Error(ErrorCode::Io, "unsupported PFM header in " + path.string());
    }
    Image out(w, h, magic == "PF" ? 3 : 1);
    const std::size_t row_len = static_cast<std::size_t>(w) * out.channels();
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(out.data().data() + y * row_len),
                static_cast<std::streamsize>(row_len * sizeof(float)));
    }
    if (!in) throw Error(ErrorCode::Io, "truncated PFM: " + path.string());
    return out;
}

Image read_image(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".pfm") return read_pfm(path);
    if (ext == ".png") return read_png(path);
    throw Error(ErrorCode::InvalidArgument, "unsupported image extension: " + path.string());
}

}  // namespace slhsi
