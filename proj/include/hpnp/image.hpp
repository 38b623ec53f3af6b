#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <png.h>

#include "hpnp/error.hpp"

namespace hpnp {

/// Row-major grid of doubles. Reconstructions live on the [0, 255] scale;
/// solver intermediates (dual variables, gradients) may leave that range.
class Image {
public:
    Image() = default;

    Image(std::size_t height, std::size_t width, double fill = 0.0)
        : height_(height), width_(width), data_(height * width, fill)
    {
        if (height == 0 || width == 0)
            throw Error(Errc::invalid_argument, "image dimensions must be positive");
    }

    Image(std::size_t height, std::size_t width, std::vector<double> data)
        : height_(height), width_(width), data_(std::move(data))
    {
        if (height == 0 || width == 0)
            throw Error(Errc::invalid_argument, "image dimensions must be positive");
        if (data_.size() != height * width)
            throw Error(Errc::dimension_mismatch, "pixel count does not match dimensions");
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t row, std::size_t col) { return data_[row * width_ + col]; }
    double operator()(std::size_t row, std::size_t col) const { return data_[row * width_ + col]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Image& other) const noexcept
    {
        return height_ == other.height_ && width_ == other.width_;
    }

    bool all_finite() const
    {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::vector<double> data_;
};

/// Per-pixel coverage counts produced by patch aggregation.
using WeightMap = Image;

inline void require_same_shape(const Image& a, const Image& b, const char* what)
{
    if (!a.same_shape(b))
        throw Error(Errc::dimension_mismatch,
            std::string(what) + ": " + std::to_string(a.height()) + "x" + std::to_string(a.width())
                + " vs " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
}

inline Image clamp(Image img, double lo = 0.0, double hi = 255.0)
{
    for (double& v : img.data())
        v = std::clamp(v, lo, hi);
    return img;
}

/// Crops a height x width window starting at (top, left).
inline Image crop(const Image& img, std::size_t top, std::size_t left, std::size_t height, std::size_t width)
{
    if (top + height > img.height() || left + width > img.width())
        throw Error(Errc::dimension_mismatch, "crop window exceeds image");
    Image out(height, width);
    for (std::size_t r = 0; r < height; ++r)
        for (std::size_t c = 0; c < width; ++c)
            out(r, c) = img(top + r, left + c);
    return out;
}

/// Returns +infinity when the images are identical.
inline double psnr(const Image& reference, const Image& test)
{
    require_same_shape(reference, test, "psnr");
    double sse = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double d = reference[i] - test[i];
        sse += d * d;
    }
    const double mse = sse / static_cast<double>(reference.size());
    if (mse == 0.0)
        return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline std::uint8_t to_byte(double v)
{
    return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0)));
}

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Image decode_pgm(const std::vector<unsigned char>& bytes, const std::string& name)
{
    std::size_t pos = 2;
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_uint = [&]() -> std::size_t {
        skip_space();
        if (pos >= bytes.size())
            throw Error(Errc::truncated_file, name + ": header ends early");
        if (!std::isdigit(bytes[pos]))
            throw Error(Errc::unsupported_format, name + ": malformed PGM header");
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
            if (v > (1u << 30))
                throw Error(Errc::unsupported_format, name + ": PGM header value too large");
            ++pos;
        }
        return v;
    };
    const std::size_t width = read_uint();
    const std::size_t height = read_uint();
    const std::size_t maxval = read_uint();
    if (width == 0 || height == 0 || maxval == 0)
        throw Error(Errc::unsupported_format, name + ": zero PGM dimension or maxval");
    if (maxval > 255)
        throw Error(Errc::unsupported_depth, name + ": maxval " + std::to_string(maxval));
    if (pos >= bytes.size() || !std::isspace(bytes[pos]))
        throw Error(Errc::truncated_file, name + ": missing raster");
    ++pos;
    if (bytes.size() - pos < width * height)
        throw Error(Errc::truncated_file, name + ": raster has " + std::to_string(bytes.size() - pos)
                + " of " + std::to_string(width * height) + " bytes");
    Image img(height, width);
    for (std::size_t i = 0; i < width * height; ++i)
        img[i] = bytes[pos + i];
    return img;
}

inline Image decode_png(const std::vector<unsigned char>& bytes, const std::string& name)
{
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
        throw Error(Errc::unsupported_format, name + ": " + png.message);
    if (png.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA)) {
        png_image_free(&png);
        throw Error(Errc::non_grayscale, name);
    }
    if (png.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&png);
        throw Error(Errc::unsupported_depth, name + ": 16-bit PNG");
    }
    png.format = PNG_FORMAT_GRAY;
    std::vector<unsigned char> raster(PNG_IMAGE_SIZE(png));
    if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
        const std::string msg = png.message;
        png_image_free(&png);
        throw Error(Errc::truncated_file, name + ": " + msg);
    }
    Image img(png.height, png.width);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = raster[i];
    return img;
}

inline std::string lower_extension(const std::filesystem::path& path)
{
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return ext;
}

} // namespace detail

/// Loads an 8-bit grayscale binary PGM (P5) or PNG, detected by content.
inline Image load_image(const std::filesystem::path& path)
{
    const auto bytes = detail::read_file(path);
    const std::string name = path.string();
    static constexpr unsigned char png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_magic, 8) == 0)
        return detail::decode_png(bytes, name);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5')
        return detail::decode_pgm(bytes, name);
    if (bytes.size() < 2)
        throw Error(Errc::truncated_file, name);
    throw Error(Errc::unsupported_format, name);
}

/// Clamps to [0, 255], rounds half away from zero, and writes PGM or PNG
/// depending on the extension.
inline void save_image(const Image& img, const std::filesystem::path& path)
{
    std::vector<unsigned char> bytes(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        bytes[i] = to_byte(img[i]);

    const std::string ext = detail::lower_extension(path);
    if (ext == ".png") {
        png_image png{};
        png.version = PNG_IMAGE_VERSION;
        png.width = static_cast<png_uint_32>(img.width());
        png.height = static_cast<png_uint_32>(img.height());
        png.format = PNG_FORMAT_GRAY;
        if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
            throw Error(Errc::io, path.string() + ": " + png.message);
        return;
    }
    if (ext != ".pgm")
        throw Error(Errc::unsupported_format, path.string() + ": expected .pgm or .png");

    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(Errc::io, "cannot write " + path.string());
    out << "P5\n" << img.width() << ' ' << img.height() << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw Error(Errc::io, "short write to " + path.string());
}

} // namespace hpnp
