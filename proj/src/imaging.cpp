#include "tmascan/imaging.hpp"

#include "tmascan/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tmascan::imaging {

std::string_view to_string(Direction d)
{
    switch (d) {
    case Direction::pos_x:
        return "+x";
    case Direction::neg_x:
        return "-x";
    case Direction::none:
        break;
    }
    return "none";
}

Direction direction_from_string(std::string_view s)
{
    if (s == "+x" || s == "pos_x" || s == "+") {
        return Direction::pos_x;
    }
    if (s == "-x" || s == "neg_x" || s == "-") {
        return Direction::neg_x;
    }
    if (s == "none") {
        return Direction::none;
    }
    throw ParameterError("unknown direction '" + std::string(s) + "' (expected +x or -x)");
}

Direction opposite(Direction d)
{
    switch (d) {
    case Direction::pos_x:
        return Direction::neg_x;
    case Direction::neg_x:
        return Direction::pos_x;
    case Direction::none:
        break;
    }
    return Direction::none;
}

namespace {

void check_shape(int width, int height, double scale)
{
    if (width < 1 || height < 1) {
        throw ParameterError("raster dimensions must be positive, got " + std::to_string(width) + "x" +
                             std::to_string(height));
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw ParameterError("raster scale must be positive");
    }
}

} // namespace

Raster::Raster(int width, int height, double scale_um_per_px, Rgb fill)
    : width_(width), height_(height), scale_(scale_um_per_px)
{
    check_shape(width, height, scale_um_per_px);
    data_.resize(static_cast<std::size_t>(width) * height * channels);
    for (std::size_t i = 0; i < data_.size(); i += channels) {
        data_[i] = fill.r;
        data_[i + 1] = fill.g;
        data_[i + 2] = fill.b;
    }
}

Raster::Raster(int width, int height, double scale_um_per_px, std::vector<std::uint8_t> data)
    : width_(width), height_(height), scale_(scale_um_per_px), data_(std::move(data))
{
    check_shape(width, height, scale_um_per_px);
    if (data_.size() != static_cast<std::size_t>(width) * height * channels) {
        throw ParameterError("raster data length " + std::to_string(data_.size()) + " does not match " +
                             std::to_string(width) + "x" + std::to_string(height) + "x3");
    }
}

std::span<const std::uint8_t> Raster::row(int y) const noexcept
{
    return std::span<const std::uint8_t>(data_).subspan(index(0, y), static_cast<std::size_t>(width_) * channels);
}

std::span<std::uint8_t> Raster::row(int y) noexcept
{
    return std::span<std::uint8_t>(data_).subspan(index(0, y), static_cast<std::size_t>(width_) * channels);
}

Rgb Raster::pixel(int x, int y) const noexcept
{
    const auto i = index(x, y);
    return {data_[i], data_[i + 1], data_[i + 2]};
}

void Raster::set_pixel(int x, int y, Rgb p) noexcept
{
    const auto i = index(x, y);
    data_[i] = p.r;
    data_[i + 1] = p.g;
    data_[i + 2] = p.b;
}

int BlurSpec::width_px(double scale_um_per_px) const
{
    if (!(scale_um_per_px > 0.0)) {
        throw ParameterError("blur scale must be positive");
    }
    if (stage_speed_um_s < 0.0 || exposure_s < 0.0) {
        throw ParameterError("stage speed and exposure must be nonnegative");
    }
    return static_cast<int>(std::lround(width_um() / scale_um_per_px));
}

double effective_scale(double sensor_pixel_um, double magnification)
{
    if (!(sensor_pixel_um > 0.0) || !(magnification > 0.0)) {
        throw ParameterError("sensor pixel size and magnification must be positive");
    }
    return sensor_pixel_um / magnification;
}

int blur_width(const BlurSpec& spec, double scale_um_per_px)
{
    return spec.width_px(scale_um_per_px);
}

BoxTaps box_taps(int width_px, Direction dir)
{
    if (width_px <= 1) {
        return {0, 0};
    }
    if (dir == Direction::neg_x) {
        const int hi = width_px / 2;
        return {hi - width_px + 1, hi};
    }
    const int lo = -(width_px / 2);
    return {lo, lo + width_px - 1};
}

Raster blur_raster(const Raster& img, int width_px, Direction dir)
{
    if (width_px < 0) {
        throw ParameterError("blur width must be nonnegative");
    }
    if (width_px <= 1 || img.empty()) {
        return img;
    }
    const int lo = box_taps(width_px, dir).lo;
    const int w = img.width();
    const std::uint32_t n = static_cast<std::uint32_t>(width_px);

    Raster out(img.width(), img.height(), img.scale());
    // Padded row: index p corresponds to source column p + lo, clamped.
    std::vector<std::uint8_t> padded(static_cast<std::size_t>(w + width_px) * Raster::channels);
    for (int y = 0; y < img.height(); ++y) {
        const auto src = img.row(y);
        for (int p = 0; p < w + width_px; ++p) {
            const int sx = std::clamp(p + lo, 0, w - 1);
            for (int c = 0; c < Raster::channels; ++c) {
                padded[static_cast<std::size_t>(p) * 3 + c] = src[static_cast<std::size_t>(sx) * 3 + c];
            }
        }
        std::uint32_t sum[3] = {0, 0, 0};
        for (int k = 0; k < width_px; ++k) {
            for (int c = 0; c < 3; ++c) {
                sum[c] += padded[static_cast<std::size_t>(k) * 3 + c];
            }
        }
        auto dst = out.row(y);
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                dst[static_cast<std::size_t>(x) * 3 + c] = static_cast<std::uint8_t>((2 * sum[c] + n) / (2 * n));
                sum[c] += padded[static_cast<std::size_t>(x + width_px) * 3 + c];
                sum[c] -= padded[static_cast<std::size_t>(x) * 3 + c];
            }
        }
    }
    return out;
}

Raster blur_raster(const Raster& img, const BlurSpec& spec)
{
    return blur_raster(img, spec.width_px(img.scale()), spec.direction);
}

std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept
{
    return static_cast<std::uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
}

GrayRaster to_gray(const Raster& img)
{
    GrayRaster g{img.width(), img.height(), img.scale(), {}};
    g.data.resize(static_cast<std::size_t>(img.width()) * img.height());
    const auto src = img.bytes();
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        g.data[i] = luminance(src[3 * i], src[3 * i + 1], src[3 * i + 2]);
    }
    return g;
}

Raster crop(const Raster& img, int x, int y, int width, int height)
{
    if (x < 0 || y < 0 || width < 1 || height < 1 || x + width > img.width() || y + height > img.height()) {
        throw ParameterError("crop " + std::to_string(width) + "x" + std::to_string(height) + " at (" +
                             std::to_string(x) + "," + std::to_string(y) + ") exceeds " +
                             std::to_string(img.width()) + "x" + std::to_string(img.height()) + " raster");
    }
    Raster out(width, height, img.scale());
    for (int r = 0; r < height; ++r) {
        const auto src = img.row(y + r).subspan(static_cast<std::size_t>(x) * 3, static_cast<std::size_t>(width) * 3);
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    return out;
}

Raster mirror_x(const Raster& img)
{
    Raster out(img.width(), img.height(), img.scale());
    const int w = img.width();
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < w; ++x) {
            out.set_pixel(w - 1 - x, y, img.pixel(x, y));
        }
    }
    return out;
}

} // namespace tmascan::imaging
