#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace tmascan::imaging {

enum class Direction { none, pos_x, neg_x };

std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view s);
Direction opposite(Direction d);

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
    bool operator==(const Rgb&) const = default;
};

/// 8-bit RGB image, row-major and channel-interleaved, with the physical
/// size of one pixel at the sample plane.
class Raster {
public:
    static constexpr int channels = 3;

    Raster() = default;
    Raster(int width, int height, double scale_um_per_px, Rgb fill = {});
    Raster(int width, int height, double scale_um_per_px, std::vector<std::uint8_t> data);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double scale() const noexcept { return scale_; }
    bool empty() const noexcept { return data_.empty(); }
    std::size_t byte_size() const noexcept { return data_.size(); }

    std::span<const std::uint8_t> bytes() const noexcept { return data_; }
    std::span<std::uint8_t> bytes() noexcept { return data_; }
    std::span<const std::uint8_t> row(int y) const noexcept;
    std::span<std::uint8_t> row(int y) noexcept;

    std::uint8_t at(int x, int y, int c) const noexcept { return data_[index(x, y) + c]; }
    std::uint8_t& at(int x, int y, int c) noexcept { return data_[index(x, y) + c]; }
    Rgb pixel(int x, int y) const noexcept;
    void set_pixel(int x, int y, Rgb p) noexcept;

    bool operator==(const Raster&) const = default;

private:
    std::size_t index(int x, int y) const noexcept
    {
        return (static_cast<std::size_t>(y) * width_ + x) * channels;
    }

    int width_ = 0;
    int height_ = 0;
    double scale_ = 1.0;
    std::vector<std::uint8_t> data_;
};

struct GrayRaster {
    int width = 0;
    int height = 0;
    double scale = 1.0;
    std::vector<std::uint8_t> data;

    std::uint8_t at(int x, int y) const noexcept { return data[static_cast<std::size_t>(y) * width + x]; }
};

/// Stage speed and exposure of a moving acquisition; the blur extent is
/// their product.
struct BlurSpec {
    double stage_speed_um_s = 0.0;
    double exposure_s = 0.0;
    Direction direction = Direction::pos_x;

    double width_um() const noexcept { return stage_speed_um_s * exposure_s; }
    int width_px(double scale_um_per_px) const;
};

/// Sample-plane pixel size for a sensor pixel pitch behind a magnifying objective.
double effective_scale(double sensor_pixel_um, double magnification);

int blur_width(const BlurSpec& spec, double scale_um_per_px);

/// Tap offsets of the discrete box used for a blur of `width_px` samples in
/// direction `dir`: the box covers [lo, hi] relative to the output sample.
/// Odd widths are centred; for even widths +x leans one sample left and
/// -x one sample right, so the two directions are mirror images.
struct BoxTaps {
    int lo = 0;
    int hi = 0;
};
BoxTaps box_taps(int width_px, Direction dir);

/// Moving average along x with replicate edges, round-half-up back to 8 bits.
/// Widths 0 and 1 return the input unchanged.
Raster blur_raster(const Raster& img, int width_px, Direction dir);
Raster blur_raster(const Raster& img, const BlurSpec& spec);

/// Rec.601 luminance, rounded to nearest.
std::uint8_t luminance(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept;
GrayRaster to_gray(const Raster& img);

Raster crop(const Raster& img, int x, int y, int width, int height);
Raster mirror_x(const Raster& img);

} // namespace tmascan::imaging
