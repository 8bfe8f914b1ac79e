#include "tmascan/synthscan.hpp"

#include "tmascan/csv.hpp"
#include "tmascan/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace tmascan::synth {

namespace {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t core_seed(std::uint64_t seed, int row, int col)
{
    return splitmix64(seed ^ splitmix64((static_cast<std::uint64_t>(row) << 32) | static_cast<std::uint32_t>(col)));
}

std::uint8_t clamp8(double v)
{
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Separable Gaussian with replicate edges; stands in for the optical PSF.
Raster gaussian_blur(const Raster& img, double sigma)
{
    if (sigma <= 0.0) {
        return img;
    }
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<float> kernel(2 * radius + 1);
    float total = 0.0f;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = static_cast<float>(std::exp(-0.5 * i * i / (sigma * sigma)));
        total += kernel[i + radius];
    }
    for (auto& k : kernel) {
        k /= total;
    }
    const int w = img.width();
    const int h = img.height();
    std::vector<float> tmp(static_cast<std::size_t>(w) * h * 3);
    const auto src = img.bytes();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc[3] = {0, 0, 0};
            for (int k = -radius; k <= radius; ++k) {
                const int sx = std::clamp(x + k, 0, w - 1);
                const std::size_t i = (static_cast<std::size_t>(y) * w + sx) * 3;
                const float kw = kernel[k + radius];
                acc[0] += kw * src[i];
                acc[1] += kw * src[i + 1];
                acc[2] += kw * src[i + 2];
            }
            const std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
            tmp[o] = acc[0];
            tmp[o + 1] = acc[1];
            tmp[o + 2] = acc[2];
        }
    }
    Raster out(w, h, img.scale());
    auto dst = out.bytes();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float acc[3] = {0, 0, 0};
            for (int k = -radius; k <= radius; ++k) {
                const int sy = std::clamp(y + k, 0, h - 1);
                const std::size_t i = (static_cast<std::size_t>(sy) * w + x) * 3;
                const float kw = kernel[k + radius];
                acc[0] += kw * tmp[i];
                acc[1] += kw * tmp[i + 1];
                acc[2] += kw * tmp[i + 2];
            }
            const std::size_t o = (static_cast<std::size_t>(y) * w + x) * 3;
            for (int c = 0; c < 3; ++c) {
                dst[o + c] = clamp8(acc[c]);
            }
        }
    }
    return out;
}

struct Disk {
    double cx = 0.0; // pixels
    double cy = 0.0;
    double r = 0.0;
};

// Paints one core into `img`: tissue base with speckle, nuclei, then brown
// blobs until the target coverage of the disk is reached.
void paint_core(Raster& img, const Disk& disk, const StainAppearance& look, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double scale = img.scale();

    const int x0 = std::max(0, static_cast<int>(std::floor(disk.cx - disk.r)));
    const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(disk.cx + disk.r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(disk.cy - disk.r)));
    const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(disk.cy + disk.r)));
    const int bw = x1 - x0 + 1;
    const int bh = y1 - y0 + 1;
    // 0 outside, 1 tissue, 2 brown
    std::vector<std::uint8_t> state(static_cast<std::size_t>(bw) * bh, 0);
    auto inside = [&](double x, double y) {
        const double dx = x + 0.5 - disk.cx;
        const double dy = y + 0.5 - disk.cy;
        return dx * dx + dy * dy <= disk.r * disk.r;
    };

    std::int64_t disk_area = 0;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (!inside(x, y)) {
                continue;
            }
            ++disk_area;
            state[static_cast<std::size_t>(y - y0) * bw + (x - x0)] = 1;
            const double n = (unit(rng) - 0.5) * 6.0;
            img.set_pixel(x, y, {clamp8(kTissueBase.r + n), clamp8(kTissueBase.g + n), clamp8(kTissueBase.b + n)});
        }
    }

    auto random_in_disk = [&](double radius_fraction) {
        for (;;) {
            const double u = 2.0 * unit(rng) - 1.0;
            const double v = 2.0 * unit(rng) - 1.0;
            if (u * u + v * v <= 1.0) {
                return std::pair{disk.cx + u * disk.r * radius_fraction, disk.cy + v * disk.r * radius_fraction};
            }
        }
    };

    auto stamp = [&](double cx, double cy, double r, Rgb color, bool brown) -> std::int64_t {
        std::int64_t added = 0;
        const int sx0 = std::max(x0, static_cast<int>(std::floor(cx - r)));
        const int sx1 = std::min(x1, static_cast<int>(std::ceil(cx + r)));
        const int sy0 = std::max(y0, static_cast<int>(std::floor(cy - r)));
        const int sy1 = std::min(y1, static_cast<int>(std::ceil(cy + r)));
        for (int y = sy0; y <= sy1; ++y) {
            for (int x = sx0; x <= sx1; ++x) {
                auto& s = state[static_cast<std::size_t>(y - y0) * bw + (x - x0)];
                if (s == 0) {
                    continue;
                }
                const double dx = x + 0.5 - cx;
                const double dy = y + 0.5 - cy;
                if (dx * dx + dy * dy > r * r) {
                    continue;
                }
                if (brown && s != 2) {
                    s = 2;
                    ++added;
                }
                img.set_pixel(x, y, color);
            }
        }
        return added;
    };

    // Nuclei: roughly one per 400 px^2 of tissue.
    const auto nuclei = static_cast<int>(disk_area / 400);
    for (int i = 0; i < nuclei; ++i) {
        const auto [cx, cy] = random_in_disk(1.0);
        stamp(cx, cy, 1.5 + unit(rng), kNucleus, false);
    }

    const double target = look.brown_fraction_min + unit(rng) * (look.brown_fraction_max - look.brown_fraction_min);
    const auto target_px = static_cast<std::int64_t>(target * static_cast<double>(disk_area));
    std::array<std::pair<double, double>, 3> clusters{};
    for (auto& c : clusters) {
        c = random_in_disk(0.6);
    }
    std::normal_distribution<double> spread(0.0, 0.25 * disk.r);
    std::int64_t brown_px = 0;
    for (int blob = 0; blob < look.blob_count_max; ++blob) {
        if (blob >= look.blob_count_min && brown_px >= target_px) {
            break;
        }
        double cx = 0.0;
        double cy = 0.0;
        if (unit(rng) < look.clustering) {
            const auto& c = clusters[static_cast<std::size_t>(unit(rng) * clusters.size()) % clusters.size()];
            cx = c.first + spread(rng);
            cy = c.second + spread(rng);
        } else {
            std::tie(cx, cy) = random_in_disk(1.0);
        }
        const double r_um = look.blob_radius_min_um + unit(rng) * (look.blob_radius_max_um - look.blob_radius_min_um);
        const double red = 140.0 + 35.0 * unit(rng);
        const Rgb color{clamp8(red), clamp8(red * (0.58 + 0.06 * unit(rng))), clamp8(red * (0.30 + 0.06 * unit(rng)))};
        brown_px += stamp(cx, cy, r_um / scale, color, true);
    }
}

} // namespace

std::array<StainAppearance, 4> default_appearance()
{
    return {{
        {0.00, 0.03, 0, 8, 3.0, 6.0, 0.0},
        {0.08, 0.14, 2, 80, 3.0, 7.0, 0.25},
        {0.22, 0.32, 4, 200, 4.0, 9.0, 0.5},
        {0.45, 0.58, 8, 500, 5.0, 11.0, 0.8},
    }};
}

void SlideSpec::validate() const
{
    if (grid_rows < 1 || grid_cols < 1) {
        throw ParameterError("grid dimensions must be at least 1x1");
    }
    if (!(core_diameter_um > 0.0) || !(core_pitch_um > core_diameter_um)) {
        throw ParameterError("core pitch must exceed core diameter, which must be positive");
    }
    if (margin_um < 0.0 || !(scale_um_per_px > 0.0)) {
        throw ParameterError("margin must be nonnegative and scale positive");
    }
    if (scores.size() != static_cast<std::size_t>(grid_rows) * grid_cols) {
        throw ParameterError("score assignment has " + std::to_string(scores.size()) + " cells, grid has " +
                             std::to_string(grid_rows * grid_cols));
    }
    for (const auto& s : scores) {
        if (s && (*s < 0 || *s > 3)) {
            throw ParameterError("scores must lie in {0,1,2,3}");
        }
    }
    for (std::size_t k = 1; k < appearance.size(); ++k) {
        if (!(appearance[k].brown_fraction_min > appearance[k - 1].brown_fraction_max)) {
            throw ParameterError("brown target fractions must strictly increase with score");
        }
    }
    if ((width_um > 0.0 && width_um < grid_width_um()) || (height_um > 0.0 && height_um < grid_height_um())) {
        throw ParameterError("grid of " + std::to_string(grid_rows) + "x" + std::to_string(grid_cols) +
                             " cores does not fit the slide extent");
    }
    const double w = (width_um > 0.0 ? width_um : grid_width_um()) / scale_um_per_px;
    const double h = (height_um > 0.0 ? height_um : grid_height_um()) / scale_um_per_px;
    if (w * h > 4.0e8) {
        throw ParameterError("slide image would exceed 4e8 pixels");
    }
}

SlideTruth synth_slide(const SlideSpec& spec)
{
    spec.validate();
    const double width_um = spec.width_um > 0.0 ? spec.width_um : spec.grid_width_um();
    const double height_um = spec.height_um > 0.0 ? spec.height_um : spec.grid_height_um();
    const double s = spec.scale_um_per_px;
    const int w = static_cast<int>(std::lround(width_um / s));
    const int h = static_cast<int>(std::lround(height_um / s));

    SlideTruth truth{Raster(w, h, s, kBackground), {}, kBackground};
    const double off_x = (width_um - spec.grid_cols * spec.core_pitch_um) / 2.0;
    const double off_y = (height_um - spec.grid_rows * spec.core_pitch_um) / 2.0;
    for (int r = 0; r < spec.grid_rows; ++r) {
        for (int c = 0; c < spec.grid_cols; ++c) {
            const auto score = spec.score(r, c);
            if (!score) {
                continue;
            }
            CoreLayout core{r,
                            c,
                            off_x + (c + 0.5) * spec.core_pitch_um,
                            off_y + (r + 0.5) * spec.core_pitch_um,
                            spec.core_diameter_um,
                            *score};
            const Disk disk{core.center_x_um / s, core.center_y_um / s, core.diameter_um / (2.0 * s)};
            paint_core(truth.image, disk, spec.appearance[static_cast<std::size_t>(*score)],
                       core_seed(spec.seed, r, c));
            truth.layout.push_back(core);
        }
    }
    truth.image = gaussian_blur(truth.image, spec.psf_sigma_px);
    return truth;
}

std::string layout_csv(const std::vector<CoreLayout>& layout)
{
    std::ostringstream out;
    out << "row,col,center_x_um,center_y_um,diameter_um,score\n";
    for (const auto& c : layout) {
        out << c.row << ',' << c.col << ',' << csv::fixed(c.center_x_um, 3) << ',' << csv::fixed(c.center_y_um, 3)
            << ',' << csv::fixed(c.diameter_um, 3) << ',' << c.score << '\n';
    }
    return out.str();
}

std::vector<CoreLayout> read_layout_csv(const std::filesystem::path& path)
{
    const auto table = csv::read(path);
    const std::array<const char*, 6> names{"row", "col", "center_x_um", "center_y_um", "diameter_um", "score"};
    std::array<int, 6> idx{};
    for (std::size_t i = 0; i < names.size(); ++i) {
        idx[i] = table.column(names[i]);
        if (idx[i] < 0) {
            throw FormatError(path.string() + ": missing column '" + names[i] + "'", 0);
        }
    }
    std::vector<CoreLayout> out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        try {
            out.push_back({std::stoi(row.at(idx[0])), std::stoi(row.at(idx[1])), std::stod(row.at(idx[2])),
                           std::stod(row.at(idx[3])), std::stod(row.at(idx[4])), std::stoi(row.at(idx[5]))});
        } catch (const std::exception&) {
            throw FormatError(path.string() + ": bad layout row at line " + std::to_string(table.line_numbers[r]), 0);
        }
    }
    return out;
}

std::string_view to_string(Phase p)
{
    switch (p) {
    case Phase::scanning:
        return "scanning";
    case Phase::paused:
        return "paused";
    case Phase::jumping:
        return "jumping";
    }
    return "paused";
}

int ScanConfig::pause_frames() const
{
    return static_cast<int>(std::lround(pause_s * frame_rate_hz));
}

void ScanConfig::validate() const
{
    if (!(stage_speed_um_s > 0.0)) {
        throw ParameterError("stage speed must be positive");
    }
    if (!(frame_rate_hz > 0.0)) {
        throw ParameterError("frame rate must be positive");
    }
    if (exposure_s < 0.0 || exposure_s > 1.0 / frame_rate_hz) {
        throw ParameterError("exposure must lie in [0, frame period]");
    }
    if (camera_width_px < 1 || camera_height_px < 1 || !(scale_um_per_px > 0.0)) {
        throw ParameterError("camera dimensions and scale must be positive");
    }
    if (pause_s < 0.0 || jump_frames < 0 || line_count < 0) {
        throw ParameterError("pause, jump frames and line count must be nonnegative");
    }
    const double pitch = effective_row_pitch_um();
    const double fov_h = fov_height_um();
    // Row overlap in [0, 20%] of the field-of-view height.
    if (pitch > fov_h * (1.0 + 1e-9) || pitch < 0.8 * fov_h * (1.0 - 1e-9)) {
        throw ParameterError("row pitch must give between 0% and 20% row overlap");
    }
    if (phase_offset_frames < 0.0 || phase_offset_frames >= 1.0) {
        throw ParameterError("phase offset must lie in [0, 1) frames");
    }
    if (start_direction == Direction::none) {
        throw ParameterError("start direction must be +x or -x");
    }
}

double scanned_height_um(const ScanConfig& config, int lines)
{
    return (lines - 1) * config.effective_row_pitch_um() + config.fov_height_um();
}

StageTrajectory plan_trajectory(const ScanConfig& config, double extent_width_um, double extent_height_um)
{
    config.validate();
    const double fov_w = config.fov_width_um();
    const double fov_h = config.fov_height_um();
    const double pitch = config.effective_row_pitch_um();
    const double scan_len = extent_width_um - fov_w;
    if (!(scan_len > 0.0)) {
        throw ParameterError("slide width " + std::to_string(extent_width_um) +
                             " um leaves a zero-length scan line for a " + std::to_string(fov_w) + " um field of view");
    }
    if (extent_height_um < fov_h) {
        throw ParameterError("slide height is smaller than the field of view");
    }
    const int max_lines = static_cast<int>(std::floor((extent_height_um - fov_h) / pitch + 1e-9)) + 1;
    const int lines = config.line_count > 0 ? config.line_count : max_lines;
    if (lines > max_lines) {
        throw ParameterError(std::to_string(lines) + " scan lines exceed the slide height (at most " +
                             std::to_string(max_lines) + ")");
    }

    // Timeline in frame units.
    struct Span {
        double start = 0.0;
        double length = 0.0;
        Phase phase = Phase::paused;
        Direction dir = Direction::none;
        int line = 0;
        double x0 = 0.0, x1 = 0.0, y0 = 0.0, y1 = 0.0;
    };
    const double fps = config.frame_rate_hz;
    const double pause_f = config.pause_s * fps;
    const double scan_f = scan_len / config.stage_speed_um_s * fps;
    std::vector<Span> spans;
    double t = 0.0;
    Direction dir = config.start_direction;
    for (int line = 0; line < lines; ++line) {
        const double y = line * pitch;
        const double xs = dir == Direction::pos_x ? 0.0 : scan_len;
        const double xe = dir == Direction::pos_x ? scan_len : 0.0;
        if (pause_f > 0.0) {
            spans.push_back({t, pause_f, Phase::paused, Direction::none, line, xs, xs, y, y});
            t += pause_f;
        }
        spans.push_back({t, scan_f, Phase::scanning, dir, line, xs, xe, y, y});
        t += scan_f;
        if (pause_f > 0.0) {
            spans.push_back({t, pause_f, Phase::paused, Direction::none, line, xe, xe, y, y});
            t += pause_f;
        }
        if (line + 1 < lines && config.jump_frames > 0) {
            spans.push_back({t, static_cast<double>(config.jump_frames), Phase::jumping, Direction::none, line, xe, xe,
                             y, y + pitch});
            t += config.jump_frames;
        }
        dir = imaging::opposite(dir);
    }

    StageTrajectory traj;
    traj.frame_period_s = 1.0 / fps;
    traj.line_count = lines;
    traj.fov_width_um = fov_w;
    traj.fov_height_um = fov_h;
    traj.row_pitch_um = pitch;
    traj.pause_frames = config.pause_frames();
    std::size_t span_index = 0;
    for (std::size_t k = 0;; ++k) {
        const double u = static_cast<double>(k) + config.phase_offset_frames;
        if (u >= t) {
            break;
        }
        while (span_index + 1 < spans.size() && u >= spans[span_index].start + spans[span_index].length) {
            ++span_index;
        }
        const Span& sp = spans[span_index];
        const double f = sp.length > 0.0 ? std::clamp((u - sp.start) / sp.length, 0.0, 1.0) : 0.0;
        StageSample s;
        s.frame = k;
        s.x_um = sp.x0 + (sp.x1 - sp.x0) * f;
        s.y_um = sp.y0 + (sp.y1 - sp.y0) * f;
        s.phase = sp.phase;
        s.direction = sp.dir;
        s.line = sp.line;
        traj.samples.push_back(s);
    }
    traj.duration_s = static_cast<double>(traj.samples.size()) * traj.frame_period_s;
    traj.scanned_area_mm2 = extent_width_um * scanned_height_um(config, lines) * 1e-6;
    traj.acquisition_rate_mm2_s = fps * fov_w * fov_h * 1e-6;
    traj.coverage_rate_mm2_s = traj.duration_s > 0.0 ? traj.scanned_area_mm2 / traj.duration_s : 0.0;
    return traj;
}

std::string trajectory_csv(const StageTrajectory& traj)
{
    std::ostringstream out;
    out << "frame,x_um,y_um,phase,direction,line\n";
    for (const auto& s : traj.samples) {
        out << s.frame << ',' << csv::fixed(s.x_um, 4) << ',' << csv::fixed(s.y_um, 4) << ',' << to_string(s.phase)
            << ',' << imaging::to_string(s.direction) << ',' << s.line << '\n';
    }
    return out.str();
}

io::FrameManifest make_manifest(const ScanConfig& config, const StageTrajectory& traj)
{
    io::FrameManifest m;
    m.frame_count = traj.size();
    m.width = config.camera_width_px;
    m.height = config.camera_height_px;
    m.frame_period_s = 1.0 / config.frame_rate_hz;
    m.exposure_s = config.exposure_s;
    m.scale_um_per_px = config.scale_um_per_px;
    m.trajectory = "trajectory.csv";
    return m;
}

PixelPosition to_pixels(const StageSample& s, double scale_um_per_px)
{
    return {static_cast<int>(std::lround(s.x_um / scale_um_per_px)),
            static_cast<int>(std::lround(s.y_um / scale_um_per_px))};
}

void render_frames(const SlideTruth& truth, const StageTrajectory& traj, const ScanConfig& config, const FrameSink& sink)
{
    const Raster& slide = truth.image;
    const double scale = slide.scale();
    if (std::abs(scale - config.scale_um_per_px) > 1e-9 * scale) {
        throw ParameterError("slide scale differs from camera scale");
    }
    const int fw = config.camera_width_px;
    const int fh = config.camera_height_px;
    const int blur_px = imaging::BlurSpec{config.stage_speed_um_s, config.exposure_s, Direction::pos_x}.width_px(scale);

    // The blurred band of the current scan line, keyed by (y, direction).
    int band_y = -1;
    Direction band_dir = Direction::none;
    Raster band;

    for (const auto& s : traj.samples) {
        const auto [x, y] = to_pixels(s, scale);
        if (x < 0 || y < 0 || x + fw > slide.width() || y + fh > slide.height()) {
            throw RenderError("field of view at (" + std::to_string(x) + "," + std::to_string(y) +
                                  ") px lies outside the " + std::to_string(slide.width()) + "x" +
                                  std::to_string(slide.height()) + " slide",
                              s.frame);
        }
        if (s.phase != Phase::scanning || blur_px <= 1) {
            sink(s.frame, imaging::crop(slide, x, y, fw, fh));
            continue;
        }
        if (band_y != y || band_dir != s.direction) {
            band = imaging::blur_raster(imaging::crop(slide, 0, y, slide.width(), fh), blur_px, s.direction);
            band_y = y;
            band_dir = s.direction;
        }
        sink(s.frame, imaging::crop(band, x, 0, fw, fh));
    }
}

io::InMemorySequence render_sequence(const SlideTruth& truth, const StageTrajectory& traj, const ScanConfig& config)
{
    std::vector<Raster> frames;
    frames.reserve(traj.size());
    render_frames(truth, traj, config, [&](std::size_t, const Raster& f) { frames.push_back(f); });
    return io::InMemorySequence(make_manifest(config, traj), std::move(frames));
}

} // namespace tmascan::synth
