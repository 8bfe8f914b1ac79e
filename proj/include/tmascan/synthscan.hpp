#pragma once

#include "tmascan/imaging.hpp"
#include "tmascan/sequence_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace tmascan::synth {

using imaging::Direction;
using imaging::Raster;
using imaging::Rgb;

/// Stain appearance for one score class. Fractions are of the core disk area.
struct StainAppearance {
    double brown_fraction_min = 0.0;
    double brown_fraction_max = 0.0;
    int blob_count_min = 0;
    int blob_count_max = 0;
    double blob_radius_min_um = 3.0;
    double blob_radius_max_um = 6.0;
    double clustering = 0.0; // probability a blob lands near one of a few cluster centres
};

std::array<StainAppearance, 4> default_appearance();

inline constexpr Rgb kBackground{245, 243, 240};
inline constexpr Rgb kTissueBase{200, 150, 180};
inline constexpr Rgb kNucleus{120, 105, 170};

struct SlideSpec {
    int grid_rows = 2;
    int grid_cols = 2;
    double core_diameter_um = 110.0;
    double core_pitch_um = 170.0;
    double margin_um = 20.0;
    double scale_um_per_px = 0.56;
    // Slide extent; 0 means grid plus margins. The grid is centred in the extent.
    double width_um = 0.0;
    double height_um = 0.0;
    // Row-major score per grid cell; nullopt marks an empty cell.
    std::vector<std::optional<int>> scores;
    std::array<StainAppearance, 4> appearance = default_appearance();
    double psf_sigma_px = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
    std::optional<int> score(int row, int col) const { return scores.at(static_cast<std::size_t>(row) * grid_cols + col); }
    double grid_width_um() const noexcept { return grid_cols * core_pitch_um + 2.0 * margin_um; }
    double grid_height_um() const noexcept { return grid_rows * core_pitch_um + 2.0 * margin_um; }
};

struct CoreLayout {
    int row = 0;
    int col = 0;
    double center_x_um = 0.0;
    double center_y_um = 0.0;
    double diameter_um = 0.0;
    int score = 0;
};

struct SlideTruth {
    Raster image;
    std::vector<CoreLayout> layout;
    Rgb background = kBackground;
};

SlideTruth synth_slide(const SlideSpec& spec);

/// `row,col,center_x_um,center_y_um,diameter_um,score`
std::string layout_csv(const std::vector<CoreLayout>& layout);
std::vector<CoreLayout> read_layout_csv(const std::filesystem::path& path);

enum class Phase { scanning, paused, jumping };
std::string_view to_string(Phase p);

struct ScanConfig {
    double stage_speed_um_s = 5000.0;
    double frame_rate_hz = 30.0;
    double exposure_s = 0.0078;
    int camera_width_px = 640;
    int camera_height_px = 480;
    double scale_um_per_px = 0.56;
    double row_pitch_um = 0.0; // 0 selects 0.85 x FOV height
    double pause_s = 0.5;
    int jump_frames = 3;
    int line_count = 0; // 0 scans as many lines as fit the slide
    Direction start_direction = Direction::pos_x;
    double phase_offset_frames = 0.0; // camera/stage time offset in [0, 1) frames

    double fov_width_um() const noexcept { return camera_width_px * scale_um_per_px; }
    double fov_height_um() const noexcept { return camera_height_px * scale_um_per_px; }
    double effective_row_pitch_um() const noexcept { return row_pitch_um > 0.0 ? row_pitch_um : 0.85 * fov_height_um(); }
    double step_um() const noexcept { return stage_speed_um_s / frame_rate_hz; }
    int pause_frames() const;
    void validate() const;
};

/// Smallest slide height that `lines` scan lines cover exactly.
double scanned_height_um(const ScanConfig& config, int lines);

struct StageSample {
    std::size_t frame = 0;
    double x_um = 0.0; // top-left corner of the field of view
    double y_um = 0.0;
    Phase phase = Phase::paused;
    Direction direction = Direction::none;
    int line = 0;
};

struct StageTrajectory {
    std::vector<StageSample> samples;
    double frame_period_s = 0.0;
    int line_count = 0;
    double fov_width_um = 0.0;
    double fov_height_um = 0.0;
    double row_pitch_um = 0.0;
    double duration_s = 0.0;
    double scanned_area_mm2 = 0.0;       // union of the fields of view of all lines
    double acquisition_rate_mm2_s = 0.0; // field-of-view area imaged per second
    double coverage_rate_mm2_s = 0.0;    // scanned_area / duration
    int pause_frames = 0;

    std::size_t size() const noexcept { return samples.size(); }
};

StageTrajectory plan_trajectory(const ScanConfig& config, double extent_width_um, double extent_height_um);

std::string trajectory_csv(const StageTrajectory& traj);

io::FrameManifest make_manifest(const ScanConfig& config, const StageTrajectory& traj);

using FrameSink = std::function<void(std::size_t index, const Raster& frame)>;

/// Renders every trajectory sample. Scanning frames are crops of the slide
/// box-blurred along the scan direction, taken at the mid-exposure
/// position; paused and jumping frames are plain crops.
void render_frames(const SlideTruth& truth, const StageTrajectory& traj, const ScanConfig& config, const FrameSink& sink);

io::InMemorySequence render_sequence(const SlideTruth& truth, const StageTrajectory& traj, const ScanConfig& config);

/// Pixel position of a sample's field of view.
struct PixelPosition {
    int x = 0;
    int y = 0;
};
PixelPosition to_pixels(const StageSample& s, double scale_um_per_px);

} // namespace tmascan::synth
