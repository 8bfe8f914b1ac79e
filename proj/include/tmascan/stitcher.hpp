#pragma once

#include "tmascan/imaging.hpp"
#include "tmascan/sequence_io.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace tmascan::stitch {

using imaging::Direction;
using imaging::Raster;

struct CorrelationSeries {
    std::size_t stride = 1;
    std::vector<double> values; // values[i] pairs frames i and i + stride
};

// Pearson correlation of the gray central 80% (10% margin per side) of two
// equally sized frames. Two constant windows correlate 1.0; one constant
// window gives 0.0.
double frame_correlation(const Raster& a, const Raster& b);

CorrelationSeries correlation_series(const io::FrameSource& seq, std::size_t stride = 1, int jobs = 1);

enum class LabelSource { raw_correlation, square_wave_refined };
std::string_view to_string(LabelSource s);

struct MotionLabels {
    std::vector<bool> moving;
    LabelSource source = LabelSource::raw_correlation;

    std::size_t size() const noexcept { return moving.size(); }
};

// Frame i is static when the mean correlation of the frame pairs inside the
// window of frames i-h..i-h+window-1 (h = window/2, clipped to the series)
// reaches theta_static.
MotionLabels classify_motion(const CorrelationSeries& series, int window = 5, double theta_static = 0.985);

struct SquareWaveModel {
    double period = 0.0; // frames
    double duty = 0.0;   // moving fraction of a period
    double phase = 0.0;  // frame at which a moving run starts
    int line_count = 0;
    std::size_t hamming = 0; // distance to the labels it was fitted to

    bool moving(std::size_t frame) const noexcept;
    MotionLabels predict(std::size_t frame_count) const;
};

struct SquareWaveBounds {
    double expected_period = 0.0; // 0 estimates it from the label autocorrelation
    double period_tolerance = 0.2;
    double expected_duty = 0.0; // 0 searches duties 0.01..0.99
    double duty_tolerance = 0.1;
};

struct SquareWaveFit {
    SquareWaveModel model;
    MotionLabels refined;
};

SquareWaveFit fit_square_wave(const MotionLabels& labels, const SquareWaveBounds& bounds = {});

// Dominant period of the labels, from their autocorrelation.
double estimate_period(const MotionLabels& labels);

// Expected period of one serpentine line in frames.
double expected_period(double scan_length_um, double stage_speed_um_s, double frame_rate_hz, int pause_frames,
                       int jump_frames);
// Moving fraction of that period.
double expected_duty(double scan_length_um, double stage_speed_um_s, double frame_rate_hz, int pause_frames,
                     int jump_frames);

struct ScanLineSegment {
    int line = 0;
    std::size_t first = 0; // first and last moving frame, inclusive
    std::size_t last = 0;
    Direction direction = Direction::pos_x;
    int row = 0;

    std::size_t length() const noexcept { return last - first + 1; }
    bool operator==(const ScanLineSegment&) const = default;
};

std::vector<ScanLineSegment> extract_segments(const MotionLabels& labels, const SquareWaveModel& model,
                                              Direction start_direction, int jump_frames = 3);

// Moves each segment boundary, within +-reach frames, onto the nearest frame
// where the pair correlation switches across theta_static.
std::vector<ScanLineSegment> snap_segments(std::vector<ScanLineSegment> segments, const CorrelationSeries& series,
                                           double theta_static = 0.985, int reach = 3);

// Integer shift s in [lo, hi] such that b(c) best matches a(c + s), scored by
// normalized cross-correlation of strip-mean gray profiles over the overlap.
// nullopt when either profile is flat or no shift leaves enough overlap.
std::optional<int> estimate_shift(const Raster& a, const Raster& b, int lo, int hi, int margin = 8);

struct ComposeOptions {
    double stage_speed_um_s = 5000.0;
    double row_pitch_um = 0.0; // 0 selects 0.85 x frame height
    bool refine = true;
    double refine_tolerance = 0.1;
    double pause_weight = 1e-3;
    int jobs = 1;
};

struct FramePlacement {
    std::size_t frame = 0;
    int x = 0;
    int y = 0;
    bool pause = false;
    bool estimated = false; // offset came from image registration
};

struct LinePlacement {
    ScanLineSegment segment;
    int y = 0;
    std::vector<FramePlacement> frames; // ascending x
};

struct StitchedSlide {
    Raster mosaic;
    double scale_um_per_px = 0.0;
    std::vector<LinePlacement> lines;
    io::FrameManifest source;
    std::optional<SquareWaveModel> model;
    double step_px = 0.0;
};

StitchedSlide compose(const io::FrameSource& seq, const std::vector<ScanLineSegment>& segments,
                      const ComposeOptions& options);

struct StitchOptions {
    int window = 5;
    double theta_static = 0.985;
    int jump_frames = 3;
    Direction start_direction = Direction::pos_x;
    SquareWaveBounds bounds;
    ComposeOptions compose;
    bool snap = true;
};

struct StitchReport {
    CorrelationSeries series;
    MotionLabels raw;
    SquareWaveFit fit;
    std::vector<ScanLineSegment> segments;
    StitchedSlide slide;
};

StitchReport stitch(const io::FrameSource& seq, const StitchOptions& options);

// JSON placement report: per-frame offsets, model parameters, fit distance.
std::string placement_json(const StitchReport& report);

} // namespace tmascan::stitch
