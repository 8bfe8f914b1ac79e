#pragma once

#include "tmascan/config.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tmascan::pipeline {

namespace fs = std::filesystem;

enum class Level { info, warn };
using Log = std::function<void(Level, const std::string&)>;

struct StageReport {
    std::string stage;
    double seconds = 0.0;
    double area_mm2 = 0.0; // slide area processed by the stage
    std::vector<fs::path> artifacts;

    double throughput_mm2_s() const { return seconds > 0.0 ? area_mm2 / seconds : 0.0; }
};

struct RunReport {
    std::vector<StageReport> stages;
    std::optional<fs::path> summary;
};

// Output layout under the run directory.
struct Layout {
    fs::path root;

    fs::path slides() const { return root / "slides"; }
    fs::path scans() const { return root / "scans"; }
    fs::path stitched() const { return root / "stitched"; }
    fs::path cores() const { return root / "cores"; }
    fs::path stacks() const { return root / "stacks"; }
    fs::path model() const { return root / "model"; }
    fs::path predictions() const { return root / "predictions"; }
    fs::path triage() const { return root / "triage"; }
    fs::path report() const { return root / "report"; }
};

std::string slide_id(int index);
std::string scan_key(const std::string& slide, int repeat);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b);

// Grid scores for one slide: corner cells always hold a core, other cells
// are empty with the configured probability; scores cycle through 0..3 in
// a seeded random order.
std::vector<std::optional<int>> draw_scores(const config::PipelineConfig& cfg, int slide_index);

// Slide spec with scores and the height fitted to whole scan lines.
synth::SlideSpec slide_spec(const config::PipelineConfig& cfg, int slide_index);
int scan_lines(const config::PipelineConfig& cfg);
// Stage/camera time offset of one repeat, in [0, 1) frames.
double phase_offset(const config::PipelineConfig& cfg, int slide_index, int repeat);
stitch::StitchOptions stitch_options(const config::PipelineConfig& cfg);

StageReport run_synth(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_scan(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_stitch(const config::PipelineConfig& cfg, const Log& log = {});
// Stitches one sequence directory into `<out_stem>.raw/.json` plus `<out_stem>_placement.json`.
StageReport stitch_sequence(const fs::path& input, const fs::path& out_stem, const stitch::StitchOptions& options,
                            const Log& log = {});
StageReport run_extract(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_dataset(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_train(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_classify(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_triage(const config::PipelineConfig& cfg, const Log& log = {});
StageReport run_report(const config::PipelineConfig& cfg, const Log& log = {});
RunReport run_pipeline(const config::PipelineConfig& cfg, const Log& log = {});

std::string run_report_json(const RunReport& report, const config::PipelineConfig& cfg);

} // namespace tmascan::pipeline
