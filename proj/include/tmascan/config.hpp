#pragma once

#include "tmascan/coreprep.hpp"
#include "tmascan/classify.hpp"
#include "tmascan/report.hpp"
#include "tmascan/stitcher.hpp"
#include "tmascan/synthscan.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace tmascan::config {

struct RunSection {
    std::uint64_t seed = 1;
    std::filesystem::path out = "out";
    int jobs = 1;
    int slides = 4;
    int train_slides = 2;
};

struct SlideSection {
    synth::SlideSpec spec; // scores are drawn per slide
    double empty_fraction = 0.1;
    int scan_lines = 0; // 0 fits as many lines as the grid needs
};

struct CoreprepSection {
    coreprep::BalanceOptions balance;
    coreprep::SegmentOptions segment; // core diameter mirrors [slide]
};

struct ClassifySection {
    std::string model = "baseline"; // baseline | import
    std::filesystem::path predictions;   // 4-class CSV for import
    std::filesystem::path predictions_2; // optional 2-class CSV for import
    classify::TrainOptions train;
};

struct TriageSection {
    report::EvaluateOptions evaluate;
    double grid_step = 0.01;
};

struct PipelineConfig {
    RunSection run;
    SlideSection slide;
    synth::ScanConfig scan;
    stitch::StitchOptions stitch;
    CoreprepSection coreprep;
    ClassifySection classify;
    TriageSection triage;
};

// Parses `key = value` lines in named sections. Unknown sections or keys,
// malformed values and missing referenced files raise ConfigError.
PipelineConfig parse(const std::string& text, const std::filesystem::path& base_dir = {});
PipelineConfig load(const std::filesystem::path& path);

// Canonical text form, loadable by parse().
std::string to_ini(const PipelineConfig& config);

} // namespace tmascan::config
