// tmascan: synthetic TMA scan, stitch and triage pipeline.

#include "tmascan/error.hpp"
#include "tmascan/pipeline.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <map>
#include <optional>

namespace {

using namespace tmascan;
namespace fs = std::filesystem;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> jobs;
};

struct StitchFlags {
    std::string input;
    std::string output;
    std::optional<int> window;
    std::optional<double> theta;
    std::string refine;
    std::string start_direction;
};

config::PipelineConfig load_config(const Globals& g)
{
    auto cfg = g.config.empty() ? config::PipelineConfig{} : config::load(g.config);
    if (g.seed) {
        cfg.run.seed = *g.seed;
    }
    if (!g.out.empty()) {
        cfg.run.out = g.out;
    }
    if (g.jobs) {
        if (*g.jobs < 1) {
            throw ConfigError("--jobs must be at least 1");
        }
        cfg.run.jobs = *g.jobs;
    }
    return cfg;
}

void log_line(pipeline::Level level, const std::string& msg)
{
    if (level == pipeline::Level::warn) {
        spdlog::warn("{}", msg);
    } else {
        spdlog::info("{}", msg);
    }
}

void finish(const pipeline::RunReport& report, const config::PipelineConfig& cfg)
{
    const auto path = cfg.run.out / "run_report.json";
    fs::create_directories(cfg.run.out);
    io::write_text(path, pipeline::run_report_json(report, cfg));
    for (const auto& s : report.stages) {
        spdlog::info("{}: {:.2f} s, {:.3f} mm2, {:.3f} mm2/s", s.stage, s.seconds, s.area_mm2, s.throughput_mm2_s());
    }
    spdlog::info("run report: {}", path.string());
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Synthetic tissue microarray scan, stitch and triage pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "INI configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Override [run] seed");
    app.add_option("--out", g.out, "Override [run] out");
    app.add_option("--jobs", g.jobs, "Override [run] jobs");

    using StageFn = pipeline::StageReport (*)(const config::PipelineConfig&, const pipeline::Log&);
    const std::map<std::string, std::pair<StageFn, std::string>> stages{
        {"synth", {pipeline::run_synth, "Render synthetic slides and their layouts"}},
        {"scan", {pipeline::run_scan, "Simulate three serpentine scans per slide"}},
        {"extract", {pipeline::run_extract, "White-balance mosaics, segment and label cores"}},
        {"dataset", {pipeline::run_dataset, "Build 5x512x512 patch stacks"}},
        {"train", {pipeline::run_train, "Train the baseline classifiers"}},
        {"classify", {pipeline::run_classify, "Predict held-out stacks or import predictions"}},
        {"triage", {pipeline::run_triage, "Aggregate repeats and write decisions"}},
        {"report", {pipeline::run_report, "Write sweep, confusion and ROC files"}},
    };
    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, entry] : stages) {
        subs[name] = app.add_subcommand(name, entry.second);
    }
    auto* pipe = app.add_subcommand("pipeline", "Run every stage in order");

    StitchFlags sf;
    auto* st = app.add_subcommand("stitch", "Stitch frame sequences into mosaics");
    st->add_option("--input", sf.input, "Sequence directory; all configured scans when omitted")
        ->check(CLI::ExistingDirectory);
    st->add_option("--output", sf.output, "Output stem for --input (default <out>/stitched/<name>)");
    st->add_option("--window", sf.window, "Motion window in frames");
    st->add_option("--theta-static", sf.theta, "Static correlation threshold");
    st->add_option("--refine", sf.refine, "Registration refinement")->check(CLI::IsMember({"on", "off"}));
    st->add_option("--start-direction", sf.start_direction, "Direction of the first line")
        ->check(CLI::IsMember({"+x", "-x"}));

    CLI11_PARSE(app, argc, argv);

    std::string stage = "config";
    try {
        auto cfg = load_config(g);
        const pipeline::Log log = log_line;
        if (pipe->parsed()) {
            stage = "pipeline";
            finish(pipeline::run_pipeline(cfg, log), cfg);
            return 0;
        }
        if (st->parsed()) {
            stage = "stitch";
            if (sf.window) {
                cfg.stitch.window = *sf.window;
            }
            if (sf.theta) {
                cfg.stitch.theta_static = *sf.theta;
            }
            if (!sf.refine.empty()) {
                cfg.stitch.compose.refine = sf.refine == "on";
            }
            if (!sf.start_direction.empty()) {
                cfg.stitch.start_direction = imaging::direction_from_string(sf.start_direction);
            }
            pipeline::RunReport report;
            if (!sf.input.empty()) {
                const fs::path in(sf.input);
                const fs::path out = sf.output.empty() ? cfg.run.out / "stitched" / in.filename() : fs::path(sf.output);
                const auto opt = pipeline::stitch_options(cfg);
                report.stages.push_back(pipeline::stitch_sequence(in, out, opt, log));
            } else {
                report.stages.push_back(pipeline::run_stitch(cfg, log));
            }
            finish(report, cfg);
            return 0;
        }
        for (const auto& [name, sub] : subs) {
            if (sub->parsed()) {
                stage = name;
                pipeline::RunReport report;
                report.stages.push_back(stages.at(name).first(cfg, log));
                if (name == "report") {
                    report.summary = cfg.run.out / "report" / "summary.json";
                }
                finish(report, cfg);
                return 0;
            }
        }
    } catch (const StageError& e) {
        spdlog::error("{}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}: {}", stage, e.what());
        return 2;
    }
    return 1;
}
