#include "tmascan/pipeline.hpp"

#include "tmascan/csv.hpp"
#include "tmascan/error.hpp"
#include "tmascan/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace tmascan::pipeline {

using config::PipelineConfig;
using nlohmann::json;

namespace {

std::uint64_t splitmix(std::uint64_t& state)
{
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void emit(const Log& log, Level level, const std::string& msg)
{
    if (log) {
        log(level, msg);
    }
}

class Timer {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// Runs body and rewraps any failure with the stage name and file.
template <typename F>
auto in_stage(const std::string& stage, const fs::path& file, F&& body)
{
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, file.string() + ": " + e.what());
    }
}

void require_file(const std::string& stage, const fs::path& p)
{
    if (!fs::exists(p)) {
        throw StageError(stage, p.string() + ": missing input");
    }
}

struct ScanItem {
    int slide = 0;
    int repeat = 0;
    std::string id;
    std::string key;
};

std::vector<ScanItem> scan_items(const PipelineConfig& cfg)
{
    std::vector<ScanItem> out;
    for (int s = 0; s < cfg.run.slides; ++s) {
        for (int r = 0; r < triage::kRepeats; ++r) {
            out.push_back({s, r, slide_id(s), scan_key(slide_id(s), r)});
        }
    }
    return out;
}

double area_mm2(const imaging::Raster& img)
{
    return img.width() * img.scale() * img.height() * img.scale() * 1e-6;
}

double box_area_mm2(const coreprep::Box& b, double scale)
{
    return b.width * scale * b.height * scale * 1e-6;
}

synth::ScanConfig scan_config(const PipelineConfig& cfg, int slide, int repeat)
{
    auto scan = cfg.scan;
    scan.line_count = scan_lines(cfg);
    scan.phase_offset_frames = phase_offset(cfg, slide, repeat);
    return scan;
}

// stacks/index.csv
struct StackEntry {
    std::string key;
    std::string core_id;
    int repeat = 0;
    int slide = 0;
    std::optional<int> label;
    double area_mm2 = 0.0;
};

const char* kIndexHeader = "key,core_id,repeat,slide,label,area_mm2";

std::vector<StackEntry> read_index(const Layout& L, const std::string& stage)
{
    const auto path = L.stacks() / "index.csv";
    require_file(stage, path);
    return in_stage(stage, path, [&] {
        const auto t = csv::read(path);
        std::vector<StackEntry> out;
        for (std::size_t i = 0; i < t.rows.size(); ++i) {
            const auto& r = t.rows[i];
            if (r.size() != 6) {
                throw Error("line " + std::to_string(t.line_numbers[i]) + " needs 6 fields");
            }
            StackEntry e;
            e.key = r[0];
            e.core_id = r[1];
            e.repeat = std::stoi(r[2]);
            e.slide = std::stoi(r[3]);
            if (!r[4].empty()) {
                e.label = std::stoi(r[4]);
            }
            e.area_mm2 = std::stod(r[5]);
            out.push_back(std::move(e));
        }
        return out;
    });
}

std::vector<classify::FeatureVector> stack_features(const Layout& L, const std::vector<StackEntry>& entries,
                                                    int jobs, const std::string& stage)
{
    std::vector<classify::FeatureVector> out(entries.size());
    parallel_for(0, entries.size(), jobs, [&](std::size_t i) {
        const auto stem = L.stacks() / entries[i].key;
        out[i] = in_stage(stage, stem, [&] { return classify::extract_features(coreprep::read_stack(stem)); });
    });
    return out;
}

std::map<std::string, int> truth_map(const std::vector<StackEntry>& entries)
{
    std::map<std::string, int> out;
    for (const auto& e : entries) {
        if (e.label) {
            out[e.core_id] = *e.label;
        }
    }
    return out;
}

// Cores missing a repeat (dropped by segmentation) cannot be triaged.
std::vector<classify::Prediction> complete_only(std::vector<classify::Prediction> preds, const Log& log)
{
    std::map<std::string, std::set<int>> seen;
    for (const auto& p : preds) {
        seen[p.core_id].insert(p.repeat);
    }
    std::set<std::string> drop;
    for (const auto& [id, reps] : seen) {
        if (reps.size() != triage::kRepeats) {
            drop.insert(id);
            emit(log, Level::warn, "core " + id + " has " + std::to_string(reps.size()) + " of 3 repeats; skipped");
        }
    }
    std::erase_if(preds, [&](const auto& p) { return drop.count(p.core_id) > 0; });
    return preds;
}

report::TriageResults compute_results(const PipelineConfig& cfg, const std::string& stage, const Log& log)
{
    const Layout L{cfg.run.out};
    const auto truths = truth_map(read_index(L, stage));
    std::map<std::string, int> truths2;
    for (const auto& [id, t] : truths) {
        truths2[id] = triage::binarize(t);
    }

    const auto p4 = L.predictions() / "predictions_4.csv";
    const auto p2 = L.predictions() / "predictions_2.csv";
    require_file(stage, p4);
    auto sets4 = in_stage(stage, p4, [&] {
        return triage::make_repeat_sets(complete_only(classify::import_predictions(p4, 4), log), truths);
    });
    std::vector<triage::RepeatSet> sets2;
    if (fs::exists(p2)) {
        sets2 = in_stage(stage, p2, [&] {
            return triage::make_repeat_sets(complete_only(classify::import_predictions(p2, 2), log), truths2);
        });
    }
    for (const auto& s : sets4) {
        if (!s.truth) {
            throw StageError(stage, p4.string() + ": core " + s.core_id + " has no ground-truth label");
        }
    }
    return in_stage(stage, p4, [&] { return report::evaluate(sets4, std::move(sets2), cfg.triage.evaluate); });
}

void write_predictions(const fs::path& path, std::vector<classify::Prediction> preds)
{
    std::sort(preds.begin(), preds.end(), [](const auto& a, const auto& b) {
        return std::tie(a.core_id, a.repeat) < std::tie(b.core_id, b.repeat);
    });
    io::write_text(path, classify::predictions_csv(preds));
}

} // namespace

std::string slide_id(int index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "slide%02d", index);
    return buf;
}

std::string scan_key(const std::string& slide, int repeat)
{
    return slide + "_rep" + std::to_string(repeat);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
{
    std::uint64_t s = seed;
    std::uint64_t h = splitmix(s);
    s = h ^ a;
    h = splitmix(s);
    s = h ^ b;
    return splitmix(s);
}

std::vector<std::optional<int>> draw_scores(const PipelineConfig& cfg, int slide_index)
{
    const int rows = cfg.slide.spec.grid_rows;
    const int cols = cfg.slide.spec.grid_cols;
    std::mt19937_64 rng(derive_seed(cfg.run.seed, static_cast<std::uint64_t>(slide_index), 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::optional<int>> scores(static_cast<std::size_t>(rows) * cols);
    std::vector<std::size_t> filled;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const bool corner = (r == 0 || r == rows - 1) && (c == 0 || c == cols - 1);
            const double draw = u(rng);
            if (corner || draw >= cfg.slide.empty_fraction) {
                filled.push_back(static_cast<std::size_t>(r) * cols + c);
            }
        }
    }
    std::vector<int> classes(filled.size());
    for (std::size_t i = 0; i < classes.size(); ++i) {
        classes[i] = static_cast<int>(i % 4);
    }
    for (std::size_t i = classes.size(); i > 1; --i) {
        std::swap(classes[i - 1], classes[rng() % i]);
    }
    for (std::size_t i = 0; i < filled.size(); ++i) {
        scores[filled[i]] = classes[i];
    }
    return scores;
}

int scan_lines(const PipelineConfig& cfg)
{
    if (cfg.slide.scan_lines > 0) {
        return cfg.slide.scan_lines;
    }
    const double need = cfg.slide.spec.grid_height_um();
    int lines = 1;
    while (synth::scanned_height_um(cfg.scan, lines) < need) {
        ++lines;
    }
    return lines;
}

synth::SlideSpec slide_spec(const PipelineConfig& cfg, int slide_index)
{
    auto spec = cfg.slide.spec;
    spec.scores = draw_scores(cfg, slide_index);
    spec.seed = derive_seed(cfg.run.seed, static_cast<std::uint64_t>(slide_index), 0);
    const double scanned = synth::scanned_height_um(cfg.scan, scan_lines(cfg));
    if (scanned < spec.grid_height_um()) {
        throw ConfigError("slide.scan_lines = " + std::to_string(cfg.slide.scan_lines) + " covers " +
                          csv::fixed(scanned, 1) + " um, less than the grid height " +
                          csv::fixed(spec.grid_height_um(), 1) + " um");
    }
    spec.width_um = spec.grid_width_um();
    spec.height_um = scanned;
    return spec;
}

double phase_offset(const PipelineConfig& cfg, int slide_index, int repeat)
{
    const auto v = derive_seed(cfg.run.seed, static_cast<std::uint64_t>(slide_index), 2 + static_cast<std::uint64_t>(repeat));
    return static_cast<double>(v >> 11) * 0x1.0p-53;
}

stitch::StitchOptions stitch_options(const PipelineConfig& cfg)
{
    auto opt = cfg.stitch;
    const double scan_len = cfg.slide.spec.grid_width_um() - cfg.scan.fov_width_um();
    opt.bounds.expected_period = stitch::expected_period(scan_len, cfg.scan.stage_speed_um_s, cfg.scan.frame_rate_hz,
                                                         cfg.scan.pause_frames(), cfg.scan.jump_frames);
    opt.bounds.expected_duty = stitch::expected_duty(scan_len, cfg.scan.stage_speed_um_s, cfg.scan.frame_rate_hz,
                                                     cfg.scan.pause_frames(), cfg.scan.jump_frames);
    opt.compose.jobs = cfg.run.jobs;
    return opt;
}

StageReport run_synth(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "synth";
    const Timer timer;
    const Layout L{cfg.run.out};
    fs::create_directories(L.slides());
    StageReport rep;
    rep.stage = stage;
    std::mutex mu;
    std::vector<std::vector<fs::path>> paths(static_cast<std::size_t>(cfg.run.slides));
    std::vector<double> areas(paths.size());
    parallel_for(0, paths.size(), cfg.run.jobs, [&](std::size_t i) {
        const auto id = slide_id(static_cast<int>(i));
        const auto stem = L.slides() / id;
        in_stage(stage, stem, [&] {
            const auto spec = slide_spec(cfg, static_cast<int>(i));
            const auto truth = synth::synth_slide(spec);
            io::write_raster(stem, truth.image);
            io::write_text(L.slides() / (id + "_layout.csv"), synth::layout_csv(truth.layout));
            paths[i] = {stem.string() + ".raw", stem.string() + ".json", L.slides() / (id + "_layout.csv")};
            areas[i] = area_mm2(truth.image);
            std::lock_guard lock(mu);
            emit(log, Level::info, "synth " + id + ": " + std::to_string(truth.image.width()) + "x" +
                                       std::to_string(truth.image.height()) + " px, " +
                                       std::to_string(truth.layout.size()) + " cores");
        });
    });
    for (std::size_t i = 0; i < paths.size(); ++i) {
        rep.artifacts.insert(rep.artifacts.end(), paths[i].begin(), paths[i].end());
        rep.area_mm2 += areas[i];
    }
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_scan(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "scan";
    const Timer timer;
    const Layout L{cfg.run.out};
    const auto items = scan_items(cfg);
    StageReport rep;
    rep.stage = stage;
    std::vector<double> areas(items.size());
    std::mutex mu;
    parallel_for(0, items.size(), cfg.run.jobs, [&](std::size_t i) {
        const auto& it = items[i];
        const auto stem = L.slides() / it.id;
        require_file(stage, stem.string() + ".raw");
        synth::SlideTruth truth;
        in_stage(stage, stem, [&] {
            truth.image = io::read_raster(stem);
            truth.layout = synth::read_layout_csv(L.slides() / (it.id + "_layout.csv"));
        });
        const auto dir = L.scans() / it.key;
        in_stage(stage, dir, [&] {
            const auto scan = scan_config(cfg, it.slide, it.repeat);
            const double w = truth.image.width() * truth.image.scale();
            const double h = truth.image.height() * truth.image.scale();
            const auto traj = synth::plan_trajectory(scan, w, h);
            fs::remove_all(dir);
            io::SequenceWriter writer(dir, synth::make_manifest(scan, traj));
            synth::render_frames(truth, traj, scan, [&](std::size_t, const imaging::Raster& f) { writer.append(f); });
            writer.finish();
            io::write_text(dir / "trajectory.csv", synth::trajectory_csv(traj));
            areas[i] = traj.scanned_area_mm2;
            std::lock_guard lock(mu);
            emit(log, Level::info, "scan " + it.key + ": " + std::to_string(traj.size()) + " frames, " +
                                       std::to_string(traj.line_count) + " lines, acquisition " +
                                       csv::fixed(traj.acquisition_rate_mm2_s, 3) + " mm2/s");
        });
    });
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto dir = L.scans() / items[i].key;
        rep.artifacts.push_back(dir / "frames.bin");
        rep.artifacts.push_back(dir / "manifest.json");
        rep.artifacts.push_back(dir / "trajectory.csv");
        rep.area_mm2 += areas[i];
    }
    rep.seconds = timer.seconds();
    return rep;
}

StageReport stitch_sequence(const fs::path& input, const fs::path& out_stem, const stitch::StitchOptions& options,
                            const Log& log)
{
    const std::string stage = "stitch";
    const Timer timer;
    StageReport rep;
    rep.stage = stage;
    require_file(stage, input / "manifest.json");
    const auto seq = in_stage(stage, input, [&] { return io::read_sequence(input); });
    const auto result = in_stage(stage, input, [&] { return stitch::stitch(*seq, options); });
    in_stage(stage, out_stem, [&] {
        fs::create_directories(out_stem.parent_path());
        io::write_raster(out_stem, result.slide.mosaic);
        io::write_text(out_stem.string() + "_placement.json", stitch::placement_json(result));
    });
    const auto& m = result.fit.model;
    emit(log, Level::info, "stitch " + input.filename().string() + ": " + std::to_string(result.segments.size()) +
                               " lines, period " + csv::fixed(m.period, 2) + ", duty " + csv::fixed(m.duty, 3) +
                               ", hamming " + std::to_string(m.hamming));
    rep.artifacts = {out_stem.string() + ".raw", out_stem.string() + ".json", out_stem.string() + "_placement.json"};
    rep.area_mm2 = area_mm2(result.slide.mosaic);
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_stitch(const PipelineConfig& cfg, const Log& log)
{
    const Timer timer;
    const Layout L{cfg.run.out};
    StageReport rep;
    rep.stage = "stitch";
    const auto opt = stitch_options(cfg);
    for (const auto& it : scan_items(cfg)) {
        const auto r = stitch_sequence(L.scans() / it.key, L.stitched() / it.key, opt, log);
        rep.artifacts.insert(rep.artifacts.end(), r.artifacts.begin(), r.artifacts.end());
        rep.area_mm2 += r.area_mm2;
    }
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_extract(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "extract";
    const Timer timer;
    const Layout L{cfg.run.out};
    const auto items = scan_items(cfg);
    StageReport rep;
    rep.stage = stage;
    std::vector<double> areas(items.size());
    std::mutex mu;
    parallel_for(0, items.size(), cfg.run.jobs, [&](std::size_t i) {
        const auto& it = items[i];
        const auto stem = L.stitched() / it.key;
        require_file(stage, stem.string() + ".raw");
        const auto layout = L.slides() / (it.id + "_layout.csv");
        require_file(stage, layout);
        const auto mosaic = in_stage(stage, stem, [&] { return io::read_raster(stem); });
        const auto balanced = in_stage(stage, stem, [&] { return coreprep::white_balance(mosaic, cfg.coreprep.balance); });
        const auto boxes = in_stage(stage, stem, [&] { return coreprep::segment_cores(balanced, cfg.coreprep.segment); });
        const auto grid = in_stage(stage, stem, [&] {
            return coreprep::fit_grid(boxes, cfg.slide.spec.grid_rows, cfg.slide.spec.grid_cols);
        });
        const auto map = in_stage(stage, layout, [&] {
            return coreprep::LabelMap::read(layout, cfg.slide.spec.grid_rows, cfg.slide.spec.grid_cols);
        });
        auto labeling = in_stage(stage, stem, [&] { return coreprep::assign_labels(grid, balanced, map, it.id, it.repeat); });
        const auto dir = L.cores() / it.key;
        in_stage(stage, dir, [&] {
            fs::remove_all(dir);
            coreprep::write_cores(dir, labeling.records);
        });
        areas[i] = area_mm2(mosaic);
        std::lock_guard lock(mu);
        for (const auto& c : grid.conflicts) {
            emit(log, Level::warn, "extract " + it.key + ": two components in cell (" + std::to_string(c.row) + "," +
                                       std::to_string(c.col) + "), kept the larger");
        }
        for (const auto& w : labeling.warnings) {
            emit(log, Level::warn, "extract " + it.key + ": " + w);
        }
        emit(log, Level::info, "extract " + it.key + ": " + std::to_string(boxes.size()) + " components, " +
                                   std::to_string(labeling.records.size()) + " cores");
    });
    for (std::size_t i = 0; i < items.size(); ++i) {
        rep.artifacts.push_back(L.cores() / items[i].key / "cores.json");
        rep.area_mm2 += areas[i];
    }
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_dataset(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "dataset";
    const Timer timer;
    const Layout L{cfg.run.out};
    const auto items = scan_items(cfg);
    StageReport rep;
    rep.stage = stage;
    fs::create_directories(L.stacks());
    std::vector<std::vector<StackEntry>> entries(items.size());
    parallel_for(0, items.size(), cfg.run.jobs, [&](std::size_t i) {
        const auto& it = items[i];
        const auto dir = L.cores() / it.key;
        require_file(stage, dir / "cores.json");
        const auto records = in_stage(stage, dir, [&] { return coreprep::read_cores(dir); });
        for (const auto& rec : records) {
            const auto stem = L.stacks() / rec.key();
            in_stage(stage, stem, [&] {
                const auto stack = coreprep::build_stack(rec, coreprep::stack_seed(cfg.run.seed, rec.id, rec.repeat));
                coreprep::write_stack(stem, stack);
            });
            entries[i].push_back({rec.key(), rec.id, rec.repeat, it.slide, rec.label,
                                  box_area_mm2(rec.box, rec.image.scale())});
        }
    });
    std::ostringstream idx;
    idx << kIndexHeader << '\n';
    std::size_t count = 0;
    for (const auto& group : entries) {
        for (const auto& e : group) {
            idx << e.key << ',' << e.core_id << ',' << e.repeat << ',' << e.slide << ','
                << (e.label ? std::to_string(*e.label) : std::string()) << ',' << csv::fixed(e.area_mm2, 9) << '\n';
            rep.artifacts.push_back(L.stacks() / (e.key + ".raw"));
            rep.artifacts.push_back(L.stacks() / (e.key + ".json"));
            rep.area_mm2 += e.area_mm2;
            ++count;
        }
    }
    io::write_text(L.stacks() / "index.csv", idx.str());
    rep.artifacts.push_back(L.stacks() / "index.csv");
    emit(log, Level::info, "dataset: " + std::to_string(count) + " stacks");
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_train(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "train";
    const Timer timer;
    const Layout L{cfg.run.out};
    StageReport rep;
    rep.stage = stage;
    if (cfg.classify.model == "import") {
        emit(log, Level::info, "train: skipped, predictions are imported");
        rep.seconds = timer.seconds();
        return rep;
    }
    auto entries = read_index(L, stage);
    std::erase_if(entries, [&](const auto& e) { return e.slide >= cfg.run.train_slides || !e.label; });
    if (entries.empty()) {
        throw StageError(stage, (L.stacks() / "index.csv").string() + ": no labelled training stacks");
    }
    const auto features = stack_features(L, entries, cfg.run.jobs, stage);
    std::vector<int> y4, y2;
    for (const auto& e : entries) {
        y4.push_back(*e.label);
        y2.push_back(triage::binarize(*e.label));
        rep.area_mm2 += e.area_mm2;
    }
    fs::create_directories(L.model());
    std::ostringstream fcsv;
    fcsv << "key,label,brown_fraction,mean_saturation,heterogeneity\n";
    for (std::size_t i = 0; i < entries.size(); ++i) {
        fcsv << entries[i].key << ',' << y4[i] << ',' << csv::fixed(features[i].brown_fraction, 9) << ','
             << csv::fixed(features[i].mean_saturation, 9) << ',' << csv::fixed(features[i].heterogeneity, 9) << '\n';
    }
    io::write_text(L.model() / "features.csv", fcsv.str());
    for (int k : {4, 2}) {
        const auto path = L.model() / ("baseline_" + std::to_string(k) + ".json");
        const auto model = in_stage(stage, path, [&] {
            return classify::train_baseline(features, k == 4 ? y4 : y2, k, cfg.classify.train);
        });
        classify::write_model(path, model);
        rep.artifacts.push_back(path);
        emit(log, Level::info, "train: " + std::to_string(k) + "-class model on " + std::to_string(entries.size()) +
                                   " stacks, loss " + csv::fixed(model.final_loss, 4));
    }
    rep.artifacts.push_back(L.model() / "features.csv");
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_classify(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "classify";
    const Timer timer;
    const Layout L{cfg.run.out};
    StageReport rep;
    rep.stage = stage;
    fs::create_directories(L.predictions());
    const auto out4 = L.predictions() / "predictions_4.csv";
    const auto out2 = L.predictions() / "predictions_2.csv";
    if (cfg.classify.model == "import") {
        require_file(stage, cfg.classify.predictions);
        write_predictions(out4, in_stage(stage, cfg.classify.predictions,
                                         [&] { return classify::import_predictions(cfg.classify.predictions, 4); }));
        rep.artifacts.push_back(out4);
        if (!cfg.classify.predictions_2.empty()) {
            require_file(stage, cfg.classify.predictions_2);
            write_predictions(out2, in_stage(stage, cfg.classify.predictions_2, [&] {
                                  return classify::import_predictions(cfg.classify.predictions_2, 2);
                              }));
            rep.artifacts.push_back(out2);
        } else {
            fs::remove(out2);
        }
        emit(log, Level::info, "classify: imported " + cfg.classify.predictions.string());
        rep.seconds = timer.seconds();
        return rep;
    }
    auto entries = read_index(L, stage);
    std::erase_if(entries, [&](const auto& e) { return e.slide < cfg.run.train_slides; });
    if (entries.empty()) {
        throw StageError(stage, (L.stacks() / "index.csv").string() + ": no held-out stacks");
    }
    const auto features = stack_features(L, entries, cfg.run.jobs, stage);
    for (int k : {4, 2}) {
        const auto mpath = L.model() / ("baseline_" + std::to_string(k) + ".json");
        require_file(stage, mpath);
        const auto model = in_stage(stage, mpath, [&] { return classify::read_model(mpath); });
        std::vector<classify::Prediction> preds;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            preds.push_back(classify::predict(model, features[i], entries[i].core_id, entries[i].repeat));
        }
        write_predictions(k == 4 ? out4 : out2, std::move(preds));
        rep.artifacts.push_back(k == 4 ? out4 : out2);
    }
    for (const auto& e : entries) {
        rep.area_mm2 += e.area_mm2;
    }
    emit(log, Level::info, "classify: " + std::to_string(entries.size()) + " held-out stacks");
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_triage(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "triage";
    const Timer timer;
    const Layout L{cfg.run.out};
    StageReport rep;
    rep.stage = stage;
    const auto results = compute_results(cfg, stage, log);
    fs::create_directories(L.triage());
    for (const auto& r : results.results) {
        const auto path = L.triage() / ("decisions_" + std::string(triage::to_string(r.method)) + "_" +
                                        std::to_string(r.class_count) + ".csv");
        io::write_text(path, report::decisions_csv(r.decisions));
        rep.artifacts.push_back(path);
    }
    for (int k : {4, 2}) {
        const auto path = L.triage() / ("consistency_" + std::to_string(k) + ".csv");
        io::write_text(path, report::consistency_csv(k == 4 ? results.consistency4 : results.consistency2));
        rep.artifacts.push_back(path);
    }
    emit(log, Level::info, "triage: " + std::to_string(results.cores) + " cores, consistency " +
                               csv::fixed(results.consistency4.overall, 3));
    rep.seconds = timer.seconds();
    return rep;
}

StageReport run_report(const PipelineConfig& cfg, const Log& log)
{
    const std::string stage = "report";
    const Timer timer;
    const Layout L{cfg.run.out};
    StageReport rep;
    rep.stage = stage;
    const auto results = compute_results(cfg, stage, log);
    rep.artifacts = in_stage(stage, L.report(), [&] { return report::emit_report(results, L.report()); });
    for (const auto& r : results.results) {
        const auto* op = r.sweep.operating_point();
        emit(log, Level::info,
             "report " + std::string(triage::to_string(r.method)) + "/" + std::to_string(r.class_count) +
                 ": accuracy " + csv::fixed(r.confusion.accuracy(), 3) +
                 (op ? ", theta* " + csv::fixed(op->threshold, 2) : std::string()));
    }
    rep.seconds = timer.seconds();
    return rep;
}

RunReport run_pipeline(const PipelineConfig& cfg, const Log& log)
{
    RunReport out;
    for (auto* stage : {run_synth, run_scan, run_stitch, run_extract, run_dataset, run_train, run_classify, run_triage,
                        run_report}) {
        out.stages.push_back(stage(cfg, log));
    }
    out.summary = Layout{cfg.run.out}.report() / "summary.json";
    return out;
}

std::string run_report_json(const RunReport& report, const PipelineConfig& cfg)
{
    json j;
    j["seed"] = cfg.run.seed;
    j["out"] = cfg.run.out.string();
    json stages = json::array();
    for (const auto& s : report.stages) {
        json a = json::array();
        for (const auto& p : s.artifacts) {
            a.push_back(p.string());
        }
        stages.push_back({{"stage", s.stage},
                          {"seconds", s.seconds},
                          {"area_mm2", s.area_mm2},
                          {"throughput_mm2_s", s.throughput_mm2_s()},
                          {"artifacts", a}});
    }
    j["stages"] = stages;
    // Simulated acquisition, from ScanConfig arithmetic.
    const double fov_mm2 = cfg.scan.fov_width_um() * cfg.scan.fov_height_um() * 1e-6;
    j["scan_model"] = {{"step_um", cfg.scan.step_um()},
                       {"acquisition_rate_mm2_s", fov_mm2 * cfg.scan.frame_rate_hz},
                       {"blur_um", cfg.scan.stage_speed_um_s * cfg.scan.exposure_s}};
    if (report.summary && fs::exists(*report.summary)) {
        j["summary_path"] = report.summary->string();
        j["metrics"] = json::parse(io::read_text(*report.summary));
    }
    return j.dump(2) + "\n";
}

} // namespace tmascan::pipeline
