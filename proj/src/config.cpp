#include "tmascan/config.hpp"

#include "tmascan/csv.hpp"
#include "tmascan/error.hpp"
#include "tmascan/sequence_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace tmascan::config {

namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& schema()
{
    static const std::map<std::string, std::set<std::string>> s{
        {"run", {"seed", "out", "jobs", "slides", "train_slides"}},
        {"slide",
         {"grid_rows", "grid_cols", "core_diameter_um", "core_pitch_um", "margin_um", "scale_um_per_px",
          "psf_sigma_px", "empty_fraction", "scan_lines"}},
        {"scan",
         {"stage_speed_um_s", "frame_rate_hz", "exposure_s", "camera_width_px", "camera_height_px", "row_pitch_um",
          "pause_s", "jump_frames", "start_direction"}},
        {"stitch", {"window", "theta_static", "refine", "refine_tolerance", "snap", "period_tolerance", "pause_weight"}},
        {"coreprep", {"block", "stride", "variance_threshold", "balance", "min_area_fraction"}},
        {"classify", {"model", "predictions", "predictions_2", "epochs", "learning_rate", "l2"}},
        {"triage", {"methods", "grid_step", "target_rate", "weighted"}},
    };
    return s;
}

class Reader {
public:
    explicit Reader(const pt::ptree& tree) : tree_(tree) {}

    template <typename T>
    void get(const std::string& section, const std::string& key, T& out) const
    {
        const auto node = tree_.get_child_optional(pt::ptree::path_type(section + "/" + key, '/'));
        if (!node) {
            return;
        }
        const std::string text(csv::trim(node->data()));
        std::istringstream in(text);
        T value{};
        in >> value;
        if (text.empty() || in.fail() || !in.eof()) {
            throw ConfigError("[" + section + "] " + key + ": cannot parse '" + text + "'");
        }
        out = value;
    }

    void get_string(const std::string& section, const std::string& key, std::string& out) const
    {
        if (const auto node = tree_.get_child_optional(pt::ptree::path_type(section + "/" + key, '/'))) {
            out = std::string(csv::trim(node->data()));
        }
    }

    void get_bool(const std::string& section, const std::string& key, bool& out) const
    {
        std::string v;
        get_string(section, key, v);
        if (v.empty()) {
            return;
        }
        if (v == "on" || v == "true" || v == "1" || v == "yes") {
            out = true;
        } else if (v == "off" || v == "false" || v == "0" || v == "no") {
            out = false;
        } else {
            throw ConfigError("[" + section + "] " + key + ": expected on/off, got '" + v + "'");
        }
    }

private:
    const pt::ptree& tree_;
};

void check(bool ok, const std::string& what)
{
    if (!ok) {
        throw ConfigError(what);
    }
}

} // namespace

PipelineConfig parse(const std::string& text, const std::filesystem::path& base_dir)
{
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }
    for (const auto& [section, body] : tree) {
        const auto it = schema().find(section);
        if (it == schema().end()) {
            throw ConfigError("unknown section [" + section + "]");
        }
        if (!body.data().empty() && body.empty()) {
            throw ConfigError("key '" + section + "' must sit inside a section");
        }
        for (const auto& [key, value] : body) {
            if (!it->second.contains(key)) {
                throw ConfigError("[" + section + "] unknown key '" + key + "'");
            }
        }
    }

    PipelineConfig c;
    const Reader r(tree);
    std::string out_dir = c.run.out.string();
    r.get("run", "seed", c.run.seed);
    r.get_string("run", "out", out_dir);
    c.run.out = out_dir;
    r.get("run", "jobs", c.run.jobs);
    r.get("run", "slides", c.run.slides);
    r.get("run", "train_slides", c.run.train_slides);

    auto& spec = c.slide.spec;
    r.get("slide", "grid_rows", spec.grid_rows);
    r.get("slide", "grid_cols", spec.grid_cols);
    r.get("slide", "core_diameter_um", spec.core_diameter_um);
    r.get("slide", "core_pitch_um", spec.core_pitch_um);
    r.get("slide", "margin_um", spec.margin_um);
    r.get("slide", "scale_um_per_px", spec.scale_um_per_px);
    r.get("slide", "psf_sigma_px", spec.psf_sigma_px);
    r.get("slide", "empty_fraction", c.slide.empty_fraction);
    r.get("slide", "scan_lines", c.slide.scan_lines);

    auto& scan = c.scan;
    r.get("scan", "stage_speed_um_s", scan.stage_speed_um_s);
    r.get("scan", "frame_rate_hz", scan.frame_rate_hz);
    r.get("scan", "exposure_s", scan.exposure_s);
    r.get("scan", "camera_width_px", scan.camera_width_px);
    r.get("scan", "camera_height_px", scan.camera_height_px);
    r.get("scan", "row_pitch_um", scan.row_pitch_um);
    r.get("scan", "pause_s", scan.pause_s);
    r.get("scan", "jump_frames", scan.jump_frames);
    std::string dir = "+x";
    r.get_string("scan", "start_direction", dir);
    try {
        scan.start_direction = imaging::direction_from_string(dir);
    } catch (const Error& e) {
        throw ConfigError(std::string("[scan] start_direction: ") + e.what());
    }
    scan.scale_um_per_px = spec.scale_um_per_px;

    auto& st = c.stitch;
    r.get("stitch", "window", st.window);
    r.get("stitch", "theta_static", st.theta_static);
    r.get_bool("stitch", "refine", st.compose.refine);
    r.get("stitch", "refine_tolerance", st.compose.refine_tolerance);
    r.get_bool("stitch", "snap", st.snap);
    r.get("stitch", "period_tolerance", st.bounds.period_tolerance);
    r.get("stitch", "pause_weight", st.compose.pause_weight);
    st.jump_frames = scan.jump_frames;
    st.start_direction = scan.start_direction;
    st.compose.stage_speed_um_s = scan.stage_speed_um_s;
    st.compose.row_pitch_um = scan.row_pitch_um;

    auto& cp = c.coreprep;
    r.get("coreprep", "block", cp.balance.block);
    r.get("coreprep", "stride", cp.balance.stride);
    r.get("coreprep", "variance_threshold", cp.balance.variance_threshold);
    std::string balance = "additive";
    r.get_string("coreprep", "balance", balance);
    check(balance == "additive" || balance == "multiplicative",
          "[coreprep] balance must be additive or multiplicative");
    cp.balance.multiplicative = balance == "multiplicative";
    r.get("coreprep", "min_area_fraction", cp.segment.min_area_fraction);
    cp.segment.core_diameter_um = spec.core_diameter_um;

    auto& cl = c.classify;
    r.get_string("classify", "model", cl.model);
    std::string preds, preds2;
    r.get_string("classify", "predictions", preds);
    r.get_string("classify", "predictions_2", preds2);
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        if (p.empty()) {
            return {};
        }
        const std::filesystem::path path(p);
        return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    cl.predictions = resolve(preds);
    cl.predictions_2 = resolve(preds2);
    r.get("classify", "epochs", cl.train.epochs);
    r.get("classify", "learning_rate", cl.train.learning_rate);
    r.get("classify", "l2", cl.train.l2);

    auto& tr = c.triage;
    std::string methods;
    r.get_string("triage", "methods", methods);
    if (!methods.empty()) {
        tr.evaluate.methods.clear();
        for (const auto& m : csv::split(methods)) {
            try {
                tr.evaluate.methods.push_back(triage::method_from_string(m));
            } catch (const Error& e) {
                throw ConfigError(std::string("[triage] methods: ") + e.what());
            }
        }
    }
    r.get("triage", "grid_step", tr.grid_step);
    r.get("triage", "target_rate", tr.evaluate.target_rate);
    std::string weighted = "normalized";
    r.get_string("triage", "weighted", weighted);
    check(weighted == "normalized" || weighted == "unnormalized",
          "[triage] weighted must be normalized or unnormalized");
    tr.evaluate.aggregate.normalize_weighted = weighted == "normalized";

    // Validation.
    check(c.run.jobs >= 1, "[run] jobs must be at least 1");
    check(c.run.slides >= 1, "[run] slides must be at least 1");
    check(c.slide.empty_fraction >= 0.0 && c.slide.empty_fraction < 1.0, "[slide] empty_fraction must lie in [0, 1)");
    check(c.slide.scan_lines >= 0, "[slide] scan_lines must be nonnegative");
    check(st.window >= 1, "[stitch] window must be at least 1");
    check(st.theta_static > -1.0 && st.theta_static <= 1.0, "[stitch] theta_static must lie in (-1, 1]");
    check(st.bounds.period_tolerance > 0.0 && st.bounds.period_tolerance < 1.0,
          "[stitch] period_tolerance must lie in (0, 1)");
    check(cp.segment.min_area_fraction > 0.0, "[coreprep] min_area_fraction must be positive");
    check(tr.grid_step > 0.0 && tr.grid_step <= 1.0, "[triage] grid_step must lie in (0, 1]");
    check(tr.evaluate.target_rate >= 0.0 && tr.evaluate.target_rate <= 1.0, "[triage] target_rate must lie in [0, 1]");
    check(!tr.evaluate.methods.empty(), "[triage] methods must not be empty");
    tr.evaluate.grid.clear();
    const int steps = static_cast<int>(std::lround(1.0 / tr.grid_step));
    for (int i = 0; i <= steps; ++i) {
        tr.evaluate.grid.push_back(static_cast<double>(i) / steps);
    }
    if (cl.model == "baseline") {
        check(c.run.train_slides >= 1 && c.run.train_slides < c.run.slides,
              "[run] train_slides must leave at least one training and one test slide");
        check(cl.train.epochs >= 0 && cl.train.learning_rate > 0.0, "[classify] invalid training hyperparameters");
    } else if (cl.model == "import") {
        check(!cl.predictions.empty(), "[classify] model = import needs a predictions file");
        check(std::filesystem::exists(cl.predictions), "[classify] predictions file " + cl.predictions.string() +
                                                           " does not exist");
        check(cl.predictions_2.empty() || std::filesystem::exists(cl.predictions_2),
              "[classify] predictions_2 file " + cl.predictions_2.string() + " does not exist");
    } else {
        throw ConfigError("[classify] model must be baseline or import");
    }
    spec.scores.assign(static_cast<std::size_t>(std::max(0, spec.grid_rows * spec.grid_cols)), 0);
    try {
        spec.validate();
        scan.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return c;
}

PipelineConfig load(const std::filesystem::path& path)
{
    if (!std::filesystem::exists(path)) {
        throw ConfigError("config file " + path.string() + " does not exist");
    }
    return parse(io::read_text(path), path.parent_path());
}

std::string to_ini(const PipelineConfig& c)
{
    std::ostringstream o;
    auto f = [](double v) { return csv::fixed(v, 6); };
    o << "[run]\nseed = " << c.run.seed << "\nout = " << c.run.out.string() << "\njobs = " << c.run.jobs
      << "\nslides = " << c.run.slides << "\ntrain_slides = " << c.run.train_slides << "\n\n";
    const auto& s = c.slide.spec;
    o << "[slide]\ngrid_rows = " << s.grid_rows << "\ngrid_cols = " << s.grid_cols
      << "\ncore_diameter_um = " << f(s.core_diameter_um) << "\ncore_pitch_um = " << f(s.core_pitch_um)
      << "\nmargin_um = " << f(s.margin_um) << "\nscale_um_per_px = " << f(s.scale_um_per_px)
      << "\npsf_sigma_px = " << f(s.psf_sigma_px) << "\nempty_fraction = " << f(c.slide.empty_fraction)
      << "\nscan_lines = " << c.slide.scan_lines << "\n\n";
    const auto& sc = c.scan;
    o << "[scan]\nstage_speed_um_s = " << f(sc.stage_speed_um_s) << "\nframe_rate_hz = " << f(sc.frame_rate_hz)
      << "\nexposure_s = " << f(sc.exposure_s) << "\ncamera_width_px = " << sc.camera_width_px
      << "\ncamera_height_px = " << sc.camera_height_px << "\nrow_pitch_um = " << f(sc.row_pitch_um)
      << "\npause_s = " << f(sc.pause_s) << "\njump_frames = " << sc.jump_frames
      << "\nstart_direction = " << imaging::to_string(sc.start_direction) << "\n\n";
    const auto& st = c.stitch;
    o << "[stitch]\nwindow = " << st.window << "\ntheta_static = " << f(st.theta_static)
      << "\nrefine = " << (st.compose.refine ? "on" : "off") << "\nrefine_tolerance = " << f(st.compose.refine_tolerance)
      << "\nsnap = " << (st.snap ? "on" : "off") << "\nperiod_tolerance = " << f(st.bounds.period_tolerance)
      << "\npause_weight = " << f(st.compose.pause_weight) << "\n\n";
    const auto& cp = c.coreprep;
    o << "[coreprep]\nblock = " << cp.balance.block << "\nstride = " << cp.balance.stride
      << "\nvariance_threshold = " << f(cp.balance.variance_threshold)
      << "\nbalance = " << (cp.balance.multiplicative ? "multiplicative" : "additive")
      << "\nmin_area_fraction = " << f(cp.segment.min_area_fraction) << "\n\n";
    const auto& cl = c.classify;
    o << "[classify]\nmodel = " << cl.model << "\n";
    if (!cl.predictions.empty()) {
        o << "predictions = " << cl.predictions.string() << "\n";
    }
    if (!cl.predictions_2.empty()) {
        o << "predictions_2 = " << cl.predictions_2.string() << "\n";
    }
    o << "epochs = " << cl.train.epochs << "\nlearning_rate = " << f(cl.train.learning_rate)
      << "\nl2 = " << f(cl.train.l2) << "\n\n";
    const auto& tr = c.triage;
    o << "[triage]\nmethods = ";
    for (std::size_t i = 0; i < tr.evaluate.methods.size(); ++i) {
        o << (i ? "," : "") << triage::to_string(tr.evaluate.methods[i]);
    }
    o << "\ngrid_step = " << f(tr.grid_step) << "\ntarget_rate = " << f(tr.evaluate.target_rate)
      << "\nweighted = " << (tr.evaluate.aggregate.normalize_weighted ? "normalized" : "unnormalized") << "\n";
    return o.str();
}

} // namespace tmascan::config
