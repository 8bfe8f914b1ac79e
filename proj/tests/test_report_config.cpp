#include "tmascan/config.hpp"
#include "tmascan/error.hpp"
#include "tmascan/report.hpp"
#include "tmascan/sequence_io.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <iomanip>
#include <random>
#include <sstream>

using namespace tmascan;
namespace fs = std::filesystem;

namespace {

std::vector<triage::RepeatSet> random_sets(std::uint64_t seed, int n)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> cls(0, 3);
    std::uniform_real_distribution<double> u(0.3, 0.95);
    std::vector<triage::RepeatSet> sets;
    for (int i = 0; i < n; ++i) {
        triage::RepeatSet s;
        s.core_id = "c" + std::to_string(i);
        s.truth = i % 4;
        for (int r = 0; r < 3; ++r) {
            const int c = rng() % 3 ? *s.truth : cls(rng);
            const double ci = u(rng);
            std::vector<double> p(4, (1.0 - ci) / 3);
            p[static_cast<std::size_t>(c)] = ci;
            s.predictions[r] = classify::make_prediction(p, s.core_id, r);
        }
        sets.push_back(s);
    }
    return sets;
}

std::size_t count_lines(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

} // namespace

TEST_CASE("evaluate covers every method and both class counts")
{
    const auto sets = random_sets(61, 40);
    const auto res = report::evaluate(sets, {});
    CHECK(res.cores == 40u);
    CHECK(res.results.size() == 6u);
    for (auto m : triage::kMethods) {
        for (int k : {4, 2}) {
            const auto* r = res.find(m, k);
            REQUIRE(r != nullptr);
            CHECK(r->decisions.size() == (m == triage::Method::all_scans ? 120u : 40u));
            CHECK(r->roc.has_value() == (k == 2));
            CHECK(r->sweep.points.size() == 101u);
        }
    }
    CHECK(res.consistency4.overall >= 1.0 / 3);
    CHECK(res.consistency2.overall >= res.consistency4.overall - 1e-12);
}

TEST_CASE("sweep CSV has one row per grid point")
{
    const auto res = report::evaluate(random_sets(62, 20), {});
    const auto csv = report::sweep_csv(res.find(triage::Method::max_ci, 4)->sweep);
    CHECK(count_lines(csv) == 102u);
    CHECK(csv.rfind("threshold,accuracy,indeterminate_fraction,determinate\n", 0) == 0);
}

TEST_CASE("confusion CSV is a grid plus an accuracy line")
{
    const auto res = report::evaluate(random_sets(63, 20), {});
    const auto& m = res.find(triage::Method::weighted_ci, 4)->confusion;
    const auto csv = report::confusion_csv(m);
    std::istringstream in(csv);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    REQUIRE(lines.size() == 6u);
    CHECK(lines[0] == "truth,pred_0,pred_1,pred_2,pred_3");
    for (int r = 1; r <= 4; ++r) {
        CHECK(std::count(lines[r].begin(), lines[r].end(), ',') == 4);
    }
    CHECK(lines[5].rfind("accuracy,", 0) == 0);
    CHECK(std::stod(lines[5].substr(9)) == doctest::Approx(m.accuracy()).epsilon(1e-6));
    const auto j = nlohmann::json::parse(report::confusion_json(m));
    CHECK(j["class_count"] == 4);
}

TEST_CASE("sweep SVG draws the guide at the operating threshold")
{
    const auto res = report::evaluate(random_sets(64, 60), {});
    const auto& curve = res.find(triage::Method::all_scans, 4)->sweep;
    const auto* op = curve.operating_point();
    REQUIRE(op != nullptr);
    CHECK(op->indeterminate_fraction >= 0.15);
    // Plot x spans 70..570 for thresholds 0..1.
    std::ostringstream x;
    x << std::fixed << std::setprecision(2) << 70 + 500 * op->threshold;
    const auto svg = report::sweep_svg(curve, "t");
    CHECK(svg.find("x1=\"" + x.str() + "\" y1=") != std::string::npos);
    CHECK(svg.find("stroke-dasharray") != std::string::npos);
    CHECK(svg.rfind("<svg", 0) == 0);
}

TEST_CASE("emit_report writes the documented file set")
{
    const auto res = report::evaluate(random_sets(65, 24), {});
    const auto dir = fs::temp_directory_path() / "tmascan_test_report";
    fs::remove_all(dir);
    const auto files = report::emit_report(res, dir);
    for (const char* name : {"sweep_all-scans.csv", "sweep_max-ci.svg", "sweep_weighted-ci_2.csv",
                             "confusion_max-ci_4.csv", "confusion_max-ci_2.svg", "confusion_all-scans_4.json",
                             "roc_weighted-ci.csv", "roc_all-scans.svg", "summary.json"}) {
        CHECK(fs::exists(dir / name));
    }
    for (const auto& f : files) {
        CHECK(fs::exists(f));
    }
    const auto summary = nlohmann::json::parse(io::read_text(dir / "summary.json"));
    CHECK(summary["cores"] == 24);
    CHECK(summary["methods"]["max-ci"]["2-class"].contains("auc"));
    CHECK_FALSE(summary["methods"]["max-ci"]["4-class"].contains("auc"));
}

namespace {

const char* kMinimal = R"(
[run]
seed = 3
slides = 2
train_slides = 1

[slide]
grid_rows = 3
grid_cols = 6

[scan]
stage_speed_um_s = 2000
)";

} // namespace

TEST_CASE("config parses and keeps defaults")
{
    const auto c = config::parse(kMinimal);
    CHECK(c.run.seed == 3u);
    CHECK(c.run.slides == 2);
    CHECK(c.slide.spec.grid_cols == 6);
    CHECK(c.scan.stage_speed_um_s == 2000);
    CHECK(c.scan.exposure_s == doctest::Approx(0.0078));
    CHECK(c.stitch.window == 5);
    CHECK(c.triage.evaluate.grid.size() == 101u);
}

TEST_CASE("config round trips through its text form")
{
    const auto c = config::parse(kMinimal);
    const auto text = config::to_ini(c);
    CHECK(config::to_ini(config::parse(text)) == text);
    const auto demo = config::load(fs::path(TMASCAN_CONFIGS) / "demo.ini");
    CHECK(demo.run.seed == 7u);
    CHECK(demo.slide.spec.grid_cols == 10);
    CHECK(config::to_ini(config::parse(config::to_ini(demo))) == config::to_ini(demo));
}

TEST_CASE("config rejects unknown keys, sections and bad values")
{
    CHECK_THROWS_AS(config::parse("[run]\nsede = 3\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("[runn]\nseed = 3\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("[run]\nseed = three\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("[stitch]\nrefine = maybe\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("[triage]\nmethods = best-guess\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("[slide]\ncore_pitch_um = 50\n"), ConfigError);
    CHECK_THROWS_AS(config::parse("[classify]\nmodel = import\npredictions = /nonexistent/p.csv\n"), ConfigError);
    CHECK_THROWS_AS(config::load("/nonexistent/config.ini"), ConfigError);
}

TEST_CASE("grid step builds the threshold grid")
{
    const auto c = config::parse("[triage]\ngrid_step = 0.05\n");
    REQUIRE(c.triage.evaluate.grid.size() == 21u);
    CHECK(c.triage.evaluate.grid.back() == doctest::Approx(1.0));
}
