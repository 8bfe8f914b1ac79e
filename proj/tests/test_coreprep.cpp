#include "oracles.hpp"

#include "tmascan/coreprep.hpp"
#include "tmascan/error.hpp"
#include "tmascan/synthscan.hpp"

#include <doctest.h>

#include <filesystem>
#include <set>

using namespace tmascan;
using coreprep::Box;
using imaging::Raster;
using imaging::Rgb;
namespace fs = std::filesystem;

namespace {

// Dark disks on a light background, radius in pixels.
Raster disks(int w, int h, const std::vector<std::pair<int, int>>& centres, int radius, Rgb bg = {235, 230, 225},
             Rgb fg = {150, 90, 130})
{
    Raster img(w, h, 0.56, bg);
    for (const auto& [cx, cy] : centres) {
        for (int y = cy - radius; y <= cy + radius; ++y) {
            for (int x = cx - radius; x <= cx + radius; ++x) {
                if (x >= 0 && y >= 0 && x < w && y < h && (x - cx) * (x - cx) + (y - cy) * (y - cy) <= radius * radius) {
                    img.set_pixel(x, y, fg);
                }
            }
        }
    }
    return img;
}

Box box_at(int cx, int cy, int size = 20, std::int64_t area = 300)
{
    return {cx - size / 2, cy - size / 2, size, size, area};
}

} // namespace

TEST_CASE("additive balance moves the background to white")
{
    const auto img = disks(300, 200, {{150, 100}}, 40, {230, 235, 240});
    const auto r = coreprep::white_balance_ex(img);
    CHECK(r.background[0] == doctest::Approx(230));
    CHECK(r.background[1] == doctest::Approx(235));
    CHECK(r.background[2] == doctest::Approx(240));
    CHECK(r.image.pixel(0, 0) == Rgb{255, 255, 255});
    // Offsets (25, 20, 15) shift the tissue too.
    CHECK(r.image.pixel(150, 100) == Rgb{175, 110, 145});
}

TEST_CASE("multiplicative balance scales channels")
{
    const auto img = disks(300, 200, {{150, 100}}, 40, {200, 250, 100}, {80, 50, 40});
    coreprep::BalanceOptions o;
    o.multiplicative = true;
    const auto out = coreprep::white_balance(img, o);
    CHECK(out.pixel(5, 5) == Rgb{255, 255, 255});
    CHECK(out.pixel(150, 100) == Rgb{102, 51, 102});
}

TEST_CASE("balance is idempotent")
{
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> u(180, 250);
    for (int t = 0; t < 5; ++t) {
        const Rgb bg{static_cast<std::uint8_t>(u(rng)), static_cast<std::uint8_t>(u(rng)), static_cast<std::uint8_t>(u(rng))};
        const auto img = disks(260, 180, {{80, 90}, {190, 80}}, 30, bg);
        for (bool mult : {false, true}) {
            coreprep::BalanceOptions o;
            o.multiplicative = mult;
            const auto once = coreprep::white_balance(img, o);
            CHECK(coreprep::white_balance(once, o) == once);
        }
    }
}

TEST_CASE("balance picks the brightest flat block")
{
    // Left half dim and flat, right half bright and flat.
    Raster img(256, 128, 0.56, Rgb{200, 200, 200});
    for (int y = 0; y < 128; ++y) {
        for (int x = 128; x < 256; ++x) {
            img.set_pixel(x, y, {240, 240, 240});
        }
    }
    const auto r = coreprep::white_balance_ex(img);
    CHECK(r.block_x >= 128);
    CHECK(r.background[0] == doctest::Approx(240));
}

TEST_CASE("balance errors")
{
    std::mt19937_64 rng(32);
    CHECK_THROWS_AS(coreprep::white_balance(Raster(40, 40, 1.0)), BalanceError);
    CHECK_THROWS_AS(coreprep::white_balance(oracle::random_raster(rng, 128, 128)), BalanceError);
    coreprep::BalanceOptions o;
    o.stride = 0;
    CHECK_THROWS_AS(coreprep::white_balance(Raster(128, 128, 1.0), o), ParameterError);
}

TEST_CASE("otsu threshold")
{
    imaging::GrayRaster g;
    g.width = 10;
    g.height = 1;
    g.data = {10, 10, 10, 10, 10, 200, 200, 200, 200, 200};
    const int t = coreprep::otsu_threshold(g);
    CHECK(t >= 10);
    CHECK(t < 200);
    g.data.assign(10, 77);
    CHECK(coreprep::otsu_threshold(g) == -1);
}

TEST_CASE("segmentation of a 2x2 grid")
{
    // 110 um cores at 0.56 um/px are about 196 px across.
    const std::vector<std::pair<int, int>> c{{150, 150}, {450, 150}, {150, 450}, {450, 450}};
    const auto img = coreprep::white_balance(disks(600, 600, c, 98));
    auto boxes = coreprep::segment_cores(img);
    REQUIRE(boxes.size() == 4u);
    for (const auto& [cx, cy] : c) {
        const bool hit = std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) {
            return std::abs(b.center_x() - cx - 0.5) <= 2 && std::abs(b.center_y() - cy - 0.5) <= 2;
        });
        CHECK(hit);
    }
    for (const auto& b : boxes) {
        CHECK(b.area == doctest::Approx(std::numbers::pi * 98 * 98).epsilon(0.05));
    }
}

TEST_CASE("blank image has no cores")
{
    CHECK_THROWS_AS(coreprep::segment_cores(Raster(200, 200, 0.56, Rgb{255, 255, 255})), SegmentationError);
}

TEST_CASE("border-touching and small blobs are dropped")
{
    const auto img = coreprep::white_balance(disks(800, 400, {{40, 200}, {400, 200}}, 98));
    const auto boxes = coreprep::segment_cores(img);
    REQUIRE(boxes.size() == 1u);
    CHECK(std::abs(boxes[0].center_x() - 400.5) <= 2);
    // A blob far below a quarter of the nominal core area.
    auto speck = disks(800, 400, {{300, 200}, {560, 200}}, 98);
    for (int y = 40; y < 70; ++y) {
        for (int x = 700; x < 730; ++x) {
            speck.set_pixel(x, y, {150, 90, 130});
        }
    }
    CHECK(coreprep::segment_cores(coreprep::white_balance(speck)).size() == 2u);
}

TEST_CASE("fit_grid assigns a full grid")
{
    std::vector<Box> boxes;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            boxes.push_back(box_at(50 + 100 * c, 60 + 100 * r));
        }
    }
    const auto g = coreprep::fit_grid(boxes, 3, 4);
    CHECK(g.filled() == 12u);
    CHECK(g.conflicts.empty());
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            REQUIRE(g.cell(r, c));
            CHECK(*g.cell(r, c) == box_at(50 + 100 * c, 60 + 100 * r));
        }
    }
}

TEST_CASE("fit_grid leaves empty cells empty")
{
    // Corners present, centre missing.
    std::vector<Box> boxes{box_at(50, 50), box_at(250, 50), box_at(50, 250), box_at(250, 250), box_at(150, 50)};
    const auto g = coreprep::fit_grid(boxes, 3, 3);
    CHECK(g.filled() == 5u);
    CHECK_FALSE(g.cell(1, 1));
    CHECK(g.cell(0, 1));
}

TEST_CASE("fit_grid keeps the larger of two boxes in one cell")
{
    std::vector<Box> boxes{box_at(50, 50), box_at(250, 250), box_at(55, 52, 20, 100), box_at(48, 49, 20, 500)};
    const auto g = coreprep::fit_grid(boxes, 2, 2);
    REQUIRE(g.cell(0, 0));
    CHECK(g.cell(0, 0)->area == 500);
    CHECK(g.conflicts.size() == 2u);
}

TEST_CASE("fit_grid is translation invariant")
{
    std::mt19937_64 rng(33);
    std::uniform_int_distribution<int> jitter(-8, 8);
    std::uniform_int_distribution<int> shift(-500, 500);
    for (int t = 0; t < 20; ++t) {
        std::vector<Box> boxes;
        for (int r = 0; r < 4; ++r) {
            for (int c = 0; c < 5; ++c) {
                if ((r == 0 || r == 3) && (c == 0 || c == 4)) {
                    boxes.push_back(box_at(1000 + 120 * c + jitter(rng), 1000 + 120 * r + jitter(rng)));
                } else if (rng() % 3) {
                    boxes.push_back(box_at(1000 + 120 * c + jitter(rng), 1000 + 120 * r + jitter(rng)));
                }
            }
        }
        const int dx = shift(rng), dy = shift(rng);
        auto moved = boxes;
        for (auto& b : moved) {
            b.x += dx;
            b.y += dy;
        }
        const auto a = coreprep::fit_grid(boxes, 4, 5);
        const auto b = coreprep::fit_grid(moved, 4, 5);
        for (std::size_t i = 0; i < a.cells.size(); ++i) {
            REQUIRE(a.cells[i].has_value() == b.cells[i].has_value());
            if (a.cells[i]) {
                CHECK(a.cells[i]->x + dx == b.cells[i]->x);
            }
        }
    }
    CHECK_THROWS_AS(coreprep::fit_grid({}, 2, 2), ParameterError);
    CHECK_THROWS_AS(coreprep::fit_grid({box_at(5, 5)}, 0, 2), ParameterError);
}

TEST_CASE("label map parsing")
{
    const auto m = coreprep::LabelMap::parse("row,col,score\n0,0,3\n1,2,0\n");
    CHECK(m.rows == 2);
    CHECK(m.cols == 3);
    CHECK(m.score(0, 0) == 3);
    CHECK_FALSE(m.score(0, 1));
    const auto sized = coreprep::LabelMap::parse("row,col,score,extra\n0,0,1,x\n", 4, 4);
    CHECK(sized.rows == 4);
    CHECK_THROWS_AS(coreprep::LabelMap::parse("row,col,score\n0,0,4\n"), LabelingError);
    CHECK_THROWS_AS(coreprep::LabelMap::parse("row,col,score\n0,0,1\n0,0,2\n"), LabelingError);
    CHECK_THROWS_AS(coreprep::LabelMap::parse("a,b\n0,0\n"), LabelingError);
    CHECK_THROWS_AS(coreprep::LabelMap::parse("row,col,score\n5,0,1\n", 2, 2), LabelingError);
}

TEST_CASE("labels follow grid cells")
{
    const Raster mosaic(400, 400, 0.56, Rgb{255, 255, 255});
    std::vector<Box> boxes{box_at(50, 50), box_at(250, 50), box_at(50, 250)};
    const auto g = coreprep::fit_grid(boxes, 2, 2);
    const auto map = coreprep::LabelMap::parse("row,col,score\n0,0,1\n1,1,2\n1,0,3\n", 2, 2);
    const auto lab = coreprep::assign_labels(g, mosaic, map, "slide01", 1);
    REQUIRE(lab.records.size() == 3u);
    CHECK(lab.records[0].id == "slide01_r0c0");
    CHECK(lab.records[0].label == 1);
    CHECK(lab.records[0].key() == "slide01_r0c0_rep1");
    CHECK(lab.records[0].image.width() == 20);
    CHECK_FALSE(lab.records[1].label);
    CHECK(lab.records[2].label == 3);
    // (0,1) has no label, (1,1) has no core.
    CHECK(lab.warnings.size() == 2u);
    CHECK_THROWS_AS(coreprep::assign_labels(g, mosaic, coreprep::LabelMap::parse("row,col,score\n0,0,1\n", 3, 3),
                                            "s", 0),
                    LabelingError);
    CHECK_THROWS_AS(coreprep::assign_labels(g, mosaic, map, "s", 3), ParameterError);
}

TEST_CASE("padding oracle")
{
    std::mt19937_64 rng(34);
    const auto img = oracle::random_raster(rng, 7, 4);
    const auto p = coreprep::pad_replicate(img, 12, 9);
    REQUIRE(p.width() == 12);
    REQUIRE(p.height() == 9);
    const int left = (12 - 7) / 2, top = (9 - 4) / 2;
    for (int y = 0; y < 9; ++y) {
        for (int x = 0; x < 12; ++x) {
            CHECK(p.pixel(x, y) == img.pixel(std::clamp(x - left, 0, 6), std::clamp(y - top, 0, 3)));
        }
    }
    CHECK(coreprep::pad_replicate(img, 3, 3) == img);
}

TEST_CASE("resize identity and constants")
{
    std::mt19937_64 rng(35);
    const auto img = oracle::random_raster(rng, 33, 21);
    CHECK(coreprep::resize_bilinear(img, 33, 21) == img);
    const Raster flat(40, 30, 1.0, Rgb{9, 99, 199});
    const auto r = coreprep::resize_bilinear(flat, 512, 512);
    CHECK(r == Raster(512, 512, r.scale(), Rgb{9, 99, 199}));
    CHECK(r.scale() == doctest::Approx(40.0 / 512));
}

namespace {

coreprep::CoreRecord record(std::mt19937_64& rng, int w, int h)
{
    coreprep::CoreRecord c;
    c.id = "s_r0c0";
    c.repeat = 2;
    c.image = oracle::random_raster(rng, w, h);
    return c;
}

} // namespace

TEST_CASE("stack of a 512 core")
{
    std::mt19937_64 rng(36);
    const auto c = record(rng, 512, 512);
    const auto s = coreprep::build_stack(c, 99);
    REQUIRE(s.patches.size() == 5u);
    for (const auto& p : s.patches) {
        CHECK(p == c.image);
    }
}

TEST_CASE("stack of a 1024 core")
{
    std::mt19937_64 rng(37);
    const auto c = record(rng, 1024, 1024);
    const auto s = coreprep::build_stack(c, 7);
    REQUIRE(s.patches.size() == 5u);
    CHECK(s.patches[0].width() == 512);
    REQUIRE(s.crop_offsets.size() == 4u);
    for (std::size_t i = 1; i < 5; ++i) {
        const auto [x, y] = s.crop_offsets[i - 1];
        CHECK(x >= 0);
        CHECK(x <= 512);
        CHECK(y >= 0);
        CHECK(y <= 512);
        CHECK(s.patches[i] == imaging::crop(c.image, x, y, 512, 512));
    }
    // Crops are a function of the seed.
    CHECK(coreprep::build_stack(c, 7).crop_offsets == s.crop_offsets);
    CHECK(coreprep::build_stack(c, 8).crop_offsets != s.crop_offsets);
}

TEST_CASE("stack of a 300 core pads")
{
    std::mt19937_64 rng(38);
    const auto c = record(rng, 300, 300);
    const auto s = coreprep::build_stack(c, 1);
    const auto padded = coreprep::pad_replicate(c.image, 512, 512);
    for (std::size_t i = 1; i < 5; ++i) {
        CHECK(s.crop_offsets[i - 1] == std::pair<int, int>{0, 0});
        CHECK(s.patches[i] == padded);
    }
    CHECK(s.patches[0] == coreprep::resize_bilinear(c.image, 512, 512));
}

TEST_CASE("stack seeds differ per core and repeat")
{
    std::set<std::uint64_t> seen;
    for (int r = 0; r < 3; ++r) {
        for (const char* id : {"a_r0c0", "a_r0c1", "b_r0c0"}) {
            seen.insert(coreprep::stack_seed(5, id, r));
        }
    }
    CHECK(seen.size() == 9u);
    CHECK(coreprep::stack_seed(5, "a", 1) == coreprep::stack_seed(5, "a", 1));
}

TEST_CASE("stack and core files round trip")
{
    std::mt19937_64 rng(39);
    auto c = record(rng, 600, 540);
    c.label = 2;
    c.box = {10, 20, 600, 540, 12345};
    const auto s = coreprep::build_stack(c, 3);
    const auto dir = fs::temp_directory_path() / "tmascan_test_stack";
    fs::remove_all(dir);
    coreprep::write_stack(dir / "x", s);
    const auto back = coreprep::read_stack(dir / "x");
    CHECK(back.patches == s.patches);
    CHECK(back.crop_offsets == s.crop_offsets);
    CHECK(back.core_id == s.core_id);
    CHECK(back.repeat == 2);
    CHECK(back.crop_seed == 3u);

    coreprep::write_cores(dir / "cores", {c});
    const auto cores = coreprep::read_cores(dir / "cores");
    REQUIRE(cores.size() == 1u);
    CHECK(cores[0].image == c.image);
    CHECK(cores[0].box == c.box);
    CHECK(cores[0].label == 2);
    CHECK(cores[0].key() == c.key());

    // A short payload is a format error.
    fs::resize_file(dir / "x.raw", fs::file_size(dir / "x.raw") - 1);
    CHECK_THROWS_AS(coreprep::read_stack(dir / "x"), FormatError);
}

TEST_CASE("segmentation finds synthetic slide cores")
{
    synth::SlideSpec spec;
    spec.grid_rows = 2;
    spec.grid_cols = 3;
    spec.scores = {0, 1, 2, 3, std::nullopt, 1};
    spec.seed = 40;
    const auto truth = synth::synth_slide(spec);
    const auto boxes = coreprep::segment_cores(coreprep::white_balance(truth.image));
    CHECK(boxes.size() == 5u);
    const auto g = coreprep::fit_grid(boxes, 2, 3);
    CHECK_FALSE(g.cell(1, 1));
    for (const auto& core : truth.layout) {
        REQUIRE(g.cell(core.row, core.col));
        const auto& b = *g.cell(core.row, core.col);
        CHECK(std::abs(b.center_x() * spec.scale_um_per_px - core.center_x_um) < 5 * spec.scale_um_per_px);
        CHECK(std::abs(b.center_y() * spec.scale_um_per_px - core.center_y_um) < 5 * spec.scale_um_per_px);
    }
}
