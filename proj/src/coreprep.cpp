#include "tmascan/coreprep.hpp"

#include "tmascan/csv.hpp"
#include "tmascan/error.hpp"
#include "tmascan/sequence_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace tmascan::coreprep {

namespace {

using json = nlohmann::ordered_json;

template <typename T>
std::vector<T> integral(int w, int h, auto&& value)
{
    std::vector<T> s(static_cast<std::size_t>(w + 1) * (h + 1), 0);
    for (int y = 0; y < h; ++y) {
        T row = 0;
        for (int x = 0; x < w; ++x) {
            row += value(x, y);
            s[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = s[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
        }
    }
    return s;
}

template <typename T>
T box_sum(const std::vector<T>& s, int w, int x0, int y0, int x1, int y1)
{
    const auto W = static_cast<std::size_t>(w + 1);
    return s[y1 * W + x1] - s[y0 * W + x1] - s[y1 * W + x0] + s[y0 * W + x0];
}

} // namespace

BalanceResult white_balance_ex(const Raster& mosaic, const BalanceOptions& options)
{
    const int w = mosaic.width();
    const int h = mosaic.height();
    const int block = options.block;
    if (block < 1 || options.stride < 1) {
        throw ParameterError("balance block and stride must be positive");
    }
    if (w < block || h < block) {
        throw BalanceError("image is smaller than one " + std::to_string(block) + "x" + std::to_string(block) +
                           " background block");
    }
    const auto gray = imaging::to_gray(mosaic);
    const auto sg = integral<std::int64_t>(w, h, [&](int x, int y) { return std::int64_t{gray.at(x, y)}; });
    const auto sgg = integral<std::int64_t>(w, h, [&](int x, int y) {
        const std::int64_t g = gray.at(x, y);
        return g * g;
    });
    const double n = static_cast<double>(block) * block;
    bool found = false;
    double best_mean = -1.0;
    int bx = 0, by = 0;
    auto visit = [&](int x, int y) {
        const double s = static_cast<double>(box_sum(sg, w, x, y, x + block, y + block));
        const double ss = static_cast<double>(box_sum(sgg, w, x, y, x + block, y + block));
        const double mean = s / n;
        const double var = ss / n - mean * mean;
        if (var < options.variance_threshold && mean > best_mean) {
            best_mean = mean;
            bx = x;
            by = y;
            found = true;
        }
    };
    std::vector<int> xs, ys;
    for (int x = 0; x + block <= w; x += options.stride) {
        xs.push_back(x);
    }
    if (xs.back() != w - block) {
        xs.push_back(w - block);
    }
    for (int y = 0; y + block <= h; y += options.stride) {
        ys.push_back(y);
    }
    if (ys.back() != h - block) {
        ys.push_back(h - block);
    }
    for (int y : ys) {
        for (int x : xs) {
            visit(x, y);
        }
    }
    if (!found) {
        throw BalanceError("no " + std::to_string(block) + "x" + std::to_string(block) +
                           " block has gray variance below " + std::to_string(options.variance_threshold) +
                           "; raise the background variance threshold");
    }

    BalanceResult out;
    out.block_x = bx;
    out.block_y = by;
    std::array<std::int64_t, 3> sums{};
    for (int y = by; y < by + block; ++y) {
        for (int x = bx; x < bx + block; ++x) {
            for (int c = 0; c < 3; ++c) {
                sums[c] += mosaic.at(x, y, c);
            }
        }
    }
    std::array<int, 3> offset{};
    std::array<double, 3> gain{};
    for (int c = 0; c < 3; ++c) {
        out.background[c] = static_cast<double>(sums[c]) / n;
        offset[c] = static_cast<int>(std::lround(255.0 - out.background[c]));
        gain[c] = out.background[c] > 0.0 ? 255.0 / out.background[c] : 1.0;
    }
    out.image = mosaic;
    auto bytes = out.image.bytes();
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        for (int c = 0; c < 3; ++c) {
            const double v = options.multiplicative ? std::round(bytes[i + c] * gain[c]) : bytes[i + c] + offset[c];
            bytes[i + c] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
        }
    }
    return out;
}

Raster white_balance(const Raster& mosaic, const BalanceOptions& options)
{
    return white_balance_ex(mosaic, options).image;
}

int otsu_threshold(const imaging::GrayRaster& gray)
{
    std::array<std::int64_t, 256> hist{};
    for (auto v : gray.data) {
        ++hist[v];
    }
    const auto total = static_cast<std::int64_t>(gray.data.size());
    if (std::count_if(hist.begin(), hist.end(), [](auto c) { return c > 0; }) < 2) {
        return -1;
    }
    double sum_all = 0.0;
    for (int i = 0; i < 256; ++i) {
        sum_all += static_cast<double>(i) * hist[i];
    }
    double sum_b = 0.0;
    std::int64_t w_b = 0;
    double best = -1.0;
    int level = 0;
    for (int t = 0; t < 256; ++t) {
        w_b += hist[t];
        if (w_b == 0) {
            continue;
        }
        const std::int64_t w_f = total - w_b;
        if (w_f == 0) {
            break;
        }
        sum_b += static_cast<double>(t) * hist[t];
        const double m_b = sum_b / static_cast<double>(w_b);
        const double m_f = (sum_all - sum_b) / static_cast<double>(w_f);
        const double between = static_cast<double>(w_b) * static_cast<double>(w_f) * (m_b - m_f) * (m_b - m_f);
        if (between > best) {
            best = between;
            level = t;
        }
    }
    return level;
}

std::vector<Box> segment_cores(const Raster& balanced, const SegmentOptions& options)
{
    if (!(options.core_diameter_um > 0.0)) {
        throw ParameterError("core diameter must be positive");
    }
    const int w = balanced.width();
    const int h = balanced.height();
    const auto gray = imaging::to_gray(balanced);
    const int level = otsu_threshold(gray);
    if (level < 0) {
        throw SegmentationError("no cores found: the image has a single gray level");
    }

    // Threshold, then box-blur the mask and re-threshold at one half.
    const double d_px = options.core_diameter_um / balanced.scale();
    const int r = static_cast<int>(std::ceil(d_px / 20.0));
    const auto s = integral<std::int32_t>(w, h, [&](int x, int y) { return gray.at(x, y) <= level ? 1 : 0; });
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y) {
        const int y0 = std::max(0, y - r);
        const int y1 = std::min(h, y + r + 1);
        for (int x = 0; x < w; ++x) {
            const int x0 = std::max(0, x - r);
            const int x1 = std::min(w, x + r + 1);
            const auto on = box_sum(s, w, x0, y0, x1, y1);
            const auto n = (x1 - x0) * (y1 - y0);
            mask[static_cast<std::size_t>(y) * w + x] = 2 * on >= n ? 1 : 0;
        }
    }

    // 8-connected components; border-touching ones are cleared.
    const double min_area = options.min_area_fraction * std::numbers::pi * d_px * d_px / 4.0;
    std::vector<Box> boxes;
    std::vector<int> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            if (mask[static_cast<std::size_t>(y0) * w + x0] != 1) {
                continue;
            }
            int minx = x0, maxx = x0, miny = y0, maxy = y0;
            std::int64_t area = 0;
            stack.assign(1, y0 * w + x0);
            mask[static_cast<std::size_t>(y0) * w + x0] = 2;
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                const int px = p % w;
                const int py = p / w;
                ++area;
                minx = std::min(minx, px);
                maxx = std::max(maxx, px);
                miny = std::min(miny, py);
                maxy = std::max(maxy, py);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = px + dx;
                        const int ny = py + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) {
                            continue;
                        }
                        auto& m = mask[static_cast<std::size_t>(ny) * w + nx];
                        if (m == 1) {
                            m = 2;
                            stack.push_back(ny * w + nx);
                        }
                    }
                }
            }
            const bool border = minx == 0 || miny == 0 || maxx == w - 1 || maxy == h - 1;
            if (!border && static_cast<double>(area) >= min_area) {
                boxes.push_back({minx, miny, maxx - minx + 1, maxy - miny + 1, area});
            }
        }
    }
    if (boxes.empty()) {
        throw SegmentationError("no cores found at Otsu level " + std::to_string(level));
    }
    return boxes;
}

std::size_t GridAssignment::filled() const
{
    return static_cast<std::size_t>(std::count_if(cells.begin(), cells.end(), [](const auto& c) { return c.has_value(); }));
}

GridAssignment fit_grid(const std::vector<Box>& boxes, int grid_rows, int grid_cols)
{
    if (grid_rows < 1 || grid_cols < 1) {
        throw ParameterError("grid dimensions must be at least 1x1");
    }
    if (boxes.empty()) {
        throw ParameterError("grid fitting needs at least one box");
    }
    int x0 = boxes.front().x, y0 = boxes.front().y;
    int x1 = x0 + boxes.front().width, y1 = y0 + boxes.front().height;
    for (const auto& b : boxes) {
        x0 = std::min(x0, b.x);
        y0 = std::min(y0, b.y);
        x1 = std::max(x1, b.x + b.width);
        y1 = std::max(y1, b.y + b.height);
    }
    const double cw = static_cast<double>(x1 - x0) / grid_cols;
    const double ch = static_cast<double>(y1 - y0) / grid_rows;
    GridAssignment g;
    g.rows = grid_rows;
    g.cols = grid_cols;
    g.cells.resize(static_cast<std::size_t>(grid_rows) * grid_cols);
    for (const auto& b : boxes) {
        const int c = std::clamp(static_cast<int>(std::floor((b.center_x() - x0) / cw)), 0, grid_cols - 1);
        const int r = std::clamp(static_cast<int>(std::floor((b.center_y() - y0) / ch)), 0, grid_rows - 1);
        auto& cell = g.cells[static_cast<std::size_t>(r) * grid_cols + c];
        if (!cell) {
            cell = b;
            continue;
        }
        const bool larger = b.area > cell->area;
        g.conflicts.push_back({r, c, larger ? b : *cell, larger ? *cell : b});
        if (larger) {
            cell = b;
        }
    }
    return g;
}

std::optional<int> LabelMap::score(int r, int c) const
{
    const auto it = scores.find({r, c});
    if (it == scores.end()) {
        return std::nullopt;
    }
    return it->second;
}

LabelMap LabelMap::parse(const std::string& text, int rows, int cols)
{
    const auto table = csv::parse(text);
    const int ir = table.column("row");
    const int ic = table.column("col");
    const int is = table.column("score");
    if (ir < 0 || ic < 0 || is < 0) {
        throw LabelingError("label map needs a header with row, col and score columns");
    }
    LabelMap map;
    int max_r = -1, max_c = -1;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& row = table.rows[i];
        const auto line = table.line_numbers[i];
        int r = 0, c = 0, s = 0;
        try {
            r = std::stoi(row.at(ir));
            c = std::stoi(row.at(ic));
            s = std::stoi(row.at(is));
        } catch (const std::exception&) {
            throw LabelingError("label map line " + std::to_string(line) + " is malformed");
        }
        if (r < 0 || c < 0) {
            throw LabelingError("label map line " + std::to_string(line) + " has a negative grid index");
        }
        if (s < 0 || s > 3) {
            throw LabelingError("label map line " + std::to_string(line) + " has score " + std::to_string(s) +
                                " outside {0,1,2,3}");
        }
        if (!map.scores.emplace(std::pair{r, c}, s).second) {
            throw LabelingError("label map line " + std::to_string(line) + " duplicates cell (" + std::to_string(r) +
                                "," + std::to_string(c) + ")");
        }
        max_r = std::max(max_r, r);
        max_c = std::max(max_c, c);
    }
    map.rows = rows > 0 ? rows : max_r + 1;
    map.cols = cols > 0 ? cols : max_c + 1;
    if (max_r >= map.rows || max_c >= map.cols) {
        throw LabelingError("label map has entries outside its " + std::to_string(map.rows) + "x" +
                            std::to_string(map.cols) + " grid");
    }
    return map;
}

LabelMap LabelMap::read(const std::filesystem::path& path, int rows, int cols)
{
    return parse(io::read_text(path), rows, cols);
}

std::string core_id(const std::string& slide_id, int row, int col)
{
    return slide_id + "_r" + std::to_string(row) + "c" + std::to_string(col);
}

Labeling assign_labels(const GridAssignment& grid, const Raster& mosaic, const LabelMap& map,
                       const std::string& slide_id, int repeat)
{
    if (grid.rows != map.rows || grid.cols != map.cols) {
        throw LabelingError("grid is " + std::to_string(grid.rows) + "x" + std::to_string(grid.cols) +
                            " but the label map is " + std::to_string(map.rows) + "x" + std::to_string(map.cols));
    }
    if (repeat < 0 || repeat > 2) {
        throw ParameterError("repeat index must lie in {0,1,2}");
    }
    Labeling out;
    for (int r = 0; r < grid.rows; ++r) {
        for (int c = 0; c < grid.cols; ++c) {
            const auto& box = grid.cell(r, c);
            const auto score = map.score(r, c);
            if (!box) {
                if (score) {
                    out.warnings.push_back("missing core at (" + std::to_string(r) + "," + std::to_string(c) +
                                           "), labeled " + std::to_string(*score));
                }
                continue;
            }
            CoreRecord rec;
            rec.row = r;
            rec.col = c;
            rec.box = *box;
            rec.image = imaging::crop(mosaic, box->x, box->y, box->width, box->height);
            rec.label = score;
            rec.id = core_id(slide_id, r, c);
            rec.repeat = repeat;
            if (!score) {
                out.warnings.push_back("core " + rec.id + " has no entry in the label map");
            }
            out.records.push_back(std::move(rec));
        }
    }
    return out;
}

std::uint64_t stack_seed(std::uint64_t base_seed, const std::string& core_id, int repeat)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](std::uint8_t b) {
        h ^= b;
        h *= 0x100000001b3ull;
    };
    for (int i = 0; i < 8; ++i) {
        mix(static_cast<std::uint8_t>(base_seed >> (8 * i)));
    }
    for (char ch : core_id) {
        mix(static_cast<std::uint8_t>(ch));
    }
    mix(0);
    mix(static_cast<std::uint8_t>(repeat));
    return h;
}

Raster resize_bilinear(const Raster& img, int width, int height)
{
    if (width < 1 || height < 1) {
        throw ParameterError("resize target must be at least 1x1");
    }
    Raster out(width, height, img.scale() * img.width() / width);
    const double sx = static_cast<double>(img.width()) / width;
    const double sy = static_cast<double>(img.height()) / height;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height() - 1);
        const double ty = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width() - 1);
            const double tx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(x0, y0, c) * (1.0 - tx) + img.at(x1, y0, c) * tx;
                const double bottom = img.at(x0, y1, c) * (1.0 - tx) + img.at(x1, y1, c) * tx;
                out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(top * (1.0 - ty) + bottom * ty));
            }
        }
    }
    return out;
}

Raster pad_replicate(const Raster& img, int width, int height)
{
    const int w = std::max(width, img.width());
    const int h = std::max(height, img.height());
    if (w == img.width() && h == img.height()) {
        return img;
    }
    const int left = (w - img.width()) / 2;
    const int top = (h - img.height()) / 2;
    Raster out(w, h, img.scale());
    for (int y = 0; y < h; ++y) {
        const int sy = std::clamp(y - top, 0, img.height() - 1);
        for (int x = 0; x < w; ++x) {
            const int sx = std::clamp(x - left, 0, img.width() - 1);
            out.set_pixel(x, y, img.pixel(sx, sy));
        }
    }
    return out;
}

PatchStack build_stack(const CoreRecord& core, std::uint64_t crop_seed)
{
    if (core.image.empty()) {
        throw ParameterError("core " + core.id + " has an empty image");
    }
    PatchStack stack;
    stack.core_id = core.id;
    stack.repeat = core.repeat;
    stack.crop_seed = crop_seed;
    stack.patches.push_back(resize_bilinear(core.image, kPatchSize, kPatchSize));
    const Raster padded = pad_replicate(core.image, kPatchSize, kPatchSize);
    std::mt19937_64 rng(crop_seed);
    std::uniform_int_distribution<int> ux(0, padded.width() - kPatchSize);
    std::uniform_int_distribution<int> uy(0, padded.height() - kPatchSize);
    for (int i = 1; i < kPatchCount; ++i) {
        const int x = ux(rng);
        const int y = uy(rng);
        stack.crop_offsets.emplace_back(x, y);
        stack.patches.push_back(imaging::crop(padded, x, y, kPatchSize, kPatchSize));
    }
    return stack;
}

void write_stack(const std::filesystem::path& stem, const PatchStack& stack)
{
    if (stack.patches.size() != kPatchCount) {
        throw ParameterError("a patch stack holds exactly 5 patches");
    }
    if (stem.has_parent_path()) {
        std::filesystem::create_directories(stem.parent_path());
    }
    std::ofstream out(stem.string() + ".raw", std::ios::binary | std::ios::trunc);
    for (const auto& p : stack.patches) {
        if (p.width() != kPatchSize || p.height() != kPatchSize) {
            throw ParameterError("patches must be 512x512");
        }
        out.write(reinterpret_cast<const char*>(p.bytes().data()), static_cast<std::streamsize>(p.byte_size()));
    }
    if (!out) {
        throw Error("cannot write " + stem.string() + ".raw");
    }
    json j;
    j["core_id"] = stack.core_id;
    j["repeat"] = stack.repeat;
    j["crop_seed"] = stack.crop_seed;
    j["patches"] = kPatchCount;
    j["width"] = kPatchSize;
    j["height"] = kPatchSize;
    j["channels"] = 3;
    j["scale_um_per_px"] = stack.patches[1].scale();
    j["patch0_scale_um_per_px"] = stack.patches[0].scale();
    json offsets = json::array();
    for (const auto& [x, y] : stack.crop_offsets) {
        offsets.push_back({x, y});
    }
    j["crop_offsets"] = offsets;
    io::write_text(stem.string() + ".json", j.dump(2) + "\n");
}

PatchStack read_stack(const std::filesystem::path& stem)
{
    const auto header = stem.string() + ".json";
    json j;
    try {
        j = json::parse(io::read_text(header));
    } catch (const json::parse_error& e) {
        throw FormatError(header + ": " + e.what(), e.byte);
    }
    PatchStack stack;
    try {
        stack.core_id = j.at("core_id").get<std::string>();
        stack.repeat = j.at("repeat").get<int>();
        stack.crop_seed = j.at("crop_seed").get<std::uint64_t>();
        for (const auto& o : j.at("crop_offsets")) {
            stack.crop_offsets.emplace_back(o.at(0).get<int>(), o.at(1).get<int>());
        }
    } catch (const json::exception& e) {
        throw FormatError(header + ": " + e.what(), 0);
    }
    const double scale = j.value("scale_um_per_px", 1.0);
    const double scale0 = j.value("patch0_scale_um_per_px", scale);
    const std::string data = io::read_text(stem.string() + ".raw");
    const std::size_t patch_bytes = static_cast<std::size_t>(kPatchSize) * kPatchSize * 3;
    if (data.size() != patch_bytes * kPatchCount) {
        throw FormatError(stem.string() + ".raw: expected " + std::to_string(patch_bytes * kPatchCount) + " bytes",
                          std::min(data.size(), patch_bytes * kPatchCount));
    }
    for (int i = 0; i < kPatchCount; ++i) {
        std::vector<std::uint8_t> bytes(data.begin() + static_cast<std::ptrdiff_t>(i * patch_bytes),
                                        data.begin() + static_cast<std::ptrdiff_t>((i + 1) * patch_bytes));
        stack.patches.emplace_back(kPatchSize, kPatchSize, i == 0 ? scale0 : scale, std::move(bytes));
    }
    return stack;
}

void write_cores(const std::filesystem::path& dir, const std::vector<CoreRecord>& records)
{
    std::filesystem::create_directories(dir);
    json arr = json::array();
    for (const auto& r : records) {
        io::write_raster(dir / r.key(), r.image);
        json e;
        e["id"] = r.id;
        e["repeat"] = r.repeat;
        e["row"] = r.row;
        e["col"] = r.col;
        e["box"] = {r.box.x, r.box.y, r.box.width, r.box.height};
        e["area"] = r.box.area;
        e["label"] = r.label ? json(*r.label) : json(nullptr);
        e["image"] = r.key();
        arr.push_back(e);
    }
    io::write_text(dir / "cores.json", arr.dump(2) + "\n");
}

std::vector<CoreRecord> read_cores(const std::filesystem::path& dir)
{
    const auto path = dir / "cores.json";
    json arr;
    try {
        arr = json::parse(io::read_text(path));
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what(), e.byte);
    }
    std::vector<CoreRecord> out;
    try {
        for (const auto& e : arr) {
            CoreRecord r;
            r.id = e.at("id").get<std::string>();
            r.repeat = e.at("repeat").get<int>();
            r.row = e.at("row").get<int>();
            r.col = e.at("col").get<int>();
            const auto& b = e.at("box");
            r.box = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>(),
                     e.value("area", std::int64_t{0})};
            if (!e.at("label").is_null()) {
                r.label = e.at("label").get<int>();
            }
            r.image = io::read_raster(dir / e.at("image").get<std::string>());
            out.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": " + e.what(), 0);
    }
    return out;
}

} // namespace tmascan::coreprep
