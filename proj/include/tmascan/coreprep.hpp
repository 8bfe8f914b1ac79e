#pragma once

#include "tmascan/imaging.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tmascan::coreprep {

using imaging::Raster;

struct BalanceOptions {
    int block = 64;
    int stride = 16;
    double variance_threshold = 16.0; // gray levels squared
    bool multiplicative = false;
};

struct BalanceResult {
    Raster image;
    std::array<double, 3> background{}; // per-channel mean of the reference block
    int block_x = 0;
    int block_y = 0;
};

// Brightest 64x64 block with gray variance below the threshold is taken as
// background and mapped to white.
BalanceResult white_balance_ex(const Raster& mosaic, const BalanceOptions& options = {});
Raster white_balance(const Raster& mosaic, const BalanceOptions& options = {});

struct Box {
    int x = 0;
    int y = 0;
    int width = 0;
    int height = 0;
    std::int64_t area = 0; // component pixels

    double center_x() const noexcept { return x + width / 2.0; }
    double center_y() const noexcept { return y + height / 2.0; }
    bool contains(double px, double py) const noexcept
    {
        return px >= x && px < x + width && py >= y && py < y + height;
    }
    bool operator==(const Box&) const = default;
};

struct SegmentOptions {
    double core_diameter_um = 110.0;
    double min_area_fraction = 0.25;
};

// Otsu level over a 256-bin histogram; -1 when the image has one gray value.
int otsu_threshold(const imaging::GrayRaster& gray);

std::vector<Box> segment_cores(const Raster& balanced, const SegmentOptions& options = {});

struct GridConflict {
    int row = 0;
    int col = 0;
    Box kept;
    Box dropped;
};

struct GridAssignment {
    int rows = 0;
    int cols = 0;
    std::vector<std::optional<Box>> cells; // row-major
    std::vector<GridConflict> conflicts;

    const std::optional<Box>& cell(int r, int c) const { return cells.at(static_cast<std::size_t>(r) * cols + c); }
    std::size_t filled() const;
};

GridAssignment fit_grid(const std::vector<Box>& boxes, int grid_rows, int grid_cols);

struct LabelMap {
    int rows = 0;
    int cols = 0;
    std::map<std::pair<int, int>, int> scores;

    std::optional<int> score(int r, int c) const;
    // Reads `row,col,score` (extra columns ignored). Grid dimensions default
    // to one past the largest row and column present.
    static LabelMap read(const std::filesystem::path& path, int rows = 0, int cols = 0);
    static LabelMap parse(const std::string& text, int rows = 0, int cols = 0);
};

struct CoreRecord {
    int row = 0;
    int col = 0;
    Box box;
    Raster image;
    std::optional<int> label;
    std::string id;      // specimen id: <slide>_r<row>c<col>
    int repeat = 0;

    std::string key() const { return id + "_rep" + std::to_string(repeat); }
};

struct Labeling {
    std::vector<CoreRecord> records;
    std::vector<std::string> warnings;
};

std::string core_id(const std::string& slide_id, int row, int col);

Labeling assign_labels(const GridAssignment& grid, const Raster& mosaic, const LabelMap& map,
                       const std::string& slide_id, int repeat);

inline constexpr int kPatchSize = 512;
inline constexpr int kPatchCount = 5;

struct PatchStack {
    std::vector<Raster> patches; // patch 0 is the whole core, 1-4 random crops
    std::vector<std::pair<int, int>> crop_offsets;
    std::string core_id;
    int repeat = 0;
    std::uint64_t crop_seed = 0;
};

std::uint64_t stack_seed(std::uint64_t base_seed, const std::string& core_id, int repeat);

Raster resize_bilinear(const Raster& img, int width, int height);
// Centred replicate padding up to at least (width, height).
Raster pad_replicate(const Raster& img, int width, int height);

PatchStack build_stack(const CoreRecord& core, std::uint64_t crop_seed);

// `<stem>.raw` holds 5x512x512x3 bytes, `<stem>.json` the provenance.
void write_stack(const std::filesystem::path& stem, const PatchStack& stack);
PatchStack read_stack(const std::filesystem::path& stem);

// Rasters `<key>` plus cores.json with id, box, label and repeat.
void write_cores(const std::filesystem::path& dir, const std::vector<CoreRecord>& records);
std::vector<CoreRecord> read_cores(const std::filesystem::path& dir);

} // namespace tmascan::coreprep
