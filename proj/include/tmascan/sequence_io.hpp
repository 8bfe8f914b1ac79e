#pragma once

#include "tmascan/imaging.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tmascan::io {

namespace fs = std::filesystem;

/// Camera-side description of a recorded frame sequence.
struct FrameManifest {
    std::size_t frame_count = 0;
    int width = 0;
    int height = 0;
    double frame_period_s = 0.0;
    double exposure_s = 0.0;
    double scale_um_per_px = 0.0;
    std::optional<std::string> trajectory; // file name relative to the sequence directory

    std::size_t frame_bytes() const noexcept
    {
        return static_cast<std::size_t>(width) * height * imaging::Raster::channels;
    }
    double frame_rate_hz() const noexcept { return 1.0 / frame_period_s; }

    // Throws ParameterError on a broken invariant.
    void validate() const;

    bool operator==(const FrameManifest&) const = default;
};

/// Random access to the frames of a sequence, whatever backs them.
class FrameSource {
public:
    virtual ~FrameSource() = default;

    virtual const FrameManifest& manifest() const = 0;
    virtual std::span<const std::uint8_t> frame_bytes(std::size_t index) const = 0;

    std::size_t size() const { return manifest().frame_count; }
    imaging::Raster frame(std::size_t index) const;
};

class InMemorySequence final : public FrameSource {
public:
    InMemorySequence(FrameManifest manifest, std::vector<imaging::Raster> frames);

    const FrameManifest& manifest() const override { return manifest_; }
    std::span<const std::uint8_t> frame_bytes(std::size_t index) const override;
    const std::vector<imaging::Raster>& frames() const noexcept { return frames_; }

private:
    FrameManifest manifest_;
    std::vector<imaging::Raster> frames_;
};

/// Read-only memory map of `frames.bin`; frames are paged in on demand, so
/// sequences larger than RAM can be processed.
class MappedSequence final : public FrameSource {
public:
    explicit MappedSequence(const fs::path& dir);
    ~MappedSequence() override;
    MappedSequence(const MappedSequence&) = delete;
    MappedSequence& operator=(const MappedSequence&) = delete;

    const FrameManifest& manifest() const override { return manifest_; }
    std::span<const std::uint8_t> frame_bytes(std::size_t index) const override;

private:
    FrameManifest manifest_;
    const std::uint8_t* base_ = nullptr;
    std::size_t length_ = 0;
};

/// Streaming writer: frames are appended one by one and the manifest is
/// written by finish(), which checks the declared frame count.
class SequenceWriter {
public:
    SequenceWriter(const fs::path& dir, FrameManifest manifest);
    ~SequenceWriter();
    SequenceWriter(const SequenceWriter&) = delete;
    SequenceWriter& operator=(const SequenceWriter&) = delete;

    void append(const imaging::Raster& frame);
    void finish();
    std::size_t written() const noexcept { return written_; }

private:
    fs::path dir_;
    FrameManifest manifest_;
    std::ofstream out_;
    std::size_t written_ = 0;
    bool finished_ = false;
};

void write_sequence(const fs::path& dir, const FrameManifest& manifest, std::span<const imaging::Raster> frames);
void write_sequence(const fs::path& dir, const FrameSource& source);
FrameManifest read_manifest(const fs::path& dir);

// Equivalent to constructing a MappedSequence; validates frames.bin length.
std::unique_ptr<FrameSource> read_sequence(const fs::path& dir);

/// Single rasters: `<stem>.raw` holds the RGB8 bytes, `<stem>.json` the header.
void write_raster(const fs::path& stem, const imaging::Raster& img);
imaging::Raster read_raster(const fs::path& stem);

// Atomic-enough text output shared by every module that writes reports.
void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

} // namespace tmascan::io
