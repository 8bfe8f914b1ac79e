#include "tmascan/sequence_io.hpp"

#include "tmascan/error.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <memory>
#include <sstream>

namespace tmascan::io {

using json = nlohmann::json;

namespace {

constexpr const char* kManifestName = "manifest.json";
constexpr const char* kFramesName = "frames.bin";

json manifest_to_json(const FrameManifest& m)
{
    json j;
    j["frame_count"] = m.frame_count;
    j["width"] = m.width;
    j["height"] = m.height;
    j["frame_period_s"] = m.frame_period_s;
    j["exposure_s"] = m.exposure_s;
    j["scale_um_per_px"] = m.scale_um_per_px;
    if (m.trajectory) {
        j["trajectory"] = *m.trajectory;
    }
    return j;
}

template <typename T>
T require(const json& j, const char* key, const std::string& what)
{
    if (!j.contains(key)) {
        throw FormatError(what + ": missing field '" + key + "'", 0);
    }
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw FormatError(what + ": field '" + key + "' has the wrong type", 0);
    }
}

json parse_json_file(const fs::path& path)
{
    const std::string text = read_text(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("malformed JSON in " + path.string() + ": " + e.what(), e.byte);
    }
}

} // namespace

void FrameManifest::validate() const
{
    if (frame_count < 1) {
        throw ParameterError("frame sequence must contain at least one frame");
    }
    if (width < 1 || height < 1) {
        throw ParameterError("frame dimensions must be positive");
    }
    if (!(frame_period_s > 0.0)) {
        throw ParameterError("frame period must be positive");
    }
    if (exposure_s < 0.0 || exposure_s > frame_period_s) {
        throw ParameterError("exposure must lie in [0, frame period]");
    }
    if (!(scale_um_per_px > 0.0)) {
        throw ParameterError("scale must be positive");
    }
}

imaging::Raster FrameSource::frame(std::size_t index) const
{
    const auto bytes = frame_bytes(index);
    const auto& m = manifest();
    return imaging::Raster(m.width, m.height, m.scale_um_per_px, std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

InMemorySequence::InMemorySequence(FrameManifest manifest, std::vector<imaging::Raster> frames)
    : manifest_(std::move(manifest)), frames_(std::move(frames))
{
    manifest_.frame_count = frames_.size();
    manifest_.validate();
    for (std::size_t i = 0; i < frames_.size(); ++i) {
        if (frames_[i].width() != manifest_.width || frames_[i].height() != manifest_.height) {
            throw FormatError("frame " + std::to_string(i) + " dimensions differ from manifest",
                              i * manifest_.frame_bytes());
        }
    }
}

std::span<const std::uint8_t> InMemorySequence::frame_bytes(std::size_t index) const
{
    return frames_.at(index).bytes();
}

MappedSequence::MappedSequence(const fs::path& dir) : manifest_(read_manifest(dir))
{
    const fs::path path = dir / kFramesName;
    const int fd = ::open(path.c_str(), O_RDONLY);
    if (fd < 0) {
        throw FormatError("cannot open " + path.string() + ": " + std::strerror(errno), 0);
    }
    struct stat st {};
    if (::fstat(fd, &st) != 0) {
        ::close(fd);
        throw FormatError("cannot stat " + path.string(), 0);
    }
    const auto actual = static_cast<std::uint64_t>(st.st_size);
    const std::uint64_t expected = static_cast<std::uint64_t>(manifest_.frame_count) * manifest_.frame_bytes();
    if (actual < expected) {
        ::close(fd);
        const std::size_t complete = static_cast<std::size_t>(actual / manifest_.frame_bytes());
        throw FormatError("truncated frame data: manifest declares " + std::to_string(manifest_.frame_count) +
                              " frames but only " + std::to_string(complete) + " complete frames are present",
                          actual);
    }
    if (actual > expected) {
        ::close(fd);
        throw FormatError("frame data has " + std::to_string(actual - expected) + " trailing bytes", expected);
    }
    length_ = static_cast<std::size_t>(actual);
    void* addr = ::mmap(nullptr, length_, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (addr == MAP_FAILED) {
        throw FormatError("cannot map " + path.string() + ": " + std::strerror(errno), 0);
    }
    ::madvise(addr, length_, MADV_SEQUENTIAL);
    base_ = static_cast<const std::uint8_t*>(addr);
}

MappedSequence::~MappedSequence()
{
    if (base_ != nullptr) {
        ::munmap(const_cast<std::uint8_t*>(base_), length_);
    }
}

std::span<const std::uint8_t> MappedSequence::frame_bytes(std::size_t index) const
{
    if (index >= manifest_.frame_count) {
        throw std::out_of_range("frame index " + std::to_string(index) + " out of range");
    }
    const std::size_t n = manifest_.frame_bytes();
    return {base_ + index * n, n};
}

SequenceWriter::SequenceWriter(const fs::path& dir, FrameManifest manifest)
    : dir_(dir), manifest_(std::move(manifest))
{
    manifest_.validate();
    fs::create_directories(dir_);
    out_.open(dir_ / kFramesName, std::ios::binary | std::ios::trunc);
    if (!out_) {
        throw Error("cannot write " + (dir_ / kFramesName).string());
    }
}

SequenceWriter::~SequenceWriter() = default;

void SequenceWriter::append(const imaging::Raster& frame)
{
    const std::uint64_t offset = static_cast<std::uint64_t>(written_) * manifest_.frame_bytes();
    if (finished_) {
        throw FormatError("append after finish", offset);
    }
    if (frame.width() != manifest_.width || frame.height() != manifest_.height) {
        throw FormatError("frame " + std::to_string(written_) + " is " + std::to_string(frame.width()) + "x" +
                              std::to_string(frame.height()) + ", manifest declares " +
                              std::to_string(manifest_.width) + "x" + std::to_string(manifest_.height),
                          offset);
    }
    if (written_ >= manifest_.frame_count) {
        throw FormatError("more frames than the declared frame_count " + std::to_string(manifest_.frame_count),
                          offset);
    }
    const auto bytes = frame.bytes();
    out_.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out_) {
        throw Error("write failed for " + (dir_ / kFramesName).string());
    }
    ++written_;
}

void SequenceWriter::finish()
{
    if (finished_) {
        return;
    }
    if (written_ != manifest_.frame_count) {
        throw FormatError("wrote " + std::to_string(written_) + " frames but manifest declares " +
                              std::to_string(manifest_.frame_count),
                          static_cast<std::uint64_t>(written_) * manifest_.frame_bytes());
    }
    out_.close();
    write_text(dir_ / kManifestName, manifest_to_json(manifest_).dump(2) + "\n");
    finished_ = true;
}

void write_sequence(const fs::path& dir, const FrameManifest& manifest, std::span<const imaging::Raster> frames)
{
    FrameManifest m = manifest;
    if (m.frame_count != frames.size()) {
        throw FormatError("manifest declares " + std::to_string(m.frame_count) + " frames, " +
                              std::to_string(frames.size()) + " supplied",
                          0);
    }
    SequenceWriter writer(dir, m);
    for (const auto& f : frames) {
        writer.append(f);
    }
    writer.finish();
}

void write_sequence(const fs::path& dir, const FrameSource& source)
{
    SequenceWriter writer(dir, source.manifest());
    for (std::size_t i = 0; i < source.size(); ++i) {
        writer.append(source.frame(i));
    }
    writer.finish();
}

FrameManifest read_manifest(const fs::path& dir)
{
    const fs::path path = dir / kManifestName;
    const json j = parse_json_file(path);
    if (!j.is_object()) {
        throw FormatError("manifest is not a JSON object: " + path.string(), 0);
    }
    const std::string what = path.string();
    FrameManifest m;
    const auto count = require<std::int64_t>(j, "frame_count", what);
    if (count < 1) {
        throw FormatError(what + ": frame_count must be at least 1", 0);
    }
    m.frame_count = static_cast<std::size_t>(count);
    m.width = require<int>(j, "width", what);
    m.height = require<int>(j, "height", what);
    m.frame_period_s = require<double>(j, "frame_period_s", what);
    m.exposure_s = require<double>(j, "exposure_s", what);
    m.scale_um_per_px = require<double>(j, "scale_um_per_px", what);
    if (j.contains("trajectory") && !j["trajectory"].is_null()) {
        m.trajectory = require<std::string>(j, "trajectory", what);
    }
    try {
        m.validate();
    } catch (const ParameterError& e) {
        throw FormatError(what + ": " + e.what(), 0);
    }
    return m;
}

std::unique_ptr<FrameSource> read_sequence(const fs::path& dir)
{
    return std::make_unique<MappedSequence>(dir);
}

void write_raster(const fs::path& stem, const imaging::Raster& img)
{
    if (stem.has_parent_path()) {
        fs::create_directories(stem.parent_path());
    }
    json j;
    j["width"] = img.width();
    j["height"] = img.height();
    j["channels"] = imaging::Raster::channels;
    j["format"] = "rgb8";
    j["scale_um_per_px"] = img.scale();
    write_text(fs::path(stem.string() + ".json"), j.dump(2) + "\n");
    std::ofstream out(stem.string() + ".raw", std::ios::binary | std::ios::trunc);
    const auto bytes = img.bytes();
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("cannot write " + stem.string() + ".raw");
    }
}

imaging::Raster read_raster(const fs::path& stem)
{
    const fs::path header = stem.string() + ".json";
    const json j = parse_json_file(header);
    const std::string what = header.string();
    const int width = require<int>(j, "width", what);
    const int height = require<int>(j, "height", what);
    const double scale = require<double>(j, "scale_um_per_px", what);
    if (j.contains("channels") && j["channels"] != imaging::Raster::channels) {
        throw FormatError(what + ": only 3-channel rasters are supported", 0);
    }
    if (width < 1 || height < 1 || !(scale > 0.0)) {
        throw FormatError(what + ": invalid raster dimensions or scale", 0);
    }
    const fs::path raw = stem.string() + ".raw";
    std::ifstream in(raw, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + raw.string(), 0);
    }
    const std::size_t expected = static_cast<std::size_t>(width) * height * 3;
    std::vector<std::uint8_t> data(expected);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(expected));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != expected) {
        throw FormatError("truncated raster data in " + raw.string(), got);
    }
    if (in.peek() != std::ifstream::traits_type::eof()) {
        throw FormatError("trailing bytes in " + raw.string(), expected);
    }
    return imaging::Raster(width, height, scale, std::move(data));
}

void write_text(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) {
        throw Error("cannot write " + path.string());
    }
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string(), 0);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace tmascan::io
