#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tmascan {

// Base of every error thrown by the library. The CLI maps these to a
// stage-named diagnostic and a nonzero exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

class RenderError : public Error {
public:
    RenderError(const std::string& what, std::size_t frame)
        : Error("frame " + std::to_string(frame) + ": " + what), frame_(frame) {}

    std::size_t frame() const noexcept { return frame_; }

private:
    std::size_t frame_;
};

class FitError : public Error {
public:
    using Error::Error;
};

class StructuralError : public Error {
public:
    using Error::Error;
};

class ComposeError : public Error {
public:
    using Error::Error;
};

class BalanceError : public Error {
public:
    using Error::Error;
};

class SegmentationError : public Error {
public:
    using Error::Error;
};

class LabelingError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

class ImportError : public Error {
public:
    ImportError(const std::string& what, std::size_t row)
        : Error("row " + std::to_string(row) + ": " + what), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

class AggregationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// A failure inside a pipeline stage, prefixed with the stage and file.
class StageError : public Error {
public:
    StageError(const std::string& stage, const std::string& what) : Error(stage + ": " + what), stage_(stage) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

} // namespace tmascan
