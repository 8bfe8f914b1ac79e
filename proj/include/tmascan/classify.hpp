#pragma once

#include "tmascan/coreprep.hpp"
#include "tmascan/imaging.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tmascan::classify {

using imaging::Raster;

struct Prediction {
    int class_count = 0;
    std::vector<double> probabilities;
    int predicted_class = 0;
    double confidence = 0.0;
    std::string core_id;
    int repeat = 0;
};

// Fills predicted_class (argmax, ties to the lowest index) and confidence.
Prediction make_prediction(std::vector<double> probabilities, std::string core_id = {}, int repeat = 0);

bool is_brown(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept;

struct FeatureVector {
    double brown_fraction = 0.0;
    double mean_saturation = 0.0;
    double heterogeneity = 0.0;

    std::array<double, 3> values() const noexcept { return {brown_fraction, mean_saturation, heterogeneity}; }
};

FeatureVector extract_features(const Raster& patch);
FeatureVector extract_features(const coreprep::PatchStack& stack);

struct TrainOptions {
    int epochs = 2000;
    double learning_rate = 0.5;
    double l2 = 1e-4;
    std::uint64_t seed = 0;
};

struct BaselineModel {
    int class_count = 0;
    // class_count rows of (brown_fraction, mean_saturation, heterogeneity, bias)
    std::vector<std::array<double, 4>> weights;
    TrainOptions options;
    double final_loss = 0.0;

    std::vector<double> scores(const FeatureVector& f) const;
};

BaselineModel train_baseline(const std::vector<FeatureVector>& features, const std::vector<int>& labels,
                             int class_count, const TrainOptions& options = {});

std::vector<double> softmax(const std::vector<double>& scores);

Prediction predict(const BaselineModel& model, const FeatureVector& f, std::string core_id = {}, int repeat = 0);
Prediction predict(const BaselineModel& model, const coreprep::PatchStack& stack);

std::string model_json(const BaselineModel& model);
BaselineModel parse_model(const std::string& text);
void write_model(const std::filesystem::path& path, const BaselineModel& model);
BaselineModel read_model(const std::filesystem::path& path);

// `core_id,repeat,p0..pK`
std::string predictions_csv(const std::vector<Prediction>& predictions);
std::vector<Prediction> parse_predictions(const std::string& text, int class_count);
std::vector<Prediction> import_predictions(const std::filesystem::path& path, int class_count);

} // namespace tmascan::classify
