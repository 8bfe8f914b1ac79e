#include "tmascan/classify.hpp"

#include "tmascan/csv.hpp"
#include "tmascan/error.hpp"
#include "tmascan/sequence_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace tmascan::classify {

namespace {

constexpr int kFeatures = 3;
constexpr int kTiles = 8;

} // namespace

Prediction make_prediction(std::vector<double> probabilities, std::string core_id, int repeat)
{
    Prediction p;
    p.class_count = static_cast<int>(probabilities.size());
    p.probabilities = std::move(probabilities);
    p.predicted_class = 0;
    for (int k = 1; k < p.class_count; ++k) {
        if (p.probabilities[k] > p.probabilities[p.predicted_class]) {
            p.predicted_class = k;
        }
    }
    p.confidence = p.class_count > 0 ? p.probabilities[p.predicted_class] : 0.0;
    p.core_id = std::move(core_id);
    p.repeat = repeat;
    return p;
}

bool is_brown(std::uint8_t r, std::uint8_t g, std::uint8_t b) noexcept
{
    return r > g && g > b && (r - b) > 0.15 * 255.0 && r < 240;
}

FeatureVector extract_features(const Raster& patch)
{
    const int w = patch.width();
    const int h = patch.height();
    std::int64_t brown = 0;
    std::int64_t colored = 0;
    double saturation = 0.0;
    std::array<std::int64_t, kTiles * kTiles> tile_brown{};
    std::array<std::int64_t, kTiles * kTiles> tile_count{};
    for (int y = 0; y < h; ++y) {
        const int ty = y * kTiles / h;
        const auto row = patch.row(y);
        for (int x = 0; x < w; ++x) {
            const int tx = x * kTiles / w;
            const std::uint8_t r = row[3 * x], g = row[3 * x + 1], b = row[3 * x + 2];
            const int mx = std::max({r, g, b});
            const int mn = std::min({r, g, b});
            const bool br = is_brown(r, g, b);
            brown += br;
            tile_brown[ty * kTiles + tx] += br;
            ++tile_count[ty * kTiles + tx];
            if (mx < 240) {
                ++colored;
                saturation += mx > 0 ? static_cast<double>(mx - mn) / mx : 0.0;
            }
        }
    }
    FeatureVector f;
    const double total = static_cast<double>(w) * h;
    f.brown_fraction = total > 0 ? static_cast<double>(brown) / total : 0.0;
    f.mean_saturation = colored > 0 ? saturation / static_cast<double>(colored) : 0.0;
    double mean = 0.0;
    int tiles = 0;
    std::array<double, kTiles * kTiles> frac{};
    for (int t = 0; t < kTiles * kTiles; ++t) {
        if (tile_count[t] > 0) {
            frac[t] = static_cast<double>(tile_brown[t]) / static_cast<double>(tile_count[t]);
            mean += frac[t];
            ++tiles;
        }
    }
    if (tiles > 0) {
        mean /= tiles;
        double var = 0.0;
        for (int t = 0; t < kTiles * kTiles; ++t) {
            if (tile_count[t] > 0) {
                var += (frac[t] - mean) * (frac[t] - mean);
            }
        }
        f.heterogeneity = std::clamp(std::sqrt(var / tiles) / 0.5, 0.0, 1.0);
    }
    return f;
}

FeatureVector extract_features(const coreprep::PatchStack& stack)
{
    if (stack.patches.empty()) {
        throw ParameterError("patch stack is empty");
    }
    return extract_features(stack.patches.front());
}

std::vector<double> BaselineModel::scores(const FeatureVector& f) const
{
    const auto x = f.values();
    std::vector<double> s(weights.size());
    for (std::size_t k = 0; k < weights.size(); ++k) {
        s[k] = weights[k][0] * x[0] + weights[k][1] * x[1] + weights[k][2] * x[2] + weights[k][3];
    }
    return s;
}

std::vector<double> softmax(const std::vector<double>& scores)
{
    if (scores.empty()) {
        return {};
    }
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> p(scores.size());
    double sum = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        p[k] = std::exp(scores[k] - mx);
        sum += p[k];
    }
    for (auto& v : p) {
        v /= sum;
    }
    return p;
}

BaselineModel train_baseline(const std::vector<FeatureVector>& features, const std::vector<int>& labels,
                             int class_count, const TrainOptions& options)
{
    if (class_count != 2 && class_count != 4) {
        throw ParameterError("class count must be 2 or 4");
    }
    if (features.size() != labels.size() || features.empty()) {
        throw TrainingError("training needs one label per feature vector and at least one example");
    }
    std::set<int> present;
    for (int l : labels) {
        if (l < 0 || l >= class_count) {
            throw TrainingError("label " + std::to_string(l) + " outside the " + std::to_string(class_count) +
                                "-class range");
        }
        present.insert(l);
    }
    if (present.size() < 2) {
        throw TrainingError("training set holds a single class");
    }
    if (options.epochs < 0 || !(options.learning_rate > 0.0)) {
        throw ParameterError("epochs must be nonnegative and learning rate positive");
    }

    // Standardize, train, then fold the standardization into the weights.
    const std::size_t n = features.size();
    std::array<double, kFeatures> mu{}, sigma{};
    for (const auto& f : features) {
        const auto x = f.values();
        for (int j = 0; j < kFeatures; ++j) {
            mu[j] += x[j];
        }
    }
    for (auto& m : mu) {
        m /= static_cast<double>(n);
    }
    for (const auto& f : features) {
        const auto x = f.values();
        for (int j = 0; j < kFeatures; ++j) {
            sigma[j] += (x[j] - mu[j]) * (x[j] - mu[j]);
        }
    }
    for (auto& s : sigma) {
        s = std::sqrt(s / static_cast<double>(n));
        if (s < 1e-12) {
            s = 1.0;
        }
    }
    std::vector<std::array<double, kFeatures>> z(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = features[i].values();
        for (int j = 0; j < kFeatures; ++j) {
            z[i][j] = (x[j] - mu[j]) / sigma[j];
        }
    }

    const auto K = static_cast<std::size_t>(class_count);
    std::vector<std::array<double, kFeatures + 1>> w(K, std::array<double, kFeatures + 1>{});
    std::vector<double> s(K);
    auto loss_and_grad = [&](std::vector<std::array<double, kFeatures + 1>>* grad) {
        double loss = 0.0;
        if (grad) {
            grad->assign(K, std::array<double, kFeatures + 1>{});
        }
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                s[k] = w[k][kFeatures];
                for (int j = 0; j < kFeatures; ++j) {
                    s[k] += w[k][j] * z[i][j];
                }
            }
            const auto p = softmax(s);
            loss -= std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-300));
            if (grad) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double e = p[k] - (static_cast<int>(k) == labels[i] ? 1.0 : 0.0);
                    for (int j = 0; j < kFeatures; ++j) {
                        (*grad)[k][j] += e * z[i][j];
                    }
                    (*grad)[k][kFeatures] += e;
                }
            }
        }
        loss /= static_cast<double>(n);
        double penalty = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            for (int j = 0; j < kFeatures; ++j) {
                penalty += w[k][j] * w[k][j];
            }
        }
        if (grad) {
            for (std::size_t k = 0; k < K; ++k) {
                for (int j = 0; j <= kFeatures; ++j) {
                    (*grad)[k][j] /= static_cast<double>(n);
                    if (j < kFeatures) {
                        (*grad)[k][j] += 2.0 * options.l2 * w[k][j];
                    }
                }
            }
        }
        return loss + options.l2 * penalty;
    };

    std::vector<std::array<double, kFeatures + 1>> grad;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        loss_and_grad(&grad);
        for (std::size_t k = 0; k < K; ++k) {
            for (int j = 0; j <= kFeatures; ++j) {
                w[k][j] -= options.learning_rate * grad[k][j];
            }
        }
    }

    BaselineModel model;
    model.class_count = class_count;
    model.options = options;
    model.final_loss = loss_and_grad(nullptr);
    model.weights.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        double bias = w[k][kFeatures];
        for (int j = 0; j < kFeatures; ++j) {
            model.weights[k][j] = w[k][j] / sigma[j];
            bias -= w[k][j] * mu[j] / sigma[j];
        }
        model.weights[k][kFeatures] = bias;
    }
    return model;
}

Prediction predict(const BaselineModel& model, const FeatureVector& f, std::string core_id, int repeat)
{
    if (model.class_count != 2 && model.class_count != 4) {
        throw ParameterError("model class count must be 2 or 4");
    }
    return make_prediction(softmax(model.scores(f)), std::move(core_id), repeat);
}

Prediction predict(const BaselineModel& model, const coreprep::PatchStack& stack)
{
    return predict(model, extract_features(stack), stack.core_id, stack.repeat);
}

std::string model_json(const BaselineModel& model)
{
    nlohmann::ordered_json j;
    j["class_count"] = model.class_count;
    j["features"] = {"brown_fraction", "mean_saturation", "heterogeneity", "bias"};
    j["weights"] = model.weights;
    j["epochs"] = model.options.epochs;
    j["learning_rate"] = model.options.learning_rate;
    j["l2"] = model.options.l2;
    j["seed"] = model.options.seed;
    j["final_loss"] = model.final_loss;
    return j.dump(2) + "\n";
}

BaselineModel parse_model(const std::string& text)
{
    try {
        const auto j = nlohmann::json::parse(text);
        BaselineModel m;
        m.class_count = j.at("class_count").get<int>();
        m.weights = j.at("weights").get<std::vector<std::array<double, 4>>>();
        m.options.epochs = j.at("epochs").get<int>();
        m.options.learning_rate = j.at("learning_rate").get<double>();
        m.options.l2 = j.value("l2", 1e-4);
        m.options.seed = j.value("seed", std::uint64_t{0});
        m.final_loss = j.value("final_loss", 0.0);
        if ((m.class_count != 2 && m.class_count != 4) || m.weights.size() != static_cast<std::size_t>(m.class_count)) {
            throw FormatError("model class count and weight rows disagree", 0);
        }
        for (const auto& row : m.weights) {
            for (double v : row) {
                if (!std::isfinite(v)) {
                    throw FormatError("model has non-finite weights", 0);
                }
            }
        }
        return m;
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(std::string("model: ") + e.what(), e.byte);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model: ") + e.what(), 0);
    }
}

void write_model(const std::filesystem::path& path, const BaselineModel& model)
{
    io::write_text(path, model_json(model));
}

BaselineModel read_model(const std::filesystem::path& path)
{
    return parse_model(io::read_text(path));
}

std::string predictions_csv(const std::vector<Prediction>& predictions)
{
    std::ostringstream out;
    const int k = predictions.empty() ? 0 : predictions.front().class_count;
    out << "core_id,repeat";
    for (int i = 0; i < k; ++i) {
        out << ",p" << i;
    }
    out << '\n';
    for (const auto& p : predictions) {
        out << p.core_id << ',' << p.repeat;
        for (double v : p.probabilities) {
            out << ',' << csv::fixed(v, 9);
        }
        out << '\n';
    }
    return out.str();
}

std::vector<Prediction> parse_predictions(const std::string& text, int class_count)
{
    if (class_count != 2 && class_count != 4) {
        throw ParameterError("class count must be 2 or 4");
    }
    const auto table = csv::parse(text);
    std::vector<std::string> expected{"core_id", "repeat"};
    for (int i = 0; i < class_count; ++i) {
        expected.push_back("p" + std::to_string(i));
    }
    if (table.header != expected) {
        std::string want;
        for (const auto& h : expected) {
            want += (want.empty() ? "" : ",") + h;
        }
        throw ImportError("header must be '" + want + "'", 1);
    }
    std::vector<Prediction> out;
    std::set<std::pair<std::string, int>> seen;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto line = table.line_numbers[r];
        if (row.size() != expected.size()) {
            throw ImportError("expected " + std::to_string(expected.size()) + " fields, got " +
                                  std::to_string(row.size()),
                              line);
        }
        int repeat = 0;
        std::vector<double> p(static_cast<std::size_t>(class_count));
        try {
            std::size_t used = 0;
            repeat = std::stoi(row[1], &used);
            if (used != row[1].size()) {
                throw std::invalid_argument("repeat");
            }
            for (int k = 0; k < class_count; ++k) {
                p[k] = std::stod(row[2 + k], &used);
                if (used != row[2 + k].size()) {
                    throw std::invalid_argument("probability");
                }
            }
        } catch (const std::exception&) {
            throw ImportError("unparseable number", line);
        }
        if (row[0].empty()) {
            throw ImportError("empty core id", line);
        }
        double sum = 0.0;
        for (double v : p) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
                throw ImportError("probabilities must be finite and nonnegative", line);
            }
            sum += v;
        }
        if (sum < 0.99 || sum > 1.01) {
            throw ImportError("probabilities sum to " + std::to_string(sum) + ", outside [0.99, 1.01]", line);
        }
        for (auto& v : p) {
            v /= sum;
        }
        if (!seen.emplace(row[0], repeat).second) {
            throw ImportError("duplicate prediction for (" + row[0] + ", " + std::to_string(repeat) + ")", line);
        }
        out.push_back(make_prediction(std::move(p), row[0], repeat));
    }
    return out;
}

std::vector<Prediction> import_predictions(const std::filesystem::path& path, int class_count)
{
    return parse_predictions(io::read_text(path), class_count);
}

} // namespace tmascan::classify
