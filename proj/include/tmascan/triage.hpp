#pragma once

#include "tmascan/classify.hpp"

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tmascan::triage {

using classify::Prediction;

inline constexpr int kRepeats = 3;

struct RepeatSet {
    std::string core_id;
    std::optional<int> truth;
    std::array<Prediction, kRepeats> predictions;

    // Throws AggregationError when repeats or class counts are inconsistent.
    void validate() const;
    int class_count() const { return predictions[0].class_count; }
};

// Groups predictions by core id into sets of exactly three repeats {0,1,2}.
std::vector<RepeatSet> make_repeat_sets(const std::vector<Prediction>& predictions,
                                        const std::map<std::string, int>& truths);

// 0/1+ -> 0 (negative), 2+/3+ -> 1 (positive).
int binarize(int label);
Prediction binarize(const Prediction& p);
RepeatSet binarize(const RepeatSet& set);

// Probability of the positive (2+/3+) group.
double positive_probability(const Prediction& p);

enum class Method { all_scans, max_ci, weighted_ci };
std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
inline constexpr std::array<Method, 3> kMethods{Method::all_scans, Method::max_ci, Method::weighted_ci};

struct Decision {
    std::string core_id;
    Method method = Method::all_scans;
    int repeat = -1; // source repeat for all-scans and max-ci, -1 for weighted-ci
    int decided_class = 0;
    double confidence = 0.0;
    std::optional<int> truth;
    double positive_probability = 0.0;
    bool indeterminate = false;
    double threshold = 0.0;
};

struct AggregateOptions {
    bool normalize_weighted = true; // false: round(sum class * CI), clamped
};

// One decision for max-ci and weighted-ci, three for all-scans.
std::vector<Decision> aggregate(const RepeatSet& set, Method method, const AggregateOptions& options = {});
std::vector<Decision> aggregate(const std::vector<RepeatSet>& sets, Method method,
                                const AggregateOptions& options = {});

int round_half_up(double v);

struct ThresholdResult {
    std::vector<Decision> decisions; // every input, indeterminate flagged
    std::vector<Decision> determinate;
    double indeterminate_fraction = 0.0;
};

ThresholdResult apply_threshold(const std::vector<Decision>& decisions, double theta);

struct SweepPoint {
    double threshold = 0.0;
    std::optional<double> accuracy; // nullopt when nothing is determinate
    double indeterminate_fraction = 0.0;
    std::size_t determinate = 0;
};

struct SweepCurve {
    std::vector<SweepPoint> points;
    double target_rate = 0.15;
    std::optional<std::size_t> operating_index; // smallest threshold reaching the target rate

    const SweepPoint* operating_point() const
    {
        return operating_index ? &points[*operating_index] : nullptr;
    }
};

std::vector<double> default_grid();
SweepCurve sweep(const std::vector<Decision>& decisions, const std::vector<double>& grid = default_grid(),
                 double target_rate = 0.15);

struct Consistency {
    std::vector<std::pair<std::string, double>> per_core;
    double overall = 0.0;
};

double mode_fraction(const std::array<int, kRepeats>& classes);
Consistency consistency(const std::vector<RepeatSet>& sets);

struct ConfusionMatrix {
    int class_count = 0;
    std::vector<std::vector<std::size_t>> counts; // [truth][prediction]

    std::size_t total() const;
    std::size_t trace() const;
    double accuracy() const;
};

ConfusionMatrix confusion(const std::vector<Decision>& decisions, int class_count);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    double threshold = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

// positives: truth 1; scores: positive-class probability.
RocCurve roc_curve(const std::vector<int>& truths, const std::vector<double>& scores);
// Truth is binarized when class_count is 4.
RocCurve roc_auc(const std::vector<Decision>& decisions, int class_count);

} // namespace tmascan::triage
