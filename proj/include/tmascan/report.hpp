#pragma once

#include "tmascan/triage.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tmascan::report {

using triage::ConfusionMatrix;
using triage::Decision;
using triage::Method;
using triage::RocCurve;
using triage::SweepCurve;

struct MethodResult {
    Method method = Method::all_scans;
    int class_count = 4;
    std::vector<Decision> decisions;
    SweepCurve sweep;
    ConfusionMatrix confusion; // at threshold 0
    std::optional<double> operating_accuracy;
    std::optional<RocCurve> roc; // 2-class results only
};

struct TriageResults {
    std::vector<MethodResult> results;
    triage::Consistency consistency4;
    triage::Consistency consistency2;
    std::size_t cores = 0;

    const MethodResult* find(Method m, int class_count) const;
};

struct EvaluateOptions {
    std::vector<Method> methods{triage::kMethods.begin(), triage::kMethods.end()};
    std::vector<double> grid = triage::default_grid();
    double target_rate = 0.15;
    triage::AggregateOptions aggregate;
};

// sets4 must carry 4-class predictions; sets2 2-class ones (binarized
// from sets4 when empty).
TriageResults evaluate(const std::vector<triage::RepeatSet>& sets4, std::vector<triage::RepeatSet> sets2,
                       const EvaluateOptions& options = {});

std::string decisions_csv(const std::vector<Decision>& decisions);
std::string sweep_csv(const SweepCurve& curve);
std::string confusion_csv(const ConfusionMatrix& m);
std::string confusion_json(const ConfusionMatrix& m);
std::string roc_csv(const RocCurve& roc);
std::string consistency_csv(const triage::Consistency& c);

std::string sweep_svg(const SweepCurve& curve, const std::string& title);
std::string confusion_svg(const ConfusionMatrix& m, const std::string& title);
std::string roc_svg(const RocCurve& roc, const std::string& title);

std::string summary_json(const TriageResults& results);

// Writes the sweep, confusion and ROC files plus summary.json; returns the paths.
std::vector<std::filesystem::path> emit_report(const TriageResults& results, const std::filesystem::path& dir);

} // namespace tmascan::report
