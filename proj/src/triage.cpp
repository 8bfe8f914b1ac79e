#include "tmascan/triage.hpp"

#include "tmascan/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace tmascan::triage {

void RepeatSet::validate() const
{
    const int k = predictions[0].class_count;
    std::array<bool, kRepeats> seen{};
    for (const auto& p : predictions) {
        if (p.class_count != k) {
            throw AggregationError("core " + core_id + " mixes class counts");
        }
        if (p.repeat < 0 || p.repeat >= kRepeats || seen[p.repeat]) {
            throw AggregationError("core " + core_id + " needs distinct repeat indices 0, 1 and 2");
        }
        seen[p.repeat] = true;
        if (static_cast<int>(p.probabilities.size()) != k) {
            throw AggregationError("core " + core_id + " has a malformed prediction");
        }
    }
    if (truth && (*truth < 0 || *truth >= k)) {
        throw AggregationError("core " + core_id + " has truth outside the class range");
    }
}

std::vector<RepeatSet> make_repeat_sets(const std::vector<Prediction>& predictions,
                                        const std::map<std::string, int>& truths)
{
    std::map<std::string, std::vector<const Prediction*>> groups;
    for (const auto& p : predictions) {
        groups[p.core_id].push_back(&p);
    }
    std::vector<RepeatSet> out;
    for (auto& [id, preds] : groups) {
        if (preds.size() != kRepeats) {
            throw AggregationError("core " + id + " has " + std::to_string(preds.size()) + " predictions, expected 3");
        }
        std::sort(preds.begin(), preds.end(), [](auto* a, auto* b) { return a->repeat < b->repeat; });
        RepeatSet s;
        s.core_id = id;
        for (int i = 0; i < kRepeats; ++i) {
            s.predictions[i] = *preds[i];
        }
        if (const auto it = truths.find(id); it != truths.end()) {
            s.truth = it->second;
        }
        s.validate();
        out.push_back(std::move(s));
    }
    return out;
}

int binarize(int label)
{
    if (label < 0 || label > 3) {
        throw ParameterError("binarize expects a 4-class label, got " + std::to_string(label));
    }
    return label >= 2 ? 1 : 0;
}

Prediction binarize(const Prediction& p)
{
    if (p.class_count != 4 || p.probabilities.size() != 4) {
        throw ParameterError("binarize expects a 4-class prediction");
    }
    const auto& q = p.probabilities;
    return classify::make_prediction({q[0] + q[1], q[2] + q[3]}, p.core_id, p.repeat);
}

RepeatSet binarize(const RepeatSet& set)
{
    RepeatSet out = set;
    for (auto& p : out.predictions) {
        p = binarize(p);
    }
    if (out.truth) {
        out.truth = binarize(*out.truth);
    }
    return out;
}

double positive_probability(const Prediction& p)
{
    if (p.class_count == 4) {
        return p.probabilities[2] + p.probabilities[3];
    }
    if (p.class_count == 2) {
        return p.probabilities[1];
    }
    throw ParameterError("class count must be 2 or 4");
}

std::string_view to_string(Method m)
{
    switch (m) {
    case Method::all_scans:
        return "all-scans";
    case Method::max_ci:
        return "max-ci";
    case Method::weighted_ci:
        return "weighted-ci";
    }
    return "all-scans";
}

Method method_from_string(std::string_view s)
{
    for (auto m : kMethods) {
        if (to_string(m) == s) {
            return m;
        }
    }
    throw ParameterError("unknown aggregation method '" + std::string(s) + "'");
}

int round_half_up(double v)
{
    return static_cast<int>(std::floor(v + 0.5));
}

std::vector<Decision> aggregate(const RepeatSet& set, Method method, const AggregateOptions& options)
{
    set.validate();
    const int k = set.class_count();
    auto decision_from = [&](const Prediction& p) {
        Decision d;
        d.core_id = set.core_id;
        d.method = method;
        d.repeat = p.repeat;
        d.decided_class = p.predicted_class;
        d.confidence = p.confidence;
        d.truth = set.truth;
        d.positive_probability = positive_probability(p);
        return d;
    };
    std::vector<Decision> out;
    switch (method) {
    case Method::all_scans:
        for (const auto& p : set.predictions) {
            out.push_back(decision_from(p));
        }
        break;
    case Method::max_ci: {
        const Prediction* best = &set.predictions[0];
        for (const auto& p : set.predictions) {
            if (p.confidence > best->confidence || (p.confidence == best->confidence && p.repeat < best->repeat)) {
                best = &p;
            }
        }
        out.push_back(decision_from(*best));
        break;
    }
    case Method::weighted_ci: {
        double weighted = 0.0;
        double total_ci = 0.0;
        double p_pos = 0.0;
        for (const auto& p : set.predictions) {
            weighted += p.predicted_class * p.confidence;
            total_ci += p.confidence;
            p_pos += positive_probability(p);
        }
        if (!(total_ci > 0.0)) {
            throw AggregationError("core " + set.core_id + " has zero total confidence");
        }
        Decision d;
        d.core_id = set.core_id;
        d.method = method;
        d.repeat = -1;
        const double score = options.normalize_weighted ? weighted / total_ci : weighted;
        d.decided_class = std::clamp(round_half_up(score), 0, k - 1);
        d.confidence = total_ci / kRepeats;
        d.truth = set.truth;
        d.positive_probability = p_pos / kRepeats;
        out.push_back(d);
        break;
    }
    }
    return out;
}

std::vector<Decision> aggregate(const std::vector<RepeatSet>& sets, Method method, const AggregateOptions& options)
{
    std::vector<Decision> out;
    for (const auto& s : sets) {
        auto d = aggregate(s, method, options);
        out.insert(out.end(), d.begin(), d.end());
    }
    return out;
}

ThresholdResult apply_threshold(const std::vector<Decision>& decisions, double theta)
{
    if (!(theta >= 0.0 && theta <= 1.0)) {
        throw ParameterError("threshold must lie in [0, 1]");
    }
    ThresholdResult r;
    r.decisions = decisions;
    std::size_t indeterminate = 0;
    for (auto& d : r.decisions) {
        d.threshold = theta;
        d.indeterminate = d.confidence < theta;
        if (d.indeterminate) {
            ++indeterminate;
        } else {
            r.determinate.push_back(d);
        }
    }
    r.indeterminate_fraction =
        decisions.empty() ? 0.0 : static_cast<double>(indeterminate) / static_cast<double>(decisions.size());
    return r;
}

std::vector<double> default_grid()
{
    std::vector<double> g;
    for (int i = 0; i <= 100; ++i) {
        g.push_back(i / 100.0);
    }
    return g;
}

SweepCurve sweep(const std::vector<Decision>& decisions, const std::vector<double>& grid, double target_rate)
{
    for (const auto& d : decisions) {
        if (!d.truth) {
            throw ParameterError("sweep needs a true label on every decision (core " + d.core_id + ")");
        }
    }
    SweepCurve curve;
    curve.target_rate = target_rate;
    for (double theta : grid) {
        const auto r = apply_threshold(decisions, theta);
        SweepPoint p;
        p.threshold = theta;
        p.indeterminate_fraction = r.indeterminate_fraction;
        p.determinate = r.determinate.size();
        if (!r.determinate.empty()) {
            std::size_t correct = 0;
            for (const auto& d : r.determinate) {
                correct += d.decided_class == *d.truth;
            }
            p.accuracy = static_cast<double>(correct) / static_cast<double>(r.determinate.size());
        }
        if (!curve.operating_index && p.indeterminate_fraction >= target_rate) {
            curve.operating_index = curve.points.size();
        }
        curve.points.push_back(p);
    }
    return curve;
}

double mode_fraction(const std::array<int, kRepeats>& classes)
{
    int best = 0;
    for (int a : classes) {
        best = std::max(best, static_cast<int>(std::count(classes.begin(), classes.end(), a)));
    }
    return static_cast<double>(best) / kRepeats;
}

Consistency consistency(const std::vector<RepeatSet>& sets)
{
    Consistency c;
    double sum = 0.0;
    for (const auto& s : sets) {
        const double f = mode_fraction({s.predictions[0].predicted_class, s.predictions[1].predicted_class,
                                        s.predictions[2].predicted_class});
        c.per_core.emplace_back(s.core_id, f);
        sum += f;
    }
    c.overall = sets.empty() ? 0.0 : sum / static_cast<double>(sets.size());
    return c;
}

std::size_t ConfusionMatrix::total() const
{
    std::size_t t = 0;
    for (const auto& row : counts) {
        t = std::accumulate(row.begin(), row.end(), t);
    }
    return t;
}

std::size_t ConfusionMatrix::trace() const
{
    std::size_t t = 0;
    for (int i = 0; i < class_count; ++i) {
        t += counts[i][i];
    }
    return t;
}

double ConfusionMatrix::accuracy() const
{
    const auto t = total();
    return t == 0 ? 0.0 : static_cast<double>(trace()) / static_cast<double>(t);
}

ConfusionMatrix confusion(const std::vector<Decision>& decisions, int class_count)
{
    if (decisions.empty()) {
        throw ParameterError("confusion matrix of an empty decision set is undefined");
    }
    if (class_count < 2) {
        throw ParameterError("class count must be at least 2");
    }
    ConfusionMatrix m;
    m.class_count = class_count;
    m.counts.assign(static_cast<std::size_t>(class_count), std::vector<std::size_t>(class_count, 0));
    for (const auto& d : decisions) {
        if (d.indeterminate) {
            throw ParameterError("confusion matrix takes determinate decisions only");
        }
        if (!d.truth || *d.truth < 0 || *d.truth >= class_count || d.decided_class < 0 ||
            d.decided_class >= class_count) {
            throw ParameterError("decision for core " + d.core_id + " lacks a valid truth or class");
        }
        ++m.counts[*d.truth][d.decided_class];
    }
    return m;
}

RocCurve roc_curve(const std::vector<int>& truths, const std::vector<double>& scores)
{
    if (truths.size() != scores.size()) {
        throw ParameterError("ROC needs one score per truth");
    }
    const auto pos = static_cast<std::size_t>(std::count(truths.begin(), truths.end(), 1));
    const std::size_t neg = truths.size() - pos;
    if (pos == 0 || neg == 0) {
        throw ParameterError("ROC needs both positive and negative truths");
    }
    std::vector<std::size_t> order(truths.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            (truths[order[i]] == 1 ? tp : fp)++;
            ++i;
        }
        const RocPoint p{static_cast<double>(fp) / static_cast<double>(neg),
                         static_cast<double>(tp) / static_cast<double>(pos), s};
        const auto& q = roc.points.back();
        roc.auc += (p.fpr - q.fpr) * (p.tpr + q.tpr) / 2.0;
        roc.points.push_back(p);
    }
    return roc;
}

RocCurve roc_auc(const std::vector<Decision>& decisions, int class_count)
{
    std::vector<int> truths;
    std::vector<double> scores;
    for (const auto& d : decisions) {
        if (!d.truth) {
            throw ParameterError("ROC needs a true label on every decision (core " + d.core_id + ")");
        }
        truths.push_back(class_count == 4 ? binarize(*d.truth) : *d.truth);
        scores.push_back(d.positive_probability);
    }
    return roc_curve(truths, scores);
}

} // namespace tmascan::triage
