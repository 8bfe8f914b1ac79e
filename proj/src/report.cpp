#include "tmascan/report.hpp"

#include "tmascan/csv.hpp"
#include "tmascan/error.hpp"
#include "tmascan/sequence_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

namespace tmascan::report {

namespace {

using csv::fixed;
using json = nlohmann::ordered_json;

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kLeft = 70;
constexpr int kRight = 570;
constexpr int kTop = 50;
constexpr int kBottom = 360;

double px(double v) // [0,1] -> x
{
    return kLeft + v * (kRight - kLeft);
}

double py(double v) // [0,1] -> y
{
    return kBottom - v * (kBottom - kTop);
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        case '&':
            out += "&amp;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

void svg_open(std::ostringstream& o, const std::string& title)
{
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
      << "</text>\n";
}

void frame_axes(std::ostringstream& o, const std::string& xlabel, const std::string& ylabel)
{
    o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kRight - kLeft << "\" height=\""
      << kBottom - kTop << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 10; i += 2) {
        const double v = i / 10.0;
        o << "<text x=\"" << fixed(px(v), 1) << "\" y=\"" << kBottom + 16 << "\" text-anchor=\"middle\">"
          << fixed(v, 1) << "</text>\n";
        o << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(py(v) + 4, 1) << "\" text-anchor=\"end\">"
          << fixed(v, 1) << "</text>\n";
    }
    o << "<text x=\"" << (kLeft + kRight) / 2 << "\" y=\"" << kBottom + 36 << "\" text-anchor=\"middle\">"
      << escape(xlabel) << "</text>\n";
    o << "<text x=\"18\" y=\"" << (kTop + kBottom) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
      << (kTop + kBottom) / 2 << ")\">" << escape(ylabel) << "</text>\n";
}

std::string polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                      const std::string& extra = {})
{
    std::ostringstream o;
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"" << extra << " points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        o << (i ? " " : "") << fixed(px(pts[i].first), 2) << ',' << fixed(py(pts[i].second), 2);
    }
    o << "\"/>\n";
    return o.str();
}

json opt(const std::optional<double>& v, int precision = 6)
{
    return v ? json(std::stod(fixed(*v, precision))) : json(nullptr);
}

} // namespace

const MethodResult* TriageResults::find(Method m, int class_count) const
{
    for (const auto& r : results) {
        if (r.method == m && r.class_count == class_count) {
            return &r;
        }
    }
    return nullptr;
}

TriageResults evaluate(const std::vector<triage::RepeatSet>& sets4, std::vector<triage::RepeatSet> sets2,
                       const EvaluateOptions& options)
{
    if (sets4.empty()) {
        throw ParameterError("triage needs at least one repeat set");
    }
    if (sets2.empty()) {
        for (const auto& s : sets4) {
            sets2.push_back(triage::binarize(s));
        }
    }
    TriageResults out;
    out.cores = sets4.size();
    out.consistency4 = triage::consistency(sets4);
    out.consistency2 = triage::consistency(sets2);
    for (int classes : {4, 2}) {
        const auto& sets = classes == 4 ? sets4 : sets2;
        for (auto m : options.methods) {
            MethodResult r;
            r.method = m;
            r.class_count = classes;
            r.decisions = triage::aggregate(sets, m, options.aggregate);
            r.sweep = triage::sweep(r.decisions, options.grid, options.target_rate);
            r.confusion = triage::confusion(triage::apply_threshold(r.decisions, 0.0).determinate, classes);
            if (const auto* op = r.sweep.operating_point()) {
                r.operating_accuracy = op->accuracy;
            }
            if (classes == 2) {
                bool both = false;
                for (const auto& d : r.decisions) {
                    both = both || (d.truth && *d.truth != *r.decisions.front().truth);
                }
                if (both) {
                    r.roc = triage::roc_auc(r.decisions, 2);
                }
            }
            out.results.push_back(std::move(r));
        }
    }
    return out;
}

std::string decisions_csv(const std::vector<Decision>& decisions)
{
    std::ostringstream o;
    o << "core_id,method,repeat,decided_class,confidence,truth,positive_probability,indeterminate,threshold\n";
    for (const auto& d : decisions) {
        o << d.core_id << ',' << triage::to_string(d.method) << ',' << d.repeat << ',' << d.decided_class << ','
          << fixed(d.confidence, 6) << ',' << (d.truth ? std::to_string(*d.truth) : "") << ','
          << fixed(d.positive_probability, 6) << ',' << (d.indeterminate ? 1 : 0) << ',' << fixed(d.threshold, 2)
          << '\n';
    }
    return o.str();
}

std::string sweep_csv(const SweepCurve& curve)
{
    std::ostringstream o;
    o << "threshold,accuracy,indeterminate_fraction,determinate\n";
    for (const auto& p : curve.points) {
        o << fixed(p.threshold, 2) << ',' << (p.accuracy ? fixed(*p.accuracy, 6) : "") << ','
          << fixed(p.indeterminate_fraction, 6) << ',' << p.determinate << '\n';
    }
    return o.str();
}

std::string confusion_csv(const ConfusionMatrix& m)
{
    std::ostringstream o;
    o << "truth";
    for (int k = 0; k < m.class_count; ++k) {
        o << ",pred_" << k;
    }
    o << '\n';
    for (int t = 0; t < m.class_count; ++t) {
        o << t;
        for (int k = 0; k < m.class_count; ++k) {
            o << ',' << m.counts[t][k];
        }
        o << '\n';
    }
    o << "accuracy," << fixed(m.accuracy(), 6) << '\n';
    return o.str();
}

std::string confusion_json(const ConfusionMatrix& m)
{
    json j;
    j["class_count"] = m.class_count;
    j["counts"] = m.counts;
    j["total"] = m.total();
    j["accuracy"] = std::stod(fixed(m.accuracy(), 6));
    return j.dump(2) + "\n";
}

std::string roc_csv(const RocCurve& roc)
{
    std::ostringstream o;
    o << "threshold,fpr,tpr\n";
    for (const auto& p : roc.points) {
        o << (std::isinf(p.threshold) ? std::string("inf") : fixed(p.threshold, 6)) << ',' << fixed(p.fpr, 6) << ','
          << fixed(p.tpr, 6) << '\n';
    }
    o << "auc," << fixed(roc.auc, 6) << ",\n";
    return o.str();
}

std::string consistency_csv(const triage::Consistency& c)
{
    std::ostringstream o;
    o << "core_id,consistency\n";
    for (const auto& [id, f] : c.per_core) {
        o << id << ',' << fixed(f, 6) << '\n';
    }
    return o.str();
}

std::string sweep_svg(const SweepCurve& curve, const std::string& title)
{
    std::ostringstream o;
    svg_open(o, title);
    frame_axes(o, "confidence threshold", "accuracy");
    o << "<text x=\"" << kRight + 40 << "\" y=\"" << (kTop + kBottom) / 2 << "\" text-anchor=\"middle\" "
      << "transform=\"rotate(90 " << kRight + 40 << ' ' << (kTop + kBottom) / 2 << ")\" fill=\"#d95f02\">"
      << "indeterminate fraction</text>\n";
    for (int i = 0; i <= 10; i += 2) {
        o << "<text x=\"" << kRight + 6 << "\" y=\"" << fixed(py(i / 10.0) + 4, 1) << "\" fill=\"#d95f02\">"
          << fixed(i / 10.0, 1) << "</text>\n";
    }
    if (const auto* op = curve.operating_point()) {
        o << "<line x1=\"" << fixed(px(op->threshold), 2) << "\" y1=\"" << kTop << "\" x2=\""
          << fixed(px(op->threshold), 2) << "\" y2=\"" << kBottom
          << "\" stroke=\"grey\" stroke-dasharray=\"6 4\"/>\n";
        o << "<line x1=\"" << kLeft << "\" y1=\"" << fixed(py(curve.target_rate), 2) << "\" x2=\"" << kRight
          << "\" y2=\"" << fixed(py(curve.target_rate), 2) << "\" stroke=\"grey\" stroke-dasharray=\"6 4\"/>\n";
    }
    std::vector<std::pair<double, double>> acc, ind;
    for (const auto& p : curve.points) {
        if (p.accuracy) {
            acc.emplace_back(p.threshold, *p.accuracy);
        }
        ind.emplace_back(p.threshold, p.indeterminate_fraction);
    }
    o << polyline(acc, "#1b9e77");
    o << polyline(ind, "#d95f02");
    o << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 16 << "\" fill=\"#1b9e77\">accuracy</text>\n";
    o << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 32 << "\" fill=\"#d95f02\">indeterminate</text>\n";
    o << "</svg>\n";
    return o.str();
}

std::string confusion_svg(const ConfusionMatrix& m, const std::string& title)
{
    std::ostringstream o;
    svg_open(o, title);
    const int k = m.class_count;
    const double cell = std::min(kRight - kLeft, kBottom - kTop) / static_cast<double>(k);
    const double x0 = (kWidth - cell * k) / 2.0;
    const double y0 = kTop;
    std::size_t max_count = 1;
    for (const auto& row : m.counts) {
        for (auto c : row) {
            max_count = std::max(max_count, c);
        }
    }
    const std::vector<std::string> names4{"0", "1+", "2+", "3+"};
    const std::vector<std::string> names2{"0/1+", "2+/3+"};
    const auto& names = k == 4 ? names4 : names2;
    for (int t = 0; t < k; ++t) {
        for (int p = 0; p < k; ++p) {
            const double f = static_cast<double>(m.counts[t][p]) / static_cast<double>(max_count);
            const int shade = static_cast<int>(std::lround(255 - 200 * f));
            o << "<rect x=\"" << fixed(x0 + p * cell, 2) << "\" y=\"" << fixed(y0 + t * cell, 2) << "\" width=\""
              << fixed(cell, 2) << "\" height=\"" << fixed(cell, 2) << "\" fill=\"rgb(" << shade << ',' << shade
              << ",255)\" stroke=\"black\"/>\n";
            o << "<text x=\"" << fixed(x0 + (p + 0.5) * cell, 2) << "\" y=\"" << fixed(y0 + (t + 0.5) * cell + 5, 2)
              << "\" text-anchor=\"middle\" font-size=\"16\">" << m.counts[t][p] << "</text>\n";
        }
        const std::string label = static_cast<std::size_t>(t) < names.size() ? names[t] : std::to_string(t);
        o << "<text x=\"" << fixed(x0 - 8, 2) << "\" y=\"" << fixed(y0 + (t + 0.5) * cell + 4, 2)
          << "\" text-anchor=\"end\">" << label << "</text>\n";
        o << "<text x=\"" << fixed(x0 + (t + 0.5) * cell, 2) << "\" y=\"" << fixed(y0 + k * cell + 16, 2)
          << "\" text-anchor=\"middle\">" << label << "</text>\n";
    }
    o << "<text x=\"" << kWidth / 2 << "\" y=\"" << fixed(y0 + k * cell + 34, 2)
      << "\" text-anchor=\"middle\">predicted (rows: truth), accuracy " << fixed(m.accuracy() * 100.0, 1)
      << "%</text>\n";
    o << "</svg>\n";
    return o.str();
}

std::string roc_svg(const RocCurve& roc, const std::string& title)
{
    std::ostringstream o;
    svg_open(o, title);
    frame_axes(o, "false positive rate", "true positive rate");
    o << polyline({{0.0, 0.0}, {1.0, 1.0}}, "grey", " stroke-dasharray=\"6 4\"");
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : roc.points) {
        pts.emplace_back(p.fpr, p.tpr);
    }
    o << polyline(pts, "#7570b3");
    o << "<text x=\"" << kRight - 10 << "\" y=\"" << kBottom - 12 << "\" text-anchor=\"end\">AUC "
      << fixed(roc.auc, 3) << "</text>\n";
    o << "</svg>\n";
    return o.str();
}

std::string summary_json(const TriageResults& results)
{
    json j;
    j["cores"] = results.cores;
    j["consistency"] = {{"4-class", std::stod(fixed(results.consistency4.overall, 6))},
                        {"2-class", std::stod(fixed(results.consistency2.overall, 6))}};
    json methods = json::object();
    for (const auto& r : results.results) {
        json e;
        e["decisions"] = r.decisions.size();
        e["accuracy_at_zero"] = std::stod(fixed(r.confusion.accuracy(), 6));
        const auto* op = r.sweep.operating_point();
        e["target_indeterminate_rate"] = std::stod(fixed(r.sweep.target_rate, 6));
        e["operating_threshold"] = op ? json(std::stod(fixed(op->threshold, 2))) : json(nullptr);
        e["operating_indeterminate_fraction"] = op ? json(std::stod(fixed(op->indeterminate_fraction, 6))) : json(nullptr);
        e["operating_accuracy"] = opt(r.operating_accuracy);
        if (r.roc) {
            e["auc"] = std::stod(fixed(r.roc->auc, 6));
        }
        methods[std::string(triage::to_string(r.method))][std::to_string(r.class_count) + "-class"] = e;
    }
    j["methods"] = methods;
    return j.dump(2) + "\n";
}

std::vector<std::filesystem::path> emit_report(const TriageResults& results, const std::filesystem::path& dir)
{
    std::vector<std::filesystem::path> written;
    auto put = [&](const std::filesystem::path& name, const std::string& text) {
        io::write_text(dir / name, text);
        written.push_back(dir / name);
    };
    for (const auto& r : results.results) {
        const std::string m(triage::to_string(r.method));
        const std::string k = std::to_string(r.class_count);
        const std::string sweep_name = r.class_count == 4 ? "sweep_" + m : "sweep_" + m + "_2";
        put(sweep_name + ".csv", sweep_csv(r.sweep));
        put(sweep_name + ".svg", sweep_svg(r.sweep, m + ", " + k + "-class: accuracy and indeterminate fraction"));
        put("confusion_" + m + "_" + k + ".csv", confusion_csv(r.confusion));
        put("confusion_" + m + "_" + k + ".json", confusion_json(r.confusion));
        put("confusion_" + m + "_" + k + ".svg", confusion_svg(r.confusion, m + ", " + k + "-class"));
        if (r.roc) {
            put("roc_" + m + ".csv", roc_csv(*r.roc));
            put("roc_" + m + ".svg", roc_svg(*r.roc, m + ": ROC, 2+/3+ vs 0/1+"));
        }
    }
    put("summary.json", summary_json(results));
    return written;
}

} // namespace tmascan::report
