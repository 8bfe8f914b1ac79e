#include "tmascan/stitcher.hpp"

#include "tmascan/error.hpp"
#include "tmascan/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace tmascan::stitch {

namespace {

constexpr int kStrips = 8;

struct Window {
    int x0, x1, y0, y1;
};

Window central_window(int w, int h)
{
    const int mx = w / 10;
    const int my = h / 10;
    return {mx, std::max(mx + 1, w - mx), my, std::max(my + 1, h - my)};
}

std::uint32_t gray_at(const std::uint8_t* p)
{
    return (299u * p[0] + 587u * p[1] + 114u * p[2] + 500u) / 1000u;
}

double pearson_bytes(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, int w, int h)
{
    const Window win = central_window(w, h);
    std::int64_t sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
    std::int64_t n = 0;
    for (int y = win.y0; y < win.y1; ++y) {
        const std::uint8_t* pa = a.data() + (static_cast<std::size_t>(y) * w + win.x0) * 3;
        const std::uint8_t* pb = b.data() + (static_cast<std::size_t>(y) * w + win.x0) * 3;
        for (int x = win.x0; x < win.x1; ++x, pa += 3, pb += 3) {
            const std::int64_t ga = gray_at(pa);
            const std::int64_t gb = gray_at(pb);
            sa += ga;
            sb += gb;
            saa += ga * ga;
            sbb += gb * gb;
            sab += ga * gb;
            ++n;
        }
    }
    const std::int64_t va = n * saa - sa * sa;
    const std::int64_t vb = n * sbb - sb * sb;
    if (va == 0 && vb == 0) {
        return 1.0;
    }
    if (va == 0 || vb == 0) {
        return 0.0;
    }
    const double cov = static_cast<double>(n * sab - sa * sb);
    return std::clamp(cov / std::sqrt(static_cast<double>(va) * static_cast<double>(vb)), -1.0, 1.0);
}

// Strip-mean gray profiles, kStrips rows of width w.
std::vector<double> strip_profiles(const Raster& img)
{
    const int w = img.width();
    const int h = img.height();
    std::vector<double> prof(static_cast<std::size_t>(kStrips) * w, 0.0);
    for (int s = 0; s < kStrips; ++s) {
        const int y0 = s * h / kStrips;
        const int y1 = std::max(y0 + 1, (s + 1) * h / kStrips);
        double* out = prof.data() + static_cast<std::size_t>(s) * w;
        for (int y = y0; y < y1 && y < h; ++y) {
            const auto row = img.row(y);
            for (int x = 0; x < w; ++x) {
                out[x] += gray_at(row.data() + 3 * x);
            }
        }
        const double inv = 1.0 / (std::min(y1, h) - y0);
        for (int x = 0; x < w; ++x) {
            out[x] *= inv;
        }
    }
    return prof;
}

std::optional<int> best_shift(const std::vector<double>& pa, const std::vector<double>& pb, int w, int lo, int hi,
                              int margin)
{
    constexpr int kMinOverlap = 16;
    constexpr double kFlat = 0.25; // variance in gray levels squared
    std::optional<int> best;
    double best_score = -std::numeric_limits<double>::infinity();
    bool any_textured = false;
    for (int s = lo; s <= hi; ++s) {
        // b column c overlaps a column c + s.
        const int c0 = std::max(margin, margin - s);
        const int c1 = std::min(w - margin, w - margin - s);
        if (c1 - c0 < kMinOverlap) {
            continue;
        }
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int strip = 0; strip < kStrips; ++strip) {
            const double* ra = pa.data() + static_cast<std::size_t>(strip) * w;
            const double* rb = pb.data() + static_cast<std::size_t>(strip) * w;
            for (int c = c0; c < c1; ++c) {
                const double va = ra[c + s];
                const double vb = rb[c];
                sa += va;
                sb += vb;
                saa += va * va;
                sbb += vb * vb;
                sab += va * vb;
            }
        }
        const double n = static_cast<double>(kStrips) * (c1 - c0);
        const double var_a = saa / n - (sa / n) * (sa / n);
        const double var_b = sbb / n - (sb / n) * (sb / n);
        if (var_a < kFlat || var_b < kFlat) {
            continue;
        }
        any_textured = true;
        const double score = (sab / n - (sa / n) * (sb / n)) / std::sqrt(var_a * var_b);
        if (score > best_score) {
            best_score = score;
            best = s;
        }
    }
    if (!any_textured) {
        return std::nullopt;
    }
    return best;
}

std::vector<std::pair<std::size_t, std::size_t>> moving_runs(const std::vector<bool>& moving)
{
    std::vector<std::pair<std::size_t, std::size_t>> runs;
    std::size_t i = 0;
    while (i < moving.size()) {
        if (!moving[i]) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < moving.size() && moving[j + 1]) {
            ++j;
        }
        runs.emplace_back(i, j);
        i = j + 1;
    }
    return runs;
}

double frac(double v)
{
    return v - std::floor(v);
}

std::size_t hamming(const std::vector<bool>& obs, double period, double duty, double phase)
{
    std::size_t d = 0;
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const bool pred = frac((static_cast<double>(i) - phase) / period) < duty;
        d += pred != obs[i];
    }
    return d;
}

float feather(double c, double span, double ov)
{
    if (ov <= 0.0) {
        return 1.0f;
    }
    return static_cast<float>(std::min({1.0, (c + 0.5) / ov, (span - c - 0.5) / ov}));
}

struct Band {
    std::vector<float> rgb; // normalized colour
    std::vector<float> weight; // 0 where nothing landed
};

} // namespace

double frame_correlation(const Raster& a, const Raster& b)
{
    if (a.width() != b.width() || a.height() != b.height()) {
        throw ParameterError("frames to correlate differ in size");
    }
    return pearson_bytes(a.bytes(), b.bytes(), a.width(), a.height());
}

CorrelationSeries correlation_series(const io::FrameSource& seq, std::size_t stride, int jobs)
{
    const std::size_t n = seq.size();
    if (n < 2) {
        throw ParameterError("correlation needs at least 2 frames, got " + std::to_string(n));
    }
    if (stride < 1 || stride >= n) {
        throw ParameterError("correlation stride must lie in [1, frame_count)");
    }
    const auto& m = seq.manifest();
    CorrelationSeries out;
    out.stride = stride;
    out.values.resize(n - stride);
    parallel_for(0, n - stride, jobs, [&](std::size_t i) {
        out.values[i] = pearson_bytes(seq.frame_bytes(i), seq.frame_bytes(i + stride), m.width, m.height);
    });
    return out;
}

std::string_view to_string(LabelSource s)
{
    return s == LabelSource::raw_correlation ? "raw-correlation" : "square-wave-refined";
}

MotionLabels classify_motion(const CorrelationSeries& series, int window, double theta_static)
{
    const auto len = static_cast<long>(series.values.size());
    if (window < 1 || window > len) {
        throw ParameterError("window must lie in [1, " + std::to_string(len) + "]");
    }
    const long stride = static_cast<long>(series.stride);
    const long frames = len + stride;
    const long h = window / 2;
    std::vector<double> prefix(static_cast<std::size_t>(len) + 1, 0.0);
    for (long i = 0; i < len; ++i) {
        prefix[i + 1] = prefix[i] + series.values[i];
    }
    MotionLabels labels;
    labels.moving.resize(static_cast<std::size_t>(frames));
    for (long i = 0; i < frames; ++i) {
        // Pairs lying wholly inside the frame window [i - h, i - h + window - 1];
        // a window too short to hold a pair uses the pairs touching frame i.
        long a = i - h;
        long b = i - h + window - 1 - stride;
        if (b < a) {
            a = i - stride;
            b = i;
        }
        a = std::clamp(a, 0L, len - 1);
        b = std::clamp(b, a, len - 1);
        const double mean = (prefix[b + 1] - prefix[a]) / static_cast<double>(b - a + 1);
        labels.moving[i] = !(mean >= theta_static);
    }
    return labels;
}

bool SquareWaveModel::moving(std::size_t frame) const noexcept
{
    return frac((static_cast<double>(frame) - phase) / period) < duty;
}

MotionLabels SquareWaveModel::predict(std::size_t frame_count) const
{
    MotionLabels out;
    out.source = LabelSource::square_wave_refined;
    out.moving.resize(frame_count);
    for (std::size_t i = 0; i < frame_count; ++i) {
        out.moving[i] = moving(i);
    }
    return out;
}

double expected_period(double scan_length_um, double stage_speed_um_s, double frame_rate_hz, int pause_frames,
                       int jump_frames)
{
    return scan_length_um / stage_speed_um_s * frame_rate_hz + 2.0 * pause_frames + jump_frames;
}

double expected_duty(double scan_length_um, double stage_speed_um_s, double frame_rate_hz, int pause_frames,
                     int jump_frames)
{
    return scan_length_um / stage_speed_um_s * frame_rate_hz /
           expected_period(scan_length_um, stage_speed_um_s, frame_rate_hz, pause_frames, jump_frames);
}

double estimate_period(const MotionLabels& labels)
{
    const std::size_t n = labels.size();
    if (n < 8) {
        return static_cast<double>(std::max<std::size_t>(n, 2));
    }
    double mean = 0.0;
    for (bool b : labels.moving) {
        mean += b ? 1.0 : 0.0;
    }
    mean /= static_cast<double>(n);
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = (labels.moving[i] ? 1.0 : 0.0) - mean;
    }
    const std::size_t max_lag = n / 2;
    std::vector<double> r(max_lag + 1, 0.0);
    for (std::size_t k = 0; k <= max_lag; ++k) {
        double s = 0.0;
        for (std::size_t i = 0; i + k < n; ++i) {
            s += x[i] * x[i + k];
        }
        r[k] = s / static_cast<double>(n - k);
    }
    // Skip the central lobe: the first period peak follows a trough.
    std::size_t start = 1;
    while (start < max_lag && r[start + 1] < r[start]) {
        ++start;
    }
    start = std::max<std::size_t>(start, 2);
    double best = 0.0;
    for (std::size_t k = start; k <= max_lag; ++k) {
        best = std::max(best, r[k]);
    }
    if (best <= 0.0) {
        return static_cast<double>(n);
    }
    for (std::size_t k = start; k <= max_lag; ++k) {
        const bool peak = r[k] >= r[k - 1] && (k == max_lag || r[k] >= r[k + 1]);
        if (peak && r[k] >= 0.9 * best) {
            return static_cast<double>(k);
        }
    }
    return static_cast<double>(n);
}

SquareWaveFit fit_square_wave(const MotionLabels& labels, const SquareWaveBounds& bounds)
{
    const std::size_t n = labels.size();
    const auto moving_count = static_cast<std::size_t>(std::count(labels.moving.begin(), labels.moving.end(), true));
    if (moving_count == 0 || moving_count == n) {
        throw FitError("motion labels are all " + std::string(moving_count == 0 ? "static" : "moving") +
                       "; no square wave to fit, use the raw labels");
    }
    const double expected = bounds.expected_period > 0.0 ? bounds.expected_period : estimate_period(labels);
    const int p_lo = std::max(2, static_cast<int>(std::floor(expected * (1.0 - bounds.period_tolerance))));
    const int p_hi = std::max(p_lo, static_cast<int>(std::ceil(expected * (1.0 + bounds.period_tolerance))));
    double d_min = 0.01, d_max = 0.99;
    if (bounds.expected_duty > 0.0) {
        d_min = std::clamp(bounds.expected_duty * (1.0 - bounds.duty_tolerance), 0.01, 0.99);
        d_max = std::clamp(bounds.expected_duty * (1.0 + bounds.duty_tolerance), d_min, 0.99);
    }

    // Coarse grid. Duty is binned in steps of 0.01 so all duties for one
    // (period, phase) pair are scored in a single pass over the labels.
    constexpr int kDutyBins = 100;
    const int k_lo = std::clamp(static_cast<int>(std::ceil(d_min * kDutyBins - 1e-9)), 1, kDutyBins - 1);
    const int k_hi = std::clamp(static_cast<int>(std::floor(d_max * kDutyBins + 1e-9)), k_lo, kDutyBins - 1);
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_p = p_lo, best_d = k_lo / static_cast<double>(kDutyBins), best_phi = 0.0;
    std::array<std::size_t, kDutyBins> mov_in{};
    std::array<std::size_t, kDutyBins> stat_in{};
    for (int p = p_lo; p <= p_hi; ++p) {
        for (int phi = 0; phi < p; ++phi) {
            mov_in.fill(0);
            stat_in.fill(0);
            for (std::size_t i = 0; i < n; ++i) {
                long r = (static_cast<long>(i) - phi) % p;
                if (r < 0) {
                    r += p;
                }
                const int bin = std::min(kDutyBins - 1, static_cast<int>(r * kDutyBins / p));
                (labels.moving[i] ? mov_in : stat_in)[bin]++;
            }
            // duty k/100: bins < k predicted moving
            std::size_t mov_after = moving_count;
            std::size_t stat_before = 0;
            for (int k = 1; k <= k_hi; ++k) {
                mov_after -= mov_in[k - 1];
                stat_before += stat_in[k - 1];
                const std::size_t d = mov_after + stat_before;
                if (k >= k_lo && d < best) {
                    best = d;
                    best_p = p;
                    best_d = k / static_cast<double>(kDutyBins);
                    best_phi = phi;
                }
            }
        }
    }

    // Local refinement over real-valued parameters with halving steps.
    best_d = std::clamp(best_d, d_min, d_max);
    best = hamming(labels.moving, best_p, best_d, best_phi);
    double sp = 0.5, sd = 0.005, sphi = 0.5;
    while (sp > 1.0 / 256.0) {
        bool improved = false;
        const std::array<std::array<double, 3>, 6> moves{{{sp, 0, 0}, {-sp, 0, 0}, {0, sd, 0}, {0, -sd, 0},
                                                           {0, 0, sphi}, {0, 0, -sphi}}};
        for (const auto& mv : moves) {
            const double p = best_p + mv[0];
            const double d = best_d + mv[1];
            const double phi = best_phi + mv[2];
            if (p < 2.0 || d < d_min || d > d_max) {
                continue;
            }
            const std::size_t h = hamming(labels.moving, p, d, phi);
            if (h < best) {
                best = h;
                best_p = p;
                best_d = d;
                best_phi = phi;
                improved = true;
            }
        }
        if (!improved) {
            sp *= 0.5;
            sd *= 0.5;
            sphi *= 0.5;
        }
    }

    SquareWaveFit fit;
    fit.model.period = best_p;
    fit.model.duty = best_d;
    fit.model.phase = best_phi;
    fit.refined = fit.model.predict(n);
    fit.model.hamming = best;
    fit.model.line_count = static_cast<int>(moving_runs(fit.refined.moving).size());
    if (fit.model.line_count == 0) {
        throw FitError("square-wave fit predicts no moving run");
    }
    return fit;
}

std::vector<ScanLineSegment> extract_segments(const MotionLabels& labels, const SquareWaveModel& model,
                                              Direction start_direction, int jump_frames)
{
    if (start_direction == Direction::none) {
        throw ParameterError("start direction must be +x or -x");
    }
    const auto runs = moving_runs(labels.moving);
    std::vector<ScanLineSegment> out;
    const auto min_len = static_cast<std::size_t>(std::max(1, jump_frames + 2));
    Direction dir = start_direction;
    for (const auto& [a, b] : runs) {
        if (b - a + 1 < min_len) {
            continue;
        }
        const int idx = static_cast<int>(out.size());
        out.push_back({idx, a, b, dir, idx});
        dir = imaging::opposite(dir);
    }
    if (static_cast<int>(out.size()) != model.line_count) {
        std::ostringstream msg;
        msg << "found " << out.size() << " scan-line runs but the model has " << model.line_count
            << " lines; moving run lengths:";
        for (const auto& [a, b] : runs) {
            msg << ' ' << (b - a + 1);
        }
        throw StructuralError(msg.str());
    }
    return out;
}

std::vector<ScanLineSegment> snap_segments(std::vector<ScanLineSegment> segments, const CorrelationSeries& series,
                                           double theta_static, int reach)
{
    if (series.stride != 1) {
        return segments;
    }
    const auto& v = series.values;
    const auto len = static_cast<long>(v.size());
    auto low = [&](long j) { return j >= 0 && j < len && v[j] < theta_static; };
    auto high = [&](long j) { return j < 0 || j >= len || v[j] >= theta_static; };
    for (std::size_t s = 0; s < segments.size(); ++s) {
        auto& seg = segments[s];
        const long lo_bound = s > 0 ? static_cast<long>(segments[s - 1].last) + 1 : 0;
        const long hi_bound = s + 1 < segments.size() ? static_cast<long>(segments[s + 1].first) - 1 : len;
        auto nearest = [&](long centre, auto&& ok) -> long {
            for (long d = 0; d <= reach; ++d) {
                for (long c : {centre - d, centre + d}) {
                    if (c >= lo_bound && c <= hi_bound && ok(c)) {
                        return c;
                    }
                }
            }
            return centre;
        };
        const long f = nearest(static_cast<long>(seg.first), [&](long c) { return c >= 1 && low(c - 1) && high(c - 2); });
        const long l = nearest(static_cast<long>(seg.last), [&](long c) { return low(c) && high(c + 1); });
        if (f <= l) {
            seg.first = static_cast<std::size_t>(f);
            seg.last = static_cast<std::size_t>(l);
        }
    }
    return segments;
}

std::optional<int> estimate_shift(const Raster& a, const Raster& b, int lo, int hi, int margin)
{
    if (a.width() != b.width() || a.height() != b.height()) {
        throw ParameterError("frames to register differ in size");
    }
    return best_shift(strip_profiles(a), strip_profiles(b), a.width(), lo, hi, margin);
}

StitchedSlide compose(const io::FrameSource& seq, const std::vector<ScanLineSegment>& segments,
                      const ComposeOptions& options)
{
    const auto& m = seq.manifest();
    const int fw = m.width;
    const int fh = m.height;
    const double scale = m.scale_um_per_px;
    if (segments.empty()) {
        throw ComposeError("no scan-line segments to compose");
    }
    const double step = options.stage_speed_um_s * m.frame_period_s / scale;
    if (!(step < fw)) {
        const double min_rate = options.stage_speed_um_s / (fw * scale);
        throw ComposeError("consecutive frames do not overlap (step " + std::to_string(step) + " px, frame width " +
                           std::to_string(fw) + " px); a frame rate above " + std::to_string(min_rate) +
                           " Hz is required");
    }
    const double pitch_px =
        (options.row_pitch_um > 0.0 ? options.row_pitch_um : 0.85 * fh * scale) / scale;
    const int blur_px = imaging::BlurSpec{options.stage_speed_um_s, m.exposure_s, Direction::pos_x}.width_px(scale);
    const int margin = blur_px / 2 + 4;
    const int shift_lo = static_cast<int>(std::floor((1.0 - options.refine_tolerance) * step));
    const int shift_hi = static_cast<int>(std::ceil((1.0 + options.refine_tolerance) * step));
    const int reach_hi = static_cast<int>(std::ceil(1.1 * step));
    for (std::size_t s = 0; s < segments.size(); ++s) {
        const auto& seg = segments[s];
        if (seg.first > seg.last || seg.last >= seq.size() || seg.direction == Direction::none) {
            throw ComposeError("segment " + std::to_string(s) + " is not valid for a " + std::to_string(seq.size()) +
                               "-frame sequence");
        }
    }

    StitchedSlide out;
    out.scale_um_per_px = scale;
    out.source = m;
    out.step_px = step;
    out.lines.resize(segments.size());

    // Placement, independently per line.
    parallel_for(0, segments.size(), options.jobs, [&](std::size_t s) {
        const auto& seg = segments[s];
        const bool pos = seg.direction == Direction::pos_x;
        LinePlacement lp;
        lp.segment = seg;
        lp.y = static_cast<int>(std::lround(seg.row * pitch_px));
        std::vector<std::size_t> order;
        for (std::size_t i = 0; i < seg.length(); ++i) {
            order.push_back(pos ? seg.first + i : seg.last - i);
        }
        const long left = pos ? static_cast<long>(seg.first) - 1 : static_cast<long>(seg.last) + 1;
        const long right = pos ? static_cast<long>(seg.last) + 1 : static_cast<long>(seg.first) - 1;
        auto valid = [&](long f) { return f >= 0 && f < static_cast<long>(seq.size()); };

        Raster prev = seq.frame(order.front());
        std::vector<double> prev_prof = strip_profiles(prev);
        double delta = 0.0;
        bool delta_estimated = false;
        if (valid(left)) {
            const Raster anchor = imaging::blur_raster(seq.frame(static_cast<std::size_t>(left)), blur_px, seg.direction);
            if (auto d = best_shift(strip_profiles(anchor), prev_prof, fw, 0, reach_hi, margin)) {
                delta = *d;
                delta_estimated = true;
            }
            lp.frames.push_back({static_cast<std::size_t>(left), 0, lp.y, true, true});
        }
        double p = delta;
        lp.frames.push_back({order.front(), static_cast<int>(std::lround(p)), lp.y, false, delta_estimated});
        for (std::size_t j = 1; j < order.size(); ++j) {
            Raster cur = seq.frame(order[j]);
            auto cur_prof = strip_profiles(cur);
            bool est = false;
            if (options.refine) {
                if (auto d = best_shift(prev_prof, cur_prof, fw, shift_lo, shift_hi, margin)) {
                    p += *d;
                    est = true;
                } else {
                    p += step;
                }
            } else {
                p = delta + static_cast<double>(j) * step;
            }
            lp.frames.push_back({order[j], static_cast<int>(std::lround(p)), lp.y, false, est});
            prev_prof = std::move(cur_prof);
        }
        if (valid(right)) {
            const Raster anchor =
                imaging::blur_raster(seq.frame(static_cast<std::size_t>(right)), blur_px, seg.direction);
            if (auto d = best_shift(prev_prof, strip_profiles(anchor), fw, 0, reach_hi, margin)) {
                lp.frames.push_back(
                    {static_cast<std::size_t>(right), static_cast<int>(std::lround(p)) + *d, lp.y, true, true});
            }
        }
        out.lines[s] = std::move(lp);
    });

    int canvas_w = 0;
    int canvas_h = 0;
    for (const auto& lp : out.lines) {
        for (const auto& f : lp.frames) {
            canvas_w = std::max(canvas_w, f.x + fw);
        }
        canvas_h = std::max(canvas_h, lp.y + fh);
    }
    std::vector<std::size_t> by_y(out.lines.size());
    for (std::size_t i = 0; i < by_y.size(); ++i) {
        by_y[i] = i;
    }
    std::stable_sort(by_y.begin(), by_y.end(), [&](auto a, auto b) { return out.lines[a].y < out.lines[b].y; });

    const double ov_x = fw - step;
    auto build_band = [&](const LinePlacement& lp) {
        Band band;
        const std::size_t area = static_cast<std::size_t>(canvas_w) * fh;
        band.rgb.assign(area * 3, 0.0f);
        band.weight.assign(area, 0.0f);
        std::vector<float> wx(fw);
        for (int c = 0; c < fw; ++c) {
            wx[c] = feather(c, fw, ov_x);
        }
        for (const auto& fp : lp.frames) {
            Raster frame = seq.frame(fp.frame);
            if (fp.pause) {
                frame = imaging::blur_raster(frame, blur_px, lp.segment.direction);
            }
            const float k = fp.pause ? static_cast<float>(options.pause_weight) : 1.0f;
            for (int y = 0; y < fh; ++y) {
                const auto row = frame.row(y);
                float* acc = band.rgb.data() + (static_cast<std::size_t>(y) * canvas_w + fp.x) * 3;
                float* wsum = band.weight.data() + static_cast<std::size_t>(y) * canvas_w + fp.x;
                for (int c = 0; c < fw; ++c) {
                    const float w = k * wx[c];
                    acc[3 * c] += w * row[3 * c];
                    acc[3 * c + 1] += w * row[3 * c + 1];
                    acc[3 * c + 2] += w * row[3 * c + 2];
                    wsum[c] += w;
                }
            }
        }
        for (std::size_t i = 0; i < area; ++i) {
            if (band.weight[i] > 0.0f) {
                const float inv = 1.0f / band.weight[i];
                band.rgb[3 * i] *= inv;
                band.rgb[3 * i + 1] *= inv;
                band.rgb[3 * i + 2] *= inv;
            }
        }
        return band;
    };

    Raster mosaic(canvas_w, canvas_h, scale, imaging::Rgb{255, 255, 255});
    const double ov_y = fh - pitch_px;
    auto merge_rows = [&](int y_begin, int y_end, const Band* a, int ya, const Band& b, int yb) {
        for (int y = y_begin; y < y_end; ++y) {
            auto dst = mosaic.row(y);
            const bool use_a = a != nullptr && y >= ya && y < ya + fh;
            const float wa = use_a ? feather(y - ya, fh, ov_y) : 0.0f;
            const float wb = feather(y - yb, fh, ov_y);
            for (int x = 0; x < canvas_w; ++x) {
                float acc[3] = {0, 0, 0};
                float wsum = 0.0f;
                if (use_a) {
                    const std::size_t i = static_cast<std::size_t>(y - ya) * canvas_w + x;
                    if (a->weight[i] > 0.0f) {
                        for (int c = 0; c < 3; ++c) {
                            acc[c] += wa * a->rgb[3 * i + c];
                        }
                        wsum += wa;
                    }
                }
                const std::size_t i = static_cast<std::size_t>(y - yb) * canvas_w + x;
                if (b.weight[i] > 0.0f) {
                    for (int c = 0; c < 3; ++c) {
                        acc[c] += wb * b.rgb[3 * i + c];
                    }
                    wsum += wb;
                }
                if (wsum > 0.0f) {
                    for (int c = 0; c < 3; ++c) {
                        dst[3 * x + c] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[c] / wsum), 0L, 255L));
                    }
                }
            }
        }
    };

    // Bands are built in batches of `jobs`; each band's rows above the next
    // line are final once it and its predecessor are known.
    const std::size_t batch = static_cast<std::size_t>(std::max(1, options.jobs));
    std::optional<Band> prev_band;
    int prev_y = 0;
    for (std::size_t start = 0; start < by_y.size(); start += batch) {
        const std::size_t end = std::min(by_y.size(), start + batch);
        std::vector<Band> bands(end - start);
        parallel_for(start, end, options.jobs,
                     [&](std::size_t k) { bands[k - start] = build_band(out.lines[by_y[k]]); });
        for (std::size_t k = start; k < end; ++k) {
            Band& band = bands[k - start];
            const int y = out.lines[by_y[k]].y;
            const int next_y = k + 1 < by_y.size() ? std::min(out.lines[by_y[k + 1]].y, y + fh) : y + fh;
            merge_rows(y, next_y, prev_band ? &*prev_band : nullptr, prev_y, band, y);
            prev_band = std::move(band);
            prev_y = y;
        }
    }
    out.mosaic = std::move(mosaic);
    return out;
}

StitchReport stitch(const io::FrameSource& seq, const StitchOptions& options)
{
    StitchReport r;
    r.series = correlation_series(seq, 1, options.compose.jobs);
    r.raw = classify_motion(r.series, options.window, options.theta_static);
    r.fit = fit_square_wave(r.raw, options.bounds);
    r.segments = extract_segments(r.fit.refined, r.fit.model, options.start_direction, options.jump_frames);
    if (options.snap) {
        // The moving average widens runs by window/2 per side; reach past that.
        r.segments = snap_segments(std::move(r.segments), r.series, options.theta_static, options.window + 1);
    }
    r.slide = compose(seq, r.segments, options.compose);
    r.slide.model = r.fit.model;
    return r;
}

std::string placement_json(const StitchReport& report)
{
    using json = nlohmann::ordered_json;
    json j;
    const auto& m = report.fit.model;
    j["model"] = {{"period", m.period},
                  {"duty", m.duty},
                  {"phase", m.phase},
                  {"line_count", m.line_count},
                  {"hamming", m.hamming}};
    std::size_t raw_vs_refined = 0;
    for (std::size_t i = 0; i < report.raw.size() && i < report.fit.refined.size(); ++i) {
        raw_vs_refined += report.raw.moving[i] != report.fit.refined.moving[i];
    }
    j["labels"] = {{"raw_moving", std::count(report.raw.moving.begin(), report.raw.moving.end(), true)},
                   {"frames", report.raw.size()},
                   {"changed_by_fit", raw_vs_refined}};
    j["mosaic"] = {{"width", report.slide.mosaic.width()},
                   {"height", report.slide.mosaic.height()},
                   {"scale_um_per_px", report.slide.scale_um_per_px},
                   {"step_px", report.slide.step_px}};
    json lines = json::array();
    for (const auto& lp : report.slide.lines) {
        json frames = json::array();
        for (const auto& f : lp.frames) {
            frames.push_back({{"frame", f.frame}, {"x", f.x}, {"y", f.y}, {"pause", f.pause}, {"estimated", f.estimated}});
        }
        lines.push_back({{"line", lp.segment.line},
                         {"first", lp.segment.first},
                         {"last", lp.segment.last},
                         {"direction", imaging::to_string(lp.segment.direction)},
                         {"row", lp.segment.row},
                         {"y", lp.y},
                         {"frames", frames}});
    }
    j["lines"] = lines;
    return j.dump(2) + "\n";
}

} // namespace tmascan::stitch
