#include "gazekit/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gazekit/error.hpp"

namespace gazekit {

namespace {

constexpr double kOutlierXDeg = 1.0;
constexpr double kOutlierYDeg = 1.2;

double median3(double a, double b, double c) {
    return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

}  // namespace

void WooParams::validate() const {
    if (!(window_ms > 0) || !(kernel_sigma_ms > 0) || !(saccade_v_th_deg_s > 0))
        throw ValidationError("WOO filter parameters must be positive");
}

double px_per_degree(const ScreenGeometry& g) {
    g.validate();
    const double one_degree = std::numbers::pi / 180.0;
    return g.viewing_distance_cm * std::tan(one_degree) * (g.screen_w_px / g.screen_w_cm);
}

OutlierResult correct_outliers(const GazeTrace& trace, const ScreenGeometry& g) {
    if (trace.size() < 3)
        throw PreconditionError("outlier correction needs at least 3 samples");
    const double ppd = px_per_degree(g);
    const double tx = kOutlierXDeg * ppd;
    const double ty = kOutlierYDeg * ppd;

    OutlierResult res{trace, 0};
    const auto& in = trace.samples;
    for (std::size_t i = 1; i + 1 < in.size(); ++i) {
        const auto& prev = in[i - 1];
        const auto& cur = in[i];
        const auto& next = in[i + 1];
        if (!prev.valid || !cur.valid || !next.valid) continue;

        // A monotone ramp passes both tests but its median is the sample itself.
        bool changed = false;
        if (std::abs(*cur.x_px - *prev.x_px) > tx && std::abs(*cur.x_px - *next.x_px) > tx) {
            const double m = median3(*prev.x_px, *cur.x_px, *next.x_px);
            changed |= m != *cur.x_px;
            res.trace.samples[i].x_px = m;
        }
        if (std::abs(*cur.y_px - *prev.y_px) > ty && std::abs(*cur.y_px - *next.y_px) > ty) {
            const double m = median3(*prev.y_px, *cur.y_px, *next.y_px);
            changed |= m != *cur.y_px;
            res.trace.samples[i].y_px = m;
        }
        if (changed) ++res.corrected_count;
    }
    return res;
}

VelocitySeries inter_sample_velocity(const GazeTrace& trace, double px_per_deg) {
    VelocitySeries v;
    if (trace.size() < 2) return v;
    v.v_deg_s.reserve(trace.size() - 1);
    for (std::size_t i = 1; i < trace.size(); ++i) {
        const auto& a = trace.samples[i - 1];
        const auto& b = trace.samples[i];
        if (!a.valid || !b.valid) {
            v.v_deg_s.emplace_back();
            continue;
        }
        const double dist = std::hypot(*b.x_px - *a.x_px, *b.y_px - *a.y_px);
        const double dt_s = static_cast<double>(b.t_us - a.t_us) * 1e-6;
        v.v_deg_s.emplace_back(dist / px_per_deg / dt_s);
    }
    return v;
}

VelocitySeries inter_sample_velocity(const GazeTrace& trace, const ScreenGeometry& g) {
    return inter_sample_velocity(trace, px_per_degree(g));
}

GazeTrace woo_filter(const GazeTrace& trace, const VelocitySeries& v, const WooParams& p) {
    p.validate();
    if (!trace.empty() && v.size() + 1 != trace.size())
        throw PreconditionError("velocity series does not match trace length");

    GazeTrace out = trace;
    const auto& in = trace.samples;
    const double inv_two_var = 1.0 / (2.0 * p.kernel_sigma_ms * p.kernel_sigma_ms);
    std::size_t window_start = 0;  // first sample eligible for averaging

    for (std::size_t i = 0; i < in.size(); ++i) {
        if (i > 0) {
            const auto& speed = v.v_deg_s[i - 1];
            if (speed && *speed >= p.saccade_v_th_deg_s) {
                window_start = i;  // off: raw sample passes through
                continue;
            }
        }
        if (!in[i].valid) continue;

        // Offsets from the current sample keep a constant window exact.
        const double x0 = *in[i].x_px, y0 = *in[i].y_px;
        double sw = 0, sx = 0, sy = 0;
        for (std::size_t j = i + 1; j-- > window_start;) {
            const double age_ms = static_cast<double>(in[i].t_us - in[j].t_us) / 1000.0;
            if (age_ms >= p.window_ms) break;
            if (!in[j].valid) continue;
            const double wgt = std::exp(-age_ms * age_ms * inv_two_var);
            sw += wgt;
            sx += wgt * (*in[j].x_px - x0);
            sy += wgt * (*in[j].y_px - y0);
        }
        out.samples[i].x_px = x0 + sx / sw;
        out.samples[i].y_px = y0 + sy / sw;
    }
    return out;
}

PreprocessResult preprocess_trace(const GazeTrace& raw, const ScreenGeometry& g,
                                  const WooParams& p) {
    const double ppd = px_per_degree(g);
    PreprocessResult res;
    GazeTrace cleaned = raw;
    if (raw.size() >= 3) {
        auto oc = correct_outliers(raw, g);
        cleaned = std::move(oc.trace);
        res.outliers_corrected = oc.corrected_count;
    }
    const auto v = inter_sample_velocity(cleaned, ppd);
    res.smoothed = woo_filter(cleaned, v, p);
    res.velocity = inter_sample_velocity(res.smoothed, ppd);
    return res;
}

}  // namespace gazekit
