#include "gazekit/fixation.hpp"

#include <cmath>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace gazekit {

namespace {

struct Candidate {
    std::size_t first = 0;
    std::size_t last = 0;
    double sum_x = 0;
    double sum_y = 0;
    std::size_t n_valid = 0;

    double cx() const { return sum_x / static_cast<double>(n_valid); }
    double cy() const { return sum_y / static_cast<double>(n_valid); }
};

// Whether each gap belongs to a fixation. Flagged gaps take the speed between
// the valid samples bracketing the invalid stretch.
std::vector<bool> slow_gaps(const GazeTrace& trace, const VelocitySeries& v, double th,
                            double ppd) {
    const auto& s = trace.samples;
    std::vector<bool> slow(v.size(), false);
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (v.v_deg_s[k]) {
            slow[k] = *v.v_deg_s[k] < th;
            continue;
        }
        std::size_t a = k + 1;
        while (a-- > 0 && !s[a].valid) {}
        std::size_t b = k + 1;
        while (b < s.size() && !s[b].valid) ++b;
        if (a == static_cast<std::size_t>(-1) || b >= s.size()) {
            slow[k] = true;
            continue;
        }
        const double dist = std::hypot(*s[b].x_px - *s[a].x_px, *s[b].y_px - *s[a].y_px);
        const double dt_s = static_cast<double>(s[b].t_us - s[a].t_us) * 1e-6;
        slow[k] = dist / ppd / dt_s < th;
    }
    return slow;
}

Fixation to_fixation(const Candidate& c, const GazeTrace& trace) {
    const auto& s = trace.samples;
    Fixation f;
    f.cx_px = c.cx();
    f.cy_px = c.cy();
    f.first_sample = c.first;
    f.last_sample = c.last;
    f.onset_ms = static_cast<double>(s[c.first].t_us) / 1000.0;
    f.duration_ms = static_cast<double>(s[c.last].t_us - s[c.first].t_us) / 1000.0 +
                    trace.sample_period_ms();
    return f;
}

}  // namespace

void FixParams::validate() const {
    if (!(v_th_deg_s > 0) || !(min_fix_ms > 0) || !(merge_gap_ms > 0) || !(merge_dist_deg > 0))
        throw ValidationError("fixation parameters must be positive");
}

void QualityGate::validate() const {
    if (!(max_data_loss > 0 && max_data_loss < 1))
        throw ValidationError("max_data_loss must lie in (0, 1)");
    if (!(min_gts > 0 && min_gts <= 100)) throw ValidationError("min_gts must lie in (0, 100]");
}

std::vector<Fixation> detect_fixations(const GazeTrace& trace, const VelocitySeries& v,
                                       const FixParams& p, double px_per_deg) {
    p.validate();
    if (trace.size() < 2) return {};
    if (v.size() + 1 != trace.size())
        throw PreconditionError("velocity series does not match trace length");

    const auto& s = trace.samples;
    const auto slow = slow_gaps(trace, v, p.v_th_deg_s, px_per_deg);

    std::vector<Candidate> candidates;
    for (std::size_t k = 0; k < slow.size();) {
        if (!slow[k]) {
            ++k;
            continue;
        }
        std::size_t end = k;
        while (end + 1 < slow.size() && slow[end + 1]) ++end;
        std::size_t first = k;
        std::size_t last = end + 1;
        k = end + 1;
        while (first <= last && !s[first].valid) ++first;
        while (last > first && !s[last].valid) --last;
        if (first > last || !s[first].valid) continue;

        Candidate c{first, last};
        for (std::size_t i = first; i <= last; ++i) {
            if (!s[i].valid) continue;
            c.sum_x += *s[i].x_px;
            c.sum_y += *s[i].y_px;
            ++c.n_valid;
        }
        candidates.push_back(c);
    }

    const double period = trace.sample_period_ms();
    const double merge_px = p.merge_dist_deg * px_per_deg;
    std::vector<Candidate> merged;
    for (const auto& c : candidates) {
        if (!merged.empty()) {
            auto& back = merged.back();
            const double back_end = static_cast<double>(s[back.last].t_us) / 1000.0 + period;
            const double gap = static_cast<double>(s[c.first].t_us) / 1000.0 - back_end;
            const double dist = std::hypot(c.cx() - back.cx(), c.cy() - back.cy());
            if (gap < p.merge_gap_ms && dist < merge_px) {
                back.last = c.last;
                back.sum_x += c.sum_x;
                back.sum_y += c.sum_y;
                back.n_valid += c.n_valid;
                continue;
            }
        }
        merged.push_back(c);
    }

    std::vector<Fixation> out;
    for (const auto& c : merged) {
        Fixation f = to_fixation(c, trace);
        if (f.duration_ms >= p.min_fix_ms) out.push_back(f);
    }
    return out;
}

double gaze_time_on_screen(const std::vector<Fixation>& fixations, double task_time_ms) {
    if (!(task_time_ms > 0)) throw PreconditionError("task time must be positive");
    double total = 0;
    for (const auto& f : fixations) total += f.duration_ms;
    return 100.0 * total / task_time_ms;
}

std::string describe(const GateVerdict& v) {
    if (const auto* d = std::get_if<DropDataLoss>(&v))
        return "drop:data_loss=" + textio::format_double(d->data_loss);
    if (const auto* d = std::get_if<DropGts>(&v)) return "drop:gts=" + textio::format_double(d->gts);
    return "keep";
}

GateVerdict quality_gate(const GazeTrace& trace, const std::vector<Fixation>& fixations,
                         const QualityGate& gate, double task_time_ms) {
    gate.validate();
    const double loss = trace.invalid_fraction();
    if (loss > gate.max_data_loss) return DropDataLoss{loss};
    const double gts = gaze_time_on_screen(fixations, task_time_ms);
    if (gts < gate.min_gts) return DropGts{gts};
    return Keep{};
}

std::string format_fixations_csv(const std::vector<Fixation>& fixations) {
    std::string out = "cx_px,cy_px,onset_ms,duration_ms\n";
    for (const auto& f : fixations) {
        out += textio::format_double(f.cx_px) + ',' + textio::format_double(f.cy_px) + ',' +
               textio::format_double(f.onset_ms) + ',' + textio::format_double(f.duration_ms) +
               '\n';
    }
    return out;
}

std::vector<Fixation> parse_fixations_csv(std::string_view text) {
    auto lines = textio::split(text, '\n');
    while (!lines.empty() && textio::trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty() || textio::trim(lines[0]) != "cx_px,cy_px,onset_ms,duration_ms")
        throw FormatError("unexpected fixation CSV header");
    std::vector<Fixation> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = textio::split(textio::trim(lines[i]));
        if (cells.size() != 4) throw FormatError("fixation CSV row " + std::to_string(i));
        Fixation f;
        double* fields[] = {&f.cx_px, &f.cy_px, &f.onset_ms, &f.duration_ms};
        for (std::size_t c = 0; c < 4; ++c) {
            auto v = textio::parse_double(cells[c]);
            if (!v) throw FormatError("fixation CSV row " + std::to_string(i));
            *fields[c] = *v;
        }
        out.push_back(f);
    }
    return out;
}

}  // namespace gazekit
