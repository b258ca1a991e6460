#pragma once

#include <string>
#include <variant>
#include <vector>

#include "gazekit/ingest.hpp"
#include "gazekit/preprocess.hpp"

namespace gazekit {

struct Fixation {
    double cx_px = 0;
    double cy_px = 0;
    double onset_ms = 0;
    double duration_ms = 0;
    std::size_t first_sample = 0;
    std::size_t last_sample = 0;

    double end_ms() const noexcept { return onset_ms + duration_ms; }
    friend bool operator==(const Fixation&, const Fixation&) = default;
};

struct FixParams {
    double v_th_deg_s = 30.0;
    double min_fix_ms = 60.0;
    double merge_gap_ms = 75.0;
    double merge_dist_deg = 0.5;

    void validate() const;
};

struct QualityGate {
    double max_data_loss = 0.25;
    double min_gts = 80.0;

    void validate() const;
};

// Velocity-threshold detection: maximal runs of slow gaps, merged when close
// in time and space, then filtered by minimum duration. Gaps across invalid
// samples are judged by the speed between the valid samples bracketing them.
std::vector<Fixation> detect_fixations(const GazeTrace& trace, const VelocitySeries& v,
                                       const FixParams& p, double px_per_deg);

double gaze_time_on_screen(const std::vector<Fixation>& fixations, double task_time_ms);

struct Keep {};
struct DropDataLoss {
    double data_loss;
};
struct DropGts {
    double gts;
};
using GateVerdict = std::variant<Keep, DropDataLoss, DropGts>;

inline bool kept(const GateVerdict& v) { return std::holds_alternative<Keep>(v); }
std::string describe(const GateVerdict& v);

// Strict comparisons: loss == max_data_loss and GTS == min_gts are kept.
GateVerdict quality_gate(const GazeTrace& trace, const std::vector<Fixation>& fixations,
                         const QualityGate& gate, double task_time_ms);

std::string format_fixations_csv(const std::vector<Fixation>& fixations);
// Sample indices are not part of the export and read back as zero.
std::vector<Fixation> parse_fixations_csv(std::string_view text);

}  // namespace gazekit
