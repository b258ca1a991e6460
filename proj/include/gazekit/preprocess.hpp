#pragma once

#include <optional>
#include <vector>

#include "gazekit/ingest.hpp"
#include "gazekit/types.hpp"

namespace gazekit {

// Angular speed per inter-sample gap; std::nullopt marks a gap with an
// invalid endpoint.
struct VelocitySeries {
    std::vector<std::optional<double>> v_deg_s;

    std::size_t size() const noexcept { return v_deg_s.size(); }
    bool flagged(std::size_t gap) const { return !v_deg_s[gap].has_value(); }
};

// Weighted On-Off smoothing parameters.
struct WooParams {
    double window_ms = 52.0;
    double kernel_sigma_ms = 17.0;
    double saccade_v_th_deg_s = 150.0;

    void validate() const;
};

double px_per_degree(const ScreenGeometry& g);

struct OutlierResult {
    GazeTrace trace;
    std::size_t corrected_count = 0;
};

// Single-sample spike removal. A coordinate is replaced by the median of
// (prev, self, next) when it deviates from *both* valid neighbours by more
// than 1 deg (x) or 1.2 deg (y). Decisions are taken on the input values.
OutlierResult correct_outliers(const GazeTrace& trace, const ScreenGeometry& g);

VelocitySeries inter_sample_velocity(const GazeTrace& trace, const ScreenGeometry& g);
VelocitySeries inter_sample_velocity(const GazeTrace& trace, double px_per_deg);

// Causal Weighted On-Off filter. While the latest gap is slower than the
// saccade threshold each valid sample is replaced by a Gaussian-weighted mean
// of the valid samples in the trailing window; a fast gap passes the raw
// sample through and restarts the window at it.
GazeTrace woo_filter(const GazeTrace& trace, const VelocitySeries& v, const WooParams& p);

struct PreprocessResult {
    GazeTrace smoothed;
    VelocitySeries velocity;  // of the smoothed trace
    std::size_t outliers_corrected = 0;
};

// correct_outliers -> velocity -> woo_filter -> velocity of the output.
PreprocessResult preprocess_trace(const GazeTrace& raw, const ScreenGeometry& g,
                                  const WooParams& p);

}  // namespace gazekit
