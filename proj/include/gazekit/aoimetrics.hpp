#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gazekit/fixation.hpp"
#include "gazekit/ingest.hpp"
#include "gazekit/salmap.hpp"

namespace gazekit {

enum class HitMode { Centroid, AnySample };

// AnySample needs the trace the fixations were detected on.
struct HitOptions {
    HitMode mode = HitMode::Centroid;
    const GazeTrace* trace = nullptr;
};

// Index of the first fixation inside the AOI that has not ended before onset_ms.
std::optional<std::size_t> first_qualifying_fixation(const std::vector<Fixation>& fixations,
                                                     const Rect& aoi, double onset_ms,
                                                     const HitOptions& opts = {});

bool aoi_hit(const std::vector<Fixation>& fixations, const Rect& aoi, double onset_ms,
             const HitOptions& opts = {});
std::optional<double> time_to_first_fixation(const std::vector<Fixation>& fixations,
                                             const Rect& aoi, double onset_ms,
                                             const HitOptions& opts = {});
std::optional<double> distance_from_last_fixation(const std::vector<Fixation>& fixations,
                                                  const Rect& aoi, double onset_ms,
                                                  const HitOptions& opts = {});

struct TrialSummary {
    std::size_t n_fix = 0;
    std::optional<double> avg_fix_dur_ms;
    std::size_t n_salient_regions = 0;
    Highlight ht = Highlight::Absent;
    CognitiveLoad cl = CognitiveLoad::Absent;
};

TrialSummary trial_summary(const std::vector<Fixation>& fixations,
                           const std::vector<Region>& regions, const TrialMeta& meta);

struct RankedTrial {
    std::vector<Region> regions;  // ranked by descending peak
    std::optional<Rect> aoi;      // absent for no-highlight trials
    std::optional<Rect> sr_bbox;
};

struct RankStats {
    double n_s_pct = 0;
    double n_h_pct = 0;
    std::optional<double> mu_s;
    std::optional<double> mu_h;
};

// 1-based rank of the first region majority-overlapping target.
std::optional<int> region_rank(const std::vector<Region>& regions, const Rect& target);

// N = percentage of trials in which the region is among the extracted ones;
// mu = mean rank over those trials.
RankStats region_rank_stats(const std::vector<RankedTrial>& trials);

struct MetricsRow {
    std::string participant;
    std::string stimulus;
    Highlight ht = Highlight::Absent;
    CognitiveLoad cl = CognitiveLoad::Absent;
    std::size_t n_fix = 0;
    std::optional<double> avg_fix_dur_ms;
    std::size_t n_regions = 0;
    bool aoi_hit = false;
    std::optional<double> ttff_ms;
    std::optional<double> dflf_px;
};

MetricsRow metrics_row(const std::string& participant, const TrialMeta& meta,
                       const std::vector<Fixation>& fixations,
                       const std::vector<Region>& regions);

std::string metrics_csv_header();
std::string format_metrics_row(const MetricsRow& row);
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);

}  // namespace gazekit
