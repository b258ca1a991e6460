#include "gazekit/aoimetrics.hpp"

#include <cmath>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace gazekit {

namespace {

bool inside(const Fixation& f, const Rect& aoi, const HitOptions& opts) {
    if (opts.mode == HitMode::Centroid) return aoi.contains(f.cx_px, f.cy_px);
    if (!opts.trace) throw PreconditionError("any-sample hit mode needs the gaze trace");
    const auto& s = opts.trace->samples;
    if (f.last_sample >= s.size()) throw PreconditionError("fixation span outside trace");
    for (std::size_t i = f.first_sample; i <= f.last_sample; ++i) {
        if (s[i].valid && aoi.contains(*s[i].x_px, *s[i].y_px)) return true;
    }
    return false;
}

}  // namespace

std::optional<std::size_t> first_qualifying_fixation(const std::vector<Fixation>& fixations,
                                                     const Rect& aoi, double onset_ms,
                                                     const HitOptions& opts) {
    if (onset_ms < 0) throw PreconditionError("highlight onset must be non-negative");
    for (std::size_t i = 0; i < fixations.size(); ++i) {
        const auto& f = fixations[i];
        if (f.end_ms() < onset_ms) continue;  // looked there before the highlight existed
        if (inside(f, aoi, opts)) return i;
    }
    return std::nullopt;
}

bool aoi_hit(const std::vector<Fixation>& fixations, const Rect& aoi, double onset_ms,
             const HitOptions& opts) {
    return first_qualifying_fixation(fixations, aoi, onset_ms, opts).has_value();
}

std::optional<double> time_to_first_fixation(const std::vector<Fixation>& fixations,
                                             const Rect& aoi, double onset_ms,
                                             const HitOptions& opts) {
    const auto idx = first_qualifying_fixation(fixations, aoi, onset_ms, opts);
    if (!idx) return std::nullopt;
    return std::max(0.0, fixations[*idx].onset_ms - onset_ms);
}

std::optional<double> distance_from_last_fixation(const std::vector<Fixation>& fixations,
                                                  const Rect& aoi, double onset_ms,
                                                  const HitOptions& opts) {
    const auto idx = first_qualifying_fixation(fixations, aoi, onset_ms, opts);
    if (!idx || *idx == 0) return std::nullopt;
    const auto& hit = fixations[*idx];
    const auto& prev = fixations[*idx - 1];
    return std::hypot(hit.cx_px - prev.cx_px, hit.cy_px - prev.cy_px);
}

TrialSummary trial_summary(const std::vector<Fixation>& fixations,
                           const std::vector<Region>& regions, const TrialMeta& meta) {
    TrialSummary s;
    s.n_fix = fixations.size();
    s.n_salient_regions = regions.size();
    s.ht = meta.ht;
    s.cl = meta.cl;
    if (!fixations.empty()) {
        double total = 0;
        for (const auto& f : fixations) total += f.duration_ms;
        s.avg_fix_dur_ms = total / static_cast<double>(fixations.size());
    }
    return s;
}

std::optional<int> region_rank(const std::vector<Region>& regions, const Rect& target) {
    for (std::size_t i = 0; i < regions.size(); ++i) {
        if (majority_overlap(regions[i].bbox, target)) return static_cast<int>(i) + 1;
    }
    return std::nullopt;
}

RankStats region_rank_stats(const std::vector<RankedTrial>& trials) {
    if (trials.empty()) throw PreconditionError("rank statistics need at least one trial");
    std::size_t s_hits = 0, h_hits = 0;
    double s_rank_sum = 0, h_rank_sum = 0;
    for (const auto& t : trials) {
        if (t.sr_bbox) {
            if (auto r = region_rank(t.regions, *t.sr_bbox)) {
                ++s_hits;
                s_rank_sum += *r;
            }
        }
        if (t.aoi) {
            if (auto r = region_rank(t.regions, *t.aoi)) {
                ++h_hits;
                h_rank_sum += *r;
            }
        }
    }
    const double n = static_cast<double>(trials.size());
    RankStats out;
    out.n_s_pct = 100.0 * static_cast<double>(s_hits) / n;
    out.n_h_pct = 100.0 * static_cast<double>(h_hits) / n;
    if (s_hits > 0) out.mu_s = s_rank_sum / static_cast<double>(s_hits);
    if (h_hits > 0) out.mu_h = h_rank_sum / static_cast<double>(h_hits);
    return out;
}

MetricsRow metrics_row(const std::string& participant, const TrialMeta& meta,
                       const std::vector<Fixation>& fixations,
                       const std::vector<Region>& regions) {
    const auto summary = trial_summary(fixations, regions, meta);
    const double onset = meta.highlight_onset_ms.value_or(0.0);
    MetricsRow row;
    row.participant = participant;
    row.stimulus = meta.stimulus_id;
    row.ht = meta.ht;
    row.cl = meta.cl;
    row.n_fix = summary.n_fix;
    row.avg_fix_dur_ms = summary.avg_fix_dur_ms;
    row.n_regions = summary.n_salient_regions;
    row.aoi_hit = aoi_hit(fixations, meta.aoi, onset);
    row.ttff_ms = time_to_first_fixation(fixations, meta.aoi, onset);
    row.dflf_px = distance_from_last_fixation(fixations, meta.aoi, onset);
    return row;
}

std::string metrics_csv_header() {
    return "participant,stimulus,ht,cl,n_fix,avg_fix_dur_ms,n_regions,aoi_hit,ttff_ms,dflf_px\n";
}

std::string format_metrics_row(const MetricsRow& r) {
    std::string out = r.participant + ',' + r.stimulus + ',' + std::string(to_string(r.ht)) + ',' +
                      std::string(to_string(r.cl)) + ',' + std::to_string(r.n_fix) + ',' +
                      textio::format_optional(r.avg_fix_dur_ms) + ',' +
                      std::to_string(r.n_regions) + ',' + (r.aoi_hit ? "1" : "0") + ',' +
                      textio::format_optional(r.ttff_ms) + ',' +
                      textio::format_optional(r.dflf_px) + '\n';
    return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
    auto lines = textio::split(text, '\n');
    while (!lines.empty() && textio::trim(lines.back()).empty()) lines.pop_back();
    std::string header = metrics_csv_header();
    header.pop_back();
    if (lines.empty() || textio::trim(lines[0]) != header)
        throw FormatError("unexpected metrics CSV header");
    std::vector<MetricsRow> rows;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto c = textio::split(textio::trim(lines[i]));
        if (c.size() != 10) throw FormatError("metrics CSV row " + std::to_string(i));
        MetricsRow r;
        r.participant = std::string(c[0]);
        r.stimulus = std::string(c[1]);
        r.ht = parse_highlight(c[2]);
        r.cl = parse_load(c[3]);
        const auto n_fix = textio::parse_int(c[4]);
        const auto n_reg = textio::parse_int(c[6]);
        if (!n_fix || !n_reg || (c[7] != "0" && c[7] != "1"))
            throw FormatError("metrics CSV row " + std::to_string(i));
        r.n_fix = static_cast<std::size_t>(*n_fix);
        r.avg_fix_dur_ms = textio::parse_double(c[5]);
        r.n_regions = static_cast<std::size_t>(*n_reg);
        r.aoi_hit = c[7] == "1";
        r.ttff_ms = textio::parse_double(c[8]);
        r.dflf_px = textio::parse_double(c[9]);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace gazekit
