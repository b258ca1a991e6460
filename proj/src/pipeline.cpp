#include "gazekit/pipeline.hpp"

#include <atomic>
#include <exception>
#include <thread>

#include <json.hpp>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace fs = std::filesystem;

namespace gazekit::pipeline {

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
    std::vector<std::exception_ptr> errors(n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

TrialData load_trial(const TrialRef& ref) {
    TrialData t;
    t.ref = ref;
    t.meta = load_trial_meta(ref.meta_path);
    t.raw = load_gaze_csv(ref.gaze_path);
    return t;
}

PreprocessResult run_preprocess(const TrialData& t, const PipelineConfig& cfg) {
    return preprocess_trace(t.raw, cfg.geometry, cfg.woo);
}

FixationStage run_fixations(const TrialData& t, const GazeTrace& smoothed,
                            const PipelineConfig& cfg) {
    const double ppd = px_per_degree(cfg.geometry);
    const auto v = inter_sample_velocity(smoothed, ppd);
    FixationStage st{detect_fixations(smoothed, v, cfg.fixation, ppd), Keep{}};
    st.verdict = quality_gate(smoothed, st.fixations, cfg.quality, t.meta.display_ms);
    return st;
}

SaliencyMap trial_map(const TrialMeta& meta, const std::vector<Fixation>& fixations,
                      const PipelineConfig& cfg) {
    const auto pts = weighted_points(fixations, cfg.salmap.weighting);
    return fixation_map(pts, meta.stim_w, meta.stim_h, cfg.salmap.sigma_px);
}

namespace {

struct FixRecord {
    TrialRef ref;
    TrialMeta meta;
    std::vector<Fixation> fixations;
    bool kept = true;
    std::string verdict = "keep";
    double data_loss = 0;
    double gts = 0;
};

std::vector<TrialRef> trials_of(const StageOptions& o) {
    if (!fs::is_directory(o.dataset)) throw IoError("dataset not found: " + o.dataset.string());
    return list_trials(o.dataset);
}

fs::path write_out(const fs::path& path, std::string_view content) {
    textio::write_file(path, content);
    return path;
}

std::vector<FixRecord> compute_fixations(const StageOptions& o, const PipelineConfig& cfg,
                                         bool from_preprocessed) {
    const auto refs = trials_of(o);
    std::vector<FixRecord> recs(refs.size());
    parallel_for(refs.size(), o.jobs, [&](std::size_t i) {
        TrialData t;
        t.ref = refs[i];
        t.meta = load_trial_meta(refs[i].meta_path);
        GazeTrace smoothed;
        if (from_preprocessed) {
            smoothed = load_gaze_csv(*o.from / "preprocessed" / (refs[i].trial_id() + ".csv"));
        } else {
            t.raw = load_gaze_csv(refs[i].gaze_path);
            smoothed = run_preprocess(t, cfg).smoothed;
        }
        auto st = run_fixations(t, smoothed, cfg);
        FixRecord& r = recs[i];
        r.ref = t.ref;
        r.meta = t.meta;
        r.fixations = std::move(st.fixations);
        r.kept = kept(st.verdict);
        r.verdict = describe(st.verdict);
        r.data_loss = smoothed.invalid_fraction();
        r.gts = gaze_time_on_screen(r.fixations, t.meta.display_ms);
    });
    return recs;
}

std::string quality_csv(const std::vector<FixRecord>& recs) {
    std::string out = "trial_id,kept,data_loss,gts,verdict\n";
    for (const auto& r : recs) {
        out += r.ref.trial_id() + ',' + (r.kept ? "1" : "0") + ',' +
               textio::format_double(r.data_loss) + ',' + textio::format_double(r.gts) + ',' +
               r.verdict + '\n';
    }
    return out;
}

// Fixation records either recomputed or read from a previous fixations stage.
std::vector<FixRecord> fixation_records(const StageOptions& o, const PipelineConfig& cfg) {
    if (!o.from) return compute_fixations(o, cfg, false);
    const auto refs = trials_of(o);
    const fs::path dir = *o.from / "fixations";
    std::map<std::string, bool> kept_by_id;
    const auto lines = textio::read_lines(dir / "quality.csv");
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty()) continue;
        const auto cells = textio::split(lines[i]);
        if (cells.size() != 5 || (cells[1] != "0" && cells[1] != "1"))
            throw FormatError("quality.csv row " + std::to_string(i) + " is malformed");
        kept_by_id[std::string(cells[0])] = cells[1] == "1";
    }
    std::vector<FixRecord> recs(refs.size());
    parallel_for(refs.size(), o.jobs, [&](std::size_t i) {
        FixRecord& r = recs[i];
        r.ref = refs[i];
        r.meta = load_trial_meta(refs[i].meta_path);
        const auto it = kept_by_id.find(refs[i].trial_id());
        if (it == kept_by_id.end())
            throw ValidationError("no quality verdict for trial " + refs[i].trial_id());
        r.kept = it->second;
        r.fixations =
            parse_fixations_csv(textio::read_file(dir / (refs[i].trial_id() + ".csv")));
    });
    return recs;
}

struct StimulusGroup {
    std::string stimulus_id;
    TrialMeta meta;
    SaliencyMap map;
};

// Per-stimulus sum of the kept trials' maps, ordered by stimulus id.
std::vector<StimulusGroup> group_maps(const std::vector<FixRecord>& recs,
                                      const std::vector<SaliencyMap>& maps) {
    std::map<std::string, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < recs.size(); ++i)
        if (recs[i].kept) members[recs[i].ref.stimulus_id].push_back(i);
    std::vector<StimulusGroup> out;
    for (const auto& [stim, idx] : members) {
        std::vector<SaliencyMap> ms;
        for (auto i : idx) ms.push_back(maps[i]);
        out.push_back({stim, recs[idx.front()].meta, aggregate_group(ms)});
    }
    return out;
}

std::vector<SaliencyMap> trial_maps(const std::vector<FixRecord>& recs, const StageOptions& o,
                                    const PipelineConfig& cfg) {
    std::vector<SaliencyMap> maps(recs.size());
    parallel_for(recs.size(), o.jobs, [&](std::size_t i) {
        if (recs[i].kept) maps[i] = trial_map(recs[i].meta, recs[i].fixations, cfg);
    });
    return maps;
}

std::optional<Rect> highlighted(const TrialMeta& meta) {
    if (meta.ht == Highlight::Absent) return std::nullopt;
    return meta.aoi;
}

std::string group_id(const std::string& stimulus) { return "group_" + stimulus; }

}  // namespace

std::vector<fs::path> stage_preprocess(const StageOptions& o, const PipelineConfig& cfg) {
    cfg.validate();
    const auto refs = trials_of(o);
    std::vector<fs::path> written(refs.size());
    parallel_for(refs.size(), o.jobs, [&](std::size_t i) {
        const auto t = load_trial(refs[i]);
        const auto res = run_preprocess(t, cfg);
        written[i] = write_out(o.out / "preprocessed" / (refs[i].trial_id() + ".csv"),
                               format_gaze_csv(res.smoothed));
    });
    return written;
}

std::vector<fs::path> stage_fixations(const StageOptions& o, const PipelineConfig& cfg) {
    cfg.validate();
    const auto recs = compute_fixations(o, cfg, o.from.has_value());
    std::vector<fs::path> written;
    for (const auto& r : recs) {
        written.push_back(write_out(o.out / "fixations" / (r.ref.trial_id() + ".csv"),
                                    format_fixations_csv(r.fixations)));
    }
    written.push_back(write_out(o.out / "fixations" / "quality.csv", quality_csv(recs)));
    return written;
}

std::vector<fs::path> stage_heatmap(const StageOptions& o, const PipelineConfig& cfg) {
    cfg.validate();
    const auto recs = fixation_records(o, cfg);
    const auto maps = trial_maps(recs, o, cfg);
    std::vector<fs::path> written;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (!recs[i].kept) continue;
        const auto path = o.out / "heatmaps" / (recs[i].ref.trial_id() + ".pgm");
        save_map_pgm(path, maps[i], cfg.salmap);
        written.push_back(path);
        written.push_back(fs::path(path).replace_extension(".json"));
    }
    for (const auto& g : group_maps(recs, maps)) {
        const auto path = o.out / "heatmaps" / (group_id(g.stimulus_id) + ".pgm");
        save_map_pgm(path, g.map, cfg.salmap);
        written.push_back(path);
        written.push_back(fs::path(path).replace_extension(".json"));
    }
    return written;
}

std::vector<fs::path> stage_regions(const StageOptions& o, const PipelineConfig& cfg) {
    cfg.validate();
    const auto recs = fixation_records(o, cfg);
    const auto maps = trial_maps(recs, o, cfg);
    std::vector<fs::path> written;
    const double rel = cfg.salmap.rel_threshold;
    const int min_area = cfg.salmap.min_area;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (!recs[i].kept) continue;
        written.push_back(write_out(o.out / "regions" / (recs[i].ref.trial_id() + ".csv"),
                                    format_regions_csv(extract_regions(maps[i], rel, min_area))));
    }
    for (const auto& g : group_maps(recs, maps)) {
        written.push_back(write_out(o.out / "regions" / (group_id(g.stimulus_id) + ".csv"),
                                    format_regions_csv(extract_regions(g.map, rel, min_area))));
    }
    return written;
}

std::vector<fs::path> stage_metrics(const StageOptions& o, const PipelineConfig& cfg) {
    cfg.validate();
    const auto recs = fixation_records(o, cfg);
    const double rel = cfg.salmap.rel_threshold;
    const int min_area = cfg.salmap.min_area;

    std::vector<std::vector<Region>> regions(recs.size());
    std::map<std::string, std::vector<Region>> group_regions;
    if (o.from) {
        const fs::path dir = *o.from / "regions";
        parallel_for(recs.size(), o.jobs, [&](std::size_t i) {
            if (recs[i].kept)
                regions[i] = parse_regions_csv(
                    textio::read_file(dir / (recs[i].ref.trial_id() + ".csv")));
        });
        for (const auto& r : recs) {
            if (r.kept && !group_regions.count(r.ref.stimulus_id))
                group_regions[r.ref.stimulus_id] = parse_regions_csv(
                    textio::read_file(dir / (group_id(r.ref.stimulus_id) + ".csv")));
        }
    } else {
        const auto maps = trial_maps(recs, o, cfg);
        parallel_for(recs.size(), o.jobs, [&](std::size_t i) {
            if (recs[i].kept) regions[i] = extract_regions(maps[i], rel, min_area);
        });
        for (const auto& g : group_maps(recs, maps))
            group_regions[g.stimulus_id] = extract_regions(g.map, rel, min_area);
    }

    std::string csv = metrics_csv_header();
    std::vector<RankedTrial> ranked;
    std::map<Highlight, std::vector<RankedTrial>> ranked_by_ht;
    std::size_t dropped = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        if (!r.kept) {
            ++dropped;
            continue;
        }
        csv += format_metrics_row(metrics_row(r.ref.participant, r.meta, r.fixations, regions[i]));
        RankedTrial rt;
        rt.regions = regions[i];
        rt.aoi = highlighted(r.meta);
        if (const auto sr = most_salient_region(group_regions[r.ref.stimulus_id], rt.aoi))
            rt.sr_bbox = sr->bbox;
        ranked.push_back(rt);
        ranked_by_ht[r.meta.ht].push_back(std::move(rt));
    }

    std::vector<fs::path> written;
    written.push_back(write_out(o.out / "metrics.csv", csv));

    auto stats_json = [](const RankStats& s, std::size_t n) {
        nlohmann::ordered_json j;
        j["trials"] = n;
        j["n_s_pct"] = s.n_s_pct;
        j["n_h_pct"] = s.n_h_pct;
        j["mu_s"] = s.mu_s ? nlohmann::ordered_json(*s.mu_s) : nlohmann::ordered_json();
        j["mu_h"] = s.mu_h ? nlohmann::ordered_json(*s.mu_h) : nlohmann::ordered_json();
        return j;
    };
    nlohmann::ordered_json j;
    j["dropped_trials"] = dropped;
    if (!ranked.empty()) {
        j["overall"] = stats_json(region_rank_stats(ranked), ranked.size());
        for (const auto& [ht, trials] : ranked_by_ht)
            j["by_ht"][std::string(to_string(ht))] = stats_json(region_rank_stats(trials), trials.size());
    }
    written.push_back(write_out(o.out / "rank_stats.json", j.dump(2) + "\n"));
    return written;
}

}  // namespace gazekit::pipeline
