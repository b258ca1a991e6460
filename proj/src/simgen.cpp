#include "gazekit/simgen.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "gazekit/config.hpp"
#include "gazekit/error.hpp"
#include "gazekit/preprocess.hpp"
#include "gazekit/rng.hpp"
#include "gazekit/textio.hpp"

namespace fs = std::filesystem;

namespace gazekit::synth {

namespace {

constexpr double kSpikeDeg = 3.0;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    // splitmix64 finaliser
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

void TraceScript::validate() const {
    if (fixations.empty()) throw ValidationError("trace script has no fixations");
    for (const auto& f : fixations)
        if (!(f.duration_ms > 0)) throw ValidationError("fixation durations must be positive");
    if (!(saccade_ms > 0)) throw ValidationError("saccade duration must be positive");
    if (!(dropout_rate >= 0 && dropout_rate < 1))
        throw ValidationError("dropout rate must lie in [0, 1)");
    if (noise_sigma_deg < 0) throw ValidationError("noise must be non-negative");
    if (outlier_count < 0) throw ValidationError("outlier count must be non-negative");
}

SynthTrace synth_trace(const TraceScript& script, const ScreenGeometry& g, double rate_hz) {
    script.validate();
    if (!(rate_hz > 0)) throw ValidationError("sampling rate must be positive");
    const double ppd = px_per_degree(g);
    const double noise_px = script.noise_sigma_deg * ppd;
    const auto period_us = static_cast<std::int64_t>(std::llround(1e6 / rate_hz));
    const double period_ms = static_cast<double>(period_us) / 1000.0;

    // Segment boundaries in ms.
    const std::size_t k = script.fixations.size();
    std::vector<double> fix_start(k);
    double cursor = 0;
    for (std::size_t i = 0; i < k; ++i) {
        fix_start[i] = cursor;
        cursor += script.fixations[i].duration_ms;
        if (i + 1 < k) cursor += script.saccade_ms;
    }
    const double total_ms = cursor;

    SynthTrace out;
    out.trace.rate_hz = 1e6 / static_cast<double>(period_us);
    Rng rng(script.seed);

    std::size_t seg = 0;
    for (std::int64_t t_us = 0; static_cast<double>(t_us) / 1000.0 < total_ms; t_us += period_us) {
        const double t = static_cast<double>(t_us) / 1000.0;
        while (seg + 1 < k && t >= fix_start[seg + 1]) ++seg;
        const auto& f = script.fixations[seg];
        const double fix_end = fix_start[seg] + f.duration_ms;
        double x = f.x_px, y = f.y_px;
        if (t >= fix_end && seg + 1 < k) {
            const auto& nf = script.fixations[seg + 1];
            const double frac = (t - fix_end) / script.saccade_ms;
            x += frac * (nf.x_px - f.x_px);
            y += frac * (nf.y_px - f.y_px);
        }
        GazeSample s;
        s.t_us = t_us;
        const double nx = rng.normal();
        const double ny = rng.normal();
        const bool dropped = rng.uniform() < script.dropout_rate;
        if (script.pupil_mm) {
            s.pupil_left_mm = *script.pupil_mm + 0.05 * rng.normal();
            s.pupil_right_mm = *script.pupil_mm + 0.05 * rng.normal();
        }
        if (!dropped) {
            s.x_px = x + noise_px * nx;
            s.y_px = y + noise_px * ny;
            s.valid = true;
        }
        out.trace.samples.push_back(s);
    }

    const auto& samples = out.trace.samples;
    for (std::size_t i = 0; i < k; ++i) {
        ScriptedFixation sf;
        sf.cx_px = script.fixations[i].x_px;
        sf.cy_px = script.fixations[i].y_px;
        sf.onset_ms = fix_start[i];
        sf.duration_ms = script.fixations[i].duration_ms;
        const double end = fix_start[i] + sf.duration_ms;
        sf.first_sample = static_cast<std::size_t>(std::ceil(fix_start[i] / period_ms - 1e-9));
        std::size_t last = sf.first_sample;
        while (last + 1 < samples.size() &&
               static_cast<double>(samples[last + 1].t_us) / 1000.0 < end)
            ++last;
        sf.last_sample = std::min(last, samples.size() - 1);
        out.truth.push_back(sf);
    }

    // Spikes: inside a fixation, two samples clear of its edges, with valid
    // neighbours, and not next to another spike.
    auto& mut = out.trace.samples;
    const double spike_px = kSpikeDeg * ppd;
    for (int placed = 0, attempts = 0; placed < script.outlier_count && attempts < 10000;
         ++attempts) {
        const auto& sf = out.truth[rng.below(k)];
        if (sf.last_sample < sf.first_sample + 4) continue;
        const std::size_t span = sf.last_sample - sf.first_sample - 3;
        const std::size_t i = sf.first_sample + 2 + rng.below(span);
        if (!mut[i - 1].valid || !mut[i].valid || !mut[i + 1].valid) continue;
        bool crowded = false;
        for (auto o : out.outlier_samples)
            if (o + 2 >= i && i + 2 >= o) crowded = true;
        if (crowded) continue;
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        if (rng.uniform() < 0.5)
            *mut[i].x_px += sign * spike_px;
        else
            *mut[i].y_px += sign * spike_px;
        out.outlier_samples.push_back(i);
        ++placed;
    }
    std::sort(out.outlier_samples.begin(), out.outlier_samples.end());
    return out;
}

StimulusPair synth_stimulus_pair(int w, int h, const Rect& aoi, std::uint64_t seed) {
    if (w <= 0 || h <= 0) throw ValidationError("stimulus dimensions must be positive");
    if (aoi.w <= 0 || aoi.h <= 0 || aoi.x < 0 || aoi.y < 0 || aoi.x + aoi.w > w ||
        aoi.y + aoi.h > h)
        throw ValidationError("AOI must lie inside the stimulus");
    Rng rng(seed);

    StimulusPair pair;
    Image& pre = pair.pre_frame;
    pre.w = w;
    pre.h = h;
    pre.channels = 3;
    pre.data.assign(static_cast<std::size_t>(w) * h * 3, 0);

    const double base[3] = {rng.uniform(30, 90), rng.uniform(30, 90), rng.uniform(60, 120)};
    struct Blob {
        double x, y, r, col[3];
    };
    std::vector<Blob> blobs(5);
    for (auto& b : blobs) {
        b.x = rng.uniform(0, w);
        b.y = rng.uniform(0, h);
        b.r = rng.uniform(0.05, 0.2) * std::min(w, h);
        // Reds, greens and blues; never the yellow used by the highlight.
        b.col[0] = rng.uniform(0, 200);
        b.col[1] = rng.uniform(0, 120);
        b.col[2] = rng.uniform(80, 255);
    }
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double c[3] = {base[0], base[1], base[2]};
            for (const auto& b : blobs) {
                const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
                const double a = std::exp(-d2 / (2 * b.r * b.r));
                for (int ch = 0; ch < 3; ++ch) c[ch] = (1 - a) * c[ch] + a * b.col[ch];
            }
            for (int ch = 0; ch < 3; ++ch) {
                const double v = c[ch] + rng.normal(0, 6);
                pre.at(x, y, ch) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }

    pair.post_frame = pre;
    for (int y = aoi.y; y < aoi.y + aoi.h; ++y) {
        for (int x = aoi.x; x < aoi.x + aoi.w; ++x) {
            pair.post_frame.at(x, y, 0) = 255;
            pair.post_frame.at(x, y, 1) = 255;
            pair.post_frame.at(x, y, 2) = 0;
        }
    }

    pair.gt_map = SaliencyMap(w, h);
    const double cx = aoi.x + (aoi.w - 1) / 2.0;
    const double cy = aoi.y + (aoi.h - 1) / 2.0;
    const double sigma = std::max(1.0, std::max(aoi.w, aoi.h) / 2.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            pair.gt_map.at(x, y) = 0.02 + std::exp(-d2 / (2 * sigma * sigma));
        }
    }

    // Fixations drawn from the ground-truth distribution by inverse CDF.
    pair.fix_set = FixationSet(w, h);
    std::vector<double> cdf(pair.gt_map.size());
    double acc = 0;
    for (std::size_t i = 0; i < cdf.size(); ++i) {
        acc += pair.gt_map.values[i];
        cdf[i] = acc;
    }
    for (int n = 0; n < kPairFixations; ++n) {
        const double u = rng.uniform() * acc;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const auto idx = static_cast<std::size_t>(
            std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
        pair.fix_set.fixated[idx] = 1;
    }
    return pair;
}

std::vector<dyn::TrainSample> synth_training_set(std::size_t n, int res, std::uint64_t seed,
                                                 int channels) {
    if (res < 8) throw ValidationError("training resolution must be at least 8");
    if (channels != 3 && channels != 6) throw ValidationError("channels must be 3 or 6");
    std::vector<dyn::TrainSample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, 3000 + i));
        const int aw = res / 5 + static_cast<int>(rng.below(static_cast<std::uint64_t>(res / 6 + 1)));
        const int ah = res / 5 + static_cast<int>(rng.below(static_cast<std::uint64_t>(res / 6 + 1)));
        const Rect aoi{static_cast<int>(rng.below(static_cast<std::uint64_t>(res - aw + 1))),
                       static_cast<int>(rng.below(static_cast<std::uint64_t>(res - ah + 1))), aw, ah};
        auto pair = synth_stimulus_pair(res, res, aoi, mix_seed(seed, 4000 + i));
        const auto post = dyn::to_tensor(pair.post_frame);
        dyn::TrainSample s;
        s.input = channels == 6 ? dyn::assemble_pair(dyn::to_tensor(pair.pre_frame), post) : post;
        s.gt = std::move(pair.gt_map);
        s.fix = std::move(pair.fix_set);
        out.push_back(std::move(s));
    }
    return out;
}

namespace {

Rect random_rect(Rng& rng, int w, int h, int rw, int rh) {
    return Rect{static_cast<int>(rng.below(static_cast<std::uint64_t>(w - rw))),
                static_cast<int>(rng.below(static_cast<std::uint64_t>(h - rh))), rw, rh};
}

nlohmann::ordered_json rect_json(const Rect& r) {
    return {{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}};
}

std::string two_digits(std::size_t v) {
    std::string s = std::to_string(v);
    return s.size() < 2 ? "0" + s : s;
}

}  // namespace

DatasetManifest synth_dataset(std::size_t n_trials, const fs::path& root, std::uint64_t seed,
                              const DatasetOptions& opts) {
    opts.geometry.validate();
    const int w = static_cast<int>(opts.geometry.screen_w_px);
    const int h = static_cast<int>(opts.geometry.screen_h_px);
    const double ppd = px_per_degree(opts.geometry);

    std::error_code ec;
    for (const char* sub : {"stimuli", "trials", "gaze"}) {
        fs::create_directories(root / sub, ec);
        if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
    }

    DatasetManifest manifest;
    manifest.seed = seed;
    manifest.geometry = opts.geometry;

    // Stimuli: one per grid cell in use.
    const std::size_t n_stimuli = std::min<std::size_t>(n_trials, 9);
    std::vector<Rect> aois(n_stimuli), hotspots(n_stimuli);
    const int rw = std::max(8, w / 5), rh = std::max(8, h / 6);
    for (std::size_t s = 0; s < n_stimuli; ++s) {
        Rng rng(mix_seed(seed, 1000 + s));
        aois[s] = random_rect(rng, w, h, rw, rh);
        do {
            hotspots[s] = random_rect(rng, w, h, rw, rh);
        } while (intersection_area(Rect{aois[s].x - rw, aois[s].y - rh, 3 * rw, 3 * rh},
                                   hotspots[s]) > 0);
        const auto ht = static_cast<Highlight>(s / 3);
        const auto pair = synth_stimulus_pair(w, h, aois[s], mix_seed(seed, 2000 + s));
        write_pnm(root / "stimuli" / ("s" + two_digits(s) + ".ppm"),
                  ht == Highlight::Absent ? pair.pre_frame : pair.post_frame);
    }

    for (std::size_t k = 0; k < n_trials; ++k) {
        const std::size_t cell = k % 9;
        TrialTruth truth;
        truth.participant = "p" + two_digits(k / 9 + 1);
        truth.stimulus_id = "s" + two_digits(cell);
        truth.trial_id = truth.participant + "_" + truth.stimulus_id;
        truth.ht = static_cast<Highlight>(cell / 3);
        truth.cl = static_cast<CognitiveLoad>(cell % 3);
        truth.aoi = aois[cell];
        truth.salient_region = hotspots[cell];

        TrialMeta meta;
        meta.stimulus_id = truth.stimulus_id;
        meta.ht = truth.ht;
        meta.cl = truth.cl;
        meta.aoi = truth.aoi;
        meta.stim_w = w;
        meta.stim_h = h;
        meta.display_ms = kDefaultDisplayMs;
        if (meta.ht == Highlight::Static) meta.highlight_onset_ms = 0.0;
        if (meta.ht == Highlight::Dynamic) meta.highlight_onset_ms = kDynamicOnsetMs;

        // Scanpath: hotspot every third fixation, the AOI once after the
        // highlight is visible, random targets otherwise.
        Rng rng(mix_seed(seed, k));
        TraceScript script;
        script.seed = mix_seed(seed, 500000 + k);
        script.noise_sigma_deg = opts.noise_sigma_deg;
        script.dropout_rate = opts.dropout_rate;
        script.outlier_count = opts.outliers_per_trial;
        script.pupil_mm = 3.0 + 0.3 * static_cast<double>(cell % 3) + 0.1 * rng.normal();
        const double margin = 2.0 * ppd;
        auto centre_of = [&](const Rect& r) {
            return std::pair{r.x + r.w / 2.0 + rng.uniform(-0.15, 0.15) * r.w,
                             r.y + r.h / 2.0 + rng.uniform(-0.15, 0.15) * r.h};
        };
        bool aoi_done = meta.ht == Highlight::Absent;
        double t = 0;
        for (std::size_t j = 0; t < meta.display_ms; ++j) {
            double dur = rng.uniform(250, 500);
            const double remaining = meta.display_ms - t;
            if (remaining - dur < 150) dur = remaining;
            std::pair<double, double> pos;
            const bool aoi_now = !aoi_done && ((meta.ht == Highlight::Static && j == 2) ||
                                               (meta.ht == Highlight::Dynamic && t >= 3100));
            if (aoi_now) {
                pos = centre_of(meta.aoi);
                aoi_done = true;
            } else if (j % 3 == 1) {
                pos = centre_of(truth.salient_region);
            } else {
                pos = {rng.uniform(margin, w - margin), rng.uniform(margin, h - margin)};
            }
            script.fixations.push_back({pos.first, pos.second, dur});
            t += dur;
            if (t < meta.display_ms) {
                if (meta.display_ms - t <= script.saccade_ms + 100) {
                    script.fixations.back().duration_ms += meta.display_ms - t;
                    break;
                }
                t += script.saccade_ms;
            }
        }

        const auto synth = synth_trace(script, opts.geometry);
        truth.fixations = synth.truth;
        save_gaze_csv(root / "gaze" / (truth.trial_id + ".csv"), synth.trace);
        textio::write_file(root / "trials" / (truth.trial_id + ".json"), format_trial_meta(meta));
        manifest.trials.push_back(std::move(truth));
    }

    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["geometry"] = {{"screen_w_px", opts.geometry.screen_w_px},
                     {"screen_h_px", opts.geometry.screen_h_px},
                     {"screen_w_cm", opts.geometry.screen_w_cm},
                     {"screen_h_cm", opts.geometry.screen_h_cm},
                     {"viewing_distance_cm", opts.geometry.viewing_distance_cm}};
    j["trials"] = nlohmann::ordered_json::array();
    for (const auto& t : manifest.trials) {
        nlohmann::ordered_json jt;
        jt["trial_id"] = t.trial_id;
        jt["participant"] = t.participant;
        jt["stimulus_id"] = t.stimulus_id;
        jt["ht"] = std::string(to_string(t.ht));
        jt["cl"] = std::string(to_string(t.cl));
        jt["aoi"] = rect_json(t.aoi);
        jt["salient_region"] = rect_json(t.salient_region);
        jt["fixations"] = nlohmann::ordered_json::array();
        for (const auto& f : t.fixations) {
            jt["fixations"].push_back({{"cx_px", f.cx_px},
                                       {"cy_px", f.cy_px},
                                       {"onset_ms", f.onset_ms},
                                       {"duration_ms", f.duration_ms}});
        }
        j["trials"].push_back(std::move(jt));
    }
    textio::write_file(root / "manifest.json", j.dump(2) + "\n");

    // Spatial map parameters scale with the screen relative to the 2560 px apparatus.
    PipelineConfig cfg;
    cfg.geometry = opts.geometry;
    const double scale = opts.geometry.screen_w_px / 2560.0;
    cfg.salmap.sigma_px = 35.0 * scale;
    cfg.salmap.min_area = std::max(1, static_cast<int>(std::lround(200.0 * scale * scale)));
    textio::write_file(root / "config.json", format_config(cfg));
    return manifest;
}

}  // namespace gazekit::synth
