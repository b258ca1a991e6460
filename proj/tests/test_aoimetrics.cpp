#include <doctest.h>

#include <cmath>
#include <vector>

#include "gazekit/aoimetrics.hpp"
#include "gazekit/error.hpp"
#include "gazekit/rng.hpp"
#include "gazekit/simgen.hpp"

using namespace gazekit;

namespace {

Fixation fix(double x, double y, double onset, double dur) {
    Fixation f;
    f.cx_px = x;
    f.cy_px = y;
    f.onset_ms = onset;
    f.duration_ms = dur;
    return f;
}

const Rect kAoi{100, 100, 200, 100};

Region region(const Rect& bbox, double peak) {
    Region r;
    r.bbox = bbox;
    r.area_px = bbox.area();
    r.peak = peak;
    r.mass = peak * 10;
    return r;
}

}  // namespace

TEST_CASE("hit after dynamic onset counts") {
    const std::vector<Fixation> f{fix(150, 150, 3500, 300)};
    CHECK(aoi_hit(f, kAoi, 3000));
    CHECK(*time_to_first_fixation(f, kAoi, 3000) == 500);
}

TEST_CASE("look that ends before the onset does not count") {
    const std::vector<Fixation> f{fix(150, 150, 2600, 300)};
    CHECK_FALSE(aoi_hit(f, kAoi, 3000));
    CHECK_FALSE(time_to_first_fixation(f, kAoi, 3000).has_value());
    CHECK(aoi_hit(f, kAoi, 0));
    CHECK(*time_to_first_fixation(f, kAoi, 0) == 2600);
}

TEST_CASE("half-open AOI boundary") {
    CHECK_FALSE(aoi_hit({fix(300, 150, 0, 200)}, kAoi, 0));
    CHECK(aoi_hit({fix(299.9, 150, 0, 200)}, kAoi, 0));
    CHECK(aoi_hit({fix(100, 100, 0, 200)}, kAoi, 0));
    CHECK_FALSE(aoi_hit({fix(99, 150, 0, 200)}, kAoi, 0));
}

TEST_CASE("straddling fixation is a hit with zero TtFF") {
    const std::vector<Fixation> f{fix(150, 150, 2800, 400)};
    CHECK(aoi_hit(f, kAoi, 3000));
    CHECK(*time_to_first_fixation(f, kAoi, 3000) == 0);
}

TEST_CASE("time to first fixation") {
    const std::vector<Fixation> f{fix(10, 10, 0, 300), fix(150, 150, 3800, 200)};
    CHECK(*time_to_first_fixation(f, kAoi, 3000) == 800);
    const std::vector<Fixation> s{fix(10, 10, 0, 300), fix(150, 150, 412, 200)};
    CHECK(*time_to_first_fixation(s, kAoi, 0) == 412);
    CHECK_FALSE(time_to_first_fixation({fix(10, 10, 0, 300)}, kAoi, 0).has_value());
    CHECK_THROWS_AS((void)aoi_hit(f, kAoi, -1), PreconditionError);
}

TEST_CASE("distance from last fixation") {
    const std::vector<Fixation> f{fix(50, 50, 0, 300), fix(250, 150, 400, 300)};
    const Rect big{200, 100, 300, 500};
    const std::vector<Fixation> g{fix(100, 100, 0, 300), fix(400, 500, 400, 300)};
    CHECK(*distance_from_last_fixation(g, big, 0) == doctest::Approx(500.0));
    CHECK_FALSE(distance_from_last_fixation({fix(150, 150, 0, 300)}, kAoi, 0).has_value());
    CHECK(*distance_from_last_fixation(f, kAoi, 0) == doctest::Approx(std::hypot(200, 100)));
}

TEST_CASE("hit and TtFF agree, TtFF is never negative, shrinking the AOI never creates a hit") {
    Rng rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Fixation> f;
        double t = 0;
        for (int k = 0; k < 6; ++k) {
            const double d = rng.uniform(80, 700);
            const double x = rng.uniform(0, 640);
            const double y = rng.uniform(0, 360);
            f.push_back(fix(x, y, t, d));
            t += d + 30;
        }
        const double onset = trial % 2 ? 3000.0 : 0.0;
        const Rect aoi{static_cast<int>(rng.below(400)), static_cast<int>(rng.below(200)), 150, 120};
        const Rect inner{aoi.x + 20, aoi.y + 20, 100, 60};
        const bool hit = aoi_hit(f, aoi, onset);
        const auto ttff = time_to_first_fixation(f, aoi, onset);
        CHECK(hit == ttff.has_value());
        if (ttff) CHECK(*ttff >= 0);
        if (!hit) CHECK_FALSE(aoi_hit(f, inner, onset));
        if (onset == 3000.0) {
            std::vector<Fixation> early;
            for (const auto& x : f)
                if (x.end_ms() < 3000) early.push_back(x);
            CHECK_FALSE(aoi_hit(early, aoi, onset));
        }
    }
}

TEST_CASE("any-sample hit mode") {
    GazeTrace t;
    for (int i = 0; i < 10; ++i)
        t.samples.push_back({i * 4000, i < 5 ? 310.0 : 295.0, 150.0, {}, {}, true});
    Fixation f = fix(303, 150, 0, 40);
    f.first_sample = 0;
    f.last_sample = 9;
    CHECK_FALSE(aoi_hit({f}, kAoi, 0));
    CHECK(aoi_hit({f}, kAoi, 0, {HitMode::AnySample, &t}));
    CHECK_THROWS_AS((void)aoi_hit({f}, kAoi, 0, {HitMode::AnySample, nullptr}), PreconditionError);
}

TEST_CASE("trial summary") {
    TrialMeta m;
    m.ht = Highlight::Static;
    const auto s = trial_summary({fix(0, 0, 0, 100), fix(0, 0, 200, 200), fix(0, 0, 500, 300)}, {}, m);
    CHECK(s.n_fix == 3);
    CHECK(*s.avg_fix_dur_ms == 200);
    CHECK(s.ht == Highlight::Static);
    const auto e = trial_summary({}, {region({0, 0, 5, 5}, 1)}, m);
    CHECK(e.n_fix == 0);
    CHECK_FALSE(e.avg_fix_dur_ms.has_value());
    CHECK(e.n_salient_regions == 1);
}

TEST_CASE("simulated trial: fixation count and scripted DfLF") {
    const ScreenGeometry g{};
    const double ppd = px_per_degree(g);
    synth::TraceScript s;
    for (int k = 0; k < 12; ++k)
        s.fixations.push_back({300.0 + 150 * (k % 4), 300.0 + 220 * (k / 4), 250});
    s.seed = 10;
    const auto st = synth::synth_trace(s, g);
    const auto pre = preprocess_trace(st.trace, g, WooParams{});
    const auto fx = detect_fixations(pre.smoothed, pre.velocity, FixParams{}, ppd);
    CHECK(fx.size() == 12);
    const Rect aoi{560, 480, 80, 80};  // holds fixation 5 at (450+150, 520)
    const double scripted = std::hypot(600 - 450.0, 520 - 520.0);
    const auto d = distance_from_last_fixation(fx, aoi, 0);
    REQUIRE(d.has_value());
    CHECK(std::abs(*d - scripted) < 0.5 * ppd);
}

TEST_CASE("rank statistics") {
    const Rect sr{400, 0, 50, 50};
    RankedTrial a{{region(kAoi, 1.0), region({0, 300, 20, 20}, 0.5)}, kAoi, sr};
    RankedTrial b{{region({0, 300, 20, 20}, 1.0), region({500, 300, 20, 20}, 0.8), region(kAoi, 0.4)},
                  kAoi, sr};
    const auto r = region_rank_stats({a, b});
    CHECK(r.n_h_pct == 100);
    CHECK(*r.mu_h == 2.0);
    CHECK(r.n_s_pct == 0);
    CHECK_FALSE(r.mu_s.has_value());
    CHECK_THROWS_AS((void)region_rank_stats({}), PreconditionError);
}

TEST_CASE("rank statistics over 20 trials match a tally") {
    Rng rng(13);
    const Rect sr{400, 0, 60, 60};
    std::vector<RankedTrial> trials;
    int s_n = 0, h_n = 0, s_sum = 0, h_sum = 0;
    for (int t = 0; t < 20; ++t) {
        std::vector<std::pair<double, Rect>> items;
        const bool has_h = t % 4 != 0;
        const bool has_s = t % 3 != 0;
        if (has_h) items.push_back({rng.uniform(0.1, 1), kAoi});
        if (has_s) items.push_back({rng.uniform(0.1, 1), sr});
        for (int k = 0; k < 3; ++k)
            items.push_back({rng.uniform(0.1, 1), Rect{10 + 100 * k, 300, 30, 30}});
        std::sort(items.begin(), items.end(), [](auto& x, auto& y) { return x.first > y.first; });
        RankedTrial rt;
        rt.aoi = kAoi;
        rt.sr_bbox = sr;
        for (std::size_t i = 0; i < items.size(); ++i) {
            rt.regions.push_back(region(items[i].second, items[i].first));
            if (items[i].second == kAoi) { ++h_n; h_sum += static_cast<int>(i) + 1; }
            if (items[i].second == sr) { ++s_n; s_sum += static_cast<int>(i) + 1; }
        }
        trials.push_back(rt);
    }
    const auto r = region_rank_stats(trials);
    CHECK(r.n_h_pct == doctest::Approx(100.0 * h_n / 20));
    CHECK(r.n_s_pct == doctest::Approx(100.0 * s_n / 20));
    CHECK(*r.mu_h == doctest::Approx(static_cast<double>(h_sum) / h_n));
    CHECK(*r.mu_s == doctest::Approx(static_cast<double>(s_sum) / s_n));
    CHECK(h_n == 15);
    CHECK(s_n == 13);
}

TEST_CASE("metrics rows round trip") {
    TrialMeta m;
    m.stimulus_id = "s03";
    m.ht = Highlight::Dynamic;
    m.cl = CognitiveLoad::High;
    m.aoi = kAoi;
    m.highlight_onset_ms = 3000;
    const auto row = metrics_row("p01", m, {fix(10, 10, 0, 300), fix(150, 150, 3200, 250)}, {});
    CHECK(row.aoi_hit);
    CHECK(*row.ttff_ms == 200);
    const auto text = metrics_csv_header() + format_metrics_row(row);
    const auto back = parse_metrics_csv(text);
    REQUIRE(back.size() == 1);
    CHECK(back[0].participant == "p01");
    CHECK(back[0].ht == Highlight::Dynamic);
    CHECK(*back[0].dflf_px == doctest::Approx(*row.dflf_px));
    CHECK(format_metrics_row(back[0]) == format_metrics_row(row));
}
