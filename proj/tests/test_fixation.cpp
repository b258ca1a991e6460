#include <doctest.h>

#include <cmath>
#include <vector>

#include "gazekit/error.hpp"
#include "gazekit/fixation.hpp"
#include "gazekit/simgen.hpp"

using namespace gazekit;

namespace {

const ScreenGeometry kGeom{};

GazeTrace line_trace(std::size_t n, double x0, double dx) {
    GazeTrace t;
    for (std::size_t i = 0; i < n; ++i)
        t.samples.push_back({static_cast<std::int64_t>(i) * 4000, x0 + dx * static_cast<double>(i),
                             500.0, {}, {}, true});
    return t;
}

std::vector<Fixation> detect(const GazeTrace& t) {
    const double ppd = px_per_degree(kGeom);
    const auto pre = preprocess_trace(t, kGeom, WooParams{});
    return detect_fixations(pre.smoothed, pre.velocity, FixParams{}, ppd);
}

}  // namespace

TEST_CASE("three scripted fixations are recovered") {
    synth::TraceScript s;
    s.fixations = {{500, 400, 400}, {1300, 900, 300}, {700, 1100, 600}};
    s.seed = 4;
    const auto st = synth::synth_trace(s, kGeom);
    const auto fx = detect(st.trace);
    REQUIRE(fx.size() == 3);
    const double ppd = px_per_degree(kGeom);
    for (std::size_t k = 0; k < 3; ++k) {
        const double err = std::hypot(fx[k].cx_px - s.fixations[k].x_px,
                                      fx[k].cy_px - s.fixations[k].y_px);
        CHECK(err < 0.5 * ppd);
        CHECK(std::abs(fx[k].duration_ms - s.fixations[k].duration_ms) < 40);
    }
    for (std::size_t k = 1; k < fx.size(); ++k) CHECK(fx[k].onset_ms >= fx[k - 1].end_ms());
    CHECK(detect(st.trace) == fx);
}

TEST_CASE("constant trace is one fixation of full duration") {
    const auto t = line_trace(250, 800, 0);
    const double ppd = px_per_degree(kGeom);
    const auto fx = detect_fixations(t, inter_sample_velocity(t, ppd), FixParams{}, ppd);
    REQUIRE(fx.size() == 1);
    CHECK(fx[0].onset_ms == 0);
    CHECK(fx[0].duration_ms == doctest::Approx(1000.0));
    CHECK(fx[0].cx_px == 800.0);
    CHECK(fx[0].first_sample == 0);
    CHECK(fx[0].last_sample == 249);
}

TEST_CASE("fast sweep has no fixations") {
    const auto t = line_trace(100, 0, 20);
    const double ppd = px_per_degree(kGeom);
    CHECK(detect_fixations(t, inter_sample_velocity(t, ppd), FixParams{}, ppd).empty());
    CHECK(detect_fixations(GazeTrace{}, VelocitySeries{}, FixParams{}, ppd).empty());
}

TEST_CASE("a blink inside a dwell does not split it") {
    auto t = line_trace(100, 800, 0);
    for (std::size_t i = 40; i < 50; ++i) {
        t.samples[i].valid = false;
        t.samples[i].x_px.reset();
    }
    const double ppd = px_per_degree(kGeom);
    const auto fx = detect_fixations(t, inter_sample_velocity(t, ppd), FixParams{}, ppd);
    REQUIRE(fx.size() == 1);
    CHECK(fx[0].duration_ms == doctest::Approx(400.0));
}

TEST_CASE("detection is translation invariant") {
    synth::TraceScript s;
    s.fixations = {{500, 400, 300}, {1000, 600, 300}};
    s.seed = 8;
    auto a = synth::synth_trace(s, kGeom).trace;
    auto b = a;
    for (auto& smp : b.samples) {
        if (smp.x_px) *smp.x_px += 64;
        if (smp.y_px) *smp.y_px -= 32;
    }
    const auto fa = detect(a);
    const auto fb = detect(b);
    REQUIRE(fa.size() == fb.size());
    for (std::size_t k = 0; k < fa.size(); ++k) {
        CHECK(fa[k].onset_ms == fb[k].onset_ms);
        CHECK(fa[k].duration_ms == fb[k].duration_ms);
        CHECK(fb[k].cx_px - fa[k].cx_px == doctest::Approx(64));
        CHECK(fb[k].cy_px - fa[k].cy_px == doctest::Approx(-32));
    }
}

TEST_CASE("gaze time on screen") {
    std::vector<Fixation> fx(2);
    fx[0].duration_ms = 1500;
    fx[1].duration_ms = 2500;
    CHECK(gaze_time_on_screen(fx, 5000) == doctest::Approx(80.0));
    CHECK(gaze_time_on_screen({}, 5000) == 0.0);
    CHECK_THROWS_AS((void)gaze_time_on_screen(fx, 0), PreconditionError);
}

TEST_CASE("simulated trial with 87 percent fixation coverage") {
    synth::TraceScript s;
    s.fixations = {{500, 400, 1500}, {1300, 900, 1450}, {700, 1100, 1400}};
    s.seed = 12;
    const auto fx = detect(synth::synth_trace(s, kGeom).trace);
    CHECK(gaze_time_on_screen(fx, 5000) == doctest::Approx(87.0).epsilon(1.0 / 87));
}

TEST_CASE("quality gate boundaries") {
    auto trace = line_trace(100, 10, 0);
    for (std::size_t i = 0; i < 26; ++i) trace.samples[i].valid = false;
    std::vector<Fixation> fx(1);
    fx[0].duration_ms = 4750;
    const auto v = quality_gate(trace, fx, QualityGate{}, 5000);
    REQUIRE(std::holds_alternative<DropDataLoss>(v));
    CHECK(std::get<DropDataLoss>(v).data_loss == doctest::Approx(0.26));
    CHECK(describe(v) == "drop:data_loss=0.26");

    trace.samples[25].valid = true;
    CHECK(kept(quality_gate(trace, fx, QualityGate{}, 5000)));

    auto clean = line_trace(100, 10, 0);
    CHECK(kept(quality_gate(clean, fx, QualityGate{}, 5000)));

    for (std::size_t i = 0; i < 10; ++i) clean.samples[i].valid = false;
    fx[0].duration_ms = 3995;
    const auto g = quality_gate(clean, fx, QualityGate{}, 5000);
    REQUIRE(std::holds_alternative<DropGts>(g));
    CHECK(std::get<DropGts>(g).gts == doctest::Approx(79.9));
    fx[0].duration_ms = 4000;
    CHECK(kept(quality_gate(clean, fx, QualityGate{}, 5000)));
}

TEST_CASE("fixation CSV round trip") {
    std::vector<Fixation> fx(2);
    fx[0] = {10.5, 20.25, 0, 120, 0, 0};
    fx[1] = {1.0 / 3, 7, 150, 64, 0, 0};
    const auto back = parse_fixations_csv(format_fixations_csv(fx));
    CHECK(back == fx);
    CHECK_THROWS_AS((void)parse_fixations_csv("x,y\n"), FormatError);
}

TEST_CASE("parameter validation") {
    FixParams p;
    p.min_fix_ms = 0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    QualityGate q;
    q.max_data_loss = 1;
    CHECK_THROWS_AS(q.validate(), ValidationError);
}
