#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "gazekit/error.hpp"
#include "gazekit/rng.hpp"
#include "gazekit/saleval.hpp"
#include "support.hpp"

using namespace gazekit;

namespace {

SaliencyMap random_map(Rng& rng, int w, int h) {
    SaliencyMap m(w, h);
    for (auto& v : m.values) v = rng.uniform(0.01, 1.0);
    return m;
}

FixationSet random_fix(Rng& rng, int w, int h, int n) {
    FixationSet f(w, h);
    for (int i = 0; i < n; ++i) {
        const auto x = static_cast<int>(rng.below(w));
        const auto y = static_cast<int>(rng.below(h));
        f.mark(x, y);
    }
    return f;
}

FixationSet all_fix(int w, int h) {
    FixationSet f(w, h);
    std::fill(f.fixated.begin(), f.fixated.end(), 1);
    return f;
}

double oracle_cc(const SaliencyMap& a, const SaliencyMap& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) { ma += a.values[i] / n; mb += b.values[i] / n; }
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a.values[i] - ma) * (b.values[i] - mb) / n;
        va += (a.values[i] - ma) * (a.values[i] - ma) / n;
        vb += (b.values[i] - mb) * (b.values[i] - mb) / n;
    }
    return cov / std::sqrt(va) / std::sqrt(vb);
}

double oracle_auc(const SaliencyMap& p, const FixationSet& f) {
    std::set<double> thresholds;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (f.fixated[i]) thresholds.insert(p.values[i]);
    std::vector<std::pair<double, double>> roc{{0, 0}};
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        double tp = 0, fp = 0, nf = 0, nr = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            if (f.fixated[i]) { ++nf; tp += p.values[i] >= *it; }
            else { ++nr; fp += p.values[i] >= *it; }
        }
        roc.push_back({fp / nr, tp / nf});
    }
    roc.push_back({1, 1});
    double area = 0;
    for (std::size_t i = 1; i < roc.size(); ++i)
        area += (roc[i].first - roc[i - 1].first) * (roc[i].second + roc[i - 1].second) / 2;
    return area;
}

}  // namespace

TEST_CASE("correlation") {
    Rng rng(1);
    const auto p = random_map(rng, 16, 16);
    CHECK(cc(p, p) == doctest::Approx(1.0).epsilon(1e-12));
    SaliencyMap neg = p;
    for (auto& v : neg.values) v = p.max() - v;
    CHECK(cc(p, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    const auto q = random_map(rng, 16, 16);
    CHECK(std::abs(cc(p, q) - oracle_cc(p, q)) < 1e-12);
    CHECK_THROWS_AS((void)cc(p, SaliencyMap(16, 16, 0.3)), DegenerateError);
    CHECK_THROWS_AS((void)cc(p, SaliencyMap(8, 8, 0.3)), PreconditionError);
}

TEST_CASE("KL divergence") {
    Rng rng(2);
    const auto p = random_map(rng, 16, 16);
    CHECK(kl(p, p) < 1e-6);
    CHECK(kl(p, p) > -static_cast<double>(p.size()) * kKlEpsilon);

    SaliencyMap gt(16, 16);
    gt.at(3, 3) = 1;
    SaliencyMap pred(16, 16, 1.0);
    double prev = 0;
    for (double at : {1e-1, 1e-3, 1e-6}) {
        pred.at(3, 3) = at;
        const double v = kl(pred, gt);
        CHECK(v > prev);
        prev = v;
    }
    CHECK(prev > 10);

    const auto q = random_map(rng, 16, 16);
    double oracle = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = q.values[i] / q.sum();
        const double r = p.values[i] / p.sum();
        oracle += g * std::log(g / (r + 1e-8) + 1e-8);
    }
    CHECK(std::abs(kl(p, q) - oracle) < 1e-10);
    CHECK_THROWS_AS((void)kl(p, SaliencyMap(16, 16)), DegenerateError);
}

TEST_CASE("similarity") {
    Rng rng(3);
    const auto p = random_map(rng, 16, 16);
    CHECK(sim(p, p) == doctest::Approx(1.0).epsilon(1e-12));
    SaliencyMap a(4, 4), b(4, 4);
    a.at(0, 0) = 1;
    b.at(3, 3) = 1;
    CHECK(sim(a, b) == 0.0);
    const auto q = random_map(rng, 16, 16);
    double oracle = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
        oracle += std::min(p.values[i] / p.sum(), q.values[i] / q.sum());
    CHECK(std::abs(sim(p, q) - oracle) < 1e-12);
}

TEST_CASE("normalized scanpath saliency") {
    Rng rng(4);
    const auto p = random_map(rng, 16, 16);
    CHECK(std::abs(nss(p, all_fix(16, 16))) < 1e-12);

    FixationSet top(16, 16);
    const auto it = std::max_element(p.values.begin(), p.values.end());
    const auto idx = static_cast<int>(it - p.values.begin());
    top.mark(idx % 16, idx / 16);
    CHECK(nss(p, top) > 0);

    const auto f = random_fix(rng, 16, 16, 20);
    double mu = 0;
    for (double v : p.values) mu += v / 256;
    double var = 0;
    for (double v : p.values) var += (v - mu) * (v - mu) / 256;
    double acc = 0;
    int n = 0;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            if (f.at(x, y)) { acc += (p.at(x, y) - mu) / std::sqrt(var); ++n; }
    CHECK(std::abs(nss(p, f) - acc / n) < 1e-12);
    CHECK_THROWS_AS((void)nss(p, FixationSet(16, 16)), DegenerateError);
    CHECK_THROWS_AS((void)nss(SaliencyMap(16, 16, 2), f), DegenerateError);
}

TEST_CASE("AUC Judd") {
    Rng rng(5);
    const auto f = random_fix(rng, 16, 16, 30);
    SaliencyMap sep(16, 16);
    for (std::size_t i = 0; i < sep.size(); ++i) sep.values[i] = f.fixated[i] ? rng.uniform(0.6, 1) : rng.uniform(0, 0.5);
    CHECK(auc_judd(sep, f) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(auc_judd(SaliencyMap(16, 16, 0.4), f) == doctest::Approx(0.5).epsilon(1e-12));
    for (int k = 0; k < 20; ++k) {
        auto p = random_map(rng, 16, 16);
        for (auto& v : p.values) v = std::round(v * 20) / 20;  // force ties
        const auto g = random_fix(rng, 16, 16, 25);
        CHECK(std::abs(auc_judd(p, g) - oracle_auc(p, g)) < 1e-10);
    }
    CHECK_THROWS_AS((void)auc_judd(sep, all_fix(16, 16)), DegenerateError);
    CHECK_THROWS_AS((void)auc_judd(sep, FixationSet(16, 16)), DegenerateError);
}

TEST_CASE("evaluate on identical maps with every pixel fixated") {
    Rng rng(6);
    const auto p = random_map(rng, 12, 12);
    const auto s = evaluate(p, p, all_fix(12, 12));
    CHECK_FALSE(s.auc.has_value());
    CHECK(s.cc == doctest::Approx(1.0));
    CHECK(s.sim == doctest::Approx(1.0));
    CHECK(std::abs(s.nss) < 1e-12);
    CHECK(s.kl < 1e-6);
}

TEST_CASE("evaluate bundles the member metrics") {
    Rng rng(7);
    for (int k = 0; k < 2; ++k) {
        const auto p = random_map(rng, 16, 16);
        const auto g = random_map(rng, 16, 16);
        const auto f = random_fix(rng, 16, 16, 15);
        const auto s = evaluate(p, g, f);
        CHECK(*s.auc == oracle_auc(p, f));
        CHECK(s.cc == cc(p, g));
        CHECK(s.kl == kl(p, g));
        CHECK(s.sim == sim(p, g));
        CHECK(s.nss == nss(p, f));
    }
}

TEST_CASE("frozen regression scores") {
    Rng rng(2024);
    const auto p = random_map(rng, 16, 16);
    const auto g = random_map(rng, 16, 16);
    const auto f = random_fix(rng, 16, 16, 24);
    const auto s = evaluate(p, g, f);
    CHECK(*s.auc == doctest::Approx(0.56600215517241392).epsilon(1e-12));
    CHECK(s.cc == doctest::Approx(-0.028177258462545551).epsilon(1e-12));
    CHECK(s.nss == doctest::Approx(0.13172498813002884).epsilon(1e-12));
    CHECK(s.sim == doctest::Approx(0.68398744608875306).epsilon(1e-12));
    CHECK(s.kl == doctest::Approx(0.45679313750417322).epsilon(1e-12));
}

TEST_CASE("scale and shift invariance") {
    Rng rng(8);
    const auto p = random_map(rng, 16, 16);
    const auto g = random_map(rng, 16, 16);
    const auto f = random_fix(rng, 16, 16, 20);
    SaliencyMap affine = p, scaled = p;
    for (auto& v : affine.values) v = 3.5 * v + 2;
    for (auto& v : scaled.values) v *= 7.25;
    CHECK(cc(affine, g) == doctest::Approx(cc(p, g)).epsilon(1e-12));
    CHECK(nss(affine, f) == doctest::Approx(nss(p, f)).epsilon(1e-12));
    CHECK(auc_judd(affine, f) == auc_judd(p, f));
    CHECK(sim(scaled, g) == doctest::Approx(sim(p, g)).epsilon(1e-12));
    CHECK(kl(scaled, g) == doctest::Approx(kl(p, g)).epsilon(1e-12));
    CHECK(kl(affine, g) != doctest::Approx(kl(p, g)).epsilon(1e-6));
}

TEST_CASE("scores stay in range on random fixtures") {
    Rng rng(9);
    for (int k = 0; k < 1000; ++k) {
        const auto p = random_map(rng, 8, 8);
        const auto g = random_map(rng, 8, 8);
        const auto f = random_fix(rng, 8, 8, 1 + static_cast<int>(rng.below(10)));
        const auto s = evaluate(p, g, f);
        CHECK((*s.auc >= 0 && *s.auc <= 1));
        CHECK((s.sim >= 0 && s.sim <= 1 + 1e-12));
        CHECK((s.cc >= -1 - 1e-12 && s.cc <= 1 + 1e-12));
        CHECK(s.kl >= -static_cast<double>(p.size()) * kKlEpsilon);
    }
}

TEST_CASE("fixation set file round trip") {
    const auto dir = test::scratch("saleval_fix");
    FixationSet f(10, 6);
    f.mark(0, 0);
    f.mark(9, 5);
    f.mark(4, 2);
    save_fixation_set(dir / "f.csv", f);
    const auto back = load_fixation_set(dir / "f.csv", 10, 6);
    CHECK(back.fixated == f.fixated);
    CHECK(back.count() == 3);
    CHECK_THROWS_AS((void)load_fixation_set(dir / "f.csv", 5, 5), ValidationError);
}
