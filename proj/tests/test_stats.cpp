#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "gazekit/error.hpp"
#include "gazekit/rng.hpp"
#include "gazekit/stats.hpp"

using namespace gazekit;

namespace {

struct Decomposition {
    double treatment = 0, error = 0, subject = 0, total = 0;
};

Decomposition oracle(const std::vector<std::vector<double>>& d) {
    const std::size_t n = d.size(), k = d[0].size();
    double grand = 0;
    for (const auto& r : d)
        for (double v : r) grand += v;
    grand /= static_cast<double>(n * k);
    Decomposition o;
    for (std::size_t j = 0; j < k; ++j) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += d[i][j];
        m /= static_cast<double>(n);
        o.treatment += static_cast<double>(n) * (m - grand) * (m - grand);
    }
    for (std::size_t i = 0; i < n; ++i) {
        double m = 0;
        for (double v : d[i]) m += v;
        m /= static_cast<double>(k);
        o.subject += static_cast<double>(k) * (m - grand) * (m - grand);
        for (double v : d[i]) o.total += (v - grand) * (v - grand);
    }
    o.error = o.total - o.subject - o.treatment;
    return o;
}

std::vector<std::vector<double>> random_matrix(Rng& rng, std::size_t n, std::size_t k) {
    std::vector<std::vector<double>> d(n, std::vector<double>(k));
    for (auto& r : d)
        for (auto& v : r) v = rng.normal(5, 2);
    return d;
}

}  // namespace

TEST_CASE("paired t on the hand-worked fixture") {
    const std::vector<double> a{1, 2, 3}, b{2, 2, 4};
    const auto r = paired_t(a, b);
    CHECK(r.t == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(r.df == 2);
    CHECK(paired_t(b, a).t == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("paired t errors") {
    const std::vector<double> a{1, 5, 2, 8}, b{2, 6, 3, 9};
    CHECK_THROWS_AS((void)paired_t(a, b), DegenerateError);
    const std::vector<double> one{1}, two{1, 2};
    CHECK_THROWS_AS((void)paired_t(one, one), PreconditionError);
    CHECK_THROWS_AS((void)paired_t(one, two), PreconditionError);
}

TEST_CASE("paired t matches the textbook formula") {
    Rng rng(30);
    std::vector<double> a(30), b(30);
    for (int i = 0; i < 30; ++i) {
        a[i] = rng.normal(10, 3);
        b[i] = rng.normal(11, 3);
    }
    double md = 0;
    for (int i = 0; i < 30; ++i) md += (a[i] - b[i]) / 30;
    double ss = 0;
    for (int i = 0; i < 30; ++i) ss += (a[i] - b[i] - md) * (a[i] - b[i] - md);
    const double t = md / (std::sqrt(ss / 29) / std::sqrt(30.0));
    const auto r = paired_t(a, b);
    CHECK(std::abs(r.t - t) <= 1e-12 * std::abs(t));
    CHECK(r.df == 29);
    CHECK(paired_t(b, a).t == -r.t);
}

TEST_CASE("rm_anova degrees of freedom for 40 subjects and 3 conditions") {
    Rng rng(40);
    const auto r = rm_anova(random_matrix(rng, 40, 3));
    CHECK(r.df1 == 2);
    CHECK(r.df2 == 78);
}

TEST_CASE("rm_anova with no condition effect") {
    const std::vector<std::vector<double>> d{{1, 1, 1}, {4, 4, 4}, {2.5, 2.5, 2.5}};
    const auto r = rm_anova(d);
    CHECK(r.ss_treatment == 0);
    CHECK(r.f == 0);
}

TEST_CASE("rm_anova matches a from-scratch decomposition") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto d = random_matrix(rng, 5, 3);
        const auto r = rm_anova(d);
        const auto o = oracle(d);
        CHECK(r.ss_treatment == doctest::Approx(o.treatment).epsilon(1e-10));
        CHECK(r.ss_subject == doctest::Approx(o.subject).epsilon(1e-10));
        CHECK(r.ss_error == doctest::Approx(o.error).epsilon(1e-10));
        CHECK(r.ss_total == doctest::Approx(r.ss_subject + r.ss_treatment + r.ss_error).epsilon(1e-9));
        CHECK(r.f == doctest::Approx((o.treatment / 2) / (o.error / 8)).epsilon(1e-10));
    }
}

TEST_CASE("rm_anova ignores per-subject offsets") {
    Rng rng(12);
    auto d = random_matrix(rng, 8, 4);
    const auto base = rm_anova(d);
    for (auto& r : d) {
        const double shift = rng.normal(0, 50);
        for (auto& v : r) v += shift;
    }
    const auto moved = rm_anova(d);
    CHECK(moved.ss_treatment == doctest::Approx(base.ss_treatment).epsilon(1e-9));
    CHECK(moved.ss_error == doctest::Approx(base.ss_error).epsilon(1e-9));
    CHECK(moved.f == doctest::Approx(base.f).epsilon(1e-9));
}

TEST_CASE("rm_anova rejects incomplete input") {
    CHECK_THROWS_AS((void)rm_anova({{1, 2, 3}, {1, 2}}), PreconditionError);
    CHECK_THROWS_AS((void)rm_anova({{1, 2, 3}}), PreconditionError);
    CHECK_THROWS_AS((void)rm_anova({{1, NAN}, {1, 2}}), PreconditionError);
}

TEST_CASE("condition means") {
    std::map<CognitiveLoad, std::vector<double>> g{
        {CognitiveLoad::High, {4}}, {CognitiveLoad::Absent, {2, 2, 2}}, {CognitiveLoad::Low, {1, 2, 6}}};
    const auto s = condition_means(g);
    REQUIRE(s.size() == 3);
    CHECK(s[0].condition == CognitiveLoad::Absent);
    CHECK(*s[0].sd == 0);
    CHECK(s[1].mean == 3);
    CHECK(*s[1].sd == doctest::Approx(std::sqrt(7.0)));
    CHECK(s[2].mean == 4);
    CHECK_FALSE(s[2].sd.has_value());
    g[CognitiveLoad::Low].clear();
    CHECK_THROWS_AS((void)condition_means(g), PreconditionError);
}
