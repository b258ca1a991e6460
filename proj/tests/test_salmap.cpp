#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gazekit/error.hpp"
#include "gazekit/rng.hpp"
#include "gazekit/salmap.hpp"
#include "support.hpp"

using namespace gazekit;

namespace {

SaliencyMap brute_map(const std::vector<WeightedPoint>& pts, int w, int h, double sigma) {
    SaliencyMap m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (const auto& p : pts) {
                const double r2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
                if (std::sqrt(r2) <= 3 * sigma)
                    m.at(x, y) += p.weight * std::exp(-r2 / (2 * sigma * sigma));
            }
    return m;
}

void add_blob(SaliencyMap& m, double cx, double cy, double peak, double sigma) {
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x)
            m.at(x, y) += peak * std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) /
                                          (2 * sigma * sigma));
}

Region region_at(int x, double peak, double mass) {
    Region r;
    r.bbox = {x, 0, 10, 10};
    r.area_px = 100;
    r.peak = peak;
    r.mass = mass;
    return r;
}

}  // namespace

TEST_CASE("single fixation gives a symmetric bump peaking at its pixel") {
    const std::vector<WeightedPoint> p{{32, 32, 1}};
    const auto m = fixation_map(p, 65, 65, 5);
    CHECK(m.at(32, 32) == 1.0);
    CHECK(m.max() == 1.0);
    for (int d = 1; d < 20; ++d) {
        CHECK(m.at(32 + d, 32) == m.at(32 - d, 32));
        CHECK(m.at(32, 32 + d) == m.at(32 + d, 32));
    }
    CHECK(m.at(32 + 16, 32) == 0.0);
}

TEST_CASE("fixation map is linear in weights") {
    const std::vector<WeightedPoint> one{{10.5, 7.25, 1}};
    const std::vector<WeightedPoint> two{{10.5, 7.25, 1}, {10.5, 7.25, 2}};
    const auto a = fixation_map(one, 30, 20, 4);
    const auto b = fixation_map(two, 30, 20, 4);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(b.values[i] == doctest::Approx(3 * a.values[i]).epsilon(1e-14));
}

TEST_CASE("fixation map matches a brute-force loop") {
    Rng rng(2);
    std::vector<WeightedPoint> pts;
    for (int i = 0; i < 50; ++i) pts.push_back({rng.uniform(0, 63), rng.uniform(0, 63), rng.uniform(50, 500)});
    const auto m = fixation_map(pts, 64, 64, 6);
    const auto o = brute_map(pts, 64, 64, 6);
    double worst = 0;
    for (std::size_t i = 0; i < m.size(); ++i)
        if (o.values[i] > 0) worst = std::max(worst, std::abs(m.values[i] - o.values[i]) / o.values[i]);
        else CHECK(m.values[i] == 0.0);
    CHECK(worst < 1e-9);
}

TEST_CASE("fixation map shift equivariance and clamping") {
    const std::vector<WeightedPoint> a{{20, 20, 1}, {25, 22, 2}};
    const std::vector<WeightedPoint> b{{23, 24, 1}, {28, 26, 2}};
    const auto ma = fixation_map(a, 64, 64, 3);
    const auto mb = fixation_map(b, 64, 64, 3);
    for (int y = 0; y < 60; ++y)
        for (int x = 0; x < 60; ++x) CHECK(mb.at(x + 3, y + 4) == doctest::Approx(ma.at(x, y)));
    const std::vector<WeightedPoint> out{{-5, 100, 1}};
    CHECK(fixation_map(out, 10, 10, 2).at(0, 9) == 1.0);
    CHECK(fixation_map({}, 8, 8, 2).max() == 0.0);
}

TEST_CASE("weighted points") {
    std::vector<Fixation> fx(2);
    fx[0].duration_ms = 120;
    fx[1].duration_ms = 300;
    CHECK(weighted_points(fx, FixationWeighting::Duration)[1].weight == 300);
    CHECK(weighted_points(fx, FixationWeighting::Count)[1].weight == 1);
}

TEST_CASE("group aggregation") {
    Rng rng(4);
    std::vector<SaliencyMap> maps;
    std::vector<WeightedPoint> pooled;
    for (int k = 0; k < 9; ++k) {
        std::vector<WeightedPoint> pts;
        for (int i = 0; i < 5; ++i) pts.push_back({rng.uniform(0, 47), rng.uniform(0, 31), rng.uniform(80, 400)});
        pooled.insert(pooled.end(), pts.begin(), pts.end());
        maps.push_back(fixation_map(pts, 48, 32, 5));
    }
    const auto g = aggregate_group(maps);
    const auto p = fixation_map(pooled, 48, 32, 5);
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(g.values[i] == doctest::Approx(p.values[i]).epsilon(1e-9));

    CHECK(aggregate_group(std::span(maps.data(), 1)) == maps[0]);
    const std::vector<SaliencyMap> twice{maps[0], maps[0]};
    const auto d = aggregate_group(twice);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(d.values[i] == 2 * maps[0].values[i]);

    const std::vector<SaliencyMap> mixed{SaliencyMap(4, 4), SaliencyMap(4, 5)};
    CHECK_THROWS_AS((void)aggregate_group(mixed), PreconditionError);
}

TEST_CASE("two blobs and the threshold") {
    SaliencyMap m(80, 40);
    add_blob(m, 20, 20, 1.0, 4);
    add_blob(m, 60, 20, 0.5, 4);
    const auto r = extract_regions(m, 0.25, 5);
    REQUIRE(r.size() == 2);
    CHECK(r[0].peak == m.max());
    CHECK(r[0].cx == doctest::Approx(20));
    CHECK(r[1].bbox.x > 40);
    CHECK(extract_regions(m, 0.6, 5).size() == 1);
    CHECK(extract_regions(SaliencyMap(8, 8), 0.25, 1).empty());
}

TEST_CASE("region areas partition the above-threshold pixels and regions nest across thresholds") {
    Rng rng(9);
    SaliencyMap m(64, 64);
    for (int i = 0; i < 12; ++i) {
        const double x = rng.uniform(0, 63);
        const double y = rng.uniform(0, 63);
        add_blob(m, x, y, rng.uniform(0.2, 1), 3);
    }
    std::vector<Region> prev;
    for (double th : {0.1, 0.2, 0.3, 0.5, 0.7, 0.9}) {
        const auto r = extract_regions(m, th, 1);
        long long area = 0;
        for (const auto& reg : r) area += reg.area_px;
        const auto above = std::count_if(m.values.begin(), m.values.end(),
                                         [&](double v) { return v >= th * m.max(); });
        CHECK(area == above);
        for (std::size_t k = 1; k < r.size(); ++k) CHECK(r[k - 1].peak >= r[k].peak);
        for (const auto& reg : r) {
            if (prev.empty()) break;
            const bool nested = std::any_of(prev.begin(), prev.end(), [&](const Region& outer) {
                return intersection_area(outer.bbox, reg.bbox) == reg.bbox.area();
            });
            CHECK(nested);
        }
        prev = r;
    }
}

TEST_CASE("labeling matches a flood fill on random masks") {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = 32, h = 32;
        std::vector<std::uint8_t> mask(w * h);
        const double density = rng.uniform(0.2, 0.6);
        for (auto& v : mask) v = rng.uniform() < density;
        const auto lab = label_components(mask, w, h);

        std::vector<int> seen(w * h, 0);
        int count = 0;
        for (int start = 0; start < w * h; ++start) {
            if (!mask[start] || seen[start]) continue;
            ++count;
            std::vector<int> stack{start};
            seen[start] = count;
            const int label = lab.labels[start];
            CHECK(label == count);
            while (!stack.empty()) {
                const int i = stack.back();
                stack.pop_back();
                CHECK(lab.labels[i] == label);
                const int x = i % w, y = i / w;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const int j = ny * w + nx;
                        if (mask[j] && !seen[j]) {
                            seen[j] = count;
                            stack.push_back(j);
                        }
                    }
            }
        }
        CHECK(lab.count == count);
    }
}

TEST_CASE("most salient region skips the highlighted one") {
    const std::vector<Region> r{region_at(0, 1.0, 50), region_at(40, 0.8, 40)};
    const Rect aoi{0, 0, 20, 20};
    CHECK(most_salient_region(r, aoi)->bbox.x == 40);
    CHECK(most_salient_region(r, std::nullopt)->bbox.x == 0);
    const std::vector<Region> tie{region_at(0, 1.0, 50), region_at(40, 1.0, 60)};
    CHECK(most_salient_region(tie, std::nullopt)->bbox.x == 40);
    const std::vector<Region> only{region_at(0, 1.0, 50)};
    CHECK_FALSE(most_salient_region(only, aoi).has_value());
}

TEST_CASE("majority overlap uses the region's own area") {
    CHECK(majority_overlap({0, 0, 10, 10}, {5, 0, 100, 100}));
    CHECK_FALSE(majority_overlap({0, 0, 10, 10}, {6, 0, 100, 100}));
    CHECK(majority_overlap({10, 10, 4, 4}, {0, 0, 100, 100}));
}

TEST_CASE("PGM export and region CSV round trip") {
    const auto dir = test::scratch("salmap_io");
    SaliencyMap m(20, 10);
    add_blob(m, 8, 4, 3.0, 2);
    save_map_pgm(dir / "m.pgm", m, SalmapParams{});
    CHECK(std::filesystem::exists(dir / "m.json"));
    const auto back = load_map_pgm(dir / "m.pgm");
    REQUIRE(back.w == 20);
    REQUIRE(back.h == 10);
    for (std::size_t i = 0; i < m.size(); ++i)
        CHECK(back.values[i] == doctest::Approx(m.values[i] / m.max()).epsilon(1e-4));

    const auto regions = extract_regions(m, 0.25, 1);
    const auto parsed = parse_regions_csv(format_regions_csv(regions));
    REQUIRE(parsed.size() == regions.size());
    CHECK(parsed[0].bbox == regions[0].bbox);
    CHECK(parsed[0].mass == regions[0].mass);
    CHECK_THROWS_AS((void)parse_regions_csv("rank,x\n"), FormatError);
}

TEST_CASE("salmap parameter validation") {
    SalmapParams p;
    p.rel_threshold = 1;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    CHECK_THROWS_AS((void)extract_regions(SaliencyMap(2, 2, 1), 0, 1), PreconditionError);
}
