#include "gazekit/salmap.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace gazekit {

SaliencyMap::SaliencyMap(int width, int height, double fill)
    : w(width), h(height), values(static_cast<std::size_t>(width) * height, fill) {
    if (width <= 0 || height <= 0) throw PreconditionError("map dimensions must be positive");
}

double SaliencyMap::max() const {
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

double SaliencyMap::sum() const { return std::accumulate(values.begin(), values.end(), 0.0); }

void SalmapParams::validate() const {
    if (!(sigma_px > 0)) throw ValidationError("sigma_px must be positive");
    if (!(rel_threshold > 0 && rel_threshold < 1))
        throw ValidationError("rel_threshold must lie in (0, 1)");
    if (min_area < 1) throw ValidationError("min_area must be at least 1");
}

std::vector<WeightedPoint> weighted_points(const std::vector<Fixation>& fixations,
                                           FixationWeighting weighting) {
    std::vector<WeightedPoint> pts;
    pts.reserve(fixations.size());
    for (const auto& f : fixations) {
        pts.push_back({f.cx_px, f.cy_px,
                       weighting == FixationWeighting::Duration ? f.duration_ms : 1.0});
    }
    return pts;
}

SaliencyMap fixation_map(std::span<const WeightedPoint> points, int w, int h, double sigma_px) {
    if (!(sigma_px > 0)) throw PreconditionError("sigma must be positive");
    SaliencyMap map(w, h);
    const double radius = 3.0 * sigma_px;
    const double r2_max = radius * radius;
    const double inv_two_var = 1.0 / (2.0 * sigma_px * sigma_px);
    for (const auto& p : points) {
        if (p.weight < 0) throw PreconditionError("fixation weights must be non-negative");
        const double cx = std::clamp(p.x, 0.0, static_cast<double>(w - 1));
        const double cy = std::clamp(p.y, 0.0, static_cast<double>(h - 1));
        const int x0 = std::max(0, static_cast<int>(std::ceil(cx - radius)));
        const int x1 = std::min(w - 1, static_cast<int>(std::floor(cx + radius)));
        const int y0 = std::max(0, static_cast<int>(std::ceil(cy - radius)));
        const int y1 = std::min(h - 1, static_cast<int>(std::floor(cy + radius)));
        for (int y = y0; y <= y1; ++y) {
            const double dy = y - cy;
            for (int x = x0; x <= x1; ++x) {
                const double dx = x - cx;
                const double r2 = dx * dx + dy * dy;
                if (r2 > r2_max) continue;
                map.at(x, y) += p.weight * std::exp(-r2 * inv_two_var);
            }
        }
    }
    return map;
}

SaliencyMap aggregate_group(std::span<const SaliencyMap> maps) {
    if (maps.empty()) throw PreconditionError("no maps to aggregate");
    SaliencyMap out(maps[0].w, maps[0].h);
    for (const auto& m : maps) {
        if (m.w != out.w || m.h != out.h) throw PreconditionError("map dimensions differ");
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += m.values[i];
    }
    return out;
}

namespace {

int find_root(std::vector<int>& parent, int x) {
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

void unite(std::vector<int>& parent, int a, int b) {
    a = find_root(parent, a);
    b = find_root(parent, b);
    if (a == b) return;
    if (a < b)
        parent[b] = a;
    else
        parent[a] = b;
}

}  // namespace

Labeling label_components(std::span<const std::uint8_t> mask, int w, int h) {
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (mask.size() != n) throw PreconditionError("mask size does not match dimensions");
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);

    // Forward pass: join each foreground pixel with its already-visited neighbours.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int i = y * w + x;
            if (!mask[i]) continue;
            if (x > 0 && mask[i - 1]) unite(parent, i, i - 1);
            if (y > 0) {
                const int up = i - w;
                if (mask[up]) unite(parent, i, up);
                if (x > 0 && mask[up - 1]) unite(parent, i, up - 1);
                if (x + 1 < w && mask[up + 1]) unite(parent, i, up + 1);
            }
        }
    }

    Labeling out;
    out.labels.assign(n, 0);
    std::vector<int> root_label(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) continue;
        const int r = find_root(parent, static_cast<int>(i));
        if (root_label[r] == 0) root_label[r] = ++out.count;
        out.labels[i] = root_label[r];
    }
    return out;
}

namespace {

bool region_before(const Region& a, const Region& b) {
    if (a.peak != b.peak) return a.peak > b.peak;
    if (a.mass != b.mass) return a.mass > b.mass;
    if (a.bbox.x != b.bbox.x) return a.bbox.x < b.bbox.x;
    return a.bbox.y < b.bbox.y;
}

}  // namespace

std::vector<Region> extract_regions(const SaliencyMap& map, double rel_threshold, int min_area) {
    if (!(rel_threshold > 0 && rel_threshold < 1))
        throw PreconditionError("rel_threshold must lie in (0, 1)");
    const double peak = map.max();
    if (!(peak > 0)) return {};
    const double cut = rel_threshold * peak;

    std::vector<std::uint8_t> mask(map.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = map.values[i] >= cut ? 1 : 0;
    const Labeling lab = label_components(mask, map.w, map.h);

    struct Acc {
        int x0 = INT32_MAX, y0 = INT32_MAX, x1 = -1, y1 = -1;
        long long area = 0;
        double peak = 0, mass = 0, sx = 0, sy = 0;
    };
    std::vector<Acc> acc(static_cast<std::size_t>(lab.count) + 1);
    for (int y = 0; y < map.h; ++y) {
        for (int x = 0; x < map.w; ++x) {
            const int l = lab.labels[static_cast<std::size_t>(y) * map.w + x];
            if (l == 0) continue;
            auto& a = acc[l];
            const double v = map.at(x, y);
            a.x0 = std::min(a.x0, x);
            a.y0 = std::min(a.y0, y);
            a.x1 = std::max(a.x1, x);
            a.y1 = std::max(a.y1, y);
            ++a.area;
            a.peak = std::max(a.peak, v);
            a.mass += v;
            a.sx += x;
            a.sy += y;
        }
    }

    std::vector<Region> regions;
    for (int l = 1; l <= lab.count; ++l) {
        const auto& a = acc[l];
        if (a.area < min_area) continue;
        Region r;
        r.bbox = Rect{a.x0, a.y0, a.x1 - a.x0 + 1, a.y1 - a.y0 + 1};
        r.area_px = a.area;
        r.peak = a.peak;
        r.mass = a.mass;
        r.cx = a.sx / static_cast<double>(a.area);
        r.cy = a.sy / static_cast<double>(a.area);
        regions.push_back(r);
    }
    std::sort(regions.begin(), regions.end(), region_before);
    return regions;
}

bool majority_overlap(const Rect& region_bbox, const Rect& target) {
    return 2 * intersection_area(region_bbox, target) >= region_bbox.area();
}

std::optional<Region> most_salient_region(const std::vector<Region>& regions,
                                          const std::optional<Rect>& aoi) {
    std::optional<Region> best;
    for (const auto& r : regions) {
        if (aoi && majority_overlap(r.bbox, *aoi)) continue;
        if (!best || region_before(r, *best)) best = r;
    }
    return best;
}

void save_map_pgm(const std::filesystem::path& path, const SaliencyMap& map,
                  const SalmapParams& params) {
    const double peak = map.max();
    std::string out = "P5\n" + std::to_string(map.w) + " " + std::to_string(map.h) + "\n65535\n";
    out.reserve(out.size() + map.size() * 2);
    for (double v : map.values) {
        const double scaled = peak > 0 ? v / peak * 65535.0 : 0.0;
        const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(scaled, 0.0, 65535.0)));
        out.push_back(static_cast<char>(q >> 8));
        out.push_back(static_cast<char>(q & 0xff));
    }
    textio::write_file(path, out);

    nlohmann::ordered_json side;
    side["width"] = map.w;
    side["height"] = map.h;
    side["normalization"] = peak;
    side["sigma_px"] = params.sigma_px;
    side["rel_threshold"] = params.rel_threshold;
    side["min_area"] = params.min_area;
    side["weighting"] = params.weighting == FixationWeighting::Duration ? "duration" : "count";
    auto json_path = path;
    json_path.replace_extension(".json");
    textio::write_file(json_path, side.dump(2) + "\n");
}

SaliencyMap load_map_pgm(const std::filesystem::path& path) {
    const std::string buf = textio::read_file(path);
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < buf.size()) {
            if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(buf[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
        std::string t;
        while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos])))
            t.push_back(buf[pos++]);
        return t;
    };
    if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
    const auto w = textio::parse_int(token());
    const auto h = textio::parse_int(token());
    const auto maxval = textio::parse_int(token());
    if (!w || !h || !maxval || *w <= 0 || *h <= 0 || *maxval <= 0 || *maxval > 65535)
        throw FormatError(path.string() + ": bad PGM header");
    ++pos;
    const bool wide = *maxval > 255;
    SaliencyMap map(static_cast<int>(*w), static_cast<int>(*h));
    const std::size_t need = map.size() * (wide ? 2 : 1);
    if (buf.size() < pos + need) throw FormatError(path.string() + ": truncated raster");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    for (std::size_t i = 0; i < map.size(); ++i) {
        const unsigned v = wide ? (unsigned(p[2 * i]) << 8) | p[2 * i + 1] : p[i];
        map.values[i] = static_cast<double>(v) / static_cast<double>(*maxval);
    }
    return map;
}

std::string format_regions_csv(const std::vector<Region>& regions) {
    std::string out = "rank,x,y,w,h,area_px,peak,mass,cx,cy\n";
    int rank = 1;
    for (const auto& r : regions) {
        out += std::to_string(rank++) + ',' + std::to_string(r.bbox.x) + ',' +
               std::to_string(r.bbox.y) + ',' + std::to_string(r.bbox.w) + ',' +
               std::to_string(r.bbox.h) + ',' + std::to_string(r.area_px) + ',' +
               textio::format_double(r.peak) + ',' + textio::format_double(r.mass) + ',' +
               textio::format_double(r.cx) + ',' + textio::format_double(r.cy) + '\n';
    }
    return out;
}

std::vector<Region> parse_regions_csv(std::string_view text) {
    auto lines = textio::split(text, '\n');
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty() || lines[0] != "rank,x,y,w,h,area_px,peak,mass,cx,cy")
        throw FormatError("unexpected regions CSV header");
    std::vector<Region> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cells = textio::split(lines[i]);
        const std::string where = "regions row " + std::to_string(i);
        if (cells.size() != 10) throw FormatError(where + ": expected 10 fields");
        auto integer = [&](std::size_t c) {
            const auto v = textio::parse_int(cells[c]);
            if (!v) throw FormatError(where + ": bad integer '" + std::string(cells[c]) + "'");
            return *v;
        };
        auto real = [&](std::size_t c) {
            const auto v = textio::parse_double(cells[c]);
            if (!v) throw FormatError(where + ": bad number '" + std::string(cells[c]) + "'");
            return *v;
        };
        if (integer(0) != static_cast<long long>(i)) throw FormatError(where + ": rank out of order");
        Region r;
        r.bbox = Rect{static_cast<int>(integer(1)), static_cast<int>(integer(2)),
                      static_cast<int>(integer(3)), static_cast<int>(integer(4))};
        r.area_px = integer(5);
        r.peak = real(6);
        r.mass = real(7);
        r.cx = real(8);
        r.cy = real(9);
        out.push_back(r);
    }
    return out;
}

}  // namespace gazekit
