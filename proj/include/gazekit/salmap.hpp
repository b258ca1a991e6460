#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gazekit/fixation.hpp"
#include "gazekit/types.hpp"

namespace gazekit {

// Non-negative intensity grid, row-major.
struct SaliencyMap {
    int w = 0;
    int h = 0;
    std::vector<double> values;

    SaliencyMap() = default;
    SaliencyMap(int width, int height, double fill = 0.0);

    double& at(int x, int y) { return values[static_cast<std::size_t>(y) * w + x]; }
    double at(int x, int y) const { return values[static_cast<std::size_t>(y) * w + x]; }
    std::size_t size() const noexcept { return values.size(); }
    double max() const;
    double sum() const;

    friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;
};

struct WeightedPoint {
    double x = 0;
    double y = 0;
    double weight = 1;
};

enum class FixationWeighting { Duration, Count };

struct SalmapParams {
    double sigma_px = 35.0;
    double rel_threshold = 0.25;
    int min_area = 200;
    FixationWeighting weighting = FixationWeighting::Duration;

    void validate() const;
};

std::vector<WeightedPoint> weighted_points(const std::vector<Fixation>& fixations,
                                           FixationWeighting weighting);

// Sum of weight * exp(-r^2 / 2 sigma^2) around each point, truncated at
// r <= 3 sigma. Pixel (i, j) is sampled at its integer coordinate; points
// outside the grid are clamped onto it.
SaliencyMap fixation_map(std::span<const WeightedPoint> points, int w, int h, double sigma_px);

SaliencyMap aggregate_group(std::span<const SaliencyMap> maps);

struct Region {
    Rect bbox;
    long long area_px = 0;
    double peak = 0;
    double mass = 0;
    double cx = 0;
    double cy = 0;
};

// 8-connected labeling of a binary mask. Labels are 1..count in raster order
// of each component's first pixel; background is 0.
struct Labeling {
    int count = 0;
    std::vector<int> labels;
};
Labeling label_components(std::span<const std::uint8_t> mask, int w, int h);

// Threshold at rel_threshold * max, label, drop small components, and sort by
// descending peak (ties: larger mass, then smaller bbox x, then y).
std::vector<Region> extract_regions(const SaliencyMap& map, double rel_threshold, int min_area);

bool majority_overlap(const Rect& region_bbox, const Rect& target);

// Highest-ranked region that does not majority-overlap the AOI.
std::optional<Region> most_salient_region(const std::vector<Region>& regions,
                                          const std::optional<Rect>& aoi);

// 16-bit binary PGM, max-normalised, plus a JSON sidecar next to it.
void save_map_pgm(const std::filesystem::path& path, const SaliencyMap& map,
                  const SalmapParams& params);
// Reads 8- or 16-bit P5; values are scaled to [0, 1].
SaliencyMap load_map_pgm(const std::filesystem::path& path);

std::string format_regions_csv(const std::vector<Region>& regions);
std::vector<Region> parse_regions_csv(std::string_view text);

}  // namespace gazekit
