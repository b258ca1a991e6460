#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "gazekit/salmap.hpp"

namespace gazekit {

// Binary grid of fixated pixels.
struct FixationSet {
    int w = 0;
    int h = 0;
    std::vector<std::uint8_t> fixated;

    FixationSet() = default;
    FixationSet(int width, int height);

    void mark(int x, int y) { fixated[static_cast<std::size_t>(y) * w + x] = 1; }
    bool at(int x, int y) const { return fixated[static_cast<std::size_t>(y) * w + x] != 0; }
    std::size_t count() const;
};

// CSV with header "x,y", one fixated pixel per row. Out-of-range rows are errors.
FixationSet load_fixation_set(const std::filesystem::path& path, int w, int h);
void save_fixation_set(const std::filesystem::path& path, const FixationSet& fix);

inline constexpr double kKlEpsilon = 1e-8;

double cc(const SaliencyMap& pred, const SaliencyMap& gt);
double kl(const SaliencyMap& pred, const SaliencyMap& gt);
double sim(const SaliencyMap& pred, const SaliencyMap& gt);
// Population standard deviation; std_offset is added to it (0 for evaluation).
double nss(const SaliencyMap& pred, const FixationSet& fix, double std_offset = 0.0);
double auc_judd(const SaliencyMap& pred, const FixationSet& fix);

struct EvalScores {
    std::optional<double> auc;  // absent when every pixel is fixated
    double nss = 0;
    double sim = 0;
    double cc = 0;
    double kl = 0;
};

EvalScores evaluate(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fix);

}  // namespace gazekit
