#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gazekit/aoimetrics.hpp"
#include "gazekit/config.hpp"
#include "gazekit/fixation.hpp"
#include "gazekit/ingest.hpp"
#include "gazekit/salmap.hpp"

namespace gazekit::pipeline {

struct TrialData {
    TrialRef ref;
    TrialMeta meta;
    GazeTrace raw;
};

TrialData load_trial(const TrialRef& ref);

PreprocessResult run_preprocess(const TrialData& t, const PipelineConfig& cfg);

struct FixationStage {
    std::vector<Fixation> fixations;
    GateVerdict verdict;
};

FixationStage run_fixations(const TrialData& t, const GazeTrace& smoothed,
                            const PipelineConfig& cfg);

SaliencyMap trial_map(const TrialMeta& meta, const std::vector<Fixation>& fixations,
                      const PipelineConfig& cfg);

// Staged runs read upstream artefacts from a previous --out directory;
// otherwise every stage recomputes its inputs in memory. Each returns the
// files it wrote.
struct StageOptions {
    std::filesystem::path dataset;
    std::filesystem::path out;
    std::optional<std::filesystem::path> from;
    int jobs = 1;
};

std::vector<std::filesystem::path> stage_preprocess(const StageOptions& o, const PipelineConfig& cfg);
std::vector<std::filesystem::path> stage_fixations(const StageOptions& o, const PipelineConfig& cfg);
std::vector<std::filesystem::path> stage_heatmap(const StageOptions& o, const PipelineConfig& cfg);
std::vector<std::filesystem::path> stage_regions(const StageOptions& o, const PipelineConfig& cfg);
std::vector<std::filesystem::path> stage_metrics(const StageOptions& o, const PipelineConfig& cfg);

// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first
// failure by index order.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace gazekit::pipeline
