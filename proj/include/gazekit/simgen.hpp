#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gazekit/dynmodel.hpp"
#include "gazekit/image.hpp"
#include "gazekit/ingest.hpp"
#include "gazekit/saleval.hpp"
#include "gazekit/salmap.hpp"

namespace gazekit::synth {

struct FixationDirective {
    double x_px = 0;
    double y_px = 0;
    double duration_ms = 0;
};

struct TraceScript {
    std::vector<FixationDirective> fixations;
    double saccade_ms = 30.0;
    double noise_sigma_deg = 0.15;
    double dropout_rate = 0.0;
    int outlier_count = 0;
    std::uint64_t seed = 1;
    std::optional<double> pupil_mm;  // constant-plus-noise pupil signal when set

    void validate() const;
};

struct ScriptedFixation {
    double cx_px = 0;
    double cy_px = 0;
    double onset_ms = 0;
    double duration_ms = 0;
    std::size_t first_sample = 0;
    std::size_t last_sample = 0;
};

struct SynthTrace {
    GazeTrace trace;
    std::vector<ScriptedFixation> truth;
    std::vector<std::size_t> outlier_samples;
};

// Fixations hold position plus Gaussian noise; saccades move linearly between
// consecutive centroids. Dropouts become invalid samples; outliers are 3 deg
// single-sample spikes placed inside fixations away from dropouts.
SynthTrace synth_trace(const TraceScript& script, const ScreenGeometry& g,
                       double rate_hz = 250.0);

struct StimulusPair {
    Image pre_frame;
    Image post_frame;
    SaliencyMap gt_map;
    FixationSet fix_set;
};

inline constexpr int kPairFixations = 24;

// post_frame = pre_frame with a uniform yellow patch over aoi; gt_map is a
// Gaussian bump centred in the aoi over a low background.
StimulusPair synth_stimulus_pair(int w, int h, const Rect& aoi, std::uint64_t seed);

// n highlight pairs at res x res with seeded AOIs. channels 6 stacks the
// (pre, post) frames; channels 3 feeds the post frame alone.
std::vector<dyn::TrainSample> synth_training_set(std::size_t n, int res, std::uint64_t seed,
                                                 int channels = 6);

struct DatasetOptions {
    ScreenGeometry geometry{640, 360, 56.45, 31.75, 70};
    double noise_sigma_deg = 0.15;
    double dropout_rate = 0.02;
    int outliers_per_trial = 3;
};

struct TrialTruth {
    std::string trial_id;
    std::string participant;
    std::string stimulus_id;
    Highlight ht = Highlight::Absent;
    CognitiveLoad cl = CognitiveLoad::Absent;
    Rect aoi;
    Rect salient_region;  // planted natural hotspot
    std::vector<ScriptedFixation> fixations;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    ScreenGeometry geometry;
    std::vector<TrialTruth> trials;
};

// Trial k uses condition k mod 9 of the HT x CL grid and stimulus s<k mod 9>;
// participants advance every nine trials. Writes stimuli/, trials/, gaze/,
// manifest.json and a pipeline config.json matching the geometry.
DatasetManifest synth_dataset(std::size_t n_trials, const std::filesystem::path& root,
                              std::uint64_t seed, const DatasetOptions& opts = {});

}  // namespace gazekit::synth
