#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gazekit/types.hpp"

namespace gazekit {

struct GazeSample {
    std::int64_t t_us = 0;  // since trial onset
    std::optional<double> x_px;
    std::optional<double> y_px;
    std::optional<double> pupil_left_mm;
    std::optional<double> pupil_right_mm;
    bool valid = false;

    friend bool operator==(const GazeSample&, const GazeSample&) = default;
};

struct GazeTrace {
    std::vector<GazeSample> samples;
    double rate_hz = 250.0;

    std::size_t size() const noexcept { return samples.size(); }
    bool empty() const noexcept { return samples.empty(); }
    double sample_period_ms() const noexcept { return 1000.0 / rate_hz; }
    // Covered time, counting one sample period for the last sample.
    double duration_ms() const noexcept;
    double invalid_fraction() const noexcept;

    friend bool operator==(const GazeTrace&, const GazeTrace&) = default;
};

struct TrialMeta {
    std::string stimulus_id;
    Highlight ht = Highlight::Absent;
    CognitiveLoad cl = CognitiveLoad::Absent;
    Rect aoi;
    int stim_w = 0;
    int stim_h = 0;
    double display_ms = 5000.0;
    std::optional<double> highlight_onset_ms;

    void validate() const;
};

inline constexpr double kDefaultDisplayMs = 5000.0;
inline constexpr double kDynamicOnsetMs = 3000.0;

// Gaze CSV. Header: t_us,x_px,y_px,pupil_left_mm,pupil_right_mm,valid
// (the two pupil columns may be omitted entirely).
GazeTrace parse_gaze_csv(std::string_view text);
GazeTrace load_gaze_csv(const std::filesystem::path& path);
std::string format_gaze_csv(const GazeTrace& trace, bool with_pupils = true);
void save_gaze_csv(const std::filesystem::path& path, const GazeTrace& trace);

TrialMeta parse_trial_meta(std::string_view json_text);
TrialMeta load_trial_meta(const std::filesystem::path& path);
std::string format_trial_meta(const TrialMeta& meta);

// One trial as laid out on disk: trials/<participant>_<stimulus>.json and
// gaze/<participant>_<stimulus>.csv.
struct TrialRef {
    std::string participant;
    std::string stimulus_id;
    std::filesystem::path meta_path;
    std::filesystem::path gaze_path;

    std::string trial_id() const { return participant + "_" + stimulus_id; }
};

struct DatasetReport {
    std::size_t trial_count = 0;  // descriptors discovered
    std::size_t valid_count = 0;  // descriptors with no file-level error
    std::map<std::pair<Highlight, CognitiveLoad>, std::size_t> per_condition;
    std::vector<std::string> errors;
};

// Trials with a descriptor, sorted by trial id.
std::vector<TrialRef> list_trials(const std::filesystem::path& root);
std::optional<std::filesystem::path> find_stimulus(const std::filesystem::path& root,
                                                   const std::string& stimulus_id);
DatasetReport validate_dataset(const std::filesystem::path& root);

}  // namespace gazekit
