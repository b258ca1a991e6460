#include "gazekit/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <system_error>

#include <json.hpp>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace gazekit {

namespace {

constexpr std::string_view kFullHeader = "t_us,x_px,y_px,pupil_left_mm,pupil_right_mm,valid";
constexpr std::string_view kShortHeader = "t_us,x_px,y_px,valid";

std::optional<double> optional_cell(std::string_view cell, std::size_t row, const char* column) {
    cell = textio::trim(cell);
    if (cell.empty()) return std::nullopt;
    auto v = textio::parse_double(cell);
    if (!v || !std::isfinite(*v))
        throw FormatError("row " + std::to_string(row) + ": bad " + column + " value '" +
                          std::string(cell) + "'");
    return v;
}

double estimate_rate(const std::vector<GazeSample>& samples) {
    if (samples.size() < 2) return 250.0;
    std::vector<std::int64_t> steps;
    steps.reserve(samples.size() - 1);
    for (std::size_t i = 1; i < samples.size(); ++i)
        steps.push_back(samples[i].t_us - samples[i - 1].t_us);
    auto mid = steps.begin() + static_cast<std::ptrdiff_t>(steps.size() / 2);
    std::nth_element(steps.begin(), mid, steps.end());
    return 1e6 / static_cast<double>(*mid);
}

}  // namespace

double GazeTrace::duration_ms() const noexcept {
    if (samples.empty()) return 0.0;
    return static_cast<double>(samples.back().t_us - samples.front().t_us) / 1000.0 +
           sample_period_ms();
}

double GazeTrace::invalid_fraction() const noexcept {
    if (samples.empty()) return 0.0;
    const auto invalid = std::count_if(samples.begin(), samples.end(),
                                       [](const GazeSample& s) { return !s.valid; });
    return static_cast<double>(invalid) / static_cast<double>(samples.size());
}

GazeTrace parse_gaze_csv(std::string_view text) {
    std::vector<std::string_view> lines = textio::split(text, '\n');
    for (auto& l : lines) {
        if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    if (lines.empty()) throw FormatError("gaze CSV is empty (missing header)");

    const bool with_pupils = lines[0] == kFullHeader;
    if (!with_pupils && lines[0] != kShortHeader)
        throw FormatError("unexpected gaze CSV header '" + std::string(lines[0]) + "'");
    const std::size_t ncols = with_pupils ? 6 : 4;

    GazeTrace trace;
    trace.samples.reserve(lines.size() - 1);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const std::size_t row = i;
        const auto cells = textio::split(lines[i]);
        if (cells.size() != ncols)
            throw FormatError("row " + std::to_string(row) + ": expected " +
                              std::to_string(ncols) + " fields, got " +
                              std::to_string(cells.size()));
        GazeSample s;
        const auto t = textio::parse_int(cells[0]);
        if (!t || *t < 0)
            throw FormatError("row " + std::to_string(row) + ": bad timestamp '" +
                              std::string(cells[0]) + "'");
        s.t_us = *t;
        s.x_px = optional_cell(cells[1], row, "x_px");
        s.y_px = optional_cell(cells[2], row, "y_px");
        if (with_pupils) {
            s.pupil_left_mm = optional_cell(cells[3], row, "pupil_left_mm");
            s.pupil_right_mm = optional_cell(cells[4], row, "pupil_right_mm");
        }
        const auto flag = textio::trim(cells[ncols - 1]);
        if (flag != "0" && flag != "1")
            throw FormatError("row " + std::to_string(row) + ": valid must be 0 or 1");
        s.valid = flag == "1" && s.x_px && s.y_px;

        if (!trace.samples.empty() && s.t_us <= trace.samples.back().t_us)
            throw IntegrityError("row " + std::to_string(row) +
                                     ": timestamp not strictly increasing",
                                 row);
        trace.samples.push_back(s);
    }
    trace.rate_hz = estimate_rate(trace.samples);
    return trace;
}

GazeTrace load_gaze_csv(const fs::path& path) {
    try {
        return parse_gaze_csv(textio::read_file(path));
    } catch (const IntegrityError& e) {
        throw IntegrityError(path.string() + ": " + e.what(), e.row());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string format_gaze_csv(const GazeTrace& trace, bool with_pupils) {
    std::string out(with_pupils ? kFullHeader : kShortHeader);
    out += '\n';
    for (const auto& s : trace.samples) {
        out += std::to_string(s.t_us);
        out += ',';
        out += textio::format_optional(s.x_px);
        out += ',';
        out += textio::format_optional(s.y_px);
        if (with_pupils) {
            out += ',';
            out += textio::format_optional(s.pupil_left_mm);
            out += ',';
            out += textio::format_optional(s.pupil_right_mm);
        }
        out += s.valid ? ",1\n" : ",0\n";
    }
    return out;
}

void save_gaze_csv(const fs::path& path, const GazeTrace& trace) {
    textio::write_file(path, format_gaze_csv(trace));
}

void TrialMeta::validate() const {
    if (stim_w <= 0 || stim_h <= 0) throw ValidationError("stimulus dimensions must be positive");
    if (aoi.w <= 0 || aoi.h <= 0) throw ValidationError("AOI must have positive size");
    if (aoi.x < 0 || aoi.y < 0 || aoi.x + aoi.w > stim_w || aoi.y + aoi.h > stim_h)
        throw ValidationError("AOI lies outside the stimulus bounds");
    if (!(display_ms > 0)) throw ValidationError("display_ms must be positive");
    if (ht == Highlight::Absent) {
        if (highlight_onset_ms)
            throw ValidationError("highlight_onset_ms given for a trial without highlight");
    } else {
        if (!highlight_onset_ms ||
            (*highlight_onset_ms != 0.0 && *highlight_onset_ms != kDynamicOnsetMs))
            throw ValidationError("highlight_onset_ms must be 0 or 3000");
    }
}

TrialMeta parse_trial_meta(std::string_view json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw FormatError(std::string("trial descriptor is not valid JSON: ") + e.what());
    }
    TrialMeta m;
    try {
        m.stimulus_id = j.at("stimulus_id").get<std::string>();
        m.ht = parse_highlight(j.at("ht").get<std::string>());
        m.cl = parse_load(j.at("cl").get<std::string>());
        const auto& a = j.at("aoi");
        m.aoi = Rect{a.at("x").get<int>(), a.at("y").get<int>(), a.at("w").get<int>(),
                     a.at("h").get<int>()};
        m.stim_w = j.at("stim_w").get<int>();
        m.stim_h = j.at("stim_h").get<int>();
        m.display_ms = j.value("display_ms", kDefaultDisplayMs);
        if (j.contains("highlight_onset_ms") && !j["highlight_onset_ms"].is_null())
            m.highlight_onset_ms = j["highlight_onset_ms"].get<double>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("trial descriptor: ") + e.what());
    }
    if (!m.highlight_onset_ms) {
        if (m.ht == Highlight::Static) m.highlight_onset_ms = 0.0;
        if (m.ht == Highlight::Dynamic) m.highlight_onset_ms = kDynamicOnsetMs;
    }
    m.validate();
    return m;
}

TrialMeta load_trial_meta(const fs::path& path) {
    try {
        return parse_trial_meta(textio::read_file(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string format_trial_meta(const TrialMeta& m) {
    json j;
    j["stimulus_id"] = m.stimulus_id;
    j["ht"] = std::string(to_string(m.ht));
    j["cl"] = std::string(to_string(m.cl));
    j["aoi"] = {{"x", m.aoi.x}, {"y", m.aoi.y}, {"w", m.aoi.w}, {"h", m.aoi.h}};
    j["stim_w"] = m.stim_w;
    j["stim_h"] = m.stim_h;
    j["display_ms"] = m.display_ms;
    if (m.highlight_onset_ms) j["highlight_onset_ms"] = *m.highlight_onset_ms;
    return j.dump(2) + "\n";
}

std::vector<TrialRef> list_trials(const fs::path& root) {
    std::vector<TrialRef> out;
    const fs::path trials = root / "trials";
    if (!fs::is_directory(trials)) return out;
    for (const auto& entry : fs::directory_iterator(trials)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
        const std::string stem = entry.path().stem().string();
        TrialRef ref;
        const auto us = stem.find('_');
        if (us == std::string::npos || us == 0 || us + 1 == stem.size()) {
            ref.participant = "";
            ref.stimulus_id = stem;
        } else {
            ref.participant = stem.substr(0, us);
            ref.stimulus_id = stem.substr(us + 1);
        }
        ref.meta_path = entry.path();
        ref.gaze_path = root / "gaze" / (stem + ".csv");
        out.push_back(std::move(ref));
    }
    std::sort(out.begin(), out.end(), [](const TrialRef& a, const TrialRef& b) {
        return a.meta_path.filename() < b.meta_path.filename();
    });
    return out;
}

std::optional<fs::path> find_stimulus(const fs::path& root, const std::string& stimulus_id) {
    for (const char* ext : {".ppm", ".pgm"}) {
        fs::path p = root / "stimuli" / (stimulus_id + ext);
        if (fs::is_regular_file(p)) return p;
    }
    return std::nullopt;
}

DatasetReport validate_dataset(const fs::path& root) {
    std::error_code ec;
    if (!fs::is_directory(root, ec))
        throw IoError("dataset root " + root.string() + " is not a readable directory");
    fs::directory_iterator probe(root, ec);
    if (ec) throw IoError("cannot read dataset root " + root.string() + ": " + ec.message());

    DatasetReport report;
    const auto trials = list_trials(root);
    report.trial_count = trials.size();
    for (const auto& ref : trials) {
        const std::string name = ref.meta_path.filename().string();
        if (ref.participant.empty()) {
            report.errors.push_back(name + ": file name is not <participant>_<stimulus>.json");
            continue;
        }
        TrialMeta meta;
        try {
            meta = load_trial_meta(ref.meta_path);
        } catch (const Error& e) {
            report.errors.push_back(name + ": " + e.what());
            continue;
        }
        bool ok = true;
        if (meta.stimulus_id != ref.stimulus_id) {
            report.errors.push_back(name + ": stimulus_id '" + meta.stimulus_id +
                                    "' does not match file name");
            ok = false;
        }
        if (!fs::is_regular_file(ref.gaze_path)) {
            report.errors.push_back(ref.trial_id() + ": missing gaze file " +
                                    ref.gaze_path.filename().string());
            ok = false;
        } else {
            try {
                (void)load_gaze_csv(ref.gaze_path);
            } catch (const Error& e) {
                report.errors.push_back(ref.trial_id() + ": " + e.what());
                ok = false;
            }
        }
        if (!find_stimulus(root, meta.stimulus_id)) {
            report.errors.push_back(ref.trial_id() + ": missing stimulus image for '" +
                                    meta.stimulus_id + "'");
            ok = false;
        }
        if (ok) {
            ++report.valid_count;
            ++report.per_condition[{meta.ht, meta.cl}];
        }
    }

    const fs::path gaze = root / "gaze";
    if (fs::is_directory(gaze)) {
        std::vector<std::string> orphans;
        for (const auto& entry : fs::directory_iterator(gaze)) {
            if (entry.path().extension() != ".csv") continue;
            if (!fs::exists(root / "trials" / (entry.path().stem().string() + ".json")))
                orphans.push_back(entry.path().filename().string() +
                                  ": gaze file without trial descriptor");
        }
        std::sort(orphans.begin(), orphans.end());
        report.errors.insert(report.errors.end(), orphans.begin(), orphans.end());
    }
    return report;
}

}  // namespace gazekit
