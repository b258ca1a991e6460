#include "gazekit/config.hpp"

#include <initializer_list>

#include <json.hpp>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace gazekit {

using json = nlohmann::json;

namespace {

class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) throw ValidationError("config: '" + name_ + "' must be an object");
    }

    void allow(std::initializer_list<const char*> keys) const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool known = false;
            for (const char* k : keys) known = known || it.key() == k;
            if (!known) throw ValidationError("config: unknown key '" + name_ + "." + it.key() + "'");
        }
    }

    void number(const char* key, double& dst) const {
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number()) throw ValidationError(where(key) + " must be a number");
        dst = v.get<double>();
    }

    template <class Int>
    void integer(const char* key, Int& dst) const {
        if (!j_.contains(key)) return;
        const auto& v = j_.at(key);
        if (!v.is_number_integer()) throw ValidationError(where(key) + " must be an integer");
        if constexpr (std::is_unsigned_v<Int>) {
            if (v.is_number_unsigned())
                dst = static_cast<Int>(v.get<std::uint64_t>());
            else if (v.get<std::int64_t>() >= 0)
                dst = static_cast<Int>(v.get<std::int64_t>());
            else
                throw ValidationError(where(key) + " must be non-negative");
        } else {
            dst = static_cast<Int>(v.get<std::int64_t>());
        }
    }

    const json* child(const char* key) const { return j_.contains(key) ? &j_.at(key) : nullptr; }
    const json& raw(const char* key) const { return j_.at(key); }
    std::string where(const char* key) const { return "config: '" + name_ + "." + key + "'"; }

private:
    const json& j_;
    std::string name_;
};

}  // namespace

void PipelineConfig::validate() const {
    geometry.validate();
    woo.validate();
    fixation.validate();
    quality.validate();
    salmap.validate();
    loss.validate();
    train.validate();
}

PipelineConfig parse_config(std::string_view json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw FormatError(std::string("config: malformed JSON: ") + e.what());
    }
    if (!root.is_object()) throw ValidationError("config: top level must be an object");

    PipelineConfig cfg;
    for (auto it = root.begin(); it != root.end(); ++it) {
        const std::string& key = it.key();
        const json& v = it.value();
        if (key == "geometry") {
            Section s(v, key);
            s.allow({"screen_w_px", "screen_h_px", "screen_w_cm", "screen_h_cm",
                     "viewing_distance_cm"});
            s.number("screen_w_px", cfg.geometry.screen_w_px);
            s.number("screen_h_px", cfg.geometry.screen_h_px);
            s.number("screen_w_cm", cfg.geometry.screen_w_cm);
            s.number("screen_h_cm", cfg.geometry.screen_h_cm);
            s.number("viewing_distance_cm", cfg.geometry.viewing_distance_cm);
        } else if (key == "woo") {
            Section s(v, key);
            s.allow({"window_ms", "kernel_sigma_ms", "saccade_v_th_deg_s"});
            s.number("window_ms", cfg.woo.window_ms);
            s.number("kernel_sigma_ms", cfg.woo.kernel_sigma_ms);
            s.number("saccade_v_th_deg_s", cfg.woo.saccade_v_th_deg_s);
        } else if (key == "fixation") {
            Section s(v, key);
            s.allow({"v_th_deg_s", "min_fix_ms", "merge_gap_ms", "merge_dist_deg"});
            s.number("v_th_deg_s", cfg.fixation.v_th_deg_s);
            s.number("min_fix_ms", cfg.fixation.min_fix_ms);
            s.number("merge_gap_ms", cfg.fixation.merge_gap_ms);
            s.number("merge_dist_deg", cfg.fixation.merge_dist_deg);
        } else if (key == "quality") {
            Section s(v, key);
            s.allow({"max_data_loss", "min_gts"});
            s.number("max_data_loss", cfg.quality.max_data_loss);
            s.number("min_gts", cfg.quality.min_gts);
        } else if (key == "salmap") {
            Section s(v, key);
            s.allow({"sigma_px", "rel_threshold", "min_area", "weighting"});
            s.number("sigma_px", cfg.salmap.sigma_px);
            s.number("rel_threshold", cfg.salmap.rel_threshold);
            s.integer("min_area", cfg.salmap.min_area);
            if (const json* w = s.child("weighting")) {
                if (*w == "duration")
                    cfg.salmap.weighting = FixationWeighting::Duration;
                else if (*w == "count")
                    cfg.salmap.weighting = FixationWeighting::Count;
                else
                    throw ValidationError(s.where("weighting") + " must be \"duration\" or \"count\"");
            }
        } else if (key == "loss") {
            Section s(v, key);
            s.allow({"w_kl", "w_cc", "w_nss"});
            s.number("w_kl", cfg.loss.w_kl);
            s.number("w_cc", cfg.loss.w_cc);
            s.number("w_nss", cfg.loss.w_nss);
        } else if (key == "train") {
            Section s(v, key);
            s.allow({"lr0", "decay_factor", "decay_every_epochs", "epochs", "seed", "batch",
                     "resolution"});
            s.number("lr0", cfg.train.lr0);
            s.number("decay_factor", cfg.train.decay_factor);
            s.integer("decay_every_epochs", cfg.train.decay_every_epochs);
            s.integer("epochs", cfg.train.epochs);
            s.integer("seed", cfg.train.seed);
            s.integer("batch", cfg.train.batch);
            s.integer("resolution", cfg.train.resolution);
        } else {
            throw ValidationError("config: unknown key '" + key + "'");
        }
    }
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    return parse_config(textio::read_file(path));
}

std::string format_config(const PipelineConfig& cfg) {
    nlohmann::ordered_json j;
    j["geometry"] = {{"screen_w_px", cfg.geometry.screen_w_px},
                     {"screen_h_px", cfg.geometry.screen_h_px},
                     {"screen_w_cm", cfg.geometry.screen_w_cm},
                     {"screen_h_cm", cfg.geometry.screen_h_cm},
                     {"viewing_distance_cm", cfg.geometry.viewing_distance_cm}};
    j["woo"] = {{"window_ms", cfg.woo.window_ms},
                {"kernel_sigma_ms", cfg.woo.kernel_sigma_ms},
                {"saccade_v_th_deg_s", cfg.woo.saccade_v_th_deg_s}};
    j["fixation"] = {{"v_th_deg_s", cfg.fixation.v_th_deg_s},
                     {"min_fix_ms", cfg.fixation.min_fix_ms},
                     {"merge_gap_ms", cfg.fixation.merge_gap_ms},
                     {"merge_dist_deg", cfg.fixation.merge_dist_deg}};
    j["quality"] = {{"max_data_loss", cfg.quality.max_data_loss},
                    {"min_gts", cfg.quality.min_gts}};
    j["salmap"] = {{"sigma_px", cfg.salmap.sigma_px},
                   {"rel_threshold", cfg.salmap.rel_threshold},
                   {"min_area", cfg.salmap.min_area},
                   {"weighting", cfg.salmap.weighting == FixationWeighting::Duration ? "duration"
                                                                                     : "count"}};
    j["loss"] = {{"w_kl", cfg.loss.w_kl}, {"w_cc", cfg.loss.w_cc}, {"w_nss", cfg.loss.w_nss}};
    j["train"] = {{"lr0", cfg.train.lr0},
                  {"decay_factor", cfg.train.decay_factor},
                  {"decay_every_epochs", cfg.train.decay_every_epochs},
                  {"epochs", cfg.train.epochs},
                  {"seed", cfg.train.seed},
                  {"batch", cfg.train.batch},
                  {"resolution", cfg.train.resolution}};
    return j.dump(2) + "\n";
}

}  // namespace gazekit
