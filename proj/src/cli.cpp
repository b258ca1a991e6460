#include "gazekit/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "gazekit/aoimetrics.hpp"
#include "gazekit/config.hpp"
#include "gazekit/dynmodel.hpp"
#include "gazekit/error.hpp"
#include "gazekit/pipeline.hpp"
#include "gazekit/saleval.hpp"
#include "gazekit/simgen.hpp"
#include "gazekit/stats.hpp"
#include "gazekit/textio.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace gazekit::cli {

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Globals {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    int jobs = 1;
};

using Paths = std::vector<fs::path>;

fs::path require_out(const Globals& g, const char* cmd) {
    if (g.out.empty()) throw UsageError(std::string(cmd) + ": --out is required");
    return g.out;
}

// --config, then GAZEKIT_CONFIG, then a config.json at the dataset root, then
// built-in defaults.
PipelineConfig resolve_config(const Globals& g, const std::optional<fs::path>& dataset,
                              std::ostream& err) {
    fs::path path;
    if (!g.config.empty()) {
        path = g.config;
    } else if (const char* env = std::getenv("GAZEKIT_CONFIG"); env && *env) {
        path = env;
    } else if (dataset && fs::is_regular_file(*dataset / "config.json")) {
        path = *dataset / "config.json";
    }
    PipelineConfig cfg;
    if (!path.empty()) {
        cfg = load_config(path);
        err << "config: " << path.string() << "\n";
    }
    if (g.seed_set) cfg.train.seed = g.seed;
    return cfg;
}

std::string fmt(double v, int digits = 3) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

fs::path resolve_rel(const fs::path& base, std::string_view p) {
    fs::path q{std::string(textio::trim(p))};
    return q.is_absolute() ? q : base / q;
}

// ---- validate ----

int cmd_validate(const Globals& g, const fs::path& root, std::ostream& out, std::ostream& err) {
    const auto report = validate_dataset(root);
    err << report.trial_count << " trials, " << report.valid_count << " valid, "
        << report.errors.size() << " errors\n";
    for (const auto& e : report.errors) err << "  " << e << "\n";
    if (!g.out.empty()) {
        ojson j;
        j["dataset"] = root.string();
        j["trial_count"] = report.trial_count;
        j["valid_count"] = report.valid_count;
        j["per_condition"] = ojson::array();
        for (const auto& [key, n] : report.per_condition)
            j["per_condition"].push_back({{"ht", std::string(to_string(key.first))},
                                          {"cl", std::string(to_string(key.second))},
                                          {"trials", n}});
        j["errors"] = report.errors;
        const fs::path p = fs::path(g.out) / "validation.json";
        textio::write_file(p, j.dump(2) + "\n");
        out << p.string() << "\n";
    }
    return report.errors.empty() ? kExitOk : kExitDataError;
}

// ---- eval ----

std::string scores_csv_row(const EvalScores& s) {
    return textio::format_optional(s.auc) + ',' + textio::format_double(s.cc) + ',' +
           textio::format_double(s.nss) + ',' + textio::format_double(s.sim) + ',' +
           textio::format_double(s.kl);
}

std::string scores_human(const EvalScores& s) {
    return "AUC=" + (s.auc ? fmt(*s.auc) : std::string("NA")) + " CC=" + fmt(s.cc) +
           " NSS=" + fmt(s.nss) + " SIM=" + fmt(s.sim) + " KL=" + fmt(s.kl);
}

EvalScores eval_files(const fs::path& pred_path, const fs::path& gt_path, const fs::path& fix_path,
                      bool& resized) {
    auto pred = load_map_pgm(pred_path);
    const auto gt = load_map_pgm(gt_path);
    resized = pred.w != gt.w || pred.h != gt.h;
    if (resized) pred = dyn::resize_bilinear(pred, gt.w, gt.h);
    const auto fix = load_fixation_set(fix_path, gt.w, gt.h);
    return evaluate(pred, gt, fix);
}

ojson eval_metadata() {
    return {{"map_input", "PGM scaled to [0, 1] by maxval"},
            {"resize", "bilinear, prediction to ground-truth size when they differ"},
            {"kl_cc_sim_normalization", "maps normalised to unit sum inside KL and SIM"},
            {"kl_epsilon", kKlEpsilon},
            {"nss_sd", "population"}};
}

int cmd_eval(const Globals& g, const std::string& pred, const std::string& gt,
             const std::string& fix, const std::string& manifest, std::ostream& out,
             std::ostream& err) {
    const std::string header = "AUC,CC,NSS,SIM,KL\n";
    if (!manifest.empty()) {
        if (!pred.empty() || !gt.empty() || !fix.empty())
            throw UsageError("eval: --manifest excludes --pred/--gt/--fix");
        const fs::path outdir = require_out(g, "eval");
        const fs::path mpath(manifest);
        const auto lines = textio::read_lines(mpath);
        if (lines.empty() || textio::trim(lines[0]) != "pred_path,gt_path,fix_path")
            throw FormatError(manifest + ": header must be 'pred_path,gt_path,fix_path'");
        struct Row {
            fs::path pred, gt, fix;
            EvalScores s;
            bool resized = false;
        };
        std::vector<Row> rows;
        for (std::size_t i = 1; i < lines.size(); ++i) {
            if (textio::trim(lines[i]).empty()) continue;
            const auto c = textio::split(lines[i]);
            if (c.size() != 3)
                throw FormatError(manifest + ": row " + std::to_string(i) + " needs 3 fields");
            const fs::path base = mpath.parent_path();
            rows.push_back({resolve_rel(base, c[0]), resolve_rel(base, c[1]),
                            resolve_rel(base, c[2]), {}, false});
        }
        pipeline::parallel_for(rows.size(), g.jobs, [&](std::size_t i) {
            rows[i].s = eval_files(rows[i].pred, rows[i].gt, rows[i].fix, rows[i].resized);
        });
        std::string csv = "pred_path," + header;
        double sums[5] = {0, 0, 0, 0, 0};
        std::size_t n_auc = 0;
        std::size_t n_resized = 0;
        for (const auto& r : rows) {
            csv += r.pred.string() + ',' + scores_csv_row(r.s) + '\n';
            if (r.s.auc) {
                sums[0] += *r.s.auc;
                ++n_auc;
            }
            sums[1] += r.s.cc;
            sums[2] += r.s.nss;
            sums[3] += r.s.sim;
            sums[4] += r.s.kl;
            n_resized += r.resized ? 1 : 0;
        }
        const fs::path csv_path = outdir / "scores.csv";
        const fs::path json_path = outdir / "scores.json";
        textio::write_file(csv_path, csv);
        ojson j;
        j["rows"] = rows.size();
        j["resized_predictions"] = n_resized;
        j["preprocessing"] = eval_metadata();
        if (!rows.empty()) {
            const double n = static_cast<double>(rows.size());
            j["mean"] = {{"AUC", n_auc ? ojson(sums[0] / static_cast<double>(n_auc)) : ojson()},
                         {"CC", sums[1] / n},
                         {"NSS", sums[2] / n},
                         {"SIM", sums[3] / n},
                         {"KL", sums[4] / n}};
            err << rows.size() << " pairs; mean CC=" << fmt(sums[1] / n)
                << " NSS=" << fmt(sums[2] / n) << " SIM=" << fmt(sums[3] / n)
                << " KL=" << fmt(sums[4] / n) << "\n";
        }
        textio::write_file(json_path, j.dump(2) + "\n");
        out << csv_path.string() << "\n" << json_path.string() << "\n";
        return kExitOk;
    }

    if (pred.empty() || gt.empty() || fix.empty())
        throw UsageError("eval: need --pred, --gt and --fix, or --manifest");
    bool resized = false;
    const auto s = eval_files(pred, gt, fix, resized);
    err << scores_human(s) << "\n";
    const std::string csv = header + scores_csv_row(s) + "\n";
    if (g.out.empty()) {
        out << csv;
    } else {
        const fs::path p = fs::path(g.out) / "scores.csv";
        textio::write_file(p, csv);
        out << p.string() << "\n";
    }
    return kExitOk;
}

// ---- train ----

std::vector<dyn::TrainSample> load_training_manifest(const fs::path& mpath, int res) {
    const auto lines = textio::read_lines(mpath);
    if (lines.empty() || textio::trim(lines[0]) != "input_a,input_b,gt_map,fix_set")
        throw FormatError(mpath.string() + ": header must be 'input_a,input_b,gt_map,fix_set'");
    const fs::path base = mpath.parent_path();
    std::vector<dyn::TrainSample> data;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (textio::trim(lines[i]).empty()) continue;
        const auto c = textio::split(lines[i]);
        if (c.size() != 4)
            throw FormatError(mpath.string() + ": row " + std::to_string(i) + " needs 4 fields");
        dyn::TrainSample s;
        const auto a = dyn::resize_bilinear(dyn::to_tensor(read_pnm(resolve_rel(base, c[0]))), res, res);
        if (textio::trim(c[1]).empty()) {
            s.input = a;
        } else {
            const auto b =
                dyn::resize_bilinear(dyn::to_tensor(read_pnm(resolve_rel(base, c[1]))), res, res);
            s.input = dyn::assemble_pair(a, b);
        }
        const auto gt = load_map_pgm(resolve_rel(base, c[2]));
        s.gt = dyn::resize_bilinear(gt, res, res);
        const auto fix = load_fixation_set(resolve_rel(base, c[3]), gt.w, gt.h);
        s.fix = FixationSet(res, res);
        for (int y = 0; y < gt.h; ++y)
            for (int x = 0; x < gt.w; ++x)
                if (fix.at(x, y)) s.fix.mark(x * res / gt.w, y * res / gt.h);
        data.push_back(std::move(s));
    }
    if (data.empty()) throw ValidationError(mpath.string() + ": no training rows");
    return data;
}

struct TrainArgs {
    std::string manifest;
    int synthetic = 0;
    std::optional<int> epochs, batch, resolution;
    std::optional<double> lr0;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out, std::ostream& err) {
    if (a.manifest.empty() == (a.synthetic <= 0))
        throw UsageError("train: give exactly one of --manifest or --synthetic N");
    const fs::path outdir = require_out(g, "train");
    auto cfg = resolve_config(g, std::nullopt, err);
    if (a.epochs) cfg.train.epochs = *a.epochs;
    if (a.batch) cfg.train.batch = *a.batch;
    if (a.resolution) cfg.train.resolution = *a.resolution;
    if (a.lr0) cfg.train.lr0 = *a.lr0;
    cfg.validate();

    const auto data = a.manifest.empty()
                          ? synth::synth_training_set(static_cast<std::size_t>(a.synthetic),
                                                    cfg.train.resolution, cfg.train.seed)
                          : load_training_manifest(a.manifest, cfg.train.resolution);
    const auto res = dyn::train(data, cfg.train, cfg.loss);

    std::string hist = "epoch,lr,loss\n";
    for (std::size_t e = 0; e < res.history.size(); ++e) {
        hist += std::to_string(e) + ',' +
                textio::format_double(dyn::learning_rate(cfg.train, static_cast<int>(e))) + ',' +
                textio::format_double(res.history[e]) + '\n';
    }
    const fs::path model = outdir / "model.gkmp";
    const fs::path hist_path = outdir / "history.csv";
    const fs::path summary = outdir / "train.json";
    dyn::save_checkpoint(model, res.params);
    textio::write_file(hist_path, hist);
    ojson j;
    j["samples"] = data.size();
    j["steps"] = res.steps;
    j["initial_eval_loss"] = res.initial_eval_loss;
    j["final_eval_loss"] = res.final_eval_loss;
    j["loss_weights"] = {{"w_kl", cfg.loss.w_kl}, {"w_cc", cfg.loss.w_cc}, {"w_nss", cfg.loss.w_nss}};
    j["train"] = {{"lr0", cfg.train.lr0},
                  {"decay_factor", cfg.train.decay_factor},
                  {"decay_every_epochs", cfg.train.decay_every_epochs},
                  {"epochs", cfg.train.epochs},
                  {"seed", cfg.train.seed},
                  {"batch", cfg.train.batch},
                  {"resolution", cfg.train.resolution}};
    j["gt_normalization"] = "unit sum inside the loss";
    textio::write_file(summary, j.dump(2) + "\n");
    err << data.size() << " samples, " << res.steps << " steps, eval loss "
        << fmt(res.initial_eval_loss, 4) << " -> " << fmt(res.final_eval_loss, 4) << "\n";
    out << model.string() << "\n" << hist_path.string() << "\n" << summary.string() << "\n";
    return kExitOk;
}

// ---- gradcheck ----

int cmd_gradcheck(const Globals& g, int channels, double corruption, std::ostream& out,
                  std::ostream& err) {
    const auto cfg = resolve_config(g, std::nullopt, err);
    const std::uint64_t seed = g.seed_set ? g.seed : cfg.train.seed;
    const auto fixture = synth::synth_training_set(1, 16, seed, channels).front();
    const auto params = dyn::init_params(seed);
    dyn::GradCheckOptions opts;
    opts.enc2_corruption = corruption;
    const auto rep = dyn::grad_check(params, fixture.input, fixture.gt, fixture.fix, cfg.loss, opts);
    constexpr double kTolerance = 1e-4;
    const bool pass = rep.max_rel_error < kTolerance;
    err << "max relative error " << textio::format_double(rep.max_rel_error) << " at "
        << rep.worst_param << "[" << rep.worst_index << "] over " << rep.checked
        << " parameters: " << (pass ? "ok" : "FAIL") << "\n";
    ojson j;
    j["seed"] = seed;
    j["channels"] = channels;
    j["max_rel_error"] = rep.max_rel_error;
    j["worst_param"] = rep.worst_param;
    j["worst_index"] = rep.worst_index;
    j["checked"] = rep.checked;
    j["tolerance"] = kTolerance;
    j["pass"] = pass;
    if (g.out.empty()) {
        out << j.dump() << "\n";
    } else {
        const fs::path p = fs::path(g.out) / "gradcheck.json";
        textio::write_file(p, j.dump(2) + "\n");
        out << p.string() << "\n";
    }
    return pass ? kExitOk : kExitDataError;
}

// ---- simgen ----

int cmd_simgen(const Globals& g, int trials, const synth::DatasetOptions& opts, std::ostream& out,
               std::ostream& err) {
    if (trials < 0) throw UsageError("simgen: --trials must be non-negative");
    const fs::path root = require_out(g, "simgen");
    const std::uint64_t seed = g.seed_set ? g.seed : 1;
    const auto manifest = synth::synth_dataset(static_cast<std::size_t>(trials), root, seed, opts);
    Paths files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out << f.string() << "\n";
    err << manifest.trials.size() << " trials written to " << root.string() << "\n";
    return kExitOk;
}

// ---- stats ----

std::optional<double> measure_of(const MetricsRow& r, const std::string& m) {
    if (m == "n_fix") return static_cast<double>(r.n_fix);
    if (m == "avg_fix_dur_ms") return r.avg_fix_dur_ms;
    if (m == "n_regions") return static_cast<double>(r.n_regions);
    if (m == "aoi_hit") return r.aoi_hit ? 1.0 : 0.0;
    if (m == "ttff_ms") return r.ttff_ms;
    if (m == "dflf_px") return r.dflf_px;
    throw UsageError("stats: unknown measure '" + m + "'");
}

int cmd_stats(const Globals& g, const std::string& metrics, const std::string& measure,
              std::ostream& out, std::ostream& err) {
    const auto rows = parse_metrics_csv(textio::read_file(metrics));
    // participant -> condition -> values
    std::map<std::string, std::map<CognitiveLoad, std::vector<double>>> per_subject;
    std::map<CognitiveLoad, std::vector<double>> pooled;
    for (const auto& r : rows) {
        if (const auto v = measure_of(r, measure)) {
            per_subject[r.participant][r.cl].push_back(*v);
            pooled[r.cl].push_back(*v);
        }
    }
    const CognitiveLoad levels[3] = {CognitiveLoad::Absent, CognitiveLoad::Low, CognitiveLoad::High};
    std::vector<std::vector<double>> table;
    for (const auto& [subject, by_cl] : per_subject) {
        if (by_cl.size() != 3) continue;
        std::vector<double> row;
        for (auto cl : levels) {
            const auto& v = by_cl.at(cl);
            double s = 0;
            for (double x : v) s += x;
            row.push_back(s / static_cast<double>(v.size()));
        }
        table.push_back(std::move(row));
    }

    ojson j;
    j["measure"] = measure;
    j["subjects"] = table.size();
    j["condition_means"] = ojson::array();
    for (const auto& c : condition_means(pooled)) {
        j["condition_means"].push_back({{"cl", std::string(to_string(c.condition))},
                                        {"n", c.n},
                                        {"mean", c.mean},
                                        {"sd", c.sd ? ojson(*c.sd) : ojson()}});
    }
    if (table.size() >= 2) {
        const auto a = rm_anova(table);
        j["rm_anova"] = {{"f", a.f}, {"df1", a.df1}, {"df2", a.df2},
                         {"ss_treatment", a.ss_treatment}, {"ss_error", a.ss_error}};
        err << measure << ": F(" << a.df1 << ", " << a.df2 << ") = " << fmt(a.f) << "\n";
        j["paired_t"] = ojson::array();
        for (int x = 0; x < 3; ++x) {
            for (int y = x + 1; y < 3; ++y) {
                std::vector<double> va, vb;
                for (const auto& row : table) {
                    va.push_back(row[static_cast<std::size_t>(x)]);
                    vb.push_back(row[static_cast<std::size_t>(y)]);
                }
                const auto t = paired_t(va, vb);
                j["paired_t"].push_back({{"a", std::string(to_string(levels[x]))},
                                         {"b", std::string(to_string(levels[y]))},
                                         {"t", t.t},
                                         {"df", t.df}});
            }
        }
    } else {
        err << measure << ": fewer than two subjects with all three load conditions\n";
    }
    if (g.out.empty()) {
        out << j.dump() << "\n";
    } else {
        const fs::path p = fs::path(g.out) / ("stats_" + measure + ".json");
        textio::write_file(p, j.dump(2) + "\n");
        out << p.string() << "\n";
    }
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"gazekit: eye-tracking saliency pipeline", "gazekit"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "pipeline config JSON");
    auto* seed_opt = app.add_option("--seed", g.seed, "seed (u64)");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--jobs", g.jobs, "worker threads")->check(CLI::PositiveNumber);

    std::string dataset, from;

    auto* validate = app.add_subcommand("validate", "check a dataset layout");
    validate->add_option("dataset", dataset)->required();

    struct Stage {
        const char* name;
        const char* help;
        Paths (*fn)(const pipeline::StageOptions&, const PipelineConfig&);
    };
    const Stage stages[] = {
        {"preprocess", "outlier correction and smoothing", pipeline::stage_preprocess},
        {"fixations", "fixation detection and quality gating", pipeline::stage_fixations},
        {"heatmap", "per-trial and per-stimulus fixation maps", pipeline::stage_heatmap},
        {"regions", "salient region extraction", pipeline::stage_regions},
        {"metrics", "per-trial attention metrics and rank statistics", pipeline::stage_metrics},
    };
    std::vector<CLI::App*> stage_cmds;
    for (const auto& s : stages) {
        auto* c = app.add_subcommand(s.name, s.help);
        c->add_option("dataset", dataset)->required();
        c->add_option("--from", from, "output directory of the previous stage");
        stage_cmds.push_back(c);
    }

    std::string pred, gt, fix, eval_manifest;
    auto* eval = app.add_subcommand("eval", "saliency metrics for one map or a manifest");
    eval->add_option("--pred", pred);
    eval->add_option("--gt", gt);
    eval->add_option("--fix", fix);
    eval->add_option("--manifest", eval_manifest, "CSV of pred_path,gt_path,fix_path");

    TrainArgs ta;
    int epochs = 0, batch = 0, resolution = 0;
    double lr0 = 0;
    auto* train = app.add_subcommand("train", "train the paired-input model");
    train->add_option("--manifest", ta.manifest, "CSV of input_a,input_b,gt_map,fix_set");
    train->add_option("--synthetic", ta.synthetic, "generate N highlight pairs");
    auto* epochs_opt = train->add_option("--epochs", epochs);
    auto* batch_opt = train->add_option("--batch", batch);
    auto* res_opt = train->add_option("--resolution", resolution);
    auto* lr_opt = train->add_option("--lr0", lr0);

    int channels = 6;
    double corruption = 1.0;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--channels", channels)->check(CLI::IsMember({3, 6}));
    gradcheck->add_option("--corrupt-enc2", corruption, "scale the analytic enc2 gradient");

    int trials = 0;
    synth::DatasetOptions sopts;
    auto* simgen = app.add_subcommand("simgen", "write a synthetic dataset");
    simgen->add_option("--trials", trials)->required();
    simgen->add_option("--noise", sopts.noise_sigma_deg, "gaze noise (deg)");
    simgen->add_option("--dropout", sopts.dropout_rate);
    simgen->add_option("--outliers", sopts.outliers_per_trial);

    std::string metrics_path, measure = "n_fix";
    auto* stats = app.add_subcommand("stats", "repeated-measures tests over a metrics CSV");
    stats->add_option("metrics", metrics_path)->required();
    stats->add_option("--measure", measure);

    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }
    g.seed_set = seed_opt->count() > 0;
    if (epochs_opt->count()) ta.epochs = epochs;
    if (batch_opt->count()) ta.batch = batch;
    if (res_opt->count()) ta.resolution = resolution;
    if (lr_opt->count()) ta.lr0 = lr0;

    try {
        if (validate->parsed()) return cmd_validate(g, dataset, out, err);
        for (std::size_t i = 0; i < stage_cmds.size(); ++i) {
            if (!stage_cmds[i]->parsed()) continue;
            pipeline::StageOptions o;
            o.dataset = dataset;
            o.out = require_out(g, stages[i].name);
            if (!from.empty()) o.from = fs::path(from);
            o.jobs = g.jobs;
            const auto cfg = resolve_config(g, o.dataset, err);
            const auto written = stages[i].fn(o, cfg);
            for (const auto& p : written) out << p.string() << "\n";
            err << stages[i].name << ": " << written.size() << " files\n";
            return kExitOk;
        }
        if (eval->parsed()) return cmd_eval(g, pred, gt, fix, eval_manifest, out, err);
        if (train->parsed()) return cmd_train(g, ta, out, err);
        if (gradcheck->parsed()) return cmd_gradcheck(g, channels, corruption, out, err);
        if (simgen->parsed()) return cmd_simgen(g, trials, sopts, out, err);
        if (stats->parsed()) return cmd_stats(g, metrics_path, measure, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitDataError;
    }
    err << app.help();
    return kExitUsage;
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

}  // namespace gazekit::cli
