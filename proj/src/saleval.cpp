#include "gazekit/saleval.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "gazekit/error.hpp"
#include "gazekit/textio.hpp"

namespace gazekit {

FixationSet::FixationSet(int width, int height)
    : w(width), h(height), fixated(static_cast<std::size_t>(width) * height, 0) {}

std::size_t FixationSet::count() const {
    return static_cast<std::size_t>(std::count(fixated.begin(), fixated.end(), 1));
}

FixationSet load_fixation_set(const std::filesystem::path& path, int w, int h) {
    const auto lines = textio::read_lines(path);
    if (lines.empty() || textio::trim(lines[0]) != "x,y")
        throw FormatError(path.string() + ": fixation set header must be 'x,y'");
    FixationSet fix(w, h);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (textio::trim(lines[i]).empty()) continue;
        const auto c = textio::split(lines[i]);
        const auto x = c.size() == 2 ? textio::parse_int(c[0]) : std::nullopt;
        const auto y = c.size() == 2 ? textio::parse_int(c[1]) : std::nullopt;
        if (!x || !y) throw FormatError(path.string() + ": bad row " + std::to_string(i));
        if (*x < 0 || *y < 0 || *x >= w || *y >= h)
            throw ValidationError(path.string() + ": fixation outside map at row " +
                                  std::to_string(i));
        fix.mark(static_cast<int>(*x), static_cast<int>(*y));
    }
    return fix;
}

void save_fixation_set(const std::filesystem::path& path, const FixationSet& fix) {
    std::string out = "x,y\n";
    for (int y = 0; y < fix.h; ++y)
        for (int x = 0; x < fix.w; ++x)
            if (fix.at(x, y)) out += std::to_string(x) + ',' + std::to_string(y) + '\n';
    textio::write_file(path, out);
}

namespace {

void require_same_dims(const SaliencyMap& a, const SaliencyMap& b) {
    if (a.w != b.w || a.h != b.h || a.size() != b.size() || a.size() == 0)
        throw PreconditionError("saliency maps must have equal, non-empty dimensions");
}

void require_same_dims(const SaliencyMap& a, const FixationSet& f) {
    if (a.w != f.w || a.h != f.h || a.size() != f.fixated.size())
        throw PreconditionError("fixation set dimensions differ from the map");
}

bool is_constant(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// Map divided by its sum; throws when the mass is not positive.
std::vector<double> as_distribution(const SaliencyMap& m, const char* which) {
    const double total = m.sum();
    if (!(total > 0)) throw DegenerateError(std::string(which) + " map has no mass");
    std::vector<double> p(m.values);
    for (double& x : p) x /= total;
    return p;
}

}  // namespace

double cc(const SaliencyMap& pred, const SaliencyMap& gt) {
    require_same_dims(pred, gt);
    if (is_constant(pred.values) || is_constant(gt.values))
        throw DegenerateError("correlation undefined for a constant map");
    const double mp = mean_of(pred.values);
    const double mg = mean_of(gt.values);
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double a = pred.values[i] - mp;
        const double b = gt.values[i] - mg;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
    }
    if (saa == 0 || sbb == 0) throw DegenerateError("correlation undefined for a constant map");
    return sab / std::sqrt(saa * sbb);
}

double kl(const SaliencyMap& pred, const SaliencyMap& gt) {
    require_same_dims(pred, gt);
    const auto g = as_distribution(gt, "ground-truth");
    const double pred_total = pred.sum();
    double out = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double p = pred_total > 0 ? pred.values[i] / pred_total : 0.0;
        out += g[i] * std::log(g[i] / (p + kKlEpsilon) + kKlEpsilon);
    }
    return out;
}

double sim(const SaliencyMap& pred, const SaliencyMap& gt) {
    require_same_dims(pred, gt);
    const auto p = as_distribution(pred, "predicted");
    const auto g = as_distribution(gt, "ground-truth");
    double out = 0;
    for (std::size_t i = 0; i < p.size(); ++i) out += std::min(p[i], g[i]);
    return out;
}

double nss(const SaliencyMap& pred, const FixationSet& fix, double std_offset) {
    require_same_dims(pred, fix);
    const double mu = mean_of(pred.values);
    double var = 0;
    for (double v : pred.values) var += (v - mu) * (v - mu);
    const double sd = is_constant(pred.values) ? 0.0 : std::sqrt(var / static_cast<double>(pred.size()));
    if (sd + std_offset == 0) throw DegenerateError("NSS undefined for a constant prediction");
    double acc = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!fix.fixated[i]) continue;
        acc += (pred.values[i] - mu) / (sd + std_offset);
        ++n;
    }
    if (n == 0) throw DegenerateError("NSS needs at least one fixation");
    return acc / static_cast<double>(n);
}

double auc_judd(const SaliencyMap& pred, const FixationSet& fix) {
    require_same_dims(pred, fix);
    std::vector<double> at_fix, rest;
    for (std::size_t i = 0; i < pred.size(); ++i)
        (fix.fixated[i] ? at_fix : rest).push_back(pred.values[i]);
    if (at_fix.empty() || rest.empty())
        throw DegenerateError("AUC needs both fixated and non-fixated pixels");
    std::sort(at_fix.begin(), at_fix.end(), std::greater<>());
    std::sort(rest.begin(), rest.end(), std::greater<>());

    const double n_fix = static_cast<double>(at_fix.size());
    const double n_rest = static_cast<double>(rest.size());
    double area = 0, prev_fpr = 0, prev_tpr = 0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < at_fix.size();) {
        const double thr = at_fix[i];
        while (tp < at_fix.size() && at_fix[tp] >= thr) ++tp;
        while (fp < rest.size() && rest[fp] >= thr) ++fp;
        const double tpr = static_cast<double>(tp) / n_fix;
        const double fpr = static_cast<double>(fp) / n_rest;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_fpr = fpr;
        prev_tpr = tpr;
        i = tp;
    }
    area += (1.0 - prev_fpr) * (1.0 + prev_tpr) / 2.0;
    return area;
}

EvalScores evaluate(const SaliencyMap& pred, const SaliencyMap& gt, const FixationSet& fix) {
    require_same_dims(pred, gt);
    require_same_dims(pred, fix);
    EvalScores s;
    const std::size_t n_fix = fix.count();
    if (n_fix > 0 && n_fix < fix.fixated.size()) s.auc = auc_judd(pred, fix);
    s.nss = nss(pred, fix);
    s.sim = sim(pred, gt);
    s.cc = cc(pred, gt);
    s.kl = kl(pred, gt);
    return s;
}

}  // namespace gazekit
