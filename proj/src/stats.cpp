#include "gazekit/stats.hpp"

#include <algorithm>
#include <cmath>

#include "gazekit/error.hpp"

namespace gazekit {

PairedT paired_t(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw PreconditionError("paired samples differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw PreconditionError("paired t-test needs at least two pairs");

    double mean = 0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0) throw DegenerateError("paired differences have zero variance");
    return PairedT{mean / (sd / std::sqrt(static_cast<double>(n))), static_cast<int>(n - 1)};
}

RmAnovaResult rm_anova(const std::vector<std::vector<double>>& data) {
    const std::size_t n = data.size();
    if (n < 2) throw PreconditionError("repeated-measures ANOVA needs at least two subjects");
    const std::size_t k = data[0].size();
    if (k < 2) throw PreconditionError("repeated-measures ANOVA needs at least two conditions");
    for (const auto& row : data) {
        if (row.size() != k) throw PreconditionError("incomplete subject x condition matrix");
        for (double v : row)
            if (!std::isfinite(v)) throw PreconditionError("missing or non-finite cell");
    }

    double grand = 0;
    std::vector<double> subj(n, 0.0), cond(k, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            grand += data[i][j];
            subj[i] += data[i][j];
            cond[j] += data[i][j];
        }
    }
    grand /= static_cast<double>(n * k);
    for (auto& s : subj) s /= static_cast<double>(k);
    for (auto& c : cond) c /= static_cast<double>(n);

    RmAnovaResult r;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            const double d = data[i][j] - grand;
            r.ss_total += d * d;
            const double e = data[i][j] - subj[i] - cond[j] + grand;
            r.ss_error += e * e;
        }
    }
    for (double s : subj) r.ss_subject += static_cast<double>(k) * (s - grand) * (s - grand);
    const bool flat = std::all_of(cond.begin(), cond.end(), [&](double c) { return c == cond[0]; });
    if (!flat) {
        for (double c : cond) r.ss_treatment += static_cast<double>(n) * (c - grand) * (c - grand);
    }
    r.df1 = static_cast<int>(k - 1);
    r.df2 = static_cast<int>((k - 1) * (n - 1));
    if (r.ss_treatment == 0) {
        r.f = 0;
    } else if (r.ss_error == 0) {
        throw DegenerateError("error sum of squares is zero; F is undefined");
    } else {
        r.f = (r.ss_treatment / r.df1) / (r.ss_error / r.df2);
    }
    return r;
}

std::vector<ConditionSummary> condition_means(
    const std::map<CognitiveLoad, std::vector<double>>& groups) {
    std::vector<ConditionSummary> out;
    for (const auto& [cond, values] : groups) {  // std::map keeps enum order
        if (values.empty()) throw PreconditionError("empty condition group");
        ConditionSummary s;
        s.condition = cond;
        s.n = values.size();
        for (double v : values) s.mean += v;
        s.mean /= static_cast<double>(s.n);
        if (s.n > 1) {
            double ss = 0;
            for (double v : values) ss += (v - s.mean) * (v - s.mean);
            s.sd = std::sqrt(ss / static_cast<double>(s.n - 1));
        }
        out.push_back(s);
    }
    return out;
}

}  // namespace gazekit
