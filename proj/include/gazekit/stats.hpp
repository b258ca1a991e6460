#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "gazekit/types.hpp"

namespace gazekit {

struct PairedT {
    double t = 0;
    int df = 0;
};

// Paired t-test on a - b.
PairedT paired_t(std::span<const double> a, std::span<const double> b);

struct RmAnovaResult {
    double f = 0;
    int df1 = 0;
    int df2 = 0;
    double ss_treatment = 0;
    double ss_error = 0;
    double ss_subject = 0;
    double ss_total = 0;
};

// data[subject][condition]; every row must have the same number of conditions.
RmAnovaResult rm_anova(const std::vector<std::vector<double>>& data);

struct ConditionSummary {
    CognitiveLoad condition = CognitiveLoad::Absent;
    std::size_t n = 0;
    double mean = 0;
    std::optional<double> sd;  // sample sd; absent for n == 1
};

// Output ordered Absent < Low < High.
std::vector<ConditionSummary> condition_means(
    const std::map<CognitiveLoad, std::vector<double>>& groups);

}  // namespace gazekit
