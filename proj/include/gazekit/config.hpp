#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "gazekit/dynmodel.hpp"
#include "gazekit/fixation.hpp"
#include "gazekit/preprocess.hpp"
#include "gazekit/salmap.hpp"
#include "gazekit/types.hpp"

namespace gazekit {

struct PipelineConfig {
    ScreenGeometry geometry = ScreenGeometry::from_diagonal(25.5, 2560, 1440, 70);
    WooParams woo;
    FixParams fixation;
    QualityGate quality;
    SalmapParams salmap;
    dyn::LossWeights loss;
    dyn::TrainConfig train;

    void validate() const;
};

// Missing keys keep their defaults; unknown keys are ValidationErrors.
PipelineConfig parse_config(std::string_view json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string format_config(const PipelineConfig& cfg);

}  // namespace gazekit
