#pragma once

#include "defence/fenceseg.hpp"
#include "defence/fusion.hpp"
#include "defence/occflow.hpp"

#include <string>

namespace defence {

struct PipelineConfig {
    SegmentationParams segment;
    FlowParams flow;
    double lambda = 0.0005;
    double eps_stop = 0.0;
    int max_iters = 500;
    int power_iters = 20;
    unsigned seed = 0;

    PipelineParams pipeline_params() const;
};

// Strict JSON schema: unknown keys and out-of-range values are rejected
// with the offending key named.
PipelineConfig parse_config_file(const std::string& path);
PipelineConfig parse_config_text(const std::string& json_text);
std::string config_to_json(const PipelineConfig& cfg);

}  // namespace defence
