#pragma once

#include <filesystem>
#include <string>

#include "kdetect/eval.hpp"
#include "kdetect/net.hpp"
#include "kdetect/phantom.hpp"
#include "kdetect/preprocess.hpp"
#include "kdetect/selftrain.hpp"

namespace kdetect {

// Declarative run configuration. Every section and field is optional in the
// file and falls back to the defaults of the underlying structs; unknown
// keys are rejected so typos fail fast.
struct PipelineConfig {
    std::filesystem::path data_root;
    std::filesystem::path output_root;
    NormalizationParams normalization;
    // ingestion applies geometry first by default; flip to normalize on the
    // native grid before resampling
    bool normalize_before_resample = false;
    TrainConfig train;
    EvalConfig eval;
    SelfTrainPlan selftrain;
    CorpusSpec phantom;
    std::string log_level = "info";
};

PipelineConfig parse_pipeline_config(const std::string& json_text);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Full-range validation plus path resolution checks (data_root must exist).
void validate(const PipelineConfig& cfg, bool require_paths = true);

}  // namespace kdetect
