#pragma once

#include <optional>
#include <string>
#include <vector>

#include "coherent/config.hpp"
#include "coherent/dataset.hpp"
#include "coherent/explain.hpp"
#include "coherent/metrics.hpp"
#include "coherent/training.hpp"

namespace coherent {

// Library entry points behind the CLI subcommands, shared with the test
// suites so every surface can be exercised in process.

struct SynthArgs {
    int n = 200;
    std::uint64_t seed = 0;
    std::string out_dir;
    SyntheticSpec spec;
};

DatasetManifest cmd_synth(const SynthArgs& args);

struct ManifestSummary {
    int rows = 0;
    int train = 0, val = 0, test = 0;
    int with_mask = 0;
};

// Parses the manifest, checks files, and decodes every sample once.
ManifestSummary cmd_validate_manifest(const std::string& path, const RunConfig& config);

struct TrainOutcome {
    TrainResult result;
    PreparedData data;
    CheckpointMeta meta;
    EvalSummary test_summary;          // with best-validation parameters
    std::string config_echo_path;
};

TrainOutcome cmd_train(const RunConfig& config);

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string split = "test";
    std::string report_path;
    std::string compare_checkpoint;  // optional second model for DSC
    RunConfig config;                // threads / quantile / agreement / mask_dir
};

struct EvalOutcome {
    EvalSummary summary;
    std::map<int, double> patch_cosine_per_concept;
    std::map<int, double> dsc_per_concept;  // only with compare_checkpoint
    std::vector<double> thresholds;
    std::string report_json;  // serialized report
};

EvalOutcome cmd_eval(const EvalArgs& args);

struct ExplainArgs {
    std::string checkpoint;
    std::string image_path;
    std::string mask_path;  // required by the masked modes
    std::string out_dir = "explain_out";
    double report_threshold = 0.01;
};

ExplanationReport cmd_explain(const ExplainArgs& args);

struct AblationRow {
    std::string variant;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double concept_f1 = 0.0;
    double in_mask_fraction = 0.0;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::string text;  // aligned text rendering
};

// The seven-variant loss grid, by weight-zeroing.
AblationTable cmd_ablate_losses(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                bool parallel = false);

// Raw vs masked preprocessing under one seed.
AblationTable cmd_ablate_segmentation(const RunConfig& base);

std::vector<std::string> ablation_variant_names();

}  // namespace coherent
