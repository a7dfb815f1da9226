#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "coherent/losses.hpp"
#include "coherent/model.hpp"
#include "coherent/preprocess.hpp"
#include "coherent/training.hpp"

namespace coherent {

// Every knob of a run, with documented defaults. Parsed from a flat
// `key = value` file (# comments) and/or CLI flags; unknown keys are errors.
struct RunConfig {
    // Data
    std::string manifest;
    std::string out_dir = "run_out";
    int input_size = 128;            // use 224 for the real datasets
    std::string preprocess = "manual-oracle";  // raw | external-segmenter | manual-oracle
    std::string mask_dir;            // external-segmenter mask lookup
    std::string label_map;           // "raw label=index,..." for text labels
    int num_classes = 2;
    std::string class_names = "Nevus,Melanoma";

    // Model
    std::string backbone = "tiny";
    std::string backbone_weights;
    std::string word_vectors = "random:1";  // GloVe-format file or random:<seed>
    int phrase_dim = 200;            // used by the random: sentinel
    int embed_dim = 128;             // d_e
    double dropout = 0.5;

    // Losses
    double lambda = 0.4;
    std::string gamma = "auto";      // number, or auto: 0.25 masked modes / 0.1 raw
    double alpha = 1.0;
    double beta = 0.5;
    double epsilon = 1e-6;
    double absent_penalty_weight = 1.0;
    std::string dice_denominator = "sum";  // sum | product
    int enable_uniqueness = 1;
    int enable_mapping = 1;

    // Schedule
    int stage1_epochs = 20;
    int stage2_epochs = 40;
    int stage3_epochs = 10;
    double lr1 = 1e-3;
    double lr2 = 1e-4;
    double lr3 = 1e-4;

    // Optimization
    int batch_size = 16;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    int flip_augment = 0;
    std::uint64_t seed = 0;
    int threads = 0;                 // 0 = hardware concurrency

    // Evaluation / reporting
    double quantile = 0.7;           // activation-map binarization
    double report_threshold = 0.01;  // "null contribution" cutoff in text
    std::string agreement = "both_correct";  // both_correct | both_present
    std::string l2_aggregation = "sum";      // headline L2: sum | mean

    // Derived accessors -----------------------------------------------------
    PreprocessMode preprocess_mode() const;
    double resolved_gamma() const;
    LossConfig loss_config() const;
    StageSchedule stage_schedule() const;
    ModelConfig model_config(int vocab_size, int actual_phrase_dim) const;
    TrainOptions train_options() const;
    std::map<std::string, int> parsed_label_map() const;
    std::vector<std::string> parsed_class_names() const;
    int resolved_threads() const;

    void validate() const;
    std::string serialize() const;       // canonical key=value form
    std::string hash() const;            // stable hash of serialize()
};

// Applies `key = value` pairs from a config file; unknown keys throw.
void apply_config_file(RunConfig& config, const std::string& path);
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);
void write_config(const RunConfig& config, const std::string& path);

}  // namespace coherent
