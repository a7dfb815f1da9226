#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "coherent/dataset.hpp"
#include "coherent/losses.hpp"
#include "coherent/model.hpp"
#include "coherent/preprocess.hpp"

namespace coherent {

// Three-stage optimization schedule. Stage 1 trains the concept encoder and
// heads on frozen backbone features, stage 2 trains the whole network,
// stage 3 fine-tunes only the classifier.
struct StageSchedule {
    int epochs[3] = {20, 40, 10};
    double learning_rates[3] = {1e-3, 1e-4, 1e-4};
    std::vector<std::string> frozen_groups[3] = {
        {"backbone"},
        {},
        {"backbone", "encoder", "embed_visual", "embed_text"},
    };

    void validate(const std::vector<std::string>& known_groups) const;
};

struct TrainOptions {
    int batch_size = 16;
    std::uint64_t seed = 0;
    int threads = 1;               // deterministic for any value
    bool flip_augment = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    std::string out_dir;           // when set: checkpoints + JSON-line logs
    bool verbose = false;
};

// One sample after preprocessing: hard-attention input, coherence targets at
// feature resolution, label and concept vector.
struct PreparedSample {
    std::string id;
    Tensor input;
    Tensor targets;  // k x p x q; empty when the sample has no mask
    std::vector<double> z;
    int label = 0;
    bool has_mask = false;
};

struct PreparedData {
    std::vector<PreparedSample> train;
    std::vector<PreparedSample> val;
    std::vector<PreparedSample> test;
};

// Applies the preprocessing mode (hard attention for the masked modes) and
// builds coherence targets. `mask_dir` feeds the external segmenter.
PreparedData prepare_data(const std::vector<Sample>& samples, PreprocessMode mode,
                          const std::string& mask_dir, const FeatureDims& dims);

struct EpochMetrics {
    int stage = 0;
    int epoch = 0;       // running epoch counter across stages
    double mean_total = 0.0;
    double val_accuracy = 0.0;
    double val_concept_f1 = 0.0;
};

struct TrainResult {
    ConceptModel model;                 // final parameters
    std::vector<Tensor> best_params;    // snapshot with the highest val accuracy
    double best_val_accuracy = 0.0;
    int best_epoch = -1;
    std::vector<EpochMetrics> history;
    std::string best_checkpoint_path;
    std::string final_checkpoint_path;
};

// Per-tensor freeze mask from group names; unknown names are config errors.
std::vector<bool> make_frozen_mask(ConceptModel& model,
                                   const std::vector<std::string>& frozen_groups);

void copy_params_into(ConceptModel& model, const std::vector<Tensor>& params);
std::vector<Tensor> snapshot_params(const ConceptModel& model);

class Adam {
public:
    Adam(const std::vector<ParamRef>& params, double beta1, double beta2, double eps);
    void step(const std::vector<ParamRef>& params, const ModelGrads& grads,
              const std::vector<bool>& frozen, double lr);

private:
    std::vector<Tensor> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

// Runs the full three-stage schedule. Deterministic in (config, seed): the
// epoch order, dropout masks and pairing rings are all derived from the seed,
// and gradient reduction order is fixed regardless of `threads`.
TrainResult train_model(const PreparedData& data, const ModelConfig& model_config,
                        const LossConfig& loss_config, const StageSchedule& schedule,
                        const ConceptPhraseEmbedding& phrases, const TrainOptions& options,
                        const CheckpointMeta& meta_template);

}  // namespace coherent
