#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "coherent/layers.hpp"
#include "coherent/rng.hpp"
#include "coherent/tensor.hpp"
#include "coherent/vocab.hpp"

namespace coherent {

enum class BackboneKind { tiny, resnet101, densenet201, seresnext };

std::string backbone_kind_name(BackboneKind k);
BackboneKind parse_backbone_kind(const std::string& s);

struct FeatureDims {
    int channels = 0;  // n_f
    int p = 0;         // feature rows
    int q = 0;         // feature cols
};

// Feature extractor interface. The bundled implementation is a small
// train-from-scratch convnet; the ImageNet-scale kinds are accepted on the
// command line but require externally supplied weights (see build_backbone).
class Backbone {
public:
    virtual ~Backbone() = default;
    virtual FeatureDims feature_dims(int input_size) const = 0;
    // Returns per-block post-activation tensors; back() is the feature map.
    virtual std::vector<Tensor> forward(const Tensor& image) const = 0;
    virtual void backward(const Tensor& image, const std::vector<Tensor>& acts,
                          const Tensor& dfeatures, std::vector<Tensor>& param_grads) const = 0;
    virtual std::vector<Tensor*> parameters() = 0;
    virtual std::vector<std::string> parameter_names() const = 0;
    virtual void init(Rng& rng) = 0;
};

// Four 3x3 stride-2 conv blocks with ReLU: 3 -> 16 -> 32 -> 64 -> 128
// channels, spatial extent divided by 16 (128x128 input gives 128x8x8).
class TinyBackbone : public Backbone {
public:
    TinyBackbone();
    FeatureDims feature_dims(int input_size) const override;
    std::vector<Tensor> forward(const Tensor& image) const override;
    void backward(const Tensor& image, const std::vector<Tensor>& acts, const Tensor& dfeatures,
                  std::vector<Tensor>& param_grads) const override;
    std::vector<Tensor*> parameters() override;
    std::vector<std::string> parameter_names() const override;
    void init(Rng& rng) override;

private:
    std::vector<Conv2d> blocks_;
};

std::unique_ptr<Backbone> build_backbone(BackboneKind kind, const std::string& weights_path = "");

// Fixed per-concept word-phrase vectors (k x d), not trained.
struct ConceptPhraseEmbedding {
    Tensor vectors;  // k x d
    int dim = 0;
};

// Loads GloVe-style text vectors ("token f1 ... fd" per line); each phrase
// maps to the mean of its lowercased tokens' vectors. The sentinel
// `random:<seed>` produces deterministic unit-norm vectors keyed by
// (seed, phrase) for offline use. Relative paths are also tried under
// $COHERENT_CONCEPTS_CACHE.
ConceptPhraseEmbedding load_phrase_embeddings(const std::string& path,
                                              const ConceptVocabulary& vocab,
                                              int random_dim = 200);

struct ModelConfig {
    BackboneKind backbone = BackboneKind::tiny;
    int input_size = 128;
    int num_concepts = 8;
    int num_classes = 2;
    int phrase_dim = 200;   // d
    int embed_dim = 128;    // d_e
    double dropout_rate = 0.5;
};

// Everything a backward pass needs from one forward pass.
struct ForwardTrace {
    Tensor input;                      // masked image, channels x H x W
    std::vector<Tensor> backbone_acts; // per-block activations
    Tensor encoder_pre;                // k x p x q, pre-ReLU
    Tensor dropout_mask;               // empty in eval mode
    Tensor maps;                       // k x p x q, the concept maps A
    std::vector<double> logits;        // v, length k
    std::vector<double> class_scores;  // length |C|
    Tensor visual_embed;               // k x d_e
};

// Gradients of the loss w.r.t. the model outputs of one sample, fed back
// through ConceptModel::backward.
struct OutputGrads {
    std::vector<double> d_class_scores;  // |C|
    std::vector<double> d_logits;        // k (contribution beyond the classifier path)
    Tensor d_visual_embed;               // k x d_e
    Tensor d_maps;                       // k x p x q (direct map-level contribution)
};

// Flat gradient buffer aligned with ConceptModel::parameters().
struct ModelGrads {
    std::vector<Tensor> tensors;
    void zero() {
        for (auto& t : tensors) t.fill(0.0);
    }
    void add(const ModelGrads& other) {
        for (std::size_t i = 0; i < tensors.size(); ++i)
            tensors[i].add_scaled(other.tensors[i], 1.0);
    }
};

struct ParamRef {
    std::string group;  // backbone | encoder | embed_visual | embed_text | classifier
    std::string name;
    Tensor* tensor;
};

class ConceptModel {
public:
    ConceptModel(ModelConfig config, std::unique_ptr<Backbone> backbone);

    static ConceptModel make(const ModelConfig& config, std::uint64_t init_seed);

    const ModelConfig& config() const { return config_; }
    FeatureDims feature_dims() const { return feature_dims_; }

    // Evaluation-mode forward (no dropout); deterministic.
    ForwardTrace forward(const Tensor& image) const;
    // Training-mode forward; dropout mask drawn from `dropout_rng`.
    ForwardTrace forward_train(const Tensor& image, Rng& dropout_rng) const;

    // Forward from precomputed backbone features (frozen-backbone stages).
    // The resulting trace supports backward only with backbone_frozen=true.
    ForwardTrace forward_from_features(const Tensor& features) const;
    ForwardTrace forward_train_from_features(const Tensor& features, Rng& dropout_rng) const;

    // Accumulates parameter gradients into `grads`. Set `backbone_frozen` to
    // skip the (expensive) backbone backward when its gradients are unused.
    void backward(const ForwardTrace& trace, const OutputGrads& out_grads, ModelGrads& grads,
                  bool backbone_frozen = false) const;

    // k x d_e embedding of phrase vectors under the current E_s.
    Tensor embed_phrases(const ConceptPhraseEmbedding& phrases) const;
    // Gradient path for E_s: accumulates dE_s from d(embedded phrases).
    void embed_phrases_backward(const ConceptPhraseEmbedding& phrases, const Tensor& d_embedded,
                                ModelGrads& grads) const;

    Tensor embed_visual(const Tensor& maps) const;  // k x d_e

    std::vector<ParamRef> parameters();
    std::vector<ParamRef> parameters() const;  // const access for checkpointing
    ModelGrads make_grads() const;
    std::vector<std::string> group_names() const;

    const Linear& classifier() const { return classifier_; }
    const Backbone& backbone() const { return *backbone_; }

private:
    ForwardTrace run_forward(const Tensor& image, const Tensor* dropout_mask) const;
    ForwardTrace finish_forward(ForwardTrace t, const Tensor* dropout_mask) const;

    ModelConfig config_;
    std::unique_ptr<Backbone> backbone_;
    FeatureDims feature_dims_;
    Conv2d encoder_;       // 1x1 conv n_f -> k
    Linear embed_visual_;  // p*q -> d_e, no bias
    Linear embed_text_;    // d -> d_e, no bias
    Linear classifier_;    // k -> |C|, bias
};

// ---------------------------------------------------------------------------
// Checkpoints: binary container with a JSON metadata header followed by named
// parameter tensors. Unknown trailing tensors are ignored on load so newer
// writers stay readable.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    ConceptVocabulary vocab;
    std::vector<std::string> class_names;
    ModelConfig model;
    std::string config_hash;
    int stage_index = 0;
    std::string preprocess = "manual-oracle";  // mode the model was trained with
};

void save_checkpoint(const std::string& path, const ConceptModel& model, const CheckpointMeta& meta);

struct LoadedCheckpoint {
    ConceptModel model;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace coherent
