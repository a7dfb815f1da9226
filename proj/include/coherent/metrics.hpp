#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coherent/model.hpp"
#include "coherent/tensor.hpp"
#include "coherent/training.hpp"

namespace coherent {

// Micro-averaged F1 over all (sample, concept) cells plus per-concept scores.
struct ConceptF1 {
    double micro_f1 = 0.0;
    std::vector<double> per_concept;
    long tp = 0, fp = 0, fn = 0;
};

ConceptF1 concept_f1(const Tensor& pred, const Tensor& truth);  // both n x k binary

// Sensitivity/specificity are reported for binary problems with class 1 as
// the positive ("melanoma") class; AUC needs both classes present.
struct ClassificationMetrics {
    int n = 0;
    double accuracy = 0.0;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> auc;
    std::vector<std::vector<long>> confusion;  // [truth][pred]
};

// `scores[i]` are the per-class scores of sample i; the AUC ranking uses the
// softmax probability of class 1. Tie-averaged Mann-Whitney formulation.
ClassificationMetrics classification_metrics(const std::vector<std::vector<double>>& scores,
                                             const std::vector<int>& labels);

// Tie-averaged rank AUC of `score` for label 1; empty when one class is absent.
std::optional<double> rank_auc(const std::vector<double>& score, const std::vector<int>& labels);

struct L2Error {
    double sum = 0.0;   // sum over samples of per-sample Euclidean distance
    double mean = 0.0;  // same, divided by n
};

L2Error l2_explanation_error(const Tensor& pred_scores, const Tensor& truth);  // n x k

// ---------------------------------------------------------------------------
// Concept-localization consistency
// ---------------------------------------------------------------------------

// Per-concept activation threshold: the given quantile of that concept's
// activation values pooled over the training maps. Never sees test data.
std::vector<double> activation_thresholds(const std::vector<Tensor>& train_maps, double quantile);

// Strictly-above-threshold binarization (a constant map yields an empty map).
Tensor binarize_map(const Tensor& maps, const std::vector<double>& thresholds);

// Dice-Sorensen coefficient of two binary maps; empty when both are empty.
std::optional<double> dsc_binary(const Tensor& x, const Tensor& y);

struct BBox {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive
};

// Tight bounding box of the largest 8-connected component; empty when the map
// has no set pixels.
std::optional<BBox> largest_component_bbox(const Tensor& binary);

enum class AgreementRule { both_correct, both_present };

// Per-sample localization inputs for one model.
struct ConceptMapsForSample {
    Tensor binary;                  // k x p x q thresholded maps
    std::vector<double> presence;   // predicted presence (v > 0)
    std::vector<double> truth;      // ground-truth z
};

// Mean DSC between two models' binary maps, per concept, over samples passing
// the agreement rule. Concepts with no qualifying sample are omitted.
std::map<int, double> pairwise_dsc(const std::vector<ConceptMapsForSample>& model_a,
                                   const std::vector<ConceptMapsForSample>& model_b,
                                   AgreementRule rule);

// Mean pairwise cosine similarity between backbone features of the concept
// patches (largest-component crops) across samples; concepts with fewer than
// two qualifying patches are omitted.
std::map<int, double> patch_cosine(const ConceptModel& model,
                                   const std::vector<Tensor>& images,
                                   const std::vector<ConceptMapsForSample>& maps,
                                   AgreementRule rule);

// Share of activation mass inside the lesion for present concepts, averaged
// over qualifying (sample, concept) pairs. `targets` are the coherence
// targets (soft downsampled mask for present concepts).
struct InMaskStats {
    double mean_fraction = 0.0;
    int support = 0;  // (sample, concept) pairs with positive activation mass
    std::vector<double> per_concept;
    std::vector<int> per_concept_support;
};

InMaskStats in_mask_activation(const std::vector<Tensor>& maps,
                               const std::vector<const Tensor*>& targets,
                               const std::vector<const std::vector<double>*>& z);

// ---------------------------------------------------------------------------
// Whole-split evaluation
// ---------------------------------------------------------------------------

struct SampleEval {
    std::vector<double> class_scores;
    std::vector<double> logits;
    Tensor maps;
    int label = 0;
};

std::vector<SampleEval> collect_eval(const ConceptModel& model,
                                     const std::vector<PreparedSample>& samples, int threads);

struct EvalSummary {
    ClassificationMetrics classification;
    ConceptF1 concepts;
    L2Error l2;
    InMaskStats in_mask;
};

EvalSummary evaluate_split_full(const ConceptModel& model,
                                const std::vector<PreparedSample>& samples, int threads);

}  // namespace coherent
