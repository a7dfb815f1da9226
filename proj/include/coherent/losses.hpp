#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "coherent/rng.hpp"
#include "coherent/tensor.hpp"

namespace coherent {

enum class DiceDenominator { sum, product };

DiceDenominator parse_dice_denominator(const std::string& s);
std::string dice_denominator_name(DiceDenominator d);

// Single source of all loss hyperparameters.
struct LossConfig {
    double lambda = 0.4;   // weight of (uniqueness + mapping)
    double gamma = 0.25;   // weight of coherence
    double alpha = 1.0;    // semantic triplet margin
    double beta = 0.5;     // counter-image margin
    double epsilon = 1e-6; // dice stabilizer
    double absent_penalty_weight = 1.0;  // suppression of maps for absent concepts
    DiceDenominator dice_denominator = DiceDenominator::sum;
    // Ablation switches; 0 removes a term with numerics otherwise unchanged.
    double enable_uniqueness = 1.0;
    double enable_mapping = 1.0;

    void validate() const;
};

// All gradient outputs below are accumulated (+=) into caller-provided
// buffers, scaled by `grad_scale`; pass nullptr to skip them.

// Cross-entropy over class scores (log-sum-exp form).
double classification_loss(const std::vector<double>& scores, int label,
                           std::vector<double>* d_scores = nullptr, double grad_scale = 1.0);

// Per-concept binary cross-entropy between sigmoid(v) and z, summed over k.
// Computed in the saturation-safe form; never NaN for finite v.
double uniqueness_loss(const std::vector<double>& v, const std::vector<double>& z,
                       std::vector<double>* d_v = nullptr, double grad_scale = 1.0);

// Within-image triplet loss in the joint embedding space.
double semantic_triplet_loss(const Tensor& v_emb, const Tensor& s_emb,
                             const std::vector<double>& z, double alpha,
                             Tensor* d_vemb = nullptr, Tensor* d_semb = nullptr,
                             double grad_scale = 1.0);

// Counter-image triplet loss over one (sample, counter-sample) pair: ranges
// over concepts k with z'[k] - z[k] > 0.
double counter_image_loss(const Tensor& v_emb, const Tensor& v_emb_counter, const Tensor& s_emb,
                          const std::vector<double>& z, const std::vector<double>& z_counter,
                          double beta, Tensor* d_vemb = nullptr, Tensor* d_vemb_counter = nullptr,
                          Tensor* d_semb = nullptr, double grad_scale = 1.0);

// Mapping consistency = semantic + counter, on the same pair of samples.
double mapping_loss(const Tensor& v_emb, const Tensor& v_emb_counter, const Tensor& s_emb,
                    const std::vector<double>& z, const std::vector<double>& z_counter,
                    double alpha, double beta);

// Soft-Dice coherence for present concepts; mean-squared-activation
// suppression for absent ones (a zero mask inside the Dice quotient has no
// gradient, so absence is handled by a separate term).
double coherence_loss(const Tensor& maps, const Tensor& targets, const std::vector<double>& z,
                      const LossConfig& cfg, Tensor* d_maps = nullptr, Tensor* d_targets = nullptr,
                      double grad_scale = 1.0);

// ---------------------------------------------------------------------------
// Batch objective
// ---------------------------------------------------------------------------

struct LossBreakdown {
    double class_term = 0.0;   // L_A
    double uniqueness = 0.0;   // L_u
    double semantic = 0.0;     // L_s
    double counter = 0.0;      // L_d
    double coherence = 0.0;    // L_c
    double total = 0.0;        // L_A + lambda*(L_u + L_s + L_d) + gamma*L_c (with enables)

    double recombine(const LossConfig& cfg) const {
        return class_term +
               cfg.lambda * (cfg.enable_uniqueness * uniqueness +
                             cfg.enable_mapping * (semantic + counter)) +
               cfg.gamma * coherence;
    }
};

struct BatchItem {
    std::vector<double> class_scores;
    int label = 0;
    std::vector<double> v;     // GAP logits, length k
    std::vector<double> z;     // ground-truth concepts
    Tensor v_emb;              // k x d_e
    Tensor maps;               // k x p x q (needed when gamma > 0)
    Tensor targets;            // k x p x q (needed when gamma > 0)
};

struct SampleGrads {
    std::vector<double> d_class_scores;
    std::vector<double> d_v;
    Tensor d_vemb;
    Tensor d_maps;
};

struct BatchLossResult {
    LossBreakdown breakdown;               // per-term batch means, unweighted
    std::vector<SampleGrads> sample_grads; // gradient of the weighted total
    Tensor d_semb;                         // gradient w.r.t. the shared phrase embedding
};

// Shuffled ring over [0, batch) that pairs every sample with a counter image.
std::vector<int> make_pair_ring(int batch, Rng& rng);

// Evaluates the full objective on a batch (every term reduced by mean over
// samples; the counter term by mean over the `pair_ring` pairs) and, when
// `want_grads`, the gradient of the weighted total w.r.t. every sample input
// and the shared phrase embedding.
BatchLossResult batch_losses(const std::vector<BatchItem>& items, const Tensor& s_emb,
                             const LossConfig& cfg, const std::vector<int>& pair_ring,
                             bool want_grads);

// Count of zero-norm cosine guards taken since process start (diagnostics).
std::uint64_t zero_norm_cosine_events();

}  // namespace coherent
