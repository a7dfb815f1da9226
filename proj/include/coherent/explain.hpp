#pragma once

#include <string>
#include <vector>

#include "coherent/model.hpp"
#include "coherent/tensor.hpp"
#include "coherent/vocab.hpp"

namespace coherent {

// Interpretable output for one image: predicted class, per-concept presence,
// softmax-normalized contributions and a templated sentence.
struct ExplanationReport {
    int predicted_label = 0;
    std::string label_name;
    std::vector<double> logits;            // raw v
    std::vector<int> concept_presence;     // v > 0
    std::vector<double> contributions;     // sums to 1
    std::string text;
    std::vector<std::string> overlay_paths;
};

// presence_k = 1 iff v_k > 0 (the shared decision boundary of sigmoid(v)>0.5
// and tanh(v)>0; a tie at exactly 0 counts as absent).
std::vector<int> concept_presence(const std::vector<double>& logits);

// softmax over (v_k * W[c,k]); the classifier bias plays no part here.
std::vector<double> contributions(const std::vector<double>& logits, const Linear& classifier,
                                  int predicted_class);

// argmax_c of W v (+ bias); identical to the class argmax of a full forward.
int predict_label(const std::vector<double>& logits, const Linear& classifier);

// Deterministic template naming present concepts with contribution above the
// report threshold, descending. Concepts with (near-)zero contribution are
// omitted even when predicted present.
std::string render_text(const ExplanationReport& report, const ConceptVocabulary& vocab,
                        double contribution_threshold = 0.01);

// One overlay PNG per concept: the map min-max normalized, bilinearly
// upsampled, and alpha-blended (0.5 * value) over the input. Returns the k
// file paths. A constant map normalizes to zero and leaves the image as is.
std::vector<std::string> export_overlays(const Tensor& image, const Tensor& maps,
                                         const ConceptVocabulary& vocab,
                                         const std::string& out_dir,
                                         const std::string& file_prefix = "concept");

// Full pipeline for one prepared input image.
ExplanationReport explain_image(const ConceptModel& model, const Tensor& input,
                                const ConceptVocabulary& vocab,
                                const std::vector<std::string>& class_names,
                                const std::string& overlay_dir = "",
                                double contribution_threshold = 0.01);

}  // namespace coherent
