#pragma once

#include <memory>
#include <string>

#include "coherent/dataset.hpp"
#include "coherent/tensor.hpp"

namespace coherent {

// How the input image is prepared before the network sees it.
enum class PreprocessMode { raw, external_segmenter, manual_oracle };

std::string preprocess_mode_name(PreprocessMode m);
PreprocessMode parse_preprocess_mode(const std::string& s);

// Produces a binary lesion mask at image resolution. Training a segmentation
// network is out of scope; both implementations read masks from disk.
class Segmenter {
public:
    virtual ~Segmenter() = default;
    virtual Tensor segment(const Sample& sample) const = 0;
};

// Uses the ground-truth mask carried by the sample.
class OracleSegmenter : public Segmenter {
public:
    Tensor segment(const Sample& sample) const override;
};

// Reads precomputed masks exported by an external model, either from
// `<image_stem>.mask.png` next to the images or from a flat directory.
class ExternalSegmenter : public Segmenter {
public:
    explicit ExternalSegmenter(std::string mask_dir) : mask_dir_(std::move(mask_dir)) {}
    Tensor segment(const Sample& sample) const override;

private:
    std::string mask_dir_;
};

std::unique_ptr<Segmenter> make_segmenter(PreprocessMode mode, const std::string& mask_dir);

// Hard attention: zero every pixel outside the mask (mask broadcast over
// channels). Idempotent.
Tensor apply_hard_attention(const Tensor& image, const Tensor& mask);

// Per-concept coherence targets at feature resolution (k x p x q): the
// area-averaged lesion mask for present concepts, zeros for absent ones.
struct CoherenceTarget {
    Tensor masks;  // k x p x q, values in [0,1]
};

CoherenceTarget build_coherence_targets(const Tensor& mask, const std::vector<double>& z, int p,
                                        int q);

}  // namespace coherent
