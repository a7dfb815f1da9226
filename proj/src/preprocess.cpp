#include "coherent/preprocess.hpp"

#include <filesystem>

#include "coherent/common.hpp"
#include "coherent/image.hpp"

namespace fs = std::filesystem;

namespace coherent {

std::string preprocess_mode_name(PreprocessMode m) {
    switch (m) {
        case PreprocessMode::raw: return "raw";
        case PreprocessMode::external_segmenter: return "external-segmenter";
        case PreprocessMode::manual_oracle: return "manual-oracle";
    }
    return "raw";
}

PreprocessMode parse_preprocess_mode(const std::string& s) {
    if (s == "raw") return PreprocessMode::raw;
    if (s == "external-segmenter") return PreprocessMode::external_segmenter;
    if (s == "manual-oracle") return PreprocessMode::manual_oracle;
    throw ConfigError("unknown preprocessing mode '" + s +
                      "' (want raw|external-segmenter|manual-oracle)");
}

Tensor OracleSegmenter::segment(const Sample& sample) const {
    if (!sample.has_mask)
        throw DataError("oracle segmenter: sample '" + sample.id + "' has no ground-truth mask");
    return sample.lesion_mask;
}

Tensor ExternalSegmenter::segment(const Sample& sample) const {
    // Masks are looked up by sample id: either `<id>.mask.png` in the
    // configured directory, or alongside nothing else we know about.
    if (mask_dir_.empty())
        throw ConfigError("external segmenter needs a mask directory");
    const fs::path p = fs::path(mask_dir_) / (sample.id + ".mask.png");
    if (!fs::exists(p))
        throw DataError("external segmenter: no mask file " + p.string());
    const ImageU8 img = read_png(p.string());
    Tensor m3({1, img.height, img.width});
    {
        const Tensor raw = mask_from_image(img);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) m3.at3(0, y, x) = raw.at2(y, x);
    }
    const int h = sample.image.dim(1), w = sample.image.dim(2);
    const Tensor resized = resize_bilinear(m3, h, w);
    Tensor mask({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask.at2(y, x) = resized.at3(0, y, x) >= 0.5 ? 1.0 : 0.0;
    return mask;
}

std::unique_ptr<Segmenter> make_segmenter(PreprocessMode mode, const std::string& mask_dir) {
    switch (mode) {
        case PreprocessMode::raw: return nullptr;
        case PreprocessMode::manual_oracle: return std::make_unique<OracleSegmenter>();
        case PreprocessMode::external_segmenter:
            return std::make_unique<ExternalSegmenter>(mask_dir);
    }
    return nullptr;
}

Tensor apply_hard_attention(const Tensor& image, const Tensor& mask) {
    if (image.rank() != 3) throw ShapeError("apply_hard_attention wants rank-3 image");
    if (mask.rank() != 2) throw ShapeError("apply_hard_attention wants rank-2 mask");
    if (image.dim(1) != mask.dim(0) || image.dim(2) != mask.dim(1))
        throw ShapeError("image " + image.shape_str() + " and mask " + mask.shape_str() +
                         " spatial shapes differ");
    Tensor out = image;
    const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.at3(c, y, x) = mask.at2(y, x) >= 0.5 ? image.at3(c, y, x) : 0.0;
    return out;
}

CoherenceTarget build_coherence_targets(const Tensor& mask, const std::vector<double>& z, int p,
                                        int q) {
    if (mask.rank() != 2) throw ShapeError("build_coherence_targets wants rank-2 mask");
    if (p < 1 || q < 1) throw ShapeError("feature dims must be >= 1");
    const int k = static_cast<int>(z.size());
    const Tensor down = downsample_area(mask, p, q);
    CoherenceTarget target;
    target.masks = Tensor({k, p, q});
    for (int c = 0; c < k; ++c) {
        if (z[static_cast<std::size_t>(c)] < 0.5) continue;  // absent concepts keep a zero target
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < q; ++x) target.masks.at3(c, y, x) = down.at2(y, x);
    }
    return target;
}

}  // namespace coherent
