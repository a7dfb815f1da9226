#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coherent/image.hpp"
#include "coherent/tensor.hpp"
#include "coherent/vocab.hpp"

namespace coherent {

enum class Split { train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);

// One image with class label, binary concept vector and lesion mask.
struct Sample {
    std::string id;
    Tensor image;        // channels x H x W, values in [0,1]
    int label = 0;
    std::vector<double> concepts;  // length k, entries in {0,1}
    Tensor lesion_mask;  // H x W binary; all-ones when the manifest row had no mask
    bool has_mask = false;
    Split split = Split::train;
};

struct ManifestRow {
    std::string image_path;
    std::string mask_path;  // may be empty
    std::string label;      // raw text; numeric or mapped via label_map
    std::vector<double> concepts;
    Split split = Split::train;
    std::string id;
};

struct DatasetManifest {
    std::string root_dir;  // paths in rows are resolved relative to this
    ConceptVocabulary vocab;
    std::vector<ManifestRow> rows;

    std::vector<int> indices_of(Split s) const;
};

struct LoadOptions {
    int input_size = 224;                       // images resized to input_size x input_size
    bool require_masks = false;                 // empty mask_path becomes a schema error
    std::map<std::string, int> label_map;       // raw label text -> class index
};

// Parses the delimited manifest table (header: image_path,mask_path,label,
// <concept names...>,split). File paths are checked for existence up front.
DatasetManifest read_manifest(const std::string& path, const ConceptVocabulary& vocab,
                              const LoadOptions& opts = {});

// Decodes one row into a Sample: image scaled to [0,1] and resized, mask
// resized jointly and binarized at 0.5.
Sample load_sample(const DatasetManifest& manifest, int row_index, const LoadOptions& opts);

// Loads every row (manifest order). `workers` only parallelizes decoding; the
// returned order is independent of it.
std::vector<Sample> load_all(const DatasetManifest& manifest, const LoadOptions& opts,
                             int workers = 1);

void write_manifest(const std::string& path, const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Synthetic desk-scale dataset with planted concept motifs.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
    int image_size = 128;
    double train_fraction = 0.70;
    double val_fraction = 0.10;   // remainder goes to test
    double decoy_probability = 0.65;  // chance of concept-like clutter outside the lesion
    // Exact split counts override the fractions when all three are >= 0.
    int train_count = -1;
    int val_count = -1;
    int test_count = -1;
};

struct MotifPlacement {
    int concept_index = 0;
    double cx = 0.0, cy = 0.0;   // center, image coordinates
    double radius = 0.0;
    std::uint64_t style_seed = 0;  // drives per-motif jitter
};

struct SyntheticGeometry {
    int index = 0;
    double lesion_cx = 0.0, lesion_cy = 0.0;
    double lesion_a = 0.0, lesion_b = 0.0, lesion_theta = 0.0;
    std::vector<MotifPlacement> motifs;   // planted inside the lesion
    std::vector<MotifPlacement> decoys;   // clutter outside the lesion
    std::vector<double> concepts;         // length k
    int label = 0;
    std::uint64_t texture_seed = 0;
};

// Pure function of (spec, seed, index): the geometry from which sample
// `index` is rendered. Exposed so tests can re-derive motif locations.
SyntheticGeometry synthetic_geometry(const SyntheticSpec& spec, std::uint64_t seed, int index,
                                     const ConceptVocabulary& vocab);

// Renders the image and ground-truth mask for a geometry.
void render_synthetic(const SyntheticGeometry& geo, const SyntheticSpec& spec,
                      ImageU8& image_out, ImageU8& mask_out);

// Renders only one motif's pixels, on an otherwise untouched canvas; used to
// verify that planted motifs stay inside the lesion mask.
Tensor render_motif_footprint(const MotifPlacement& motif, int image_size);

// Writes images/, masks/ and manifest.csv under out_dir. Deterministic in
// (n, seed, spec): the same call twice produces byte-identical files.
DatasetManifest generate_synthetic(int n, std::uint64_t seed, const SyntheticSpec& spec,
                                   const std::string& out_dir);

// Atypical motifs that drive the synthetic label rule (label 1 iff >= 2 present).
const std::vector<std::string>& synthetic_atypical_concepts();
int synthetic_label_from_concepts(const std::vector<double>& concepts,
                                  const ConceptVocabulary& vocab);

}  // namespace coherent
