#include "coherent/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "coherent/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coherent {

std::string backbone_kind_name(BackboneKind k) {
    switch (k) {
        case BackboneKind::tiny: return "tiny";
        case BackboneKind::resnet101: return "resnet101";
        case BackboneKind::densenet201: return "densenet201";
        case BackboneKind::seresnext: return "seresnext";
    }
    return "tiny";
}

BackboneKind parse_backbone_kind(const std::string& s) {
    if (s == "tiny") return BackboneKind::tiny;
    if (s == "resnet101") return BackboneKind::resnet101;
    if (s == "densenet201") return BackboneKind::densenet201;
    if (s == "seresnext") return BackboneKind::seresnext;
    throw ConfigError("unsupported backbone kind '" + s +
                      "' (want tiny|resnet101|densenet201|seresnext)");
}

// ---------------------------------------------------------------------------
// TinyBackbone
// ---------------------------------------------------------------------------

namespace {
const int kTinyChannels[5] = {3, 16, 32, 64, 128};
}

TinyBackbone::TinyBackbone() {
    for (int b = 0; b < 4; ++b)
        blocks_.emplace_back(kTinyChannels[b], kTinyChannels[b + 1], 3, 2, 1);
}

FeatureDims TinyBackbone::feature_dims(int input_size) const {
    int s = input_size;
    for (const auto& blk : blocks_) s = blk.out_size(s);
    if (s < 1) throw ShapeError("input too small for the tiny backbone");
    return {kTinyChannels[4], s, s};
}

std::vector<Tensor> TinyBackbone::forward(const Tensor& image) const {
    std::vector<Tensor> acts;
    acts.reserve(blocks_.size());
    const Tensor* cur = &image;
    for (const auto& blk : blocks_) {
        Tensor y = blk.forward(*cur);
        relu_inplace(y);
        acts.push_back(std::move(y));
        cur = &acts.back();
    }
    return acts;
}

void TinyBackbone::backward(const Tensor& image, const std::vector<Tensor>& acts,
                            const Tensor& dfeatures, std::vector<Tensor>& param_grads) const {
    // param_grads is laid out as [w0, b0, w1, b1, ...].
    Tensor grad = dfeatures;
    for (int b = static_cast<int>(blocks_.size()) - 1; b >= 0; --b) {
        // Post-activation tensors double as the ReLU gate (act > 0 iff pre > 0).
        relu_backward_inplace(acts[static_cast<std::size_t>(b)], grad);
        const Tensor& input = (b == 0) ? image : acts[static_cast<std::size_t>(b - 1)];
        Tensor dinput;
        Tensor* dinput_ptr = nullptr;
        if (b > 0) {
            dinput = Tensor::zeros_like(input);
            dinput_ptr = &dinput;
        }
        blocks_[static_cast<std::size_t>(b)].backward(
            input, grad, dinput_ptr, param_grads[static_cast<std::size_t>(2 * b)],
            param_grads[static_cast<std::size_t>(2 * b + 1)]);
        if (b > 0) grad = std::move(dinput);
    }
}

std::vector<Tensor*> TinyBackbone::parameters() {
    std::vector<Tensor*> out;
    for (auto& blk : blocks_) {
        out.push_back(&blk.weight);
        out.push_back(&blk.bias);
    }
    return out;
}

std::vector<std::string> TinyBackbone::parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        out.push_back("block" + std::to_string(b) + ".weight");
        out.push_back("block" + std::to_string(b) + ".bias");
    }
    return out;
}

void TinyBackbone::init(Rng& rng) {
    for (auto& blk : blocks_) blk.init_he(rng);
}

std::unique_ptr<Backbone> build_backbone(BackboneKind kind, const std::string& weights_path) {
    if (kind == BackboneKind::tiny) return std::make_unique<TinyBackbone>();
    if (weights_path.empty())
        throw ConfigError("backbone '" + backbone_kind_name(kind) +
                          "' needs a pretrained weights file (backbone_weights)");
    if (!fs::exists(weights_path))
        throw ConfigError("backbone weights file not found: " + weights_path);
    throw ConfigError("no loader is bundled for pretrained backbone '" +
                      backbone_kind_name(kind) + "'; use kind 'tiny' or plug in an external one");
}

// ---------------------------------------------------------------------------
// Phrase embeddings
// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::vector<std::string> tokenize_phrase(const std::string& phrase) {
    std::vector<std::string> toks;
    std::string cur;
    for (char c : phrase) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            toks.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
}

ConceptPhraseEmbedding random_phrase_embedding(std::uint64_t seed, const ConceptVocabulary& vocab,
                                               int dim) {
    ConceptPhraseEmbedding out;
    out.dim = dim;
    out.vectors = Tensor({vocab.size(), dim});
    for (int c = 0; c < vocab.size(); ++c) {
        Rng rng = Rng(seed).fork("phrase-embedding").fork(vocab.phrases[static_cast<std::size_t>(c)]);
        double norm2 = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double v = rng.normal();
            out.vectors.at2(c, j) = v;
            norm2 += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm2);
        for (int j = 0; j < dim; ++j) out.vectors.at2(c, j) *= inv;
    }
    return out;
}

std::string resolve_vector_path(const std::string& path) {
    if (fs::exists(path)) return path;
    if (!fs::path(path).is_absolute()) {
        const char* cache = std::getenv("COHERENT_CONCEPTS_CACHE");
        if (cache && *cache) {
            const fs::path c = fs::path(cache) / path;
            if (fs::exists(c)) return c.string();
        }
    }
    throw IoError("word-vector file not found: " + path);
}

}  // namespace

ConceptPhraseEmbedding load_phrase_embeddings(const std::string& path,
                                              const ConceptVocabulary& vocab, int random_dim) {
    vocab.validate();
    if (path.rfind("random:", 0) == 0) {
        const std::string seed_str = path.substr(7);
        try {
            std::size_t used = 0;
            const std::uint64_t seed = std::stoull(seed_str, &used);
            if (used != seed_str.size()) throw std::invalid_argument("trailing chars");
            return random_phrase_embedding(seed, vocab, random_dim);
        } catch (const std::exception&) {
            throw ConfigError("bad random word-vector sentinel '" + path +
                              "' (want random:<integer seed>)");
        }
    }

    const std::string resolved = resolve_vector_path(path);
    std::ifstream f(resolved);
    if (!f) throw IoError("cannot open word-vector file: " + resolved);

    // Collect only the tokens we need.
    std::map<std::string, std::vector<double>> wanted;
    for (const auto& phrase : vocab.phrases)
        for (const auto& t : tokenize_phrase(phrase)) wanted[t] = {};

    int dim = -1;
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string token;
        is >> token;
        if (token.empty()) throw DataError("word-vector parse error at line " + std::to_string(line_no));
        std::vector<double> vec;
        double v;
        while (is >> v) vec.push_back(v);
        if (!is.eof())
            throw DataError("word-vector parse error at line " + std::to_string(line_no) +
                            ": non-numeric component");
        if (vec.empty())
            throw DataError("word-vector parse error at line " + std::to_string(line_no) +
                            ": no components");
        if (dim < 0) dim = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != dim)
            throw DataError("word-vector parse error at line " + std::to_string(line_no) +
                            ": expected " + std::to_string(dim) + " components, got " +
                            std::to_string(vec.size()));
        auto it = wanted.find(lower(token));
        if (it != wanted.end() && it->second.empty()) it->second = std::move(vec);
    }
    if (dim < 0) throw DataError("word-vector file has no vectors: " + resolved);

    ConceptPhraseEmbedding out;
    out.dim = dim;
    out.vectors = Tensor({vocab.size(), dim});
    for (int c = 0; c < vocab.size(); ++c) {
        const auto toks = tokenize_phrase(vocab.phrases[static_cast<std::size_t>(c)]);
        int hits = 0;
        for (const auto& t : toks) {
            const auto& vec = wanted[t];
            if (vec.empty()) continue;
            for (int j = 0; j < dim; ++j) out.vectors.at2(c, j) += vec[static_cast<std::size_t>(j)];
            ++hits;
        }
        if (hits == 0)
            throw DataError("phrase '" + vocab.phrases[static_cast<std::size_t>(c)] +
                            "' has no tokens in the word-vector file");
        for (int j = 0; j < dim; ++j) out.vectors.at2(c, j) /= hits;
    }
    return out;
}

// ---------------------------------------------------------------------------
// ConceptModel
// ---------------------------------------------------------------------------

ConceptModel::ConceptModel(ModelConfig config, std::unique_ptr<Backbone> backbone)
    : config_(config), backbone_(std::move(backbone)) {
    feature_dims_ = backbone_->feature_dims(config_.input_size);
    encoder_ = Conv2d(feature_dims_.channels, config_.num_concepts, 1, 1, 0);
    embed_visual_ = Linear(feature_dims_.p * feature_dims_.q, config_.embed_dim, false);
    embed_text_ = Linear(config_.phrase_dim, config_.embed_dim, false);
    classifier_ = Linear(config_.num_concepts, config_.num_classes, true);
}

ConceptModel ConceptModel::make(const ModelConfig& config, std::uint64_t init_seed) {
    ConceptModel model(config, build_backbone(config.backbone));
    Rng root(init_seed);
    Rng r_backbone = root.fork("init-backbone");
    model.backbone_->init(r_backbone);
    Rng r_enc = root.fork("init-encoder");
    model.encoder_.init_he(r_enc);
    Rng r_ev = root.fork("init-embed-visual");
    model.embed_visual_.init_glorot(r_ev);
    Rng r_es = root.fork("init-embed-text");
    model.embed_text_.init_glorot(r_es);
    Rng r_cls = root.fork("init-classifier");
    model.classifier_.init_glorot(r_cls);
    return model;
}

ForwardTrace ConceptModel::run_forward(const Tensor& image, const Tensor* dropout_mask) const {
    if (image.rank() != 3 || image.dim(1) != config_.input_size ||
        image.dim(2) != config_.input_size)
        throw ShapeError("model expects " + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size) + " input, got " + image.shape_str());

    ForwardTrace t;
    t.input = image;
    t.backbone_acts = backbone_->forward(image);
    return finish_forward(std::move(t), dropout_mask);
}

ForwardTrace ConceptModel::finish_forward(ForwardTrace t, const Tensor* dropout_mask) const {
    const Tensor& features = t.backbone_acts.back();

    t.encoder_pre = encoder_.forward(features);
    t.maps = t.encoder_pre;
    relu_inplace(t.maps);
    if (dropout_mask) {
        t.dropout_mask = *dropout_mask;
        for (std::size_t i = 0; i < t.maps.size(); ++i) t.maps[i] *= t.dropout_mask[i];
    }

    t.logits = global_average_pool(t.maps);
    t.class_scores.resize(static_cast<std::size_t>(config_.num_classes));
    classifier_.forward(t.logits.data(), t.class_scores.data());
    t.visual_embed = embed_visual(t.maps);
    return t;
}

ForwardTrace ConceptModel::forward(const Tensor& image) const { return run_forward(image, nullptr); }

ForwardTrace ConceptModel::forward_train(const Tensor& image, Rng& dropout_rng) const {
    const Tensor mask = make_dropout_mask({config_.num_concepts, feature_dims_.p, feature_dims_.q},
                                          config_.dropout_rate, dropout_rng);
    return run_forward(image, &mask);
}

ForwardTrace ConceptModel::forward_from_features(const Tensor& features) const {
    ForwardTrace t;
    t.backbone_acts = {features};
    return finish_forward(std::move(t), nullptr);
}

ForwardTrace ConceptModel::forward_train_from_features(const Tensor& features,
                                                       Rng& dropout_rng) const {
    const Tensor mask = make_dropout_mask({config_.num_concepts, feature_dims_.p, feature_dims_.q},
                                          config_.dropout_rate, dropout_rng);
    ForwardTrace t;
    t.backbone_acts = {features};
    return finish_forward(std::move(t), &mask);
}

Tensor ConceptModel::embed_visual(const Tensor& maps) const {
    const int k = config_.num_concepts;
    const int pq = feature_dims_.p * feature_dims_.q;
    Tensor out({k, config_.embed_dim});
    for (int c = 0; c < k; ++c)
        embed_visual_.forward(maps.data() + static_cast<std::size_t>(c) * pq,
                              out.data() + static_cast<std::size_t>(c) * config_.embed_dim);
    return out;
}

Tensor ConceptModel::embed_phrases(const ConceptPhraseEmbedding& phrases) const {
    if (phrases.dim != config_.phrase_dim)
        throw ShapeError("phrase vectors have dim " + std::to_string(phrases.dim) +
                         ", model expects " + std::to_string(config_.phrase_dim));
    const int k = config_.num_concepts;
    Tensor out({k, config_.embed_dim});
    for (int c = 0; c < k; ++c)
        embed_text_.forward(phrases.vectors.data() + static_cast<std::size_t>(c) * phrases.dim,
                            out.data() + static_cast<std::size_t>(c) * config_.embed_dim);
    return out;
}

std::vector<ParamRef> ConceptModel::parameters() {
    std::vector<ParamRef> out;
    const auto bnames = backbone_->parameter_names();
    const auto btensors = backbone_->parameters();
    for (std::size_t i = 0; i < btensors.size(); ++i)
        out.push_back({"backbone", bnames[i], btensors[i]});
    out.push_back({"encoder", "weight", &encoder_.weight});
    out.push_back({"encoder", "bias", &encoder_.bias});
    out.push_back({"embed_visual", "weight", &embed_visual_.weight});
    out.push_back({"embed_text", "weight", &embed_text_.weight});
    out.push_back({"classifier", "weight", &classifier_.weight});
    out.push_back({"classifier", "bias", &classifier_.bias});
    return out;
}

std::vector<ParamRef> ConceptModel::parameters() const {
    return const_cast<ConceptModel*>(this)->parameters();
}

ModelGrads ConceptModel::make_grads() const {
    ModelGrads g;
    for (const auto& p : parameters()) g.tensors.push_back(Tensor::zeros_like(*p.tensor));
    return g;
}

std::vector<std::string> ConceptModel::group_names() const {
    return {"backbone", "encoder", "embed_visual", "embed_text", "classifier"};
}

void ConceptModel::backward(const ForwardTrace& trace, const OutputGrads& out_grads,
                            ModelGrads& grads, bool backbone_frozen) const {
    const int k = config_.num_concepts;
    const int p = feature_dims_.p, q = feature_dims_.q;
    const int pq = p * q;

    // Locate gradient slots by parameter order (backbone tensors first).
    const std::size_t n_backbone = backbone_->parameter_names().size();
    Tensor& d_enc_w = grads.tensors[n_backbone + 0];
    Tensor& d_enc_b = grads.tensors[n_backbone + 1];
    Tensor& d_ev_w = grads.tensors[n_backbone + 2];
    Tensor& d_cls_w = grads.tensors[n_backbone + 4];
    Tensor& d_cls_b = grads.tensors[n_backbone + 5];

    // Classifier path: dv += W^T d_scores.
    std::vector<double> dv(static_cast<std::size_t>(k), 0.0);
    if (!out_grads.d_logits.empty())
        for (int c = 0; c < k; ++c) dv[static_cast<std::size_t>(c)] = out_grads.d_logits[static_cast<std::size_t>(c)];
    if (!out_grads.d_class_scores.empty())
        classifier_.backward(trace.logits.data(), out_grads.d_class_scores.data(), dv.data(),
                             d_cls_w, d_cls_b);

    // Map-level gradient: direct + GAP broadcast + visual-embedding pullback.
    Tensor d_maps = out_grads.d_maps.empty() ? Tensor({k, p, q}) : out_grads.d_maps;
    for (int c = 0; c < k; ++c) {
        const double g = dv[static_cast<std::size_t>(c)] / pq;
        double* dm = d_maps.data() + static_cast<std::size_t>(c) * pq;
        for (int i = 0; i < pq; ++i) dm[i] += g;
    }
    if (!out_grads.d_visual_embed.empty()) {
        Tensor dummy_bias;  // E_v has no bias
        for (int c = 0; c < k; ++c)
            embed_visual_.backward(
                trace.maps.data() + static_cast<std::size_t>(c) * pq,
                out_grads.d_visual_embed.data() + static_cast<std::size_t>(c) * config_.embed_dim,
                d_maps.data() + static_cast<std::size_t>(c) * pq, d_ev_w, dummy_bias);
    }

    // Dropout then ReLU.
    if (!trace.dropout_mask.empty())
        for (std::size_t i = 0; i < d_maps.size(); ++i) d_maps[i] *= trace.dropout_mask[i];
    relu_backward_inplace(trace.encoder_pre, d_maps);

    // Encoder 1x1 conv; input gradient only needed when the backbone trains.
    const Tensor& features = trace.backbone_acts.back();
    if (backbone_frozen) {
        encoder_.backward(features, d_maps, nullptr, d_enc_w, d_enc_b);
        return;
    }
    Tensor d_features = Tensor::zeros_like(features);
    encoder_.backward(features, d_maps, &d_features, d_enc_w, d_enc_b);

    std::vector<Tensor> backbone_grads(n_backbone);
    for (std::size_t i = 0; i < n_backbone; ++i) backbone_grads[i] = std::move(grads.tensors[i]);
    backbone_->backward(trace.input, trace.backbone_acts, d_features, backbone_grads);
    for (std::size_t i = 0; i < n_backbone; ++i) grads.tensors[i] = std::move(backbone_grads[i]);
}

void ConceptModel::embed_phrases_backward(const ConceptPhraseEmbedding& phrases,
                                          const Tensor& d_embedded, ModelGrads& grads) const {
    const std::size_t n_backbone = backbone_->parameter_names().size();
    Tensor& d_es_w = grads.tensors[n_backbone + 3];
    Tensor dummy_bias;
    for (int c = 0; c < config_.num_concepts; ++c)
        embed_text_.backward(
            phrases.vectors.data() + static_cast<std::size_t>(c) * phrases.dim,
            d_embedded.data() + static_cast<std::size_t>(c) * config_.embed_dim, nullptr, d_es_w,
            dummy_bias);
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'C', 'C', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

json meta_to_json(const CheckpointMeta& meta) {
    json j;
    j["vocab_names"] = meta.vocab.names;
    j["vocab_phrases"] = meta.vocab.phrases;
    j["class_names"] = meta.class_names;
    j["config_hash"] = meta.config_hash;
    j["stage_index"] = meta.stage_index;
    j["preprocess"] = meta.preprocess;
    j["model"] = {{"backbone", backbone_kind_name(meta.model.backbone)},
                  {"input_size", meta.model.input_size},
                  {"num_concepts", meta.model.num_concepts},
                  {"num_classes", meta.model.num_classes},
                  {"phrase_dim", meta.model.phrase_dim},
                  {"embed_dim", meta.model.embed_dim},
                  {"dropout_rate", meta.model.dropout_rate}};
    return j;
}

CheckpointMeta meta_from_json(const json& j) {
    CheckpointMeta meta;
    meta.vocab.names = j.at("vocab_names").get<std::vector<std::string>>();
    meta.vocab.phrases = j.at("vocab_phrases").get<std::vector<std::string>>();
    meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    meta.config_hash = j.value("config_hash", "");
    meta.stage_index = j.value("stage_index", 0);
    meta.preprocess = j.value("preprocess", "manual-oracle");
    const json& m = j.at("model");
    meta.model.backbone = parse_backbone_kind(m.at("backbone").get<std::string>());
    meta.model.input_size = m.at("input_size").get<int>();
    meta.model.num_concepts = m.at("num_concepts").get<int>();
    meta.model.num_classes = m.at("num_classes").get<int>();
    meta.model.phrase_dim = m.at("phrase_dim").get<int>();
    meta.model.embed_dim = m.at("embed_dim").get<int>();
    meta.model.dropout_rate = m.at("dropout_rate").get<double>();
    return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const ConceptModel& model,
                     const CheckpointMeta& meta) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    const std::string meta_str = meta_to_json(meta).dump();
    write_u64(os, meta_str.size());
    os.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    const auto params = model.parameters();
    write_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_string(os, p.group + "." + p.name);
        const Tensor& t = *p.tensor;
        write_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
        write_u64(os, t.size());
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!os) throw IoError("short write: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version < 1 || version > kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path);
    const std::uint64_t meta_len = read_u64(is);
    std::string meta_str(meta_len, '\0');
    is.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    CheckpointMeta meta;
    try {
        meta = meta_from_json(json::parse(meta_str));
    } catch (const json::exception& e) {
        throw IoError("bad checkpoint metadata in " + path + ": " + e.what());
    }

    ConceptModel model = ConceptModel::make(meta.model, /*init_seed=*/0);
    std::map<std::string, Tensor*> by_name;
    for (auto& p : model.parameters()) by_name[p.group + "." + p.name] = p.tensor;

    const std::uint32_t n_tensors = read_u32(is);
    std::map<std::string, bool> filled;
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        const std::string name = read_string(is);
        const std::uint32_t rank = read_u32(is);
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(read_u32(is));
        const std::uint64_t count = read_u64(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            // Unknown tensor from a newer writer: skip its payload.
            is.seekg(static_cast<std::streamoff>(count * sizeof(double)), std::ios::cur);
            continue;
        }
        Tensor& t = *it->second;
        if (t.shape() != dims || t.size() != count)
            throw IoError("checkpoint tensor '" + name + "' has unexpected shape in " + path);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        filled[name] = true;
    }
    if (!is) throw IoError("truncated checkpoint: " + path);
    for (const auto& [name, tensor] : by_name) {
        (void)tensor;
        if (!filled.count(name)) throw IoError("checkpoint missing tensor '" + name + "': " + path);
    }
    return LoadedCheckpoint{std::move(model), std::move(meta)};
}

}  // namespace coherent
