#include "coherent/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "coherent/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coherent {

DatasetManifest cmd_synth(const SynthArgs& args) {
    if (args.out_dir.empty()) throw ConfigError("synth needs an output directory");
    return generate_synthetic(args.n, args.seed, args.spec, args.out_dir);
}

ManifestSummary cmd_validate_manifest(const std::string& path, const RunConfig& config) {
    LoadOptions opts;
    opts.input_size = config.input_size;
    opts.require_masks = config.preprocess_mode() == PreprocessMode::manual_oracle;
    opts.label_map = config.parsed_label_map();
    const DatasetManifest manifest = read_manifest(path, ConceptVocabulary::dermoscopic(), opts);
    const auto samples = load_all(manifest, opts, config.resolved_threads());
    ManifestSummary out;
    out.rows = static_cast<int>(samples.size());
    for (const auto& s : samples) {
        switch (s.split) {
            case Split::train: ++out.train; break;
            case Split::val: ++out.val; break;
            case Split::test: ++out.test; break;
        }
        if (s.has_mask) ++out.with_mask;
    }
    return out;
}

TrainOutcome cmd_train(const RunConfig& config) {
    config.validate();
    if (config.manifest.empty()) throw ConfigError("train needs a manifest");

    const ConceptVocabulary vocab = ConceptVocabulary::dermoscopic();
    LoadOptions opts;
    opts.input_size = config.input_size;
    opts.require_masks = config.preprocess_mode() == PreprocessMode::manual_oracle;
    opts.label_map = config.parsed_label_map();

    const DatasetManifest manifest = read_manifest(config.manifest, vocab, opts);
    const auto samples = load_all(manifest, opts, config.resolved_threads());

    const ConceptPhraseEmbedding phrases =
        load_phrase_embeddings(config.word_vectors, vocab, config.phrase_dim);
    const ModelConfig model_config = config.model_config(vocab.size(), phrases.dim);

    // Feature dims are needed for coherence targets before the model exists.
    const auto probe = build_backbone(model_config.backbone, config.backbone_weights);
    const FeatureDims dims = probe->feature_dims(config.input_size);

    PreparedData data = prepare_data(samples, config.preprocess_mode(), config.mask_dir, dims);

    CheckpointMeta meta;
    meta.vocab = vocab;
    meta.class_names = config.parsed_class_names();
    meta.model = model_config;
    meta.config_hash = config.hash();
    meta.preprocess = config.preprocess;

    TrainOptions train_opts = config.train_options();
    TrainOutcome out{train_model(data, model_config, config.loss_config(),
                                 config.stage_schedule(), phrases, train_opts, meta),
                     std::move(data), meta, {}, ""};

    if (!config.out_dir.empty()) {
        fs::create_directories(config.out_dir);
        out.config_echo_path = (fs::path(config.out_dir) / "config.echo.conf").string();
        write_config(config, out.config_echo_path);
    }

    // Test metrics under the best-validation parameters.
    ConceptModel best = ConceptModel::make(model_config, 0);
    copy_params_into(best, out.result.best_params);
    if (!out.data.test.empty())
        out.test_summary = evaluate_split_full(best, out.data.test, config.resolved_threads());
    return out;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

namespace {

std::string concept_key(const ConceptVocabulary& vocab, int c) {
    return vocab.names[static_cast<std::size_t>(c)];
}

json summary_to_json(const EvalSummary& s, const ConceptVocabulary& vocab,
                     const std::string& l2_aggregation) {
    json j;
    j["n"] = s.classification.n;
    j["accuracy"] = s.classification.accuracy;
    j["sensitivity"] =
        s.classification.sensitivity ? json(*s.classification.sensitivity) : json(nullptr);
    j["specificity"] =
        s.classification.specificity ? json(*s.classification.specificity) : json(nullptr);
    j["auc"] = s.classification.auc ? json(*s.classification.auc) : json(nullptr);
    j["confusion"] = s.classification.confusion;
    j["concept_f1_micro"] = s.concepts.micro_f1;
    json per;
    for (int c = 0; c < static_cast<int>(s.concepts.per_concept.size()); ++c)
        per[concept_key(vocab, c)] = s.concepts.per_concept[static_cast<std::size_t>(c)];
    j["concept_f1_per_concept"] = per;
    j["l2_error"] = l2_aggregation == "mean" ? s.l2.mean : s.l2.sum;
    j["l2_error_sum"] = s.l2.sum;
    j["l2_error_mean"] = s.l2.mean;
    j["in_mask_fraction"] = s.in_mask.mean_fraction;
    j["in_mask_support"] = s.in_mask.support;
    json im;
    for (int c = 0; c < static_cast<int>(s.in_mask.per_concept.size()); ++c)
        if (s.in_mask.per_concept_support[static_cast<std::size_t>(c)] > 0)
            im[concept_key(vocab, c)] = s.in_mask.per_concept[static_cast<std::size_t>(c)];
    j["in_mask_per_concept"] = im;
    return j;
}

std::vector<ConceptMapsForSample> localization_maps(const std::vector<SampleEval>& evals,
                                                    const std::vector<PreparedSample>& samples,
                                                    const std::vector<double>& thresholds) {
    std::vector<ConceptMapsForSample> out;
    out.reserve(evals.size());
    for (std::size_t i = 0; i < evals.size(); ++i) {
        ConceptMapsForSample m;
        m.binary = binarize_map(evals[i].maps, thresholds);
        m.presence.assign(evals[i].logits.size(), 0.0);
        for (std::size_t c = 0; c < evals[i].logits.size(); ++c)
            m.presence[c] = evals[i].logits[c] > 0.0 ? 1.0 : 0.0;
        m.truth = samples[i].z;
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace

EvalOutcome cmd_eval(const EvalArgs& args) {
    if (args.checkpoint.empty() || args.manifest.empty())
        throw ConfigError("eval needs --checkpoint and --manifest");
    LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
    const ConceptVocabulary& vocab = loaded.meta.vocab;

    LoadOptions opts;
    opts.input_size = loaded.meta.model.input_size;
    const PreprocessMode mode = parse_preprocess_mode(loaded.meta.preprocess);
    opts.require_masks = mode == PreprocessMode::manual_oracle;
    opts.label_map = args.config.parsed_label_map();

    const DatasetManifest manifest = read_manifest(args.manifest, vocab, opts);
    const auto samples = load_all(manifest, opts, args.config.resolved_threads());
    const PreparedData data =
        prepare_data(samples, mode, args.config.mask_dir, loaded.model.feature_dims());

    const std::vector<PreparedSample>* split = &data.test;
    if (args.split == "train") split = &data.train;
    else if (args.split == "val") split = &data.val;
    else if (args.split != "test") throw ConfigError("eval split must be train|val|test");
    if (split->empty()) throw DataError("requested split '" + args.split + "' is empty");

    const int threads = args.config.resolved_threads();
    EvalOutcome out;
    out.summary = evaluate_split_full(loaded.model, *split, threads);

    // Localization metrics: thresholds from the training split only.
    if (!data.train.empty()) {
        const auto train_evals = collect_eval(loaded.model, data.train, threads);
        std::vector<Tensor> train_maps;
        train_maps.reserve(train_evals.size());
        for (const auto& e : train_evals) train_maps.push_back(e.maps);
        out.thresholds = activation_thresholds(train_maps, args.config.quantile);

        const auto split_evals = collect_eval(loaded.model, *split, threads);
        const auto maps = localization_maps(split_evals, *split, out.thresholds);
        const AgreementRule rule = args.config.agreement == "both_present"
                                       ? AgreementRule::both_present
                                       : AgreementRule::both_correct;
        std::vector<Tensor> images;
        images.reserve(split->size());
        for (const auto& s : *split) images.push_back(s.input);
        out.patch_cosine_per_concept = patch_cosine(loaded.model, images, maps, rule);

        if (!args.compare_checkpoint.empty()) {
            LoadedCheckpoint other = load_checkpoint(args.compare_checkpoint);
            if (other.meta.model.input_size != loaded.meta.model.input_size)
                throw ConfigError("compared checkpoints must share the input size");
            const auto other_train = collect_eval(other.model, data.train, threads);
            std::vector<Tensor> other_train_maps;
            for (const auto& e : other_train) other_train_maps.push_back(e.maps);
            const auto other_thresholds =
                activation_thresholds(other_train_maps, args.config.quantile);
            const auto other_evals = collect_eval(other.model, *split, threads);
            const auto other_maps = localization_maps(other_evals, *split, other_thresholds);
            out.dsc_per_concept = pairwise_dsc(maps, other_maps, rule);
        }
    }

    json j = summary_to_json(out.summary, vocab, args.config.l2_aggregation);
    j["split"] = args.split;
    j["checkpoint"] = args.checkpoint;
    j["quantile"] = args.config.quantile;
    json th;
    for (int c = 0; c < static_cast<int>(out.thresholds.size()); ++c)
        th[concept_key(vocab, c)] = out.thresholds[static_cast<std::size_t>(c)];
    j["binarization_thresholds"] = th;
    json pc;
    for (const auto& [c, v] : out.patch_cosine_per_concept) pc[concept_key(vocab, c)] = v;
    j["patch_cosine"] = pc;
    if (!args.compare_checkpoint.empty()) {
        json dsc;
        for (const auto& [c, v] : out.dsc_per_concept) dsc[concept_key(vocab, c)] = v;
        j["dsc"] = dsc;
        j["compare_checkpoint"] = args.compare_checkpoint;
    }
    out.report_json = j.dump(2);
    if (!args.report_path.empty()) {
        std::ofstream f(args.report_path, std::ios::trunc);
        if (!f) throw IoError("cannot write report: " + args.report_path);
        f << out.report_json << "\n";
    }
    return out;
}

ExplanationReport cmd_explain(const ExplainArgs& args) {
    if (args.checkpoint.empty() || args.image_path.empty())
        throw ConfigError("explain needs --checkpoint and --image");
    LoadedCheckpoint loaded = load_checkpoint(args.checkpoint);
    const int input_size = loaded.meta.model.input_size;

    const ImageU8 img = read_png(args.image_path);
    Tensor image = image_to_tensor(img);
    if (image.dim(0) == 1) {
        Tensor rgb({3, image.dim(1), image.dim(2)});
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < image.dim(1); ++y)
                for (int x = 0; x < image.dim(2); ++x) rgb.at3(c, y, x) = image.at3(0, y, x);
        image = std::move(rgb);
    }
    image = resize_bilinear(image, input_size, input_size);

    const PreprocessMode mode = parse_preprocess_mode(loaded.meta.preprocess);
    if (mode != PreprocessMode::raw) {
        if (args.mask_path.empty())
            throw ConfigError("this checkpoint was trained with preprocessing '" +
                              loaded.meta.preprocess + "'; pass --mask");
        const ImageU8 mimg = read_png(args.mask_path);
        Tensor m3({1, mimg.height, mimg.width});
        const Tensor raw = mask_from_image(mimg);
        for (int y = 0; y < mimg.height; ++y)
            for (int x = 0; x < mimg.width; ++x) m3.at3(0, y, x) = raw.at2(y, x);
        const Tensor resized = resize_bilinear(m3, input_size, input_size);
        Tensor mask({input_size, input_size});
        for (int y = 0; y < input_size; ++y)
            for (int x = 0; x < input_size; ++x)
                mask.at2(y, x) = resized.at3(0, y, x) >= 0.5 ? 1.0 : 0.0;
        image = apply_hard_attention(image, mask);
    }

    fs::create_directories(args.out_dir);
    ExplanationReport report =
        explain_image(loaded.model, image, loaded.meta.vocab, loaded.meta.class_names,
                      args.out_dir, args.report_threshold);

    json j;
    j["predicted_label"] = report.predicted_label;
    j["label_name"] = report.label_name;
    j["logits"] = report.logits;
    json pres, contrib;
    for (int c = 0; c < loaded.meta.vocab.size(); ++c) {
        pres[concept_key(loaded.meta.vocab, c)] = report.concept_presence[static_cast<std::size_t>(c)];
        contrib[concept_key(loaded.meta.vocab, c)] = report.contributions[static_cast<std::size_t>(c)];
    }
    j["concept_presence"] = pres;
    j["contributions"] = contrib;
    j["text"] = report.text;
    j["overlays"] = report.overlay_paths;
    std::ofstream f(fs::path(args.out_dir) / "report.json", std::ios::trunc);
    f << j.dump(2) << "\n";
    return report;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

namespace {

struct Variant {
    std::string name;
    int enable_u;
    int enable_m;
    bool coherence;
};

const std::vector<Variant>& loss_variants() {
    static const std::vector<Variant> kVariants = {
        {"L_A", 0, 0, false},
        {"L_A+L_u", 1, 0, false},
        {"L_A+L_m", 0, 1, false},
        {"L_A+L_c", 0, 0, true},
        {"L_A+L_m+L_u", 1, 1, false},
        {"L_A+L_u+L_c", 1, 0, true},
        {"L_A+L_m+L_u+L_c", 1, 1, true},
    };
    return kVariants;
}

AblationRow run_variant_row(const RunConfig& cfg, const std::string& name) {
    const TrainOutcome outcome = cmd_train(cfg);
    AblationRow row;
    row.variant = name;
    row.seed = cfg.seed;
    row.accuracy = outcome.test_summary.classification.accuracy;
    row.concept_f1 = outcome.test_summary.concepts.micro_f1;
    row.in_mask_fraction = outcome.test_summary.in_mask.mean_fraction;
    return row;
}

std::string render_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(20) << "variant" << std::right << std::setw(10) << "seed"
       << std::setw(12) << "accuracy" << std::setw(12) << "conceptF1" << std::setw(12) << "in-mask"
       << "\n";
    for (const auto& r : rows) {
        os << std::left << std::setw(20) << r.variant << std::right << std::setw(10) << r.seed
           << std::setw(12) << std::fixed << std::setprecision(4) << r.accuracy << std::setw(12)
           << r.concept_f1 << std::setw(12) << r.in_mask_fraction << "\n";
    }
    return os.str();
}

}  // namespace

std::vector<std::string> ablation_variant_names() {
    std::vector<std::string> out;
    for (const auto& v : loss_variants()) out.push_back(v.name);
    return out;
}

AblationTable cmd_ablate_losses(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                bool parallel) {
    const std::vector<std::uint64_t> seed_list = seeds.empty() ? std::vector<std::uint64_t>{base.seed} : seeds;
    std::vector<RunConfig> configs;
    std::vector<std::string> names;
    for (const auto& v : loss_variants()) {
        for (std::uint64_t seed : seed_list) {
            RunConfig cfg = base;
            cfg.enable_uniqueness = v.enable_u;
            cfg.enable_mapping = v.enable_m;
            if (!v.coherence) cfg.gamma = "0";
            cfg.seed = seed;
            cfg.out_dir = base.out_dir.empty()
                              ? ""
                              : (fs::path(base.out_dir) /
                                 ("variant_" + std::to_string(configs.size())))
                                    .string();
            if (parallel) cfg.threads = 1;
            configs.push_back(std::move(cfg));
            names.push_back(v.name);
        }
    }

    AblationTable table;
    table.rows.resize(configs.size());
    if (parallel) {
        std::vector<std::thread> pool;
        std::exception_ptr err;
        std::mutex err_mu;
        const int n = static_cast<int>(configs.size());
        const unsigned hw = std::thread::hardware_concurrency();
        const int w = std::min<int>(n, hw > 0 ? static_cast<int>(hw) : 1);
        for (int t = 0; t < w; ++t)
            pool.emplace_back([&, t]() {
                try {
                    for (int i = t; i < n; i += w)
                        table.rows[static_cast<std::size_t>(i)] =
                            run_variant_row(configs[static_cast<std::size_t>(i)],
                                            names[static_cast<std::size_t>(i)]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!err) err = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        if (err) std::rethrow_exception(err);
    } else {
        for (std::size_t i = 0; i < configs.size(); ++i)
            table.rows[i] = run_variant_row(configs[i], names[i]);
    }
    table.text = render_table(table.rows);

    if (!base.out_dir.empty()) {
        fs::create_directories(base.out_dir);
        json j = json::array();
        for (const auto& r : table.rows)
            j.push_back({{"variant", r.variant},
                         {"seed", r.seed},
                         {"accuracy", r.accuracy},
                         {"concept_f1", r.concept_f1},
                         {"in_mask_fraction", r.in_mask_fraction}});
        std::ofstream f(fs::path(base.out_dir) / "ablate_losses.json", std::ios::trunc);
        f << j.dump(2) << "\n";
    }
    return table;
}

AblationTable cmd_ablate_segmentation(const RunConfig& base) {
    AblationTable table;
    for (const std::string mode : {"raw", "manual-oracle"}) {
        RunConfig cfg = base;
        cfg.preprocess = mode;
        cfg.out_dir = base.out_dir.empty()
                          ? ""
                          : (fs::path(base.out_dir) / ("seg_" + mode)).string();
        table.rows.push_back(run_variant_row(cfg, mode));
    }
    table.text = render_table(table.rows);
    if (!base.out_dir.empty()) {
        fs::create_directories(base.out_dir);
        json j = json::array();
        for (const auto& r : table.rows)
            j.push_back({{"variant", r.variant},
                         {"seed", r.seed},
                         {"accuracy", r.accuracy},
                         {"concept_f1", r.concept_f1},
                         {"in_mask_fraction", r.in_mask_fraction}});
        j.push_back({{"accuracy_delta", table.rows[1].accuracy - table.rows[0].accuracy},
                     {"in_mask_delta",
                      table.rows[1].in_mask_fraction - table.rows[0].in_mask_fraction}});
        std::ofstream f(fs::path(base.out_dir) / "ablate_segmentation.json", std::ios::trunc);
        f << j.dump(2) << "\n";
    }
    return table;
}

}  // namespace coherent
