#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coherent/commands.hpp"
#include "coherent/common.hpp"

using namespace coherent;

namespace {

// Shared --config/--seed/... plumbing: config file first, then flag overrides.
struct ConfigFlags {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value pairs from --set
};

void add_config_flags(CLI::App* cmd, ConfigFlags& flags) {
    cmd->add_option("--config", flags.config_path, "flat key=value config file");
    cmd->add_option("--set", flags.overrides, "extra key=value override (repeatable)")
        ->expected(-1);
}

void apply_flags(RunConfig& config, const ConfigFlags& flags) {
    if (!flags.config_path.empty()) apply_config_file(config, flags.config_path);
    for (const auto& kv : flags.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set wants key=value, got '" + kv + "'");
        apply_config_entry(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"coherent: interpretable concept-bottleneck skin lesion toolkit"};
    app.require_subcommand(1);

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate the synthetic desk-scale dataset");
    SynthArgs synth_args;
    synth->add_option("--n", synth_args.n, "total number of samples")->default_val(200);
    synth->add_option("--seed", synth_args.seed, "generator seed")->default_val(0);
    synth->add_option("--out", synth_args.out_dir, "output directory")->required();
    synth->add_option("--image-size", synth_args.spec.image_size, "square image size")
        ->default_val(128);
    synth->add_option("--train-count", synth_args.spec.train_count,
                      "exact train count (with --val-count/--test-count)");
    synth->add_option("--val-count", synth_args.spec.val_count, "exact val count");
    synth->add_option("--test-count", synth_args.spec.test_count, "exact test count");
    synth->add_option("--decoy-probability", synth_args.spec.decoy_probability,
                      "chance of concept-like clutter outside the lesion")
        ->default_val(0.65);

    // validate-manifest --------------------------------------------------
    auto* validate = app.add_subcommand("validate-manifest", "parse and fully decode a manifest");
    std::string validate_path;
    ConfigFlags validate_flags;
    validate->add_option("--path", validate_path, "manifest csv")->required();
    add_config_flags(validate, validate_flags);

    // train --------------------------------------------------------------
    auto* train = app.add_subcommand("train", "run the three-stage training schedule");
    ConfigFlags train_flags;
    std::string train_manifest, train_out;
    std::uint64_t train_seed = 0;
    bool train_seed_set = false, train_verbose = false;
    train->add_option("--manifest", train_manifest, "dataset manifest csv");
    train->add_option("--out-dir", train_out, "output directory for checkpoints and logs");
    train->add_option("--seed", train_seed, "training seed")->each([&](const std::string&) {
        train_seed_set = true;
    });
    train->add_flag("--verbose", train_verbose, "per-epoch progress on stderr");
    add_config_flags(train, train_flags);

    // eval ----------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
    EvalArgs eval_args;
    ConfigFlags eval_flags;
    eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
    eval->add_option("--manifest", eval_args.manifest, "dataset manifest csv")->required();
    eval->add_option("--split", eval_args.split, "train|val|test")->default_val("test");
    eval->add_option("--report", eval_args.report_path, "write the JSON report here");
    eval->add_option("--compare-checkpoint", eval_args.compare_checkpoint,
                     "second checkpoint for cross-model DSC");
    add_config_flags(eval, eval_flags);

    // explain ---------------------------------------------------------------
    auto* explain = app.add_subcommand("explain", "explain one image");
    ExplainArgs explain_args;
    explain->add_option("--checkpoint", explain_args.checkpoint, "model checkpoint")->required();
    explain->add_option("--image", explain_args.image_path, "input png")->required();
    explain->add_option("--mask", explain_args.mask_path, "lesion mask png (masked modes)");
    explain->add_option("--out-dir", explain_args.out_dir, "report + overlay directory")
        ->default_val("explain_out");
    explain->add_option("--report-threshold", explain_args.report_threshold,
                        "contribution below this is treated as null")
        ->default_val(0.01);

    // ablate-losses --------------------------------------------------------
    auto* ablate_losses = app.add_subcommand("ablate-losses", "train the seven loss variants");
    ConfigFlags ablate_flags;
    std::vector<std::uint64_t> ablate_seeds;
    bool ablate_parallel = false;
    std::string ablate_manifest, ablate_out;
    ablate_losses->add_option("--manifest", ablate_manifest, "dataset manifest csv");
    ablate_losses->add_option("--out-dir", ablate_out, "output directory");
    ablate_losses->add_option("--seeds", ablate_seeds, "seeds (one run per variant per seed)")
        ->expected(-1);
    ablate_losses->add_flag("--parallel", ablate_parallel,
                            "run variants concurrently (same per-variant results)");
    add_config_flags(ablate_losses, ablate_flags);

    // ablate-segmentation ----------------------------------------------------
    auto* ablate_seg = app.add_subcommand("ablate-segmentation", "raw vs masked preprocessing");
    ConfigFlags seg_flags;
    std::string seg_manifest, seg_out;
    ablate_seg->add_option("--manifest", seg_manifest, "dataset manifest csv");
    ablate_seg->add_option("--out-dir", seg_out, "output directory");
    add_config_flags(ablate_seg, seg_flags);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            const DatasetManifest m = cmd_synth(synth_args);
            std::cout << "wrote " << m.rows.size() << " samples under " << synth_args.out_dir
                      << "\n";
        } else if (*validate) {
            RunConfig config;
            apply_flags(config, validate_flags);
            const ManifestSummary s = cmd_validate_manifest(validate_path, config);
            std::cout << "ok: " << s.rows << " rows (train " << s.train << ", val " << s.val
                      << ", test " << s.test << "), " << s.with_mask << " with masks\n";
        } else if (*train) {
            RunConfig config;
            apply_flags(config, train_flags);
            if (!train_manifest.empty()) config.manifest = train_manifest;
            if (!train_out.empty()) config.out_dir = train_out;
            if (train_seed_set) config.seed = train_seed;
            const TrainOutcome outcome = cmd_train(config);
            (void)train_verbose;
            std::cout << "best val accuracy " << outcome.result.best_val_accuracy << " (epoch "
                      << outcome.result.best_epoch << ")\n";
            if (!outcome.data.test.empty())
                std::cout << "test accuracy " << outcome.test_summary.classification.accuracy
                          << ", concept F1 " << outcome.test_summary.concepts.micro_f1 << "\n";
            std::cout << "checkpoints under " << config.out_dir << "\n";
        } else if (*eval) {
            apply_flags(eval_args.config, eval_flags);
            const EvalOutcome outcome = cmd_eval(eval_args);
            std::cout << outcome.report_json << "\n";
        } else if (*explain) {
            const ExplanationReport report = cmd_explain(explain_args);
            std::cout << report.text << "\n";
            std::cout << "report + overlays under " << explain_args.out_dir << "\n";
        } else if (*ablate_losses) {
            RunConfig config;
            apply_flags(config, ablate_flags);
            if (!ablate_manifest.empty()) config.manifest = ablate_manifest;
            if (!ablate_out.empty()) config.out_dir = ablate_out;
            const AblationTable table = cmd_ablate_losses(config, ablate_seeds, ablate_parallel);
            std::cout << table.text;
        } else if (*ablate_seg) {
            RunConfig config;
            apply_flags(config, seg_flags);
            if (!seg_manifest.empty()) config.manifest = seg_manifest;
            if (!seg_out.empty()) config.out_dir = seg_out;
            const AblationTable table = cmd_ablate_segmentation(config);
            std::cout << table.text;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
