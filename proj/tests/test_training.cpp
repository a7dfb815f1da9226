#include <doctest.h>

#include <cmath>

#include "coherent/commands.hpp"
#include "coherent/common.hpp"
#include "coherent/metrics.hpp"
#include "coherent/training.hpp"
#include "support/test_util.hpp"

using namespace coherent;

namespace {

// Small shared fixture: one synthetic dataset at 32x32 reused by every case.
struct TinyData {
    testutil::TempDir dir{"train_fixture"};
    PreparedData data;
    ConceptPhraseEmbedding phrases;
    ModelConfig model_config;
    CheckpointMeta meta;

    TinyData() {
        SyntheticSpec spec;
        spec.image_size = 32;
        spec.train_count = 32;
        spec.val_count = 8;
        spec.test_count = 8;
        const auto manifest = generate_synthetic(48, 1234, spec, dir.str());
        LoadOptions opts;
        opts.input_size = 32;
        const auto samples = load_all(manifest, opts, 1);

        model_config.input_size = 32;
        model_config.phrase_dim = 16;
        model_config.embed_dim = 12;
        TinyBackbone probe;
        const FeatureDims dims = probe.feature_dims(32);
        data = prepare_data(samples, PreprocessMode::manual_oracle, "", dims);
        phrases = load_phrase_embeddings("random:5", ConceptVocabulary::dermoscopic(), 16);
        meta.vocab = ConceptVocabulary::dermoscopic();
        meta.class_names = {"Nevus", "Melanoma"};
        meta.model = model_config;
    }
};

TinyData& fixture() {
    static TinyData data;
    return data;
}

StageSchedule short_schedule(int e1, int e2, int e3) {
    StageSchedule s;
    s.epochs[0] = e1;
    s.epochs[1] = e2;
    s.epochs[2] = e3;
    return s;
}

LossConfig default_losses() {
    LossConfig cfg;
    cfg.gamma = 0.25;
    return cfg;
}

TrainOptions quick_options(std::uint64_t seed) {
    TrainOptions o;
    o.batch_size = 8;
    o.seed = seed;
    o.threads = 1;
    return o;
}

bool params_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) return false;
        for (std::size_t j = 0; j < a[i].size(); ++j)
            if (a[i][j] != b[i][j]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("an all-zero schedule returns the untouched initialization") {
    auto& fx = fixture();
    const auto r = train_model(fx.data, fx.model_config, default_losses(), short_schedule(0, 0, 0),
                               fx.phrases, quick_options(7), fx.meta);
    CHECK(r.history.empty());
    const ConceptModel fresh =
        ConceptModel::make(fx.model_config, Rng(7).fork("init").next_u64());
    CHECK(params_equal(snapshot_params(r.model), snapshot_params(fresh)));
}

TEST_CASE("training is deterministic in (config, seed)") {
    auto& fx = fixture();
    const auto r1 = train_model(fx.data, fx.model_config, default_losses(), short_schedule(2, 1, 1),
                                fx.phrases, quick_options(99), fx.meta);
    const auto r2 = train_model(fx.data, fx.model_config, default_losses(), short_schedule(2, 1, 1),
                                fx.phrases, quick_options(99), fx.meta);
    REQUIRE(r1.history.size() == r2.history.size());
    for (std::size_t i = 0; i < r1.history.size(); ++i) {
        CHECK(r1.history[i].val_accuracy == r2.history[i].val_accuracy);
        CHECK(r1.history[i].mean_total == r2.history[i].mean_total);
    }
    CHECK(params_equal(snapshot_params(r1.model), snapshot_params(r2.model)));
}

TEST_CASE("results do not depend on the worker count") {
    auto& fx = fixture();
    TrainOptions one = quick_options(5);
    TrainOptions four = quick_options(5);
    four.threads = 4;
    const auto r1 = train_model(fx.data, fx.model_config, default_losses(), short_schedule(1, 1, 0),
                                fx.phrases, one, fx.meta);
    const auto r4 = train_model(fx.data, fx.model_config, default_losses(), short_schedule(1, 1, 0),
                                fx.phrases, four, fx.meta);
    CHECK(params_equal(snapshot_params(r1.model), snapshot_params(r4.model)));
}

TEST_CASE("freezing everything makes an epoch a pure evaluation pass") {
    auto& fx = fixture();
    StageSchedule s = short_schedule(1, 0, 0);
    s.frozen_groups[0] = {"backbone", "encoder", "embed_visual", "embed_text", "classifier"};
    const auto r = train_model(fx.data, fx.model_config, default_losses(), s, fx.phrases,
                               quick_options(3), fx.meta);
    const ConceptModel fresh =
        ConceptModel::make(fx.model_config, Rng(3).fork("init").next_u64());
    CHECK(params_equal(snapshot_params(r.model), snapshot_params(fresh)));
    CHECK(r.history.size() == 1);
}

TEST_CASE("stage-1 freezing keeps the backbone bit-identical while the encoder moves") {
    auto& fx = fixture();
    const auto r = train_model(fx.data, fx.model_config, default_losses(), short_schedule(1, 0, 0),
                               fx.phrases, quick_options(11), fx.meta);
    const ConceptModel fresh =
        ConceptModel::make(fx.model_config, Rng(11).fork("init").next_u64());
    const auto trained = snapshot_params(r.model);
    const auto init = snapshot_params(fresh);
    const auto refs = fresh.parameters();
    bool encoder_moved = false;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].group == "backbone") {
            for (std::size_t j = 0; j < trained[i].size(); ++j)
                CHECK(trained[i][j] == init[i][j]);
        } else if (refs[i].group == "encoder") {
            for (std::size_t j = 0; j < trained[i].size(); ++j)
                if (trained[i][j] != init[i][j]) encoder_moved = true;
        }
    }
    CHECK(encoder_moved);
}

TEST_CASE("stage 3 trains only the classifier") {
    auto& fx = fixture();
    const auto r = train_model(fx.data, fx.model_config, default_losses(), short_schedule(0, 0, 2),
                               fx.phrases, quick_options(13), fx.meta);
    const ConceptModel fresh =
        ConceptModel::make(fx.model_config, Rng(13).fork("init").next_u64());
    const auto trained = snapshot_params(r.model);
    const auto init = snapshot_params(fresh);
    const auto refs = fresh.parameters();
    bool classifier_moved = false;
    for (std::size_t i = 0; i < refs.size(); ++i) {
        if (refs[i].group == "classifier") {
            for (std::size_t j = 0; j < trained[i].size(); ++j)
                if (trained[i][j] != init[i][j]) classifier_moved = true;
        } else {
            for (std::size_t j = 0; j < trained[i].size(); ++j)
                CHECK(trained[i][j] == init[i][j]);
        }
    }
    CHECK(classifier_moved);
}

TEST_CASE("schedule validation rejects unknown groups and broken stage contracts") {
    auto& fx = fixture();
    StageSchedule bad_group = short_schedule(1, 0, 0);
    bad_group.frozen_groups[0] = {"backbone", "nonexistent"};
    CHECK_THROWS_AS(train_model(fx.data, fx.model_config, default_losses(), bad_group, fx.phrases,
                                quick_options(1), fx.meta),
                    ConfigError);

    StageSchedule no_freeze = short_schedule(1, 0, 0);
    no_freeze.frozen_groups[0] = {};
    CHECK_THROWS_AS(train_model(fx.data, fx.model_config, default_losses(), no_freeze, fx.phrases,
                                quick_options(1), fx.meta),
                    ConfigError);

    StageSchedule bad_stage3 = short_schedule(0, 0, 1);
    bad_stage3.frozen_groups[2] = {"backbone"};
    CHECK_THROWS_AS(train_model(fx.data, fx.model_config, default_losses(), bad_stage3, fx.phrases,
                                quick_options(1), fx.meta),
                    ConfigError);
}

TEST_CASE("best checkpoint tracks the maximum validation accuracy seen") {
    auto& fx = fixture();
    const auto r = train_model(fx.data, fx.model_config, default_losses(), short_schedule(3, 2, 1),
                               fx.phrases, quick_options(17), fx.meta);
    double best = 0.0;
    for (const auto& e : r.history) best = std::max(best, e.val_accuracy);
    CHECK(r.best_val_accuracy == best);
    for (const auto& e : r.history) CHECK(r.best_val_accuracy >= e.val_accuracy);
    CHECK(r.best_epoch >= 1);
}

TEST_CASE("exploding updates abort with a diagnostic instead of propagating NaN") {
    auto& fx = fixture();
    StageSchedule s = short_schedule(3, 0, 0);
    s.learning_rates[0] = 1e150;  // guarantees non-finite activations next epoch
    CHECK_THROWS_AS(train_model(fx.data, fx.model_config, default_losses(), s, fx.phrases,
                                quick_options(19), fx.meta),
                    TrainingError);
}

TEST_CASE("gamma > 0 demands masks on the training split") {
    auto& fx = fixture();
    PreparedData no_masks = fx.data;
    for (auto& s : no_masks.train) {
        s.targets = Tensor();
        s.has_mask = false;
    }
    CHECK_THROWS_AS(train_model(no_masks, fx.model_config, default_losses(), short_schedule(1, 0, 0),
                                fx.phrases, quick_options(1), fx.meta),
                    ConfigError);
}

TEST_CASE("adam with frozen mask leaves parameters bit-identical over many steps") {
    auto& fx = fixture();
    ConceptModel model = ConceptModel::make(fx.model_config, 4242);
    auto params = model.parameters();
    const auto before = snapshot_params(model);
    Adam adam(params, 0.9, 0.999, 1e-8);
    std::vector<bool> frozen(params.size(), true);
    ModelGrads grads = model.make_grads();
    for (auto& g : grads.tensors)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = 1.0;
    for (int step = 0; step < 10; ++step) adam.step(params, grads, frozen, 0.1);
    CHECK(params_equal(snapshot_params(model), before));
}
