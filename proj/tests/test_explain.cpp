#include <doctest.h>

#include <cmath>

#include "coherent/explain.hpp"
#include "coherent/image.hpp"
#include "coherent/rng.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace coherent;

TEST_CASE("concept presence follows the sign of the logit; ties count as absent") {
    const auto p = concept_presence({-1.0, 2.0, 0.0});
    CHECK(p == std::vector<int>{0, 1, 0});
    CHECK(concept_presence({-3.0, -0.1, -7.0}) == std::vector<int>{0, 0, 0});
}

TEST_CASE("concept presence agrees with the sign of tanh(v)") {
    Rng rng(1);
    for (int t = 0; t < 50; ++t) {
        const auto v = testutil::random_vec(8, rng, -4.0, 4.0);
        const auto p = concept_presence(v);
        for (std::size_t i = 0; i < v.size(); ++i)
            CHECK(p[i] == (std::tanh(v[i]) > 0.0 ? 1 : 0));
    }
}

TEST_CASE("contributions: equal products give the uniform distribution") {
    Linear cls(8, 2, true);
    cls.weight.fill(0.5);
    const std::vector<double> v(8, 1.2);
    const auto c = contributions(v, cls, 0);
    for (double x : c) CHECK(x == doctest::Approx(0.125));
}

TEST_CASE("contributions: a dominating product saturates toward 1") {
    Linear cls(4, 2, true);
    cls.weight.fill(1.0);
    const std::vector<double> v = {20.0, 0.0, 0.0, 0.0};
    const auto c = contributions(v, cls, 0);
    CHECK(c[0] > 0.999);
}

TEST_CASE("contributions match the direct softmax oracle and sum to one") {
    Rng rng(2);
    for (int t = 0; t < 50; ++t) {
        Linear cls(6, 2, true);
        cls.init_glorot(rng);
        const auto v = testutil::random_vec(6, rng, -2.0, 2.0);
        const int cls_idx = rng.bernoulli(0.5) ? 1 : 0;
        const auto got = contributions(v, cls, cls_idx);
        std::vector<double> products(6);
        for (int i = 0; i < 6; ++i)
            products[static_cast<std::size_t>(i)] =
                v[static_cast<std::size_t>(i)] * cls.weight.at2(cls_idx, i);
        const auto want = oracle::softmax(products);
        double sum = 0.0;
        for (int i = 0; i < 6; ++i) {
            CHECK(std::abs(got[static_cast<std::size_t>(i)] - want[static_cast<std::size_t>(i)]) < 1e-10);
            sum += got[static_cast<std::size_t>(i)];
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("predict_label: identity-like weights pick the larger logit") {
    Linear cls(2, 2, true);
    cls.weight.at2(0, 0) = 1.0;
    cls.weight.at2(1, 1) = 1.0;
    CHECK(predict_label({3.0, 1.0}, cls) == 0);
    CHECK(predict_label({1.0, 3.0}, cls) == 1);
}

TEST_CASE("predict_label is invariant under positive scaling when bias is zero") {
    Rng rng(3);
    Linear cls(5, 3, true);
    cls.init_glorot(rng);
    cls.bias.fill(0.0);
    for (int t = 0; t < 30; ++t) {
        const auto v = testutil::random_vec(5, rng, -2.0, 2.0);
        std::vector<double> scaled(5);
        for (int i = 0; i < 5; ++i) scaled[static_cast<std::size_t>(i)] = 2.0 * v[static_cast<std::size_t>(i)];
        CHECK(predict_label(v, cls) == predict_label(scaled, cls));
    }
}

TEST_CASE("predict_label agrees with the forward-pass argmax on 100 random inputs") {
    Rng rng(4);
    ModelConfig cfg;
    cfg.input_size = 32;
    ConceptModel model = ConceptModel::make(cfg, 77);
    int agree = 0;
    for (int t = 0; t < 100; ++t) {
        const Tensor img = testutil::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
        const ForwardTrace tr = model.forward(img);
        int argmax = 0;
        for (std::size_t c = 1; c < tr.class_scores.size(); ++c)
            if (tr.class_scores[c] > tr.class_scores[static_cast<std::size_t>(argmax)])
                argmax = static_cast<int>(c);
        if (predict_label(tr.logits, model.classifier()) == argmax) ++agree;
    }
    CHECK(agree == 100);
}

namespace {

ExplanationReport make_report(const std::vector<int>& presence,
                              const std::vector<double>& contrib) {
    ExplanationReport r;
    r.predicted_label = 1;
    r.label_name = "Melanoma";
    r.concept_presence = presence;
    r.contributions = contrib;
    r.logits.assign(presence.size(), 0.0);
    return r;
}

}  // namespace

TEST_CASE("render_text lists present concepts by descending contribution") {
    const auto vocab = ConceptVocabulary::dermoscopic();
    std::vector<int> presence(8, 0);
    std::vector<double> contrib(8, 0.0);
    presence[0] = 1;  // APN
    presence[2] = 1;  // BWV
    contrib[0] = 0.7;
    contrib[2] = 0.3;
    const auto report = make_report(presence, contrib);
    const std::string text = render_text(report, vocab);
    CHECK(text == "Classified as Melanoma because Atypical Pigment Network (70.0%) and "
                  "Blue Whitish-Veil (30.0%).");
    const auto apn_pos = text.find("Atypical Pigment Network");
    const auto bwv_pos = text.find("Blue Whitish-Veil");
    CHECK(apn_pos < bwv_pos);
}

TEST_CASE("render_text omits present concepts whose contribution is null") {
    const auto vocab = ConceptVocabulary::dermoscopic();
    std::vector<int> presence(8, 0);
    std::vector<double> contrib(8, 0.0);
    presence[5] = 1;  // RDG present but with zero contribution
    presence[0] = 1;
    contrib[0] = 1.0;
    const auto report = make_report(presence, contrib);
    const std::string text = render_text(report, vocab);
    CHECK(text.find("Regular Dots") == std::string::npos);
    CHECK(text.find("Atypical Pigment Network") != std::string::npos);
}

TEST_CASE("render_text falls back when no concept has positive contribution") {
    const auto vocab = ConceptVocabulary::dermoscopic();
    const auto report = make_report(std::vector<int>(8, 0), std::vector<double>(8, 0.0));
    const std::string text = render_text(report, vocab);
    CHECK(text.find("no supporting concepts identified") != std::string::npos);
}

TEST_CASE("render_text is a pure function of the report") {
    const auto vocab = ConceptVocabulary::dermoscopic();
    std::vector<int> presence(8, 1);
    std::vector<double> contrib(8, 0.125);
    const auto r = make_report(presence, contrib);
    CHECK(render_text(r, vocab) == render_text(r, vocab));
}

TEST_CASE("overlays: zero and constant maps leave the image untouched; count is k") {
    testutil::TempDir dir("overlay");
    Rng rng(5);
    const auto vocab = ConceptVocabulary::dermoscopic();
    const Tensor image = testutil::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    Tensor maps({8, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) maps.at3(1, y, x) = 0.6;  // constant channel
    maps.at3(2, 1, 1) = 1.0;  // a real activation
    const auto paths = export_overlays(image, maps, vocab, dir.str());
    REQUIRE(paths.size() == 8);

    const ImageU8 reference = tensor_to_image(image);
    const ImageU8 zero_overlay = read_png(paths[0]);      // all-zero map
    const ImageU8 const_overlay = read_png(paths[1]);     // constant map
    const ImageU8 active_overlay = read_png(paths[2]);    // varying map
    CHECK(zero_overlay.pixels == reference.pixels);
    CHECK(const_overlay.pixels == reference.pixels);
    CHECK(active_overlay.pixels != reference.pixels);
}

TEST_CASE("explain_image produces a consistent report end to end") {
    testutil::TempDir dir("explain");
    Rng rng(6);
    ModelConfig cfg;
    cfg.input_size = 32;
    ConceptModel model = ConceptModel::make(cfg, 900);
    const Tensor img = testutil::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
    const auto report = explain_image(model, img, ConceptVocabulary::dermoscopic(),
                                      {"Nevus", "Melanoma"}, dir.str());
    double sum = 0.0;
    for (double c : report.contributions) sum += c;
    CHECK(std::abs(sum - 1.0) < 1e-6);
    CHECK(report.overlay_paths.size() == 8);
    CHECK((report.label_name == "Nevus" || report.label_name == "Melanoma"));
    CHECK(report.text.find("Classified as") == 0);
}
