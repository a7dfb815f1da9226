#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "coherent/metrics.hpp"
#include "coherent/rng.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace coherent;

TEST_CASE("classification metrics: perfect separation") {
    std::vector<std::vector<double>> scores = {{2.0, -1.0}, {3.0, 0.0}, {-1.0, 2.0}, {0.0, 4.0}};
    std::vector<int> labels = {0, 0, 1, 1};
    const auto m = classification_metrics(scores, labels);
    CHECK(m.accuracy == 1.0);
    CHECK(*m.sensitivity == 1.0);
    CHECK(*m.specificity == 1.0);
    CHECK(*m.auc == 1.0);
}

TEST_CASE("classification metrics: constant scores give AUC 0.5 by tie-averaging") {
    std::vector<std::vector<double>> scores(6, {0.3, 0.3});
    std::vector<int> labels = {0, 1, 0, 1, 0, 1};
    const auto m = classification_metrics(scores, labels);
    CHECK(*m.auc == doctest::Approx(0.5));
}

TEST_CASE("classification metrics: single-class test set leaves AUC undefined") {
    std::vector<std::vector<double>> scores = {{1.0, 0.0}, {0.5, 0.2}};
    std::vector<int> labels = {0, 0};
    const auto m = classification_metrics(scores, labels);
    CHECK_FALSE(m.auc.has_value());
    CHECK_FALSE(m.sensitivity.has_value());
    CHECK(m.specificity.has_value());
}

TEST_CASE("rank AUC equals the all-pairs oracle on a handcrafted 6-sample case") {
    const std::vector<double> score = {0.1, 0.4, 0.35, 0.8, 0.35, 0.9};
    const std::vector<int> labels = {0, 0, 1, 1, 0, 1};
    const auto auc = rank_auc(score, labels);
    REQUIRE(auc.has_value());
    CHECK(*auc == oracle::auc_pairs(score, labels));
}

TEST_CASE("rank AUC equals the all-pairs oracle exactly on random instances up to n=50") {
    Rng rng(99);
    for (int trial = 0; trial < 60; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_index(49));
        std::vector<double> score(static_cast<std::size_t>(n));
        std::vector<int> labels(static_cast<std::size_t>(n));
        bool has0 = false, has1 = false;
        for (int i = 0; i < n; ++i) {
            // coarse grid forces plenty of ties
            score[static_cast<std::size_t>(i)] = std::floor(rng.uniform() * 8.0) / 8.0;
            labels[static_cast<std::size_t>(i)] = rng.bernoulli(0.5) ? 1 : 0;
            (labels[static_cast<std::size_t>(i)] ? has1 : has0) = true;
        }
        if (!has0 || !has1) continue;
        const auto auc = rank_auc(score, labels);
        REQUIRE(auc.has_value());
        CHECK(*auc == oracle::auc_pairs(score, labels));
    }
}

TEST_CASE("concept F1: exact prediction scores 1, empty prediction scores 0") {
    Tensor truth({3, 4});
    truth.at2(0, 1) = 1.0;
    truth.at2(2, 3) = 1.0;
    const auto perfect = concept_f1(truth, truth);
    CHECK(perfect.micro_f1 == 1.0);
    Tensor zeros({3, 4});
    const auto empty = concept_f1(zeros, truth);
    CHECK(empty.micro_f1 == 0.0);
}

TEST_CASE("concept F1 matches a hand-computed confusion matrix on a 4x3 case") {
    // pred:        truth:
    // 1 0 1        1 1 0
    // 0 1 0        0 1 0
    // 1 1 0        1 0 0
    // 0 0 1        0 0 1
    Tensor pred({4, 3}), truth({4, 3});
    const double p[12] = {1, 0, 1, 0, 1, 0, 1, 1, 0, 0, 0, 1};
    const double t[12] = {1, 1, 0, 0, 1, 0, 1, 0, 0, 0, 0, 1};
    for (int i = 0; i < 12; ++i) {
        pred[static_cast<std::size_t>(i)] = p[i];
        truth[static_cast<std::size_t>(i)] = t[i];
    }
    // cells: TP = 4 (r0c0, r1c1, r2c0, r3c2), FP = 2 (r0c2, r2c1), FN = 1 (r0c1)
    const auto f1 = concept_f1(pred, truth);
    CHECK(f1.tp == 4);
    CHECK(f1.fp == 2);
    CHECK(f1.fn == 1);
    CHECK(f1.micro_f1 == doctest::Approx(2.0 * 4 / (2.0 * 4 + 2 + 1)));
    // per-concept, concept 0: tp=2 fp=0 fn=0 -> 1.0
    CHECK(f1.per_concept[0] == doctest::Approx(1.0));
}

TEST_CASE("L2 explanation error: zero for exact predictions, 1 for one unit miss") {
    Tensor truth({1, 2});
    const auto zero = l2_explanation_error(truth, truth);
    CHECK(zero.sum == 0.0);
    Tensor pred({1, 2});
    pred.at2(0, 0) = 1.0;
    const auto one = l2_explanation_error(pred, truth);
    CHECK(one.sum == doctest::Approx(1.0));
    CHECK(one.mean == doctest::Approx(1.0));
}

TEST_CASE("L2 explanation error: 30 samples with small per-cell error sum to Table-3 scale") {
    // Per-cell error 0.089 over k=8 gives a per-sample distance of ~0.2517 and
    // a 30-sample sum of ~7.55 — the magnitude the sum aggregation implies.
    Tensor pred({30, 8}), truth({30, 8});
    for (int i = 0; i < 30; ++i)
        for (int c = 0; c < 8; ++c) pred.at2(i, c) = 0.089;
    const auto err = l2_explanation_error(pred, truth);
    CHECK(err.sum == doctest::Approx(30.0 * 0.089 * std::sqrt(8.0)).epsilon(1e-9));
    CHECK(err.sum > 7.0);
    CHECK(err.sum < 8.0);
    CHECK(err.mean == doctest::Approx(err.sum / 30.0));
}

TEST_CASE("binarization thresholds come from training maps only and ignore their order") {
    Rng rng(11);
    std::vector<Tensor> train;
    for (int i = 0; i < 6; ++i) train.push_back(testutil::random_tensor({2, 3, 3}, rng, 0.0, 1.0));
    const auto t1 = activation_thresholds(train, 0.7);
    std::vector<Tensor> shuffled = {train[3], train[0], train[5], train[2], train[4], train[1]};
    const auto t2 = activation_thresholds(shuffled, 0.7);
    CHECK(t1 == t2);
}

TEST_CASE("binarize: quantile 0 keeps everything above the minimum; constants go empty") {
    Tensor maps({2, 2, 2});
    maps.at3(0, 0, 0) = 0.1;
    maps.at3(0, 0, 1) = 0.5;
    maps.at3(0, 1, 0) = 0.9;
    maps.at3(0, 1, 1) = 0.1;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) maps.at3(1, y, x) = 0.7;  // constant channel
    const auto thresholds = activation_thresholds({maps}, 0.0);
    const Tensor bin = binarize_map(maps, thresholds);
    CHECK(bin.at3(0, 0, 0) == 0.0);  // the minimum itself is not strictly above
    CHECK(bin.at3(0, 0, 1) == 1.0);
    CHECK(bin.at3(0, 1, 0) == 1.0);
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) CHECK(bin.at3(1, y, x) == 0.0);
}

TEST_CASE("DSC: identical maps 1, disjoint 0, the 2/3 textbook case") {
    Tensor x({1, 3}), y({1, 3});
    x[0] = 1;
    x[1] = 1;
    y[0] = 1;
    const auto d = dsc_binary(x, y);
    REQUIRE(d.has_value());
    CHECK(*d == doctest::Approx(2.0 / 3.0));
    CHECK(*dsc_binary(x, x) == 1.0);
    Tensor z({1, 3});
    z[2] = 1;
    CHECK(*dsc_binary(x, z) == 0.0);
    Tensor empty({1, 3});
    CHECK_FALSE(dsc_binary(empty, empty).has_value());
}

TEST_CASE("largest connected component bounding box") {
    Tensor map({5, 5});
    // small blob top-left, bigger blob bottom-right
    map.at2(0, 0) = 1;
    map.at2(3, 3) = 1;
    map.at2(3, 4) = 1;
    map.at2(4, 3) = 1;
    const auto box = largest_component_bbox(map);
    REQUIRE(box.has_value());
    CHECK(box->y0 == 3);
    CHECK(box->x0 == 3);
    CHECK(box->y1 == 4);
    CHECK(box->x1 == 4);
    Tensor blank({4, 4});
    CHECK_FALSE(largest_component_bbox(blank).has_value());
}

TEST_CASE("pairwise DSC honors the agreement rule and omits empty concepts") {
    const int k = 2;
    auto make = [&](double presence0, double truth0, bool fill) {
        ConceptMapsForSample s;
        s.binary = Tensor({k, 2, 2});
        if (fill)
            for (int y = 0; y < 2; ++y)
                for (int x = 0; x < 2; ++x) s.binary.at3(0, y, x) = 1.0;
        s.presence = {presence0, 0.0};
        s.truth = {truth0, 0.0};
        return s;
    };
    // Sample qualifies for concept 0 only when predicted present and correct.
    std::vector<ConceptMapsForSample> a = {make(1.0, 1.0, true), make(1.0, 0.0, true)};
    std::vector<ConceptMapsForSample> b = {make(1.0, 1.0, true), make(1.0, 0.0, true)};
    const auto dsc = pairwise_dsc(a, b, AgreementRule::both_correct);
    REQUIRE(dsc.count(0) == 1);
    CHECK(dsc.at(0) == doctest::Approx(1.0));
    CHECK(dsc.count(1) == 0);  // concept 1 never qualifies -> omitted

    // Symmetry.
    const auto dsc_ba = pairwise_dsc(b, a, AgreementRule::both_correct);
    CHECK(dsc_ba.at(0) == dsc.at(0));
}

TEST_CASE("in-mask activation fraction") {
    // Concept 0 present with all mass inside; concept 1 present with half outside.
    Tensor maps({2, 1, 2});
    maps.at3(0, 0, 0) = 2.0;
    maps.at3(0, 0, 1) = 0.0;
    maps.at3(1, 0, 0) = 1.0;
    maps.at3(1, 0, 1) = 1.0;
    Tensor targets({2, 1, 2});
    targets.at3(0, 0, 0) = 1.0;  // lesion covers the left cell
    targets.at3(1, 0, 0) = 1.0;
    const std::vector<double> z = {1.0, 1.0};
    const auto stats = in_mask_activation({maps}, {&targets}, {&z});
    CHECK(stats.support == 2);
    CHECK(stats.per_concept[0] == doctest::Approx(1.0));
    CHECK(stats.per_concept[1] == doctest::Approx(0.5));
    CHECK(stats.mean_fraction == doctest::Approx(0.75));
}

TEST_CASE("metrics ignore sample order") {
    Rng rng(21);
    const int n = 20, k = 4;
    Tensor pred({n, k}), truth({n, k});
    std::vector<std::vector<double>> scores;
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) {
        scores.push_back(testutil::random_vec(2, rng));
        labels.push_back(rng.bernoulli(0.5) ? 1 : 0);
        for (int c = 0; c < k; ++c) {
            pred.at2(i, c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
            truth.at2(i, c) = rng.bernoulli(0.5) ? 1.0 : 0.0;
        }
    }
    if (std::count(labels.begin(), labels.end(), 1) == 0) labels[0] = 1;
    if (std::count(labels.begin(), labels.end(), 0) == 0) labels[1] = 0;

    // permutation
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = (i * 7 + 3) % n;
    std::vector<std::vector<double>> scores_p;
    std::vector<int> labels_p;
    Tensor pred_p({n, k}), truth_p({n, k});
    for (int i = 0; i < n; ++i) {
        const int src = perm[static_cast<std::size_t>(i)];
        scores_p.push_back(scores[static_cast<std::size_t>(src)]);
        labels_p.push_back(labels[static_cast<std::size_t>(src)]);
        for (int c = 0; c < k; ++c) {
            pred_p.at2(i, c) = pred.at2(src, c);
            truth_p.at2(i, c) = truth.at2(src, c);
        }
    }
    const auto m1 = classification_metrics(scores, labels);
    const auto m2 = classification_metrics(scores_p, labels_p);
    CHECK(m1.accuracy == m2.accuracy);
    CHECK(*m1.auc == doctest::Approx(*m2.auc).epsilon(1e-15));
    CHECK(concept_f1(pred, truth).micro_f1 == concept_f1(pred_p, truth_p).micro_f1);
    CHECK(l2_explanation_error(pred, truth).sum ==
          doctest::Approx(l2_explanation_error(pred_p, truth_p).sum).epsilon(1e-12));
}
