#include "coherent/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iostream>
#include <thread>

#include "coherent/common.hpp"
#include "coherent/image.hpp"

namespace coherent {

ConceptF1 concept_f1(const Tensor& pred, const Tensor& truth) {
    pred.check_same_shape(truth);
    if (pred.rank() != 2) throw ShapeError("concept_f1 wants n x k tensors");
    const int n = pred.dim(0), k = pred.dim(1);
    ConceptF1 out;
    out.per_concept.assign(static_cast<std::size_t>(k), 0.0);
    for (int c = 0; c < k; ++c) {
        long tp = 0, fp = 0, fn = 0;
        for (int i = 0; i < n; ++i) {
            const bool p = pred.at2(i, c) >= 0.5;
            const bool t = truth.at2(i, c) >= 0.5;
            if (p && t) ++tp;
            else if (p && !t) ++fp;
            else if (!p && t) ++fn;
        }
        out.tp += tp;
        out.fp += fp;
        out.fn += fn;
        const long denom = 2 * tp + fp + fn;
        out.per_concept[static_cast<std::size_t>(c)] =
            denom > 0 ? 2.0 * tp / static_cast<double>(denom) : 0.0;
    }
    const long denom = 2 * out.tp + out.fp + out.fn;
    if (denom == 0) {
        std::cerr << "warning: concept F1 has no positives anywhere; reporting 0\n";
        out.micro_f1 = 0.0;
    } else {
        out.micro_f1 = 2.0 * out.tp / static_cast<double>(denom);
    }
    return out;
}

std::optional<double> rank_auc(const std::vector<double>& score, const std::vector<int>& labels) {
    const int n = static_cast<int>(score.size());
    long n_pos = 0, n_neg = 0;
    for (int l : labels) (l == 1 ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)]; });

    // Average ranks over tie groups (1-based ranks).
    double pos_rank_sum = 0.0;
    int i = 0;
    while (i < n) {
        int j = i;
        while (j < n && score[static_cast<std::size_t>(order[static_cast<std::size_t>(j)])] ==
                            score[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])])
            ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (int t = i; t < j; ++t)
            if (labels[static_cast<std::size_t>(order[static_cast<std::size_t>(t)])] == 1)
                pos_rank_sum += avg_rank;
        i = j;
    }
    return (pos_rank_sum - static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassificationMetrics classification_metrics(const std::vector<std::vector<double>>& scores,
                                             const std::vector<int>& labels) {
    const int n = static_cast<int>(scores.size());
    if (n == 0 || scores.size() != labels.size())
        throw ShapeError("classification_metrics: empty or mismatched inputs");
    const int n_classes = static_cast<int>(scores[0].size());

    ClassificationMetrics out;
    out.n = n;
    out.confusion.assign(static_cast<std::size_t>(n_classes),
                         std::vector<long>(static_cast<std::size_t>(n_classes), 0));
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        const auto& s = scores[static_cast<std::size_t>(i)];
        int argmax = 0;
        for (int c = 1; c < n_classes; ++c)
            if (s[static_cast<std::size_t>(c)] > s[static_cast<std::size_t>(argmax)]) argmax = c;
        const int truth = labels[static_cast<std::size_t>(i)];
        if (truth < 0 || truth >= n_classes)
            throw ShapeError("classification_metrics: label out of range");
        out.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(argmax)]++;
        if (argmax == truth) ++correct;
    }
    out.accuracy = static_cast<double>(correct) / n;

    if (n_classes == 2) {
        const long tp = out.confusion[1][1], fn = out.confusion[1][0];
        const long tn = out.confusion[0][0], fp = out.confusion[0][1];
        if (tp + fn > 0) out.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
        if (tn + fp > 0) out.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);

        // Melanoma probability drives the ranking.
        std::vector<double> prob(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& s = scores[static_cast<std::size_t>(i)];
            const double mx = std::max(s[0], s[1]);
            const double e0 = std::exp(s[0] - mx), e1 = std::exp(s[1] - mx);
            prob[static_cast<std::size_t>(i)] = e1 / (e0 + e1);
        }
        out.auc = rank_auc(prob, labels);
    }
    return out;
}

L2Error l2_explanation_error(const Tensor& pred_scores, const Tensor& truth) {
    pred_scores.check_same_shape(truth);
    if (pred_scores.rank() != 2) throw ShapeError("l2_explanation_error wants n x k tensors");
    const int n = pred_scores.dim(0), k = pred_scores.dim(1);
    L2Error out;
    for (int i = 0; i < n; ++i) {
        double d2 = 0.0;
        for (int c = 0; c < k; ++c) {
            const double d = pred_scores.at2(i, c) - truth.at2(i, c);
            d2 += d * d;
        }
        out.sum += std::sqrt(d2);
    }
    out.mean = n > 0 ? out.sum / n : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Localization
// ---------------------------------------------------------------------------

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const std::size_t m = sorted.size();
    if (m == 0) return 0.0;
    if (m == 1) return sorted[0];
    const double pos = q * static_cast<double>(m - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= m) return sorted[m - 1];
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

}  // namespace

std::vector<double> activation_thresholds(const std::vector<Tensor>& train_maps, double quantile) {
    if (train_maps.empty()) throw ShapeError("activation_thresholds: no training maps");
    if (quantile < 0.0 || quantile >= 1.0)
        throw ConfigError("binarization quantile must be in [0,1)");
    const int k = train_maps[0].dim(0);
    const int pq = train_maps[0].dim(1) * train_maps[0].dim(2);
    std::vector<double> thresholds(static_cast<std::size_t>(k), 0.0);
    for (int c = 0; c < k; ++c) {
        std::vector<double> pool;
        pool.reserve(train_maps.size() * static_cast<std::size_t>(pq));
        for (const auto& m : train_maps) {
            const double* p = m.data() + static_cast<std::size_t>(c) * pq;
            pool.insert(pool.end(), p, p + pq);
        }
        std::sort(pool.begin(), pool.end());
        thresholds[static_cast<std::size_t>(c)] = quantile_sorted(pool, quantile);
        if (pool.back() <= 0.0)
            std::cerr << "warning: concept channel " << c
                      << " is all-zero on the training split; its binary maps will be empty\n";
    }
    return thresholds;
}

Tensor binarize_map(const Tensor& maps, const std::vector<double>& thresholds) {
    if (maps.rank() != 3) throw ShapeError("binarize_map wants k x p x q");
    const int k = maps.dim(0), p = maps.dim(1), q = maps.dim(2);
    if (static_cast<int>(thresholds.size()) != k)
        throw ShapeError("binarize_map: thresholds size mismatch");
    Tensor out({k, p, q});
    for (int c = 0; c < k; ++c)
        for (int y = 0; y < p; ++y)
            for (int x = 0; x < q; ++x)
                out.at3(c, y, x) =
                    maps.at3(c, y, x) > thresholds[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
    return out;
}

std::optional<double> dsc_binary(const Tensor& x, const Tensor& y) {
    x.check_same_shape(y);
    double inter = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool a = x[i] >= 0.5, b = y[i] >= 0.5;
        if (a) sx += 1.0;
        if (b) sy += 1.0;
        if (a && b) inter += 1.0;
    }
    if (sx + sy == 0.0) return std::nullopt;
    return 2.0 * inter / (sx + sy);
}

std::optional<BBox> largest_component_bbox(const Tensor& binary) {
    if (binary.rank() != 2) throw ShapeError("largest_component_bbox wants rank-2");
    const int h = binary.dim(0), w = binary.dim(1);
    std::vector<int> comp(static_cast<std::size_t>(h) * w, -1);
    int best_size = 0;
    std::optional<BBox> best;
    int next_id = 0;
    for (int sy = 0; sy < h; ++sy)
        for (int sx = 0; sx < w; ++sx) {
            if (binary.at2(sy, sx) < 0.5 || comp[static_cast<std::size_t>(sy) * w + sx] >= 0)
                continue;
            // BFS flood fill, 8-connected.
            std::deque<std::pair<int, int>> queue{{sy, sx}};
            comp[static_cast<std::size_t>(sy) * w + sx] = next_id;
            BBox box{sy, sx, sy, sx};
            int size = 0;
            while (!queue.empty()) {
                const auto [y, x] = queue.front();
                queue.pop_front();
                ++size;
                box.y0 = std::min(box.y0, y);
                box.y1 = std::max(box.y1, y);
                box.x0 = std::min(box.x0, x);
                box.x1 = std::max(box.x1, x);
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy, nx = x + dx;
                        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                        if (binary.at2(ny, nx) < 0.5 ||
                            comp[static_cast<std::size_t>(ny) * w + nx] >= 0)
                            continue;
                        comp[static_cast<std::size_t>(ny) * w + nx] = next_id;
                        queue.emplace_back(ny, nx);
                    }
            }
            if (size > best_size) {
                best_size = size;
                best = box;
            }
            ++next_id;
        }
    return best;
}

namespace {

bool qualifies(const ConceptMapsForSample& s, int c, AgreementRule rule) {
    const bool present = s.presence[static_cast<std::size_t>(c)] >= 0.5;
    if (rule == AgreementRule::both_present) return present;
    return present && s.truth[static_cast<std::size_t>(c)] >= 0.5;
}

Tensor concept_plane(const Tensor& maps, int c) {
    const int p = maps.dim(1), q = maps.dim(2);
    Tensor plane({p, q});
    for (int y = 0; y < p; ++y)
        for (int x = 0; x < q; ++x) plane.at2(y, x) = maps.at3(c, y, x);
    return plane;
}

}  // namespace

std::map<int, double> pairwise_dsc(const std::vector<ConceptMapsForSample>& model_a,
                                   const std::vector<ConceptMapsForSample>& model_b,
                                   AgreementRule rule) {
    if (model_a.size() != model_b.size())
        throw ShapeError("pairwise_dsc: sample counts differ");
    std::map<int, double> out;
    if (model_a.empty()) return out;
    const int k = model_a[0].binary.dim(0);
    for (int c = 0; c < k; ++c) {
        double sum = 0.0;
        int count = 0;
        for (std::size_t i = 0; i < model_a.size(); ++i) {
            if (!qualifies(model_a[i], c, rule) || !qualifies(model_b[i], c, rule)) continue;
            const auto d = dsc_binary(concept_plane(model_a[i].binary, c),
                                      concept_plane(model_b[i].binary, c));
            if (!d) continue;
            sum += *d;
            ++count;
        }
        if (count > 0) out[c] = sum / count;
    }
    return out;
}

std::map<int, double> patch_cosine(const ConceptModel& model, const std::vector<Tensor>& images,
                                   const std::vector<ConceptMapsForSample>& maps,
                                   AgreementRule rule) {
    if (images.size() != maps.size()) throw ShapeError("patch_cosine: sample counts differ");
    std::map<int, double> out;
    if (maps.empty()) return out;
    const int k = maps[0].binary.dim(0);
    const int input = model.config().input_size;

    for (int c = 0; c < k; ++c) {
        std::vector<std::vector<double>> feats;
        for (std::size_t i = 0; i < maps.size(); ++i) {
            if (!qualifies(maps[i], c, rule)) continue;
            const auto box = largest_component_bbox(concept_plane(maps[i].binary, c));
            if (!box) continue;
            const Tensor& img = images[i];
            const int h = img.dim(1), w = img.dim(2);
            const int p = maps[i].binary.dim(1), q = maps[i].binary.dim(2);
            // Feature-grid bbox scaled to image coordinates.
            const int y0 = std::clamp(box->y0 * h / p, 0, h - 1);
            const int y1 = std::clamp((box->y1 + 1) * h / p, y0 + 1, h);
            const int x0 = std::clamp(box->x0 * w / q, 0, w - 1);
            const int x1 = std::clamp((box->x1 + 1) * w / q, x0 + 1, w);
            Tensor crop({img.dim(0), y1 - y0, x1 - x0});
            for (int ch = 0; ch < img.dim(0); ++ch)
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x)
                        crop.at3(ch, y - y0, x - x0) = img.at3(ch, y, x);
            const Tensor resized = resize_bilinear(crop, input, input);
            const Tensor features = model.backbone().forward(resized).back();
            feats.push_back(global_average_pool(features));
        }
        if (feats.size() < 2) continue;
        double sum = 0.0;
        int pairs = 0;
        for (std::size_t i = 0; i < feats.size(); ++i)
            for (std::size_t j = i + 1; j < feats.size(); ++j) {
                const double na = l2_norm(feats[i]), nb = l2_norm(feats[j]);
                sum += (na > 0.0 && nb > 0.0) ? dot(feats[i], feats[j]) / (na * nb) : 0.0;
                ++pairs;
            }
        out[c] = sum / pairs;
    }
    return out;
}

InMaskStats in_mask_activation(const std::vector<Tensor>& maps,
                               const std::vector<const Tensor*>& targets,
                               const std::vector<const std::vector<double>*>& z) {
    if (maps.size() != targets.size() || maps.size() != z.size())
        throw ShapeError("in_mask_activation: input sizes differ");
    InMaskStats out;
    if (maps.empty()) return out;
    const int k = maps[0].dim(0);
    out.per_concept.assign(static_cast<std::size_t>(k), 0.0);
    out.per_concept_support.assign(static_cast<std::size_t>(k), 0);
    double total = 0.0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        if (!targets[i] || targets[i]->empty()) continue;
        const int pq = maps[i].dim(1) * maps[i].dim(2);
        for (int c = 0; c < k; ++c) {
            if ((*z[i])[static_cast<std::size_t>(c)] < 0.5) continue;
            const double* a = maps[i].data() + static_cast<std::size_t>(c) * pq;
            const double* m = targets[i]->data() + static_cast<std::size_t>(c) * pq;
            double mass = 0.0, inside = 0.0;
            for (int j = 0; j < pq; ++j) {
                mass += a[j];
                inside += a[j] * m[j];
            }
            if (mass <= 1e-12) continue;  // dead channel on this sample
            const double frac = inside / mass;
            total += frac;
            ++out.support;
            out.per_concept[static_cast<std::size_t>(c)] += frac;
            out.per_concept_support[static_cast<std::size_t>(c)]++;
        }
    }
    out.mean_fraction = out.support > 0 ? total / out.support : 0.0;
    for (int c = 0; c < k; ++c)
        if (out.per_concept_support[static_cast<std::size_t>(c)] > 0)
            out.per_concept[static_cast<std::size_t>(c)] /=
                out.per_concept_support[static_cast<std::size_t>(c)];
    return out;
}

// ---------------------------------------------------------------------------
// Whole-split evaluation
// ---------------------------------------------------------------------------

std::vector<SampleEval> collect_eval(const ConceptModel& model,
                                     const std::vector<PreparedSample>& samples, int threads) {
    std::vector<SampleEval> out(samples.size());
    std::vector<std::thread> pool;
    const int n = static_cast<int>(samples.size());
    auto work = [&](int i) {
        const ForwardTrace t = model.forward(samples[static_cast<std::size_t>(i)].input);
        SampleEval& e = out[static_cast<std::size_t>(i)];
        e.class_scores = t.class_scores;
        e.logits = t.logits;
        e.maps = t.maps;
        e.label = samples[static_cast<std::size_t>(i)].label;
    };
    if (threads <= 1 || n < 2) {
        for (int i = 0; i < n; ++i) work(i);
    } else {
        const int w = std::min(threads, n);
        for (int t = 0; t < w; ++t)
            pool.emplace_back([&, t]() {
                for (int i = t; i < n; i += w) work(i);
            });
        for (auto& th : pool) th.join();
    }
    return out;
}

EvalSummary evaluate_split_full(const ConceptModel& model,
                                const std::vector<PreparedSample>& samples, int threads) {
    if (samples.empty()) throw ConfigError("evaluation split is empty");
    const auto evals = collect_eval(model, samples, threads);
    const int n = static_cast<int>(samples.size());
    const int k = model.config().num_concepts;

    std::vector<std::vector<double>> scores;
    std::vector<int> labels;
    Tensor presence({n, k}), truth({n, k}), sigmoid_scores({n, k});
    std::vector<Tensor> maps;
    std::vector<const Tensor*> targets;
    std::vector<const std::vector<double>*> zs;
    for (int i = 0; i < n; ++i) {
        const auto& e = evals[static_cast<std::size_t>(i)];
        scores.push_back(e.class_scores);
        labels.push_back(e.label);
        for (int c = 0; c < k; ++c) {
            const double v = e.logits[static_cast<std::size_t>(c)];
            presence.at2(i, c) = v > 0.0 ? 1.0 : 0.0;
            sigmoid_scores.at2(i, c) = 1.0 / (1.0 + std::exp(-v));
            truth.at2(i, c) = samples[static_cast<std::size_t>(i)].z[static_cast<std::size_t>(c)];
        }
        maps.push_back(e.maps);
        targets.push_back(&samples[static_cast<std::size_t>(i)].targets);
        zs.push_back(&samples[static_cast<std::size_t>(i)].z);
    }

    EvalSummary out;
    out.classification = classification_metrics(scores, labels);
    out.concepts = concept_f1(presence, truth);
    out.l2 = l2_explanation_error(sigmoid_scores, truth);
    out.in_mask = in_mask_activation(maps, targets, zs);
    return out;
}

}  // namespace coherent
