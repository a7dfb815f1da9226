#include "coherent/losses.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iostream>

#include "coherent/common.hpp"

namespace coherent {

DiceDenominator parse_dice_denominator(const std::string& s) {
    if (s == "sum") return DiceDenominator::sum;
    if (s == "product") return DiceDenominator::product;
    throw ConfigError("dice_denominator must be sum|product, got '" + s + "'");
}

std::string dice_denominator_name(DiceDenominator d) {
    return d == DiceDenominator::sum ? "sum" : "product";
}

void LossConfig::validate() const {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0,1]");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0,1]");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (beta < 0.0) throw ConfigError("beta must be >= 0");
    if (epsilon <= 0.0) throw ConfigError("epsilon must be > 0");
    if (absent_penalty_weight < 0.0) throw ConfigError("absent_penalty_weight must be >= 0");
}

namespace {

std::atomic<std::uint64_t> g_zero_norm_events{0};

void note_zero_norm() {
    const std::uint64_t n = g_zero_norm_events.fetch_add(1) + 1;
    if (n <= 3)
        std::cerr << "warning: zero-norm embedding row, cosine treated as 0 (event " << n << ")\n";
}

// Cosine of two rows with accumulated gradient support. A zero-norm row makes
// the cosine 0 with zero gradient (happens transiently with dead ReLU units).
struct CosineTerm {
    double value = 0.0;
    bool degenerate = false;
    const double* a = nullptr;
    const double* b = nullptr;
    double inv_na = 0.0, inv_nb = 0.0;
    int dim = 0;

    static CosineTerm make(const double* a, const double* b, int dim) {
        CosineTerm t;
        t.a = a;
        t.b = b;
        t.dim = dim;
        double na2 = 0.0, nb2 = 0.0, ab = 0.0;
        for (int i = 0; i < dim; ++i) {
            na2 += a[i] * a[i];
            nb2 += b[i] * b[i];
            ab += a[i] * b[i];
        }
        if (na2 <= 0.0 || nb2 <= 0.0) {
            t.degenerate = true;
            note_zero_norm();
            return t;
        }
        t.inv_na = 1.0 / std::sqrt(na2);
        t.inv_nb = 1.0 / std::sqrt(nb2);
        t.value = ab * t.inv_na * t.inv_nb;
        return t;
    }

    // Adds coeff * d cos / d a into da (and likewise for b); either may be null.
    void add_grad(double coeff, double* da, double* db) const {
        if (degenerate) return;
        const double s = inv_na * inv_nb;
        for (int i = 0; i < dim; ++i) {
            if (da) da[i] += coeff * (b[i] * s - value * a[i] * inv_na * inv_na);
            if (db) db[i] += coeff * (a[i] * s - value * b[i] * inv_nb * inv_nb);
        }
    }
};

}  // namespace

std::uint64_t zero_norm_cosine_events() { return g_zero_norm_events.load(); }

double classification_loss(const std::vector<double>& scores, int label,
                           std::vector<double>* d_scores, double grad_scale) {
    const int n = static_cast<int>(scores.size());
    if (label < 0 || label >= n) throw ShapeError("classification_loss: label out of range");
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double sum = 0.0;
    for (double s : scores) sum += std::exp(s - mx);
    const double lse = mx + std::log(sum);
    const double loss = lse - scores[static_cast<std::size_t>(label)];
    if (d_scores) {
        for (int c = 0; c < n; ++c) {
            const double p = std::exp(scores[static_cast<std::size_t>(c)] - lse);
            (*d_scores)[static_cast<std::size_t>(c)] +=
                grad_scale * (p - (c == label ? 1.0 : 0.0));
        }
    }
    return loss;
}

double uniqueness_loss(const std::vector<double>& v, const std::vector<double>& z,
                       std::vector<double>* d_v, double grad_scale) {
    if (v.size() != z.size()) throw ShapeError("uniqueness_loss: v and z sizes differ");
    double loss = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i], t = z[i];
        // max(x,0) - x*t + log(1 + exp(-|x|)) == -t*log(sigma) - (1-t)*log(1-sigma)
        loss += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
        if (d_v) {
            const double sig = 1.0 / (1.0 + std::exp(-x));
            (*d_v)[i] += grad_scale * (sig - t);
        }
    }
    return loss;
}

double semantic_triplet_loss(const Tensor& v_emb, const Tensor& s_emb,
                             const std::vector<double>& z, double alpha, Tensor* d_vemb,
                             Tensor* d_semb, double grad_scale) {
    const int k = v_emb.dim(0);
    const int d = v_emb.dim(1);
    if (s_emb.dim(0) != k || s_emb.dim(1) != d)
        throw ShapeError("semantic_triplet_loss: embedding shapes differ");
    double loss = 0.0;
    for (int ci = 0; ci < k; ++ci) {
        if (z[static_cast<std::size_t>(ci)] < 0.5) continue;
        const double* vrow = v_emb.data() + static_cast<std::size_t>(ci) * d;
        double* dvrow = d_vemb ? d_vemb->data() + static_cast<std::size_t>(ci) * d : nullptr;
        const CosineTerm pos = CosineTerm::make(vrow, s_emb.data() + static_cast<std::size_t>(ci) * d, d);
        for (int cj = 0; cj < k; ++cj) {
            if (cj == ci) continue;
            const CosineTerm neg =
                CosineTerm::make(vrow, s_emb.data() + static_cast<std::size_t>(cj) * d, d);
            const double h = neg.value - pos.value + alpha;
            if (h <= 0.0) continue;
            loss += h;
            if (d_vemb || d_semb) {
                double* dsi = d_semb ? d_semb->data() + static_cast<std::size_t>(ci) * d : nullptr;
                double* dsj = d_semb ? d_semb->data() + static_cast<std::size_t>(cj) * d : nullptr;
                neg.add_grad(grad_scale, dvrow, dsj);
                pos.add_grad(-grad_scale, dvrow, dsi);
            }
        }
    }
    return loss;
}

double counter_image_loss(const Tensor& v_emb, const Tensor& v_emb_counter, const Tensor& s_emb,
                          const std::vector<double>& z, const std::vector<double>& z_counter,
                          double beta, Tensor* d_vemb, Tensor* d_vemb_counter, Tensor* d_semb,
                          double grad_scale) {
    const int k = v_emb.dim(0);
    const int d = v_emb.dim(1);
    if (v_emb_counter.dim(0) != k || v_emb_counter.dim(1) != d || s_emb.dim(0) != k ||
        s_emb.dim(1) != d)
        throw ShapeError("counter_image_loss: embedding shapes differ");
    double loss = 0.0;
    for (int c = 0; c < k; ++c) {
        if (!(z_counter[static_cast<std::size_t>(c)] - z[static_cast<std::size_t>(c)] > 0.5))
            continue;
        const double* srow = s_emb.data() + static_cast<std::size_t>(c) * d;
        const CosineTerm counter =
            CosineTerm::make(v_emb_counter.data() + static_cast<std::size_t>(c) * d, srow, d);
        const CosineTerm self = CosineTerm::make(v_emb.data() + static_cast<std::size_t>(c) * d, srow, d);
        const double h = counter.value - self.value + beta;
        if (h <= 0.0) continue;
        loss += h;
        if (d_vemb || d_vemb_counter || d_semb) {
            double* ds = d_semb ? d_semb->data() + static_cast<std::size_t>(c) * d : nullptr;
            double* dvc =
                d_vemb_counter ? d_vemb_counter->data() + static_cast<std::size_t>(c) * d : nullptr;
            double* dv = d_vemb ? d_vemb->data() + static_cast<std::size_t>(c) * d : nullptr;
            counter.add_grad(grad_scale, dvc, ds);
            self.add_grad(-grad_scale, dv, ds);
        }
    }
    return loss;
}

double mapping_loss(const Tensor& v_emb, const Tensor& v_emb_counter, const Tensor& s_emb,
                    const std::vector<double>& z, const std::vector<double>& z_counter,
                    double alpha, double beta) {
    return semantic_triplet_loss(v_emb, s_emb, z, alpha) +
           counter_image_loss(v_emb, v_emb_counter, s_emb, z, z_counter, beta);
}

double coherence_loss(const Tensor& maps, const Tensor& targets, const std::vector<double>& z,
                      const LossConfig& cfg, Tensor* d_maps, Tensor* d_targets,
                      double grad_scale) {
    maps.check_same_shape(targets);
    const int k = maps.dim(0);
    const int pq = maps.dim(1) * maps.dim(2);
    if (static_cast<int>(z.size()) != k) throw ShapeError("coherence_loss: z size mismatch");

    double loss = 0.0;
    for (int c = 0; c < k; ++c) {
        const double* a = maps.data() + static_cast<std::size_t>(c) * pq;
        const double* m = targets.data() + static_cast<std::size_t>(c) * pq;
        double* da = d_maps ? d_maps->data() + static_cast<std::size_t>(c) * pq : nullptr;
        double* dm = d_targets ? d_targets->data() + static_cast<std::size_t>(c) * pq : nullptr;

        if (z[static_cast<std::size_t>(c)] >= 0.5) {
            double am = 0.0, a2 = 0.0, m2 = 0.0;
            for (int i = 0; i < pq; ++i) {
                am += a[i] * m[i];
                a2 += a[i] * a[i];
                m2 += m[i] * m[i];
            }
            const double numer = 2.0 * am;
            if (cfg.dice_denominator == DiceDenominator::sum) {
                const double denom = a2 + m2 + cfg.epsilon;
                loss += 1.0 - numer / denom;
                if (da || dm) {
                    const double inv_d2 = 1.0 / (denom * denom);
                    for (int i = 0; i < pq; ++i) {
                        if (da) da[i] += grad_scale * (-(2.0 * m[i] * denom - numer * 2.0 * a[i]) * inv_d2);
                        if (dm) dm[i] += grad_scale * (-(2.0 * a[i] * denom - numer * 2.0 * m[i]) * inv_d2);
                    }
                }
            } else {
                const double denom = a2 * m2 + cfg.epsilon;
                loss += 1.0 - numer / denom;
                if (da || dm) {
                    const double inv_d2 = 1.0 / (denom * denom);
                    for (int i = 0; i < pq; ++i) {
                        if (da)
                            da[i] += grad_scale *
                                     (-(2.0 * m[i] * denom - numer * 2.0 * a[i] * m2) * inv_d2);
                        if (dm)
                            dm[i] += grad_scale *
                                     (-(2.0 * a[i] * denom - numer * 2.0 * m[i] * a2) * inv_d2);
                    }
                }
            }
        } else {
            // Absent concept: suppress activation mass directly.
            double a2 = 0.0;
            for (int i = 0; i < pq; ++i) a2 += a[i] * a[i];
            loss += cfg.absent_penalty_weight * a2 / pq;
            if (da) {
                const double s = grad_scale * cfg.absent_penalty_weight * 2.0 / pq;
                for (int i = 0; i < pq; ++i) da[i] += s * a[i];
            }
        }
    }
    return loss;
}

std::vector<int> make_pair_ring(int batch, Rng& rng) {
    std::vector<int> perm(static_cast<std::size_t>(batch));
    for (int i = 0; i < batch; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    return perm;
}

BatchLossResult batch_losses(const std::vector<BatchItem>& items, const Tensor& s_emb,
                             const LossConfig& cfg, const std::vector<int>& pair_ring,
                             bool want_grads) {
    cfg.validate();
    const int batch = static_cast<int>(items.size());
    if (batch == 0) throw ShapeError("batch_losses: empty batch");
    if (static_cast<int>(pair_ring.size()) != batch)
        throw ShapeError("batch_losses: pair ring size mismatch");
    const double inv_b = 1.0 / batch;

    BatchLossResult result;
    if (want_grads) {
        result.sample_grads.resize(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            auto& g = result.sample_grads[static_cast<std::size_t>(i)];
            const auto& item = items[static_cast<std::size_t>(i)];
            g.d_class_scores.assign(item.class_scores.size(), 0.0);
            g.d_v.assign(item.v.size(), 0.0);
            g.d_vemb = Tensor::zeros_like(item.v_emb);
            if (cfg.gamma > 0.0 && !item.maps.empty()) g.d_maps = Tensor::zeros_like(item.maps);
        }
        result.d_semb = Tensor::zeros_like(s_emb);
    }

    const double w_u = cfg.lambda * cfg.enable_uniqueness;
    const double w_m = cfg.lambda * cfg.enable_mapping;

    double sum_a = 0.0, sum_u = 0.0, sum_s = 0.0, sum_d = 0.0, sum_c = 0.0;
    for (int i = 0; i < batch; ++i) {
        const auto& item = items[static_cast<std::size_t>(i)];
        auto* g = want_grads ? &result.sample_grads[static_cast<std::size_t>(i)] : nullptr;

        sum_a += classification_loss(item.class_scores, item.label,
                                     g ? &g->d_class_scores : nullptr, inv_b);
        sum_u += uniqueness_loss(item.v, item.z, (g && w_u > 0.0) ? &g->d_v : nullptr,
                                 w_u * inv_b);
        sum_s += semantic_triplet_loss(item.v_emb, s_emb, item.z, cfg.alpha,
                                       (g && w_m > 0.0) ? &g->d_vemb : nullptr,
                                       (g && w_m > 0.0) ? &result.d_semb : nullptr, w_m * inv_b);
        if (!item.maps.empty())
            sum_c += coherence_loss(item.maps, item.targets, item.z, cfg,
                                    (g && cfg.gamma > 0.0) ? &g->d_maps : nullptr, nullptr,
                                    cfg.gamma * inv_b);
    }

    // Counter-image pairs along the shuffled ring (batch of 1 has no pair).
    if (batch >= 2) {
        for (int j = 0; j < batch; ++j) {
            const int i = pair_ring[static_cast<std::size_t>(j)];
            const int ip = pair_ring[static_cast<std::size_t>((j + 1) % batch)];
            const auto& a = items[static_cast<std::size_t>(i)];
            const auto& b = items[static_cast<std::size_t>(ip)];
            SampleGrads* ga =
                want_grads ? &result.sample_grads[static_cast<std::size_t>(i)] : nullptr;
            SampleGrads* gb =
                want_grads ? &result.sample_grads[static_cast<std::size_t>(ip)] : nullptr;
            sum_d += counter_image_loss(a.v_emb, b.v_emb, s_emb, a.z, b.z, cfg.beta,
                                        (ga && w_m > 0.0) ? &ga->d_vemb : nullptr,
                                        (gb && w_m > 0.0) ? &gb->d_vemb : nullptr,
                                        (want_grads && w_m > 0.0) ? &result.d_semb : nullptr,
                                        w_m * inv_b);
        }
    }

    result.breakdown.class_term = sum_a * inv_b;
    result.breakdown.uniqueness = sum_u * inv_b;
    result.breakdown.semantic = sum_s * inv_b;
    result.breakdown.counter = sum_d * inv_b;
    result.breakdown.coherence = sum_c * inv_b;
    result.breakdown.total = result.breakdown.recombine(cfg);
    return result;
}

}  // namespace coherent
