#include "coherent/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "coherent/common.hpp"
#include "coherent/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace coherent {

void StageSchedule::validate(const std::vector<std::string>& known_groups) const {
    for (int s = 0; s < 3; ++s) {
        if (epochs[s] < 0) throw ConfigError("stage epochs must be >= 0");
        if (learning_rates[s] <= 0.0) throw ConfigError("learning rates must be > 0");
        for (const auto& g : frozen_groups[s])
            if (std::find(known_groups.begin(), known_groups.end(), g) == known_groups.end())
                throw ConfigError("unknown parameter group '" + g + "' in stage " +
                                  std::to_string(s + 1) + " freeze list");
    }
    auto frozen_in = [&](int s, const std::string& g) {
        return std::find(frozen_groups[s].begin(), frozen_groups[s].end(), g) !=
               frozen_groups[s].end();
    };
    if (!frozen_in(0, "backbone")) throw ConfigError("stage 1 must freeze the backbone");
    for (const auto& g : known_groups) {
        if (g == "classifier") {
            if (frozen_in(2, g)) throw ConfigError("stage 3 must leave the classifier trainable");
        } else if (!frozen_in(2, g)) {
            throw ConfigError("stage 3 must freeze '" + g + "'");
        }
    }
}

std::vector<bool> make_frozen_mask(ConceptModel& model,
                                   const std::vector<std::string>& frozen_groups) {
    const auto groups = model.group_names();
    for (const auto& g : frozen_groups)
        if (std::find(groups.begin(), groups.end(), g) == groups.end())
            throw ConfigError("unknown parameter group '" + g + "'");
    std::vector<bool> mask;
    for (const auto& p : model.parameters())
        mask.push_back(std::find(frozen_groups.begin(), frozen_groups.end(), p.group) !=
                       frozen_groups.end());
    return mask;
}

std::vector<Tensor> snapshot_params(const ConceptModel& model) {
    std::vector<Tensor> out;
    for (const auto& p : model.parameters()) out.push_back(*p.tensor);
    return out;
}

void copy_params_into(ConceptModel& model, const std::vector<Tensor>& params) {
    auto refs = model.parameters();
    if (refs.size() != params.size()) throw ShapeError("parameter snapshot size mismatch");
    for (std::size_t i = 0; i < refs.size(); ++i) {
        refs[i].tensor->check_same_shape(params[i]);
        *refs[i].tensor = params[i];
    }
}

Adam::Adam(const std::vector<ParamRef>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params) {
        m_.push_back(Tensor::zeros_like(*p.tensor));
        v_.push_back(Tensor::zeros_like(*p.tensor));
    }
}

void Adam::step(const std::vector<ParamRef>& params, const ModelGrads& grads,
                const std::vector<bool>& frozen, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (frozen[i]) continue;
        Tensor& theta = *params[i].tensor;
        const Tensor& g = grads.tensors[i];
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            theta[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

PreparedData prepare_data(const std::vector<Sample>& samples, PreprocessMode mode,
                          const std::string& mask_dir, const FeatureDims& dims) {
    const auto segmenter = make_segmenter(mode, mask_dir);
    PreparedData out;
    for (const Sample& s : samples) {
        PreparedSample p;
        p.id = s.id;
        p.z = s.concepts;
        p.label = s.label;

        Tensor mask;
        bool have_mask = false;
        if (mode == PreprocessMode::raw) {
            if (s.has_mask) {
                mask = s.lesion_mask;
                have_mask = true;
            }
        } else {
            mask = segmenter->segment(s);
            have_mask = true;
        }

        p.input = (mode == PreprocessMode::raw) ? s.image : apply_hard_attention(s.image, mask);
        if (have_mask) {
            p.targets = build_coherence_targets(mask, s.concepts, dims.p, dims.q).masks;
            p.has_mask = true;
        }

        switch (s.split) {
            case Split::train: out.train.push_back(std::move(p)); break;
            case Split::val: out.val.push_back(std::move(p)); break;
            case Split::test: out.test.push_back(std::move(p)); break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

Tensor flip_horizontal3(const Tensor& t) {
    Tensor out(t.shape());
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out.at3(ci, y, x) = t.at3(ci, y, w - 1 - x);
    return out;
}

// Fixed-order parallel map: slot i is always written by the same closure, so
// the result is independent of the worker count.
void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    const int w = std::min(threads, n);
    std::vector<std::thread> pool;
    std::exception_ptr err;
    std::mutex err_mu;
    pool.reserve(static_cast<std::size_t>(w));
    for (int t = 0; t < w; ++t) {
        pool.emplace_back([&, t]() {
            try {
                for (int i = t; i < n; i += w) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

struct ValScore {
    double accuracy = 0.0;
    double concept_f1 = 0.0;
};

ValScore evaluate_split(const ConceptModel& model, const std::vector<PreparedSample>& split,
                        const std::vector<Tensor>* feature_cache, int threads) {
    const int n = static_cast<int>(split.size());
    if (n == 0) return {};
    const int k = model.config().num_concepts;
    std::vector<int> correct(static_cast<std::size_t>(n), 0);
    Tensor pred({n, k}), truth({n, k});
    parallel_for(n, threads, [&](int i) {
        const auto& s = split[static_cast<std::size_t>(i)];
        const ForwardTrace trace = feature_cache
                                       ? model.forward_from_features((*feature_cache)[static_cast<std::size_t>(i)])
                                       : model.forward(s.input);
        int argmax = 0;
        for (std::size_t c = 1; c < trace.class_scores.size(); ++c)
            if (trace.class_scores[c] > trace.class_scores[static_cast<std::size_t>(argmax)])
                argmax = static_cast<int>(c);
        correct[static_cast<std::size_t>(i)] = (argmax == s.label) ? 1 : 0;
        for (int c = 0; c < k; ++c) {
            pred.at2(i, c) = trace.logits[static_cast<std::size_t>(c)] > 0.0 ? 1.0 : 0.0;
            truth.at2(i, c) = s.z[static_cast<std::size_t>(c)];
        }
    });
    ValScore out;
    int good = 0;
    for (int c : correct) good += c;
    out.accuracy = static_cast<double>(good) / n;
    out.concept_f1 = concept_f1(pred, truth).micro_f1;
    return out;
}

}  // namespace

TrainResult train_model(const PreparedData& data, const ModelConfig& model_config,
                        const LossConfig& loss_config, const StageSchedule& schedule,
                        const ConceptPhraseEmbedding& phrases, const TrainOptions& options,
                        const CheckpointMeta& meta_template) {
    loss_config.validate();
    if (data.train.empty()) throw ConfigError("training split is empty");
    if (data.val.empty()) throw ConfigError("validation split is empty");
    if (options.batch_size < 1) throw ConfigError("batch_size must be >= 1");

    ConceptModel model = ConceptModel::make(model_config, Rng(options.seed).fork("init").next_u64());
    schedule.validate(model.group_names());

    if (loss_config.gamma > 0.0)
        for (const auto& s : data.train)
            if (!s.has_mask)
                throw ConfigError("gamma > 0 needs a lesion mask for every training sample; '" +
                                  s.id + "' has none");

    const Rng root(options.seed);
    const int k = model_config.num_concepts;
    auto params = model.parameters();
    const int n_train = static_cast<int>(data.train.size());

    std::ofstream loss_log, metrics_log;
    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        loss_log.open(fs::path(options.out_dir) / "loss_log.jsonl", std::ios::trunc);
        metrics_log.open(fs::path(options.out_dir) / "metrics.jsonl", std::ios::trunc);
    }

    TrainResult result{std::move(model), {}, 0.0, -1, {}, "", ""};
    ConceptModel& net = result.model;
    params = net.parameters();

    long global_step = 0;
    int epoch_counter = 0;
    result.best_params = snapshot_params(net);
    double best_acc = -1.0;

    for (int stage = 0; stage < 3; ++stage) {
        if (schedule.epochs[stage] == 0) continue;
        const auto frozen = make_frozen_mask(net, schedule.frozen_groups[stage]);
        const bool backbone_frozen =
            std::find(schedule.frozen_groups[stage].begin(), schedule.frozen_groups[stage].end(),
                      "backbone") != schedule.frozen_groups[stage].end();
        Adam adam(params, options.adam_beta1, options.adam_beta2, options.adam_epsilon);
        const double lr = schedule.learning_rates[stage];

        // With a frozen backbone (and no flips) the features per sample are
        // constant across the stage; compute them once.
        const bool use_cache = backbone_frozen && !options.flip_augment;
        std::vector<Tensor> train_features, val_features;
        if (use_cache) {
            train_features.resize(static_cast<std::size_t>(n_train));
            parallel_for(n_train, options.threads, [&](int i) {
                train_features[static_cast<std::size_t>(i)] =
                    net.backbone().forward(data.train[static_cast<std::size_t>(i)].input).back();
            });
            val_features.resize(data.val.size());
            parallel_for(static_cast<int>(data.val.size()), options.threads, [&](int i) {
                val_features[static_cast<std::size_t>(i)] =
                    net.backbone().forward(data.val[static_cast<std::size_t>(i)].input).back();
            });
        }

        for (int epoch = 0; epoch < schedule.epochs[stage]; ++epoch) {
            ++epoch_counter;
            std::vector<int> order(static_cast<std::size_t>(n_train));
            for (int i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;
            Rng shuffle_rng = root.fork("shuffle", static_cast<std::uint64_t>(stage),
                                        static_cast<std::uint64_t>(epoch));
            shuffle_rng.shuffle(order);

            double epoch_loss_sum = 0.0;
            int epoch_batches = 0;

            for (int start = 0; start < n_train; start += options.batch_size) {
                const int bsz = std::min(options.batch_size, n_train - start);
                ++global_step;

                // Per-sample flip decisions (only when augmenting).
                std::vector<bool> flips(static_cast<std::size_t>(bsz), false);
                if (options.flip_augment) {
                    for (int b = 0; b < bsz; ++b) {
                        Rng fr = root.fork("flip", static_cast<std::uint64_t>(global_step),
                                           static_cast<std::uint64_t>(b));
                        flips[static_cast<std::size_t>(b)] = fr.bernoulli(0.5);
                    }
                }

                std::vector<ForwardTrace> traces(static_cast<std::size_t>(bsz));
                std::vector<BatchItem> items(static_cast<std::size_t>(bsz));
                parallel_for(bsz, options.threads, [&](int b) {
                    const int idx = order[static_cast<std::size_t>(start + b)];
                    const auto& sample = data.train[static_cast<std::size_t>(idx)];
                    Rng drop_rng = root.fork("dropout", static_cast<std::uint64_t>(global_step),
                                             static_cast<std::uint64_t>(b));
                    ForwardTrace trace;
                    if (use_cache) {
                        trace = net.forward_train_from_features(
                            train_features[static_cast<std::size_t>(idx)], drop_rng);
                    } else if (flips[static_cast<std::size_t>(b)]) {
                        trace = net.forward_train(flip_horizontal3(sample.input), drop_rng);
                    } else {
                        trace = net.forward_train(sample.input, drop_rng);
                    }
                    BatchItem item;
                    item.class_scores = trace.class_scores;
                    item.label = sample.label;
                    item.v = trace.logits;
                    item.z = sample.z;
                    item.v_emb = trace.visual_embed;
                    if (!sample.targets.empty()) {
                        item.maps = trace.maps;
                        item.targets = flips[static_cast<std::size_t>(b)]
                                           ? flip_horizontal3(sample.targets)
                                           : sample.targets;
                    }
                    traces[static_cast<std::size_t>(b)] = std::move(trace);
                    items[static_cast<std::size_t>(b)] = std::move(item);
                });

                const Tensor s_emb = net.embed_phrases(phrases);
                Rng pair_rng = root.fork("pairs", static_cast<std::uint64_t>(global_step));
                const std::vector<int> ring = make_pair_ring(bsz, pair_rng);
                BatchLossResult losses = batch_losses(items, s_emb, loss_config, ring, true);

                if (!std::isfinite(losses.breakdown.total)) {
                    std::ostringstream os;
                    os << "non-finite loss at stage " << (stage + 1) << " epoch " << (epoch + 1)
                       << " step " << global_step << "; batch ids:";
                    for (int b = 0; b < bsz; ++b)
                        os << " "
                           << data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(
                                             start + b)])]
                                  .id;
                    os << "; breakdown L_A=" << losses.breakdown.class_term
                       << " L_u=" << losses.breakdown.uniqueness
                       << " L_s=" << losses.breakdown.semantic
                       << " L_d=" << losses.breakdown.counter
                       << " L_c=" << losses.breakdown.coherence;
                    throw TrainingError(os.str());
                }

                // Per-sample gradient buffers reduced in slot order keep the
                // result independent of the thread count.
                std::vector<ModelGrads> sample_grads(static_cast<std::size_t>(bsz));
                parallel_for(bsz, options.threads, [&](int b) {
                    ModelGrads g = net.make_grads();
                    OutputGrads og;
                    auto& sg = losses.sample_grads[static_cast<std::size_t>(b)];
                    og.d_class_scores = std::move(sg.d_class_scores);
                    og.d_logits = std::move(sg.d_v);
                    og.d_visual_embed = std::move(sg.d_vemb);
                    og.d_maps = std::move(sg.d_maps);
                    net.backward(traces[static_cast<std::size_t>(b)], og, g, backbone_frozen);
                    sample_grads[static_cast<std::size_t>(b)] = std::move(g);
                });
                ModelGrads total = net.make_grads();
                for (int b = 0; b < bsz; ++b) total.add(sample_grads[static_cast<std::size_t>(b)]);
                net.embed_phrases_backward(phrases, losses.d_semb, total);

                adam.step(params, total, frozen, lr);

                epoch_loss_sum += losses.breakdown.total;
                ++epoch_batches;
                if (loss_log.is_open()) {
                    json line = {{"step", global_step},
                                 {"L_A", losses.breakdown.class_term},
                                 {"L_u", losses.breakdown.uniqueness},
                                 {"L_s", losses.breakdown.semantic},
                                 {"L_d", losses.breakdown.counter},
                                 {"L_c", losses.breakdown.coherence},
                                 {"L_total", losses.breakdown.total}};
                    loss_log << line.dump() << "\n";
                }
            }

            const ValScore val = evaluate_split(net, data.val, use_cache ? &val_features : nullptr,
                                                options.threads);
            EpochMetrics em;
            em.stage = stage + 1;
            em.epoch = epoch_counter;
            em.mean_total = epoch_batches ? epoch_loss_sum / epoch_batches : 0.0;
            em.val_accuracy = val.accuracy;
            em.val_concept_f1 = val.concept_f1;
            result.history.push_back(em);
            if (metrics_log.is_open()) {
                json line = {{"stage", em.stage},
                             {"epoch", em.epoch},
                             {"train_loss", em.mean_total},
                             {"val_accuracy", em.val_accuracy},
                             {"val_concept_f1", em.val_concept_f1}};
                metrics_log << line.dump() << "\n";
            }
            if (options.verbose)
                std::cerr << "stage " << em.stage << " epoch " << em.epoch << " loss "
                          << em.mean_total << " val_acc " << em.val_accuracy << " val_f1 "
                          << em.val_concept_f1 << "\n";

            if (val.accuracy > best_acc) {
                best_acc = val.accuracy;
                result.best_params = snapshot_params(net);
                result.best_epoch = em.epoch;
                if (!options.out_dir.empty()) {
                    CheckpointMeta meta = meta_template;
                    meta.model = model_config;
                    meta.stage_index = stage + 1;
                    result.best_checkpoint_path =
                        (fs::path(options.out_dir) / "best.ckpt").string();
                    save_checkpoint(result.best_checkpoint_path, net, meta);
                }
            }
        }
    }

    result.best_val_accuracy = std::max(best_acc, 0.0);
    if (!options.out_dir.empty()) {
        CheckpointMeta meta = meta_template;
        meta.model = model_config;
        meta.stage_index = 3;
        result.final_checkpoint_path = (fs::path(options.out_dir) / "final.ckpt").string();
        save_checkpoint(result.final_checkpoint_path, net, meta);
    }
    return result;
}

}  // namespace coherent
