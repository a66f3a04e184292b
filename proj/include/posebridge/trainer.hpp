#pragma once

#include <vector>

#include "posebridge/model.hpp"
#include "posebridge/objectives.hpp"
#include "posebridge/optimizer.hpp"
#include "posebridge/prototypes.hpp"
#include "posebridge/synth.hpp"

namespace posebridge {

struct TrainOptions {
    uint64_t seed = 7;
    size_t epochs = 30;
    size_t warmup_epochs = 5;
    size_t batch = 128;
    double lr = 1e-3;
    double min_lr = 1e-6;
    double weight_decay = 2e-3;
    double clip_norm = 1.0;
    double ema_decay = 0.999;
    size_t ema_start_epoch = 5;
    LossWeights weights;
    // Branch toggles for ablations: without the bridge the z_b objectives
    // would duplicate the skeleton ones, and without either bridge or
    // prototype adaptation the pose branch has no consumer.
    bool include_pose_branch = true;
    bool include_bridge_branch = true;
    // Prototype adaptation after training.
    bool adapt_prototypes = true;
    double rho = 0.2;
    size_t topk = 5;
    double tau_a = 0.07;
};

struct EpochLog {
    size_t epoch = 0;
    double lr = 0.0;
    double loss_total = 0.0, loss_s = 0.0, loss_p = 0.0, loss_b = 0.0,
           loss_align = 0.0;
};

struct TrainResult {
    ModelParams model;       // final raw weights
    ParameterStore ema;      // EMA shadow weights (used for evaluation)
    std::vector<EpochLog> log;
    CentroidTable centroids;
    PrototypeTable prototypes;  // adapted in place when enabled
};

// Seen-class prototypes stacked in ascending-id order, the logit space for
// the semantic objectives.
inline Tensor stack_seen_prototypes(const PrototypeTable& table) {
    require(!table.seen_ids.empty(), "train: no seen classes");
    size_t d = table.prototypes[table.seen_ids[0]].numel();
    Tensor m({table.seen_ids.size(), d});
    for (size_t i = 0; i < table.seen_ids.size(); ++i) {
        const Tensor& p = table.prototypes[table.seen_ids[i]];
        for (size_t j = 0; j < d; ++j) m.at2(i, j) = p.data[j];
    }
    return m;
}

// A model view that evaluates with different weights (e.g. the EMA shadow).
inline ModelParams with_store(const ModelParams& model,
                              const ParameterStore& store) {
    ModelParams out = model;
    out.store = store.clone();
    return out;
}

// Detached forward pass for one sample.
struct ForwardValues {
    Tensor z_s, z_p, z_b;
};

inline ForwardValues forward_values(const ModelParams& model,
                                    const Sample& sample) {
    Tape t(/*grad_enabled=*/false);
    TapeBinding bind(t, model.store);
    EmbeddingTriple e = model_forward(t, sample.skel, sample.cues, model, bind);
    return {t.value(e.z_s), t.value(e.z_p), t.value(e.z_b)};
}

// Seen-class-only training loop: shuffled seeded mini-batches, warmup+cosine
// schedule, global-norm clipping, decoupled-decay adaptive updates, and an
// EMA shadow. Afterwards the pose-semantic centroids are computed from the
// EMA model and the prototype table is adapted.
inline TrainResult train(const TrainOptions& opts, const Dataset& data,
                         const PrototypeTable& table, const ModelDims& dims) {
    require(data.size() >= 2, "train: need at least 2 samples");
    table.validate();
    // Zero-shot contract: refuse any unseen-labeled sample up front.
    std::vector<size_t> seen_index(table.num_classes(), SIZE_MAX);
    for (size_t i = 0; i < table.seen_ids.size(); ++i)
        seen_index[table.seen_ids[i]] = i;
    for (size_t i = 0; i < data.size(); ++i)
        if (seen_index[data.label_of(i)] == SIZE_MAX)
            fail("train: dataset contains unseen class " +
                 std::to_string(data.label_of(i)));

    TrainResult res;
    res.prototypes = table;
    Rng init_rng(Rng::derive(opts.seed, 0x1417));
    res.model = ModelParams::init(dims, table.seen_ids.size(), init_rng);
    Tensor seen_protos = stack_seen_prototypes(table);

    // Batch boundaries: fixed size, a trailing single sample is folded into
    // the previous batch so contrastive terms always see >= 2 samples.
    require(opts.batch >= 2, "train: batch size must be >= 2");
    std::vector<size_t> starts;
    for (size_t s = 0; s < data.size(); s += opts.batch) starts.push_back(s);
    if (starts.size() > 1 && data.size() - starts.back() < 2)
        starts.pop_back();
    size_t steps_per_epoch = starts.size();
    size_t total_steps = opts.epochs * steps_per_epoch;
    size_t warmup_steps = opts.warmup_epochs * steps_per_epoch;

    AdamW opt;
    opt.weight_decay = opts.weight_decay;
    opt.init(res.model.store);
    EmaState ema;
    ema.decay = opts.ema_decay;
    ema.start_epoch = opts.ema_start_epoch;
    ema.update(res.model.store, 0);

    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t step = 0;
    for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        Rng shuffle_rng(Rng::derive(opts.seed, 0x500 + epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);
        EpochLog log;
        log.epoch = epoch;
        for (size_t b = 0; b < steps_per_epoch; ++b) {
            size_t begin = starts[b];
            size_t end = b + 1 < steps_per_epoch ? starts[b + 1] : data.size();
            Rng drop_rng(
                Rng::derive(opts.seed, 0xD0000000ull + epoch * 100000 + b));
            Tape t;
            TapeBinding bind(t, res.model.store);
            std::vector<Var> z_s, z_p, z_b;
            std::vector<size_t> labels;
            for (size_t i = begin; i < end; ++i) {
                const Sample& s = data.get(order[i]);
                EmbeddingTriple e = model_forward(t, s.skel, s.cues, res.model,
                                                  bind, &drop_rng);
                z_s.push_back(e.z_s);
                z_p.push_back(e.z_p);
                z_b.push_back(e.z_b);
                labels.push_back(seen_index[s.class_id]);
            }
            LossBreakdown loss = total_loss(
                t, z_s, z_p, z_b, labels, seen_protos, bind, opts.weights,
                opts.include_pose_branch, opts.include_bridge_branch);
            t.backward(loss.total);
            std::vector<Tensor> grads = bind.collect_grads(t);
            clip_gradients(grads, opts.clip_norm);
            double lr = lr_at(step, total_steps, warmup_steps, opts.lr,
                              opts.min_lr);
            opt.apply(res.model.store, grads, lr);
            ema.update(res.model.store, epoch);
            ++step;
            log.lr = lr;
            log.loss_total += t.scalar(loss.total);
            log.loss_s += loss.loss_s;
            log.loss_p += loss.loss_p;
            log.loss_b += loss.loss_b;
            log.loss_align += loss.loss_align;
        }
        double inv = 1.0 / static_cast<double>(steps_per_epoch);
        log.loss_total *= inv;
        log.loss_s *= inv;
        log.loss_p *= inv;
        log.loss_b *= inv;
        log.loss_align *= inv;
        res.log.push_back(log);
    }
    res.ema = ema.shadow.clone();

    // Centroids from the EMA model's pose-semantic embeddings.
    ModelParams eval_model = with_store(res.model, res.ema);
    std::vector<Tensor> z_p_all;
    std::vector<size_t> labels_all;
    for (size_t i = 0; i < data.size(); ++i) {
        const Sample& s = data.get(i);
        z_p_all.push_back(forward_values(eval_model, s).z_p);
        labels_all.push_back(s.class_id);
    }
    res.centroids = compute_centroids(z_p_all, labels_all, table.seen_ids);
    if (opts.adapt_prototypes)
        adapt_all(res.prototypes, res.centroids, opts.rho, opts.topk,
                  opts.tau_a);
    return res;
}

}  // namespace posebridge
