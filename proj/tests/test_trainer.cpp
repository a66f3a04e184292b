#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "posebridge/pipeline.hpp"

using namespace posebridge;

// Reduced-size configuration so the loop-level contracts can be exercised in
// seconds.
static Config tiny_config() {
    Config c;
    c.set("world.classes", "10");
    c.set("world.groups", "3");
    c.set("world.unseen", "4");
    c.set("world.frames", "12");
    c.set("world.joints", "5");
    c.set("world.motion_dim", "8");
    c.set("world.cue_dim", "24");
    c.set("world.train_per_class", "10");
    c.set("world.test_per_class", "5");
    c.set("model.skel_dim", "16");
    c.set("model.embed_dim", "24");
    c.set("model.joint_embed_dim", "4");
    c.set("model.heads", "2");
    c.set("model.cue_tokens", "6");
    c.set("train.epochs", "8");
    c.set("train.warmup_epochs", "2");
    c.set("train.batch", "16");
    c.set("train.ema_start_epoch", "2");
    return c;
}

static bool stores_equal(const ParameterStore& a, const ParameterStore& b) {
    if (a.names() != b.names()) return false;
    for (size_t i = 0; i < a.count(); ++i)
        if (a.at(i).data != b.at(i).data) return false;
    return true;
}

TEST_CASE("train: rejects any unseen-labeled sample up front") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    Dataset poisoned(b.world.cfg.classes);
    Sample s;
    s.class_id = b.split.unseen_ids[0];
    s.skel.frames = Tensor({1, 5, 2});
    for (double& v : s.skel.frames.data) v = 0.5;
    s.cues = Tensor({1, 24});
    s.cues.data[0] = 1.0;
    poisoned.add(std::move(s));
    Sample s2;
    s2.class_id = b.split.seen_ids[0];
    s2.skel.frames = Tensor({1, 5, 2});
    for (double& v : s2.skel.frames.data) v = 0.5;
    s2.cues = Tensor({1, 24});
    s2.cues.data[0] = 1.0;
    poisoned.add(std::move(s2));
    TrainOptions opts = train_options_from(cfg, true, true);
    ModelDims dims = model_dims_from(cfg, true);
    CHECK_THROWS_WITH_AS(train(opts, poisoned, b.protos, dims),
                         doctest::Contains("unseen class"), Error);
}

TEST_CASE("train: identical seeds reproduce weights, logs, and prototypes") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    TrainResult r1 = run_train(cfg, b, true, true);
    TrainResult r2 = run_train(cfg, b, true, true);
    CHECK(stores_equal(r1.model.store, r2.model.store));
    CHECK(stores_equal(r1.ema, r2.ema));
    REQUIRE(r1.log.size() == r2.log.size());
    for (size_t e = 0; e < r1.log.size(); ++e)
        CHECK(r1.log[e].loss_total == r2.log[e].loss_total);
    for (size_t c = 0; c < r1.prototypes.adapted.size(); ++c)
        CHECK(r1.prototypes.adapted[c].data == r2.prototypes.adapted[c].data);
}

TEST_CASE("train: a different seed moves the weights") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    TrainResult r1 = run_train(cfg, b, true, true);
    cfg.set("train.seed", "2");
    TrainResult r2 = run_train(cfg, b, true, true);
    CHECK(!stores_equal(r1.model.store, r2.model.store));
}

TEST_CASE("train: zero epochs returns the untouched initialization") {
    Config cfg = tiny_config();
    cfg.set("train.epochs", "0");
    cfg.set("train.warmup_epochs", "0");
    SynthBundle b = build_bundle(cfg);
    TrainResult r = run_train(cfg, b, true, true);
    CHECK(r.log.empty());
    // Without steps the EMA shadow is a pure copy of the raw weights.
    CHECK(stores_equal(r.model.store, r.ema));
    // And the raw weights are exactly the seeded initialization.
    Rng init_rng(Rng::derive(train_options_from(cfg, true, true).seed, 0x1417));
    ModelParams fresh = ModelParams::init(model_dims_from(cfg, true),
                                          b.protos.seen_ids.size(), init_rng);
    CHECK(stores_equal(r.model.store, fresh.store));
}

TEST_CASE("train: loss decreases over the run") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    TrainResult r = run_train(cfg, b, true, true);
    REQUIRE(r.log.size() == 8);
    CHECK(r.log.back().loss_total < r.log.front().loss_total);
    for (const EpochLog& l : r.log) CHECK(std::isfinite(l.loss_total));
}

TEST_CASE("train: test-split samples are never read during training and "
          "adaptation") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    b.test.reset_reads();
    b.train.reset_reads();
    TrainResult r = run_train(cfg, b, true, true);
    for (size_t n : b.test.reads()) CHECK(n == 0);
    // Training reads touch seen classes only.
    for (size_t u : b.split.unseen_ids) CHECK(b.train.reads()[u] == 0);
    // Evaluation is the first thing allowed to read unseen samples.
    Metrics m = run_eval(cfg, b, r);
    size_t unseen_reads = 0;
    for (size_t u : b.split.unseen_ids) unseen_reads += b.test.reads()[u];
    CHECK(unseen_reads ==
          b.split.unseen_ids.size() * cfg.get_size("world.test_per_class"));
    CHECK(m.kappa == cfg.get_double("eval.kappa"));
}

TEST_CASE("train: prototype adaptation toggle") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    TrainResult with = run_train(cfg, b, true, true);
    CHECK(with.prototypes.adapted.size() == b.world.cfg.classes);
    for (const Tensor& p : with.prototypes.adapted)
        CHECK(p.norm2() == doctest::Approx(1.0).epsilon(1e-10));
    TrainResult without = run_train(cfg, b, true, false);
    CHECK(without.prototypes.adapted.empty());
    // Without adaptation, matching falls back to the raw prototypes.
    CHECK(&without.prototypes.matching_prototypes() ==
          &without.prototypes.prototypes);
}

TEST_CASE("train: every seen class gets a centroid with the right count") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    TrainResult r = run_train(cfg, b, true, true);
    for (size_t c : b.split.seen_ids) {
        CHECK(r.centroids.centroids.count(c) == 1);
        CHECK(r.centroids.counts.at(c) ==
              cfg.get_size("world.train_per_class"));
        CHECK(r.centroids.centroids.at(c).norm2() ==
              doctest::Approx(1.0).epsilon(1e-10));
    }
    for (size_t u : b.split.unseen_ids)
        CHECK(r.centroids.centroids.count(u) == 0);
}

TEST_CASE("evaluate: metrics are consistent with the confusion matrix") {
    Config cfg = tiny_config();
    SynthBundle b = build_bundle(cfg);
    TrainResult r = run_train(cfg, b, true, true);
    Metrics m = run_eval(cfg, b, r);
    CHECK(m.zsl_acc >= 0.0);
    CHECK(m.zsl_acc <= 1.0);
    CHECK(m.harmonic ==
          doctest::Approx(harmonic_mean(m.gzsl_seen, m.gzsl_unseen))
              .epsilon(1e-12));
    // Row sums equal the per-class test counts; the diagonal reproduces the
    // per-class accuracies.
    size_t C = b.world.cfg.classes;
    size_t per = cfg.get_size("world.test_per_class");
    for (size_t c = 0; c < C; ++c) {
        double row = 0.0;
        for (size_t p = 0; p < C; ++p) row += m.confusion.at2(c, p);
        CHECK(row == doctest::Approx(static_cast<double>(per)));
        CHECK(m.per_class.at(c) ==
              doctest::Approx(m.confusion.at2(c, c) / row).epsilon(1e-12));
    }
}

TEST_CASE("train: batch folding keeps contrastive batches at two or more") {
    // 9 samples with batch 4 folds the trailing single sample into the last
    // batch instead of leaving a singleton that would break the contrastive
    // term.
    Config cfg = tiny_config();
    cfg.set("train.batch", "4");
    cfg.set("train.epochs", "1");
    cfg.set("train.warmup_epochs", "0");
    SynthBundle b = build_bundle(cfg, /*train_per_class=*/0, 1);
    // Hand-build a 9-sample seen-only dataset.
    Dataset nine(b.world.cfg.classes);
    for (size_t i = 0; i < 9; ++i) {
        size_t cls = b.split.seen_ids[i % 2];
        VideoRaw v = sample_video(b.world, cls, video_seed(b.world, cls, i));
        Sample s;
        s.class_id = cls;
        s.skel = std::move(v.skel);
        s.cues = std::move(v.cues);
        nine.add(std::move(s));
    }
    // Restrict the seen set to the two classes present so every seen class
    // has samples for the centroid pass.
    PrototypeTable two = b.protos;
    two.seen_ids = {b.split.seen_ids[0], b.split.seen_ids[1]};
    TrainOptions opts = train_options_from(cfg, true, /*adapt=*/false);
    ModelDims dims = model_dims_from(cfg, true);
    TrainResult r = train(opts, nine, two, dims);  // must not throw
    CHECK(r.log.size() == 1);
}
