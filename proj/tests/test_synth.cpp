#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "posebridge/synth.hpp"

using namespace posebridge;

static WorldConfig small_cfg() {
    WorldConfig cfg;
    cfg.seed = 7;
    cfg.classes = 10;
    cfg.groups = 3;
    cfg.frames = 16;
    cfg.joints = 5;
    cfg.motion_dim = 8;
    cfg.cue_dim = 24;
    cfg.coord_dim = 8;
    return cfg;
}

static double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

TEST_CASE("world: construction is deterministic in the seed") {
    World a = make_world(small_cfg());
    World b = make_world(small_cfg());
    for (size_t c = 0; c < a.classes.size(); ++c) {
        CHECK(a.classes[c].prototype.data == b.classes[c].prototype.data);
        CHECK(a.classes[c].cue_latent.data == b.classes[c].cue_latent.data);
        CHECK(a.classes[c].motion.data == b.classes[c].motion.data);
    }
    WorldConfig other = small_cfg();
    other.seed = 8;
    World c = make_world(other);
    CHECK(a.classes[0].prototype.data != c.classes[0].prototype.data);
}

TEST_CASE("world: confusable siblings share motion, cues stay separated") {
    World w = make_world(small_cfg());
    for (size_t g = 0; g < w.cfg.groups; ++g) {
        const ClassSpec& a = w.classes[2 * g];
        const ClassSpec& b = w.classes[2 * g + 1];
        CHECK(a.group == static_cast<int>(g));
        CHECK(b.group == static_cast<int>(g));
        // Identical motion latents: the skeleton stream cannot separate them.
        CHECK(a.motion.data == b.motion.data);
        // Cue coordinates overlap by exactly 0.1, under the 0.2 bound.
        CHECK(dot(a.cue_coord, b.cue_coord) ==
              doctest::Approx(0.1).epsilon(1e-9));
        // The orthonormal basis preserves the dot in the full cue space.
        CHECK(dot(a.cue_latent, b.cue_latent) ==
              doctest::Approx(0.1).epsilon(1e-9));
    }
    // Remaining classes are free (no group).
    for (size_t c = 2 * w.cfg.groups; c < w.cfg.classes; ++c)
        CHECK(w.classes[c].group == -1);
}

TEST_CASE("world: prototypes and latents are unit norm") {
    World w = make_world(small_cfg());
    for (const ClassSpec& c : w.classes) {
        CHECK(c.prototype.norm2() == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(c.cue_latent.norm2() == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(c.motion.norm2() == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("world: too few classes for the group structure is rejected") {
    WorldConfig cfg = small_cfg();
    cfg.classes = 5;  // < 2 * groups
    CHECK_THROWS_AS(make_world(cfg), Error);
}

TEST_CASE("video: generation is a pure function of (world, class, seed)") {
    World w = make_world(small_cfg());
    uint64_t s = video_seed(w, 2, 5);
    VideoRaw a = generate_video(w, 2, s);
    VideoRaw b = generate_video(w, 2, s);
    CHECK(a.skel.frames.data == b.skel.frames.data);
    CHECK(a.cues.data == b.cues.data);
    CHECK(a.caption.data == b.caption.data);
    VideoRaw c = generate_video(w, 2, video_seed(w, 2, 6));
    CHECK(a.skel.frames.data != c.skel.frames.data);
}

TEST_CASE("video: shapes, bounds, and unit cue rows") {
    World w = make_world(small_cfg());
    VideoRaw v = generate_video(w, 0, video_seed(w, 0, 0));
    CHECK(v.skel.frames.shape ==
          std::vector<size_t>{w.cfg.frames, w.cfg.joints, 2});
    for (double x : v.skel.frames.data) {
        CHECK(x >= 0.02);
        CHECK(x <= 0.98);
    }
    CHECK(v.cues.shape == std::vector<size_t>{w.cfg.frames, w.cfg.cue_dim});
    for (size_t f = 0; f < w.cfg.frames; ++f) {
        double n = 0.0;
        for (size_t i = 0; i < w.cfg.cue_dim; ++i)
            n += v.cues.at2(f, i) * v.cues.at2(f, i);
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-10));
    }
    CHECK(v.pyramids.size() == w.cfg.frames);
    CHECK(v.heatmaps.size() == w.cfg.frames);
    CHECK(v.caption.norm2() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("video: the mean cue recovers the class cue latent") {
    // The per-frame cue is the class latent plus zero-mean phase modulation
    // and isotropic noise, so the normalized temporal mean must align with
    // the latent far above chance (chance dot in 24-D is ~0.2).
    World w = make_world(small_cfg());
    for (size_t cls : {0ul, 3ul, 7ul}) {
        Tensor mean({w.cfg.cue_dim});
        VideoRaw v = generate_video(w, cls, video_seed(w, cls, 1));
        for (size_t f = 0; f < w.cfg.frames; ++f)
            for (size_t i = 0; i < w.cfg.cue_dim; ++i)
                mean.data[i] += v.cues.at2(f, i) / double(w.cfg.frames);
        double n = mean.norm2();
        for (double& x : mean.data) x /= n;
        CHECK(dot(mean, w.classes[cls].cue_latent) > 0.9);
    }
}

TEST_CASE("video: with zero skeleton noise confusable siblings render "
          "identical skeletons but different cues") {
    WorldConfig cfg = small_cfg();
    cfg.sigma_skel = 0.0;
    World w = make_world(cfg);
    // Classes 0 and 1 form group 0. Use the same per-video seed so phase and
    // noise draws coincide.
    VideoRaw a = generate_video(w, 0, 12345);
    VideoRaw b = generate_video(w, 1, 12345);
    CHECK(a.skel.frames.data == b.skel.frames.data);
    double d = 0.0;
    for (size_t i = 0; i < a.cues.numel(); ++i)
        d += std::abs(a.cues.data[i] - b.cues.data[i]);
    CHECK(d > 1.0);
}

TEST_CASE("sample_video: drops the pyramids, keeps everything else") {
    World w = make_world(small_cfg());
    uint64_t s = video_seed(w, 4, 2);
    VideoRaw full = generate_video(w, 4, s);
    VideoRaw lean = sample_video(w, 4, s);
    CHECK(lean.pyramids.empty());
    CHECK(lean.skel.frames.data == full.skel.frames.data);
    CHECK(lean.cues.data == full.cues.data);
    CHECK(lean.caption.data == full.caption.data);
    CHECK(lean.heatmaps.size() == full.heatmaps.size());
}

TEST_CASE("split: deterministic, disjoint, covering, with a straddler") {
    World w = make_world(small_cfg());
    SplitSpec a = make_split(w, 4, 99);
    SplitSpec b = make_split(w, 4, 99);
    CHECK(a.unseen_ids == b.unseen_ids);
    CHECK(a.seen_ids.size() + a.unseen_ids.size() == w.cfg.classes);
    for (size_t u : a.unseen_ids)
        CHECK(!std::binary_search(a.seen_ids.begin(), a.seen_ids.end(), u));
    CHECK(std::is_sorted(a.unseen_ids.begin(), a.unseen_ids.end()));
    CHECK(std::is_sorted(a.seen_ids.begin(), a.seen_ids.end()));
    // With 4 unseen classes: one full group (2 collided), one straddler, one
    // free class.
    CHECK(a.collided.size() == 2);
    CHECK(a.straddlers.size() == 1);
    // The straddler's sibling stays seen.
    size_t sib = a.straddlers[0] ^ 1ull;
    CHECK(std::binary_search(a.seen_ids.begin(), a.seen_ids.end(), sib));
}

TEST_CASE("split: the minimal split is a single straddler") {
    World w = make_world(small_cfg());
    SplitSpec s = make_split(w, 1, 5);
    CHECK(s.unseen_ids.size() == 1);
    CHECK(s.straddlers == s.unseen_ids);
    CHECK(s.collided.empty());
}

TEST_CASE("split: out-of-range unseen counts are rejected") {
    World w = make_world(small_cfg());
    CHECK_THROWS_AS(make_split(w, 0, 1), Error);
    CHECK_THROWS_AS(make_split(w, w.cfg.classes, 1), Error);
}

TEST_CASE("prototype table: mirrors the world and validates") {
    World w = make_world(small_cfg());
    SplitSpec s = make_split(w, 4, 3);
    PrototypeTable t = prototype_table(w, s);
    CHECK(t.num_classes() == w.cfg.classes);
    CHECK(t.seen_ids == s.seen_ids);
    CHECK(t.unseen_ids == s.unseen_ids);
    for (size_t c = 0; c < t.num_classes(); ++c)
        CHECK(t.prototypes[c].data == w.classes[c].prototype.data);
}

TEST_CASE("dataset: read instrumentation counts per-class accesses") {
    Dataset d(3);
    Sample s;
    s.class_id = 2;
    s.skel.frames = Tensor({1, 1, 2}, {0.5, 0.5});
    s.cues = Tensor({1, 2}, {1.0, 0.0});
    d.add(std::move(s));
    CHECK(d.size() == 1);
    CHECK(d.label_of(0) == 2);
    CHECK(d.reads() == std::vector<size_t>{0, 0, 0});
    d.get(0);
    d.get(0);
    CHECK(d.reads() == std::vector<size_t>{0, 0, 2});
    d.reset_reads();
    CHECK(d.reads() == std::vector<size_t>{0, 0, 0});
    CHECK_THROWS_AS(d.get(1), Error);
}
