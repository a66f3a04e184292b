#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "posebridge/model.hpp"

using namespace posebridge;

static ModelDims small_dims() {
    ModelDims d;
    d.joints = 3;
    d.joint_embed = 2;
    d.skel_dim = 4;
    d.cue_dim = 6;
    d.embed_dim = 8;
    d.heads = 2;
    d.cue_tokens = 3;
    d.ffn_mult = 2;
    d.dropout = 0.0;
    return d;
}

static SkeletonSequence random_seq(size_t T, size_t J, Rng& rng) {
    SkeletonSequence s;
    s.frames = Tensor({T, J, 2});
    for (double& v : s.frames.data) v = rng.uniform();
    return s;
}

static double unit_norm_error(const Tensor& v) {
    double n = 0.0;
    for (double x : v.data) n += x * x;
    return std::abs(std::sqrt(n) - 1.0);
}

TEST_CASE("adjacency: rows sum to one, diagonal present, symmetry of support") {
    for (size_t j : {3ul, 17ul}) {
        Tensor a = skeleton_adjacency(j);
        for (size_t i = 0; i < j; ++i) {
            double s = 0.0;
            for (size_t k = 0; k < j; ++k) s += a.at2(i, k);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
            CHECK(a.at2(i, i) > 0.0);
            for (size_t k = 0; k < j; ++k)
                CHECK((a.at2(i, k) > 0.0) == (a.at2(k, i) > 0.0));
        }
    }
}

TEST_CASE("encoder: output is unit norm and deterministic") {
    Rng rng(31);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    SkeletonSequence seq = random_seq(5, 3, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    Var z1 = encode_skeleton(t, seq, p, bind);
    Var z2 = encode_skeleton(t, seq, p, bind);
    CHECK(unit_norm_error(t.value(z1)) < 1e-10);
    CHECK(t.value(z1).data == t.value(z2).data);
}

TEST_CASE("encoder: invariant to frame order and constant translation") {
    // Pooling uses the temporal mean and second moment only, and each joint
    // is centered by its own temporal mean, so shuffling frames or shifting
    // the whole sequence must not change the embedding.
    Rng rng(32);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    SkeletonSequence seq = random_seq(6, 3, rng);

    SkeletonSequence reversed = seq;
    for (size_t f = 0; f < 6; ++f)
        for (size_t i = 0; i < 6; ++i)
            reversed.frames.data[f * 6 + i] = seq.frames.data[(5 - f) * 6 + i];

    SkeletonSequence shifted = seq;
    for (double& v : shifted.frames.data) v += 0.37;

    Tape t;
    TapeBinding bind(t, p.store);
    Tensor a = t.value(encode_skeleton(t, seq, p, bind));
    Tensor b = t.value(encode_skeleton(t, reversed, p, bind));
    Tensor c = t.value(encode_skeleton(t, shifted, p, bind));
    for (size_t i = 0; i < a.numel(); ++i) {
        CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-10));
        CHECK(a.data[i] == doctest::Approx(c.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("encoder: a motionless sequence carries no signal and is rejected") {
    // Each joint is centered by its own temporal mean, so a constant
    // sequence collapses to the zero feature and the final normalization
    // reports it as degenerate rather than emitting an arbitrary direction.
    Rng rng(33);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    SkeletonSequence one = random_seq(1, 3, rng);
    SkeletonSequence many;
    many.frames = Tensor({7, 3, 2});
    for (size_t f = 0; f < 7; ++f)
        for (size_t i = 0; i < 6; ++i)
            many.frames.data[f * 6 + i] = one.frames.data[i];
    Tape t;
    TapeBinding bind(t, p.store);
    CHECK_THROWS_AS(encode_skeleton(t, one, p, bind), Error);
    CHECK_THROWS_AS(encode_skeleton(t, many, p, bind), Error);
}

TEST_CASE("encoder: joint count mismatch is rejected") {
    Rng rng(34);
    ModelParams p = ModelParams::init(small_dims(), 4, rng);
    SkeletonSequence seq = random_seq(4, 5, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    CHECK_THROWS_AS(encode_skeleton(t, seq, p, bind), Error);
}

TEST_CASE("cue sampling: exact budget is the identity") {
    auto idx = sample_cue_indices(16, 16);
    for (size_t k = 0; k < 16; ++k) CHECK(idx[k] == k);
}

TEST_CASE("cue sampling: a single frame repeats to fill the budget") {
    auto idx = sample_cue_indices(1, 5);
    for (size_t k : idx) CHECK(k == 0);
}

TEST_CASE("cue sampling: longer sequences subsample the linspace rounding") {
    auto idx = sample_cue_indices(33, 16);
    CHECK(idx.front() == 0);
    CHECK(idx.back() == 32);
    for (size_t k = 0; k < 16; ++k) {
        size_t expect = static_cast<size_t>(
            std::llround(static_cast<double>(k) * 32.0 / 15.0));
        CHECK(idx[k] == expect);
        if (k > 0) CHECK(idx[k] > idx[k - 1]);
    }
}

TEST_CASE("cue sampling: budget 1 takes the first frame") {
    CHECK(sample_cue_indices(10, 1) == std::vector<size_t>{0});
}

TEST_CASE("temporal pool: identical cue rows collapse to the T=1 result") {
    Rng rng(41);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    Tensor row = Tensor::randn({1, d.cue_dim}, rng);
    Tensor rep({4, d.cue_dim});
    for (size_t f = 0; f < 4; ++f)
        for (size_t j = 0; j < d.cue_dim; ++j) rep.at2(f, j) = row.at2(0, j);
    Tape t;
    TapeBinding bind(t, p.store);
    Tensor za = t.value(temporal_pool(t, t.leaf(row), p, bind));
    Tensor zb = t.value(temporal_pool(t, t.leaf(rep), p, bind));
    CHECK(unit_norm_error(za) < 1e-10);
    for (size_t i = 0; i < za.numel(); ++i)
        CHECK(za.data[i] == doctest::Approx(zb.data[i]).epsilon(1e-10));
}

TEST_CASE("temporal pool: matches a hand-rolled softmax-attention oracle") {
    Rng rng(42);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    Tensor cues = Tensor::randn({3, d.cue_dim}, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    const Tensor& z = t.value(temporal_pool(t, t.leaf(cues), p, bind));

    // Oracle: scores_f = q . (Wa cues_f + ba) / sqrt(e); weights = softmax;
    // pooled = sum_f w_f cues_f; z = normalize(adapter(pooled)).
    const Tensor& wa = p.store.get("pool.wa.w");
    const Tensor& ba = p.store.get("pool.wa.b");
    const Tensor& q = p.store.get("pool.q");
    std::vector<double> scores(3);
    for (size_t f = 0; f < 3; ++f) {
        double s = 0.0;
        for (size_t e = 0; e < d.embed_dim; ++e) {
            double k = ba.data[e];
            for (size_t j = 0; j < d.cue_dim; ++j)
                k += cues.at2(f, j) * wa.at2(j, e);
            s += q.data[e] * k;
        }
        scores[f] = s / std::sqrt(static_cast<double>(d.embed_dim));
    }
    double mx = std::max({scores[0], scores[1], scores[2]});
    double zsum = 0.0;
    for (double& s : scores) {
        s = std::exp(s - mx);
        zsum += s;
    }
    std::vector<double> pooled(d.cue_dim, 0.0);
    for (size_t f = 0; f < 3; ++f)
        for (size_t j = 0; j < d.cue_dim; ++j)
            pooled[j] += (scores[f] / zsum) * cues.at2(f, j);
    const Tensor& aw = p.store.get("pool.adapter.w");
    const Tensor& ab = p.store.get("pool.adapter.b");
    std::vector<double> out(d.embed_dim);
    double nrm = 0.0;
    for (size_t e = 0; e < d.embed_dim; ++e) {
        double v = ab.data[e];
        for (size_t j = 0; j < d.cue_dim; ++j) v += pooled[j] * aw.at2(j, e);
        out[e] = v;
        nrm += v * v;
    }
    nrm = std::sqrt(nrm);
    for (size_t e = 0; e < d.embed_dim; ++e)
        CHECK(z.data[e] == doctest::Approx(out[e] / nrm).epsilon(1e-9));
}

TEST_CASE("bridge: closed gate and zero FFN reduce to stacked layer norms") {
    Rng rng(51);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    // Push the gate pre-activation to -inf and silence the FFN.
    for (double& v : p.store.get_mut("br.gate").data) v = -1e9;
    for (double& v : p.store.get_mut("br.ffn2.w").data) v = 0.0;
    for (double& v : p.store.get_mut("br.ffn2.b").data) v = 0.0;

    Tensor zs_t = Tensor::randn({d.embed_dim}, rng);
    Tensor cues = Tensor::randn({3, d.cue_dim}, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    Var zs = ops::l2_normalize(t, t.leaf(zs_t));
    const Tensor& zb = t.value(bridge_forward(t, zs, t.leaf(cues), p, bind));

    // Oracle: z_b = normalize(LN2(LN1(z_s))) with unit gamma, zero beta.
    auto ln = [&](std::vector<double> x) {
        double mu = 0.0;
        for (double v : x) mu += v;
        mu /= x.size();
        double var = 0.0;
        for (double v : x) var += (v - mu) * (v - mu);
        var /= x.size();
        double inv = 1.0 / std::sqrt(var + 1e-5);
        for (double& v : x) v = (v - mu) * inv;
        return x;
    };
    std::vector<double> h = t.value(zs).data;
    h = ln(ln(h));
    double nrm = 0.0;
    for (double v : h) nrm += v * v;
    nrm = std::sqrt(nrm);
    for (size_t e = 0; e < d.embed_dim; ++e)
        CHECK(zb.data[e] == doctest::Approx(h[e] / nrm).epsilon(1e-9));
}

TEST_CASE("bridge: with the gate closed no gradient reaches the cues") {
    Rng rng(52);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    for (double& v : p.store.get_mut("br.gate").data) v = -1e9;
    Tape t;
    TapeBinding bind(t, p.store);
    Var zs = ops::l2_normalize(t, t.leaf(Tensor::randn({d.embed_dim}, rng)));
    Var cues = t.leaf(Tensor::randn({3, d.cue_dim}, rng));
    Var zb = bridge_forward(t, zs, cues, p, bind);
    t.backward(ops::sum(t, zb));
    for (double g : t.grad(cues).data) CHECK(g == 0.0);
}

TEST_CASE("bridge: output is unit norm and dropout-free runs are "
          "deterministic") {
    Rng rng(53);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    Var zs = ops::l2_normalize(t, t.leaf(Tensor::randn({d.embed_dim}, rng)));
    Var cues = t.leaf(Tensor::randn({4, d.cue_dim}, rng));
    Tensor a = t.value(bridge_forward(t, zs, cues, p, bind));
    Tensor b = t.value(bridge_forward(t, zs, cues, p, bind));
    CHECK(unit_norm_error(a) < 1e-10);
    CHECK(a.data == b.data);
}

TEST_CASE("forward: bridge disabled aliases the skeleton embedding") {
    Rng rng(61);
    ModelDims d = small_dims();
    d.use_bridge = false;
    ModelParams p = ModelParams::init(d, 4, rng);
    SkeletonSequence seq = random_seq(5, 3, rng);
    Tensor cues = Tensor::randn({5, d.cue_dim}, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    EmbeddingTriple e = model_forward(t, seq, cues, p, bind);
    CHECK(t.value(e.z_b).data == t.value(e.z_s).data);
    CHECK(unit_norm_error(t.value(e.z_s)) < 1e-10);
    CHECK(unit_norm_error(t.value(e.z_p)) < 1e-10);
}

TEST_CASE("forward: all three embeddings are unit norm with the bridge on") {
    Rng rng(62);
    ModelDims d = small_dims();
    ModelParams p = ModelParams::init(d, 4, rng);
    SkeletonSequence seq = random_seq(5, 3, rng);
    Tensor cues = Tensor::randn({7, d.cue_dim}, rng);
    Tape t;
    TapeBinding bind(t, p.store);
    EmbeddingTriple e = model_forward(t, seq, cues, p, bind);
    CHECK(unit_norm_error(t.value(e.z_s)) < 1e-10);
    CHECK(unit_norm_error(t.value(e.z_p)) < 1e-10);
    CHECK(unit_norm_error(t.value(e.z_b)) < 1e-10);
}

TEST_CASE("dropout: training mode with rate 0.5 rescales surviving paths") {
    // With a fixed seed the mask is deterministic; every kept entry is
    // doubled and the rest are zero.
    Rng rng(63);
    Tape t;
    Tensor x = Tensor::full({64}, 1.0);
    Rng drop(99);
    Var y = detail::maybe_dropout(t, t.leaf(x), 0.5, &drop);
    size_t kept = 0;
    for (double v : t.value(y).data) {
        CHECK((v == 0.0 || v == doctest::Approx(2.0)));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 10);
    CHECK(kept < 54);
}
