#pragma once

#include <string>
#include <vector>

#include "posebridge/numerics.hpp"
#include "posebridge/params.hpp"
#include "posebridge/rng.hpp"

namespace posebridge {

// T x J x 2 joint coordinates in normalized image units.
struct SkeletonSequence {
    Tensor frames;  // (T, J, 2)

    size_t num_frames() const { return frames.shape[0]; }
    size_t num_joints() const { return frames.shape[1]; }

    void validate() const {
        require(frames.rank() == 3 && frames.shape[2] == 2,
                "skeleton sequence must be (T,J,2)");
        require(frames.shape[0] >= 1, "skeleton sequence needs T >= 1");
        frames.check_finite("skeleton sequence");
    }
};

struct EmbeddingTriple {
    Var z_s, z_p, z_b;
};

struct ModelDims {
    size_t joints = 17;
    size_t joint_embed = 8;
    size_t skel_dim = 32;
    size_t cue_dim = 64;
    size_t embed_dim = 64;
    size_t heads = 4;
    size_t cue_tokens = 16;
    size_t ffn_mult = 2;
    double dropout = 0.1;
    bool use_bridge = true;
};

// Row-normalized (A + I) adjacency; 17 joints use the COCO keypoint tree,
// other joint counts fall back to a chain.
inline Tensor skeleton_adjacency(size_t joints) {
    Tensor a({joints, joints});
    auto link = [&](size_t i, size_t j) {
        a.at2(i, j) = 1.0;
        a.at2(j, i) = 1.0;
    };
    if (joints == 17) {
        const size_t edges[][2] = {{0, 1},  {0, 2},  {1, 3},  {2, 4},
                                   {0, 5},  {0, 6},  {5, 7},  {7, 9},
                                   {6, 8},  {8, 10}, {5, 11}, {6, 12},
                                   {11, 13}, {13, 15}, {12, 14}, {14, 16}};
        for (const auto& e : edges) link(e[0], e[1]);
    } else {
        for (size_t i = 0; i + 1 < joints; ++i) link(i, i + 1);
    }
    for (size_t i = 0; i < joints; ++i) a.at2(i, i) = 1.0;
    for (size_t i = 0; i < joints; ++i) {
        double s = 0.0;
        for (size_t j = 0; j < joints; ++j) s += a.at2(i, j);
        for (size_t j = 0; j < joints; ++j) a.at2(i, j) /= s;
    }
    return a;
}

struct ModelParams {
    ParameterStore store;
    ModelDims dims;
    Tensor adjacency;
    size_t num_seen = 0;

    static ModelParams init(const ModelDims& d, size_t num_seen, Rng& rng) {
        ModelParams p;
        p.dims = d;
        p.num_seen = num_seen;
        p.adjacency = skeleton_adjacency(d.joints);
        auto lin = [&](const std::string& name, size_t in, size_t out) {
            p.store.add(name + ".w",
                        Tensor::randn({in, out}, rng, 1.0 / std::sqrt(double(in))));
            p.store.add(name + ".b", Tensor::zeros({out}));
        };
        // stand-in skeleton encoder; the pooled input concatenates the
        // temporal mean and second moment of the per-frame features
        lin("enc.embed", 2, d.joint_embed);
        lin("enc.mlp1", 2 * d.joints * d.joint_embed, d.skel_dim);
        lin("enc.mlp2", d.skel_dim, d.skel_dim);
        // 2-layer skeleton projector W_s
        lin("ws1", d.skel_dim, d.embed_dim);
        lin("ws2", d.embed_dim, d.embed_dim);
        // attention-based temporal pooling + 1-layer pose adapter
        p.store.add("pool.q", Tensor::randn({d.embed_dim}, rng,
                                            1.0 / std::sqrt(double(d.embed_dim))));
        lin("pool.wa", d.cue_dim, d.embed_dim);
        lin("pool.adapter", d.cue_dim, d.embed_dim);
        // skeleton-conditioned semantic bridge
        lin("br.wb", d.cue_dim, d.embed_dim);
        lin("br.wq", d.embed_dim, d.embed_dim);
        lin("br.wk", d.embed_dim, d.embed_dim);
        lin("br.wv", d.embed_dim, d.embed_dim);
        p.store.add("br.wo", Tensor::randn({d.embed_dim, d.embed_dim}, rng,
                                           1.0 / std::sqrt(double(d.embed_dim))));
        // gate pre-activation starts at 0 so the gate opens at 0.5
        p.store.add("br.gate", Tensor::zeros({d.embed_dim}));
        p.store.add("br.ln1.g", Tensor::full({d.embed_dim}, 1.0));
        p.store.add("br.ln1.b", Tensor::zeros({d.embed_dim}));
        p.store.add("br.ln2.g", Tensor::full({d.embed_dim}, 1.0));
        p.store.add("br.ln2.b", Tensor::zeros({d.embed_dim}));
        size_t hidden = d.ffn_mult * d.embed_dim;
        lin("br.ffn1", d.embed_dim, hidden);
        lin("br.ffn2", hidden, d.embed_dim);
        // separate seen-class classifier heads per anchor branch
        lin("cls_s", d.embed_dim, num_seen);
        lin("cls_p", d.embed_dim, num_seen);
        return p;
    }
};

namespace detail {

inline Var linear_vec(Tape& t, Var x, Var w, Var b) {
    Var r = ops::reshape(t, x, {1, t.value(x).numel()});
    Var y = ops::linear(t, r, w, b);
    return ops::reshape(t, y, {t.value(y).numel()});
}

// Training-only inverted dropout with an externally seeded RNG.
inline Var maybe_dropout(Tape& t, Var x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    const Tensor& v = t.value(x);
    Tensor mask(v.shape);
    double keep = 1.0 - rate;
    for (double& m : mask.data) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
    Var mv = t.leaf(mask);
    return ops::mul(t, x, mv);
}

}  // namespace detail

// Stand-in skeleton encoder: per-joint linear embedding, neighbor
// aggregation over the fixed adjacency, temporal mean + second-moment
// pooling, MLP, then the 2-layer projector W_s. Output is L2-normalized.
// The second moment is what carries oscillation amplitude: a sinusoid with
// random phase has zero temporal mean but a phase-free mean square.
inline Var encode_skeleton(Tape& t, const SkeletonSequence& seq,
                           const ModelParams& p, const TapeBinding& bind) {
    seq.validate();
    require(seq.num_joints() == p.dims.joints,
            "encode_skeleton: joint count mismatch");
    size_t T = seq.num_frames(), J = p.dims.joints;
    Var adj = t.leaf(p.adjacency);
    // Center each joint coordinate by its own temporal mean: the static base
    // pose carries no class information and would otherwise swamp the small
    // oscillation signal after L2 normalization. A fixed gain rescales the
    // residual motion to O(1) for the embedding layer.
    constexpr double kMotionGain = 8.0;
    Tensor center({J, 2});
    for (size_t f = 0; f < T; ++f)
        for (size_t j = 0; j < J; ++j) {
            center.at2(j, 0) += seq.frames.at3(f, j, 0);
            center.at2(j, 1) += seq.frames.at3(f, j, 1);
        }
    for (double& v : center.data) v /= static_cast<double>(T);
    Var acc{}, acc_sq{};
    for (size_t f = 0; f < T; ++f) {
        Tensor frame({J, 2});
        for (size_t j = 0; j < J; ++j) {
            frame.at2(j, 0) =
                kMotionGain * (seq.frames.at3(f, j, 0) - center.at2(j, 0));
            frame.at2(j, 1) =
                kMotionGain * (seq.frames.at3(f, j, 1) - center.at2(j, 1));
        }
        Var emb = ops::linear(t, t.leaf(frame), bind["enc.embed.w"],
                              bind["enc.embed.b"]);
        Var agg = ops::gelu(t, ops::matmul(t, adj, emb));
        Var sq = ops::mul(t, agg, agg);
        acc = acc.valid() ? ops::add(t, acc, agg) : agg;
        acc_sq = acc_sq.valid() ? ops::add(t, acc_sq, sq) : sq;
    }
    double inv_t = 1.0 / static_cast<double>(T);
    Var mean_flat = ops::reshape(t, ops::scale(t, acc, inv_t),
                                 {1, J * p.dims.joint_embed});
    Var sq_flat = ops::reshape(t, ops::scale(t, acc_sq, inv_t),
                               {1, J * p.dims.joint_embed});
    Var flat = ops::reshape(t, ops::concat_cols(t, {mean_flat, sq_flat}),
                            {2 * J * p.dims.joint_embed});
    Var h = ops::gelu(
        t, detail::linear_vec(t, flat, bind["enc.mlp1.w"], bind["enc.mlp1.b"]));
    Var feat = detail::linear_vec(t, h, bind["enc.mlp2.w"], bind["enc.mlp2.b"]);
    Var z = ops::gelu(
        t, detail::linear_vec(t, feat, bind["ws1.w"], bind["ws1.b"]));
    z = detail::linear_vec(t, z, bind["ws2.w"], bind["ws2.b"]);
    return ops::l2_normalize(t, z);
}

// Uniform temporal sampling to the fixed cue budget; deterministic, with
// duplicates when fewer cues than the budget exist.
inline std::vector<size_t> sample_cue_indices(size_t total, size_t n) {
    require(total >= 1, "sample_cues: empty sequence");
    require(n >= 1, "sample_cues: budget must be >= 1");
    std::vector<size_t> idx(n);
    if (n == 1) {
        idx[0] = 0;
        return idx;
    }
    for (size_t k = 0; k < n; ++k) {
        double pos = static_cast<double>(k) *
                     static_cast<double>(total - 1) /
                     static_cast<double>(n - 1);
        idx[k] = static_cast<size_t>(std::llround(pos));
    }
    return idx;
}

inline Tensor sample_cues(const Tensor& cues, size_t n) {
    require(cues.rank() == 2, "sample_cues: expect (T,d)");
    auto idx = sample_cue_indices(cues.shape[0], n);
    Tensor out({n, cues.shape[1]});
    for (size_t k = 0; k < n; ++k)
        for (size_t j = 0; j < cues.shape[1]; ++j)
            out.at2(k, j) = cues.at2(idx[k], j);
    return out;
}

// Attention-based temporal pooling with a learnable query, then the 1-layer
// pose adapter. Output L2-normalized.
inline Var temporal_pool(Tape& t, Var cues, const ModelParams& p,
                         const TapeBinding& bind) {
    const Tensor& P = t.value(cues);
    require(P.rank() == 2 && P.shape[0] >= 1, "temporal_pool: empty sequence");
    size_t n = P.shape[0];
    Var keys = ops::linear(t, cues, bind["pool.wa.w"], bind["pool.wa.b"]);
    Var q_row = ops::reshape(t, bind["pool.q"], {1, p.dims.embed_dim});
    Var scores = ops::reshape(t, ops::matmul_nt(t, keys, q_row), {n});
    scores = ops::scale(t, scores,
                        1.0 / std::sqrt(static_cast<double>(p.dims.embed_dim)));
    Var weights = ops::softmax_rows(t, scores);
    Var w_row = ops::reshape(t, weights, {1, n});
    Var pooled = ops::reshape(t, ops::matmul(t, w_row, cues), {P.shape[1]});
    Var z = detail::linear_vec(t, pooled, bind["pool.adapter.w"],
                               bind["pool.adapter.b"]);
    return ops::l2_normalize(t, z);
}

// Skeleton-conditioned semantic bridge:
// h = LN1(z_s + sigmoid(gate) * MHCA(z_s, Wb P)); z_b = LN2(h + FFN(h)).
inline Var bridge_forward(Tape& t, Var z_s, Var cues, const ModelParams& p,
                          const TapeBinding& bind, Rng* dropout_rng = nullptr) {
    const Tensor& P = t.value(cues);
    require(P.rank() == 2 && P.shape[0] >= 1, "bridge: empty cue sequence");
    Var tokens = ops::linear(t, cues, bind["br.wb.w"], bind["br.wb.b"]);
    Var q_row = ops::reshape(t, z_s, {1, p.dims.embed_dim});
    Var q = ops::linear(t, q_row, bind["br.wq.w"], bind["br.wq.b"]);
    Var k = ops::linear(t, tokens, bind["br.wk.w"], bind["br.wk.b"]);
    Var v = ops::linear(t, tokens, bind["br.wv.w"], bind["br.wv.b"]);
    Var attn = scaled_dot_attention(t, q, k, v, bind["br.wo"], p.dims.heads);
    Var attn_vec = ops::reshape(t, attn, {p.dims.embed_dim});
    attn_vec = detail::maybe_dropout(t, attn_vec, p.dims.dropout, dropout_rng);
    Var gated = ops::mul(t, ops::sigmoid(t, bind["br.gate"]), attn_vec);
    Var h = ops::layer_norm(t, ops::add(t, z_s, gated), bind["br.ln1.g"],
                            bind["br.ln1.b"]);
    Var ff = ops::gelu(
        t, detail::linear_vec(t, h, bind["br.ffn1.w"], bind["br.ffn1.b"]));
    ff = detail::maybe_dropout(t, ff, p.dims.dropout, dropout_rng);
    ff = detail::linear_vec(t, ff, bind["br.ffn2.w"], bind["br.ffn2.b"]);
    Var zb = ops::layer_norm(t, ops::add(t, h, ff), bind["br.ln2.g"],
                             bind["br.ln2.b"]);
    return ops::l2_normalize(t, zb);
}

// Full forward pass for one sample. `cues` is the cached (T x d) cue
// sequence; it is resampled to the fixed token budget here.
inline EmbeddingTriple model_forward(Tape& t, const SkeletonSequence& skel,
                                     const Tensor& cues, const ModelParams& p,
                                     const TapeBinding& bind,
                                     Rng* dropout_rng = nullptr) {
    EmbeddingTriple e;
    e.z_s = encode_skeleton(t, skel, p, bind);
    Var cue_var = t.leaf(sample_cues(cues, p.dims.cue_tokens));
    e.z_p = temporal_pool(t, cue_var, p, bind);
    e.z_b = p.dims.use_bridge
                ? bridge_forward(t, e.z_s, cue_var, p, bind, dropout_rng)
                : e.z_s;
    return e;
}

}  // namespace posebridge
