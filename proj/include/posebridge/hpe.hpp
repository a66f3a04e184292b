#pragma once

#include <functional>
#include <string>
#include <vector>

#include "posebridge/numerics.hpp"
#include "posebridge/params.hpp"
#include "posebridge/rng.hpp"

namespace posebridge {

// Per-frame multi-level spatial features, shallow to deep. Each level is a
// (C, H, W) tensor; resolutions are non-increasing with depth.
struct FeaturePyramid {
    std::vector<Tensor> levels;

    void validate() const {
        require(levels.size() >= 2, "feature pyramid needs at least 2 levels");
        for (size_t l = 0; l < levels.size(); ++l) {
            require(levels[l].rank() == 3, "pyramid level must be (C,H,W)");
            if (l > 0)
                require(levels[l].shape[1] <= levels[l - 1].shape[1] &&
                            levels[l].shape[2] <= levels[l - 1].shape[2],
                        "pyramid resolutions must be non-increasing");
        }
    }
};

// One shallow-to-deep transition: channel projection, resize to the next
// level's resolution, then a spatial refinement block.
using LevelTransform = std::function<Var(Tape&, Var)>;

// Residual shallow-to-deep feature refinement. Returns the refined deepest
// level. With alpha = 0 this is the identity on the deepest level.
inline Var hierarchical_refine(Tape& t, const std::vector<Var>& levels,
                               const std::vector<LevelTransform>& transforms,
                               double alpha) {
    require(levels.size() >= 2, "hierarchical_refine: need >= 2 levels");
    require(transforms.size() == levels.size() - 1,
            "hierarchical_refine: need one transform per transition");
    require(alpha >= 0.0 && alpha <= 1.0,
            "hierarchical_refine: alpha must be in [0,1]");
    Var refined = levels[0];
    for (size_t l = 0; l + 1 < levels.size(); ++l) {
        Var residual = transforms[l](t, refined);
        const Tensor& next = t.value(levels[l + 1]);
        if (!t.value(residual).same_shape(next))
            fail("hierarchical_refine: transition " + std::to_string(l + 1) +
                 " produced " + t.value(residual).shape_str() +
                 ", expected " + next.shape_str());
        refined = ops::add(t, levels[l + 1], ops::scale(t, residual, alpha));
    }
    return refined;
}

// HPE-side parameters: per-transition projection + 3x3 refinement conv, the
// pooled-feature projection W_p, text projection W_d, and a 1x1 pose head
// used by the surrogate pose loss.
struct HpeParams {
    ParameterStore store;
    std::vector<size_t> channels;  // per level
    size_t cue_dim = 0;
    size_t joints = 0;
    double alpha = 0.5;
    double tau = 0.07;
    double pool_eps = 1e-6;

    static HpeParams init(const std::vector<size_t>& channels, size_t cue_dim,
                          size_t joints, Rng& rng, double alpha = 0.5,
                          double tau = 0.07, double pool_eps = 1e-6) {
        HpeParams p;
        p.channels = channels;
        p.cue_dim = cue_dim;
        p.joints = joints;
        p.alpha = alpha;
        p.tau = tau;
        p.pool_eps = pool_eps;
        for (size_t l = 0; l + 1 < channels.size(); ++l) {
            size_t ci = channels[l], co = channels[l + 1];
            std::string n = std::to_string(l + 1);
            p.store.add("hpe.proj" + n + ".w",
                        Tensor::randn({co, ci}, rng, 1.0 / std::sqrt(double(ci))));
            p.store.add("hpe.proj" + n + ".b", Tensor::zeros({co}));
            p.store.add("hpe.refine" + n + ".w",
                        Tensor::randn({co, co, 3, 3}, rng,
                                      1.0 / std::sqrt(9.0 * double(co))));
            p.store.add("hpe.refine" + n + ".b", Tensor::zeros({co}));
        }
        size_t cl = channels.back();
        p.store.add("hpe.wp.w",
                    Tensor::randn({cl, cue_dim}, rng, 1.0 / std::sqrt(double(cl))));
        p.store.add("hpe.wp.b", Tensor::zeros({cue_dim}));
        p.store.add("hpe.wd.w",
                    Tensor::randn({cue_dim, cue_dim}, rng,
                                  1.0 / std::sqrt(double(cue_dim))));
        p.store.add("hpe.wd.b", Tensor::zeros({cue_dim}));
        p.store.add("hpe.pose.w",
                    Tensor::randn({joints, cl}, rng, 1.0 / std::sqrt(double(cl))));
        p.store.add("hpe.pose.b", Tensor::zeros({joints}));
        return p;
    }

    // Production transition blocks: 1x1 projection, bilinear resize to the
    // target resolution, 3x3 conv + activation.
    std::vector<LevelTransform> transforms(const TapeBinding& bind,
                                           const FeaturePyramid& pyr) const {
        std::vector<LevelTransform> out;
        for (size_t l = 0; l + 1 < channels.size(); ++l) {
            std::string n = std::to_string(l + 1);
            size_t th = pyr.levels[l + 1].shape[1];
            size_t tw = pyr.levels[l + 1].shape[2];
            Var pw = bind["hpe.proj" + n + ".w"], pb = bind["hpe.proj" + n + ".b"];
            Var rw = bind["hpe.refine" + n + ".w"],
                rb = bind["hpe.refine" + n + ".b"];
            out.push_back([pw, pb, rw, rb, th, tw](Tape& t, Var x) {
                Var proj = ops::conv1x1(t, x, pw, pb);
                Var rs = ops::bilinear_resize(t, proj, th, tw);
                return ops::gelu(t, ops::conv3x3(t, rs, rw, rb));
            });
        }
        return out;
    }
};

// Average joint heatmaps and normalize to a unit-mass spatial prior.
inline Tensor build_body_attention(const Tensor& joint_heatmaps) {
    require(joint_heatmaps.rank() == 3, "body attention: expect (J,H,W)");
    size_t j = joint_heatmaps.shape[0], h = joint_heatmaps.shape[1],
           w = joint_heatmaps.shape[2];
    require(j >= 1, "body attention: need at least one heatmap");
    Tensor a({h, w});
    for (size_t jj = 0; jj < j; ++jj)
        for (size_t p = 0; p < h * w; ++p) {
            double v = joint_heatmaps.data[jj * h * w + p];
            require(v >= 0.0, "body attention: heatmaps must be nonnegative");
            a.data[p] += v;
        }
    double s = 0.0;
    for (double v : a.data) s += v;
    if (s <= 0.0) fail("body attention: all-zero heatmaps");
    for (double& v : a.data) v /= s;
    return a;
}

// 2-D Gaussian heatmaps at normalized joint positions on an H x W grid.
inline Tensor gaussian_heatmaps(const Tensor& joints, size_t h, size_t w,
                                double sigma_cells) {
    require(joints.rank() == 2 && joints.shape[1] == 2,
            "gaussian_heatmaps: joints must be (J,2)");
    size_t j = joints.shape[0];
    Tensor out({j, h, w});
    double inv2s2 = 1.0 / (2.0 * sigma_cells * sigma_cells);
    for (size_t jj = 0; jj < j; ++jj) {
        double cy = joints.at2(jj, 1) * static_cast<double>(h) - 0.5;
        double cx = joints.at2(jj, 0) * static_cast<double>(w) - 0.5;
        for (size_t y = 0; y < h; ++y)
            for (size_t x = 0; x < w; ++x) {
                double dy = static_cast<double>(y) - cy;
                double dx = static_cast<double>(x) - cx;
                out.data[(jj * h + y) * w + x] =
                    std::exp(-(dy * dy + dx * dx) * inv2s2);
            }
    }
    return out;
}

// Body-aware weighted pooling followed by the cue projection W_p.
inline Var pose_anchored_pool(Tape& t, Var refined, const Tensor& attn,
                              Var wp_w, Var wp_b, double eps) {
    Var pooled = ops::pool_weighted(t, refined, attn, eps);
    Var as_row = ops::reshape(t, pooled, {1, t.value(pooled).numel()});
    Var proj = ops::linear(t, as_row, wp_w, wp_b);
    return ops::reshape(t, proj, {t.value(proj).numel()});
}

// Symmetric InfoNCE over B pose/text pairs (rows of cues/texts), with
// defensive row normalization and temperature tau.
inline Var hpe_semantic_loss(Tape& t, const std::vector<Var>& cues,
                             const std::vector<Var>& texts, double tau) {
    require(!cues.empty(), "hpe_semantic_loss: empty batch");
    require(cues.size() == texts.size(),
            "hpe_semantic_loss: cue/text count mismatch");
    require(tau > 0.0, "hpe_semantic_loss: tau must be positive");
    size_t b = cues.size();
    std::vector<Var> pn, tn;
    pn.reserve(b);
    tn.reserve(b);
    for (size_t i = 0; i < b; ++i) {
        pn.push_back(ops::l2_normalize(t, cues[i]));
        tn.push_back(ops::l2_normalize(t, texts[i]));
    }
    Var P = ops::stack_rows(t, pn), T = ops::stack_rows(t, tn);
    Var sims = ops::scale(t, ops::matmul_nt(t, P, T), 1.0 / tau);
    std::vector<size_t> labels(b);
    for (size_t i = 0; i < b; ++i) labels[i] = i;
    Var ce_rows = ops::cross_entropy_mean(t, sims, labels);
    // Column direction: transpose by swapping the operands.
    Var sims_t = ops::scale(t, ops::matmul_nt(t, T, P), 1.0 / tau);
    Var ce_cols = ops::cross_entropy_mean(t, sims_t, labels);
    return ops::scale(t, ops::add(t, ce_rows, ce_cols), 0.5);
}

// Surrogate pose objective: mean squared error against target heatmaps.
inline Var surrogate_pose_loss(Tape& t, Var pred, const Tensor& target) {
    return ops::mse_const(t, pred, target);
}

inline Var hpe_total_loss(Tape& t, Var pose_loss, Var sem_loss,
                          double lambda_hpe) {
    return ops::add(t, pose_loss, ops::scale(t, sem_loss, lambda_hpe));
}

// Full per-frame cue pipeline: refine -> body attention -> pool -> normalize.
// `enable_hr` toggles the residual refinement (alpha -> 0), `enable_bp`
// replaces the body prior with a uniform map.
inline Var frame_cue(Tape& t, const FeaturePyramid& pyr,
                     const Tensor& joint_heatmaps, const HpeParams& params,
                     const TapeBinding& bind, bool enable_hr, bool enable_bp) {
    pyr.validate();
    require(pyr.levels.size() == params.channels.size(),
            "frame_cue: pyramid depth mismatch");
    std::vector<Var> levels;
    levels.reserve(pyr.levels.size());
    for (const Tensor& l : pyr.levels) levels.push_back(t.leaf(l));
    double alpha = enable_hr ? params.alpha : 0.0;
    Var refined =
        hierarchical_refine(t, levels, params.transforms(bind, pyr), alpha);
    Tensor attn;
    if (enable_bp) {
        attn = build_body_attention(joint_heatmaps);
    } else {
        size_t h = pyr.levels.back().shape[1], w = pyr.levels.back().shape[2];
        attn = Tensor::full({h, w}, 1.0 / static_cast<double>(h * w));
    }
    Var cue = pose_anchored_pool(t, refined, attn, bind["hpe.wp.w"],
                                 bind["hpe.wp.b"], params.pool_eps);
    return ops::l2_normalize(t, cue);
}

// Per-video pose-anchored cue sequence: one L2-normalized cue per frame,
// frame order preserved. Returns a (T x d) tensor of detached values.
inline Tensor extract_cue_sequence(const std::vector<FeaturePyramid>& frames,
                                   const std::vector<Tensor>& heatmaps,
                                   const HpeParams& params, bool enable_hr,
                                   bool enable_bp) {
    require(!frames.empty(), "extract_cue_sequence: empty video");
    require(frames.size() == heatmaps.size(),
            "extract_cue_sequence: frame/heatmap count mismatch");
    Tensor out({frames.size(), params.cue_dim});
    for (size_t f = 0; f < frames.size(); ++f) {
        Tape t(/*grad_enabled=*/false);
        TapeBinding bind(t, params.store);
        Var cue = frame_cue(t, frames[f], heatmaps[f], params, bind, enable_hr,
                            enable_bp);
        const Tensor& v = t.value(cue);
        for (size_t j = 0; j < params.cue_dim; ++j) out.at2(f, j) = v.data[j];
    }
    return out;
}

}  // namespace posebridge
