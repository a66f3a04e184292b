#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "posebridge/hpe.hpp"
#include "posebridge/model.hpp"
#include "posebridge/prototypes.hpp"
#include "posebridge/rng.hpp"

namespace posebridge {

inline constexpr double kPi = 3.14159265358979323846;

// One synthetic action class. Classes in the same confusable group share the
// skeleton-motion latent exactly but have near-orthogonal cue latents, so
// they can only be told apart through pose-anchored cues.
struct ClassSpec {
    size_t id = 0;
    int group = -1;  // -1 = free class
    Tensor motion;     // (m) unit
    Tensor cue_coord;  // (dc) unit, coordinates in the world cue basis
    Tensor cue_latent; // (d) unit, U @ cue_coord
    Tensor prototype;  // (d) unit text prototype
};

struct WorldConfig {
    uint64_t seed = 1;
    size_t classes = 20;
    size_t groups = 4;
    size_t frames = 32;
    size_t joints = 17;
    size_t motion_dim = 16;
    size_t cue_dim = 64;
    size_t coord_dim = 16;     // intrinsic cue dimensionality
    double sigma_skel = 0.05;
    double sigma_cue = 0.1;
    double sigma_bg = 0.3;     // background feature noise
    double proto_motion_weight = 0.3;
    double proto_cue_weight = 0.95;
    double proto_noise = 0.05;
    double motion_spread = 4.0;  // smaller -> motions harder to tell apart
    double heatmap_sigma = 1.5;
};

// Feature pyramid geometry used by the generator (channels, height, width).
struct PyramidGeometry {
    std::vector<size_t> channels{10, 12, 20};
    std::vector<size_t> heights{12, 9, 6};
    std::vector<size_t> widths{12, 9, 6};
    size_t levels() const { return channels.size(); }
};

struct World {
    WorldConfig cfg;
    PyramidGeometry geom;
    std::vector<ClassSpec> classes;
    Tensor base_pose;      // (J, 2)
    Tensor motion_basis;   // (J, 2, m) per-joint amplitude coefficients
    Tensor motion_phase;   // (J, m) per-joint phase offsets
    Tensor cue_basis;      // (d, dc) orthonormal columns
    Tensor motion_embed;   // (d, m) maps motion latents into prototype space
    Tensor modulation_dir; // (dc) skeleton-phase modulation direction
    Tensor shallow_encoder; // (C1, dc/2) encodes the low half of cue coords
    Tensor deep_encoder;    // (CL, dc - dc/2) encodes the high half

    static constexpr double kMotionAmp = 0.30;
    static constexpr double kModStrength = 0.15;
    static constexpr double kSignalGain = 2.0;
};

namespace detail {

inline Tensor random_unit(Rng& rng, size_t d) {
    Tensor v = Tensor::randn({d}, rng);
    double n = v.norm2();
    while (n <= 1e-9) {
        v = Tensor::randn({d}, rng);
        n = v.norm2();
    }
    for (double& x : v.data) x /= n;
    return v;
}

// Orthonormalize the columns of a (rows x cols) random matrix.
inline Tensor orthonormal_columns(Rng& rng, size_t rows, size_t cols) {
    require(cols <= rows, "orthonormal_columns: cols must be <= rows");
    Tensor m({rows, cols});
    for (size_t c = 0; c < cols; ++c) {
        Tensor v = Tensor::randn({rows}, rng);
        for (size_t pc = 0; pc < c; ++pc) {
            double d = 0.0;
            for (size_t r = 0; r < rows; ++r) d += v.data[r] * m.at2(r, pc);
            for (size_t r = 0; r < rows; ++r) v.data[r] -= d * m.at2(r, pc);
        }
        double n = v.norm2();
        require(n > 1e-9, "orthonormal_columns: degenerate draw");
        for (size_t r = 0; r < rows; ++r) m.at2(r, c) = v.data[r] / n;
    }
    return m;
}

inline Tensor matvec(const Tensor& m, const Tensor& v) {
    require(m.rank() == 2 && m.shape[1] == v.numel(), "matvec: shape mismatch");
    Tensor out({m.shape[0]});
    for (size_t r = 0; r < m.shape[0]; ++r) {
        double s = 0.0;
        for (size_t c = 0; c < m.shape[1]; ++c)
            s += m.at2(r, c) * v.data[c];
        out.data[r] = s;
    }
    return out;
}

inline void normalize_inplace(Tensor& v) {
    double n = v.norm2();
    require(n > 1e-12, "normalize: zero vector");
    for (double& x : v.data) x /= n;
}

}  // namespace detail

// Deterministic world construction: fixed class latents, prototypes, and the
// rendering bases that place cue evidence into feature pyramids.
inline World make_world(const WorldConfig& cfg) {
    require(cfg.classes >= 2 * cfg.groups,
            "make_world: need classes >= 2 * groups");
    require(cfg.coord_dim >= 2 && cfg.coord_dim % 2 == 0,
            "make_world: coord_dim must be even and >= 2");
    require(cfg.coord_dim <= cfg.cue_dim,
            "make_world: coord_dim must be <= cue_dim");
    World w;
    w.cfg = cfg;
    require(w.geom.channels.back() >= cfg.coord_dim,
            "make_world: deepest channel count must cover coord_dim");

    Rng structure_rng(Rng::derive(cfg.seed, 0x57A6));
    w.cue_basis = detail::orthonormal_columns(structure_rng, cfg.cue_dim,
                                              cfg.coord_dim);
    w.motion_embed = Tensor::randn({cfg.cue_dim, cfg.motion_dim},
                                   structure_rng,
                                   1.0 / std::sqrt(double(cfg.motion_dim)));
    w.modulation_dir = detail::random_unit(structure_rng, cfg.coord_dim);
    size_t half = cfg.coord_dim / 2;
    w.shallow_encoder =
        Tensor::randn({w.geom.channels.front(), half}, structure_rng,
                      1.0 / std::sqrt(double(half)));
    w.deep_encoder =
        Tensor::randn({w.geom.channels.back(), cfg.coord_dim - half},
                      structure_rng, 1.0 / std::sqrt(double(cfg.coord_dim - half)));
    // Body occupies the central half of the frame so background cells exist.
    w.base_pose = Tensor({cfg.joints, 2});
    for (size_t j = 0; j < cfg.joints; ++j) {
        w.base_pose.at2(j, 0) = structure_rng.uniform(0.30, 0.70);
        w.base_pose.at2(j, 1) = structure_rng.uniform(0.30, 0.70);
    }
    w.motion_basis = Tensor::randn({cfg.joints, 2, cfg.motion_dim},
                                   structure_rng,
                                   1.0 / std::sqrt(double(cfg.motion_dim)));
    w.motion_phase = Tensor({cfg.joints, cfg.motion_dim});
    for (double& v : w.motion_phase.data)
        v = structure_rng.uniform(0.0, 2.0 * kPi);

    Rng class_rng(Rng::derive(cfg.seed, 0xC1A5));
    Tensor motion_anchor = detail::random_unit(class_rng, cfg.motion_dim);
    auto draw_motion = [&]() {
        Tensor r = detail::random_unit(class_rng, cfg.motion_dim);
        Tensor m({cfg.motion_dim});
        for (size_t i = 0; i < cfg.motion_dim; ++i)
            m.data[i] = motion_anchor.data[i] + cfg.motion_spread * r.data[i];
        detail::normalize_inplace(m);
        return m;
    };
    auto finish_class = [&](ClassSpec& c) {
        c.cue_latent = detail::matvec(w.cue_basis, c.cue_coord);
        Tensor proto({cfg.cue_dim});
        for (size_t i = 0; i < cfg.cue_dim; ++i)
            proto.data[i] = cfg.proto_cue_weight * c.cue_latent.data[i];
        Tensor memb = detail::matvec(w.motion_embed, c.motion);
        for (size_t i = 0; i < cfg.cue_dim; ++i)
            proto.data[i] += cfg.proto_motion_weight * memb.data[i];
        Tensor noise = Tensor::randn({cfg.cue_dim}, class_rng, cfg.proto_noise);
        for (size_t i = 0; i < cfg.cue_dim; ++i) proto.data[i] += noise.data[i];
        detail::normalize_inplace(proto);
        c.prototype = std::move(proto);
    };
    w.classes.resize(cfg.classes);
    for (size_t g = 0; g < cfg.groups; ++g) {
        ClassSpec& a = w.classes[2 * g];
        ClassSpec& b = w.classes[2 * g + 1];
        a.id = 2 * g;
        b.id = 2 * g + 1;
        a.group = b.group = static_cast<int>(g);
        Tensor shared_motion = draw_motion();
        a.motion = shared_motion;
        b.motion = shared_motion;
        a.cue_coord = detail::random_unit(class_rng, cfg.coord_dim);
        // Force the sibling's cue coordinate to a fixed small overlap so the
        // pairwise dot stays at 0.1 (spec bound: <= 0.2).
        Tensor ortho = detail::random_unit(class_rng, cfg.coord_dim);
        double d = 0.0;
        for (size_t i = 0; i < cfg.coord_dim; ++i)
            d += ortho.data[i] * a.cue_coord.data[i];
        for (size_t i = 0; i < cfg.coord_dim; ++i)
            ortho.data[i] -= d * a.cue_coord.data[i];
        detail::normalize_inplace(ortho);
        b.cue_coord = Tensor({cfg.coord_dim});
        for (size_t i = 0; i < cfg.coord_dim; ++i)
            b.cue_coord.data[i] =
                0.1 * a.cue_coord.data[i] + std::sqrt(1.0 - 0.01) * ortho.data[i];
    }
    for (size_t c = 2 * cfg.groups; c < cfg.classes; ++c) {
        ClassSpec& s = w.classes[c];
        s.id = c;
        s.group = -1;
        s.motion = draw_motion();
        s.cue_coord = detail::random_unit(class_rng, cfg.coord_dim);
    }
    for (ClassSpec& c : w.classes) finish_class(c);
    return w;
}

// Per-sample seed, a pure function of world seed, class, and sample index.
inline uint64_t video_seed(const World& w, size_t class_id, size_t index) {
    return Rng::derive(Rng::derive(w.cfg.seed, 0x71DE0),
                       class_id * 1000003ull + index);
}

// Everything one generated video carries. `cues` are the idealized per-frame
// cue vectors; the rendered pyramids embed the same signal so the pose
// pipeline can recover it.
struct VideoRaw {
    SkeletonSequence skel;
    Tensor cues;     // (T, d), unit rows
    std::vector<FeaturePyramid> pyramids;
    std::vector<Tensor> heatmaps;  // per frame, (J, H_L, W_L)
    Tensor caption;  // (d), unit
};

inline VideoRaw generate_video(const World& w, size_t class_id,
                               uint64_t seed) {
    require(class_id < w.classes.size(), "generate_video: bad class id");
    const WorldConfig& cfg = w.cfg;
    const ClassSpec& spec = w.classes[class_id];
    const size_t T = cfg.frames, J = cfg.joints;
    const size_t dc = cfg.coord_dim, half = dc / 2;
    Rng rng(seed);
    double phase = rng.uniform(0.0, 2.0 * kPi);

    VideoRaw v;
    v.skel.frames = Tensor({T, J, 2});
    v.cues = Tensor({T, cfg.cue_dim});
    v.pyramids.resize(T);
    v.heatmaps.resize(T);
    const size_t hl = w.geom.heights.back(), wl = w.geom.widths.back();

    for (size_t f = 0; f < T; ++f) {
        double tt = static_cast<double>(f) / static_cast<double>(T);
        // Skeleton: superposed sinusoids weighted by the class motion latent.
        Tensor joints({J, 2});
        for (size_t j = 0; j < J; ++j)
            for (size_t a = 0; a < 2; ++a) {
                double off = 0.0;
                for (size_t k = 0; k < cfg.motion_dim; ++k) {
                    double freq = 1.0 + static_cast<double>(k % 3);
                    off += spec.motion.data[k] * w.motion_basis.at3(j, a, k) *
                           std::sin(2.0 * kPi * freq * tt +
                                    w.motion_phase.at2(j, k) + phase);
                }
                double pos = w.base_pose.at2(j, a) + World::kMotionAmp * off +
                             cfg.sigma_skel * rng.gauss();
                joints.at2(j, a) = std::clamp(pos, 0.02, 0.98);
            }
        for (size_t j = 0; j < J; ++j) {
            v.skel.frames.at3(f, j, 0) = joints.at2(j, 0);
            v.skel.frames.at3(f, j, 1) = joints.at2(j, 1);
        }
        // Per-frame cue coordinates: class latent plus a phase-locked
        // modulation and isotropic noise.
        Tensor coord({dc});
        double mod = World::kModStrength * std::sin(2.0 * kPi * tt + phase);
        for (size_t i = 0; i < dc; ++i)
            coord.data[i] = spec.cue_coord.data[i] +
                            mod * w.modulation_dir.data[i] +
                            cfg.sigma_cue * rng.gauss();
        Tensor cue = detail::matvec(w.cue_basis, coord);
        detail::normalize_inplace(cue);
        for (size_t i = 0; i < cfg.cue_dim; ++i) v.cues.at2(f, i) = cue.data[i];

        // Render the pyramid: the low half of the coordinates lives in the
        // shallow level, the high half in the deepest one, both masked to
        // body cells. The middle level is a pure distractor.
        Tensor lo({half}), hi({dc - half});
        for (size_t i = 0; i < half; ++i) lo.data[i] = coord.data[i];
        for (size_t i = half; i < dc; ++i) hi.data[i - half] = coord.data[i];
        Tensor sig_lo = detail::matvec(w.shallow_encoder, lo);
        Tensor sig_hi = detail::matvec(w.deep_encoder, hi);
        FeaturePyramid pyr;
        for (size_t l = 0; l < w.geom.levels(); ++l) {
            size_t C = w.geom.channels[l], H = w.geom.heights[l],
                   W = w.geom.widths[l];
            Tensor level = Tensor::randn({C, H, W}, rng, cfg.sigma_bg);
            const Tensor* sig = nullptr;
            if (l == 0) sig = &sig_lo;
            if (l + 1 == w.geom.levels()) sig = &sig_hi;
            if (sig != nullptr) {
                Tensor hm = gaussian_heatmaps(joints, H, W, cfg.heatmap_sigma);
                // Joint-wise max keeps the body mask near 1 at every joint.
                Tensor mask({H, W});
                for (size_t j = 0; j < J; ++j)
                    for (size_t p = 0; p < H * W; ++p)
                        mask.data[p] =
                            std::max(mask.data[p], hm.data[j * H * W + p]);
                for (size_t c = 0; c < C; ++c)
                    for (size_t p = 0; p < H * W; ++p)
                        level.data[c * H * W + p] +=
                            World::kSignalGain * mask.data[p] * sig->data[c];
            }
            pyr.levels.push_back(std::move(level));
        }
        v.pyramids[f] = std::move(pyr);
        v.heatmaps[f] = gaussian_heatmaps(joints, hl, wl, cfg.heatmap_sigma);
    }
    // Caption embedding: noisy copy of the class cue latent.
    Tensor cap = spec.cue_latent;
    Tensor cap_noise = Tensor::randn({cfg.cue_dim}, rng, cfg.sigma_cue);
    for (size_t i = 0; i < cfg.cue_dim; ++i) cap.data[i] += cap_noise.data[i];
    detail::normalize_inplace(cap);
    v.caption = std::move(cap);
    return v;
}

// Sampled video without the rendered pyramids (skeleton, idealized cues,
// joint heatmaps at the deepest pyramid resolution, caption embedding).
inline VideoRaw sample_video(const World& w, size_t class_id, uint64_t seed) {
    VideoRaw v = generate_video(w, class_id, seed);
    v.pyramids.clear();
    return v;
}

// Seen/unseen class split. The unseen set always contains a straddling
// confusable-group member (its sibling stays seen) and, when it is large
// enough, one entire confusable group.
struct SplitSpec {
    std::vector<size_t> seen_ids;    // ascending
    std::vector<size_t> unseen_ids;  // ascending

    // Unseen classes whose confusable-group sibling is seen.
    std::vector<size_t> straddlers;
    // Unseen classes whose whole group is unseen.
    std::vector<size_t> collided;
};

inline SplitSpec make_split(const World& w, size_t unseen_count,
                            uint64_t seed) {
    const size_t C = w.cfg.classes, G = w.cfg.groups;
    require(unseen_count >= 1 && unseen_count < C,
            "make_split: unseen count out of range");
    Rng rng(Rng::derive(seed, 0x5917));
    std::vector<size_t> unseen;
    if (unseen_count >= 3 && G >= 2) {
        size_t free_needed = unseen_count - 3;
        require(free_needed <= C - 2 * G,
                "make_split: not enough free classes for the requested split");
        size_t g_full = rng.below(G);
        size_t g_strad = (g_full + 1 + rng.below(G - 1)) % G;
        unseen.push_back(2 * g_full);
        unseen.push_back(2 * g_full + 1);
        unseen.push_back(2 * g_strad + rng.below(2));
        std::vector<size_t> free_pool;
        for (size_t c = 2 * G; c < C; ++c) free_pool.push_back(c);
        for (size_t i = 0; i < free_needed; ++i) {
            size_t pick = rng.below(free_pool.size());
            unseen.push_back(free_pool[pick]);
            free_pool.erase(free_pool.begin() + static_cast<long>(pick));
        }
    } else {
        require(G >= 1, "make_split: need a confusable group for a straddler");
        size_t g = rng.below(G);
        unseen.push_back(2 * g + rng.below(2));
        std::vector<size_t> pool;
        for (size_t c = 0; c < C; ++c)
            if (c != unseen[0]) pool.push_back(c);
        // Avoid accidentally completing the straddled group.
        size_t sibling = unseen[0] ^ 1ull;
        pool.erase(std::remove(pool.begin(), pool.end(), sibling), pool.end());
        require(unseen_count - 1 <= pool.size(),
                "make_split: not enough classes outside the straddled group");
        for (size_t i = 1; i < unseen_count; ++i) {
            size_t pick = rng.below(pool.size());
            unseen.push_back(pool[pick]);
            pool.erase(pool.begin() + static_cast<long>(pick));
        }
    }
    std::sort(unseen.begin(), unseen.end());
    SplitSpec s;
    s.unseen_ids = unseen;
    for (size_t c = 0; c < C; ++c)
        if (!std::binary_search(unseen.begin(), unseen.end(), c))
            s.seen_ids.push_back(c);
    for (size_t u : s.unseen_ids) {
        if (w.classes[u].group < 0) continue;
        size_t sibling = u ^ 1ull;
        if (std::binary_search(s.unseen_ids.begin(), s.unseen_ids.end(),
                               sibling))
            s.collided.push_back(u);
        else
            s.straddlers.push_back(u);
    }
    require(!s.straddlers.empty(),
            "make_split: no straddling confusable group");
    return s;
}

inline PrototypeTable prototype_table(const World& w, const SplitSpec& s) {
    PrototypeTable t;
    for (const ClassSpec& c : w.classes) t.prototypes.push_back(c.prototype);
    t.seen_ids = s.seen_ids;
    t.unseen_ids = s.unseen_ids;
    t.validate();
    return t;
}

// Materialized sample: skeleton sequence plus the cached cue sequence the
// pose pipeline extracted for it.
struct Sample {
    size_t class_id = 0;
    SkeletonSequence skel;
    Tensor cues;     // (T, d)
    Tensor caption;  // (d)
};

// In-memory dataset with per-class read instrumentation: every access through
// get() is counted, which lets tests verify that unseen-class samples are
// touched only during evaluation.
class Dataset {
  public:
    explicit Dataset(size_t num_classes) : reads_(num_classes, 0) {}
    Dataset() = default;

    void add(Sample s) {
        require(s.class_id < reads_.size(), "dataset: class id out of range");
        samples_.push_back(std::move(s));
    }
    size_t size() const { return samples_.size(); }
    const Sample& get(size_t i) const {
        require(i < samples_.size(), "dataset: index out of range");
        ++reads_[samples_[i].class_id];
        return samples_[i];
    }
    size_t label_of(size_t i) const {
        require(i < samples_.size(), "dataset: index out of range");
        return samples_[i].class_id;
    }
    const std::vector<size_t>& reads() const { return reads_; }
    void reset_reads() const {
        std::fill(reads_.begin(), reads_.end(), 0);
    }

  private:
    std::vector<Sample> samples_;
    mutable std::vector<size_t> reads_;
};

}  // namespace posebridge
