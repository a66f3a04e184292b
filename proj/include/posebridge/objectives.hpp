#pragma once

#include <vector>

#include "posebridge/params.hpp"
#include "posebridge/tape.hpp"

namespace posebridge {

struct LossWeights {
    double s_cls = 1.0, s_sem = 1.5, s_con = 1.5;
    double p_cls = 0.5, p_sem = 0.5, p_con = 0.3;
    double s2p = 0.3, kd = 1.0;
    double b_sem = 1.0, b_con = 0.5;
    double tau_supcon = 0.07;
    double tau_kd = 4.0;
};

// Cross-entropy of seen-class classifier logits. Labels are seen-class
// indices (0..|Y^s|-1).
inline Var cls_loss(Tape& t, Var z_batch, const std::vector<size_t>& labels,
                    Var cls_w, Var cls_b) {
    Var logits = ops::linear(t, z_batch, cls_w, cls_b);
    return ops::cross_entropy_mean(t, logits, labels);
}

// Cross-entropy over prototype-similarity logits z (T^s)^T.
inline Var sem_loss(Tape& t, Var z_batch, const std::vector<size_t>& labels,
                    const Tensor& seen_prototypes) {
    Var ts = t.leaf(seen_prototypes);
    Var logits = ops::matmul_nt(t, z_batch, ts);
    return ops::cross_entropy_mean(t, logits, labels);
}

// Supervised contrastive loss, L_out form: anchors average the log-softmax
// over their positive set; anchors without positives are excluded from the
// mean, and a batch with no positive pair at all is an error.
inline Var supcon_loss(Tape& t, Var z_batch, const std::vector<size_t>& labels,
                       double tau) {
    const Tensor& Z = t.value(z_batch);
    require(Z.rank() == 2 && Z.shape[0] == labels.size(),
            "supcon: batch shape mismatch");
    size_t b = Z.shape[0];
    require(b >= 2, "supcon: batch must have >= 2 samples");
    require(tau > 0.0, "supcon: tau must be positive");
    Var sims = ops::scale(t, ops::matmul_nt(t, z_batch, z_batch), 1.0 / tau);
    // Exclude self-similarity from every anchor's denominator.
    Tensor self_mask({b, b});
    for (size_t i = 0; i < b; ++i) self_mask.at2(i, i) = -1e9;
    Var masked = ops::add(t, sims, t.leaf(self_mask));
    Var logp = ops::log_softmax_rows(t, masked);
    // Weight matrix folding both the per-anchor positive average and the
    // mean over anchors that have positives.
    Tensor weights({b, b});
    size_t anchors_with_pos = 0;
    for (size_t i = 0; i < b; ++i) {
        size_t npos = 0;
        for (size_t j = 0; j < b; ++j)
            if (j != i && labels[j] == labels[i]) ++npos;
        if (npos > 0) ++anchors_with_pos;
    }
    if (anchors_with_pos == 0) fail("supcon: no anchor has a positive pair");
    for (size_t i = 0; i < b; ++i) {
        size_t npos = 0;
        for (size_t j = 0; j < b; ++j)
            if (j != i && labels[j] == labels[i]) ++npos;
        if (npos == 0) continue;
        double w = 1.0 / (static_cast<double>(npos) *
                          static_cast<double>(anchors_with_pos));
        for (size_t j = 0; j < b; ++j)
            if (j != i && labels[j] == labels[i]) weights.at2(i, j) = w;
    }
    return ops::scale(t, ops::dot_const(t, logp, std::move(weights)), -1.0);
}

// Teacher probabilities for the distillation term: softmax of detached
// pose-semantic prototype similarities at temperature tau_kd. Computed from
// raw values, never through the tape, which is what severs the gradient path
// to z_p.
inline Tensor kd_teacher_probs(const Tensor& z_p,
                               const Tensor& seen_prototypes, double tau_kd) {
    require(tau_kd > 0.0, "align_loss: tau_kd must be positive");
    size_t c = seen_prototypes.shape[0];
    Tensor tl({c});
    for (size_t cc = 0; cc < c; ++cc) {
        double s = 0.0;
        for (size_t j = 0; j < z_p.numel(); ++j)
            s += z_p.data[j] * seen_prototypes.at2(cc, j);
        tl.data[cc] = s / tau_kd;
    }
    double mx = tl.data[0];
    for (double v : tl.data) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : tl.data) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : tl.data) v = std::max(v / z, 1e-12);
    return tl;
}

// KL(teacher || student) with a fixed teacher distribution; only the student
// logits (from z_s) live on the tape.
inline Var kd_kl_term(Tape& t, Var z_s, const Tensor& teacher,
                      const Tensor& seen_prototypes, double tau_kd) {
    size_t c = seen_prototypes.shape[0];
    double entropy = 0.0;
    for (double v : teacher.data) entropy += v * std::log(v);
    Var zrow = ops::reshape(t, z_s, {1, t.value(z_s).numel()});
    Var logits = ops::scale(
        t, ops::matmul_nt(t, zrow, t.leaf(seen_prototypes)), 1.0 / tau_kd);
    Var logq = ops::log_softmax_rows(t, ops::reshape(t, logits, {c}));
    Var cross = ops::scale(t, ops::dot_const(t, logq, teacher), -1.0);
    return ops::add(t, t.leaf_scalar(entropy), cross);
}

// Cosine consistency plus pose-guided distribution distillation. The
// teacher distribution comes from detached z_p values, so no gradient
// reaches z_p through the KL term.
inline Var align_loss(Tape& t, const std::vector<Var>& z_s,
                      const std::vector<Var>& z_p,
                      const Tensor& seen_prototypes, double lambda_s2p,
                      double lambda_kd, double tau_kd) {
    require(!z_s.empty() && z_s.size() == z_p.size(),
            "align_loss: batch mismatch");
    require(tau_kd > 0.0, "align_loss: tau_kd must be positive");
    size_t b = z_s.size();
    Var total = t.leaf_scalar(0.0);
    for (size_t i = 0; i < b; ++i) {
        Var cos_term = ops::scale(t, ops::dot(t, z_s[i], z_p[i]), -1.0);
        cos_term = ops::add(t, t.leaf_scalar(1.0), cos_term);
        Var term = ops::scale(t, cos_term, lambda_s2p);
        if (lambda_kd != 0.0) {
            Tensor teacher = kd_teacher_probs(t.value(z_p[i]),
                                              seen_prototypes, tau_kd);
            Var kl = kd_kl_term(t, z_s[i], teacher, seen_prototypes, tau_kd);
            term = ops::add(t, term, ops::scale(t, kl, lambda_kd));
        }
        total = ops::add(t, total, term);
    }
    return ops::scale(t, total, 1.0 / static_cast<double>(b));
}

struct LossBreakdown {
    Var total;
    double loss_s = 0.0, loss_p = 0.0, loss_b = 0.0, loss_align = 0.0;
};

// Weighted sum of the branch objectives. The bridge branch has no
// classifier term. Components with zero weight are skipped entirely.
inline LossBreakdown total_loss(Tape& t, const std::vector<Var>& z_s,
                                const std::vector<Var>& z_p,
                                const std::vector<Var>& z_b,
                                const std::vector<size_t>& labels,
                                const Tensor& seen_prototypes,
                                const TapeBinding& bind,
                                const LossWeights& w,
                                bool include_pose_branch = true,
                                bool include_bridge_branch = true) {
    require(!z_s.empty(), "total_loss: empty batch");
    LossBreakdown out;
    Var zs_mat = ops::stack_rows(t, z_s);
    auto weighted = [&](Var acc, Var term, double weight) {
        return ops::add(t, acc, ops::scale(t, term, weight));
    };
    Var loss_s = t.leaf_scalar(0.0);
    if (w.s_cls != 0.0)
        loss_s = weighted(loss_s,
                          cls_loss(t, zs_mat, labels, bind["cls_s.w"],
                                   bind["cls_s.b"]),
                          w.s_cls);
    if (w.s_sem != 0.0)
        loss_s = weighted(loss_s, sem_loss(t, zs_mat, labels, seen_prototypes),
                          w.s_sem);
    if (w.s_con != 0.0)
        loss_s = weighted(loss_s, supcon_loss(t, zs_mat, labels, w.tau_supcon),
                          w.s_con);
    Var total = loss_s;
    out.loss_s = t.scalar(loss_s);

    if (include_pose_branch) {
        Var zp_mat = ops::stack_rows(t, z_p);
        Var loss_p = t.leaf_scalar(0.0);
        if (w.p_cls != 0.0)
            loss_p = weighted(loss_p,
                              cls_loss(t, zp_mat, labels, bind["cls_p.w"],
                                       bind["cls_p.b"]),
                              w.p_cls);
        if (w.p_sem != 0.0)
            loss_p = weighted(loss_p,
                              sem_loss(t, zp_mat, labels, seen_prototypes),
                              w.p_sem);
        if (w.p_con != 0.0)
            loss_p = weighted(loss_p,
                              supcon_loss(t, zp_mat, labels, w.tau_supcon),
                              w.p_con);
        total = ops::add(t, total, loss_p);
        out.loss_p = t.scalar(loss_p);

        if (w.s2p != 0.0 || w.kd != 0.0) {
            Var la = align_loss(t, z_s, z_p, seen_prototypes, w.s2p, w.kd,
                                w.tau_kd);
            total = ops::add(t, total, la);
            out.loss_align = t.scalar(la);
        }
    }

    if (include_bridge_branch) {
        Var zb_mat = ops::stack_rows(t, z_b);
        Var loss_b = t.leaf_scalar(0.0);
        if (w.b_sem != 0.0)
            loss_b = weighted(loss_b,
                              sem_loss(t, zb_mat, labels, seen_prototypes),
                              w.b_sem);
        if (w.b_con != 0.0)
            loss_b = weighted(loss_b,
                              supcon_loss(t, zb_mat, labels, w.tau_supcon),
                              w.b_con);
        total = ops::add(t, total, loss_b);
        out.loss_b = t.scalar(loss_b);
    }

    out.total = total;
    return out;
}

}  // namespace posebridge
