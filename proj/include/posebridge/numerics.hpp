#pragma once

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "posebridge/tape.hpp"

namespace posebridge {

// Multi-head scaled-dot attention with output projection.
// q: (nq x e), k/v: (nk x e), wo: (e x e). Per head: softmax(QK^T/sqrt(dh))V,
// heads concatenated, then projected by wo.
inline Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, Var wo,
                                size_t num_heads) {
    const Tensor &Q = t.value(q), &K = t.value(k), &V = t.value(v);
    require(Q.rank() == 2 && K.rank() == 2 && V.rank() == 2,
            "attention: inputs must be matrices");
    size_t e = Q.shape[1];
    require(K.shape[1] == e && V.shape[1] == e,
            "attention: embedding dim mismatch");
    require(K.shape[0] == V.shape[0],
            "attention: key/value sequence length mismatch");
    require(num_heads >= 1 && e % num_heads == 0,
            "attention: embedding dim not divisible by num_heads");
    size_t dh = e / num_heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(num_heads);
    for (size_t h = 0; h < num_heads; ++h) {
        Var qh = ops::slice_cols(t, q, h * dh, (h + 1) * dh);
        Var kh = ops::slice_cols(t, k, h * dh, (h + 1) * dh);
        Var vh = ops::slice_cols(t, v, h * dh, (h + 1) * dh);
        Var scores = ops::scale(t, ops::matmul_nt(t, qh, kh), inv_sqrt);
        Var attn = ops::softmax_rows(t, scores);
        heads.push_back(ops::matmul(t, attn, vh));
    }
    return ops::matmul(t, ops::concat_cols(t, heads), wo);
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient checking.
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    std::string name;
    size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckReport {
    bool passed = true;
    size_t checked = 0;
    GradCheckEntry worst;
    std::vector<GradCheckEntry> failures;
};

// scalar_fn evaluates the loss from the (possibly perturbed) parameter set
// and, when `want_grad`, also fills `grads` (same shapes as params).
using GradCheckFn = std::function<double(
    const std::vector<Tensor>& params, bool want_grad,
    std::vector<Tensor>* grads)>;

inline GradCheckReport grad_check(const GradCheckFn& fn,
                                  std::vector<Tensor> params,
                                  const std::vector<std::string>& names,
                                  double step = 1e-5, double rtol = 1e-4) {
    GradCheckReport report;
    std::vector<Tensor> grads;
    double loss = fn(params, true, &grads);
    if (!std::isfinite(loss)) fail("grad_check: non-finite loss");
    require(grads.size() == params.size(),
            "grad_check: gradient count mismatch");
    for (size_t p = 0; p < params.size(); ++p) {
        require(grads[p].same_shape(params[p]),
                "grad_check: gradient shape mismatch for " + names[p]);
        for (size_t i = 0; i < params[p].numel(); ++i) {
            double saved = params[p].data[i];
            params[p].data[i] = saved + step;
            double lp = fn(params, false, nullptr);
            params[p].data[i] = saved - step;
            double lm = fn(params, false, nullptr);
            params[p].data[i] = saved;
            double fd = (lp - lm) / (2.0 * step);
            double an = grads[p].data[i];
            double denom = std::max(1.0, std::abs(fd));
            double rel = std::abs(an - fd) / denom;
            GradCheckEntry e{names[p], i, an, fd, rel};
            ++report.checked;
            if (rel > report.worst.rel_err) report.worst = e;
            if (rel > rtol) {
                report.passed = false;
                if (report.failures.size() < 16) report.failures.push_back(e);
            }
        }
    }
    return report;
}

}  // namespace posebridge
