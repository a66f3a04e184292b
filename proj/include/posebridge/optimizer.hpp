#pragma once

#include <cmath>
#include <vector>

#include "posebridge/params.hpp"

namespace posebridge {

// Warmup + cosine learning-rate schedule, indexed by optimizer step.
// step 0 with warmup returns 0 (ramp start); step == warmup_steps returns the
// base rate exactly; the final step returns min_lr.
inline double lr_at(size_t step, size_t total_steps, size_t warmup_steps,
                    double base_lr, double min_lr) {
    require(total_steps >= 1, "lr_at: total_steps must be >= 1");
    require(step < total_steps, "lr_at: step out of range");
    require(warmup_steps < total_steps, "lr_at: warmup must be < total");
    require(base_lr >= min_lr && min_lr >= 0.0, "lr_at: invalid rates");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) /
               static_cast<double>(warmup_steps);
    size_t span = total_steps - 1 - warmup_steps;
    double progress =
        span == 0 ? 1.0
                  : static_cast<double>(step - warmup_steps) /
                        static_cast<double>(span);
    constexpr double pi = 3.14159265358979323846;
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(pi * progress));
}

// Scale all gradients by min(1, max_norm / global_norm). Returns the global
// norm before clipping.
inline double clip_gradients(std::vector<Tensor>& grads, double max_norm) {
    require(max_norm > 0.0, "clip_gradients: max_norm must be positive");
    double sq = 0.0;
    for (const Tensor& g : grads) {
        g.check_finite("gradient");
        for (double v : g.data) sq += v * v;
    }
    double norm = std::sqrt(sq);
    if (norm > max_norm) {
        double s = max_norm / norm;
        for (Tensor& g : grads)
            for (double& v : g.data) v *= s;
    }
    return norm;
}

// AdamW with bias correction and decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double weight_decay = 0.0;
    size_t step = 0;
    std::vector<Tensor> m, v;

    void init(const ParameterStore& params) {
        m.clear();
        v.clear();
        for (size_t i = 0; i < params.count(); ++i) {
            m.push_back(Tensor::zeros(params.at(i).shape));
            v.push_back(Tensor::zeros(params.at(i).shape));
        }
        step = 0;
    }

    void apply(ParameterStore& params, const std::vector<Tensor>& grads,
               double lr) {
        require(m.size() == params.count(), "adamw: call init first");
        require(grads.size() == params.count(), "adamw: gradient count mismatch");
        ++step;
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (size_t i = 0; i < params.count(); ++i) {
            Tensor& p = params.at_mut(i);
            const Tensor& g = grads[i];
            require(g.same_shape(p), "adamw: gradient shape mismatch");
            g.check_finite("adamw gradient");
            for (size_t j = 0; j < p.numel(); ++j) {
                double gj = g.data[j];
                m[i].data[j] = beta1 * m[i].data[j] + (1.0 - beta1) * gj;
                v[i].data[j] = beta2 * v[i].data[j] + (1.0 - beta2) * gj * gj;
                double mhat = m[i].data[j] / bc1;
                double vhat = v[i].data[j] / bc2;
                p.data[j] -= lr * mhat / (std::sqrt(vhat) + eps) +
                             lr * weight_decay * p.data[j];
            }
        }
    }
};

// Exponential moving average of the parameters. Before the activation epoch
// the shadow tracks the raw weights exactly; from then on it blends with the
// configured decay.
struct EmaState {
    double decay = 0.999;
    size_t start_epoch = 5;
    ParameterStore shadow;
    bool initialized = false;

    void update(const ParameterStore& params, size_t epoch) {
        if (!initialized || epoch < start_epoch) {
            shadow = params.clone();
            initialized = true;
            return;
        }
        for (size_t i = 0; i < params.count(); ++i) {
            Tensor& s = shadow.at_mut(i);
            const Tensor& p = params.at(i);
            for (size_t j = 0; j < p.numel(); ++j)
                s.data[j] = decay * s.data[j] + (1.0 - decay) * p.data[j];
        }
    }
};

}  // namespace posebridge
