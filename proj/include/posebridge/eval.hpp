#pragma once

#include <functional>
#include <map>
#include <vector>

#include "posebridge/trainer.hpp"

namespace posebridge {

struct Metrics {
    double zsl_acc = 0.0;
    double gzsl_seen = 0.0;    // S
    double gzsl_unseen = 0.0;  // U
    double harmonic = 0.0;     // H
    double kappa = 0.0;
    std::map<size_t, double> per_class;  // GZSL per-class accuracy
    Tensor confusion;                    // (C, C), true x predicted
};

// Zero-shot prediction: argmax dot product over unseen classes only.
// Ties break toward the smaller class id.
inline size_t zsl_predict(const Tensor& z_b,
                          const std::vector<Tensor>& matching,
                          const std::vector<size_t>& unseen_ids) {
    require(!unseen_ids.empty(), "zsl_predict: empty unseen prototype set");
    size_t best = unseen_ids[0];
    double best_s = -1e300;
    for (size_t c : unseen_ids) {
        const Tensor& p = matching[c];
        require(p.numel() == z_b.numel(), "zsl_predict: dimension mismatch");
        double s = 0.0;
        for (size_t j = 0; j < p.numel(); ++j) s += p.data[j] * z_b.data[j];
        if (s > best_s) {
            best_s = s;
            best = c;
        }
    }
    return best;
}

// Generalized prediction over all classes with the seen-class score penalty:
// argmax_c z_b . t_c - kappa * [c seen]. Ties break toward the smaller id.
inline size_t gzsl_predict(const Tensor& z_b,
                           const std::vector<Tensor>& matching,
                           const PrototypeTable& table, double kappa) {
    require(kappa >= 0.0, "gzsl_predict: kappa must be >= 0");
    require(!matching.empty(), "gzsl_predict: empty prototype set");
    size_t best = 0;
    double best_s = -1e300;
    for (size_t c = 0; c < matching.size(); ++c) {
        const Tensor& p = matching[c];
        require(p.numel() == z_b.numel(), "gzsl_predict: dimension mismatch");
        double s = 0.0;
        for (size_t j = 0; j < p.numel(); ++j) s += p.data[j] * z_b.data[j];
        if (table.is_seen(c)) s -= kappa;
        if (s > best_s) {
            best_s = s;
            best = c;
        }
    }
    return best;
}

inline double harmonic_mean(double s, double u) {
    require(s >= 0.0 && u >= 0.0, "harmonic_mean: negative input");
    if (s + u <= 0.0) return 0.0;
    return 2.0 * s * u / (s + u);
}

// Full protocol: ZSL accuracy over unseen-labeled samples (unseen-restricted
// argmax), S and U over seen-/unseen-labeled samples with the calibrated
// generalized argmax, and their harmonic mean.
inline Metrics evaluate(const ModelParams& model, const Dataset& test,
                        const PrototypeTable& table, double kappa) {
    require(test.size() >= 1, "evaluate: empty test split");
    table.validate();
    const std::vector<Tensor>& matching = table.matching_prototypes();
    size_t C = table.num_classes();
    Metrics m;
    m.kappa = kappa;
    m.confusion = Tensor({C, C});
    size_t seen_n = 0, seen_hit = 0, unseen_n = 0, unseen_hit = 0,
           zsl_hit = 0;
    std::map<size_t, size_t> class_n, class_hit;
    for (size_t i = 0; i < test.size(); ++i) {
        const Sample& s = test.get(i);
        Tensor z_b = forward_values(model, s).z_b;
        size_t pred = gzsl_predict(z_b, matching, table, kappa);
        m.confusion.at2(s.class_id, pred) += 1.0;
        class_n[s.class_id] += 1;
        if (pred == s.class_id) class_hit[s.class_id] += 1;
        if (table.is_seen(s.class_id)) {
            ++seen_n;
            if (pred == s.class_id) ++seen_hit;
        } else {
            ++unseen_n;
            if (pred == s.class_id) ++unseen_hit;
            if (zsl_predict(z_b, matching, table.unseen_ids) == s.class_id)
                ++zsl_hit;
        }
    }
    if (seen_n > 0)
        m.gzsl_seen = static_cast<double>(seen_hit) /
                      static_cast<double>(seen_n);
    if (unseen_n > 0) {
        m.gzsl_unseen = static_cast<double>(unseen_hit) /
                        static_cast<double>(unseen_n);
        m.zsl_acc = static_cast<double>(zsl_hit) /
                    static_cast<double>(unseen_n);
    }
    m.harmonic = harmonic_mean(m.gzsl_seen, m.gzsl_unseen);
    for (const auto& [c, n] : class_n)
        m.per_class[c] = static_cast<double>(class_hit[c]) /
                         static_cast<double>(n);
    return m;
}

// Pick the calibration coefficient maximizing H over a grid; ties break
// toward the smaller kappa.
inline double sweep_kappa(const std::vector<double>& grid,
                          const std::function<double(double)>& h_of_kappa) {
    require(!grid.empty(), "sweep_kappa: empty grid");
    double best_k = grid[0];
    double best_h = -1.0;
    for (double k : grid) {
        double h = h_of_kappa(k);
        if (h > best_h || (h == best_h && k < best_k)) {
            best_h = h;
            best_k = k;
        }
    }
    return best_k;
}

}  // namespace posebridge
