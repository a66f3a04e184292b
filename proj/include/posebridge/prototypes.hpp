#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <vector>

#include "posebridge/tape.hpp"

namespace posebridge {

// Unit-norm text prototypes with a seen/unseen partition and optional
// adapted variants.
struct PrototypeTable {
    std::vector<Tensor> prototypes;        // indexed by class id
    std::vector<Tensor> adapted;           // empty until adaptation ran
    std::vector<size_t> seen_ids;          // ascending
    std::vector<size_t> unseen_ids;        // ascending

    size_t num_classes() const { return prototypes.size(); }

    bool is_seen(size_t c) const {
        return std::binary_search(seen_ids.begin(), seen_ids.end(), c);
    }

    void validate() const {
        std::set<size_t> s(seen_ids.begin(), seen_ids.end());
        for (size_t u : unseen_ids)
            require(!s.count(u), "prototype table: seen/unseen overlap");
        for (const Tensor& p : prototypes)
            require(std::abs(p.norm2() - 1.0) <= 1e-10,
                    "prototype table: prototype not unit-norm");
    }

    const std::vector<Tensor>& matching_prototypes() const {
        return adapted.empty() ? prototypes : adapted;
    }
};

// Per-seen-class pose-semantic centroids (unit-norm) with sample counts.
struct CentroidTable {
    std::map<size_t, Tensor> centroids;
    std::map<size_t, size_t> counts;
};

// mu_c = normalize(mean of z_p over the class's training samples).
inline CentroidTable compute_centroids(const std::vector<Tensor>& z_p,
                                       const std::vector<size_t>& labels,
                                       const std::vector<size_t>& seen_ids) {
    require(z_p.size() == labels.size(), "centroids: label count mismatch");
    CentroidTable table;
    std::map<size_t, Tensor> sums;
    for (size_t i = 0; i < z_p.size(); ++i) {
        size_t c = labels[i];
        auto it = sums.find(c);
        if (it == sums.end()) {
            sums[c] = z_p[i];
        } else {
            for (size_t j = 0; j < z_p[i].numel(); ++j)
                it->second.data[j] += z_p[i].data[j];
        }
        table.counts[c] += 1;
    }
    for (size_t c : seen_ids) {
        auto it = sums.find(c);
        if (it == sums.end())
            fail("centroids: seen class " + std::to_string(c) +
                 " has no training samples");
        Tensor mu = it->second;
        double inv = 1.0 / static_cast<double>(table.counts[c]);
        for (double& v : mu.data) v *= inv;
        double n = mu.norm2();
        if (n <= 1e-12)
            fail("centroids: zero-norm mean for class " + std::to_string(c));
        for (double& v : mu.data) v /= n;
        table.centroids[c] = std::move(mu);
    }
    return table;
}

// Tape forms, so adaptation participates in gradient checking.
inline Var adapt_seen_var(Tape& t, Var proto, Var centroid, double rho) {
    require(rho >= 0.0 && rho <= 1.0, "adapt_seen: rho must be in [0,1]");
    Var blend = ops::add(t, ops::scale(t, proto, 1.0 - rho),
                         ops::scale(t, centroid, rho));
    return ops::l2_normalize(t, blend);
}

// Residual prototype adaptation for a seen class.
inline Tensor adapt_seen(const Tensor& proto, const Tensor& centroid,
                         double rho) {
    Tape t(/*grad_enabled=*/false);
    return t.value(adapt_seen_var(t, t.leaf(proto), t.leaf(centroid), rho));
}

// Top-K seen classes by prototype dot product; ties broken by ascending id.
inline std::vector<size_t> nearest_seen(const Tensor& proto,
                                        const PrototypeTable& table,
                                        size_t k) {
    require(k >= 1, "nearest_seen: K must be >= 1");
    require(k <= table.seen_ids.size(),
            "nearest_seen: K exceeds the number of seen classes");
    std::vector<std::pair<double, size_t>> scored;
    scored.reserve(table.seen_ids.size());
    for (size_t c : table.seen_ids) {
        const Tensor& tc = table.prototypes[c];
        double s = 0.0;
        for (size_t j = 0; j < tc.numel(); ++j)
            s += tc.data[j] * proto.data[j];
        scored.push_back({s, c});
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<size_t> out(k);
    for (size_t i = 0; i < k; ++i) out[i] = scored[i].second;
    return out;
}

// Softmax transfer weights over the neighbor set.
inline std::vector<double> neighbor_weights(const Tensor& proto,
                                            const std::vector<Tensor>& neighbor_protos,
                                            double tau_a) {
    require(!neighbor_protos.empty(), "adapt_unseen: empty neighbor set");
    require(tau_a > 0.0, "adapt_unseen: tau_a must be positive");
    std::vector<double> logits;
    logits.reserve(neighbor_protos.size());
    double mx = -1e300;
    for (const Tensor& tn : neighbor_protos) {
        double s = 0.0;
        for (size_t j = 0; j < tn.numel(); ++j)
            s += tn.data[j] * proto.data[j];
        logits.push_back(s / tau_a);
        mx = std::max(mx, logits.back());
    }
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

// Tape form of the displacement transfer, for gradient checking.
inline Var adapt_unseen_var(Tape& t, Var proto,
                            const std::vector<Var>& neighbor_protos,
                            const std::vector<Var>& neighbor_centroids,
                            double rho, double tau_a) {
    require(!neighbor_protos.empty(), "adapt_unseen: empty neighbor set");
    require(neighbor_protos.size() == neighbor_centroids.size(),
            "adapt_unseen: neighbor/centroid count mismatch");
    size_t k = neighbor_protos.size();
    std::vector<Var> sims;
    std::vector<Var> disp;
    for (size_t i = 0; i < k; ++i) {
        sims.push_back(ops::scale(
            t, ops::dot(t, proto, neighbor_protos[i]), 1.0 / tau_a));
        disp.push_back(ops::sub(t, neighbor_centroids[i], neighbor_protos[i]));
    }
    Var logits = ops::reshape(t, ops::stack_rows(t, sims), {k});
    Var w = ops::softmax_rows(t, logits);
    Var w_row = ops::reshape(t, w, {1, k});
    Var d_mat = ops::stack_rows(t, disp);
    Var shift = ops::reshape(t, ops::matmul(t, w_row, d_mat),
                             {t.value(proto).numel()});
    return ops::l2_normalize(t, ops::add(t, proto, ops::scale(t, shift, rho)));
}

// Displacement-transfer adaptation for an unseen class; consumes only
// seen-side prototypes and centroids.
inline Tensor adapt_unseen(const Tensor& proto,
                           const std::vector<size_t>& neighbors,
                           const CentroidTable& centroids,
                           const PrototypeTable& table, double rho,
                           double tau_a) {
    require(!neighbors.empty(), "adapt_unseen: empty neighbor set");
    std::vector<Tensor> nprotos;
    for (size_t c : neighbors) nprotos.push_back(table.prototypes[c]);
    std::vector<double> w = neighbor_weights(proto, nprotos, tau_a);
    Tensor out = proto;
    for (size_t i = 0; i < neighbors.size(); ++i) {
        size_t c = neighbors[i];
        auto it = centroids.centroids.find(c);
        if (it == centroids.centroids.end())
            fail("adapt_unseen: no centroid for seen class " +
                 std::to_string(c));
        const Tensor& mu = it->second;
        const Tensor& tj = table.prototypes[c];
        for (size_t j = 0; j < out.numel(); ++j)
            out.data[j] += rho * w[i] * (mu.data[j] - tj.data[j]);
    }
    double n = out.norm2();
    if (n <= 1e-12) fail("adapt_unseen: zero-norm adapted prototype");
    for (double& v : out.data) v /= n;
    return out;
}

// Adapt every prototype in the table: residual blend for seen classes,
// neighbor displacement transfer for unseen ones.
inline void adapt_all(PrototypeTable& table, const CentroidTable& centroids,
                      double rho, size_t k, double tau_a) {
    table.adapted.assign(table.num_classes(), Tensor());
    for (size_t c : table.seen_ids) {
        auto it = centroids.centroids.find(c);
        if (it == centroids.centroids.end())
            fail("adapt_all: no centroid for seen class " + std::to_string(c));
        table.adapted[c] = adapt_seen(table.prototypes[c], it->second, rho);
    }
    for (size_t c : table.unseen_ids) {
        auto nb = nearest_seen(table.prototypes[c], table, k);
        table.adapted[c] =
            adapt_unseen(table.prototypes[c], nb, centroids, table, rho, tau_a);
    }
}

}  // namespace posebridge
