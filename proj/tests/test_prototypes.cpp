#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "posebridge/prototypes.hpp"
#include "posebridge/rng.hpp"

using namespace posebridge;

static Tensor unit(std::vector<double> v) {
    size_t d = v.size();
    Tensor t({d}, std::move(v));
    double n = t.norm2();
    for (double& x : t.data) x /= n;
    return t;
}

TEST_CASE("centroids: one sample per class returns that sample normalized") {
    std::vector<Tensor> zp = {unit({3, 4})};
    CentroidTable c = compute_centroids(zp, {0}, {0});
    CHECK(c.centroids.at(0).data[0] == doctest::Approx(0.6));
    CHECK(c.centroids.at(0).data[1] == doctest::Approx(0.8));
    CHECK(c.counts.at(0) == 1);
}

TEST_CASE("centroids: antipodal samples cancel to a zero mean and fail") {
    std::vector<Tensor> zp = {unit({1, 0}), unit({-1, 0})};
    CHECK_THROWS_AS(compute_centroids(zp, {0, 0}, {0}), Error);
}

TEST_CASE("centroids: missing seen class is an error") {
    std::vector<Tensor> zp = {unit({1, 0})};
    CHECK_THROWS_AS(compute_centroids(zp, {0}, {0, 1}), Error);
}

TEST_CASE("centroids: three-sample oracle against a hand computation") {
    Rng rng(5);
    std::vector<Tensor> zp;
    for (int i = 0; i < 3; ++i) {
        Tensor v = Tensor::randn({4}, rng);
        double n = v.norm2();
        for (double& x : v.data) x /= n;
        zp.push_back(v);
    }
    CentroidTable c = compute_centroids(zp, {2, 2, 2}, {2});
    Tensor mean({4});
    for (const Tensor& v : zp)
        for (size_t j = 0; j < 4; ++j) mean.data[j] += v.data[j] / 3.0;
    double n = mean.norm2();
    for (size_t j = 0; j < 4; ++j)
        CHECK(c.centroids.at(2).data[j] ==
              doctest::Approx(mean.data[j] / n).epsilon(1e-12));
    CHECK(c.counts.at(2) == 3);
}

TEST_CASE("adapt_seen: rho = 0 is the identity, rho = 1 is the centroid") {
    Tensor p = unit({1, 0}), mu = unit({0, 1});
    Tensor a0 = adapt_seen(p, mu, 0.0);
    CHECK(a0.data[0] == doctest::Approx(1.0));
    CHECK(a0.data[1] == doctest::Approx(0.0));
    Tensor a1 = adapt_seen(p, mu, 1.0);
    CHECK(a1.data[0] == doctest::Approx(0.0));
    CHECK(a1.data[1] == doctest::Approx(1.0));
}

TEST_CASE("adapt_seen: hand oracle at rho = 0.2") {
    // blend = 0.8*(1,0) + 0.2*(0,1) = (0.8, 0.2); normalized:
    // (0.9701, 0.2425).
    Tensor a = adapt_seen(unit({1, 0}), unit({0, 1}), 0.2);
    CHECK(a.data[0] == doctest::Approx(0.9701).epsilon(1e-4));
    CHECK(a.data[1] == doctest::Approx(0.2425).epsilon(1e-4));
    CHECK(a.norm2() == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("adapt_seen: rho outside [0,1] is rejected") {
    Tensor p = unit({1, 0}), mu = unit({0, 1});
    CHECK_THROWS_AS(adapt_seen(p, mu, -0.1), Error);
    CHECK_THROWS_AS(adapt_seen(p, mu, 1.1), Error);
}

static PrototypeTable toy_table() {
    PrototypeTable t;
    t.prototypes = {unit({1, 0, 0}), unit({0, 1, 0}), unit({1, 1, 0}),
                    unit({0, 0, 1})};
    t.seen_ids = {0, 1, 2};
    t.unseen_ids = {3};
    return t;
}

TEST_CASE("nearest_seen: K equal to the seen count returns every seen id") {
    PrototypeTable t = toy_table();
    auto nb = nearest_seen(t.prototypes[3], t, 3);
    std::sort(nb.begin(), nb.end());
    CHECK(nb == std::vector<size_t>{0, 1, 2});
}

TEST_CASE("nearest_seen: exact ties resolve to the smallest class id") {
    PrototypeTable t = toy_table();
    // The query is orthogonal to all three seen prototypes: every dot is 0.
    auto nb = nearest_seen(t.prototypes[3], t, 2);
    CHECK(nb == std::vector<size_t>{0, 1});
}

TEST_CASE("nearest_seen: K = 2 ranking oracle") {
    PrototypeTable t = toy_table();
    Tensor q = unit({2, 1, 0});  // closest to c2 (1,1)/sqrt2, then c0
    auto nb = nearest_seen(q, t, 2);
    CHECK(nb == std::vector<size_t>{2, 0});
}

TEST_CASE("nearest_seen: K larger than the seen set is rejected") {
    PrototypeTable t = toy_table();
    CHECK_THROWS_AS(nearest_seen(t.prototypes[3], t, 4), Error);
}

TEST_CASE("neighbor weights: sum to one; equal similarities are uniform") {
    Tensor q = unit({0, 0, 1});
    std::vector<Tensor> nb = {unit({1, 0, 0}), unit({0, 1, 0})};
    auto w = neighbor_weights(q, nb, 0.07);
    CHECK(w[0] + w[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("adapt_unseen: rho = 0 leaves the prototype unchanged") {
    PrototypeTable t = toy_table();
    CentroidTable c;
    c.centroids[0] = unit({0, 1, 1});
    c.centroids[1] = unit({1, 0, 1});
    Tensor a = adapt_unseen(t.prototypes[3], {0, 1}, c, t, 0.0, 0.07);
    CHECK(a.data == t.prototypes[3].data);
}

TEST_CASE("adapt_unseen: a single neighbor gets weight one") {
    // With K = 1 the transfer is proto + rho*(mu - t_neighbor), normalized.
    PrototypeTable t = toy_table();
    CentroidTable c;
    c.centroids[0] = unit({0, 1, 0});
    double rho = 0.3;
    Tensor a = adapt_unseen(t.prototypes[3], {0}, c, t, rho, 0.07);
    Tensor expect({3}, {0.0 + rho * (0.0 - 1.0), 0.0 + rho * (1.0 - 0.0), 1.0});
    double n = expect.norm2();
    for (size_t j = 0; j < 3; ++j)
        CHECK(a.data[j] == doctest::Approx(expect.data[j] / n).epsilon(1e-12));
}

TEST_CASE("adapt_unseen: equal-similarity neighbors average displacements") {
    PrototypeTable t = toy_table();
    CentroidTable c;
    c.centroids[0] = unit({0, 1, 0});  // displacement (-1, 1, 0)
    c.centroids[1] = unit({1, 0, 0});  // displacement (1, -1, 0)
    // Both neighbors are orthogonal to the query so w = (0.5, 0.5) and the
    // displacements cancel exactly: the adapted prototype is unchanged.
    Tensor a = adapt_unseen(t.prototypes[3], {0, 1}, c, t, 0.4, 0.07);
    for (size_t j = 0; j < 3; ++j)
        CHECK(a.data[j] ==
              doctest::Approx(t.prototypes[3].data[j]).epsilon(1e-12));
}

TEST_CASE("adapt_all: unit norms everywhere, only seen inputs consumed") {
    Rng rng(9);
    PrototypeTable t = toy_table();
    // Centroids exist for seen classes only; adapt_all must never request one
    // for the unseen class.
    CentroidTable c;
    for (size_t s : t.seen_ids) {
        Tensor v = Tensor::randn({3}, rng);
        double n = v.norm2();
        for (double& x : v.data) x /= n;
        c.centroids[s] = v;
    }
    adapt_all(t, c, 0.2, 2, 0.07);
    CHECK(t.adapted.size() == 4);
    for (size_t cls = 0; cls < 4; ++cls)
        CHECK(t.adapted[cls].norm2() == doctest::Approx(1.0).epsilon(1e-10));
    // Matching now prefers the adapted variants.
    CHECK(&t.matching_prototypes() == &t.adapted);
}

TEST_CASE("table validation: overlap and non-unit prototypes are rejected") {
    PrototypeTable t = toy_table();
    t.validate();
    PrototypeTable bad = t;
    bad.unseen_ids = {2, 3};
    CHECK_THROWS_AS(bad.validate(), Error);
    PrototypeTable bad2 = t;
    bad2.prototypes[0].data[0] = 2.0;
    CHECK_THROWS_AS(bad2.validate(), Error);
}

TEST_CASE("tape forms agree with the plain forms") {
    Rng rng(17);
    Tensor p = Tensor::randn({5}, rng), mu = Tensor::randn({5}, rng);
    double np = p.norm2(), nm = mu.norm2();
    for (double& v : p.data) v /= np;
    for (double& v : mu.data) v /= nm;
    Tensor plain = adapt_seen(p, mu, 0.35);
    Tape t;
    const Tensor& taped =
        t.value(adapt_seen_var(t, t.leaf(p), t.leaf(mu), 0.35));
    for (size_t j = 0; j < 5; ++j)
        CHECK(taped.data[j] == doctest::Approx(plain.data[j]).epsilon(1e-12));
}
