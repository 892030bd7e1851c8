#include <doctest.h>

#include <cmath>

#include "lode/data.hpp"
#include "lode/loss.hpp"
#include "lode/rng.hpp"

using namespace lode;

namespace {

// surrogate evals straight from an analytic SDF; no network involved
template <typename T>
FieldEval<T> surrogate_eval(const Primitive& prim, const Vec3& x) {
    FieldEval<T> ev;
    ev.value = T(prim.sdf(x));
    Vec3 n = prim.normal(x);
    ev.spatial_grad = {T(n.x), T(n.y), T(n.z)};
    return ev;
}

} // namespace

TEST_SUITE_BEGIN("loss");

TEST_CASE("psi: extremes and the alpha=100 reference value") {
    CHECK(psi(0.0, 100.0) == doctest::Approx(1.0));
    CHECK(psi(1000.0, 100.0) == doctest::Approx(0.0));
    CHECK(psi(-1000.0, 100.0) == doctest::Approx(0.0));
    CHECK(psi(0.01, 100.0) == doctest::Approx(0.36787944117144233).epsilon(1e-12));
    CHECK(psi(-0.01, 100.0) == doctest::Approx(0.36787944117144233).epsilon(1e-12));
}

TEST_CASE("lode_loss: exact sphere SDF surrogate is near zero on the first three terms") {
    Primitive sphere;
    sphere.shape = Shape::Sphere;
    sphere.center = {6.0, 0.0, 0.5};
    sphere.size = {2.0, 0, 0};
    GridConfig box = desk_grid();
    Rng rng(77);
    SampleBatch batch;
    std::vector<FieldEval<double>> evals;
    for (int i = 0; i < 200; ++i) {
        Vec3 n;
        Vec3 p = detail::sample_primitive_surface(sphere, box, rng, &n);
        if (!box.contains(p)) continue;
        batch.on_surface.push_back(p);
        batch.on_normals.push_back(n);
        evals.push_back(surrogate_eval<double>(sphere, p));
    }
    REQUIRE(batch.on_surface.size() > 50);
    for (int i = 0; i < 100; ++i) {
        Vec3 e = box.extent();
        Vec3 p{box.origin.x + rng.uniform() * e.x, box.origin.y + rng.uniform() * e.y,
               box.origin.z + rng.uniform() * e.z};
        if (std::abs(sphere.sdf(p)) < 0.15) continue;   // keep genuinely off-surface
        batch.off_surface.push_back(p);
        evals.push_back(surrogate_eval<double>(sphere, p));
    }
    LossWeights w;
    LossBreakdown b = lode_loss(evals, batch, w);
    CHECK(b.eikonal <= 1e-3);
    CHECK(b.normal <= 1e-3);
    CHECK(b.surface <= 1e-3);
}

TEST_CASE("lode_loss: constant far field with zero gradient") {
    SampleBatch batch;
    batch.on_surface = {{1, 1, 1}};
    batch.on_normals = {{0, 0, 1}};
    batch.off_surface = {{2, 2, 1}};
    std::vector<FieldEval<double>> evals(2);
    evals[0].value = 10.0;
    evals[1].value = 10.0;
    LossWeights w;
    LossBreakdown b = lode_loss(evals, batch, w);
    CHECK(b.eikonal == doctest::Approx(1.0));             // |0 - 1|
    CHECK(b.normal == doctest::Approx(1.0));              // zero gradient: maximal penalty
    CHECK(b.off_surface == doctest::Approx(psi(10.0, w.psi_alpha)));
    CHECK(b.off_surface <= 1e-10);
}

TEST_CASE("lode_loss: three hand-picked points reproduce the hand-computed breakdown") {
    SampleBatch batch;
    batch.on_surface = {{1, 1, 1}, {2, 2, 1}};
    batch.on_normals = {{0, 0, 1}, {0, 1, 0}};
    batch.off_surface = {{3, 3, 1}};
    std::vector<FieldEval<double>> evals(3);
    evals[0].value = 0.5;
    evals[0].spatial_grad = {0, 0, 2};
    evals[1].value = -0.25;
    evals[1].spatial_grad = {1, 0, 0};
    evals[2].value = 0.01;
    evals[2].spatial_grad = {0, 0, 0};
    LossWeights w;
    LossBreakdown b = lode_loss(evals, batch, w);
    CHECK(b.eikonal == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(b.normal == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(b.surface == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(b.off_surface == doctest::Approx(0.36787944117144233).epsilon(1e-10));
    CHECK(b.total == doctest::Approx(2105.893972058572).epsilon(1e-10));
    // recombination identity
    CHECK(b.total == doctest::Approx(w.lambda1 * b.eikonal + w.lambda2 * b.normal +
                                     w.lambda3 * b.surface + w.lambda4 * b.off_surface));
}

TEST_CASE("lode_loss: empty on-surface set raises; permutation invariance") {
    SampleBatch bad;
    bad.off_surface = {{1, 1, 1}};
    std::vector<FieldEval<double>> evals(1);
    CHECK_THROWS_AS(lode_loss(evals, bad, LossWeights{}), std::invalid_argument);

    Rng rng(13);
    SampleBatch batch;
    std::vector<FieldEval<double>> ev;
    for (int i = 0; i < 20; ++i) {
        batch.on_surface.push_back({rng.uniform(0, 12), rng.uniform(-6, 6), rng.uniform(-0.9, 2)});
        batch.on_normals.push_back(normalized({rng.normal(), rng.normal(), rng.normal()}));
        FieldEval<double> e;
        e.value = rng.uniform(-1, 1);
        e.spatial_grad = {rng.normal(), rng.normal(), rng.normal()};
        ev.push_back(e);
    }
    LossWeights w;
    LossBreakdown b1 = lode_loss(ev, batch, w);
    // permute the on-surface block
    std::vector<size_t> perm{5, 3, 19, 0, 7, 12, 1, 18, 2, 9, 4, 6, 8, 10, 11, 13, 14, 15, 16, 17};
    SampleBatch batch2;
    std::vector<FieldEval<double>> ev2;
    for (size_t i : perm) {
        batch2.on_surface.push_back(batch.on_surface[i]);
        batch2.on_normals.push_back(batch.on_normals[i]);
        ev2.push_back(ev[i]);
    }
    LossBreakdown b2 = lode_loss(ev2, batch2, w);
    CHECK(b1.total == doctest::Approx(b2.total).epsilon(1e-12));
}

TEST_CASE("semantic_loss: margins, uniform, hand case") {
    std::vector<std::vector<double>> big{{50, 0, 0}, {0, 50, 0}};
    CHECK(semantic_loss(big, {0, 1}) <= 1e-3);

    std::vector<std::vector<double>> uniform{{0, 0, 0, 0}};
    CHECK(semantic_loss(uniform, {2}) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // hand case: logits (2,0,-1) label 0 and (0,0,0) label 2
    std::vector<std::vector<double>> logits{{2, 0, -1}, {0, 0, 0}};
    double ce1 = std::log(std::exp(2.0) + 1.0 + std::exp(-1.0)) - 2.0;
    CHECK(semantic_loss(logits, {0, 2}) ==
          doctest::Approx(0.5 * (ce1 + std::log(3.0))).epsilon(1e-9));
    CHECK(semantic_loss(logits, {0, 2}) == doctest::Approx(0.634226).epsilon(1e-4));

    CHECK_THROWS_AS(semantic_loss(logits, {0, 5}), std::invalid_argument);
}

TEST_CASE("baseline_loss: same formulas, sparse-input domains") {
    SampleBatch batch;
    batch.on_surface = {{1, 1, 1}, {2, 2, 1}};
    batch.on_normals = {{0, 0, 1}, {0, 1, 0}};
    batch.off_surface = {{3, 3, 1}};
    std::vector<FieldEval<double>> evals(3);
    evals[0].value = 0.5;
    evals[0].spatial_grad = {0, 0, 2};
    evals[1].value = -0.25;
    evals[1].spatial_grad = {1, 0, 0};
    evals[2].value = 0.01;
    LossWeights w;
    CHECK(baseline_loss(evals, batch, w).total ==
          doctest::Approx(lode_loss(evals, batch, w).total).epsilon(1e-15));
}

TEST_CASE("loss components are non-negative; normal term bounded by 2") {
    Rng rng(99);
    for (int t = 0; t < 30; ++t) {
        SampleBatch batch;
        std::vector<FieldEval<double>> ev;
        for (int i = 0; i < 8; ++i) {
            batch.on_surface.push_back({rng.uniform(0, 12), rng.uniform(-6, 6), rng.uniform(-0.9, 2)});
            batch.on_normals.push_back(normalized({rng.normal(), rng.normal(), rng.normal()}));
            FieldEval<double> e;
            e.value = rng.uniform(-2, 2);
            e.spatial_grad = {rng.normal(), rng.normal(), rng.normal()};
            ev.push_back(e);
        }
        for (int i = 0; i < 4; ++i) {
            batch.off_surface.push_back({rng.uniform(0, 12), rng.uniform(-6, 6), rng.uniform(-0.9, 2)});
            FieldEval<double> e;
            e.value = rng.uniform(-2, 2);
            e.spatial_grad = {rng.normal(), rng.normal(), rng.normal()};
            ev.push_back(e);
        }
        LossBreakdown b = lode_loss(ev, batch, LossWeights{});
        CHECK(b.eikonal >= 0.0);
        CHECK(b.normal >= 0.0);
        CHECK(b.normal <= 2.0 + 1e-12);
        CHECK(b.surface >= 0.0);
        CHECK(b.off_surface >= 0.0);
    }
}

TEST_SUITE_END();
