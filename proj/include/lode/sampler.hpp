#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "lode/core.hpp"
#include "lode/knn.hpp"
#include "lode/loss.hpp"
#include "lode/rng.hpp"

namespace lode {

struct SamplerConfig {
    int n_on = 16000;
    int n_off = 16000;
    uint64_t seed = 0;
    int normal_k = 16;
    double reject_radius = 0.0;   // meters; 0 disables near-surface rejection

    void validate() const {
        if (n_on < 1 || n_off < 1) throw std::invalid_argument("sampler: n_on/n_off >= 1");
    }
};

namespace detail {

// Jacobi eigendecomposition of a symmetric 3x3 matrix; ascending eigenvalues.
inline void eig_sym3(const double a_in[3][3], double eval[3], double evec[3][3]) {
    double a[3][3];
    double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a[i][j] = a_in[i][j];
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = std::abs(a[0][1]) + std::abs(a[0][2]) + std::abs(a[1][2]);
        if (off < 1e-15) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::abs(a[p][q]) < 1e-18) continue;
                double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                for (int k = 0; k < 3; ++k) {
                    double akp = a[k][p], akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for (int k = 0; k < 3; ++k) {
                    double apk = a[p][k], aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for (int k = 0; k < 3; ++k) {
                    double vkp = v[k][p], vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
    }
    int order[3] = {0, 1, 2};
    double d[3] = {a[0][0], a[1][1], a[2][2]};
    for (int i = 0; i < 2; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (d[order[j]] < d[order[i]]) std::swap(order[i], order[j]);
    for (int i = 0; i < 3; ++i) {
        eval[i] = d[order[i]];
        for (int k = 0; k < 3; ++k) evec[k][i] = v[k][order[i]];
    }
}

} // namespace detail

// PCA normals from the k nearest neighbors, oriented toward
// `orientation_point` (the sensor origin). Points with a degenerate
// (rank < 2) neighborhood are dropped from the result so that the returned
// cloud carries only valid unit normals.
inline PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& orientation_point) {
    if (int(cloud.size()) < k + 1)
        throw std::invalid_argument("estimate_normals: cloud smaller than k+1");
    KnnIndex index(cloud.points);
    PointCloud out;
    out.points.reserve(cloud.size());
    out.normals.reserve(cloud.size());
    if (cloud.has_labels()) out.labels.reserve(cloud.size());
    for (size_t i = 0; i < cloud.size(); ++i) {
        std::vector<int> nb = index.knn(cloud.points[i], k + 1);   // includes the point itself
        Vec3 mean{0, 0, 0};
        for (int j : nb) mean += cloud.points[j];
        mean = mean / double(nb.size());
        double cov[3][3] = {{0, 0, 0}, {0, 0, 0}, {0, 0, 0}};
        for (int j : nb) {
            Vec3 d = cloud.points[j] - mean;
            double dd[3] = {d.x, d.y, d.z};
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) cov[r][c] += dd[r] * dd[c];
        }
        double eval[3], evec[3][3];
        detail::eig_sym3(cov, eval, evec);
        if (!(eval[1] > 1e-12 * std::max(eval[2], 1e-300))) continue;   // rank < 2
        Vec3 n{evec[0][0], evec[1][0], evec[2][0]};
        n = normalized(n);
        if (dot(n, orientation_point - cloud.points[i]) < 0.0) n = -n;
        out.points.push_back(cloud.points[i]);
        out.normals.push_back(n);
        if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

// Draws the per-step sample domains: n_on on-surface points (with replacement,
// carrying normals and labels) and n_off uniform box points, optionally
// rejecting off-surface samples within reject_radius of the surface.
inline SampleBatch sample_batch(const PointCloud& gt, const GridConfig& box,
                                const SamplerConfig& cfg, bool labels_available) {
    cfg.validate();
    if (gt.points.empty()) throw std::invalid_argument("sample_batch: empty ground truth");
    if (!gt.has_normals()) throw std::invalid_argument("sample_batch: ground truth needs normals");
    const bool with_labels = labels_available && gt.has_labels();

    std::vector<int> eligible;
    eligible.reserve(gt.size());
    for (size_t i = 0; i < gt.size(); ++i)
        if (box.contains(gt.points[i]) && norm(gt.normals[i]) > 0.5) eligible.push_back(int(i));
    if (eligible.empty()) throw std::invalid_argument("sample_batch: no usable surface points");

    Rng rng(cfg.seed);
    SampleBatch batch;
    batch.on_surface.reserve(cfg.n_on);
    batch.on_normals.reserve(cfg.n_on);
    for (int i = 0; i < cfg.n_on; ++i) {
        int idx = eligible[rng.below(eligible.size())];
        batch.on_surface.push_back(gt.points[idx]);
        batch.on_normals.push_back(gt.normals[idx]);
        if (with_labels) {
            batch.labeled.push_back(gt.points[idx]);
            batch.labels.push_back(gt.labels[idx]);
        }
    }

    std::unique_ptr<KnnIndex> index;
    if (cfg.reject_radius > 0.0) index = std::make_unique<KnnIndex>(gt.points);
    Vec3 e = box.extent();
    batch.off_surface.reserve(cfg.n_off);
    for (int i = 0; i < cfg.n_off; ++i) {
        for (int attempt = 0;; ++attempt) {
            Vec3 p{box.origin.x + rng.uniform() * e.x, box.origin.y + rng.uniform() * e.y,
                   box.origin.z + rng.uniform() * e.z};
            if (index && index->nearest_dist(p) < cfg.reject_radius) {
                if (attempt > 10000)
                    throw std::runtime_error("sample_batch: rejection radius leaves no free space");
                continue;
            }
            batch.off_surface.push_back(p);
            break;
        }
    }
    return batch;
}

} // namespace lode
