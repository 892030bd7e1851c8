#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "lode/field.hpp"

namespace lode {

struct LossWeights {
    double lambda1 = 3000.0;   // eikonal
    double lambda2 = 100.0;    // normal alignment
    double lambda3 = 100.0;    // on-surface value
    double lambda4 = 50.0;     // off-surface repulsion
    double lambda5 = 100.0;    // completion (pruning BCE)
    double lambda6 = 0.0;      // semantic cross entropy; 50 when enabled
    double psi_alpha = 100.0;

    void validate() const {
        for (double v : {lambda1, lambda2, lambda3, lambda4, lambda5, lambda6, psi_alpha})
            if (v < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    }
};

// Sample domains for one optimization step: on-surface points with normals,
// uniform off-surface points, and optionally labeled points for the semantic
// head. The eikonal residual is taken over the union of on and off points.
struct SampleBatch {
    std::vector<Vec3> on_surface;
    std::vector<Vec3> on_normals;
    std::vector<Vec3> off_surface;
    std::vector<Vec3> labeled;
    std::vector<int> labels;

    size_t eikonal_count() const { return on_surface.size() + off_surface.size(); }

    void validate(const GridConfig& box) const {
        if (on_normals.size() != on_surface.size())
            throw std::invalid_argument("batch: normals must pair with on-surface points");
        if (labels.size() != labeled.size())
            throw std::invalid_argument("batch: labels must pair with labeled points");
        for (const Vec3& n : on_normals)
            if (std::abs(norm(n) - 1.0) > 1e-6)
                throw std::invalid_argument("batch: normals must be unit length");
        auto inside = [&](const std::vector<Vec3>& pts) {
            for (const Vec3& p : pts)
                if (!box.contains(p)) throw std::invalid_argument("batch: point outside box");
        };
        inside(on_surface);
        inside(off_surface);
        inside(labeled);
    }
};

// Unweighted per-term means plus the weighted total; the recombination
// identity total = sum(lambda_i * term_i) holds exactly.
struct LossBreakdown {
    double eikonal = 0.0;
    double normal = 0.0;
    double surface = 0.0;
    double off_surface = 0.0;
    double completion = 0.0;
    double semantic = 0.0;
    double total = 0.0;

    void recombine(const LossWeights& w) {
        total = w.lambda1 * eikonal + w.lambda2 * normal + w.lambda3 * surface +
                w.lambda4 * off_surface + w.lambda5 * completion + w.lambda6 * semantic;
    }
};

// Off-surface repulsion: exp(-alpha * |value|), maximal at the zero level
// set, vanishing far from it.
inline double psi(double value, double alpha) { return std::exp(-alpha * std::abs(value)); }

namespace detail {

constexpr double kCosEps = 1e-8;

template <typename T>
inline double grad_norm(const FieldEval<T>& ev) {
    double gx = double(ev.spatial_grad[0]);
    double gy = double(ev.spatial_grad[1]);
    double gz = double(ev.spatial_grad[2]);
    return std::sqrt(gx * gx + gy * gy + gz * gz);
}

} // namespace detail

// The four geometric terms, Monte-Carlo means over their sample domains.
// `evals` carries on-surface evals first, then off-surface evals, aligned
// with the batch.
template <typename T>
LossBreakdown lode_loss(const std::vector<FieldEval<T>>& evals, const SampleBatch& batch,
                        const LossWeights& w) {
    w.validate();
    const size_t n_on = batch.on_surface.size();
    const size_t n_off = batch.off_surface.size();
    if (n_on == 0) throw std::invalid_argument("lode_loss: empty on-surface set");
    if (evals.size() != n_on + n_off)
        throw std::invalid_argument("lode_loss: evals not aligned with batch");

    LossBreakdown b;
    double eik = 0.0, nrm = 0.0, sur = 0.0, off = 0.0;
    for (size_t i = 0; i < n_on + n_off; ++i) {
        double g = detail::grad_norm(evals[i]);
        eik += std::abs(g - 1.0);
        if (i < n_on) {
            const Vec3& n = batch.on_normals[i];
            double d = double(evals[i].spatial_grad[0]) * n.x +
                       double(evals[i].spatial_grad[1]) * n.y +
                       double(evals[i].spatial_grad[2]) * n.z;
            double cosine = d / std::max(g * norm(n), detail::kCosEps);
            nrm += 1.0 - cosine;
            sur += std::abs(double(evals[i].value));
        } else {
            off += psi(double(evals[i].value), w.psi_alpha);
        }
    }
    b.eikonal = eik / double(n_on + n_off);
    b.normal = nrm / double(n_on);
    b.surface = sur / double(n_on);
    b.off_surface = n_off > 0 ? off / double(n_off) : 0.0;
    b.recombine(w);
    return b;
}

// Softmax cross entropy over labeled points; probabilities clamped at 1e-7
// inside the log.
template <typename T>
double semantic_loss(const std::vector<std::vector<T>>& logits, const std::vector<int>& labels) {
    if (logits.size() != labels.size() || logits.empty())
        throw std::invalid_argument("semantic_loss: logits/labels mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        const auto& lg = logits[i];
        if (labels[i] < 0 || labels[i] >= int(lg.size()))
            throw std::invalid_argument("semantic_loss: label out of range");
        double mx = double(lg[0]);
        for (T v : lg) mx = std::max(mx, double(v));
        double denom = 0.0;
        for (T v : lg) denom += std::exp(double(v) - mx);
        double p = std::exp(double(lg[labels[i]]) - mx) / denom;
        acc += -std::log(std::max(p, 1e-7));
    }
    return acc / double(labels.size());
}

// Unconditioned constraint set: identical four-term structure, with the
// sparse input standing in for the dense ground-truth domains. Baseline
// (SIREN / Fourier-feature) training paths call this.
template <typename T>
LossBreakdown baseline_loss(const std::vector<FieldEval<T>>& evals, const SampleBatch& batch,
                            const LossWeights& w) {
    return lode_loss(evals, batch, w);
}

} // namespace lode
