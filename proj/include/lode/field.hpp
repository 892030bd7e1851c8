#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "lode/core.hpp"
#include "lode/rng.hpp"
#include "lode/sparse.hpp"
#include "lode/tensor.hpp"

namespace lode {

struct PositionalEncodingConfig {
    bool enabled = true;
    int levels = 10;          // L frequency octaves
    bool include_xyz = false;

    // width of the encoded coordinate block fed to the MLPs
    int width() const { return enabled ? 6 * levels + (include_xyz ? 3 : 0) : 3; }
};

// Multi-frequency sinusoid encoding of a coordinate already normalized to
// [-1,1]^3. Layout: [raw xyz when include_xyz] then per component
// (sin 2^0 pi p, cos 2^0 pi p, ..., sin 2^{L-1} pi p, cos 2^{L-1} pi p).
inline void positional_encode(const Vec3& x, const PositionalEncodingConfig& cfg, double* out) {
    if (!cfg.enabled) {
        out[0] = x.x;
        out[1] = x.y;
        out[2] = x.z;
        return;
    }
    int n = 0;
    if (cfg.include_xyz) {
        out[n++] = x.x;
        out[n++] = x.y;
        out[n++] = x.z;
    }
    constexpr double pi = 3.14159265358979323846;
    for (int axis = 0; axis < 3; ++axis) {
        double p = x[axis];
        double f = pi;
        for (int l = 0; l < cfg.levels; ++l) {
            out[n++] = std::sin(f * p);
            out[n++] = std::cos(f * p);
            f *= 2.0;
        }
    }
}

// Encoding plus its Jacobian w.r.t. the *metric* point (per-axis chain factor
// `scale` = d(normalized)/d(meters)). jac is width() x 3 row-major.
inline void positional_encode_jac(const Vec3& x, const PositionalEncodingConfig& cfg,
                                  const Vec3& scale, double* out, double* jac) {
    int w = cfg.width();
    std::fill(jac, jac + size_t(w) * 3, 0.0);
    if (!cfg.enabled) {
        out[0] = x.x;
        out[1] = x.y;
        out[2] = x.z;
        jac[0 * 3 + 0] = scale.x;
        jac[1 * 3 + 1] = scale.y;
        jac[2 * 3 + 2] = scale.z;
        return;
    }
    int n = 0;
    if (cfg.include_xyz) {
        for (int axis = 0; axis < 3; ++axis) {
            out[n] = x[axis];
            jac[size_t(n) * 3 + axis] = scale[axis];
            ++n;
        }
    }
    constexpr double pi = 3.14159265358979323846;
    for (int axis = 0; axis < 3; ++axis) {
        double p = x[axis];
        double f = pi;
        for (int l = 0; l < cfg.levels; ++l) {
            double s = std::sin(f * p), c = std::cos(f * p);
            out[n] = s;
            jac[size_t(n) * 3 + axis] = f * c * scale[axis];
            ++n;
            out[n] = c;
            jac[size_t(n) * 3 + axis] = -f * s * scale[axis];
            ++n;
            f *= 2.0;
        }
    }
}

enum class Activation { Sine, Relu };

// Plain fully connected stack: hidden layers apply the activation, the final
// layer is affine. For sine nets the first layer's pre-activation is scaled
// by omega0.
template <typename T>
struct MlpParameters {
    struct Layer {
        Matrix<T> W;          // out x in
        std::vector<T> b;     // out
    };
    std::vector<Layer> layers;
    Activation activation = Activation::Sine;
    T omega0 = T(30);

    int input_width() const { return layers.empty() ? 0 : layers.front().W.cols; }
    int output_width() const { return layers.empty() ? 0 : layers.back().W.rows; }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("mlp: no layers");
        for (size_t j = 1; j < layers.size(); ++j)
            if (layers[j].W.cols != layers[j - 1].W.rows)
                throw std::invalid_argument("mlp: layer dimensions do not chain");
        for (const auto& l : layers)
            if (int(l.b.size()) != l.W.rows) throw std::invalid_argument("mlp: bias width");
    }
};

// Sine-net initialization: first layer U(+-1/fan_in), deeper layers
// U(+-sqrt(6/fan_in)); omega0 is applied in the forward pass of the first
// layer only. Relu nets use U(+-sqrt(6/fan_in)) throughout.
template <typename T>
MlpParameters<T> make_mlp(int in_width, int hidden_width, int hidden_layers, int out_width,
                          Activation act, Rng& rng, T omega0 = T(30)) {
    MlpParameters<T> mlp;
    mlp.activation = act;
    mlp.omega0 = omega0;
    int prev = in_width;
    for (int j = 0; j < hidden_layers + 1; ++j) {
        int width = j == hidden_layers ? out_width : hidden_width;
        typename MlpParameters<T>::Layer layer;
        layer.W = Matrix<T>(width, prev);
        layer.b.assign(width, T(0));
        double bound;
        if (act == Activation::Sine && j == 0) bound = 1.0 / prev;
        else bound = std::sqrt(6.0 / prev);
        for (auto& w : layer.W.d) w = T(rng.uniform(-bound, bound));
        for (auto& b : layer.b) b = T(rng.uniform(-bound, bound));
        mlp.layers.push_back(std::move(layer));
        prev = width;
    }
    return mlp;
}

template <typename T>
void mlp_forward(const MlpParameters<T>& mlp, const T* input, T* output) {
    mlp.validate();
    std::vector<T> a(input, input + mlp.input_width()), next;
    for (size_t j = 0; j < mlp.layers.size(); ++j) {
        const auto& l = mlp.layers[j];
        next.assign(l.W.rows, T(0));
        for (int r = 0; r < l.W.rows; ++r)
            next[r] = l.b[r] + dot_n(l.W.cols, l.W.row(r), a.data());
        if (j + 1 < mlp.layers.size()) {
            T om = (j == 0 && mlp.activation == Activation::Sine) ? mlp.omega0 : T(1);
            for (auto& v : next)
                v = mlp.activation == Activation::Sine ? std::sin(om * v) : std::max(T(0), v);
        }
        a.swap(next);
    }
    std::copy(a.begin(), a.end(), output);
}

enum class GradMode { Partial, Total };
enum class SampleMode { Trilinear, Nearest };

// The conditioned implicit field: shape-embedding volume + positional
// encoding + sine MLP head(s). v_se may be empty (unconditioned baselines).
template <typename T>
struct ImplicitField {
    SparseTensor<T> v_se;      // stride = scale_size, channels = d_se
    GridConfig grid;
    PositionalEncodingConfig pe;
    MlpParameters<T> sdf_mlp;
    std::optional<MlpParameters<T>> semantic_mlp;
    GradMode grad_mode = GradMode::Total;
    SampleMode sample_mode = SampleMode::Trilinear;

    int d_se() const { return v_se.channels; }
    int input_width() const { return pe.width() + d_se(); }

    void validate() const {
        sdf_mlp.validate();
        if (sdf_mlp.input_width() != input_width())
            throw std::invalid_argument("field: sdf mlp input width mismatch");
        if (sdf_mlp.layers.back().W.rows != 1)
            throw std::invalid_argument("field: sdf head must be scalar");
        if (semantic_mlp) {
            semantic_mlp->validate();
            if (semantic_mlp->input_width() != input_width())
                throw std::invalid_argument("field: semantic mlp input width mismatch");
        }
    }
};

template <typename T>
struct FieldEval {
    T value = T(0);
    std::array<T, 3> spatial_grad{T(0), T(0), T(0)};
    std::vector<T> embedding;
    std::vector<T> semantic_logits;
};

// One trilinear sampling stencil: the 8 enclosing embedding-grid voxel
// centers with weights, weight gradients (per meter), and tensor rows
// (-1 where the voxel is absent and samples as zero).
struct TrilinearStencil {
    std::array<int, 8> row;
    std::array<double, 8> weight;
    std::array<std::array<double, 3>, 8> dweight_dx;
    int nearest_row = -1;
};

template <typename T>
TrilinearStencil trilinear_stencil(const SparseTensor<T>& v_se, const GridConfig& grid,
                                   const Vec3& x) {
    if (!grid.contains(x)) throw std::out_of_range("trilinear: point outside scene box");
    double h = grid.voxel_edge * v_se.stride;   // embedding-grid edge, meters
    TrilinearStencil st;
    double u[3], fr[3];
    int i0[3];
    for (int a = 0; a < 3; ++a) {
        u[a] = (x[a] - grid.origin[a]) / h - 0.5;
        i0[a] = int(std::floor(u[a]));
        fr[a] = u[a] - i0[a];
    }
    int nearest[3];
    for (int a = 0; a < 3; ++a) nearest[a] = fr[a] < 0.5 ? i0[a] : i0[a] + 1;
    st.nearest_row = v_se.find({nearest[0] * v_se.stride, nearest[1] * v_se.stride,
                                nearest[2] * v_se.stride});
    int n = 0;
    for (int dx = 0; dx < 2; ++dx)
        for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz, ++n) {
                double wx = dx ? fr[0] : 1.0 - fr[0];
                double wy = dy ? fr[1] : 1.0 - fr[1];
                double wz = dz ? fr[2] : 1.0 - fr[2];
                double gx = (dx ? 1.0 : -1.0) / h;
                double gy = (dy ? 1.0 : -1.0) / h;
                double gz = (dz ? 1.0 : -1.0) / h;
                st.weight[n] = wx * wy * wz;
                st.dweight_dx[n] = {gx * wy * wz, wx * gy * wz, wx * wy * gz};
                Coord c{(i0[0] + dx) * v_se.stride, (i0[1] + dy) * v_se.stride,
                        (i0[2] + dz) * v_se.stride};
                st.row[n] = v_se.find(c);
            }
    return st;
}

// e(x): channel-wise trilinear interpolation of the 8 enclosing embedding
// voxel centers, distances in embedding-grid units. Pruned/missing voxels
// sample as zero.
template <typename T>
std::vector<T> trilinear_sample(const SparseTensor<T>& v_se, const GridConfig& grid,
                                const Vec3& x) {
    TrilinearStencil st = trilinear_stencil(v_se, grid, x);
    std::vector<T> e(v_se.channels, T(0));
    for (int n = 0; n < 8; ++n) {
        if (st.row[n] < 0) continue;
        const T* f = v_se.feats.row(st.row[n]);
        axpy(v_se.channels, T(st.weight[n]), f, e.data());
    }
    return e;
}

// Gradient of trilinear_sample w.r.t. the embedding rows: upstream scaled by
// each neighbor's weight. Returned as (row, per-channel grad) pairs for the
// present neighbors.
template <typename T>
std::vector<std::pair<int, std::vector<T>>> trilinear_backprop(const SparseTensor<T>& v_se,
                                                               const GridConfig& grid,
                                                               const Vec3& x,
                                                               const std::vector<T>& upstream) {
    if (int(upstream.size()) != v_se.channels)
        throw std::invalid_argument("trilinear_backprop: upstream width mismatch");
    TrilinearStencil st = trilinear_stencil(v_se, grid, x);
    std::vector<std::pair<int, std::vector<T>>> grads;
    for (int n = 0; n < 8; ++n) {
        if (st.row[n] < 0) continue;
        std::vector<T> g(v_se.channels);
        for (int c = 0; c < v_se.channels; ++c) g[c] = upstream[c] * T(st.weight[n]);
        grads.emplace_back(st.row[n], std::move(g));
    }
    return grads;
}

namespace detail {

// Assembled MLP input [pe block | embedding block] and its Jacobian w.r.t.
// the metric query point.
template <typename T>
struct FieldInput {
    std::vector<T> x;          // input_width
    std::vector<T> jac;        // input_width x 3, row-major
    TrilinearStencil stencil;  // for routing gradients back to v_se rows
};

template <typename T>
FieldInput<T> build_field_input(const ImplicitField<T>& f, const Vec3& x) {
    const int pw = f.pe.width();
    const int dse = f.d_se();
    FieldInput<T> in;
    in.x.assign(pw + dse, T(0));
    in.jac.assign(size_t(pw + dse) * 3, T(0));

    Vec3 xn = normalize_coords(x, f.grid);
    Vec3 scale = normalize_scale(f.grid);
    std::vector<double> pe(pw), pj(size_t(pw) * 3);
    positional_encode_jac(xn, f.pe, scale, pe.data(), pj.data());
    for (int i = 0; i < pw; ++i) {
        in.x[i] = T(pe[i]);
        for (int d = 0; d < 3; ++d) in.jac[size_t(i) * 3 + d] = T(pj[size_t(i) * 3 + d]);
    }
    if (dse > 0) {
        in.stencil = trilinear_stencil(f.v_se, f.grid, x);
        if (f.sample_mode == SampleMode::Trilinear) {
            for (int n = 0; n < 8; ++n) {
                if (in.stencil.row[n] < 0) continue;
                const T* e = f.v_se.feats.row(in.stencil.row[n]);
                T w = T(in.stencil.weight[n]);
                for (int c = 0; c < dse; ++c) in.x[pw + c] += w * e[c];
                if (f.grad_mode == GradMode::Total) {
                    for (int d = 0; d < 3; ++d) {
                        T gw = T(in.stencil.dweight_dx[n][d]);
                        for (int c = 0; c < dse; ++c)
                            in.jac[size_t(pw + c) * 3 + d] += gw * e[c];
                    }
                }
            }
        } else {
            // nearest-voxel ablation; piecewise constant, zero Jacobian
            if (in.stencil.nearest_row >= 0) {
                const T* e = f.v_se.feats.row(in.stencil.nearest_row);
                for (int c = 0; c < dse; ++c) in.x[pw + c] = e[c];
            }
        }
    } else {
        in.stencil.row.fill(-1);
        in.stencil.nearest_row = -1;
    }
    return in;
}

} // namespace detail

// Value, exact metric-space gradient (forward-mode through encoding, sampling
// and MLP), sampled embedding, and semantic logits when the head is present.
template <typename T>
FieldEval<T> field_eval(const ImplicitField<T>& f, const Vec3& x) {
    f.validate();
    if (!f.grid.contains(x)) throw std::out_of_range("field_eval: point outside scene box");
    detail::FieldInput<T> in = detail::build_field_input(f, x);

    const int w0 = int(in.x.size());
    std::vector<T> a = in.x;
    std::array<std::vector<T>, 3> t;
    for (int d = 0; d < 3; ++d) {
        t[d].assign(w0, T(0));
        for (int i = 0; i < w0; ++i) t[d][i] = in.jac[size_t(i) * 3 + d];
    }

    const auto& layers = f.sdf_mlp.layers;
    std::vector<T> z, tz;
    for (size_t j = 0; j < layers.size(); ++j) {
        const auto& l = layers[j];
        const bool last = j + 1 == layers.size();
        T om = (j == 0 && f.sdf_mlp.activation == Activation::Sine) ? f.sdf_mlp.omega0 : T(1);
        z.assign(l.W.rows, T(0));
        for (int r = 0; r < l.W.rows; ++r) z[r] = l.b[r] + dot_n(l.W.cols, l.W.row(r), a.data());
        std::array<std::vector<T>, 3> tnext;
        for (int d = 0; d < 3; ++d) {
            tnext[d].assign(l.W.rows, T(0));
            for (int r = 0; r < l.W.rows; ++r)
                tnext[d][r] = dot_n(l.W.cols, l.W.row(r), t[d].data());
        }
        if (!last) {
            if (f.sdf_mlp.activation == Activation::Sine) {
                for (int r = 0; r < l.W.rows; ++r) {
                    T u = om * z[r];
                    T c = std::cos(u);
                    z[r] = std::sin(u);
                    for (int d = 0; d < 3; ++d) tnext[d][r] *= om * c;
                }
            } else {
                for (int r = 0; r < l.W.rows; ++r) {
                    T mask = z[r] > T(0) ? T(1) : T(0);
                    z[r] = std::max(T(0), z[r]);
                    for (int d = 0; d < 3; ++d) tnext[d][r] *= mask;
                }
            }
        }
        a.swap(z);
        for (int d = 0; d < 3; ++d) t[d].swap(tnext[d]);
    }

    FieldEval<T> ev;
    ev.value = a[0];
    for (int d = 0; d < 3; ++d) ev.spatial_grad[d] = t[d][0];
    if (!std::isfinite(double(ev.value)) || !std::isfinite(double(ev.spatial_grad[0])) ||
        !std::isfinite(double(ev.spatial_grad[1])) || !std::isfinite(double(ev.spatial_grad[2])))
        throw std::runtime_error("field_eval: non-finite evaluation");

    ev.embedding.assign(in.x.begin() + f.pe.width(), in.x.end());
    if (f.semantic_mlp) {
        ev.semantic_logits.assign(f.semantic_mlp->layers.back().W.rows, T(0));
        mlp_forward(*f.semantic_mlp, in.x.data(), ev.semantic_logits.data());
    }
    return ev;
}

// Value-only path used by dense grid sweeps; skips tangent propagation.
template <typename T>
T field_value(const ImplicitField<T>& f, const Vec3& x) {
    detail::FieldInput<T> in = detail::build_field_input(f, x);
    T out;
    mlp_forward(f.sdf_mlp, in.x.data(), &out);
    return out;
}

template <typename T>
std::vector<T> semantic_eval(const ImplicitField<T>& f, const Vec3& x) {
    if (!f.semantic_mlp) throw std::logic_error("semantic_eval: no semantic head");
    detail::FieldInput<T> in = detail::build_field_input(f, x);
    std::vector<T> logits(f.semantic_mlp->layers.back().W.rows);
    mlp_forward(*f.semantic_mlp, in.x.data(), logits.data());
    return logits;
}

} // namespace lode
