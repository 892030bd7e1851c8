#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "lode/loss.hpp"
#include "lode/parallel.hpp"

namespace lode {

template <typename T>
struct MlpGrads {
    std::vector<Matrix<T>> dW;
    std::vector<std::vector<T>> db;

    void init_like(const MlpParameters<T>& mlp) {
        dW.clear();
        db.clear();
        for (const auto& l : mlp.layers) {
            dW.emplace_back(l.W.rows, l.W.cols);
            db.emplace_back(l.b.size(), T(0));
        }
    }
    void add(const MlpGrads<T>& o) {
        for (size_t j = 0; j < dW.size(); ++j) {
            for (size_t i = 0; i < dW[j].d.size(); ++i) dW[j].d[i] += o.dW[j].d[i];
            for (size_t i = 0; i < db[j].size(); ++i) db[j][i] += o.db[j][i];
        }
    }
};

// Exact gradients of the weighted loss w.r.t. MLP parameters and the sampled
// embedding rows, plus the loss breakdown of the same batch.
template <typename T>
struct FieldGradients {
    MlpGrads<T> sdf;
    MlpGrads<T> semantic;
    Matrix<T> v_se;   // one row per v_se row, d_se columns
    LossBreakdown loss;
    bool finite = true;
};

namespace detail {

// Extended forward/backward state for one chunk of query points. The spatial
// gradient is produced by forward-mode tangents; reverse mode then runs over
// that extended graph, which is what makes d(loss(grad))/d(params) exact.
template <typename T>
struct MlpChunkTape {
    std::vector<Matrix<T>> A;                  // activations per layer, A[0] = input
    std::vector<Matrix<T>> C;                  // act'(omega*z) per hidden layer
    std::array<std::vector<Matrix<T>>, 3> Tg;  // tangents of A
    std::array<std::vector<Matrix<T>>, 3> U;   // pre-activation tangents W * Tg
};

template <typename T>
void extended_forward(const MlpParameters<T>& mlp, Matrix<T>&& input,
                      std::array<Matrix<T>, 3>&& tangent, bool with_tangent,
                      MlpChunkTape<T>& tape) {
    const int P = input.rows;
    const size_t L = mlp.layers.size();
    tape.A.resize(L + 1);
    tape.C.resize(L);
    tape.A[0] = std::move(input);
    if (with_tangent)
        for (int d = 0; d < 3; ++d) {
            tape.Tg[d].resize(L + 1);
            tape.U[d].resize(L);
            tape.Tg[d][0] = std::move(tangent[d]);
        }

    for (size_t j = 0; j < L; ++j) {
        const auto& l = mlp.layers[j];
        const bool last = j + 1 == L;
        const T om = (j == 0 && mlp.activation == Activation::Sine) ? mlp.omega0 : T(1);
        Matrix<T> z(P, l.W.rows);
        for (int i = 0; i < P; ++i) {
            const T* a = tape.A[j].row(i);
            T* zr = z.row(i);
            for (int r = 0; r < l.W.rows; ++r) zr[r] = l.b[r] + dot_n(l.W.cols, l.W.row(r), a);
        }
        if (with_tangent) {
            for (int d = 0; d < 3; ++d) {
                Matrix<T> u(P, l.W.rows);
                for (int i = 0; i < P; ++i) {
                    const T* t = tape.Tg[d][j].row(i);
                    T* ur = u.row(i);
                    for (int r = 0; r < l.W.rows; ++r) ur[r] = dot_n(l.W.cols, l.W.row(r), t);
                }
                tape.U[d][j] = std::move(u);
            }
        }
        if (!last) {
            Matrix<T> c(P, l.W.rows);
            if (mlp.activation == Activation::Sine) {
                for (size_t i = 0; i < z.d.size(); ++i) {
                    T u = om * z.d[i];
                    c.d[i] = std::cos(u);
                    z.d[i] = std::sin(u);
                }
            } else {
                for (size_t i = 0; i < z.d.size(); ++i) {
                    c.d[i] = z.d[i] > T(0) ? T(1) : T(0);
                    z.d[i] = std::max(T(0), z.d[i]);
                }
            }
            tape.C[j] = std::move(c);
            if (with_tangent)
                for (int d = 0; d < 3; ++d) {
                    Matrix<T>& t = tape.U[d][j];
                    Matrix<T> tn(P, l.W.rows);
                    for (size_t i = 0; i < tn.d.size(); ++i) tn.d[i] = om * tape.C[j].d[i] * t.d[i];
                    tape.Tg[d][j + 1] = std::move(tn);
                }
        } else {
            tape.C[j] = Matrix<T>();   // affine output layer
            if (with_tangent)
                for (int d = 0; d < 3; ++d) tape.Tg[d][j + 1] = tape.U[d][j];
        }
        tape.A[j + 1] = std::move(z);
    }
}

// Reverse sweep. out_bar/tan_bar seed the adjoints of the network output and
// of its spatial tangent; returns adjoints of A[0] and Tg[.][0].
template <typename T>
void extended_backward(const MlpParameters<T>& mlp, const MlpChunkTape<T>& tape,
                       const Matrix<T>& out_bar, const std::array<Matrix<T>, 3>* tan_bar,
                       MlpGrads<T>& grads, Matrix<T>& in_bar, std::array<Matrix<T>, 3>* tin_bar) {
    const size_t L = mlp.layers.size();
    const int P = out_bar.rows;
    const bool with_tangent = tan_bar != nullptr;

    Matrix<T> abar = out_bar;
    std::array<Matrix<T>, 3> tbar;
    if (with_tangent) tbar = *tan_bar;

    for (size_t jj = L; jj-- > 0;) {
        const auto& l = mlp.layers[jj];
        const bool last = jj + 1 == L;
        const T om = (jj == 0 && mlp.activation == Activation::Sine) ? mlp.omega0 : T(1);
        const int N = l.W.rows, M = l.W.cols;

        // adjoint of pre-activation z and of pre-activation tangents U
        Matrix<T> zbar(P, N);
        std::array<Matrix<T>, 3> ubar;
        if (last) {
            zbar = abar;
            if (with_tangent)
                for (int d = 0; d < 3; ++d) ubar[d] = tbar[d];
        } else {
            const Matrix<T>& c = tape.C[jj];
            const Matrix<T>& s = tape.A[jj + 1];   // sin(om*z) for sine nets
            if (mlp.activation == Activation::Sine) {
                for (size_t i = 0; i < zbar.d.size(); ++i) zbar.d[i] = om * abar.d[i] * c.d[i];
                if (with_tangent) {
                    for (int d = 0; d < 3; ++d) {
                        const Matrix<T>& u = tape.U[d][jj];
                        ubar[d] = Matrix<T>(P, N);
                        for (size_t i = 0; i < zbar.d.size(); ++i) {
                            ubar[d].d[i] = om * tbar[d].d[i] * c.d[i];
                            zbar.d[i] -= om * om * tbar[d].d[i] * u.d[i] * s.d[i];
                        }
                    }
                }
            } else {
                for (size_t i = 0; i < zbar.d.size(); ++i) zbar.d[i] = abar.d[i] * c.d[i];
                if (with_tangent)
                    for (int d = 0; d < 3; ++d) {
                        ubar[d] = Matrix<T>(P, N);
                        for (size_t i = 0; i < zbar.d.size(); ++i)
                            ubar[d].d[i] = tbar[d].d[i] * c.d[i];
                    }
            }
        }

        // parameter gradients
        Matrix<T>& dW = grads.dW[jj];
        std::vector<T>& db = grads.db[jj];
        for (int i = 0; i < P; ++i) {
            const T* a = tape.A[jj].row(i);
            const T* zb = zbar.row(i);
            for (int r = 0; r < N; ++r) {
                if (zb[r] != T(0)) axpy(M, zb[r], a, dW.row(r));
                db[r] += zb[r];
            }
            if (with_tangent) {
                for (int d = 0; d < 3; ++d) {
                    const T* t = tape.Tg[d][jj].row(i);
                    const T* ub = ubar[d].row(i);
                    for (int r = 0; r < N; ++r)
                        if (ub[r] != T(0)) axpy(M, ub[r], t, dW.row(r));
                }
            }
        }

        // propagate to previous layer
        Matrix<T> abar_prev(P, M);
        std::array<Matrix<T>, 3> tbar_prev;
        for (int i = 0; i < P; ++i) {
            const T* zb = zbar.row(i);
            T* out = abar_prev.row(i);
            for (int r = 0; r < N; ++r)
                if (zb[r] != T(0)) axpy(M, zb[r], l.W.row(r), out);
        }
        if (with_tangent) {
            for (int d = 0; d < 3; ++d) {
                tbar_prev[d] = Matrix<T>(P, M);
                for (int i = 0; i < P; ++i) {
                    const T* ub = ubar[d].row(i);
                    T* out = tbar_prev[d].row(i);
                    for (int r = 0; r < N; ++r)
                        if (ub[r] != T(0)) axpy(M, ub[r], l.W.row(r), out);
                }
            }
        }
        abar = std::move(abar_prev);
        if (with_tangent)
            for (int d = 0; d < 3; ++d) tbar[d] = std::move(tbar_prev[d]);
    }
    in_bar = std::move(abar);
    if (with_tangent && tin_bar)
        for (int d = 0; d < 3; ++d) (*tin_bar)[d] = std::move(tbar[d]);
}

} // namespace detail

// Reverse-mode gradients of
//   lambda1*eikonal + lambda2*normal + lambda3*surface + lambda4*off_surface
//   (+ lambda6*semantic when the head and labels are present)
// w.r.t. sdf/semantic MLP parameters and the embedding rows of v_se. In
// GradMode::Total the embedding gradient also flows through the spatial
// gradient's dependence on the trilinear weights.
template <typename T>
FieldGradients<T> field_grad_params(const ImplicitField<T>& field, const SampleBatch& batch,
                                    const LossWeights& w, int threads = 1, int chunk = 256) {
    field.validate();
    batch.validate(field.grid);
    w.validate();
    const size_t n_on = batch.on_surface.size();
    const size_t n_off = batch.off_surface.size();
    const size_t n_all = n_on + n_off;
    if (n_all == 0) throw std::invalid_argument("field_grad_params: empty batch");
    if (n_on == 0) throw std::invalid_argument("field_grad_params: empty on-surface set");
    const bool semantic = field.semantic_mlp.has_value() && !batch.labeled.empty() &&
                          w.lambda6 > 0.0;

    const int pw = field.pe.width();
    const int dse = field.d_se();
    const int rows = int(field.v_se.rows());

    struct ChunkOut {
        MlpGrads<T> sdf;
        Matrix<T> v_se;
        double eik = 0.0, nrm = 0.0, sur = 0.0, off = 0.0;
        bool finite = true;
    };
    size_t nchunks = chunk_count(n_all, size_t(chunk));
    std::vector<ChunkOut> outs(nchunks);

    auto run_chunk = [&](size_t ci, size_t begin, size_t end) {
        ChunkOut& out = outs[ci];
        out.sdf.init_like(field.sdf_mlp);
        out.v_se = Matrix<T>(rows, dse);
        const int P = int(end - begin);

        Matrix<T> input(P, pw + dse);
        std::array<Matrix<T>, 3> tangent;
        for (int d = 0; d < 3; ++d) tangent[d] = Matrix<T>(P, pw + dse);
        std::vector<detail::FieldInput<T>> fin(P);
        for (int i = 0; i < P; ++i) {
            size_t gi = begin + i;
            const Vec3& x = gi < n_on ? batch.on_surface[gi] : batch.off_surface[gi - n_on];
            fin[i] = detail::build_field_input(field, x);
            std::copy(fin[i].x.begin(), fin[i].x.end(), input.row(i));
            for (int d = 0; d < 3; ++d)
                for (int k = 0; k < pw + dse; ++k)
                    tangent[d](i, k) = fin[i].jac[size_t(k) * 3 + d];
        }

        detail::MlpChunkTape<T> tape;
        detail::extended_forward(field.sdf_mlp, std::move(input), std::move(tangent), true, tape);

        // seeds from the loss terms
        Matrix<T> out_bar(P, 1);
        std::array<Matrix<T>, 3> tan_bar;
        for (int d = 0; d < 3; ++d) tan_bar[d] = Matrix<T>(P, 1);
        for (int i = 0; i < P; ++i) {
            size_t gi = begin + i;
            double phi = double(tape.A.back()(i, 0));
            double g[3] = {double(tape.Tg[0].back()(i, 0)), double(tape.Tg[1].back()(i, 0)),
                           double(tape.Tg[2].back()(i, 0))};
            if (!std::isfinite(phi) || !std::isfinite(g[0]) || !std::isfinite(g[1]) ||
                !std::isfinite(g[2])) {
                out.finite = false;
                continue;
            }
            double gn = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
            double phibar = 0.0, gbar[3] = {0.0, 0.0, 0.0};

            out.eik += std::abs(gn - 1.0);
            if (gn > 0.0) {
                double se = (gn >= 1.0 ? 1.0 : -1.0) * w.lambda1 / double(n_all);
                for (int d = 0; d < 3; ++d) gbar[d] += se * g[d] / gn;
            }
            if (gi < n_on) {
                const Vec3& nv = batch.on_normals[gi];
                double dotgn = g[0] * nv.x + g[1] * nv.y + g[2] * nv.z;
                double denom = std::max(gn, detail::kCosEps);
                out.nrm += 1.0 - dotgn / denom;
                double sn = -w.lambda2 / double(n_on);
                if (gn > detail::kCosEps) {
                    for (int d = 0; d < 3; ++d)
                        gbar[d] += sn * (nv[d] / gn - dotgn * g[d] / (gn * gn * gn));
                } else {
                    for (int d = 0; d < 3; ++d) gbar[d] += sn * nv[d] / detail::kCosEps;
                }
                out.sur += std::abs(phi);
                phibar += (phi > 0.0 ? 1.0 : (phi < 0.0 ? -1.0 : 0.0)) * w.lambda3 / double(n_on);
            } else {
                double p = psi(phi, w.psi_alpha);
                out.off += p;
                double sgn = phi > 0.0 ? 1.0 : (phi < 0.0 ? -1.0 : 0.0);
                phibar += -w.psi_alpha * sgn * p * w.lambda4 / double(n_off);
            }
            out_bar(i, 0) = T(phibar);
            for (int d = 0; d < 3; ++d) tan_bar[d](i, 0) = T(gbar[d]);
        }

        Matrix<T> in_bar;
        std::array<Matrix<T>, 3> tin_bar;
        detail::extended_backward(field.sdf_mlp, tape, out_bar, &tan_bar, out.sdf, in_bar,
                                  &tin_bar);

        // route input adjoints into embedding rows
        if (dse > 0) {
            for (int i = 0; i < P; ++i) {
                const detail::FieldInput<T>& f = fin[i];
                if (field.sample_mode == SampleMode::Nearest) {
                    int r = f.stencil.nearest_row;
                    if (r >= 0) axpy(dse, T(1), in_bar.row(i) + pw, out.v_se.row(r));
                    continue;
                }
                for (int n8 = 0; n8 < 8; ++n8) {
                    int r = f.stencil.row[n8];
                    if (r < 0) continue;
                    axpy(dse, T(f.stencil.weight[n8]), in_bar.row(i) + pw, out.v_se.row(r));
                    if (field.grad_mode == GradMode::Total) {
                        for (int d = 0; d < 3; ++d)
                            axpy(dse, T(f.stencil.dweight_dx[n8][d]), tin_bar[d].row(i) + pw,
                                 out.v_se.row(r));
                    }
                }
            }
        }
    };
    parallel_chunks(n_all, size_t(chunk), threads, run_chunk);

    FieldGradients<T> g;
    g.sdf.init_like(field.sdf_mlp);
    g.v_se = Matrix<T>(rows, dse);
    double eik = 0.0, nrm = 0.0, sur = 0.0, off = 0.0;
    for (const ChunkOut& o : outs) {
        g.sdf.add(o.sdf);
        for (size_t i = 0; i < g.v_se.d.size(); ++i) g.v_se.d[i] += o.v_se.d[i];
        eik += o.eik;
        nrm += o.nrm;
        sur += o.sur;
        off += o.off;
        g.finite = g.finite && o.finite;
    }
    g.loss.eikonal = eik / double(n_all);
    g.loss.normal = nrm / double(n_on);
    g.loss.surface = sur / double(n_on);
    g.loss.off_surface = n_off > 0 ? off / double(n_off) : 0.0;

    // semantic head: value path only (no spatial-gradient dependence)
    if (field.semantic_mlp) g.semantic.init_like(*field.semantic_mlp);
    if (semantic) {
        const size_t n_seg = batch.labeled.size();
        size_t schunks = chunk_count(n_seg, size_t(chunk));
        struct SemOut {
            MlpGrads<T> sem;
            Matrix<T> v_se;
            double ce = 0.0;
            bool finite = true;
        };
        std::vector<SemOut> souts(schunks);
        const MlpParameters<T>& head = *field.semantic_mlp;
        const int C = head.layers.back().W.rows;
        auto run_sem = [&](size_t ci, size_t begin, size_t end) {
            SemOut& out = souts[ci];
            out.sem.init_like(head);
            out.v_se = Matrix<T>(rows, dse);
            const int P = int(end - begin);
            Matrix<T> input(P, pw + dse);
            std::vector<detail::FieldInput<T>> fin(P);
            for (int i = 0; i < P; ++i) {
                fin[i] = detail::build_field_input(field, batch.labeled[begin + i]);
                std::copy(fin[i].x.begin(), fin[i].x.end(), input.row(i));
            }
            detail::MlpChunkTape<T> tape;
            std::array<Matrix<T>, 3> no_tan;
            detail::extended_forward(head, std::move(input), std::move(no_tan), false, tape);

            Matrix<T> out_bar(P, C);
            for (int i = 0; i < P; ++i) {
                int label = batch.labels[begin + i];
                if (label < 0 || label >= C)
                    throw std::invalid_argument("field_grad_params: label out of range");
                const T* lg = tape.A.back().row(i);
                double mx = double(lg[0]);
                for (int c = 0; c < C; ++c) mx = std::max(mx, double(lg[c]));
                double denom = 0.0;
                for (int c = 0; c < C; ++c) denom += std::exp(double(lg[c]) - mx);
                double py = std::exp(double(lg[label]) - mx) / denom;
                out.ce += -std::log(std::max(py, 1e-7));
                double s = w.lambda6 / double(n_seg);
                for (int c = 0; c < C; ++c) {
                    double pc = std::exp(double(lg[c]) - mx) / denom;
                    out_bar(i, c) = T(s * (pc - (c == label ? 1.0 : 0.0)));
                }
            }
            Matrix<T> in_bar;
            detail::extended_backward(head, tape, out_bar,
                                      static_cast<const std::array<Matrix<T>, 3>*>(nullptr),
                                      out.sem, in_bar, static_cast<std::array<Matrix<T>, 3>*>(nullptr));
            if (dse > 0) {
                for (int i = 0; i < P; ++i) {
                    const detail::FieldInput<T>& f = fin[i];
                    if (field.sample_mode == SampleMode::Nearest) {
                        int r = f.stencil.nearest_row;
                        if (r >= 0) axpy(dse, T(1), in_bar.row(i) + pw, out.v_se.row(r));
                        continue;
                    }
                    for (int n8 = 0; n8 < 8; ++n8) {
                        int r = f.stencil.row[n8];
                        if (r < 0) continue;
                        axpy(dse, T(f.stencil.weight[n8]), in_bar.row(i) + pw, out.v_se.row(r));
                    }
                }
            }
        };
        parallel_chunks(n_seg, size_t(chunk), threads, run_sem);
        double ce = 0.0;
        for (const SemOut& o : souts) {
            g.semantic.add(o.sem);
            for (size_t i = 0; i < g.v_se.d.size(); ++i) g.v_se.d[i] += o.v_se.d[i];
            ce += o.ce;
            g.finite = g.finite && o.finite;
        }
        g.loss.semantic = ce / double(batch.labeled.size());
    }

    g.loss.recombine(w);
    if (!std::isfinite(g.loss.total)) g.finite = false;
    return g;
}

} // namespace lode
