#pragma once

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "lode/core.hpp"
#include "lode/tensor.hpp"

namespace lode {

// Coordinate-indexed feature volume. Coordinates live in base-grid voxel
// units and are multiples of `stride`; rows follow lexicographic coordinate
// order so every downstream reduction is bit-reproducible.
template <typename T>
struct SparseTensor {
    int stride = 1;
    int channels = 0;
    std::vector<Coord> coords;              // sorted lexicographic, unique
    Matrix<T> feats;                        // coords.size() x channels
    std::unordered_map<Coord, int, CoordHash> index;

    size_t rows() const { return coords.size(); }

    int find(const Coord& c) const {
        auto it = index.find(c);
        return it == index.end() ? -1 : it->second;
    }

    void rebuild_index() {
        index.clear();
        index.reserve(coords.size() * 2);
        for (size_t i = 0; i < coords.size(); ++i) index.emplace(coords[i], int(i));
    }

    void validate() const {
        if (stride < 1) throw std::invalid_argument("sparse: stride must be >= 1");
        if (feats.rows != int(coords.size()) || feats.cols != channels)
            throw std::invalid_argument("sparse: feature matrix shape mismatch");
        for (size_t i = 0; i < coords.size(); ++i) {
            if (i > 0 && !(coords[i - 1] < coords[i]))
                throw std::invalid_argument("sparse: coords not sorted unique");
            if (coords[i].x % stride || coords[i].y % stride || coords[i].z % stride)
                throw std::invalid_argument("sparse: coord not divisible by stride");
        }
    }
};

// Builds a tensor from unordered (coord, feature-row) pairs.
template <typename T>
SparseTensor<T> make_sparse(int stride, int channels, std::vector<Coord> coords,
                            const std::vector<std::vector<T>>& rows) {
    if (coords.size() != rows.size()) throw std::invalid_argument("make_sparse: size mismatch");
    std::vector<size_t> order(coords.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return coords[a] < coords[b]; });
    SparseTensor<T> t;
    t.stride = stride;
    t.channels = channels;
    t.coords.reserve(coords.size());
    t.feats = Matrix<T>(int(coords.size()), channels);
    for (size_t k = 0; k < order.size(); ++k) {
        size_t i = order[k];
        if (k > 0 && t.coords.back() == coords[i])
            throw std::invalid_argument("make_sparse: duplicate coordinate");
        t.coords.push_back(coords[i]);
        if (int(rows[i].size()) != channels) throw std::invalid_argument("make_sparse: row width");
        std::copy(rows[i].begin(), rows[i].end(), t.feats.row(int(k)));
    }
    t.rebuild_index();
    t.validate();
    return t;
}

template <typename T>
SparseTensor<T> sparse_from_occupancy(const OccupancyVolume& occ, T fill = T(1)) {
    SparseTensor<T> t;
    t.stride = 1;
    t.channels = 1;
    t.coords = occ.occupied;
    t.feats = Matrix<T>(int(t.coords.size()), 1, fill);
    t.rebuild_index();
    return t;
}

// Cubic k x k x k kernel; weights indexed [tap][in][out] with taps in
// lexicographic offset order.
template <typename T>
struct ConvKernel {
    int size = 3;
    int in_channels = 0;
    int out_channels = 0;
    std::vector<T> weights;   // size^3 * in * out
    std::vector<T> bias;      // out

    int taps() const { return size * size * size; }
    T* tap(int t) { return weights.data() + size_t(t) * in_channels * out_channels; }
    const T* tap(int t) const { return weights.data() + size_t(t) * in_channels * out_channels; }

    void validate() const {
        if (weights.size() != size_t(taps()) * in_channels * out_channels ||
            bias.size() != size_t(out_channels))
            throw std::invalid_argument("kernel: weight/bias shape mismatch");
    }
};

template <typename T>
ConvKernel<T> make_kernel(int size, int in_ch, int out_ch) {
    ConvKernel<T> k;
    k.size = size;
    k.in_channels = in_ch;
    k.out_channels = out_ch;
    k.weights.assign(size_t(k.taps()) * in_ch * out_ch, T(0));
    k.bias.assign(out_ch, T(0));
    return k;
}

// Tap offsets: conv kernels are centered ({-r..r}), deconv kernels are
// corner-anchored ({0..k-1}).
inline std::vector<Coord> conv_offsets(int k) {
    int r = (k - 1) / 2;
    std::vector<Coord> offs;
    offs.reserve(k * k * k);
    for (int dx = -r; dx <= k - 1 - r; ++dx)
        for (int dy = -r; dy <= k - 1 - r; ++dy)
            for (int dz = -r; dz <= k - 1 - r; ++dz) offs.push_back({dx, dy, dz});
    return offs;
}

inline std::vector<Coord> deconv_offsets(int k) {
    std::vector<Coord> offs;
    offs.reserve(k * k * k);
    for (int dx = 0; dx < k; ++dx)
        for (int dy = 0; dy < k; ++dy)
            for (int dz = 0; dz < k; ++dz) offs.push_back({dx, dy, dz});
    return offs;
}

// Gather map in CSR-by-output-row form; shared by forward and backward.
struct ConvMap {
    std::vector<Coord> out_coords;
    std::vector<int> row_begin;             // out rows + 1
    std::vector<std::pair<int, int>> pairs; // (tap, in_row), grouped by out row
};

template <typename T>
ConvMap build_conv_map(const SparseTensor<T>& t, int ksize, int stride_out) {
    ConvMap m;
    if (stride_out == 1) {
        m.out_coords = t.coords;
    } else {
        int s2 = t.stride * stride_out;
        std::vector<Coord> parents;
        parents.reserve(t.coords.size());
        auto fdiv = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
        for (const Coord& c : t.coords)
            parents.push_back({fdiv(c.x, s2) * s2, fdiv(c.y, s2) * s2, fdiv(c.z, s2) * s2});
        std::sort(parents.begin(), parents.end());
        parents.erase(std::unique(parents.begin(), parents.end()), parents.end());
        m.out_coords = std::move(parents);
    }
    auto offs = conv_offsets(ksize);
    m.row_begin.reserve(m.out_coords.size() + 1);
    m.row_begin.push_back(0);
    for (const Coord& o : m.out_coords) {
        for (int ti = 0; ti < int(offs.size()); ++ti) {
            Coord n{o.x + offs[ti].x * t.stride, o.y + offs[ti].y * t.stride,
                    o.z + offs[ti].z * t.stride};
            int r = t.find(n);
            if (r >= 0) m.pairs.emplace_back(ti, r);
        }
        m.row_begin.push_back(int(m.pairs.size()));
    }
    return m;
}

template <typename T>
SparseTensor<T> apply_conv_map(const SparseTensor<T>& t, const ConvKernel<T>& kernel,
                               const ConvMap& m, int stride_out) {
    SparseTensor<T> out;
    out.stride = t.stride * stride_out;
    out.channels = kernel.out_channels;
    out.coords = m.out_coords;
    out.feats = Matrix<T>(int(m.out_coords.size()), kernel.out_channels);
    const int ci = kernel.in_channels, co = kernel.out_channels;
    for (int r = 0; r < int(m.out_coords.size()); ++r) {
        T* acc = out.feats.row(r);
        for (int c = 0; c < co; ++c) acc[c] = kernel.bias[c];
        for (int p = m.row_begin[r]; p < m.row_begin[r + 1]; ++p) {
            const T* w = kernel.tap(m.pairs[p].first);
            const T* in = t.feats.row(m.pairs[p].second);
            for (int a = 0; a < ci; ++a) axpy(co, in[a], w + size_t(a) * co, acc);
        }
    }
    out.rebuild_index();
    return out;
}

// Sparse convolution. stride_out=1 is submanifold (output support equals
// input support); stride_out=2 emits the downsampled cells that contain at
// least one input coordinate. Absent neighbors contribute zero.
template <typename T>
SparseTensor<T> sparse_conv(const SparseTensor<T>& t, const ConvKernel<T>& kernel,
                            int stride_out = 1) {
    if (kernel.in_channels != t.channels)
        throw std::invalid_argument("sparse_conv: channel mismatch");
    if (stride_out != 1 && stride_out != 2)
        throw std::invalid_argument("sparse_conv: stride_out must be 1 or 2");
    kernel.validate();
    ConvMap m = build_conv_map(t, kernel.size, stride_out);
    return apply_conv_map(t, kernel, m, stride_out);
}

// Scatter map for the transposed convolution, also CSR-by-output-row.
struct DeconvMap {
    std::vector<Coord> out_coords;
    std::vector<int> row_begin;
    std::vector<std::pair<int, int>> pairs; // (tap, in_row)
};

template <typename T>
DeconvMap build_deconv_map(const SparseTensor<T>& t, int ksize, int factor) {
    int s_out = t.stride / factor;
    auto offs = deconv_offsets(ksize);
    std::vector<Coord> outs;
    outs.reserve(t.coords.size() * offs.size());
    for (const Coord& c : t.coords)
        for (const Coord& d : offs)
            outs.push_back({c.x + d.x * s_out, c.y + d.y * s_out, c.z + d.z * s_out});
    std::sort(outs.begin(), outs.end());
    outs.erase(std::unique(outs.begin(), outs.end()), outs.end());

    std::unordered_map<Coord, int, CoordHash> out_index;
    out_index.reserve(outs.size() * 2);
    for (size_t i = 0; i < outs.size(); ++i) out_index.emplace(outs[i], int(i));

    std::vector<std::vector<std::pair<int, int>>> per_row(outs.size());
    for (int r = 0; r < int(t.coords.size()); ++r) {
        const Coord& c = t.coords[r];
        for (int ti = 0; ti < int(offs.size()); ++ti) {
            Coord o{c.x + offs[ti].x * s_out, c.y + offs[ti].y * s_out, c.z + offs[ti].z * s_out};
            per_row[out_index.at(o)].emplace_back(ti, r);
        }
    }
    DeconvMap m;
    m.out_coords = std::move(outs);
    m.row_begin.push_back(0);
    for (auto& v : per_row) {
        for (auto& p : v) m.pairs.push_back(p);
        m.row_begin.push_back(int(m.pairs.size()));
    }
    return m;
}

// Generative transposed convolution: output support is the union of the full
// k^3 footprint of every input coordinate at the finer stride, so support
// dilates beyond the input.
template <typename T>
SparseTensor<T> generative_deconv(const SparseTensor<T>& t, const ConvKernel<T>& kernel,
                                  int factor = 2) {
    if (kernel.in_channels != t.channels)
        throw std::invalid_argument("generative_deconv: channel mismatch");
    if (factor < 1 || t.stride % factor != 0)
        throw std::invalid_argument("generative_deconv: stride not divisible by factor");
    kernel.validate();
    DeconvMap m = build_deconv_map(t, kernel.size, factor);

    SparseTensor<T> out;
    out.stride = t.stride / factor;
    out.channels = kernel.out_channels;
    out.coords = m.out_coords;
    out.feats = Matrix<T>(int(m.out_coords.size()), kernel.out_channels);
    const int ci = kernel.in_channels, co = kernel.out_channels;
    for (int r = 0; r < int(m.out_coords.size()); ++r) {
        T* acc = out.feats.row(r);
        for (int c = 0; c < co; ++c) acc[c] = kernel.bias[c];
        for (int p = m.row_begin[r]; p < m.row_begin[r + 1]; ++p) {
            const T* w = kernel.tap(m.pairs[p].first);
            const T* in = t.feats.row(m.pairs[p].second);
            for (int a = 0; a < ci; ++a) axpy(co, in[a], w + size_t(a) * co, acc);
        }
    }
    out.rebuild_index();
    return out;
}

template <typename T>
inline T sigmoid(T x) {
    return T(1) / (T(1) + std::exp(-x));
}

// Keeps exactly the coordinates whose sigmoid(logit) clears the threshold;
// features ride along unchanged.
template <typename T>
SparseTensor<T> prune(const SparseTensor<T>& t, const std::vector<T>& keep_logits, T threshold) {
    if (keep_logits.size() != t.rows())
        throw std::invalid_argument("prune: one logit per coordinate required");
    SparseTensor<T> out;
    out.stride = t.stride;
    out.channels = t.channels;
    std::vector<int> kept;
    for (size_t i = 0; i < t.rows(); ++i)
        if (sigmoid(keep_logits[i]) >= threshold) kept.push_back(int(i));
    out.coords.reserve(kept.size());
    out.feats = Matrix<T>(int(kept.size()), t.channels);
    for (size_t k = 0; k < kept.size(); ++k) {
        out.coords.push_back(t.coords[kept[k]]);
        std::copy(t.feats.row(kept[k]), t.feats.row(kept[k]) + t.channels, out.feats.row(int(k)));
    }
    out.rebuild_index();
    return out;
}

// Max-pool occupancy by a power-of-two factor: a coarse voxel is occupied iff
// any of its factor^3 children is.
inline OccupancyVolume downsample_occupancy(const OccupancyVolume& occ, int factor) {
    if (factor < 1 || (factor & (factor - 1)) != 0)
        throw std::invalid_argument("downsample_occupancy: factor must be a power of two");
    for (int d : occ.grid.dims)
        if (d % factor != 0) throw std::invalid_argument("downsample_occupancy: indivisible dims");
    OccupancyVolume out;
    out.grid = occ.grid;
    out.grid.voxel_edge = occ.grid.voxel_edge * factor;
    out.grid.dims = {occ.grid.dims[0] / factor, occ.grid.dims[1] / factor,
                     occ.grid.dims[2] / factor};
    out.occupied.reserve(occ.occupied.size());
    for (const Coord& c : occ.occupied)
        out.occupied.push_back({c.x / factor, c.y / factor, c.z / factor});
    out.canonicalize();
    return out;
}

template <typename T>
std::vector<T> to_dense(const SparseTensor<T>& t, const std::array<int, 3>& dims) {
    std::vector<T> dense(size_t(dims[0]) * dims[1] * dims[2] * t.channels, T(0));
    for (size_t i = 0; i < t.rows(); ++i) {
        const Coord& c = t.coords[i];
        if (c.x < 0 || c.y < 0 || c.z < 0 || c.x >= dims[0] || c.y >= dims[1] || c.z >= dims[2])
            throw std::out_of_range("to_dense: coordinate outside dims");
        size_t base = ((size_t(c.x) * dims[1] + c.y) * dims[2] + c.z) * t.channels;
        for (int ch = 0; ch < t.channels; ++ch) dense[base + ch] = t.feats(int(i), ch);
    }
    return dense;
}

template <typename T>
void dump_sparse(std::ostream& os, const SparseTensor<T>& t) {
    os << "stride " << t.stride << " rows " << t.rows() << " channels " << t.channels << "\n";
    for (size_t i = 0; i < t.rows(); ++i) {
        os << t.coords[i].x << ' ' << t.coords[i].y << ' ' << t.coords[i].z << ':';
        for (int c = 0; c < t.channels; ++c) os << ' ' << t.feats(int(i), c);
        os << '\n';
    }
}

} // namespace lode
