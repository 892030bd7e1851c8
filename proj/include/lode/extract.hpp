#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lode/core.hpp"
#include "lode/field.hpp"
#include "lode/knn.hpp"
#include "lode/parallel.hpp"

namespace lode {

struct InferenceConfig {
    int n_inf = 256;      // lattice points along the longest box axis
    double v_th = 0.1;    // meters
    int chunk = 4096;     // points per evaluation chunk
    int threads = 1;

    void validate() const {
        if (n_inf < 2) throw std::invalid_argument("inference: n_inf >= 2");
        if (!(v_th > 0.0)) throw std::invalid_argument("inference: v_th > 0");
    }
};

// Dense SDF samples on an isotropic lattice. Lattice points sit at cell
// centers (origin is the first point), so voxelizing extracted points is
// exact when the lattice matches the evaluation grid.
struct SdfGrid {
    Vec3 origin;
    double spacing = 0.2;
    std::array<int, 3> counts{2, 2, 2};
    std::vector<double> values;   // x-major, then y, then z

    size_t size() const { return size_t(counts[0]) * counts[1] * counts[2]; }
    size_t flat(int x, int y, int z) const { return (size_t(x) * counts[1] + y) * counts[2] + z; }
    double at(int x, int y, int z) const { return values[flat(x, y, z)]; }
    Vec3 point(int x, int y, int z) const {
        return {origin.x + x * spacing, origin.y + y * spacing, origin.z + z * spacing};
    }
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;
    std::vector<int> labels;   // optional, per vertex
};

// Inference lattice over the scene box: n_inf points across the longest axis,
// other axes scaled by aspect so cells stay cubic.
inline SdfGrid make_lattice(const GridConfig& box, int n_inf) {
    Vec3 e = box.extent();
    double longest = std::max({e.x, e.y, e.z});
    double spacing = longest / n_inf;
    SdfGrid g;
    g.spacing = spacing;
    g.origin = box.origin + Vec3{spacing, spacing, spacing} * 0.5;
    for (int a = 0; a < 3; ++a) g.counts[a] = std::max(1, int(std::llround(e[a] / spacing)));
    return g;
}

// Dense field evaluation, chunked (and parallel when threads > 1; values are
// independent so any worker count gives identical grids).
template <typename F>
SdfGrid evaluate_grid_fn(F&& fn, const GridConfig& box, const InferenceConfig& cfg) {
    cfg.validate();
    SdfGrid g = make_lattice(box, cfg.n_inf);
    g.values.assign(g.size(), 0.0);
    size_t total = g.size();
    parallel_chunks(total, size_t(cfg.chunk), cfg.threads, [&](size_t, size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i) {
            int x = int(i / (size_t(g.counts[1]) * g.counts[2]));
            size_t rem = i % (size_t(g.counts[1]) * g.counts[2]);
            int y = int(rem / g.counts[2]);
            int z = int(rem % g.counts[2]);
            g.values[i] = fn(g.point(x, y, z));
        }
    });
    return g;
}

template <typename T>
SdfGrid evaluate_grid(const ImplicitField<T>& field, const InferenceConfig& cfg) {
    field.validate();
    return evaluate_grid_fn([&](const Vec3& p) { return double(field_value(field, p)); },
                            field.grid, cfg);
}

// Grid points with |value| < v_th; the explicit surface point set.
inline PointCloud extract_surface_points(const SdfGrid& sdf, double v_th) {
    if (!(v_th > 0.0)) throw std::invalid_argument("extract_surface_points: v_th > 0");
    PointCloud out;
    for (int x = 0; x < sdf.counts[0]; ++x)
        for (int y = 0; y < sdf.counts[1]; ++y)
            for (int z = 0; z < sdf.counts[2]; ++z)
                if (std::abs(sdf.at(x, y, z)) < v_th) out.points.push_back(sdf.point(x, y, z));
    return out;
}

namespace mc {

// cube corners in the conventional order
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
// cube edges as corner pairs
constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                              {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
// face corner loops, counterclockwise seen from outside the cube
constexpr int kFace[6][4] = {{0, 3, 2, 1},   // bottom  (-z)
                             {4, 5, 6, 7},   // top     (+z)
                             {0, 1, 5, 4},   // front   (-y)
                             {2, 3, 7, 6},   // back    (+y)
                             {0, 4, 7, 3},   // left    (-x)
                             {1, 2, 6, 5}};  // right   (+x)

inline int edge_between(int a, int b) {
    for (int e = 0; e < 12; ++e)
        if ((kEdge[e][0] == a && kEdge[e][1] == b) || (kEdge[e][0] == b && kEdge[e][1] == a))
            return e;
    return -1;
}

// Directed surface segments inside one cube: walking each face perimeter
// counterclockwise (from outside), every contiguous inside-arc contributes a
// segment from its entry edge to its exit edge. Pairing around the inside
// arcs resolves the ambiguous faces identically for both adjacent cells, so
// the extracted surface is crack-free; the entry->exit direction makes loops
// wind counterclockwise seen from the positive side.
inline void cell_segments(const bool inside[8], int next_edge[12], bool crossed[12]) {
    for (int e = 0; e < 12; ++e) {
        next_edge[e] = -1;
        crossed[e] = inside[kEdge[e][0]] != inside[kEdge[e][1]];
    }
    for (const auto& face : kFace) {
        int trans[4], kinds[4], nt = 0;   // kind 1 = entry (+ -> -), 0 = exit
        for (int k = 0; k < 4; ++k) {
            int a = face[k], b = face[(k + 1) % 4];
            if (inside[a] == inside[b]) continue;
            trans[nt] = edge_between(a, b);
            kinds[nt] = inside[b] ? 1 : 0;
            ++nt;
        }
        if (nt == 0) continue;
        int start = kinds[0] == 1 ? 0 : 1;   // rotate so pairs are (entry, exit)
        for (int k = 0; k < nt; k += 2) {
            int entry = trans[(start + k) % nt];
            int exit = trans[(start + k + 1) % nt];
            next_edge[entry] = exit;
        }
    }
}

} // namespace mc

// Standard marching cubes on the lattice: linear edge interpolation, vertices
// welded across cells, triangles wound toward the positive side. Cells with
// no sign change emit nothing; degenerate slivers are dropped.
inline TriangleMesh marching_cubes(const SdfGrid& sdf, double level = 0.0) {
    for (int c : sdf.counts)
        if (c < 2) throw std::invalid_argument("marching_cubes: grid must be >= 2 per axis");
    TriangleMesh mesh;
    struct EdgeKey {
        int x, y, z, axis;
        bool operator==(const EdgeKey& o) const {
            return x == o.x && y == o.y && z == o.z && axis == o.axis;
        }
    };
    struct EdgeKeyHash {
        size_t operator()(const EdgeKey& k) const {
            return CoordHash()({k.x * 4 + k.axis, k.y, k.z});
        }
    };
    std::unordered_map<EdgeKey, int, EdgeKeyHash> edge_vertex;

    auto vertex_on = [&](int cx, int cy, int cz, int edge) {
        const int* a = mc::kCorner[mc::kEdge[edge][0]];
        const int* b = mc::kCorner[mc::kEdge[edge][1]];
        int ax = cx + a[0], ay = cy + a[1], az = cz + a[2];
        int bx = cx + b[0], by = cy + b[1], bz = cz + b[2];
        // canonical endpoint order so adjacent cells compute identical bits
        if (std::tie(bx, by, bz) < std::tie(ax, ay, az)) {
            std::swap(ax, bx);
            std::swap(ay, by);
            std::swap(az, bz);
        }
        int axis = bx != ax ? 0 : (by != ay ? 1 : 2);
        EdgeKey key{ax, ay, az, axis};
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        double va = sdf.at(ax, ay, az), vb = sdf.at(bx, by, bz);
        double t = (level - va) / (vb - va);
        Vec3 pa = sdf.point(ax, ay, az), pb = sdf.point(bx, by, bz);
        Vec3 p = pa + (pb - pa) * t;
        int idx = int(mesh.vertices.size());
        mesh.vertices.push_back(p);
        edge_vertex.emplace(key, idx);
        return idx;
    };

    for (int x = 0; x + 1 < sdf.counts[0]; ++x)
        for (int y = 0; y + 1 < sdf.counts[1]; ++y)
            for (int z = 0; z + 1 < sdf.counts[2]; ++z) {
                bool inside[8];
                bool any = false, all = true;
                for (int c = 0; c < 8; ++c) {
                    inside[c] = sdf.at(x + mc::kCorner[c][0], y + mc::kCorner[c][1],
                                       z + mc::kCorner[c][2]) < level;
                    any = any || inside[c];
                    all = all && inside[c];
                }
                if (!any || all) continue;
                int next_edge[12];
                bool crossed[12];
                mc::cell_segments(inside, next_edge, crossed);
                bool used[12] = {};
                for (int e0 = 0; e0 < 12; ++e0) {
                    if (!crossed[e0] || used[e0] || next_edge[e0] < 0) continue;
                    int loop[12], n = 0;
                    int e = e0;
                    do {
                        loop[n++] = e;
                        used[e] = true;
                        e = next_edge[e];
                    } while (e != e0 && e >= 0 && n < 12);
                    if (n < 3) continue;
                    int v0 = vertex_on(x, y, z, loop[0]);
                    for (int k = 1; k + 1 < n; ++k) {
                        int v1 = vertex_on(x, y, z, loop[k]);
                        int v2 = vertex_on(x, y, z, loop[k + 1]);
                        Vec3 A = mesh.vertices[v0], B = mesh.vertices[v1], C = mesh.vertices[v2];
                        double area2 = norm(cross(B - A, C - A));
                        if (area2 <= 2e-12) continue;   // zero-area under 1e-12
                        mesh.triangles.push_back({v0, v1, v2});
                    }
                }
            }
    return mesh;
}

// Majority label among the k nearest labeled points; ties go to the tied
// class with the nearest member.
inline std::vector<int> knn_label_transfer(const PointCloud& labeled, const PointCloud& queries,
                                           int k) {
    if (labeled.points.empty()) throw std::invalid_argument("knn_label_transfer: empty source");
    if (!labeled.has_labels()) throw std::invalid_argument("knn_label_transfer: source unlabeled");
    if (k < 1) throw std::invalid_argument("knn_label_transfer: k >= 1");
    KnnIndex index(labeled.points);
    std::vector<int> out;
    out.reserve(queries.points.size());
    for (const Vec3& q : queries.points) {
        std::vector<int> nb = index.knn(q, k);
        std::map<int, int> votes;
        for (int i : nb) ++votes[labeled.labels[i]];
        int best_count = 0;
        for (auto& [lbl, cnt] : votes) best_count = std::max(best_count, cnt);
        // nb is distance-ordered: the first member of a tied class wins
        int chosen = -1;
        for (int i : nb) {
            if (votes[labeled.labels[i]] == best_count) {
                chosen = labeled.labels[i];
                break;
            }
        }
        out.push_back(chosen);
    }
    return out;
}

inline IoUReport evaluate_scene(const PointCloud& pred_points, const OccupancyVolume& gt_occ,
                                const GridConfig& grid) {
    if (!(grid == gt_occ.grid)) throw std::invalid_argument("evaluate_scene: grid mismatch");
    return iou(voxelize(pred_points, grid), gt_occ);
}

// Fig.-4-style threshold sweep: (v_th, IoU) pairs from one SDF grid.
inline std::vector<std::pair<double, double>> vth_sweep(const SdfGrid& sdf,
                                                        const OccupancyVolume& gt_occ,
                                                        const GridConfig& grid,
                                                        const std::vector<double>& thresholds) {
    std::vector<std::pair<double, double>> curve;
    curve.reserve(thresholds.size());
    for (double t : thresholds)
        curve.emplace_back(t, evaluate_scene(extract_surface_points(sdf, t), gt_occ, grid).iou);
    return curve;
}

// Fixed label palette for mesh/point exports (documented in the README).
inline std::array<uint8_t, 3> label_color(int label) {
    static constexpr std::array<uint8_t, 3> palette[10] = {
        {128, 128, 128}, {245, 150, 100}, {90, 200, 255}, {255, 220, 80},  {150, 240, 80},
        {255, 0, 255},   {30, 30, 255},   {255, 30, 30},  {80, 240, 150}, {230, 230, 230}};
    return palette[label >= 0 ? label % 10 : 0];
}

inline void write_mesh_ply(const std::string& path, const TriangleMesh& mesh) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("mesh: cannot write " + path);
    bool colored = !mesh.labels.empty();
    out << "ply\nformat binary_little_endian 1.0\n";
    out << "element vertex " << mesh.vertices.size() << "\n";
    out << "property float x\nproperty float y\nproperty float z\n";
    if (colored) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "element face " << mesh.triangles.size() << "\n";
    out << "property list uchar int vertex_indices\nend_header\n";
    for (size_t i = 0; i < mesh.vertices.size(); ++i) {
        float v[3] = {float(mesh.vertices[i].x), float(mesh.vertices[i].y),
                      float(mesh.vertices[i].z)};
        out.write(reinterpret_cast<const char*>(v), 12);
        if (colored) {
            auto c = label_color(mesh.labels[i]);
            out.write(reinterpret_cast<const char*>(c.data()), 3);
        }
    }
    for (const auto& t : mesh.triangles) {
        uint8_t n = 3;
        int32_t idx[3] = {t[0], t[1], t[2]};
        out.write(reinterpret_cast<const char*>(&n), 1);
        out.write(reinterpret_cast<const char*>(idx), 12);
    }
    if (!out) throw std::runtime_error("mesh: write failed for " + path);
}

inline void write_mesh_obj(const std::string& path, const TriangleMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("mesh: cannot write " + path);
    char buf[128];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v.x, v.y, v.z);
        out << buf;
    }
    for (const auto& t : mesh.triangles) {
        std::snprintf(buf, sizeof buf, "f %d %d %d\n", t[0] + 1, t[1] + 1, t[2] + 1);
        out << buf;
    }
    if (!out) throw std::runtime_error("mesh: write failed for " + path);
}

} // namespace lode
