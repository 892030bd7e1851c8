#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "lode/vec.hpp"

namespace lode {

// Metric voxel frame: a fixed box, anchored at `origin`, of dims * voxel_edge
// meters. Cells are half-open, [origin + idx*edge, origin + (idx+1)*edge).
struct GridConfig {
    Vec3 origin{0.0, -25.6, -2.0};
    double voxel_edge = 0.2;
    std::array<int, 3> dims{256, 256, 32};

    bool operator==(const GridConfig& o) const {
        return origin == o.origin && voxel_edge == o.voxel_edge && dims == o.dims;
    }

    Vec3 extent() const {
        return {dims[0] * voxel_edge, dims[1] * voxel_edge, dims[2] * voxel_edge};
    }
    bool in_dims(const Coord& c) const {
        return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < dims[0] && c.y < dims[1] && c.z < dims[2];
    }
    // closed containment test for query points; the top faces belong to the box
    // for sampling purposes even though voxelize() drops them
    bool contains(const Vec3& p) const {
        Vec3 e = extent();
        return p.x >= origin.x && p.y >= origin.y && p.z >= origin.z &&
               p.x <= origin.x + e.x && p.y <= origin.y + e.y && p.z <= origin.z + e.z;
    }

    void validate() const {
        if (!(voxel_edge > 0.0)) throw std::invalid_argument("voxel_edge must be > 0");
        for (int d : dims)
            if (d < 1) throw std::invalid_argument("grid dims must be >= 1");
    }
};

// Desk-scale frame used by tests and the synthetic benchmark: same formulas,
// 12.8 x 12.8 x 3.2 m box.
inline GridConfig desk_grid() {
    GridConfig g;
    g.origin = {0.0, -6.4, -1.0};
    g.voxel_edge = 0.2;
    g.dims = {64, 64, 16};
    return g;
}

struct OccupancyVolume {
    GridConfig grid;
    std::vector<Coord> occupied;   // sorted lexicographic, unique

    size_t count() const { return occupied.size(); }
    bool test(const Coord& c) const {
        return std::binary_search(occupied.begin(), occupied.end(), c);
    }
    void canonicalize() {
        std::sort(occupied.begin(), occupied.end());
        occupied.erase(std::unique(occupied.begin(), occupied.end()), occupied.end());
    }
};

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> normals;   // empty, or one unit vector per point
    std::vector<int> labels;     // empty, or one class id per point

    size_t size() const { return points.size(); }
    bool has_normals() const { return !normals.empty(); }
    bool has_labels() const { return !labels.empty(); }

    void validate() const {
        if (has_normals() && normals.size() != points.size())
            throw std::invalid_argument("normals length mismatch");
        if (has_labels() && labels.size() != points.size())
            throw std::invalid_argument("labels length mismatch");
        for (const Vec3& n : normals)
            if (std::abs(norm(n) - 1.0) > 1e-6)
                throw std::invalid_argument("normals must be unit length");
    }
};

struct IoUReport {
    long long intersection = 0;
    long long union_size = 0;
    double iou = 0.0;
    std::optional<std::vector<double>> per_class_iou;   // one entry per present class
    std::optional<std::vector<int>> per_class_ids;
    std::optional<double> miou;
};

inline Coord point_cell(const Vec3& p, const GridConfig& g) {
    return {int(std::floor((p.x - g.origin.x) / g.voxel_edge)),
            int(std::floor((p.y - g.origin.y) / g.voxel_edge)),
            int(std::floor((p.z - g.origin.z) / g.voxel_edge))};
}

// Binary voxelization. Out-of-box points are dropped (and counted through
// `dropped` when given); non-finite coordinates are rejected.
inline OccupancyVolume voxelize(const PointCloud& cloud, const GridConfig& grid,
                                size_t* dropped = nullptr) {
    grid.validate();
    OccupancyVolume out;
    out.grid = grid;
    size_t ndrop = 0;
    out.occupied.reserve(cloud.points.size());
    for (const Vec3& p : cloud.points) {
        if (!finite(p)) throw std::invalid_argument("voxelize: non-finite point coordinate");
        Coord c = point_cell(p, grid);
        if (!grid.in_dims(c)) {
            ++ndrop;
            continue;
        }
        out.occupied.push_back(c);
    }
    out.canonicalize();
    if (dropped) *dropped = ndrop;
    return out;
}

inline Vec3 voxel_center(const Coord& idx, const GridConfig& grid) {
    if (!grid.in_dims(idx)) throw std::out_of_range("voxel_center: index outside grid dims");
    return {grid.origin.x + (idx.x + 0.5) * grid.voxel_edge,
            grid.origin.y + (idx.y + 0.5) * grid.voxel_edge,
            grid.origin.z + (idx.z + 0.5) * grid.voxel_edge};
}

// Affine map of the scene box onto [-1,1]^3.
inline Vec3 normalize_coords(const Vec3& x, const GridConfig& grid) {
    Vec3 e = grid.extent();
    return {2.0 * (x.x - grid.origin.x) / e.x - 1.0,
            2.0 * (x.y - grid.origin.y) / e.y - 1.0,
            2.0 * (x.z - grid.origin.z) / e.z - 1.0};
}

inline Vec3 denormalize_coords(const Vec3& u, const GridConfig& grid) {
    Vec3 e = grid.extent();
    return {grid.origin.x + (u.x + 1.0) * 0.5 * e.x,
            grid.origin.y + (u.y + 1.0) * 0.5 * e.y,
            grid.origin.z + (u.z + 1.0) * 0.5 * e.z};
}

// d(normalize_coords)/dx, a diagonal Jacobian
inline Vec3 normalize_scale(const GridConfig& grid) {
    Vec3 e = grid.extent();
    return {2.0 / e.x, 2.0 / e.y, 2.0 / e.z};
}

inline IoUReport iou(const OccupancyVolume& pred, const OccupancyVolume& gt) {
    if (!(pred.grid == gt.grid)) throw std::invalid_argument("iou: grid mismatch");
    IoUReport r;
    size_t i = 0, j = 0;
    while (i < pred.occupied.size() && j < gt.occupied.size()) {
        if (pred.occupied[i] == gt.occupied[j]) {
            ++r.intersection;
            ++i;
            ++j;
        } else if (pred.occupied[i] < gt.occupied[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    r.union_size = (long long)pred.occupied.size() + (long long)gt.occupied.size() - r.intersection;
    r.iou = r.union_size > 0 ? double(r.intersection) / double(r.union_size) : 1.0;
    return r;
}

// Voxel -> class id assignment over a common grid.
using LabeledOccupancy = std::map<Coord, int>;

// Mean per-class IoU. Classes absent from both sides are excluded from the
// mean; empty prediction against non-empty ground truth scores 0.
inline IoUReport miou(const LabeledOccupancy& pred, const LabeledOccupancy& gt, int num_classes) {
    for (const auto& [c, l] : pred)
        if (l < 0 || l >= num_classes) throw std::invalid_argument("miou: label out of range");
    for (const auto& [c, l] : gt)
        if (l < 0 || l >= num_classes) throw std::invalid_argument("miou: label out of range");

    std::vector<long long> inter(num_classes, 0), uni(num_classes, 0);
    for (const auto& [c, l] : pred) {
        auto it = gt.find(c);
        if (it != gt.end() && it->second == l) ++inter[l];
    }
    for (const auto& [c, l] : pred) ++uni[l];
    for (const auto& [c, l] : gt) ++uni[l];
    // union = |P_c| + |G_c| - |P_c ∩ G_c|
    IoUReport r;
    std::vector<double> per;
    std::vector<int> ids;
    double sum = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        long long u = uni[c] - inter[c];
        if (u == 0) continue;   // class absent from both sides: excluded
        double v = double(inter[c]) / double(u);
        per.push_back(v);
        ids.push_back(c);
        sum += v;
    }
    r.per_class_iou = per;
    r.per_class_ids = ids;
    r.miou = per.empty() ? 0.0 : sum / double(per.size());
    r.iou = r.miou.value();
    return r;
}

} // namespace lode
