#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "lode/vec.hpp"

namespace lode {

// Uniform-grid accelerated k-nearest-neighbor index. Ties are broken by point
// index, so queries are deterministic.
class KnnIndex {
  public:
    explicit KnnIndex(const std::vector<Vec3>& points, double cell_size = 0.0) : pts_(points) {
        if (pts_.empty()) throw std::invalid_argument("knn: empty point set");
        if (cell_size <= 0.0) {
            Vec3 lo = pts_[0], hi = pts_[0];
            for (const Vec3& p : pts_) {
                lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
                hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
            }
            double diag = norm(hi - lo);
            cell_size = std::max(1e-9, diag / std::cbrt(double(pts_.size())) );
        }
        cell_ = cell_size;
        buckets_.reserve(pts_.size() * 2);
        for (size_t i = 0; i < pts_.size(); ++i) buckets_[cell_of(pts_[i])].push_back(int(i));
    }

    // indices of the k nearest points, ascending by (distance, index)
    std::vector<int> knn(const Vec3& q, int k) const {
        k = std::min<int>(k, int(pts_.size()));
        std::vector<std::pair<double, int>> best;   // squared distance
        Coord c = cell_of(q);
        for (int ring = 0;; ++ring) {
            scan_ring(q, c, ring, best);
            std::sort(best.begin(), best.end());
            if (int(best.size()) > k) best.resize(k);
            // all cells beyond `ring` are at least (ring*cell) away from q's cell
            double lower = double(ring) * cell_;
            if (int(best.size()) >= k && best.back().first <= lower * lower) break;
            if (ring > max_ring_) break;
        }
        std::vector<int> out;
        out.reserve(best.size());
        for (auto& [d, i] : best) out.push_back(i);
        return out;
    }

    double nearest_dist(const Vec3& q) const {
        auto ids = knn(q, 1);
        return norm(pts_[ids[0]] - q);
    }

    const std::vector<Vec3>& points() const { return pts_; }

  private:
    Coord cell_of(const Vec3& p) const {
        return {int(std::floor(p.x / cell_)), int(std::floor(p.y / cell_)),
                int(std::floor(p.z / cell_))};
    }
    void scan_ring(const Vec3& q, const Coord& c, int ring,
                   std::vector<std::pair<double, int>>& best) const {
        for (int dx = -ring; dx <= ring; ++dx)
            for (int dy = -ring; dy <= ring; ++dy)
                for (int dz = -ring; dz <= ring; ++dz) {
                    if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
                    auto it = buckets_.find({c.x + dx, c.y + dy, c.z + dz});
                    if (it == buckets_.end()) continue;
                    for (int i : it->second) {
                        Vec3 d = pts_[i] - q;
                        best.emplace_back(dot(d, d), i);
                    }
                }
    }

    std::vector<Vec3> pts_;
    double cell_ = 1.0;
    std::unordered_map<Coord, std::vector<int>, CoordHash> buckets_;
    static constexpr int max_ring_ = 4096;
};

} // namespace lode
