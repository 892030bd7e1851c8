#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "lode/core.hpp"
#include "lode/rng.hpp"

namespace lode {

enum class Shape { Plane, Box, Sphere, Cylinder };

// One analytic primitive. `center` is the pose translation, `yaw` rotates
// boxes and cylinders about z. size semantics: Plane -> ignored (the plane is
// the horizontal z = center.z sheet spanning the scene box); Box -> half
// extents; Sphere -> size.x = radius; Cylinder -> size.x = radius, size.z =
// half height (vertical, capped).
struct Primitive {
    Shape shape = Shape::Sphere;
    Vec3 center{0, 0, 0};
    double yaw = 0.0;
    Vec3 size{1, 1, 1};
    int class_id = 0;

    void validate() const {
        if (shape == Shape::Box && (size.x <= 0 || size.y <= 0 || size.z <= 0))
            throw std::invalid_argument("primitive: non-positive box extent");
        if (shape == Shape::Sphere && size.x <= 0)
            throw std::invalid_argument("primitive: non-positive radius");
        if (shape == Shape::Cylinder && (size.x <= 0 || size.z <= 0))
            throw std::invalid_argument("primitive: non-positive cylinder size");
    }

    Vec3 to_local(const Vec3& p) const {
        Vec3 d = p - center;
        double c = std::cos(-yaw), s = std::sin(-yaw);
        return {c * d.x - s * d.y, s * d.x + c * d.y, d.z};
    }
    Vec3 from_local_dir(const Vec3& v) const {
        double c = std::cos(yaw), s = std::sin(yaw);
        return {c * v.x - s * v.y, s * v.x + c * v.y, v.z};
    }

    double sdf(const Vec3& p) const {
        switch (shape) {
            case Shape::Plane:
                return p.z - center.z;
            case Shape::Sphere:
                return norm(p - center) - size.x;
            case Shape::Box: {
                Vec3 q = to_local(p);
                Vec3 a{std::abs(q.x) - size.x, std::abs(q.y) - size.y, std::abs(q.z) - size.z};
                Vec3 mx{std::max(a.x, 0.0), std::max(a.y, 0.0), std::max(a.z, 0.0)};
                return norm(mx) + std::min(std::max(a.x, std::max(a.y, a.z)), 0.0);
            }
            case Shape::Cylinder: {
                Vec3 q = to_local(p);
                double dr = std::sqrt(q.x * q.x + q.y * q.y) - size.x;
                double dz = std::abs(q.z) - size.z;
                double ir = std::min(std::max(dr, dz), 0.0);
                double ox = std::max(dr, 0.0), oz = std::max(dz, 0.0);
                return ir + std::sqrt(ox * ox + oz * oz);
            }
        }
        return 0.0;
    }

    // analytic outward surface normal at (or near) the surface
    Vec3 normal(const Vec3& p) const {
        switch (shape) {
            case Shape::Plane:
                return {0, 0, 1};
            case Shape::Sphere:
                return normalized(p - center);
            case Shape::Box: {
                Vec3 q = to_local(p);
                Vec3 a{std::abs(q.x) - size.x, std::abs(q.y) - size.y, std::abs(q.z) - size.z};
                int axis = 0;
                if (a.y > a[axis]) axis = 1;
                if (a.z > a[axis]) axis = 2;
                Vec3 n{0, 0, 0};
                n[axis] = q[axis] >= 0 ? 1.0 : -1.0;
                return from_local_dir(n);
            }
            case Shape::Cylinder: {
                Vec3 q = to_local(p);
                double dr = std::sqrt(q.x * q.x + q.y * q.y) - size.x;
                double dz = std::abs(q.z) - size.z;
                if (dz > dr) return from_local_dir({0, 0, q.z >= 0 ? 1.0 : -1.0});
                double rr = std::sqrt(q.x * q.x + q.y * q.y);
                if (rr < 1e-12) return from_local_dir({1, 0, 0});
                return from_local_dir({q.x / rr, q.y / rr, 0});
            }
        }
        return {0, 0, 1};
    }
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    GridConfig box;
    uint64_t seed = 0;

    void validate() const {
        if (primitives.empty()) throw std::invalid_argument("scene: needs at least one primitive");
        for (const auto& p : primitives) p.validate();
    }
};

// Union SDF evaluator over the primitives. Exactness is violated only inside
// overlaps, which never carry surface samples.
struct SceneSdf {
    std::vector<Primitive> primitives;

    double sdf(const Vec3& p) const {
        double best = primitives[0].sdf(p);
        for (size_t i = 1; i < primitives.size(); ++i) best = std::min(best, primitives[i].sdf(p));
        return best;
    }
    int argmin(const Vec3& p) const {
        int bi = 0;
        double best = primitives[0].sdf(p);
        for (size_t i = 1; i < primitives.size(); ++i) {
            double d = primitives[i].sdf(p);
            if (d < best) {
                best = d;
                bi = int(i);
            }
        }
        return bi;
    }
    Vec3 normal(const Vec3& p) const { return primitives[argmin(p)].normal(p); }
};

// One training/evaluation unit.
struct SceneRecord {
    PointCloud input_cloud;   // sparse observation
    PointCloud gt_cloud;      // dense surface samples with normals/labels
    OccupancyVolume gt_occ;
    std::shared_ptr<SceneSdf> analytic_sdf;   // null for real data
    GridConfig box;
    std::string id;
    Vec3 sensor{0, 0, 0};     // acquisition origin, used to orient estimated normals
};

namespace detail {

inline double primitive_area(const Primitive& p, const GridConfig& box) {
    Vec3 e = box.extent();
    switch (p.shape) {
        case Shape::Plane:
            return e.x * e.y;
        case Shape::Sphere:
            return 4.0 * 3.14159265358979323846 * p.size.x * p.size.x;
        case Shape::Box:
            return 8.0 * (p.size.x * p.size.y + p.size.x * p.size.z + p.size.y * p.size.z);
        case Shape::Cylinder:
            return 2.0 * 3.14159265358979323846 * p.size.x *
                       (2.0 * p.size.z) +   // lateral
                   2.0 * 3.14159265358979323846 * p.size.x * p.size.x;   // caps
    }
    return 0.0;
}

inline Vec3 sample_primitive_surface(const Primitive& p, const GridConfig& box, Rng& rng,
                                     Vec3* nrm) {
    constexpr double pi = 3.14159265358979323846;
    switch (p.shape) {
        case Shape::Plane: {
            Vec3 e = box.extent();
            Vec3 q{box.origin.x + rng.uniform() * e.x, box.origin.y + rng.uniform() * e.y,
                   p.center.z};
            *nrm = {0, 0, 1};
            return q;
        }
        case Shape::Sphere: {
            double u = rng.uniform(), v = rng.uniform();
            double z = 1.0 - 2.0 * u;
            double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            double phi = 2.0 * pi * v;
            Vec3 n{r * std::cos(phi), r * std::sin(phi), z};
            *nrm = n;
            return p.center + n * p.size.x;
        }
        case Shape::Box: {
            double ax = p.size.y * p.size.z, ay = p.size.x * p.size.z, az = p.size.x * p.size.y;
            double total = 2.0 * (ax + ay + az);
            double pick = rng.uniform() * total;
            int axis;
            double side;
            if (pick < 2 * ax) { axis = 0; side = pick < ax ? 1.0 : -1.0; }
            else if (pick < 2 * ax + 2 * ay) { axis = 1; side = pick < 2 * ax + ay ? 1.0 : -1.0; }
            else { axis = 2; side = pick < 2 * ax + 2 * ay + az ? 1.0 : -1.0; }
            Vec3 q{rng.uniform(-p.size.x, p.size.x), rng.uniform(-p.size.y, p.size.y),
                   rng.uniform(-p.size.z, p.size.z)};
            Vec3 n{0, 0, 0};
            q[axis] = side * p.size[axis == 0 ? 0 : (axis == 1 ? 1 : 2)];
            n[axis] = side;
            *nrm = p.from_local_dir(n);
            Vec3 local{q.x, q.y, q.z};
            Vec3 world = p.center + p.from_local_dir(local);
            return world;
        }
        case Shape::Cylinder: {
            double lateral = 2.0 * pi * p.size.x * (2.0 * p.size.z);
            double caps = 2.0 * pi * p.size.x * p.size.x;
            double pick = rng.uniform() * (lateral + caps);
            Vec3 local, n;
            if (pick < lateral) {
                double phi = 2.0 * pi * rng.uniform();
                local = {p.size.x * std::cos(phi), p.size.x * std::sin(phi),
                         rng.uniform(-p.size.z, p.size.z)};
                n = {std::cos(phi), std::sin(phi), 0};
            } else {
                double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
                double r = p.size.x * std::sqrt(rng.uniform());
                double phi = 2.0 * pi * rng.uniform();
                local = {r * std::cos(phi), r * std::sin(phi), side * p.size.z};
                n = {0, 0, side};
            }
            *nrm = p.from_local_dir(n);
            return p.center + p.from_local_dir(local);
        }
    }
    *nrm = {0, 0, 1};
    return p.center;
}

} // namespace detail

// Analytic synthetic scene: dense ground-truth surface samples at gt_density
// points/m^2 with exact normals and per-primitive class labels, plus the
// derived occupancy. Surface points buried inside another primitive or
// outside the scene box are rejected.
inline SceneRecord synth_scene(const SceneSpec& spec, double gt_density) {
    spec.validate();
    spec.box.validate();
    SceneRecord rec;
    rec.box = spec.box;
    rec.analytic_sdf = std::make_shared<SceneSdf>();
    rec.analytic_sdf->primitives = spec.primitives;
    Rng rng(mix_seed(spec.seed, 0x5ce7e));

    for (size_t pi = 0; pi < spec.primitives.size(); ++pi) {
        const Primitive& prim = spec.primitives[pi];
        double area = detail::primitive_area(prim, spec.box);
        long long want = std::llround(area * gt_density);
        for (long long i = 0; i < want; ++i) {
            Vec3 n;
            Vec3 q = detail::sample_primitive_surface(prim, spec.box, rng, &n);
            if (!spec.box.contains(q)) continue;
            bool buried = false;
            for (size_t pj = 0; pj < spec.primitives.size() && !buried; ++pj)
                if (pj != pi && spec.primitives[pj].sdf(q) < -1e-9) buried = true;
            if (buried) continue;
            rec.gt_cloud.points.push_back(q);
            rec.gt_cloud.normals.push_back(n);
            rec.gt_cloud.labels.push_back(prim.class_id);
        }
    }
    if (rec.gt_cloud.points.empty())
        throw std::runtime_error("synth_scene: no surface samples inside the box");
    rec.gt_occ = voxelize(rec.gt_cloud, spec.box);
    return rec;
}

struct LidarConfig {
    Vec3 sensor{0.2, 0.0, 0.6};
    int channels = 24;
    double elev_min_deg = -28.0;
    double elev_max_deg = 4.0;
    double azimuth_min_deg = -70.0;
    double azimuth_max_deg = 70.0;
    double azimuth_step_deg = 1.0;
    double noise_sigma = 0.0;
    double max_range = 60.0;
    uint64_t seed = 0;
};

// Simulated spinning LiDAR over the analytic scene SDF: per (elevation,
// azimuth) ray, sphere-trace to the first hit; occluded surfaces yield no
// returns and point spacing grows with range.
inline PointCloud lidar_scan(const SceneRecord& scene, const LidarConfig& cfg) {
    if (!scene.analytic_sdf) throw std::invalid_argument("lidar_scan: analytic sdf required");
    const SceneSdf& sdf = *scene.analytic_sdf;
    PointCloud out;
    Rng rng(mix_seed(cfg.seed, 0x11da2));
    constexpr double deg = 3.14159265358979323846 / 180.0;
    const double tol = 1e-3;
    for (int ch = 0; ch < cfg.channels; ++ch) {
        double elev = cfg.channels == 1
                          ? cfg.elev_min_deg
                          : cfg.elev_min_deg +
                                (cfg.elev_max_deg - cfg.elev_min_deg) * ch / (cfg.channels - 1);
        double ce = std::cos(elev * deg), se = std::sin(elev * deg);
        for (double az = cfg.azimuth_min_deg; az <= cfg.azimuth_max_deg + 1e-9;
             az += cfg.azimuth_step_deg) {
            Vec3 dir{ce * std::cos(az * deg), ce * std::sin(az * deg), se};
            double t = 0.0;
            bool hit = false;
            for (int step = 0; step < 128 && t < cfg.max_range; ++step) {
                Vec3 p = cfg.sensor + dir * t;
                double d = sdf.sdf(p);
                if (d < tol) {
                    hit = true;
                    break;
                }
                t += d;
            }
            if (!hit || t <= 0.0) continue;
            double tn = t + (cfg.noise_sigma > 0.0 ? rng.normal() * cfg.noise_sigma : 0.0);
            Vec3 p = cfg.sensor + dir * tn;
            out.points.push_back(p);
            out.labels.push_back(sdf.primitives[sdf.argmin(p)].class_id);
        }
    }
    return out;
}

// SemanticKITTI-style point file: little-endian float32 (x, y, z, remission)
// quadruples; remission is dropped.
inline PointCloud load_kitti_points(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("load_kitti_points: cannot open " + path);
    std::streamsize bytes = in.tellg();
    if (bytes % 16 != 0)
        throw std::runtime_error("load_kitti_points: size not divisible by 16 bytes");
    in.seekg(0);
    PointCloud cloud;
    size_t n = size_t(bytes) / 16;
    cloud.points.reserve(n);
    std::vector<float> buf(4);
    for (size_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), 16);
        cloud.points.push_back({buf[0], buf[1], buf[2]});
    }
    return cloud;
}

// Bit-packed occupancy (MSB-first, x-major then y then z) on `grid`, plus the
// optional u16 label volume remapped through `label_map` (identity when the
// map is empty; unmapped ids raise).
inline std::pair<OccupancyVolume, std::vector<int>> load_kitti_voxels(
    const std::string& occupancy_path, const std::string& labels_path = "",
    const GridConfig& grid = GridConfig{},
    const std::map<int, int>& label_map = {}) {
    size_t total = size_t(grid.dims[0]) * grid.dims[1] * grid.dims[2];
    std::ifstream in(occupancy_path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("load_kitti_voxels: cannot open " + occupancy_path);
    if (size_t(in.tellg()) != total / 8)
        throw std::runtime_error("load_kitti_voxels: wrong occupancy file size");
    in.seekg(0);
    std::vector<uint8_t> packed(total / 8);
    in.read(reinterpret_cast<char*>(packed.data()), std::streamsize(packed.size()));

    OccupancyVolume occ;
    occ.grid = grid;
    for (size_t bit = 0; bit < total; ++bit) {
        if (!(packed[bit / 8] & (0x80u >> (bit % 8)))) continue;
        size_t rem = bit;
        int x = int(rem / (size_t(grid.dims[1]) * grid.dims[2]));
        rem %= size_t(grid.dims[1]) * grid.dims[2];
        int y = int(rem / grid.dims[2]);
        int z = int(rem % grid.dims[2]);
        occ.occupied.push_back({x, y, z});
    }
    occ.canonicalize();

    std::vector<int> labels;
    if (!labels_path.empty()) {
        std::ifstream lin(labels_path, std::ios::binary | std::ios::ate);
        if (!lin) throw std::runtime_error("load_kitti_voxels: cannot open " + labels_path);
        if (size_t(lin.tellg()) != total * 2)
            throw std::runtime_error("load_kitti_voxels: wrong label file size");
        lin.seekg(0);
        std::vector<uint16_t> raw(total);
        lin.read(reinterpret_cast<char*>(raw.data()), std::streamsize(total * 2));
        labels.reserve(total);
        for (uint16_t v : raw) {
            if (label_map.empty()) {
                labels.push_back(int(v));
            } else {
                auto it = label_map.find(int(v));
                if (it == label_map.end())
                    throw std::runtime_error("load_kitti_voxels: unmapped label id " +
                                             std::to_string(v));
                labels.push_back(it->second);
            }
        }
    }
    return {std::move(occ), std::move(labels)};
}

// The seeded desk-scale benchmark recipe: ground plane + boxes/cylinders +
// spheres, four classes, in the desk box.
inline SceneSpec benchmark_scene_spec(uint64_t base_seed, int scene_index,
                                      const GridConfig& box = desk_grid()) {
    SceneSpec spec;
    spec.box = box;
    spec.seed = mix_seed(base_seed, uint64_t(scene_index));
    Rng rng(spec.seed);
    Vec3 e = box.extent();

    Primitive ground;
    ground.shape = Shape::Plane;
    // mid-voxel height so boundary ties cannot flip the occupied layer
    ground.center = {0, 0, box.origin.z + 0.9};
    ground.class_id = 0;
    spec.primitives.push_back(ground);

    int n_obstacles = 3 + int(rng.below(6));   // 3..8 boxes/cylinders
    for (int i = 0; i < n_obstacles; ++i) {
        Primitive p;
        bool is_box = rng.uniform() < 0.5;
        p.shape = is_box ? Shape::Box : Shape::Cylinder;
        p.class_id = is_box ? 1 : 2;
        p.yaw = rng.uniform(0.0, 3.14159265358979323846);
        double margin = 1.2;
        p.center = {box.origin.x + rng.uniform(margin, e.x - margin),
                    box.origin.y + rng.uniform(margin, e.y - margin), 0.0};
        if (is_box) {
            p.size = {rng.uniform(0.3, 1.0), rng.uniform(0.3, 1.0), rng.uniform(0.4, 0.9)};
        } else {
            p.size = {rng.uniform(0.25, 0.7), 0.0, rng.uniform(0.4, 0.9)};
            p.yaw = 0.0;
        }
        p.center.z = ground.center.z + p.size.z;   // resting on the ground
        spec.primitives.push_back(p);
    }
    int n_spheres = int(rng.below(3));   // 0..2
    for (int i = 0; i < n_spheres; ++i) {
        Primitive p;
        p.shape = Shape::Sphere;
        p.class_id = 3;
        p.size = {rng.uniform(0.35, 0.8), 0, 0};
        double margin = 1.2;
        p.center = {box.origin.x + rng.uniform(margin, e.x - margin),
                    box.origin.y + rng.uniform(margin, e.y - margin), 0.0};
        p.center.z = ground.center.z + p.size.x;
        spec.primitives.push_back(p);
    }
    return spec;
}

// Full benchmark record: analytic GT plus a simulated LiDAR sweep as input.
inline SceneRecord benchmark_scene(uint64_t base_seed, int scene_index, double gt_density = 90.0,
                                   const GridConfig& box = desk_grid()) {
    SceneSpec spec = benchmark_scene_spec(base_seed, scene_index, box);
    SceneRecord rec = synth_scene(spec, gt_density);
    rec.id = "scene" + std::to_string(scene_index);
    LidarConfig lidar;
    double ground_z = spec.primitives[0].center.z;
    double box_top = box.origin.z + box.extent().z;
    double height = std::min(1.4, 0.7 * (box_top - ground_z));
    lidar.sensor = {box.origin.x + 0.2, 0.0, ground_z + height};
    lidar.seed = mix_seed(spec.seed, 0xa11ce);
    lidar.noise_sigma = 0.005;
    rec.input_cloud = lidar_scan(rec, lidar);
    rec.sensor = lidar.sensor;
    return rec;
}

} // namespace lode
