#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lode/extract.hpp"
#include "lode/ply.hpp"
#include "lode/trainer.hpp"

namespace lode {

namespace fs = std::filesystem;
using nlohmann::json;

// Flat key=value configuration: file lines (# comments) overridden by
// command-line pairs; precedence CLI > file > defaults.
struct KvConfig {
    std::map<std::string, std::string> values;
    std::string config_path;

    static KvConfig from_args(const std::vector<std::string>& args) {
        KvConfig cfg;
        // first pass: find --config, load the file, then apply overrides
        for (size_t i = 0; i + 1 < args.size(); i += 2)
            if (args[i] == "--config") cfg.load_file(args[i + 1]);
        for (size_t i = 0; i < args.size(); i += 2) {
            if (args[i].rfind("--", 0) != 0)
                throw std::invalid_argument("expected --key value, got '" + args[i] + "'");
            if (i + 1 >= args.size())
                throw std::invalid_argument("missing value for " + args[i]);
            std::string key = args[i].substr(2);
            if (key == "config") continue;
            cfg.values[key] = args[i + 1];
        }
        return cfg;
    }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("config: cannot open " + path);
        config_path = path;
        std::string line;
        while (std::getline(in, line)) {
            size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                size_t a = s.find_first_not_of(" \t\r");
                size_t b = s.find_last_not_of(" \t\r");
                return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
            };
            std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
            if (!key.empty() && !values.count(key)) values[key] = val;
        }
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }
    std::string str(const std::string& key, const std::string& dflt) const {
        auto it = values.find(key);
        return it == values.end() ? dflt : it->second;
    }
    double num(const std::string& key, double dflt) const {
        auto it = values.find(key);
        return it == values.end() ? dflt : std::stod(it->second);
    }
    long integer(const std::string& key, long dflt) const {
        auto it = values.find(key);
        return it == values.end() ? dflt : std::stol(it->second);
    }
    bool flag(const std::string& key, bool dflt) const {
        auto it = values.find(key);
        if (it == values.end()) return dflt;
        return it->second == "1" || it->second == "true" || it->second == "on" ||
               it->second == "yes";
    }
    std::vector<int> int_list(const std::string& key, std::vector<int> dflt) const {
        auto it = values.find(key);
        if (it == values.end()) return dflt;
        std::vector<int> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
        return out;
    }
};

inline uint64_t fnv1a_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("hash: cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= uint8_t(buf[i]);
            h *= 0x100000001b3ull;
        }
        if (!in) break;
    }
    return h;
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)v);
    return buf;
}

// Output root: --out_root > LODE_OUT_ROOT > ./runs. Run directories are
// seed-named and timestamp-free so reruns land on identical paths.
inline fs::path resolve_out_root(const KvConfig& cfg) {
    if (cfg.has("out_root")) return cfg.str("out_root", "");
    if (const char* env = std::getenv("LODE_OUT_ROOT")) return env;
    return "runs";
}

inline fs::path run_dir(const KvConfig& cfg, const std::string& command, uint64_t seed) {
    if (cfg.has("out")) return cfg.str("out", "");
    std::string name = cfg.str("name", "");
    std::string leaf = command + (name.empty() ? "" : "-" + name) + "-seed" + std::to_string(seed);
    return resolve_out_root(cfg) / leaf;
}

// One manifest per run: command, resolved config, seed, and output hashes.
inline void write_run_manifest(const fs::path& dir, const std::string& command,
                               const KvConfig& cfg, uint64_t seed,
                               const std::vector<fs::path>& artifacts) {
    json m;
    m["command"] = command;
    m["config_file"] = cfg.config_path;
    m["seed"] = seed;
    m["output_dir"] = dir.string();
    json resolved = json::object();
    for (const auto& [k, v] : cfg.values) resolved[k] = v;
    m["config"] = resolved;
    json hashes = json::object();
    std::vector<fs::path> sorted = artifacts;
    std::sort(sorted.begin(), sorted.end());
    for (const fs::path& p : sorted)
        hashes[fs::relative(p, dir).string()] = hex64(fnv1a_file(p.string()));
    m["artifacts"] = hashes;
    std::ofstream out(dir / "manifest.json");
    out << m.dump(2) << "\n";
    if (!out) throw std::runtime_error("manifest: write failed");
}

inline json grid_to_json(const GridConfig& g) {
    return json{{"origin", {g.origin.x, g.origin.y, g.origin.z}},
                {"voxel_edge", g.voxel_edge},
                {"dims", {g.dims[0], g.dims[1], g.dims[2]}}};
}

inline GridConfig grid_from_json(const json& j) {
    GridConfig g;
    g.origin = {j["origin"][0], j["origin"][1], j["origin"][2]};
    g.voxel_edge = j["voxel_edge"];
    g.dims = {j["dims"][0], j["dims"][1], j["dims"][2]};
    return g;
}

inline GridConfig grid_from_config(const KvConfig& cfg) {
    GridConfig g = desk_grid();
    if (cfg.has("grid.preset") && cfg.str("grid.preset", "") == "kitti") g = GridConfig{};
    g.origin = {cfg.num("grid.origin_x", g.origin.x), cfg.num("grid.origin_y", g.origin.y),
                cfg.num("grid.origin_z", g.origin.z)};
    g.voxel_edge = cfg.num("grid.voxel_edge", g.voxel_edge);
    g.dims = {int(cfg.integer("grid.dims_x", g.dims[0])),
              int(cfg.integer("grid.dims_y", g.dims[1])),
              int(cfg.integer("grid.dims_z", g.dims[2]))};
    return g;
}

struct Dataset {
    GridConfig box;
    int classes = 0;
    std::vector<SceneRecord> scenes;
};

// Dataset manifest: one JSON file naming scene ids and file paths. Synthetic
// scenes carry input/gt PLY pairs; real scans carry .bin points plus the
// bit-packed voxel ground truth.
inline Dataset load_dataset(const std::string& manifest_path, int normal_k = 16) {
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("dataset: cannot open " + manifest_path);
    json m = json::parse(in);
    Dataset ds;
    ds.box = grid_from_json(m.at("box"));
    ds.classes = m.value("classes", 0);
    fs::path base = fs::path(manifest_path).parent_path();
    for (const json& s : m.at("scenes")) {
        SceneRecord rec;
        rec.box = ds.box;
        rec.id = s.at("id");
        if (s.contains("sensor"))
            rec.sensor = {s["sensor"][0], s["sensor"][1], s["sensor"][2]};
        if (s.contains("input")) {
            rec.input_cloud = read_ply((base / s.at("input").get<std::string>()).string());
            rec.gt_cloud = read_ply((base / s.at("gt").get<std::string>()).string());
            rec.gt_occ = voxelize(rec.gt_cloud, ds.box);
        } else {
            rec.input_cloud =
                load_kitti_points((base / s.at("points").get<std::string>()).string());
            std::string labels = s.value("labels", "");
            auto [occ, lab] = load_kitti_voxels(
                (base / s.at("voxels").get<std::string>()).string(),
                labels.empty() ? "" : (base / labels).string(), ds.box);
            rec.gt_occ = std::move(occ);
            // dense GT surface points are approximated by occupied voxel
            // centers with PCA-estimated normals
            PointCloud centers;
            for (const Coord& c : rec.gt_occ.occupied)
                centers.points.push_back(voxel_center(c, ds.box));
            if (!lab.empty()) {
                centers.labels.reserve(centers.points.size());
                for (const Coord& c : rec.gt_occ.occupied)
                    centers.labels.push_back(
                        lab[(size_t(c.x) * ds.box.dims[1] + c.y) * ds.box.dims[2] + c.z]);
            }
            rec.gt_cloud = estimate_normals(centers, normal_k, rec.sensor);
            if (centers.has_labels() && !rec.gt_cloud.has_labels()) rec.gt_cloud.labels.clear();
        }
        ds.scenes.push_back(std::move(rec));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// synth: write the seeded synthetic benchmark fixture

inline int cmd_synth(const KvConfig& cfg) {
    uint64_t seed = uint64_t(cfg.integer("seed", 1));
    int count = int(cfg.integer("scenes", 50));
    if (count < 1) throw std::invalid_argument("synth: scene count must be >= 1");
    double density = cfg.num("gt_density", 90.0);
    GridConfig box = grid_from_config(cfg);
    fs::path dir = run_dir(cfg, "synth", seed);
    fs::create_directories(dir / "scenes");

    std::vector<fs::path> artifacts;
    json scenes = json::array();
    for (int i = 0; i < count; ++i) {
        SceneRecord rec = benchmark_scene(seed, i, density, box);
        std::string in_name = "scenes/" + rec.id + "_input.ply";
        std::string gt_name = "scenes/" + rec.id + "_gt.ply";
        write_ply((dir / in_name).string(), rec.input_cloud);
        write_ply((dir / gt_name).string(), rec.gt_cloud);
        scenes.push_back(json{{"id", rec.id},
                              {"input", in_name},
                              {"gt", gt_name},
                              {"sensor", {rec.sensor.x, rec.sensor.y, rec.sensor.z}}});
        artifacts.push_back(dir / in_name);
        artifacts.push_back(dir / gt_name);
    }
    json manifest;
    manifest["box"] = grid_to_json(box);
    manifest["classes"] = 4;
    manifest["seed"] = seed;
    manifest["scenes"] = scenes;
    {
        std::ofstream out(dir / "dataset.json");
        out << manifest.dump(2) << "\n";
    }
    artifacts.push_back(dir / "dataset.json");
    write_run_manifest(dir, "synth", cfg, seed, artifacts);
    std::cout << "wrote " << count << " scenes to " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

inline TrainConfig train_config_from(const KvConfig& cfg, const Dataset& ds) {
    TrainConfig tc;
    std::string mode = cfg.str("mode", "lode");
    if (mode == "lode") tc.mode = TrainMode::Lode;
    else if (mode == "siren") tc.mode = TrainMode::SirenBaseline;
    else if (mode == "fourier") tc.mode = TrainMode::FourierBaseline;
    else throw std::invalid_argument("train: unknown mode " + mode);

    tc.learning_rate = cfg.num("lr", 1e-4);
    tc.adam_beta1 = cfg.num("adam.beta1", 0.9);
    tc.adam_beta2 = cfg.num("adam.beta2", 0.999);
    tc.adam_eps = cfg.num("adam.eps", 1e-8);
    tc.epochs = int(cfg.integer("epochs", 30));
    tc.steps_per_scene = int(cfg.integer("steps_per_scene", 1));
    tc.seed = uint64_t(cfg.integer("seed", 1));
    tc.lr_cosine = cfg.flag("lr_cosine", false);
    tc.threads = int(cfg.integer("threads", 1));
    tc.chunk = int(cfg.integer("chunk", 256));

    tc.weights.lambda1 = cfg.num("lambda1", 3000.0);
    tc.weights.lambda2 = cfg.num("lambda2", 100.0);
    tc.weights.lambda3 = cfg.num("lambda3", 100.0);
    tc.weights.lambda4 = cfg.num("lambda4", 50.0);
    tc.weights.lambda5 = cfg.num("lambda5", 100.0);
    tc.weights.psi_alpha = cfg.num("psi_alpha", 100.0);

    tc.sampler.n_on = int(cfg.integer("n_on", 16000));
    tc.sampler.n_off = int(cfg.integer("n_off", 16000));
    tc.sampler.normal_k = int(cfg.integer("normal_k", 16));
    tc.sampler.reject_radius = cfg.num("reject_radius", 0.0);

    std::string sem = cfg.str("semantic", "off");
    if (sem == "b") {
        if (ds.classes < 2) throw std::invalid_argument("train: dataset has no classes");
        tc.semantic_classes = ds.classes;
        tc.weights.lambda6 = cfg.num("lambda6", 50.0);
    } else if (sem != "off" && sem != "a") {
        throw std::invalid_argument("train: unknown semantic extension " + sem);
    }

    tc.pe.enabled = cfg.flag("pe.enabled", tc.mode != TrainMode::SirenBaseline);
    tc.pe.levels = int(cfg.integer("pe.levels", 10));
    tc.pe.include_xyz = cfg.flag("pe.include_xyz", false);
    tc.mlp_width = int(cfg.integer("mlp.width", 256));
    tc.mlp_hidden = int(cfg.integer("mlp.hidden", 4));
    std::string act = cfg.str("mlp.activation",
                              tc.mode == TrainMode::FourierBaseline ? "relu" : "sine");
    tc.activation = act == "relu" ? Activation::Relu : Activation::Sine;
    tc.omega0 = cfg.num("omega0", 30.0);
    tc.grad_mode = cfg.str("grad_mode", "total") == "partial" ? GradMode::Partial
                                                              : GradMode::Total;
    tc.sample_mode = cfg.str("sample_mode", "trilinear") == "nearest" ? SampleMode::Nearest
                                                                      : SampleMode::Trilinear;

    tc.encoder.enc_channels = cfg.int_list("enc.channels", {16, 32, 64, 128, 256});
    tc.encoder.dec_channels = cfg.int_list("dec.channels", {});
    tc.encoder.scale_size = int(cfg.integer("enc.scale", 4));
    tc.encoder.d_se = int(cfg.integer("enc.d_se", 256));
    std::string placement = cfg.str("enc.pruning", "all");
    if (placement == "all") tc.encoder.pruning_blocks = -1;
    else if (placement.rfind("last", 0) == 0)
        tc.encoder.pruning_blocks = std::stoi(placement.substr(4));
    else throw std::invalid_argument("train: unknown pruning placement " + placement);
    tc.encoder.output_block_convs = int(cfg.integer("enc.out_convs", 2));
    tc.encoder.prune_threshold = cfg.num("enc.prune_threshold", 0.5);
    return tc;
}

inline int cmd_train(const KvConfig& cfg) {
    Dataset ds = load_dataset(cfg.str("dataset", ""), int(cfg.integer("normal_k", 16)));
    TrainConfig tc = train_config_from(cfg, ds);
    fs::path dir = run_dir(cfg, "train", tc.seed);
    fs::create_directories(dir);

    std::ofstream log(dir / "train_log.csv", std::ios::binary);
    log << log_header();
    TrainState st;
    if (cfg.has("resume")) {
        TrainState prev = load_checkpoint(cfg.str("resume", ""));
        prev.cfg.epochs = tc.epochs;   // extend the horizon, keep everything else
        st = fit(ds.scenes, prev.cfg, &log, &prev);
    } else {
        st = fit(ds.scenes, tc, &log);
    }
    log.close();
    fs::path ck = dir / "checkpoint.lode";
    save_checkpoint(ck.string(), st);
    write_run_manifest(dir, "train", cfg, tc.seed, {ck, dir / "train_log.csv"});
    std::cout << "trained " << st.step << " steps (" << st.skipped
              << " skipped), checkpoint at " << ck.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// shared inference helpers

// builds the conditioned field for one scene from a trained state
inline ImplicitField<float> field_for_scene(const TrainState& st, const SceneRecord& scene) {
    if (st.cfg.mode == TrainMode::Lode) {
        OccupancyVolume occ = voxelize(scene.input_cloud, scene.box);
        if (occ.occupied.empty()) {
            // nothing observed: evaluate the field on an all-zero embedding volume
            SparseTensor<float> empty;
            empty.stride = st.cfg.encoder.scale_size;
            empty.channels = st.cfg.encoder.d_se;
            empty.feats = Matrix<float>(0, empty.channels);
            return st.make_field(std::move(empty), scene.box, scene.id);
        }
        SparseTensor<float> v_occ = sparse_from_occupancy<float>(occ);
        EncodeResult<float> enc = st.encoder.encode(v_occ, nullptr);
        return st.make_field(std::move(enc.v_se), scene.box, scene.id);
    }
    if (!st.scene_mlps.count(scene.id))
        throw std::runtime_error("checkpoint has no per-scene net for " + scene.id);
    return st.make_field({}, scene.box, scene.id);
}

inline std::vector<double> sweep_range(const std::string& spec) {
    // "lo:step:hi"
    double lo, step, hi;
    char c1, c2;
    std::istringstream ss(spec);
    if (!(ss >> lo >> c1 >> step >> c2 >> hi) || c1 != ':' || c2 != ':' || step <= 0)
        throw std::invalid_argument("bad sweep spec '" + spec + "' (want lo:step:hi)");
    std::vector<double> out;
    for (double v = lo; v <= hi + 1e-12; v += step) out.push_back(v);
    return out;
}

// per-voxel majority labels of a labeled point cloud
inline LabeledOccupancy labeled_occupancy(const PointCloud& cloud, const GridConfig& grid) {
    std::map<Coord, std::map<int, int>> votes;
    for (size_t i = 0; i < cloud.size(); ++i) {
        Coord c = point_cell(cloud.points[i], grid);
        if (!grid.in_dims(c)) continue;
        votes[c][cloud.labels[i]]++;
    }
    LabeledOccupancy out;
    for (auto& [c, vote] : votes) {
        int best_label = -1, best = -1;
        for (auto& [l, n] : vote)
            if (n > best) {
                best = n;
                best_label = l;
            }
        out[c] = best_label;
    }
    return out;
}

struct SceneEval {
    std::string id;
    IoUReport completion;
    std::optional<IoUReport> semantic;
};

// Completion (and optional semantic) evaluation of one scene at v_th on the
// voxel-center lattice.
inline SceneEval evaluate_one(const TrainState& st, const SceneRecord& scene, int n_inf,
                              double v_th, int threads, const std::string& semantic_ext,
                              int classes, int knn_k = 5) {
    ImplicitField<float> field = field_for_scene(st, scene);
    InferenceConfig icfg;
    icfg.n_inf = n_inf;
    icfg.v_th = v_th;
    icfg.threads = threads;
    SdfGrid grid = evaluate_grid(field, icfg);
    PointCloud pts = extract_surface_points(grid, v_th);
    SceneEval ev;
    ev.id = scene.id;
    ev.completion = evaluate_scene(pts, scene.gt_occ, scene.box);

    if (semantic_ext != "off" && scene.gt_cloud.has_labels() && !pts.points.empty()) {
        if (semantic_ext == "b") {
            if (!field.semantic_mlp) throw std::runtime_error("checkpoint has no semantic head");
            pts.labels.reserve(pts.size());
            for (const Vec3& p : pts.points) {
                auto logits = semantic_eval(field, p);
                pts.labels.push_back(
                    int(std::max_element(logits.begin(), logits.end()) - logits.begin()));
            }
        } else if (semantic_ext == "a") {
            const PointCloud& src =
                scene.input_cloud.has_labels() ? scene.input_cloud : scene.gt_cloud;
            pts.labels = knn_label_transfer(src, pts, knn_k);
        } else {
            throw std::invalid_argument("unknown semantic extension " + semantic_ext);
        }
        LabeledOccupancy pred = labeled_occupancy(pts, scene.box);
        LabeledOccupancy gt = labeled_occupancy(scene.gt_cloud, scene.box);
        ev.semantic = miou(pred, gt, classes);
    }
    return ev;
}

// ---------------------------------------------------------------------------
// complete: implicit completion of one scene to points + meshes

inline int cmd_complete(const KvConfig& cfg) {
    TrainState st = load_checkpoint(cfg.str("checkpoint", ""));
    Dataset ds = load_dataset(cfg.str("dataset", ""), int(cfg.integer("normal_k", 16)));
    std::string scene_id = cfg.str("scene", ds.scenes.empty() ? "" : ds.scenes.front().id);
    const SceneRecord* scene = nullptr;
    for (const auto& s : ds.scenes)
        if (s.id == scene_id) scene = &s;
    if (!scene) throw std::invalid_argument("complete: scene not found: " + scene_id);

    uint64_t seed = st.cfg.seed;
    fs::path dir = run_dir(cfg, "complete", seed);
    fs::create_directories(dir);
    int longest = std::max({ds.box.dims[0], ds.box.dims[1], ds.box.dims[2]});
    std::vector<int> resolutions = cfg.int_list("resolution", {longest});
    double v_th = cfg.num("vth", 0.1);
    int threads = int(cfg.integer("threads", 1));
    std::string semantic_ext = cfg.str("semantic", "off");

    ImplicitField<float> field = field_for_scene(st, *scene);
    std::vector<fs::path> artifacts;
    bool first = true;
    for (int res : resolutions) {
        if (res < 2) throw std::invalid_argument("complete: resolution must be >= 2");
        InferenceConfig icfg;
        icfg.n_inf = res;
        icfg.v_th = v_th;
        icfg.threads = threads;
        SdfGrid grid = evaluate_grid(field, icfg);
        TriangleMesh mesh = marching_cubes(grid);
        if (semantic_ext == "b" && field.semantic_mlp) {
            mesh.labels.reserve(mesh.vertices.size());
            for (const Vec3& v : mesh.vertices) {
                auto logits = semantic_eval(field, v);
                mesh.labels.push_back(
                    int(std::max_element(logits.begin(), logits.end()) - logits.begin()));
            }
        }
        std::string stem = scene_id + "_r" + std::to_string(res);
        write_mesh_ply((dir / (stem + ".ply")).string(), mesh);
        write_mesh_obj((dir / (stem + ".obj")).string(), mesh);
        artifacts.push_back(dir / (stem + ".ply"));
        artifacts.push_back(dir / (stem + ".obj"));

        if (first) {
            PointCloud pts = extract_surface_points(grid, v_th);
            if (semantic_ext == "a" && scene->input_cloud.has_labels() && !pts.points.empty())
                pts.labels = knn_label_transfer(scene->input_cloud, pts,
                                                int(cfg.integer("knn_k", 5)));
            else if (semantic_ext == "b" && field.semantic_mlp) {
                pts.labels.reserve(pts.size());
                for (const Vec3& p : pts.points) {
                    auto logits = semantic_eval(field, p);
                    pts.labels.push_back(
                        int(std::max_element(logits.begin(), logits.end()) - logits.begin()));
                }
            }
            write_ply((dir / (scene_id + "_points.ply")).string(), pts);
            artifacts.push_back(dir / (scene_id + "_points.ply"));

            if (cfg.has("vth_sweep")) {
                auto ths = sweep_range(cfg.str("vth_sweep", ""));
                auto curve = vth_sweep(grid, scene->gt_occ, scene->box, ths);
                std::ofstream csv(dir / (scene_id + "_vth_curve.csv"), std::ios::binary);
                csv << "v_th,points,iou\n";
                for (size_t i = 0; i < curve.size(); ++i) {
                    char buf[96];
                    std::snprintf(buf, sizeof buf, "%.9g,%zu,%.9g\n", curve[i].first,
                                  extract_surface_points(grid, curve[i].first).size(),
                                  curve[i].second);
                    csv << buf;
                }
                artifacts.push_back(dir / (scene_id + "_vth_curve.csv"));
            }
            first = false;
        }
    }
    write_run_manifest(dir, "complete", cfg, seed, artifacts);
    std::cout << "completed " << scene_id << " at " << resolutions.size()
              << " resolution(s) under " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval: corpus metrics, the Input protocol, and the ablation axes

inline int cmd_eval(const KvConfig& cfg) {
    Dataset ds = load_dataset(cfg.str("dataset", ""), int(cfg.integer("normal_k", 16)));
    int longest = std::max({ds.box.dims[0], ds.box.dims[1], ds.box.dims[2]});
    int n_inf = int(cfg.integer("n_inf", longest));
    double v_th = cfg.num("vth", 0.1);
    int threads = int(cfg.integer("threads", 1));
    std::string semantic_ext = cfg.str("semantic", "off");
    bool input_only = cfg.flag("input_only", false) || !cfg.has("checkpoint");

    uint64_t seed = uint64_t(cfg.integer("seed", 0));
    fs::path dir = run_dir(cfg, "eval", seed);
    fs::create_directories(dir);
    std::vector<fs::path> artifacts;

    json report;
    std::ofstream per_scene(dir / "per_scene.csv", std::ios::binary);
    per_scene << "scene,iou,miou\n";

    auto write_row = [&](const std::string& id, double iou_v, double miou_v) {
        char buf[128];
        if (miou_v >= 0)
            std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g\n", id.c_str(), iou_v, miou_v);
        else
            std::snprintf(buf, sizeof buf, "%s,%.9g,\n", id.c_str(), iou_v);
        per_scene << buf;
    };

    if (input_only) {
        // Table-1 "Input" row protocol: voxelized sparse input against GT
        double acc = 0.0;
        for (const auto& scene : ds.scenes) {
            IoUReport r = iou(voxelize(scene.input_cloud, scene.box), scene.gt_occ);
            write_row(scene.id, r.iou, -1);
            acc += r.iou;
        }
        report["protocol"] = "input";
        report["iou"] = acc / double(ds.scenes.size());
        std::cout << "input protocol corpus IoU: " << report["iou"] << "\n";
    } else {
        TrainState st = load_checkpoint(cfg.str("checkpoint", ""));
        std::string ablate = cfg.str("ablate", "off");
        if (ablate == "off") {
            double acc = 0.0, sacc = 0.0;
            int scount = 0;
            for (const auto& scene : ds.scenes) {
                SceneEval ev = evaluate_one(st, scene, n_inf, v_th, threads, semantic_ext,
                                            ds.classes, int(cfg.integer("knn_k", 5)));
                write_row(scene.id, ev.completion.iou,
                          ev.semantic ? ev.semantic->miou.value() : -1);
                acc += ev.completion.iou;
                if (ev.semantic) {
                    sacc += ev.semantic->miou.value();
                    ++scount;
                }
            }
            report["protocol"] = "model";
            report["iou"] = acc / double(ds.scenes.size());
            if (scount > 0) report["miou"] = sacc / double(scount);
            std::cout << "corpus IoU: " << report["iou"];
            if (scount > 0) std::cout << "  mIoU: " << report["miou"];
            std::cout << "\n";
        } else if (ablate == "sampling") {
            // trilinear vs nearest at evaluation time, same checkpoint
            json rows = json::array();
            std::ofstream ab(dir / "ablate.csv", std::ios::binary);
            ab << "variant,iou\n";
            for (std::string variant : {"trilinear", "nearest"}) {
                TrainState v = st;
                v.cfg.sample_mode =
                    variant == "nearest" ? SampleMode::Nearest : SampleMode::Trilinear;
                double acc = 0.0;
                for (const auto& scene : ds.scenes)
                    acc += evaluate_one(v, scene, n_inf, v_th, threads, "off", ds.classes)
                               .completion.iou;
                double mean = acc / double(ds.scenes.size());
                rows.push_back(json{{"variant", variant}, {"iou", mean}});
                char buf[64];
                std::snprintf(buf, sizeof buf, "%s,%.9g\n", variant.c_str(), mean);
                ab << buf;
                std::cout << "sampling=" << variant << " IoU " << mean << "\n";
            }
            report["protocol"] = "ablate.sampling";
            report["rows"] = rows;
            artifacts.push_back(dir / "ablate.csv");
        } else if (ablate == "pe" || ablate == "shape" || ablate == "pruning") {
            // training-time axes: retrain each variant with the run's config
            std::vector<std::pair<std::string, KvConfig>> variants;
            auto base = cfg;
            base.values.erase("ablate");
            if (ablate == "pe") {
                KvConfig off = base;
                off.values["pe.enabled"] = "0";
                variants = {{"pe_off", off}, {"pe_on", base}};
            } else if (ablate == "shape") {
                KvConfig half = base;
                half.values["enc.d_se"] =
                    std::to_string(std::max(1L, cfg.integer("enc.d_se", 256) / 2));
                KvConfig coarse = base;
                coarse.values["enc.scale"] = std::to_string(cfg.integer("enc.scale", 4) * 2);
                variants = {{"base", base}, {"d_se_half", half}, {"scale_x2", coarse}};
            } else {
                KvConfig last1 = base;
                last1.values["enc.pruning"] = "last1";
                variants = {{"all", base}, {"last1", last1}};
            }
            json rows = json::array();
            std::ofstream ab(dir / "ablate.csv", std::ios::binary);
            ab << "variant,iou\n";
            for (auto& [name, vcfg] : variants) {
                TrainConfig tc = train_config_from(vcfg, ds);
                TrainState v = fit(ds.scenes, tc);
                double acc = 0.0;
                for (const auto& scene : ds.scenes)
                    acc += evaluate_one(v, scene, n_inf, v_th, threads, "off", ds.classes)
                               .completion.iou;
                double mean = acc / double(ds.scenes.size());
                rows.push_back(json{{"variant", name}, {"iou", mean}});
                char buf[96];
                std::snprintf(buf, sizeof buf, "%s,%.9g\n", name.c_str(), mean);
                ab << buf;
                std::cout << "variant=" << name << " IoU " << mean << "\n";
            }
            report["protocol"] = "ablate." + ablate;
            report["rows"] = rows;
            artifacts.push_back(dir / "ablate.csv");
        } else {
            throw std::invalid_argument("eval: unknown ablation axis " + ablate);
        }

        if (cfg.has("vth_sweep") && ablate == "off") {
            auto ths = sweep_range(cfg.str("vth_sweep", ""));
            std::ofstream csv(dir / "curve.csv", std::ios::binary);
            csv << "v_th,iou\n";
            std::vector<double> acc(ths.size(), 0.0);
            for (const auto& scene : ds.scenes) {
                ImplicitField<float> field = field_for_scene(st, scene);
                InferenceConfig icfg;
                icfg.n_inf = n_inf;
                icfg.threads = threads;
                SdfGrid grid = evaluate_grid(field, icfg);
                auto curve = vth_sweep(grid, scene.gt_occ, scene.box, ths);
                for (size_t i = 0; i < curve.size(); ++i) acc[i] += curve[i].second;
            }
            for (size_t i = 0; i < ths.size(); ++i) {
                char buf[64];
                std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", ths[i],
                              acc[i] / double(ds.scenes.size()));
                csv << buf;
            }
            artifacts.push_back(dir / "curve.csv");
        }
    }
    per_scene.close();
    {
        std::ofstream out(dir / "report.json");
        out << report.dump(2) << "\n";
    }
    artifacts.push_back(dir / "report.json");
    artifacts.push_back(dir / "per_scene.csv");
    write_run_manifest(dir, "eval", cfg, seed, artifacts);
    return 0;
}

inline int cli_main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (args.empty() || args[0] == "--help" || args[0] == "-h") {
        std::cout << "usage: lode <synth|train|complete|eval> [--config file] [--key value ...]\n"
                     "  synth     write the seeded synthetic benchmark dataset\n"
                     "  train     fit a model (--mode lode|siren|fourier, --semantic a|b|off)\n"
                     "  complete  extract points and meshes from a checkpoint\n"
                     "            (--resolution n[,n2,...], --vth t, --vth_sweep lo:step:hi)\n"
                     "  eval      corpus IoU/mIoU report (--input_only 1, --ablate axis)\n";
        return args.empty() ? 1 : 0;
    }
    std::string command = args[0];
    KvConfig cfg = KvConfig::from_args({args.begin() + 1, args.end()});
    try {
        if (command == "synth") return cmd_synth(cfg);
        if (command == "train") return cmd_train(cfg);
        if (command == "complete") return cmd_complete(cfg);
        if (command == "eval") return cmd_eval(cfg);
        std::cerr << "error: unknown command " << command << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

} // namespace lode
