#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "lode/trainer.hpp"

using namespace lode;

namespace {

GridConfig micro_box() {
    GridConfig g;
    g.origin = {0, -1.6, -0.8};
    g.voxel_edge = 0.2;
    g.dims = {16, 16, 8};
    return g;
}

SceneRecord micro_scene(uint64_t seed) {
    SceneSpec spec;
    spec.box = micro_box();
    spec.seed = seed;
    Primitive plane;
    plane.shape = Shape::Plane;
    plane.center = {0, 0, -0.3};
    plane.class_id = 0;
    Primitive sphere;
    sphere.shape = Shape::Sphere;
    sphere.center = {1.6, 0.0, 0.2};
    sphere.size = {0.5, 0, 0};
    sphere.class_id = 3;
    spec.primitives = {plane, sphere};
    SceneRecord rec = synth_scene(spec, 220.0);
    rec.id = "micro" + std::to_string(seed);
    LidarConfig lidar;
    lidar.sensor = {0.1, 0.0, 0.4};
    lidar.channels = 12;
    lidar.elev_min_deg = -50.0;
    lidar.elev_max_deg = 8.0;
    lidar.azimuth_min_deg = -70.0;
    lidar.azimuth_max_deg = 70.0;
    lidar.azimuth_step_deg = 2.0;
    lidar.seed = seed;
    rec.input_cloud = lidar_scan(rec, lidar);
    rec.sensor = lidar.sensor;
    return rec;
}

TrainConfig micro_cfg() {
    TrainConfig cfg;
    cfg.encoder.enc_channels = {4, 6, 8, 10};
    cfg.encoder.dec_channels = {8, 6};
    cfg.encoder.scale_size = 2;
    cfg.encoder.d_se = 4;
    cfg.mlp_width = 16;
    cfg.mlp_hidden = 2;
    cfg.pe.levels = 2;
    cfg.sampler.n_on = 32;
    cfg.sampler.n_off = 32;
    cfg.epochs = 4;
    cfg.seed = 2024;
    cfg.learning_rate = 1e-4;
    return cfg;
}

std::string checkpoint_bytes(TrainState& st) {
    const char* path = "/tmp/lode_ck_test.bin";
    save_checkpoint(path, st);
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    std::remove(path);
    return ss.str();
}

} // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("adam_step: zero gradient leaves parameters unchanged") {
    std::vector<double> p{1.0, -2.0, 3.0}, g(3, 0.0);
    std::vector<NamedTensor<double>> ps{{"p", {3}, p.data(), 3}}, gs{{"g", {3}, g.data(), 3}};
    std::vector<std::vector<double>> m{{0, 0, 0}}, v{{0, 0, 0}};
    uint64_t t = 0;
    adam_step(ps, gs, m, v, t, 0.1);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("adam_step: constant gradient matches the hand-iterated recurrence") {
    double p = 0.5;
    const double g = 0.3, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> pv{p}, gv{g};
    std::vector<NamedTensor<double>> ps{{"p", {1}, pv.data(), 1}}, gs{{"g", {1}, gv.data(), 1}};
    std::vector<std::vector<double>> m{{0}}, v{{0}};
    uint64_t t = 0;
    double mm = 0.0, vv = 0.0, expect = p;
    for (int it = 1; it <= 20; ++it) {
        adam_step(ps, gs, m, v, t, lr, b1, b2, eps);
        mm = b1 * mm + (1 - b1) * g;
        vv = b2 * vv + (1 - b2) * g * g;
        double mhat = mm / (1 - std::pow(b1, it));
        double vhat = vv / (1 - std::pow(b2, it));
        expect -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(pv[0] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("adam_step: first step is approximately -lr * sign(g)") {
    for (double g : {2.5, -0.004}) {
        std::vector<double> pv{0.0}, gv{g};
        std::vector<NamedTensor<double>> ps{{"p", {1}, pv.data(), 1}},
            gs{{"g", {1}, gv.data(), 1}};
        std::vector<std::vector<double>> m{{0}}, v{{0}};
        uint64_t t = 0;
        adam_step(ps, gs, m, v, t, 0.001);
        CHECK(pv[0] == doctest::Approx(-0.001 * (g > 0 ? 1.0 : -1.0)).epsilon(1e-4));
    }
}

TEST_CASE("checkpoint: save -> load -> save produces identical bytes") {
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 1;
    std::vector<SceneRecord> data{micro_scene(1)};
    TrainState st = fit(data, cfg);
    std::string bytes1 = checkpoint_bytes(st);
    const char* path = "/tmp/lode_ck_roundtrip.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes1.data(), std::streamsize(bytes1.size()));
    }
    TrainState st2 = load_checkpoint(path);
    std::string bytes2 = checkpoint_bytes(st2);
    CHECK(bytes1 == bytes2);
    std::remove(path);
}

TEST_CASE("checkpoint: truncated file and bad magic raise") {
    const char* path = "/tmp/lode_ck_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "LODE";
    }
    CHECK_THROWS(read_checkpoint_file(path));
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPExxxxxxxxxxxxxxxx";
    }
    CHECK_THROWS(read_checkpoint_file(path));
    std::remove(path);
    CHECK_THROWS(read_checkpoint_file("/tmp/does_not_exist_ck.bin"));
}

TEST_CASE("fit: zero epochs returns the initialization") {
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 0;
    std::vector<SceneRecord> data{micro_scene(2)};
    TrainState trained = fit(data, cfg);
    TrainState fresh;
    fresh.cfg = cfg;
    fresh.init_parameters(&data);
    auto a = trained.params(), b = fresh.params();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t j = 0; j < a[i].count; ++j) CHECK(a[i].data[j] == b[i].data[j]);
    CHECK(trained.step == 0);
}

TEST_CASE("fit: identical seeds give byte-identical checkpoints and logs") {
    TrainConfig cfg = micro_cfg();
    std::vector<SceneRecord> data{micro_scene(3), micro_scene(4)};
    std::ostringstream log1, log2;
    TrainState a = fit(data, cfg, &log1);
    TrainState b = fit(data, cfg, &log2);
    CHECK(a.step == uint64_t(cfg.epochs) * data.size());
    CHECK(a.skipped == 0);
    CHECK(log1.str() == log2.str());
    CHECK(checkpoint_bytes(a) == checkpoint_bytes(b));

    TrainConfig other = cfg;
    other.seed = 9999;
    TrainState c = fit(data, other);
    CHECK(checkpoint_bytes(a) != checkpoint_bytes(c));
}

TEST_CASE("fit: thread count does not change the result") {
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 2;
    cfg.chunk = 8;
    std::vector<SceneRecord> data{micro_scene(5)};
    cfg.threads = 1;
    TrainState a = fit(data, cfg);
    cfg.threads = 3;
    TrainState b = fit(data, cfg);
    // thread count is not part of the training semantics: identical except the
    // config words storing it
    auto pa = a.params(), pb = b.params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
        for (size_t j = 0; j < pa[i].count; ++j) CHECK(pa[i].data[j] == pb[i].data[j]);
}

TEST_CASE("fit: resumed training matches uninterrupted training step for step") {
    TrainConfig cfg = micro_cfg();
    cfg.epochs = 4;
    std::vector<SceneRecord> data{micro_scene(6), micro_scene(7)};
    std::ostringstream log_full;
    TrainState full = fit(data, cfg, &log_full);

    TrainConfig half = cfg;
    half.epochs = 2;
    std::ostringstream log_a;
    TrainState part = fit(data, half, &log_a);
    const char* path = "/tmp/lode_ck_resume.bin";
    save_checkpoint(path, part);
    TrainState restored = load_checkpoint(path);
    restored.cfg.epochs = 4;   // continue to the full horizon
    std::ostringstream log_b;
    TrainState resumed = fit(data, restored.cfg, &log_b, &restored);
    std::remove(path);

    CHECK(log_a.str() + log_b.str() == log_full.str());
    CHECK(checkpoint_bytes(resumed) == checkpoint_bytes(full));
}

TEST_CASE("fit: baseline mode trains one net per scene and skips the encoder") {
    TrainConfig cfg = micro_cfg();
    cfg.mode = TrainMode::SirenBaseline;
    cfg.pe.enabled = false;
    cfg.epochs = 2;
    cfg.steps_per_scene = 3;
    std::vector<SceneRecord> data{micro_scene(8), micro_scene(9)};
    TrainState st = fit(data, cfg);
    CHECK(st.scene_mlps.size() == 2);
    Checkpoint ck = make_checkpoint(st);
    CHECK(ck.find("encoder/k0/weight") == nullptr);
    CHECK(ck.find("scene/" + data[0].id + "/sdf_mlp/W0") != nullptr);

    // per-scene nets differ (different observations)
    auto& m0 = st.scene_mlps.at(data[0].id);
    auto& m1 = st.scene_mlps.at(data[1].id);
    bool differ = false;
    for (size_t i = 0; i < m0.layers[0].W.d.size(); ++i)
        differ = differ || m0.layers[0].W.d[i] != m1.layers[0].W.d[i];
    CHECK(differ);

    // restoring a baseline checkpoint preserves the per-scene sections
    const char* path = "/tmp/lode_ck_base.bin";
    save_checkpoint(path, st);
    TrainState re = load_checkpoint(path);
    std::remove(path);
    CHECK(re.scene_mlps.size() == 2);
    CHECK(re.scene_mlps.at(data[0].id).layers[0].W.d == m0.layers[0].W.d);

    // fourier-feature variant: positional encoding + relu
    TrainConfig fc = cfg;
    fc.mode = TrainMode::FourierBaseline;
    fc.pe.enabled = true;
    fc.pe.levels = 3;
    fc.activation = Activation::Relu;
    fc.epochs = 1;
    TrainState ft = fit({data[0]}, fc);
    CHECK(ft.scene_mlps.size() == 1);
    CHECK(ft.step == 3);
    CHECK(ft.scene_mlps.at(data[0].id).layers[0].W.cols == fc.pe.width());
}

TEST_CASE("fit: empty dataset raises; empty-GT scenes are skipped with a warning") {
    TrainConfig cfg = micro_cfg();
    CHECK_THROWS_AS(fit({}, cfg), std::invalid_argument);

    std::vector<SceneRecord> data{micro_scene(10)};
    SceneRecord hollow;
    hollow.id = "hollow";
    hollow.box = micro_box();
    data.push_back(hollow);
    cfg.epochs = 1;
    TrainState st = fit(data, cfg);
    CHECK(st.step == 1);   // only the real scene contributed
}

TEST_CASE("training log: header and line format are stable") {
    LossBreakdown b;
    b.eikonal = 0.25;
    b.total = 1.0;
    std::string line = log_line(3, "scene7", b);
    CHECK(line == "3,scene7,0.25,0,0,0,0,0,1\n");
    CHECK(std::string(log_header()).rfind("step,scene_id", 0) == 0);
}

TEST_SUITE_END();
