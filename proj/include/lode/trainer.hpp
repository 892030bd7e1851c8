#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "lode/data.hpp"
#include "lode/encoder.hpp"
#include "lode/field_grad.hpp"
#include "lode/sampler.hpp"

namespace lode {

enum class TrainMode { Lode, SirenBaseline, FourierBaseline };

struct TrainConfig {
    double learning_rate = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int steps_per_scene = 1;   // consecutive optimizer steps per scene visit
    int epochs = 30;
    uint64_t seed = 1;
    GradMode grad_mode = GradMode::Total;
    SampleMode sample_mode = SampleMode::Trilinear;
    LossWeights weights;
    SamplerConfig sampler;
    TrainMode mode = TrainMode::Lode;
    EncoderConfig encoder;
    PositionalEncodingConfig pe;
    int mlp_width = 256;
    int mlp_hidden = 4;
    Activation activation = Activation::Sine;
    double omega0 = 30.0;
    int semantic_classes = 0;   // > 0 enables the parallel semantic head
    bool lr_cosine = false;     // optional cosine decay, off by default
    double sdf_bias_init = 0.0; // output bias at init; > 0 starts free space outside
    int threads = 1;
    int chunk = 256;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate > 0");
        if (epochs < 0) throw std::invalid_argument("train: epochs >= 0");
        weights.validate();
        sampler.validate();
    }
};

// Per-tensor first/second moment state.
struct AdamState {
    std::vector<std::vector<float>> m, v;
    uint64_t t = 0;

    void init(const std::vector<NamedTensor<float>>& params) {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.count, 0.0f);
            v.emplace_back(p.count, 0.0f);
        }
        t = 0;
    }
};

// One bias-corrected Adam update over an aligned parameter/gradient list.
template <typename T>
void adam_step(std::vector<NamedTensor<T>>& params, const std::vector<NamedTensor<T>>& grads,
               std::vector<std::vector<T>>& m, std::vector<std::vector<T>>& v, uint64_t& t,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam: registry mismatch");
    ++t;
    double bc1 = 1.0 - std::pow(beta1, double(t));
    double bc2 = 1.0 - std::pow(beta2, double(t));
    for (size_t i = 0; i < params.size(); ++i) {
        if (params[i].count != grads[i].count) throw std::invalid_argument("adam: shape mismatch");
        T* p = params[i].data;
        const T* g = grads[i].data;
        for (size_t j = 0; j < params[i].count; ++j) {
            m[i][j] = T(beta1) * m[i][j] + T(1.0 - beta1) * g[j];
            v[i][j] = T(beta2) * v[i][j] + T(1.0 - beta2) * g[j] * g[j];
            double mhat = double(m[i][j]) / bc1;
            double vhat = double(v[i][j]) / bc2;
            p[j] = T(double(p[j]) - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

// Everything the optimizer owns. Baseline modes keep one MLP per scene.
struct TrainState {
    TrainConfig cfg;
    Encoder<float> encoder;                       // Lode mode only
    MlpParameters<float> sdf_mlp;                 // shared (Lode) model
    std::optional<MlpParameters<float>> semantic_mlp;
    std::map<std::string, MlpParameters<float>> scene_mlps;   // baselines
    AdamState adam;
    Rng rng;
    uint64_t step = 0;
    uint64_t skipped = 0;

    bool has_encoder() const { return cfg.mode == TrainMode::Lode; }

    int field_input_width() const {
        int dse = cfg.mode == TrainMode::Lode ? cfg.encoder.d_se : 0;
        return cfg.pe.width() + dse;
    }

    // deterministic parameter registry; adam state is aligned with it
    std::vector<NamedTensor<float>> params() {
        std::vector<NamedTensor<float>> out;
        auto add = [&](const std::string& name, std::vector<float>& v,
                       std::vector<uint32_t> shape) {
            out.push_back({name, std::move(shape), v.data(), v.size()});
        };
        auto add_mlp = [&](const std::string& prefix, MlpParameters<float>& mlp) {
            for (size_t j = 0; j < mlp.layers.size(); ++j) {
                auto& l = mlp.layers[j];
                add(prefix + "/W" + std::to_string(j), l.W.d,
                    {uint32_t(l.W.rows), uint32_t(l.W.cols)});
                add(prefix + "/b" + std::to_string(j), l.b, {uint32_t(l.b.size())});
            }
        };
        if (has_encoder()) {
            auto ks = encoder.kernels();
            for (size_t i = 0; i < ks.size(); ++i) {
                std::string base = "encoder/k" + std::to_string(i);
                add(base + "/weight", ks[i]->weights,
                    {uint32_t(ks[i]->taps()), uint32_t(ks[i]->in_channels),
                     uint32_t(ks[i]->out_channels)});
                add(base + "/bias", ks[i]->bias, {uint32_t(ks[i]->bias.size())});
            }
            add_mlp("sdf_mlp", sdf_mlp);
            if (semantic_mlp) add_mlp("semantic_mlp", *semantic_mlp);
        } else {
            for (auto& [id, mlp] : scene_mlps) add_mlp("scene/" + id + "/sdf_mlp", mlp);
        }
        return out;
    }

    void init_parameters(const std::vector<SceneRecord>* dataset) {
        Rng init_rng(mix_seed(cfg.seed, 0x1417));
        if (cfg.mode == TrainMode::Lode) {
            encoder.cfg = cfg.encoder;
            encoder.init(init_rng);
            sdf_mlp = make_mlp<float>(field_input_width(), cfg.mlp_width, cfg.mlp_hidden, 1,
                                      cfg.activation, init_rng, float(cfg.omega0));
            sdf_mlp.layers.back().b[0] += float(cfg.sdf_bias_init);
            if (cfg.semantic_classes > 0)
                semantic_mlp = make_mlp<float>(field_input_width(), cfg.mlp_width, cfg.mlp_hidden,
                                               cfg.semantic_classes, cfg.activation, init_rng,
                                               float(cfg.omega0));
        } else {
            scene_mlps.clear();
            if (dataset)
                for (size_t s = 0; s < dataset->size(); ++s) {
                    Rng r(mix_seed(cfg.seed, 0x9c0 + s));
                    MlpParameters<float> mlp =
                        make_mlp<float>(field_input_width(), cfg.mlp_width, cfg.mlp_hidden, 1,
                                        cfg.activation, r, float(cfg.omega0));
                    mlp.layers.back().b[0] += float(cfg.sdf_bias_init);
                    scene_mlps.emplace((*dataset)[s].id, std::move(mlp));
                }
        }
        auto ps = params();
        adam.init(ps);
        rng = Rng(mix_seed(cfg.seed, 0x7ea1));
        step = 0;
        skipped = 0;
    }

    // field over a given embedding volume (Lode) or a bare MLP (baselines)
    ImplicitField<float> make_field(SparseTensor<float> v_se, const GridConfig& box,
                                    const std::string& scene_id) const {
        ImplicitField<float> f;
        f.grid = box;
        f.pe = cfg.pe;
        f.grad_mode = cfg.grad_mode;
        f.sample_mode = cfg.sample_mode;
        if (cfg.mode == TrainMode::Lode) {
            f.v_se = std::move(v_se);
            f.sdf_mlp = sdf_mlp;
            if (semantic_mlp) f.semantic_mlp = semantic_mlp;
        } else {
            f.v_se.channels = 0;
            f.v_se.stride = 1;
            f.sdf_mlp = scene_mlps.at(scene_id);
        }
        return f;
    }
};

namespace detail {

inline float u32_as_f32(uint32_t b) {
    float f;
    std::memcpy(&f, &b, 4);
    return f;
}
inline uint32_t f32_as_u32(float f) {
    uint32_t b;
    std::memcpy(&b, &f, 4);
    return b;
}
inline void push_u64(std::vector<float>& v, uint64_t x) {
    v.push_back(u32_as_f32(uint32_t(x & 0xffffffffull)));
    v.push_back(u32_as_f32(uint32_t(x >> 32)));
}
inline uint64_t pop_u64(const std::vector<float>& v, size_t at) {
    return uint64_t(f32_as_u32(v[at])) | (uint64_t(f32_as_u32(v[at + 1])) << 32);
}

} // namespace detail

// Checkpoint container: magic "LODE", u32 version, then length-prefixed named
// sections of f32 tensors with u32 shape headers, little-endian throughout.
// Integer fields (step, RNG state, seeds) are stored bit-cast inside f32
// sections; see the README format notes.
constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointSection {
    std::string name;
    std::vector<uint32_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::vector<CheckpointSection> sections;   // fixed writing order

    const CheckpointSection* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }
    const CheckpointSection& at(const std::string& name) const {
        const CheckpointSection* s = find(name);
        if (!s) throw std::runtime_error("checkpoint: missing section " + name);
        return *s;
    }
};

inline void write_checkpoint_file(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write("LODE", 4);
    uint32_t v = ck.version, n = uint32_t(ck.sections.size());
    out.write(reinterpret_cast<const char*>(&v), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto& s : ck.sections) {
        uint32_t len = uint32_t(s.name.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(s.name.data(), len);
        uint32_t rank = uint32_t(s.shape.size());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        for (uint32_t d : s.shape) out.write(reinterpret_cast<const char*>(&d), 4);
        out.write(reinterpret_cast<const char*>(s.data.data()),
                  std::streamsize(s.data.size() * 4));
    }
    if (!out) throw std::runtime_error("checkpoint: write failed " + path);
}

inline Checkpoint read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LODE", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint ck;
    uint32_t n = 0;
    in.read(reinterpret_cast<char*>(&ck.version), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated header in " + path);
    if (ck.version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
    for (uint32_t i = 0; i < n; ++i) {
        CheckpointSection s;
        uint32_t len = 0, rank = 0;
        in.read(reinterpret_cast<char*>(&len), 4);
        if (!in || len > 4096) throw std::runtime_error("checkpoint: truncated section name");
        s.name.resize(len);
        in.read(s.name.data(), len);
        in.read(reinterpret_cast<char*>(&rank), 4);
        if (!in || rank > 8) throw std::runtime_error("checkpoint: bad section rank");
        s.shape.resize(rank);
        uint64_t count = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            in.read(reinterpret_cast<char*>(&s.shape[r]), 4);
            count *= s.shape[r];
        }
        if (!in || count > (1ull << 31)) throw std::runtime_error("checkpoint: bad section shape");
        s.data.resize(count);
        in.read(reinterpret_cast<char*>(s.data.data()), std::streamsize(count * 4));
        if (!in) throw std::runtime_error("checkpoint: truncated section data in " + path);
        ck.sections.push_back(std::move(s));
    }
    return ck;
}

namespace detail {

// every scalar is stored as a bit-cast u64 in two f32 words, so double fields
// (lr, betas, lambdas) survive the round trip exactly and resume stays
// bit-identical
inline void push_f64(std::vector<float>& v, double x) {
    uint64_t b;
    std::memcpy(&b, &x, 8);
    push_u64(v, b);
}
inline double pop_f64(const std::vector<float>& v, size_t at) {
    uint64_t b = pop_u64(v, at);
    double x;
    std::memcpy(&x, &b, 8);
    return x;
}

inline std::vector<float> encode_train_config(const TrainConfig& c) {
    std::vector<float> v;
    auto d = [&](double x) { push_f64(v, x); };
    auto i64 = [&](int64_t x) { push_u64(v, uint64_t(x)); };
    d(c.learning_rate);
    d(c.adam_beta1);
    d(c.adam_beta2);
    d(c.adam_eps);
    i64(c.steps_per_scene);
    i64(c.epochs);
    push_u64(v, c.seed);
    i64(int(c.grad_mode));
    i64(int(c.sample_mode));
    i64(int(c.mode));
    d(c.weights.lambda1);
    d(c.weights.lambda2);
    d(c.weights.lambda3);
    d(c.weights.lambda4);
    d(c.weights.lambda5);
    d(c.weights.lambda6);
    d(c.weights.psi_alpha);
    i64(c.sampler.n_on);
    i64(c.sampler.n_off);
    i64(c.sampler.normal_k);
    d(c.sampler.reject_radius);
    i64(c.pe.enabled ? 1 : 0);
    i64(c.pe.levels);
    i64(c.pe.include_xyz ? 1 : 0);
    i64(c.mlp_width);
    i64(c.mlp_hidden);
    i64(int(c.activation));
    d(c.omega0);
    i64(c.semantic_classes);
    i64(c.lr_cosine ? 1 : 0);
    d(c.sdf_bias_init);
    i64(c.encoder.scale_size);
    i64(c.encoder.d_se);
    i64(c.encoder.pruning_blocks);
    i64(c.encoder.output_block_convs);
    d(c.encoder.prune_threshold);
    d(c.encoder.leaky_slope);
    i64(c.threads);
    i64(c.chunk);
    return v;
}

inline TrainConfig decode_train_config(const std::vector<float>& v,
                                       const std::vector<float>& enc_ch,
                                       const std::vector<float>& dec_ch) {
    TrainConfig c;
    size_t i = 0;
    auto d = [&] {
        double x = pop_f64(v, i);
        i += 2;
        return x;
    };
    auto i64 = [&] {
        int64_t x = int64_t(pop_u64(v, i));
        i += 2;
        return x;
    };
    c.learning_rate = d();
    c.adam_beta1 = d();
    c.adam_beta2 = d();
    c.adam_eps = d();
    c.steps_per_scene = int(i64());
    c.epochs = int(i64());
    c.seed = pop_u64(v, i);
    i += 2;
    c.grad_mode = GradMode(i64());
    c.sample_mode = SampleMode(i64());
    c.mode = TrainMode(i64());
    c.weights.lambda1 = d();
    c.weights.lambda2 = d();
    c.weights.lambda3 = d();
    c.weights.lambda4 = d();
    c.weights.lambda5 = d();
    c.weights.lambda6 = d();
    c.weights.psi_alpha = d();
    c.sampler.n_on = int(i64());
    c.sampler.n_off = int(i64());
    c.sampler.normal_k = int(i64());
    c.sampler.reject_radius = d();
    c.pe.enabled = i64() != 0;
    c.pe.levels = int(i64());
    c.pe.include_xyz = i64() != 0;
    c.mlp_width = int(i64());
    c.mlp_hidden = int(i64());
    c.activation = Activation(i64());
    c.omega0 = d();
    c.semantic_classes = int(i64());
    c.lr_cosine = i64() != 0;
    c.sdf_bias_init = d();
    c.encoder.scale_size = int(i64());
    c.encoder.d_se = int(i64());
    c.encoder.pruning_blocks = int(i64());
    c.encoder.output_block_convs = int(i64());
    c.encoder.prune_threshold = d();
    c.encoder.leaky_slope = d();
    c.threads = int(i64());
    c.chunk = int(i64());
    c.encoder.enc_channels.clear();
    for (float f : enc_ch) c.encoder.enc_channels.push_back(int(f));
    c.encoder.dec_channels.clear();
    for (float f : dec_ch) c.encoder.dec_channels.push_back(int(f));
    return c;
}

} // namespace detail

// Serializes the full optimizer state; save -> load -> save is byte-stable
// and resumed training continues bit-identically.
inline Checkpoint make_checkpoint(TrainState& st) {
    Checkpoint ck;
    auto add = [&](const std::string& name, std::vector<uint32_t> shape, std::vector<float> data) {
        ck.sections.push_back({name, std::move(shape), std::move(data)});
    };
    add("meta/config", {uint32_t(detail::encode_train_config(st.cfg).size())},
        detail::encode_train_config(st.cfg));
    std::vector<float> ench, dech;
    for (int c : st.cfg.encoder.enc_channels) ench.push_back(float(c));
    for (int c : st.cfg.encoder.dec_channels) dech.push_back(float(c));
    add("meta/enc_channels", {uint32_t(ench.size())}, ench);
    add("meta/dec_channels", {uint32_t(dech.size())}, dech);
    std::vector<float> bits;
    detail::push_u64(bits, st.step);
    detail::push_u64(bits, st.skipped);
    detail::push_u64(bits, st.rng.state);
    detail::push_u64(bits, st.adam.t);
    add("meta/counters_bits", {uint32_t(bits.size())}, bits);
    add("pe", {3},
        {float(st.cfg.pe.enabled ? 1 : 0), float(st.cfg.pe.levels),
         float(st.cfg.pe.include_xyz ? 1 : 0)});
    // scene ids for baseline checkpoints
    if (!st.has_encoder()) {
        std::string joined;
        for (auto& [id, mlp] : st.scene_mlps) joined += id + "\n";
        std::vector<float> chars;
        chars.reserve(joined.size());
        for (char c : joined) chars.push_back(detail::u32_as_f32(uint32_t(uint8_t(c))));
        add("meta/scene_ids", {uint32_t(chars.size())}, chars);
    }
    auto ps = st.params();
    for (auto& p : ps)
        add(p.name, p.shape, std::vector<float>(p.data, p.data + p.count));
    for (size_t i = 0; i < ps.size(); ++i) {
        add("adam/" + ps[i].name + "/m", {uint32_t(st.adam.m[i].size())}, st.adam.m[i]);
        add("adam/" + ps[i].name + "/v", {uint32_t(st.adam.v[i].size())}, st.adam.v[i]);
    }
    return ck;
}

inline TrainState restore_checkpoint(const Checkpoint& ck) {
    TrainState st;
    st.cfg = detail::decode_train_config(ck.at("meta/config").data,
                                         ck.at("meta/enc_channels").data,
                                         ck.at("meta/dec_channels").data);
    std::vector<SceneRecord> dummy;
    if (!st.has_encoder()) {
        const auto* ids = ck.find("meta/scene_ids");
        std::string joined;
        if (ids)
            for (float f : ids->data) joined.push_back(char(detail::f32_as_u32(f)));
        std::istringstream is(joined);
        std::string id;
        while (std::getline(is, id))
            if (!id.empty()) {
                SceneRecord r;
                r.id = id;
                dummy.push_back(std::move(r));
            }
    }
    st.init_parameters(&dummy);
    const auto& bits = ck.at("meta/counters_bits").data;
    st.step = detail::pop_u64(bits, 0);
    st.skipped = detail::pop_u64(bits, 2);
    st.rng.state = detail::pop_u64(bits, 4);
    uint64_t adam_t = detail::pop_u64(bits, 6);
    auto ps = st.params();
    for (auto& p : ps) {
        const auto& s = ck.at(p.name);
        if (s.data.size() != p.count)
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        std::copy(s.data.begin(), s.data.end(), p.data);
    }
    st.adam.init(ps);
    st.adam.t = adam_t;
    for (size_t i = 0; i < ps.size(); ++i) {
        st.adam.m[i] = ck.at("adam/" + ps[i].name + "/m").data;
        st.adam.v[i] = ck.at("adam/" + ps[i].name + "/v").data;
    }
    return st;
}

inline void save_checkpoint(const std::string& path, TrainState& st) {
    write_checkpoint_file(path, make_checkpoint(st));
}
inline TrainState load_checkpoint(const std::string& path) {
    return restore_checkpoint(read_checkpoint_file(path));
}

// One CSV row per optimizer step.
inline std::string log_line(uint64_t step, const std::string& scene_id, const LossBreakdown& b) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%llu,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  (unsigned long long)step, scene_id.c_str(), b.eikonal, b.normal, b.surface,
                  b.off_surface, b.completion, b.semantic, b.total);
    return buf;
}

inline const char* log_header() {
    return "step,scene_id,eikonal,normal,surface,off_surface,completion,semantic,total\n";
}

namespace detail {

template <typename T>
bool all_finite(const std::vector<NamedTensor<T>>& grads) {
    for (const auto& g : grads)
        for (size_t i = 0; i < g.count; ++i)
            if (!std::isfinite(double(g.data[i]))) return false;
    return true;
}

} // namespace detail

// Full optimization loop. Lode mode: per scene visit, voxelize -> encode with
// teacher-forced pruning -> sample a batch from the dense ground truth ->
// exact gradients -> one Adam step over every parameter. Baseline modes skip
// the encoder, fit one MLP per scene, and draw on-surface samples from the
// sparse input with estimated normals.
inline TrainState fit(const std::vector<SceneRecord>& dataset, const TrainConfig& cfg,
                      std::ostream* log = nullptr,
                      const TrainState* resume = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("fit: empty dataset");
    TrainState st;
    if (resume) {
        if (resume->cfg.mode != TrainMode::Lode)
            throw std::invalid_argument("fit: resume is only supported in lode mode");
        st = *resume;
    } else {
        st.cfg = cfg;
        st.init_parameters(&dataset);
    }

    if (st.cfg.mode == TrainMode::Lode) {
        uint64_t target =
            uint64_t(st.cfg.epochs) * dataset.size() * uint64_t(st.cfg.steps_per_scene);
        // skip (epoch, scene, rep) triples already consumed when resuming
        uint64_t done = st.step + st.skipped;
        uint64_t counter = 0;
        for (int epoch = 0; epoch < st.cfg.epochs; ++epoch) {
            for (size_t si = 0; si < dataset.size(); ++si) {
                const SceneRecord& scene = dataset[si];
                if (scene.gt_cloud.points.empty()) {
                    std::fprintf(stderr, "warning: skipping scene %s: empty ground truth\n",
                                 scene.id.c_str());
                    continue;
                }
                if (!scene.gt_cloud.has_normals())
                    throw std::invalid_argument("fit: ground truth lacks normals");
                for (int rep = 0; rep < st.cfg.steps_per_scene; ++rep, ++counter) {
                    if (counter < done) continue;
                    uint64_t batch_seed = st.rng.next_u64();

                    OccupancyVolume v_occ_vol = voxelize(scene.input_cloud, scene.box);
                    if (v_occ_vol.occupied.empty()) {
                        ++st.skipped;
                        std::fprintf(stderr, "warning: skipping scene %s: empty input\n",
                                     scene.id.c_str());
                        continue;
                    }
                    SparseTensor<float> v_occ = sparse_from_occupancy<float>(v_occ_vol);
                    EncodeResult<float> enc = st.encoder.encode(v_occ, &scene.gt_occ, true);

                    SamplerConfig sc = st.cfg.sampler;
                    sc.seed = batch_seed;
                    SampleBatch batch =
                        sample_batch(scene.gt_cloud, scene.box, sc, st.cfg.semantic_classes > 0);

                    ImplicitField<float> field =
                        st.make_field(std::move(enc.v_se), scene.box, scene.id);
                    FieldGradients<float> fg = field_grad_params(field, batch, st.cfg.weights,
                                                                 st.cfg.threads, st.cfg.chunk);

                    LossBreakdown b = fg.loss;
                    b.completion = completion_loss(enc.sup);
                    b.recombine(st.cfg.weights);

                    auto dlogits = completion_loss_grad(enc.sup);
                    for (auto& blk : dlogits)
                        for (auto& v : blk) v *= float(st.cfg.weights.lambda5);
                    EncoderGrads<float> eg = st.encoder.backward(enc, fg.v_se, dlogits);

                    // aligned gradient registry
                    std::vector<NamedTensor<float>> gs;
                    auto addg = [&](std::vector<float>& v) {
                        gs.push_back({"", {}, v.data(), v.size()});
                    };
                    for (auto& k : eg.kernels) {
                        addg(k.weights);
                        addg(k.bias);
                    }
                    for (size_t j = 0; j < fg.sdf.dW.size(); ++j) {
                        addg(fg.sdf.dW[j].d);
                        addg(fg.sdf.db[j]);
                    }
                    if (st.semantic_mlp)
                        for (size_t j = 0; j < fg.semantic.dW.size(); ++j) {
                            addg(fg.semantic.dW[j].d);
                            addg(fg.semantic.db[j]);
                        }

                    bool ok = fg.finite && std::isfinite(b.total) && detail::all_finite(gs);
                    if (ok) {
                        double lr = st.cfg.learning_rate;
                        if (st.cfg.lr_cosine && target > 1)
                            lr *= 0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                                        double(st.step) / double(target)));
                        auto ps = st.params();
                        adam_step(ps, gs, st.adam.m, st.adam.v, st.adam.t, lr, st.cfg.adam_beta1,
                                  st.cfg.adam_beta2, st.cfg.adam_eps);
                        ++st.step;
                    } else {
                        ++st.skipped;
                    }
                    if (log) *log << log_line(st.step, scene.id, b);
                }
            }
        }
        return st;
    }

    // baseline modes: one MLP per scene fitted to the sparse input, each with
    // its own Adam state
    for (size_t si = 0; si < dataset.size(); ++si) {
        const SceneRecord& scene = dataset[si];
        if (scene.input_cloud.points.empty()) {
            std::fprintf(stderr, "warning: skipping scene %s: empty input\n", scene.id.c_str());
            continue;
        }
        PointCloud observed;
        for (size_t i = 0; i < scene.input_cloud.size(); ++i) {
            if (!scene.box.contains(scene.input_cloud.points[i])) continue;
            observed.points.push_back(scene.input_cloud.points[i]);
            if (scene.input_cloud.has_normals())
                observed.normals.push_back(scene.input_cloud.normals[i]);
        }
        if (int(observed.size()) < st.cfg.sampler.normal_k + 2) {
            std::fprintf(stderr, "warning: skipping scene %s: too few in-box points\n",
                         scene.id.c_str());
            continue;
        }
        if (!observed.has_normals())
            observed = estimate_normals(observed, st.cfg.sampler.normal_k, scene.sensor);
        auto all = st.params();
        std::string prefix = "scene/" + scene.id + "/";
        std::vector<NamedTensor<float>> ps;
        for (auto& p : all)
            if (p.name.rfind(prefix, 0) == 0) ps.push_back(p);
        AdamState local;
        local.init(ps);
        Rng scene_rng(mix_seed(st.cfg.seed, 0xbee7 + si));
        uint64_t scene_steps = uint64_t(st.cfg.epochs) * uint64_t(st.cfg.steps_per_scene);
        for (uint64_t sstep = 0; sstep < scene_steps; ++sstep) {
            SamplerConfig sc = st.cfg.sampler;
            sc.seed = scene_rng.next_u64();
            SampleBatch batch = sample_batch(observed, scene.box, sc, false);
            ImplicitField<float> field = st.make_field({}, scene.box, scene.id);
            FieldGradients<float> fg =
                field_grad_params(field, batch, st.cfg.weights, st.cfg.threads, st.cfg.chunk);
            LossBreakdown b = fg.loss;
            b.recombine(st.cfg.weights);

            std::vector<NamedTensor<float>> gs;
            for (size_t j = 0; j < fg.sdf.dW.size(); ++j) {
                gs.push_back({"", {}, fg.sdf.dW[j].d.data(), fg.sdf.dW[j].d.size()});
                gs.push_back({"", {}, fg.sdf.db[j].data(), fg.sdf.db[j].size()});
            }
            bool ok = fg.finite && std::isfinite(b.total) && detail::all_finite(gs);
            if (ok) {
                adam_step(ps, gs, local.m, local.v, local.t, st.cfg.learning_rate,
                          st.cfg.adam_beta1, st.cfg.adam_beta2, st.cfg.adam_eps);
                ++st.step;
            } else {
                ++st.skipped;
            }
            if (log) *log << log_line(st.step, scene.id, b);
        }
    }
    return st;
}

} // namespace lode
