#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "lode/rng.hpp"
#include "lode/sparse.hpp"

namespace lode {

// Discriminative model: multiscale sparse encoder-decoder mapping the input
// occupancy volume to the shape embedding volume. Stage layout (defaults):
// stem + 4 stride-2 conv stages down to /16, then generative deconv stages
// back up to /scale_size with skip concatenation, pruning after every decoder
// stage, plus auxiliary pruning heads on the intermediate encoder levels --
// 5 supervised blocks in all.
struct EncoderConfig {
    std::vector<int> enc_channels{16, 32, 64, 128, 256};   // stem + one per stride-2 stage
    std::vector<int> dec_channels;                          // derived when empty
    int scale_size = 4;          // D_occ / D_se
    int d_se = 256;
    int pruning_blocks = -1;     // -1 = all sites supervised, k = last k sites
    int output_block_convs = 2;
    double prune_threshold = 0.5;
    double leaky_slope = 0.01;

    int enc_stages() const { return int(enc_channels.size()) - 1; }
    int bottleneck_stride() const { return 1 << enc_stages(); }
    int dec_stages() const {
        int n = 0;
        for (int s = bottleneck_stride(); s > scale_size; s /= 2) ++n;
        return n;
    }
    std::vector<int> resolved_dec_channels() const {
        if (!dec_channels.empty()) return dec_channels;
        std::vector<int> d;
        int c = enc_channels.back();
        for (int s = 0; s < dec_stages(); ++s) {
            c = std::max(8, c / 2);
            d.push_back(c);
        }
        return d;
    }
    int num_sites() const { return (enc_stages() - 1) + dec_stages(); }
    bool site_supervised(int site) const {
        if (pruning_blocks < 0) return true;
        return site >= num_sites() - pruning_blocks;
    }

    void validate() const {
        if (enc_channels.size() < 2) throw std::invalid_argument("encoder: need >= 2 enc channels");
        if (scale_size < 1 || (scale_size & (scale_size - 1)) != 0 ||
            scale_size > bottleneck_stride())
            throw std::invalid_argument("encoder: scale_size must be a power of two <= bottleneck");
        if (!dec_channels.empty() && int(dec_channels.size()) != dec_stages())
            throw std::invalid_argument("encoder: dec_channels count mismatch");
        if (d_se < 1) throw std::invalid_argument("encoder: d_se >= 1");
        if (output_block_convs < 1 || output_block_convs > 4)
            throw std::invalid_argument("encoder: output_block_convs in 1..4");
    }
};

// Per-block pruning supervision: pre-sigmoid logits and {0,1} targets.
template <typename T>
struct PruningSupervision {
    struct Block {
        std::vector<T> logits;
        std::vector<uint8_t> targets;
    };
    std::vector<Block> blocks;
};

// L_com: mean over supervised blocks of the per-voxel binary cross entropy.
// Empty blocks are excluded from the average.
template <typename T>
double completion_loss(const PruningSupervision<T>& sup) {
    if (sup.blocks.empty()) throw std::invalid_argument("completion_loss: no supervised blocks");
    double acc = 0.0;
    int m_eff = 0;
    for (const auto& b : sup.blocks) {
        if (b.logits.empty()) continue;
        double bl = 0.0;
        for (size_t i = 0; i < b.logits.size(); ++i) {
            double p = 1.0 / (1.0 + std::exp(-double(b.logits[i])));
            p = std::min(1.0 - 1e-7, std::max(1e-7, p));
            double y = b.targets[i];
            bl += y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
        }
        acc += -bl / double(b.logits.size());
        ++m_eff;
    }
    return m_eff > 0 ? acc / double(m_eff) : 0.0;
}

// d completion_loss / d logit, aligned with sup.blocks.
template <typename T>
std::vector<std::vector<T>> completion_loss_grad(const PruningSupervision<T>& sup) {
    int m_eff = 0;
    for (const auto& b : sup.blocks)
        if (!b.logits.empty()) ++m_eff;
    std::vector<std::vector<T>> out(sup.blocks.size());
    for (size_t bi = 0; bi < sup.blocks.size(); ++bi) {
        const auto& b = sup.blocks[bi];
        out[bi].assign(b.logits.size(), T(0));
        if (b.logits.empty() || m_eff == 0) continue;
        double scale = 1.0 / (double(m_eff) * double(b.logits.size()));
        for (size_t i = 0; i < b.logits.size(); ++i) {
            double p = 1.0 / (1.0 + std::exp(-double(b.logits[i])));
            out[bi][i] = T(scale * (p - double(b.targets[i])));
        }
    }
    return out;
}

// Binary targets at the candidate coordinates of one block: the stride-s
// max-pool of the ground-truth occupancy, looked up at each coordinate.
inline std::vector<OccupancyVolume> pruning_targets(const OccupancyVolume& gt,
                                                    const std::vector<int>& strides) {
    std::vector<OccupancyVolume> out;
    out.reserve(strides.size());
    for (int s : strides) out.push_back(downsample_occupancy(gt, s));
    return out;
}

namespace detail {

struct TargetSet {
    int stride = 1;
    std::unordered_set<Coord, CoordHash> coarse;

    bool test(const Coord& base_units) const {
        return coarse.count({base_units.x / stride, base_units.y / stride,
                             base_units.z / stride}) > 0;
    }
};

inline TargetSet make_target_set(const OccupancyVolume& gt, int stride) {
    TargetSet t;
    t.stride = stride;
    OccupancyVolume ds = downsample_occupancy(gt, stride);
    t.coarse.reserve(ds.occupied.size() * 2);
    for (const Coord& c : ds.occupied) t.coarse.insert(c);
    return t;
}

} // namespace detail

template <typename T>
struct EncoderGrads {
    std::vector<ConvKernel<T>> kernels;   // aligned with Encoder<T>::kernels()

    void add(const EncoderGrads<T>& o) {
        for (size_t i = 0; i < kernels.size(); ++i) {
            for (size_t j = 0; j < kernels[i].weights.size(); ++j)
                kernels[i].weights[j] += o.kernels[i].weights[j];
            for (size_t j = 0; j < kernels[i].bias.size(); ++j)
                kernels[i].bias[j] += o.kernels[i].bias[j];
        }
    }
};

template <typename T>
struct EncodeResult {
    SparseTensor<T> v_se;
    PruningSupervision<T> sup;   // blocks for supervised sites, forward order

    // tape for backward (training mode only)
    struct ConvRec {
        SparseTensor<T> in;
        ConvMap map;
        SparseTensor<T> out;   // post-activation
    };
    struct DecRec {
        SparseTensor<T> pre;        // deconv input
        DeconvMap dmap;
        SparseTensor<T> deconv_out; // post-activation
        std::vector<int> skip_rows; // per deconv-out row: row into skip stage output, -1 absent
        int skip_stage = -1;        // index into enc stage outputs, -1 if none
        SparseTensor<T> concat;     // fuse input
        ConvMap fmap;
        SparseTensor<T> fused;      // post-activation fuse output
        std::vector<T> logits;
        std::vector<int> kept_rows; // rows of `fused` surviving the prune
        int sup_index = -1;         // block index in sup, -1 unsupervised
    };
    ConvRec stem;
    std::vector<ConvRec> enc;      // stride-2 stages
    std::vector<int> aux_sup_index; // per aux head, -1 unsupervised
    std::vector<std::vector<T>> aux_logits;
    std::vector<DecRec> dec;
    std::vector<ConvRec> out_block;
    bool taped = false;
};

template <typename T>
struct Encoder {
    EncoderConfig cfg;
    ConvKernel<T> stem;
    std::vector<ConvKernel<T>> enc_convs;
    std::vector<ConvKernel<T>> aux_heads;    // 1x1, one per intermediate encoder level
    std::vector<ConvKernel<T>> deconvs;
    std::vector<ConvKernel<T>> fuse_convs;
    std::vector<ConvKernel<T>> dec_heads;    // 1x1
    std::vector<ConvKernel<T>> out_convs;

    void init(Rng& rng) {
        cfg.validate();
        auto dec_ch = cfg.resolved_dec_channels();
        const int n_enc = cfg.enc_stages();
        stem = init_kernel(3, 1, cfg.enc_channels[0], rng);
        enc_convs.clear();
        aux_heads.clear();
        deconvs.clear();
        fuse_convs.clear();
        dec_heads.clear();
        out_convs.clear();
        for (int k = 0; k < n_enc; ++k)
            enc_convs.push_back(init_kernel(3, cfg.enc_channels[k], cfg.enc_channels[k + 1], rng));
        for (int k = 1; k < n_enc; ++k)
            aux_heads.push_back(init_kernel(1, cfg.enc_channels[k], 1, rng));
        int ch = cfg.enc_channels.back();
        int stride = cfg.bottleneck_stride();
        for (int s = 0; s < cfg.dec_stages(); ++s) {
            deconvs.push_back(init_kernel(2, ch, dec_ch[s], rng));
            stride /= 2;
            int skip_ch = cfg.enc_channels[int(std::log2(stride))];
            fuse_convs.push_back(init_kernel(3, dec_ch[s] + skip_ch, dec_ch[s], rng));
            dec_heads.push_back(init_kernel(1, dec_ch[s], 1, rng));
            ch = dec_ch[s];
        }
        for (int c = 0; c < cfg.output_block_convs; ++c) {
            out_convs.push_back(init_kernel(3, c == 0 ? ch : cfg.d_se, cfg.d_se, rng));
        }
    }

    std::vector<ConvKernel<T>*> kernels() {
        std::vector<ConvKernel<T>*> ks{&stem};
        for (auto& k : enc_convs) ks.push_back(&k);
        for (auto& k : aux_heads) ks.push_back(&k);
        for (auto& k : deconvs) ks.push_back(&k);
        for (auto& k : fuse_convs) ks.push_back(&k);
        for (auto& k : dec_heads) ks.push_back(&k);
        for (auto& k : out_convs) ks.push_back(&k);
        return ks;
    }
    std::vector<const ConvKernel<T>*> kernels() const {
        auto ks = const_cast<Encoder<T>*>(this)->kernels();
        return {ks.begin(), ks.end()};
    }

    EncoderGrads<T> zero_grads() const {
        EncoderGrads<T> g;
        for (const ConvKernel<T>* k : kernels()) {
            ConvKernel<T> z = *k;
            std::fill(z.weights.begin(), z.weights.end(), T(0));
            std::fill(z.bias.begin(), z.bias.end(), T(0));
            g.kernels.push_back(std::move(z));
        }
        return g;
    }

    // Training mode (gt present): pruning masks are teacher-forced to the
    // downsampled ground truth and every supervised site contributes a
    // (logits, targets) block. Inference mode keeps sigmoid(logit) >=
    // prune_threshold.
    EncodeResult<T> encode(const SparseTensor<T>& v_occ, const OccupancyVolume* gt,
                           bool with_tape = false) const {
        if (v_occ.rows() == 0) throw std::invalid_argument("encode: empty input");
        if (v_occ.channels != 1 || v_occ.stride != 1)
            throw std::invalid_argument("encode: expected stride-1 occupancy with one channel");
        const bool train = gt != nullptr;
        EncodeResult<T> res;
        res.taped = with_tape;

        auto run_conv = [&](const SparseTensor<T>& in, const ConvKernel<T>& k, int stride_out,
                            bool leaky, typename EncodeResult<T>::ConvRec* rec) {
            ConvMap map = build_conv_map(in, k.size, stride_out);
            SparseTensor<T> out = apply_conv_map(in, k, map, stride_out);
            if (leaky) leaky_forward(out);
            if (rec) {
                rec->in = in;
                rec->map = std::move(map);
                rec->out = out;
            }
            return out;
        };

        std::vector<SparseTensor<T>> stage;   // stage[k] at stride 2^k
        stage.push_back(run_conv(v_occ, stem, 1, true, with_tape ? &res.stem : nullptr));
        res.enc.resize(with_tape ? cfg.enc_stages() : 0);
        for (int k = 0; k < cfg.enc_stages(); ++k)
            stage.push_back(run_conv(stage.back(), enc_convs[k], 2, true,
                                     with_tape ? &res.enc[k] : nullptr));

        int site = 0;
        // auxiliary heads on intermediate encoder levels; never pruned
        res.aux_sup_index.assign(aux_heads.size(), -1);
        res.aux_logits.resize(aux_heads.size());
        std::vector<detail::TargetSet> tsets;
        for (size_t h = 0; h < aux_heads.size(); ++h, ++site) {
            if (!cfg.site_supervised(site)) continue;
            const SparseTensor<T>& t = stage[h + 1];
            std::vector<T> logits = head_logits(t, aux_heads[h]);
            res.aux_logits[h] = logits;
            if (train) {
                detail::TargetSet ts = detail::make_target_set(*gt, t.stride);
                typename PruningSupervision<T>::Block blk;
                blk.logits = std::move(logits);
                blk.targets.resize(t.rows());
                for (size_t i = 0; i < t.rows(); ++i)
                    blk.targets[i] = ts.test(t.coords[i]) ? 1 : 0;
                res.aux_sup_index[h] = int(res.sup.blocks.size());
                res.sup.blocks.push_back(std::move(blk));
            }
        }

        SparseTensor<T> x = stage.back();
        res.dec.resize(with_tape ? cfg.dec_stages() : 0);
        for (int s = 0; s < cfg.dec_stages(); ++s, ++site) {
            typename EncodeResult<T>::DecRec* rec = with_tape ? &res.dec[s] : nullptr;
            if (rec) rec->pre = x;
            DeconvMap dmap = build_deconv_map(x, deconvs[s].size, 2);
            SparseTensor<T> up = apply_deconv(x, deconvs[s], dmap);
            leaky_forward(up);
            if (rec) {
                rec->dmap = std::move(dmap);
                rec->deconv_out = up;
            }

            // concat encoder features at the matching stride (zero where absent)
            int level = int(std::log2(up.stride));
            const SparseTensor<T>& skip = stage[level];
            SparseTensor<T> cat;
            cat.stride = up.stride;
            cat.channels = up.channels + skip.channels;
            cat.coords = up.coords;
            cat.feats = Matrix<T>(int(up.rows()), cat.channels);
            std::vector<int> skip_rows(up.rows(), -1);
            for (size_t i = 0; i < up.rows(); ++i) {
                std::copy(up.feats.row(int(i)), up.feats.row(int(i)) + up.channels,
                          cat.feats.row(int(i)));
                int sr = skip.find(up.coords[i]);
                skip_rows[i] = sr;
                if (sr >= 0)
                    std::copy(skip.feats.row(sr), skip.feats.row(sr) + skip.channels,
                              cat.feats.row(int(i)) + up.channels);
            }
            cat.rebuild_index();
            if (rec) {
                rec->skip_rows = skip_rows;
                rec->skip_stage = level;
                rec->concat = cat;
            }

            ConvMap fmap = build_conv_map(cat, fuse_convs[s].size, 1);
            SparseTensor<T> fused = apply_conv_map(cat, fuse_convs[s], fmap, 1);
            leaky_forward(fused);
            std::vector<T> logits = head_logits(fused, dec_heads[s]);
            if (rec) {
                rec->fmap = std::move(fmap);
                rec->fused = fused;
                rec->logits = logits;
            }

            bool supervised = cfg.site_supervised(site);
            std::vector<uint8_t> keep(fused.rows(), 1);
            if (supervised && train) {
                detail::TargetSet ts = detail::make_target_set(*gt, fused.stride);
                typename PruningSupervision<T>::Block blk;
                blk.targets.resize(fused.rows());
                for (size_t i = 0; i < fused.rows(); ++i) {
                    blk.targets[i] = ts.test(fused.coords[i]) ? 1 : 0;
                    keep[i] = blk.targets[i];   // teacher forcing
                }
                blk.logits = logits;
                if (rec) rec->sup_index = int(res.sup.blocks.size());
                res.sup.blocks.push_back(std::move(blk));
            } else if (supervised) {
                double thr = cfg.prune_threshold;
                for (size_t i = 0; i < fused.rows(); ++i)
                    keep[i] = double(sigmoid(logits[i])) >= thr ? 1 : 0;
            }
            // unsupervised decoder sites keep everything (all-keep mask)

            SparseTensor<T> pruned;
            pruned.stride = fused.stride;
            pruned.channels = fused.channels;
            std::vector<int> kept;
            for (size_t i = 0; i < fused.rows(); ++i)
                if (keep[i]) kept.push_back(int(i));
            pruned.feats = Matrix<T>(int(kept.size()), fused.channels);
            pruned.coords.reserve(kept.size());
            for (size_t i = 0; i < kept.size(); ++i) {
                pruned.coords.push_back(fused.coords[kept[i]]);
                std::copy(fused.feats.row(kept[i]), fused.feats.row(kept[i]) + fused.channels,
                          pruned.feats.row(int(i)));
            }
            pruned.rebuild_index();
            if (rec) rec->kept_rows = std::move(kept);
            x = std::move(pruned);
        }

        res.out_block.resize(with_tape ? out_convs.size() : 0);
        for (size_t c = 0; c < out_convs.size(); ++c) {
            bool leaky = c + 1 < out_convs.size();
            x = run_conv(x, out_convs[c], 1, leaky, with_tape ? &res.out_block[c] : nullptr);
        }
        res.v_se = std::move(x);
        return res;
    }

    // Reverse pass: upstream gradient on v_se features plus per-supervised-
    // block logit gradients; returns kernel gradients aligned with kernels().
    EncoderGrads<T> backward(const EncodeResult<T>& fwd, const Matrix<T>& d_vse,
                             const std::vector<std::vector<T>>& d_logits) const {
        if (!fwd.taped) throw std::logic_error("encoder backward: forward was not taped");
        EncoderGrads<T> g = zero_grads();
        // kernel gradient slots in kernels() order
        size_t idx = 0;
        ConvKernel<T>* g_stem = &g.kernels[idx++];
        std::vector<ConvKernel<T>*> g_enc, g_aux, g_dec, g_fuse, g_head, g_out;
        for (size_t i = 0; i < enc_convs.size(); ++i) g_enc.push_back(&g.kernels[idx++]);
        for (size_t i = 0; i < aux_heads.size(); ++i) g_aux.push_back(&g.kernels[idx++]);
        for (size_t i = 0; i < deconvs.size(); ++i) g_dec.push_back(&g.kernels[idx++]);
        for (size_t i = 0; i < fuse_convs.size(); ++i) g_fuse.push_back(&g.kernels[idx++]);
        for (size_t i = 0; i < dec_heads.size(); ++i) g_head.push_back(&g.kernels[idx++]);
        for (size_t i = 0; i < out_convs.size(); ++i) g_out.push_back(&g.kernels[idx++]);

        // output block backward
        Matrix<T> cur = d_vse;
        for (size_t c = out_convs.size(); c-- > 0;) {
            const auto& rec = fwd.out_block[c];
            bool leaky = c + 1 < out_convs.size();
            if (leaky) leaky_backward(rec.out, cur);
            Matrix<T> din(int(rec.in.rows()), rec.in.channels);
            conv_backward(rec.in, out_convs[c], rec.map, cur, *g_out[c], din);
            cur = std::move(din);
        }

        // encoder stage gradient accumulators
        std::vector<Matrix<T>> stage_grad(cfg.enc_stages() + 1);

        for (size_t s = fwd.dec.size(); s-- > 0;) {
            const auto& rec = fwd.dec[s];
            // un-prune: scatter rows back to the fused tensor
            Matrix<T> dfused(int(rec.fused.rows()), rec.fused.channels);
            for (size_t i = 0; i < rec.kept_rows.size(); ++i)
                std::copy(cur.row(int(i)), cur.row(int(i)) + rec.fused.channels,
                          dfused.row(rec.kept_rows[i]));
            // pruning head
            if (rec.sup_index >= 0 && size_t(rec.sup_index) < d_logits.size())
                head_backward(rec.fused, dec_heads[s], d_logits[rec.sup_index], *g_head[s],
                              dfused);
            leaky_backward(rec.fused, dfused);
            Matrix<T> dcat(int(rec.concat.rows()), rec.concat.channels);
            conv_backward(rec.concat, fuse_convs[s], rec.fmap, dfused, *g_fuse[s], dcat);

            // split concat gradient
            Matrix<T> dup(int(rec.deconv_out.rows()), rec.deconv_out.channels);
            const SparseTensor<T>& skip_t = rec.skip_stage == 0
                                                ? fwd.stem.out
                                                : fwd.enc[rec.skip_stage - 1].out;
            Matrix<T>& sg = stage_grad[rec.skip_stage];
            if (sg.rows == 0) sg = Matrix<T>(int(skip_t.rows()), skip_t.channels);
            for (size_t i = 0; i < rec.deconv_out.rows(); ++i) {
                std::copy(dcat.row(int(i)), dcat.row(int(i)) + rec.deconv_out.channels,
                          dup.row(int(i)));
                int sr = rec.skip_rows[i];
                if (sr >= 0)
                    for (int ch = 0; ch < skip_t.channels; ++ch)
                        sg(sr, ch) += dcat(int(i), rec.deconv_out.channels + ch);
            }

            leaky_backward(rec.deconv_out, dup);
            Matrix<T> dpre(int(rec.pre.rows()), rec.pre.channels);
            deconv_backward(rec.pre, deconvs[s], rec.dmap, dup, *g_dec[s], dpre);
            cur = std::move(dpre);
        }

        // bottleneck gradient joins the encoder chain
        {
            Matrix<T>& sg = stage_grad[cfg.enc_stages()];
            const SparseTensor<T>& bt = cfg.enc_stages() == 0 ? fwd.stem.out
                                                              : fwd.enc.back().out;
            if (sg.rows == 0) sg = Matrix<T>(int(bt.rows()), bt.channels);
            for (size_t i = 0; i < cur.d.size(); ++i) sg.d[i] += cur.d[i];
        }

        // auxiliary heads
        for (size_t h = 0; h < aux_heads.size(); ++h) {
            int bi = fwd.aux_sup_index[h];
            if (bi < 0 || size_t(bi) >= d_logits.size()) continue;
            const SparseTensor<T>& t = fwd.enc[h].out;   // stage h+1 output
            Matrix<T>& sg = stage_grad[h + 1];
            if (sg.rows == 0) sg = Matrix<T>(int(t.rows()), t.channels);
            head_backward(t, aux_heads[h], d_logits[bi], *g_aux[h], sg);
        }

        // encoder chain backward
        for (int k = cfg.enc_stages(); k-- > 0;) {
            Matrix<T>& dout = stage_grad[k + 1];
            const auto& rec = fwd.enc[k];
            if (dout.rows == 0) dout = Matrix<T>(int(rec.out.rows()), rec.out.channels);
            leaky_backward(rec.out, dout);
            Matrix<T> din(int(rec.in.rows()), rec.in.channels);
            conv_backward(rec.in, enc_convs[k], rec.map, dout, *g_enc[k], din);
            Matrix<T>& sg = stage_grad[k];
            if (sg.rows == 0) sg = std::move(din);
            else
                for (size_t i = 0; i < sg.d.size(); ++i) sg.d[i] += din.d[i];
        }
        {
            Matrix<T>& dout = stage_grad[0];
            if (dout.rows == 0) dout = Matrix<T>(int(fwd.stem.out.rows()), fwd.stem.out.channels);
            leaky_backward(fwd.stem.out, dout);
            Matrix<T> din(int(fwd.stem.in.rows()), fwd.stem.in.channels);
            conv_backward(fwd.stem.in, stem, fwd.stem.map, dout, *g_stem, din);
        }
        return g;
    }

  private:
    static ConvKernel<T> init_kernel(int size, int in_ch, int out_ch, Rng& rng) {
        ConvKernel<T> k = make_kernel<T>(size, in_ch, out_ch);
        double bound = std::sqrt(6.0 / (double(in_ch) * k.taps()));
        for (auto& w : k.weights) w = T(rng.uniform(-bound, bound));
        for (auto& b : k.bias) b = T(rng.uniform(-bound, bound));
        return k;
    }

    void leaky_forward(SparseTensor<T>& t) const {
        const T slope = T(cfg.leaky_slope);
        for (auto& v : t.feats.d) v = v > T(0) ? v : slope * v;
    }
    // recovers the mask from the stored post-activation sign
    void leaky_backward(const SparseTensor<T>& out, Matrix<T>& grad) const {
        const T slope = T(cfg.leaky_slope);
        for (size_t i = 0; i < grad.d.size(); ++i)
            if (out.feats.d[i] < T(0)) grad.d[i] *= slope;
    }

    std::vector<T> head_logits(const SparseTensor<T>& t, const ConvKernel<T>& head) const {
        std::vector<T> logits(t.rows());
        for (size_t i = 0; i < t.rows(); ++i)
            logits[i] = head.bias[0] + dot_strided(t.feats.row(int(i)), head, t.channels);
        return logits;
    }
    static T dot_strided(const T* feat, const ConvKernel<T>& head, int ch) {
        T acc = T(0);
        for (int c = 0; c < ch; ++c) acc += feat[c] * head.weights[c];   // 1x1, out=1
        return acc;
    }
    void head_backward(const SparseTensor<T>& t, const ConvKernel<T>& head,
                       const std::vector<T>& dlogit, ConvKernel<T>& ghead,
                       Matrix<T>& dfeat) const {
        for (size_t i = 0; i < t.rows(); ++i) {
            T dl = dlogit[i];
            if (dl == T(0)) continue;
            const T* f = t.feats.row(int(i));
            for (int c = 0; c < t.channels; ++c) {
                ghead.weights[c] += dl * f[c];
                dfeat(int(i), c) += dl * head.weights[c];
            }
            ghead.bias[0] += dl;
        }
    }

    static void conv_backward(const SparseTensor<T>& in, const ConvKernel<T>& k,
                              const ConvMap& map, const Matrix<T>& dout, ConvKernel<T>& gk,
                              Matrix<T>& din) {
        const int ci = k.in_channels, co = k.out_channels;
        for (int r = 0; r < int(map.out_coords.size()); ++r) {
            const T* ob = dout.row(r);
            for (int p = map.row_begin[r]; p < map.row_begin[r + 1]; ++p) {
                int tap = map.pairs[p].first, ir = map.pairs[p].second;
                const T* f = in.feats.row(ir);
                const T* w = k.tap(tap);
                T* gw = gk.tap(tap);
                T* di = din.row(ir);
                for (int a = 0; a < ci; ++a) {
                    T fa = f[a];
                    const T* wr = w + size_t(a) * co;
                    T* gwr = gw + size_t(a) * co;
                    T acc = T(0);
                    for (int c = 0; c < co; ++c) {
                        gwr[c] += fa * ob[c];
                        acc += wr[c] * ob[c];
                    }
                    di[a] += acc;
                }
            }
            for (int c = 0; c < co; ++c) gk.bias[c] += ob[c];
        }
    }

    static SparseTensor<T> apply_deconv(const SparseTensor<T>& t, const ConvKernel<T>& k,
                                        const DeconvMap& m) {
        SparseTensor<T> out;
        out.stride = t.stride / 2;
        out.channels = k.out_channels;
        out.coords = m.out_coords;
        out.feats = Matrix<T>(int(m.out_coords.size()), k.out_channels);
        const int ci = k.in_channels, co = k.out_channels;
        for (int r = 0; r < int(m.out_coords.size()); ++r) {
            T* acc = out.feats.row(r);
            for (int c = 0; c < co; ++c) acc[c] = k.bias[c];
            for (int p = m.row_begin[r]; p < m.row_begin[r + 1]; ++p) {
                const T* w = k.tap(m.pairs[p].first);
                const T* f = t.feats.row(m.pairs[p].second);
                for (int a = 0; a < ci; ++a) axpy(co, f[a], w + size_t(a) * co, acc);
            }
        }
        out.rebuild_index();
        return out;
    }

    static void deconv_backward(const SparseTensor<T>& in, const ConvKernel<T>& k,
                                const DeconvMap& m, const Matrix<T>& dout, ConvKernel<T>& gk,
                                Matrix<T>& din) {
        const int ci = k.in_channels, co = k.out_channels;
        for (int r = 0; r < int(m.out_coords.size()); ++r) {
            const T* ob = dout.row(r);
            for (int p = m.row_begin[r]; p < m.row_begin[r + 1]; ++p) {
                int tap = m.pairs[p].first, ir = m.pairs[p].second;
                const T* f = in.feats.row(ir);
                const T* w = k.tap(tap);
                T* gw = gk.tap(tap);
                T* di = din.row(ir);
                for (int a = 0; a < ci; ++a) {
                    T fa = f[a];
                    const T* wr = w + size_t(a) * co;
                    T* gwr = gw + size_t(a) * co;
                    T acc = T(0);
                    for (int c = 0; c < co; ++c) {
                        gwr[c] += fa * ob[c];
                        acc += wr[c] * ob[c];
                    }
                    di[a] += acc;
                }
            }
            for (int c = 0; c < co; ++c) gk.bias[c] += ob[c];
        }
    }
};

} // namespace lode
