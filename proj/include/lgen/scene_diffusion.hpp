#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lgen/nn.hpp"
#include "lgen/optimizer.hpp"
#include "lgen/range_image.hpp"
#include "lgen/rng.hpp"
#include "lgen/schedule.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

struct SceneModelConfig {
    int h = 32, w = 256;
    std::array<int64_t, 3> widths = {32, 64, 128};  // per resolution level
    int64_t time_dim = 32;
    double depth_max = 80.0;  // meters mapped to [-1, 1]
};

struct Conv {
    Tensor weight;  // [out, in, k, k]
    Tensor bias;    // [out]
    int padding = 0;

    Conv() = default;
    Conv(int64_t in, int64_t out, int k, Rng& rng, int pad = 0) : padding(pad) {
        double s = std::sqrt(2.0 / static_cast<double>(in * k * k));
        weight = Tensor::randn({out, in, k, k}, rng, s, true);
        bias = Tensor::zeros({out}, true);
    }

    Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, 1, padding); }

    void collect(std::vector<std::pair<std::string, Tensor>>& out,
                 const std::string& prefix) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// 3x3 conv + per-channel time bias + SiLU.
struct ConvBlock {
    Conv conv;
    Linear time_bias;  // time_dim -> out channels

    ConvBlock() = default;
    ConvBlock(int64_t in, int64_t out, int64_t time_dim, Rng& rng)
        : conv(in, out, 3, rng, 1), time_bias(time_dim, out, rng) {}

    Tensor operator()(const Tensor& x, const Tensor& t_emb) const {
        Tensor h = conv(x);
        Tensor tb = reshape(time_bias(t_emb), {h.dim(0), 1, 1});
        return silu(add(h, tb));
    }

    void collect(std::vector<std::pair<std::string, Tensor>>& out,
                 const std::string& prefix) const {
        conv.collect(out, prefix + ".conv");
        time_bias.collect(out, prefix + ".time");
    }
};

// Per-level condition output: features plus the modulation maps derived from
// them. omega is a 1xHxW spatial gate in (0,1); scale/shift are channel maps
// matching the decoder feature at that level.
struct FciLevel {
    Tensor features;  // C_i x h_i x w_i
    Tensor scale;
    Tensor shift;
    Tensor omega;  // 1 x h_i x w_i
    Tensor mask;   // 1 x h_i x w_i, constant
};

// Eq-style modulation: X_p = X_f (1 + scale * omega) + shift * omega.
inline Tensor fci_modulate(const Tensor& x_f, const Tensor& scale, const Tensor& shift,
                           const Tensor& omega) {
    if (x_f.shape() != scale.shape() || x_f.shape() != shift.shape())
        throw std::invalid_argument("fci_modulate: scale/shift shape " +
                                    shape_str(scale.shape()) + " does not match " +
                                    shape_str(x_f.shape()));
    if (omega.rank() != 3 || omega.dim(0) != 1 || omega.dim(1) != x_f.dim(1) ||
        omega.dim(2) != x_f.dim(2))
        throw std::invalid_argument("fci_modulate: omega shape " +
                                    shape_str(omega.shape()) + " not broadcastable to " +
                                    shape_str(x_f.shape()));
    Tensor so = mul(scale, omega);
    return add(mul(x_f, scalar_add(so, 1.0)), mul(shift, omega));
}

// Foreground-aware control injector: a small condition encoder whose features
// are masked by the foreground occupancy before every nonlinearity, plus per
// level 1x1 scale/shift heads and a reduce -> SiLU -> expand -> sigmoid gate.
struct FciModule {
    SceneModelConfig cfg;
    Conv stem;                    // 2 -> widths[0]
    std::array<Conv, 3> res_a, res_b;  // per-level residual pair
    std::array<Conv, 3> down;          // strided-equivalent via pool; 1x1 width change
    std::array<Conv, 3> scale_head, shift_head;
    std::array<Conv, 3> gate_reduce, gate_expand;

    FciModule() = default;
    FciModule(const SceneModelConfig& c, Rng& rng) : cfg(c) {
        stem = Conv(2, c.widths[0], 3, rng, 1);
        for (int i = 0; i < 3; ++i) {
            int64_t wi = c.widths[static_cast<size_t>(i)];
            res_a[static_cast<size_t>(i)] = Conv(wi, wi, 3, rng, 1);
            res_b[static_cast<size_t>(i)] = Conv(wi, wi, 3, rng, 1);
            if (i < 2)
                down[static_cast<size_t>(i)] =
                    Conv(wi, c.widths[static_cast<size_t>(i) + 1], 1, rng, 0);
            scale_head[static_cast<size_t>(i)] = Conv(wi, wi, 1, rng, 0);
            shift_head[static_cast<size_t>(i)] = Conv(wi, wi, 1, rng, 0);
            int64_t red = std::max<int64_t>(wi / 4, 1);
            gate_reduce[static_cast<size_t>(i)] = Conv(wi, red, 1, rng, 0);
            gate_expand[static_cast<size_t>(i)] = Conv(red, 1, 1, rng, 0);
        }
    }

    std::vector<std::pair<std::string, Tensor>> named_params(
        const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        stem.collect(out, prefix + "stem");
        for (int i = 0; i < 3; ++i) {
            std::string p = prefix + "level." + std::to_string(i) + ".";
            res_a[static_cast<size_t>(i)].collect(out, p + "res_a");
            res_b[static_cast<size_t>(i)].collect(out, p + "res_b");
            if (i < 2) down[static_cast<size_t>(i)].collect(out, p + "down");
            scale_head[static_cast<size_t>(i)].collect(out, p + "scale");
            shift_head[static_cast<size_t>(i)].collect(out, p + "shift");
            gate_reduce[static_cast<size_t>(i)].collect(out, p + "gate_reduce");
            gate_expand[static_cast<size_t>(i)].collect(out, p + "gate_expand");
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// Image <-> model-space tensors
// ---------------------------------------------------------------------------

// 2 x H x W tensor; depth and intensity both mapped to [-1, 1].
inline Tensor image_to_model(const RangeImage& img, const SceneModelConfig& cfg) {
    if (img.h != cfg.h || img.w != cfg.w)
        throw std::invalid_argument("image_to_model: got " + std::to_string(img.h) + "x" +
                                    std::to_string(img.w) + ", config wants " +
                                    std::to_string(cfg.h) + "x" + std::to_string(cfg.w));
    size_t n = img.depth.size();
    std::vector<double> data(2 * n);
    for (size_t i = 0; i < n; ++i) {
        data[i] = std::clamp(img.depth[i] / cfg.depth_max, 0.0, 1.0) * 2.0 - 1.0;
        data[n + i] = std::clamp(img.intensity[i], 0.0, 1.0) * 2.0 - 1.0;
    }
    return Tensor::from_data({2, cfg.h, cfg.w}, std::move(data));
}

inline RangeImage model_to_image(const Tensor& x, const SceneModelConfig& cfg,
                                 double f_up = kDefaultFovUp,
                                 double f_down = kDefaultFovDown) {
    if (x.shape() != Shape{2, cfg.h, cfg.w})
        throw std::invalid_argument("model_to_image: bad shape " + shape_str(x.shape()));
    RangeImage img(cfg.h, cfg.w, f_up, f_down);
    size_t n = img.depth.size();
    for (size_t i = 0; i < n; ++i) {
        img.depth[i] =
            std::clamp((x.data()[i] + 1.0) / 2.0, 0.0, 1.0) * cfg.depth_max;
        img.intensity[i] = std::clamp((x.data()[n + i] + 1.0) / 2.0, 0.0, 1.0);
    }
    return img;
}

// Constant 1 x h x w mask tensor from a byte mask.
inline Tensor mask_tensor(const std::vector<uint8_t>& mask, int h, int w) {
    std::vector<double> d(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) d[i] = mask[i] ? 1.0 : 0.0;
    return Tensor::from_data({1, h, w}, std::move(d));
}

// ---------------------------------------------------------------------------
// Condition extraction
// ---------------------------------------------------------------------------

inline std::vector<FciLevel> extract_condition(const RangeImage& fg_img,
                                               const FciModule& fci) {
    const SceneModelConfig& cfg = fci.cfg;
    Tensor x = image_to_model(fg_img, cfg);
    auto masks = mask_pyramid(fg_img, 3);
    std::vector<FciLevel> out;
    Tensor h;
    int lh = cfg.h, lw = cfg.w;
    for (int i = 0; i < 3; ++i) {
        Tensor m = mask_tensor(masks[static_cast<size_t>(i)], lh, lw);
        if (i == 0)
            h = silu(mul(fci.stem(x), m));
        else {
            h = silu(mul(fci.down[static_cast<size_t>(i) - 1](max_pool2d(h)), m));
        }
        // residual pair, masked before each nonlinearity
        Tensor r = silu(mul(fci.res_a[static_cast<size_t>(i)](h), m));
        h = add(h, mul(fci.res_b[static_cast<size_t>(i)](r), m));
        FciLevel lvl;
        lvl.features = h;
        lvl.scale = fci.scale_head[static_cast<size_t>(i)](h);
        lvl.shift = fci.shift_head[static_cast<size_t>(i)](h);
        lvl.omega = sigmoid(
            fci.gate_expand[static_cast<size_t>(i)](silu(fci.gate_reduce[static_cast<size_t>(i)](h))));
        lvl.mask = m;
        out.push_back(std::move(lvl));
        lh /= 2;
        lw /= 2;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scene denoiser (3-level encoder/decoder with skips)
// ---------------------------------------------------------------------------

struct SceneDenoiser {
    SceneModelConfig cfg;
    ConvBlock enc0a, enc0b, enc1a, enc1b, enc2a, enc2b;
    ConvBlock dec1a, dec1b, dec0a, dec0b;
    Conv out_conv;  // widths[0] -> 2, 1x1

    SceneDenoiser() = default;
    SceneDenoiser(const SceneModelConfig& c, Rng& rng) : cfg(c) {
        auto [w0, w1, w2] = c.widths;
        enc0a = ConvBlock(2, w0, c.time_dim, rng);
        enc0b = ConvBlock(w0, w0, c.time_dim, rng);
        enc1a = ConvBlock(w0, w1, c.time_dim, rng);
        enc1b = ConvBlock(w1, w1, c.time_dim, rng);
        enc2a = ConvBlock(w1, w2, c.time_dim, rng);
        enc2b = ConvBlock(w2, w2, c.time_dim, rng);
        dec1a = ConvBlock(w2 + w1, w1, c.time_dim, rng);
        dec1b = ConvBlock(w1, w1, c.time_dim, rng);
        dec0a = ConvBlock(w1 + w0, w0, c.time_dim, rng);
        dec0b = ConvBlock(w0, w0, c.time_dim, rng);
        out_conv = Conv(w0, 2, 1, rng, 0);
    }

    std::vector<std::pair<std::string, Tensor>> named_params(
        const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        enc0a.collect(out, prefix + "enc0a");
        enc0b.collect(out, prefix + "enc0b");
        enc1a.collect(out, prefix + "enc1a");
        enc1b.collect(out, prefix + "enc1b");
        enc2a.collect(out, prefix + "enc2a");
        enc2b.collect(out, prefix + "enc2b");
        dec1a.collect(out, prefix + "dec1a");
        dec1b.collect(out, prefix + "dec1b");
        dec0a.collect(out, prefix + "dec0a");
        dec0b.collect(out, prefix + "dec0b");
        out_conv.collect(out, prefix + "out");
        return out;
    }
};

// Predicted noise for x_t; when `cond` is non-null its three levels modulate
// the decoder features (bottleneck = level 2, then 1, then 0).
inline Tensor denoise_scene_eps(const Tensor& x_t, int t, const SceneDenoiser& den,
                                const std::vector<FciLevel>* cond) {
    const SceneModelConfig& cfg = den.cfg;
    if (x_t.shape() != Shape{2, cfg.h, cfg.w})
        throw std::invalid_argument("denoise_scene_eps: bad input shape " +
                                    shape_str(x_t.shape()));
    if (cond && cond->size() != 3)
        throw std::invalid_argument("denoise_scene_eps: condition must have 3 levels");
    Tensor temb = sinusoidal_embedding(t, cfg.time_dim);
    Tensor s0 = den.enc0b(den.enc0a(x_t, temb), temb);
    Tensor s1 = den.enc1b(den.enc1a(max_pool2d(s0), temb), temb);
    Tensor h = den.enc2b(den.enc2a(max_pool2d(s1), temb), temb);
    if (cond)
        h = fci_modulate(h, (*cond)[2].scale, (*cond)[2].shift, (*cond)[2].omega);
    h = den.dec1b(den.dec1a(concat({upsample_nearest2d(h), s1}, 0), temb), temb);
    if (cond)
        h = fci_modulate(h, (*cond)[1].scale, (*cond)[1].shift, (*cond)[1].omega);
    h = den.dec0b(den.dec0a(concat({upsample_nearest2d(h), s0}, 0), temb), temb);
    if (cond)
        h = fci_modulate(h, (*cond)[0].scale, (*cond)[0].shift, (*cond)[0].omega);
    return den.out_conv(h);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct SceneModels {
    SceneModelConfig cfg;
    SceneDenoiser denoiser;
    FciModule fci;

    SceneModels() = default;
    SceneModels(const SceneModelConfig& c, Rng& rng)
        : cfg(c), denoiser(c, rng), fci(c, rng) {}

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out =
            denoiser.named_params("scene.denoiser.");
        auto f = fci.named_params("scene.fci.");
        out.insert(out.end(), f.begin(), f.end());
        return out;
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (auto& [n, t] : named_params()) out.push_back(t);
        return out;
    }
};

struct SceneTrainConfig {
    double lambda4 = 1.0;  // full-image loss
    double lambda5 = 2.0;  // foreground loss
    double learning_rate = 1e-3;
    bool use_fci = true;   // false trains the unconditional ablation
};

struct SceneLossReport {
    double l_scene = 0, l_fore = 0, total = 0;
};

// One optimization step on (scene image, foreground image) pairs. L_scene is
// the plain MSE over all pixels; L_fore restricts it to the foreground mask,
// normalized by the mask count so it degenerates to L_scene for an all-ones
// mask.
inline SceneLossReport train_scene_step(
    const std::vector<std::pair<const RangeImage*, const RangeImage*>>& batch,
    SceneModels& models, const SceneTrainConfig& cfg, const DiffusionSchedule& sched,
    Rng& rng, OptimizerState& opt) {
    if (batch.empty()) throw std::invalid_argument("train_scene_step: empty batch");
    Tape tape;
    Tensor l_scene = Tensor::scalar(0.0);
    Tensor l_fore = Tensor::scalar(0.0);
    for (auto [scene, fg] : batch) {
        Tensor x0 = image_to_model(*scene, models.cfg);
        int t = static_cast<int>(rng.uniform_int(1, sched.T));
        Tensor eps = Tensor::randn(x0.shape(), rng);
        Tensor x_t = q_sample(x0, t, eps, sched);
        std::vector<FciLevel> cond;
        if (cfg.use_fci) cond = extract_condition(*fg, models.fci);
        Tensor eps_hat =
            denoise_scene_eps(x_t, t, models.denoiser, cfg.use_fci ? &cond : nullptr);
        Tensor d = sub(eps, eps_hat);
        Tensor d2 = mul(d, d);
        l_scene = add(l_scene,
                      scalar_mul(sum(d2), 1.0 / static_cast<double>(x0.numel())));
        Tensor m = mask_tensor(foreground_mask(*fg), models.cfg.h, models.cfg.w);
        double mcount = 0;
        for (double v : m.data()) mcount += v;
        l_fore = add(l_fore, scalar_mul(sum(mul(d2, m)),
                                        1.0 / (2.0 * std::max(mcount, 1.0))));
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    l_scene = scalar_mul(l_scene, inv);
    l_fore = scalar_mul(l_fore, inv);
    Tensor total =
        add(scalar_mul(l_scene, cfg.lambda4), scalar_mul(l_fore, cfg.lambda5));
    tape.backward(total);
    // the FCI module gets no gradient when conditioning is off
    std::vector<Tensor> params;
    if (cfg.use_fci) {
        params = models.params();
    } else {
        for (auto& [n, t] : models.denoiser.named_params("scene.denoiser."))
            params.push_back(t);
    }
    opt.step(params);
    return {l_scene.value(), l_fore.value(), total.value()};
}

// ---------------------------------------------------------------------------
// Sampling and repaint completion
// ---------------------------------------------------------------------------

inline RangeImage sample_scene(const RangeImage& fg_img, const SceneModels& models,
                               const DiffusionSchedule& sched, uint64_t seed,
                               bool use_fci = true) {
    Rng rng(seed);
    Tensor x = Tensor::randn({2, models.cfg.h, models.cfg.w}, rng);
    std::vector<FciLevel> cond;
    if (use_fci) cond = extract_condition(fg_img, models.fci);
    for (int t = sched.T; t >= 1; --t) {
        Tensor eps_hat =
            denoise_scene_eps(x, t, models.denoiser, use_fci ? &cond : nullptr);
        std::vector<double> z(x.data().size(), 0.0);
        if (t > 1)
            for (double& v : z) v = rng.normal();
        auto next = reverse_step_values(x.data(), eps_hat.data(), t, sched, z);
        // keep the chain on the data range; small models drift otherwise
        for (double& v : next) v = std::clamp(v, -1.0, 1.0);
        x = Tensor::from_data(x.shape(), std::move(next));
    }
    return model_to_image(x, models.cfg, fg_img.f_up, fg_img.f_down);
}

// Repaint-style completion: known pixels (keep_mask) are replaced each step by
// their forward-noised ground-truth values; the final image restores them
// exactly. Runs the unconditional denoiser.
inline RangeImage repaint_complete(const RangeImage& sparse,
                                   const std::vector<uint8_t>& keep_mask,
                                   const SceneModels& models,
                                   const DiffusionSchedule& sched, uint64_t seed) {
    size_t n = static_cast<size_t>(models.cfg.h) * static_cast<size_t>(models.cfg.w);
    if (keep_mask.size() != n)
        throw std::invalid_argument("repaint_complete: mask size mismatch");
    bool any_keep = false;
    for (uint8_t k : keep_mask) any_keep |= k != 0;
    Rng rng(seed);
    Tensor x0 = image_to_model(sparse, models.cfg);
    Tensor x = Tensor::randn({2, models.cfg.h, models.cfg.w}, rng);
    // resampling jumps: re-noise x_{t-1} back to level t and denoise again so
    // generated pixels harmonize with the spliced known content
    const int kResample = 4;
    for (int t = sched.T; t >= 1; --t) {
        int passes = (t > 1 && any_keep) ? kResample : 1;
        for (int u = 0; u < passes; ++u) {
            Tensor eps_hat = denoise_scene_eps(x, t, models.denoiser, nullptr);
            // completion targets reconstruction error, so follow the posterior
            // mean instead of sampling it (z = 0)
            std::vector<double> z(x.data().size(), 0.0);
            auto next = reverse_step_values(x.data(), eps_hat.data(), t, sched, z);
            for (double& v : next) v = std::clamp(v, -1.0, 1.0);
            if (t > 1 && any_keep) {
                // forward-noise the known pixels to level t-1 and splice them in
                std::vector<double> eps_k(x.data().size());
                for (double& v : eps_k) v = rng.normal();
                auto known = q_sample(x0.data(), t - 1, eps_k, sched);
                for (size_t i = 0; i < n; ++i)
                    if (keep_mask[i]) {
                        next[i] = known[i];
                        next[n + i] = known[n + i];
                    }
            } else {
                for (size_t i = 0; i < n; ++i)
                    if (keep_mask[i]) {
                        next[i] = x0.data()[i];
                        next[n + i] = x0.data()[n + i];
                    }
            }
            if (u + 1 < passes) {
                // one forward diffusion step from t-1 back to t
                double sa = std::sqrt(sched.alpha[t]);
                double sb = std::sqrt(sched.beta[t]);
                for (double& v : next) v = sa * v + sb * rng.normal();
            }
            x = Tensor::from_data(x.shape(), std::move(next));
        }
    }
    RangeImage out = model_to_image(x, models.cfg, sparse.f_up, sparse.f_down);
    // bit-exact restoration of known pixels
    for (size_t i = 0; i < n; ++i)
        if (keep_mask[i]) {
            out.depth[i] = sparse.depth[i];
            out.intensity[i] = sparse.intensity[i];
        }
    return out;
}

}  // namespace lgen
