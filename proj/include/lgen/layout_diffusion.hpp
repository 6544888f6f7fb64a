#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "lgen/box.hpp"
#include "lgen/gcn.hpp"
#include "lgen/geom_losses.hpp"
#include "lgen/nn.hpp"
#include "lgen/optimizer.hpp"
#include "lgen/scene_graph.hpp"
#include "lgen/schedule.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

struct LayoutDenoiserConfig {
    int64_t d_model = 64;
    int64_t time_dim = 32;
    int heads = 4;
    int blocks = 2;
    int context_gcn_layers = 2;
    int64_t mlp_hidden = 128;
};

// Cross-attention denoiser shared across nodes. Each node's query comes from
// its noisy layout and the time embedding; keys/values come from the graph
// context C_t.
struct LayoutDenoiser {
    LayoutDenoiserConfig cfg;
    TripletGcn context_gcn;  // over concat(V_z, pi(t), b_t)
    Linear in_proj;          // (8 + time_dim + d_model) -> d_model; the context
                             // row keeps each query aligned with its own node
    struct Block {
        Linear wq, wk, wv, wo;
        Tensor ln1_gamma, ln1_beta;
        Mlp mlp;
        Tensor ln2_gamma, ln2_beta;
    };
    std::vector<Block> blocks;
    Linear out_head;  // d_model -> 8

    LayoutDenoiser() = default;
    LayoutDenoiser(const LayoutDenoiserConfig& c, int64_t sem_dim, int64_t edge_embed_dim,
                   Rng& rng)
        : cfg(c),
          context_gcn(sem_dim + c.time_dim + 8, edge_embed_dim, c.d_model,
                      c.context_gcn_layers, c.mlp_hidden, rng),
          in_proj(8 + c.time_dim + c.d_model, c.d_model, rng),
          out_head(c.d_model, 8, rng) {
        if (c.d_model % c.heads != 0)
            throw std::invalid_argument("LayoutDenoiser: d_model not divisible by heads");
        for (int i = 0; i < c.blocks; ++i) {
            Block b;
            b.wq = Linear(c.d_model, c.d_model, rng);
            b.wk = Linear(c.d_model, c.d_model, rng);
            b.wv = Linear(c.d_model, c.d_model, rng);
            b.wo = Linear(c.d_model, c.d_model, rng);
            b.ln1_gamma = Tensor::full({c.d_model}, 1.0, true);
            b.ln1_beta = Tensor::zeros({c.d_model}, true);
            b.mlp = Mlp(c.d_model, c.mlp_hidden, c.d_model, rng);
            b.ln2_gamma = Tensor::full({c.d_model}, 1.0, true);
            b.ln2_beta = Tensor::zeros({c.d_model}, true);
            blocks.push_back(std::move(b));
        }
    }

    std::vector<std::pair<std::string, Tensor>> named_params(
        const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        auto ctx = context_gcn.named_params(prefix + "context_gcn.");
        out.insert(out.end(), ctx.begin(), ctx.end());
        in_proj.collect(out, prefix + "in_proj");
        out_head.collect(out, prefix + "out_head");
        for (size_t i = 0; i < blocks.size(); ++i) {
            const Block& b = blocks[i];
            std::string p = prefix + "block." + std::to_string(i) + ".";
            b.wq.collect(out, p + "wq");
            b.wk.collect(out, p + "wk");
            b.wv.collect(out, p + "wv");
            b.wo.collect(out, p + "wo");
            out.emplace_back(p + "ln1.gamma", b.ln1_gamma);
            out.emplace_back(p + "ln1.beta", b.ln1_beta);
            b.mlp.collect(out, p + "mlp");
            out.emplace_back(p + "ln2.gamma", b.ln2_gamma);
            out.emplace_back(p + "ln2.beta", b.ln2_beta);
        }
        return out;
    }
};

// Time-varying context: the context GCN over concat(V_z, pi(t), b_t).
inline Tensor build_context(const Tensor& v_z, const Tensor& b_t, int t,
                            const EmbeddedGraph& graph, const LayoutDenoiser& den) {
    int64_t m = v_z.dim(0);
    if (b_t.rank() != 2 || b_t.dim(0) != m || b_t.dim(1) != 8)
        throw std::invalid_argument("build_context: b_t shape " +
                                    shape_str(b_t.shape()) + " does not match M=" +
                                    std::to_string(m));
    Tensor pt = repeat_rows(sinusoidal_embedding(t, den.cfg.time_dim), m);
    Tensor tilde = concat({v_z, pt, b_t}, 1);
    return den.context_gcn.encode(tilde, graph.edge_features, graph.edge_index);
}

namespace detail {

inline Tensor cross_attention(const LayoutDenoiser::Block& blk, const Tensor& x,
                              const Tensor& ctx, int heads) {
    int64_t d = x.dim(1);
    int64_t dh = d / heads;
    Tensor q = blk.wq(x), k = blk.wk(ctx), v = blk.wv(ctx);
    std::vector<Tensor> outs;
    for (int h = 0; h < heads; ++h) {
        Tensor qh = narrow(q, 1, h * dh, dh);
        Tensor kh = narrow(k, 1, h * dh, dh);
        Tensor vh = narrow(v, 1, h * dh, dh);
        Tensor scores = scalar_mul(matmul(qh, transpose(kh)),
                                   1.0 / std::sqrt(static_cast<double>(dh)));
        outs.push_back(matmul(softmax(scores, 1), vh));
    }
    return blk.wo(concat(outs, 1));
}

}  // namespace detail

inline Tensor denoise_eps(const Tensor& b_t, int t, const Tensor& c_t,
                          const LayoutDenoiser& den) {
    int64_t m = b_t.dim(0);
    if (c_t.dim(0) != m)
        throw std::invalid_argument("denoise_eps: context rows " +
                                    std::to_string(c_t.dim(0)) + " != M " +
                                    std::to_string(m));
    Tensor pt = repeat_rows(sinusoidal_embedding(t, den.cfg.time_dim), m);
    Tensor x = den.in_proj(concat({b_t, pt, c_t}, 1));
    for (const auto& blk : den.blocks) {
        Tensor a = detail::cross_attention(blk, x, c_t, den.cfg.heads);
        x = layer_norm(add(x, a), blk.ln1_gamma, blk.ln1_beta);
        x = layer_norm(add(x, blk.mlp(x)), blk.ln2_gamma, blk.ln2_beta);
    }
    Tensor out = den.out_head(x);
    for (double v : out.data())
        if (!std::isfinite(v))
            throw std::runtime_error("denoise_eps: non-finite output (bad parameters?)");
    return out;
}

inline Tensor reverse_step(const Tensor& b_t, int t, const Tensor& c_t,
                           const DiffusionSchedule& sched, const LayoutDenoiser& den,
                           const Tensor& z) {
    sched.check_t(t);
    Tensor eps_hat = denoise_eps(b_t, t, c_t, den);
    double at = sched.alpha[static_cast<size_t>(t)];
    double coef = (1.0 - at) / std::sqrt(1.0 - sched.alpha_bar[static_cast<size_t>(t)]);
    Tensor mean_part =
        scalar_mul(sub(b_t, scalar_mul(eps_hat, coef)), 1.0 / std::sqrt(at));
    if (t == 1) {
        for (double v : z.data())
            if (v != 0.0)
                throw std::invalid_argument("reverse_step: z must be 0 at t=1");
        return mean_part;
    }
    return add(mean_part, scalar_mul(z, sched.sigma[static_cast<size_t>(t)]));
}

// Full bundle for the layout stage.
struct LayoutModels {
    EmbeddingProvider provider;
    LearnableGraphEmbeddings embeddings;
    TripletGcn semantic_gcn;
    LayoutDenoiser denoiser;
    NormalizationSpec norm;

    LayoutModels() = default;
    LayoutModels(const std::vector<std::string>& classes, int d_g, int d_o,
                 int64_t sem_width, int sem_layers, int64_t sem_hidden,
                 const LayoutDenoiserConfig& dcfg, const NormalizationSpec& spec,
                 Rng& rng)
        : provider(d_g),
          embeddings(classes, d_o, rng),
          semantic_gcn(d_g + d_o, d_g + d_o, sem_width, sem_layers, sem_hidden, rng),
          denoiser(dcfg, sem_width, d_g + d_o, rng),
          norm(spec) {}

    std::vector<std::pair<std::string, Tensor>> named_params() const {
        std::vector<std::pair<std::string, Tensor>> out =
            embeddings.named_params("layout.embed.");
        auto g = semantic_gcn.named_params("layout.gcn.");
        out.insert(out.end(), g.begin(), g.end());
        auto d = denoiser.named_params("layout.denoiser.");
        out.insert(out.end(), d.begin(), d.end());
        return out;
    }

    std::vector<Tensor> params() const {
        std::vector<Tensor> out;
        for (auto& [n, t] : named_params()) out.push_back(t);
        return out;
    }
};

struct LayoutTrainConfig {
    double lambda1 = 0.1;  // collision
    double lambda2 = 0.1;  // IoU alignment
    double lambda3 = 1.0;  // diffusion
    double delta = 0.05;
    int batch_size = 8;
    int steps = 2000;
    double learning_rate = 1e-3;
};

struct LayoutLossReport {
    double l_diff = 0, l_collision = 0, l_iou = 0, total = 0;
};

inline Tensor encode_gt_vectors(const SceneGraph& g, const NormalizationSpec& spec) {
    int64_t m = static_cast<int64_t>(g.nodes.size());
    std::vector<double> data(static_cast<size_t>(m) * 8);
    for (int64_t i = 0; i < m; ++i) {
        const auto& n = g.nodes[static_cast<size_t>(i)];
        if (!n.box)
            throw std::invalid_argument("encode_gt_vectors: node " +
                                        std::to_string(n.id) + " has no box");
        LayoutVector v = encode_layout(*n.box, spec);
        std::copy(v.begin(), v.end(), data.begin() + i * 8);
    }
    return Tensor::from_data({m, 8}, std::move(data));
}

// One optimization step over a batch of graphs with ground-truth boxes.
inline LayoutLossReport train_layout_step(const std::vector<const SceneGraph*>& batch,
                                          LayoutModels& models,
                                          const LayoutTrainConfig& cfg,
                                          const DiffusionSchedule& sched, Rng& rng,
                                          OptimizerState& opt) {
    if (batch.empty()) throw std::invalid_argument("train_layout_step: empty batch");
    Tape tape;
    Tensor l_diff = Tensor::scalar(0.0);
    Tensor l_col = Tensor::scalar(0.0);
    Tensor l_iou = Tensor::scalar(0.0);
    for (const SceneGraph* g : batch) {
        EmbeddedGraph eg = embed_graph(*g, models.provider, models.embeddings);
        Tensor v_z = encode_graph(eg, models.semantic_gcn);
        Tensor b0 = encode_gt_vectors(*g, models.norm);
        int64_t m = b0.dim(0);
        int t = static_cast<int>(rng.uniform_int(1, sched.T));
        Tensor eps = Tensor::randn({m, 8}, rng);
        Tensor b_t = q_sample(b0, t, eps, sched);
        Tensor c_t = build_context(v_z, b_t, t, eg, models.denoiser);
        Tensor eps_hat = denoise_eps(b_t, t, c_t, models.denoiser);
        Tensor d = sub(eps, eps_hat);
        l_diff = add(l_diff, scalar_mul(sum(mul(d, d)), 1.0 / static_cast<double>(m)));
        Tensor x0_hat = predict_x0(b_t, eps_hat, t, sched);
        GeomLossTerms terms =
            differentiable_geom_loss_terms(x0_hat, b0, models.norm, cfg.delta);
        l_col = add(l_col, terms.collision);
        l_iou = add(l_iou, terms.alignment);
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    l_diff = scalar_mul(l_diff, inv);
    l_col = scalar_mul(l_col, inv);
    l_iou = scalar_mul(l_iou, inv);
    Tensor total = add(add(scalar_mul(l_col, cfg.lambda1), scalar_mul(l_iou, cfg.lambda2)),
                       scalar_mul(l_diff, cfg.lambda3));
    tape.backward(total);
    auto params = models.params();
    // global grad-norm clip; attention training is metastable without it
    double sq = 0.0;
    for (Tensor& p : params)
        for (double gv : p.grad()) sq += gv * gv;
    const double max_norm = 1.0;
    if (sq > max_norm * max_norm) {
        double scale = max_norm / std::sqrt(sq);
        for (Tensor& p : params)
            for (double& gv : p.grad()) gv *= scale;
    }
    opt.step(params);
    return {l_diff.value(), l_col.value(), l_iou.value(), total.value()};
}

// Runs the full reverse chain for one graph; C_t is rebuilt every step.
inline std::vector<OrientedBox3D> sample_layouts(const SceneGraph& g,
                                                 const LayoutModels& models,
                                                 const DiffusionSchedule& sched,
                                                 uint64_t seed) {
    if (g.nodes.empty()) throw std::invalid_argument("sample_layouts: empty graph");
    Rng rng(seed);
    EmbeddedGraph eg = embed_graph(g, models.provider, models.embeddings);
    Tensor v_z = encode_graph(eg, models.semantic_gcn);
    int64_t m = static_cast<int64_t>(g.nodes.size());
    Tensor b = Tensor::randn({m, 8}, rng);
    for (int t = sched.T; t >= 1; --t) {
        Tensor c_t = build_context(v_z, b, t, eg, models.denoiser);
        Tensor z = t > 1 ? Tensor::randn({m, 8}, rng) : Tensor::zeros({m, 8});
        b = reverse_step(b, t, c_t, sched, models.denoiser, z).detached();
    }
    std::vector<OrientedBox3D> out;
    for (int64_t i = 0; i < m; ++i) {
        LayoutVector v;
        for (int j = 0; j < 8; ++j) v[static_cast<size_t>(j)] = b.at(i * 8 + j);
        out.push_back(decode_layout(v, models.norm));
    }
    return out;
}

}  // namespace lgen
