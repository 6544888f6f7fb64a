#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lgen/nn.hpp"
#include "lgen/scene_graph.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

// Triplet GCN: per edge, MLP1 consumes the concatenated
// (source node, edge, destination node) features and emits updated
// (source candidate, edge, destination candidate) features. A node's new
// feature is the average of its per-edge candidates plus MLP2 applied to the
// average of neighbor candidates (zero vector when the neighbor set is empty).
// Messages flow along both in- and out-edges. Isolated nodes take their
// candidate from MLP1 on a self-triple with a zero edge feature.
struct TripletGcn {
    int k_layers = 3;
    int64_t width = 64;
    std::vector<Mlp> mlp1;  // 3D -> hidden -> 3D, per layer
    std::vector<Mlp> mlp2;  // D -> hidden -> D, per layer
    Linear node_proj;       // input dim -> D
    Linear edge_proj;

    TripletGcn() = default;
    TripletGcn(int64_t node_input_dim, int64_t edge_input_dim, int64_t d, int k,
               int64_t hidden, Rng& rng)
        : k_layers(k), width(d), node_proj(node_input_dim, d, rng),
          edge_proj(edge_input_dim, d, rng) {
        if (k < 1) throw std::invalid_argument("TripletGcn: K must be >= 1");
        for (int i = 0; i < k; ++i) {
            mlp1.emplace_back(3 * d, hidden, 3 * d, rng);
            mlp2.emplace_back(d, hidden, d, rng);
        }
    }

    std::vector<std::pair<std::string, Tensor>> named_params(
        const std::string& prefix) const {
        std::vector<std::pair<std::string, Tensor>> out;
        node_proj.collect(out, prefix + "node_proj");
        edge_proj.collect(out, prefix + "edge_proj");
        for (int i = 0; i < k_layers; ++i) {
            mlp1[static_cast<size_t>(i)].collect(out, prefix + "mlp1." + std::to_string(i));
            mlp2[static_cast<size_t>(i)].collect(out, prefix + "mlp2." + std::to_string(i));
        }
        return out;
    }

    // One message-passing layer over width-D features.
    std::pair<Tensor, Tensor> layer(const Tensor& node_feats, const Tensor& edge_feats,
                                    const std::vector<std::pair<int, int>>& edges,
                                    int layer_idx) const {
        if (layer_idx < 0 || layer_idx >= k_layers)
            throw std::invalid_argument("TripletGcn: layer index out of range");
        int64_t m = node_feats.dim(0);
        int64_t d = width;
        int64_t e = static_cast<int64_t>(edges.size());
        for (const auto& [s, t] : edges)
            if (s < 0 || t < 0 || s >= m || t >= m)
                throw std::invalid_argument("TripletGcn: edge index out of range");
        const Mlp& m1 = mlp1[static_cast<size_t>(layer_idx)];
        const Mlp& m2 = mlp2[static_cast<size_t>(layer_idx)];

        Tensor alpha;       // M x D averaged candidates
        Tensor edge_next;   // E x D
        Tensor msg;         // M x D averaged neighbor candidates
        if (e > 0) {
            std::vector<int64_t> src_idx, dst_idx;
            for (const auto& [s, t] : edges) {
                src_idx.push_back(s);
                dst_idx.push_back(t);
            }
            Tensor trip = concat({embedding_lookup(node_feats, src_idx), edge_feats,
                                  embedding_lookup(node_feats, dst_idx)},
                                 1);
            Tensor out1 = m1(trip);  // E x 3D
            Tensor cand_src = narrow(out1, 1, 0, d);
            edge_next = narrow(out1, 1, d, d);
            Tensor cand_dst = narrow(out1, 1, 2 * d, d);
            Tensor cand = concat({cand_src, cand_dst}, 0);  // 2E x D

            // Constant scatter matrices: S averages a node's own candidates,
            // N averages the other endpoint's candidates (its messages).
            std::vector<double> own(static_cast<size_t>(m * 2 * e), 0.0);
            std::vector<double> nbr(static_cast<size_t>(m * 2 * e), 0.0);
            std::vector<int64_t> own_cnt(static_cast<size_t>(m), 0),
                nbr_cnt(static_cast<size_t>(m), 0);
            for (int64_t k = 0; k < e; ++k) {
                own_cnt[static_cast<size_t>(edges[static_cast<size_t>(k)].first)]++;
                own_cnt[static_cast<size_t>(edges[static_cast<size_t>(k)].second)]++;
                nbr_cnt[static_cast<size_t>(edges[static_cast<size_t>(k)].first)]++;
                nbr_cnt[static_cast<size_t>(edges[static_cast<size_t>(k)].second)]++;
            }
            for (int64_t k = 0; k < e; ++k) {
                int64_t s = edges[static_cast<size_t>(k)].first;
                int64_t t = edges[static_cast<size_t>(k)].second;
                own[static_cast<size_t>(s * 2 * e + k)] =
                    1.0 / static_cast<double>(own_cnt[static_cast<size_t>(s)]);
                own[static_cast<size_t>(t * 2 * e + e + k)] =
                    1.0 / static_cast<double>(own_cnt[static_cast<size_t>(t)]);
                // candidate for dst is a message to src and vice versa
                nbr[static_cast<size_t>(s * 2 * e + e + k)] =
                    1.0 / static_cast<double>(nbr_cnt[static_cast<size_t>(s)]);
                nbr[static_cast<size_t>(t * 2 * e + k)] =
                    1.0 / static_cast<double>(nbr_cnt[static_cast<size_t>(t)]);
            }
            alpha = matmul(Tensor::from_data({m, 2 * e}, std::move(own)), cand);
            msg = matmul(Tensor::from_data({m, 2 * e}, std::move(nbr)), cand);

            // Patch isolated nodes with the alpha from a self-triple.
            std::vector<int64_t> iso;
            for (int64_t i = 0; i < m; ++i)
                if (own_cnt[static_cast<size_t>(i)] == 0) iso.push_back(i);
            if (!iso.empty()) {
                Tensor self = embedding_lookup(node_feats, iso);
                Tensor trip_self =
                    concat({self, Tensor::zeros({static_cast<int64_t>(iso.size()), d}),
                            self},
                           1);
                Tensor a_self = narrow(m1(trip_self), 1, 0, d);
                std::vector<double> sel(static_cast<size_t>(m * iso.size()), 0.0);
                for (size_t k = 0; k < iso.size(); ++k)
                    sel[static_cast<size_t>(iso[k]) * iso.size() + k] = 1.0;
                alpha = add(alpha,
                            matmul(Tensor::from_data(
                                       {m, static_cast<int64_t>(iso.size())}, std::move(sel)),
                                   a_self));
            }
        } else {
            Tensor trip_self =
                concat({node_feats, Tensor::zeros({m, d}), node_feats}, 1);
            alpha = narrow(m1(trip_self), 1, 0, d);
            msg = Tensor::zeros({m, d});
            edge_next = edge_feats;
        }
        Tensor node_next = add(alpha, m2(msg));
        return {node_next, edge_next};
    }

    // Projects raw embedded features to width D and runs all K layers.
    Tensor encode(const Tensor& node_embed, const Tensor& edge_embed,
                  const std::vector<std::pair<int, int>>& edges) const {
        Tensor nodes = node_proj(node_embed);
        Tensor e = edges.empty() ? Tensor::zeros({0, width}) : edge_proj(edge_embed);
        for (int k = 0; k < k_layers; ++k) {
            auto [n2, e2] = layer(nodes, e, edges, k);
            nodes = n2;
            e = e2;
        }
        return nodes;
    }
};

inline Tensor encode_graph(const EmbeddedGraph& g, const TripletGcn& gcn) {
    return gcn.encode(g.node_features, g.edge_features, g.edge_index);
}

}  // namespace lgen
