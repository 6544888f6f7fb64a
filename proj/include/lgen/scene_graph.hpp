#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgen/box.hpp"
#include "lgen/rng.hpp"
#include "lgen/tensor.hpp"

namespace lgen {

// ---------------------------------------------------------------------------
// Relation vocabulary
// ---------------------------------------------------------------------------

enum class Relation : int {
    FrontOf = 0,
    Behind,
    LeftOf,
    RightOf,
    CloseBy,
    BiggerThan,
    SmallerThan,
    TallerThan,
    ShorterThan,
};

inline constexpr int kNumRelations = 9;

inline const char* relation_name(Relation r) {
    switch (r) {
        case Relation::FrontOf: return "front of";
        case Relation::Behind: return "behind";
        case Relation::LeftOf: return "left of";
        case Relation::RightOf: return "right of";
        case Relation::CloseBy: return "close by";
        case Relation::BiggerThan: return "bigger than";
        case Relation::SmallerThan: return "smaller than";
        case Relation::TallerThan: return "taller than";
        case Relation::ShorterThan: return "shorter than";
    }
    return "?";
}

inline bool relation_is_easy(Relation r) {
    switch (r) {
        case Relation::FrontOf:
        case Relation::Behind:
        case Relation::LeftOf:
        case Relation::RightOf:
            return true;
        default:
            return false;
    }
}

inline std::optional<Relation> relation_from_name(const std::string& name) {
    for (int i = 0; i < kNumRelations; ++i)
        if (name == relation_name(static_cast<Relation>(i)))
            return static_cast<Relation>(i);
    return std::nullopt;
}

struct RelationVocabulary {
    struct Entry {
        Relation rel;
        std::string name;
        bool easy;
    };
    std::vector<Entry> entries;

    static RelationVocabulary standard() {
        RelationVocabulary v;
        for (int i = 0; i < kNumRelations; ++i) {
            Relation r = static_cast<Relation>(i);
            v.entries.push_back({r, relation_name(r), relation_is_easy(r)});
        }
        return v;
    }
};

// Thresholds for automatic relation extraction. Ratios compare the larger
// quantity to the smaller one.
struct RelationRuleSet {
    double close_by_dist = 5.0;    // BEV center distance, meters
    double volume_ratio = 1.2;     // bigger/smaller than
    double height_ratio = 1.2;     // taller/shorter than
};

// ---------------------------------------------------------------------------
// SceneGraph
// ---------------------------------------------------------------------------

struct SceneGraph {
    struct Node {
        int id = 0;
        std::string cls;
        std::optional<OrientedBox3D> box;
    };
    struct Edge {
        int src = 0, dst = 0;
        Relation rel = Relation::FrontOf;
    };

    std::string scene_id;
    std::vector<Node> nodes;
    std::vector<Edge> edges;

    const Node* find_node(int id) const {
        for (const auto& n : nodes)
            if (n.id == id) return &n;
        return nullptr;
    }

    int node_index(int id) const {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].id == id) return static_cast<int>(i);
        return -1;
    }

    void validate() const {
        std::set<int> ids;
        for (const auto& n : nodes)
            if (!ids.insert(n.id).second)
                throw std::invalid_argument("SceneGraph: duplicate node id " +
                                            std::to_string(n.id));
        for (const auto& e : edges) {
            if (e.src == e.dst)
                throw std::invalid_argument("SceneGraph: self-edge at node " +
                                            std::to_string(e.src));
            if (!ids.count(e.src) || !ids.count(e.dst))
                throw std::invalid_argument("SceneGraph: edge references missing node " +
                                            std::to_string(ids.count(e.src) ? e.dst
                                                                            : e.src));
        }
    }
};

// ---------------------------------------------------------------------------
// Relation extraction
// ---------------------------------------------------------------------------

// Emits, for every ordered pair (A,B): exactly one positional edge
// (front of / behind / left of / right of from the ego-frame displacement,
// x forward, y left), "close by" when the BEV distance is under threshold,
// and comparative edges when the volume/height ratios exceed theirs.
inline SceneGraph extract_relations(
    const std::vector<std::pair<std::string, OrientedBox3D>>& boxes,
    const RelationRuleSet& rules = {}, const std::string& scene_id = "") {
    if (boxes.empty())
        throw std::invalid_argument("extract_relations: need at least one box");
    SceneGraph g;
    g.scene_id = scene_id;
    for (size_t i = 0; i < boxes.size(); ++i)
        g.nodes.push_back({static_cast<int>(i), boxes[i].first, boxes[i].second});
    int n = static_cast<int>(boxes.size());
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            if (a == b) continue;
            const OrientedBox3D& ba = boxes[static_cast<size_t>(a)].second;
            const OrientedBox3D& bb = boxes[static_cast<size_t>(b)].second;
            double dx = ba.center.x - bb.center.x;
            double dy = ba.center.y - bb.center.y;
            Relation pos;
            if (std::fabs(dx) >= std::fabs(dy))
                pos = dx > 0 ? Relation::FrontOf : Relation::Behind;
            else
                pos = dy > 0 ? Relation::LeftOf : Relation::RightOf;
            g.edges.push_back({a, b, pos});
            if (std::hypot(dx, dy) < rules.close_by_dist)
                g.edges.push_back({a, b, Relation::CloseBy});
            double va = ba.volume(), vb = bb.volume();
            if (va > rules.volume_ratio * vb)
                g.edges.push_back({a, b, Relation::BiggerThan});
            else if (vb > rules.volume_ratio * va)
                g.edges.push_back({a, b, Relation::SmallerThan});
            if (ba.h > rules.height_ratio * bb.h)
                g.edges.push_back({a, b, Relation::TallerThan});
            else if (bb.h > rules.height_ratio * ba.h)
                g.edges.push_back({a, b, Relation::ShorterThan});
        }
    return g;
}

// ---------------------------------------------------------------------------
// Graph editing
// ---------------------------------------------------------------------------

struct GraphEdit {
    enum class Kind { Insert, Substitute, Remove } kind;
    // Insert
    std::string new_class;
    std::vector<SceneGraph::Edge> new_edges;  // may reference new_node_id
    int new_node_id = -1;                     // -1: allocate max+1
    std::optional<OrientedBox3D> new_box;
    // Substitute / Remove
    int node_id = -1;
};

inline SceneGraph edit_graph(const SceneGraph& g, const GraphEdit& op) {
    SceneGraph out = g;
    switch (op.kind) {
        case GraphEdit::Kind::Insert: {
            int id = op.new_node_id;
            if (id < 0) {
                id = 0;
                for (const auto& n : g.nodes) id = std::max(id, n.id + 1);
            } else if (g.find_node(id)) {
                throw std::invalid_argument("edit_graph: node id " + std::to_string(id) +
                                            " already exists");
            }
            out.nodes.push_back({id, op.new_class, op.new_box});
            for (SceneGraph::Edge e : op.new_edges) {
                if (e.src == -1) e.src = id;
                if (e.dst == -1) e.dst = id;
                out.edges.push_back(e);
            }
            break;
        }
        case GraphEdit::Kind::Substitute: {
            int idx = out.node_index(op.node_id);
            if (idx < 0)
                throw std::invalid_argument("edit_graph: unknown node id " +
                                            std::to_string(op.node_id));
            out.nodes[static_cast<size_t>(idx)].cls = op.new_class;
            break;
        }
        case GraphEdit::Kind::Remove: {
            int idx = out.node_index(op.node_id);
            if (idx < 0)
                throw std::invalid_argument("edit_graph: unknown node id " +
                                            std::to_string(op.node_id));
            out.nodes.erase(out.nodes.begin() + idx);
            std::erase_if(out.edges, [&](const SceneGraph::Edge& e) {
                return e.src == op.node_id || e.dst == op.node_id;
            });
            break;
        }
    }
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// JSON I/O
// ---------------------------------------------------------------------------

inline nlohmann::json box_to_json(const OrientedBox3D& b) {
    return {{"center", {b.center.x, b.center.y, b.center.z}},
            {"size", {b.l, b.h, b.w}},
            {"yaw", b.yaw}};
}

inline OrientedBox3D box_from_json(const nlohmann::json& j) {
    auto c = j.at("center");
    auto s = j.at("size");
    return OrientedBox3D({c.at(0), c.at(1), c.at(2)}, s.at(0), s.at(1), s.at(2),
                         j.at("yaw"));
}

inline nlohmann::json graph_to_json(const SceneGraph& g) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : g.nodes) {
        nlohmann::json jn = {{"id", n.id}, {"class", n.cls}};
        if (n.box) jn["box"] = box_to_json(*n.box);
        nodes.push_back(jn);
    }
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges)
        edges.push_back(
            {{"src", e.src}, {"dst", e.dst}, {"relation", relation_name(e.rel)}});
    return {{"scene_id", g.scene_id}, {"nodes", nodes}, {"edges", edges}};
}

inline SceneGraph graph_from_json(const nlohmann::json& j) {
    SceneGraph g;
    g.scene_id = j.value("scene_id", "");
    for (const auto& jn : j.at("nodes")) {
        SceneGraph::Node n;
        n.id = jn.at("id");
        n.cls = jn.at("class");
        if (jn.contains("box")) n.box = box_from_json(jn.at("box"));
        g.nodes.push_back(n);
    }
    for (const auto& je : j.at("edges")) {
        auto rel = relation_from_name(je.at("relation"));
        if (!rel)
            throw std::invalid_argument("graph_from_json: unknown relation '" +
                                        je.at("relation").get<std::string>() + "'");
        g.edges.push_back({je.at("src"), je.at("dst"), *rel});
    }
    g.validate();
    return g;
}

// ---------------------------------------------------------------------------
// Dataset construction from annotation files
// ---------------------------------------------------------------------------

struct SgDataset {
    std::vector<SceneGraph> graphs;
    std::string split;
    std::map<std::string, int64_t> class_histogram;
    std::map<std::string, int64_t> relation_histogram;
    int64_t skipped_records = 0;
};

inline constexpr int kMaxObjectsPerScene = 16;

// Annotation schema:
// {"scenes":[{"scene_id":str,"boxes":[{"class":str,"center":[x,y,z],
//   "size":[l,h,w],"yaw":float}], "points_file": optional str}]}
inline SgDataset build_sg_dataset(const std::string& annotation_file,
                                  const RelationRuleSet& rules,
                                  const std::string& split,
                                  int max_objects = kMaxObjectsPerScene) {
    std::ifstream is(annotation_file);
    if (!is)
        throw std::runtime_error("build_sg_dataset: cannot open " + annotation_file);
    nlohmann::json j;
    is >> j;
    SgDataset ds;
    ds.split = split;
    for (const auto& js : j.at("scenes")) {
        try {
            std::vector<std::pair<std::string, OrientedBox3D>> boxes;
            for (const auto& jb : js.at("boxes"))
                boxes.emplace_back(jb.at("class").get<std::string>(),
                                   box_from_json(jb));
            if (boxes.empty()) throw std::invalid_argument("scene without boxes");
            if (static_cast<int>(boxes.size()) > max_objects) {
                std::stable_sort(boxes.begin(), boxes.end(),
                                 [](const auto& a, const auto& b) {
                                     auto d = [](const OrientedBox3D& x) {
                                         return std::hypot(x.center.x, x.center.y);
                                     };
                                     return d(a.second) < d(b.second);
                                 });
                boxes.resize(static_cast<size_t>(max_objects));
            }
            SceneGraph g = extract_relations(boxes, rules,
                                             js.value("scene_id", std::string()));
            for (const auto& n : g.nodes) ds.class_histogram[n.cls]++;
            for (const auto& e : g.edges) ds.relation_histogram[relation_name(e.rel)]++;
            ds.graphs.push_back(std::move(g));
        } catch (const std::exception&) {
            ds.skipped_records++;
        }
    }
    if (ds.graphs.empty())
        throw std::runtime_error("build_sg_dataset: no valid scenes in " +
                                 annotation_file);
    return ds;
}

// ---------------------------------------------------------------------------
// Semantic embeddings
// ---------------------------------------------------------------------------

// Maps strings to unit-norm vectors. Backed by an embedding-table file when
// supplied (real text-encoder vectors computed offline); otherwise falls back
// to a seeded-hash pseudo-Gaussian expansion.
class EmbeddingProvider {
public:
    explicit EmbeddingProvider(int dim = 64) : dim_(dim) {}

    static EmbeddingProvider from_table_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw std::runtime_error("EmbeddingProvider: cannot open " + path);
        nlohmann::json j;
        is >> j;
        EmbeddingProvider p(j.at("dim").get<int>());
        for (auto it = j.at("entries").begin(); it != j.at("entries").end(); ++it) {
            std::vector<double> v = it.value().get<std::vector<double>>();
            if (static_cast<int>(v.size()) != p.dim_)
                throw std::runtime_error("EmbeddingProvider: entry '" + it.key() +
                                         "' has wrong dimension");
            normalize(v);
            p.table_[it.key()] = std::move(v);
        }
        return p;
    }

    int dim() const { return dim_; }

    std::vector<double> embed(const std::string& text) const {
        auto it = table_.find(text);
        if (it != table_.end()) return it->second;
        // FNV-1a hash seeds a deterministic Gaussian expansion.
        uint64_t h = 1469598103934665603ull;
        for (unsigned char c : text) {
            h ^= c;
            h *= 1099511628211ull;
        }
        Rng rng(h);
        std::vector<double> v(static_cast<size_t>(dim_));
        for (double& x : v) x = rng.normal();
        normalize(v);
        return v;
    }

    std::string relation_prompt(const std::string& src_cls, Relation rel,
                                const std::string& dst_cls) const {
        return src_cls + " [" + relation_name(rel) + "] " + dst_cls;
    }

private:
    static void normalize(std::vector<double>& v) {
        double n = 0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        if (n > 0)
            for (double& x : v) x /= n;
    }
    int dim_;
    std::unordered_map<std::string, std::vector<double>> table_;
};

// Trainable per-class embedding tables for nodes and edges.
struct LearnableGraphEmbeddings {
    std::vector<std::string> node_classes;  // ordered vocabulary
    Tensor node_table;                      // |C_node| x D_o
    Tensor edge_table;                      // kNumRelations x D_o

    LearnableGraphEmbeddings() = default;
    LearnableGraphEmbeddings(std::vector<std::string> classes, int d_o, Rng& rng)
        : node_classes(std::move(classes)) {
        node_table = Tensor::randn({static_cast<int64_t>(node_classes.size()), d_o},
                                   rng, 0.1, true);
        edge_table = Tensor::randn({kNumRelations, d_o}, rng, 0.1, true);
    }

    int64_t class_index(const std::string& cls) const {
        for (size_t i = 0; i < node_classes.size(); ++i)
            if (node_classes[i] == cls) return static_cast<int64_t>(i);
        throw std::invalid_argument("LearnableGraphEmbeddings: class '" + cls +
                                    "' not in vocabulary");
    }

    std::vector<std::pair<std::string, Tensor>> named_params(
        const std::string& prefix) const {
        return {{prefix + "node_table", node_table}, {prefix + "edge_table", edge_table}};
    }
};

struct EmbeddedGraph {
    Tensor node_features;  // M x (D_g + D_o)
    Tensor edge_features;  // E x (D_g + D_o), undefined when E == 0
    std::vector<std::pair<int, int>> edge_index;  // node indices (not ids)
};

// Node feature i = concat(provider(class_i), node_table[class_i]);
// edge feature = concat(provider("src [relation] dst"), edge_table[relation]).
inline EmbeddedGraph embed_graph(const SceneGraph& g, const EmbeddingProvider& prov,
                                 const LearnableGraphEmbeddings& learn) {
    if (g.nodes.empty()) throw std::invalid_argument("embed_graph: empty graph");
    int64_t m = static_cast<int64_t>(g.nodes.size());
    int dg = prov.dim();
    std::vector<double> gfeat(static_cast<size_t>(m * dg));
    std::vector<int64_t> cls_idx;
    for (int64_t i = 0; i < m; ++i) {
        auto v = prov.embed(g.nodes[static_cast<size_t>(i)].cls);
        std::copy(v.begin(), v.end(), gfeat.begin() + i * dg);
        cls_idx.push_back(learn.class_index(g.nodes[static_cast<size_t>(i)].cls));
    }
    EmbeddedGraph out;
    Tensor gpart = Tensor::from_data({m, dg}, std::move(gfeat));
    out.node_features = concat({gpart, embedding_lookup(learn.node_table, cls_idx)}, 1);

    int64_t ecount = static_cast<int64_t>(g.edges.size());
    for (const auto& e : g.edges) {
        int si = g.node_index(e.src), di = g.node_index(e.dst);
        if (si < 0 || di < 0)
            throw std::invalid_argument("embed_graph: edge references missing node");
        out.edge_index.emplace_back(si, di);
    }
    if (ecount > 0) {
        std::vector<double> efeat(static_cast<size_t>(ecount * dg));
        std::vector<int64_t> rel_idx;
        for (int64_t k = 0; k < ecount; ++k) {
            const auto& e = g.edges[static_cast<size_t>(k)];
            auto v = prov.embed(prov.relation_prompt(
                g.find_node(e.src)->cls, e.rel, g.find_node(e.dst)->cls));
            std::copy(v.begin(), v.end(), efeat.begin() + k * dg);
            rel_idx.push_back(static_cast<int64_t>(e.rel));
        }
        Tensor egpart = Tensor::from_data({ecount, dg}, std::move(efeat));
        out.edge_features =
            concat({egpart, embedding_lookup(learn.edge_table, rel_idx)}, 1);
    }
    return out;
}

}  // namespace lgen
