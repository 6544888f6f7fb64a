#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "lgen/checkpoint.hpp"
#include "lgen/config.hpp"
#include "lgen/layout_diffusion.hpp"
#include "lgen/metrics.hpp"
#include "lgen/object_bank.hpp"
#include "lgen/ply.hpp"
#include "lgen/range_image.hpp"
#include "lgen/scene_diffusion.hpp"
#include "lgen/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lgen;

namespace {

constexpr uint64_t kMix = 0x9e3779b97f4a7c15ull;

void emit(const json& record) { std::cout << record.dump() << "\n"; }

int thread_count(const RunConfig& cfg) {
    if (const char* e = std::getenv("LLL_THREADS")) {
        int n = std::atoi(e);
        if (n >= 1) return n;
    }
    return cfg.threads;
}

template <class F>
void parallel_for(int n, int threads, F&& f) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
            for (int i; (i = next.fetch_add(1)) < n;) f(i);
        });
    for (auto& th : pool) th.join();
}

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open " + path);
    return json::parse(is);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open " + path + " for write");
    os << text;
    if (!os) throw std::runtime_error("write failed for " + path);
}

void write_json(const std::string& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Annotation-file helpers
// ---------------------------------------------------------------------------

struct AnnScene {
    std::string id;
    std::vector<std::pair<std::string, OrientedBox3D>> boxes;
};

std::vector<AnnScene> load_annotations(const std::string& path) {
    json doc = load_json(path);
    std::vector<AnnScene> out;
    for (const auto& js : doc.at("scenes")) {
        AnnScene sc;
        sc.id = js.value("scene_id", "scene_" + std::to_string(out.size()));
        for (const auto& jb : js.at("boxes"))
            sc.boxes.emplace_back(jb.at("class").get<std::string>(),
                                  box_from_json(jb));
        out.push_back(std::move(sc));
    }
    if (out.empty()) throw std::runtime_error("no scenes in " + path);
    return out;
}

json annotations_to_json(const std::vector<AnnScene>& scenes) {
    json out{{"scenes", json::array()}};
    for (const auto& sc : scenes) {
        json boxes = json::array();
        for (const auto& [cls, b] : sc.boxes) {
            json jb = box_to_json(b);
            jb["class"] = cls;
            boxes.push_back(std::move(jb));
        }
        out["scenes"].push_back({{"scene_id", sc.id}, {"boxes", std::move(boxes)}});
    }
    return out;
}

std::vector<SceneGraph> load_graphs(const std::string& path) {
    json doc = load_json(path);
    const json& arr = doc.is_array() ? doc : doc.at("graphs");
    std::vector<SceneGraph> out;
    for (const auto& jg : arr) out.push_back(graph_from_json(jg));
    if (out.empty()) throw std::runtime_error("no graphs in " + path);
    return out;
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) throw std::runtime_error(dir + " is not a directory");
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext)
            out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    if (out.empty()) throw std::runtime_error("no " + ext + " files in " + dir);
    return out;
}

// ---------------------------------------------------------------------------
// Model plumbing
// ---------------------------------------------------------------------------

LayoutModels make_layout_models(const RunConfig& cfg) {
    Rng rng(cfg.seed);
    return LayoutModels(cfg.classes(), cfg.d_g, cfg.d_o, cfg.sem_width,
                        cfg.sem_layers, cfg.sem_hidden, cfg.layout, cfg.norm, rng);
}

SceneModels make_scene_models(const RunConfig& cfg) {
    Rng rng(cfg.seed ^ 0x5ce9e5ull);
    return SceneModels(cfg.scene, rng);
}

void load_params(std::vector<std::pair<std::string, Tensor>> params,
                 const std::string& path) {
    auto ckpt = load_checkpoint(path);
    for (auto& [name, t] : params) {
        auto it = ckpt.find(name);
        if (it == ckpt.end())
            throw std::runtime_error("checkpoint " + path + " missing tensor " + name);
        if (it->second.shape() != t.shape())
            throw std::runtime_error("checkpoint tensor " + name + " has wrong shape");
        t.data() = it->second.data();
    }
}

void save_params(const std::vector<std::pair<std::string, Tensor>>& params,
                 const std::string& path) {
    std::map<std::string, Tensor> m(params.begin(), params.end());
    save_checkpoint(path, m);
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

void cmd_build_sg(const RunConfig&, const std::string& annotations,
                  const std::string& split, const std::string& out) {
    SgDataset ds = build_sg_dataset(annotations, {}, split);
    json graphs = json::array();
    for (const auto& g : ds.graphs) graphs.push_back(graph_to_json(g));
    write_json(out, json{{"split", ds.split},
                         {"graphs", std::move(graphs)},
                         {"class_histogram", ds.class_histogram},
                         {"relation_histogram", ds.relation_histogram},
                         {"skipped", ds.skipped_records}});
    emit({{"event", "build-sg"},
          {"scenes", ds.graphs.size()},
          {"skipped", ds.skipped_records},
          {"out", out}});
}

void cmd_synth_corpus(const RunConfig& cfg, const std::string& out) {
    int fallbacks = 0;
    auto scenes = synth_corpus(cfg.corpus, cfg.seed, &fallbacks);
    fs::create_directories(fs::path(out) / "scenes");
    fs::create_directories(fs::path(out) / "fg");
    fs::create_directories(fs::path(out) / "points");
    std::vector<AnnScene> ann(scenes.size());
    parallel_for(static_cast<int>(scenes.size()), thread_count(cfg), [&](int i) {
        const SynthScene& sc = scenes[static_cast<size_t>(i)];
        uint64_t seed_i = cfg.seed ^ (kMix * static_cast<uint64_t>(i + 1));
        PointCloud fg = compose_foreground_procedural(sc.boxes, seed_i ^ 0xf9ull);
        Rng bg_rng(seed_i ^ 0xb9ull);
        PointCloud full = synth_background(cfg.corpus, bg_rng);
        full.append(fg);
        RangeImage img_full =
            project(full, cfg.scene.h, cfg.scene.w, cfg.fov_up(), cfg.fov_down());
        RangeImage img_fg =
            project(fg, cfg.scene.h, cfg.scene.w, cfg.fov_up(), cfg.fov_down());
        fs::path base(out);
        save_range_image((base / "scenes" / (sc.id + ".llri")).string(), img_full);
        save_range_image((base / "fg" / (sc.id + ".llri")).string(), img_fg);
        save_point_cloud((base / "points" / (sc.id + ".llpc")).string(), full);
        ann[static_cast<size_t>(i)] = {sc.id, sc.boxes};
    });
    json ann_doc = annotations_to_json(ann);
    for (size_t i = 0; i < scenes.size(); ++i)
        ann_doc["scenes"][i]["points_file"] =
            (fs::path("points") / (scenes[i].id + ".llpc")).string();
    write_json((fs::path(out) / "annotations.json").string(), ann_doc);
    json graphs = json::array();
    for (const auto& sc : scenes) graphs.push_back(graph_to_json(sc.graph));
    write_json((fs::path(out) / "graphs.json").string(), graphs);
    emit({{"event", "synth-corpus"},
          {"scenes", scenes.size()},
          {"placement_fallbacks", fallbacks},
          {"out", out}});
}

void cmd_train_layout(const RunConfig& cfg, const std::string& graphs_path,
                      const std::string& out) {
    auto graphs = load_graphs(graphs_path);
    LayoutModels models = make_layout_models(cfg);
    DiffusionSchedule sched = cfg.schedule();
    OptimizerState opt(cfg.layout_train.learning_rate);
    Rng rng(cfg.seed ^ 0x7a17ull);
    int report_every = std::max(1, cfg.layout_train.steps / 10);
    for (int step = 1; step <= cfg.layout_train.steps; ++step) {
        std::vector<const SceneGraph*> batch;
        for (int b = 0; b < cfg.layout_train.batch_size; ++b)
            batch.push_back(&graphs[static_cast<size_t>(rng.uniform_int(
                0, static_cast<int64_t>(graphs.size()) - 1))]);
        LayoutLossReport r = train_layout_step(batch, models, cfg.layout_train,
                                               sched, rng, opt);
        if (step % report_every == 0 || step == cfg.layout_train.steps)
            emit({{"event", "train-layout"},
                  {"step", step},
                  {"l_diff", r.l_diff},
                  {"l_collision", r.l_collision},
                  {"l_iou", r.l_iou},
                  {"total", r.total}});
    }
    save_params(models.named_params(), out);
    emit({{"event", "train-layout"}, {"done", true}, {"out", out}});
}

void cmd_sample_layout(const RunConfig& cfg, const std::string& model,
                       const std::string& graph_path, const std::string& out) {
    auto graphs = load_graphs(graph_path);
    LayoutModels models = make_layout_models(cfg);
    if (!model.empty()) load_params(models.named_params(), model);
    DiffusionSchedule sched = cfg.schedule();
    std::vector<AnnScene> ann(graphs.size());
    parallel_for(static_cast<int>(graphs.size()), thread_count(cfg), [&](int i) {
        const SceneGraph& g = graphs[static_cast<size_t>(i)];
        uint64_t seed_i = cfg.seed ^ (kMix * static_cast<uint64_t>(i + 1));
        auto boxes = sample_layouts(g, models, sched, seed_i);
        AnnScene sc;
        sc.id = "sample_" + std::to_string(i);
        for (size_t n = 0; n < g.nodes.size(); ++n)
            sc.boxes.emplace_back(g.nodes[n].cls, boxes[n]);
        ann[static_cast<size_t>(i)] = std::move(sc);
    });
    write_json(out, annotations_to_json(ann));
    emit({{"event", "sample-layout"}, {"scenes", ann.size()}, {"out", out}});
}

void cmd_eval_layout(const RunConfig&, const std::string& pred_path,
                     const std::string& graphs_path, const std::string& gt_path,
                     const std::string& out) {
    auto pred = load_annotations(pred_path);
    auto graphs = load_graphs(graphs_path);
    if (pred.size() != graphs.size())
        throw std::runtime_error("eval-layout: prediction/graph count mismatch");
    double rae_sum = 0, rad_sum = 0;
    int rae_n = 0, rad_n = 0;
    std::vector<Layout> pred_layouts;
    for (size_t i = 0; i < pred.size(); ++i) {
        auto acc = relation_accuracy(graphs[i], pred[i].boxes);
        if (acc.rae) {
            rae_sum += *acc.rae;
            rae_n++;
        }
        if (acc.rad) {
            rad_sum += *acc.rad;
            rad_n++;
        }
        pred_layouts.push_back(pred[i].boxes);
    }
    LayoutEvalReport rep;
    if (rae_n) rep.rae = rae_sum / rae_n;
    if (rad_n) rep.rad = rad_sum / rad_n;
    rep.cr = collision_rate(pred_layouts);
    if (!gt_path.empty()) {
        auto gt = load_annotations(gt_path);
        std::vector<Layout> gt_layouts;
        for (const auto& sc : gt) gt_layouts.push_back(sc.boxes);
        rep.prec_03 = precision_at_iou(pred_layouts, gt_layouts, 0.3);
        rep.prec_05 = precision_at_iou(pred_layouts, gt_layouts, 0.5);
        rep.iou = mean_layout_iou(pred_layouts, gt_layouts);
    }
    json j = rep.to_json();
    j["event"] = "eval-layout";
    if (!out.empty()) write_json(out, rep.to_json());
    emit(j);
}

void cmd_compose_fg(const RunConfig& cfg, const std::string& layout_path,
                    const std::string& bank_dir, const std::string& out) {
    auto scenes = load_annotations(layout_path);
    fs::create_directories(out);
    ObjectBank bank;
    if (!bank_dir.empty()) bank = load_bank(bank_dir);
    parallel_for(static_cast<int>(scenes.size()), thread_count(cfg), [&](int i) {
        const AnnScene& sc = scenes[static_cast<size_t>(i)];
        uint64_t seed_i = cfg.seed ^ (kMix * static_cast<uint64_t>(i + 1));
        PointCloud fg = bank_dir.empty()
                            ? compose_foreground_procedural(sc.boxes, seed_i)
                            : compose_foreground(sc.boxes, bank);
        fs::path base(out);
        save_point_cloud((base / (sc.id + ".llpc")).string(), fg);
        RangeImage img =
            project(fg, cfg.scene.h, cfg.scene.w, cfg.fov_up(), cfg.fov_down());
        save_range_image((base / (sc.id + ".llri")).string(), img);
    });
    emit({{"event", "compose-fg"}, {"scenes", scenes.size()}, {"out", out}});
}

void cmd_train_scene(const RunConfig& cfg, const std::string& corpus_dir,
                     const std::string& out) {
    auto scene_files = sorted_files((fs::path(corpus_dir) / "scenes").string(), ".llri");
    auto fg_files = sorted_files((fs::path(corpus_dir) / "fg").string(), ".llri");
    if (scene_files.size() != fg_files.size())
        throw std::runtime_error("train-scene: scene/fg file count mismatch");
    std::vector<RangeImage> scenes, fgs;
    for (const auto& p : scene_files) scenes.push_back(load_range_image(p));
    for (const auto& p : fg_files) fgs.push_back(load_range_image(p));
    SceneModels models = make_scene_models(cfg);
    DiffusionSchedule sched = cfg.schedule();
    OptimizerState opt(cfg.scene_train.learning_rate);
    Rng rng(cfg.seed ^ 0x5c37ull);
    int report_every = std::max(1, cfg.scene_steps / 10);
    for (int step = 1; step <= cfg.scene_steps; ++step) {
        std::vector<std::pair<const RangeImage*, const RangeImage*>> batch;
        for (int b = 0; b < cfg.scene_batch; ++b) {
            size_t i = static_cast<size_t>(
                rng.uniform_int(0, static_cast<int64_t>(scenes.size()) - 1));
            batch.emplace_back(&scenes[i], &fgs[i]);
        }
        SceneLossReport r =
            train_scene_step(batch, models, cfg.scene_train, sched, rng, opt);
        if (step % report_every == 0 || step == cfg.scene_steps)
            emit({{"event", "train-scene"},
                  {"step", step},
                  {"l_scene", r.l_scene},
                  {"l_fore", r.l_fore},
                  {"total", r.total}});
    }
    save_params(models.named_params(), out);
    emit({{"event", "train-scene"}, {"done", true}, {"out", out}});
}

void cmd_sample_scene(const RunConfig& cfg, const std::string& model,
                      const std::string& fg_path, const std::string& out) {
    SceneModels models = make_scene_models(cfg);
    if (!model.empty()) load_params(models.named_params(), model);
    DiffusionSchedule sched = cfg.schedule();
    std::vector<std::string> inputs, outputs;
    if (fs::is_directory(fg_path)) {
        inputs = sorted_files(fg_path, ".llri");
        fs::create_directories(out);
        for (const auto& p : inputs)
            outputs.push_back((fs::path(out) / fs::path(p).filename()).string());
    } else {
        inputs = {fg_path};
        outputs = {out};
    }
    parallel_for(static_cast<int>(inputs.size()), thread_count(cfg), [&](int i) {
        RangeImage fg = load_range_image(inputs[static_cast<size_t>(i)]);
        uint64_t seed_i = cfg.seed ^ (kMix * static_cast<uint64_t>(i + 1));
        RangeImage img =
            sample_scene(fg, models, sched, seed_i, cfg.scene_train.use_fci);
        save_range_image(outputs[static_cast<size_t>(i)], img);
    });
    emit({{"event", "sample-scene"}, {"scenes", inputs.size()}, {"out", out}});
}

void cmd_eval_scene(const RunConfig& cfg, const std::string& gen_dir,
                    const std::string& ref_dir, const std::string& feat_gen,
                    const std::string& feat_ref, const std::string& out) {
    auto gen_files = sorted_files(gen_dir, ".llri");
    auto ref_files = sorted_files(ref_dir, ".llri");
    std::vector<PointCloud> gen(gen_files.size()), ref(ref_files.size());
    parallel_for(static_cast<int>(gen_files.size()), thread_count(cfg), [&](int i) {
        gen[static_cast<size_t>(i)] =
            unproject(load_range_image(gen_files[static_cast<size_t>(i)]));
    });
    parallel_for(static_cast<int>(ref_files.size()), thread_count(cfg), [&](int i) {
        ref[static_cast<size_t>(i)] =
            unproject(load_range_image(ref_files[static_cast<size_t>(i)]));
    });
    SceneEvalReport rep;
    rep.jsd = jsd_bev(gen, ref);
    rep.mmd = mmd_point(gen, ref);
    if (!feat_gen.empty() && !feat_ref.empty()) {
        auto res = frechet_distance(load_features(feat_gen), load_features(feat_ref));
        rep.frd = res.value;
        rep.frechet_regularized = res.regularized;
    }
    json j = rep.to_json();
    j["event"] = "eval-scene";
    if (!out.empty()) write_json(out, rep.to_json());
    emit(j);
}

void cmd_complete(const RunConfig& cfg, const std::string& model,
                  const std::string& in, int keep_rows, const std::string& out) {
    SceneModels models = make_scene_models(cfg);
    if (!model.empty()) load_params(models.named_params(), model);
    DiffusionSchedule sched = cfg.schedule();
    RangeImage sparse = load_range_image(in);
    std::vector<uint8_t> keep(sparse.depth.size(), 0);
    int64_t kept = 0;
    for (int r = 0; r < sparse.h; ++r)
        for (int c = 0; c < sparse.w; ++c) {
            size_t idx = static_cast<size_t>(r) * sparse.w + static_cast<size_t>(c);
            bool row_ok = keep_rows <= 0 || r % keep_rows == 0;
            if (row_ok && sparse.depth[idx] > 0) {
                keep[idx] = 1;
                kept++;
            } else {
                sparse.depth[idx] = 0;
                sparse.intensity[idx] = 0;
            }
        }
    RangeImage full = repaint_complete(sparse, keep, models, sched, cfg.seed);
    save_range_image(out, full);
    emit({{"event", "complete"}, {"kept_pixels", kept}, {"out", out}});
}

void cmd_edit_graph(const std::string& graph_path, const std::string& op,
                    int node_id, const std::string& cls,
                    const std::vector<std::string>& edge_specs,
                    const std::string& out) {
    SceneGraph g = graph_from_json(load_json(graph_path));
    GraphEdit edit;
    if (op == "remove") {
        edit.kind = GraphEdit::Kind::Remove;
        edit.node_id = node_id;
    } else if (op == "substitute") {
        edit.kind = GraphEdit::Kind::Substitute;
        edit.node_id = node_id;
        edit.new_class = cls;
    } else if (op == "insert") {
        edit.kind = GraphEdit::Kind::Insert;
        edit.new_class = cls;
        for (const auto& spec : edge_specs) {
            // "src:dst:relation"; -1 refers to the inserted node
            auto c1 = spec.find(':');
            auto c2 = spec.find(':', c1 == std::string::npos ? c1 : c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw std::runtime_error("edit-graph: edge spec '" + spec +
                                         "' is not src:dst:relation");
            SceneGraph::Edge e;
            e.src = std::stoi(spec.substr(0, c1));
            e.dst = std::stoi(spec.substr(c1 + 1, c2 - c1 - 1));
            auto rel = relation_from_name(spec.substr(c2 + 1));
            if (!rel)
                throw std::runtime_error("edit-graph: unknown relation '" +
                                         spec.substr(c2 + 1) + "'");
            e.rel = *rel;
            edit.new_edges.push_back(e);
        }
    } else {
        throw std::runtime_error("edit-graph: unknown op '" + op + "'");
    }
    SceneGraph edited = edit_graph(g, edit);
    write_json(out, graph_to_json(edited));
    emit({{"event", "edit-graph"},
          {"op", op},
          {"nodes", edited.nodes.size()},
          {"edges", edited.edges.size()},
          {"out", out}});
}

void cmd_project(const RunConfig& cfg, const std::string& in,
                 const std::string& out) {
    PointCloud pc = load_point_cloud(in);
    ProjectionStats stats;
    RangeImage img =
        project(pc, cfg.scene.h, cfg.scene.w, cfg.fov_up(), cfg.fov_down(), &stats);
    save_range_image(out, img);
    emit({{"event", "project"},
          {"points", pc.size()},
          {"dropped_by_depth", stats.dropped_by_depth},
          {"out", out}});
}

void cmd_unproject(const RunConfig&, const std::string& in, const std::string& out) {
    RangeImage img = load_range_image(in);
    PointCloud pc = unproject(img);
    save_point_cloud(out, pc);
    emit({{"event", "unproject"}, {"points", pc.size()}, {"out", out}});
}

void cmd_export_ply(const std::string& in, const std::string& out, bool no_color) {
    PointCloud pc = load_point_cloud(in);
    export_ply(pc, out, !no_color);
    emit({{"event", "export-ply"}, {"points", pc.size()}, {"out", out}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"layout-guided LiDAR scene generation"};
    app.require_subcommand(1);

    std::string config, annotations, split = "train", out, graphs, model, pred, gt;
    std::string layout_path, bank_dir, corpus_dir, fg_path, gen_dir, ref_dir;
    std::string feat_gen, feat_ref, in_path, graph_path, op, cls;
    std::vector<std::string> sets, edge_specs;
    int node_id = -1, keep_rows = 0;
    bool no_color = false;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config, "run config JSON")->required();
        sub->add_option("--set", sets, "override config key, key=value");
    };

    auto* s_build = app.add_subcommand("build-sg", "build scene-graph dataset");
    add_config(s_build);
    s_build->add_option("--annotations", annotations)->required();
    s_build->add_option("--split", split);
    s_build->add_option("--out", out)->required();

    auto* s_synth = app.add_subcommand("synth-corpus", "generate synthetic corpus");
    add_config(s_synth);
    s_synth->add_option("--out", out)->required();

    auto* s_tl = app.add_subcommand("train-layout", "train layout diffusion model");
    add_config(s_tl);
    s_tl->add_option("--graphs", graphs)->required();
    s_tl->add_option("--out", out)->required();

    auto* s_sl = app.add_subcommand("sample-layout", "sample layouts from graphs");
    add_config(s_sl);
    s_sl->add_option("--model", model);
    s_sl->add_option("--graph", graphs)->required();
    s_sl->add_option("--out", out)->required();

    auto* s_el = app.add_subcommand("eval-layout", "evaluate sampled layouts");
    add_config(s_el);
    s_el->add_option("--pred", pred)->required();
    s_el->add_option("--graphs", graphs)->required();
    s_el->add_option("--gt", gt);
    s_el->add_option("--out", out);

    auto* s_cf = app.add_subcommand("compose-fg", "compose foreground point clouds");
    add_config(s_cf);
    s_cf->add_option("--layout", layout_path)->required();
    s_cf->add_option("--bank", bank_dir);
    s_cf->add_option("--out", out)->required();

    auto* s_ts = app.add_subcommand("train-scene", "train scene diffusion model");
    add_config(s_ts);
    s_ts->add_option("--corpus", corpus_dir)->required();
    s_ts->add_option("--out", out)->required();

    auto* s_ss = app.add_subcommand("sample-scene", "sample scene range images");
    add_config(s_ss);
    s_ss->add_option("--model", model);
    s_ss->add_option("--fg", fg_path)->required();
    s_ss->add_option("--out", out)->required();

    auto* s_es = app.add_subcommand("eval-scene", "evaluate generated scenes");
    add_config(s_es);
    s_es->add_option("--gen", gen_dir)->required();
    s_es->add_option("--ref", ref_dir)->required();
    s_es->add_option("--feat-gen", feat_gen);
    s_es->add_option("--feat-ref", feat_ref);
    s_es->add_option("--out", out);

    auto* s_co = app.add_subcommand("complete", "repaint-complete a sparse scan");
    add_config(s_co);
    s_co->add_option("--model", model);
    s_co->add_option("--in", in_path)->required();
    s_co->add_option("--keep-rows", keep_rows, "keep only every Nth input row");
    s_co->add_option("--out", out)->required();

    auto* s_eg = app.add_subcommand("edit-graph", "insert/substitute/remove a node");
    s_eg->add_option("--graph", graph_path)->required();
    s_eg->add_option("--op", op, "insert | substitute | remove")->required();
    s_eg->add_option("--node", node_id);
    s_eg->add_option("--class", cls);
    s_eg->add_option("--edge", edge_specs, "src:dst:relation, -1 = new node");
    s_eg->add_option("--out", out)->required();

    auto* s_pr = app.add_subcommand("project", "point cloud to range image");
    add_config(s_pr);
    s_pr->add_option("--in", in_path)->required();
    s_pr->add_option("--out", out)->required();

    auto* s_up = app.add_subcommand("unproject", "range image to point cloud");
    add_config(s_up);
    s_up->add_option("--in", in_path)->required();
    s_up->add_option("--out", out)->required();

    auto* s_ply = app.add_subcommand("export-ply", "write ASCII PLY");
    s_ply->add_option("--in", in_path)->required();
    s_ply->add_option("--out", out)->required();
    s_ply->add_flag("--no-color", no_color);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config.empty()) cfg = load_run_config(config, sets);
        if (s_build->parsed()) cmd_build_sg(cfg, annotations, split, out);
        else if (s_synth->parsed()) cmd_synth_corpus(cfg, out);
        else if (s_tl->parsed()) cmd_train_layout(cfg, graphs, out);
        else if (s_sl->parsed()) cmd_sample_layout(cfg, model, graphs, out);
        else if (s_el->parsed()) cmd_eval_layout(cfg, pred, graphs, gt, out);
        else if (s_cf->parsed()) cmd_compose_fg(cfg, layout_path, bank_dir, out);
        else if (s_ts->parsed()) cmd_train_scene(cfg, corpus_dir, out);
        else if (s_ss->parsed()) cmd_sample_scene(cfg, model, fg_path, out);
        else if (s_es->parsed())
            cmd_eval_scene(cfg, gen_dir, ref_dir, feat_gen, feat_ref, out);
        else if (s_co->parsed()) cmd_complete(cfg, model, in_path, keep_rows, out);
        else if (s_eg->parsed())
            cmd_edit_graph(graph_path, op, node_id, cls, edge_specs, out);
        else if (s_pr->parsed()) cmd_project(cfg, in_path, out);
        else if (s_up->parsed()) cmd_unproject(cfg, in_path, out);
        else if (s_ply->parsed()) cmd_export_ply(in_path, out, no_color);
    } catch (const std::exception& e) {
        emit({{"error", e.what()}});
        return 1;
    }
    return 0;
}
