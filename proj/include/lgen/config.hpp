#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lgen/box.hpp"
#include "lgen/layout_diffusion.hpp"
#include "lgen/range_image.hpp"
#include "lgen/scene_diffusion.hpp"
#include "lgen/schedule.hpp"
#include "lgen/synth.hpp"

namespace lgen {

// Everything a run needs lives in one JSON document; --set overrides patch the
// document before it is parsed into this struct.
struct RunConfig {
    uint64_t seed = 0;
    int threads = 1;

    NormalizationSpec norm;
    std::string schedule_kind = "linear";
    int schedule_steps = 50;

    // layout model
    int d_g = 64, d_o = 16;
    int64_t sem_width = 64;
    int sem_layers = 2;
    int64_t sem_hidden = 128;
    LayoutDenoiserConfig layout;
    LayoutTrainConfig layout_train;

    // scene model
    SceneModelConfig scene;
    SceneTrainConfig scene_train;
    int scene_steps = 400;
    int scene_batch = 2;
    double fov_up_deg = 10.0, fov_down_deg = 30.0;

    SyntheticCorpusSpec corpus;

    double fov_up() const { return fov_up_deg * kPi / 180.0; }
    double fov_down() const { return fov_down_deg * kPi / 180.0; }

    std::vector<std::string> classes() const {
        std::vector<std::string> out;
        for (const auto& [cls, w] : corpus.class_mix) out.push_back(cls);
        return out;
    }

    DiffusionSchedule schedule() const {
        return make_schedule(schedule_steps, schedule_kind);
    }

    void validate() const {
        if (schedule_steps < 1)
            throw std::invalid_argument("RunConfig: schedule_steps < 1");
        if (schedule_kind != "linear" && schedule_kind != "cosine")
            throw std::invalid_argument("RunConfig: unknown schedule kind '" +
                                        schedule_kind + "'");
        if (layout_train.lambda1 < 0 || layout_train.lambda2 < 0 ||
            layout_train.lambda3 < 0 || layout_train.delta < 0 ||
            scene_train.lambda4 < 0 || scene_train.lambda5 < 0)
            throw std::invalid_argument("RunConfig: negative loss weight");
        if (threads < 1) throw std::invalid_argument("RunConfig: threads < 1");
        corpus.validate();
    }
};

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json mix = nlohmann::json::object();
    for (const auto& [cls, w] : c.corpus.class_mix) mix[cls] = w;
    return {
        {"seed", c.seed},
        {"threads", c.threads},
        {"normalization",
         {{"range_xy", c.norm.range_xy},
          {"z_min", c.norm.z_min},
          {"z_max", c.norm.z_max},
          {"size_max", c.norm.size_max}}},
        {"schedule", {{"kind", c.schedule_kind}, {"steps", c.schedule_steps}}},
        {"layout",
         {{"d_g", c.d_g},
          {"d_o", c.d_o},
          {"sem_width", c.sem_width},
          {"sem_layers", c.sem_layers},
          {"sem_hidden", c.sem_hidden},
          {"d_model", c.layout.d_model},
          {"time_dim", c.layout.time_dim},
          {"heads", c.layout.heads},
          {"blocks", c.layout.blocks},
          {"context_gcn_layers", c.layout.context_gcn_layers},
          {"mlp_hidden", c.layout.mlp_hidden},
          {"lambda1", c.layout_train.lambda1},
          {"lambda2", c.layout_train.lambda2},
          {"lambda3", c.layout_train.lambda3},
          {"delta", c.layout_train.delta},
          {"batch_size", c.layout_train.batch_size},
          {"steps", c.layout_train.steps},
          {"learning_rate", c.layout_train.learning_rate}}},
        {"scene",
         {{"h", c.scene.h},
          {"w", c.scene.w},
          {"widths", c.scene.widths},
          {"time_dim", c.scene.time_dim},
          {"depth_max", c.scene.depth_max},
          {"lambda4", c.scene_train.lambda4},
          {"lambda5", c.scene_train.lambda5},
          {"learning_rate", c.scene_train.learning_rate},
          {"use_fci", c.scene_train.use_fci},
          {"steps", c.scene_steps},
          {"batch_size", c.scene_batch},
          {"fov_up_deg", c.fov_up_deg},
          {"fov_down_deg", c.fov_down_deg}}},
        {"corpus",
         {{"scene_count", c.corpus.scene_count},
          {"min_objects", c.corpus.min_objects},
          {"max_objects", c.corpus.max_objects},
          {"class_mix", mix},
          {"lanes", c.corpus.lanes},
          {"lane_spacing", c.corpus.lane_spacing},
          {"lane_jitter", c.corpus.lane_jitter},
          {"x_extent", c.corpus.x_extent},
          {"collision_iou", c.corpus.collision_iou},
          {"max_attempts", c.corpus.max_attempts},
          {"ground_radius", c.corpus.ground_radius},
          {"ground_points", c.corpus.ground_points},
          {"max_walls", c.corpus.max_walls},
          {"wall_density", c.corpus.wall_density}}}};
}

namespace detail {

// Reject keys the schema does not know; catches --set typos early.
inline void check_known_keys(const nlohmann::json& doc, const nlohmann::json& ref,
                             const std::string& where) {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!ref.contains(it.key()))
            throw std::invalid_argument("config: unknown key '" + where + it.key() +
                                        "'");
        if (it->is_object() && it.key() != "class_mix")
            check_known_keys(*it, ref.at(it.key()), where + it.key() + ".");
    }
}

}  // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    detail::check_known_keys(j, run_config_to_json(c), "");
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("normalization")) {
        const auto& n = j.at("normalization");
        c.norm = NormalizationSpec(
            n.value("range_xy", c.norm.range_xy), n.value("z_min", c.norm.z_min),
            n.value("z_max", c.norm.z_max), n.value("size_max", c.norm.size_max));
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        c.schedule_kind = s.value("kind", c.schedule_kind);
        c.schedule_steps = s.value("steps", c.schedule_steps);
    }
    if (j.contains("layout")) {
        const auto& l = j.at("layout");
        c.d_g = l.value("d_g", c.d_g);
        c.d_o = l.value("d_o", c.d_o);
        c.sem_width = l.value("sem_width", c.sem_width);
        c.sem_layers = l.value("sem_layers", c.sem_layers);
        c.sem_hidden = l.value("sem_hidden", c.sem_hidden);
        c.layout.d_model = l.value("d_model", c.layout.d_model);
        c.layout.time_dim = l.value("time_dim", c.layout.time_dim);
        c.layout.heads = l.value("heads", c.layout.heads);
        c.layout.blocks = l.value("blocks", c.layout.blocks);
        c.layout.context_gcn_layers =
            l.value("context_gcn_layers", c.layout.context_gcn_layers);
        c.layout.mlp_hidden = l.value("mlp_hidden", c.layout.mlp_hidden);
        c.layout_train.lambda1 = l.value("lambda1", c.layout_train.lambda1);
        c.layout_train.lambda2 = l.value("lambda2", c.layout_train.lambda2);
        c.layout_train.lambda3 = l.value("lambda3", c.layout_train.lambda3);
        c.layout_train.delta = l.value("delta", c.layout_train.delta);
        c.layout_train.batch_size = l.value("batch_size", c.layout_train.batch_size);
        c.layout_train.steps = l.value("steps", c.layout_train.steps);
        c.layout_train.learning_rate =
            l.value("learning_rate", c.layout_train.learning_rate);
    }
    if (j.contains("scene")) {
        const auto& s = j.at("scene");
        c.scene.h = s.value("h", c.scene.h);
        c.scene.w = s.value("w", c.scene.w);
        if (s.contains("widths")) {
            auto w = s.at("widths").get<std::vector<int64_t>>();
            if (w.size() != 3)
                throw std::invalid_argument("config: scene.widths needs 3 entries");
            std::copy(w.begin(), w.end(), c.scene.widths.begin());
        }
        c.scene.time_dim = s.value("time_dim", c.scene.time_dim);
        c.scene.depth_max = s.value("depth_max", c.scene.depth_max);
        c.scene_train.lambda4 = s.value("lambda4", c.scene_train.lambda4);
        c.scene_train.lambda5 = s.value("lambda5", c.scene_train.lambda5);
        c.scene_train.learning_rate =
            s.value("learning_rate", c.scene_train.learning_rate);
        c.scene_train.use_fci = s.value("use_fci", c.scene_train.use_fci);
        c.scene_steps = s.value("steps", c.scene_steps);
        c.scene_batch = s.value("batch_size", c.scene_batch);
        c.fov_up_deg = s.value("fov_up_deg", c.fov_up_deg);
        c.fov_down_deg = s.value("fov_down_deg", c.fov_down_deg);
    }
    if (j.contains("corpus")) {
        const auto& co = j.at("corpus");
        c.corpus.scene_count = co.value("scene_count", c.corpus.scene_count);
        c.corpus.min_objects = co.value("min_objects", c.corpus.min_objects);
        c.corpus.max_objects = co.value("max_objects", c.corpus.max_objects);
        if (co.contains("class_mix")) {
            c.corpus.class_mix.clear();
            for (auto it = co.at("class_mix").begin(); it != co.at("class_mix").end();
                 ++it)
                c.corpus.class_mix.emplace_back(it.key(), it->get<double>());
        }
        c.corpus.lanes = co.value("lanes", c.corpus.lanes);
        c.corpus.lane_spacing = co.value("lane_spacing", c.corpus.lane_spacing);
        c.corpus.lane_jitter = co.value("lane_jitter", c.corpus.lane_jitter);
        c.corpus.x_extent = co.value("x_extent", c.corpus.x_extent);
        c.corpus.collision_iou = co.value("collision_iou", c.corpus.collision_iou);
        c.corpus.max_attempts = co.value("max_attempts", c.corpus.max_attempts);
        c.corpus.ground_radius = co.value("ground_radius", c.corpus.ground_radius);
        c.corpus.ground_points = co.value("ground_points", c.corpus.ground_points);
        c.corpus.max_walls = co.value("max_walls", c.corpus.max_walls);
        c.corpus.wall_density = co.value("wall_density", c.corpus.wall_density);
    }
    c.validate();
    return c;
}

// "a.b.c=value"; value parsed as JSON when possible, else taken as a string.
inline void apply_set_override(nlohmann::json& doc, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    nlohmann::json* cur = &doc;
    size_t pos = 0;
    while (true) {
        size_t dot = key.find('.', pos);
        std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
        if (part.empty())
            throw std::invalid_argument("--set: empty path segment in '" + key + "'");
        if (dot == std::string::npos) {
            (*cur)[part] = value;
            break;
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

inline RunConfig load_run_config(const std::string& path,
                                 const std::vector<std::string>& overrides = {}) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    nlohmann::json doc = nlohmann::json::parse(is);
    for (const auto& kv : overrides) apply_set_override(doc, kv);
    return run_config_from_json(doc);
}

}  // namespace lgen
