#pragma once

// JSON configuration for PipelineConfig. Every field is optional (defaults apply);
// unknown keys are errors so typos do not silently fall back to defaults.

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "robustst/errors.hpp"
#include "robustst/pipeline.hpp"

namespace robustst {

using json = nlohmann::ordered_json;

namespace detail {

/// Reads fields from one JSON object and rejects any key that was never asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }
  ~ObjectReader() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(child(key), "unknown key");
    }
  }
  ObjectReader(const ObjectReader&) = delete;
  ObjectReader& operator=(const ObjectReader&) = delete;

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (const json* v = find(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception& e) {
        throw ConfigError(child(key), std::string("wrong type: ") + e.what());
      }
    }
  }

  void get(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(child(key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void get_range(const std::string& key, double& lo, double& hi) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
        throw ConfigError(child(key), "expected [min, max]");
      }
      lo = (*v)[0].get<double>();
      hi = (*v)[1].get<double>();
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const DomainShift& s) {
  json j;
  if (!s.prototype_shift_vector.empty()) {
    j["prototype_shift"] = s.prototype_shift_vector;
  } else {
    j["prototype_shift"] = s.prototype_shift;
  }
  j["direction_seed"] = s.direction_seed;
  j["extra_noise"] = s.extra_noise;
  j["size_scale"] = s.size_scale;
  return j;
}

inline json to_json(const WorldConfig& w) {
  json j;
  j["scene_width"] = w.scene_width;
  j["scene_height"] = w.scene_height;
  j["feature_dim"] = w.feature_dim;
  j["num_classes"] = w.num_classes;
  j["objects_per_scene"] = {w.objects_min, w.objects_max};
  j["class_prototypes"] = w.class_prototypes;
  j["appearance_noise"] = w.appearance_noise;
  j["background_level"] = w.background_level;
  j["object_size_range"] = {w.size_min, w.size_max};
  j["domain_shift"] = to_json(w.domain_shift);
  return j;
}

inline void from_json_checked(const json& j, const std::string& path, DomainShift& s) {
  detail::ObjectReader r(j, path);
  if (const json* v = r.find("prototype_shift")) {
    if (v->is_number()) {
      s.prototype_shift = v->get<double>();
      s.prototype_shift_vector.clear();
    } else if (v->is_array()) {
      try {
        s.prototype_shift_vector = v->get<std::vector<double>>();
      } catch (const json::exception&) {
        throw ConfigError(r.child("prototype_shift"), "expected a number or an array of numbers");
      }
      s.prototype_shift = 0.0;
    } else {
      throw ConfigError(r.child("prototype_shift"), "expected a number or an array of numbers");
    }
  }
  r.get("direction_seed", s.direction_seed);
  r.get("extra_noise", s.extra_noise);
  r.get("size_scale", s.size_scale);
}

inline void from_json_checked(const json& j, const std::string& path, WorldConfig& w) {
  detail::ObjectReader r(j, path);
  r.get("scene_width", w.scene_width);
  r.get("scene_height", w.scene_height);
  r.get("feature_dim", w.feature_dim);
  r.get("num_classes", w.num_classes);
  double lo = w.objects_min, hi = w.objects_max;
  r.get_range("objects_per_scene", lo, hi);
  if (lo != std::floor(lo) || hi != std::floor(hi)) throw ConfigError(r.child("objects_per_scene"), "expected integers");
  w.objects_min = static_cast<int>(lo);
  w.objects_max = static_cast<int>(hi);
  r.get("class_prototypes", w.class_prototypes);
  r.get("appearance_noise", w.appearance_noise);
  r.get("background_level", w.background_level);
  r.get_range("object_size_range", w.size_min, w.size_max);
  if (const json* v = r.find("domain_shift")) from_json_checked(*v, r.child("domain_shift"), w.domain_shift);
}

inline WorldConfig world_from_json(const json& j) {
  WorldConfig w;
  from_json_checked(j, "world", w);
  w.validate();
  return w;
}

inline json to_json(const PipelineConfig& c) {
  json j;
  j["world"] = to_json(c.world);
  j["anchors"] = {{"stride", c.anchors.stride}, {"scales", c.anchors.scales}, {"ratios", c.anchors.ratios}};
  j["roi"] = {{"context_margin", c.roi.context_margin}, {"context_fraction", c.roi.context_fraction}};
  j["data"] = {{"n_source_scenes", c.n_source_scenes},
               {"n_target_scenes", c.n_target_scenes},
               {"n_eval_scenes", c.n_eval_scenes}};
  j["training"] = {{"phase1_steps", c.phase1_steps},
                   {"phase2_steps", c.phase2_steps},
                   {"phase3_steps", c.phase3_steps},
                   {"lr_schedule", {{"initial", c.lr.initial}, {"drop_step", c.lr.drop_step}, {"dropped", c.lr.dropped}}},
                   {"batch_mix", {{"n_source", c.batch_mix.n_source}, {"n_target", c.batch_mix.n_target}}},
                   {"rois_per_scene", c.rois_per_scene},
                   {"fg_fraction", c.fg_fraction},
                   {"hard_negative_count", c.hard_negative_count},
                   {"reg_weight", c.reg_weight},
                   {"hidden_units", c.hidden_units},
                   {"warm_start", c.warm_start}};
  j["method"] = {{"alpha_schedule",
                  {{"start", c.alpha_schedule.alpha_start},
                   {"end", c.alpha_schedule.alpha_end},
                   {"anneal_steps", c.alpha_schedule.anneal_steps}}},
                 {"mining_score_threshold", c.mining_score_threshold},
                 {"nms_iou", c.nms_iou},
                 {"epsilon_fn", c.epsilon_fn},
                 {"epsilon_aux", c.epsilon_aux},
                 {"sigma", c.sigma},
                 {"use_phase2", c.use_phase2},
                 {"ablation", {{"cls_cor", c.ablation.cls_cor}, {"box_r", c.ablation.box_r}, {"fn_cor", c.ablation.fn_cor}}}};
  j["aux"] = {{"lr", c.aux_lr},
              {"batch", c.aux_batch},
              {"context", c.aux_context},
              {"backgrounds_per_scene", c.aux_backgrounds_per_scene}};
  j["eval"] = {{"score_threshold", c.eval_score_threshold}, {"iou", c.eval_iou}};
  j["seed"] = c.seed;
  j["seeds"] = c.seeds;
  j["jobs"] = c.jobs;
  return j;
}

inline PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  {
    detail::ObjectReader r(j, "");
    if (const json* v = r.find("world")) from_json_checked(*v, "world", c.world);
    if (const json* v = r.find("anchors")) {
      detail::ObjectReader a(*v, "anchors");
      a.get("stride", c.anchors.stride);
      a.get("scales", c.anchors.scales);
      a.get("ratios", c.anchors.ratios);
    }
    if (const json* v = r.find("roi")) {
      detail::ObjectReader a(*v, "roi");
      a.get("context_margin", c.roi.context_margin);
      a.get("context_fraction", c.roi.context_fraction);
    }
    if (const json* v = r.find("data")) {
      detail::ObjectReader a(*v, "data");
      a.get("n_source_scenes", c.n_source_scenes);
      a.get("n_target_scenes", c.n_target_scenes);
      a.get("n_eval_scenes", c.n_eval_scenes);
    }
    if (const json* v = r.find("training")) {
      detail::ObjectReader t(*v, "training");
      t.get("phase1_steps", c.phase1_steps);
      t.get("phase2_steps", c.phase2_steps);
      t.get("phase3_steps", c.phase3_steps);
      if (const json* lr = t.find("lr_schedule")) {
        detail::ObjectReader l(*lr, "training.lr_schedule");
        l.get("initial", c.lr.initial);
        l.get("drop_step", c.lr.drop_step);
        l.get("dropped", c.lr.dropped);
      }
      if (const json* bm = t.find("batch_mix")) {
        detail::ObjectReader b(*bm, "training.batch_mix");
        b.get("n_source", c.batch_mix.n_source);
        b.get("n_target", c.batch_mix.n_target);
      }
      t.get("rois_per_scene", c.rois_per_scene);
      t.get("fg_fraction", c.fg_fraction);
      t.get("hard_negative_count", c.hard_negative_count);
      t.get("reg_weight", c.reg_weight);
      t.get("hidden_units", c.hidden_units);
      t.get("warm_start", c.warm_start);
    }
    if (const json* v = r.find("method")) {
      detail::ObjectReader m(*v, "method");
      if (const json* a = m.find("alpha_schedule")) {
        detail::ObjectReader s(*a, "method.alpha_schedule");
        s.get("start", c.alpha_schedule.alpha_start);
        s.get("end", c.alpha_schedule.alpha_end);
        s.get("anneal_steps", c.alpha_schedule.anneal_steps);
      }
      m.get("mining_score_threshold", c.mining_score_threshold);
      m.get("nms_iou", c.nms_iou);
      m.get("epsilon_fn", c.epsilon_fn);
      m.get("epsilon_aux", c.epsilon_aux);
      m.get("sigma", c.sigma);
      m.get("use_phase2", c.use_phase2);
      if (const json* a = m.find("ablation")) {
        detail::ObjectReader f(*a, "method.ablation");
        f.get("cls_cor", c.ablation.cls_cor);
        f.get("box_r", c.ablation.box_r);
        f.get("fn_cor", c.ablation.fn_cor);
      }
    }
    if (const json* v = r.find("aux")) {
      detail::ObjectReader a(*v, "aux");
      a.get("lr", c.aux_lr);
      a.get("batch", c.aux_batch);
      a.get("context", c.aux_context);
      a.get("backgrounds_per_scene", c.aux_backgrounds_per_scene);
    }
    if (const json* v = r.find("eval")) {
      detail::ObjectReader e(*v, "eval");
      e.get("score_threshold", c.eval_score_threshold);
      e.get("iou", c.eval_iou);
    }
    r.get("seed", c.seed);
    r.get("seeds", c.seeds);
    r.get("jobs", c.jobs);
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "config file '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace robustst
