#pragma once

// Line-delimited JSON dataset files. See FORMAT.md for the record layout.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "robustst/config.hpp"
#include "robustst/errors.hpp"
#include "robustst/world.hpp"

namespace robustst {

inline constexpr int kDatasetFormatVersion = 1;

namespace detail {

inline json logits_to_json(const std::vector<double>& logits) {
  json a = json::array();
  for (double v : logits) {
    if (std::isinf(v) && v < 0) {
      a.push_back(nullptr);
    } else {
      a.push_back(v);
    }
  }
  return a;
}

inline json annotation_to_json(const Annotation& a) {
  json j;
  j["class"] = a.class_index;
  j["box"] = a.box.as_array();
  if (a.soft_label) j["soft_label_logits"] = logits_to_json(a.soft_label->logits());
  if (a.box_target_initial) j["box_target_initial"] = a.box_target_initial->as_array();
  return j;
}

class LineReader {
 public:
  explicit LineReader(std::size_t line) : line_(line) {}

  [[noreturn]] void fail(const std::string& what, std::size_t offset = 0) const {
    throw ParseError(line_, offset, what);
  }

  const json& field(const json& obj, const char* key) const {
    auto it = obj.find(key);
    if (it == obj.end()) fail(std::string("missing field '") + key + "'");
    return *it;
  }

  double number(const json& v, const char* what) const {
    if (!v.is_number()) fail(std::string(what) + " must be a number");
    return v.get<double>();
  }

  BoundingBox box(const json& v, const char* what) const {
    if (!v.is_array() || v.size() != 4) fail(std::string(what) + " must be [x, y, w, h]");
    BoundingBox b{number(v[0], what), number(v[1], what), number(v[2], what), number(v[3], what)};
    if (!b.valid()) fail(std::string(what) + " has non-positive extent");
    return b;
  }

  Annotation annotation(const json& v) const {
    if (!v.is_object()) fail("annotation must be an object");
    Annotation a;
    const json& cls = field(v, "class");
    if (!cls.is_number_integer()) fail("annotation class must be an integer");
    a.class_index = cls.get<int>();
    a.box = box(field(v, "box"), "annotation box");
    for (const auto& [key, value] : v.items()) {
      if (key == "class" || key == "box") continue;
      if (key == "soft_label_logits") {
        if (!value.is_array() || value.empty()) fail("soft_label_logits must be a non-empty array");
        std::vector<double> logits;
        for (const json& x : value) {
          logits.push_back(x.is_null() ? -std::numeric_limits<double>::infinity() : number(x, "soft_label_logits"));
        }
        a.soft_label = CategoricalDistribution(std::move(logits));
      } else if (key == "box_target_initial") {
        a.box_target_initial = box(value, "box_target_initial");
      } else {
        fail("unknown annotation field '" + key + "'");
      }
    }
    return a;
  }

  json parse(const std::string& text) const {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed JSON: ") + e.what(), e.byte == 0 ? 0 : e.byte - 1);
    }
  }

 private:
  std::size_t line_;
};

}  // namespace detail

/// Writes to `path + ".tmp"` and renames, so readers never see a partial file.
inline void save_dataset(const LabeledDataset& data, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write dataset file '" + tmp + "'");
    json header;
    header["format_version"] = kDatasetFormatVersion;
    header["domain"] = to_string(data.domain);
    header["seed"] = data.seed;
    header["n_scenes"] = data.scenes.size();
    header["placement_failures"] = data.placement_failures;
    header["world"] = to_json(data.config);
    out << header.dump() << '\n';
    for (std::size_t i = 0; i < data.scenes.size(); ++i) {
      const Scene& s = data.scenes[i];
      json rec;
      rec["scene"] = i;
      rec["width"] = s.width;
      rec["height"] = s.height;
      rec["channels"] = s.channels;
      rec["features"] = s.features;
      json anns = json::array();
      for (const Annotation& a : data.annotations[i]) anns.push_back(detail::annotation_to_json(a));
      rec["annotations"] = std::move(anns);
      out << rec.dump() << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("failed while writing dataset file '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
  std::string text;
  std::size_t line_no = 1;
  if (!std::getline(in, text) || text.empty()) throw ParseError(1, 0, "empty file, expected a header record");

  LabeledDataset ds;
  std::size_t n_scenes = 0;
  {
    const detail::LineReader r(line_no);
    const json header = r.parse(text);
    if (!header.is_object()) r.fail("header must be an object");
    const json& version = r.field(header, "format_version");
    if (!version.is_number_integer()) r.fail("format_version must be an integer");
    if (version.get<long long>() != kDatasetFormatVersion) {
      throw UnsupportedVersionError("dataset file '" + path + "' has format_version " + version.dump() +
                                    ", this build reads version " + std::to_string(kDatasetFormatVersion));
    }
    const json& domain = r.field(header, "domain");
    if (domain == "source") {
      ds.domain = DomainTag::source;
    } else if (domain == "target") {
      ds.domain = DomainTag::target;
    } else {
      r.fail("domain must be \"source\" or \"target\"");
    }
    const json& seed = r.field(header, "seed");
    if (!seed.is_number_unsigned()) r.fail("seed must be a non-negative integer");
    ds.seed = seed.get<std::uint64_t>();
    const json& n = r.field(header, "n_scenes");
    if (!n.is_number_unsigned()) r.fail("n_scenes must be a non-negative integer");
    n_scenes = n.get<std::size_t>();
    if (auto it = header.find("placement_failures"); it != header.end()) {
      if (!it->is_number_integer()) r.fail("placement_failures must be an integer");
      ds.placement_failures = it->get<int>();
    }
    try {
      ds.config = WorldConfig{};
      from_json_checked(r.field(header, "world"), "world", ds.config);
      ds.config.validate();
    } catch (const ConfigError& e) {
      r.fail(std::string("bad world config: ") + e.what());
    }
  }

  ds.scenes.reserve(n_scenes);
  ds.annotations.reserve(n_scenes);
  while (std::getline(in, text)) {
    ++line_no;
    const detail::LineReader r(line_no);
    if (text.empty()) r.fail("empty line");
    if (ds.scenes.size() == n_scenes) r.fail("more scene records than n_scenes = " + std::to_string(n_scenes));
    const json rec = r.parse(text);
    if (!rec.is_object()) r.fail("scene record must be an object");
    const json& idx = r.field(rec, "scene");
    if (!idx.is_number_unsigned() || idx.get<std::size_t>() != ds.scenes.size()) {
      r.fail("scene index must be " + std::to_string(ds.scenes.size()));
    }
    auto dim = [&](const char* key) {
      const json& v = r.field(rec, key);
      if (!v.is_number_integer() || v.get<long long>() <= 0) r.fail(std::string(key) + " must be a positive integer");
      return v.get<int>();
    };
    Scene s(dim("width"), dim("height"), dim("channels"));
    if (s.width != ds.config.scene_width || s.height != ds.config.scene_height || s.channels != ds.config.feature_dim) {
      r.fail("scene shape does not match the header's world config");
    }
    const json& feats = r.field(rec, "features");
    if (!feats.is_array() || feats.size() != s.features.size()) {
      r.fail("features must be an array of width*height*channels = " + std::to_string(s.features.size()) +
             " numbers");
    }
    for (std::size_t k = 0; k < s.features.size(); ++k) {
      s.features[k] = r.number(feats[k], "feature value");
    }
    const json& anns = r.field(rec, "annotations");
    if (!anns.is_array()) r.fail("annotations must be an array");
    std::vector<Annotation> out;
    for (const json& a : anns) out.push_back(r.annotation(a));
    for (const auto& [key, value] : rec.items()) {
      if (key != "scene" && key != "width" && key != "height" && key != "channels" && key != "features" &&
          key != "annotations") {
        r.fail("unknown scene field '" + key + "'");
      }
    }
    ds.scenes.push_back(std::move(s));
    ds.annotations.push_back(std::move(out));
  }
  if (ds.scenes.size() != n_scenes) {
    throw ParseError(line_no + 1, 0,
                     "truncated file: header promises " + std::to_string(n_scenes) + " scenes, found " +
                         std::to_string(ds.scenes.size()));
  }
  return ds;
}

}  // namespace robustst
