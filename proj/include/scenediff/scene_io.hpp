#pragma once

// Scene files: one JSON document per scene.
//
//   {
//     "room_type": "bedroom",
//     "room_size": [w, d, h],            // optional, meters
//     "objects": [
//       {"class": "bed", "location": [x, y, z], "size": [hx, hy, hz],
//        "theta": 0.0, "shape_code": [...], "frozen": false}
//     ]
//   }
//
// Only occupied slots are written. "frozen" is optional and only read by the
// completion/re-arrangement inputs.

#include "scenediff/scene_model.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace scenediff {

struct SceneFile {
  SceneSet scene;
  std::vector<bool> frozen;  ///< per slot, parallel to scene.objects
};

inline nlohmann::json scene_to_json(const SceneSet& s, const ClassTable& table,
                                    const std::vector<bool>* frozen = nullptr) {
  nlohmann::json j;
  j["room_type"] = to_string(s.room_type);
  if (s.room_size) j["room_size"] = {(*s.room_size)(0), (*s.room_size)(1), (*s.room_size)(2)};
  j["objects"] = nlohmann::json::array();
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    const auto& o = s.objects[i];
    if (o.empty()) continue;
    nlohmann::json jo;
    jo["class"] = table.name(o.cls);
    jo["location"] = {o.location(0), o.location(1), o.location(2)};
    jo["size"] = {o.size(0), o.size(1), o.size(2)};
    jo["theta"] = o.theta;
    jo["shape_code"] = std::vector<double>(o.code.data(), o.code.data() + o.code.size());
    if (frozen && i < frozen->size()) jo["frozen"] = static_cast<bool>((*frozen)[i]);
    j["objects"].push_back(jo);
  }
  return j;
}

inline SceneFile scene_from_json(const nlohmann::json& j, const ClassTable& table, int N, int F) {
  try {
    SceneFile out;
    std::vector<ObjectRecord> objs;
    for (const auto& jo : j.at("objects")) {
      ObjectRecord o;
      o.cls = table.index_of(jo.at("class").get<std::string>());
      const auto loc = jo.at("location").get<std::vector<double>>();
      const auto size = jo.at("size").get<std::vector<double>>();
      if (loc.size() != 3 || size.size() != 3) throw DataError("location and size must have 3 entries");
      o.location = Vec3(loc[0], loc[1], loc[2]);
      o.size = Vec3(size[0], size[1], size[2]);
      o.theta = jo.at("theta").get<double>();
      std::vector<double> code = jo.value("shape_code", std::vector<double>{});
      if (static_cast<int>(code.size()) != F)
        throw DataError("shape_code has " + std::to_string(code.size()) + " entries, expected " + std::to_string(F));
      o.code = Eigen::Map<Vector>(code.data(), F);
      objs.push_back(o);
      out.frozen.push_back(jo.value("frozen", false));
    }
    out.scene = pad_scene(std::move(objs), N, F, room_type_from_string(j.value("room_type", "bedroom")));
    out.frozen.resize(static_cast<std::size_t>(N), false);
    if (j.contains("room_size")) {
      const auto r = j.at("room_size").get<std::vector<double>>();
      if (r.size() != 3) throw DataError("room_size must have 3 entries");
      out.scene.room_size = Vec3(r[0], r[1], r[2]);
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed scene: ") + e.what());
  }
}

inline void write_scene_file(const std::string& path, const SceneSet& s, const ClassTable& table,
                             const std::vector<bool>* frozen = nullptr) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << std::setprecision(17) << scene_to_json(s, table, frozen).dump(1) << '\n';
}

inline SceneFile read_scene_file(const std::string& path, const ClassTable& table, int N, int F) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return scene_from_json(j, table, N, F);
}

}  // namespace scenediff
