#pragma once

// Object-set scene representation and its mapping to the fixed-size diffusion tensor.
//
// Row layout of a scene tensor (D = 8 + L + F columns):
//   [0,3)   location / location_scale
//   [3,6)   half-extents / size_scale
//   [6,8)   cos(theta), sin(theta)
//   [8,8+L) class one-hot mapped to {-1,+1}; column 8 is the 'empty' class
//   [8+L,D) shape code, affinely mapped from [code_min, code_max] to [-1,1]

#include "scenediff/common.hpp"

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace scenediff {

enum class RoomType { bedroom, dining, living };

inline std::string to_string(RoomType r) {
  switch (r) {
    case RoomType::bedroom: return "bedroom";
    case RoomType::dining: return "dining";
    case RoomType::living: return "living";
  }
  return "bedroom";
}

inline RoomType room_type_from_string(const std::string& s) {
  if (s == "bedroom") return RoomType::bedroom;
  if (s == "dining") return RoomType::dining;
  if (s == "living") return RoomType::living;
  throw DataError("unknown room_type '" + s + "'");
}

/// Default capacity per room type (13 bedroom, 21 dining/living).
inline int default_capacity(RoomType r) { return r == RoomType::bedroom ? 13 : 21; }

/// Class names; index 0 is always 'empty'.
struct ClassTable {
  std::vector<std::string> names;

  int size() const { return static_cast<int>(names.size()); }
  int index_of(const std::string& name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw DataError("unknown class '" + name + "'");
    return static_cast<int>(it - names.begin());
  }
  const std::string& name(int idx) const { return names.at(static_cast<std::size_t>(idx)); }
};

namespace classes {
constexpr int empty = 0;
constexpr int bed = 1;
constexpr int nightstand = 2;
constexpr int wardrobe = 3;
constexpr int lamp = 4;
constexpr int desk = 5;
constexpr int chair = 6;
constexpr int table = 7;
}  // namespace classes

/// The 8 toy bedroom classes, extended with placeholder categories up to `count` (max 25).
inline ClassTable bedroom_classes(int count = 8) {
  static const char* extra[] = {"sofa",   "stool",  "shelf",  "cabinet", "dresser", "mirror",
                                "plant",  "ottoman", "bench", "armchair", "rug",    "tv",
                                "console", "cart",   "divan",  "locker",  "crib"};
  if (count < 2 || count > 25) throw ConfigError("class count must be in [2, 25]");
  ClassTable t{{"empty", "bed", "nightstand", "wardrobe", "lamp", "desk", "chair", "table"}};
  t.names.resize(std::min<std::size_t>(t.names.size(), static_cast<std::size_t>(count)));
  for (int i = 8; i < count; ++i) t.names.emplace_back(extra[i - 8]);
  return t;
}

struct SceneLayout {
  int N = 13;  ///< object slots
  int L = 8;   ///< class count including 'empty' (the class-count symbol C is an alias)
  int F = 8;   ///< shape-code dimension, may be 0

  static constexpr int kBboxDim = 8;
  int D() const { return kBboxDim + L + F; }
  int class_offset() const { return kBboxDim; }
  int code_offset() const { return kBboxDim + L; }
  friend bool operator==(const SceneLayout&, const SceneLayout&) = default;
};

struct ObjectRecord {
  int cls = classes::empty;
  Vec3 location = Vec3::Zero();
  Vec3 size = Vec3::Zero();  ///< half-extents, meters
  double theta = 0.0;        ///< yaw; the object's front is its local +y axis
  Vector code;               ///< scaled shape code, length F

  bool empty() const { return cls == classes::empty; }

  static ObjectRecord make_empty(int F) {
    ObjectRecord r;
    r.code = Vector::Zero(F);
    return r;
  }
};

struct SceneSet {
  RoomType room_type = RoomType::bedroom;
  std::vector<ObjectRecord> objects;  ///< exactly N after padding
  std::optional<Vec3> room_size;      ///< full floor width, depth and height in meters, when known

  int capacity() const { return static_cast<int>(objects.size()); }
  int occupied_count() const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(), [](const auto& o) { return !o.empty(); }));
  }
};

using SceneTensor = Matrix;

/// Non-empty records, in slot order.
inline std::vector<ObjectRecord> occupied(const SceneSet& s) {
  std::vector<ObjectRecord> out;
  for (const auto& o : s.objects)
    if (!o.empty()) out.push_back(o);
  return out;
}

struct NormalizationSpec {
  SceneLayout layout;
  Vec3 location_scale{3.0, 3.0, 2.0};  ///< room half-extents (6 x 6 x 4 m bound)
  Vec3 size_scale{1.5, 1.5, 1.0};
  Vector code_min;  ///< per-dimension bounds of the code values stored in records
  Vector code_max;
  double max_normalized_size = 2.0;

  static NormalizationSpec for_layout(const SceneLayout& layout) {
    NormalizationSpec s;
    s.layout = layout;
    s.code_min = Vector::Constant(layout.F, -1.0);
    s.code_max = Vector::Constant(layout.F, 1.0);
    return s;
  }

  void validate() const {
    if ((location_scale.array() <= 0).any() || (size_scale.array() <= 0).any())
      throw ConfigError("normalization scales must be positive");
    if (code_min.size() != layout.F || code_max.size() != layout.F)
      throw ConfigError("code bounds length must equal F");
    if ((code_max.array() <= code_min.array()).any()) throw ConfigError("code bounds must satisfy min < max");
  }
};

/// Fills the remaining slots with canonical empty records, keeping input order.
inline SceneSet pad_scene(std::vector<ObjectRecord> objects, int N, int F,
                          RoomType room = RoomType::bedroom) {
  if (static_cast<int>(objects.size()) > N)
    throw CapacityError(std::to_string(objects.size()) + " objects exceed capacity " + std::to_string(N));
  SceneSet s;
  s.room_type = room;
  s.objects = std::move(objects);
  for (auto& o : s.objects)
    if (o.code.size() == 0 && F > 0) o.code = Vector::Zero(F);
  while (static_cast<int>(s.objects.size()) < N) s.objects.push_back(ObjectRecord::make_empty(F));
  return s;
}

inline void encode_object_row(const ObjectRecord& o, const NormalizationSpec& spec, Eigen::Ref<VectorX<double>> row) {
  const SceneLayout& lay = spec.layout;
  row.setZero();
  if (o.cls < 0 || o.cls >= lay.L) throw RangeError("class index " + std::to_string(o.cls) + " outside [0, L)");
  row.segment(lay.class_offset(), lay.L).setConstant(-1.0);
  row(lay.class_offset() + o.cls) = 1.0;
  if (o.empty()) {
    row(6) = 1.0;
    return;
  }
  if (!o.location.allFinite() || !o.size.allFinite() || !std::isfinite(o.theta))
    throw RangeError("non-finite attribute");
  const Vec3 loc = o.location.cwiseQuotient(spec.location_scale);
  if ((loc.array().abs() > 1.0 + 1e-9).any()) throw RangeError("location outside room bounds");
  const Vec3 sz = o.size.cwiseQuotient(spec.size_scale);
  if ((o.size.array() <= 0).any() || (sz.array() > spec.max_normalized_size).any())
    throw RangeError("size must be positive and within room bounds");
  row.segment<3>(0) = loc;
  row.segment<3>(3) = sz;
  row(6) = std::cos(o.theta);
  row(7) = std::sin(o.theta);
  if (lay.F > 0) {
    if (o.code.size() != lay.F) throw RangeError("shape_code length must be F");
    for (int k = 0; k < lay.F; ++k) {
      const double lo = spec.code_min(k), hi = spec.code_max(k);
      if (o.code(k) < lo - 1e-9 || o.code(k) > hi + 1e-9) throw RangeError("shape_code outside bounds");
      row(lay.code_offset() + k) = 2.0 * (o.code(k) - lo) / (hi - lo) - 1.0;
    }
  }
}

/// Scene -> N x D tensor.
inline SceneTensor encode_scene(const SceneSet& scene, const NormalizationSpec& spec) {
  const SceneLayout& lay = spec.layout;
  if (scene.capacity() != lay.N)
    throw CapacityError("scene has " + std::to_string(scene.capacity()) + " slots, layout expects " +
                        std::to_string(lay.N));
  SceneTensor x(lay.N, lay.D());
  for (int i = 0; i < lay.N; ++i) {
    VectorX<double> row(lay.D());
    encode_object_row(scene.objects[static_cast<std::size_t>(i)], spec, row);
    x.row(i) = row.transpose();
  }
  return x;
}

/// Argmax over the class slots; ties resolve to the lowest index.
inline int decode_class(const Eigen::Ref<const VectorX<double>>& row, const SceneLayout& lay) {
  int best = 0;
  for (int c = 1; c < lay.L; ++c)
    if (row(lay.class_offset() + c) > row(lay.class_offset() + best)) best = c;
  return best;
}

constexpr double kMinDecodedHalfExtent = 1e-3;

inline ObjectRecord decode_object_row(const Eigen::Ref<const VectorX<double>>& row, const NormalizationSpec& spec) {
  const SceneLayout& lay = spec.layout;
  ObjectRecord o = ObjectRecord::make_empty(lay.F);
  o.cls = decode_class(row, lay);
  if (o.empty()) return o;
  o.location = row.segment<3>(0).cwiseProduct(spec.location_scale);
  o.size = row.segment<3>(3).cwiseProduct(spec.size_scale).cwiseMax(kMinDecodedHalfExtent);
  double c = row(6), s = row(7);
  const double n = std::hypot(c, s);
  if (n > 0) {
    c /= n;
    s /= n;
  } else {
    c = 1.0;
    s = 0.0;
  }
  o.theta = std::atan2(s, c);
  for (int k = 0; k < lay.F; ++k)
    o.code(k) = spec.code_min(k) + 0.5 * (row(lay.code_offset() + k) + 1.0) * (spec.code_max(k) - spec.code_min(k));
  return o;
}

/// N x D tensor -> scene. Rows decoding to 'empty' become canonical padding.
inline SceneSet decode_scene(const SceneTensor& x, const NormalizationSpec& spec,
                             RoomType room = RoomType::bedroom) {
  const SceneLayout& lay = spec.layout;
  if (x.rows() != lay.N || x.cols() != lay.D()) throw RangeError("tensor shape does not match layout");
  if (!x.allFinite()) throw NumericError("scene tensor has non-finite entries");
  SceneSet s;
  s.room_type = room;
  s.objects.reserve(static_cast<std::size_t>(lay.N));
  for (int i = 0; i < lay.N; ++i) s.objects.push_back(decode_object_row(x.row(i).transpose(), spec));
  return s;
}

}  // namespace scenediff
