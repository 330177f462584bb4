#pragma once

// Procedural toy-bedroom corpus: one bed against a wall, an optional mirrored nightstand pair,
// and wardrobe / lamp / desk / chair / table drawn from an explicit co-occurrence table.
// Placements are rejection-sampled until every pairwise oriented IoU is below a threshold.

#include "scenediff/scene_eval.hpp"
#include "scenediff/scene_io.hpp"
#include "scenediff/shape_space.hpp"

#include <filesystem>
#include <iomanip>
#include <optional>

namespace scenediff {

struct GeneratorConfig {
  RoomType room_type = RoomType::bedroom;
  int scenes = 512;
  std::uint64_t seed = 0;
  int N = 13;
  int L = 8;
  int F = 8;
  // Co-occurrence table.
  double p_sym = 0.7;               ///< mirrored nightstand pair flanking the bed
  double p_single_nightstand = 0.5;  ///< one nightstand when there is no pair
  double p_wardrobe = 0.6;
  double p_lamp = 0.5;
  double p_desk = 0.4;
  double p_chair_given_desk = 0.85;
  double p_table = 0.3;
  double iou_threshold = 0.01;
  int placement_tries = 60;
  int scene_attempts = 500;
  int min_objects = 3;
  int prototypes_per_class = 4;
  double max_floor = 6.0;   ///< m, both floor dimensions
  double max_height = 4.0;  ///< m, exclusive

  void validate() const {
    for (double p : {p_sym, p_single_nightstand, p_wardrobe, p_lamp, p_desk, p_chair_given_desk, p_table})
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("generator probabilities must lie in [0, 1]");
    if (scenes < 1 || placement_tries < 1 || scene_attempts < 1 || prototypes_per_class < 1)
      throw ConfigError("generator counts must be positive");
    if (L < 8 || L > 25) throw ConfigError("toy bedroom needs L in [8, 25]");
    if (N < min_objects || N > 21) throw ConfigError("N must be in [min_objects, 21]");
    if (min_objects < 1) throw ConfigError("min_objects must be positive");
    if (F < 0) throw ConfigError("F must be >= 0");
    if (!(iou_threshold > 0)) throw ConfigError("iou_threshold must be positive");
  }
};

/// Per-class footprint family and size ranges (half-extents in meters).
struct ClassRecipe {
  int cls;
  FootprintFamily family;
  double aspect_lo, aspect_hi;
  double corner_lo, corner_hi;
  double notch_lo, notch_hi;
  double hx_lo, hx_hi;
  double hz_lo, hz_hi;
};

inline const std::vector<ClassRecipe>& toy_recipes() {
  using FF = FootprintFamily;
  static const std::vector<ClassRecipe> r{
      {classes::bed, FF::rounded_rectangle, 1.05, 1.35, 0.0, 0.15, 0, 0, 0.70, 0.95, 0.25, 0.30},
      {classes::nightstand, FF::rounded_rectangle, 0.80, 1.00, 0.0, 0.30, 0, 0, 0.20, 0.28, 0.25, 0.30},
      {classes::wardrobe, FF::rounded_rectangle, 0.30, 0.45, 0.0, 0.0, 0, 0, 0.50, 1.00, 0.90, 1.00},
      {classes::lamp, FF::ellipse, 0.90, 1.00, 0, 0, 0, 0, 0.15, 0.25, 0.10, 0.15},
      {classes::desk, FF::l_shape, 0.45, 0.60, 0, 0, 0.25, 0.45, 0.50, 0.70, 0.36, 0.38},
      {classes::chair, FF::rounded_rectangle, 0.90, 1.10, 0.10, 0.40, 0, 0, 0.22, 0.28, 0.40, 0.45},
      {classes::table, FF::ellipse, 0.60, 1.00, 0, 0, 0, 0, 0.35, 0.55, 0.33, 0.37},
  };
  return r;
}

inline const ClassRecipe& recipe_for(int cls) {
  for (const auto& r : toy_recipes())
    if (r.cls == cls) return r;
  throw DataError("no recipe for class " + std::to_string(cls));
}

/// Footprint prototypes (no codes yet), ids in class order.
inline ShapeLibrary make_prototypes(int per_class, Rng& rng) {
  ShapeLibrary lib;
  int id = 0;
  for (const auto& r : toy_recipes())
    for (int k = 0; k < per_class; ++k) {
      ShapePrototype p;
      p.id = id++;
      p.cls = r.cls;
      p.params = {r.family, rng.uniform(r.aspect_lo, r.aspect_hi), rng.uniform(r.corner_lo, r.corner_hi),
                  rng.uniform(r.notch_lo, r.notch_hi)};
      p.footprint = make_footprint(p.params);
      lib.prototypes.push_back(std::move(p));
    }
  return lib;
}

struct LibraryBuild {
  ShapeLibrary library;
  CodecTrainLog log;
  std::vector<int> degenerate_dims;
};

/// Prototypes, codec training on their footprints, then posterior-mean codes scaled to [-1, 1].
inline LibraryBuild build_shape_library(int per_class, int F, const CodecTrainConfig& tc, Rng& rng,
                                       const ShapeCodecConfig& base = {}) {
  LibraryBuild b;
  b.library = make_prototypes(per_class, rng);
  if (F == 0) return b;
  std::vector<Footprint> fps;
  for (const auto& p : b.library.prototypes) fps.push_back(p.footprint);
  ShapeCodecConfig cc = base;
  cc.latent = F;
  const ShapeCodec codec = train_codec(fps, cc, tc, rng, &b.log);
  b.degenerate_dims = assign_codes(b.library, codec);
  return b;
}

// ---- validation ------------------------------------------------------------------

struct ValidationReport {
  std::vector<std::string> reasons;  ///< "size", "count", "class"
  bool ok() const { return reasons.empty(); }
};

/// Room bounds within max_floor x max_floor and height below max_height, object count in
/// [min_objects, N], and every class inside the table.
inline ValidationReport validate_scene(const SceneSet& scene, const GeneratorConfig& cfg) {
  ValidationReport rep;
  bool size_ok = true;
  if (scene.room_size) {
    const Vec3& r = *scene.room_size;
    if (r(0) > cfg.max_floor || r(1) > cfg.max_floor || r(2) >= cfg.max_height) size_ok = false;
  }
  bool class_ok = true;
  int count = 0;
  const double half = cfg.max_floor / 2;
  for (const auto& o : scene.objects) {
    if (o.empty()) continue;
    ++count;
    if (o.cls < 1 || o.cls >= cfg.L) class_ok = false;
    for (const auto& p : footprint(Box3::of(o)))
      if (std::abs(p(0)) > half + 1e-9 || std::abs(p(1)) > half + 1e-9) size_ok = false;
    if (o.location(2) + o.size(2) >= cfg.max_height) size_ok = false;
  }
  if (!size_ok) rep.reasons.push_back("size");
  if (count < cfg.min_objects || count > cfg.N) rep.reasons.push_back("count");
  if (!class_ok) rep.reasons.push_back("class");
  return rep;
}

// ---- generation ------------------------------------------------------------------

namespace detail {

struct Room {
  double W, Dp, H;  ///< full extents
  bool contains(const ObjectRecord& o) const {
    for (const auto& p : footprint(Box3::of(o)))
      if (std::abs(p(0)) > W / 2 + 1e-9 || std::abs(p(1)) > Dp / 2 + 1e-9) return false;
    return o.location(2) + o.size(2) < H;
  }
};

/// Frame of wall w (0: -y, 1: +x, 2: +y, 3: -x): objects against it face into the room.
struct WallFrame {
  double theta, half_len, dist;
  Vec3 world(double u, double v, double z) const {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * u - s * v, s * u + c * v, z};
  }
};

inline WallFrame wall_frame(const Room& r, int w) {
  const double th = wrap_angle(w * kPi / 2);
  const bool even = w % 2 == 0;
  return {th, (even ? r.W : r.Dp) / 2, (even ? r.Dp : r.W) / 2};
}

class Placer {
 public:
  Placer(const Room& room, const GeneratorConfig& cfg, const ShapeLibrary* lib, Rng& rng)
      : room_(room), cfg_(cfg), lib_(lib), rng_(rng) {}

  std::vector<ObjectRecord> objects;

  bool fits(const ObjectRecord& o) const {
    if (!room_.contains(o)) return false;
    const Box3 b = Box3::of(o);
    for (const auto& e : objects)
      if (oriented_iou(b, Box3::of(e)) >= cfg_.iou_threshold) return false;
    return true;
  }

  /// Shape draw: prototype, then half-extents from the class recipe and the prototype aspect.
  ObjectRecord draw_shape(int cls) {
    const ClassRecipe& r = recipe_for(cls);
    ObjectRecord o;
    o.cls = cls;
    double aspect = rng_.uniform(r.aspect_lo, r.aspect_hi);
    o.code = Vector::Zero(cfg_.F);
    if (lib_ && !lib_->prototypes.empty()) {
      const auto cands = lib_->of_class(cls);
      const ShapePrototype* p = cands[static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(cands.size()) - 1))];
      aspect = p->params.aspect;
      if (cfg_.F > 0) o.code = p->scaled_code;
    }
    const double hx = rng_.uniform(r.hx_lo, r.hx_hi);
    o.size = Vec3(hx, hx * aspect, rng_.uniform(r.hz_lo, r.hz_hi));
    return o;
  }

  /// Back against a random wall, random position along it.
  bool place_on_wall(ObjectRecord o, double margin = 0.0) {
    for (int k = 0; k < cfg_.placement_tries; ++k) {
      const WallFrame f = wall_frame(room_, rng_.uniform_int(0, 3));
      const double span = f.half_len - o.size(0) - margin;
      if (span <= 0) continue;
      o.theta = f.theta;
      o.location = f.world(rng_.uniform(-span, span), -f.dist + o.size(1) + rng_.uniform(0.0, 0.05), o.size(2));
      if (fits(o)) {
        objects.push_back(o);
        return true;
      }
    }
    return false;
  }

  bool place_free(ObjectRecord o, double z_lo, double z_hi) {
    for (int k = 0; k < cfg_.placement_tries; ++k) {
      o.theta = rng_.uniform(-kPi, kPi);
      const double r = std::hypot(o.size(0), o.size(1));
      if (room_.W / 2 <= r || room_.Dp / 2 <= r) return false;
      o.location = Vec3(rng_.uniform(-room_.W / 2 + r, room_.W / 2 - r), rng_.uniform(-room_.Dp / 2 + r, room_.Dp / 2 - r),
                        z_lo < 0 ? o.size(2) : rng_.uniform(z_lo, z_hi));
      if (fits(o)) {
        objects.push_back(o);
        return true;
      }
    }
    return false;
  }

  const Room& room() const { return room_; }
  Rng& rng() { return rng_; }

 private:
  const Room& room_;
  const GeneratorConfig& cfg_;
  const ShapeLibrary* lib_;
  Rng& rng_;
};

constexpr double kNightstandSlack = 0.7;  ///< wall length reserved on each side of the bed

/// One attempt; empty optional if a placement failed.
inline std::optional<std::vector<ObjectRecord>> attempt_scene(const Room& room, const GeneratorConfig& cfg,
                                                               const ShapeLibrary* lib, Rng& rng) {
  Placer pl(room, cfg, lib, rng);
  // Bed: axis-aligned, headboard against a wall, facing into the room.
  ObjectRecord bed = pl.draw_shape(classes::bed);
  const WallFrame f = wall_frame(room, rng.uniform_int(0, 3));
  const double span = f.half_len - bed.size(0) - kNightstandSlack;
  if (span <= 0) return std::nullopt;
  const double u_bed = rng.uniform(-span, span);
  bed.theta = f.theta;
  bed.location = f.world(u_bed, -f.dist + bed.size(1), bed.size(2));
  if (!pl.fits(bed)) return std::nullopt;
  pl.objects.push_back(bed);

  // Nightstands: a pair mirrored about the bed's long axis, or maybe a single one.
  const bool pair = rng.bernoulli(cfg.p_sym);
  const bool single = !pair && rng.bernoulli(cfg.p_single_nightstand);
  if (pair || single) {
    ObjectRecord ns = pl.draw_shape(classes::nightstand);
    ns.theta = f.theta;
    const double gap = rng.uniform(0.02, 0.08);
    const double off = bed.size(0) + gap + ns.size(0);
    const double v = -f.dist + ns.size(1);
    const std::vector<double> sides = pair ? std::vector<double>{-1.0, 1.0}
                                           : std::vector<double>{rng.bernoulli(0.5) ? 1.0 : -1.0};
    for (double side : sides) {
      ObjectRecord o = ns;
      o.location = f.world(u_bed + side * off, v, ns.size(2));
      if (!pl.fits(o)) return std::nullopt;
      pl.objects.push_back(o);
    }
  }
  if (rng.bernoulli(cfg.p_wardrobe) && !pl.place_on_wall(pl.draw_shape(classes::wardrobe))) return std::nullopt;
  if (rng.bernoulli(cfg.p_desk)) {
    if (!pl.place_on_wall(pl.draw_shape(classes::desk))) return std::nullopt;
    if (rng.bernoulli(cfg.p_chair_given_desk)) {
      // In front of the desk, facing it.
      const ObjectRecord desk = pl.objects.back();
      ObjectRecord ch = pl.draw_shape(classes::chair);
      ch.theta = wrap_angle(desk.theta + kPi);
      const Eigen::Vector2d fwd = forward_vector(desk.theta);
      const double d = desk.size(1) + ch.size(1) + rng.uniform(0.05, 0.2);
      const double lateral = rng.uniform(-0.5, 0.5) * (desk.size(0) - ch.size(0));
      const Eigen::Vector2d side(std::cos(desk.theta), std::sin(desk.theta));
      const Eigen::Vector2d p = desk.location.head<2>() + d * fwd + lateral * side;
      ch.location = Vec3(p(0), p(1), ch.size(2));
      if (!pl.fits(ch)) return std::nullopt;
      pl.objects.push_back(ch);
    }
  }
  if (rng.bernoulli(cfg.p_table) && !pl.place_free(pl.draw_shape(classes::table), -1, -1)) return std::nullopt;
  if (rng.bernoulli(cfg.p_lamp) && !pl.place_free(pl.draw_shape(classes::lamp), 1.5, 1.85)) return std::nullopt;

  std::stable_sort(pl.objects.begin(), pl.objects.end(),
                   [](const ObjectRecord& a, const ObjectRecord& b) { return a.cls < b.cls; });
  return pl.objects;
}

}  // namespace detail

/// One scene from its own stream; regenerates until the scene passes validate_scene.
inline SceneSet generate_scene(const GeneratorConfig& cfg, const ShapeLibrary* lib, Rng& rng, int index = 0) {
  for (int a = 0; a < cfg.scene_attempts; ++a) {
    const detail::Room room{rng.uniform(3.5, cfg.max_floor), rng.uniform(3.5, cfg.max_floor), rng.uniform(2.6, 3.0)};
    auto objs = detail::attempt_scene(room, cfg, lib, rng);
    if (!objs || static_cast<int>(objs->size()) > cfg.N) continue;
    SceneSet s = pad_scene(std::move(*objs), cfg.N, cfg.F, cfg.room_type);
    s.room_size = Vec3(room.W, room.Dp, room.H);
    if (validate_scene(s, cfg).ok()) return s;
  }
  throw DataError("scene " + std::to_string(index) + ": rejection budget of " + std::to_string(cfg.scene_attempts) +
                  " attempts exceeded");
}

struct CorpusStats {
  Vector class_distribution;
  double obj_mean = 0.0;
  double sym_mean = 0.0;
  double piou_mean = 0.0;

  static CorpusStats of(const Corpus& c, int L) {
    return {scenediff::class_distribution(c, L), mean_object_count(c), mean_sym(c), mean_piou(c)};
  }
};

struct CorpusManifest {
  GeneratorConfig config;
  std::vector<std::string> files;  ///< relative to the corpus directory
  CorpusStats stats;
};

/// Scene i is generated from Rng(seed).fork(i), so the result does not depend on `threads`.
inline Corpus generate_corpus(const GeneratorConfig& cfg, const ShapeLibrary* lib, int threads = 1) {
  cfg.validate();
  if (cfg.F > 0 && lib && lib->F != cfg.F) throw ConfigError("library code dimension differs from F");
  Corpus out(static_cast<std::size_t>(cfg.scenes));
  const Rng base(cfg.seed);
  parallel_for(cfg.scenes, threads, [&](int i) {
    Rng rng = base.fork(static_cast<std::uint64_t>(i));
    out[static_cast<std::size_t>(i)] = generate_scene(cfg, lib, rng, i);
  });
  return out;
}

inline nlohmann::json generator_config_json(const GeneratorConfig& c) {
  return {{"room_type", to_string(c.room_type)},
          {"scenes", c.scenes},
          {"seed", c.seed},
          {"N", c.N},
          {"L", c.L},
          {"F", c.F},
          {"p_sym", c.p_sym},
          {"p_single_nightstand", c.p_single_nightstand},
          {"p_wardrobe", c.p_wardrobe},
          {"p_lamp", c.p_lamp},
          {"p_desk", c.p_desk},
          {"p_chair_given_desk", c.p_chair_given_desk},
          {"p_table", c.p_table},
          {"iou_threshold", c.iou_threshold},
          {"placement_tries", c.placement_tries},
          {"scene_attempts", c.scene_attempts},
          {"min_objects", c.min_objects},
          {"prototypes_per_class", c.prototypes_per_class},
          {"max_floor", c.max_floor},
          {"max_height", c.max_height}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.room_type = room_type_from_string(j.at("room_type").get<std::string>());
  c.scenes = j.at("scenes");
  c.seed = j.at("seed");
  c.N = j.at("N");
  c.L = j.at("L");
  c.F = j.at("F");
  c.p_sym = j.at("p_sym");
  c.p_single_nightstand = j.at("p_single_nightstand");
  c.p_wardrobe = j.at("p_wardrobe");
  c.p_lamp = j.at("p_lamp");
  c.p_desk = j.at("p_desk");
  c.p_chair_given_desk = j.at("p_chair_given_desk");
  c.p_table = j.at("p_table");
  c.iou_threshold = j.at("iou_threshold");
  c.placement_tries = j.at("placement_tries");
  c.scene_attempts = j.at("scene_attempts");
  c.min_objects = j.at("min_objects");
  c.prototypes_per_class = j.at("prototypes_per_class");
  c.max_floor = j.at("max_floor");
  c.max_height = j.at("max_height");
  return c;
}

/// Writes manifest.json and scenes/scene_NNNNN.json. Statistics are computed from the
/// scenes as re-read from their files.
inline CorpusManifest write_corpus(const std::string& dir, const Corpus& corpus, const GeneratorConfig& cfg,
                                   const ClassTable& table) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "scenes");
  CorpusManifest m;
  m.config = cfg;
  Corpus reread;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::ostringstream name;
    name << "scenes/scene_" << std::setw(5) << std::setfill('0') << i << ".json";
    const std::string path = (fs::path(dir) / name.str()).string();
    write_scene_file(path, corpus[i], table);
    m.files.push_back(name.str());
    reread.push_back(read_scene_file(path, table, cfg.N, cfg.F).scene);
  }
  m.stats = CorpusStats::of(reread, cfg.L);
  nlohmann::json j;
  j["format"] = "scenediff-corpus";
  j["config"] = generator_config_json(cfg);
  j["classes"] = table.names;
  j["files"] = m.files;
  j["stats"] = {{"class_distribution", std::vector<double>(m.stats.class_distribution.data(),
                                                           m.stats.class_distribution.data() + cfg.L)},
                {"obj_mean", m.stats.obj_mean},
                {"sym_mean", m.stats.sym_mean},
                {"piou_mean", m.stats.piou_mean}};
  std::ofstream f(fs::path(dir) / "manifest.json");
  if (!f) throw DataError("cannot write manifest in " + dir);
  f << j.dump(1) << '\n';
  return m;
}

struct LoadedCorpus {
  CorpusManifest manifest;
  ClassTable table;
  Corpus scenes;
};

inline LoadedCorpus read_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream f(fs::path(dir) / "manifest.json");
  if (!f) throw DataError("no corpus manifest in " + dir);
  try {
    nlohmann::json j;
    f >> j;
    if (j.value("format", "") != "scenediff-corpus") throw DataError(dir + " is not a corpus");
    LoadedCorpus out;
    out.manifest.config = generator_config_from_json(j.at("config"));
    out.table.names = j.at("classes").get<std::vector<std::string>>();
    out.manifest.files = j.at("files").get<std::vector<std::string>>();
    const auto& st = j.at("stats");
    auto cd = st.at("class_distribution").get<std::vector<double>>();
    out.manifest.stats.class_distribution = Eigen::Map<Vector>(cd.data(), static_cast<Eigen::Index>(cd.size()));
    out.manifest.stats.obj_mean = st.at("obj_mean");
    out.manifest.stats.sym_mean = st.at("sym_mean");
    out.manifest.stats.piou_mean = st.at("piou_mean");
    const auto& c = out.manifest.config;
    for (const auto& file : out.manifest.files)
      out.scenes.push_back(read_scene_file((fs::path(dir) / file).string(), out.table, c.N, c.F).scene);
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/manifest.json: " + e.what());
  }
}

}  // namespace scenediff
