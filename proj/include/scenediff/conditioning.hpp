#pragma once

// Conditional generation on top of the ancestral sampler: scene completion,
// re-arrangement of a fixed object set, and text-prompted synthesis.

#include "scenediff/denoiser.hpp"
#include "scenediff/diffusion.hpp"
#include "scenediff/prompts.hpp"
#include "scenediff/trainer.hpp"

namespace scenediff {

/// Observed objects occupying the first M slots of the completed scene.
struct PartialScene {
  std::vector<ObjectRecord> objects;
  RoomType room_type = RoomType::bedroom;
  int M() const { return static_cast<int>(objects.size()); }
};

/// Object set whose sizes, classes and codes are kept; locations and orientations are generated.
struct ArrangementInput {
  SceneSet scene;
  std::vector<bool> frozen;  ///< optional per slot; frozen objects also keep their placement

  bool is_frozen(std::size_t i) const { return i < frozen.size() && frozen[i]; }
};

/// Columns diffused by re-arrangement: location and the orientation pair.
inline bool is_arrangement_column(int col) { return col < 3 || col == 6 || col == 7; }

inline ConditionSpec completion_condition(const PartialScene& p, const NormalizationSpec& spec) {
  const SceneLayout& lay = spec.layout;
  if (p.M() >= lay.N)
    throw CapacityError("partial scene has " + std::to_string(p.M()) + " objects, capacity " + std::to_string(lay.N) +
                        " leaves nothing to complete");
  for (const auto& o : p.objects)
    if (o.empty()) throw PreconditionError("observed objects must not be empty slots");
  ConditionSpec c;
  c.mode = ConditionMode::completion;
  c.observed = encode_scene(pad_scene(p.objects, lay.N, lay.F, p.room_type), spec);
  c.mask = BoolMatrix::Constant(lay.N, lay.D(), false);
  c.mask.topRows(p.M()).setConstant(true);
  return c;
}

inline ConditionSpec arrangement_condition(const ArrangementInput& in, const NormalizationSpec& spec) {
  const SceneLayout& lay = spec.layout;
  SceneSet v = in.scene;
  if (v.capacity() != lay.N) throw CapacityError("arrangement input must have N slots");
  for (std::size_t i = 0; i < v.objects.size(); ++i) {
    if (in.is_frozen(i)) continue;
    v.objects[i].location.setZero();
    v.objects[i].theta = 0.0;
  }
  ConditionSpec c;
  c.mode = ConditionMode::rearrangement;
  c.observed = encode_scene(v, spec);
  c.mask = BoolMatrix::Constant(lay.N, lay.D(), false);
  for (int i = 0; i < lay.N; ++i)
    for (int j = 0; j < lay.D(); ++j)
      c.mask(i, j) = v.objects[static_cast<std::size_t>(i)].empty() || in.is_frozen(static_cast<std::size_t>(i)) ||
                     !is_arrangement_column(j);
  return c;
}

template <NoisePredictor P>
std::vector<SceneTensor> complete_tensors(const P& model, const NoiseSchedule& s, const PartialScene& p,
                                          const NormalizationSpec& spec, int count, Rng& rng) {
  const std::vector<ConditionSpec> conds(static_cast<std::size_t>(count), completion_condition(p, spec));
  return ancestral_sample_batch(model, s, spec.layout.N, spec.layout.D(), conds, rng);
}

/// `count` completions; observed rows come back as the input records.
template <NoisePredictor P>
std::vector<SceneSet> complete_scenes(const P& model, const NoiseSchedule& s, const PartialScene& p,
                                      const NormalizationSpec& spec, int count, Rng& rng) {
  std::vector<SceneSet> out;
  for (const auto& x : complete_tensors(model, s, p, spec, count, rng)) {
    SceneSet scene = decode_scene(x, spec, p.room_type);
    for (std::size_t i = 0; i < p.objects.size(); ++i) {
      auto& dst = scene.objects[i];
      dst = p.objects[i];
      if (dst.code.size() == 0) dst.code = Vector::Zero(spec.layout.F);
    }
    out.push_back(std::move(scene));
  }
  return out;
}

template <NoisePredictor P>
SceneSet complete_scene(const P& model, const NoiseSchedule& s, const PartialScene& p, const NormalizationSpec& spec,
                        Rng& rng) {
  return complete_scenes(model, s, p, spec, 1, rng).front();
}

template <NoisePredictor P>
std::vector<SceneTensor> rearrange_tensors(const P& model, const NoiseSchedule& s, const ArrangementInput& in,
                                           const NormalizationSpec& spec, int count, Rng& rng) {
  const std::vector<ConditionSpec> conds(static_cast<std::size_t>(count), arrangement_condition(in, spec));
  return ancestral_sample_batch(model, s, spec.layout.N, spec.layout.D(), conds, rng);
}

/// `count` arrangements; sizes, classes and codes are copied from the input.
template <NoisePredictor P>
std::vector<SceneSet> rearrange_scenes(const P& model, const NoiseSchedule& s, const ArrangementInput& in,
                                       const NormalizationSpec& spec, int count, Rng& rng) {
  std::vector<SceneSet> out;
  for (const auto& x : rearrange_tensors(model, s, in, spec, count, rng)) {
    SceneSet scene = decode_scene(x, spec, in.scene.room_type);
    scene.room_size = in.scene.room_size;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      const auto& src = in.scene.objects[i];
      auto& dst = scene.objects[i];
      if (src.empty() || in.is_frozen(i)) {
        dst = src.empty() ? ObjectRecord::make_empty(spec.layout.F) : src;
        continue;
      }
      dst.cls = src.cls;
      dst.size = src.size;
      dst.code = src.code;
    }
    out.push_back(std::move(scene));
  }
  return out;
}

template <NoisePredictor P>
SceneSet rearrange_scene(const P& model, const NoiseSchedule& s, const ArrangementInput& in,
                         const NormalizationSpec& spec, Rng& rng) {
  return rearrange_scenes(model, s, in, spec, 1, rng).front();
}

/// Unconditional samples.
template <NoisePredictor P>
std::vector<SceneSet> sample_scenes(const P& model, const NoiseSchedule& s, const NormalizationSpec& spec, int count,
                                    Rng& rng, RoomType room = RoomType::bedroom) {
  const std::vector<ConditionSpec> conds(static_cast<std::size_t>(count));
  std::vector<SceneSet> out;
  for (const auto& x : ancestral_sample_batch(model, s, spec.layout.N, spec.layout.D(), conds, rng))
    out.push_back(decode_scene(x, spec, room));
  return out;
}

/// Prompted samples. `tokens` excludes <bos>, which is prepended here; an empty list is allowed.
template <typename S>
std::vector<SceneSet> text_to_scenes(const DenoiserModel<S>& model, const NoiseSchedule& s,
                                     const std::vector<int>& tokens, const NormalizationSpec& spec, int count,
                                     Rng& rng) {
  if (!model.config.text()) throw PreconditionError("model was built without text support");
  ConditionSpec c;
  c.mode = ConditionMode::text;
  c.tokens.push_back(kBosToken);
  c.tokens.insert(c.tokens.end(), tokens.begin(), tokens.end());
  if (static_cast<int>(c.tokens.size()) > model.config.max_tokens) throw RangeError("prompt exceeds max_tokens");
  for (int t : c.tokens)
    if (t < 0 || t >= model.config.vocab) throw DataError("token id " + std::to_string(t) + " outside vocabulary");
  const std::vector<ConditionSpec> conds(static_cast<std::size_t>(count), c);
  std::vector<SceneSet> out;
  for (const auto& x : ancestral_sample_batch(model, s, spec.layout.N, spec.layout.D(), conds, rng))
    out.push_back(decode_scene(x, spec));
  return out;
}

template <typename S>
SceneSet text_to_scene(const DenoiserModel<S>& model, const NoiseSchedule& s, const PromptSpec& prompt,
                       const NormalizationSpec& spec, Rng& rng) {
  return text_to_scenes(model, s, prompt.tokens, spec, 1, rng).front();
}

/// Training pairs for a text model: each scene gets `per_scene` prompts over 1-3 of its objects.
/// Half of the prompts are terse: every "the" and "." is dropped ("room has a desk").
inline std::vector<TrainExample> text_examples(const std::vector<SceneSet>& corpus, const NormalizationSpec& spec,
                                               const ClassTable& table, const Vocabulary& vocab, int per_scene,
                                               Rng& rng) {
  std::vector<TrainExample> out;
  const int the = vocab.id("the"), stop = vocab.id(".");
  for (const auto& scene : corpus) {
    const SceneTensor x0 = encode_scene(scene, spec);
    const int n = scene.occupied_count();
    for (int r = 0; r < per_scene && n > 0; ++r) {
      const int k = rng.uniform_int(1, std::min(3, n));
      TrainExample ex{x0, {kBosToken}};
      const auto body = prompt_for_objects(scene, k, table, vocab, rng).tokens;
      const bool terse = rng.uniform() < 0.5;
      for (int id : body)
        if (!terse || (id != the && id != stop)) ex.tokens.push_back(id);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace scenediff
