#pragma once

// Text prompts for the toy corpus: a closed vocabulary, a counts sentence, and
// pairwise spatial relation sentences derived from box geometry.

#include "scenediff/geometry.hpp"
#include "scenediff/scene_model.hpp"

#include <array>
#include <cctype>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

namespace scenediff {

constexpr int kBosToken = 0;
constexpr int kMaxPromptTokens = 48;  ///< including the leading <bos>

inline std::string plural_of(const std::string& w) {
  auto ends = [&](const char* suf) {
    const std::string s(suf);
    return w.size() >= s.size() && w.compare(w.size() - s.size(), s.size(), s) == 0;
  };
  if (ends("s") || ends("x") || ends("ch") || ends("sh")) return w + "es";
  return w + "s";
}

/// Closed word list: <bos>, class names and plurals, count words, relation and function words, punctuation.
class Vocabulary {
 public:
  explicit Vocabulary(const ClassTable& table = bedroom_classes()) {
    add("<bos>");
    for (int c = 1; c < table.size(); ++c) add(table.name(c));
    for (int c = 1; c < table.size(); ++c) add(plural_of(table.name(c)));
    for (const char* w : number_words()) add(w);
    for (const char* w : {"the", "room", "has", "a", "an", "and", "is", "of", "to", "in", "front", "next", "left",
                          "right", "above", "on", "inside", "surrounding", "behind", ",", "."})
      add(w);
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::string& word(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    return words_[static_cast<std::size_t>(id)];
  }
  bool contains(const std::string& w) const { return ids_.count(w) > 0; }
  int id(const std::string& w) const {
    auto it = ids_.find(w);
    if (it == ids_.end()) throw DataError("unknown word '" + w + "'");
    return it->second;
  }

  /// Lower-cases, splits on whitespace and detaches ',' and '.'. No <bos>.
  std::vector<int> tokenize(const std::string& text) const {
    std::vector<int> out;
    std::string cur;
    auto flush = [&] {
      if (!cur.empty()) out.push_back(id(cur));
      cur.clear();
    };
    for (char ch : text) {
      const unsigned char u = static_cast<unsigned char>(ch);
      if (std::isspace(u)) {
        flush();
      } else if (ch == ',' || ch == '.') {
        flush();
        out.push_back(id(std::string(1, ch)));
      } else {
        cur.push_back(static_cast<char>(std::tolower(u)));
      }
    }
    flush();
    return out;
  }

  std::string detokenize(const std::vector<int>& ids) const {
    std::string s;
    for (int t : ids) {
      if (t == kBosToken) continue;
      const std::string& w = word(t);
      if (!s.empty() && w != "," && w != ".") s += ' ';
      s += w;
    }
    return s;
  }

  static const std::array<const char*, 13>& number_words() {
    static const std::array<const char*, 13> w{"zero", "one",   "two",    "three", "four",   "five",    "six",
                                               "seven", "eight", "nine", "ten",  "eleven", "twelve"};
    return w;
  }

 private:
  void add(const std::string& w) {
    if (ids_.count(w)) return;
    ids_[w] = size();
    words_.push_back(w);
  }
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

/// <bos> followed by the prompt tokens, checked against the sequence cap.
inline std::vector<int> prompt_tokens(const Vocabulary& v, const std::string& text) {
  std::vector<int> t{kBosToken};
  const auto body = v.tokenize(text);
  t.insert(t.end(), body.begin(), body.end());
  if (static_cast<int>(t.size()) > kMaxPromptTokens)
    throw RangeError("prompt has " + std::to_string(t.size()) + " tokens, limit is " +
                     std::to_string(kMaxPromptTokens));
  return t;
}

// ---- relations -------------------------------------------------------------------

/// Listed in tie-break order.
enum class Relation { on, above, inside, surrounding, left_of, right_of, in_front_of, behind, next_to };

inline const char* relation_phrase(Relation r) {
  switch (r) {
    case Relation::on: return "on";
    case Relation::above: return "above";
    case Relation::inside: return "inside";
    case Relation::surrounding: return "surrounding";
    case Relation::left_of: return "left of";
    case Relation::right_of: return "right of";
    case Relation::in_front_of: return "in front of";
    case Relation::behind: return "behind";
    case Relation::next_to: return "next to";
  }
  return "next to";
}

struct RelationRules {
  double max_center_distance = 1.5;
  double above_gap = 0.3;
  double contact_tolerance = 0.05;
  double next_to_gap = 0.3;
};

namespace detail {

inline bool point_in_convex(const Point2& p, const Polygon& poly, double tol = 1e-9) {
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point2 a = poly[i], b = poly[(i + 1) % poly.size()];
    const Point2 e = b - a, d = p - a;
    if (e.x() * d.y() - e.y() * d.x() < -tol) return false;
  }
  return true;
}

inline bool polygon_inside(const Polygon& inner, const Polygon& outer) {
  return std::all_of(inner.begin(), inner.end(), [&](const Point2& p) { return point_in_convex(p, outer); });
}

inline double point_segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  const Point2 e = b - a;
  const double len2 = e.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(e) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * e)).norm();
}

/// Euclidean gap between two convex polygons; zero when they touch or overlap.
inline double polygon_gap(const Polygon& a, const Polygon& b) {
  if (polygon_area(clip_convex(a, b)) > 0) return 0.0;
  double g = std::numeric_limits<double>::infinity();
  for (int pass = 0; pass < 2; ++pass) {
    const Polygon& p = pass ? b : a;
    const Polygon& q = pass ? a : b;
    for (const auto& v : p)
      for (std::size_t i = 0; i < q.size(); ++i) g = std::min(g, point_segment_distance(v, q[i], q[(i + 1) % q.size()]));
  }
  return g;
}

}  // namespace detail

/// Relation of `subject` with respect to `object`, or nothing when the pair is too far apart
/// or no rule applies.
inline std::optional<Relation> relation_between(const ObjectRecord& subject, const ObjectRecord& object,
                                                const RelationRules& r = {}) {
  if ((subject.location - object.location).norm() >= r.max_center_distance) return std::nullopt;
  const Box3 a = Box3::of(subject), b = Box3::of(object);
  const Polygon fa = footprint(a), fb = footprint(b);
  const Point2 ca(a.center(0), a.center(1)), cb(b.center(0), b.center(1));
  const double a_bottom = a.center(2) - a.half(2), b_top = b.center(2) + b.half(2);
  const bool center_over = detail::point_in_convex(ca, fb);
  const bool level = interval_overlap(a.center(2), a.half(2), b.center(2), b.half(2)) > 0;

  if (std::abs(a_bottom - b_top) <= r.contact_tolerance && center_over) return Relation::on;
  const double radius = std::max(a.half.head<2>().norm(), b.half.head<2>().norm());
  if (a_bottom - b_top > r.above_gap && (ca - cb).norm() < radius) return Relation::above;
  if (level && detail::polygon_inside(fa, fb)) return Relation::inside;
  if (level && detail::polygon_inside(fb, fa)) return Relation::surrounding;
  if (level && !center_over) {
    // Subject position in the object's frame; the object faces its local +y.
    const Point2 d = ca - cb;
    const double c = std::cos(b.theta), s = std::sin(b.theta);
    const Point2 local(c * d.x() + s * d.y(), -s * d.x() + c * d.y());
    const double ax = std::abs(local.x()), ay = std::abs(local.y());
    if (ax > ay) return local.x() < 0 ? Relation::left_of : Relation::right_of;
    if (ay > ax) return local.y() > 0 ? Relation::in_front_of : Relation::behind;
  }
  if (detail::polygon_gap(fa, fb) < r.next_to_gap) return Relation::next_to;
  return std::nullopt;
}

// ---- prompt generation -----------------------------------------------------------

struct RelationTriple {
  int subject = 0;
  Relation relation = Relation::next_to;
  int object = 0;
  friend bool operator==(const RelationTriple&, const RelationTriple&) = default;
};

struct PromptSpec {
  std::vector<std::string> sentences;  ///< counts sentence first, then 0-2 relation sentences
  std::vector<int> tokens;             ///< without <bos>
  std::vector<RelationTriple> relations;

  std::string text() const {
    std::string s;
    for (const auto& x : sentences) s += (s.empty() ? "" : " ") + x;
    return s;
  }
};

inline std::string count_phrase(int n, const std::string& name) {
  if (n == 1) {
    const bool vowel = std::string("aeiou").find(name.front()) != std::string::npos;
    return std::string(vowel ? "an " : "a ") + name;
  }
  if (n < 2 || n >= static_cast<int>(Vocabulary::number_words().size()))
    throw RangeError("count " + std::to_string(n) + " has no number word");
  return std::string(Vocabulary::number_words()[static_cast<std::size_t>(n)]) + " " + plural_of(name);
}

/// "the room has two chairs and a table." with classes in index order.
inline std::string counts_sentence(const std::vector<int>& classes_present, const ClassTable& table) {
  std::map<int, int> counts;
  for (int c : classes_present) ++counts[c];
  std::vector<std::string> items;
  for (const auto& [c, n] : counts) items.push_back(count_phrase(n, table.name(c)));
  std::string s = "the room has ";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) s += i + 1 == items.size() ? " and " : ", ";
    s += items[i];
  }
  return s + ".";
}

inline std::string relation_sentence(const RelationTriple& r, const ClassTable& table) {
  return "the " + table.name(r.subject) + " is " + relation_phrase(r.relation) + " the " + table.name(r.object) + ".";
}

/// Prompt over `k` objects drawn without replacement from the occupied slots.
inline PromptSpec prompt_for_objects(const SceneSet& scene, int k, const ClassTable& table, const Vocabulary& vocab,
                                     Rng& rng, const RelationRules& rules = {}) {
  std::vector<ObjectRecord> objs = occupied(scene);
  if (k < 1 || static_cast<int>(objs.size()) < k)
    throw PreconditionError("prompt needs " + std::to_string(k) + " objects, scene has " +
                            std::to_string(objs.size()));
  for (int i = 0; i < k; ++i) std::swap(objs[static_cast<std::size_t>(i)],
                                        objs[static_cast<std::size_t>(rng.uniform_int(i, static_cast<int>(objs.size()) - 1))]);
  objs.resize(static_cast<std::size_t>(k));

  std::vector<int> cls;
  for (const auto& o : objs) cls.push_back(o.cls);
  PromptSpec p;
  p.sentences.push_back(counts_sentence(cls, table));

  std::vector<RelationTriple> valid;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const auto& a = objs[static_cast<std::size_t>(i)];
      const auto& b = objs[static_cast<std::size_t>(j)];
      if (auto rel = relation_between(a, b, rules))
        valid.push_back({a.cls, *rel, b.cls});
      else if (auto rev = relation_between(b, a, rules))
        valid.push_back({b.cls, *rev, a.cls});
    }
  const int want = std::min(rng.uniform_int(0, 2), static_cast<int>(valid.size()));
  for (int i = 0; i < want; ++i) {
    std::swap(valid[static_cast<std::size_t>(i)],
              valid[static_cast<std::size_t>(rng.uniform_int(i, static_cast<int>(valid.size()) - 1))]);
    p.relations.push_back(valid[static_cast<std::size_t>(i)]);
    p.sentences.push_back(relation_sentence(valid[static_cast<std::size_t>(i)], table));
  }
  p.tokens = vocab.tokenize(p.text());
  if (static_cast<int>(p.tokens.size()) + 1 > kMaxPromptTokens) throw RangeError("prompt exceeds token limit");
  return p;
}

/// Three-object prompt.
inline PromptSpec generate_prompt(const SceneSet& scene, Rng& rng, const ClassTable& table = bedroom_classes(),
                                  const Vocabulary& vocab = Vocabulary()) {
  return prompt_for_objects(scene, 3, table, vocab, rng);
}

}  // namespace scenediff
