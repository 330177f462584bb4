#pragma once

// Run configuration shared by every CLI command.
//
// File format: one `key = value` per line; `#` starts a comment; blank lines are ignored.
// Every key has a default, every key is also a command-line flag `--key value`, and flags
// override the file. Unknown or repeated keys are configuration errors.

#include "scenediff/conditioning.hpp"
#include "scenediff/dataset_gen.hpp"
#include "scenediff/denoiser.hpp"
#include "scenediff/scene_eval.hpp"
#include "scenediff/shape_space.hpp"
#include "scenediff/trainer.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>

namespace scenediff {

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  int N = 13, L = 8, F = 8;
  GeneratorConfig gen;
  ShapeCodecConfig codec;
  CodecTrainConfig codec_train;
  std::string shape_family = "rounded_rectangle";
  int shape_count = 64;
  DenoiserConfig model;
  bool text = false;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  TrainConfig train;
  int prompts_per_scene = 4;
  int eval_samples = 32;
  SymThresholds sym;

  /// Sub-configs with the shared fields (seed, threads, layout) filled in.
  GeneratorConfig generator() const {
    GeneratorConfig g = gen;
    g.seed = seed;
    g.N = N;
    g.L = L;
    g.F = F;
    return g;
  }
  DenoiserConfig denoiser() const {
    DenoiserConfig m = model;
    m.N = N;
    m.L = L;
    m.F = F;
    m.vocab = text ? Vocabulary(bedroom_classes(L)).size() : 0;
    return m;
  }
  TrainConfig training() const {
    TrainConfig t = train;
    t.seed = seed;
    t.threads = threads;
    return t;
  }
  NoiseSchedule schedule() const { return make_schedule(T, beta_start, beta_end); }
  NormalizationSpec normalization() const { return NormalizationSpec::for_layout({N, L, F}); }

  void validate() const {
    if (threads < 1) throw ConfigError("threads must be >= 1");
    generator().validate();
    denoiser().validate();
    training().validate();
    if (T < 1) throw ConfigError("T must be >= 1");
    if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1))
      throw ConfigError("need 0 < beta_start <= beta_end < 1");
    if (codec.hidden < 1 || codec.feature < 1 || codec.decoder_hidden < 1)
      throw ConfigError("codec widths must be positive");
    if (codec_train.epochs < 1 || codec_train.batch_size < 1 || codec_train.lr <= 0 ||
        codec_train.lr_decay_interval < 1 || !(codec_train.lr_decay > 0 && codec_train.lr_decay <= 1))
      throw ConfigError("codec training parameters out of range");
    if (shape_family != "all" && shape_family != "rounded_rectangle" && shape_family != "ellipse" &&
        shape_family != "l_shape")
      throw ConfigError("unknown shape_family '" + shape_family + "'");
    if (shape_count < 2) throw ConfigError("shape_count must be >= 2");
    if (prompts_per_scene < 1) throw ConfigError("prompts_per_scene must be >= 1");
    if (eval_samples < 0) throw ConfigError("eval_samples must be >= 0");
    if (sym.size_rel <= 0 || sym.off_axis <= 0 || sym.height <= 0 || sym.angle_deg <= 0)
      throw ConfigError("symmetry thresholds must be positive");
  }
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

namespace detail {

inline std::string format_value(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}
template <typename T>
  requires std::is_integral_v<T>
std::string format_value(T v) {
  return std::to_string(v);
}
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }

template <typename T>
T parse_value(const std::string& key, const std::string& s) {
  if constexpr (std::is_same_v<T, bool>) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError("key '" + key + "': expected true or false, got '" + s + "'");
  } else if constexpr (std::is_same_v<T, std::string>) {
    return s;
  } else {
    T v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || s.empty())
      throw ConfigError("key '" + key + "': cannot parse '" + s + "'");
    return v;
  }
}

template <typename T, typename Access>
ConfigKey key(std::string name, std::string help, Access acc) {
  return {name, std::move(help),
          [acc, name](RunConfig& c, const std::string& s) { acc(c) = parse_value<T>(name, s); },
          [acc](const RunConfig& c) { return format_value(acc(const_cast<RunConfig&>(c))); }};
}

}  // namespace detail

/// The single list of configuration keys; help text, defaults and flags derive from it.
inline const std::vector<ConfigKey>& config_keys() {
  using detail::key;
  using C = RunConfig;
  static const std::vector<ConfigKey> keys{
      key<std::uint64_t>("seed", "master random seed", [](C& c) -> auto& { return c.seed; }),
      key<int>("threads", "worker threads; 1 gives bitwise-reproducible runs", [](C& c) -> auto& { return c.threads; }),
      key<int>("N", "object slots per scene", [](C& c) -> auto& { return c.N; }),
      key<int>("L", "class count including 'empty'", [](C& c) -> auto& { return c.L; }),
      key<int>("F", "shape-code dimension (0 disables shape codes)", [](C& c) -> auto& { return c.F; }),
      // generator
      key<int>("scenes", "corpus size", [](C& c) -> auto& { return c.gen.scenes; }),
      key<double>("p_sym", "probability of a mirrored nightstand pair", [](C& c) -> auto& { return c.gen.p_sym; }),
      key<double>("p_single_nightstand", "probability of one nightstand when unpaired",
                  [](C& c) -> auto& { return c.gen.p_single_nightstand; }),
      key<double>("p_wardrobe", "wardrobe probability", [](C& c) -> auto& { return c.gen.p_wardrobe; }),
      key<double>("p_lamp", "lamp probability", [](C& c) -> auto& { return c.gen.p_lamp; }),
      key<double>("p_desk", "desk probability", [](C& c) -> auto& { return c.gen.p_desk; }),
      key<double>("p_chair_given_desk", "chair probability given a desk",
                  [](C& c) -> auto& { return c.gen.p_chair_given_desk; }),
      key<double>("p_table", "side table probability", [](C& c) -> auto& { return c.gen.p_table; }),
      key<double>("iou_threshold", "maximum pairwise oriented IoU in generated scenes",
                  [](C& c) -> auto& { return c.gen.iou_threshold; }),
      key<int>("placement_tries", "placement attempts per object", [](C& c) -> auto& { return c.gen.placement_tries; }),
      key<int>("scene_attempts", "rejection budget per scene", [](C& c) -> auto& { return c.gen.scene_attempts; }),
      key<int>("min_objects", "minimum objects per scene", [](C& c) -> auto& { return c.gen.min_objects; }),
      key<int>("prototypes_per_class", "shape prototypes per class",
               [](C& c) -> auto& { return c.gen.prototypes_per_class; }),
      key<double>("max_floor", "room floor dimensions stay below this (m)", [](C& c) -> auto& { return c.gen.max_floor; }),
      key<double>("max_height", "room height stays below this (m)", [](C& c) -> auto& { return c.gen.max_height; }),
      // shape codec
      key<int>("codec_hidden", "codec encoder hidden width", [](C& c) -> auto& { return c.codec.hidden; }),
      key<int>("codec_feature", "codec pooled feature width", [](C& c) -> auto& { return c.codec.feature; }),
      key<int>("codec_decoder_hidden", "codec decoder hidden width", [](C& c) -> auto& { return c.codec.decoder_hidden; }),
      key<int>("codec_epochs", "codec training epochs", [](C& c) -> auto& { return c.codec_train.epochs; }),
      key<int>("codec_batch", "codec minibatch size", [](C& c) -> auto& { return c.codec_train.batch_size; }),
      key<double>("codec_lr", "codec learning rate", [](C& c) -> auto& { return c.codec_train.lr; }),
      key<double>("codec_lr_decay", "codec learning-rate decay factor", [](C& c) -> auto& { return c.codec_train.lr_decay; }),
      key<int>("codec_lr_decay_interval", "epochs between codec decays",
               [](C& c) -> auto& { return c.codec_train.lr_decay_interval; }),
      key<std::string>("shape_family", "shape-train footprints: rounded_rectangle, ellipse, l_shape or all",
                       [](C& c) -> auto& { return c.shape_family; }),
      key<int>("shape_count", "shape-train footprint count", [](C& c) -> auto& { return c.shape_count; }),
      // denoiser
      key<int>("width", "denoiser channel width", [](C& c) -> auto& { return c.model.width; }),
      key<int>("depth", "denoiser block count", [](C& c) -> auto& { return c.model.depth; }),
      key<int>("heads", "attention heads", [](C& c) -> auto& { return c.model.heads; }),
      key<int>("kernel", "object-axis convolution kernel", [](C& c) -> auto& { return c.model.kernel; }),
      key<int>("time_dim", "timestep embedding dimension", [](C& c) -> auto& { return c.model.time_dim; }),
      key<bool>("text", "build a text-conditioned model and train on generated prompts",
                [](C& c) -> auto& { return c.text; }),
      key<int>("text_dim", "token embedding dimension", [](C& c) -> auto& { return c.model.text_dim; }),
      key<int>("max_tokens", "token sequence cap", [](C& c) -> auto& { return c.model.max_tokens; }),
      // schedule
      key<int>("T", "diffusion steps", [](C& c) -> auto& { return c.T; }),
      key<double>("beta_start", "first noise variance", [](C& c) -> auto& { return c.beta_start; }),
      key<double>("beta_end", "last noise variance", [](C& c) -> auto& { return c.beta_end; }),
      // training
      key<int>("batch_size", "scenes per step", [](C& c) -> auto& { return c.train.batch_size; }),
      key<int>("steps", "total optimizer steps", [](C& c) -> auto& { return c.train.steps; }),
      key<double>("lr_init", "initial learning rate", [](C& c) -> auto& { return c.train.lr_init; }),
      key<double>("lr_decay", "learning-rate decay factor", [](C& c) -> auto& { return c.train.lr_decay; }),
      key<int>("lr_decay_interval", "steps between decays", [](C& c) -> auto& { return c.train.lr_decay_interval; }),
      key<double>("lambda_iou", "IoU loss weight", [](C& c) -> auto& { return c.train.lambda_iou; }),
      key<double>("iou_sharpness", "softplus sharpness of the smooth IoU", [](C& c) -> auto& { return c.train.iou_sharpness; }),
      key<int>("eval_interval", "steps between in-training evaluations", [](C& c) -> auto& { return c.train.eval_interval; }),
      key<int>("checkpoint_interval", "steps between checkpoints",
               [](C& c) -> auto& { return c.train.checkpoint_interval; }),
      key<int>("log_interval", "steps between loss records", [](C& c) -> auto& { return c.train.log_interval; }),
      key<int>("prompts_per_scene", "generated prompts per training scene (text models)",
               [](C& c) -> auto& { return c.prompts_per_scene; }),
      key<int>("eval_samples", "scenes sampled per in-training evaluation (0 disables)",
               [](C& c) -> auto& { return c.eval_samples; }),
      // metrics
      key<double>("sym_size_rel", "symmetry: relative size tolerance", [](C& c) -> auto& { return c.sym.size_rel; }),
      key<double>("sym_off_axis", "symmetry: position tolerance (m)", [](C& c) -> auto& { return c.sym.off_axis; }),
      key<double>("sym_height", "symmetry: height tolerance (m)", [](C& c) -> auto& { return c.sym.height; }),
      key<double>("sym_angle_deg", "symmetry: orientation tolerance (degrees)", [](C& c) -> auto& { return c.sym.angle_deg; }),
  };
  return keys;
}

inline const ConfigKey& find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ConfigError("unknown key '" + name + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Parses `key = value` text into a map, rejecting unknown and repeated keys.
inline std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source) {
  std::map<std::string, std::string> out;
  std::istringstream is(text);
  std::string line;
  for (int n = 1; std::getline(is, line); ++n) {
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    try {
      find_key(k);
    } catch (const ConfigError&) {
      throw ConfigError(where + ": unknown key '" + k + "'");
    }
    if (!out.emplace(k, v).second) throw ConfigError(where + ": key '" + k + "' given twice");
  }
  return out;
}

inline void apply_settings(RunConfig& c, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) find_key(k).set(c, v);
}

/// Defaults, then the file (if any), then overrides; validated.
inline RunConfig load_run_config(const std::string& path, const std::map<std::string, std::string>& overrides = {}) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    apply_settings(c, parse_config_text(ss.str(), path));
  }
  apply_settings(c, overrides);
  c.validate();
  return c;
}

/// Full config as a loadable file, one commented key per line.
inline std::string config_text(const RunConfig& c, bool with_help = true) {
  std::string out;
  for (const auto& k : config_keys()) {
    if (with_help) out += "# " + k.help + "\n";
    out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

}  // namespace scenediff
