// scenediff command-line tool: data generation, codec and denoiser training, sampling,
// the conditioned tasks, rendering, evaluation and the gradient audit.

#include "scenediff/checkpoint.hpp"
#include "scenediff/conditioning.hpp"
#include "scenediff/dataset_gen.hpp"
#include "scenediff/run_config.hpp"
#include "scenediff/scene_eval.hpp"
#include "scenediff/scene_io.hpp"
#include "scenediff/shape_space.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace scenediff;

namespace {

constexpr int kSampleChunk = 32;

// Stream salts keep the independent random streams of one run apart.
enum Salt : std::uint64_t {
  kSaltLibrary = 0x11b,
  kSaltShapes = 0x5a,
  kSaltInit = 0x1417,
  kSaltPrompts = 0x7e47,
  kSaltEval = 0xe7a1,
  kSaltSample = 0x5a3b,
  kSaltAudit = 0xa0d1,
};

class JsonlLog {
 public:
  JsonlLog(const fs::path& path, bool append = false)
      : f_(path, append ? std::ios::app : std::ios::trunc) {
    if (!f_) throw DataError("cannot write " + path.string());
  }
  void write(const json& j) { f_ << j.dump() << '\n'; }

 private:
  std::ofstream f_;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

fs::path prepare_out(const std::string& out, const RunConfig& cfg) {
  fs::create_directories(out);
  std::ofstream(fs::path(out) / "run.cfg") << config_text(cfg);
  return out;
}

/// Runs `gen(count, rng)` over chunks of at most kSampleChunk scenes. Chunk k draws from
/// Rng(seed).fork(k), so results do not depend on the thread count.
Corpus chunked(int n, int threads, std::uint64_t seed,
               const std::function<std::vector<SceneSet>(int, Rng&)>& gen) {
  const int chunks = (n + kSampleChunk - 1) / kSampleChunk;
  std::vector<Corpus> parts(static_cast<std::size_t>(chunks));
  const Rng base(seed);
  parallel_for(chunks, threads, [&](int k) {
    Rng rng = base.fork(static_cast<std::uint64_t>(k));
    parts[static_cast<std::size_t>(k)] = gen(std::min(kSampleChunk, n - k * kSampleChunk), rng);
  });
  Corpus out;
  for (auto& p : parts)
    for (auto& s : p) out.push_back(std::move(s));
  return out;
}

GeneratorConfig layout_config(const RunConfig& cfg, const DenoiserConfig& m, int scenes) {
  GeneratorConfig g = cfg.generator();
  g.N = m.N;
  g.L = m.L;
  g.F = m.F;
  g.scenes = std::max(1, scenes);
  return g;
}

NormalizationSpec spec_of(const DenoiserConfig& m) { return NormalizationSpec::for_layout({m.N, m.L, m.F}); }

void write_scene_set(const fs::path& out, const Corpus& scenes, const RunConfig& cfg, const DenoiserConfig& m,
                     bool render) {
  const ClassTable table = bedroom_classes(m.L);
  write_corpus(out.string(), scenes, layout_config(cfg, m, static_cast<int>(scenes.size())), table);
  if (!render) return;
  fs::create_directories(out / "render");
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%05zu.ppm", i);
    write_ppm((out / "render" / name).string(), render_topdown(scenes[i]));
  }
}

json stats_json(const Corpus& c, int L) {
  const Vector cd = class_distribution(c, L);
  return {{"scenes", c.size()},
          {"obj_mean", mean_object_count(c)},
          {"sym_mean", mean_sym(c)},
          {"piou_mean", mean_piou(c)},
          {"class_distribution", std::vector<double>(cd.data(), cd.data() + cd.size())}};
}

DenoiserModel<float> load_checkpoint(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  return load_model(path);
}

// ---- commands --------------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, const std::string& library_path) {
  const fs::path out = prepare_out(out_dir, cfg);
  JsonlLog log(out / "gen-data_log.jsonl");
  const GeneratorConfig g = cfg.generator();
  const ClassTable table = bedroom_classes(g.L);
  std::optional<ShapeLibrary> lib;
  if (g.F > 0) {
    if (!library_path.empty()) {
      lib = read_library(library_path, table);
      if (lib->F != g.F)
        throw DataError("library code dimension " + std::to_string(lib->F) + " differs from F=" + std::to_string(g.F));
    } else {
      Rng rng = Rng(cfg.seed).fork(kSaltLibrary);
      LibraryBuild b = build_shape_library(g.prototypes_per_class, g.F, cfg.codec_train, rng, cfg.codec);
      for (std::size_t e = 0; e < b.log.epoch_loss.size(); ++e)
        log.write({{"event", "codec_epoch"},
                   {"epoch", e},
                   {"loss", b.log.epoch_loss[e]},
                   {"cd", b.log.epoch_cd[e]},
                   {"kl", b.log.epoch_kl[e]}});
      log.write({{"event", "library"}, {"prototypes", b.library.prototypes.size()}, {"degenerate_dims", b.degenerate_dims}});
      lib = std::move(b.library);
    }
    write_library((out / "library.json").string(), *lib, table);
  }
  const Corpus corpus = generate_corpus(g, lib ? &*lib : nullptr, cfg.threads);
  const CorpusManifest m = write_corpus(out.string(), corpus, g, table);
  log.write({{"event", "corpus"}, {"stats", stats_json(corpus, g.L)}});
  std::cout << "gen-data: " << corpus.size() << " scenes -> " << out.string() << " (obj "
            << fmt("%.3f", m.stats.obj_mean) << ", sym " << fmt("%.3f", m.stats.sym_mean) << ", piou "
            << fmt("%.4f", m.stats.piou_mean) << ")\n";
  return 0;
}

int cmd_shape_train(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.F < 1) throw ConfigError("shape-train needs F > 0");
  const fs::path out = prepare_out(out_dir, cfg);
  JsonlLog log(out / "shape-train_log.jsonl");
  Rng rng = Rng(cfg.seed).fork(kSaltShapes);
  const std::vector<FootprintFamily> all{FootprintFamily::rounded_rectangle, FootprintFamily::ellipse,
                                         FootprintFamily::l_shape};
  std::vector<Footprint> fps;
  for (int i = 0; i < cfg.shape_count; ++i) {
    FootprintParams p;
    p.family = cfg.shape_family == "all" ? all[static_cast<std::size_t>(i) % all.size()]
                                         : footprint_family_from_string(cfg.shape_family);
    p.aspect = rng.uniform(0.3, 1.0);
    if (p.family == FootprintFamily::rounded_rectangle) p.corner = rng.uniform(0.0, 0.5);
    if (p.family == FootprintFamily::l_shape) p.notch = rng.uniform(0.2, 0.5);
    fps.push_back(make_footprint(p));
  }
  ShapeCodecConfig cc = cfg.codec;
  cc.latent = cfg.F;
  CodecTrainLog tl;
  const ShapeCodec codec = train_codec(fps, cc, cfg.codec_train, rng, &tl);
  for (std::size_t e = 0; e < tl.epoch_loss.size(); ++e)
    log.write({{"event", "codec_epoch"}, {"epoch", e}, {"loss", tl.epoch_loss[e]}, {"cd", tl.epoch_cd[e]}, {"kl", tl.epoch_kl[e]}});

  const auto smoothed = [&](std::size_t end) {
    const std::size_t w = std::min<std::size_t>(50, end);
    double s = 0;
    for (std::size_t e = end - w; e < end; ++e) s += tl.epoch_loss[e];
    return s / static_cast<double>(w);
  };
  const double first = smoothed(std::min<std::size_t>(50, tl.epoch_loss.size()));
  const double last = smoothed(tl.epoch_loss.size());

  ShapeLibrary lib = make_prototypes(cfg.gen.prototypes_per_class, rng);
  const auto degenerate = assign_codes(lib, codec);
  write_library((out / "library.json").string(), lib, bedroom_classes(cfg.L));
  log.write({{"event", "summary"}, {"smoothed_first", first}, {"smoothed_last", last}, {"degenerate_dims", degenerate}});
  std::cout << "shape-train: " << fps.size() << " " << cfg.shape_family << " footprints, " << tl.epoch_loss.size()
            << " epochs, smoothed loss " << fmt("%.5f", first) << " -> " << fmt("%.5f", last) << ", library -> "
            << (out / "library.json").string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& out_dir, const std::string& data_dir,
              const std::string& resume_dir) {
  if (data_dir.empty()) throw ConfigError("--data is required");
  const LoadedCorpus data = read_corpus(data_dir);
  const GeneratorConfig& dg = data.manifest.config;
  if (dg.N != cfg.N || dg.L != cfg.L || dg.F != cfg.F)
    throw DataError("corpus layout N=" + std::to_string(dg.N) + " L=" + std::to_string(dg.L) + " F=" +
                    std::to_string(dg.F) + " differs from the run config");
  const fs::path out = prepare_out(out_dir, cfg);
  const NormalizationSpec spec = cfg.normalization();
  const NoiseSchedule sched = cfg.schedule();
  const TrainConfig tc = cfg.training();
  const DenoiserConfig mc = cfg.denoiser();

  std::vector<TrainExample> examples;
  if (cfg.text) {
    Rng prng = Rng(cfg.seed).fork(kSaltPrompts);
    examples = text_examples(data.scenes, spec, data.table, Vocabulary(data.table), cfg.prompts_per_scene, prng);
  } else {
    for (const auto& s : data.scenes) examples.push_back({encode_scene(s, spec), {}});
  }

  DenoiserModel<float> model;
  TrainState<float> st;
  if (!resume_dir.empty()) {
    model = load_model((fs::path(resume_dir) / "model.bin").string());
    if (!(model.config == mc)) throw CheckpointError("checkpoint model config differs from the run config");
    st = load_train_state((fs::path(resume_dir) / "state.bin").string(), model);
  } else {
    Rng init = Rng(cfg.seed).fork(kSaltInit);
    model = init_model<float>(mc, init);
    st = TrainState<float>::fresh(model.params.size(), tc);
  }
  const long start = st.step;
  JsonlLog log(out / "train_log.jsonl", !resume_dir.empty());
  const auto save = [&] {
    save_model(model, (out / "model.bin").string());
    save_train_state(st, model, (out / "state.bin").string());
  };
  double first_avg = -1.0;

  train<float>(model, st, examples, sched, spec, tc, tc.steps, [&](const TrainState<float>& s, const LossBreakdown& l) {
    if (first_avg < 0 && s.step - start >= 50) first_avg = s.avg_sce;
    if (s.step % tc.log_interval == 0 || s.step == tc.steps)
      log.write({{"step", s.step},
                 {"lr", learning_rate(tc, s.step - 1)},
                 {"t", l.t},
                 {"l_bbox", l.l_bbox},
                 {"l_class", l.l_class},
                 {"l_code", l.l_code},
                 {"l_iou", l.l_iou},
                 {"total", l.total},
                 {"avg_sce", s.avg_sce}});
    if (cfg.eval_samples > 0 && s.step % tc.eval_interval == 0) {
      const Corpus gen = chunked(cfg.eval_samples, cfg.threads,
                                 Rng(cfg.seed).fork(kSaltEval + static_cast<std::uint64_t>(s.step)).next_u64(),
                                 [&](int n, Rng& rng) {
                                   return mc.text() ? text_to_scenes(model, sched, {}, spec, n, rng)
                                                    : sample_scenes(model, sched, spec, n, rng);
                                 });
      log.write({{"event", "eval"},
                 {"step", s.step},
                 {"ckl", metric_ckl(gen, data.scenes, cfg.L)},
                 {"obj_mean", mean_object_count(gen)},
                 {"piou_mean", mean_piou(gen)},
                 {"sym_mean", mean_sym(gen, cfg.sym)}});
    }
    if (s.step % tc.checkpoint_interval == 0) save();
  });
  save();
  std::cout << "train: steps " << start << " -> " << st.step << ", avg sce "
            << (first_avg < 0 ? std::string("n/a") : fmt("%.5f", first_avg)) << " -> " << fmt("%.5f", st.avg_sce)
            << ", model -> " << (out / "model.bin").string() << "\n";
  return 0;
}

int cmd_sample(const RunConfig& cfg, const std::string& out_dir, const std::string& ckpt, int n, bool render) {
  const auto model = load_checkpoint(ckpt);
  const fs::path out = prepare_out(out_dir, cfg);
  const NormalizationSpec spec = spec_of(model.config);
  const NoiseSchedule sched = cfg.schedule();
  const Corpus scenes = chunked(n, cfg.threads, Rng(cfg.seed).fork(kSaltSample).next_u64(), [&](int k, Rng& rng) {
    return model.config.text() ? text_to_scenes(model, sched, {}, spec, k, rng) : sample_scenes(model, sched, spec, k, rng);
  });
  write_scene_set(out, scenes, cfg, model.config, render);
  JsonlLog(out / "sample_log.jsonl").write({{"event", "sample"}, {"stats", stats_json(scenes, model.config.L)}});
  std::cout << "sample: " << scenes.size() << " scenes -> " << out.string() << " (obj "
            << fmt("%.3f", mean_object_count(scenes)) << ", piou " << fmt("%.4f", mean_piou(scenes)) << ")\n";
  return 0;
}

SceneFile read_input_scene(const std::string& path, const DenoiserConfig& m) {
  if (path.empty()) throw ConfigError("an input scene file is required");
  return read_scene_file(path, bedroom_classes(m.L), m.N, m.F);
}

int cmd_complete(const RunConfig& cfg, const std::string& out_dir, const std::string& ckpt,
                 const std::string& partial_path, int n, bool render) {
  const auto model = load_checkpoint(ckpt);
  const SceneFile in = read_input_scene(partial_path, model.config);
  PartialScene p;
  p.room_type = in.scene.room_type;
  const bool any_frozen = std::find(in.frozen.begin(), in.frozen.end(), true) != in.frozen.end();
  for (std::size_t i = 0; i < in.scene.objects.size(); ++i)
    if (!in.scene.objects[i].empty() && (!any_frozen || in.frozen[i])) p.objects.push_back(in.scene.objects[i]);
  const NormalizationSpec spec = spec_of(model.config);
  const NoiseSchedule sched = cfg.schedule();
  completion_condition(p, spec);  // validates before any output is written
  const fs::path out = prepare_out(out_dir, cfg);
  const Corpus scenes = chunked(n, cfg.threads, Rng(cfg.seed).fork(kSaltSample).next_u64(),
                                [&](int k, Rng& rng) { return complete_scenes(model, sched, p, spec, k, rng); });
  write_scene_set(out, scenes, cfg, model.config, render);
  JsonlLog(out / "complete_log.jsonl")
      .write({{"event", "complete"}, {"observed", p.M()}, {"stats", stats_json(scenes, model.config.L)}});
  std::cout << "complete: " << scenes.size() << " completions of " << p.M() << " observed objects -> "
            << out.string() << " (obj " << fmt("%.3f", mean_object_count(scenes)) << ")\n";
  return 0;
}

int cmd_rearrange(const RunConfig& cfg, const std::string& out_dir, const std::string& ckpt,
                  const std::string& input_path, int n, bool render) {
  const auto model = load_checkpoint(ckpt);
  const SceneFile in = read_input_scene(input_path, model.config);
  const ArrangementInput ai{in.scene, in.frozen};
  const NormalizationSpec spec = spec_of(model.config);
  const NoiseSchedule sched = cfg.schedule();
  arrangement_condition(ai, spec);
  const fs::path out = prepare_out(out_dir, cfg);
  const Corpus scenes = chunked(n, cfg.threads, Rng(cfg.seed).fork(kSaltSample).next_u64(),
                                [&](int k, Rng& rng) { return rearrange_scenes(model, sched, ai, spec, k, rng); });
  write_scene_set(out, scenes, cfg, model.config, render);
  JsonlLog(out / "rearrange_log.jsonl")
      .write({{"event", "rearrange"}, {"objects", in.scene.occupied_count()}, {"stats", stats_json(scenes, model.config.L)}});
  std::cout << "rearrange: " << scenes.size() << " arrangements of " << in.scene.occupied_count() << " objects -> "
            << out.string() << " (piou " << fmt("%.4f", mean_piou(scenes)) << ")\n";
  return 0;
}

int cmd_text2scene(const RunConfig& cfg, const std::string& out_dir, const std::string& ckpt,
                   const std::string& prompt, int n, bool render) {
  const auto model = load_checkpoint(ckpt);
  const ClassTable table = bedroom_classes(model.config.L);
  const Vocabulary vocab(table);
  const std::vector<int> tokens = vocab.tokenize(prompt);
  if (static_cast<int>(tokens.size()) + 1 > model.config.max_tokens) throw RangeError("prompt exceeds max_tokens");
  const NormalizationSpec spec = spec_of(model.config);
  const NoiseSchedule sched = cfg.schedule();
  if (!model.config.text()) throw PreconditionError("checkpoint was trained without text support");
  const fs::path out = prepare_out(out_dir, cfg);
  const Corpus scenes = chunked(n, cfg.threads, Rng(cfg.seed).fork(kSaltSample).next_u64(),
                                [&](int k, Rng& rng) { return text_to_scenes(model, sched, tokens, spec, k, rng); });
  write_scene_set(out, scenes, cfg, model.config, render);

  // Share of scenes containing every class the prompt names.
  std::vector<int> named;
  for (int t : tokens)
    for (int c = 1; c < table.size(); ++c)
      if (vocab.word(t) == table.name(c) || vocab.word(t) == plural_of(table.name(c))) named.push_back(c);
  int satisfied = 0;
  for (const auto& s : scenes) {
    bool ok = true;
    for (int c : named)
      ok = ok && std::any_of(s.objects.begin(), s.objects.end(), [&](const auto& o) { return o.cls == c; });
    satisfied += ok;
  }
  const double rate = scenes.empty() ? 0.0 : static_cast<double>(satisfied) / static_cast<double>(scenes.size());
  JsonlLog(out / "text2scene_log.jsonl")
      .write({{"event", "text2scene"}, {"prompt", prompt}, {"tokens", tokens}, {"named_class_rate", rate},
              {"stats", stats_json(scenes, model.config.L)}});
  std::cout << "text2scene: " << scenes.size() << " scenes for \"" << prompt << "\" -> " << out.string()
            << " (named classes present in " << fmt("%.1f", 100.0 * rate) << "%)\n";
  return 0;
}

int cmd_render(const RunConfig& cfg, const std::string& out_dir, const std::string& scene_path) {
  if (scene_path.empty()) throw ConfigError("--scene is required");
  const fs::path out = prepare_out(out_dir, cfg);
  JsonlLog log(out / "render_log.jsonl");
  std::vector<std::pair<std::string, SceneSet>> items;
  if (fs::is_directory(scene_path)) {
    const LoadedCorpus c = read_corpus(scene_path);
    for (std::size_t i = 0; i < c.scenes.size(); ++i)
      items.emplace_back(fs::path(c.manifest.files[i]).stem().string(), c.scenes[i]);
  } else {
    const SceneFile f = read_scene_file(scene_path, bedroom_classes(cfg.L), cfg.N, cfg.F);
    items.emplace_back(fs::path(scene_path).stem().string(), f.scene);
  }
  for (const auto& [name, scene] : items) {
    const fs::path p = out / (name + ".ppm");
    write_ppm(p.string(), render_topdown(scene));
    log.write({{"event", "render"}, {"file", p.filename().string()}, {"objects", scene.occupied_count()}});
  }
  std::cout << "render: " << items.size() << " raster(s) -> " << out.string() << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& out_dir, const std::string& gen_dir, const std::string& ref_dir) {
  if (gen_dir.empty() || ref_dir.empty()) throw ConfigError("--gen and --ref are required");
  const LoadedCorpus gen = read_corpus(gen_dir);
  const LoadedCorpus ref = read_corpus(ref_dir);
  if (gen.manifest.config.L != ref.manifest.config.L) throw DataError("corpora use different class counts");
  const MetricsReport r = evaluate(gen.scenes, ref.scenes, gen.manifest.config.L, cfg.seed, cfg.sym);
  const fs::path out = prepare_out(out_dir, cfg);
  std::ofstream(out / "metrics.json") << r.to_json().dump(1) << '\n';
  std::ofstream(out / "metrics.txt") << r.to_text();
  JsonlLog(out / "eval_log.jsonl").write({{"event", "eval"}, {"gen", gen_dir}, {"ref", ref_dir}, {"metrics", r.to_json()}});
  std::cout << "eval: ckl " << fmt("%.5f", r.ckl) << ", obj " << fmt("%.3f", r.obj_mean) << "/"
            << fmt("%.3f", r.obj_ref) << ", sym " << fmt("%.3f", r.sym_mean) << "/" << fmt("%.3f", r.sym_ref)
            << ", piou " << fmt("%.4f", r.piou_mean) << "/" << fmt("%.4f", r.piou_ref);
  if (r.has_feature_metrics)
    std::cout << ", sca " << fmt("%.3f", r.sca) << ", rfid " << fmt("%.4g", r.rfid) << ", rkid "
              << fmt("%.4g", r.rkid);
  std::cout << " -> " << (out / "metrics.json").string() << "\n";
  return 0;
}

int cmd_audit(const RunConfig& cfg, const std::string& out_dir, bool single) {
  Rng rng = Rng(cfg.seed).fork(kSaltAudit);
  AuditOptions opt;
  opt.single_precision = single;
  const AuditReport rep = gradient_audit(cfg.denoiser(), cfg.schedule(), rng, opt);
  json worst = json::array();
  for (const auto& w : rep.worst)
    worst.push_back({{"index", w.index}, {"tensor", w.tensor}, {"analytic", w.analytic}, {"numeric", w.numeric},
                     {"rel", w.rel}});
  if (!out_dir.empty()) {
    const fs::path out = prepare_out(out_dir, cfg);
    JsonlLog(out / "audit_log.jsonl")
        .write({{"event", "audit"}, {"max_rel_error", rep.max_rel_error}, {"threshold", rep.threshold},
                {"passed", rep.passed}, {"worst", worst}});
  }
  std::cout << "audit: max rel err " << fmt("%.3e", rep.max_rel_error) << " (threshold " << fmt("%.0e", rep.threshold)
            << ", " << (single ? "32" : "64") << "-bit) " << (rep.passed ? "passed" : "FAILED") << "\n";
  if (!rep.passed) {
    for (const auto& w : rep.worst)
      std::cerr << "  " << w.tensor << "[" << w.index << "] analytic " << w.analytic << " numeric " << w.numeric
                << " rel " << w.rel << "\n";
    throw NumericError("gradient audit failed");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scenediff: denoising-diffusion generation of indoor object layouts"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path;
  app.add_option("--config", config_path, "run config file (key = value lines)");
  const auto& keys = config_keys();
  std::vector<std::string> values(keys.size());
  std::vector<CLI::Option*> key_opts;
  const RunConfig defaults;
  for (std::size_t i = 0; i < keys.size(); ++i)
    key_opts.push_back(app.add_option("--" + keys[i].name, values[i], keys[i].help)
                           ->type_name("VALUE")
                           ->default_str(keys[i].get(defaults))
                           ->group("Run config (file keys; flags override the file)"));

  std::string out, data, resume, checkpoint, partial, input, prompt, scene, gen, ref, library;
  int n = 16;
  bool render = false, single = false;

  auto* c_gen = app.add_subcommand("gen-data", "generate the toy bedroom corpus and its shape library");
  c_gen->add_option("--out", out, "output directory")->required();
  c_gen->add_option("--library", library, "reuse a shape library instead of training one");

  auto* c_shape = app.add_subcommand("shape-train", "train the footprint codec and encode a prototype library");
  c_shape->add_option("--out", out, "output directory")->required();

  auto* c_train = app.add_subcommand("train", "train the scene denoiser on a corpus");
  c_train->add_option("--data", data, "corpus directory")->required();
  c_train->add_option("--out", out, "output directory")->required();
  c_train->add_option("--resume", resume, "directory holding model.bin and state.bin to continue from");

  const auto sampling = [&](CLI::App* c) {
    c->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    c->add_option("--out", out, "output directory")->required();
    c->add_option("--n", n, "number of scenes")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_flag("--render", render, "also write top-down P6 rasters");
  };
  auto* c_sample = app.add_subcommand("sample", "unconditional scene sampling");
  sampling(c_sample);
  auto* c_complete = app.add_subcommand("complete", "complete a partial scene");
  sampling(c_complete);
  c_complete->add_option("--partial", partial, "scene file; objects flagged frozen (or all) are kept")->required();
  auto* c_rearrange = app.add_subcommand("rearrange", "re-arrange a given object set");
  sampling(c_rearrange);
  c_rearrange->add_option("--input", input, "scene file; frozen objects also keep their placement")->required();
  auto* c_text = app.add_subcommand("text2scene", "text-conditioned sampling");
  sampling(c_text);
  c_text->add_option("--prompt", prompt, "prompt over the toy vocabulary")->required();

  auto* c_render = app.add_subcommand("render", "rasterize a scene file or corpus directory");
  c_render->add_option("--scene", scene, "scene file or corpus directory")->required();
  c_render->add_option("--out", out, "output directory")->required();

  auto* c_eval = app.add_subcommand("eval", "compare a generated corpus against a reference corpus");
  c_eval->add_option("--gen", gen, "generated corpus directory")->required();
  c_eval->add_option("--ref", ref, "reference corpus directory")->required();
  c_eval->add_option("--out", out, "output directory")->required();

  auto* c_audit = app.add_subcommand("audit", "finite-difference gradient audit of the denoiser");
  c_audit->add_option("--out", out, "optional output directory for the audit log");
  c_audit->add_flag("--single", single, "audit 32-bit gradients (threshold 1e-3)");

  auto* c_print = app.add_subcommand("print-config", "print the resolved run config as a config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::map<std::string, std::string> overrides;
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (key_opts[i]->count() > 0) overrides[keys[i].name] = values[i];
    const RunConfig cfg = load_run_config(config_path, overrides);

    if (c_print->parsed()) {
      std::cout << config_text(cfg);
      return 0;
    }
    if (c_gen->parsed()) return cmd_gen_data(cfg, out, library);
    if (c_shape->parsed()) return cmd_shape_train(cfg, out);
    if (c_train->parsed()) return cmd_train(cfg, out, data, resume);
    if (c_sample->parsed()) return cmd_sample(cfg, out, checkpoint, n, render);
    if (c_complete->parsed()) return cmd_complete(cfg, out, checkpoint, partial, n, render);
    if (c_rearrange->parsed()) return cmd_rearrange(cfg, out, checkpoint, input, n, render);
    if (c_text->parsed()) return cmd_text2scene(cfg, out, checkpoint, prompt, n, render);
    if (c_render->parsed()) return cmd_render(cfg, out, scene);
    if (c_eval->parsed()) return cmd_eval(cfg, out, gen, ref);
    if (c_audit->parsed()) return cmd_audit(cfg, out, single);
  } catch (const Error& e) {
    std::cerr << "scenediff: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "scenediff: data error: " << e.what() << "\n";
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "scenediff: data error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
