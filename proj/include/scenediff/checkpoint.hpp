#pragma once

// Checkpoint files: a text manifest followed by a little-endian float32 payload.
//
//   scenediff-checkpoint 1
//   config N=8 L=8 F=8 width=64 depth=2 heads=4 kernel=3 time_dim=128 vocab=0 text_dim=64 max_tokens=48
//   tensor encode.bbox.weight 8 32 0
//   ...
//   layout_hash <16 hex digits>      FNV-1a of the config and tensor lines above
//   payload_floats <count>
//   payload_hash <16 hex digits>     FNV-1a of the payload bytes
//   end_header
//   <count * 4 bytes>
//
// Training-state files use the same framing with kind "scenediff-trainstate" and carry the
// optimizer moments (2 * count floats) plus the step, learning rate and RNG state.

#include "scenediff/trainer.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace scenediff {

constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string config_line(const DenoiserConfig& c) {
  std::ostringstream os;
  os << "config N=" << c.N << " L=" << c.L << " F=" << c.F << " width=" << c.width << " depth=" << c.depth
     << " heads=" << c.heads << " kernel=" << c.kernel << " time_dim=" << c.time_dim << " vocab=" << c.vocab
     << " text_dim=" << c.text_dim << " max_tokens=" << c.max_tokens;
  return os.str();
}

inline DenoiserConfig parse_config_line(const std::string& line) {
  std::istringstream is(line);
  std::string word;
  is >> word;
  if (word != "config") throw CheckpointError("missing config line");
  DenoiserConfig c;
  while (is >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config entry '" + word + "'");
    const std::string k = word.substr(0, eq);
    int v = 0;
    try {
      v = std::stoi(word.substr(eq + 1));
    } catch (const std::exception&) {
      throw CheckpointError("malformed config value '" + word + "'");
    }
    if (k == "N") c.N = v;
    else if (k == "L") c.L = v;
    else if (k == "F") c.F = v;
    else if (k == "width") c.width = v;
    else if (k == "depth") c.depth = v;
    else if (k == "heads") c.heads = v;
    else if (k == "kernel") c.kernel = v;
    else if (k == "time_dim") c.time_dim = v;
    else if (k == "vocab") c.vocab = v;
    else if (k == "text_dim") c.text_dim = v;
    else if (k == "max_tokens") c.max_tokens = v;
    else throw CheckpointError("unknown config key '" + k + "'");
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  return c;
}

inline std::string layout_lines(const DenoiserConfig& c, const nn::Manifest& m) {
  std::ostringstream os;
  os << config_line(c) << '\n';
  for (const auto& e : m.entries()) os << "tensor " << e.name << ' ' << e.rows << ' ' << e.cols << ' ' << e.offset << '\n';
  return os.str();
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string floats_to_le_bytes(const float* data, std::size_t n) {
  std::string bytes(n * 4, '\0');
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
  }
  return bytes;
}

inline std::vector<float> le_bytes_to_floats(const std::string& bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

struct Header {
  std::string kind;
  DenoiserConfig config;
  std::string layout;  ///< config + tensor lines, as written
  std::string layout_hash;
  std::size_t payload_floats = 0;
  std::string payload_hash;
  std::vector<std::string> extra;  ///< other key lines, verbatim
};

inline void write_framed(const std::string& path, const std::string& kind, const DenoiserConfig& c,
                         const nn::Manifest& m, const std::vector<std::string>& extra, const std::string& payload) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write " + path);
  const std::string layout = layout_lines(c, m);
  f << kind << ' ' << kCheckpointVersion << '\n' << layout;
  f << "layout_hash " << hex64(fnv1a(layout)) << '\n';
  for (const auto& e : extra) f << e << '\n';
  f << "payload_floats " << payload.size() / 4 << '\n';
  f << "payload_hash " << hex64(fnv1a(payload)) << '\n';
  f << "end_header\n";
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw CheckpointError("short write to " + path);
}

inline std::pair<Header, std::string> read_framed(const std::string& path, const std::string& expected_kind) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot read " + path);
  Header h;
  std::string line;
  if (!std::getline(f, line)) throw CheckpointError("empty file " + path);
  {
    std::istringstream is(line);
    int version = 0;
    is >> h.kind >> version;
    if (h.kind != expected_kind) throw CheckpointError(path + " is not a " + expected_kind + " file");
    if (version != kCheckpointVersion) throw CheckpointError("unsupported version " + std::to_string(version));
  }
  bool ended = false;
  while (std::getline(f, line)) {
    if (line == "end_header") {
      ended = true;
      break;
    }
    if (line.starts_with("config ")) {
      h.config = parse_config_line(line);
      h.layout += line + '\n';
    } else if (line.starts_with("tensor ")) {
      h.layout += line + '\n';
    } else if (line.starts_with("layout_hash ")) {
      h.layout_hash = line.substr(12);
    } else if (line.starts_with("payload_floats ")) {
      h.payload_floats = std::stoull(line.substr(15));
    } else if (line.starts_with("payload_hash ")) {
      h.payload_hash = line.substr(13);
    } else {
      h.extra.push_back(line);
    }
  }
  if (!ended) throw CheckpointError("truncated header in " + path);
  std::string payload(h.payload_floats * 4, '\0');
  f.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(f.gcount()) != payload.size()) throw CheckpointError("truncated payload in " + path);
  if (f.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in " + path);
  if (hex64(fnv1a(h.layout)) != h.layout_hash) throw CheckpointError("manifest hash mismatch in " + path);
  if (hex64(fnv1a(payload)) != h.payload_hash) throw CheckpointError("payload hash mismatch in " + path);
  // The stored layout must be exactly what this build derives from the config.
  const auto expected = layout_lines(h.config, build_layout(h.config).manifest);
  if (expected != h.layout) throw CheckpointError("parameter layout does not match config in " + path);
  return {h, payload};
}

}  // namespace detail

inline void save_model(const DenoiserModel<float>& m, const std::string& path) {
  detail::write_framed(path, "scenediff-checkpoint", m.config, m.manifest(), {},
                       detail::floats_to_le_bytes(m.params.data(), m.params.size()));
}

inline DenoiserModel<float> load_model(const std::string& path) {
  auto [h, payload] = detail::read_framed(path, "scenediff-checkpoint");
  DenoiserModel<float> m{h.config, detail::build_layout(h.config), {}};
  if (h.payload_floats != m.layout.manifest.total())
    throw CheckpointError("payload has " + std::to_string(h.payload_floats) + " floats, layout needs " +
                          std::to_string(m.layout.manifest.total()));
  m.params = detail::le_bytes_to_floats(payload);
  return m;
}

inline void save_train_state(const TrainState<float>& st, const DenoiserModel<float>& m, const std::string& path) {
  std::ostringstream rng;
  st.rng.save(rng);
  std::ostringstream lr, avg;
  lr << std::setprecision(17) << st.lr;
  avg << std::setprecision(17) << st.avg_sce << ' ' << st.avg_iou;
  std::string payload = detail::floats_to_le_bytes(st.m.data(), st.m.size());
  payload += detail::floats_to_le_bytes(st.v.data(), st.v.size());
  detail::write_framed(path, "scenediff-trainstate", m.config, m.manifest(),
                       {"step " + std::to_string(st.step), "lr " + lr.str(), "averages " + avg.str(),
                        "rng " + rng.str()},
                       payload);
}

inline TrainState<float> load_train_state(const std::string& path, const DenoiserModel<float>& m) {
  auto [h, payload] = detail::read_framed(path, "scenediff-trainstate");
  if (!(h.config == m.config)) throw CheckpointError("training state belongs to a different model config");
  const std::size_t n = m.params.size();
  if (h.payload_floats != 2 * n) throw CheckpointError("training state payload size mismatch");
  TrainState<float> st;
  const auto all = detail::le_bytes_to_floats(payload);
  st.m.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  st.v.assign(all.begin() + static_cast<std::ptrdiff_t>(n), all.end());
  bool have_rng = false;
  for (const auto& line : h.extra) {
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "step") is >> st.step;
    else if (key == "lr") is >> st.lr;
    else if (key == "averages") is >> st.avg_sce >> st.avg_iou;
    else if (key == "rng") {
      st.rng.load(is);
      have_rng = static_cast<bool>(is);
    }
  }
  if (!have_rng) throw CheckpointError("training state lacks rng state");
  return st;
}

}  // namespace scenediff
