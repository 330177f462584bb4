#pragma once

// Noise-prediction network over object sets.
//
//   bbox | class | code slices -> three linear encoders (width/2 each) -> concat -> projection
//   sinusoidal step embedding -> 2-layer MLP -> per-block additive projection
//   depth x block:
//       h = h + SiLU(conv1d_k(h + step))           conv along the object axis
//       h = h + MHSA(LN(h))                         self-attention over the N objects
//       h = h + XAttn(LN(h), tokens)                text models only
//       h = h + Linear(input of block depth-1-i)    skip, decoder half only
//   LN -> SiLU -> three zero-initialized heads -> concat to N x D
//
// The object axis is the 1D "spatial" axis; no pooling along it.

#include "scenediff/diffusion.hpp"
#include "scenediff/nn_layers.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace scenediff {

struct DenoiserConfig {
  int N = 13;
  int L = 8;
  int F = 8;
  int width = 64;
  int depth = 4;
  int heads = 4;
  int kernel = 3;
  int time_dim = 128;
  int vocab = 0;  ///< 0 disables text conditioning
  int text_dim = 64;
  int max_tokens = 48;

  int D() const { return 8 + L + F; }
  bool text() const { return vocab > 0; }

  void validate() const {
    if (N < 1 || L < 2 || F < 0) throw ConfigError("denoiser needs N >= 1, L >= 2, F >= 0");
    if (width < 2 || width % 2) throw ConfigError("denoiser width must be even");
    if (heads < 1 || width % heads) throw ConfigError("width must be divisible by attention heads");
    if (depth < 1) throw ConfigError("denoiser depth must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
    if (time_dim < 2) throw ConfigError("time embedding dim must be >= 2");
    if (vocab < 0 || text_dim < 1 || max_tokens < 1) throw ConfigError("invalid text settings");
  }
  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

namespace detail {

struct LinearIdx {
  int w = -1, b = -1;
};
struct NormIdx {
  int g = -1, b = -1;
};
struct BlockIdx {
  LinearIdx step, conv;
  NormIdx ln1;
  LinearIdx q, k, v, o;
  NormIdx ln2;
  LinearIdx xq, xk, xv, xo;
  LinearIdx skip;
  int skip_source = -1;
};

struct Layout {
  nn::Manifest manifest;
  LinearIdx enc_bbox, enc_cls, enc_code, enc_proj;
  LinearIdx time1, time2;
  std::vector<BlockIdx> blocks;
  int token_table = -1;
  NormIdx out_ln;
  LinearIdx head_bbox, head_cls, head_code;
};

inline LinearIdx add_linear(nn::Manifest& m, const std::string& name, int in, int out) {
  return {m.add(name + ".weight", in, out), m.add(name + ".bias", 1, out)};
}
inline NormIdx add_norm(nn::Manifest& m, const std::string& name, int width) {
  return {m.add(name + ".gain", 1, width), m.add(name + ".bias", 1, width)};
}

inline Layout build_layout(const DenoiserConfig& c) {
  c.validate();
  Layout l;
  auto& m = l.manifest;
  const int half = c.width / 2;
  l.enc_bbox = add_linear(m, "encode.bbox", 8, half);
  l.enc_cls = add_linear(m, "encode.class", c.L, half);
  if (c.F > 0) l.enc_code = add_linear(m, "encode.code", c.F, half);
  l.enc_proj = add_linear(m, "encode.proj", half * (c.F > 0 ? 3 : 2), c.width);
  l.time1 = add_linear(m, "time.fc1", c.time_dim, c.width);
  l.time2 = add_linear(m, "time.fc2", c.width, c.width);
  if (c.text()) l.token_table = m.add("text.token_embedding", c.vocab, c.text_dim);
  for (int i = 0; i < c.depth; ++i) {
    const std::string p = "block" + std::to_string(i);
    BlockIdx b;
    b.step = add_linear(m, p + ".step", c.width, c.width);
    b.conv = add_linear(m, p + ".conv", c.kernel * c.width, c.width);
    b.ln1 = add_norm(m, p + ".ln1", c.width);
    b.q = add_linear(m, p + ".attn.q", c.width, c.width);
    b.k = add_linear(m, p + ".attn.k", c.width, c.width);
    b.v = add_linear(m, p + ".attn.v", c.width, c.width);
    b.o = add_linear(m, p + ".attn.out", c.width, c.width);
    if (c.text()) {
      b.ln2 = add_norm(m, p + ".ln2", c.width);
      b.xq = add_linear(m, p + ".xattn.q", c.width, c.width);
      b.xk = add_linear(m, p + ".xattn.k", c.text_dim, c.width);
      b.xv = add_linear(m, p + ".xattn.v", c.text_dim, c.width);
      b.xo = add_linear(m, p + ".xattn.out", c.width, c.width);
    }
    const int src = c.depth - 1 - i;
    if (src < c.depth / 2) {
      b.skip = add_linear(m, p + ".skip", c.width, c.width);
      b.skip_source = src;
    }
    l.blocks.push_back(b);
  }
  l.out_ln = add_norm(m, "out.ln", c.width);
  l.head_bbox = add_linear(m, "head.bbox", c.width, 8);
  l.head_cls = add_linear(m, "head.class", c.width, c.L);
  if (c.F > 0) l.head_code = add_linear(m, "head.code", c.width, c.F);
  return l;
}

}  // namespace detail

/// Parameter store plus its named layout.
template <typename S>
struct DenoiserModel {
  DenoiserConfig config;
  detail::Layout layout;
  std::vector<S> params;

  const nn::Manifest& manifest() const { return layout.manifest; }
  std::size_t parameter_count() const { return params.size(); }

  nn::CMapMat<S> p(int idx) const { return nn::view(params, layout.manifest[idx]); }

  /// Same network at another precision.
  template <typename T>
  DenoiserModel<T> cast() const {
    DenoiserModel<T> m{config, layout, {}};
    m.params.assign(params.begin(), params.end());
    return m;
  }

  Matrix predict_noise(const Matrix& x, int t, std::span<const ConditionSpec> conds) const;
};

/// Fan-in scaled uniform weights, zero biases, unit norm gains, zero prediction heads.
template <typename S>
DenoiserModel<S> init_model(const DenoiserConfig& config, Rng& rng) {
  DenoiserModel<S> m{config, detail::build_layout(config), {}};
  m.params.assign(m.layout.manifest.total(), S(0));
  const auto& L = m.layout;
  std::vector<bool> zero(L.manifest.entries().size(), false);
  for (const auto& h : {L.head_bbox, L.head_cls, L.head_code})
    if (h.w >= 0) zero[static_cast<std::size_t>(h.w)] = true;
  for (std::size_t i = 0; i < L.manifest.entries().size(); ++i) {
    const auto& e = L.manifest.entries()[i];
    auto v = nn::view(m.params, e);
    const bool is_bias = e.name.ends_with(".bias");
    if (e.name.ends_with(".gain")) {
      v.setOnes();
    } else if (static_cast<int>(i) == L.token_table) {
      for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = static_cast<S>(rng.gaussian());
    } else if (!is_bias && !zero[i]) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(e.rows));
      for (Eigen::Index r = 0; r < v.rows(); ++r)
        for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = static_cast<S>(rng.uniform(-bound, bound));
    }
  }
  return m;
}

/// A stack of B scenes (N rows each), one diffusion step per scene and optional token lists.
template <typename S>
struct DenoiserInput {
  MatrixX<S> x;
  std::vector<int> steps;
  std::vector<std::vector<int>> tokens;  ///< empty, or one list per scene
};

template <typename S>
struct DenoiserCache {
  struct Block {
    MatrixX<S> in, a, cols, conv, h1, n1, q, k, v, att, h2, n2, xq, xk, xv, xatt, h3;
    nn::LayerNormCache<S> ln1, ln2;
    nn::AttentionCache<S> self_attn, cross_attn;
  };
  DenoiserInput<S> input;
  MatrixX<S> xb, xc, xf, enc, h0;
  MatrixX<S> temb_in, t1, t1a, temb, temb_act;
  std::vector<int> token_ids;  ///< flattened token lists
  std::vector<nn::GroupSpan> self_groups, cross_groups;
  MatrixX<S> tokens;
  std::vector<Block> blocks;
  MatrixX<S> hout, oln, oact;
  nn::LayerNormCache<S> out_ln;
};

namespace detail {

template <typename S>
MatrixX<S> broadcast_rows(const MatrixX<S>& per_scene, int group) {
  MatrixX<S> out(per_scene.rows() * group, per_scene.cols());
  for (Eigen::Index b = 0; b < per_scene.rows(); ++b)
    out.middleRows(b * group, group).rowwise() = per_scene.row(b);
  return out;
}

template <typename S>
MatrixX<S> sum_groups(const MatrixX<S>& rows, int group) {
  MatrixX<S> out(rows.rows() / group, rows.cols());
  for (Eigen::Index b = 0; b < out.rows(); ++b) out.row(b) = rows.middleRows(b * group, group).colwise().sum();
  return out;
}

}  // namespace detail

template <typename S>
MatrixX<S> forward(const DenoiserModel<S>& m, const DenoiserInput<S>& in, DenoiserCache<S>* cache_out = nullptr) {
  using nn::linear;
  const auto& c = m.config;
  const auto& L = m.layout;
  const int B = static_cast<int>(in.steps.size());
  const int N = c.N;
  if (in.x.rows() != Eigen::Index(B) * N || in.x.cols() != c.D())
    throw RangeError("denoiser input shape mismatch");
  const bool use_text = !in.tokens.empty();
  if (use_text && !c.text()) throw ConfigError("token input given to a model without text support");
  if (use_text && static_cast<int>(in.tokens.size()) != B) throw RangeError("one token list per scene required");

  DenoiserCache<S> local;
  DenoiserCache<S>& k = cache_out ? *cache_out : local;
  k.input = in;
  auto P = [&](int idx) { return m.p(idx); };
  auto lin = [&](const MatrixX<S>& x, detail::LinearIdx li) { return linear<S>(x, P(li.w), P(li.b)); };

  // Encoders.
  k.xb = in.x.leftCols(8);
  k.xc = in.x.middleCols(8, c.L);
  MatrixX<S> enc(in.x.rows(), (c.width / 2) * (c.F > 0 ? 3 : 2));
  enc.leftCols(c.width / 2) = lin(k.xb, L.enc_bbox);
  enc.middleCols(c.width / 2, c.width / 2) = lin(k.xc, L.enc_cls);
  if (c.F > 0) {
    k.xf = in.x.rightCols(c.F);
    enc.rightCols(c.width / 2) = lin(k.xf, L.enc_code);
  }
  k.enc = std::move(enc);
  k.h0 = lin(k.enc, L.enc_proj);

  // Step embedding.
  k.temb_in.resize(B, c.time_dim);
  for (int b = 0; b < B; ++b) k.temb_in.row(b) = nn::timestep_embedding<S>(in.steps[b], c.time_dim).transpose();
  k.t1 = lin(k.temb_in, L.time1);
  k.t1a = nn::silu(k.t1);
  k.temb = lin(k.t1a, L.time2);
  k.temb_act = nn::silu(k.temb);

  k.self_groups.clear();
  for (int b = 0; b < B; ++b) k.self_groups.push_back({Eigen::Index(b) * N, N, Eigen::Index(b) * N, N});
  k.cross_groups.clear();
  k.token_ids.clear();
  if (use_text) {
    for (int b = 0; b < B; ++b) {
      const auto& toks = in.tokens[static_cast<std::size_t>(b)];
      if (static_cast<int>(toks.size()) > c.max_tokens) throw RangeError("token sequence longer than max_tokens");
      k.cross_groups.push_back({Eigen::Index(b) * N, N, static_cast<Eigen::Index>(k.token_ids.size()),
                                static_cast<Eigen::Index>(toks.size())});
      for (int id : toks) {
        if (id < 0 || id >= c.vocab) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
        k.token_ids.push_back(id);
      }
    }
    const auto table = P(L.token_table);
    k.tokens.resize(static_cast<Eigen::Index>(k.token_ids.size()), c.text_dim);
    for (std::size_t i = 0; i < k.token_ids.size(); ++i) k.tokens.row(static_cast<Eigen::Index>(i)) = table.row(k.token_ids[i]);
  }

  MatrixX<S> h = k.h0;
  k.blocks.assign(static_cast<std::size_t>(c.depth), {});
  for (int i = 0; i < c.depth; ++i) {
    const auto& bi = L.blocks[static_cast<std::size_t>(i)];
    auto& bc = k.blocks[static_cast<std::size_t>(i)];
    bc.in = h;
    bc.a = h + detail::broadcast_rows<S>(lin(k.temb_act, bi.step), N);
    bc.cols = nn::im2col<S>(bc.a, N, c.kernel);
    bc.conv = lin(bc.cols, bi.conv);
    bc.h1 = bc.in + nn::silu(bc.conv);
    bc.n1 = nn::layer_norm<S>(bc.h1, P(bi.ln1.g), P(bi.ln1.b), bc.ln1);
    bc.q = lin(bc.n1, bi.q);
    bc.k = lin(bc.n1, bi.k);
    bc.v = lin(bc.n1, bi.v);
    bc.att = nn::attention<S>(bc.q, bc.k, bc.v, c.heads, k.self_groups, bc.self_attn);
    bc.h2 = bc.h1 + lin(bc.att, bi.o);
    bc.h3 = bc.h2;
    if (use_text) {
      bc.n2 = nn::layer_norm<S>(bc.h2, P(bi.ln2.g), P(bi.ln2.b), bc.ln2);
      bc.xq = lin(bc.n2, bi.xq);
      bc.xk = lin(k.tokens, bi.xk);
      bc.xv = lin(k.tokens, bi.xv);
      bc.xatt = nn::attention<S>(bc.xq, bc.xk, bc.xv, c.heads, k.cross_groups, bc.cross_attn);
      bc.h3 += lin(bc.xatt, bi.xo);
    }
    h = bc.h3;
    if (bi.skip_source >= 0) h += lin(k.blocks[static_cast<std::size_t>(bi.skip_source)].in, bi.skip);
  }
  k.hout = h;
  k.oln = nn::layer_norm<S>(k.hout, P(L.out_ln.g), P(L.out_ln.b), k.out_ln);
  k.oact = nn::silu(k.oln);
  MatrixX<S> out(in.x.rows(), c.D());
  out.leftCols(8) = lin(k.oact, L.head_bbox);
  out.middleCols(8, c.L) = lin(k.oact, L.head_cls);
  if (c.F > 0) out.rightCols(c.F) = lin(k.oact, L.head_code);
  return out;
}

template <typename S>
struct DenoiserGradients {
  std::vector<S> params;
  MatrixX<S> input;
};

/// Reverse pass for a cached forward; returns d(sum out .* dout) w.r.t. params and input.
template <typename S>
DenoiserGradients<S> backward(const DenoiserModel<S>& m, const DenoiserCache<S>& k, const MatrixX<S>& dout) {
  const auto& c = m.config;
  const auto& L = m.layout;
  const int N = c.N;
  DenoiserGradients<S> g;
  g.params.assign(m.params.size(), S(0));
  auto P = [&](int idx) { return m.p(idx); };
  auto G = [&](int idx) { return nn::view(g.params, m.layout.manifest[idx]); };
  auto lin_back = [&](const MatrixX<S>& x, detail::LinearIdx li, const MatrixX<S>& dy) {
    return nn::linear_backward<S>(x, P(li.w), dy, G(li.w), G(li.b));
  };

  MatrixX<S> doact = lin_back(k.oact, L.head_bbox, dout.leftCols(8));
  doact += lin_back(k.oact, L.head_cls, dout.middleCols(8, c.L));
  if (c.F > 0) doact += lin_back(k.oact, L.head_code, dout.rightCols(c.F));
  const MatrixX<S> doln = nn::silu_backward<S>(k.oln, doact);
  MatrixX<S> dh = nn::layer_norm_backward<S>(k.out_ln, P(L.out_ln.g), doln, G(L.out_ln.g), G(L.out_ln.b));

  const bool use_text = !k.input.tokens.empty();
  MatrixX<S> dtemb_act = MatrixX<S>::Zero(k.temb_act.rows(), k.temb_act.cols());
  MatrixX<S> dtokens;
  if (use_text) dtokens = MatrixX<S>::Zero(k.tokens.rows(), k.tokens.cols());
  std::vector<MatrixX<S>> dskip(static_cast<std::size_t>(c.depth));

  for (int i = c.depth - 1; i >= 0; --i) {
    const auto& bi = L.blocks[static_cast<std::size_t>(i)];
    const auto& bc = k.blocks[static_cast<std::size_t>(i)];
    if (bi.skip_source >= 0) {
      dskip[static_cast<std::size_t>(bi.skip_source)] =
          lin_back(k.blocks[static_cast<std::size_t>(bi.skip_source)].in, bi.skip, dh);
    }
    // dh is the gradient w.r.t. h3.
    MatrixX<S> dh2 = dh;
    if (use_text) {
      const MatrixX<S> dxatt = lin_back(bc.xatt, bi.xo, dh);
      MatrixX<S> dxq, dxk, dxv;
      nn::attention_backward<S>(bc.xq, bc.xk, bc.xv, c.heads, k.cross_groups, bc.cross_attn, dxatt, dxq, dxk, dxv);
      dtokens += lin_back(k.tokens, bi.xk, dxk);
      dtokens += lin_back(k.tokens, bi.xv, dxv);
      const MatrixX<S> dn2 = lin_back(bc.n2, bi.xq, dxq);
      dh2 += nn::layer_norm_backward<S>(bc.ln2, P(bi.ln2.g), dn2, G(bi.ln2.g), G(bi.ln2.b));
    }
    const MatrixX<S> datt = lin_back(bc.att, bi.o, dh2);
    MatrixX<S> dq, dk, dv;
    nn::attention_backward<S>(bc.q, bc.k, bc.v, c.heads, k.self_groups, bc.self_attn, datt, dq, dk, dv);
    MatrixX<S> dn1 = lin_back(bc.n1, bi.q, dq);
    dn1 += lin_back(bc.n1, bi.k, dk);
    dn1 += lin_back(bc.n1, bi.v, dv);
    const MatrixX<S> dh1 = dh2 + nn::layer_norm_backward<S>(bc.ln1, P(bi.ln1.g), dn1, G(bi.ln1.g), G(bi.ln1.b));
    const MatrixX<S> dconv = nn::silu_backward<S>(bc.conv, dh1);
    const MatrixX<S> dcols = lin_back(bc.cols, bi.conv, dconv);
    const MatrixX<S> da = nn::col2im<S>(dcols, N, c.kernel, bc.a.cols());
    dtemb_act += lin_back(k.temb_act, bi.step, detail::sum_groups<S>(da, N));
    dh = dh1 + da;
    if (dskip[static_cast<std::size_t>(i)].size() > 0) dh += dskip[static_cast<std::size_t>(i)];
  }

  const MatrixX<S> dtemb = nn::silu_backward<S>(k.temb, dtemb_act);
  const MatrixX<S> dt1a = lin_back(k.t1a, L.time2, dtemb);
  const MatrixX<S> dt1 = nn::silu_backward<S>(k.t1, dt1a);
  lin_back(k.temb_in, L.time1, dt1);

  if (use_text) {
    auto dtable = G(L.token_table);
    for (std::size_t i = 0; i < k.token_ids.size(); ++i)
      dtable.row(k.token_ids[i]) += dtokens.row(static_cast<Eigen::Index>(i));
  }

  const MatrixX<S> denc = lin_back(k.enc, L.enc_proj, dh);
  const int half = c.width / 2;
  g.input.resize(k.input.x.rows(), c.D());
  g.input.leftCols(8) = lin_back(k.xb, L.enc_bbox, denc.leftCols(half));
  g.input.middleCols(8, c.L) = lin_back(k.xc, L.enc_cls, denc.middleCols(half, half));
  if (c.F > 0) g.input.rightCols(c.F) = lin_back(k.xf, L.enc_code, denc.rightCols(half));
  return g;
}

/// Single-scene convenience wrapper.
template <typename S>
MatrixX<S> forward(const DenoiserModel<S>& m, const MatrixX<S>& x_t, int t, const ConditionSpec& cond) {
  DenoiserInput<S> in{x_t, {t}, {}};
  if (cond.mode == ConditionMode::text || !cond.tokens.empty()) in.tokens.push_back(cond.tokens);
  return forward(m, in);
}

template <typename S>
Matrix DenoiserModel<S>::predict_noise(const Matrix& x, int t, std::span<const ConditionSpec> conds) const {
  DenoiserInput<S> in;
  in.x = x.cast<S>();
  in.steps.assign(conds.size(), t);
  bool any_text = false;
  for (const auto& cs : conds) any_text |= cs.mode == ConditionMode::text || !cs.tokens.empty();
  if (any_text)
    for (const auto& cs : conds) in.tokens.push_back(cs.tokens);
  return forward(*this, in).template cast<double>();
}

}  // namespace scenediff
