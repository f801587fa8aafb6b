#pragma once

#include <memory>
#include <string>
#include <vector>

#include "atlas/graph.hpp"
#include "atlas/grid.hpp"

namespace atlas {

// ---- configuration ----

enum class AttentionKind { kGlobal, kLocal3x3 };

struct DiTBlockConfig {
  int embed_dim = 64;
  int num_heads = 4;
  int mlp_ratio = 4;
  AttentionKind attention = AttentionKind::kGlobal;
};

/// Global-attention predictive network over the latent grid.
struct PredictiveNetConfig {
  int channels = 4;        // latent channels C
  int lat_rows = 19;       // latent grid
  int lat_cols = 32;
  int state_embed = 48;    // e0, noisy-state stream
  int history_embed = 16;  // e1, (z0, z-1) stream
  int depth = 3;
  int num_heads = 4;
  int mlp_ratio = 4;
  int patch_h = 2;
  int patch_w = 2;
  int noise_cond_dim = 0;  // p; 0 for SI/EDM, >0 for the CRPS variant

  int embed_dim() const { return state_embed + history_embed; }
};

/// Local-attention decoder from (latent residual, full state) to the
/// full-resolution residual.
struct DecoderNetConfig {
  int channels = 4;     // predicted channels C
  int aux_channels = 2; // extra conditioning fields appended to x0
  int full_rows = 73;
  int full_cols = 128;
  int hires_embed = 48;    // e0
  int residual_embed = 16; // e1
  int depth = 3;
  int num_heads = 4;
  int mlp_ratio = 4;
  int hires_patch = 4;     // 4x4 strided convolution
  // residual stream uses a 1x1 non-strided convolution on the latent grid

  int embed_dim() const { return hires_embed + residual_embed; }
  int lat_rows() const { return (full_rows - 1) / hires_patch + 1; }
  int lat_cols() const { return full_cols / hires_patch; }
};

// ---- token-grid geometry ----

/// Latitude padding to make `rows` divisible by the stride: pole rows are
/// replicated, the excess split top-heavy; columns must divide exactly.
struct TokenGrid {
  int rows = 0, cols = 0;     // token grid
  int pad_top = 0, pad_bottom = 0;
  int padded_rows = 0;
};

inline TokenGrid token_grid(int h, int w, int ph, int pw) {
  ATLAS_REQUIRE(w % pw == 0, "columns " << w << " not divisible by patch " << pw);
  const int pad = (ph - h % ph) % ph;
  TokenGrid t;
  t.pad_top = (pad + 1) / 2;
  t.pad_bottom = pad / 2;
  t.padded_rows = h + pad;
  t.rows = t.padded_rows / ph;
  t.cols = w / pw;
  return t;
}

/// Index map for gather_cols replicating pole rows: [C,H,W] -> [C,Hp,W].
inline std::shared_ptr<const std::vector<int64_t>> row_pad_index(int C, int H, int W,
                                                                 const TokenGrid& t) {
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(int64_t(C) * t.padded_rows * W));
  int64_t q = 0;
  for (int c = 0; c < C; ++c)
    for (int rp = 0; rp < t.padded_rows; ++rp) {
      int r = rp - t.pad_top;
      r = std::max(0, std::min(H - 1, r));
      for (int j = 0; j < W; ++j, ++q)
        (*idx)[size_t(q)] = (int64_t(c) * H + r) * W + j;
    }
  return idx;
}

/// Index map inverting the final per-token projection: tokens
/// [N, ph*pw*C] (token-major, channel-major within token) -> field [C,H,W],
/// cropping the replicated pad rows.
inline std::shared_ptr<const std::vector<int64_t>> unpatch_index(int C, int H, int W,
                                                                 int ph, int pw,
                                                                 const TokenGrid& t) {
  auto idx = std::make_shared<std::vector<int64_t>>(size_t(int64_t(C) * H * W));
  const int64_t token_len = int64_t(ph) * pw * C;
  int64_t q = 0;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H; ++i) {
      const int ip = i + t.pad_top;
      const int ty = ip / ph, dy = ip % ph;
      for (int j = 0; j < W; ++j, ++q) {
        const int tx = j / pw, dx = j % pw;
        const int64_t token = int64_t(ty) * t.cols + tx;
        (*idx)[size_t(q)] = token * token_len + (int64_t(c) * ph + dy) * pw + dx;
      }
    }
  return idx;
}

/// 3x3 neighbor table on a token grid under the spherical topology
/// (longitude wrap, cross-pole 180-degree shift), row-major [N, 9].
inline std::shared_ptr<const std::vector<int>> local3x3_neighbors(int rows, int cols) {
  ATLAS_REQUIRE(cols % 2 == 0, "local attention needs an even token-column count");
  auto nb = std::make_shared<std::vector<int>>(size_t(int64_t(rows) * cols * 9));
  int64_t q = 0;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc, ++q)
          (*nb)[size_t(q)] =
              int(spherical_halo_source(r + 1 + dr, c + 1 + dc, rows, cols, 1));
  return nb;
}

// ---- deterministic encodings ----

/// Standard 2-D sine-cosine positional table of shape (rows*cols, e):
/// first half encodes the row coordinate, second half the column, each as
/// interleaved (sin, cos) pairs over a geometric frequency ladder.
template <class T>
Tensor<T> posenc_sincos(int rows, int cols, int e) {
  ATLAS_REQUIRE(e % 4 == 0, "positional encoding dim must be divisible by 4");
  const int quarter = e / 4;
  Tensor<T> pe(Shape{int64_t(rows) * cols, e});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      T* row = pe.data() + (int64_t(r) * cols + c) * e;
      for (int k = 0; k < quarter; ++k) {
        const double w = std::exp(-std::log(10000.0) * double(k) / double(quarter));
        row[2 * k] = T(std::sin(r * w));
        row[2 * k + 1] = T(std::cos(r * w));
        row[e / 2 + 2 * k] = T(std::sin(c * w));
        row[e / 2 + 2 * k + 1] = T(std::cos(c * w));
      }
    }
  return pe;
}

/// Sinusoidal features of a scalar condition (time or noise level), one row
/// per batch element. Values are pre-scaled by 100 so the unit interval spans
/// a useful range of the frequency ladder.
template <class T>
Tensor<T> sinusoidal_features(const std::vector<double>& values, int dim) {
  ATLAS_REQUIRE(dim % 2 == 0, "feature dim must be even");
  const int half = dim / 2;
  Tensor<T> out(Shape{int64_t(values.size()), dim});
  for (size_t b = 0; b < values.size(); ++b) {
    const double v = values[b] * 100.0;
    for (int k = 0; k < half; ++k) {
      const double w = std::exp(-std::log(10000.0) * double(k) / double(half));
      out.v[b * size_t(dim) + size_t(2 * k)] = T(std::sin(v * w));
      out.v[b * size_t(dim) + size_t(2 * k + 1)] = T(std::cos(v * w));
    }
  }
  return out;
}

// ---- parameter shapes, init, describe ----

struct ParamSpec {
  std::string name;
  Shape shape;
  enum Init { kZero, kFanIn, kStd002 } init;
};

inline void dit_block_param_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                                  int e, int mlp_ratio) {
  out.push_back({prefix + ".mod.w", {e, 6 * e}, ParamSpec::kZero});
  out.push_back({prefix + ".mod.b", {6 * e}, ParamSpec::kZero});
  out.push_back({prefix + ".attn.wqkv", {e, 3 * e}, ParamSpec::kStd002});
  out.push_back({prefix + ".attn.bqkv", {3 * e}, ParamSpec::kZero});
  out.push_back({prefix + ".attn.wo", {e, e}, ParamSpec::kStd002});
  out.push_back({prefix + ".attn.bo", {e}, ParamSpec::kZero});
  out.push_back({prefix + ".mlp.w1", {e, mlp_ratio * e}, ParamSpec::kStd002});
  out.push_back({prefix + ".mlp.b1", {mlp_ratio * e}, ParamSpec::kZero});
  out.push_back({prefix + ".mlp.w2", {mlp_ratio * e, e}, ParamSpec::kStd002});
  out.push_back({prefix + ".mlp.b2", {e}, ParamSpec::kZero});
}

inline void cond_mlp_param_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                                 int in_dim, int e) {
  out.push_back({prefix + ".w1", {in_dim, e}, ParamSpec::kStd002});
  out.push_back({prefix + ".b1", {e}, ParamSpec::kZero});
  out.push_back({prefix + ".w2", {e, e}, ParamSpec::kStd002});
  out.push_back({prefix + ".b2", {e}, ParamSpec::kZero});
}

inline std::vector<ParamSpec> predictive_param_specs(const PredictiveNetConfig& c) {
  std::vector<ParamSpec> out;
  const int e = c.embed_dim();
  const int pk = c.patch_h * c.patch_w;
  out.push_back({"pred.embed_state.w", {c.state_embed, c.channels * pk}, ParamSpec::kFanIn});
  out.push_back({"pred.embed_state.b", {c.state_embed}, ParamSpec::kZero});
  out.push_back({"pred.embed_hist.w", {c.history_embed, 2 * c.channels * pk}, ParamSpec::kFanIn});
  out.push_back({"pred.embed_hist.b", {c.history_embed}, ParamSpec::kZero});
  cond_mlp_param_specs(out, "pred.tmlp", e, e);
  if (c.noise_cond_dim > 0) cond_mlp_param_specs(out, "pred.xmlp", c.noise_cond_dim, e);
  for (int i = 0; i < c.depth; ++i)
    dit_block_param_specs(out, "pred.block" + std::to_string(i), e, c.mlp_ratio);
  out.push_back({"pred.final.w", {e, pk * c.channels}, ParamSpec::kZero});
  out.push_back({"pred.final.b", {pk * c.channels}, ParamSpec::kZero});
  return out;
}

inline std::vector<ParamSpec> decoder_param_specs(const DecoderNetConfig& c) {
  std::vector<ParamSpec> out;
  const int e = c.embed_dim();
  const int pk = c.hires_patch * c.hires_patch;
  out.push_back({"dec.embed_hires.w",
                 {c.hires_embed, (c.channels + c.aux_channels) * pk},
                 ParamSpec::kFanIn});
  out.push_back({"dec.embed_hires.b", {c.hires_embed}, ParamSpec::kZero});
  out.push_back({"dec.embed_res.w", {c.residual_embed, c.channels}, ParamSpec::kFanIn});
  out.push_back({"dec.embed_res.b", {c.residual_embed}, ParamSpec::kZero});
  cond_mlp_param_specs(out, "dec.tmlp", e, e);
  for (int i = 0; i < c.depth; ++i)
    dit_block_param_specs(out, "dec.block" + std::to_string(i), e, c.mlp_ratio);
  out.push_back({"dec.final.w", {e, pk * c.channels}, ParamSpec::kZero});
  out.push_back({"dec.final.b", {pk * c.channels}, ParamSpec::kZero});
  return out;
}

inline int64_t param_count(const std::vector<ParamSpec>& specs) {
  int64_t n = 0;
  for (const auto& s : specs) n += shape_numel(s.shape);
  return n;
}

template <class T>
Params<T> init_params(const std::vector<ParamSpec>& specs, uint64_t seed) {
  Params<T> P;
  for (const auto& s : specs) {
    // per-name substream: init is independent of enumeration order
    uint64_t h = seed;
    for (char ch : s.name) h = h * 1099511628211ULL + uint64_t(ch);
    Rng rng(h);
    Tensor<T> t(s.shape);
    switch (s.init) {
      case ParamSpec::kZero:
        break;
      case ParamSpec::kFanIn: {
        const double std = 1.0 / std::sqrt(double(s.shape.back()));
        for (auto& v : t.v) v = T(rng.normal() * std);
        break;
      }
      case ParamSpec::kStd002:
        for (auto& v : t.v) v = T(rng.normal() * 0.02);
        break;
    }
    P.add(s.name, std::move(t));
  }
  return P;
}

// ---- forward passes ----

namespace detail {

/// Fused adaptive-modulation DiT block (attention + MLP sublayers).
template <class T>
typename Graph<T>::Id dit_block(Graph<T>& g, const Params<T>& P, const std::string& prefix,
                                typename Graph<T>::Id x, typename Graph<T>::Id cond,
                                const DiTBlockConfig& cfg,
                                std::shared_ptr<const std::vector<int>> neighbors) {
  using Id = typename Graph<T>::Id;
  const int e = cfg.embed_dim;
  Id mod = g.linear(g.silu(cond), g.param(prefix + ".mod.w", P.at(prefix + ".mod.w")),
                    g.param(prefix + ".mod.b", P.at(prefix + ".mod.b")));
  Id sh1 = g.slice_last(mod, 0, e);
  Id sc1 = g.slice_last(mod, e, e);
  Id gt1 = g.slice_last(mod, 2 * e, e);
  Id sh2 = g.slice_last(mod, 3 * e, e);
  Id sc2 = g.slice_last(mod, 4 * e, e);
  Id gt2 = g.slice_last(mod, 5 * e, e);

  Id h = g.modulate(g.layer_norm(x), sc1, sh1);
  Id qkv = g.linear(h, g.param(prefix + ".attn.wqkv", P.at(prefix + ".attn.wqkv")),
                    g.param(prefix + ".attn.bqkv", P.at(prefix + ".attn.bqkv")));
  Id q = g.slice_last(qkv, 0, e);
  Id k = g.slice_last(qkv, e, e);
  Id v = g.slice_last(qkv, 2 * e, e);
  Id att = g.attention(q, k, v, cfg.num_heads, neighbors, neighbors ? 9 : 0);
  att = g.linear(att, g.param(prefix + ".attn.wo", P.at(prefix + ".attn.wo")),
                 g.param(prefix + ".attn.bo", P.at(prefix + ".attn.bo")));
  x = g.gate_add(x, gt1, att);

  Id h2 = g.modulate(g.layer_norm(x), sc2, sh2);
  Id m1 = g.gelu(g.linear(h2, g.param(prefix + ".mlp.w1", P.at(prefix + ".mlp.w1")),
                          g.param(prefix + ".mlp.b1", P.at(prefix + ".mlp.b1"))));
  Id m2 = g.linear(m1, g.param(prefix + ".mlp.w2", P.at(prefix + ".mlp.w2")),
                   g.param(prefix + ".mlp.b2", P.at(prefix + ".mlp.b2")));
  return g.gate_add(x, gt2, m2);
}

template <class T>
typename Graph<T>::Id cond_mlp(Graph<T>& g, const Params<T>& P, const std::string& prefix,
                               typename Graph<T>::Id feat) {
  auto h = g.silu(g.linear(feat, g.param(prefix + ".w1", P.at(prefix + ".w1")),
                           g.param(prefix + ".b1", P.at(prefix + ".b1"))));
  return g.linear(h, g.param(prefix + ".w2", P.at(prefix + ".w2")),
                  g.param(prefix + ".b2", P.at(prefix + ".b2")));
}

}  // namespace detail

/// Compiled predictive network: all index maps and tables precomputed.
template <class T>
class PredictiveNet {
 public:
  explicit PredictiveNet(PredictiveNetConfig cfg) : cfg_(cfg) {
    tg_ = token_grid(cfg.lat_rows, cfg.lat_cols, cfg.patch_h, cfg.patch_w);
    pad_state_ = row_pad_index(cfg.channels, cfg.lat_rows, cfg.lat_cols, tg_);
    pad_hist_ = row_pad_index(2 * cfg.channels, cfg.lat_rows, cfg.lat_cols, tg_);
    unpatch_ = unpatch_index(cfg.channels, cfg.lat_rows, cfg.lat_cols, cfg.patch_h,
                             cfg.patch_w, tg_);
    posenc_ = posenc_sincos<T>(tg_.rows, tg_.cols, cfg.embed_dim());
  }

  const PredictiveNetConfig& config() const { return cfg_; }
  const TokenGrid& tokens() const { return tg_; }

  /// noisy [B,C,h,w], hist [B,2C,h,w], tfeat [B,e] sinusoidal features,
  /// xi [B,p] or -1. Returns [B,C,h,w].
  typename Graph<T>::Id forward(Graph<T>& g, const Params<T>& P,
                                typename Graph<T>::Id noisy, typename Graph<T>::Id hist,
                                typename Graph<T>::Id tfeat,
                                typename Graph<T>::Id xi = -1) const {
    using Id = typename Graph<T>::Id;
    const auto& c = cfg_;
    const int e = c.embed_dim();
    ATLAS_REQUIRE(g.val(noisy).shape ==
                      Shape({g.val(noisy).dim(0), c.channels, c.lat_rows, c.lat_cols}),
                  "predictive_forward: noisy shape " << shape_str(g.val(noisy).shape));
    ATLAS_REQUIRE(g.val(hist).dim(1) == 2 * c.channels, "history must stack two states");
    Id sp = g.gather_cols(noisy, pad_state_, {c.channels, tg_.padded_rows, c.lat_cols});
    Id hp = g.gather_cols(hist, pad_hist_, {2 * c.channels, tg_.padded_rows, c.lat_cols});
    Id ts = g.patch_conv(sp, g.param("pred.embed_state.w", P.at("pred.embed_state.w")),
                         g.param("pred.embed_state.b", P.at("pred.embed_state.b")),
                         c.patch_h, c.patch_w, c.patch_h, c.patch_w);
    Id th = g.patch_conv(hp, g.param("pred.embed_hist.w", P.at("pred.embed_hist.w")),
                         g.param("pred.embed_hist.b", P.at("pred.embed_hist.b")),
                         c.patch_h, c.patch_w, c.patch_h, c.patch_w);
    Id tok = g.add_bcast_const(g.concat_last(ts, th), posenc_);

    Id cond = detail::cond_mlp(g, P, "pred.tmlp", tfeat);
    if (c.noise_cond_dim > 0) {
      ATLAS_REQUIRE(xi >= 0, "CRPS-configured network requires a noise vector");
      cond = g.add(cond, detail::cond_mlp(g, P, "pred.xmlp", xi));
    }

    DiTBlockConfig bc{e, c.num_heads, c.mlp_ratio, AttentionKind::kGlobal};
    for (int i = 0; i < c.depth; ++i)
      tok = detail::dit_block(g, P, "pred.block" + std::to_string(i), tok, cond, bc, nullptr);

    Id out = g.linear(g.layer_norm(tok), g.param("pred.final.w", P.at("pred.final.w")),
                      g.param("pred.final.b", P.at("pred.final.b")));
    return g.gather_cols(out, unpatch_, {c.channels, c.lat_rows, c.lat_cols});
  }

 private:
  PredictiveNetConfig cfg_;
  TokenGrid tg_;
  std::shared_ptr<const std::vector<int64_t>> pad_state_, pad_hist_, unpatch_;
  Tensor<T> posenc_;
};

/// Compiled decoder network (two-stream patching, local attention, t = 1).
template <class T>
class DecoderNet {
 public:
  explicit DecoderNet(DecoderNetConfig cfg) : cfg_(cfg) {
    tg_ = token_grid(cfg.full_rows, cfg.full_cols, cfg.hires_patch, cfg.hires_patch);
    ATLAS_REQUIRE(tg_.rows == cfg.lat_rows() && tg_.cols == cfg.lat_cols(),
                  "decoder token grid must match the latent grid");
    pad_hires_ = row_pad_index(cfg.channels + cfg.aux_channels, cfg.full_rows,
                               cfg.full_cols, tg_);
    unpatch_ = unpatch_index(cfg.channels, cfg.full_rows, cfg.full_cols,
                             cfg.hires_patch, cfg.hires_patch, tg_);
    posenc_ = posenc_sincos<T>(tg_.rows, tg_.cols, cfg.embed_dim());
    neighbors_ = local3x3_neighbors(tg_.rows, tg_.cols);
    // decoder conditioning is pinned to t = 1
    tfeat1_ = sinusoidal_features<T>({1.0}, cfg.embed_dim());
  }

  const DecoderNetConfig& config() const { return cfg_; }
  const TokenGrid& tokens() const { return tg_; }

  /// res [B,C,hl,wl] latent residual, hires [B,C+aux,H,W]. Returns [B,C,H,W].
  /// The time conditioning is fixed to t = 1 internally.
  typename Graph<T>::Id forward(Graph<T>& g, const Params<T>& P,
                                typename Graph<T>::Id res,
                                typename Graph<T>::Id hires) const {
    using Id = typename Graph<T>::Id;
    const auto& c = cfg_;
    const int e = c.embed_dim();
    const int64_t B = g.val(res).dim(0);
    ATLAS_REQUIRE(g.val(res).shape == Shape({B, c.channels, tg_.rows, tg_.cols}),
                  "decoder_forward: residual grid mismatch "
                      << shape_str(g.val(res).shape));
    ATLAS_REQUIRE(
        g.val(hires).shape ==
            Shape({B, c.channels + c.aux_channels, c.full_rows, c.full_cols}),
        "decoder_forward: hires grid mismatch " << shape_str(g.val(hires).shape));
    Id hp = g.gather_cols(hires, pad_hires_,
                          {c.channels + c.aux_channels, tg_.padded_rows, c.full_cols});
    Id th = g.patch_conv(hp, g.param("dec.embed_hires.w", P.at("dec.embed_hires.w")),
                         g.param("dec.embed_hires.b", P.at("dec.embed_hires.b")),
                         c.hires_patch, c.hires_patch, c.hires_patch, c.hires_patch);
    Id tr = g.patch_conv(res, g.param("dec.embed_res.w", P.at("dec.embed_res.w")),
                         g.param("dec.embed_res.b", P.at("dec.embed_res.b")), 1, 1, 1, 1);
    Id tok = g.add_bcast_const(g.concat_last(th, tr), posenc_);

    // replicate the single t=1 feature row across the batch
    Tensor<T> tf(Shape{B, int64_t(e)});
    for (int64_t b = 0; b < B; ++b)
      for (int i = 0; i < e; ++i) tf.v[size_t(b * e + i)] = tfeat1_.v[size_t(i)];
    Id cond = detail::cond_mlp(g, P, "dec.tmlp", g.input(std::move(tf)));

    DiTBlockConfig bc{e, c.num_heads, c.mlp_ratio, AttentionKind::kLocal3x3};
    for (int i = 0; i < c.depth; ++i)
      tok = detail::dit_block(g, P, "dec.block" + std::to_string(i), tok, cond, bc, neighbors_);

    Id out = g.linear(g.layer_norm(tok), g.param("dec.final.w", P.at("dec.final.w")),
                      g.param("dec.final.b", P.at("dec.final.b")));
    return g.gather_cols(out, unpatch_, {c.channels, c.full_rows, c.full_cols});
  }

 private:
  DecoderNetConfig cfg_;
  TokenGrid tg_;
  std::shared_ptr<const std::vector<int64_t>> pad_hires_, unpatch_;
  std::shared_ptr<const std::vector<int>> neighbors_;
  Tensor<T> posenc_;
  Tensor<T> tfeat1_;
};

/// Human-readable architecture summary; parameter counts are computed from
/// the shape list without allocating, so billion-parameter configurations
/// are representable.
inline std::string describe(const PredictiveNetConfig& c) {
  const auto tg = token_grid(c.lat_rows, c.lat_cols, c.patch_h, c.patch_w);
  std::ostringstream os;
  os << "predictive: latent " << c.lat_rows << "x" << c.lat_cols << " -> tokens "
     << tg.rows << "x" << tg.cols << " (seq " << tg.rows * tg.cols << "), embed "
     << c.embed_dim() << " (" << c.state_embed << "+" << c.history_embed << "), depth "
     << c.depth << ", heads " << c.num_heads << ", noise dim " << c.noise_cond_dim
     << ", params " << param_count(predictive_param_specs(c));
  return os.str();
}

inline std::string describe(const DecoderNetConfig& c) {
  const auto tg = token_grid(c.full_rows, c.full_cols, c.hires_patch, c.hires_patch);
  std::ostringstream os;
  os << "decoder: full " << c.full_rows << "x" << c.full_cols << " -> tokens " << tg.rows
     << "x" << tg.cols << " (seq " << tg.rows * tg.cols << "), embed " << c.embed_dim()
     << " (" << c.hires_embed << "+" << c.residual_embed << "), depth " << c.depth
     << ", heads " << c.num_heads << ", params "
     << param_count(decoder_param_specs(c));
  return os.str();
}

}  // namespace atlas
