#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "atlas/tensor.hpp"

namespace atlas {

/// Named parameter store. std::map keeps iteration order stable so gradient
/// reductions and optimizer sweeps are deterministic.
template <class T>
struct Params {
  std::map<std::string, Tensor<T>> t;

  Tensor<T>& at(const std::string& name) {
    auto it = t.find(name);
    ATLAS_REQUIRE(it != t.end(), "unknown parameter '" << name << "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = t.find(name);
    ATLAS_REQUIRE(it != t.end(), "unknown parameter '" << name << "'");
    return it->second;
  }
  void add(const std::string& name, Tensor<T> v) {
    ATLAS_REQUIRE(!t.count(name), "duplicate parameter '" << name << "'");
    t.emplace(name, std::move(v));
  }
  int64_t total_size() const {
    int64_t n = 0;
    for (auto& [k, v] : t) n += v.numel();
    return n;
  }
  template <class U>
  Params<U> cast() const {
    Params<U> out;
    for (auto& [k, v] : t) out.t.emplace(k, v.template cast<U>());
    return out;
  }
};

template <class T>
using Grads = std::map<std::string, Tensor<T>>;

template <class T>
inline void grads_accumulate(Grads<T>& into, const Grads<T>& from) {
  for (auto& [k, v] : from) {
    auto it = into.find(k);
    if (it == into.end())
      into.emplace(k, v);
    else
      it->second += v;
  }
}

/// Reverse-mode tape over dense tensors. One Graph instance records one
/// forward pass; backward() replays the tape in reverse. A Graph is
/// single-owner: build, backward and reads happen on one thread.
template <class T>
class Graph {
 public:
  using Id = int;

  explicit Graph(bool recording = true, bool check_finite = false)
      : rec_(recording), check_finite_(check_finite) {}

  // ---- leaves ----

  Id input(Tensor<T> v) { return push(std::move(v), false); }
  Id input_grad(Tensor<T> v) { return push(std::move(v), true); }

  /// Leaf aliasing a parameter tensor; the store must outlive the graph and
  /// stay frozen until backward() finishes.
  Id param(const std::string& name, const Tensor<T>& p) {
    Node n;
    n.view = &p;
    n.rg = true;
    n.pname = name;
    nodes_.push_back(std::move(n));
    return Id(nodes_.size()) - 1;
  }

  const Tensor<T>& val(Id id) const {
    const Node& n = nodes_[size_t(id)];
    return n.view ? *n.view : n.own;
  }
  const Tensor<T>& grad_of(Id id) const { return nodes_[size_t(id)].grad; }
  bool requires_grad(Id id) const { return nodes_[size_t(id)].rg; }

  void backward(Id root) {
    ATLAS_REQUIRE(val(root).numel() == 1, "backward root must be scalar");
    ATLAS_REQUIRE(rec_, "graph was built in inference mode");
    ensure_grad(root).v[0] = T(1);
    for (auto it = back_.rbegin(); it != back_.rend(); ++it) (*it)();
  }

  /// Sums parameter-leaf gradients into `out`, in node creation order.
  void collect_param_grads(Grads<T>& out) const {
    for (const Node& n : nodes_) {
      if (n.pname.empty() || n.grad.numel() == 0) continue;
      auto it = out.find(n.pname);
      if (it == out.end())
        out.emplace(n.pname, n.grad);
      else
        it->second += n.grad;
    }
  }

  // ---- primitives ----

  Id matmul(Id a, Id b) {
    const auto& A = val(a);
    const auto& B = val(b);
    ATLAS_REQUIRE(A.rank() == 2 && B.rank() == 2 && A.dim(1) == B.dim(0),
                  "matmul shapes " << shape_str(A.shape) << " x " << shape_str(B.shape));
    const int64_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor<T> out(Shape{m, n});
    as_matrix(out, m, n).noalias() = as_matrix(A, m, k) * as_matrix(B, k, n);
    Id o = push(std::move(out), nodes_[size_t(a)].rg || nodes_[size_t(b)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, a, b, o, m, k, n] {
        const auto g = as_matrix(grad_of(o), m, n);
        if (nodes_[size_t(a)].rg)
          as_matrix(ensure_grad(a), m, k).noalias() += g * as_matrix(val(b), k, n).transpose();
        if (nodes_[size_t(b)].rg)
          as_matrix(ensure_grad(b), k, n).noalias() += as_matrix(val(a), m, k).transpose() * g;
      });
    return o;
  }

  /// y = x W + b over the last axis; x is [..., k], W is [k, n], b is [n].
  Id linear(Id x, Id w, Id b) {
    const auto& X = val(x);
    const auto& W = val(w);
    ATLAS_REQUIRE(W.rank() == 2, "linear weight must be 2-D");
    const int64_t k = W.dim(0), n = W.dim(1);
    ATLAS_REQUIRE(X.dim(X.rank() - 1) == k,
                  "linear input " << shape_str(X.shape) << " vs weight " << shape_str(W.shape));
    const int64_t rows = X.numel() / k;
    Shape oshape(X.shape);
    oshape.back() = n;
    Tensor<T> out(oshape);
    as_matrix(out, rows, n).noalias() = as_matrix(X, rows, k) * as_matrix(W, k, n);
    if (b >= 0) {
      const auto& B = val(b);
      ATLAS_REQUIRE(B.numel() == n, "linear bias size");
      auto om = as_matrix(out, rows, n);
      om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(B.data(), n);
    }
    bool rg = nodes_[size_t(x)].rg || nodes_[size_t(w)].rg ||
              (b >= 0 && nodes_[size_t(b)].rg);
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, x, w, b, o, rows, k, n] {
        const auto g = as_matrix(grad_of(o), rows, n);
        if (nodes_[size_t(x)].rg)
          as_matrix(ensure_grad(x), rows, k).noalias() += g * as_matrix(val(w), k, n).transpose();
        if (nodes_[size_t(w)].rg)
          as_matrix(ensure_grad(w), k, n).noalias() += as_matrix(val(x), rows, k).transpose() * g;
        if (b >= 0 && nodes_[size_t(b)].rg) {
          auto& gb = ensure_grad(b);
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), n) += g.colwise().sum();
        }
      });
    return o;
  }

  /// Strided 2-D convolution with token-major output: x [B,C,H,W] ->
  /// [B, Ho*Wo, O]; weight [O, C*kh*kw], bias [O]. Covers both the patch
  /// embeddings (kernel == stride) and 1x1 convolutions.
  Id patch_conv(Id x, Id w, Id b, int kh, int kw, int sh, int sw) {
    const auto& X = val(x);
    const auto& W = val(w);
    ATLAS_REQUIRE(X.rank() == 4, "patch_conv input must be [B,C,H,W]");
    const int64_t Bn = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
    ATLAS_REQUIRE((H - kh) % sh == 0 && (W.dim(1) == C * kh * kw),
                  "patch_conv geometry mismatch");
    ATLAS_REQUIRE((Wd - kw) % sw == 0, "patch_conv width not divisible");
    const int64_t Ho = (H - kh) / sh + 1, Wo = (Wd - kw) / sw + 1;
    const int64_t N = Ho * Wo, K = C * kh * kw, O = W.dim(0);
    // im2col index map, built once per op
    auto idx = std::make_shared<std::vector<int64_t>>(size_t(N * K));
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        const int64_t nn = oy * Wo + ox;
        int64_t q = 0;
        for (int64_t c = 0; c < C; ++c)
          for (int64_t dy = 0; dy < kh; ++dy)
            for (int64_t dx = 0; dx < kw; ++dx, ++q)
              (*idx)[size_t(nn * K + q)] =
                  (c * H + oy * sh + dy) * Wd + ox * sw + dx;
      }
    auto cols = std::make_shared<Tensor<T>>(Shape{Bn, N, K});
    for (int64_t bi = 0; bi < Bn; ++bi) {
      const T* src = X.data() + bi * C * H * Wd;
      T* dst = cols->data() + bi * N * K;
      for (int64_t i = 0; i < N * K; ++i) dst[i] = src[(*idx)[size_t(i)]];
    }
    Tensor<T> out(Shape{Bn, N, O});
    as_matrix(out, Bn * N, O).noalias() =
        as_matrix(*cols, Bn * N, K) * as_matrix(W, O, K).transpose();
    if (b >= 0) {
      const auto& Bv = val(b);
      ATLAS_REQUIRE(Bv.numel() == O, "patch_conv bias size");
      auto om = as_matrix(out, Bn * N, O);
      om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(Bv.data(), O);
    }
    bool rg = nodes_[size_t(x)].rg || nodes_[size_t(w)].rg ||
              (b >= 0 && nodes_[size_t(b)].rg);
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, x, w, b, o, cols, idx, Bn, N, K, O, C, H, Wd] {
        const auto g = as_matrix(grad_of(o), Bn * N, O);
        if (nodes_[size_t(w)].rg)
          as_matrix(ensure_grad(w), O, K).noalias() +=
              g.transpose() * as_matrix(*cols, Bn * N, K);
        if (b >= 0 && nodes_[size_t(b)].rg) {
          auto& gb = ensure_grad(b);
          Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb.data(), O) += g.colwise().sum();
        }
        if (nodes_[size_t(x)].rg) {
          Tensor<T> dcols(Shape{Bn, N, K});
          as_matrix(dcols, Bn * N, K).noalias() = g * as_matrix(val(w), O, K);
          auto& gx = ensure_grad(x);
          for (int64_t bi = 0; bi < Bn; ++bi) {
            T* dst = gx.data() + bi * C * H * Wd;
            const T* src = dcols.data() + bi * N * K;
            for (int64_t i = 0; i < N * K; ++i) dst[(*idx)[size_t(i)]] += src[i];
          }
        }
      });
    return o;
  }

  /// Layer normalization over the last axis, no learned affine.
  Id layer_norm(Id x, T eps = T(1e-5)) {
    const auto& X = val(x);
    const int64_t e = X.dim(X.rank() - 1);
    const int64_t rows = X.numel() / e;
    Tensor<T> out(X.shape);
    auto inv_std = std::make_shared<std::vector<T>>(size_t(rows));
    for (int64_t r = 0; r < rows; ++r) {
      const T* xr = X.data() + r * e;
      T* yr = out.data() + r * e;
      T mu = 0;
      for (int64_t i = 0; i < e; ++i) mu += xr[i];
      mu /= T(e);
      T var = 0;
      for (int64_t i = 0; i < e; ++i) var += (xr[i] - mu) * (xr[i] - mu);
      var /= T(e);
      const T is = T(1) / std::sqrt(var + eps);
      (*inv_std)[size_t(r)] = is;
      for (int64_t i = 0; i < e; ++i) yr[i] = (xr[i] - mu) * is;
    }
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, rows, e, inv_std] {
        auto& gx = ensure_grad(x);
        const auto& Y = val(o);
        const auto& G = grad_of(o);
        for (int64_t r = 0; r < rows; ++r) {
          const T* y = Y.data() + r * e;
          const T* g = G.data() + r * e;
          T* dx = gx.data() + r * e;
          T gm = 0, gym = 0;
          for (int64_t i = 0; i < e; ++i) {
            gm += g[i];
            gym += g[i] * y[i];
          }
          gm /= T(e);
          gym /= T(e);
          const T is = (*inv_std)[size_t(r)];
          for (int64_t i = 0; i < e; ++i) dx[i] += is * (g[i] - gm - y[i] * gym);
        }
      });
    return o;
  }

  /// Softmax over the last axis.
  Id softmax(Id x) {
    const auto& X = val(x);
    const int64_t n = X.dim(X.rank() - 1);
    const int64_t rows = X.numel() / n;
    Tensor<T> out(X.shape);
    for (int64_t r = 0; r < rows; ++r)
      softmax_row(X.data() + r * n, out.data() + r * n, n);
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, rows, n] {
        auto& gx = ensure_grad(x);
        const auto& P = val(o);
        const auto& G = grad_of(o);
        for (int64_t r = 0; r < rows; ++r) {
          const T* p = P.data() + r * n;
          const T* g = G.data() + r * n;
          T* dx = gx.data() + r * n;
          T dot = 0;
          for (int64_t i = 0; i < n; ++i) dot += p[i] * g[i];
          for (int64_t i = 0; i < n; ++i) dx[i] += p[i] * (g[i] - dot);
        }
      });
    return o;
  }

  /// Scaled dot-product attention with optional neighborhood restriction.
  /// q, k, v: [B, N, e]; heads divides e. When `neighbors` is non-null it is
  /// an [N, Kn] index table and each query attends only to its neighborhood
  /// (dense mask support reduces to Kn = N with the identity table).
  Id attention(Id q, Id k, Id v, int heads,
               std::shared_ptr<const std::vector<int>> neighbors = nullptr,
               int neigh_k = 0) {
    const auto& Q = val(q);
    ATLAS_REQUIRE(Q.rank() == 3, "attention expects [B,N,e]");
    const int64_t Bn = Q.dim(0), N = Q.dim(1), e = Q.dim(2);
    ATLAS_REQUIRE(e % heads == 0, "embed dim " << e << " not divisible by heads " << heads);
    const int64_t dh = e / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    const int64_t Kn = neighbors ? neigh_k : N;
    auto probs = std::make_shared<Tensor<T>>(Shape{Bn, int64_t(heads), N, Kn});
    Tensor<T> out(Q.shape);
    std::fill(out.v.begin(), out.v.end(), T(0));
    const auto& K = val(k);
    const auto& V = val(v);
    std::vector<T> srow(static_cast<size_t>(Kn));
    for (int64_t bi = 0; bi < Bn; ++bi)
      for (int h = 0; h < heads; ++h) {
        const int64_t off = bi * N * e + h * dh;
        for (int64_t i = 0; i < N; ++i) {
          const T* qi = Q.data() + off + i * e;
          for (int64_t jj = 0; jj < Kn; ++jj) {
            const int64_t j = neighbors ? (*neighbors)[size_t(i * Kn + jj)] : jj;
            const T* kj = K.data() + off + j * e;
            T s = 0;
            for (int64_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
            srow[size_t(jj)] = s * scale;
          }
          T* prow = probs->data() + ((bi * heads + h) * N + i) * Kn;
          softmax_row(srow.data(), prow, Kn);
          T* oi = out.data() + off + i * e;
          for (int64_t jj = 0; jj < Kn; ++jj) {
            const int64_t j = neighbors ? (*neighbors)[size_t(i * Kn + jj)] : jj;
            const T* vj = V.data() + off + j * e;
            const T p = prow[jj];
            for (int64_t d = 0; d < dh; ++d) oi[d] += p * vj[d];
          }
        }
      }
    bool rg = nodes_[size_t(q)].rg || nodes_[size_t(k)].rg || nodes_[size_t(v)].rg;
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, q, k, v, o, heads, probs, neighbors, Bn, N, e, dh,
                       Kn, scale] {
        const auto& Q = val(q);
        const auto& K = val(k);
        const auto& V = val(v);
        const auto& G = grad_of(o);
        auto& gq = ensure_grad(q);
        auto& gk = ensure_grad(k);
        auto& gv = ensure_grad(v);
        std::vector<T> dprow(static_cast<size_t>(Kn)), dsrow(static_cast<size_t>(Kn));
        for (int64_t bi = 0; bi < Bn; ++bi)
          for (int h = 0; h < heads; ++h) {
            const int64_t off = bi * N * e + h * dh;
            for (int64_t i = 0; i < N; ++i) {
              const T* gi = G.data() + off + i * e;
              const T* prow = probs->data() + ((bi * heads + h) * N + i) * Kn;
              // dP = dO . V^T over the neighborhood, dV += p * dO
              for (int64_t jj = 0; jj < Kn; ++jj) {
                const int64_t j = neighbors ? (*neighbors)[size_t(i * Kn + jj)] : jj;
                const T* vj = V.data() + off + j * e;
                T* gvj = gv.data() + off + j * e;
                T dp = 0;
                const T p = prow[jj];
                for (int64_t d = 0; d < dh; ++d) {
                  dp += gi[d] * vj[d];
                  gvj[d] += p * gi[d];
                }
                dprow[size_t(jj)] = dp;
              }
              // softmax backward on the row
              T dot = 0;
              for (int64_t jj = 0; jj < Kn; ++jj) dot += prow[jj] * dprow[size_t(jj)];
              for (int64_t jj = 0; jj < Kn; ++jj)
                dsrow[size_t(jj)] = prow[jj] * (dprow[size_t(jj)] - dot) * scale;
              // dQ += dS K, dK += dS^T Q
              const T* qi = Q.data() + off + i * e;
              T* gqi = gq.data() + off + i * e;
              for (int64_t jj = 0; jj < Kn; ++jj) {
                const int64_t j = neighbors ? (*neighbors)[size_t(i * Kn + jj)] : jj;
                const T* kj = K.data() + off + j * e;
                T* gkj = gk.data() + off + j * e;
                const T ds = dsrow[size_t(jj)];
                for (int64_t d = 0; d < dh; ++d) {
                  gqi[d] += ds * kj[d];
                  gkj[d] += ds * qi[d];
                }
              }
            }
          }
      });
    return o;
  }

  Id silu(Id x) {
    return unary(x, [](T v) { return v / (T(1) + std::exp(-v)); },
                 [](T v, T) {
                   const T s = T(1) / (T(1) + std::exp(-v));
                   return s * (T(1) + v * (T(1) - s));
                 });
  }

  Id gelu(Id x) {
    return unary(x,
                 [](T v) {
                   return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2))));
                 },
                 [](T v, T) {
                   const T cdf = T(0.5) * (T(1) + std::erf(v / std::sqrt(T(2))));
                   const T pdf = std::exp(-T(0.5) * v * v) / std::sqrt(T(2) * T(kPi));
                   return cdf + v * pdf;
                 });
  }

  Id abs(Id x) {
    return unary(x, [](T v) { return std::abs(v); },
                 [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
  }

  Id square(Id x) {
    return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
  }

  Id add(Id a, Id b) { return binary(a, b, true); }
  Id sub(Id a, Id b) { return binary(a, b, false); }

  Id mul(Id a, Id b) {
    const auto& A = val(a);
    const auto& B = val(b);
    ATLAS_REQUIRE(A.numel() == B.numel(), "mul shape mismatch");
    Tensor<T> out(A.shape);
    for (int64_t i = 0; i < A.numel(); ++i) out.v[size_t(i)] = A.v[size_t(i)] * B.v[size_t(i)];
    bool rg = nodes_[size_t(a)].rg || nodes_[size_t(b)].rg;
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, a, b, o] {
        const auto& G = grad_of(o);
        if (nodes_[size_t(a)].rg) {
          auto& ga = ensure_grad(a);
          const auto& B = val(b);
          for (int64_t i = 0; i < G.numel(); ++i) ga.v[size_t(i)] += G.v[size_t(i)] * B.v[size_t(i)];
        }
        if (nodes_[size_t(b)].rg) {
          auto& gb = ensure_grad(b);
          const auto& A = val(a);
          for (int64_t i = 0; i < G.numel(); ++i) gb.v[size_t(i)] += G.v[size_t(i)] * A.v[size_t(i)];
        }
      });
    return o;
  }

  Id scale(Id x, T c) {
    return unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
  }

  Id add_scalar(Id x, T c) {
    return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
  }

  /// x + t broadcast over the leading axis; t is a plain tensor (no grad),
  /// e.g. a positional-encoding table of shape [N, e] against x [B, N, e].
  Id add_bcast_const(Id x, const Tensor<T>& t) {
    const auto& X = val(x);
    ATLAS_REQUIRE(X.numel() % t.numel() == 0, "broadcast size mismatch");
    Tensor<T> out(X.shape);
    const int64_t reps = X.numel() / t.numel(), n = t.numel();
    for (int64_t r = 0; r < reps; ++r)
      for (int64_t i = 0; i < n; ++i)
        out.v[size_t(r * n + i)] = X.v[size_t(r * n + i)] + t.v[size_t(i)];
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o] {
        auto& gx = ensure_grad(x);
        const auto& G = grad_of(o);
        for (int64_t i = 0; i < G.numel(); ++i) gx.v[size_t(i)] += G.v[size_t(i)];
      });
    return o;
  }

  /// Elementwise multiply by a plain tensor (no grad), same shape.
  Id mul_const(Id x, std::shared_ptr<const Tensor<T>> t) {
    const auto& X = val(x);
    ATLAS_REQUIRE(X.numel() == t->numel(), "mul_const shape mismatch");
    Tensor<T> out(X.shape);
    for (int64_t i = 0; i < X.numel(); ++i) out.v[size_t(i)] = X.v[size_t(i)] * t->v[size_t(i)];
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, t] {
        auto& gx = ensure_grad(x);
        const auto& G = grad_of(o);
        for (int64_t i = 0; i < G.numel(); ++i) gx.v[size_t(i)] += G.v[size_t(i)] * t->v[size_t(i)];
      });
    return o;
  }

  /// Adaptive modulation: out = x * (1 + s) + sh, with s, sh of shape [B, e]
  /// broadcast over the token axis of x [B, N, e].
  Id modulate(Id x, Id s, Id sh) {
    const auto& X = val(x);
    const auto& S = val(s);
    ATLAS_REQUIRE(X.rank() == 3 && S.rank() == 2 && X.dim(0) == S.dim(0) &&
                      X.dim(2) == S.dim(1),
                  "modulate shapes");
    const int64_t Bn = X.dim(0), N = X.dim(1), e = X.dim(2);
    Tensor<T> out(X.shape);
    const auto& Sh = val(sh);
    for (int64_t bi = 0; bi < Bn; ++bi)
      for (int64_t i = 0; i < N; ++i)
        for (int64_t d = 0; d < e; ++d)
          out.v[size_t((bi * N + i) * e + d)] =
              X.v[size_t((bi * N + i) * e + d)] * (T(1) + S.v[size_t(bi * e + d)]) +
              Sh.v[size_t(bi * e + d)];
    bool rg = nodes_[size_t(x)].rg || nodes_[size_t(s)].rg || nodes_[size_t(sh)].rg;
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, x, s, sh, o, Bn, N, e] {
        const auto& G = grad_of(o);
        const auto& X = val(x);
        const auto& S = val(s);
        if (nodes_[size_t(x)].rg) {
          auto& gx = ensure_grad(x);
          for (int64_t bi = 0; bi < Bn; ++bi)
            for (int64_t i = 0; i < N; ++i)
              for (int64_t d = 0; d < e; ++d)
                gx.v[size_t((bi * N + i) * e + d)] +=
                    G.v[size_t((bi * N + i) * e + d)] * (T(1) + S.v[size_t(bi * e + d)]);
        }
        if (nodes_[size_t(s)].rg) {
          auto& gs = ensure_grad(s);
          for (int64_t bi = 0; bi < Bn; ++bi)
            for (int64_t i = 0; i < N; ++i)
              for (int64_t d = 0; d < e; ++d)
                gs.v[size_t(bi * e + d)] += G.v[size_t((bi * N + i) * e + d)] *
                                            X.v[size_t((bi * N + i) * e + d)];
        }
        if (nodes_[size_t(sh)].rg) {
          auto& gsh = ensure_grad(sh);
          for (int64_t bi = 0; bi < Bn; ++bi)
            for (int64_t i = 0; i < N; ++i)
              for (int64_t d = 0; d < e; ++d)
                gsh.v[size_t(bi * e + d)] += G.v[size_t((bi * N + i) * e + d)];
        }
      });
    return o;
  }

  /// Gated residual: out = x + g * y with gate g of shape [B, e] broadcast
  /// over tokens.
  Id gate_add(Id x, Id g, Id y) {
    const auto& X = val(x);
    const auto& Gt = val(g);
    const auto& Y = val(y);
    ATLAS_REQUIRE(X.rank() == 3 && Gt.rank() == 2 && X.dim(0) == Gt.dim(0) &&
                      X.dim(2) == Gt.dim(1) && Y.numel() == X.numel(),
                  "gate_add shapes");
    const int64_t Bn = X.dim(0), N = X.dim(1), e = X.dim(2);
    Tensor<T> out(X.shape);
    for (int64_t bi = 0; bi < Bn; ++bi)
      for (int64_t i = 0; i < N; ++i)
        for (int64_t d = 0; d < e; ++d)
          out.v[size_t((bi * N + i) * e + d)] =
              X.v[size_t((bi * N + i) * e + d)] +
              Gt.v[size_t(bi * e + d)] * Y.v[size_t((bi * N + i) * e + d)];
    bool rg = nodes_[size_t(x)].rg || nodes_[size_t(g)].rg || nodes_[size_t(y)].rg;
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, x, g, y, o, Bn, N, e] {
        const auto& G = grad_of(o);
        if (nodes_[size_t(x)].rg) {
          auto& gx = ensure_grad(x);
          for (int64_t i = 0; i < G.numel(); ++i) gx.v[size_t(i)] += G.v[size_t(i)];
        }
        if (nodes_[size_t(g)].rg) {
          auto& gg = ensure_grad(g);
          const auto& Y = val(y);
          for (int64_t bi = 0; bi < Bn; ++bi)
            for (int64_t i = 0; i < N; ++i)
              for (int64_t d = 0; d < e; ++d)
                gg.v[size_t(bi * e + d)] += G.v[size_t((bi * N + i) * e + d)] *
                                            Y.v[size_t((bi * N + i) * e + d)];
        }
        if (nodes_[size_t(y)].rg) {
          auto& gy = ensure_grad(y);
          const auto& Gt = val(g);
          for (int64_t bi = 0; bi < Bn; ++bi)
            for (int64_t i = 0; i < N; ++i)
              for (int64_t d = 0; d < e; ++d)
                gy.v[size_t((bi * N + i) * e + d)] +=
                    G.v[size_t((bi * N + i) * e + d)] * Gt.v[size_t(bi * e + d)];
        }
      });
    return o;
  }

  /// Slice of the last axis.
  Id slice_last(Id x, int64_t start, int64_t len) {
    const auto& X = val(x);
    const int64_t n = X.dim(X.rank() - 1);
    ATLAS_REQUIRE(start >= 0 && start + len <= n, "slice bounds");
    const int64_t rows = X.numel() / n;
    Shape oshape(X.shape);
    oshape.back() = len;
    Tensor<T> out(oshape);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < len; ++i)
        out.v[size_t(r * len + i)] = X.v[size_t(r * n + start + i)];
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, start, len, rows, n] {
        auto& gx = ensure_grad(x);
        const auto& G = grad_of(o);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < len; ++i)
            gx.v[size_t(r * n + start + i)] += G.v[size_t(r * len + i)];
      });
    return o;
  }

  /// Concatenation along the last axis.
  Id concat_last(Id a, Id b) {
    const auto& A = val(a);
    const auto& B = val(b);
    ATLAS_REQUIRE(A.rank() == B.rank(), "concat rank mismatch");
    const int64_t na = A.dim(A.rank() - 1), nb = B.dim(B.rank() - 1);
    const int64_t rows = A.numel() / na;
    ATLAS_REQUIRE(rows == B.numel() / nb, "concat leading dims mismatch");
    Shape oshape(A.shape);
    oshape.back() = na + nb;
    Tensor<T> out(oshape);
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t i = 0; i < na; ++i)
        out.v[size_t(r * (na + nb) + i)] = A.v[size_t(r * na + i)];
      for (int64_t i = 0; i < nb; ++i)
        out.v[size_t(r * (na + nb) + na + i)] = B.v[size_t(r * nb + i)];
    }
    bool rg = nodes_[size_t(a)].rg || nodes_[size_t(b)].rg;
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, a, b, o, rows, na, nb] {
        const auto& G = grad_of(o);
        if (nodes_[size_t(a)].rg) {
          auto& ga = ensure_grad(a);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < na; ++i)
              ga.v[size_t(r * na + i)] += G.v[size_t(r * (na + nb) + i)];
        }
        if (nodes_[size_t(b)].rg) {
          auto& gb = ensure_grad(b);
          for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < nb; ++i)
              gb.v[size_t(r * nb + i)] += G.v[size_t(r * (na + nb) + na + i)];
        }
      });
    return o;
  }

  /// Index gather over the flattened trailing block: x viewed as [B, n],
  /// out[b, i] = x[b, idx[i]]. Repeating indices are allowed (replication
  /// padding); backward scatter-adds. Also serves crops and rearranges.
  Id gather_cols(Id x, std::shared_ptr<const std::vector<int64_t>> idx,
                 Shape out_block_shape) {
    const auto& X = val(x);
    const int64_t n2 = int64_t(idx->size());
    ATLAS_REQUIRE(shape_numel(out_block_shape) == n2, "gather output shape");
    const int64_t Bn = X.dim(0);
    const int64_t n = X.numel() / Bn;
    Shape oshape;
    oshape.push_back(Bn);
    for (int64_t d : out_block_shape) oshape.push_back(d);
    Tensor<T> out(oshape);
    for (int64_t bi = 0; bi < Bn; ++bi) {
      const T* src = X.data() + bi * n;
      T* dst = out.data() + bi * n2;
      for (int64_t i = 0; i < n2; ++i) dst[i] = src[(*idx)[size_t(i)]];
    }
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, idx, Bn, n, n2] {
        auto& gx = ensure_grad(x);
        const auto& G = grad_of(o);
        for (int64_t bi = 0; bi < Bn; ++bi) {
          T* dst = gx.data() + bi * n;
          const T* src = G.data() + bi * n2;
          for (int64_t i = 0; i < n2; ++i) dst[(*idx)[size_t(i)]] += src[i];
        }
      });
    return o;
  }

  /// sqrt(even^2 + odd^2) over interleaved (re, im) pairs in the last axis.
  Id hypot_pairs(Id x) {
    const auto& X = val(x);
    const int64_t n = X.dim(X.rank() - 1);
    ATLAS_REQUIRE(n % 2 == 0, "hypot_pairs needs an even last axis");
    Shape oshape(X.shape);
    oshape.back() = n / 2;
    const int64_t rows = X.numel() / n;
    Tensor<T> out(oshape);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t i = 0; i < n / 2; ++i) {
        const T re = X.v[size_t(r * n + 2 * i)], im = X.v[size_t(r * n + 2 * i + 1)];
        out.v[size_t(r * (n / 2) + i)] = std::sqrt(re * re + im * im);
      }
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, rows, n] {
        auto& gx = ensure_grad(x);
        const auto& X = val(x);
        const auto& M = val(o);
        const auto& G = grad_of(o);
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t i = 0; i < n / 2; ++i) {
            const T m = M.v[size_t(r * (n / 2) + i)];
            if (m == T(0)) continue;
            const T g = G.v[size_t(r * (n / 2) + i)] / m;
            gx.v[size_t(r * n + 2 * i)] += g * X.v[size_t(r * n + 2 * i)];
            gx.v[size_t(r * n + 2 * i + 1)] += g * X.v[size_t(r * n + 2 * i + 1)];
          }
      });
    return o;
  }

  Id sum_all(Id x) {
    const auto& X = val(x);
    Tensor<T> out(Shape{1});
    T acc = 0;
    for (const T& v : X.v) acc += v;
    out.v[0] = acc;
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o] {
        auto& gx = ensure_grad(x);
        const T g = grad_of(o).v[0];
        for (auto& v : gx.v) v += g;
      });
    return o;
  }

  Id mean_all(Id x) { return scale(sum_all(x), T(1) / T(val(x).numel())); }

  /// Weighted sum against a constant tensor: sum_i x_i * w_i.
  Id dot_const(Id x, std::shared_ptr<const Tensor<T>> w) {
    const auto& X = val(x);
    ATLAS_REQUIRE(X.numel() == w->numel(), "dot_const size mismatch");
    Tensor<T> out(Shape{1});
    T acc = 0;
    for (int64_t i = 0; i < X.numel(); ++i) acc += X.v[size_t(i)] * w->v[size_t(i)];
    out.v[0] = acc;
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, w] {
        auto& gx = ensure_grad(x);
        const T g = grad_of(o).v[0];
        for (int64_t i = 0; i < gx.numel(); ++i) gx.v[size_t(i)] += g * w->v[size_t(i)];
      });
    return o;
  }

  /// Reshape (same number of elements; shares no storage tricks, just copies
  /// the shape).
  Id reshape(Id x, Shape s) {
    const auto& X = val(x);
    ATLAS_REQUIRE(shape_numel(s) == X.numel(), "reshape numel mismatch");
    Tensor<T> out = X;
    out.shape = std::move(s);
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o] {
        auto& gx = ensure_grad(x);
        const auto& G = grad_of(o);
        for (int64_t i = 0; i < G.numel(); ++i) gx.v[size_t(i)] += G.v[size_t(i)];
      });
    return o;
  }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* view = nullptr;
    Tensor<T> grad;
    bool rg = false;
    std::string pname;
  };

  static void softmax_row(const T* x, T* y, int64_t n) {
    T mx = x[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T z = 0;
    for (int64_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    const T iz = T(1) / z;
    for (int64_t i = 0; i < n; ++i) y[i] *= iz;
  }

  Id push(Tensor<T> v, bool rg) {
    if (check_finite_)
      ATLAS_REQUIRE(v.all_finite(), "non-finite intermediate at node " << nodes_.size());
    Node n;
    n.own = std::move(v);
    n.rg = rg;
    nodes_.push_back(std::move(n));
    return Id(nodes_.size()) - 1;
  }

  Tensor<T>& ensure_grad(Id id) {
    Node& n = nodes_[size_t(id)];
    if (n.grad.numel() == 0) n.grad = Tensor<T>(val(id).shape);
    return n.grad;
  }

  template <class F, class D>
  Id unary(Id x, F f, D df) {
    const auto& X = val(x);
    Tensor<T> out(X.shape);
    for (int64_t i = 0; i < X.numel(); ++i) out.v[size_t(i)] = f(X.v[size_t(i)]);
    Id o = push(std::move(out), nodes_[size_t(x)].rg);
    if (rec_ && nodes_[size_t(o)].rg)
      back_.push_back([this, x, o, df] {
        auto& gx = ensure_grad(x);
        const auto& X = val(x);
        const auto& Y = val(o);
        const auto& G = grad_of(o);
        for (int64_t i = 0; i < X.numel(); ++i)
          gx.v[size_t(i)] += G.v[size_t(i)] * df(X.v[size_t(i)], Y.v[size_t(i)]);
      });
    return o;
  }

  Id binary(Id a, Id b, bool plus) {
    const auto& A = val(a);
    const auto& B = val(b);
    ATLAS_REQUIRE(A.numel() == B.numel(),
                  "elementwise shape mismatch " << shape_str(A.shape) << " vs "
                                                << shape_str(B.shape));
    Tensor<T> out(A.shape);
    if (plus)
      for (int64_t i = 0; i < A.numel(); ++i)
        out.v[size_t(i)] = A.v[size_t(i)] + B.v[size_t(i)];
    else
      for (int64_t i = 0; i < A.numel(); ++i)
        out.v[size_t(i)] = A.v[size_t(i)] - B.v[size_t(i)];
    bool rg = nodes_[size_t(a)].rg || nodes_[size_t(b)].rg;
    Id o = push(std::move(out), rg);
    if (rec_ && rg)
      back_.push_back([this, a, b, o, plus] {
        const auto& G = grad_of(o);
        if (nodes_[size_t(a)].rg) {
          auto& ga = ensure_grad(a);
          for (int64_t i = 0; i < G.numel(); ++i) ga.v[size_t(i)] += G.v[size_t(i)];
        }
        if (nodes_[size_t(b)].rg) {
          auto& gb = ensure_grad(b);
          const T s = plus ? T(1) : T(-1);
          for (int64_t i = 0; i < G.numel(); ++i) gb.v[size_t(i)] += s * G.v[size_t(i)];
        }
      });
    return o;
  }

  std::vector<Node> nodes_;
  std::vector<std::function<void()>> back_;
  bool rec_;
  bool check_finite_;
};

// ---- raw tensor helpers for sampler arithmetic outside the tape ----

template <class T>
inline void axpy(Tensor<T>& y, T a, const Tensor<T>& x) {
  ATLAS_REQUIRE(y.numel() == x.numel(), "axpy size mismatch");
  for (int64_t i = 0; i < y.numel(); ++i) y.v[size_t(i)] += a * x.v[size_t(i)];
}

template <class T>
inline Tensor<T> scaled(const Tensor<T>& x, T a) {
  Tensor<T> out = x;
  for (auto& v : out.v) v *= a;
  return out;
}

}  // namespace atlas
