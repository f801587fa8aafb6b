#include <catch2/catch_amalgamated.hpp>
#include <deque>

#include "atlas/nets.hpp"

using namespace atlas;

namespace {

PredictiveNetConfig micro_pred() {
  PredictiveNetConfig c;
  c.channels = 2;
  c.lat_rows = 5;
  c.lat_cols = 8;
  c.state_embed = 8;
  c.history_embed = 4;
  c.depth = 2;
  c.num_heads = 2;
  c.patch_h = 2;
  c.patch_w = 2;
  return c;
}

DecoderNetConfig micro_dec() {
  DecoderNetConfig c;
  c.channels = 2;
  c.aux_channels = 1;
  c.full_rows = 17;
  c.full_cols = 32;
  c.hires_embed = 8;
  c.residual_embed = 4;
  c.depth = 2;
  c.num_heads = 2;
  return c;
}

/// BFS distance on the token grid under the spherical 3x3 topology; the
/// independent oracle for receptive-field probes.
std::vector<int> token_distances(int rows, int cols, int from) {
  auto nb = local3x3_neighbors(rows, cols);
  std::vector<int> dist(size_t(rows * cols), -1);
  std::deque<int> q{from};
  dist[size_t(from)] = 0;
  while (!q.empty()) {
    int u = q.front();
    q.pop_front();
    for (int k = 0; k < 9; ++k) {
      int v = (*nb)[size_t(u * 9 + k)];
      if (dist[size_t(v)] < 0) {
        dist[size_t(v)] = dist[size_t(u)] + 1;
        q.push_back(v);
      }
    }
  }
  return dist;
}

}  // namespace

TEST_CASE("token grids match the documented paper-scale shapes") {
  // 721x1440 with a 4x4 stride and 3-row pad -> 181x360 tokens
  auto tg = token_grid(721, 1440, 4, 4);
  CHECK(tg.rows == 181);
  CHECK(tg.cols == 360);
  CHECK(tg.padded_rows == 724);
  // 181x360 with a 2x3 stride and 1-row pad -> 91x120 tokens
  auto tg2 = token_grid(181, 360, 2, 3);
  CHECK(tg2.rows == 91);
  CHECK(tg2.cols == 120);
  CHECK(tg2.padded_rows == 182);
  // desk scale
  auto tg3 = token_grid(19, 32, 2, 2);
  CHECK(tg3.rows == 10);
  CHECK(tg3.cols == 16);
  CHECK_THROWS_AS(token_grid(19, 33, 2, 2), Error);
}

TEST_CASE("posenc: deterministic, distinct rows, e=4 base case") {
  auto a = posenc_sincos<double>(10, 16, 32);
  auto b = posenc_sincos<double>(10, 16, 32);
  CHECK(a.v == b.v);  // bit-identical
  // distinct token positions get distinct rows
  int collisions = 0;
  for (int64_t i = 0; i < a.dim(0); ++i)
    for (int64_t j = i + 1; j < a.dim(0); ++j) {
      bool same = true;
      for (int64_t d = 0; d < a.dim(1); ++d)
        if (a.v[size_t(i * 32 + d)] != a.v[size_t(j * 32 + d)]) {
          same = false;
          break;
        }
      if (same) ++collisions;
    }
  CHECK(collisions == 0);
  auto p4 = posenc_sincos<double>(2, 2, 4);
  CHECK(p4.v[0] == 0.0);
  CHECK(p4.v[1] == 1.0);
  CHECK(p4.v[2] == 0.0);
  CHECK(p4.v[3] == 1.0);
}

TEST_CASE("zero input with zero bias gives zero tokens") {
  Graph<double> g;
  Rng rng(3);
  auto w = g.input(Tensor<double>::randn({8, 2 * 4}, rng));
  auto b = g.input(Tensor<double>({8}));
  auto x = g.input(Tensor<double>({1, 2, 4, 4}));
  auto tok = g.patch_conv(x, w, b, 2, 2, 2, 2);
  for (double v : g.val(tok).v) CHECK(v == 0.0);
}

TEST_CASE("identity at initialization: both networks output exactly zero") {
  auto pc = micro_pred();
  PredictiveNet<double> net(pc);
  auto P = init_params<double>(predictive_param_specs(pc), 7);
  Graph<double> g(false);
  Rng rng(11);
  auto noisy = g.input(Tensor<double>::randn({2, 2, 5, 8}, rng));
  auto hist = g.input(Tensor<double>::randn({2, 4, 5, 8}, rng));
  auto tf = g.input(sinusoidal_features<double>({0.3, 0.8}, pc.embed_dim()));
  auto out = net.forward(g, P, noisy, hist, tf);
  CHECK(g.val(out).shape == Shape{2, 2, 5, 8});
  for (double v : g.val(out).v) CHECK(v == 0.0);

  auto dc = micro_dec();
  DecoderNet<double> dec(dc);
  auto Pd = init_params<double>(decoder_param_specs(dc), 8);
  Graph<double> g2(false);
  auto res = g2.input(Tensor<double>::randn({1, 2, 5, 8}, rng));
  auto hires = g2.input(Tensor<double>::randn({1, 3, 17, 32}, rng));
  auto y = dec.forward(g2, Pd, res, hires);
  CHECK(g2.val(y).shape == Shape{1, 2, 17, 32});
  for (double v : g2.val(y).v) CHECK(v == 0.0);
}

TEST_CASE("dit block is the identity when modulation is zero-initialized") {
  const int e = 8;
  std::vector<ParamSpec> specs;
  dit_block_param_specs(specs, "blk", e, 4);
  auto P = init_params<double>(specs, 21);
  Graph<double> g;
  Rng rng(5);
  auto x = g.input(Tensor<double>::randn({2, 6, e}, rng));
  auto cond = g.input(Tensor<double>::randn({2, e}, rng));
  DiTBlockConfig bc{e, 2, 4, AttentionKind::kGlobal};
  auto y = detail::dit_block(g, P, "blk", x, cond, bc, nullptr);
  CHECK(g.val(y).v == g.val(x).v);
}

namespace {

/// One non-trivial DiT block application (all params randomized).
Tensor<double> run_block(const Tensor<double>& xv, bool local, int rows, int cols) {
  const int e = 8;
  std::vector<ParamSpec> specs;
  dit_block_param_specs(specs, "blk", e, 4);
  Params<double> P;
  Rng rng(77);
  for (auto& s : specs) P.add(s.name, Tensor<double>::randn(s.shape, rng, 0.3));
  Graph<double> g(false);
  auto x = g.input(xv);
  auto cond = g.input(Tensor<double>::full({1, e}, 0.5));
  DiTBlockConfig bc{e, 2, 4, local ? AttentionKind::kLocal3x3 : AttentionKind::kGlobal};
  auto y = detail::dit_block(g, P, "blk", x, cond, bc,
                             local ? local3x3_neighbors(rows, cols) : nullptr);
  return g.val(y);
}

}  // namespace

TEST_CASE("local attention: perturbations outside the 3x3 neighborhood do not reach a query") {
  const int rows = 6, cols = 8, e = 8;
  Rng rng(31);
  auto xv = Tensor<double>::randn({1, rows * cols, e}, rng);
  auto base = run_block(xv, true, rows, cols);

  const int query = 3 * cols + 4;
  auto dist = token_distances(rows, cols, query);
  int far = -1;
  for (int i = 0; i < rows * cols; ++i)
    if (dist[size_t(i)] > 1) far = i;
  REQUIRE(far >= 0);
  auto xp = xv;
  xp.v[size_t(far * e + 2)] += 0.7;
  auto pert = run_block(xp, true, rows, cols);
  for (int d = 0; d < e; ++d)
    CHECK(pert.v[size_t(query * e + d)] == base.v[size_t(query * e + d)]);
  // a neighbor perturbation does reach the query
  int near = (*local3x3_neighbors(rows, cols))[size_t(query * 9 + 0)];
  auto xn = xv;
  xn.v[size_t(near * e + 2)] += 0.7;
  auto pn = run_block(xn, true, rows, cols);
  double delta = 0.0;
  for (int d = 0; d < e; ++d)
    delta += std::abs(pn.v[size_t(query * e + d)] - base.v[size_t(query * e + d)]);
  CHECK(delta > 0.0);
}

TEST_CASE("global attention: any perturbation reaches every output token") {
  const int rows = 4, cols = 6, e = 8;
  Rng rng(32);
  auto xv = Tensor<double>::randn({1, rows * cols, e}, rng);
  auto base = run_block(xv, false, rows, cols);
  auto xp = xv;
  xp.v[size_t(5 * e + 1)] += 0.9;
  auto pert = run_block(xp, false, rows, cols);
  for (int i = 0; i < rows * cols; ++i) {
    double delta = 0.0;
    for (int d = 0; d < e; ++d)
      delta += std::abs(pert.v[size_t(i * e + d)] - base.v[size_t(i * e + d)]);
    CHECK(delta > 0.0);
  }
}

TEST_CASE("decoder receptive field grows one token ring per block") {
  auto dc = micro_dec();
  dc.depth = 2;
  DecoderNet<double> dec(dc);
  auto specs = decoder_param_specs(dc);
  Params<double> P;
  Rng rng(41);
  for (auto& s : specs) P.add(s.name, Tensor<double>::randn(s.shape, rng, 0.25));

  const auto& tg = dec.tokens();
  Rng drng(42);
  auto resv = Tensor<double>::randn({1, 2, tg.rows, tg.cols}, drng);
  auto hiresv = Tensor<double>::randn({1, 3, 17, 32}, drng);

  auto run = [&](const Tensor<double>& r) {
    Graph<double> g(false);
    auto y = dec.forward(g, P, g.input(r), g.input(hiresv));
    return g.val(y);
  };
  auto base = run(resv);

  // perturb the residual at one latent pixel (= one token via the 1x1 embed)
  const int pr = 1, pc = 2;
  auto rp = resv;
  rp.v[size_t(((0 * 2 + 1) * tg.rows + pr) * tg.cols + pc)] += 1.0;
  auto pert = run(rp);

  auto dist = token_distances(tg.rows, tg.cols, pr * tg.cols + pc);
  int changed_beyond = 0, unchanged_within = 0;
  for (int ty = 0; ty < tg.rows; ++ty)
    for (int tx = 0; tx < tg.cols; ++tx) {
      double delta = 0.0;
      for (int dy = 0; dy < 4; ++dy)
        for (int dx = 0; dx < 4; ++dx) {
          const int iy = ty * 4 + dy - tg.pad_top;
          const int ix = tx * 4 + dx;
          if (iy < 0 || iy >= 17) continue;
          for (int ch = 0; ch < 2; ++ch)
            delta += std::abs(pert.v[size_t((int64_t(ch) * 17 + iy) * 32 + ix)] -
                              base.v[size_t((int64_t(ch) * 17 + iy) * 32 + ix)]);
        }
      const int d = dist[size_t(ty * tg.cols + tx)];
      if (d > dc.depth && delta != 0.0) ++changed_beyond;
      if (d <= dc.depth && delta == 0.0) ++unchanged_within;
    }
  CHECK(changed_beyond == 0);
  // within the receptive field, generic weights move essentially every token
  CHECK(unchanged_within <= 1);
}

TEST_CASE("paper-scale configurations are representable in describe()") {
  PredictiveNetConfig pc;
  pc.channels = 75;
  pc.lat_rows = 181;
  pc.lat_cols = 360;
  pc.state_embed = 2496;
  pc.history_embed = 832;
  pc.depth = 12;
  pc.num_heads = 13;
  pc.patch_h = 2;
  pc.patch_w = 3;
  const auto desc = describe(pc);
  CHECK(desc.find("tokens 91x120") != std::string::npos);
  CHECK(desc.find("seq 10920") != std::string::npos);
  CHECK(param_count(predictive_param_specs(pc)) > 2'000'000'000);

  DecoderNetConfig dcfg;
  dcfg.channels = 75;
  dcfg.aux_channels = 4;
  dcfg.full_rows = 721;
  dcfg.full_cols = 1440;
  dcfg.hires_embed = 1728;
  dcfg.residual_embed = 768;
  dcfg.depth = 16;
  dcfg.num_heads = 12;
  const auto ddesc = describe(dcfg);
  CHECK(ddesc.find("tokens 181x360") != std::string::npos);
  CHECK(param_count(decoder_param_specs(dcfg)) > 1'000'000'000);
}

TEST_CASE("forward passes are deterministic") {
  auto pc = micro_pred();
  PredictiveNet<float> net(pc);
  auto P = init_params<float>(predictive_param_specs(pc), 7);
  Rng rng(9);
  for (auto& [k, v] : P.t)
    for (auto& x : v.v) x += float(rng.normal()) * 0.05f;
  auto run = [&] {
    Graph<float> g(false);
    Rng r2(10);
    auto noisy = g.input(Tensor<float>::randn({1, 2, 5, 8}, r2));
    auto hist = g.input(Tensor<float>::randn({1, 4, 5, 8}, r2));
    auto tf = g.input(sinusoidal_features<float>({0.4}, pc.embed_dim()));
    return g.val(net.forward(g, P, noisy, hist, tf)).v;
  };
  CHECK(run() == run());
}
