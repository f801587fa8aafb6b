#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "atlas/io.hpp"
#include "atlas/optim.hpp"

using namespace atlas;

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(cfg);
  Params<double> P;
  Rng rng(1);
  P.add("w", Tensor<double>::randn({5}, rng));
  const auto before = P.at("w");
  Grads<double> g;
  g.emplace("w", Tensor<double>({5}));
  for (int s = 0; s < 3; ++s) opt.step(P, g, 1e-2);
  for (int64_t i = 0; i < 5; ++i) CHECK(P.at("w").v[size_t(i)] == before.v[size_t(i)]);
}

TEST_CASE("adamw: decoupled decay with zero gradient is p *= (1 - lr*wd)") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  AdamW<double> opt(cfg);
  Params<double> P;
  P.add("w", Tensor<double>::full({3}, 2.0));
  Grads<double> g;
  g.emplace("w", Tensor<double>({3}));
  const double lr = 0.05;
  opt.step(P, g, lr);
  for (int64_t i = 0; i < 3; ++i)
    CHECK(P.at("w").v[size_t(i)] == Catch::Approx(2.0 * (1.0 - lr * 0.1)).epsilon(1e-14));
  opt.step(P, g, lr);
  for (int64_t i = 0; i < 3; ++i)
    CHECK(P.at("w").v[size_t(i)] ==
          Catch::Approx(2.0 * (1.0 - lr * 0.1) * (1.0 - lr * 0.1)).epsilon(1e-14));
}

TEST_CASE("adamw: constant gradient drives a sign-like step bounded by the clip") {
  // Adam fixed point under constant gradient g: m->g, v->g^2, update -> g/|g|
  // (eps-corrected), so |delta p| approaches lr and RMS hits the clip at 1.
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<double> opt(cfg);
  Params<double> P;
  P.add("w", Tensor<double>::full({4}, 0.0));
  Grads<double> g;
  g.emplace("w", Tensor<double>::full({4}, 0.37));
  const double lr = 1e-3;
  double prev = 0.0;
  for (int s = 0; s < 200; ++s) {
    prev = P.at("w").v[0];
    opt.step(P, g, lr);
  }
  const double step_size = std::abs(P.at("w").v[0] - prev);
  CHECK(step_size == Catch::Approx(lr).epsilon(0.01));
  // direction is -sign(g)
  CHECK(P.at("w").v[0] < 0.0);
}

TEST_CASE("adamw: non-finite gradient raises an error naming the parameter") {
  AdamW<double> opt;
  Params<double> P;
  P.add("w.q", Tensor<double>::full({2}, 1.0));
  Grads<double> g;
  Tensor<double> bad({2});
  bad.v[1] = std::numeric_limits<double>::quiet_NaN();
  g.emplace("w.q", bad);
  try {
    opt.step(P, g, 1e-3);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("w.q") != std::string::npos);
  }
}

TEST_CASE("adamw: deterministic given identical state and gradients") {
  auto run = [] {
    AdamW<double> opt;
    Params<double> P;
    Rng rng(9);
    P.add("a", Tensor<double>::randn({6}, rng));
    Grads<double> g;
    g.emplace("a", Tensor<double>::randn({6}, rng));
    for (int s = 0; s < 5; ++s) opt.step(P, g, 3e-3);
    return P.at("a").v;
  };
  CHECK(run() == run());
}

TEST_CASE("lr schedule: ramp, cosine endpoint, cycle reset") {
  LRSchedule s;
  s.base_lr = 1.28e-4;
  s.warmup_steps = 2000;
  s.cycle_steps = 100000;
  s.reset_factor = 0.8;
  s.validate();
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 1000) == Catch::Approx(0.5 * s.base_lr).epsilon(1e-12));
  CHECK(lr_at(s, 2000) == Catch::Approx(s.base_lr).epsilon(1e-12));
  // cosine endpoint: final step of cycle 1 is ~0
  CHECK(lr_at(s, 99999) < 1e-3 * s.base_lr);
  // first step of cycle 2 restarts at 0.8x base with no ramp
  CHECK(lr_at(s, 100000) == Catch::Approx(0.8 * s.base_lr).epsilon(1e-12));
  // halfway through cycle 2: cos(pi/2) -> half of the reset base
  CHECK(lr_at(s, 150000) == Catch::Approx(0.4 * s.base_lr).margin(1e-17));
  CHECK(lr_at(s, 200000) == Catch::Approx(0.64 * s.base_lr).epsilon(1e-12));
  LRSchedule bad = s;
  bad.warmup_steps = s.cycle_steps;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("checkpoint: bit-exact round trip for f32 and f64") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "atlas_ckpt_test";
  fs::create_directories(dir);

  Params<float> Pf;
  Rng rng(17);
  Pf.add("net.w", Tensor<float>::randn({3, 4}, rng));
  Pf.add("net.b", Tensor<float>::randn({4}, rng));
  const auto path = (dir / "a.ckpt").string();
  save_checkpoint(path, Pf);
  auto back = load_checkpoint<float>(path);
  REQUIRE(back.t.size() == 2);
  CHECK(back.at("net.w").shape == Shape{3, 4});
  CHECK(back.at("net.w").v == Pf.at("net.w").v);  // bitwise
  CHECK(back.at("net.b").v == Pf.at("net.b").v);

  // writing twice produces byte-identical files
  const auto path2 = (dir / "b.ckpt").string();
  save_checkpoint(path2, Pf);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);

  Params<double> Pd;
  Pd.add("x", Tensor<double>::randn({7}, rng));
  const auto pathd = (dir / "d.ckpt").string();
  save_checkpoint(pathd, Pd);
  CHECK(load_checkpoint<double>(pathd).at("x").v == Pd.at("x").v);

  CHECK_THROWS_AS(load_checkpoint<float>((dir / "missing.ckpt").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("dataset container: round trip and header layout") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "atlas_data_test";
  fs::create_directories(dir);
  GridSpec g(5, 8);
  DatasetHeader h;
  h.channels = 2;
  h.grid = g;
  h.n_steps = 3;
  h.channel_names = {"u", "v"};
  std::vector<FieldTensor> frames;
  Rng rng(23);
  for (int s = 0; s < 3; ++s) {
    FieldTensor f(g, 2);
    for (auto& v : f.values.v) v = double(float(rng.normal()));  // f32-representable
    frames.push_back(std::move(f));
  }
  const auto path = (dir / "ou.atlsdata").string();
  write_dataset(path, h, frames);

  auto [h2, frames2] = read_dataset(path);
  CHECK(h2.channels == 2);
  CHECK(h2.grid == g);
  CHECK(h2.n_steps == 3);
  CHECK(h2.channel_names == h.channel_names);
  for (int s = 0; s < 3; ++s)
    CHECK(frames2[size_t(s)].values.v == frames[size_t(s)].values.v);

  // normative byte layout: magic + version/C/n_lat/n_lon/n_steps
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  is.read(magic, 8);
  CHECK(std::string(magic, 8) == "ATLSDATA");
  CHECK(io::read_u32(is) == 1u);  // version
  CHECK(io::read_u32(is) == 2u);  // channels
  CHECK(io::read_u32(is) == 5u);
  CHECK(io::read_u32(is) == 8u);
  CHECK(io::read_u32(is) == 3u);
  fs::remove_all(dir);
}

TEST_CASE("format_double round trips") {
  for (double v : {0.0, -1.5, 3.141592653589793, 1e-17, 123456.75}) {
    CHECK(std::stod(format_double(v)) == v);
  }
}
