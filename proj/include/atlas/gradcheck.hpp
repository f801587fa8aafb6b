#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "atlas/graph.hpp"
#include "atlas/rng.hpp"

namespace atlas {

/// One finite-difference check: a named scalar function of a set of input
/// tensors, built on a fresh double-precision graph per evaluation.
struct GradCheckCase {
  std::string name;
  std::vector<Tensor<double>> inputs;
  // builds the loss; ids[i] corresponds to inputs[i]
  std::function<Graph<double>::Id(Graph<double>&, const std::vector<Graph<double>::Id>&)> loss;
};

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool passed = false;
};

/// Central finite differences against the tape gradients.
/// err = |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
inline GradCheckResult run_grad_check(const GradCheckCase& c, double eps = 1e-5,
                                      double tol = 1e-5) {
  auto eval = [&](const std::vector<Tensor<double>>& ins, bool want_grads,
                  std::vector<Tensor<double>>* grads) -> double {
    Graph<double> g(want_grads);
    std::vector<Graph<double>::Id> ids;
    for (const auto& t : ins) ids.push_back(g.input_grad(t));
    const auto root = c.loss(g, ids);
    const double out = g.val(root).v[0];
    if (want_grads) {
      g.backward(root);
      grads->clear();
      for (auto id : ids) {
        Tensor<double> gr = g.grad_of(id);
        if (gr.numel() == 0) gr = Tensor<double>(g.val(id).shape);
        grads->push_back(std::move(gr));
      }
    }
    return out;
  };

  std::vector<Tensor<double>> grads;
  eval(c.inputs, true, &grads);

  GradCheckResult res;
  res.name = c.name;
  std::vector<Tensor<double>> work = c.inputs;
  for (size_t t = 0; t < work.size(); ++t) {
    for (int64_t i = 0; i < work[t].numel(); ++i) {
      const double orig = work[t].v[size_t(i)];
      work[t].v[size_t(i)] = orig + eps;
      const double fp = eval(work, false, nullptr);
      work[t].v[size_t(i)] = orig - eps;
      const double fm = eval(work, false, nullptr);
      work[t].v[size_t(i)] = orig;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = grads[t].v[size_t(i)];
      const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
      res.max_rel_err = std::max(res.max_rel_err, err);
    }
  }
  res.passed = res.max_rel_err < tol;
  return res;
}

/// The primitive registry: every differentiable op with a random small-input
/// check. Outputs are contracted to a scalar through a fixed random weight so
/// the loss is sensitive to every output element.
inline std::vector<GradCheckCase> primitive_grad_checks(uint64_t seed = 2024) {
  std::vector<GradCheckCase> cases;
  Rng root(seed);

  auto weight_for = [](const Shape& s, uint64_t tag) {
    Rng r(tag * 7919 + 13);
    return std::make_shared<const Tensor<double>>(Tensor<double>::randn(s, r));
  };
  auto rt = [&](Shape s) {
    return Tensor<double>::randn(std::move(s), root);
  };
  using G = Graph<double>;
  using Ids = std::vector<G::Id>;

  auto contract = [weight_for](G& g, G::Id x, uint64_t tag) {
    return g.dot_const(x, weight_for(g.val(x).shape, tag));
  };

  cases.push_back({"matmul", {rt({4, 3}), rt({3, 5})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.matmul(in[0], in[1]), 1);
                   }});
  cases.push_back({"linear", {rt({2, 4, 3}), rt({3, 5}), rt({5})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.linear(in[0], in[1], in[2]), 2);
                   }});
  cases.push_back({"patch_conv_2x2", {rt({2, 2, 4, 4}), rt({3, 8}), rt({3})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.patch_conv(in[0], in[1], in[2], 2, 2, 2, 2), 3);
                   }});
  cases.push_back({"patch_conv_overlap", {rt({1, 2, 4, 4}), rt({2, 18}), rt({2})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.patch_conv(in[0], in[1], in[2], 3, 3, 1, 1), 4);
                   }});
  cases.push_back({"conv_1x1", {rt({1, 3, 2, 4}), rt({5, 3}), rt({5})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.patch_conv(in[0], in[1], in[2], 1, 1, 1, 1), 5);
                   }});
  cases.push_back({"layer_norm", {rt({3, 8})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.layer_norm(in[0]), 6);
                   }});
  cases.push_back({"softmax", {rt({4, 6})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.softmax(in[0]), 7);
                   }});
  cases.push_back({"attention_global", {rt({2, 4, 6}), rt({2, 4, 6}), rt({2, 4, 6})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.attention(in[0], in[1], in[2], 2), 8);
                   }});
  {
    // 4-token ring, each attends to itself and both neighbours
    auto nb = std::make_shared<const std::vector<int>>(std::vector<int>{
        3, 0, 1, 0, 1, 2, 1, 2, 3, 2, 3, 0});
    cases.push_back({"attention_local", {rt({2, 4, 6}), rt({2, 4, 6}), rt({2, 4, 6})},
                     [=](G& g, const Ids& in) {
                       return contract(g, g.attention(in[0], in[1], in[2], 2, nb, 3), 9);
                     }});
  }
  cases.push_back({"silu", {rt({10})},
                   [=](G& g, const Ids& in) { return contract(g, g.silu(in[0]), 10); }});
  cases.push_back({"gelu", {rt({10})},
                   [=](G& g, const Ids& in) { return contract(g, g.gelu(in[0]), 11); }});
  cases.push_back({"add", {rt({7}), rt({7})},
                   [=](G& g, const Ids& in) { return contract(g, g.add(in[0], in[1]), 12); }});
  cases.push_back({"sub", {rt({7}), rt({7})},
                   [=](G& g, const Ids& in) { return contract(g, g.sub(in[0], in[1]), 13); }});
  cases.push_back({"mul", {rt({7}), rt({7})},
                   [=](G& g, const Ids& in) { return contract(g, g.mul(in[0], in[1]), 14); }});
  cases.push_back({"scale_shift", {rt({9})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.add_scalar(g.scale(in[0], 1.7), -0.3), 15);
                   }});
  cases.push_back({"modulate", {rt({2, 3, 4}), rt({2, 4}), rt({2, 4})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.modulate(in[0], in[1], in[2]), 16);
                   }});
  cases.push_back({"gate_add", {rt({2, 3, 4}), rt({2, 4}), rt({2, 3, 4})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.gate_add(in[0], in[1], in[2]), 17);
                   }});
  cases.push_back({"slice_concat", {rt({3, 6}), rt({3, 2})},
                   [=](G& g, const Ids& in) {
                     auto s = g.slice_last(in[0], 1, 4);
                     return contract(g, g.concat_last(s, in[1]), 18);
                   }});
  {
    auto idx = std::make_shared<const std::vector<int64_t>>(
        std::vector<int64_t>{0, 2, 2, 5, 1, 4});
    cases.push_back({"gather_cols", {rt({2, 6})},
                     [=](G& g, const Ids& in) {
                       return contract(g, g.gather_cols(in[0], idx, {6}), 19);
                     }});
  }
  cases.push_back({"hypot_pairs", {rt({3, 8})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.hypot_pairs(in[0]), 20);
                   }});
  cases.push_back({"abs_sum", {rt({9})},
                   [=](G& g, const Ids& in) { return g.sum_all(g.abs(in[0])); }});
  cases.push_back({"square_mean", {rt({9})},
                   [=](G& g, const Ids& in) { return g.mean_all(g.square(in[0])); }});
  cases.push_back({"reshape_sum", {rt({2, 6})},
                   [=](G& g, const Ids& in) {
                     return contract(g, g.reshape(in[0], {3, 4}), 21);
                   }});
  cases.push_back({"add_bcast", {rt({2, 3, 4})},
                   [&root, contract](G& g, const Ids& in) {
                     Rng r(55);
                     auto pe = Tensor<double>::randn({3, 4}, r);
                     return contract(g, g.add_bcast_const(in[0], pe), 22);
                   }});
  return cases;
}

}  // namespace atlas
