#pragma once

#include <cmath>
#include <map>
#include <string>

#include "atlas/graph.hpp"

namespace atlas {

/// AdamW plus per-tensor update-RMS clipping (the stabilized variant).
struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-6;
  double weight_decay = 0.01;
  double update_clip = 1.0;  // RMS threshold on the Adam update
};

template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  /// One optimizer step: decoupled weight decay, bias-corrected moments,
  /// update-RMS clip. Missing gradients are treated as zero (the decay still
  /// applies). Deterministic given identical state and gradients.
  void step(Params<T>& params, const Grads<T>& grads, double lr) {
    ATLAS_REQUIRE(lr >= 0.0, "negative learning rate");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (auto& [name, p] : params.t) {
      auto& st = state_[name];
      if (st.m.numel() == 0) {
        st.m = Tensor<T>(p.shape);
        st.v = Tensor<T>(p.shape);
      }
      const Tensor<T>* g = nullptr;
      if (auto it = grads.find(name); it != grads.end()) {
        ATLAS_REQUIRE(it->second.all_finite(),
                      "non-finite gradient for parameter '" << name << "'");
        g = &it->second;
      }
      const int64_t n = p.numel();
      // moments and raw update
      std::vector<double> u(static_cast<size_t>(n));
      double sumsq = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double gi = g ? double(g->v[size_t(i)]) : 0.0;
        double m = cfg_.beta1 * double(st.m.v[size_t(i)]) + (1.0 - cfg_.beta1) * gi;
        double v = cfg_.beta2 * double(st.v.v[size_t(i)]) + (1.0 - cfg_.beta2) * gi * gi;
        st.m.v[size_t(i)] = T(m);
        st.v.v[size_t(i)] = T(v);
        const double ui = (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps);
        u[size_t(i)] = ui;
        sumsq += ui * ui;
      }
      const double rms = std::sqrt(sumsq / double(n));
      const double clip =
          (cfg_.update_clip > 0.0 && rms > cfg_.update_clip) ? cfg_.update_clip / rms : 1.0;
      for (int64_t i = 0; i < n; ++i) {
        const double pi = double(p.v[size_t(i)]);
        p.v[size_t(i)] = T(pi - lr * (clip * u[size_t(i)] + cfg_.weight_decay * pi));
      }
    }
  }

 private:
  struct State {
    Tensor<T> m, v;
  };
  AdamWConfig cfg_;
  std::map<std::string, State> state_;
  int64_t step_ = 0;
};

/// Warmup + cosine cycles. The linear ramp applies only in cycle one; each
/// later cycle restarts the cosine from base_lr * reset_factor^cycle.
struct LRSchedule {
  double base_lr = 1.28e-4;
  int64_t warmup_steps = 2000;
  int64_t cycle_steps = 100000;
  double reset_factor = 0.8;

  void validate() const {
    ATLAS_REQUIRE(reset_factor > 0.0 && reset_factor <= 1.0,
                  "reset_factor must be in (0, 1]");
    ATLAS_REQUIRE(warmup_steps < cycle_steps, "warmup must be shorter than a cycle");
  }
};

inline double lr_at(const LRSchedule& s, int64_t step) {
  ATLAS_REQUIRE(step >= 0, "negative step");
  const int64_t cycle = step / s.cycle_steps;
  const int64_t pos = step % s.cycle_steps;
  const double base = s.base_lr * std::pow(s.reset_factor, double(cycle));
  if (cycle == 0) {
    if (pos < s.warmup_steps)
      return s.base_lr * double(pos) / double(s.warmup_steps);
    const double prog = double(pos - s.warmup_steps) / double(s.cycle_steps - s.warmup_steps);
    return base * 0.5 * (1.0 + std::cos(kPi * prog));
  }
  const double prog = double(pos) / double(s.cycle_steps);
  return base * 0.5 * (1.0 + std::cos(kPi * prog));
}

}  // namespace atlas
