#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "slingbag/model.hpp"
#include "slingbag/radiator.hpp"

namespace slingbag {

/// Per-stage settings of the iterative loop. Learning rates are plain
/// multipliers on the Adam step of each parameter group.
struct StageConfig {
  double lr_p0 = 0.05;
  double lr_a0 = 4e-5;
  double lr_pos = 0.0;
  std::size_t n_iters = 500;
  std::size_t density_interval = 100;  // iterations between density-control passes
  double destroy_p0_frac = 0.01;       // prune below this fraction of the current max p0
  double destroy_a0_min = kMinStdDev;  // prune below this standard deviation
  double split_a0_max = std::numeric_limits<double>::infinity();
  bool duplicate_enabled = false;
  bool pos_update_enabled = false;
  bool duplicate_halve_p0 = true;  // split energy between original and copy
};

/// Coarse stage: only (a0, p0) move, no duplication, no splitting by
/// default so positions stay bitwise frozen and the cloud never grows.
inline StageConfig coarse_stage_defaults() {
  StageConfig c;
  c.lr_p0 = 0.05;
  c.lr_a0 = 4e-5;
  c.lr_pos = 0.0;
  c.n_iters = 500;
  c.density_interval = 100;
  c.duplicate_enabled = false;
  c.pos_update_enabled = false;
  return c;
}

/// Fine stage: all five parameters move, duplication and splitting on.
/// split_a0_max defaults to 4x a 0.2 mm output grid spacing.
inline StageConfig fine_stage_defaults() {
  StageConfig f;
  f.lr_p0 = 4e-3;
  f.lr_a0 = 4e-6;
  f.lr_pos = 4e-6;
  f.n_iters = 500;
  f.density_interval = 200;
  f.split_a0_max = 4.0 * 0.2e-3;
  f.duplicate_enabled = true;
  f.pos_update_enabled = true;
  return f;
}

inline void validate(const StageConfig& s) {
  if (s.lr_p0 < 0.0 || s.lr_a0 < 0.0 || s.lr_pos < 0.0)
    throw std::invalid_argument("StageConfig: learning rates must be >= 0");
  if (s.density_interval < 1)
    throw std::invalid_argument("StageConfig: density_interval must be >= 1");
  if (!(s.destroy_p0_frac >= 0.0) || !(s.destroy_a0_min > 0.0) || !(s.split_a0_max > 0.0))
    throw std::invalid_argument("StageConfig: invalid density-control thresholds");
  // split children get half the parent's radius; this keeps them above the
  // destroy floor so a pass never creates sources it would prune next time
  if (s.split_a0_max < 2.0 * s.destroy_a0_min)
    throw std::invalid_argument("StageConfig: split_a0_max must be >= 2*destroy_a0_min");
}

/// Uniform random initialization over a field-of-view box and parameter
/// ranges. Deterministic for a fixed seed.
struct InitConfig {
  Vec3 bounds_min;
  Vec3 bounds_max;
  std::size_t n_points = 0;
  double p0_min = 0.0, p0_max = 1.0;
  double a0_min = kMinStdDev, a0_max = 0.5e-3;
  std::uint64_t rng_seed = 0;
};

inline void validate(const InitConfig& c) {
  if (c.n_points == 0) throw std::invalid_argument("InitConfig: n_points must be >= 1 (empty cloud forbidden)");
  if (!(c.bounds_max.x > c.bounds_min.x) || !(c.bounds_max.y > c.bounds_min.y) ||
      !(c.bounds_max.z > c.bounds_min.z))
    throw std::invalid_argument("InitConfig: bounds box is empty");
  if (!(c.p0_max >= c.p0_min)) throw std::invalid_argument("InitConfig: bad p0 range");
  if (!(c.a0_max >= c.a0_min) || !(c.a0_min >= kMinStdDev))
    throw std::invalid_argument("InitConfig: a0 range must lie within [50 µm, split_a0_max]");
}

inline PointCloud init_cloud(const InitConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(cfg.rng_seed);
  PointCloud cloud;
  cloud.sources.reserve(cfg.n_points);
  cloud.grads.reserve(cfg.n_points);
  for (std::size_t i = 0; i < cfg.n_points; ++i) {
    GaussianSource s;
    s.center.x = detail::uniform(rng, cfg.bounds_min.x, cfg.bounds_max.x);
    s.center.y = detail::uniform(rng, cfg.bounds_min.y, cfg.bounds_max.y);
    s.center.z = detail::uniform(rng, cfg.bounds_min.z, cfg.bounds_max.z);
    s.p0 = detail::uniform(rng, cfg.p0_min, cfg.p0_max);
    s.a0 = detail::uniform(rng, cfg.a0_min, cfg.a0_max);
    cloud.add(s);
  }
  return cloud;
}

struct LossResult {
  double loss = 0.0;      // sqrt of the summed squared entry differences
  SignalSet residual;     // dL/dpred, zero signal when loss is 0
};

/// L2 norm loss L = ||pred - obs||_2 and its gradient w.r.t. pred.
inline LossResult l2_loss(const SignalSet& pred, const SignalSet& obs) {
  if (pred.num_sensors != obs.num_sensors || pred.num_samples != obs.num_samples)
    throw std::invalid_argument("l2_loss: shape mismatch");
  LossResult out;
  out.residual = pred;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = pred.data[i] - obs.data[i];
    out.residual.data[i] = d;
    sum += d * d;
  }
  out.loss = std::sqrt(sum);
  if (out.loss > 0.0) {
    const double inv = 1.0 / out.loss;
    for (double& v : out.residual.data) v *= inv;
  } else {
    std::fill(out.residual.data.begin(), out.residual.data.end(), 0.0);
  }
  return out;
}

/// Adam first/second moment buffers, one 5-slot row per source, remapped in
/// lockstep with the cloud through density-control passes (children inherit
/// the parent's moments).
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  std::vector<Gradient5> m;
  std::vector<Gradient5> v;
  std::int64_t step_count = 0;

  explicit AdamState(std::size_t n = 0) : m(n, Gradient5{}), v(n, Gradient5{}) {}
  std::size_t size() const { return m.size(); }
};

/// One Adam update from cloud.grads. Position parameters (and their
/// moments) are untouched when pos_update_enabled is false. a0 is clamped
/// to the 50 µm validity floor; p0 may transiently go negative and is left
/// to the destroy pass.
inline void adam_step(PointCloud& cloud, AdamState& state, const StageConfig& stage) {
  validate(cloud);
  validate(stage);
  if (state.size() != cloud.size())
    throw std::invalid_argument("adam_step: state size does not match cloud");

  ++state.step_count;
  const double bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(state.step_count));
  const std::array<double, 5> lr = {stage.lr_pos, stage.lr_pos, stage.lr_pos, stage.lr_p0,
                                    stage.lr_a0};
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    std::array<double, 5> delta{};
    for (std::size_t p = 0; p < 5; ++p) {
      if (p < 3 && !stage.pos_update_enabled) continue;
      const double g = cloud.grads[i][p];
      double& m = state.m[i][p];
      double& v = state.v[i][p];
      m = AdamState::kBeta1 * m + (1.0 - AdamState::kBeta1) * g;
      v = AdamState::kBeta2 * v + (1.0 - AdamState::kBeta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      delta[p] = -lr[p] * m_hat / (std::sqrt(v_hat) + AdamState::kEps);
    }
    GaussianSource& s = cloud.sources[i];
    s.center.x += delta[0];
    s.center.y += delta[1];
    s.center.z += delta[2];
    s.p0 += delta[3];
    s.a0 = std::max(kMinStdDev, s.a0 + delta[4]);
  }
}

/// Outcome of one density-control pass.
struct DensityStats {
  std::size_t destroyed = 0;
  std::size_t split = 0;
  std::size_t duplicated = 0;
  bool kept_last_survivor = false;  // destroy would have emptied the cloud
};

namespace detail {

inline void apply_keep_mask(PointCloud& cloud, AdamState& state, const std::vector<char>& keep) {
  std::size_t w = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!keep[i]) continue;
    cloud.sources[w] = cloud.sources[i];
    cloud.grads[w] = cloud.grads[i];
    state.m[w] = state.m[i];
    state.v[w] = state.v[i];
    ++w;
  }
  cloud.sources.resize(w);
  cloud.grads.resize(w);
  state.m.resize(w);
  state.v.resize(w);
}

inline Vec3 position_gradient_direction(const Gradient5& g, bool* zero = nullptr) {
  const Vec3 gp{g[0], g[1], g[2]};
  const double n = norm(gp);
  if (n == 0.0) {
    if (zero) *zero = true;
    return Vec3{1.0, 0.0, 0.0};  // deterministic fallback axis
  }
  if (zero) *zero = false;
  return (1.0 / n) * gp;
}

}  // namespace detail

/// Prunes sources with p0 below destroy_p0_frac of the current maximum,
/// non-positive p0, or a0 below destroy_a0_min. Never empties the cloud:
/// if every source fails, the single highest-p0 source is kept (clamped to
/// the thresholds) and kept_last_survivor is flagged.
inline DensityStats destroy(PointCloud& cloud, AdamState& state, const StageConfig& stage) {
  validate(cloud);
  if (cloud.empty()) throw std::invalid_argument("destroy: cloud is empty");

  double max_p0 = -std::numeric_limits<double>::infinity();
  std::size_t argmax = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.sources[i].p0 > max_p0) {
      max_p0 = cloud.sources[i].p0;
      argmax = i;
    }
  }
  const double threshold = stage.destroy_p0_frac * max_p0;
  std::vector<char> keep(cloud.size());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const GaussianSource& s = cloud.sources[i];
    keep[i] = s.p0 > 0.0 && s.p0 >= threshold && s.a0 >= stage.destroy_a0_min;
    kept += keep[i] ? 1 : 0;
  }

  DensityStats stats;
  if (kept == 0) {
    keep[argmax] = 1;
    GaussianSource& s = cloud.sources[argmax];
    s.p0 = std::max(0.0, s.p0);
    s.a0 = std::max(stage.destroy_a0_min, s.a0);
    kept = 1;
    stats.kept_last_survivor = true;
  }
  stats.destroyed = cloud.size() - kept;
  detail::apply_keep_mask(cloud, state, keep);
  return stats;
}

/// Replaces each source with a0 > split_a0_max by two children with half
/// the radius and the same p0, displaced +-(a0/2) along the unit position
/// gradient (+x when the gradient is zero). Children inherit the parent's
/// Adam moments.
inline DensityStats split(PointCloud& cloud, AdamState& state, const StageConfig& stage) {
  validate(cloud);
  DensityStats stats;
  PointCloud out;
  AdamState out_state;
  out_state.step_count = state.step_count;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const GaussianSource& s = cloud.sources[i];
    if (s.a0 > stage.split_a0_max) {
      const Vec3 dir = detail::position_gradient_direction(cloud.grads[i]);
      const Vec3 offset = (0.5 * s.a0) * dir;
      for (const Vec3& c : {s.center + offset, s.center - offset}) {
        out.sources.push_back(GaussianSource{c, s.p0, 0.5 * s.a0});
        out.grads.push_back(cloud.grads[i]);
        out_state.m.push_back(state.m[i]);
        out_state.v.push_back(state.v[i]);
      }
      ++stats.split;
    } else {
      out.sources.push_back(s);
      out.grads.push_back(cloud.grads[i]);
      out_state.m.push_back(state.m[i]);
      out_state.v.push_back(state.v[i]);
    }
  }
  cloud = std::move(out);
  state = std::move(out_state);
  return stats;
}

/// Appends, for every source with a nonzero position gradient, a copy
/// displaced by a0/2 along the descent direction (-gradient). When
/// duplicate_halve_p0 is set, original and copy each keep half the
/// pressure so the superposed energy near the site is preserved.
inline DensityStats duplicate(PointCloud& cloud, AdamState& state, const StageConfig& stage) {
  validate(cloud);
  DensityStats stats;
  const std::size_t n = cloud.size();
  for (std::size_t i = 0; i < n; ++i) {
    bool zero_grad = false;
    const Vec3 dir = detail::position_gradient_direction(cloud.grads[i], &zero_grad);
    if (zero_grad) continue;
    GaussianSource& orig = cloud.sources[i];
    if (stage.duplicate_halve_p0) orig.p0 *= 0.5;
    GaussianSource copy = orig;
    copy.center = orig.center - (0.5 * orig.a0) * dir;
    cloud.sources.push_back(copy);
    cloud.grads.push_back(cloud.grads[i]);
    state.m.push_back(state.m[i]);
    state.v.push_back(state.v[i]);
    ++stats.duplicated;
  }
  return stats;
}

/// Per-iteration progress record sink: (iteration, loss, cloud size).
using ProgressSink = std::function<void(std::size_t, double, std::size_t)>;

/// Full iterative reconstruction: random init, coarse stage on (a0, p0),
/// fine stage on all five parameters with duplication, density control in
/// both stages. A stage ends when its iteration budget is exhausted or the
/// relative loss improvement over a 50-iteration window drops below 1e-5.
/// The window restarts after each density-control pass since those
/// restructure the cloud and bump the loss.
inline PointCloud reconstruct(const SignalSet& obs, const SensorArray& array,
                              const Medium& medium, const InitConfig& init,
                              const StageConfig& coarse, const StageConfig& fine,
                              const RadiatorConfig& rad_cfg, const ProgressSink& sink = {}) {
  validate(array);
  validate(medium);
  validate(init);
  validate(coarse);
  validate(fine);
  validate(rad_cfg);
  if (!shape_matches(obs, array))
    throw std::invalid_argument("reconstruct: observed signals do not match sensor array");
  if (init.a0_max > coarse.split_a0_max || init.a0_max > fine.split_a0_max)
    throw std::invalid_argument("reconstruct: init a0 range exceeds split_a0_max");

  constexpr std::size_t kWindow = 50;
  constexpr double kRelImprovement = 1e-5;

  PointCloud cloud = init_cloud(init);
  AdamState state(cloud.size());

  std::size_t global_iter = 0;
  for (const StageConfig* stage : {&coarse, &fine}) {
    std::vector<double> window;  // losses since the last density pass
    for (std::size_t it = 1; it <= stage->n_iters; ++it) {
      ++global_iter;
      SignalSet pred = forward(cloud, array, medium, rad_cfg);
      LossResult lr = l2_loss(pred, obs);
      if (!std::isfinite(lr.loss))
        throw std::runtime_error("reconstruct: loss became non-finite at iteration " +
                                 std::to_string(global_iter));
      backward(cloud, array, medium, rad_cfg, lr.residual);
      adam_step(cloud, state, *stage);

      window.push_back(lr.loss);
      bool converged = false;
      if (window.size() > kWindow) {
        const double prev = window[window.size() - 1 - kWindow];
        const double cur = window.back();
        converged = prev > 0.0 ? (prev - cur) / prev < kRelImprovement : cur == 0.0;
      }
      if (!converged && it % stage->density_interval == 0 && it != stage->n_iters) {
        destroy(cloud, state, *stage);
        split(cloud, state, *stage);
        if (stage->duplicate_enabled) duplicate(cloud, state, *stage);
        window.clear();
      }
      if (sink) sink(global_iter, lr.loss, cloud.size());
      if (converged) break;
    }
  }
  // Cleanup so the returned cloud satisfies the p0 >= 0 invariant (steps may
  // leave transiently negative pressures between density passes).
  destroy(cloud, state, fine);
  return cloud;
}

}  // namespace slingbag
