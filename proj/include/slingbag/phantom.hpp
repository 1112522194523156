#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slingbag/model.hpp"
#include "slingbag/optimizer.hpp"

namespace slingbag {

enum class PhantomKind { Points, Tubes, Helix };

inline PhantomKind phantom_kind_from_string(const std::string& s) {
  if (s == "points") return PhantomKind::Points;
  if (s == "tubes") return PhantomKind::Tubes;
  if (s == "helix") return PhantomKind::Helix;
  throw std::invalid_argument("unknown phantom kind '" + s + "' (points, tubes or helix)");
}

/// Synthetic scene parameters. `points` scatters n random sources in a box;
/// `tubes` places sources at ds-spaced steps along straight segments;
/// `helix` follows a helical curve at ds arc-length steps.
struct PhantomParams {
  PhantomKind kind = PhantomKind::Points;

  // points
  Vec3 bounds_min{-5e-3, -5e-3, -5e-3};
  Vec3 bounds_max{5e-3, 5e-3, 5e-3};
  std::size_t n_points = 20;
  double p0_min = 0.5, p0_max = 1.0;
  double a0_min = 0.2e-3, a0_max = 0.4e-3;

  // tubes / helix
  std::vector<std::pair<Vec3, Vec3>> segments;
  double ds = 0.5e-3;
  double p0 = 1.0;
  double a0 = 0.3e-3;

  // helix
  Vec3 helix_center;
  double helix_radius = 3e-3;
  double helix_pitch = 2e-3;  // z advance per turn
  double helix_turns = 2.0;
};

inline PointCloud make_phantom(const PhantomParams& params, std::uint64_t seed) {
  PointCloud cloud;
  switch (params.kind) {
    case PhantomKind::Points: {
      InitConfig cfg;
      cfg.bounds_min = params.bounds_min;
      cfg.bounds_max = params.bounds_max;
      cfg.n_points = params.n_points;
      cfg.p0_min = params.p0_min;
      cfg.p0_max = params.p0_max;
      cfg.a0_min = params.a0_min;
      cfg.a0_max = params.a0_max;
      cfg.rng_seed = seed;
      cloud = init_cloud(cfg);
      break;
    }
    case PhantomKind::Tubes: {
      if (params.segments.empty())
        throw std::invalid_argument("make_phantom: tubes phantom needs at least one segment");
      if (!(params.ds > 0.0)) throw std::invalid_argument("make_phantom: ds must be > 0");
      for (const auto& [a, b] : params.segments) {
        const Vec3 d = b - a;
        const double len = norm(d);
        if (len == 0.0) throw std::invalid_argument("make_phantom: zero-length segment");
        const Vec3 unit = (1.0 / len) * d;
        // +1e-9 absorbs representation error in len/ds so exact multiples count
        const auto steps = static_cast<std::size_t>(std::floor(len / params.ds + 1e-9));
        for (std::size_t j = 0; j <= steps; ++j) {
          const Vec3 c = a + (static_cast<double>(j) * params.ds) * unit;
          cloud.add(GaussianSource{c, params.p0, params.a0});
        }
      }
      break;
    }
    case PhantomKind::Helix: {
      if (!(params.ds > 0.0)) throw std::invalid_argument("make_phantom: ds must be > 0");
      if (!(params.helix_radius > 0.0) || !(params.helix_turns > 0.0))
        throw std::invalid_argument("make_phantom: bad helix parameters");
      const double dz_dtheta = params.helix_pitch / (2.0 * std::numbers::pi);
      const double speed = std::hypot(params.helix_radius, dz_dtheta);  // arc length per radian
      const double theta_end = params.helix_turns * 2.0 * std::numbers::pi;
      const double dtheta = params.ds / speed;
      for (double theta = 0.0; theta <= theta_end + 1e-12; theta += dtheta) {
        const Vec3 c = params.helix_center + Vec3{params.helix_radius * std::cos(theta),
                                                  params.helix_radius * std::sin(theta),
                                                  dz_dtheta * theta};
        cloud.add(GaussianSource{c, params.p0, params.a0});
      }
      break;
    }
  }
  if (cloud.empty()) throw std::invalid_argument("make_phantom: produced an empty cloud");
  return cloud;
}

}  // namespace slingbag
