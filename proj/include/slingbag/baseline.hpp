#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "slingbag/model.hpp"
#include "slingbag/parallel.hpp"
#include "slingbag/shader.hpp"

namespace slingbag {

struct UbpOptions {
  /// Weight each sensor's contribution by |cos theta| / R^2 (needs element
  /// normals on the array); default is uniform weighting.
  bool solid_angle_weighting = false;
};

/// Universal back-projection result. `grid` holds the display volume with
/// negative values clamped to zero; `raw` keeps the signed voxel values in
/// the same layout for quantitative use.
struct UbpResult {
  VoxelGrid grid;
  std::vector<double> raw;
};

/// Back-projects the filtered term b(t) = 2 p(t) - 2 t dp/dt, evaluated at
/// the time of flight t = |r - r_sensor| / v_s with linear interpolation
/// between samples (dp/dt by central differences, one-sided at the ends).
/// Times of flight outside the recorded window contribute nothing.
///
/// Parallel over x-slabs; per voxel, sensors accumulate in index order, so
/// the output is bit-reproducible for any worker count.
inline UbpResult ubp_reconstruct(const SignalSet& obs, const SensorArray& array,
                                 const GridSpec& spec, const Medium& medium,
                                 const UbpOptions& options = {}) {
  validate(array);
  validate(medium);
  validate(spec);
  if (!shape_matches(obs, array))
    throw std::invalid_argument("ubp_reconstruct: signals do not match sensor array");
  if (options.solid_angle_weighting && array.normals.empty())
    throw std::invalid_argument("ubp_reconstruct: solid-angle weighting needs element normals");

  const std::size_t ns = obs.num_sensors;
  const std::size_t nt = obs.num_samples;
  const double fs = obs.sample_rate;
  const double vs = medium.sound_speed;

  // Filtered traces b[s][k] = 2 p - 2 t dp/dt.
  std::vector<double> filtered(ns * nt);
  for (std::size_t s = 0; s < ns; ++s) {
    const double* p = obs.row(s);
    double* b = filtered.data() + s * nt;
    for (std::size_t k = 0; k < nt; ++k) {
      double dpdt;
      if (k == 0)
        dpdt = (p[1] - p[0]) * fs;
      else if (k == nt - 1)
        dpdt = (p[nt - 1] - p[nt - 2]) * fs;
      else
        dpdt = (p[k + 1] - p[k - 1]) * (0.5 * fs);
      const double t = obs.t_start + static_cast<double>(k) / fs;
      b[k] = 2.0 * p[k] - 2.0 * t * dpdt;
    }
  }

  UbpResult out;
  out.grid.origin = spec.origin;
  out.grid.spacing = spec.spacing;
  out.grid.dims = spec.dims;
  out.grid.values.assign(out.grid.voxel_count(), 0.0);
  out.raw.assign(out.grid.voxel_count(), 0.0);

  VoxelGrid& grid = out.grid;
  par::parallel_for(spec.dims[0], [&](std::size_t x_begin, std::size_t x_end) {
    for (std::size_t ix = x_begin; ix < x_end; ++ix) {
      for (std::size_t iy = 0; iy < spec.dims[1]; ++iy) {
        for (std::size_t iz = 0; iz < spec.dims[2]; ++iz) {
          const Vec3 node = grid.node_position(ix, iy, iz);
          double acc = 0.0;
          double weight_sum = 0.0;
          for (std::size_t s = 0; s < ns; ++s) {
            const Vec3 d = node - array.positions[s];
            const double R = norm(d);
            const double tof = R / vs;
            const double tau = (tof - obs.t_start) * fs;
            double weight = 1.0;
            if (options.solid_angle_weighting) {
              const double cos_theta = R > 0.0 ? std::abs(dot(array.normals[s], d)) / R : 1.0;
              weight = cos_theta / std::max(R * R, spec.spacing * spec.spacing);
            }
            weight_sum += weight;
            if (tau < 0.0 || tau > static_cast<double>(nt - 1)) continue;  // outside window
            const std::size_t k0 = static_cast<std::size_t>(tau);
            const std::size_t k1 = std::min(nt - 1, k0 + 1);
            const double frac = tau - static_cast<double>(k0);
            const double* b = filtered.data() + s * nt;
            acc += weight * ((1.0 - frac) * b[k0] + frac * b[k1]);
          }
          const double value = weight_sum > 0.0 ? acc / weight_sum : 0.0;
          const std::size_t idx = grid.index(ix, iy, iz);
          out.raw[idx] = value;
          grid.values[idx] = std::max(0.0, value);
        }
      }
    }
  });
  return out;
}

}  // namespace slingbag
