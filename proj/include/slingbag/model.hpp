#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slingbag/core.hpp"

namespace slingbag {

/// Smallest physically meaningful source standard deviation (50 µm); the
/// smooth-step approximation degrades below this scale.
inline constexpr double kMinStdDev = 50e-6;

/// Homogeneous, non-viscous propagation medium.
struct Medium {
  double sound_speed = 1500.0;  // m/s
};

inline void validate(const Medium& m) {
  if (!(m.sound_speed > 0.0) || !std::isfinite(m.sound_speed))
    throw std::invalid_argument("Medium: sound_speed must be positive and finite");
}

/// One point of the cloud: a spherical source with Gaussian radial profile.
/// p0 is the peak pressure (arbitrary linear units), a0 the standard
/// deviation (meters), center the mean position.
struct GaussianSource {
  Vec3 center;
  double p0 = 0.0;
  double a0 = kMinStdDev;
};

/// Gradient slot layout: dL/dx, dL/dy, dL/dz, dL/dp0, dL/da0.
using Gradient5 = std::array<double, 5>;

/// Dynamic source collection plus parallel per-source gradient slots.
/// sources and grads always have equal length; single writer.
struct PointCloud {
  std::vector<GaussianSource> sources;
  std::vector<Gradient5> grads;

  std::size_t size() const { return sources.size(); }
  bool empty() const { return sources.empty(); }

  void add(const GaussianSource& s) {
    sources.push_back(s);
    grads.push_back(Gradient5{});
  }

  void clear_grads() {
    for (auto& g : grads) g.fill(0.0);
  }
};

inline void validate(const PointCloud& c) {
  if (c.sources.size() != c.grads.size())
    throw std::invalid_argument("PointCloud: sources/grads length mismatch");
}

/// Planar-grid provenance kept by make_planar_array so the array can be
/// undersampled later. pitch and counts describe the current grid.
struct PlanarGridInfo {
  std::size_t nx = 0;
  std::size_t ny = 0;
  double pitch = 0.0;
  Axis normal = Axis::Z;
  Vec3 center;
};

/// Sensor positions plus the temporal sampling description shared by all
/// channels. normals is optional metadata (used by solid-angle weighting);
/// empty means unknown.
struct SensorArray {
  std::vector<Vec3> positions;
  double sample_rate = 40e6;      // Hz
  std::size_t num_samples = 4096; // per channel
  double t_start = 0.0;           // s, time of first sample (laser fire = 0)
  std::optional<PlanarGridInfo> grid;
  std::vector<Vec3> normals;

  double sample_time(std::size_t k) const {
    return t_start + static_cast<double>(k) / sample_rate;
  }
};

inline void validate(const SensorArray& a) {
  if (a.positions.empty()) throw std::invalid_argument("SensorArray: no sensors");
  for (const auto& p : a.positions)
    if (!is_finite(p)) throw std::invalid_argument("SensorArray: non-finite sensor position");
  if (!(a.sample_rate > 0.0)) throw std::invalid_argument("SensorArray: sample_rate must be > 0");
  if (a.num_samples < 2) throw std::invalid_argument("SensorArray: num_samples must be >= 2");
  if (!a.normals.empty() && a.normals.size() != a.positions.size())
    throw std::invalid_argument("SensorArray: normals/positions length mismatch");
}

/// sensors x samples matrix of pressure traces, row-major per sensor.
struct SignalSet {
  std::size_t num_sensors = 0;
  std::size_t num_samples = 0;
  double sample_rate = 0.0;
  double t_start = 0.0;
  std::vector<double> data;  // num_sensors * num_samples

  double& at(std::size_t sensor, std::size_t sample) {
    return data[sensor * num_samples + sample];
  }
  double at(std::size_t sensor, std::size_t sample) const {
    return data[sensor * num_samples + sample];
  }
  double* row(std::size_t sensor) { return data.data() + sensor * num_samples; }
  const double* row(std::size_t sensor) const { return data.data() + sensor * num_samples; }
};

/// Zero-filled SignalSet shaped for `array`.
inline SignalSet make_signal_set(const SensorArray& array) {
  SignalSet s;
  s.num_sensors = array.positions.size();
  s.num_samples = array.num_samples;
  s.sample_rate = array.sample_rate;
  s.t_start = array.t_start;
  s.data.assign(s.num_sensors * s.num_samples, 0.0);
  return s;
}

inline bool shape_matches(const SignalSet& s, const SensorArray& a) {
  return s.num_sensors == a.positions.size() && s.num_samples == a.num_samples;
}

/// Isotropic voxel grid, the final visualization/scoring form.
/// values layout: index = (ix*ny + iy)*nz + iz.
struct VoxelGrid {
  Vec3 origin;
  double spacing = 0.0;
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<double> values;

  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return (ix * dims[1] + iy) * dims[2] + iz;
  }
  Vec3 node_position(std::size_t ix, std::size_t iy, std::size_t iz) const {
    return {origin.x + static_cast<double>(ix) * spacing,
            origin.y + static_cast<double>(iy) * spacing,
            origin.z + static_cast<double>(iz) * spacing};
  }
};

inline void validate(const VoxelGrid& g) {
  if (!(g.spacing > 0.0)) throw std::invalid_argument("VoxelGrid: spacing must be > 0");
  if (g.values.size() != g.voxel_count())
    throw std::invalid_argument("VoxelGrid: values size does not match dims");
  for (double v : g.values) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("VoxelGrid: values must be finite and non-negative");
  }
}

namespace detail {

// In-plane axes for a grid perpendicular to `normal`, cyclic order:
// X -> (y,z), Y -> (z,x), Z -> (x,y).
inline std::pair<Axis, Axis> plane_axes(Axis normal) {
  switch (normal) {
    case Axis::X: return {Axis::Y, Axis::Z};
    case Axis::Y: return {Axis::Z, Axis::X};
    case Axis::Z: return {Axis::X, Axis::Y};
  }
  return {Axis::X, Axis::Y};
}

inline double& component(Vec3& v, Axis a) {
  switch (a) {
    case Axis::X: return v.x;
    case Axis::Y: return v.y;
    case Axis::Z: return v.z;
  }
  return v.x;
}

inline double component(const Vec3& v, Axis a) {
  switch (a) {
    case Axis::X: return v.x;
    case Axis::Y: return v.y;
    case Axis::Z: return v.z;
  }
  return v.x;
}

inline Vec3 axis_unit(Axis a) {
  Vec3 u;
  component(u, a) = 1.0;
  return u;
}

}  // namespace detail

/// Regular nx x ny sensor grid centered at `center`, lying in the plane
/// perpendicular to `normal_axis`. Element order is row-major over
/// (in-plane axis 1, in-plane axis 2); grid extent per axis is (n-1)*pitch.
inline SensorArray make_planar_array(std::size_t nx, std::size_t ny, double pitch,
                                     const Vec3& center, Axis normal_axis) {
  if (nx < 1 || ny < 1) throw std::invalid_argument("make_planar_array: nx, ny must be >= 1");
  if (!(pitch > 0.0)) throw std::invalid_argument("make_planar_array: pitch must be > 0");
  if (!is_finite(center)) throw std::invalid_argument("make_planar_array: non-finite center");

  const auto [u_axis, v_axis] = detail::plane_axes(normal_axis);
  SensorArray array;
  array.positions.reserve(nx * ny);
  array.normals.reserve(nx * ny);
  const double u0 = -0.5 * static_cast<double>(nx - 1) * pitch;
  const double v0 = -0.5 * static_cast<double>(ny - 1) * pitch;
  for (std::size_t ix = 0; ix < nx; ++ix) {
    for (std::size_t iy = 0; iy < ny; ++iy) {
      Vec3 p = center;
      detail::component(p, u_axis) += u0 + static_cast<double>(ix) * pitch;
      detail::component(p, v_axis) += v0 + static_cast<double>(iy) * pitch;
      array.positions.push_back(p);
      array.normals.push_back(detail::axis_unit(normal_axis));
    }
  }
  array.grid = PlanarGridInfo{nx, ny, pitch, normal_axis, center};
  return array;
}

/// Keeps every stride-th sensor along both grid axes (indices 0, stride,
/// 2*stride, ...); resulting pitch is stride times the original.
inline SensorArray undersample_planar(const SensorArray& array, std::size_t stride) {
  if (!array.grid)
    throw std::invalid_argument("undersample_planar: array has no planar grid layout");
  const PlanarGridInfo& g = *array.grid;
  if (stride < 1 || stride > g.nx || stride > g.ny)
    throw std::invalid_argument("undersample_planar: stride " + std::to_string(stride) +
                                " incompatible with " + std::to_string(g.nx) + "x" +
                                std::to_string(g.ny) + " grid");

  SensorArray out = array;
  out.positions.clear();
  out.normals.clear();
  std::size_t kept_x = 0;
  for (std::size_t ix = 0; ix < g.nx; ix += stride) {
    ++kept_x;
    for (std::size_t iy = 0; iy < g.ny; iy += stride) {
      const std::size_t idx = ix * g.ny + iy;
      out.positions.push_back(array.positions[idx]);
      if (!array.normals.empty()) out.normals.push_back(array.normals[idx]);
    }
  }
  std::size_t kept_y = (g.ny + stride - 1) / stride;
  out.grid = PlanarGridInfo{kept_x, kept_y, g.pitch * static_cast<double>(stride), g.normal,
                            g.center};
  return out;
}

/// n sensors on a hemisphere of the given radius about `center`, placed on a
/// deterministic Fibonacci spiral (golden-angle azimuth, uniform polar
/// steps). Default is the lower hemisphere (-z apex); the apex itself is
/// always included, so n=1 degenerates to the pole. normals point inward.
inline SensorArray make_hemispherical_array(std::size_t n, double radius, const Vec3& center,
                                            bool upper = false) {
  if (n < 1) throw std::invalid_argument("make_hemispherical_array: n must be >= 1");
  if (!(radius > 0.0)) throw std::invalid_argument("make_hemispherical_array: radius must be > 0");
  if (!is_finite(center)) throw std::invalid_argument("make_hemispherical_array: non-finite center");

  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  SensorArray array;
  array.positions.reserve(n);
  array.normals.reserve(n);
  const double sign = upper ? 1.0 : -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double cz = static_cast<double>(i + 1) / static_cast<double>(n);  // (0,1], 1 = apex
    const double sz = std::sqrt(std::max(0.0, 1.0 - cz * cz));
    const double phi = golden_angle * static_cast<double>(i);
    const Vec3 unit{sz * std::cos(phi), sz * std::sin(phi), sign * cz};
    array.positions.push_back(center + radius * unit);
    array.normals.push_back(-1.0 * unit);  // toward the sphere center
  }
  return array;
}

}  // namespace slingbag
