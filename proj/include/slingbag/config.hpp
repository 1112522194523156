#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slingbag/baseline.hpp"
#include "slingbag/model.hpp"
#include "slingbag/optimizer.hpp"
#include "slingbag/phantom.hpp"
#include "slingbag/radiator.hpp"
#include "slingbag/shader.hpp"

// Run configuration: flat `key = value` text, dotted section prefixes, `#`
// comments. 3-vectors are three whitespace-separated numbers in one value.
// Unknown keys are errors so typos surface instead of silently using
// defaults.

namespace slingbag {

struct ArraySpec {
  std::string kind = "planar";  // planar | hemispherical
  // planar
  std::size_t nx = 8, ny = 8;
  double pitch = 2e-3;
  Vec3 center{0.0, 0.0, -20e-3};
  Axis normal = Axis::Z;
  std::size_t undersample_stride = 1;
  // hemispherical
  std::size_t n = 1024;
  double radius = 60e-3;
  bool upper = false;
  // sampling
  double sample_rate = 40e6;
  std::size_t num_samples = 1024;
  double t_start = 0.0;
};

struct RunConfig {
  Medium medium;
  ArraySpec array;
  RadiatorConfig radiator;
  InitConfig init;
  StageConfig coarse = coarse_stage_defaults();
  StageConfig fine = fine_stage_defaults();
  GridSpec grid;
  PhantomParams phantom;
  UbpOptions ubp;
  std::uint64_t seed = 1;
  double mask_threshold = 0.1;  // fraction of the truth MAP max marking signal pixels
};

inline SensorArray build_sensor_array(const RunConfig& cfg) {
  const ArraySpec& a = cfg.array;
  SensorArray array;
  if (a.kind == "planar") {
    array = make_planar_array(a.nx, a.ny, a.pitch, a.center, a.normal);
    if (a.undersample_stride > 1) array = undersample_planar(array, a.undersample_stride);
  } else if (a.kind == "hemispherical") {
    array = make_hemispherical_array(a.n, a.radius, a.center, a.upper);
  } else {
    throw std::invalid_argument("array.kind must be 'planar' or 'hemispherical', got '" + a.kind +
                                "'");
  }
  array.sample_rate = a.sample_rate;
  array.num_samples = a.num_samples;
  array.t_start = a.t_start;
  validate(array);
  return array;
}

namespace detail {

class KeyValueFile {
 public:
  explicit KeyValueFile(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": expected 'key = value'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty key");
      entries_[key] = value;
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  template <class T, class Parse>
  void get(const std::string& key, T& out, Parse parse) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    consumed_.insert(key);
    try {
      out = parse(it->second);
    } catch (const std::exception& e) {
      throw std::runtime_error("config key '" + key + "': " + e.what());
    }
  }

  void number(const std::string& key, double& out) {
    get(key, out, [](const std::string& v) { return parse_double(v); });
  }
  void count(const std::string& key, std::size_t& out) {
    get(key, out, [](const std::string& v) {
      const double d = parse_double(v);
      if (d < 0 || d != std::floor(d)) throw std::runtime_error("expected a non-negative integer");
      return static_cast<std::size_t>(d);
    });
  }
  void seed(const std::string& key, std::uint64_t& out) {
    get(key, out, [](const std::string& v) { return static_cast<std::uint64_t>(std::stoull(v)); });
  }
  void flag(const std::string& key, bool& out) {
    get(key, out, [](const std::string& v) {
      if (v == "true" || v == "1") return true;
      if (v == "false" || v == "0") return false;
      throw std::runtime_error("expected true/false");
    });
  }
  void text(const std::string& key, std::string& out) {
    get(key, out, [](const std::string& v) { return v; });
  }
  void vec3(const std::string& key, Vec3& out) {
    get(key, out, [](const std::string& v) {
      std::istringstream ss(v);
      Vec3 r;
      if (!(ss >> r.x >> r.y >> r.z)) throw std::runtime_error("expected three numbers");
      std::string rest;
      if (ss >> rest) throw std::runtime_error("expected exactly three numbers");
      return r;
    });
  }
  void dims3(const std::string& key, std::array<std::size_t, 3>& out) {
    get(key, out, [](const std::string& v) {
      std::istringstream ss(v);
      std::array<std::size_t, 3> r{};
      if (!(ss >> r[0] >> r[1] >> r[2])) throw std::runtime_error("expected three counts");
      return r;
    });
  }
  void axis(const std::string& key, Axis& out) {
    get(key, out, [](const std::string& v) { return axis_from_string(v); });
  }

  void reject_unknown(const std::string& path) const {
    for (const auto& [key, value] : entries_) {
      if (!consumed_.count(key))
        throw std::runtime_error(path + ": unknown config key '" + key + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  static double parse_double(const std::string& v) {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::runtime_error("trailing characters in number '" + v + "'");
    return d;
  }

  std::map<std::string, std::string> entries_;
  std::set<std::string> consumed_;
};

inline void load_stage(KeyValueFile& f, const std::string& prefix, StageConfig& s) {
  f.number(prefix + ".lr_p0", s.lr_p0);
  f.number(prefix + ".lr_a0", s.lr_a0);
  f.number(prefix + ".lr_pos", s.lr_pos);
  f.count(prefix + ".n_iters", s.n_iters);
  f.count(prefix + ".density_interval", s.density_interval);
  f.number(prefix + ".destroy_p0_frac", s.destroy_p0_frac);
  f.number(prefix + ".destroy_a0_min", s.destroy_a0_min);
  f.number(prefix + ".split_a0_max", s.split_a0_max);
  f.flag(prefix + ".duplicate_enabled", s.duplicate_enabled);
  f.flag(prefix + ".pos_update_enabled", s.pos_update_enabled);
  f.flag(prefix + ".duplicate_halve_p0", s.duplicate_halve_p0);
}

}  // namespace detail

inline RunConfig load_run_config(const std::string& path) {
  detail::KeyValueFile f(path);
  RunConfig cfg;

  f.number("medium.sound_speed", cfg.medium.sound_speed);

  f.text("array.kind", cfg.array.kind);
  f.count("array.nx", cfg.array.nx);
  f.count("array.ny", cfg.array.ny);
  f.number("array.pitch", cfg.array.pitch);
  f.vec3("array.center", cfg.array.center);
  f.axis("array.normal", cfg.array.normal);
  f.count("array.undersample_stride", cfg.array.undersample_stride);
  f.count("array.n", cfg.array.n);
  f.number("array.radius", cfg.array.radius);
  f.flag("array.upper", cfg.array.upper);
  f.number("array.sample_rate", cfg.array.sample_rate);
  f.count("array.num_samples", cfg.array.num_samples);
  f.number("array.t_start", cfg.array.t_start);

  f.number("radiator.epsilon", cfg.radiator.epsilon);

  f.vec3("init.bounds_min", cfg.init.bounds_min);
  f.vec3("init.bounds_max", cfg.init.bounds_max);
  f.count("init.n_points", cfg.init.n_points);
  f.number("init.p0_min", cfg.init.p0_min);
  f.number("init.p0_max", cfg.init.p0_max);
  f.number("init.a0_min", cfg.init.a0_min);
  f.number("init.a0_max", cfg.init.a0_max);

  detail::load_stage(f, "coarse", cfg.coarse);
  detail::load_stage(f, "fine", cfg.fine);

  f.vec3("grid.origin", cfg.grid.origin);
  f.number("grid.spacing", cfg.grid.spacing);
  f.dims3("grid.dims", cfg.grid.dims);

  std::string kind = "points";
  f.text("phantom.kind", kind);
  cfg.phantom.kind = phantom_kind_from_string(kind);
  f.vec3("phantom.bounds_min", cfg.phantom.bounds_min);
  f.vec3("phantom.bounds_max", cfg.phantom.bounds_max);
  f.count("phantom.n_points", cfg.phantom.n_points);
  f.number("phantom.p0_min", cfg.phantom.p0_min);
  f.number("phantom.p0_max", cfg.phantom.p0_max);
  f.number("phantom.a0_min", cfg.phantom.a0_min);
  f.number("phantom.a0_max", cfg.phantom.a0_max);
  f.number("phantom.ds", cfg.phantom.ds);
  f.number("phantom.p0", cfg.phantom.p0);
  f.number("phantom.a0", cfg.phantom.a0);
  for (std::size_t i = 0;; ++i) {
    const std::string key = "phantom.segment" + std::to_string(i);
    if (!f.has(key)) break;
    std::string value;
    f.text(key, value);
    std::istringstream ss(value);
    Vec3 a, b;
    if (!(ss >> a.x >> a.y >> a.z >> b.x >> b.y >> b.z))
      throw std::runtime_error("config key '" + key + "': expected six numbers (two endpoints)");
    cfg.phantom.segments.emplace_back(a, b);
  }
  f.vec3("phantom.helix_center", cfg.phantom.helix_center);
  f.number("phantom.helix_radius", cfg.phantom.helix_radius);
  f.number("phantom.helix_pitch", cfg.phantom.helix_pitch);
  f.number("phantom.helix_turns", cfg.phantom.helix_turns);

  f.flag("ubp.solid_angle_weighting", cfg.ubp.solid_angle_weighting);
  f.seed("seed", cfg.seed);
  f.number("metrics.mask_threshold", cfg.mask_threshold);

  f.reject_unknown(path);

  cfg.init.rng_seed = cfg.seed;
  return cfg;
}

}  // namespace slingbag
