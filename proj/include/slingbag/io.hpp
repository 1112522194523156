#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "slingbag/metrics.hpp"
#include "slingbag/model.hpp"
#include "slingbag/shader.hpp"

// File formats: magic (8 bytes) | version u32 | header fields | payload of
// little-endian 32-bit floats in row-major order. Counts are u32, physical
// header scalars f64, everything little-endian regardless of host.
//
//   signals: "SBAGSIG\0" | 1u | n_sensors u32, n_samples u32,
//            sample_rate f64, t_start f64 | traces [sensor][sample]
//   cloud:   "SBAGPCD\0" | 1u | n_points u32 | x,y,z,p0,a0 per point
//   grid:    "SBAGVOX\0" | 1u | origin f64 x3, spacing f64, dims u32 x3
//            | values [x][y][z]

namespace slingbag {

/// Malformed / truncated file; the message names the failing byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr char kSignalsMagic[8] = {'S', 'B', 'A', 'G', 'S', 'I', 'G', '\0'};
inline constexpr char kCloudMagic[8] = {'S', 'B', 'A', 'G', 'P', 'C', 'D', '\0'};
inline constexpr char kGridMagic[8] = {'S', 'B', 'A', 'G', 'V', 'O', 'X', '\0'};

class ByteWriter {
 public:
  void magic(const char (&m)[8]) { bytes_.insert(bytes_.end(), m, m + 8); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size, std::string name)
      : data_(data), size_(size), name_(std::move(name)) {}

  std::size_t offset() const { return pos_; }

  void expect_magic(const char (&m)[8]) {
    need(8, "magic");
    if (std::memcmp(data_ + pos_, m, 8) != 0)
      throw FormatError(name_ + ": bad magic at byte 0 (not a " +
                        std::string(m, m + 7) + " file)");
    pos_ += 8;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void expect_version() {
    const std::size_t at = pos_;
    const std::uint32_t v = u32("version");
    if (v != kFormatVersion)
      throw FormatError(name_ + ": unsupported version " + std::to_string(v) + " at byte " +
                        std::to_string(at));
  }
  void expect_end() {
    if (pos_ != size_)
      throw FormatError(name_ + ": " + std::to_string(size_ - pos_) +
                        " trailing bytes at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > size_)
      throw FormatError(name_ + ": truncated at byte " + std::to_string(size_) + " (need " +
                        std::to_string(n) + " bytes for " + what + " at byte " +
                        std::to_string(pos_) + ")");
  }
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string name_;
};

inline void write_file(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<char> bytes(static_cast<std::size_t>(size));
  in.read(bytes.data(), size);
  if (!in) throw std::runtime_error("read failed for '" + path + "'");
  return bytes;
}

}  // namespace detail

inline std::vector<char> encode_signals(const SignalSet& s) {
  detail::ByteWriter w;
  w.magic(detail::kSignalsMagic);
  w.u32(detail::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(s.num_sensors));
  w.u32(static_cast<std::uint32_t>(s.num_samples));
  w.f64(s.sample_rate);
  w.f64(s.t_start);
  for (double v : s.data) w.f32(static_cast<float>(v));
  return w.bytes();
}

inline SignalSet decode_signals(const std::vector<char>& bytes, const std::string& name) {
  detail::ByteReader r(bytes.data(), bytes.size(), name);
  r.expect_magic(detail::kSignalsMagic);
  r.expect_version();
  SignalSet s;
  s.num_sensors = r.u32("n_sensors");
  s.num_samples = r.u32("n_samples");
  s.sample_rate = r.f64("sample_rate");
  s.t_start = r.f64("t_start");
  s.data.resize(s.num_sensors * s.num_samples);
  for (double& v : s.data) v = r.f32("trace sample");
  r.expect_end();
  return s;
}

inline void write_signals(const std::string& path, const SignalSet& s) {
  detail::write_file(path, encode_signals(s));
}
inline SignalSet read_signals(const std::string& path) {
  return decode_signals(detail::read_file(path), path);
}

inline std::vector<char> encode_cloud(const PointCloud& c) {
  detail::ByteWriter w;
  w.magic(detail::kCloudMagic);
  w.u32(detail::kFormatVersion);
  w.u32(static_cast<std::uint32_t>(c.size()));
  for (const GaussianSource& s : c.sources) {
    w.f32(static_cast<float>(s.center.x));
    w.f32(static_cast<float>(s.center.y));
    w.f32(static_cast<float>(s.center.z));
    w.f32(static_cast<float>(s.p0));
    w.f32(static_cast<float>(s.a0));
  }
  return w.bytes();
}

inline PointCloud decode_cloud(const std::vector<char>& bytes, const std::string& name) {
  detail::ByteReader r(bytes.data(), bytes.size(), name);
  r.expect_magic(detail::kCloudMagic);
  r.expect_version();
  const std::uint32_t n = r.u32("n_points");
  PointCloud c;
  for (std::uint32_t i = 0; i < n; ++i) {
    GaussianSource s;
    s.center.x = r.f32("x");
    s.center.y = r.f32("y");
    s.center.z = r.f32("z");
    s.p0 = r.f32("p0");
    s.a0 = r.f32("a0");
    c.add(s);
  }
  r.expect_end();
  return c;
}

inline void write_cloud(const std::string& path, const PointCloud& c) {
  detail::write_file(path, encode_cloud(c));
}
inline PointCloud read_cloud(const std::string& path) {
  return decode_cloud(detail::read_file(path), path);
}

inline std::vector<char> encode_grid(const VoxelGrid& g) {
  detail::ByteWriter w;
  w.magic(detail::kGridMagic);
  w.u32(detail::kFormatVersion);
  w.f64(g.origin.x);
  w.f64(g.origin.y);
  w.f64(g.origin.z);
  w.f64(g.spacing);
  w.u32(static_cast<std::uint32_t>(g.dims[0]));
  w.u32(static_cast<std::uint32_t>(g.dims[1]));
  w.u32(static_cast<std::uint32_t>(g.dims[2]));
  for (double v : g.values) w.f32(static_cast<float>(v));
  return w.bytes();
}

inline VoxelGrid decode_grid(const std::vector<char>& bytes, const std::string& name) {
  detail::ByteReader r(bytes.data(), bytes.size(), name);
  r.expect_magic(detail::kGridMagic);
  r.expect_version();
  VoxelGrid g;
  g.origin.x = r.f64("origin.x");
  g.origin.y = r.f64("origin.y");
  g.origin.z = r.f64("origin.z");
  g.spacing = r.f64("spacing");
  g.dims[0] = r.u32("dims.x");
  g.dims[1] = r.u32("dims.y");
  g.dims[2] = r.u32("dims.z");
  g.values.resize(g.voxel_count());
  for (double& v : g.values) v = r.f32("voxel value");
  r.expect_end();
  return g;
}

inline void write_grid(const std::string& path, const VoxelGrid& g) {
  detail::write_file(path, encode_grid(g));
}
inline VoxelGrid read_grid(const std::string& path) {
  return decode_grid(detail::read_file(path), path);
}

/// 16-bit binary PGM, values scaled so the image maximum maps to 65535
/// (all-zero image stays zero). Sample bytes are big-endian per the format.
inline void write_image_pgm16(const std::string& path, const Image2D& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "P5\n" << img.cols << " " << img.rows << "\n65535\n";
  const double max = img.values.empty()
                         ? 0.0
                         : *std::max_element(img.values.begin(), img.values.end());
  const double scale = max > 0.0 ? 65535.0 / max : 0.0;
  for (double v : img.values) {
    const double scaled = std::clamp(v * scale, 0.0, 65535.0);
    const auto q = static_cast<std::uint16_t>(std::lround(scaled));
    out.put(static_cast<char>(q >> 8));
    out.put(static_cast<char>(q & 0xff));
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

/// Exact-value CSV twin of an image: one row per line, %.17g fields.
inline void write_image_csv(const std::string& path, const Image2D& img) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  char buf[40];
  for (std::size_t r = 0; r < img.rows; ++r) {
    for (std::size_t c = 0; c < img.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", img.at(r, c));
      out << buf << (c + 1 < img.cols ? "," : "");
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline Image2D read_image_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) row.push_back(std::stod(field));
    if (!rows.empty() && row.size() != rows.front().size())
      throw FormatError(path + ": ragged csv row " + std::to_string(rows.size()));
    rows.push_back(std::move(row));
  }
  Image2D img(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t r = 0; r < img.rows; ++r)
    for (std::size_t c = 0; c < img.cols; ++c) img.at(r, c) = rows[r][c];
  return img;
}

/// Masks persist as 0/1 CSV images for reproducibility of region metrics.
inline void write_mask_csv(const std::string& path, const Mask& m) {
  Image2D img(m.rows, m.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i) img.values[i] = m.values[i] ? 1.0 : 0.0;
  write_image_csv(path, img);
}

}  // namespace slingbag
