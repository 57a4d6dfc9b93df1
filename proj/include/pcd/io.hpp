// Serialization: a little-endian binary snapshot format for spectral fields,
// a JSONL sidecar for trajectory metadata, and deterministic CSV output.
//
// Snapshot layout (all little-endian):
//   bytes 0..3   magic "PCD1"
//   u32          dim
//   u32          n (modes per axis)
//   f64          mean channel
//   u64          coefficient count (= n^dim)
//   then count * (f64 re, f64 im) in row-major FFT order.
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pcd/lattice.hpp"

namespace pcd {

namespace detail {

template <class T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  // this library targets little-endian hosts; memcpy is the LE layout
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw InvalidField("snapshot read: truncated stream");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace detail

inline void save_snapshot(const SpectralField& u, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("save_snapshot: cannot open " + path);
  os.write("PCD1", 4);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(u.spec.dim));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(u.spec.n));
  detail::write_le<double>(os, u.mean);
  detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(u.coeff.size()));
  for (const auto& c : u.coeff) {
    detail::write_le<double>(os, c.real());
    detail::write_le<double>(os, c.imag());
  }
  if (!os) throw Error("save_snapshot: write failed for " + path);
}

inline SpectralField load_snapshot(const std::string& path, double dealias_factor = 2.0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("load_snapshot: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "PCD1", 4) != 0)
    throw InvalidField("load_snapshot: bad magic in " + path);
  LatticeSpec spec;
  spec.dim = static_cast<int>(detail::read_le<std::uint32_t>(is));
  spec.n = static_cast<int>(detail::read_le<std::uint32_t>(is));
  spec.dealias_factor = dealias_factor;
  spec.validate();
  SpectralField u(spec);
  u.mean = detail::read_le<double>(is);
  std::uint64_t count = detail::read_le<std::uint64_t>(is);
  if (count != static_cast<std::uint64_t>(spec.size()))
    throw InvalidField("load_snapshot: coefficient count mismatch in " + path);
  for (std::uint64_t i = 0; i < count; ++i) {
    double re = detail::read_le<double>(is);
    double im = detail::read_le<double>(is);
    u.coeff[i] = cplx{re, im};
  }
  return u;
}

// Full-precision decimal rendering; round-trips doubles exactly.
inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct CsvWriter {
  std::ofstream os;

  CsvWriter(const std::string& path, const std::vector<std::string>& header) : os(path) {
    if (!os) throw Error("CsvWriter: cannot open " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) os << ',';
      os << header[i];
    }
    os << '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) os << ',';
      os << format_full(values[i]);
    }
    os << '\n';
  }

  void row_mixed(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << ',';
      os << cells[i];
    }
    os << '\n';
  }
};

// One JSON object per line: snapshot file name plus provenance fields.
inline void save_trajectory(const TrajectoryField& traj, const std::string& dir,
                            const std::string& stem, std::uint64_t seed,
                            std::uint64_t stream_id, double epsilon) {
  std::ofstream meta(dir + "/" + stem + ".jsonl");
  if (!meta) throw Error("save_trajectory: cannot open sidecar in " + dir);
  for (int i = 0; i < traj.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d.pcd", stem.c_str(), i);
    save_snapshot(traj[i], dir + "/" + name);
    meta << "{\"file\":\"" << name << "\",\"t\":" << format_full(traj.time(i))
         << ",\"seed\":" << seed << ",\"stream\":" << stream_id
         << ",\"epsilon\":" << format_full(epsilon) << "}\n";
  }
}

}  // namespace pcd
