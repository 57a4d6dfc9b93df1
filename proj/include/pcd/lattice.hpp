// Fields on the d-torus with integer wavenumbers and their exact spectral
// algebra: transforms, dealiased pointwise products, and uniform time grids.
//
// Conventions, fixed across the library:
//   u(x) = sum_k uhat(k) e^{i k.x},  uhat(k) = N^{-d} sum_x u(x) e^{-i k.x},
// wavenumbers k in {-N/2,...,N/2-1}^d stored in FFT order. Coefficients on any
// Nyquist plane (k_i = -N/2) and at k = 0 are pinned to zero so the retained
// mode set is closed under k -> -k. Real fields therefore satisfy
// uhat(-k) = conj(uhat(k)) exactly. A constant (spatial mean) component is
// carried as an explicit scalar channel beside the coefficients; operations
// propagate it exactly instead of storing it in the pinned zero mode.
#pragma once

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <complex>
#include <cstdint>
#include <map>
#include <mutex>
#include <vector>

#include "pcd/common.hpp"

namespace pcd {

using cplx = std::complex<double>;

struct LatticeSpec {
  int dim = 3;
  int n = 16;
  double dealias_factor = 2.0;

  void validate() const {
    if (dim < 1 || dim > 3) throw ConfigError("LatticeSpec: dim must be 1, 2, or 3");
    if (n < 8 || n % 2 != 0) throw ConfigError("LatticeSpec: n must be even and >= 8");
    if (dealias_factor != 1.0 && dealias_factor != 1.5 && dealias_factor != 2.0)
      throw ConfigError("LatticeSpec: dealias_factor must be 1, 3/2, or 2");
  }

  std::int64_t size() const {
    std::int64_t s = 1;
    for (int a = 0; a < dim; ++a) s *= n;
    return s;
  }

  int padded_n() const {
    int m = static_cast<int>(n * dealias_factor + 0.5);
    if (m % 2 != 0) ++m;
    return m;
  }

  // FFT-order index -> signed wavenumber on one axis.
  int wavenumber(int idx) const { return idx < n / 2 ? idx : idx - n; }

  std::array<int, 3> wavevector(std::int64_t lin) const {
    std::array<int, 3> k{0, 0, 0};
    for (int a = dim - 1; a >= 0; --a) {
      k[a] = wavenumber(static_cast<int>(lin % n));
      lin /= n;
    }
    return k;
  }

  std::int64_t index_of(const std::array<int, 3>& k) const {
    std::int64_t lin = 0;
    for (int a = 0; a < dim; ++a) {
      int idx = k[a] >= 0 ? k[a] : k[a] + n;
      lin = lin * n + idx;
    }
    return lin;
  }

  // Index of -k, component-wise (n - idx) mod n.
  std::int64_t conjugate_index(std::int64_t lin) const {
    std::int64_t out = 0;
    std::int64_t mult = 1;
    std::int64_t rem = lin;
    for (int a = 0; a < dim; ++a) mult *= n;
    for (int a = 0; a < dim; ++a) {
      mult /= n;
      int idx = static_cast<int>(rem / mult);
      rem %= mult;
      int cidx = idx == 0 ? 0 : n - idx;
      out = out * n + cidx;
    }
    return out;
  }

  double k_norm_sq(std::int64_t lin) const {
    auto k = wavevector(lin);
    double s = 0;
    for (int a = 0; a < dim; ++a) s += double(k[a]) * k[a];
    return s;
  }

  // Active modes carry coefficients; k = 0 and Nyquist planes are pinned.
  bool is_active(std::int64_t lin) const {
    auto k = wavevector(lin);
    bool zero = true;
    for (int a = 0; a < dim; ++a) {
      if (k[a] == -n / 2) return false;
      if (k[a] != 0) zero = false;
    }
    return !zero;
  }

  bool operator==(const LatticeSpec& o) const {
    return dim == o.dim && n == o.n && dealias_factor == o.dealias_factor;
  }
  bool operator!=(const LatticeSpec& o) const { return !(*this == o); }
};

struct PhysicalField {
  LatticeSpec spec;
  std::vector<double> values;
};

struct SpectralField {
  LatticeSpec spec;
  std::vector<cplx> coeff;
  double mean = 0.0;  // explicit constant channel; zero mode stays pinned

  SpectralField() = default;
  explicit SpectralField(const LatticeSpec& s) : spec(s), coeff(s.size(), cplx{0, 0}) {}

  cplx at(const std::array<int, 3>& k) const { return coeff[spec.index_of(k)]; }

  // Sets uhat(k) and uhat(-k) = conj together; keeps hermitian symmetry exact.
  void set_mode_pair(const std::array<int, 3>& k, cplx z) {
    std::int64_t lin = spec.index_of(k);
    if (!spec.is_active(lin)) throw IndexError("set_mode_pair: pinned or out-of-range mode");
    coeff[lin] = z;
    coeff[spec.conjugate_index(lin)] = std::conj(z);
  }
};

namespace detail {

// FFTW plan registry. Plans are created out-of-place with FFTW_ESTIMATE so
// planning never depends on machine state (reruns stay bit-identical) and
// FFTW_UNALIGNED so std::vector storage is always executable. Execution via
// fftw_execute_dft on caller buffers is thread safe; creation is not.
inline fftw_plan fft_plan(const std::vector<int>& dims, int sign) {
  static std::mutex mu;
  static std::map<std::pair<std::vector<int>, int>, fftw_plan> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(dims, sign);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  std::int64_t total = 1;
  for (int d : dims) total *= d;
  std::vector<cplx> in(total), out(total);
  fftw_plan p = fftw_plan_dft(static_cast<int>(dims.size()), dims.data(),
                              reinterpret_cast<fftw_complex*>(in.data()),
                              reinterpret_cast<fftw_complex*>(out.data()), sign,
                              FFTW_ESTIMATE | FFTW_UNALIGNED);
  cache.emplace(std::move(key), p);
  return p;
}

inline void fft_exec(const std::vector<int>& dims, cplx* in, cplx* out, int sign) {
  fftw_execute_dft(fft_plan(dims, sign), reinterpret_cast<fftw_complex*>(in),
                   reinterpret_cast<fftw_complex*>(out));
}

inline std::vector<int> grid_dims(const LatticeSpec& s, int n_axis) {
  return std::vector<int>(static_cast<std::size_t>(s.dim), n_axis);
}

// Map from lattice linear index to the linear index of the same wavenumber on
// the padded grid; cached per (dim, n, padded_n).
inline const std::vector<std::int64_t>& padded_index_map(const LatticeSpec& s) {
  static std::mutex mu;
  static std::map<std::array<int, 3>, std::vector<std::int64_t>> cache;
  std::lock_guard<std::mutex> lock(mu);
  std::array<int, 3> key{s.dim, s.n, s.padded_n()};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const int m = s.padded_n();
  std::vector<std::int64_t> map(s.size());
  for (std::int64_t lin = 0; lin < s.size(); ++lin) {
    auto k = s.wavevector(lin);
    std::int64_t plin = 0;
    for (int a = 0; a < s.dim; ++a) {
      int idx = k[a] >= 0 ? k[a] : k[a] + m;
      plin = plin * m + idx;
    }
    map[lin] = plin;
  }
  return cache.emplace(key, std::move(map)).first->second;
}

// Enforce the pinned modes and exact hermitian symmetry after a transform.
inline void project_field(const LatticeSpec& s, std::vector<cplx>& c) {
  for (std::int64_t lin = 0; lin < s.size(); ++lin) {
    if (!s.is_active(lin)) {
      c[lin] = cplx{0, 0};
      continue;
    }
    std::int64_t cj = s.conjugate_index(lin);
    if (cj < lin) continue;  // each pair handled once
    cplx avg = 0.5 * (c[lin] + std::conj(c[cj]));
    c[lin] = avg;
    c[cj] = std::conj(avg);
  }
}

// Scatter lattice coefficients into a zero-filled padded-grid buffer and
// transform to physical values there.
inline void to_padded_physical(const SpectralField& u, std::vector<cplx>& work,
                               std::vector<cplx>& phys) {
  const LatticeSpec& s = u.spec;
  const int m = s.padded_n();
  std::int64_t total = 1;
  for (int a = 0; a < s.dim; ++a) total *= m;
  work.assign(total, cplx{0, 0});
  phys.resize(total);
  const auto& map = padded_index_map(s);
  for (std::int64_t lin = 0; lin < s.size(); ++lin) work[map[lin]] = u.coeff[lin];
  fft_exec(grid_dims(s, m), work.data(), phys.data(), FFTW_BACKWARD);
}

// Transform a padded-grid physical buffer back and gather the retained modes.
inline SpectralField from_padded_physical(const LatticeSpec& s, std::vector<cplx>& phys,
                                          std::vector<cplx>& work, double* mean_out) {
  const int m = s.padded_n();
  std::int64_t total = 1;
  for (int a = 0; a < s.dim; ++a) total *= m;
  work.resize(total);
  fft_exec(grid_dims(s, m), phys.data(), work.data(), FFTW_FORWARD);
  const double scale = 1.0 / static_cast<double>(total);
  if (mean_out) *mean_out = work[0].real() * scale;
  SpectralField out(s);
  const auto& map = padded_index_map(s);
  for (std::int64_t lin = 0; lin < s.size(); ++lin) out.coeff[lin] = work[map[lin]] * scale;
  project_field(s, out.coeff);
  return out;
}

}  // namespace detail

// Collocation values of the coefficient part (the mean channel is not added;
// physical fields are mean-zero by construction).
inline PhysicalField to_physical(const SpectralField& u) {
  const LatticeSpec& s = u.spec;
  s.validate();
  std::vector<cplx> in(u.coeff), out(s.size());
  detail::fft_exec(detail::grid_dims(s, s.n), in.data(), out.data(), FFTW_BACKWARD);
  PhysicalField p;
  p.spec = s;
  p.values.resize(s.size());
  double max_abs = 1.0, max_im = 0.0;
  for (std::int64_t i = 0; i < s.size(); ++i) {
    p.values[i] = out[i].real();
    max_abs = std::max(max_abs, std::abs(out[i].real()));
    max_im = std::max(max_im, std::abs(out[i].imag()));
  }
  if (max_im > 1e-12 * max_abs)
    throw InvalidField("to_physical: imaginary residue exceeds tolerance");
  return p;
}

// Forward transform; the grid mean is removed (zero mode pinned) and the
// coefficients are symmetrized exactly.
inline SpectralField to_spectral(const PhysicalField& p) {
  const LatticeSpec& s = p.spec;
  s.validate();
  if (static_cast<std::int64_t>(p.values.size()) != s.size())
    throw SpecMismatch("to_spectral: value count does not match spec");
  std::vector<cplx> in(s.size()), out(s.size());
  for (std::int64_t i = 0; i < s.size(); ++i) in[i] = cplx{p.values[i], 0.0};
  detail::fft_exec(detail::grid_dims(s, s.n), in.data(), out.data(), FFTW_FORWARD);
  SpectralField u(s);
  const double scale = 1.0 / static_cast<double>(s.size());
  for (std::int64_t i = 0; i < s.size(); ++i) u.coeff[i] = out[i] * scale;
  detail::project_field(s, u.coeff);
  return u;
}

inline void check_same_spec(const SpectralField& a, const SpectralField& b,
                            const char* where) {
  if (a.spec != b.spec) throw SpecMismatch(std::string(where) + ": spec mismatch");
}

// Spatial mean of the product (u + a)(v + b); the field convolution's zero
// mode is sum_k uhat(k) conj(vhat(k)), real for hermitian inputs.
inline double product_mean(const SpectralField& u, const SpectralField& v) {
  KahanSum s;
  for (std::int64_t i = 0; i < u.spec.size(); ++i)
    s.add(u.coeff[i].real() * v.coeff[i].real() + u.coeff[i].imag() * v.coeff[i].imag());
  return s.value() + u.mean * v.mean;
}

// Dealiased product. The coefficient convolution is computed on the padded
// grid (exact for all retained output modes when dealias_factor >= 3/2), the
// mean cross terms are added spectrally, and the product's own spatial mean
// goes to the mean channel.
inline SpectralField pointwise_product(const SpectralField& u, const SpectralField& v) {
  check_same_spec(u, v, "pointwise_product");
  const LatticeSpec& s = u.spec;
  thread_local std::vector<cplx> work, pu, pv;
  detail::to_padded_physical(u, work, pu);
  detail::to_padded_physical(v, work, pv);
  for (std::size_t i = 0; i < pu.size(); ++i)
    pu[i] = cplx{pu[i].real() * pv[i].real(), 0.0};
  SpectralField out = detail::from_padded_physical(s, pu, work, nullptr);
  for (std::int64_t i = 0; i < s.size(); ++i)
    out.coeff[i] += u.mean * v.coeff[i] + v.mean * u.coeff[i];
  detail::project_field(s, out.coeff);
  out.mean = product_mean(u, v);
  return out;
}

// Cube computed in one padded pass; exact on all retained modes (and the mean)
// only with dealias_factor 2, hence the hard requirement.
inline SpectralField cubic_power(const SpectralField& u) {
  const LatticeSpec& s = u.spec;
  if (s.padded_n() < 2 * s.n)
    throw ConfigError("cubic_power: cubic products require dealias_factor 2");
  thread_local std::vector<cplx> work, pu;
  detail::to_padded_physical(u, work, pu);
  for (std::size_t i = 0; i < pu.size(); ++i) {
    const double x = pu[i].real() + u.mean;
    pu[i] = cplx{x * x * x, 0.0};
  }
  double mean = 0.0;
  SpectralField out = detail::from_padded_physical(s, pu, work, &mean);
  out.mean = mean;
  return out;
}

inline SpectralField axpy(double alpha, const SpectralField& x, const SpectralField& y) {
  check_same_spec(x, y, "axpy");
  SpectralField out = y;
  for (std::int64_t i = 0; i < x.spec.size(); ++i) out.coeff[i] += alpha * x.coeff[i];
  out.mean += alpha * x.mean;
  return out;
}

inline SpectralField scaled(double alpha, const SpectralField& x) {
  SpectralField out = x;
  for (auto& c : out.coeff) c *= alpha;
  out.mean *= alpha;
  return out;
}

// L2 norm on the torus (grid mean of |u|^2, Parseval): includes the mean channel.
inline double l2_norm(const SpectralField& u) {
  KahanSum s;
  for (const auto& c : u.coeff) s.add(std::norm(c));
  return std::sqrt(s.value() + u.mean * u.mean);
}

inline double linf_norm(const SpectralField& u) {
  PhysicalField p = to_physical(u);
  double m = 0;
  for (double x : p.values) m = std::max(m, std::abs(x + u.mean));
  return m;
}

// Uniform-in-time grid of snapshots, t_i = t0 + i (t1 - t0) / n_steps.
struct TrajectoryField {
  LatticeSpec spec;
  double t0 = 0.0;
  double t1 = 1.0;
  int n_steps = 1;
  std::vector<SpectralField> snaps;

  TrajectoryField() = default;
  TrajectoryField(const LatticeSpec& s, double a, double b, int steps)
      : spec(s), t0(a), t1(b), n_steps(steps) {
    validate_grid();
    snaps.assign(static_cast<std::size_t>(n_steps) + 1, SpectralField(s));
  }

  void validate_grid() const {
    if (n_steps < 1) throw ConfigError("TrajectoryField: n_steps must be >= 1");
    if (!(t1 > t0)) throw ConfigError("TrajectoryField: t1 must exceed t0");
  }

  double dt() const { return (t1 - t0) / n_steps; }
  double time(int i) const { return t0 + dt() * i; }
  int size() const { return n_steps + 1; }

  SpectralField& operator[](int i) { return snaps[static_cast<std::size_t>(i)]; }
  const SpectralField& operator[](int i) const { return snaps[static_cast<std::size_t>(i)]; }
};

inline void check_same_grid(const TrajectoryField& a, const TrajectoryField& b,
                            const char* where) {
  if (a.spec != b.spec || a.t0 != b.t0 || a.t1 != b.t1 || a.n_steps != b.n_steps)
    throw GridMismatch(std::string(where) + ": time grid or spec mismatch");
}

}  // namespace pcd
