// Bony paraproducts and resonant commutators, the exact exponential Duhamel
// integral I(.), the para-integration operators B_<, B_0, B_>, and discrete
// weighted space-time seminorms on uniform trajectory grids.
#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "pcd/common.hpp"
#include "pcd/lattice.hpp"
#include "pcd/lp_besov.hpp"

namespace pcd {

struct ParaDecomposition {
  SpectralField lt;    // pi_<(f, g): low f against high g
  SpectralField diag;  // pi_0(f, g): resonant pairs |i - j| <= 1
  SpectralField gt;    // pi_>(f, g) = pi_<(g, f)
};

// All three Bony terms from one shared set of padded block physicals. Block
// pairs split as i <= j-2 -> pi_<, |i-j| <= 1 -> pi_0, i >= j+2 -> pi_>, so
// the three sum to the dealiased product exactly, mean channels included.
// Each factor's mean rides its Delta_{-1} physical. S_{j-1} and Delta_j have
// disjoint spectral supports (4/3*2^{j-1} < 3/4*2^j), so pi_< and pi_> carry
// no spatial mean; the resonant padded zero coefficient is the full product
// mean.
inline ParaDecomposition para_all(const SpectralField& f, const SpectralField& g) {
  check_same_spec(f, g, "para_all");
  const LatticeSpec& s = f.spec;
  const int jm = lp_j_max(s);
  std::int64_t total = 1;
  for (int a = 0; a < s.dim; ++a) total *= s.padded_n();

  std::vector<std::vector<double>> bf(static_cast<std::size_t>(jm) + 2),
      bg(static_cast<std::size_t>(jm) + 2);
  {
    std::vector<cplx> work, phys;
    for (int j = -1; j <= jm; ++j) {
      detail::to_padded_physical(lp_block(f, j), work, phys);
      auto& vf = bf[static_cast<std::size_t>(j) + 1];
      vf.resize(static_cast<std::size_t>(total));
      const double mf = j == -1 ? f.mean : 0.0;
      for (std::int64_t i = 0; i < total; ++i) vf[i] = phys[i].real() + mf;
      detail::to_padded_physical(lp_block(g, j), work, phys);
      auto& vg = bg[static_cast<std::size_t>(j) + 1];
      vg.resize(static_cast<std::size_t>(total));
      const double mg = j == -1 ? g.mean : 0.0;
      for (std::int64_t i = 0; i < total; ++i) vg[i] = phys[i].real() + mg;
    }
  }

  std::vector<double> sf(static_cast<std::size_t>(total), 0.0),
      sg(static_cast<std::size_t>(total), 0.0);
  std::vector<cplx> acc_lt(static_cast<std::size_t>(total), cplx{0, 0}),
      acc_dg(static_cast<std::size_t>(total), cplx{0, 0}),
      acc_gt(static_cast<std::size_t>(total), cplx{0, 0});
  for (int j = -1; j <= jm; ++j) {
    const auto& fj = bf[static_cast<std::size_t>(j) + 1];
    const auto& gj = bg[static_cast<std::size_t>(j) + 1];
    if (j >= 1) {
      for (std::int64_t i = 0; i < total; ++i) {
        acc_lt[i] += sf[i] * gj[i];
        acc_gt[i] += sg[i] * fj[i];
      }
    }
    for (std::int64_t i = 0; i < total; ++i) acc_dg[i] += fj[i] * gj[i];
    if (j >= 0) {
      const auto& fp = bf[static_cast<std::size_t>(j)];
      const auto& gp = bg[static_cast<std::size_t>(j)];
      for (std::int64_t i = 0; i < total; ++i)
        acc_dg[i] += fp[i] * gj[i] + fj[i] * gp[i];
      // S_{j-1} <- S_{j-2} + Delta_{j-1}, ready for the next scale.
      for (std::int64_t i = 0; i < total; ++i) {
        sf[i] += fp[i];
        sg[i] += gp[i];
      }
    }
  }

  std::vector<cplx> work;
  ParaDecomposition out;
  out.lt = detail::from_padded_physical(s, acc_lt, work, nullptr);
  double diag_mean = 0.0;
  out.diag = detail::from_padded_physical(s, acc_dg, work, &diag_mean);
  out.diag.mean = diag_mean;
  out.gt = detail::from_padded_physical(s, acc_gt, work, nullptr);
  return out;
}

inline SpectralField para_lt(const SpectralField& f, const SpectralField& g) {
  return para_all(f, g).lt;
}

inline SpectralField para_diag(const SpectralField& f, const SpectralField& g) {
  return para_all(f, g).diag;
}

inline SpectralField para_gt(const SpectralField& f, const SpectralField& g) {
  return para_all(f, g).gt;
}

// R(f, x, y) = pi_0(pi_<(f, x), y) - f pi_0(x, y).
inline SpectralField commutator_R(const SpectralField& f, const SpectralField& x,
                                  const SpectralField& y) {
  SpectralField lhs = para_diag(para_lt(f, x), y);
  SpectralField rhs = pointwise_product(f, para_diag(x, y));
  return axpy(-1.0, rhs, lhs);
}

// P_t pi_<(f, g) - pi_<(f, P_t g): how far the heat flow is from acting on
// the high-frequency factor alone.
inline SpectralField heat_para_commutator(const SpectralField& f, const SpectralField& g,
                                          double t) {
  SpectralField a = heat(para_lt(f, g), t);
  SpectralField b = para_lt(f, heat(g, t));
  return axpy(-1.0, b, a);
}

// I(f)(t) = int_{t0}^t e^{-(t-s)|k|^2} f_s ds per mode with f piecewise linear
// on the grid. One step,
//   I_{m+1} = e^{-z} I_m + h (phi1(z) - phi2(z)) f_{m+1} + h phi2(z) f_m,
// z = |k|^2 h, integrates the linear interpolant exactly; |k| = 0 (the mean
// channel) degenerates to the trapezoid rule. I(f)(t0) = 0.
inline TrajectoryField duhamel(const TrajectoryField& f) {
  const LatticeSpec& s = f.spec;
  const double h = f.dt();
  TrajectoryField out(s, f.t0, f.t1, f.n_steps);
  const std::int64_t sz = s.size();
  std::vector<double> dec(static_cast<std::size_t>(sz)), w_new(static_cast<std::size_t>(sz)),
      w_old(static_cast<std::size_t>(sz));
  for (std::int64_t lin = 0; lin < sz; ++lin) {
    const double z = s.k_norm_sq(lin) * h;
    dec[static_cast<std::size_t>(lin)] = std::exp(-z);
    w_new[static_cast<std::size_t>(lin)] = h * (phi1(z) - phi2(z));
    w_old[static_cast<std::size_t>(lin)] = h * phi2(z);
  }
  for (int m = 1; m <= f.n_steps; ++m) {
    const SpectralField& prev = out[m - 1];
    SpectralField& cur = out[m];
    for (std::int64_t lin = 0; lin < sz; ++lin) {
      const auto i = static_cast<std::size_t>(lin);
      cur.coeff[i] = dec[i] * prev.coeff[i] + w_new[i] * f[m].coeff[i] +
                     w_old[i] * f[m - 1].coeff[i];
    }
    cur.mean = prev.mean + 0.5 * h * (f[m].mean + f[m - 1].mean);
  }
  return out;
}

struct ParaTrajectories {
  TrajectoryField lt, diag, gt;
};

// B_<(f, g) = I(pi_<(f, g)) and friends: paraproducts per snapshot on a shared
// grid, then Duhamel integration. b_all shares the snapshot decompositions.
inline ParaTrajectories b_all(const TrajectoryField& f, const TrajectoryField& g) {
  check_same_grid(f, g, "b_all");
  TrajectoryField lt(f.spec, f.t0, f.t1, f.n_steps);
  TrajectoryField dg(f.spec, f.t0, f.t1, f.n_steps);
  TrajectoryField gt(f.spec, f.t0, f.t1, f.n_steps);
  for (int i = 0; i < f.size(); ++i) {
    ParaDecomposition p = para_all(f[i], g[i]);
    lt[i] = std::move(p.lt);
    dg[i] = std::move(p.diag);
    gt[i] = std::move(p.gt);
  }
  return {duhamel(lt), duhamel(dg), duhamel(gt)};
}

inline TrajectoryField b_lt(const TrajectoryField& f, const TrajectoryField& g) {
  check_same_grid(f, g, "b_lt");
  TrajectoryField p(f.spec, f.t0, f.t1, f.n_steps);
  for (int i = 0; i < f.size(); ++i) p[i] = para_lt(f[i], g[i]);
  return duhamel(p);
}

inline TrajectoryField b_diag(const TrajectoryField& f, const TrajectoryField& g) {
  check_same_grid(f, g, "b_diag");
  TrajectoryField p(f.spec, f.t0, f.t1, f.n_steps);
  for (int i = 0; i < f.size(); ++i) p[i] = para_diag(f[i], g[i]);
  return duhamel(p);
}

inline TrajectoryField b_gt(const TrajectoryField& f, const TrajectoryField& g) {
  check_same_grid(f, g, "b_gt");
  TrajectoryField p(f.spec, f.t0, f.t1, f.n_steps);
  for (int i = 0; i < f.size(); ++i) p[i] = para_gt(f[i], g[i]);
  return duhamel(p);
}

inline TrajectoryField axpy_trajectory(double alpha, const TrajectoryField& x,
                                       const TrajectoryField& y) {
  check_same_grid(x, y, "axpy_trajectory");
  TrajectoryField out = y;
  for (int i = 0; i < x.size(); ++i) out[i] = axpy(alpha, x[i], y[i]);
  return out;
}

inline TrajectoryField scaled_trajectory(double alpha, const TrajectoryField& x) {
  TrajectoryField out = x;
  for (auto& u : out.snaps) u = scaled(alpha, u);
  return out;
}

inline TrajectoryField product_trajectory(const TrajectoryField& u,
                                          const TrajectoryField& v) {
  check_same_grid(u, v, "product_trajectory");
  TrajectoryField out(u.spec, u.t0, u.t1, u.n_steps);
  for (int i = 0; i < u.size(); ++i) out[i] = pointwise_product(u[i], v[i]);
  return out;
}

// Snapshots P_{t - t0} u0 of the free heat evolution.
inline TrajectoryField heat_trajectory(const SpectralField& u0, double t0, double t1,
                                       int n_steps) {
  TrajectoryField out(u0.spec, t0, t1, n_steps);
  for (int i = 0; i < out.size(); ++i) out[i] = heat(u0, out.time(i) - t0);
  return out;
}

// First m steps of u, same dt.
inline TrajectoryField truncate_trajectory(const TrajectoryField& u, int m) {
  if (m < 1 || m > u.n_steps)
    throw ConfigError("truncate_trajectory: step count out of range");
  TrajectoryField out(u.spec, u.t0, u.time(m), m);
  for (int i = 0; i <= m; ++i) out[i] = u[i];
  return out;
}

struct WeightedSeminormSpec {
  double nu = 0.0;
  double rho = 0.0;

  void validate() const {
    if (!(nu >= 0.0) || !std::isfinite(nu) || !(rho >= 0.0 && rho <= 1.0))
      throw InvalidExponents("WeightedSeminormSpec: need nu >= 0, rho in [0, 1]");
  }
};

// max_t t^nu |phi_t| plus max over ordered pairs of s^nu |phi_t - phi_s| /
// (t - s)^rho, the earlier time carrying the weight. Pairs subsampled at
// dyadic index gaps: every skeleton pair is a genuine pair, so the value is a
// lower bound of the dense sup and misses it by at most a bounded factor.
inline double weighted_seminorm(const std::vector<double>& phi, double t0, double dt,
                                const WeightedSeminormSpec& ws) {
  ws.validate();
  if (!(dt > 0.0)) throw ConfigError("weighted_seminorm: need dt > 0");
  const std::size_t n = phi.size();
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    value = std::max(value, std::pow(t0 + dt * static_cast<double>(i), ws.nu) * std::abs(phi[i]));
  double inc = 0.0;
  for (std::size_t gap = 1; gap < n; gap *= 2) {
    const double dtg = std::pow(dt * static_cast<double>(gap), ws.rho);
    for (std::size_t i = 0; i + gap < n; ++i) {
      const double w = std::pow(t0 + dt * static_cast<double>(i), ws.nu);
      inc = std::max(inc, w * std::abs(phi[i + gap] - phi[i]) / dtg);
    }
  }
  return value + inc;
}

// d_{alpha,beta}(u, 0): sup over dyadic-gap snapshot pairs of C^beta increment
// norms over |t - s|^alpha, plus the sup of snapshot C^beta norms.
inline double space_time_holder_norm(const TrajectoryField& u, double alpha_time,
                                     double beta_space) {
  double sup_t = 0.0;
  for (int i = 0; i < u.size(); ++i) sup_t = std::max(sup_t, holder_norm(u[i], beta_space));
  double inc = 0.0;
  const double h = u.dt();
  for (int gap = 1; gap <= u.n_steps; gap *= 2) {
    const double dtg = std::pow(h * gap, alpha_time);
    for (int i = 0; i + gap <= u.n_steps; ++i) {
      SpectralField d = axpy(-1.0, u[i], u[i + gap]);
      inc = std::max(inc, holder_norm(d, beta_space) / dtg);
    }
  }
  return inc + sup_t;
}

}  // namespace pcd
