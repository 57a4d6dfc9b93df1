// Littlewood-Paley calculus on the lattice: a smooth dyadic partition of
// unity in frequency, block projections, Besov/Holder norms, the heat
// propagator, and a synthetic field sampler with prescribed regularity.
//
// The partition uses a C-infinity cutoff chi with chi = 1 on [0, 3/4] and
// chi = 0 on [4/3, inf), and shells theta(r) = chi(r/2) - chi(r) supported in
// (3/4, 8/3). Block -1 carries chi(|k|) (and the mean channel); block j >= 0
// carries theta(2^-j |k|). On any finite lattice the telescoping sum
// chi + sum_j theta(2^-j .) equals 1 exactly once j exceeds j_max, and shells
// with |i - j| > 1 have disjoint supports since 2 * 3/4 * 2 > 8/3 fails only
// for adjacent pairs.
#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <vector>

#include "pcd/lattice.hpp"
#include "pcd/rng.hpp"

namespace pcd {

inline double bump(double x) { return x > 0.0 ? std::exp(-1.0 / x) : 0.0; }

// C-infinity monotone step: 0 for x <= 0, 1 for x >= 1.
inline double smooth_step(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double a = bump(x), b = bump(1.0 - x);
  return a / (a + b);
}

inline double chi_cutoff(double r) {
  constexpr double lo = 0.75, hi = 4.0 / 3.0;
  if (r <= lo) return 1.0;
  if (r >= hi) return 0.0;
  return 1.0 - smooth_step((r - lo) / (hi - lo));
}

inline double theta_shell(double r) { return chi_cutoff(0.5 * r) - chi_cutoff(r); }

namespace detail {

struct BlockWeights {
  int j_max = 0;
  std::vector<std::vector<double>> w;  // w[j + 1][lin], j = -1 .. j_max
};

inline const BlockWeights& block_weights(const LatticeSpec& s) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, BlockWeights> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(s.dim, s.n);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  BlockWeights bw;
  bw.w.emplace_back(s.size());
  auto& wm1 = bw.w.back();
  for (std::int64_t lin = 0; lin < s.size(); ++lin)
    wm1[lin] = chi_cutoff(std::sqrt(s.k_norm_sq(lin)));
  for (int j = 0;; ++j) {
    std::vector<double> wj(s.size());
    bool any = false;
    for (std::int64_t lin = 0; lin < s.size(); ++lin) {
      if (!s.is_active(lin)) continue;
      wj[lin] = theta_shell(std::ldexp(std::sqrt(s.k_norm_sq(lin)), -j));
      if (wj[lin] != 0.0) any = true;
    }
    if (!any) {
      bw.j_max = j - 1;
      break;
    }
    bw.w.push_back(std::move(wj));
  }
  if (bw.j_max < 1) throw InsufficientScales("block_weights: lattice too coarse");
  return cache.emplace(key, std::move(bw)).first->second;
}

}  // namespace detail

inline int lp_j_max(const LatticeSpec& s) { return detail::block_weights(s).j_max; }

// Frequency block Delta_j, j in [-1, j_max]. Block -1 keeps the mean channel.
inline SpectralField lp_block(const SpectralField& u, int j) {
  const auto& bw = detail::block_weights(u.spec);
  if (j < -1 || j > bw.j_max) throw IndexError("lp_block: block index out of range");
  SpectralField out(u.spec);
  const auto& w = bw.w[static_cast<std::size_t>(j) + 1];
  for (std::int64_t lin = 0; lin < u.spec.size(); ++lin) out.coeff[lin] = w[lin] * u.coeff[lin];
  if (j == -1) out.mean = u.mean;
  return out;
}

// Grid L^p norm of the block (p = inf for the sup norm).
inline double lp_block_norm(const SpectralField& u, int j, double p) {
  SpectralField b = lp_block(u, j);
  if (std::isinf(p)) return linf_norm(b);
  if (p == 2.0) return l2_norm(b);
  PhysicalField phys = to_physical(b);
  KahanSum acc;
  for (double x : phys.values) acc.add(std::pow(std::abs(x + b.mean), p));
  return std::pow(acc.value() / static_cast<double>(u.spec.size()), 1.0 / p);
}

// Besov norm B^alpha_{p,q} from the lattice blocks; alpha in [-3, 3] by
// contract, p, q in {2, ..., inf}.
inline double besov_norm(const SpectralField& u, double alpha,
                         double p = std::numeric_limits<double>::infinity(),
                         double q = std::numeric_limits<double>::infinity()) {
  if (!(alpha >= -3.0 && alpha <= 3.0))
    throw InvalidExponents("besov_norm: alpha outside [-3, 3]");
  const int jm = lp_j_max(u.spec);
  if (std::isinf(q)) {
    double best = 0.0;
    for (int j = -1; j <= jm; ++j)
      best = std::max(best, lp_block_norm(u, j, p) * std::pow(2.0, j * alpha));
    return best;
  }
  KahanSum acc;
  for (int j = -1; j <= jm; ++j)
    acc.add(std::pow(std::pow(2.0, j * alpha) * lp_block_norm(u, j, p), q));
  return std::pow(acc.value(), 1.0 / q);
}

inline double holder_norm(const SpectralField& u, double alpha) {
  return besov_norm(u, alpha);
}

// Empirical Holder exponent: -slope of log2 ||Delta_j u||_inf against j over
// j in [2, j_max - 1]. Usable blocks only: nonzero norm, and the unit-weight
// plateau of theta_j (up to 3/2 * 2^j) inside the retained ball, since blocks
// clipped by the lattice cutoff break the dyadic scaling.
inline double estimate_regularity(const SpectralField& u) {
  const int jm = lp_j_max(u.spec);
  const double retained = 0.5 * static_cast<double>(u.spec.n) - 1.0;
  std::vector<double> xs, ys;
  for (int j = 2; j <= jm - 1; ++j) {
    if (1.5 * std::pow(2.0, j) > retained) break;
    const double nrm =
        lp_block_norm(u, j, std::numeric_limits<double>::infinity());
    if (nrm > 0.0) {
      xs.push_back(static_cast<double>(j));
      ys.push_back(std::log2(nrm));
    }
  }
  if (xs.size() < 3)
    throw InsufficientScales("estimate_regularity: fewer than 3 usable blocks");
  return -fit_line(xs, ys).slope;
}

// Heat semigroup e^{t Laplace}: multiplier e^{-t |k|^2}; fixes constants.
inline SpectralField heat(const SpectralField& u, double t) {
  if (t < 0.0) throw InvalidTime("heat: negative time");
  SpectralField out = u;
  if (t == 0.0) return out;
  for (std::int64_t lin = 0; lin < u.spec.size(); ++lin)
    out.coeff[lin] *= std::exp(-t * u.spec.k_norm_sq(lin));
  return out;
}

inline SpectralField partial_derivative(const SpectralField& u, int axis) {
  if (axis < 0 || axis >= u.spec.dim) throw IndexError("partial_derivative: bad axis");
  SpectralField out(u.spec);
  for (std::int64_t lin = 0; lin < u.spec.size(); ++lin) {
    auto k = u.spec.wavevector(lin);
    out.coeff[lin] = cplx{0.0, double(k[axis])} * u.coeff[lin];
  }
  return out;
}

// Gaussian field with E|uhat(k)|^2 = |k|^{-2 alpha - d}, so block L^2 norms
// scale like 2^{-j alpha}: a sample of Holder regularity alpha- in law.
inline SpectralField synthetic_field(const LatticeSpec& s, double alpha,
                                     std::uint64_t seed, std::uint64_t stream) {
  SpectralField u(s);
  const double expo = -(alpha + 0.5 * s.dim);
  for (std::int64_t lin = 0; lin < s.size(); ++lin) {
    if (!s.is_active(lin)) continue;
    std::int64_t cj = s.conjugate_index(lin);
    if (cj < lin) continue;
    auto [g1, g2] = counter_gaussian_pair(seed, stream, static_cast<std::uint64_t>(lin), 0);
    const double amp = std::pow(s.k_norm_sq(lin), 0.5 * expo);
    cplx z = cj == lin ? cplx{amp * g1, 0.0}
                       : cplx{amp * g1 / std::sqrt(2.0), amp * g2 / std::sqrt(2.0)};
    u.coeff[lin] = z;
    u.coeff[cj] = std::conj(z);
  }
  return u;
}

}  // namespace pcd
