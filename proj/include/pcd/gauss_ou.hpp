// Exact per-mode Gaussian sampling of the mollified Ornstein-Uhlenbeck free
// field, stationary and zero-start. Counter keys depend only on (seed,
// stream_id, mode pair, step), never on epsilon, so trajectories at different
// mollification scales replay the same underlying noise.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "pcd/lp_besov.hpp"
#include "pcd/rng.hpp"

namespace pcd {

// Smooth radial cutoff: 1 on [0, plateau_radius], bump-based descent, 0 from
// support_radius on.
struct MollifierProfile {
  double support_radius = 1.0;
  double plateau_radius = 0.5;

  void validate() const {
    if (!(support_radius > 0.0))
      throw ConfigError("MollifierProfile: support_radius must be positive");
    if (!(plateau_radius >= 0.0 && plateau_radius < support_radius))
      throw ConfigError("MollifierProfile: plateau must sit inside the support");
  }

  double operator()(double r) const {
    if (r <= plateau_radius) return 1.0;
    if (r >= support_radius) return 0.0;
    return 1.0 - smooth_step((r - plateau_radius) /
                             (support_radius - plateau_radius));
  }
};

enum class OUMode { stationary, zero_start };

// Stationary per-mode variance is intensity * f(eps |k|)^2 / |k|^2; the
// driving-noise strength is back-solved from it.
struct OUSampler {
  LatticeSpec spec;
  OUMode mode = OUMode::stationary;
  double epsilon = 0.0;  // 0 = no mollification beyond the lattice cutoff
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  double intensity = 1.0;
  MollifierProfile f;

  void validate() const {
    spec.validate();
    f.validate();
    if (!(epsilon >= 0.0)) throw ConfigError("OUSampler: epsilon must be >= 0");
    if (!(intensity > 0.0))
      throw ConfigError("OUSampler: intensity must be positive");
  }
};

// E[Xhat_t(k) conj(Xhat_s(k))]; real by the radial law.
inline double covariance_oracle(const std::array<int, 3>& k, double t, double s,
                                OUMode mode, double epsilon,
                                const MollifierProfile& f,
                                double intensity = 1.0) {
  const double lambda =
      double(k[0]) * k[0] + double(k[1]) * k[1] + double(k[2]) * k[2];
  if (lambda == 0.0)
    throw ZeroMode("covariance_oracle: the zero mode carries no law");
  if (t < 0.0 || s < 0.0) throw InvalidTime("covariance_oracle: negative time");
  const double w = f(epsilon * std::sqrt(lambda));
  const double base = intensity * w * w / lambda;
  const double gap = std::exp(-lambda * std::abs(t - s));
  if (mode == OUMode::stationary) return base * gap;
  return base * (gap - std::exp(-lambda * (t + s)));
}

// Coefficient-wise multiply by f(eps |k|); the constant channel keeps f(0) = 1.
inline SpectralField mollify(const SpectralField& u, const MollifierProfile& f,
                             double epsilon) {
  if (!(epsilon >= 0.0)) throw ConfigError("mollify: epsilon must be >= 0");
  SpectralField out = u;
  for (std::int64_t lin = 0; lin < u.spec.size(); ++lin)
    out.coeff[lin] *= f(epsilon * std::sqrt(u.spec.k_norm_sq(lin)));
  return out;
}

// Exact AR(1) recursion per hermitian pair {k, -k}: Xhat_{t+h} =
// e^{-|k|^2 h} Xhat_t + eta with eta complex Gaussian matching the target
// marginal law; zero-start draws the t0 marginal of the X_0 = 0 solution.
inline TrajectoryField sample_ou(const OUSampler& sampler, double t0, double t1,
                                 int n_steps) {
  sampler.validate();
  if (t0 < 0.0) throw InvalidTime("sample_ou: start time must be >= 0");
  TrajectoryField traj(sampler.spec, t0, t1, n_steps);
  const LatticeSpec& s = sampler.spec;
  const double h = traj.dt();
  parallel_for(s.size(), [&](std::int64_t lin) {
    if (!s.is_active(lin)) return;
    const std::int64_t cl = s.conjugate_index(lin);
    if (cl < lin) return;  // one representative per pair
    const double lambda = s.k_norm_sq(lin);
    const double sigma2 = sampler.intensity / lambda;
    const double w = sampler.f(sampler.epsilon * std::sqrt(lambda));
    const double v0 = sampler.mode == OUMode::stationary
                          ? sigma2
                          : sigma2 * (1.0 - std::exp(-2.0 * lambda * t0));
    auto [g1, g2] = counter_gaussian_pair(sampler.seed, sampler.stream_id,
                                          static_cast<std::uint64_t>(lin), 0);
    cplx z = std::sqrt(0.5 * v0) * cplx{g1, g2};
    traj[0].coeff[lin] = w * z;
    traj[0].coeff[cl] = std::conj(w * z);
    const double decay = std::exp(-lambda * h);
    const double si = std::sqrt(0.5 * sigma2 * (1.0 - decay * decay));
    for (int m = 1; m <= n_steps; ++m) {
      auto [a, b] =
          counter_gaussian_pair(sampler.seed, sampler.stream_id,
                                static_cast<std::uint64_t>(lin),
                                static_cast<std::uint64_t>(m));
      z = decay * z + si * cplx{a, b};
      traj[m].coeff[lin] = w * z;
      traj[m].coeff[cl] = std::conj(w * z);
    }
  });
  return traj;
}

// Common-random-numbers coupling: the same mode noise under two mollification
// scales, so differences measure pure epsilon effects.
inline std::pair<TrajectoryField, TrajectoryField> coupled_pair(
    const OUSampler& sampler, double eps1, double eps2, double t0, double t1,
    int n_steps) {
  OUSampler a = sampler;
  OUSampler b = sampler;
  a.epsilon = eps1;
  b.epsilon = eps2;
  return {sample_ou(a, t0, t1, n_steps), sample_ou(b, t0, t1, n_steps)};
}

}  // namespace pcd
