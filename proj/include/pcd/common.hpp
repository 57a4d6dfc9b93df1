// Shared plumbing for the spectral laboratory: error taxonomy, compensated
// accumulation, a thread-count-generic parallel loop with deterministic
// reduction order, and small numeric helpers used across modules.
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pcd {

inline constexpr const char* kVersion = "0.1.0";

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvalidField : Error { using Error::Error; };
struct SpecMismatch : Error { using Error::Error; };
struct GridMismatch : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct InvalidTime : Error { using Error::Error; };
struct ZeroMode : Error { using Error::Error; };
struct TruncationError : Error { using Error::Error; };
struct InsufficientScales : Error { using Error::Error; };
struct InvalidExponents : Error { using Error::Error; };
struct InvalidControlled : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct NoLocalSolution : Error { using Error::Error; };

// Kahan-Neumaier compensated accumulator; lattice sums add many terms of
// wildly different magnitude and the reordered-sum oracles demand 1e-10.
class KahanSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline int default_thread_count() {
  if (const char* env = std::getenv("PCD_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Static parallel loop over [0, n). Work item i always runs with the same
// arguments regardless of thread count; callers that reduce must write into
// per-index slots and fold sequentially afterwards so results are
// bit-identical for any thread count.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                         int threads = 0) {
  if (threads <= 0) threads = default_thread_count();
  if (threads <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

// Least-squares line fit y ~ a + b x; returns {intercept, slope, r2}.
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw IndexError("fit_line: need at least two matching points");
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
    syy += y[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw IndexError("fit_line: degenerate abscissae");
  LineFit f;
  f.slope = (n * sxy - sx * sy) / denom;
  f.intercept = (sy - f.slope * sx) / n;
  const double ss_tot = syy - sy * sy / n;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += e * e;
  }
  f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

// phi1(z) = (1 - e^{-z})/z and phi2(z) = (1 - (1+z)e^{-z})/z^2, the exponential
// quadrature weights; series branch keeps them accurate through z -> 0.
inline double phi1(double z) {
  if (std::abs(z) < 1e-5) return 1.0 - z / 2.0 + z * z / 6.0 - z * z * z / 24.0;
  return -std::expm1(-z) / z;
}

inline double phi2(double z) {
  if (std::abs(z) < 1e-4) return 0.5 - z / 3.0 + z * z / 8.0 - z * z * z / 30.0;
  return (-std::expm1(-z) - z * std::exp(-z)) / (z * z);
}

}  // namespace pcd
