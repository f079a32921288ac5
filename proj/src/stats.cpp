#include "collapse/stats.hpp"

#include <algorithm>
#include <cmath>

#include "collapse/errors.hpp"
#include "collapse/quadrature.hpp"

namespace collapse {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("mean: empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_stddev(std::span<const double> xs) {
  if (xs.size() < 2) throw ConfigError("sample_stddev: need at least 2 values");
  const double m = mean(xs);
  double s2 = 0.0;
  for (double x : xs) s2 += (x - m) * (x - m);
  return std::sqrt(s2 / static_cast<double>(xs.size() - 1));
}

double standard_error(std::span<const double> xs) {
  return sample_stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

double median(std::span<const double> xs) {
  if (xs.empty()) throw ConfigError("median: empty sample");
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Histogram histogram(std::span<const double> samples, int n_bins, double lo,
                    double hi) {
  if (n_bins < 1) throw ConfigError("histogram: n_bins must be >= 1");
  if (!(hi > lo)) throw ConfigError("histogram: need hi > lo");
  if (samples.empty()) throw ConfigError("histogram: empty sample");

  Histogram h;
  h.lo = lo;
  h.hi = hi;
  h.mass.assign(static_cast<std::size_t>(n_bins), 0.0);
  const double width = (hi - lo) / n_bins;
  std::int64_t outside = 0;
  for (double x : samples) {
    if (x < lo || x >= hi) {
      ++outside;
      continue;
    }
    auto idx = static_cast<std::size_t>((x - lo) / width);
    if (idx >= h.mass.size()) idx = h.mass.size() - 1;  // guard fp edge
    h.mass[idx] += 1.0;
  }
  const double n = static_cast<double>(samples.size());
  for (auto& m : h.mass) m /= n;
  h.mass_outside = static_cast<double>(outside) / n;
  return h;
}

double histogram_tv_distance(std::span<const double> samples, int n_bins,
                             double lo, double hi,
                             const std::function<double(double)>& density,
                             double rel_tol) {
  const Histogram h = histogram(samples, n_bins, lo, hi);
  const double width = (hi - lo) / n_bins;
  double l1 = 0.0;
  double mass_in = 0.0;
  for (int b = 0; b < n_bins; ++b) {
    const double a = lo + b * width;
    const double q = integrate(density, a, a + width, rel_tol).value;
    mass_in += q;
    l1 += std::abs(h.mass[static_cast<std::size_t>(b)] - q);
  }
  // Everything the reference density keeps outside the window competes with
  // the empirical out-of-window fraction.
  const double q_outside = std::max(0.0, 1.0 - mass_in);
  l1 += std::abs(h.mass_outside - q_outside);
  return 0.5 * l1;
}

}  // namespace collapse
