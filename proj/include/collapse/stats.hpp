#pragma once

#include <functional>
#include <span>
#include <vector>

namespace collapse {

// Small sample-statistics helpers shared by experiments and tests.

double mean(std::span<const double> xs);
double sample_stddev(std::span<const double> xs);
// Standard error of the mean.
double standard_error(std::span<const double> xs);
// Median with the usual midpoint convention for even sizes; copies its input.
double median(std::span<const double> xs);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> mass;   // fraction of samples per bin
  double mass_outside = 0.0;  // fraction outside [lo, hi)
};

Histogram histogram(std::span<const double> samples, int n_bins, double lo,
                    double hi);

// Total-variation distance between the empirical histogram of `samples` and
// a reference density integrated bin by bin: TV = half the L1 gap, counting
// mass outside [lo, hi) on both sides.
double histogram_tv_distance(std::span<const double> samples, int n_bins,
                             double lo, double hi,
                             const std::function<double(double)>& density,
                             double rel_tol = 1e-8);

}  // namespace collapse
