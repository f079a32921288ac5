#pragma once

#include <functional>

namespace collapse {

// Adaptive Gauss-Kronrod (7-15) quadrature. Intervals are bisected until the
// embedded error estimate |K15 - G7| meets the relative tolerance, so smooth
// integrands converge fast and the density normalizers in this project get
// their advertised 1e-8 relative accuracy without hand-tuned grids.

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  int subdivisions = 0;
};

QuadratureResult integrate(const std::function<double(double)>& f, double a,
                           double b, double rel_tol = 1e-10);

// Integral over [a, inf). Accumulates geometrically growing chunks until two
// consecutive chunks contribute less than rel_tol relative to the running
// total. Intended for integrands with superpolynomial decay; it throws if no
// convergence is reached within the chunk budget.
QuadratureResult integrate_semi_infinite(const std::function<double(double)>& f,
                                         double a, double rel_tol = 1e-10);

}  // namespace collapse
