#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "bnf/error.hpp"

namespace bnf::roots {

struct Result {
  double x;
  double residual;  // f(x)
  int iterations;
  bool converged;
};

struct Tolerance {
  double x_abs = 1e-15;
  double x_rel = 2.0 * std::numeric_limits<double>::epsilon();
  double f_abs = 0.0;  // stop as soon as |f| <= f_abs
  int max_iterations = 128;
};

// Chandrupatla's bracketing method: inverse quadratic interpolation guarded by
// bisection. Requires f(lo) and f(hi) of opposite sign (or one of them zero).
template <class F>
Result chandrupatla(F&& f, double lo, double hi, const Tolerance& tol = {}) {
  double fa = f(hi);
  double fb = f(lo);
  if (fa == 0.0) return {hi, 0.0, 0, true};
  if (fb == 0.0) return {lo, 0.0, 0, true};
  if (std::signbit(fa) == std::signbit(fb)) {
    throw DomainError("chandrupatla: root not bracketed");
  }
  double a = hi, b = lo, c = hi;
  double fc = fa;
  double t = 0.5;
  double xm = b, fm = fb;
  for (int it = 1; it <= tol.max_iterations; ++it) {
    const double xt = a + t * (b - a);
    const double ft = f(xt);
    if (std::signbit(ft) == std::signbit(fa)) {
      c = a;
      fc = fa;
    } else {
      c = b;
      b = a;
      fc = fb;
      fb = fa;
    }
    a = xt;
    fa = ft;

    if (std::abs(fa) < std::abs(fb)) {
      xm = a;
      fm = fa;
    } else {
      xm = b;
      fm = fb;
    }
    if (fm == 0.0 || std::abs(fm) <= tol.f_abs) return {xm, fm, it, true};

    const double width_tol = 2.0 * tol.x_rel * std::abs(xm) + tol.x_abs;
    const double tlim = width_tol / std::abs(b - c);
    if (tlim > 0.5) return {xm, fm, it, true};

    const double xi = (a - b) / (c - b);
    const double phi = (fa - fb) / (fc - fb);
    if (1.0 - std::sqrt(1.0 - xi) < phi && phi < std::sqrt(xi)) {
      t = fa / (fb - fa) * fc / (fb - fc) + (c - a) / (b - a) * fa / (fc - fa) * fb / (fc - fb);
    } else {
      t = 0.5;
    }
    t = std::clamp(t, tlim, 1.0 - tlim);
  }
  return {xm, fm, tol.max_iterations, false};
}

}  // namespace bnf::roots
