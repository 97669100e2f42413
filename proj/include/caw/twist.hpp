#pragma once

// Near-integrable twist inner map q' = q + g(p) + O(eps^k), p' = p + O(eps^k)
// on T^n x [0,1]^n, tracked on the universal cover of the torus, plus the
// shearing bounds. Sup norms throughout.

#include <caw/core.hpp>

#include <functional>
#include <utility>
#include <vector>

namespace caw {

struct TwistMap {
  Index n = 1;
  double epsilon = 0.1;
  double tau = 0.0;       // twist order: eps^tau T_minus <= |Dg v|/|v| <= T_plus
  int k = 7;              // error order
  double T_minus = 1.0;
  double T_plus = 1.0;
  double C = 1.0;         // configured bound on the eps^k error terms
  double R = 0.0;         // quadratic remainder constant of g

  std::function<Vec(const Vec&)> g;
  std::function<Mat(const Vec&)> dg;
  std::function<Box(const Box&)> g_box;                  // certified range of g over a p-box
  std::function<Vec(const Vec&, const Vec&)> error_q;    // (q,p) -> error, sup <= error_sup
  std::function<Vec(const Vec&, const Vec&)> error_p;
  double error_sup = 0.5;  // actual sup bound of the error maps (must be <= C)

  double error_scale() const { return std::pow(epsilon, k); }
};

// omega: a fixed irrational-flavored frequency vector (golden-ratio multiples).
inline Vec default_frequency(Index n) {
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  Vec w(n);
  for (Index i = 0; i < n; ++i) w[i] = std::fmod(phi * static_cast<double>(i + 1), 1.0);
  return w;
}

// Benchmark twist map. Linear g (nonlinear_a = 0) gives R = 0 and a sharp
// sandwich with T- = T+ = 1; nonlinear_a in (0,1) adds a sine ripple with
// T- = 1 - a, T+ = 1 + a and R = eps^tau * a * pi. Error terms are
// sin/cos(2 pi q_1) scaled by (C/2) eps^k so that the drift *difference*
// between two orbits stays within C eps^k per step.
inline TwistMap make_twist(Index n, double epsilon, double tau, int k, double C = 1.0,
                           double nonlinear_a = 0.0, Vec omega = Vec()) {
  if (omega.size() == 0) omega = default_frequency(n);
  TwistMap m;
  m.n = n;
  m.epsilon = epsilon;
  m.tau = tau;
  m.k = k;
  m.C = C;
  const double et = std::pow(epsilon, tau);
  const double a = nonlinear_a;
  m.T_minus = 1.0 - a;
  m.T_plus = 1.0 + a;
  m.R = et * a * M_PI;
  m.g = [omega, et, a](const Vec& p) -> Vec {
    Vec r = omega + et * p;
    if (a != 0.0)
      for (Index i = 0; i < p.size(); ++i) r[i] += et * a * std::sin(2 * M_PI * p[i]) / (2 * M_PI);
    return r;
  };
  m.dg = [et, a](const Vec& p) -> Mat {
    Vec d = Vec::Constant(p.size(), et);
    if (a != 0.0)
      for (Index i = 0; i < p.size(); ++i) d[i] = et * (1.0 + a * std::cos(2 * M_PI * p[i]));
    return Mat(d.asDiagonal());
  };
  // g is componentwise increasing for a < 1, so the box range is exact.
  m.g_box = [m](const Box& pb) -> Box { return Box{m.g(pb.lo), m.g(pb.hi)}; };
  const double half_c = 0.5 * C;
  m.error_q = [half_c, n](const Vec& q, const Vec&) -> Vec {
    return Vec::Constant(n, half_c * std::sin(2 * M_PI * q[0]));
  };
  m.error_p = [half_c, n](const Vec& q, const Vec&) -> Vec {
    return Vec::Constant(n, half_c * std::cos(2 * M_PI * q[0]));
  };
  m.error_sup = half_c;
  return m;
}

inline void twist_check_domain(const TwistMap& m, const Vec& p) {
  for (Index i = 0; i < m.n; ++i)
    if (p[i] < -kBoundaryTol || p[i] > 1.0 + kBoundaryTol)
      throw CawError("apply_twist: p left [0,1]^n");
}

inline std::pair<Vec, Vec> twist_step(const TwistMap& m, const Vec& q, const Vec& p) {
  twist_check_domain(m, p);
  const double es = m.error_scale();
  return {q + m.g(p) + es * m.error_q(q, p), p + es * m.error_p(q, p)};
}

// One inverse step by fixed-point iteration (the eps^k terms are a small
// perturbation of the explicitly invertible integrable step).
inline std::pair<Vec, Vec> twist_step_inverse(const TwistMap& m, const Vec& qb, const Vec& pb,
                                              double tol = 1e-12, int max_iter = 200) {
  const double es = m.error_scale();
  Vec p = pb, q = qb - m.g(pb);
  for (int it = 0; it < max_iter; ++it) {
    const Vec pn = pb - es * m.error_p(q, p);
    const Vec qn = qb - m.g(pn) - es * m.error_q(q, pn);
    const double delta = std::max(sup_norm(pn - p), sup_norm(qn - q));
    p = pn;
    q = qn;
    if (delta < tol) {
      twist_check_domain(m, p);
      return {q, p};
    }
  }
  throw CawError("apply_twist: inverse solve did not converge");
}

// N-fold composition; q on the universal cover, p confined to [0,1]^n.
inline std::pair<Vec, Vec> apply_twist(const TwistMap& m, Vec q, Vec p, long steps) {
  if (steps >= 0) {
    for (long i = 0; i < steps; ++i) std::tie(q, p) = twist_step(m, q, p);
  } else {
    for (long i = 0; i < -steps; ++i) std::tie(q, p) = twist_step_inverse(m, q, p);
  }
  twist_check_domain(m, p);
  return {q, p};
}

struct ShearBounds {
  double delta_lower = 0.0;  // lower bound on Delta_j^N
  double omega_upper = 0.0;  // upper bound on Omega^N
};

// Analytic shearing bounds for a [Q x P] window with |Q| = gamma, |P| = delta.
inline ShearBounds shear_bounds(const TwistMap& m, double gamma, double delta, long N, double R,
                                double C) {
  if (gamma < 0.0 || !(delta > 0.0))
    throw CawError("shear_bounds: gamma must be nonnegative and delta positive");
  const double an = std::abs(static_cast<double>(N));
  const double ek = std::pow(m.epsilon, m.k);
  ShearBounds b;
  b.delta_lower = std::pow(m.epsilon, m.tau) * an * m.T_minus * delta - an * R * delta * delta -
                  gamma - C * an * an * ek;
  b.omega_upper = gamma + an * m.T_plus * delta + C * an * an * ek;
  return b;
}

struct MeasuredShear {
  Vec delta_measured;  // per exit axis j, truncated at 0
  Vec delta_raw;       // signed separation (negative = overlap), per axis
  double omega_measured = 0.0;
  bool degenerate = false;  // N == 0
};

// Empirical shear of the window Q x P under f^N on a grid: per-axis min
// distance between images of the opposite exit faces E_j^0, E_j^1 and the
// max spread over the whole window. Serial folds in index order keep the
// output bit-reproducible.
inline MeasuredShear measure_shear(const TwistMap& m, const Vec& q_lower, double gamma,
                                   const Vec& p_lower, double delta, long N, int grid) {
  if (grid < 2) throw CawError("measure_shear: grid must be >= 2");
  const Index n = m.n;

  const auto linspace = [&](double lo, double len, int cnt) {
    std::vector<double> v(static_cast<std::size_t>(cnt));
    for (int i = 0; i < cnt; ++i) v[static_cast<std::size_t>(i)] = lo + len * i / (cnt - 1);
    return v;
  };

  // Enumerate a full grid over given per-axis sample lists.
  const auto enumerate = [&](const std::vector<std::vector<double>>& axes,
                             const std::function<void(const Vec&)>& fn) {
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
      Vec x(static_cast<Index>(axes.size()));
      for (std::size_t i = 0; i < axes.size(); ++i) x[static_cast<Index>(i)] = axes[i][idx[i]];
      fn(x);
      std::size_t k = 0;
      for (; k < axes.size(); ++k) {
        if (++idx[k] < axes[k].size()) break;
        idx[k] = 0;
      }
      if (k == axes.size()) break;
    }
  };

  std::vector<std::vector<double>> q_axes(static_cast<std::size_t>(n)),
      p_axes(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    q_axes[static_cast<std::size_t>(i)] = linspace(q_lower[i], gamma, grid);
    p_axes[static_cast<std::size_t>(i)] = linspace(p_lower[i], delta, grid);
  }

  const auto iterate_q = [&](const Vec& q0, const Vec& p0) {
    return apply_twist(m, q0, p0, N).first;
  };

  MeasuredShear out;
  out.degenerate = (N == 0);
  out.delta_measured = Vec::Zero(n);
  out.delta_raw = Vec::Zero(n);

  for (Index j = 0; j < n; ++j) {
    // Faces E_j^0, E_j^1: p_j pinned to the two ends, everything else gridded.
    std::vector<Vec> img0, img1;
    for (int side = 0; side < 2; ++side) {
      auto axes = q_axes;
      for (Index i = 0; i < n; ++i)
        axes.push_back(i == j ? std::vector<double>{p_lower[j] + side * delta}
                              : p_axes[static_cast<std::size_t>(i)]);
      auto& dst = side == 0 ? img0 : img1;
      enumerate(axes, [&](const Vec& x) { dst.push_back(iterate_q(x.head(n), x.tail(n))); });
    }
    double dmin = std::numeric_limits<double>::infinity();
    for (const Vec& a : img0)
      for (const Vec& b : img1) dmin = std::min(dmin, sup_norm(b - a));
    out.delta_measured[j] = dmin;
    // Signed per-axis separation of the two image clouds (exact for n = 1).
    double raw = -std::numeric_limits<double>::infinity();
    for (Index i = 0; i < n; ++i) {
      double lo0 = std::numeric_limits<double>::infinity(), hi0 = -lo0, lo1 = lo0, hi1 = -lo0;
      for (const Vec& a : img0) lo0 = std::min(lo0, a[i]), hi0 = std::max(hi0, a[i]);
      for (const Vec& b : img1) lo1 = std::min(lo1, b[i]), hi1 = std::max(hi1, b[i]);
      raw = std::max(raw, interval_gap(lo0, hi0, lo1, hi1));
    }
    out.delta_raw[j] = raw;
  }

  // Omega: max pairwise sup-distance = max over axes of the image spread.
  Vec lo = Vec::Constant(n, std::numeric_limits<double>::infinity()), hi = -lo;
  {
    auto axes = q_axes;
    for (Index i = 0; i < n; ++i) axes.push_back(p_axes[static_cast<std::size_t>(i)]);
    enumerate(axes, [&](const Vec& x) {
      const Vec qi = iterate_q(x.head(n), x.tail(n));
      for (Index i = 0; i < n; ++i) {
        lo[i] = std::min(lo[i], qi[i]);
        hi[i] = std::max(hi[i], qi[i]);
      }
    });
  }
  out.omega_measured = (hi - lo).maxCoeff();
  return out;
}

}  // namespace caw
