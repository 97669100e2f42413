#pragma once

// The benchmark system in normal-form coordinates (s,u,q,p): hyperbolic
// contraction/expansion blocks with small nonlinear errors around an
// invariant manifold {s=u=0}, the near-integrable twist inner map, the
// affine-plus-quadratic homoclinic jump between the minus and plus charts,
// and the extended skew product over (theta, xi).
//
// Flat state layout: [s(0..m) | u(m..2m) | q(2m..2m+n) | p(2m+n..2m+2n)],
// extended states append [theta(ell1) | xi(ell2)].

#include <caw/core.hpp>
#include <caw/maps.hpp>
#include <caw/twist.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace caw {

struct ModelParams {
  double epsilon = 0.1;
  double sigma = 0.0, tau = 0.0, upsilon = 0.0;
  int k = 7, L = 10;
  Index n = 1, m = 1, ell1 = 1, ell2 = 1;
  double lambda_minus = 0.49, lambda_plus = 0.51;
  double mu_minus = 1.96, mu_plus = 2.04;
  double T_minus = 1.0, T_plus = 1.0;
  double C = 1.0;        // bound on the eps^k inner error terms
  double R = 0.0;        // quadratic remainder of g (0 for the linear twist)
  double R_prime = 1.0;  // quadratic remainder of the jump chart change
  double delta_s = 0.01, delta_u = 0.04;
  long N_plus = 1, N_minus = 1;
  double nu = 0.1;           // stable-leaf distance of the homoclinic point
  double nu_prime = 0.1;     // unstable-leaf distance
  double omega_prime = 0.05; // q-offset between jump-out and jump-in anchors
  Vec xi_star;               // extended-system keys, optional
  double C_ext = 1.0;
  std::uint64_t seed = 1;
  double nonlinear_a = 0.0;  // sine ripple amplitude of g; implies R > 0

  Index dim() const { return 2 * m + 2 * n; }
  Index ext_dim() const { return dim() + ell1 + ell2; }
};

struct HyperbolicBlock {
  Index m = 1;
  double lambda_minus = 0.49, lambda_plus = 0.51;
  double mu_minus = 1.96, mu_plus = 2.04;
  double delta_s = 0.01, delta_u = 0.04;
  std::function<Mat(const Vec& q, const Vec& p)> A_s, A_u;
  std::function<Vec(const Vec& s, const Vec& u, const Vec& q, const Vec& p)> Ns_err;
  std::function<Vec(const Vec& u, const Vec& q, const Vec& p)> Nu_err;
  // Per-step diagonal factor ranges; valid when the block acts axiswise.
  bool diagonal = true;
};

struct NormalFormSystem {
  HyperbolicBlock hyp;
  TwistMap inner;
  double box_radius = 1.0;  // chart neighborhood: |s|, |u| <= box_radius
  std::function<Mat(const Vec& flat)> step_jacobian;  // analytic, optional

  Index m() const { return hyp.m; }
  Index n() const { return inner.n; }
  Index dim() const { return 2 * m() + 2 * n(); }
};

inline Vec pack_state(const Vec& s, const Vec& u, const Vec& q, const Vec& p) {
  Vec x(s.size() + u.size() + q.size() + p.size());
  x << s, u, q, p;
  return x;
}

struct StateView {
  Vec s, u, q, p;
};

inline StateView unpack_state(const NormalFormSystem& sys, const Vec& x) {
  const Index m = sys.m(), n = sys.n();
  return StateView{x.segment(0, m), x.segment(m, m), x.segment(2 * m, n), x.segment(2 * m + n, n)};
}

// Default benchmark: diagonal blocks with sine-coupled errors through q_1,
// rates exactly inside the configured sandwiches.
inline NormalFormSystem make_system(const ModelParams& mp) {
  NormalFormSystem sys;
  HyperbolicBlock& h = sys.hyp;
  h.m = mp.m;
  h.lambda_minus = mp.lambda_minus;
  h.lambda_plus = mp.lambda_plus;
  h.mu_minus = mp.mu_minus;
  h.mu_plus = mp.mu_plus;
  const double lam0 = 0.5 * (mp.lambda_minus + mp.lambda_plus);
  const double mu0 = 0.5 * (mp.mu_minus + mp.mu_plus);
  const double ds = std::min(mp.delta_s, 0.5 * (mp.lambda_plus - mp.lambda_minus));
  const double du = std::min(mp.delta_u, 0.5 * (mp.mu_plus - mp.mu_minus));
  h.delta_s = ds;
  h.delta_u = du;
  const Index m = mp.m;
  h.A_s = [lam0, m](const Vec&, const Vec&) -> Mat { return lam0 * Mat::Identity(m, m); };
  h.A_u = [mu0, m](const Vec&, const Vec&) -> Mat { return mu0 * Mat::Identity(m, m); };
  h.Ns_err = [ds](const Vec& s, const Vec&, const Vec& q, const Vec&) -> Vec {
    return ds * std::sin(2 * M_PI * q[0]) * s;
  };
  h.Nu_err = [du](const Vec& u, const Vec& q, const Vec&) -> Vec {
    return du * std::cos(2 * M_PI * q[0]) * u;
  };
  h.diagonal = true;

  sys.inner = make_twist(mp.n, mp.epsilon, mp.tau, mp.k, mp.C, mp.nonlinear_a);
  sys.box_radius = 1.0;

  // Analytic one-step Jacobian of the default benchmark.
  const double es = std::pow(mp.epsilon, mp.k);
  const double half_c = 0.5 * mp.C;
  const Index n = mp.n;
  const TwistMap tw = sys.inner;
  sys.step_jacobian = [=](const Vec& x) -> Mat {
    const Index d = 2 * m + 2 * n;
    Mat j = Mat::Zero(d, d);
    const Vec s = x.segment(0, m), u = x.segment(m, m), q = x.segment(2 * m, n),
              p = x.segment(2 * m + n, n);
    const double sq = std::sin(2 * M_PI * q[0]), cq = std::cos(2 * M_PI * q[0]);
    // s row: (lam0 + ds sin(2 pi q1)) s
    j.block(0, 0, m, m) = (lam0 + ds * sq) * Mat::Identity(m, m);
    j.block(0, 2 * m, m, 1) = ds * 2 * M_PI * cq * s;
    // u row: (mu0 + du cos(2 pi q1)) u
    j.block(m, m, m, m) = (mu0 + du * cq) * Mat::Identity(m, m);
    j.block(m, 2 * m, m, 1) = -du * 2 * M_PI * sq * u;
    // q row: q + g(p) + eps^k (C/2) sin(2 pi q1) 1
    j.block(2 * m, 2 * m, n, n) = Mat::Identity(n, n);
    j.block(2 * m, 2 * m, n, 1) += es * half_c * 2 * M_PI * cq * Vec::Ones(n);
    j.block(2 * m, 2 * m + n, n, n) = tw.dg(p);
    // p row: p + eps^k (C/2) cos(2 pi q1) 1
    j.block(2 * m + n, 2 * m + n, n, n) = Mat::Identity(n, n);
    j.block(2 * m + n, 2 * m, n, 1) = -es * half_c * 2 * M_PI * sq * Vec::Ones(n);
    return j;
  };
  return sys;
}

inline void phi_check_box(const NormalFormSystem& sys, const Vec& s, const Vec& u) {
  if (sup_norm(s) > sys.box_radius + kBoundaryTol || sup_norm(u) > sys.box_radius + kBoundaryTol)
    throw CawError("apply_phi: orbit escaped the normal-form chart");
}

inline Vec phi_step(const NormalFormSystem& sys, const Vec& x) {
  const StateView v = unpack_state(sys, x);
  phi_check_box(sys, v.s, v.u);
  const auto [qn, pn] = twist_step(sys.inner, v.q, v.p);
  const Vec sn = sys.hyp.A_s(v.q, v.p) * v.s + sys.hyp.Ns_err(v.s, v.u, v.q, v.p);
  const Vec un = sys.hyp.A_u(v.q, v.p) * v.u + sys.hyp.Nu_err(v.u, v.q, v.p);
  return pack_state(sn, un, qn, pn);
}

inline Vec phi_step_inverse(const NormalFormSystem& sys, const Vec& x, double tol = 1e-12,
                            int max_iter = 200) {
  const StateView v = unpack_state(sys, x);
  const auto [q, p] = twist_step_inverse(sys.inner, v.q, v.p, tol, max_iter);
  const Mat as = sys.hyp.A_s(q, p), au = sys.hyp.A_u(q, p);
  const Eigen::PartialPivLU<Mat> lus(as), luu(au);
  // u first (A_u^-1 contracts), then s given u.
  Vec u = luu.solve(v.u);
  for (int it = 0; it < max_iter; ++it) {
    const Vec un = luu.solve(v.u - sys.hyp.Nu_err(u, q, p));
    const double d = sup_norm(un - u);
    u = un;
    if (d < tol) break;
    if (it + 1 == max_iter) throw CawError("apply_phi: inverse u-solve did not converge");
  }
  Vec s = lus.solve(v.s);
  for (int it = 0; it < max_iter; ++it) {
    const Vec sn = lus.solve(v.s - sys.hyp.Ns_err(s, u, q, p));
    const double d = sup_norm(sn - s);
    s = sn;
    if (d < tol) break;
    if (it + 1 == max_iter) throw CawError("apply_phi: inverse s-solve did not converge");
  }
  const Vec out = pack_state(s, u, q, p);
  phi_check_box(sys, s, u);
  return out;
}

inline Vec apply_phi(const NormalFormSystem& sys, Vec x, long steps) {
  if (steps >= 0)
    for (long i = 0; i < steps; ++i) x = phi_step(sys, x);
  else
    for (long i = 0; i < -steps; ++i) x = phi_step_inverse(sys, x);
  return x;
}

// ---------------------------------------------------------------------------
// Homoclinic jump

struct JumpConstants {
  double C1, C2, C3, C4, C5, C6, C7, C8;
};

struct HomoclinicJump {
  Index m = 1, n = 1;
  Mat A1, A2, A3, A4;  // m x m blocks of the hyperbolic part
  Mat B1, B2, B3, B4;  // n x n blocks of the center part
  double sigma = 0.0, upsilon = 0.0, epsilon = 0.1;
  double R_prime = 1.0;
  std::function<Vec(const Vec& dx)> remainder;  // |rem(dx)| <= R_prime |dx|^2
  Vec center_minus, center_plus;                // x_c in the two charts
  long N_plus = 1, N_minus = 1;
  double omega_prime = 0.05, nu = 0.1, nu_prime = 0.1;
  double radius = 1.0;

  Index dim() const { return 2 * m + 2 * n; }

  Mat dphi() const {
    const double esig = std::pow(epsilon, sigma), eups = std::pow(epsilon, upsilon);
    Mat d = Mat::Zero(dim(), dim());
    d.block(0, 0, m, m) = esig * A1;
    d.block(0, m, m, m) = A2;
    d.block(m, 0, m, m) = A3;
    d.block(m, m, m, m) = esig * A4;
    const Index o = 2 * m;
    d.block(o, o, n, n) = B1;
    d.block(o, o + n, n, n) = eups * B2;
    d.block(o + n, o, n, n) = eups * B3;
    d.block(o + n, o + n, n, n) = B4;
    return d;
  }

  JumpConstants constants() const {
    if (min_singular_value(A1) <= 0.0 || min_singular_value(A4) <= 0.0 ||
        min_singular_value(B2) <= 0.0 || min_singular_value(B3) <= 0.0)
      throw CawError("homoclinic jump: invertibility hypothesis violated (A1, A4, B2, B3)");
    return JumpConstants{sup_operator_norm(A1), sup_operator_norm(A2), sup_operator_norm(A3),
                         min_singular_value(A4), sup_operator_norm(B1), sup_operator_norm(B2),
                         min_singular_value(B3), sup_operator_norm(B4)};
  }
};

inline HomoclinicJump make_jump(const ModelParams& mp, Vec center_minus, Vec center_plus) {
  HomoclinicJump j;
  j.m = mp.m;
  j.n = mp.n;
  j.A1 = Mat::Identity(mp.m, mp.m);
  j.A4 = Mat::Identity(mp.m, mp.m);
  j.A2 = 0.1 * Mat::Identity(mp.m, mp.m);
  j.A3 = 0.1 * Mat::Identity(mp.m, mp.m);
  j.B1 = Mat::Identity(mp.n, mp.n);
  j.B2 = Mat::Identity(mp.n, mp.n);
  j.B3 = Mat::Identity(mp.n, mp.n);
  j.B4 = Mat::Identity(mp.n, mp.n);
  j.sigma = mp.sigma;
  j.upsilon = mp.upsilon;
  j.epsilon = mp.epsilon;
  j.R_prime = mp.R_prime;
  const double rp = mp.R_prime;
  j.remainder = [rp](const Vec& dx) -> Vec { return 0.75 * rp * dx.array().square(); };
  j.center_minus = std::move(center_minus);
  j.center_plus = std::move(center_plus);
  j.N_plus = mp.N_plus;
  j.N_minus = mp.N_minus;
  j.omega_prime = mp.omega_prime;
  j.nu = mp.nu;
  j.nu_prime = mp.nu_prime;
  j.radius = 1.0;
  return j;
}

inline Vec apply_jump(const HomoclinicJump& j, const Vec& x) {
  const Vec dx = x - j.center_minus;
  if (sup_norm(dx) > j.radius + kBoundaryTol)
    throw CawError("apply_jump: state outside the jump neighborhood");
  return j.center_plus + j.dphi() * dx + j.remainder(dx);
}

// ---------------------------------------------------------------------------
// Extended skew system over Sigma = T^ell1 x [0,1]^ell2

struct ExtendedSystem {
  NormalFormSystem base;
  Index ell1 = 1, ell2 = 1;
  int L = 10;
  double epsilon = 0.1;
  double C_ext = 1.0;
  Vec xi_star;
  Vec theta_rate;  // nominal theta advance per step (lifted, no mod)
  // Coupling terms, all sup-bounded by C_ext/2 so that pairwise differences
  // and plain drifts both stay within C_ext eps^L per step.
  std::function<Vec(const Vec& z, const Vec& th, const Vec& xi)> z_err;   // added to (q,p) block
  std::function<Vec(const Vec& z, const Vec& th, const Vec& xi)> th_err;
  std::function<Vec(const Vec& z, const Vec& th, const Vec& xi)> xi_err;

  Index dim() const { return base.dim() + ell1 + ell2; }
};

inline ExtendedSystem make_extended(const ModelParams& mp) {
  ExtendedSystem e;
  e.base = make_system(mp);
  e.ell1 = mp.ell1;
  e.ell2 = mp.ell2;
  e.L = mp.L;
  e.epsilon = mp.epsilon;
  e.C_ext = mp.C_ext;
  e.xi_star = mp.xi_star.size() == mp.ell2 ? mp.xi_star : Vec::Constant(mp.ell2, 0.5);
  e.theta_rate = default_frequency(mp.ell1);
  const double hc = 0.5 * mp.C_ext;
  const Index n = mp.n, m = mp.m, l1 = mp.ell1, l2 = mp.ell2;
  e.z_err = [hc, n](const Vec&, const Vec& th, const Vec&) -> Vec {
    Vec r = Vec::Zero(2 * n);
    r.head(n).setConstant(hc * std::sin(2 * M_PI * th[0]));
    r.tail(n).setConstant(hc * std::cos(2 * M_PI * th[0]) * 0.5);
    return r;
  };
  e.th_err = [hc, l1, m](const Vec& z, const Vec&, const Vec&) -> Vec {
    return Vec::Constant(l1, hc * std::cos(2 * M_PI * z[2 * m]));
  };
  e.xi_err = [hc, l2, m](const Vec& z, const Vec& th, const Vec&) -> Vec {
    return Vec::Constant(l2, hc * std::sin(2 * M_PI * (th[0] + z[2 * m])));
  };
  return e;
}

inline Vec psi_step(const ExtendedSystem& e, const Vec& w) {
  const Index d = e.base.dim();
  const Vec z = w.head(d), th = w.segment(d, e.ell1), xi = w.tail(e.ell2);
  for (Index i = 0; i < e.ell2; ++i)
    if (xi[i] < -kBoundaryTol || xi[i] > 1.0 + kBoundaryTol)
      throw CawError("apply_psi: xi left [0,1]^ell2");
  const double el = std::pow(e.epsilon, e.L);
  Vec zn = phi_step(e.base, z);
  zn.tail(2 * e.base.n()) += el * e.z_err(z, th, xi);
  const Vec thn = th + e.theta_rate + el * e.th_err(z, th, xi);
  const Vec xin = xi + el * e.xi_err(z, th, xi);
  Vec out(e.dim());
  out << zn, thn, xin;
  return out;
}

inline Vec psi_step_inverse(const ExtendedSystem& e, const Vec& w, double tol = 1e-12,
                            int max_iter = 200) {
  const Index d = e.base.dim();
  const Vec zb = w.head(d), thb = w.segment(d, e.ell1), xib = w.tail(e.ell2);
  const double el = std::pow(e.epsilon, e.L);
  Vec z = phi_step_inverse(e.base, zb), th = thb - e.theta_rate, xi = xib;
  for (int it = 0; it < max_iter; ++it) {
    Vec zt = zb;
    zt.tail(2 * e.base.n()) -= el * e.z_err(z, th, xi);
    const Vec zn = phi_step_inverse(e.base, zt);
    const Vec thn = thb - e.theta_rate - el * e.th_err(zn, th, xi);
    const Vec xin = xib - el * e.xi_err(zn, thn, xi);
    const double delta =
        std::max({sup_norm(zn - z), sup_norm(thn - th), sup_norm(xin - xi)});
    z = zn;
    th = thn;
    xi = xin;
    if (delta < tol) break;
    if (it + 1 == max_iter) throw CawError("apply_psi: inverse solve did not converge");
  }
  Vec out(e.dim());
  out << z, th, xi;
  return out;
}

inline Vec apply_psi(const ExtendedSystem& e, Vec w, long steps) {
  if (steps >= 0)
    for (long i = 0; i < steps; ++i) w = psi_step(e, w);
  else
    for (long i = 0; i < -steps; ++i) w = psi_step_inverse(e, w);
  return w;
}

}  // namespace caw
