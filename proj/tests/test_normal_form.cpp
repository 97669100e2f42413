#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <caw/normal_form.hpp>
#include <caw/stage_maps.hpp>
#include <support/oracles.hpp>

using namespace caw;

namespace {

ModelParams default_params() {
  ModelParams mp;
  mp.epsilon = 0.1;
  mp.k = 7;
  return mp;
}

}  // namespace

TEST_CASE("Lambda = {s=u=0} is invariant") {
  const NormalFormSystem sys = make_system(default_params());
  Vec x = pack_state(Vec::Zero(1), Vec::Zero(1), Vec::Constant(1, 0.3), Vec::Constant(1, 0.5));
  x = apply_phi(sys, x, 500);
  CHECK(sup_norm(x.head(2)) == 0.0);
}

TEST_CASE("pure diagonal contraction: three steps of 0.5") {
  ModelParams mp = default_params();
  mp.m = 2;
  mp.lambda_minus = 0.5;
  mp.lambda_plus = 0.5;
  mp.delta_s = 0.0;
  const NormalFormSystem sys = make_system(mp);
  Vec s(2);
  s << 0.8, 0.0;
  Vec x = pack_state(s, Vec::Zero(2), Vec::Constant(1, 0.1), Vec::Constant(1, 0.5));
  x = apply_phi(sys, x, 3);
  CHECK(x[0] == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(x[1] == 0.0);
}

TEST_CASE("per-step rates stay inside the configured sandwiches") {
  const ModelParams mp = default_params();
  const NormalFormSystem sys = make_system(mp);
  Rng rng(9);
  for (int t = 0; t < 10000; ++t) {
    const Vec s = rng.uniform_vec(1, -0.9, 0.9), u = rng.uniform_vec(1, -0.9, 0.9);
    const Vec q = rng.uniform_vec(1, -2, 2), p = rng.uniform_vec(1, 0.05, 0.95);
    if (sup_norm(s) < 1e-6 || sup_norm(u) < 1e-6) continue;
    const Vec y = phi_step(sys, pack_state(s, u, q, p));
    const double cs = sup_norm(y.segment(0, 1)) / sup_norm(s);
    const double cu = sup_norm(y.segment(1, 1)) / sup_norm(u);
    CHECK(cs >= mp.lambda_minus - 1e-12);
    CHECK(cs <= mp.lambda_plus + 1e-12);
    CHECK(cu >= mp.mu_minus - 1e-12);
    CHECK(cu <= mp.mu_plus + 1e-12);
  }
}

TEST_CASE("apply_phi inverts") {
  const NormalFormSystem sys = make_system(default_params());
  const Vec x0 =
      pack_state(Vec::Constant(1, 0.2), Vec::Constant(1, 0.01), Vec::Constant(1, 0.7),
                 Vec::Constant(1, 0.4));
  const Vec x1 = apply_phi(sys, x0, 6);
  const Vec x2 = apply_phi(sys, x1, -6);
  CHECK(sup_norm(x2 - x0) < 1e-10);
}

TEST_CASE("orbit escaping the chart raises") {
  const NormalFormSystem sys = make_system(default_params());
  const Vec x0 = pack_state(Vec::Zero(1), Vec::Constant(1, 0.6), Vec::Constant(1, 0.1),
                            Vec::Constant(1, 0.5));
  CHECK_THROWS_WITH_AS(apply_phi(sys, x0, 10), doctest::Contains("escaped"), CawError);
}

TEST_CASE("analytic step Jacobian matches finite differences") {
  const NormalFormSystem sys = make_system(default_params());
  const Vec x = pack_state(Vec::Constant(1, 0.3), Vec::Constant(1, 0.2), Vec::Constant(1, 0.45),
                           Vec::Constant(1, 0.6));
  const Mat ja = sys.step_jacobian(x);
  const Mat jf = oracle::fd_jacobian([&](const Vec& y) { return phi_step(sys, y); }, x);
  CHECK(sup_operator_norm(ja - jf) < 1e-6);
}

// ---------------------------------------------------------------------------
// homoclinic jump

TEST_CASE("jump maps center to center exactly") {
  const ModelParams mp = default_params();
  Rng rng(3);
  const Vec cm = rng.uniform_vec(mp.dim(), -0.2, 0.2), cp = rng.uniform_vec(mp.dim(), -0.2, 0.2);
  const HomoclinicJump j = make_jump(mp, cm, cp);
  CHECK(sup_norm(apply_jump(j, cm) - cp) == 0.0);
}

TEST_CASE("outside the jump neighborhood raises") {
  const ModelParams mp = default_params();
  HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim()));
  j.radius = 0.5;
  CHECK_THROWS_WITH_AS(apply_jump(j, Vec::Constant(mp.dim(), 0.7)),
                       doctest::Contains("outside the jump neighborhood"), CawError);
}

TEST_CASE("finite-difference Jacobian of the jump matches the assembled blocks") {
  ModelParams mp = default_params();
  mp.sigma = 1.0;
  mp.upsilon = 1.0;
  const HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim()));
  const Mat expect = j.dphi();
  const Mat jf = oracle::fd_jacobian([&](const Vec& x) { return apply_jump(j, x); },
                                     Vec::Zero(mp.dim()), 1e-6);
  CHECK(sup_operator_norm(jf - expect) / sup_operator_norm(expect) < 1e-6);
}

TEST_CASE("quadratic remainder bound holds on sampled points") {
  const ModelParams mp = default_params();
  const HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim()));
  const Mat d = j.dphi();
  Rng rng(17);
  for (int t = 0; t < 10000; ++t) {
    const Vec x = rng.uniform_vec(mp.dim(), -0.9, 0.9);
    const Vec affine = j.center_plus + d * (x - j.center_minus);
    const double rem = sup_norm(apply_jump(j, x) - affine);
    CHECK(rem <= mp.R_prime * sup_norm(x) * sup_norm(x) + 1e-15);
  }
}

TEST_CASE("pure linear jump: hyperbolic coercivity of the image") {
  ModelParams mp = default_params();
  mp.sigma = 1.0;
  mp.R_prime = 0.0;
  HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim()));
  j.remainder = [](const Vec& dx) { return Vec::Zero(dx.size()); };
  // image of the unit vector along u-: s+ is bounded by |A2|, u+ at least C4 eps^sigma
  Vec eu = Vec::Zero(mp.dim());
  eu[1] = 1.0;
  const Vec img = apply_jump(j, eu);
  const JumpConstants c = j.constants();
  CHECK(std::abs(img[0]) <= c.C2 + 1e-15);
  CHECK(std::abs(img[1]) >= c.C4 * std::pow(mp.epsilon, mp.sigma) - 1e-15);
}

TEST_CASE("jump constants from the default blocks") {
  const ModelParams mp = default_params();
  const JumpConstants c = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim())).constants();
  CHECK(c.C1 == doctest::Approx(1.0));
  CHECK(c.C2 == doctest::Approx(0.1));
  CHECK(c.C3 == doctest::Approx(0.1));
  CHECK(c.C4 == doctest::Approx(1.0));
  CHECK(c.C5 == doctest::Approx(1.0));
  CHECK(c.C6 == doctest::Approx(1.0));
  CHECK(c.C7 == doctest::Approx(1.0));
  CHECK(c.C8 == doctest::Approx(1.0));
}

TEST_CASE("Dphi column norms match an independent computation") {
  ModelParams mp = default_params();
  mp.sigma = 1.0;
  mp.upsilon = 2.0;
  const HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim()));
  const Mat d = j.dphi();
  // hand-computed: columns (s,u,q,p) have entries from the block matrices
  const double es = std::pow(mp.epsilon, mp.sigma), eu = std::pow(mp.epsilon, mp.upsilon);
  CHECK(d.col(0).cwiseAbs().maxCoeff() == doctest::Approx(std::max(es * 1.0, 0.1)));
  CHECK(d.col(1).cwiseAbs().maxCoeff() == doctest::Approx(std::max(0.1, es * 1.0)));
  CHECK(d.col(2).cwiseAbs().maxCoeff() == doctest::Approx(std::max(1.0, eu * 1.0)));
  CHECK(d.col(3).cwiseAbs().maxCoeff() == doctest::Approx(std::max(eu * 1.0, 1.0)));
}

TEST_CASE("degenerate coercivity block rejected") {
  ModelParams mp = default_params();
  HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim()));
  j.A4 = Mat::Zero(1, 1);
  CHECK_THROWS_WITH_AS(j.constants(), doctest::Contains("invertibility"), CawError);
}

// ---------------------------------------------------------------------------
// transit maps

TEST_CASE("excursion composes Phi^{N+} o jump o Phi^{N-}") {
  ModelParams mp = default_params();
  mp.N_plus = 1;
  mp.N_minus = 1;
  mp.nu = 0.0;
  mp.nu_prime = 0.0;
  mp.omega_prime = 0.0;
  auto sys = std::make_shared<NormalFormSystem>(make_system(mp));
  const Vec x = pack_state(Vec::Constant(1, 0.05), Vec::Constant(1, 0.02), Vec::Constant(1, 0.3),
                           Vec::Constant(1, 0.5));
  const Vec cm = apply_phi(*sys, x, 1);
  const Vec cp = pack_state(Vec::Constant(1, 0.08), Vec::Zero(1), Vec::Constant(1, 0.2),
                            Vec::Constant(1, 0.6));
  const HomoclinicJump j = make_jump(mp, cm, cp);
  const TransitMaps t = transit_maps(j, sys);
  const Vec manual = apply_phi(*sys, apply_jump(j, apply_phi(*sys, x, 1)), 1);
  CHECK(sup_norm(t.excursion->eval(x) - manual) < 1e-14);
}

TEST_CASE("pulled-back leaf distance sandwich") {
  ModelParams mp = default_params();
  mp.mu_minus = 2.0;
  mp.mu_plus = 2.04;
  mp.delta_u = 0.02;
  mp.nu_prime = 0.2;
  const NormalFormSystem sys = make_system(mp);
  const Vec x = pack_state(Vec::Zero(1), Vec::Constant(1, mp.nu_prime), Vec::Constant(1, 0.3),
                           Vec::Constant(1, 0.5));
  const Vec back = apply_phi(sys, x, -3);
  const double d = sup_norm(back.segment(1, 1));
  CHECK(d >= 0.2 * std::pow(mp.mu_plus, -3.0) - 1e-12);
  CHECK(d <= 0.2 * std::pow(mp.mu_minus, -3.0) + 1e-12);
  CHECK(d <= 0.025 + 1e-12);
}

TEST_CASE("full excursion lands near the target leaf") {
  ModelParams mp = default_params();
  mp.N_plus = 2;
  mp.N_minus = 3;
  auto sys = std::make_shared<NormalFormSystem>(make_system(mp));
  const double p_next = 0.6;
  const Vec cm = pack_state(Vec::Zero(1), Vec::Constant(1, mp.nu_prime), Vec::Constant(1, 0.4),
                            Vec::Constant(1, 0.5));
  const Vec cp = pack_state(Vec::Constant(1, mp.nu), Vec::Zero(1), Vec::Constant(1, 0.4),
                            Vec::Constant(1, p_next));
  const HomoclinicJump j = make_jump(mp, cm, cp);
  const TransitMaps t = transit_maps(j, sys);
  // a point on the unstable leaf heading into the channel
  const Vec x0 = apply_phi(*sys, cm, -j.N_minus);
  const Vec out = t.excursion->eval(x0);
  const StateView v = unpack_state(*sys, out);
  CHECK(sup_norm(v.p - Vec::Constant(1, p_next)) < 0.05);
  CHECK(sup_norm(v.s) <= mp.nu + 1e-12);
}

// ---------------------------------------------------------------------------
// extended system

TEST_CASE("decoupled limit: xi frozen, z follows the base system") {
  ModelParams mp = default_params();
  mp.C_ext = 0.0;
  const ExtendedSystem ext = make_extended(mp);
  const NormalFormSystem base = make_system(mp);
  Vec w(ext.dim());
  const Vec z0 = pack_state(Vec::Constant(1, 0.1), Vec::Zero(1), Vec::Constant(1, 0.2),
                            Vec::Constant(1, 0.5));
  w << z0, Vec::Zero(mp.ell1), Vec::Constant(mp.ell2, 0.5);
  const Vec w1 = apply_psi(ext, w, 50);
  CHECK(sup_norm(w1.tail(mp.ell2) - Vec::Constant(mp.ell2, 0.5)) == 0.0);
  CHECK(sup_norm(w1.head(base.dim()) - apply_phi(base, z0, 50)) < 1e-12);
}

TEST_CASE("xi drift telescopes to C_ext t eps^L") {
  ModelParams mp = default_params();
  mp.L = 10;
  mp.C_ext = 1.0;
  const ExtendedSystem ext = make_extended(mp);
  Vec w(ext.dim());
  w << pack_state(Vec::Zero(1), Vec::Zero(1), Vec::Constant(1, 0.2), Vec::Constant(1, 0.5)),
      Vec::Zero(mp.ell1), Vec::Constant(mp.ell2, 0.5);
  const long t = 100000;
  const Vec w1 = apply_psi(ext, w, t);
  const double drift = sup_norm(w1.tail(mp.ell2) - Vec::Constant(mp.ell2, 0.5));
  CHECK(drift <= mp.C_ext * static_cast<double>(t) * std::pow(mp.epsilon, mp.L));
  CHECK(drift <= 1e-5);  // 10^5 steps at eps^10 = 1e-10
}

TEST_CASE("xi leaving the unit cube raises; psi inverts") {
  const ModelParams mp = default_params();
  const ExtendedSystem ext = make_extended(mp);
  Vec w(ext.dim());
  w << pack_state(Vec::Zero(1), Vec::Zero(1), Vec::Zero(1), Vec::Constant(1, 0.5)),
      Vec::Zero(mp.ell1), Vec::Constant(mp.ell2, 1.5);
  CHECK_THROWS_WITH_AS(apply_psi(ext, w, 1), doctest::Contains("xi left"), CawError);
  w.tail(mp.ell2).setConstant(0.5);
  Vec w2 = w;
  w2.head(ext.base.dim()) =
      pack_state(Vec::Constant(1, 0.1), Vec::Constant(1, 0.05), Vec::Constant(1, 0.3),
                 Vec::Constant(1, 0.4));
  const Vec fwd = apply_psi(ext, w2, 3);
  const Vec back = apply_psi(ext, fwd, -3);
  CHECK(sup_norm(back - w2) < 1e-9);
}

// ---------------------------------------------------------------------------
// stage-map enclosures

TEST_CASE("PhiIterMap closed-form enclosure contains sampled orbits") {
  const ModelParams mp = default_params();
  auto sys = std::make_shared<NormalFormSystem>(make_system(mp));
  Rng rng(23);
  for (long steps : {1L, 3L, 6L}) {
    const PhiIterMap map(sys, steps);
    Box cell{pack_state(Vec::Constant(1, 0.01), Vec::Constant(1, -0.002),
                        Vec::Constant(1, 0.2), Vec::Constant(1, 0.4)),
             pack_state(Vec::Constant(1, 0.03), Vec::Constant(1, 0.002), Vec::Constant(1, 0.25),
                        Vec::Constant(1, 0.42))};
    const auto bound = map.image_bound(cell);
    REQUIRE(bound.has_value());
    for (int t = 0; t < 200; ++t) {
      Vec x(4);
      for (Index i = 0; i < 4; ++i) x[i] = rng.uniform(cell.lo[i], cell.hi[i]);
      const Vec y = map.eval(x);
      for (Index i = 0; i < 4; ++i) {
        CHECK(y[i] >= bound->lo[i] - 1e-12);
        CHECK(y[i] <= bound->hi[i] + 1e-12);
      }
    }
  }
}

TEST_CASE("JumpMap enclosure contains sampled images") {
  const ModelParams mp = default_params();
  const HomoclinicJump j = make_jump(mp, Vec::Zero(mp.dim()), Vec::Constant(mp.dim(), 0.1));
  const JumpMap map(j);
  Rng rng(29);
  Box cell{Vec::Constant(4, -0.3), Vec::Constant(4, 0.25)};
  const auto bound = map.image_bound(cell);
  REQUIRE(bound.has_value());
  for (int t = 0; t < 500; ++t) {
    Vec x(4);
    for (Index i = 0; i < 4; ++i) x[i] = rng.uniform(cell.lo[i], cell.hi[i]);
    const Vec y = map.eval(x);
    for (Index i = 0; i < 4; ++i) {
      CHECK(y[i] >= bound->lo[i] - 1e-12);
      CHECK(y[i] <= bound->hi[i] + 1e-12);
    }
  }
}

TEST_CASE("PhiIterMap long-stretch enclosure stays O(1) to evaluate") {
  const ModelParams mp = default_params();
  auto sys = std::make_shared<NormalFormSystem>(make_system(mp));
  const PhiIterMap map(sys, 200000);
  Box cell{pack_state(Vec::Constant(1, 0.0), Vec::Constant(1, 0.0), Vec::Constant(1, 0.2),
                      Vec::Constant(1, 0.4)),
           pack_state(Vec::Constant(1, 0.01), Vec::Constant(1, 1e-12), Vec::Constant(1, 0.25),
                      Vec::Constant(1, 0.41))};
  const auto bound = map.image_bound(cell);
  REQUIRE(bound.has_value());
  // s collapses, u blows up (clamped), p drifts by at most K eps^k error
  CHECK(bound->hi[0] < 1e-12);
  CHECK(bound->hi[1] >= 1.0);
  const double drift = 200000 * std::pow(mp.epsilon, mp.k) * 0.5;
  CHECK(bound->lo[3] >= 0.4 - drift - 1e-12);
  CHECK(bound->hi[3] <= 0.41 + drift + 1e-12);
}

TEST_CASE("PhiIterMap chained Jacobian matches finite differences over short runs") {
  const ModelParams mp = default_params();
  auto sys = std::make_shared<NormalFormSystem>(make_system(mp));
  const PhiIterMap map(sys, 8);
  const Vec x = pack_state(Vec::Constant(1, 0.05), Vec::Constant(1, 0.001),
                           Vec::Constant(1, 0.35), Vec::Constant(1, 0.55));
  const Mat jf = oracle::fd_jacobian([&](const Vec& y) { return map.eval(y); }, x, 1e-7);
  CHECK(sup_operator_norm(map.jacobian(x) - jf) / sup_operator_norm(jf) < 1e-5);
}
