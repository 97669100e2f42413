#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <caw/normal_form.hpp>
#include <caw/schedule.hpp>
#include <support/oracles.hpp>

using namespace caw;

namespace {

SchedConstants default_constants(const ModelParams& mp) {
  return SchedConstants::from_model(
      mp, make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim())).constants());
}

ModelParams combo(double sigma, double tau, double upsilon, int k, double C = 1.0) {
  ModelParams mp;
  mp.sigma = sigma;
  mp.tau = tau;
  mp.upsilon = upsilon;
  mp.k = k;
  mp.C = C;
  mp.R = 0.0;
  return mp;
}

}  // namespace

TEST_CASE("compute_orders") {
  SUBCASE("mixed orders") {
    const OrderParams o = compute_orders(1, 1, 1, 7);
    CHECK(o.kappa == 1.0);
    CHECK(o.rho == 2.0);
    CHECK(o.admissible);  // 7 >= 2(2+1)+1
  }
  SUBCASE("uniform regime") {
    const OrderParams o = compute_orders(0, 0, 0, 1);
    CHECK(o.kappa == 0.0);
    CHECK(o.rho == 0.0);
    CHECK(o.admissible);
  }
  SUBCASE("inadmissible k") {
    const OrderParams o = compute_orders(1, 3, 0, 10);
    CHECK(o.rho == 3.0);
    CHECK_FALSE(o.admissible);  // 10 < 2(3+3)+1 = 13
  }
  SUBCASE("negative inputs rejected") { CHECK_THROWS_AS(compute_orders(-1, 0, 0, 1), CawError); }
}

TEST_CASE("uniform case is feasible with O(1) iterates") {
  const ModelParams mp = combo(0, 0, 0, 1, 1e-4);
  const OrderParams o = compute_orders(0, 0, 0, 1);
  const SchedConstants c = default_constants(mp);
  const LinkSchedule l = solve_link(o, c, 0.1);
  CHECK(l.K < 2000);
  CHECK(l.N < 40);
  CHECK(l.M < 40);
  double min_slack = 0;
  CHECK(oracle::link_all_hold(l, o, c, 0.1, &min_slack));
  CHECK(min_slack > 0.0);
  CHECK(l.hat.gamma >= 0.5);
  CHECK(l.hat.gamma < 1.0);
}

TEST_CASE("huge nu' with M capped at 1 is infeasible with a step-3 beta witness") {
  ModelParams mp = combo(0, 0, 0, 7);
  mp.nu_prime = 1e3;
  const OrderParams o = compute_orders(0, 0, 0, 7);
  SchedOptions opt;
  opt.M_max = 1;
  try {
    solve_link(o, default_constants(mp), 0.1, opt);
    FAIL("expected infeasibility");
  } catch (const InfeasibleError& e) {
    CHECK(e.witness.name == "step3_beta");
    CHECK(e.witness.small > e.witness.large);
  }
}

TEST_CASE("nonuniform combo: K scales like eps^{-rho-tau}") {
  const ModelParams mp = combo(1, 1, 1, 7, 1e-4);
  const OrderParams o = compute_orders(1, 1, 1, 7);
  const SchedConstants c = default_constants(mp);
  const double eps = 0.05;
  const LinkSchedule l = solve_link(o, c, eps);
  double min_slack = 0;
  CHECK(oracle::link_all_hold(l, o, c, eps, &min_slack));
  CHECK(min_slack > 0.0);
  const double scale = std::pow(eps, -(o.rho + o.tau));
  CHECK(l.K >= scale);
  CHECK(l.K <= 2000 * scale);
  // the constant in front is pinned by the slope audit below, not here
}

TEST_CASE("glue ranges and positivity for the displayed example constants") {
  SchedConstants c;
  c.cj = JumpConstants{1.0, 0.1, 0.1, 1.0, 1.0, 1.0, 1.0, 0.1};
  c.R_prime = 1.0;
  const OrderParams o = compute_orders(0, 0, 0, 3);
  // zeta* range is (0, min{C4,C7}/R') = (0,1); pick 0.5
  StageRatios prime;
  prime.beta = prime.gamma = 0.5;
  prime.alpha = 0.2;
  prime.delta = 0.2;
  std::vector<IneqRecord> rec;
  const StageRatios next = glue_links(prime, o, c, 0.1, /*eta=*/1.0, &rec);
  // beta RHS = -C3 a' + C4 b' - R' z^2 = -0.02 + 0.5 - 0.25 > 0
  CHECK(next.beta > 0.0);
  CHECK(next.beta < -0.1 * 0.2 + 1.0 * 0.5 - 0.25 + 1e-12);
  CHECK(next.delta > 0.0);
  for (const auto& r : rec) CHECK(r.holds());
}

TEST_CASE("zero coercivity constant is rejected as an invertibility failure") {
  SchedConstants c;
  c.cj.C4 = 0.0;
  StageRatios prime;
  prime.alpha = prime.beta = prime.gamma = prime.delta = 0.1;
  CHECK_THROWS_WITH_AS(glue_links(prime, compute_orders(0, 0, 0, 3), c, 0.1, 1.0),
                       doctest::Contains("invertibility"), CawError);
}

TEST_CASE("glue of the default constants re-verified against the inequalities") {
  const ModelParams mp = combo(1, 0, 1, 5, 1e-4);
  const OrderParams o = compute_orders(1, 0, 1, 5);
  const SchedConstants c = default_constants(mp);
  const LinkSchedule l = solve_link(o, c, 0.1);
  const auto evals = oracle::reevaluate_link(l, o, c, 0.1);
  for (const auto& e : evals) {
    INFO(e.name, " lhs=", e.lhs, " rhs=", e.rhs);
    CHECK(e.ok);
  }
}

TEST_CASE("prime prescription violations are witnessed") {
  const ModelParams mp = combo(0, 0, 0, 3);
  const SchedConstants c = default_constants(mp);
  const OrderParams o = compute_orders(0, 0, 0, 3);
  StageRatios prime;
  prime.beta = 0.3;
  prime.gamma = 0.1;  // beta' != gamma' breaks the prescription
  prime.alpha = 0.1;
  prime.delta = 0.1;
  CHECK_THROWS_AS(glue_links(prime, o, c, 0.1, 1.0), InfeasibleError);
  prime.gamma = 0.3;
  prime.alpha = 5.0;  // alpha* out of range
  CHECK_THROWS_AS(glue_links(prime, o, c, 0.1, 1.0), InfeasibleError);
}

TEST_CASE("chain of two leaves") {
  const ModelParams mp = combo(0, 0, 0, 7);
  const OrderParams o = compute_orders(0, 0, 0, 7);
  const SchedConstants c = default_constants(mp);
  const std::vector<Vec> leaves{Vec::Constant(1, 0.4), Vec::Constant(1, 0.5)};
  const ChainSchedule chain = build_chain(o, c, 0.1, leaves);
  CHECK(chain.links.size() == 2);
  long total = 0;
  for (const auto& l : chain.links) total += l.time();
  CHECK(chain.predicted_time == total);
  // consecutive links chain through the glue
  CHECK(chain.links[0].next_plain.alpha == chain.links[1].plain.alpha);
  CHECK(chain.links[0].next_plain.delta == chain.links[1].plain.delta);
}

TEST_CASE("leaf count for unit drift") {
  CHECK(leaves_for_drift(1.0, 0.1, 1.0, 1.0) == 10);
  CHECK(leaves_for_drift(0.9, 0.1, 0.0, 0.1) == 9);
}

TEST_CASE("admissibility gate fires before any link is attempted") {
  const ModelParams mp = combo(1, 1, 0, 1);  // rho = 2, k = 1 << 2(2+1)+1
  const OrderParams o = compute_orders(1, 1, 0, 1);
  const std::vector<Vec> leaves{Vec::Constant(1, 0.4), Vec::Constant(1, 0.45)};
  try {
    build_chain(o, default_constants(mp), 0.1, leaves);
    FAIL("expected the k-admissibility gate");
  } catch (const InfeasibleError& e) {
    CHECK(e.witness.name == "k-admissibility");
  }
}

TEST_CASE("leaf spacing must be Theta(eps^upsilon)") {
  const ModelParams mp = combo(0, 0, 1, 7);
  const OrderParams o = compute_orders(0, 0, 1, 7);
  const SchedConstants c = default_constants(mp);
  // wildly nonuniform gaps
  std::vector<Vec> bad{Vec::Constant(1, 0.1), Vec::Constant(1, 0.11), Vec::Constant(1, 0.5)};
  CHECK_THROWS_WITH_AS(build_chain(o, c, 0.1, bad), doctest::Contains("spacing"), CawError);
}

TEST_CASE("monotone slack in k across the eps^k-bearing inequalities") {
  const OrderParams o5 = compute_orders(1, 0, 1, 5);
  const OrderParams o7 = compute_orders(1, 0, 1, 7);
  const ModelParams mp = combo(1, 0, 1, 5, 1e-4);
  const SchedConstants c = default_constants(mp);
  const double eps = 0.1;
  const auto min_ek_slack = [&](const LinkSchedule& l, const OrderParams& o) {
    double ms = std::numeric_limits<double>::infinity();
    for (const auto& e : oracle::reevaluate_link(l, o, c, eps)) {
      // eps^k enters inequalities 3, 4, 7, 8, 11, 12
      for (const char* tag : {"3 ", "4 ", "7 ", "8 ", "11 ", "12 "})
        if (e.name.rfind(tag, 0) == 0) ms = std::min(ms, e.slack());
    }
    return ms;
  };
  SchedOptions opt;
  const LinkSchedule l5 = solve_link(o5, c, eps, opt);
  // hold the geometry fixed: same iterate counts, only k changes
  const LinkSchedule l7 = solve_link(o7, c, eps, opt);
  CHECK(min_ek_slack(l7, o7) > min_ek_slack(l5, o5));
}

TEST_CASE("gluing positivity over the prescribed scale ranges") {
  Rng rng(31);
  const ModelParams mp = combo(1, 1, 1, 7);
  const SchedConstants c = default_constants(mp);
  const OrderParams o = compute_orders(1, 1, 1, 7);
  const double eps = 0.1;
  const double ekap = std::pow(eps, o.kappa), e2k = ekap * ekap;
  const JumpConstants& j = c.cj;
  for (int t = 0; t < 200; ++t) {
    const double zcap = std::min(j.C4, j.C7) / c.R_prime;
    const double zs = rng.uniform(1e-6, zcap * 0.999);
    const double acap =
        std::min(zs, j.C3 > 0 ? (j.C4 / j.C3) * zs * (1 - c.R_prime * zs / j.C4) : kHuge);
    const double dcap = std::min(zs, (j.C7 / j.C8) * zs * (1 - c.R_prime * zs / j.C7));
    if (!(acap > 0) || !(dcap > 0)) continue;
    StageRatios prime;
    prime.alpha = e2k * rng.uniform(1e-9, acap * 0.999);
    prime.beta = prime.gamma = ekap * zs;
    prime.delta = e2k * rng.uniform(1e-9, dcap * 0.999);
    std::vector<IneqRecord> rec;
    const StageRatios next = glue_links(prime, o, c, eps, 1.0, &rec);
    CHECK(next.beta > 0.0);
    CHECK(next.delta > 0.0);
    for (const auto& r : rec) CHECK(r.holds());
  }
}

TEST_CASE("criterion-4 combos are feasible across the eps sweep") {
  struct Case {
    double sigma, tau, upsilon;
    int k;
    double C;
  };
  for (const Case cs : {Case{0, 0, 0, 1, 1e-4}, Case{1, 1, 1, 7, 1e-4}, Case{1, 0, 1, 5, 1e-4}}) {
    const ModelParams mp = combo(cs.sigma, cs.tau, cs.upsilon, cs.k, cs.C);
    const OrderParams o = compute_orders(cs.sigma, cs.tau, cs.upsilon, cs.k);
    const SchedConstants c = default_constants(mp);
    for (int e = 3; e <= 7; ++e) {
      const double eps = std::pow(2.0, -e);
      CAPTURE(cs.sigma);
      CAPTURE(cs.k);
      CAPTURE(eps);
      const LinkSchedule l = solve_link(o, c, eps);
      double ms = 0;
      CHECK(oracle::link_all_hold(l, o, c, eps, &ms));
      CHECK(ms > 0.0);
    }
  }
}

TEST_CASE("order audit: stage ratios follow the prescribed exponents") {
  const ModelParams mp = combo(1, 1, 1, 7, 1e-4);
  const OrderParams o = compute_orders(1, 1, 1, 7);
  const SchedConstants c = default_constants(mp);
  std::vector<double> eps_list;
  for (int e = 3; e <= 7; ++e) eps_list.push_back(std::pow(2.0, -e));
  std::vector<LinkSchedule> links;
  for (double eps : eps_list) links.push_back(solve_link(o, c, eps));

  const auto slope_of = [&](const std::function<double(const LinkSchedule&)>& f) {
    std::vector<double> ys;
    for (const auto& l : links) ys.push_back(f(l));
    return loglog_slope(eps_list, ys);
  };
  const double kap = o.kappa, rho = effective_rho(o, c.R);
  struct Expect {
    std::function<double(const LinkSchedule&)> f;
    double exponent;
    const char* name;
  };
  const Expect table[] = {
      {[](const LinkSchedule& l) { return l.plain.alpha; }, 0, "plain alpha"},
      {[](const LinkSchedule& l) { return l.plain.beta; }, 2 * kap, "plain beta"},
      {[](const LinkSchedule& l) { return l.plain.gamma; }, kap, "plain gamma"},
      {[](const LinkSchedule& l) { return l.plain.delta; }, 2 * kap, "plain delta"},
      {[](const LinkSchedule& l) { return l.tilde.alpha; }, 0, "tilde alpha"},
      {[](const LinkSchedule& l) { return l.tilde.beta; }, 2 * kap, "tilde beta"},
      {[](const LinkSchedule& l) { return l.tilde.gamma; }, kap, "tilde gamma"},
      {[](const LinkSchedule& l) { return l.tilde.delta; }, rho, "tilde delta"},
      {[](const LinkSchedule& l) { return l.hat.alpha; }, 2 * kap, "hat alpha"},
      {[](const LinkSchedule& l) { return l.hat.beta; }, 0, "hat beta"},
      {[](const LinkSchedule& l) { return l.hat.gamma; }, 0, "hat gamma"},
      {[](const LinkSchedule& l) { return l.hat.delta; }, 2 * kap, "hat delta"},
      {[](const LinkSchedule& l) { return l.prime.alpha; }, 2 * kap, "prime alpha"},
      {[](const LinkSchedule& l) { return l.prime.beta; }, kap, "prime beta"},
      {[](const LinkSchedule& l) { return l.prime.gamma; }, kap, "prime gamma"},
      {[](const LinkSchedule& l) { return l.prime.delta; }, 2 * kap, "prime delta"},
  };
  for (const auto& ex : table) {
    const double s = slope_of(ex.f);
    INFO(ex.name, " slope=", s, " expected=", ex.exponent);
    CHECK(std::abs(s - ex.exponent) <= 0.15);
  }
  const double ks = slope_of([](const LinkSchedule& l) { return static_cast<double>(l.K); });
  CHECK(std::abs(ks - (-(rho + o.tau))) <= 0.3);
}

TEST_CASE("extended tubes") {
  const ModelParams mp = combo(0, 0, 0, 7);
  const OrderParams o = compute_orders(0, 0, 0, 7);
  const SchedConstants c = default_constants(mp);
  std::vector<Vec> leaves;
  for (int i = 0; i < 4; ++i) leaves.push_back(Vec::Constant(1, 0.3 + 0.1 * i));
  const ChainSchedule chain = build_chain(o, c, 0.1, leaves);

  SUBCASE("decoupled limit: xi tube degenerate") {
    ModelParams mz = mp;
    mz.C_ext = 0.0;
    const ChainSchedule ext = extend_chain(chain, make_extended(mz), 0.01, 4);
    REQUIRE(ext.extended.has_value());
    for (double h : ext.extended->xi_halfwidth) CHECK(h == 0.0);
  }
  SUBCASE("tube growth and containment") {
    ModelParams me = mp;
    me.L = 10;
    const ChainSchedule ext = extend_chain(chain, make_extended(me), 0.01, 4);
    REQUIRE(ext.extended.has_value());
    const auto& es = *ext.extended;
    CHECK(es.xi_halfwidth.front() == 0.0);  // Xi_1 = {xi*}
    for (std::size_t i = 0; i + 1 < es.xi_halfwidth.size(); ++i) {
      CHECK(es.xi_halfwidth[i] <= es.xi_halfwidth[i + 1]);
      CHECK(es.omega[i] < es.omega[i + 1]);
    }
    CHECK(es.xi_halfwidth.back() <= 0.01);
  }
  SUBCASE("escape reports the minimal admissible L") {
    ModelParams me = mp;
    me.L = 1;
    try {
      extend_chain(chain, make_extended(me), 1e-6, 4);
      FAIL("expected xi escape");
    } catch (const InfeasibleError& e) {
      CHECK(e.witness.name.find("extended_xi_escape") != std::string::npos);
      // minimal L from the closed form
      long omega = 0;
      for (std::size_t i = 0; i + 1 < chain.links.size(); ++i) omega += chain.links[i].time();
      const double cj = 0.55 * me.C_ext;
      const int want = static_cast<int>(
          std::ceil(std::log(1e-6 / (cj * static_cast<double>(omega))) / std::log(0.1) - 1e-12));
      CHECK(e.witness.name.find("minimal_L=" + std::to_string(want)) != std::string::npos);
    }
  }
  SUBCASE("chain length cap") {
    CHECK_THROWS_AS(extend_chain(chain, make_extended(mp), 0.01, 0), InfeasibleError);
  }
  SUBCASE("xi* must be interior") {
    ModelParams me = mp;
    me.xi_star = Vec::Constant(1, 0.999);
    CHECK_THROWS_WITH_AS(extend_chain(chain, make_extended(me), 0.01, 4),
                         doctest::Contains("interior"), CawError);
  }
}

TEST_CASE("schedule JSON round-trip") {
  const ModelParams mp = combo(0, 0, 0, 7);
  const OrderParams o = compute_orders(0, 0, 0, 7);
  const std::vector<Vec> leaves{Vec::Constant(1, 0.4), Vec::Constant(1, 0.5)};
  const ChainSchedule chain = build_chain(o, default_constants(mp), 0.1, leaves);
  const auto j = to_json(chain);
  const ChainSchedule back = chain_schedule_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.links.size() == chain.links.size());
  CHECK(back.links[0].K == chain.links[0].K);
  CHECK(back.links[1].plain.delta == chain.links[1].plain.delta);
  CHECK(back.predicted_time == chain.predicted_time);
  CHECK(to_json(back).dump() == j.dump());
}
