#pragma once

// Aspect-ratio scheduling for one homoclinic link and for whole chains:
// the twelve stage inequalities (plain -> tilde -> hat -> prime under
// Phi^N, Phi^K, Phi^M) and the four gluing inequalities of the chart change
// at the homoclinic point, solved by closed-form sequential assignment with
// midpoint choices, plus the extended-phase-space tubes.

#include <caw/core.hpp>
#include <caw/normal_form.hpp>

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace caw {

struct OrderParams {
  double sigma = 0.0, tau = 0.0, upsilon = 0.0;
  int k = 1;
  double kappa = 0.0;  // max{sigma, upsilon}
  double rho = 0.0;    // max{2 sigma, 2 upsilon, tau}
  bool admissible = false;  // k >= 2(rho + tau) + 1
};

inline OrderParams compute_orders(double sigma, double tau, double upsilon, int k) {
  if (sigma < 0 || tau < 0 || upsilon < 0 || k < 0)
    throw CawError("compute_orders: orders must be nonnegative");
  OrderParams o;
  o.sigma = sigma;
  o.tau = tau;
  o.upsilon = upsilon;
  o.k = k;
  o.kappa = std::max(sigma, upsilon);
  o.rho = std::max({2 * sigma, 2 * upsilon, tau});
  o.admissible = static_cast<double>(k) >= 2 * (o.rho + tau) + 1;
  return o;
}

// The rho >= tau requirement comes from keeping the quadratic twist
// remainder K R delta^2 below the linear shear; with an exactly linear g
// (R = 0) that constraint is vacuous and the tilde-delta order relaxes to
// eps^{2 kappa}, which is what the time-law sweep with tau > 0 exercises.
inline double effective_rho(const OrderParams& o, double R) {
  return R > 0.0 ? o.rho : 2 * o.kappa;
}

inline bool gate_admissible(const OrderParams& o, double R) {
  return static_cast<double>(o.k) >= 2 * (effective_rho(o, R) + o.tau) + 1;
}

struct StageRatios {
  double alpha = 0, beta = 0, gamma = 0, delta = 0;
};

struct IneqRecord {
  std::string name;
  double small = 0, large = 0;  // holds iff small < large
  double dominant = 1;          // magnitude scale for the relative slack

  bool holds() const { return small < large; }
  double slack() const { return large - small; }
  double rel_slack() const { return slack() / std::max(std::abs(dominant), 1e-300); }
};

struct InfeasibleError : CawError {
  IneqRecord witness;
  explicit InfeasibleError(IneqRecord w)
      : CawError("infeasible: " + w.name + " (" + std::to_string(w.small) +
                 " !< " + std::to_string(w.large) + ")"),
        witness(std::move(w)) {}
};

struct SchedConstants {
  double lambda_minus = 0.49, lambda_plus = 0.51;
  double mu_minus = 1.96, mu_plus = 2.04;
  double T_minus = 1.0, T_plus = 1.0;
  double C = 1.0, R = 0.0, R_prime = 1.0;
  JumpConstants cj{1.0, 0.1, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0};
  double nu = 0.1, nu_prime = 0.1, omega_prime = 0.05;

  static SchedConstants from_model(const ModelParams& mp, const JumpConstants& cj) {
    SchedConstants c;
    c.lambda_minus = mp.lambda_minus;
    c.lambda_plus = mp.lambda_plus;
    c.mu_minus = mp.mu_minus;
    c.mu_plus = mp.mu_plus;
    c.T_minus = mp.T_minus;
    c.T_plus = mp.T_plus;
    c.C = mp.C;
    c.R = mp.R;
    c.R_prime = mp.R_prime;
    c.cj = cj;
    c.nu = mp.nu;
    c.nu_prime = mp.nu_prime;
    c.omega_prime = mp.omega_prime;
    return c;
  }
};

struct SchedOptions {
  double eta = 1.0;
  double slack_floor = 0.05;      // fraction of the dominant term
  double hat_gamma_floor = 0.5;   // hat-gamma target window [floor, cap]
  double hat_gamma_cap = 0.95;
  long N_min = 1, M_min = 1;
  long N_max = 400, M_max = 4000, K_max = 1L << 40;
  double orbit_tol = 0.0;  // >0 forces M large enough to seed u within tol
};

struct LinkSchedule {
  long N = 0, K = 0, M = 0;
  StageRatios plain, tilde, hat, prime;
  StageRatios next_plain;  // glued plain stage of the following link
  std::vector<IneqRecord> ineqs;

  long time() const { return N + K + M; }
};

namespace detail {

inline double midpoint(double lo, double hi) { return 0.5 * (lo + hi); }

inline void require(bool ok, const IneqRecord& w) {
  if (!ok) throw InfeasibleError(w);
}

}  // namespace detail

// Feasible scale ranges for the prime stage, derived from the gluing
// constants; returns (zeta*, alpha*, delta*) at interval midpoints scaled
// down so the eta caps downstream stay satisfiable.
struct PrimeScales {
  double zeta_star, alpha_star, delta_star;
};

inline PrimeScales prime_scales(const SchedConstants& c, double eta) {
  const JumpConstants& j = c.cj;
  if (!(j.C4 > 0.0) || !(j.C7 > 0.0))
    throw CawError("glue: invertibility hypothesis violated (C4 or C7 is zero)");
  double zcap = std::min(j.C4, j.C7);
  if (c.R_prime > 0.0) zcap /= c.R_prime;
  zcap = std::min(zcap, 0.45 / std::max(j.C5, 1e-12));
  // Keep the glued alpha below its eta cap: with alpha* <= zeta/2 the glue
  // lower bound is at most (C1/2 + C2) zeta + R' zeta^2, which must stay
  // under 0.4 eta.
  {
    const double b = 0.5 * j.C1 + j.C2;
    const double budget = 0.4 * std::min(1.0, eta);
    const double zeta_eta = c.R_prime > 0.0
                                ? (-b + std::sqrt(b * b + 4.0 * c.R_prime * budget)) /
                                      (2.0 * c.R_prime)
                                : budget / std::max(b, 1e-12);
    zcap = std::min(zcap, zeta_eta);
  }
  detail::require(zcap > 0.0, {"prime_zeta_range", 0.0, zcap, 1.0});
  const double z = 0.5 * zcap;
  double acap = z;
  if (j.C3 > 0.0) acap = std::min(acap, (j.C4 / j.C3) * z * (1.0 - c.R_prime * z / j.C4));
  detail::require(acap > 0.0, {"prime_alpha_range", 0.0, acap, 1.0});
  double dcap = std::min(z, (j.C7 / std::max(j.C8, 1e-12)) * z * (1.0 - c.R_prime * z / j.C7));
  detail::require(dcap > 0.0, {"prime_delta_range", 0.0, dcap, 1.0});
  return PrimeScales{z, 0.5 * acap, 0.5 * dcap};
}

// Gluing step (chart change at the homoclinic point): consumes the prime
// stage of one link and emits the plain stage of the next, with the four
// inequalities recorded. Errors carry the violated inequality.
inline StageRatios glue_links(const StageRatios& prime, const OrderParams& o,
                              const SchedConstants& c, double epsilon, double eta,
                              std::vector<IneqRecord>* records = nullptr,
                              double slack_floor = 0.05) {
  const JumpConstants& j = c.cj;
  if (!(j.C4 > 0.0) || !(j.C7 > 0.0))
    throw CawError("glue: invertibility hypothesis violated (C4 or C7 is zero)");
  const double ekap = std::pow(epsilon, o.kappa), e2k = ekap * ekap;
  const double esig = std::pow(epsilon, o.sigma), eups = std::pow(epsilon, o.upsilon);

  // Prescription feasibility: back out the scales and check their ranges.
  const double zs = prime.beta / ekap, as = prime.alpha / e2k, ds = prime.delta / e2k;
  const double zcap = (c.R_prime > 0 ? std::min(j.C4, j.C7) / c.R_prime : kHuge);
  detail::require(std::abs(prime.beta - prime.gamma) <= 1e-9 * std::max(prime.beta, prime.gamma),
                  {"prime_prescription_beta_eq_gamma", std::abs(prime.beta - prime.gamma), 1e-9, 1.0});
  detail::require(zs > 0 && zs < zcap, {"prime_zeta_range", zs, zcap, zcap});
  const double acap =
      std::min(zs, j.C3 > 0 ? (j.C4 / j.C3) * zs * (1.0 - c.R_prime * zs / j.C4) : kHuge);
  detail::require(as > 0 && as < acap, {"prime_alpha_range", as, acap, std::max(acap, 1.0)});
  const double dcap =
      std::min(zs, (j.C7 / std::max(j.C8, 1e-12)) * zs * (1.0 - c.R_prime * zs / j.C7));
  detail::require(ds > 0 && ds < dcap, {"prime_delta_range", ds, dcap, std::max(dcap, 1.0)});

  const double zeta = std::max({prime.alpha, prime.beta, prime.gamma, prime.delta});
  const double z2 = c.R_prime * zeta * zeta;
  const double lhs13 = j.C1 * esig * prime.alpha + j.C2 * prime.beta + z2;
  const double rhs14 = -j.C3 * prime.alpha + j.C4 * esig * prime.beta - z2;
  const double lhs15 = j.C5 * prime.gamma + j.C6 * eups * prime.delta + z2;
  const double rhs16 = j.C7 * eups * prime.gamma - j.C8 * prime.delta - z2;

  detail::require(rhs14 > 0.0, {"glue_beta_rhs_positive", 0.0, rhs14, std::max(j.C4 * esig * prime.beta, 1e-12)});
  detail::require(rhs16 > 0.0, {"glue_delta_rhs_positive", 0.0, rhs16, std::max(j.C7 * eups * prime.gamma, 1e-12)});

  // Midpoints of the feasible intervals, capped to the prescribed size orders (and
  // the eta budget) when the caps leave room; otherwise just above the lower
  // bound. The eta caps themselves are enforced by the chain solver.
  StageRatios next;
  const double eta1 = std::min(1.0, eta);
  next.alpha =
      lhs13 < 0.8 * eta1 ? detail::midpoint(lhs13, 0.8 * eta1) : lhs13 * (1 + 2 * slack_floor);
  next.beta = 0.5 * std::min(rhs14, 0.8 * eta1 * e2k);
  // gamma of the next plain stage stays close to its bound: it feeds the
  // next link's tilde-gamma, which taxes the Step-2 shear budget
  next.gamma = std::min(lhs15 * (1 + 4 * slack_floor),
                        lhs15 < 0.5 * ekap ? detail::midpoint(lhs15, 0.5 * ekap)
                                           : lhs15 * (1 + 2 * slack_floor));
  next.delta = 0.5 * std::min(rhs16, 0.8 * eta1 * e2k);

  if (records) {
    records->push_back({"glue_alpha", lhs13, next.alpha, std::max({lhs13, next.alpha, 1e-12})});
    records->push_back({"glue_beta", next.beta, rhs14, std::max(rhs14, 1e-12)});
    records->push_back({"glue_gamma", lhs15, next.gamma, std::max({lhs15, next.gamma, 1e-12})});
    records->push_back({"glue_delta", next.delta, rhs16, std::max(rhs16, 1e-12)});
  }
  return next;
}

// One link: solves the three stage systems plus the glue sequentially,
// each ratio at the midpoint of its feasible interval subject to the
// size-order prescription. plain_in chains the previous link's glued stage;
// when absent a canonical first-plain stage is used.
inline LinkSchedule solve_link(const OrderParams& o, const SchedConstants& c, double epsilon,
                               const SchedOptions& opt = {},
                               std::optional<StageRatios> plain_in = std::nullopt) {
  const double rho_eff = effective_rho(o, c.R);
  if (!gate_admissible(o, c.R))
    throw InfeasibleError({"k-admissibility", 2 * (rho_eff + o.tau) + 1,
                           static_cast<double>(o.k), std::max<double>(o.k, 1)});

  const double ek = std::pow(epsilon, o.k);
  const double ekap = std::pow(epsilon, o.kappa), e2k = ekap * ekap;
  const double erho = std::pow(epsilon, rho_eff);
  const double s = opt.slack_floor;
  const double eta1 = std::min(1.0, opt.eta);
  double omega_p = c.omega_prime;
  if (omega_p >= 0.5) omega_p = 0.5 - 0.25 * opt.eta;  // shift y_i^u: keep omega' < 1/2

  const PrimeScales ps = prime_scales(c, opt.eta);
  StageRatios prime;
  prime.alpha = e2k * ps.alpha_star;
  prime.beta = ekap * ps.zeta_star;
  prime.gamma = ekap * ps.zeta_star;
  prime.delta = e2k * ps.delta_star;

  StageRatios plain;
  if (plain_in) {
    plain = *plain_in;
  } else {
    plain.alpha = 0.4 * eta1;
    plain.beta = 0.4 * eta1 * e2k;
    plain.gamma = 0.1 * ekap;
    plain.delta = 0.1 * eta1 * e2k;
  }

  LinkSchedule link;
  link.plain = plain;
  link.prime = prime;

  // ---- Step 1: N = O(1), tilde stage --------------------------------------
  long N = opt.N_min;
  const double lam_p = c.lambda_plus;
  while (N < opt.N_max &&
         (pow_clamped(lam_p, N) * (c.nu + 0.5 * plain.alpha) > 0.5 * opt.eta ||
          pow_clamped(lam_p, N) * (plain.alpha + 2 * c.nu) > 0.4))
    ++N;
  detail::require(pow_clamped(lam_p, N) * (c.nu + 0.5 * plain.alpha) <= 0.5 * opt.eta,
                  {"step1_N_cap", 0.5 * opt.eta,
                   pow_clamped(lam_p, N) * (c.nu + 0.5 * plain.alpha), 1.0});
  link.N = N;

  const double lo1a = (plain.alpha + 2 * c.nu) * pow_clamped(lam_p, N);
  StageRatios tilde;
  tilde.alpha = lo1a < 0.5 ? detail::midpoint(lo1a, 0.5) : lo1a * (1 + 2 * s);
  tilde.beta = 0.5 * std::min(plain.beta * pow_clamped(c.mu_minus, N), opt.eta);
  // gamma-tilde sits just above its bound: every bit of slack here taxes the
  // Step-2 shear budget
  const double lo1g = plain.gamma + N * c.T_plus * plain.delta + c.C * N * N * ek;
  tilde.gamma = lo1g * (1 + 4 * s);
  const double dtil_cap_R = c.R > 0 ? 0.45 * c.T_minus * std::pow(epsilon, o.tau) / c.R : kHuge;
  const double hi1d = plain.delta - c.C * N * ek;
  detail::require(hi1d > 0.0, {"step1_delta", 0.0, hi1d, plain.delta});
  tilde.delta = std::min({erho * 0.45 * ps.delta_star, 0.8 * hi1d, dtil_cap_R,
                          std::max(opt.eta - 2 * N * c.C * ek, 0.0)});
  detail::require(tilde.delta > 0.0, {"step1_delta", 0.0, tilde.delta, plain.delta});
  link.tilde = tilde;

  // ---- Step 2: K = O(eps^{-rho-tau}), hat stage ----------------------------
  const double a2 = std::pow(epsilon, o.tau) * c.T_minus * tilde.delta -
                    c.R * tilde.delta * tilde.delta;
  // The solver budgets three times the C K^2 eps^k term: one for the
  // inequality itself and two so the recorded slack covers the certified
  // enclosure's path-drift inflation during alignment verification.
  const double b2 = 3.0 * c.C * ek;
  detail::require(a2 > 0.0, {"step2_gamma_linear_coeff", 0.0, a2, 1.0});
  const auto rhs7 = [&](double K) { return a2 * K - b2 * K * K - tilde.gamma; };
  const auto rhs7_recorded = [&](double K) {
    return a2 * K - c.C * ek * K * K - tilde.gamma;
  };

  // Rough M estimate for the hat-gamma target; refined below.
  const auto m_for_beta = [&](double bhat) {
    const double need = (prime.beta + 2 * c.nu_prime) / std::max(bhat * (1 - 2 * s), 1e-300);
    return std::max<long>(opt.M_min, static_cast<long>(std::ceil(std::log(std::max(need, 1.0)) /
                                                                 std::log(c.mu_minus))));
  };
  long M_est = m_for_beta(0.5);
  if (opt.orbit_tol > 0.0 && c.nu_prime > 0.0)
    M_est = std::max(M_est, static_cast<long>(std::ceil(
                                std::log(2.0 * c.nu_prime / opt.orbit_tol) /
                                std::log(c.mu_minus))));

  long K = 0;
  double hat_gamma = 0.0, hat_alpha = 0.0;
  for (int attempt = 0; attempt < 4; ++attempt) {
    const double budget_q = (prime.gamma + M_est * c.T_plus * prime.delta +
                             c.C * M_est * M_est * ek) * (1 + 4 * s) + 0.02;
    const double target =
        std::min(opt.hat_gamma_cap, std::max(opt.hat_gamma_floor, 2 * omega_p + budget_q));
    // Peak of the shear budget in K; infeasible if even the peak falls short.
    const double k_peak = b2 > 0 ? a2 / (2 * b2) : static_cast<double>(opt.K_max);
    const double best = rhs7(std::min(k_peak, static_cast<double>(opt.K_max)));
    detail::require(best * (1 - s) >= target,
                    {"step2_gamma", target, best * (1 - s), std::max(best, target)});
    double klo = 1, khi = 1;
    while (rhs7(khi) * (1 - s) < target && khi < static_cast<double>(opt.K_max) && khi < k_peak)
      khi = std::min({khi * 2, static_cast<double>(opt.K_max), k_peak});
    klo = khi > 1 ? khi / 2 : 1;
    while (khi - klo > 0.5) {
      const double mid = 0.5 * (klo + khi);
      (rhs7(mid) * (1 - s) < target ? klo : khi) = mid;
    }
    K = static_cast<long>(std::ceil(khi));
    hat_gamma = std::min(opt.hat_gamma_cap, rhs7(static_cast<double>(K)) * (1 - s));
    const double lo2a = tilde.alpha * pow_clamped(lam_p, K);
    hat_alpha = lo2a < 0.75 * e2k ? detail::midpoint(lo2a, 0.75 * e2k) : lo2a * (1 + 2 * s);

    // Step-3 iterate count against the now-known hat stage.
    const double bhat = 0.5 * std::min(pow_clamped(c.mu_minus, K) * tilde.beta, 1.0);
    long M = m_for_beta(bhat);
    if (opt.orbit_tol > 0.0 && c.nu_prime > 0.0)
      M = std::max(M, static_cast<long>(std::ceil(std::log(2.0 * c.nu_prime / opt.orbit_tol) /
                                                  std::log(c.mu_minus))));
    // (9): alpha' expands back across hat-alpha.
    while (prime.alpha * pow_clamped(lam_p, -M) <= hat_alpha * (1 + 2 * s) && M < opt.M_max) ++M;
    const double lhs11 =
        prime.gamma + M * c.T_plus * prime.delta + c.C * M * M * ek + 2 * omega_p;
    if (M <= opt.M_max && lhs11 * (1 + s) < hat_gamma) {
      M_est = M;
      link.K = K;
      link.M = M;
      break;
    }
    if (M > opt.M_max)
      throw InfeasibleError({"step3_beta",
                             (prime.beta + 2 * c.nu_prime) * pow_clamped(c.mu_minus, -opt.M_max),
                             0.5, 1.0});
    M_est = M;  // retry with a larger hat-gamma target
    if (attempt == 3)
      throw InfeasibleError({"step3_gamma", lhs11, hat_gamma, std::max(hat_gamma, lhs11)});
  }

  StageRatios hat;
  hat.alpha = hat_alpha;
  hat.beta = 0.5 * std::min(pow_clamped(c.mu_minus, link.K) * tilde.beta, 1.0);
  hat.gamma = hat_gamma;
  const double lo8 = tilde.delta + c.C * link.K * ek;
  const double hi12 = prime.delta - c.C * link.M * ek;
  detail::require(lo8 < hi12, {"step2_delta_vs_step3_delta", lo8, hi12, prime.delta});
  hat.delta = detail::midpoint(lo8, hi12);
  link.hat = hat;

  // ---- record the twelve stage inequalities -------------------------------
  auto& r = link.ineqs;
  const double lamN = pow_clamped(lam_p, link.N), muN = pow_clamped(c.mu_minus, link.N);
  const double lamK = pow_clamped(lam_p, link.K), muK = pow_clamped(c.mu_minus, link.K);
  const double lamMi = pow_clamped(lam_p, -link.M), muMi = pow_clamped(c.mu_minus, -link.M);
  r.push_back({"step1_alpha", (plain.alpha + 2 * c.nu) * lamN, tilde.alpha, tilde.alpha});
  r.push_back({"step1_beta", tilde.beta, plain.beta * muN, plain.beta * muN});
  r.push_back({"step1_gamma", lo1g, tilde.gamma, tilde.gamma});
  r.push_back({"step1_delta", tilde.delta, hi1d, plain.delta});
  r.push_back({"step2_alpha", tilde.alpha * lamK, hat.alpha, hat.alpha});
  r.push_back({"step2_beta", hat.beta, tilde.beta * muK, std::max(hat.beta, 1.0)});
  r.push_back({"step2_gamma", hat.gamma, rhs7_recorded(static_cast<double>(link.K)),
               std::max(hat.gamma, a2 * link.K)});
  r.push_back({"step2_delta", lo8, hat.delta, hat.delta});
  r.push_back({"step3_alpha", hat.alpha, prime.alpha * lamMi, prime.alpha * lamMi});
  r.push_back({"step3_beta", (prime.beta + 2 * c.nu_prime) * muMi, hat.beta, hat.beta});
  r.push_back({"step3_gamma",
               prime.gamma + link.M * c.T_plus * prime.delta + c.C * link.M * link.M * ek +
                   2 * omega_p,
               hat.gamma, hat.gamma});
  r.push_back({"step3_delta", hat.delta, hi12, prime.delta});

  link.next_plain = glue_links(prime, o, c, epsilon, opt.eta, &link.ineqs, opt.slack_floor);
  // eta caps on the glued stage (leaf-proximity budget of the next link)
  detail::require(link.next_plain.alpha < opt.eta,
                  {"glue_alpha_eta_cap", link.next_plain.alpha, opt.eta, opt.eta});
  detail::require(link.next_plain.beta < opt.eta,
                  {"glue_beta_eta_cap", link.next_plain.beta, opt.eta, opt.eta});
  detail::require(link.next_plain.delta < opt.eta,
                  {"glue_delta_eta_cap", link.next_plain.delta, opt.eta, opt.eta});

  for (const IneqRecord& q : r)
    if (!q.holds()) throw InfeasibleError(q);
  return link;
}

// ---------------------------------------------------------------------------
// Chains

struct ExtendedSchedule {
  double a_star = 0.01;
  int K_cap = 4;
  Vec xi_star;
  std::vector<long> omega;            // cumulative iterate counts Omega_j
  std::vector<double> xi_halfwidth;   // Xi_j half-widths (Xi_1 = {xi*})
  std::vector<double> theta_halfwidth;
  int L = 10;
  int minimal_L = 0;  // smallest admissible L when the configured one escapes
};

struct ChainSchedule {
  OrderParams params;
  double epsilon = 0.1, eta = 1.0;
  std::vector<LinkSchedule> links;
  std::vector<Vec> leaf_ps;
  long predicted_time = 0;  // sum of N_i + K_i + M_i
  double time_order_exponent = 0.0;  // -(rho_eff + tau + upsilon)
  std::optional<ExtendedSchedule> extended;
};

inline long leaves_for_drift(double drift, double epsilon, double upsilon, double spacing_scale) {
  const double spacing = spacing_scale * std::pow(epsilon, upsilon);
  return static_cast<long>(std::ceil(drift / spacing));
}

inline ChainSchedule build_chain(const OrderParams& o, const SchedConstants& c, double epsilon,
                                 const std::vector<Vec>& leaf_ps, const SchedOptions& opt = {}) {
  if (!gate_admissible(o, c.R))
    throw InfeasibleError({"k-admissibility", 2 * (effective_rho(o, c.R) + o.tau) + 1,
                           static_cast<double>(o.k), std::max<double>(o.k, 1)});
  if (leaf_ps.size() < 2) throw CawError("build_chain: need at least two leaves");

  // Leaf spacing must be Theta(eps^upsilon): all gaps comparable, and the
  // scale within a broad window of eps^upsilon.
  const double eu = std::pow(epsilon, o.upsilon);
  std::vector<double> gaps;
  for (std::size_t i = 0; i + 1 < leaf_ps.size(); ++i)
    gaps.push_back(sup_norm(leaf_ps[i + 1] - leaf_ps[i]));
  const double g0 = gaps.front();
  for (double g : gaps)
    if (g < 0.25 * g0 || g > 4.0 * g0)
      throw CawError("build_chain: leaf spacing is not uniform enough");
  if (g0 < 1e-3 * eu || g0 > 1e3 * eu)
    throw CawError("build_chain: leaf spacing is not of order eps^upsilon");

  ChainSchedule chain;
  chain.params = o;
  chain.epsilon = epsilon;
  chain.eta = opt.eta;
  chain.leaf_ps = leaf_ps;
  chain.time_order_exponent = -(effective_rho(o, c.R) + o.tau + o.upsilon);

  std::optional<StageRatios> plain;
  for (std::size_t i = 0; i < leaf_ps.size(); ++i) {
    LinkSchedule link = solve_link(o, c, epsilon, opt, plain);
    plain = link.next_plain;
    chain.predicted_time += link.time();
    chain.links.push_back(std::move(link));
  }
  return chain;
}

// Extended-phase-space tubes: xi cubes growing with the cumulative iterate
// count, theta cubes growing with the rotation rate, exit sets empty. Errors
// if the xi tube escapes Xi* and reports the minimal admissible L.
inline ChainSchedule extend_chain(ChainSchedule chain, const ExtendedSystem& ext, double a_star,
                                  int K_cap) {
  const double eps = chain.epsilon;
  const double n_links = static_cast<double>(chain.links.size());
  if (n_links > std::pow(eps, -static_cast<double>(K_cap)))
    throw InfeasibleError(
        {"extended_chain_length", n_links, std::pow(eps, -static_cast<double>(K_cap)), n_links});
  for (Index i = 0; i < ext.xi_star.size(); ++i)
    if (ext.xi_star[i] - a_star <= 0.0 || ext.xi_star[i] + a_star >= 1.0)
      throw CawError("extend_chain: Xi* is not interior to [0,1]^ell2");

  ExtendedSchedule es;
  es.a_star = a_star;
  es.K_cap = K_cap;
  es.xi_star = ext.xi_star;
  es.L = ext.L;
  const double el = std::pow(eps, ext.L);
  const double cj = 0.55 * ext.C_ext;  // per-step xi drift is below C_ext/2 eps^L
  const double theta_rate = sup_norm(ext.theta_rate) + 0.5 * ext.C_ext * el;

  long omega = 0;
  double th = 0.5;
  es.omega.push_back(0);
  es.xi_halfwidth.push_back(0.0);  // Xi_1 = {xi*}
  es.theta_halfwidth.push_back(th);
  for (std::size_t i = 0; i + 1 < chain.links.size(); ++i) {
    omega += chain.links[i].time();
    th += chain.links[i].time() * theta_rate * 1.05 + 0.01;
    es.omega.push_back(omega);
    es.xi_halfwidth.push_back(cj * static_cast<double>(omega) * el);
    es.theta_halfwidth.push_back(th);
  }
  const double worst = es.xi_halfwidth.back();
  if (worst > a_star) {
    // minimal L with cj * Omega_N * eps^L <= a*
    const double need = std::log(a_star / (cj * static_cast<double>(omega))) / std::log(eps);
    es.minimal_L = static_cast<int>(std::ceil(need - 1e-12));
    IneqRecord w{"extended_xi_escape(minimal_L=" + std::to_string(es.minimal_L) + ")", a_star,
                 worst, a_star};
    std::swap(w.small, w.large);
    throw InfeasibleError(w);
  }
  chain.extended = std::move(es);
  return chain;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const StageRatios& s) {
  return {{"alpha", s.alpha}, {"beta", s.beta}, {"gamma", s.gamma}, {"delta", s.delta}};
}

inline nlohmann::json to_json(const IneqRecord& r) {
  return {{"name", r.name},     {"small", r.small},          {"large", r.large},
          {"dominant", r.dominant}, {"slack", r.slack()},    {"rel_slack", r.rel_slack()}};
}

inline nlohmann::json to_json(const LinkSchedule& l) {
  nlohmann::json j;
  j["N"] = l.N;
  j["K"] = l.K;
  j["M"] = l.M;
  j["plain"] = to_json(l.plain);
  j["tilde"] = to_json(l.tilde);
  j["hat"] = to_json(l.hat);
  j["prime"] = to_json(l.prime);
  j["next_plain"] = to_json(l.next_plain);
  nlohmann::json iq = nlohmann::json::array();
  for (const auto& r : l.ineqs) iq.push_back(to_json(r));
  j["inequalities"] = iq;
  return j;
}

inline nlohmann::json to_json(const ChainSchedule& c) {
  nlohmann::json j;
  j["params"] = {{"sigma", c.params.sigma}, {"tau", c.params.tau},
                 {"upsilon", c.params.upsilon}, {"k", c.params.k},
                 {"kappa", c.params.kappa}, {"rho", c.params.rho},
                 {"admissible", c.params.admissible}};
  j["epsilon"] = c.epsilon;
  j["eta"] = c.eta;
  nlohmann::json links = nlohmann::json::array();
  for (const auto& l : c.links) links.push_back(to_json(l));
  j["links"] = links;
  nlohmann::json leaves = nlohmann::json::array();
  for (const auto& p : c.leaf_ps) leaves.push_back(std::vector<double>(p.begin(), p.end()));
  j["leaf_ps"] = leaves;
  j["predicted_time"] = c.predicted_time;
  // normalize -0.0 so serialization round-trips bytewise
  j["time_order_exponent"] = c.time_order_exponent == 0.0 ? 0.0 : c.time_order_exponent;
  if (c.extended) {
    j["extended"] = {{"a_star", c.extended->a_star},
                     {"K_cap", c.extended->K_cap},
                     {"L", c.extended->L},
                     {"xi_star", std::vector<double>(c.extended->xi_star.begin(),
                                                     c.extended->xi_star.end())},
                     {"omega", c.extended->omega},
                     {"xi_halfwidth", c.extended->xi_halfwidth},
                     {"theta_halfwidth", c.extended->theta_halfwidth}};
  }
  return j;
}

inline StageRatios stage_from_json(const nlohmann::json& j) {
  return StageRatios{j.at("alpha").get<double>(), j.at("beta").get<double>(),
                     j.at("gamma").get<double>(), j.at("delta").get<double>()};
}

inline ChainSchedule chain_schedule_from_json(const nlohmann::json& j) {
  ChainSchedule c;
  const auto& p = j.at("params");
  c.params = compute_orders(p.at("sigma").get<double>(), p.at("tau").get<double>(),
                            p.at("upsilon").get<double>(), p.at("k").get<int>());
  c.epsilon = j.at("epsilon").get<double>();
  c.eta = j.at("eta").get<double>();
  if (j.contains("time_order_exponent"))
    c.time_order_exponent = j.at("time_order_exponent").get<double>();
  for (const auto& lj : j.at("links")) {
    LinkSchedule l;
    l.N = lj.at("N").get<long>();
    l.K = lj.at("K").get<long>();
    l.M = lj.at("M").get<long>();
    l.plain = stage_from_json(lj.at("plain"));
    l.tilde = stage_from_json(lj.at("tilde"));
    l.hat = stage_from_json(lj.at("hat"));
    l.prime = stage_from_json(lj.at("prime"));
    l.next_plain = stage_from_json(lj.at("next_plain"));
    for (const auto& ij : lj.at("inequalities"))
      l.ineqs.push_back({ij.at("name").get<std::string>(), ij.at("small").get<double>(),
                         ij.at("large").get<double>(),
                         ij.contains("dominant") ? ij.at("dominant").get<double>() : 1.0});
    c.predicted_time += l.time();
    c.links.push_back(std::move(l));
  }
  for (const auto& pj : j.at("leaf_ps")) {
    Vec v(static_cast<Index>(pj.size()));
    for (std::size_t i = 0; i < pj.size(); ++i) v[static_cast<Index>(i)] = pj[i].get<double>();
    c.leaf_ps.push_back(std::move(v));
  }
  if (j.contains("extended") && !j.at("extended").is_null()) {
    ExtendedSchedule e;
    const auto& ej = j.at("extended");
    e.a_star = ej.at("a_star").get<double>();
    e.K_cap = ej.at("K_cap").get<int>();
    e.L = ej.at("L").get<int>();
    const auto& xs = ej.at("xi_star");
    e.xi_star = Vec(static_cast<Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) e.xi_star[static_cast<Index>(i)] = xs[i].get<double>();
    e.omega = ej.at("omega").get<std::vector<long>>();
    e.xi_halfwidth = ej.at("xi_halfwidth").get<std::vector<double>>();
    e.theta_halfwidth = ej.at("theta_halfwidth").get<std::vector<double>>();
    c.extended = std::move(e);
  }
  return c;
}

}  // namespace caw
