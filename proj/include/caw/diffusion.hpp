#pragma once

// End-to-end diffusion runs: instantiate the scheduled window chain in the
// benchmark model, verify every alignment, and extract a residual-certified
// pseudo-orbit drifting across the prescribed leaves. Residuals vanish except
// at the deliberate re-anchors, each kept below the tolerance: the per-link
// p-correction (re-shooting the q-target from the actual state), the
// unstable seed M steps before the jump, and the post-jump cleanup of the
// contracted unstable leakage.

#include <caw/chain.hpp>

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace caw {

struct AlignmentVerifyError : CawError {
  int link;
  std::string stage;
  AlignmentReport report;
  AlignmentVerifyError(int link_, std::string stage_, AlignmentReport rep)
      : CawError("alignment verification failed at link " + std::to_string(link_) + " stage " +
                 stage_),
        link(link_),
        stage(std::move(stage_)),
        report(std::move(rep)) {}
};

struct DiffusionOptions {
  bool verify_alignments = true;
  int alignment_samples = 4;
};

struct DiffusionResult {
  OrbitRecord orbit;
  std::vector<AlignmentReport> alignments;
  long links_run = 0;
};

namespace detail {

// Per-axis product of the unstable diagonal factors along the (q,p) path;
// valid for the diagonal benchmark block.
inline Vec unstable_factor_product(const NormalFormSystem& sys, Vec q, Vec p, long steps) {
  const Index m = sys.m();
  Vec prod = Vec::Ones(m);
  for (long j = 0; j < steps; ++j) {
    const Mat au = sys.hyp.A_u(q, p);
    const Vec err = sys.hyp.Nu_err(Vec::Ones(m), q, p);
    for (Index i = 0; i < m; ++i) prod[i] *= au(i, i) + err[i];
    std::tie(q, p) = twist_step(sys.inner, q, p);
  }
  return prod;
}

}  // namespace detail

inline DiffusionResult run_diffusion(const ModelParams& mp, const ChainSchedule& chain,
                                     double tol, const DiffusionOptions& opts = {}) {
  DiffusionResult out;
  ChainRealization r = realize_chain(mp, chain);
  if (opts.verify_alignments) {
    auto fail = verify_chain_alignment(r, opts.alignment_samples, &out.alignments);
    if (fail) throw AlignmentVerifyError(fail->link, stage_name(fail->stage), fail->report);
  }

  const NormalFormSystem& sys = *r.sys;
  const Index m = mp.m;
  OrbitRecord& rec = out.orbit;
  const std::size_t nlinks = chain.links.size();

  std::size_t wi = 0;
  Vec z = r.anchors[0];
  const auto push_point = [&](const Vec& zz, std::size_t widx, const char* suffix = "") {
    rec.points.push_back(zz);
    rec.link_of_point.push_back(r.link_of_window[widx]);
    rec.stage_of_point.push_back(std::string(stage_name(r.stage_of_window[widx])) + suffix);
    rec.step_of_point.push_back(r.steps_before_window[widx]);
  };

  long total_steps = 0;
  for (std::size_t i = 0; i < nlinks; ++i) {
    const LinkSchedule& l = chain.links[i];
    const bool last = (i + 1 == nlinks);
    const StateView zv = unpack_state(sys, z);

    if (!last) {
      // Re-shoot the q-target from the actual state; after the first link
      // this corrects only the tiny inherited deviation from the anchors.
      const Vec target_q = unpack_state(sys, r.anchors[wi + 3]).q;
      const Vec dp = shoot_p_offset(sys.inner, zv.q, zv.p, l.N + l.K + l.M, target_q,
                                    shoot_halfwidth(sys.inner, l), shoot_tolerance(l));
      const Vec znew = pack_state(zv.s, zv.u, zv.q, zv.p + dp);
      if (i > 0) rec.residuals.back() = std::max(rec.residuals.back(), sup_norm(dp));
      z = znew;
    }
    push_point(z, wi);

    Vec z_tilde = apply_phi(sys, z, l.N);
    total_steps += l.N;
    rec.residuals.push_back(0.0);
    push_point(z_tilde, wi + 1);
    {
      const StateView tv = unpack_state(sys, z_tilde);
      rec.leaf_distances.push_back(
          std::max({sup_norm(tv.s), sup_norm(tv.u), sup_norm(tv.p - chain.leaf_ps[i])}));
    }

    Vec z_hat = apply_phi(sys, z_tilde, l.K);
    total_steps += l.K;
    rec.residuals.push_back(0.0);
    push_point(z_hat, wi + 2);

    rec.iterate_counts.push_back({l.N, l.K, l.M});
    if (last) {
      wi += 3;
      break;
    }

    // Unstable seed: u chosen so that M steps later it lands exactly on nu'.
    const StateView hv = unpack_state(sys, z_hat);
    const Vec prod = detail::unstable_factor_product(sys, hv.q, hv.p, l.M);
    const Vec u_seed = (mp.nu_prime * Vec::Ones(m)).cwiseQuotient(prod);
    Vec z_seeded = pack_state(hv.s, u_seed, hv.q, hv.p);
    rec.residuals.push_back(sup_norm(z_seeded - z_hat));
    push_point(z_seeded, wi + 2, "+seed");

    Vec z_prime = apply_phi(sys, z_seeded, l.M);
    total_steps += l.M;
    rec.residuals.push_back(0.0);
    push_point(z_prime, wi + 3);

    // Jump to the next leaf; clean the contracted unstable leakage A3 s.
    Vec z_next = apply_jump(r.jumps[i], z_prime);
    const StateView nv = unpack_state(sys, z_next);
    Vec z_clean = pack_state(nv.s, Vec::Zero(m), nv.q, nv.p);
    rec.residuals.push_back(sup_norm(z_clean - z_next));
    z = z_clean;
    wi += 4;
  }

  rec.total_steps = total_steps;
  rec.p_drift = sup_norm(unpack_state(sys, rec.points.back()).p -
                         unpack_state(sys, rec.points.front()).p);
  rec.success = true;
  for (double rr : rec.residuals) rec.success = rec.success && rr <= tol;
  // Containment: every recorded point classifies interior-or-entry (or on
  // the exit boundary it is about to cross) of its window.
  std::size_t pi = 0;
  for (std::size_t w = 0; w < r.windows.size() && pi < rec.points.size(); ++w) {
    while (pi < rec.points.size() && rec.step_of_point[pi] == r.steps_before_window[w] &&
           rec.link_of_point[pi] == r.link_of_window[w]) {
      if (membership(r.windows[w], rec.points[pi], 1e-9) == Membership::outside) {
        rec.success = false;
        rec.failure = "point left window " + std::to_string(w) + " (" +
                      stage_name(r.stage_of_window[w]) + ")";
      }
      ++pi;
    }
  }
  if (!rec.success && rec.failure.empty()) rec.failure = "residual tolerance not met";
  out.links_run = static_cast<long>(nlinks);
  return out;
}

// ---------------------------------------------------------------------------
// Extended run: the same chain with (theta, xi) carried through apply_psi and
// the tube containment of the extended construction checked at every point.

struct ExtendedRunResult {
  DiffusionResult base;
  std::vector<double> xi_excursion;  // per recorded point
  double max_xi_excursion = 0.0;
  bool in_tubes = false;
};

inline ExtendedRunResult run_diffusion_extended(const ModelParams& mp, const ChainSchedule& chain,
                                                double tol, const DiffusionOptions& opts = {}) {
  if (!chain.extended) throw CawError("run_diffusion_extended: schedule has no extended block");
  ExtendedRunResult out;
  auto ext = std::make_shared<ExtendedSystem>(make_extended(mp));

  DiffusionResult base = run_diffusion(mp, chain, tol, opts);

  const Index d = ext->base.dim();
  Vec w(ext->dim());
  w << base.orbit.points.front(), Vec::Zero(ext->ell1), ext->xi_star;
  const double el = std::pow(mp.epsilon, ext->L);
  const double cj = 0.55 * mp.C_ext;

  std::vector<Vec> ext_points{w};
  out.in_tubes = true;
  out.xi_excursion.push_back(0.0);
  bool ok = true;
  for (std::size_t i = 0; i + 1 < base.orbit.points.size(); ++i) {
    const long dstep = base.orbit.step_of_point[i + 1] - base.orbit.step_of_point[i];
    w.head(d) = base.orbit.points[i];
    for (long s = 0; s < dstep; ++s) w = apply_psi(*ext, w, 1);
    // The base pseudo-orbit shadows the coupled dynamics within the O(eps^L)
    // coupling budget per hop; fold the replacement into the hop residual.
    // Zero-step hops (jumps, re-anchors) leave (theta, xi) untouched and
    // carry only the base residual.
    const double replace =
        dstep > 0 ? sup_norm(w.head(d) - base.orbit.points[i + 1]) : 0.0;
    w.head(d) = base.orbit.points[i + 1];
    base.orbit.residuals[i] = std::max(base.orbit.residuals[i], replace);
    ok = ok && base.orbit.residuals[i] <=
                   tol + 1.05 * mp.C_ext * el * static_cast<double>(std::max<long>(dstep, 1));
    ext_points.push_back(w);
    const double exc = sup_norm(w.tail(ext->ell2) - ext->xi_star);
    out.xi_excursion.push_back(exc);
    const double allowed =
        cj * static_cast<double>(base.orbit.step_of_point[i + 1]) * el + 1e-15;
    if (exc > allowed || exc > chain.extended->a_star) out.in_tubes = false;
  }
  out.max_xi_excursion = *std::max_element(out.xi_excursion.begin(), out.xi_excursion.end());
  base.orbit.points = std::move(ext_points);
  base.orbit.success = ok && base.orbit.success;
  out.base = std::move(base);
  return out;
}

// ---------------------------------------------------------------------------
// Scaling sweep

struct ScalingRow {
  double epsilon = 0.0;
  long total_steps = 0;
  double p_drift = 0.0;
  double steps_per_unit_drift = 0.0;
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  double fitted_slope = 0.0;  // log(steps per unit drift) against log(eps)
};

inline std::vector<Vec> make_leaves(Index n, double p_start, double spacing, long count) {
  std::vector<Vec> leaves;
  for (long i = 0; i < count; ++i) leaves.push_back(Vec::Constant(n, p_start + spacing * i));
  return leaves;
}

inline ScalingResult run_scaling(ModelParams mp, const std::vector<double>& epsilons,
                                 double drift_target, double spacing_scale, double eta,
                                 double tol, const DiffusionOptions& opts = {}) {
  ScalingResult out;
  for (double eps : epsilons) {
    mp.epsilon = eps;
    const OrderParams o = compute_orders(mp.sigma, mp.tau, mp.upsilon, mp.k);
    const double spacing = spacing_scale * std::pow(eps, mp.upsilon);
    const long count =
        std::max<long>(2, leaves_for_drift(drift_target, eps, mp.upsilon, spacing_scale) + 1);
    const std::vector<Vec> leaves = make_leaves(mp.n, 0.05, spacing, count);
    SchedOptions sopt;
    sopt.eta = eta;
    sopt.orbit_tol = tol;
    const SchedConstants sc = SchedConstants::from_model(
        mp, make_jump(mp, Vec::Zero(mp.dim()), Vec::Zero(mp.dim())).constants());
    const ChainSchedule chain = build_chain(o, sc, eps, leaves, sopt);
    const DiffusionResult res = run_diffusion(mp, chain, tol, opts);
    ScalingRow row;
    row.epsilon = eps;
    row.total_steps = res.orbit.total_steps;
    row.p_drift = res.orbit.p_drift;
    row.steps_per_unit_drift =
        static_cast<double>(res.orbit.total_steps) / std::max(res.orbit.p_drift, 1e-12);
    out.rows.push_back(row);
  }
  std::vector<double> xs, ys;
  for (const auto& rw : out.rows) {
    xs.push_back(rw.epsilon);
    ys.push_back(rw.steps_per_unit_drift);
  }
  out.fitted_slope = loglog_slope(xs, ys);
  return out;
}

}  // namespace caw
