#pragma once

// Realizes a ChainSchedule as concrete windows and maps in the benchmark's
// normal-form charts (plain -> tilde -> hat -> prime per link, glued by the
// homoclinic jump), verifies the alignments, and extracts orbits.
//
// Window anchors sit on a constructible orbit skeleton. Within a link the
// center (q,p) block decouples from the hyperbolic block, so the q-position
// at the jump window is steered onto the omega'-offset target by shooting
// the link's starting p inside the tilde-stage p-budget (the
// transversality-torsion at work: the long inner stretch converts a p-offset
// into a q-displacement). The unstable coordinate is seeded once per link, M
// expansion steps before the jump, at magnitude nu' mu^-M, which the
// scheduler keeps below the orbit residual tolerance. Plain initial-condition
// bisection cannot pin the unstable coordinate through a whole inner stretch
// in double precision; the generic beam-search extractor below remains for
// short chains.

#include <caw/alignment.hpp>
#include <caw/normal_form.hpp>
#include <caw/schedule.hpp>
#include <caw/stage_maps.hpp>
#include <caw/window.hpp>

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace caw {

enum class Stage { plain, tilde, hat, prime };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::plain: return "plain";
    case Stage::tilde: return "tilde";
    case Stage::hat: return "hat";
    case Stage::prime: return "prime";
  }
  return "?";
}

// Window of one stage, centered at a flat (s,u,q,p) anchor. Exit block is
// (u,p) for the plain/tilde stages and (u,q) for the hat/prime stages; the
// chart is the permutation sending block order (exit, entry) to (s,u,q,p).
inline Window stage_window(Index m, Index n, const Vec& center, const StageRatios& r,
                           bool exit_in_q) {
  const Index d = 2 * m + 2 * n;
  std::vector<Index> block_to_ambient;
  std::vector<Axis> labels;
  for (Index i = 0; i < m; ++i) {
    block_to_ambient.push_back(m + i);
    labels.push_back(Axis::u);
  }
  for (Index i = 0; i < n; ++i) {
    block_to_ambient.push_back(exit_in_q ? 2 * m + i : 2 * m + n + i);
    labels.push_back(exit_in_q ? Axis::q : Axis::p);
  }
  for (Index i = 0; i < m; ++i) {
    block_to_ambient.push_back(i);
    labels.push_back(Axis::s);
  }
  for (Index i = 0; i < n; ++i) {
    block_to_ambient.push_back(exit_in_q ? 2 * m + n + i : 2 * m + i);
    labels.push_back(exit_in_q ? Axis::p : Axis::q);
  }
  Mat lin = Mat::Zero(d, d);
  for (Index b = 0; b < d; ++b) lin(block_to_ambient[static_cast<std::size_t>(b)], b) = 1.0;

  Vec exit_lo(m + n), exit_ed(m + n), entry_lo(m + n), entry_ed(m + n);
  const auto fill = [&](Vec& lo, Vec& ed, Index at, Index amb0, Index cnt, double size) {
    for (Index i = 0; i < cnt; ++i) {
      lo[at + i] = center[amb0 + i] - 0.5 * size;
      ed[at + i] = size;
    }
  };
  fill(exit_lo, exit_ed, 0, m, m, r.beta);                                          // u
  fill(exit_lo, exit_ed, m, exit_in_q ? 2 * m : 2 * m + n, n,
       exit_in_q ? r.gamma : r.delta);                                              // q | p
  fill(entry_lo, entry_ed, 0, 0, m, r.alpha);                                       // s
  fill(entry_lo, entry_ed, m, exit_in_q ? 2 * m + n : 2 * m, n,
       exit_in_q ? r.delta : r.gamma);                                              // p | q
  return Window(Rectangle(exit_lo, exit_ed), Rectangle(entry_lo, entry_ed),
                AffineChart(std::move(lin), Vec::Zero(d)), std::move(labels));
}

// Bisect a starting p-offset so the q-coordinate after `steps` inner iterates
// hits `target` per axis; the benchmark twist is componentwise monotone in p.
inline Vec shoot_p_offset(const TwistMap& tw, const Vec& q0, const Vec& p0, long steps,
                          const Vec& target, double halfwidth, double tol_q, int sweeps = 4,
                          int bisections = 60) {
  const Index n = q0.size();
  const auto q_after = [&](const Vec& dp) { return apply_twist(tw, q0, p0 + dp, steps).first; };
  Vec dp = Vec::Zero(n);
  for (int sweep = 0; sweep < sweeps; ++sweep) {
    if (sup_norm(q_after(dp) - target) <= tol_q) return dp;
    for (Index j = 0; j < n; ++j) {
      double lo = -halfwidth, hi = halfwidth;
      Vec d = dp;
      d[j] = lo;
      const double flo = q_after(d)[j] - target[j];
      d[j] = hi;
      const double fhi = q_after(d)[j] - target[j];
      if (flo > 0 || fhi < 0)
        throw CawError("shoot_p_offset: q-target unreachable within the p-window (axis " +
                       std::to_string(j) + ")");
      for (int it = 0; it < bisections; ++it) {
        const double mid = 0.5 * (lo + hi);
        d[j] = mid;
        ((q_after(d)[j] - target[j]) < 0 ? lo : hi) = mid;
      }
      dp[j] = 0.5 * (lo + hi);
    }
  }
  if (sup_norm(q_after(dp) - target) > tol_q)
    throw CawError("shoot_p_offset: did not converge to the q-target");
  return dp;
}

inline double shoot_halfwidth(const TwistMap& tw, const LinkSchedule& l) {
  const long horizon = l.N + l.K + l.M;
  const double drift = 2.0 * static_cast<double>(horizon) * tw.error_scale() * tw.error_sup;
  return std::max(0.4 * l.tilde.delta - drift, 0.05 * l.tilde.delta);
}

inline double shoot_tolerance(const LinkSchedule& l) {
  const double path_noise =
      8.0 * static_cast<double>(l.N + l.K + l.M) * std::numeric_limits<double>::epsilon();
  return std::max(0.005 * l.prime.gamma, path_noise);
}

struct ChainRealization {
  std::shared_ptr<const NormalFormSystem> sys;
  std::vector<Window> windows;
  std::vector<std::shared_ptr<DynMap>> maps;  // maps[i]: windows[i] -> windows[i+1]
  std::vector<int> link_of_window;
  std::vector<Stage> stage_of_window;
  std::vector<long> steps_before_window;       // cumulative iterate count
  std::vector<std::size_t> leaf_visit_window;  // index of the tilde window per leaf
  std::vector<HomoclinicJump> jumps;           // one per full link
  std::vector<Vec> anchors;                    // window centers
  std::vector<Vec> shot_dp;                    // per-link starting p-offset
};

// Lays the chain's windows on the shot anchor skeleton described above.
inline ChainRealization realize_chain(const ModelParams& mp, const ChainSchedule& chain) {
  ChainRealization r;
  auto sys = std::make_shared<NormalFormSystem>(make_system(mp));
  r.sys = sys;
  const Index m = mp.m, n = mp.n;
  const Vec ones_m = Vec::Ones(m);

  Vec q_cur = Vec::Constant(n, 0.25);
  long steps = 0;
  const std::size_t nlinks = chain.links.size();
  for (std::size_t i = 0; i < nlinks; ++i) {
    const LinkSchedule& l = chain.links[i];
    const bool last = (i + 1 == nlinks);
    const long horizon = l.N + l.K + l.M;

    // Shoot the link's start p so that the q-coordinate at the prime anchor
    // lands omega' beyond the unshot path (the scattering-map q-offset).
    const Vec p_leaf = chain.leaf_ps.at(i);
    Vec dp = Vec::Zero(n);
    if (!last && mp.omega_prime != 0.0) {
      Vec target = apply_twist(sys->inner, q_cur, p_leaf, horizon).first;
      target[0] += mp.omega_prime;
      dp = shoot_p_offset(sys->inner, q_cur, p_leaf, horizon, target,
                          shoot_halfwidth(sys->inner, l), shoot_tolerance(l));
    }
    r.shot_dp.push_back(dp);
    const Vec p_start = p_leaf + dp;

    const Vec c_plain = pack_state(mp.nu * ones_m, Vec::Zero(m), q_cur, p_start);
    r.windows.push_back(stage_window(m, n, c_plain, l.plain, false));
    r.anchors.push_back(c_plain);
    r.link_of_window.push_back(static_cast<int>(i));
    r.stage_of_window.push_back(Stage::plain);
    r.steps_before_window.push_back(steps);

    auto [qt, pt] = apply_twist(sys->inner, q_cur, p_start, l.N);
    r.maps.push_back(std::make_shared<PhiIterMap>(sys, l.N));
    steps += l.N;
    r.windows.push_back(stage_window(m, n, pack_state(Vec::Zero(m), Vec::Zero(m), qt, pt),
                                     l.tilde, false));
    r.anchors.push_back(pack_state(Vec::Zero(m), Vec::Zero(m), qt, pt));
    r.link_of_window.push_back(static_cast<int>(i));
    r.stage_of_window.push_back(Stage::tilde);
    r.steps_before_window.push_back(steps);
    r.leaf_visit_window.push_back(r.windows.size() - 1);

    auto [qh, ph] = apply_twist(sys->inner, qt, pt, l.K);
    r.maps.push_back(std::make_shared<PhiIterMap>(sys, l.K));
    steps += l.K;
    r.windows.push_back(stage_window(m, n, pack_state(Vec::Zero(m), Vec::Zero(m), qh, ph),
                                     l.hat, true));
    r.anchors.push_back(pack_state(Vec::Zero(m), Vec::Zero(m), qh, ph));
    r.link_of_window.push_back(static_cast<int>(i));
    r.stage_of_window.push_back(Stage::hat);
    r.steps_before_window.push_back(steps);

    if (last) break;

    auto [qm, pm] = apply_twist(sys->inner, qh, ph, l.M);
    const Vec c_prime = pack_state(Vec::Zero(m), mp.nu_prime * ones_m, qm, pm);
    r.maps.push_back(std::make_shared<PhiIterMap>(sys, l.M));
    steps += l.M;
    r.windows.push_back(stage_window(m, n, c_prime, l.prime, true));
    r.anchors.push_back(c_prime);
    r.link_of_window.push_back(static_cast<int>(i));
    r.stage_of_window.push_back(Stage::prime);
    r.steps_before_window.push_back(steps);

    q_cur = qm;
    HomoclinicJump jump = make_jump(mp, c_prime, Vec());  // plus-center set below
    r.jumps.push_back(std::move(jump));
  }

  // Second pass: each jump's plus-center is the next link's plain anchor.
  std::size_t ji = 0;
  for (std::size_t w = 0; w + 1 < r.windows.size(); ++w) {
    if (r.stage_of_window[w] == Stage::prime) {
      // the window following a prime stage is the next plain window
      r.jumps[ji].center_plus = r.anchors[w + 1];
      // The hyperbolic chart change of the benchmark jump is exactly affine;
      // the quadratic remainder acts on the center block.
      const double rp = mp.R_prime;
      const Index dm = 2 * m, dn = 2 * n;
      r.jumps[ji].remainder = [rp, dm, dn](const Vec& dx) -> Vec {
        Vec r2 = Vec::Zero(dx.size());
        r2.segment(dm, dn) = 0.75 * rp * dx.segment(dm, dn).array().square();
        return r2;
      };
      r.maps.insert(r.maps.begin() + static_cast<std::ptrdiff_t>(w),
                    std::make_shared<JumpMap>(r.jumps[ji]));
      ++ji;
    }
  }
  return r;
}

struct AlignmentFailure {
  std::size_t hop = 0;
  int link = 0;
  Stage stage = Stage::plain;
  AlignmentReport report;
};

// Checks every consecutive pair of the realized chain; returns the failing
// hop (link index and stage) if any.
inline std::optional<AlignmentFailure> verify_chain_alignment(
    const ChainRealization& r, int samples = 4, std::vector<AlignmentReport>* out = nullptr) {
  for (std::size_t i = 0; i + 1 < r.windows.size(); ++i) {
    const AlignmentReport rep =
        check_linear_alignment(r.windows[i], r.windows[i + 1], *r.maps[i], samples);
    if (out) out->push_back(rep);
    if (!rep.aligned)
      return AlignmentFailure{i, r.link_of_window[i], r.stage_of_window[i], rep};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Orbit records and the generic extractor

struct OrbitRecord {
  std::vector<Vec> points;
  std::vector<double> residuals;  // residuals[i] = |f_i(z_i) - z_{i+1}|
  std::vector<double> leaf_distances;
  std::vector<std::array<long, 3>> iterate_counts;  // per link {N, K, M}
  long total_steps = 0;
  double p_drift = 0.0;
  bool success = false;
  std::string failure;
  std::vector<int> link_of_point;
  std::vector<std::string> stage_of_point;
  std::vector<long> step_of_point;
};

// Constructive shadowing for short chains: beam search over subdivisions of
// the first window's exit block, scoring candidates by the worst containment
// violation of the forward image chain. Candidates whose orbits leave every
// window die; if all die the alignment certificate was wrong and we escalate.
inline OrbitRecord extract_orbit(const std::vector<Window>& windows,
                                 const std::vector<std::shared_ptr<DynMap>>& maps, int depth,
                                 double tol, int beam_width = 4) {
  if (windows.empty()) throw CawError("extract_orbit: empty window chain");
  if (maps.size() + 1 != windows.size())
    throw CawError("extract_orbit: need one map per consecutive window pair");
  const Window& w0 = windows.front();
  const Index m1 = w0.exit_dim();

  struct Cell {
    Box cell;
    double score = 0;
  };

  // Score of a candidate: the worst signed boundary excess of the forward
  // image chain (negative = everything interior by that depth). Minimizing
  // it drives the search both into containment and toward the most robust
  // orbit core.
  const auto evaluate = [&](const Box& cell, OrbitRecord* rec) -> double {
    Vec x0 = Vec::Constant(w0.dim(), 0.5);
    x0.head(m1) = cell.center();
    Vec z = w0.to_ambient(x0);
    double worst = -std::numeric_limits<double>::infinity();
    if (rec) rec->points.push_back(z);
    for (std::size_t i = 0; i < maps.size(); ++i) {
      Vec y;
      try {
        y = maps[i]->eval(z);
      } catch (const CawError&) {
        if (rec) rec->failure = "orbit escaped during evaluation";
        return std::numeric_limits<double>::infinity();
      }
      Vec nrm = windows[i + 1].to_normalized(y);
      for (Index a = 0; a < nrm.size(); ++a) {
        worst = std::max({worst, -nrm[a], nrm[a] - 1.0});
        nrm[a] = std::clamp(nrm[a], 0.0, 1.0);
      }
      z = windows[i + 1].to_ambient(nrm);
      if (rec) {
        rec->residuals.push_back(sup_norm(y - z));
        rec->points.push_back(z);
      }
    }
    return worst;
  };

  const auto build_record = [&](const Box& cell) {
    OrbitRecord rec;
    evaluate(cell, &rec);
    rec.success = true;
    for (double rr : rec.residuals) rec.success = rec.success && rr <= tol;
    if (!rec.success && rec.failure.empty()) rec.failure = "residual tolerance not met";
    return rec;
  };

  if (maps.empty() || m1 == 0) return build_record(Box::unit(m1));

  std::vector<Cell> beam{{Box::unit(m1), evaluate(Box::unit(m1), nullptr)}};
  for (int level = 0; level < depth; ++level) {
    std::vector<Cell> next;
    for (const Cell& c : beam) {
      const Index nchild = Index(1) << m1;
      for (Index b = 0; b < nchild; ++b) {
        Box child = c.cell;
        for (Index a = 0; a < m1; ++a) {
          const double mid = 0.5 * (c.cell.lo[a] + c.cell.hi[a]);
          if ((b >> a) & 1)
            child.lo[a] = mid;
          else
            child.hi[a] = mid;
        }
        next.push_back({child, evaluate(child, nullptr)});
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Cell& a, const Cell& b) { return a.score < b.score; });
    if (next.size() > static_cast<std::size_t>(beam_width)) next.resize(beam_width);
    beam = std::move(next);
    if (beam.empty() || !std::isfinite(beam.front().score)) break;
  }
  if (beam.empty() || !std::isfinite(beam.front().score) || beam.front().score > 0.25)
    throw CawError("extract_orbit: no candidate cell survives (false alignment certificate)");
  return build_record(beam.front().cell);
}

}  // namespace caw
