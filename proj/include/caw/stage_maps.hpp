#pragma once

// DynMap adapters for the benchmark system: iterated normal-form map Phi^N
// with closed-form certified box enclosures (the rate and shear sandwiches),
// the homoclinic jump with its exact affine-plus-quadratic enclosure, and the
// extended skew map. These are what the alignment engine consumes when
// verifying the scheduled window chains; the closed forms keep long inner
// stretches certifiable where a raw Lipschitz bound would be astronomically
// conservative.

#include <caw/alignment.hpp>
#include <caw/maps.hpp>
#include <caw/normal_form.hpp>

#include <memory>
#include <utility>

namespace caw {

namespace detail {

// [a,b] * [c,d] with the result clamped to +-kHuge.
inline void interval_mul(double a, double b, double c, double d, double& lo, double& hi) {
  const double v[4] = {a * c, a * d, b * c, b * d};
  lo = std::clamp(std::min({v[0], v[1], v[2], v[3]}), -kHuge, kHuge);
  hi = std::clamp(std::max({v[0], v[1], v[2], v[3]}), -kHuge, kHuge);
}

}  // namespace detail

class PhiIterMap final : public DynMap {
 public:
  PhiIterMap(std::shared_ptr<const NormalFormSystem> sys, long steps)
      : sys_(std::move(sys)), steps_(steps) {}

  Index domain_dim() const override { return sys_->dim(); }
  Index range_dim() const override { return sys_->dim(); }
  long steps() const { return steps_; }

  Vec eval(const Vec& x) const override { return apply_phi(*sys_, x, steps_); }

  Mat jacobian(const Vec& x0) const override {
    const Index d = sys_->dim();
    Mat j = Mat::Identity(d, d);
    Vec x = x0;
    const auto step_jac = [&](const Vec& y) -> Mat {
      if (sys_->step_jacobian) return sys_->step_jacobian(y);
      const double h = 1e-7;
      Mat sj(d, d);
      for (Index c = 0; c < d; ++c) {
        Vec yp = y, ym = y;
        yp[c] += h;
        ym[c] -= h;
        sj.col(c) = (phi_step(*sys_, yp) - phi_step(*sys_, ym)) / (2 * h);
      }
      return sj;
    };
    const auto clamp_mat = [](Mat& mm) {
      for (Index i = 0; i < mm.size(); ++i) {
        double& v = mm.data()[i];
        if (std::isnan(v)) v = 0.0;
        v = std::clamp(v, -kHuge, kHuge);
      }
    };
    if (steps_ >= 0) {
      for (long i = 0; i < steps_; ++i) {
        Mat p = step_jac(x) * j;
        clamp_mat(p);
        j.swap(p);
        x = phi_step(*sys_, x);
      }
    } else {
      for (long i = 0; i < -steps_; ++i) {
        const Vec xp = phi_step_inverse(*sys_, x);
        Mat p = step_jac(xp).partialPivLu().solve(j);
        clamp_mat(p);
        j.swap(p);
        x = xp;
      }
    }
    return j;
  }

  std::optional<double> lipschitz(const Box&) const override {
    const auto& h = sys_->hyp;
    const double twist_lip = 1.0 + sys_->inner.T_plus +
                             2 * M_PI * sys_->inner.error_sup * sys_->inner.error_scale();
    const double step = std::max({h.lambda_plus + 2 * M_PI * h.delta_s,
                                  h.mu_plus + 2 * M_PI * h.delta_u, twist_lip});
    return pow_clamped(step, static_cast<double>(std::abs(steps_)));
  }

  // Closed-form enclosure from the rate sandwiches; exact interval products
  // per axis for the diagonal benchmark blocks. O(1) in the step count.
  std::optional<Box> image_bound(const Box& cell) const override {
    if (!sys_->hyp.diagonal) return DynMap::image_bound(cell);
    const Index m = sys_->m(), n = sys_->n();
    const TwistMap& tw = sys_->inner;
    const double an = static_cast<double>(std::abs(steps_));
    const bool fwd = steps_ >= 0;

    const double lam_lo = fwd ? pow_clamped(sys_->hyp.lambda_minus, an)
                              : pow_clamped(sys_->hyp.lambda_plus, -an);
    const double lam_hi = fwd ? pow_clamped(sys_->hyp.lambda_plus, an)
                              : pow_clamped(sys_->hyp.lambda_minus, -an);
    const double mu_lo =
        fwd ? pow_clamped(sys_->hyp.mu_minus, an) : pow_clamped(sys_->hyp.mu_plus, -an);
    const double mu_hi =
        fwd ? pow_clamped(sys_->hyp.mu_plus, an) : pow_clamped(sys_->hyp.mu_minus, -an);

    Box out{Vec::Zero(sys_->dim()), Vec::Zero(sys_->dim())};
    for (Index i = 0; i < m; ++i) {
      detail::interval_mul(cell.lo[i], cell.hi[i], lam_lo, lam_hi, out.lo[i], out.hi[i]);
      detail::interval_mul(cell.lo[m + i], cell.hi[m + i], mu_lo, mu_hi, out.lo[m + i],
                           out.hi[m + i]);
    }
    const double drift = an * tw.error_scale() * tw.error_sup;
    Box pb{cell.lo.segment(2 * m + n, n).array() - drift,
           cell.hi.segment(2 * m + n, n).array() + drift};
    const Box gb = tw.g_box(pb);
    for (Index i = 0; i < n; ++i) {
      const double glo = fwd ? an * gb.lo[i] : -an * gb.hi[i];
      const double ghi = fwd ? an * gb.hi[i] : -an * gb.lo[i];
      out.lo[2 * m + i] = cell.lo[2 * m + i] + glo - drift * an;
      out.hi[2 * m + i] = cell.hi[2 * m + i] + ghi + drift * an;
      out.lo[2 * m + n + i] = pb.lo[i];
      out.hi[2 * m + n + i] = pb.hi[i];
    }
    return out;
  }

 private:
  std::shared_ptr<const NormalFormSystem> sys_;
  long steps_;
};

class JumpMap final : public DynMap {
 public:
  explicit JumpMap(HomoclinicJump jump) : jump_(std::move(jump)), dphi_(jump_.dphi()) {}

  Index domain_dim() const override { return jump_.dim(); }
  Index range_dim() const override { return jump_.dim(); }
  const HomoclinicJump& jump() const { return jump_; }

  Vec eval(const Vec& x) const override { return apply_jump(jump_, x); }

  Mat jacobian(const Vec& x) const override {
    // Default remainder is 0.75 R' dx_i^2 per axis.
    const Vec dx = x - jump_.center_minus;
    Mat j = dphi_;
    j += Mat((1.5 * jump_.R_prime * dx).asDiagonal());
    return j;
  }

  std::optional<double> lipschitz(const Box& b) const override {
    double r = 0.0;
    for (Index i = 0; i < b.dim(); ++i)
      r = std::max({r, std::abs(b.lo[i] - jump_.center_minus[i]),
                    std::abs(b.hi[i] - jump_.center_minus[i])});
    return sup_operator_norm(dphi_) + 1.5 * jump_.R_prime * r;
  }

  std::optional<Box> image_bound(const Box& cell) const override {
    const Box d{cell.lo - jump_.center_minus, cell.hi - jump_.center_minus};
    Box out = affine_image(dphi_, jump_.center_plus, d);
    for (Index i = 0; i < d.dim(); ++i) {
      const double lo = d.lo[i], hi = d.hi[i];
      const double maxsq = std::max(lo * lo, hi * hi);
      const double minsq = (lo <= 0.0 && hi >= 0.0) ? 0.0 : std::min(lo * lo, hi * hi);
      out.lo[i] += 0.75 * jump_.R_prime * minsq;
      out.hi[i] += 0.75 * jump_.R_prime * maxsq;
    }
    return out;
  }

 private:
  HomoclinicJump jump_;
  Mat dphi_;
};

class PsiIterMap final : public DynMap {
 public:
  PsiIterMap(std::shared_ptr<const ExtendedSystem> ext, long steps)
      : ext_(std::move(ext)), steps_(steps) {}

  Index domain_dim() const override { return ext_->dim(); }
  Index range_dim() const override { return ext_->dim(); }
  Vec eval(const Vec& w) const override { return apply_psi(*ext_, w, steps_); }

 private:
  std::shared_ptr<const ExtendedSystem> ext_;
  long steps_;
};

struct TransitMaps {
  std::shared_ptr<DynMap> plus_to_base;   // Phi^{N+}: plus chart into the base chart
  std::shared_ptr<DynMap> base_to_minus;  // Phi^{N-}: base chart out to the minus chart
  std::shared_ptr<DynMap> excursion;      // Phi^{N+} o phi o Phi^{N-}
};

// Chart-transit maps of one homoclinic excursion. In the benchmark the
// normal form is globally defined, so both transits act as plain Phi
// iterates; the leaf offsets nu, nu', omega' live in the jump anchors.
inline TransitMaps transit_maps(const HomoclinicJump& jump,
                                std::shared_ptr<const NormalFormSystem> sys) {
  TransitMaps t;
  t.plus_to_base = std::make_shared<PhiIterMap>(sys, jump.N_plus);
  t.base_to_minus = std::make_shared<PhiIterMap>(sys, jump.N_minus);
  auto jm = std::make_shared<JumpMap>(jump);
  t.excursion = std::make_shared<ComposedMap>(
      std::make_shared<ComposedMap>(t.base_to_minus, jm), t.plus_to_base);
  return t;
}

}  // namespace caw
