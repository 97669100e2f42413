#pragma once

// Shared scalar/vector aliases and small numeric helpers used across the
// window, alignment, twist and scheduling layers. Sup-norm geometry
// throughout: all distances, box gaps and operator norms are max-norm.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace caw {

using Index = Eigen::Index;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kBoundaryTol = 1e-12;   // membership boundary tolerance
inline constexpr double kRoundTripTol = 1e-10;  // chart round-trip tolerance
inline constexpr double kChartCheckTol = 1e-12; // chart inverse composition check
inline constexpr double kHuge = 1e300;          // clamp for overflowing rate powers

struct CawError : std::runtime_error {
  explicit CawError(const std::string& msg) : std::runtime_error(msg) {}
};

// base^n evaluated in log space and clamped to [1/kHuge, kHuge]; base > 0.
inline double pow_clamped(double base, double n) {
  const double l = n * std::log(base);
  if (l > std::log(kHuge)) return kHuge;
  if (l < -std::log(kHuge)) return 1.0 / kHuge;
  return std::exp(l);
}

inline double sup_norm(const Vec& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

// Induced sup-norm (max absolute row sum).
inline double sup_operator_norm(const Mat& a) {
  double r = 0.0;
  for (Index i = 0; i < a.rows(); ++i) r = std::max(r, a.row(i).cwiseAbs().sum());
  return r;
}

// Smallest singular value; the coercivity constant c with |Av| >= c|v|.
inline double min_singular_value(const Mat& a) {
  if (a.rows() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues().minCoeff();
}

// Axis-aligned box, the basic certificate currency of the alignment engine.
struct Box {
  Vec lo, hi;

  Index dim() const { return lo.size(); }
  Vec center() const { return 0.5 * (lo + hi); }
  Vec halfwidth() const { return 0.5 * (hi - lo); }
  double radius() const { return dim() == 0 ? 0.0 : 0.5 * (hi - lo).cwiseAbs().maxCoeff(); }

  static Box unit(Index d) { return Box{Vec::Zero(d), Vec::Ones(d)}; }
  static Box around(const Vec& c, double r) {
    return Box{c.array() - r, c.array() + r};
  }
};

// Signed separation of two intervals: positive = gap, negative = overlap depth.
inline double interval_gap(double alo, double ahi, double blo, double bhi) {
  return std::max(blo - ahi, alo - bhi);
}

// Signed sup-norm separation of two boxes: positive = gap, negative =
// overlap depth (coordinates decouple under the max norm).
inline double box_gap_signed(const Box& a, const Box& b) {
  double g = -std::numeric_limits<double>::infinity();
  for (Index i = 0; i < a.dim(); ++i)
    g = std::max(g, interval_gap(a.lo[i], a.hi[i], b.lo[i], b.hi[i]));
  return g;
}

inline double box_gap(const Box& a, const Box& b) { return std::max(0.0, box_gap_signed(a, b)); }

// How deep box a sits inside box b (positive = strictly interior everywhere).
inline double interior_depth(const Box& a, const Box& b) {
  double d = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < a.dim(); ++i)
    d = std::min({d, a.lo[i] - b.lo[i], b.hi[i] - a.hi[i]});
  return d;
}

// Signed distance from box a to the face {x_axis = side} x [0,1]^(else) of
// the unit cube; positive = certified clearance.
inline double gap_to_unit_face(const Box& a, Index axis, double side) {
  double g = interval_gap(a.lo[axis], a.hi[axis], side, side);
  for (Index i = 0; i < a.dim(); ++i) {
    if (i == axis) continue;
    g = std::max(g, interval_gap(a.lo[i], a.hi[i], 0.0, 1.0));
  }
  return g;
}

// Exact image of a box under an affine map x -> L x + c.
inline Box affine_image(const Mat& linear, const Vec& offset, const Box& b) {
  const Vec c = linear * b.center() + offset;
  const Vec h = linear.cwiseAbs() * b.halfwidth();
  return Box{c - h, c + h};
}

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  return fit_slope(lx, ly);
}

// Deterministic RNG; every randomized routine takes one of these explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(gen_);
  }
  Vec uniform_vec(Index d, double lo, double hi) {
    Vec v(d);
    for (Index i = 0; i < d; ++i) v[i] = uniform(lo, hi);
    return v;
  }
  std::mt19937_64& raw() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace caw
