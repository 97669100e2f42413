#pragma once

// Correct-alignment checks for windows under maps. The linear route verifies
// (a) that the exit-block linearization at the source center maps the
// boundary of the centered unit cube strictly outside it with nonzero
// determinant, and (b) that the image of the exit set clears the target
// window and the image of the whole window clears the target entry set.
// All boundary work is done on covering grids of cells whose images are
// enclosed by certified boxes, so a pass is a certificate and the reported
// margin is a sup-norm perturbation radius under which alignment persists.

#include <caw/core.hpp>
#include <caw/maps.hpp>
#include <caw/window.hpp>

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace caw {

enum class AlignMode { linear, degree };

struct AlignmentWitness {
  std::string condition;  // which check failed (or "" on success diagnostics)
  std::string detail;
  double value = 0.0;  // offending clearance / determinant / mismatch
};

struct AlignmentReport {
  bool aligned = false;
  AlignMode mode = AlignMode::linear;
  double margin = 0.0;       // ambient sup-norm perturbation radius
  double exit_margin = 0.0;  // clearance of the exit-block linearization test
  Mat exit_linearization;    // the linear witness used for the degree condition
  std::optional<AlignmentWitness> witness;
};

inline nlohmann::json to_json(const AlignmentReport& r) {
  nlohmann::json j;
  j["aligned"] = r.aligned;
  j["mode"] = r.mode == AlignMode::linear ? "linear" : "degree";
  j["margin"] = r.margin;
  if (r.witness) {
    j["witness"] = {{"condition", r.witness->condition},
                    {"detail", r.witness->detail},
                    {"value", r.witness->value}};
  } else {
    j["witness"] = nullptr;
  }
  return j;
}

struct AlignOptions {
  int samples = 8;        // initial grid cells per axis on faces and cube
  int refine_depth = 48;  // binary refinement budget per undecided cell
  long node_budget = 400000;
  // Supplied linear witness: re-verification under perturbation keeps the
  // original linearization; mode reports "degree".
  std::optional<Mat> degree_witness;
};

namespace detail {

// Iterate over a grid of cells covering [0,1]^d with some axes pinned to a
// fixed degenerate interval. fn receives the cell box.
inline void for_each_cell(Index d, int per_axis, const std::vector<std::pair<Index, double>>& pinned,
                          const std::function<void(const Box&)>& fn) {
  std::vector<Index> free_axes;
  for (Index i = 0; i < d; ++i) {
    bool is_pinned = false;
    for (const auto& [ax, v] : pinned)
      if (ax == i) is_pinned = true;
    if (!is_pinned) free_axes.push_back(i);
  }
  const Index nfree = static_cast<Index>(free_axes.size());
  std::vector<int> idx(static_cast<std::size_t>(nfree), 0);
  const double w = 1.0 / per_axis;
  while (true) {
    Box cell{Vec::Zero(d), Vec::Zero(d)};
    for (const auto& [ax, v] : pinned) {
      cell.lo[ax] = v;
      cell.hi[ax] = v;
    }
    for (Index k = 0; k < nfree; ++k) {
      cell.lo[free_axes[k]] = idx[static_cast<std::size_t>(k)] * w;
      cell.hi[free_axes[k]] = (idx[static_cast<std::size_t>(k)] + 1) * w;
    }
    fn(cell);
    Index k = 0;
    for (; k < nfree; ++k) {
      if (++idx[static_cast<std::size_t>(k)] < per_axis) break;
      idx[static_cast<std::size_t>(k)] = 0;
    }
    if (k == nfree) break;
    if (nfree == 0) break;
  }
}

// Adaptive cell verification: clear_fn(bound) > 0 certifies the whole cell,
// violate_fn(bound) certifies a definite violation, otherwise bisect the
// widest axis until the refinement budget runs out (undecided counts as a
// failure with zero clearance). Returns the certified minimum clearance over
// the region, or a negative value on certified violation.
inline double adaptive_clearance(const std::function<Box(const Box&)>& image,
                                 const std::function<double(const Box&)>& clear_fn,
                                 const std::function<bool(const Box&)>& violate_fn,
                                 const Box& cell, int depth, long* nodes) {
  if (--(*nodes) < 0) return 0.0;
  const Box b = image(cell);
  const double c = clear_fn(b);
  if (c > 0.0) return c;
  if (violate_fn && violate_fn(b)) return -1.0;
  Index split = -1;
  double w = 0.0;
  for (Index a = 0; a < cell.dim(); ++a)
    if (cell.hi[a] - cell.lo[a] > w) {
      w = cell.hi[a] - cell.lo[a];
      split = a;
    }
  if (depth <= 0 || split < 0) return 0.0;
  Box left = cell, right = cell;
  const double mid = 0.5 * (cell.lo[split] + cell.hi[split]);
  left.hi[split] = mid;
  right.lo[split] = mid;
  const double cl = adaptive_clearance(image, clear_fn, violate_fn, left, depth - 1, nodes);
  if (cl <= 0.0) return cl;
  const double cr = adaptive_clearance(image, clear_fn, violate_fn, right, depth - 1, nodes);
  return std::min(cl, cr);
}

}  // namespace detail

// Decides linear correct alignment of w1 with w2 under `map`, certified by
// per-cell image enclosures. Throws if the map cannot bound images
// (no Lipschitz constant and no structural enclosure).
inline AlignmentReport check_linear_alignment(const Window& w1, const Window& w2,
                                              const DynMap& map, int samples = 8,
                                              const AlignOptions& opts_in = {}) {
  AlignOptions opts = opts_in;
  if (samples > 0) opts.samples = samples;
  if (w1.exit_dim() != w2.exit_dim())
    throw CawError("check_linear_alignment: exit dimension mismatch");
  if (map.domain_dim() != w1.dim() || map.range_dim() != w2.dim())
    throw CawError("check_linear_alignment: map dimension mismatch");

  const Index m = w1.dim();
  const Index m1 = w1.exit_dim();
  const Index m2t = w2.entry_dim();

  AlignmentReport rep;
  rep.mode = opts.degree_witness ? AlignMode::degree : AlignMode::linear;

  // Normalized image enclosure of a source cell, exact through both charts;
  // to_normalized is affine: x = n2inv * y + b2 with b2 = to_normalized(0).
  const Mat n2inv = w2.normalized_linear_inverse();
  const Vec b2 = w2.to_normalized(Vec::Zero(w2.dim()));
  const auto norm_image = [&](const Box& cell) -> Box {
    const Box amb = w1.ambient_box(cell);
    const auto img = map.image_bound(amb);
    if (!img) throw CawError("check_linear_alignment: Lipschitz bound unavailable");
    return affine_image(n2inv, b2, *img);
  };

  const Box cube = Box::unit(w2.dim());
  double min_clear = std::numeric_limits<double>::infinity();
  std::optional<AlignmentWitness> fail;

  const auto run_region = [&](const std::vector<std::pair<Index, double>>& pinned,
                              const std::function<double(const Box&)>& clear_fn,
                              const std::function<bool(const Box&)>& violate_fn) {
    double region_clear = std::numeric_limits<double>::infinity();
    long nodes = opts.node_budget;
    detail::for_each_cell(m, opts.samples, pinned, [&](const Box& cell) {
      if (region_clear <= 0.0) return;
      region_clear = std::min(region_clear,
                              detail::adaptive_clearance(norm_image, clear_fn, violate_fn, cell,
                                                         opts.refine_depth, &nodes));
    });
    return region_clear;
  };

  // (b1) image of the exit set avoids the target window.
  for (Index a = 0; a < m1 && !fail; ++a) {
    for (double side : {0.0, 1.0}) {
      const double face_clear =
          run_region({{a, side}}, [&](const Box& b) { return box_gap_signed(b, cube); },
                     [&](const Box& b) { return interior_depth(b, cube) > 0.0; });
      min_clear = std::min(min_clear, face_clear);
      if (!(face_clear > 0.0)) {
        fail = AlignmentWitness{"exit_image_meets_target",
                                "exit face axis " + std::to_string(a) + " side " +
                                    std::to_string(static_cast<int>(side)),
                                face_clear};
        break;
      }
    }
  }

  // (b2) image of the window avoids the target entry set; for m1 = 0 the
  // stronger clause f(W1) inside Int(W2) applies instead.
  if (!fail) {
    double clear2 = std::numeric_limits<double>::infinity();
    if (m1 == 0) {
      clear2 = run_region({}, [&](const Box& b) { return interior_depth(b, cube); },
                          [&](const Box& b) { return box_gap_signed(b, cube) > 0.0; });
    } else if (m2t > 0) {
      clear2 = run_region({},
                          [&](const Box& b) {
                            double g = std::numeric_limits<double>::infinity();
                            for (Index a = w2.exit_dim(); a < w2.dim(); ++a)
                              for (double side : {0.0, 1.0})
                                g = std::min(g, gap_to_unit_face(b, a, side));
                            return g;
                          },
                          nullptr);
    }
    if (std::isfinite(clear2)) min_clear = std::min(min_clear, clear2);
    if (!(clear2 > 0.0)) {
      fail = AlignmentWitness{m1 == 0 ? "image_not_interior" : "image_meets_entry_set", "", clear2};
    }
  }

  // (a) exit-block linearization expands across the centered cube; nonzero
  // determinant stands in for the Brouwer degree of the linear witness.
  if (!fail && m1 > 0) {
    Mat a_exit;
    if (opts.degree_witness) {
      a_exit = *opts.degree_witness;
    } else {
      const Vec c = Vec::Constant(m, 0.5);
      const Mat jn = n2inv * map.jacobian(w1.to_ambient(c)) * w1.normalized_linear();
      a_exit = jn.topLeftCorner(m1, m1);
    }
    rep.exit_linearization = a_exit;
    for (Index i = 0; i < m1 * m1; ++i) {
      double& v = a_exit(i / m1, i % m1);
      v = std::clamp(v, -kHuge, kHuge);
      if (std::isnan(v)) v = 0.0;
    }
    const Box ccube{Vec::Constant(m1, -0.5), Vec::Constant(m1, 0.5)};
    const auto lin_image = [&](const Box& cell) {
      return affine_image(a_exit, Vec::Zero(m1), cell);
    };
    double amin = std::numeric_limits<double>::infinity();
    for (Index a = 0; a < m1 && !fail; ++a) {
      for (double side : {-0.5, 0.5}) {
        double face_clear = std::numeric_limits<double>::infinity();
        long nodes = opts.node_budget;
        detail::for_each_cell(m1, opts.samples, {{a, side < 0 ? 0.0 : 1.0}}, [&](const Box& cell01) {
          if (face_clear <= 0.0) return;
          // cells arrive in [0,1]^{m1}; shift to centered coordinates
          Box cell{cell01.lo.array() - 0.5, cell01.hi.array() - 0.5};
          cell.lo[a] = side;
          cell.hi[a] = side;
          face_clear = std::min(
              face_clear,
              detail::adaptive_clearance(
                  lin_image, [&](const Box& b) { return box_gap_signed(b, ccube); },
                  [&](const Box& b) { return interior_depth(b, ccube) > 0.0; }, cell,
                  opts.refine_depth, &nodes));
        });
        amin = std::min(amin, face_clear);
        if (!(face_clear > 0.0)) {
          fail = AlignmentWitness{"exit_linearization_not_expanding",
                                  "axis " + std::to_string(a), face_clear};
          break;
        }
      }
    }
    rep.exit_margin = amin;
    if (!fail) {
      const double det = a_exit.determinant();
      if (!(std::abs(det) > 0.0) || std::isnan(det))
        fail = AlignmentWitness{"degree_zero", "det of exit linearization", det};
    }
  }

  if (fail) {
    rep.aligned = false;
    rep.margin = 0.0;
    rep.witness = fail;
    return rep;
  }
  rep.aligned = true;
  // Convert the normalized clearance into an ambient perturbation radius.
  const double scale = sup_operator_norm(n2inv);
  rep.margin = scale > 0.0 ? min_clear / scale : min_clear;
  return rep;
}

// Component-split map over two ambient blocks, for the product theorem.
struct ComponentSplitMap {
  Index dim_a = 0, dim_b = 0;
  std::function<Vec(const Vec& a, const Vec& b)> fa;  // image in block a
  std::function<Vec(const Vec& a, const Vec& b)> fb;  // image in block b
  std::function<double(const Box&)> lip_a;  // Lipschitz of fa in its own block
  std::function<double(const Box&)> lip_b;
  double cross_lip_a = 0.0;  // sup-norm sensitivity of fa to the b block
  double cross_lip_b = 0.0;
};

// Product route: component a must be linearly correctly aligned
// uniformly over block b and vice versa. Uniformity is certified by sampling
// frozen complements on a grid and discounting the cross-Lipschitz excess.
inline AlignmentReport check_product_alignment(const Window& w1a, const Window& w1b,
                                               const Window& w2a, const Window& w2b,
                                               const ComponentSplitMap& split, int samples = 8,
                                               int complement_samples = 3) {
  if (w1a.exit_dim() != w2a.exit_dim() || w1b.exit_dim() != w2b.exit_dim())
    throw CawError("check_product_alignment: exit dimension mismatch");

  AlignmentReport out;
  out.mode = AlignMode::linear;
  double margin = std::numeric_limits<double>::infinity();

  const auto run_component = [&](const Window& w1, const Window& w2, const Window& wother,
                                 bool is_a) -> std::optional<AlignmentWitness> {
    std::optional<AlignmentWitness> failure;
    double comp_margin = std::numeric_limits<double>::infinity();
    const double cross = is_a ? split.cross_lip_a : split.cross_lip_b;
    detail::for_each_cell(wother.dim(), complement_samples, {}, [&](const Box& cell) {
      if (failure) return;
      const Vec frozen = wother.to_ambient(cell.center());
      const double frozen_rad = wother.ambient_box(cell).radius();
      FunctionMap comp(
          w1.dim(), w2.dim(),
          [&split, frozen, is_a](const Vec& x) { return is_a ? split.fa(x, frozen) : split.fb(frozen, x); },
          [&split, is_a](const Box& b) { return is_a ? split.lip_a(b) : split.lip_b(b); });
      const AlignmentReport r = check_linear_alignment(w1, w2, comp, samples);
      if (!r.aligned) {
        failure = r.witness;
        if (failure) failure->detail += is_a ? " [component a]" : " [component b]";
        return;
      }
      comp_margin = std::min(comp_margin, r.margin - cross * frozen_rad);
    });
    if (!failure && !(comp_margin > 0.0))
      failure = AlignmentWitness{"cross_coupling_exceeds_margin",
                                 is_a ? "component a" : "component b", comp_margin};
    margin = std::min(margin, comp_margin);
    return failure;
  };

  auto fail = run_component(w1a, w2a, w1b, true);
  if (!fail) fail = run_component(w1b, w2b, w1a, false);
  if (fail) {
    out.aligned = false;
    out.margin = 0.0;
    out.witness = fail;
    return out;
  }
  out.aligned = true;
  out.margin = margin;
  return out;
}

// Stability contract: any map within sup-distance `perturbation_bound` of
// the checked map keeps the windows correctly aligned; strict comparison.
inline bool alignment_margin_stability(const AlignmentReport& prior, double perturbation_bound) {
  if (!prior.aligned) throw CawError("alignment_margin_stability: no prior aligned report");
  return perturbation_bound < prior.margin;
}

inline bool alignment_margin_stability(const Window& w1, const Window& w2, const DynMap& map,
                                       double perturbation_bound,
                                       const std::optional<AlignmentReport>& prior) {
  if (!prior) throw CawError("alignment_margin_stability: no prior report");
  (void)w1;
  (void)w2;
  (void)map;
  return alignment_margin_stability(*prior, perturbation_bound);
}

}  // namespace caw
