#pragma once

// Windows: products of axis-aligned rectangles with designated exit/entry
// direction blocks, placed into ambient coordinates by an affine chart.
// Normalized coordinates are [0,1]^m with the exit axes first; the exit set
// is the image of d[0,1]^m1 x [0,1]^m2 and the entry set the image of
// [0,1]^m1 x d[0,1]^m2.

#include <caw/core.hpp>

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace caw {

enum class Axis { s, u, q, p, theta, xi };

inline std::string axis_name(Axis a) {
  switch (a) {
    case Axis::s: return "s";
    case Axis::u: return "u";
    case Axis::q: return "q";
    case Axis::p: return "p";
    case Axis::theta: return "theta";
    case Axis::xi: return "xi";
  }
  return "?";
}

inline Axis axis_from_name(const std::string& n) {
  if (n == "s") return Axis::s;
  if (n == "u") return Axis::u;
  if (n == "q") return Axis::q;
  if (n == "p") return Axis::p;
  if (n == "theta") return Axis::theta;
  if (n == "xi") return Axis::xi;
  throw CawError("unknown axis label: " + n);
}

struct Rectangle {
  Vec lower;  // per-axis lower corner
  Vec edge;   // per-axis edge length, strictly positive

  Rectangle() = default;
  Rectangle(Vec lo, Vec ed) : lower(std::move(lo)), edge(std::move(ed)) {
    if (lower.size() != edge.size()) throw CawError("rectangle: lower/edge dimension mismatch");
    for (Index i = 0; i < edge.size(); ++i)
      if (!(edge[i] > 0.0) || !std::isfinite(edge[i]) || !std::isfinite(lower[i]))
        throw CawError("degenerate rectangle");
  }

  static Rectangle unit(Index d) { return Rectangle(Vec::Zero(d), Vec::Ones(d)); }
  // Cube centered at c with edge length `size` on every axis.
  static Rectangle centered(const Vec& c, double size) {
    return Rectangle(c.array() - 0.5 * size, Vec::Constant(c.size(), size));
  }

  Index dim() const { return lower.size(); }
  Vec denormalize(const Vec& x) const { return lower.array() + edge.array() * x.array(); }
  Vec normalize(const Vec& y) const { return (y - lower).array() / edge.array(); }
};

struct AffineChart {
  Mat linear;
  Vec offset;

  AffineChart() = default;
  AffineChart(Mat l, Vec o) : linear(std::move(l)), offset(std::move(o)) {
    if (linear.rows() != linear.cols() || linear.rows() != offset.size())
      throw CawError("chart: shape mismatch");
    lu_ = Eigen::PartialPivLU<Mat>(linear);
    // Invertibility gate: round-trip on the unit-cube corners (all of them up
    // to dimension 8, axis corners beyond that).
    const Index d = dim();
    if (std::abs(lu_.determinant()) == 0.0) throw CawError("non-invertible chart");
    const Index ncorner = d <= 8 ? (Index(1) << d) : 2 * d;
    for (Index c = 0; c < ncorner; ++c) {
      Vec x(d);
      if (d <= 8) {
        for (Index i = 0; i < d; ++i) x[i] = (c >> i) & 1 ? 1.0 : 0.0;
      } else {
        x.setZero();
        x[c % d] = c < d ? 1.0 : 0.0;
      }
      if (sup_norm(inverse(apply(x)) - x) > kChartCheckTol)
        throw CawError("non-invertible chart (round-trip check failed)");
    }
  }

  static AffineChart identity(Index d) { return AffineChart(Mat::Identity(d, d), Vec::Zero(d)); }

  Index dim() const { return offset.size(); }
  Vec apply(const Vec& x) const { return linear * x + offset; }
  Vec inverse(const Vec& y) const { return lu_.solve(y - offset); }
  Mat inverse_linear() const { return lu_.solve(Mat::Identity(dim(), dim())); }

 private:
  Eigen::PartialPivLU<Mat> lu_;
};

enum class Membership { interior, entry, exit, outside };

inline std::string membership_name(Membership m) {
  switch (m) {
    case Membership::interior: return "interior";
    case Membership::entry: return "entry";
    case Membership::exit: return "exit";
    case Membership::outside: return "outside";
  }
  return "?";
}

class Window {
 public:
  Window() = default;
  Window(Rectangle exit_block, Rectangle entry_block, AffineChart chart,
         std::vector<Axis> axis_labels)
      : exit_(std::move(exit_block)),
        entry_(std::move(entry_block)),
        chart_(std::move(chart)),
        labels_(std::move(axis_labels)) {
    if (chart_.dim() != exit_.dim() + entry_.dim())
      throw CawError("window: chart dimension mismatch");
    if (!labels_.empty() && static_cast<Index>(labels_.size()) != chart_.dim())
      throw CawError("window: axis label count mismatch");
  }

  Index exit_dim() const { return exit_.dim(); }
  Index entry_dim() const { return entry_.dim(); }
  Index dim() const { return chart_.dim(); }

  const Rectangle& exit_block() const { return exit_; }
  const Rectangle& entry_block() const { return entry_; }
  const AffineChart& chart() const { return chart_; }
  const std::vector<Axis>& axis_labels() const { return labels_; }

  // Normalized cube [0,1]^m (exit axes first) -> block coordinates -> ambient.
  Vec to_ambient(const Vec& x) const {
    Vec block(dim());
    block.head(exit_dim()) = exit_.denormalize(x.head(exit_dim()));
    block.tail(entry_dim()) = entry_.denormalize(x.tail(entry_dim()));
    return chart_.apply(block);
  }
  Vec to_normalized(const Vec& y) const {
    const Vec block = chart_.inverse(y);
    Vec x(dim());
    x.head(exit_dim()) = exit_.normalize(block.head(exit_dim()));
    x.tail(entry_dim()) = entry_.normalize(block.tail(entry_dim()));
    return x;
  }

  Vec center() const { return to_ambient(Vec::Constant(dim(), 0.5)); }

  // Combined linear part of normalized -> ambient and its sup operator norms.
  Mat normalized_linear() const {
    Mat r = chart_.linear;
    Vec edges(dim());
    edges.head(exit_dim()) = exit_.edge;
    edges.tail(entry_dim()) = entry_.edge;
    return r * edges.asDiagonal();
  }
  Mat normalized_linear_inverse() const {
    Vec edges(dim());
    edges.head(exit_dim()) = exit_.edge;
    edges.tail(entry_dim()) = entry_.edge;
    return edges.cwiseInverse().asDiagonal() * chart_.inverse_linear();
  }

  // Exact ambient enclosure of the normalized box `cell`.
  Box ambient_box(const Box& cell) const {
    Vec lo(dim()), hi(dim());
    lo.head(exit_dim()) = exit_.denormalize(cell.lo.head(exit_dim()));
    hi.head(exit_dim()) = exit_.denormalize(cell.hi.head(exit_dim()));
    lo.tail(entry_dim()) = entry_.denormalize(cell.lo.tail(entry_dim()));
    hi.tail(entry_dim()) = entry_.denormalize(cell.hi.tail(entry_dim()));
    return affine_image(chart_.linear, chart_.offset, Box{lo, hi});
  }

 private:
  Rectangle exit_, entry_;
  AffineChart chart_;
  std::vector<Axis> labels_;
};

inline Window make_window(Rectangle exit_block, Rectangle entry_block, AffineChart chart,
                          std::vector<Axis> axis_labels) {
  return Window(std::move(exit_block), std::move(entry_block), std::move(chart),
                std::move(axis_labels));
}

// Classification of an ambient point against the window in normalized
// coordinates. A point on both an exit face and an entry face reports exit.
inline Membership membership(const Window& w, const Vec& x, double tol = kBoundaryTol) {
  if (x.size() != w.dim()) throw CawError("membership: point dimension mismatch");
  const Vec n = w.to_normalized(x);
  for (Index i = 0; i < w.dim(); ++i)
    if (n[i] < -tol || n[i] > 1.0 + tol) return Membership::outside;
  for (Index i = 0; i < w.exit_dim(); ++i)
    if (std::abs(n[i]) <= tol || std::abs(n[i] - 1.0) <= tol) return Membership::exit;
  for (Index i = w.exit_dim(); i < w.dim(); ++i)
    if (std::abs(n[i]) <= tol || std::abs(n[i] - 1.0) <= tol) return Membership::entry;
  return Membership::interior;
}

// Product window W1 x W2 on the concatenated ambient space, exit set
// (W1^- x W2) u (W1 x W2^-), entry set (W1^+ x W2) u (W1 x W2^+).
// Optional spans place each factor's ambient axes inside the product space;
// they must be disjoint and cover 0..d1+d2-1.
inline Window product_window(const Window& w1, const Window& w2,
                             const std::vector<Index>& span1 = {},
                             const std::vector<Index>& span2 = {}) {
  const Index d1 = w1.dim(), d2 = w2.dim(), d = d1 + d2;
  std::vector<Index> s1 = span1, s2 = span2;
  if (s1.empty() && s2.empty()) {
    for (Index i = 0; i < d1; ++i) s1.push_back(i);
    for (Index i = 0; i < d2; ++i) s2.push_back(d1 + i);
  }
  if (static_cast<Index>(s1.size()) != d1 || static_cast<Index>(s2.size()) != d2)
    throw CawError("product_window: span sizes must match window dimensions");
  std::vector<bool> used(d, false);
  for (Index a : s1) {
    if (a < 0 || a >= d || used[a]) throw CawError("product_window: overlapping coordinate blocks");
    used[a] = true;
  }
  for (Index a : s2) {
    if (a < 0 || a >= d || used[a]) throw CawError("product_window: overlapping coordinate blocks");
    used[a] = true;
  }

  const Index m1 = w1.exit_dim() + w2.exit_dim();
  const Index m2 = w1.entry_dim() + w2.entry_dim();
  Vec exit_lo(m1), exit_ed(m1), entry_lo(m2), entry_ed(m2);
  exit_lo << w1.exit_block().lower, w2.exit_block().lower;
  exit_ed << w1.exit_block().edge, w2.exit_block().edge;
  entry_lo << w1.entry_block().lower, w2.entry_block().lower;
  entry_ed << w1.entry_block().edge, w2.entry_block().edge;

  // Block order of the product: (exit1, exit2, entry1, entry2). Scatter each
  // factor chart's rows into its ambient span and pick columns accordingly.
  Mat linear = Mat::Zero(d, d);
  Vec offset = Vec::Zero(d);
  const auto scatter = [&](const Window& w, const std::vector<Index>& span, Index exit_at,
                           Index entry_at) {
    const Mat& l = w.chart().linear;
    for (Index r = 0; r < w.dim(); ++r) {
      for (Index c = 0; c < w.exit_dim(); ++c) linear(span[r], exit_at + c) = l(r, c);
      for (Index c = 0; c < w.entry_dim(); ++c)
        linear(span[r], entry_at + c) = l(r, w.exit_dim() + c);
      offset[span[r]] = w.chart().offset[r];
    }
  };
  scatter(w1, s1, 0, m1);
  scatter(w2, s2, w1.exit_dim(), m1 + w1.entry_dim());

  std::vector<Axis> labels;
  const auto& l1 = w1.axis_labels();
  const auto& l2 = w2.axis_labels();
  if (!l1.empty() && !l2.empty()) {
    for (Index i = 0; i < w1.exit_dim(); ++i) labels.push_back(l1[i]);
    for (Index i = 0; i < w2.exit_dim(); ++i) labels.push_back(l2[i]);
    for (Index i = 0; i < w1.entry_dim(); ++i) labels.push_back(l1[w1.exit_dim() + i]);
    for (Index i = 0; i < w2.entry_dim(); ++i) labels.push_back(l2[w2.exit_dim() + i]);
  }

  return Window(Rectangle(exit_lo, exit_ed), Rectangle(entry_lo, entry_ed),
                AffineChart(std::move(linear), std::move(offset)), std::move(labels));
}

inline nlohmann::json to_json(const Window& w) {
  nlohmann::json j;
  j["exit_lower"] = std::vector<double>(w.exit_block().lower.begin(), w.exit_block().lower.end());
  j["exit_edge"] = std::vector<double>(w.exit_block().edge.begin(), w.exit_block().edge.end());
  j["entry_lower"] =
      std::vector<double>(w.entry_block().lower.begin(), w.entry_block().lower.end());
  j["entry_edge"] = std::vector<double>(w.entry_block().edge.begin(), w.entry_block().edge.end());
  std::vector<double> lin;
  const Mat& l = w.chart().linear;
  for (Index r = 0; r < l.rows(); ++r)
    for (Index c = 0; c < l.cols(); ++c) lin.push_back(l(r, c));  // row-major
  j["chart_linear"] = lin;
  j["chart_offset"] = std::vector<double>(w.chart().offset.begin(), w.chart().offset.end());
  std::vector<std::string> labels;
  for (Axis a : w.axis_labels()) labels.push_back(axis_name(a));
  j["axis_labels"] = labels;
  return j;
}

inline Window window_from_json(const nlohmann::json& j) {
  const auto vec = [](const nlohmann::json& a) {
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<double>();
    return v;
  };
  const Vec exit_lo = vec(j.at("exit_lower")), exit_ed = vec(j.at("exit_edge"));
  const Vec entry_lo = vec(j.at("entry_lower")), entry_ed = vec(j.at("entry_edge"));
  const Index d = exit_lo.size() + entry_lo.size();
  const auto& lin = j.at("chart_linear");
  if (static_cast<Index>(lin.size()) != d * d) throw CawError("window json: bad chart_linear size");
  Mat l(d, d);
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c < d; ++c) l(r, c) = lin[static_cast<std::size_t>(r * d + c)].get<double>();
  std::vector<Axis> labels;
  if (j.contains("axis_labels"))
    for (const auto& s : j.at("axis_labels")) labels.push_back(axis_from_name(s.get<std::string>()));
  return Window(Rectangle(exit_lo, exit_ed), Rectangle(entry_lo, entry_ed),
                AffineChart(std::move(l), vec(j.at("chart_offset"))), std::move(labels));
}

}  // namespace caw
