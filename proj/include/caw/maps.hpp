#pragma once

// Map abstraction consumed by the alignment engine. A DynMap evaluates,
// exposes a Jacobian (finite differences unless overridden), and certifies
// images of boxes: image_bound(cell) returns a box guaranteed to contain the
// image of every point of the cell. The default derives it from a sup-norm
// Lipschitz constant; structured maps override with sharper enclosures.

#include <caw/core.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace caw {

class DynMap {
 public:
  virtual ~DynMap() = default;

  virtual Index domain_dim() const = 0;
  virtual Index range_dim() const = 0;
  virtual Vec eval(const Vec& x) const = 0;

  Vec operator()(const Vec& x) const { return eval(x); }

  virtual Mat jacobian(const Vec& x) const {
    const double h = 1e-6;
    Mat j(range_dim(), domain_dim());
    for (Index c = 0; c < domain_dim(); ++c) {
      Vec xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      j.col(c) = (eval(xp) - eval(xm)) / (2 * h);
    }
    return j;
  }

  // Sup-norm Lipschitz constant valid on the whole box, if available.
  virtual std::optional<double> lipschitz(const Box& domain) const { return std::nullopt; }

  // Certified enclosure of the image of `cell`.
  virtual std::optional<Box> image_bound(const Box& cell) const {
    const auto lip = lipschitz(cell);
    if (!lip) return std::nullopt;
    return Box::around(eval(cell.center()), *lip * cell.radius());
  }
};

class AffineMap final : public DynMap {
 public:
  AffineMap(Mat linear, Vec offset) : linear_(std::move(linear)), offset_(std::move(offset)) {}

  Index domain_dim() const override { return linear_.cols(); }
  Index range_dim() const override { return linear_.rows(); }
  Vec eval(const Vec& x) const override { return linear_ * x + offset_; }
  Mat jacobian(const Vec&) const override { return linear_; }
  std::optional<double> lipschitz(const Box&) const override { return sup_operator_norm(linear_); }
  std::optional<Box> image_bound(const Box& cell) const override {
    return affine_image(linear_, offset_, cell);
  }

  const Mat& linear() const { return linear_; }
  const Vec& offset() const { return offset_; }

 private:
  Mat linear_;
  Vec offset_;
};

// Callable-backed map with an optional Lipschitz bound callback.
class FunctionMap final : public DynMap {
 public:
  using Fn = std::function<Vec(const Vec&)>;
  using LipFn = std::function<double(const Box&)>;

  FunctionMap(Index dom, Index ran, Fn fn, LipFn lip = nullptr)
      : dom_(dom), ran_(ran), fn_(std::move(fn)), lip_(std::move(lip)) {}

  Index domain_dim() const override { return dom_; }
  Index range_dim() const override { return ran_; }
  Vec eval(const Vec& x) const override { return fn_(x); }
  std::optional<double> lipschitz(const Box& b) const override {
    if (!lip_) return std::nullopt;
    return lip_(b);
  }

 private:
  Index dom_, ran_;
  Fn fn_;
  LipFn lip_;
};

// Composition g after f with multiplied Lipschitz bounds and chained box
// enclosures when both stages certify them.
class ComposedMap final : public DynMap {
 public:
  ComposedMap(std::shared_ptr<const DynMap> f, std::shared_ptr<const DynMap> g)
      : f_(std::move(f)), g_(std::move(g)) {}

  Index domain_dim() const override { return f_->domain_dim(); }
  Index range_dim() const override { return g_->range_dim(); }
  Vec eval(const Vec& x) const override { return g_->eval(f_->eval(x)); }
  Mat jacobian(const Vec& x) const override {
    return g_->jacobian(f_->eval(x)) * f_->jacobian(x);
  }
  std::optional<double> lipschitz(const Box& b) const override {
    const auto lf = f_->lipschitz(b);
    if (!lf) return std::nullopt;
    const auto fb = f_->image_bound(b);
    if (!fb) return std::nullopt;
    const auto lg = g_->lipschitz(*fb);
    if (!lg) return std::nullopt;
    return *lf * *lg;
  }
  std::optional<Box> image_bound(const Box& cell) const override {
    const auto fb = f_->image_bound(cell);
    if (!fb) return std::nullopt;
    return g_->image_bound(*fb);
  }

 private:
  std::shared_ptr<const DynMap> f_, g_;
};

// Builtin map registry for the CLI: "name:param,param,...".
//   affine:<m.. row-major>;<offset..> for square dims inferred from counts
//   scale1d:a         x -> a x
//   affine1d:a,b      x -> a x + b
//   shift:<v..>       x -> x + v
inline std::shared_ptr<DynMap> parse_builtin_map(const std::string& text) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  std::vector<double> ps;
  if (colon != std::string::npos) {
    std::stringstream ss(text.substr(colon + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      if (!tok.empty()) ps.push_back(std::stod(tok));
    }
  }
  if (name == "scale1d") {
    if (ps.size() != 1) throw CawError("scale1d expects 1 parameter");
    return std::make_shared<AffineMap>(Mat::Constant(1, 1, ps[0]), Vec::Zero(1));
  }
  if (name == "affine1d") {
    if (ps.size() != 2) throw CawError("affine1d expects 2 parameters");
    return std::make_shared<AffineMap>(Mat::Constant(1, 1, ps[0]), Vec::Constant(1, ps[1]));
  }
  if (name == "shift") {
    Vec v(static_cast<Index>(ps.size()));
    for (std::size_t i = 0; i < ps.size(); ++i) v[static_cast<Index>(i)] = ps[i];
    return std::make_shared<AffineMap>(Mat::Identity(v.size(), v.size()), v);
  }
  if (name == "affine") {
    // d*d linear entries followed by d offset entries: d from the quadratic.
    const double n = static_cast<double>(ps.size());
    const Index d = static_cast<Index>(std::floor((std::sqrt(1.0 + 4.0 * n) - 1.0) / 2.0));
    if (static_cast<double>(d * d + d) != n) throw CawError("affine expects d*d+d parameters");
    Mat l(d, d);
    for (Index r = 0; r < d; ++r)
      for (Index c = 0; c < d; ++c) l(r, c) = ps[static_cast<std::size_t>(r * d + c)];
    Vec o(d);
    for (Index i = 0; i < d; ++i) o[i] = ps[static_cast<std::size_t>(d * d + i)];
    return std::make_shared<AffineMap>(std::move(l), std::move(o));
  }
  throw CawError("unknown builtin map: " + name);
}

}  // namespace caw
