#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>

#include "cptrl/errors.hpp"

namespace cptrl {

// A utility curve U with a reference point x0 separating perceived gains from
// losses. The two half-curves
//
//   gain(x) = U(x)  for x >= x0   (0 otherwise)
//   loss(x) = -U(x) for x <= x0   (0 otherwise)
//
// are both non-negative because U is non-decreasing with U(x0) = 0; the
// constructor probes a dense grid to enforce exactly that, so downstream code
// can rely on the decomposition U(x) = gain(x) - loss(x).
class Utility {
 public:
  enum class Kind { identity, kahneman_tversky, exponential, sqrt_shift, custom };

  // U(x) = x - x0.
  static Utility identity(double reference_point = 0.0) {
    Utility u;
    u.kind_ = Kind::identity;
    u.ref_ = reference_point;
    u.validate();
    return u;
  }

  // S-shaped power curve: (x-x0)^alpha above the reference, -lambda*(x0-x)^alpha
  // below it. lambda > 1 makes losses loom larger than gains.
  static Utility kahneman_tversky(double lambda = 2.25, double alpha = 0.88,
                                  double reference_point = 0.0) {
    if (!(lambda > 0.0)) throw ValidationError("utility: lambda must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw ValidationError("utility: alpha must be in (0, 1]");
    Utility u;
    u.kind_ = Kind::kahneman_tversky;
    u.ref_ = reference_point;
    u.p1_ = lambda;
    u.p2_ = alpha;
    u.validate();
    return u;
  }

  // U(x) = a + b*exp(c*x); requires b*c >= 0 (monotone non-decreasing) and
  // U(reference_point) = 0.
  static Utility exponential(double a, double b, double c, double reference_point) {
    Utility u;
    u.kind_ = Kind::exponential;
    u.ref_ = reference_point;
    u.p1_ = a;
    u.p2_ = b;
    u.p3_ = c;
    if (b * c < 0.0)
      throw ValidationError("utility: exponential with b*c < 0 is decreasing");
    u.validate();
    return u;
  }

  // U(x) = sqrt(x + offset) on [-offset, inf); the reference point is forced
  // to -offset (the zero of the curve), so there is no loss part.
  static Utility sqrt_shift(double offset) {
    Utility u;
    u.kind_ = Kind::sqrt_shift;
    u.ref_ = -offset;
    u.p1_ = offset;
    u.domain_min_ = -offset;
    u.validate();
    return u;
  }

  // Arbitrary closed form, identified by a tag for serialization. The caller
  // is responsible for the curve actually being non-decreasing with a zero at
  // the reference point; the constructor probes this like any other kind.
  static Utility custom(std::string tag, std::function<double(double)> fn,
                        double reference_point,
                        double domain_min = -std::numeric_limits<double>::infinity()) {
    Utility u;
    u.kind_ = Kind::custom;
    u.ref_ = reference_point;
    u.tag_ = std::move(tag);
    u.fn_ = std::move(fn);
    u.domain_min_ = domain_min;
    u.validate();
    return u;
  }

  double operator()(double x) const {
    switch (kind_) {
      case Kind::identity:
        return x - ref_;
      case Kind::kahneman_tversky:
        return x >= ref_ ? std::pow(x - ref_, p2_)
                         : -p1_ * std::pow(ref_ - x, p2_);
      case Kind::exponential:
        return p1_ + p2_ * std::exp(p3_ * x);
      case Kind::sqrt_shift:
        if (x < domain_min_ - 1e-12)
          throw ArgumentError("utility: outcome below sqrt domain");
        return std::sqrt(std::max(0.0, x + p1_));
      case Kind::custom:
        if (x < domain_min_ - 1e-12)
          throw ArgumentError("utility: outcome below declared domain");
        return fn_(x);
    }
    return 0.0;
  }

  double gain(double x) const {
    return x >= ref_ ? std::max(0.0, (*this)(x)) : 0.0;
  }

  double loss(double x) const {
    return x <= ref_ ? std::max(0.0, -(*this)(x)) : 0.0;
  }

  Kind kind() const { return kind_; }
  double reference_point() const { return ref_; }
  double domain_min() const { return domain_min_; }
  bool is_identity() const { return kind_ == Kind::identity; }

  // Parameter accessors (meaning depends on kind).
  double lambda() const { return p1_; }
  double alpha() const { return p2_; }
  double coef_a() const { return p1_; }
  double coef_b() const { return p2_; }
  double coef_c() const { return p3_; }
  double offset() const { return p1_; }
  const std::string& tag() const { return tag_; }

 private:
  Utility() = default;

  void validate() const {
    constexpr int kProbes = 1001;
    constexpr double kTol = 1e-9;
    double lo = std::max(domain_min_, ref_ - 100.0);
    double hi = ref_ + 100.0;
    double prev = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < kProbes; ++i) {
      double x = lo + (hi - lo) * static_cast<double>(i) / (kProbes - 1);
      double v = (*this)(x);
      if (!std::isfinite(v)) throw ValidationError("utility: non-finite value on probe grid");
      if (v < prev - kTol) throw ValidationError("utility: not non-decreasing");
      prev = v;
    }
    if (std::abs((*this)(ref_)) > kTol)
      throw ValidationError("utility: curve does not vanish at the reference point");
  }

  Kind kind_ = Kind::identity;
  double ref_ = 0.0;
  double p1_ = 0.0, p2_ = 0.0, p3_ = 0.0;
  double domain_min_ = -std::numeric_limits<double>::infinity();
  std::string tag_;
  std::function<double(double)> fn_;
};

}  // namespace cptrl
