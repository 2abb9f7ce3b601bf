#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cptrl/errors.hpp"

namespace cptrl {

// Probability distortion w : [0,1] -> [0,1], non-decreasing with w(0)=0 and
// w(1)=1 (the dedicated `zero` kind, used to switch a loss side off entirely,
// is the one sanctioned exception). Derivatives use the right-derivative
// convention at piecewise breakpoints; at p=1 the last piece's slope is
// returned. For the S-shaped smooth kinds the slope diverges at both
// endpoints, and `derivative` honestly returns +inf there.
class Weight {
 public:
  enum class Kind { identity, kahneman_tversky, prelec, piecewise_affine, zero, complement };

  struct Piecewise {
    std::vector<double> breakpoints;  // q_0 = 0 < ... < q_{k-1} = 1
    std::vector<double> slopes;       // one per piece [q_i, q_{i+1})
    std::vector<double> intercepts;
  };

  static Weight identity() {
    Weight w;
    w.kind_ = Kind::identity;
    return w;
  }

  static Weight zero() {
    Weight w;
    w.kind_ = Kind::zero;
    return w;
  }

  // w(p) = p^eta * (p^eta + (1-p)^eta)^(-1/eta); inverse-S shaped for
  // moderate eta. Small eta makes the curve non-monotone and is rejected by
  // the construction-time grid check.
  static Weight kahneman_tversky(double eta) {
    if (!(eta > 0.0 && eta < 1.0))
      throw ValidationError("weight: eta must be in (0, 1)");
    Weight w;
    w.kind_ = Kind::kahneman_tversky;
    w.eta_ = eta;
    w.validate();
    return w;
  }

  // w(p) = exp(-(-ln p)^eta).
  static Weight prelec(double eta) {
    if (!(eta > 0.0 && eta < 1.0))
      throw ValidationError("weight: eta must be in (0, 1)");
    Weight w;
    w.kind_ = Kind::prelec;
    w.eta_ = eta;
    w.validate();
    return w;
  }

  // Piecewise-affine distortion given breakpoints and per-piece slopes;
  // intercepts follow from w(0)=0 and continuity, and the slopes must
  // integrate to w(1)=1.
  static Weight piecewise_affine(std::vector<double> breakpoints,
                                 std::vector<double> slopes) {
    std::vector<double> intercepts(slopes.size(), 0.0);
    for (std::size_t i = 0; i + 1 < slopes.size(); ++i) {
      double q = breakpoints.at(i + 1);
      intercepts[i + 1] = (slopes[i] - slopes[i + 1]) * q + intercepts[i];
    }
    return piecewise_affine(std::move(breakpoints), std::move(slopes),
                            std::move(intercepts));
  }

  static Weight piecewise_affine(std::vector<double> breakpoints,
                                 std::vector<double> slopes,
                                 std::vector<double> intercepts) {
    Weight w;
    w.kind_ = Kind::piecewise_affine;
    w.pw_ = Piecewise{std::move(breakpoints), std::move(slopes),
                      std::move(intercepts)};
    w.validate();
    return w;
  }

  // Named presets: two-piece distortions used as ready-made risk attitudes.
  //   w_ra  mildly risk-averse     0.5x   below 0.9, then 5.5x - 4.5
  //   w_rs  mildly risk-seeking    5x     below 0.1, then (5/9)x + 4/9
  //   w_sra strongly risk-averse   0.1x   below 0.9, then 9.1x - 8.1
  //   w_srs strongly risk-seeking  9x     below 0.1, then x/9 + 8/9
  static Weight preset(const std::string& name) {
    Weight w;
    if (name == "w_ra") {
      w = piecewise_affine({0.0, 0.9, 1.0}, {0.5, 5.5});
    } else if (name == "w_rs") {
      w = piecewise_affine({0.0, 0.1, 1.0}, {5.0, 5.0 / 9.0});
    } else if (name == "w_sra") {
      w = piecewise_affine({0.0, 0.9, 1.0}, {0.1, 9.1});
    } else if (name == "w_srs") {
      w = piecewise_affine({0.0, 0.1, 1.0}, {9.0, 1.0 / 9.0});
    } else {
      throw ValidationError("weight: unknown preset '" + name + "'");
    }
    w.preset_ = name;
    return w;
  }

  // The conjugate distortion g~(p) = 1 - g(1-p). Affine inner weights are
  // reflected into an explicit piecewise form (keeping evaluation and the
  // right-derivative convention cheap); smooth kinds are wrapped.
  static Weight complement(const Weight& inner) {
    Weight w;
    w.kind_ = Kind::complement;
    w.inner_ = std::make_shared<Weight>(inner);
    if (auto p = inner.affine_form(); p && !inner.is_zero()) {
      Piecewise r;
      const auto& q = p->breakpoints;
      const auto& b = p->slopes;
      const auto& d = p->intercepts;
      std::size_t k = q.size();
      r.breakpoints.resize(k);
      r.slopes.resize(k - 1);
      r.intercepts.resize(k - 1);
      for (std::size_t i = 0; i < k; ++i) r.breakpoints[i] = 1.0 - q[k - 1 - i];
      for (std::size_t i = 0; i + 1 < k; ++i) {
        std::size_t j = k - 2 - i;  // source piece
        r.slopes[i] = b[j];
        r.intercepts[i] = 1.0 - b[j] - d[j];
      }
      w.pw_ = std::move(r);
    }
    w.validate();
    return w;
  }

  // The distortion whose value-at-risk tail average this induces:
  // g(p) = min(p / (1 - level), 1), a two-piece affine curve.
  static Weight cvar_distortion(double level) {
    if (!(level >= 0.0 && level < 1.0))
      throw ValidationError("weight: cvar level must be in [0, 1)");
    return piecewise_affine({0.0, 1.0 - level, 1.0}, {1.0 / (1.0 - level), 0.0});
  }

  double operator()(double p) const {
    switch (kind_) {
      case Kind::identity:
        return p;
      case Kind::zero:
        return 0.0;
      case Kind::kahneman_tversky: {
        if (p <= 0.0) return 0.0;
        if (p >= 1.0) return 1.0;
        double s = std::pow(p, eta_) + std::pow(1.0 - p, eta_);
        return std::pow(p, eta_) * std::pow(s, -1.0 / eta_);
      }
      case Kind::prelec:
        if (p <= 0.0) return 0.0;
        if (p >= 1.0) return 1.0;
        return std::exp(-std::pow(-std::log(p), eta_));
      case Kind::piecewise_affine: {
        const auto& pw = *pw_;
        std::size_t i = piece_index(pw, p);
        return pw.slopes[i] * p + pw.intercepts[i];
      }
      case Kind::complement:
        if (pw_) {
          std::size_t i = piece_index(*pw_, p);
          return pw_->slopes[i] * p + pw_->intercepts[i];
        }
        return 1.0 - (*inner_)(1.0 - p);
    }
    return 0.0;
  }

  double derivative(double p) const {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    switch (kind_) {
      case Kind::identity:
        return 1.0;
      case Kind::zero:
        return 0.0;
      case Kind::kahneman_tversky: {
        if (p <= 0.0 || p >= 1.0) return kInf;
        double pe = std::pow(p, eta_);
        double qe = std::pow(1.0 - p, eta_);
        double s = pe + qe;
        return eta_ * std::pow(p, eta_ - 1.0) * std::pow(s, -1.0 / eta_) -
               pe * std::pow(s, -1.0 / eta_ - 1.0) *
                   (std::pow(p, eta_ - 1.0) - std::pow(1.0 - p, eta_ - 1.0));
      }
      case Kind::prelec:
        if (p <= 0.0 || p >= 1.0) return kInf;
        return (*this)(p)*eta_ * std::pow(-std::log(p), eta_ - 1.0) / p;
      case Kind::piecewise_affine:
        return pw_->slopes[piece_index(*pw_, p)];
      case Kind::complement:
        if (pw_) return pw_->slopes[piece_index(*pw_, p)];
        return inner_->derivative(1.0 - p);
    }
    return 0.0;
  }

  Kind kind() const { return kind_; }
  double eta() const { return eta_; }
  bool is_identity() const { return kind_ == Kind::identity; }
  bool is_zero() const { return kind_ == Kind::zero; }
  const std::string& preset_name() const { return preset_; }
  const Weight* inner() const { return inner_.get(); }

  // Explicit piecewise-affine representation when one exists (identity and
  // zero included); nullopt for the smooth kinds.
  std::optional<Piecewise> affine_form() const {
    switch (kind_) {
      case Kind::identity:
        return Piecewise{{0.0, 1.0}, {1.0}, {0.0}};
      case Kind::zero:
        return Piecewise{{0.0, 1.0}, {0.0}, {0.0}};
      case Kind::piecewise_affine:
        return *pw_;
      case Kind::complement:
        if (pw_) return *pw_;
        return std::nullopt;
      default:
        return std::nullopt;
    }
  }

 private:
  Weight() = default;

  static std::size_t piece_index(const Piecewise& pw, double p) {
    const auto& q = pw.breakpoints;
    auto it = std::upper_bound(q.begin(), q.end(), p);
    std::size_t i = static_cast<std::size_t>(it - q.begin());
    if (i == 0) return 0;                          // p <= 0
    return std::min(i - 1, pw.slopes.size() - 1);  // p = 1 -> last piece
  }

  void validate() const {
    constexpr double kTol = 1e-9;
    if (kind_ == Kind::piecewise_affine || (kind_ == Kind::complement && pw_)) {
      const auto& pw = *pw_;
      const auto& q = pw.breakpoints;
      if (q.size() < 2 || pw.slopes.size() != q.size() - 1 ||
          pw.intercepts.size() != q.size() - 1)
        throw ValidationError("weight: inconsistent piecewise arrays");
      if (std::abs(q.front()) > 0.0 || std::abs(q.back() - 1.0) > 0.0)
        throw ValidationError("weight: breakpoints must start at 0 and end at 1");
      for (std::size_t i = 0; i + 1 < q.size(); ++i)
        if (!(q[i] < q[i + 1]))
          throw ValidationError("weight: breakpoints must be strictly increasing");
      for (double b : pw.slopes)
        if (b < 0.0) throw ValidationError("weight: negative slope");
      if (std::abs(pw.intercepts[0]) > kTol)
        throw ValidationError("weight: w(0) must be 0");
      for (std::size_t i = 0; i + 1 < pw.slopes.size(); ++i) {
        double at = q[i + 1];
        double left = pw.slopes[i] * at + pw.intercepts[i];
        double right = pw.slopes[i + 1] * at + pw.intercepts[i + 1];
        if (std::abs(left - right) > kTol)
          throw ValidationError("weight: discontinuity at breakpoint");
      }
      if (std::abs(pw.slopes.back() + pw.intercepts.back() - 1.0) > kTol)
        throw ValidationError("weight: w(1) must be 1");
      return;
    }
    if (kind_ == Kind::zero) return;
    constexpr int kProbes = 1001;
    double prev = -kTol;
    for (int i = 0; i < kProbes; ++i) {
      double p = static_cast<double>(i) / (kProbes - 1);
      double v = (*this)(p);
      if (!std::isfinite(v)) throw ValidationError("weight: non-finite value");
      if (v < prev - kTol) throw ValidationError("weight: not non-decreasing");
      prev = v;
    }
    if (std::abs((*this)(0.0)) > kTol || std::abs((*this)(1.0) - 1.0) > kTol)
      throw ValidationError("weight: endpoints must map 0 to 0 and 1 to 1");
  }

  Kind kind_ = Kind::identity;
  double eta_ = 0.0;
  std::optional<Piecewise> pw_;
  std::shared_ptr<const Weight> inner_;
  std::string preset_;
};

// Slope of the distortion at p (right-derivative at breakpoints).
inline double eval_weight_derivative(const Weight& w, double p) {
  return w.derivative(p);
}

}  // namespace cptrl
