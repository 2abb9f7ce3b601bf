#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "cptrl/cpt.hpp"
#include "cptrl/errors.hpp"
#include "cptrl/utility.hpp"
#include "cptrl/weight.hpp"

namespace cptrl {

// ---------------------------------------------------------------------------
// The per-trajectory weight of the distorted policy gradient:
//
//   phi(v) = int_0^{gain(v)} w+'(P(gain(X) > z)) dz
//          - int_0^{loss(v)} w-'(P(loss(X) > z)) dz
//
// With identity weights both derivatives are 1, the integrals collapse to
// gain(v) - loss(v) = U(v), and the estimator reduces to the classic
// score-function gradient. The two parts are kept separate because each is
// non-negative on its own.
// ---------------------------------------------------------------------------

struct PhiValue {
  double gains_part = 0.0;
  double losses_part = 0.0;

  double value() const { return gains_part - losses_part; }
};

// Exact evaluation on a discrete law. The tail z -> P(Y > z) is a step
// function, so each integral is a finite sum of w'(tail) * segment terms.
// With smooth weights whose derivative blows up at 0, the gains part is
// +infinity for v strictly above the law's support; callers that need
// finite values should stay on the support.
inline PhiValue phi_exact_discrete(double v, const DiscreteDist& law,
                                   const CptSpec& spec) {
  PhiValue out;
  double up = spec.utility.gain(v);
  double lo = spec.utility.loss(v);
  if (!spec.w_plus.is_zero() && up > 0.0) {
    std::vector<std::pair<double, double>> gains;
    gains.reserve(law.atoms().size());
    for (const auto& [x, p] : law.atoms())
      gains.emplace_back(spec.utility.gain(x), p);
    out.gains_part = detail::step_tail_integral(
        std::move(gains), up,
        [&](double t) { return spec.w_plus.derivative(t); });
  }
  if (!spec.w_minus.is_zero() && lo > 0.0) {
    std::vector<std::pair<double, double>> losses;
    losses.reserve(law.atoms().size());
    for (const auto& [x, p] : law.atoms())
      losses.emplace_back(spec.utility.loss(x), p);
    out.losses_part = detail::step_tail_integral(
        std::move(losses), lo,
        [&](double t) { return spec.w_minus.derivative(t); });
  }
  return out;
}

// Sample mean of U(X) - a clamped to [0, b - a]: the building block that
// turns an affine-derivative distortion integral over [a, b] into a plain
// expectation.
inline double clamped_expectation(const std::vector<double>& samples, double a,
                                  double b, const Utility& utility) {
  if (!(a < b)) throw ArgumentError("clamped expectation: need a < b");
  if (samples.empty()) throw ArgumentError("clamped expectation: empty sample");
  double acc = 0.0;
  for (double x : samples)
    acc += std::min(std::max(utility(x) - a, 0.0), b - a);
  return acc / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Quantile-based estimator. A batch of returns induces an empirical law; the
// integral is evaluated exactly on that law, except that the tail argument
// fed to w' is kept inside [1/n, (n-1)/n] so weights with unbounded endpoint
// slopes still produce finite estimates (and v beyond the sample extremes
// extrapolates with the edge slope instead of w'(0)).
// ---------------------------------------------------------------------------

class QuantileTable {
 public:
  QuantileTable(const std::vector<double>& batch_returns, const CptSpec& spec)
      : utility_(spec.utility) {
    n_ = static_cast<int>(batch_returns.size());
    if (n_ < 2) throw ArgumentError("quantile table: need a batch of size >= 2");
    build_side(gain_, batch_returns, spec.w_plus, /*gains=*/true);
    build_side(loss_, batch_returns, spec.w_minus, /*gains=*/false);
  }

  int n() const { return n_; }
  const std::vector<double>& gains() const { return gain_.xi; }
  const std::vector<double>& losses() const { return loss_.xi; }

  PhiValue phi(double v) const {
    return {side_integral(gain_, utility_.gain(v)),
            side_integral(loss_, utility_.loss(v))};
  }

 private:
  struct Side {
    bool zero = false;      // distortion is identically zero
    bool identity = false;  // w' == 1: integral telescopes to the upper limit
    std::vector<double> xi;   // sorted transformed sample, ascending
    std::vector<double> wq;   // wq[m] = w'(clamped (n-m)/n), m = 0..n
    std::vector<double> cum;  // cum[m] = sum_{j<=m} wq[j]*(xi[j]-xi[j-1])
  };

  void build_side(Side& side, const std::vector<double>& returns,
                  const Weight& w, bool gains) {
    side.zero = w.is_zero();
    side.identity = w.is_identity();
    side.xi.resize(returns.size());
    std::transform(returns.begin(), returns.end(), side.xi.begin(),
                   [&](double r) {
                     return gains ? utility_.gain(r) : utility_.loss(r);
                   });
    std::sort(side.xi.begin(), side.xi.end());
    if (side.zero || side.identity) return;
    const double n = static_cast<double>(n_);
    side.wq.resize(n_ + 1);
    for (int m = 0; m <= n_; ++m) {
      double t = std::min(std::max((n - m) / n, 1.0 / n), (n - 1.0) / n);
      side.wq[m] = w.derivative(t);
    }
    side.cum.resize(n_);
    double prev = 0.0, acc = 0.0;
    for (int m = 0; m < n_; ++m) {
      acc += side.wq[m] * (side.xi[m] - prev);
      side.cum[m] = acc;
      prev = side.xi[m];
    }
  }

  double side_integral(const Side& side, double u) const {
    if (side.zero || u <= 0.0) return 0.0;
    if (side.identity) return u;
    auto it = std::lower_bound(side.xi.begin(), side.xi.end(), u);
    int c = static_cast<int>(it - side.xi.begin());
    double below = c > 0 ? side.cum[c - 1] : 0.0;
    double prev = c > 0 ? side.xi[c - 1] : 0.0;
    return below + side.wq[c] * (u - prev);
  }

  Utility utility_;
  int n_ = 0;
  Side gain_, loss_;
};

inline PhiValue phi_quantile(double v, const std::vector<double>& batch_returns,
                             const CptSpec& spec) {
  return QuantileTable(batch_returns, spec).phi(v);
}

// ---------------------------------------------------------------------------
// Piecewise-affine weights admit a closed form: w' is constant on each
// breakpoint interval, so the integral only needs the upper quantiles of the
// transformed law at the breakpoints. T(q) below is the point where the tail
// drops under q; the region where the tail still equals 1 belongs to the last
// piece (w'(1) is the last slope by the right-derivative convention).
// ---------------------------------------------------------------------------

namespace detail {

// slopes[p] on [q_p, q_{p+1}); tails holds T(q_1)..T(q_{P-1}) followed by
// T(1), the essential minimum. Computes int_0^u w'(tail(z)) dz; the closing
// slopes.back() * a_prev term is the stretch where the tail still equals 1.
inline double affine_phi_from_tails(double u, const std::vector<double>& slopes,
                                    const std::vector<double>& tails) {
  if (u <= 0.0) return 0.0;
  double acc = 0.0, a_prev = u;
  for (std::size_t b = 0; b < tails.size(); ++b) {
    double a = std::min(u, tails[b]);
    acc += slopes[b] * (a_prev - a);
    a_prev = a;
  }
  return acc + slopes.back() * a_prev;
}

// T(q) on the empirical law of a sorted sample: the order statistic at index
// n - ceil(q n). The epsilon guards against 0.1 * n rounding just above an
// integer.
inline double empirical_upper_quantile(const std::vector<double>& sorted,
                                       double q) {
  const int n = static_cast<int>(sorted.size());
  int k = n - static_cast<int>(std::ceil(q * n - 1e-9));
  return sorted[std::min(std::max(k, 0), n - 1)];
}

// T(q) on a discrete law given as (value >= 0, prob) atoms.
inline double exact_upper_quantile(
    const std::vector<std::pair<double, double>>& atoms_sorted, double q) {
  double tail = 1.0;
  for (const auto& [y, p] : atoms_sorted) {
    tail -= p;  // P(Y > y) after consuming the atom at y
    if (tail < q - 1e-12) return y;
  }
  return atoms_sorted.back().first;
}

inline Weight::Piecewise require_affine(std::optional<Weight::Piecewise> p,
                                        const char* which) {
  if (!p)
    throw UnsupportedError(std::string("piecewise phi: ") + which +
                           " distortion has no affine form");
  return *std::move(p);
}

}  // namespace detail

class PiecewiseAffineTable {
 public:
  // Breakpoint quantiles estimated from a batch of returns.
  PiecewiseAffineTable(const std::vector<double>& batch_returns,
                       const CptSpec& spec)
      : utility_(spec.utility) {
    if (batch_returns.size() < 2)
      throw ArgumentError("piecewise phi: need a batch of size >= 2");
    auto empirical = [&](Side& side, const Weight::Piecewise& pw) {
      std::vector<double> xi(batch_returns.size());
      std::transform(batch_returns.begin(), batch_returns.end(), xi.begin(),
                     [&](double r) {
                       return side.gains ? utility_.gain(r) : utility_.loss(r);
                     });
      std::sort(xi.begin(), xi.end());
      for (std::size_t b = 1; b + 1 < pw.breakpoints.size(); ++b)
        side.tails.push_back(
            detail::empirical_upper_quantile(xi, pw.breakpoints[b]));
      side.tails.push_back(detail::empirical_upper_quantile(xi, 1.0));
    };
    init_side(gain_, spec.w_plus, "gain", empirical);
    init_side(loss_, spec.w_minus, "loss", empirical);
  }

  // Exact breakpoint quantiles of a discrete law (no estimation error).
  PiecewiseAffineTable(const DiscreteDist& law, const CptSpec& spec)
      : utility_(spec.utility) {
    auto exact = [&](Side& side, const Weight::Piecewise& pw) {
      std::vector<std::pair<double, double>> atoms;
      for (const auto& [x, p] : law.atoms())
        atoms.emplace_back(side.gains ? utility_.gain(x) : utility_.loss(x), p);
      std::sort(atoms.begin(), atoms.end());
      for (std::size_t b = 1; b + 1 < pw.breakpoints.size(); ++b)
        side.tails.push_back(
            detail::exact_upper_quantile(atoms, pw.breakpoints[b]));
      side.tails.push_back(detail::exact_upper_quantile(atoms, 1.0));
    };
    init_side(gain_, spec.w_plus, "gain", exact);
    init_side(loss_, spec.w_minus, "loss", exact);
  }

  PhiValue phi(double v) const {
    PhiValue out;
    if (!gain_.zero)
      out.gains_part = detail::affine_phi_from_tails(utility_.gain(v),
                                                     gain_.slopes, gain_.tails);
    if (!loss_.zero)
      out.losses_part = detail::affine_phi_from_tails(
          utility_.loss(v), loss_.slopes, loss_.tails);
    return out;
  }

 private:
  struct Side {
    bool gains = true;
    bool zero = false;
    std::vector<double> slopes;
    std::vector<double> tails;  // T(q_1)..T(q_{P-1}), then T(1)
  };

  template <class Fill>
  void init_side(Side& side, const Weight& w, const char* which, Fill&& fill) {
    side.gains = (which[0] == 'g');
    side.zero = w.is_zero();
    if (side.zero) return;
    const Weight::Piecewise pw = detail::require_affine(w.affine_form(), which);
    side.slopes = pw.slopes;
    fill(side, pw);
  }

  Utility utility_;
  Side gain_, loss_;
};

inline PhiValue phi_piecewise_affine(double v,
                                     const std::vector<double>& batch_returns,
                                     const CptSpec& spec) {
  return PiecewiseAffineTable(batch_returns, spec).phi(v);
}

inline PhiValue phi_piecewise_affine(double v, const DiscreteDist& law,
                                     const CptSpec& spec) {
  return PiecewiseAffineTable(law, spec).phi(v);
}

}  // namespace cptrl
