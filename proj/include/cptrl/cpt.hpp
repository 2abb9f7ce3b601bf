#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "cptrl/errors.hpp"
#include "cptrl/utility.hpp"
#include "cptrl/weight.hpp"

namespace cptrl {

// Full prospect-theoretic valuation spec: one utility curve and one
// distortion per side. The plain expectation is the all-identity special
// case.
struct CptSpec {
  Utility utility = Utility::identity();
  Weight w_plus = Weight::identity();
  Weight w_minus = Weight::identity();

  static CptSpec expectation() { return CptSpec{}; }

  bool identity_weights() const {
    return w_plus.is_identity() && w_minus.is_identity();
  }
};

// Finite discrete law: strictly increasing values with positive probabilities
// summing to one. Nearby values (within merge_tol) are combined into a single
// atom at their probability-weighted mean.
class DiscreteDist {
 public:
  explicit DiscreteDist(std::vector<std::pair<double, double>> atoms,
                        double merge_tol = 1e-9) {
    if (atoms.empty()) throw ValidationError("distribution: no atoms");
    std::sort(atoms.begin(), atoms.end());
    double total = 0.0;
    for (auto& [v, p] : atoms) {
      if (!std::isfinite(v) || !std::isfinite(p))
        throw ValidationError("distribution: non-finite atom");
      if (p < 0.0) throw ValidationError("distribution: negative probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw ValidationError("distribution: probabilities sum to " +
                            std::to_string(total));
    for (const auto& [v, p] : atoms) {
      if (p == 0.0) continue;
      if (!atoms_.empty() && v - atoms_.back().first <= merge_tol) {
        auto& [bv, bp] = atoms_.back();
        bv = (bv * bp + v * p) / (bp + p);
        bp += p;
      } else {
        atoms_.emplace_back(v, p);
      }
    }
    if (atoms_.empty()) throw ValidationError("distribution: no positive mass");
  }

  static DiscreteDist delta(double v) { return DiscreteDist({{v, 1.0}}); }

  const std::vector<std::pair<double, double>>& atoms() const { return atoms_; }

  double mean() const {
    double m = 0.0;
    for (const auto& [v, p] : atoms_) m += v * p;
    return m;
  }

  double min_value() const { return atoms_.front().first; }
  double max_value() const { return atoms_.back().first; }

 private:
  std::vector<std::pair<double, double>> atoms_;
};

namespace detail {

// For a non-negative discrete law Y given as (value, prob) pairs, the tail
// z -> P(Y > z) is a right-continuous step function. Integrating any function
// f of the tail over [0, upper] therefore reduces to a finite sum: each
// distinct positive level y contributes f(P(Y >= y)) * (segment below y).
// When `upper` exceeds the top level, the remaining stretch has tail 0.
template <class F>
double step_tail_integral(std::vector<std::pair<double, double>> ys,
                          double upper, F&& f_of_tail) {
  if (upper <= 0.0) return 0.0;
  std::sort(ys.begin(), ys.end());
  std::size_t n = ys.size();
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + ys[i].second;

  double integral = 0.0;
  double prev = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && ys[j + 1].first == ys[i].first) ++j;
    double y = ys[i].first;
    if (y > prev) {
      double hi = std::min(y, upper);
      if (hi > prev) integral += f_of_tail(suffix[i]) * (hi - prev);
      if (upper <= y) return integral;
      prev = y;
    }
    i = j + 1;
  }
  if (std::isfinite(upper) && upper > prev)
    integral += f_of_tail(0.0) * (upper - prev);
  return integral;
}

}  // namespace detail

// Exact prospect-theoretic value of a discrete law:
//   integral of w+(P(gain(X) > z)) dz  minus  integral of w-(P(loss(X) > z)) dz,
// both computed as finite sums over the step tails.
inline double cpt_value_exact(const DiscreteDist& dist, const CptSpec& spec) {
  std::vector<std::pair<double, double>> gains, losses;
  gains.reserve(dist.atoms().size());
  losses.reserve(dist.atoms().size());
  for (const auto& [v, p] : dist.atoms()) {
    gains.emplace_back(spec.utility.gain(v), p);
    losses.emplace_back(spec.utility.loss(v), p);
  }
  double plus = spec.w_plus.is_zero()
                    ? 0.0
                    : detail::step_tail_integral(
                          std::move(gains), std::numeric_limits<double>::infinity(),
                          [&](double t) { return spec.w_plus(t); });
  double minus = spec.w_minus.is_zero()
                     ? 0.0
                     : detail::step_tail_integral(
                           std::move(losses), std::numeric_limits<double>::infinity(),
                           [&](double t) { return spec.w_minus(t); });
  return plus - minus;
}

// Order-statistics estimator from a sample. With X_(1) <= ... <= X_(n):
//   gains  sum_i gain(X_(i)) * (w+((n+1-i)/n) - w+((n-i)/n))
//   losses sum_i loss(X_(i)) * (w-(i/n)       - w-((i-1)/n))
// The loss side mirrors the gain side on the reversed order statistics, since
// large losses sit at the low end of the sort. Duplicate sample values are
// kept as distinct order statistics.
inline double cpt_value_empirical(std::vector<double> samples,
                                  const CptSpec& spec) {
  if (samples.empty()) throw ArgumentError("cpt estimate: empty sample list");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double plus = 0.0, minus = 0.0;
  if (!spec.w_plus.is_zero()) {
    double w_hi = spec.w_plus(1.0);  // at i = 1: w+((n-0)/n)
    for (std::size_t i = 1; i <= samples.size(); ++i) {
      double w_lo = spec.w_plus((n - static_cast<double>(i)) / n);
      plus += spec.utility.gain(samples[i - 1]) * (w_hi - w_lo);
      w_hi = w_lo;
    }
  }
  if (!spec.w_minus.is_zero()) {
    double w_lo = spec.w_minus(0.0);
    for (std::size_t i = 1; i <= samples.size(); ++i) {
      double w_hi = spec.w_minus(static_cast<double>(i) / n);
      minus += spec.utility.loss(samples[i - 1]) * (w_hi - w_lo);
      w_lo = w_hi;
    }
  }
  return plus - minus;
}

// Distortion risk measure rho_g as a valuation spec: identity utility at
// reference 0, the conjugate distortion on gains and g itself on losses.
inline CptSpec make_distortion_risk_measure(const Weight& g) {
  return CptSpec{Utility::identity(0.0), Weight::complement(g), g};
}

}  // namespace cptrl
