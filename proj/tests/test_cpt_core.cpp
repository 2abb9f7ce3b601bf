#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "cptrl/cpt.hpp"
#include "cptrl/rng.hpp"
#include "cptrl/utility.hpp"
#include "cptrl/weight.hpp"

using namespace cptrl;
using Catch::Approx;

namespace {

// Central finite difference, the independent slope oracle for smooth curves.
template <class F>
double central_diff(F&& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

DiscreteDist shifted(const DiscreteDist& d, double c) {
  std::vector<std::pair<double, double>> atoms;
  for (auto [v, p] : d.atoms()) atoms.emplace_back(v + c, p);
  return DiscreteDist(atoms);
}

}  // namespace

TEST_CASE("utility curves split outcomes at the reference point") {
  SECTION("identity with a shifted reference") {
    auto u = Utility::identity(1.0);
    REQUIRE(u(3.0) == Approx(2.0));
    REQUIRE(u.gain(3.0) == Approx(2.0));
    REQUIRE(u.loss(3.0) == 0.0);
    REQUIRE(u.loss(0.0) == Approx(1.0));
    REQUIRE(u.gain(0.0) == 0.0);
  }

  SECTION("power curve with loss aversion") {
    auto u = Utility::kahneman_tversky();  // lambda 2.25, alpha 0.88
    REQUIRE(u(0.0) == 0.0);
    REQUIRE(u(1.0) == Approx(1.0));
    REQUIRE(u(-1.0) == Approx(-2.25));
    REQUIRE(u.loss(-1.0) == Approx(2.25));
    REQUIRE(u.gain(-1.0) == 0.0);
    // steeper below the reference than above it
    REQUIRE(-u(-0.5) > u(0.5));
  }

  SECTION("exponential curve") {
    auto u = Utility::exponential(1.0, -1.0, -0.5, 0.0);  // 1 - exp(-x/2)
    REQUIRE(u(0.0) == Approx(0.0).margin(1e-15));
    REQUIRE(u(2.0) == Approx(1.0 - std::exp(-1.0)));
    REQUIRE(u(-2.0) == Approx(1.0 - std::exp(1.0)));
    REQUIRE(u.loss(-2.0) == Approx(std::exp(1.0) - 1.0));
  }

  SECTION("exponential rejects a reference that is not a zero of the curve") {
    REQUIRE_THROWS_AS(Utility::exponential(1.0, -1.0, -0.5, 1.0), ValidationError);
  }

  SECTION("exponential rejects decreasing parameterizations") {
    REQUIRE_THROWS_AS(Utility::exponential(0.0, 1.0, -0.5, 0.0), ValidationError);
  }

  SECTION("square root with domain shift has no loss part") {
    auto u = Utility::sqrt_shift(2.0);
    REQUIRE(u.reference_point() == Approx(-2.0));
    REQUIRE(u(-2.0) == Approx(0.0).margin(1e-12));
    REQUIRE(u(2.0) == Approx(2.0));
    for (double x : {-2.0, -1.0, 0.0, 3.0, 10.0}) REQUIRE(u.loss(x) == 0.0);
  }

  SECTION("custom curves are probed like the built-ins") {
    auto cube = Utility::custom("cube", [](double x) { return x * x * x; }, 0.0);
    REQUIRE(cube(2.0) == Approx(8.0));
    REQUIRE(cube.loss(-2.0) == Approx(8.0));
    REQUIRE_THROWS_AS(
        Utility::custom("off_zero", [](double x) { return x + 1.0; }, 0.0),
        ValidationError);
  }
}

TEST_CASE("distortions evaluate and validate") {
  SECTION("two-piece presets hit their defining values") {
    auto rs = Weight::preset("w_rs");
    REQUIRE(rs(0.0) == 0.0);
    REQUIRE(rs(0.05) == Approx(0.25));
    REQUIRE(rs(0.1) == Approx(0.5));
    REQUIRE(rs(0.5) == Approx(13.0 / 18.0));
    REQUIRE(rs(1.0) == Approx(1.0));

    auto ra = Weight::preset("w_ra");
    REQUIRE(ra(0.9) == Approx(0.45));
    REQUIRE(ra(1.0) == Approx(1.0));

    REQUIRE(Weight::preset("w_sra")(0.9) == Approx(0.09));
    REQUIRE(Weight::preset("w_srs")(0.1) == Approx(0.9));
    REQUIRE_THROWS_AS(Weight::preset("w_bogus"), ValidationError);
  }

  SECTION("piecewise construction enforces the curve invariants") {
    // slopes that do not integrate to 1
    REQUIRE_THROWS_AS(Weight::piecewise_affine({0.0, 0.5, 1.0}, {1.0, 0.5}),
                      ValidationError);
    // discontinuous explicit intercepts
    REQUIRE_THROWS_AS(
        Weight::piecewise_affine({0.0, 0.5, 1.0}, {1.0, 1.0}, {0.0, 0.25}),
        ValidationError);
    REQUIRE_THROWS_AS(Weight::piecewise_affine({0.0, 1.0}, {-1.0}),
                      ValidationError);
    REQUIRE_THROWS_AS(Weight::piecewise_affine({0.1, 1.0}, {1.0}),
                      ValidationError);
  }

  SECTION("inverse-S curves pass the monotonicity probe only when monotone") {
    auto kt = Weight::kahneman_tversky(0.61);
    REQUIRE(kt(0.0) == 0.0);
    REQUIRE(kt(1.0) == 1.0);
    REQUIRE(kt(0.1) > 0.1);  // overweights rare events
    REQUIRE(kt(0.9) < 0.9);
    // eta this small bends the curve back down near 1
    REQUIRE_THROWS_AS(Weight::kahneman_tversky(0.1), ValidationError);

    auto pr = Weight::prelec(0.65);
    REQUIRE(pr(std::exp(-1.0)) == Approx(std::exp(-1.0)));  // fixed point
  }

  SECTION("the zero side is allowed to stay at zero") {
    auto z = Weight::zero();
    REQUIRE(z(0.7) == 0.0);
    REQUIRE(z.derivative(0.7) == 0.0);
  }

  SECTION("conjugate reflection") {
    auto g = Weight::cvar_distortion(0.5);  // min(2p, 1)
    auto gt = Weight::complement(g);        // 0 below 1/2, then 2p - 1
    REQUIRE(gt(0.3) == Approx(0.0).margin(1e-15));
    REQUIRE(gt(0.75) == Approx(0.5));
    REQUIRE(gt(1.0) == Approx(1.0));
    auto smooth = Weight::complement(Weight::kahneman_tversky(0.61));
    REQUIRE(smooth(0.4) == Approx(1.0 - Weight::kahneman_tversky(0.61)(0.6)));
  }
}

TEST_CASE("weight derivatives use the right-slope convention") {
  SECTION("affine pieces") {
    REQUIRE(eval_weight_derivative(Weight::identity(), 0.37) == 1.0);
    auto rs = Weight::preset("w_rs");
    REQUIRE(eval_weight_derivative(rs, 0.05) == Approx(5.0));
    REQUIRE(eval_weight_derivative(rs, 0.1) == Approx(5.0 / 9.0));  // right slope
    REQUIRE(eval_weight_derivative(rs, 1.0) == Approx(5.0 / 9.0));
    REQUIRE(eval_weight_derivative(Weight::preset("w_ra"), 0.9) == Approx(5.5));
  }

  SECTION("smooth curves match central finite differences") {
    for (double eta : {0.5, 0.61, 0.8}) {
      auto kt = Weight::kahneman_tversky(eta);
      for (double p : {0.2, 0.5, 0.8}) {
        double fd = central_diff([&](double x) { return kt(x); }, p, 1e-6);
        REQUIRE(kt.derivative(p) == Approx(fd).epsilon(1e-6));
      }
    }
    auto pr = Weight::prelec(0.65);
    for (double p : {0.2, 0.5, 0.8}) {
      double fd = central_diff([&](double x) { return pr(x); }, p, 1e-6);
      REQUIRE(pr.derivative(p) == Approx(fd).epsilon(1e-6));
    }
  }

  SECTION("unbounded endpoint slopes are reported as infinity") {
    REQUIRE(std::isinf(Weight::kahneman_tversky(0.61).derivative(0.0)));
    REQUIRE(std::isinf(Weight::prelec(0.65).derivative(1.0)));
  }
}

TEST_CASE("discrete laws normalize, merge, and validate") {
  DiscreteDist d({{1.5, 0.25}, {0.0, 0.5}, {1.5, 0.25}});
  REQUIRE(d.atoms().size() == 2);
  REQUIRE(d.atoms()[0].first == 0.0);
  REQUIRE(d.atoms()[1].first == Approx(1.5));
  REQUIRE(d.atoms()[1].second == Approx(0.5));
  REQUIRE(d.mean() == Approx(0.75));

  REQUIRE_THROWS_AS(DiscreteDist({{0.0, 0.6}, {1.0, 0.6}}), ValidationError);
  REQUIRE_THROWS_AS(DiscreteDist({{0.0, 1.5}, {1.0, -0.5}}), ValidationError);
  REQUIRE_THROWS_AS(DiscreteDist({}), ValidationError);
}

TEST_CASE("exact value reproduces the two-outcome closed forms") {
  CptSpec spec{Utility::identity(0.0), Weight::preset("w_rs"), Weight::zero()};

  SECTION("pure risky lottery") {
    DiscreteDist law({{0.0, 0.5}, {1.5, 0.5}});
    REQUIRE(cpt_value_exact(law, spec) == Approx(13.0 / 12.0).margin(1e-12));
  }

  SECTION("mixture lottery") {
    DiscreteDist law({{0.0, 0.1}, {1.0, 0.8}, {1.5, 0.1}});
    REQUIRE(cpt_value_exact(law, spec) == Approx(43.0 / 36.0).margin(1e-12));
  }

  SECTION("all-identity spec recovers the mean") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<std::pair<double, double>> atoms;
      int k = 2 + rng.uniform_int(5);
      double total = 0.0;
      std::vector<double> raw;
      for (int i = 0; i < k; ++i) {
        raw.push_back(rng.uniform(0.05, 1.0));
        total += raw.back();
      }
      for (int i = 0; i < k; ++i)
        atoms.emplace_back(rng.uniform(-5.0, 5.0), raw[i] / total);
      // exact sum-to-one after normalization
      double s = 0.0;
      for (auto& [v, p] : atoms) s += p;
      atoms.back().second += 1.0 - s;
      DiscreteDist law(atoms);
      REQUIRE(cpt_value_exact(law, CptSpec::expectation()) ==
              Approx(law.mean()).margin(1e-12));
    }
  }

  SECTION("translation upward never decreases the value") {
    DiscreteDist law({{-1.0, 0.3}, {0.5, 0.4}, {2.0, 0.3}});
    std::vector<CptSpec> specs = {
        spec,
        {Utility::kahneman_tversky(), Weight::kahneman_tversky(0.61),
         Weight::kahneman_tversky(0.69)},
        {Utility::identity(0.0), Weight::preset("w_ra"), Weight::preset("w_rs")},
    };
    for (const auto& s : specs)
      for (double c : {0.25, 1.0, 3.0})
        REQUIRE(cpt_value_exact(shifted(law, c), s) >=
                cpt_value_exact(law, s) - 1e-12);
  }
}

TEST_CASE("distortion risk measures via the conjugate construction") {
  SECTION("identity distortion recovers the mean") {
    auto spec = make_distortion_risk_measure(Weight::identity());
    DiscreteDist law({{-2.0, 0.25}, {0.0, 0.5}, {2.0, 0.25}});
    REQUIRE(cpt_value_exact(law, spec) == Approx(law.mean()).margin(1e-12));
  }

  SECTION("tail average at level one half") {
    auto spec = make_distortion_risk_measure(Weight::cvar_distortion(0.5));
    DiscreteDist coin({{-1.0, 0.5}, {1.0, 0.5}});
    REQUIRE(cpt_value_exact(coin, spec) == Approx(-1.0).margin(1e-12));
    DiscreteDist three({{-2.0, 0.25}, {0.0, 0.5}, {2.0, 0.25}});
    REQUIRE(cpt_value_exact(three, spec) == Approx(-1.0).margin(1e-12));
  }

  SECTION("risk-averse distortion respects first-order dominance") {
    auto spec = make_distortion_risk_measure(Weight::preset("w_ra"));
    DiscreteDist law({{-1.0, 0.4}, {1.0, 0.6}});
    for (double c : {0.1, 0.5, 2.0})
      REQUIRE(cpt_value_exact(shifted(law, c), spec) >
              cpt_value_exact(law, spec));
  }
}

TEST_CASE("sample estimator agrees with the exact value") {
  CptSpec spec{Utility::identity(0.0), Weight::preset("w_rs"), Weight::zero()};

  SECTION("degenerate cases") {
    REQUIRE(cpt_value_empirical({1.0, 2.0, 3.0}, CptSpec::expectation()) ==
            Approx(2.0).margin(1e-15));
    REQUIRE(cpt_value_empirical({0.0, 1.5}, spec) ==
            Approx(13.0 / 12.0).margin(1e-15));
    REQUIRE_THROWS_AS(cpt_value_empirical({}, spec), ArgumentError);
  }

  SECTION("the loss side mirrors the gain side") {
    CptSpec loss_spec{Utility::identity(0.0), Weight::zero(),
                      Weight::preset("w_rs")};
    REQUIRE(cpt_value_empirical({-1.5, 0.0}, loss_spec) ==
            Approx(-13.0 / 12.0).margin(1e-15));
  }

  SECTION("exact enumeration multiset reproduces the exact value") {
    // law {-1: .3, 0.5: .2, 2: .5} written out with multiplicity 10
    std::vector<double> samples;
    for (int i = 0; i < 3; ++i) samples.push_back(-1.0);
    for (int i = 0; i < 2; ++i) samples.push_back(0.5);
    for (int i = 0; i < 5; ++i) samples.push_back(2.0);
    DiscreteDist law({{-1.0, 0.3}, {0.5, 0.2}, {2.0, 0.5}});
    std::vector<CptSpec> specs = {
        {Utility::identity(0.0), Weight::preset("w_ra"), Weight::preset("w_rs")},
        {Utility::kahneman_tversky(), Weight::kahneman_tversky(0.61),
         Weight::kahneman_tversky(0.69)},
    };
    for (const auto& s : specs)
      REQUIRE(cpt_value_empirical(samples, s) ==
              Approx(cpt_value_exact(law, s)).margin(1e-9));
  }

  SECTION("large i.i.d. samples concentrate on the exact value") {
    Rng rng(11);
    std::vector<double> samples(100000);
    for (auto& x : samples) x = rng.bernoulli(0.5) ? 1.5 : 0.0;
    REQUIRE(cpt_value_empirical(samples, spec) ==
            Approx(13.0 / 12.0).margin(0.01));
  }

  SECTION("root-mean-square error shrinks with the sample size") {
    DiscreteDist law({{0.0, 0.5}, {1.5, 0.5}});
    double exact = cpt_value_exact(law, spec);
    double scale = std::abs(exact);
    std::vector<double> rms;
    for (int n : {100, 1000, 10000}) {
      double se = 0.0;
      for (int rep = 0; rep < 50; ++rep) {
        Rng rng = Rng::stream({123, static_cast<std::uint64_t>(n),
                               static_cast<std::uint64_t>(rep)});
        std::vector<double> samples(n);
        for (auto& x : samples) x = rng.bernoulli(0.5) ? 1.5 : 0.0;
        double err = cpt_value_empirical(samples, spec) - exact;
        se += err * err;
      }
      rms.push_back(std::sqrt(se / 50.0));
    }
    REQUIRE(rms[0] >= rms[1]);
    REQUIRE(rms[1] >= rms[2]);
    REQUIRE(rms[2] <= 0.02 * scale);
  }
}
