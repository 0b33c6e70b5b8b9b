#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "ouhjb/quadrature.hpp"

using namespace ouhjb;

TEST_CASE("gauss_hermite reproduces standard normal moments") {
  // E[Z^2m] = (2m-1)!!, odd moments vanish
  GaussRule r = gauss_hermite(9);
  double total = 0.0;
  for (double w : r.weights) total += w;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-13));

  auto moment = [&](int p) {
    double s = 0.0;
    for (size_t i = 0; i < r.nodes.size(); ++i) {
      s += r.weights[i] * std::pow(r.nodes[i], p);
    }
    return s;
  };
  CHECK(moment(1) == doctest::Approx(0.0).epsilon(1e-13));
  CHECK(moment(2) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(moment(3) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(moment(4) == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(moment(6) == doctest::Approx(15.0).epsilon(1e-12));
  CHECK(moment(8) == doctest::Approx(105.0).epsilon(1e-11));
}

TEST_CASE("gauss_hermite integrates a smooth non-polynomial accurately") {
  // E[cos(Z)] = e^{-1/2}
  GaussRule r = gauss_hermite(21);
  double s = 0.0;
  for (size_t i = 0; i < r.nodes.size(); ++i) {
    s += r.weights[i] * std::cos(r.nodes[i]);
  }
  CHECK(s == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("gauss_legendre01 matches adaptive Simpson on [0,1]") {
  GaussRule r = gauss_legendre01(16);
  auto f = [](double x) { return std::exp(-x) * std::cos(3.0 * x); };
  double s = 0.0;
  for (size_t i = 0; i < r.nodes.size(); ++i) s += r.weights[i] * f(r.nodes[i]);
  double ref = oracle::adaptive_simpson(f, 0.0, 1.0, 1e-14);
  CHECK(s == doctest::Approx(ref).epsilon(1e-12));

  double total = 0.0;
  for (double w : r.weights) total += w;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("rules reject bad sizes") {
  CHECK_THROWS(gauss_hermite(0));
  CHECK_THROWS(gauss_legendre01(-1));
}
