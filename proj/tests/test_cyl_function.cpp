#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "ouhjb/cyl_function.hpp"

using namespace ouhjb;

TEST_CASE("catalog values") {
  std::vector<double> x = {0.4, -1.3, 2.0};

  auto c = CylFunction::constant(2.5);
  CHECK(c.eval(x) == 2.5);
  CHECK(c.support().empty());

  auto th = CylFunction::linear_tanh(2.0, -0.5, 2);
  CHECK(th.eval(x) == doctest::Approx(std::tanh(2.0 * (-1.3) - 0.5)));
  CHECK(th.support() == std::vector<int>{2});
  CHECK(th.sup_bound() == 1.0);
  CHECK(*th.lipschitz_bound() == 2.0);

  auto cp = CylFunction::clipped_power(1.0 / 3.0, 1);
  CHECK(cp.eval(x) == doctest::Approx(std::pow(0.4, 1.0 / 3.0)));
  CHECK(cp.eval(std::vector<double>{8.0, 0, 0}) == 1.0);
  CHECK(!cp.differentiable());
  CHECK(!cp.lipschitz_bound());

  auto qf = CylFunction::quadratic_form(1.0, {1, 3}, {1.0, 0.5});
  // 0.5*(0.16) + 0.25*4 = 1.08, clipped at 1
  CHECK(qf.eval(x) == 1.0);
  CHECK(qf.eval(std::vector<double>{0.4, 0, 1.0}) ==
        doctest::Approx(0.5 * 0.16 + 0.25));

  auto s = CylFunction::sum({2.0, -1.0}, {th, c});
  CHECK(s.eval(x) == doctest::Approx(2.0 * th.eval(x) - 2.5));
  CHECK(s.sup_bound() == doctest::Approx(2.0 + 2.5));

  auto p = CylFunction::product({th, CylFunction::linear_tanh(1.0, 0.0, 1)});
  CHECK(p.eval(x) == doctest::Approx(th.eval(x) * std::tanh(0.4)));
  CHECK(p.support() == std::vector<int>{1, 2});
}

TEST_CASE("partial derivatives match central differences") {
  std::vector<double> x = {0.3, -0.7};
  auto th = CylFunction::linear_tanh(1.5, 0.2, 1);
  auto p = CylFunction::product({th, CylFunction::linear_tanh(-0.8, 0.0, 2)});
  auto s = CylFunction::sum({1.0, 0.5}, {th, p});
  for (int k = 1; k <= 2; ++k) {
    double fd = oracle::directional_diff(
        [&](std::vector<double> y) { return s.eval(y); }, x,
        k == 1 ? std::vector<double>{1, 0} : std::vector<double>{0, 1}, 1e-6);
    CHECK(s.partial(k, x) == doctest::Approx(fd).epsilon(1e-7));
  }
  CHECK(s.partial(5, x) == 0.0);  // outside support
}

TEST_CASE("json round trip") {
  auto f = CylFunction::sum(
      {1.0, -0.25},
      {CylFunction::linear_tanh(1.0, 0.0, 1),
       CylFunction::product({CylFunction::clipped_power(0.5, 2),
                             CylFunction::constant(3.0)})});
  auto g = CylFunction::from_json(f.to_json());
  std::vector<double> x = {0.2, 0.9};
  CHECK(g.eval(x) == doctest::Approx(f.eval(x)));
  CHECK(g.support() == f.support());
  CHECK(g.to_json() == f.to_json());
}

TEST_CASE("strict parsing") {
  CHECK_THROWS(CylFunction::from_json({{"family", "constant"},
                                       {"value", 1.0},
                                       {"extra", 2.0}}));
  CHECK_THROWS(CylFunction::from_json({{"family", "nope"}}));
  CHECK_THROWS(CylFunction::clipped_power(1.5, 1));
  CHECK_THROWS(CylFunction::clipped_power(0.5, 0));
  CHECK_THROWS(CylFunction::quadratic_form(1.0, {1}, {-0.5}));
  CHECK_THROWS(CylFunction::quadratic_form(-1.0, {1}, {0.5}));
}

TEST_CASE("evaluation needs the support coordinates") {
  auto th = CylFunction::linear_tanh(1.0, 0.0, 4);
  CHECK_THROWS(th.eval(std::vector<double>{1.0, 2.0}));
}
