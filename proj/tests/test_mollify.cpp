#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ouhjb/mollify.hpp"
#include "oracles.hpp"

using namespace ouhjb;

namespace {

// 1-D independent oracle for inf_y { f(y) + w (x-y)^2 }.
double inf_conv_oracle(const std::function<double(double)>& f, double w,
                       double x, double bound) {
  double radius = 1.5 * std::sqrt(2.0 * bound / w) + 1e-6;
  auto obj = [&](double y) { return f(y) + w * (x - y) * (x - y); };
  double y = oracle::grid_refine_min(obj, x - radius, x + radius, 4000);
  // cusps at the origin hold the exact minimum for Holder-type data
  return std::min({obj(y), obj(0.0), obj(x)});
}

std::vector<double> probe_ladder(double lo, double hi, int count) {
  std::vector<double> xs(count);
  for (int i = 0; i < count; ++i) xs[i] = lo + (hi - lo) * i / (count - 1);
  return xs;
}

}  // namespace

TEST_CASE("constants are fixed points of both schemes") {
  auto c = CylFunction::constant(0.37);
  for (int n : {1, 4, 256}) {
    std::vector<double> x{0.4, -1.0};
    CHECK(moreau_envelope(c, n, x) == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(infsup_convolution(c, n, x) == doctest::Approx(0.37).epsilon(1e-15));
  }
}

TEST_CASE("Moreau envelope of |x1| has the Huber closed form") {
  auto f = CylFunction::clipped_power(1.0, 1);  // min(1, |x1|)
  for (int n : {4, 64}) {
    // |x| <= 1/(4n): 2n x^2;  1/(4n) <= |x| (pre-clip): |x| - 1/(8n)
    std::vector<double> x{0.0, 0.0};
    CHECK(moreau_envelope(f, n, x) == doctest::Approx(0.0).epsilon(1e-9));
    x[0] = 0.5;
    CHECK(moreau_envelope(f, n, x) ==
          doctest::Approx(0.5 - 1.0 / (8.0 * n)).epsilon(1e-8));
    x[0] = -0.7;
    CHECK(moreau_envelope(f, n, x) ==
          doctest::Approx(0.7 - 1.0 / (8.0 * n)).epsilon(1e-8));
    x[0] = 0.01;
    if (0.01 < 1.0 / (4.0 * n)) {
      CHECK(moreau_envelope(f, n, x) ==
            doctest::Approx(2.0 * n * 1e-4).epsilon(1e-6));
    }
    x[0] = 2.0;  // deep in the clip plateau the envelope is flat
    CHECK(moreau_envelope(f, n, x) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("Moreau envelope of a quadratic form is the harmonic-mean quadratic") {
  // inf_y { c y^2 / 2 + 2n (x-y)^2 } = c' x^2 / 2 with 1/c' = 1/c + 1/(4n)
  auto f = CylFunction::quadratic_form(50.0, {1, 2}, {1.0, 2.5});
  int n = 16;
  double c1 = 4.0 * n * 1.0 / (4.0 * n + 1.0);
  double c2 = 4.0 * n * 2.5 / (4.0 * n + 2.5);
  std::vector<double> x{0.8, -0.6};
  double want = 0.5 * (c1 * 0.64 + c2 * 0.36);
  CHECK(moreau_envelope(f, n, x) == doctest::Approx(want).epsilon(1e-7));
}

TEST_CASE("Moreau envelope matches the 1-D grid oracle") {
  auto f = CylFunction::linear_tanh(1.3, -0.4, 1);
  auto f1d = [&](double y) { return std::tanh(1.3 * y - 0.4); };
  for (int n : {4, 64}) {
    for (double xv : {-1.1, -0.2, 0.0, 0.7, 2.0}) {
      std::vector<double> x{xv};
      double want = inf_conv_oracle(f1d, 2.0 * n, xv, 1.0);
      CHECK(moreau_envelope(f, n, x) == doctest::Approx(want).epsilon(1e-6));
    }
  }
  auto g = CylFunction::clipped_power(1.0 / 3.0, 1);
  auto g1d = [&](double y) { return std::min(1.0, std::pow(std::fabs(y), 1.0 / 3.0)); };
  for (int n : {4, 64}) {
    for (double xv : {-0.5, 0.0, 0.02, 0.3, 1.5}) {
      std::vector<double> x{xv};
      double want = inf_conv_oracle(g1d, 2.0 * n, xv, 1.0);
      CHECK(moreau_envelope(g, n, x) == doctest::Approx(want).epsilon(1e-6));
    }
  }
}

TEST_CASE("sup bound is preserved and the inf scheme stays below the base") {
  auto f = CylFunction::linear_tanh(2.0, 0.3, 1);
  double bound = f.sup_bound();
  for (int n : {4, 64}) {
    for (double xv : probe_ladder(-2.0, 2.0, 41)) {
      std::vector<double> x{xv};
      double inf_v = moreau_envelope(f, n, x);
      double is_v = infsup_convolution(f, n, x);
      CHECK(std::fabs(inf_v) <= bound + 1e-12);
      CHECK(std::fabs(is_v) <= bound + 1e-12);
      CHECK(inf_v <= f.eval(x) + 1e-12);
    }
  }
}

TEST_CASE("uniform approximation error is monotone in n, halving for Lipschitz data") {
  auto probes = probe_ladder(-1.2, 1.2, 41);
  auto run_ladder = [&](const CylFunction& f) {
    std::vector<double> errs;
    for (int n : {4, 16, 64, 256}) {
      double e = 0.0;
      for (double xv : probes) {
        std::vector<double> x{xv};
        e = std::max(e, std::fabs(f.eval(x) - moreau_envelope(f, n, x)));
      }
      errs.push_back(e);
    }
    return errs;
  };

  auto e_tanh = run_ladder(CylFunction::linear_tanh(1.0, 0.0, 1));
  auto e_abs = run_ladder(CylFunction::clipped_power(1.0, 1));
  auto e_holder = run_ladder(CylFunction::clipped_power(1.0 / 3.0, 1));
  for (auto* e : {&e_tanh, &e_abs, &e_holder}) {
    for (size_t i = 1; i < e->size(); ++i) {
      CHECK((*e)[i] <= (*e)[i - 1] + 1e-7);  // monotone approximation
    }
    CHECK(e->back() < e->front());
  }
  // Lipschitz data: error at most ~ L/sqrt(n), so quadrupling n at least halves it
  for (size_t i = 1; i < e_tanh.size(); ++i) {
    CHECK(e_tanh[i] <= 0.55 * e_tanh[i - 1]);
    CHECK(e_abs[i] <= 0.55 * e_abs[i - 1]);
  }
  CHECK(e_holder.back() < 0.35);  // converges, but slower than Lipschitz data
}

TEST_CASE("inf-sup convolution leaves smooth Lipschitz data nearly fixed") {
  auto f = CylFunction::linear_tanh(0.5, 0.1, 1);
  int n = 1024;
  double worst = 0.0;
  for (double xv : probe_ladder(-1.5, 1.5, 31)) {
    std::vector<double> x{xv};
    worst = std::max(worst, std::fabs(infsup_convolution(f, n, x) - f.eval(x)));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("inf-sup Lipschitz estimate grows at most like sqrt(n)") {
  auto f = CylFunction::clipped_power(1.0 / 3.0, 1);
  std::vector<double> log_n, log_L;
  double h = 1e-4;
  for (int n : {4, 16, 64, 256}) {
    double L = 0.0;
    for (double xv : {0.0, 1e-4, 1e-3, 1e-2, 0.1, -1e-3, -0.05}) {
      std::vector<double> xa{xv}, xb{xv + h};
      double d = std::fabs(infsup_convolution(f, n, xb) - infsup_convolution(f, n, xa)) / h;
      L = std::max(L, d);
    }
    CHECK(L <= 2.0 * std::sqrt(static_cast<double>(n) * f.sup_bound()));
    log_n.push_back(std::log(static_cast<double>(n)));
    log_L.push_back(std::log(L));
  }
  // asymptotic growth for a cubic-root cusp is n^{2/5}; allow the
  // pre-asymptotic transient from the smallest n on top of that
  double slope = oracle::fit_slope(log_n, log_L);
  CHECK(slope <= 0.62);
  CHECK(slope >= 0.1);  // the kink forces genuine growth
}

TEST_CASE("supports of size three need the sampled-descent flag") {
  auto f = CylFunction::quadratic_form(50.0, {1, 2, 3}, {1.0, 2.0, 3.0});
  std::vector<double> x{0.5, -0.4, 0.3};
  CHECK_THROWS(moreau_envelope(f, 8, x));
  int n = 8;
  double want = 0.0;
  std::vector<double> cs{1.0, 2.0, 3.0};
  for (size_t k = 0; k < 3; ++k) {
    double cp = 4.0 * n * cs[k] / (4.0 * n + cs[k]);
    want += 0.5 * cp * x[k] * x[k];
  }
  CHECK(moreau_envelope(f, n, x, true) == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("MollifiedFunction wraps the free functions and parses config") {
  auto base = CylFunction::clipped_power(1.0, 1);
  MollifiedFunction m(base, MollifySpec{"inf", 64});
  std::vector<double> x{0.5};
  CHECK(m.eval(x) == doctest::Approx(moreau_envelope(base, 64, x)).epsilon(1e-15));
  CHECK(m.sup_bound() == doctest::Approx(base.sup_bound()));
  CHECK(m.support() == base.support());

  MollifiedFunction ms(base, MollifySpec{"infsup", 16});
  CHECK(ms.eval(x) == doctest::Approx(infsup_convolution(base, 16, x)).epsilon(1e-15));

  auto spec = MollifySpec::from_json(nlohmann::json{{"scheme", "inf"}, {"n", 64}});
  CHECK(spec.to_json() == MollifySpec{"inf", 64}.to_json());
  CHECK_THROWS(MollifySpec::from_json(nlohmann::json{{"scheme", "gauss"}, {"n", 4}}));
  CHECK_THROWS(MollifySpec::from_json(nlohmann::json{{"scheme", "inf"}, {"n", 0}}));
  CHECK_THROWS(MollifySpec::from_json(
      nlohmann::json{{"scheme", "inf"}, {"n", 4}, {"extra", 1}}));
}
