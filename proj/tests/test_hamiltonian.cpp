#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ouhjb/hamiltonian.hpp"
#include "oracles.hpp"

using namespace ouhjb;

namespace {

double norm2(const std::vector<double>& z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return std::sqrt(s);
}

// Independent radial oracle: minimize g(r) - |z~| r by grid scan + refine.
double radial_oracle(const HamiltonianSpec& ham, const std::vector<double>& z) {
  std::vector<double> zt = z;
  if (ham.R == "diag") {
    for (size_t k = 0; k < zt.size(); ++k) zt[k] *= ham.R_diag[k];
  }
  double zn = norm2(zt);
  auto profile = [&](double r) { return ham.cost.radial(r, ham.q) - zn * r; };
  double hi = ham.K.type == "ball" ? ham.K.radius : 1.0;
  if (ham.K.type != "ball") {
    while (profile(hi) < 0.0 && hi < 1e9) hi *= 2.0;
  }
  double r = oracle::grid_refine_min(profile, 0.0, hi, 2000);
  return std::min(profile(r), 0.0);
}

// Independent box oracle: cyclic per-coordinate golden-section descent.
// The objective is jointly convex, so this converges to the global minimum.
double box_oracle(const HamiltonianSpec& ham, const std::vector<double>& z) {
  std::vector<double> zt = z;
  if (ham.R == "diag") {
    for (size_t k = 0; k < zt.size(); ++k) zt[k] *= ham.R_diag[k];
  }
  size_t n = z.size();
  auto objective = [&](const std::vector<double>& u) {
    double dot = 0.0;
    for (size_t k = 0; k < n; ++k) dot += zt[k] * u[k];
    return ham.cost.radial(norm2(u), ham.q) + dot;
  };
  std::vector<double> u(n, 0.0);
  for (int sweep = 0; sweep < 200; ++sweep) {
    for (size_t k = 0; k < n; ++k) {
      auto slice = [&](double v) {
        std::vector<double> trial = u;
        trial[k] = v;
        return objective(trial);
      };
      u[k] = oracle::golden_min(slice, -ham.K.halfwidth[k], ham.K.halfwidth[k]);
    }
  }
  return std::min(objective(u), 0.0);
}

HamiltonianSpec power_ham(double q, double coeff = 1.0) {
  HamiltonianSpec ham;
  ham.q = q;
  ham.cost.kind = "power";
  ham.cost.coeff = coeff;
  return ham;
}

}  // namespace

TEST_CASE("quadratic cost closed form: psi = -|z|^2/4") {
  auto ham = power_ham(2.0);
  std::vector<double> z{1.0, 0.0};
  CHECK(psi_eval(ham, z) == doctest::Approx(-0.25).epsilon(1e-12));
  auto grad = psi_grad(ham, z);
  auto u = gamma_argmin(ham, z);
  CHECK(grad[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(grad[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(u[0] == doctest::Approx(-0.5).epsilon(1e-12));

  std::vector<double> z2{0.3, -1.2, 0.44};
  double zn2 = 0.3 * 0.3 + 1.2 * 1.2 + 0.44 * 0.44;
  CHECK(psi_eval(ham, z2) == doctest::Approx(-zn2 / 4.0).epsilon(1e-12));
  auto g2 = psi_grad(ham, z2);
  for (size_t k = 0; k < z2.size(); ++k) {
    CHECK(g2[k] == doctest::Approx(-z2[k] / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("q = 1.5 closed form: psi = -(4/27)|z|^3") {
  auto ham = power_ham(1.5);
  std::vector<double> z{1.0, 0.0};
  CHECK(psi_eval(ham, z) == doctest::Approx(-4.0 / 27.0).epsilon(1e-12));
  std::vector<double> z2{0.6, -0.8};  // |z| = 1
  CHECK(psi_eval(ham, z2) == doctest::Approx(-4.0 / 27.0).epsilon(1e-12));
  std::vector<double> z3{3.0, 4.0};  // |z| = 5
  CHECK(psi_eval(ham, z3) == doctest::Approx(-4.0 / 27.0 * 125.0).epsilon(1e-12));
}

TEST_CASE("ball constraint clips the minimizer radius") {
  auto ham = power_ham(2.0);
  ham.K.type = "ball";
  ham.K.radius = 0.1;
  std::vector<double> z{1.0, 0.0};
  // unconstrained radius 0.5 clips to 0.1: psi = 0.01 - 0.1
  CHECK(psi_eval(ham, z) == doctest::Approx(-0.09).epsilon(1e-12));
  auto u = gamma_argmin(ham, z);
  CHECK(u[0] == doctest::Approx(-0.1).epsilon(1e-12));
  CHECK(u[1] == doctest::Approx(0.0).epsilon(1e-12));

  // small z: clip inactive, full-space value
  std::vector<double> zs{0.05, 0.0};
  CHECK(psi_eval(ham, zs) == doctest::Approx(-0.05 * 0.05 / 4.0).epsilon(1e-12));
}

TEST_CASE("power costs match the radial grid oracle") {
  std::mt19937_64 gen(42);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double q : {1.25, 1.5, 2.0, 3.0}) {
    for (double coeff : {0.5, 1.0, 2.0}) {
      auto ham = power_ham(q, coeff);
      for (int trial = 0; trial < 5; ++trial) {
        std::vector<double> z(3);
        for (auto& v : z) v = normal(gen);
        double got = psi_eval(ham, z);
        double want = radial_oracle(ham, z);
        CHECK(got == doctest::Approx(want).epsilon(1e-6));
        CHECK(got <= 1e-12);
      }
    }
  }
}

TEST_CASE("radial-poly cost matches the radial grid oracle") {
  HamiltonianSpec ham;
  ham.q = 2.0;
  ham.cost.kind = "radial-poly";
  ham.cost.rp_coeffs = {0.3, 0.7};
  ham.cost.rp_exponents = {1.0, 2.0};
  std::mt19937_64 gen(7);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int trial = 0; trial < 12; ++trial) {
    std::vector<double> z(2);
    for (auto& v : z) v = normal(gen);
    CHECK(psi_eval(ham, z) == doctest::Approx(radial_oracle(ham, z)).epsilon(1e-6));
  }
  // below the linear slope 0.3 the zero control is optimal
  std::vector<double> ztiny{0.1, 0.2};
  CHECK(psi_eval(ham, ztiny) == doctest::Approx(0.0).epsilon(1e-12));

  ham.K.type = "ball";
  ham.K.radius = 0.4;
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<double> z(2);
    for (auto& v : z) v = normal(gen);
    CHECK(psi_eval(ham, z) == doctest::Approx(radial_oracle(ham, z)).epsilon(1e-6));
  }
}

TEST_CASE("gradient matches central differences and the envelope identity") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto check_grad = [&](const HamiltonianSpec& ham, const std::vector<double>& z) {
    auto grad = psi_grad(ham, z);
    auto u = gamma_argmin(ham, z);
    for (size_t k = 0; k < z.size(); ++k) {
      auto slice = [&](double v) {
        std::vector<double> zp = z;
        zp[k] = v;
        return psi_eval(ham, zp);
      };
      double fd = (slice(z[k] + 1e-5) - slice(z[k] - 1e-5)) / 2e-5;
      CHECK(grad[k] == doctest::Approx(fd).epsilon(1e-5));
      double rk = ham.R == "diag" ? ham.R_diag[k] : 1.0;
      CHECK(grad[k] == doctest::Approx(rk * u[k]).epsilon(1e-12));
    }
  };

  for (double q : {1.5, 2.0, 3.0}) {
    auto ham = power_ham(q);
    for (int trial = 0; trial < 4; ++trial) {
      std::vector<double> z(3);
      for (auto& v : z) v = normal(gen) + (v >= 0 ? 0.5 : -0.5);
      check_grad(ham, z);
    }
  }

  auto ham_ball = power_ham(2.0);
  ham_ball.K.type = "ball";
  ham_ball.K.radius = 0.2;
  check_grad(ham_ball, {1.0, -0.7, 0.4});  // clip active
  check_grad(ham_ball, {0.1, 0.05, -0.08});  // clip inactive

  auto ham_diag = power_ham(2.0);
  ham_diag.R = "diag";
  ham_diag.R_diag = {2.0, 0.5, -1.0};
  check_grad(ham_diag, {0.4, -1.1, 0.9});
}

TEST_CASE("diag R folds onto the identity Hamiltonian") {
  auto ham = power_ham(1.5);
  ham.R = "diag";
  ham.R_diag = {2.0, 0.5};
  auto ham_id = power_ham(1.5);
  std::vector<double> z{0.7, -1.3};
  std::vector<double> zt{2.0 * 0.7, 0.5 * -1.3};
  CHECK(psi_eval(ham, z) == doctest::Approx(psi_eval(ham_id, zt)).epsilon(1e-12));
  auto u = gamma_argmin(ham, z);
  auto u_id = gamma_argmin(ham_id, zt);
  for (size_t k = 0; k < z.size(); ++k) {
    CHECK(u[k] == doctest::Approx(u_id[k]).epsilon(1e-12));
  }
}

TEST_CASE("Legendre inequality: g(u) + <z, R(u)> >= psi(z) on sampled pairs") {
  std::mt19937_64 gen(123);
  std::normal_distribution<double> normal(0.0, 1.5);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  auto ham_full = power_ham(1.5);
  auto ham_ball = power_ham(2.0);
  ham_ball.K.type = "ball";
  ham_ball.K.radius = 0.8;
  HamiltonianSpec ham_box = power_ham(2.0);
  ham_box.K.type = "box";
  ham_box.K.halfwidth = {0.4, 0.9};

  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> z{normal(gen), normal(gen)};
    // full K: any u
    {
      std::vector<double> u{2.0 * unif(gen), 2.0 * unif(gen)};
      double lhs = ham_full.cost.radial(norm2(u), ham_full.q) + z[0] * u[0] + z[1] * u[1];
      CHECK(lhs >= psi_eval(ham_full, z) - 1e-9);
    }
    // ball K: u drawn inside the ball
    {
      std::vector<double> u{unif(gen), unif(gen)};
      double un = norm2(u);
      if (un > ham_ball.K.radius) {
        for (auto& v : u) v *= ham_ball.K.radius / un;
      }
      double lhs = ham_ball.cost.radial(norm2(u), ham_ball.q) + z[0] * u[0] + z[1] * u[1];
      CHECK(lhs >= psi_eval(ham_ball, z) - 1e-9);
    }
    // box K: u drawn inside the box
    {
      std::vector<double> u{ham_box.K.halfwidth[0] * unif(gen),
                            ham_box.K.halfwidth[1] * unif(gen)};
      double lhs = ham_box.cost.radial(norm2(u), ham_box.q) + z[0] * u[0] + z[1] * u[1];
      CHECK(lhs >= psi_eval(ham_box, z) - 1e-9);
    }
  }
}

TEST_CASE("box constraint: separable quadratic closed form and convex oracle") {
  HamiltonianSpec ham = power_ham(2.0);
  ham.K.type = "box";
  ham.K.halfwidth = {0.3, 0.8};

  // q = 2 separates per coordinate: u_k = clamp(-z_k/2, +-w_k)
  std::vector<double> z{1.0, -0.5};
  double want = (0.09 - 0.3) + (0.0625 - 0.125);
  CHECK(psi_eval(ham, z) == doctest::Approx(want).epsilon(1e-9));
  auto u = gamma_argmin(ham, z);
  CHECK(u[0] == doctest::Approx(-0.3).epsilon(1e-7));
  CHECK(u[1] == doctest::Approx(0.25).epsilon(1e-7));

  std::mt19937_64 gen(99);
  std::normal_distribution<double> normal(0.0, 1.2);
  for (double q : {1.5, 2.0}) {
    HamiltonianSpec h = power_ham(q);
    h.K.type = "box";
    h.K.halfwidth = {0.3, 0.8};
    for (int trial = 0; trial < 8; ++trial) {
      std::vector<double> zr{normal(gen), normal(gen)};
      CHECK(psi_eval(h, zr) == doctest::Approx(box_oracle(h, zr)).epsilon(1e-5));
    }
  }
}

TEST_CASE("minimizer radius bound |gamma(z)| <= c_rad (1 + |z|^{p-1})") {
  for (double q : {1.25, 1.5, 2.0, 3.0}) {
    auto ham = power_ham(q, 0.7);
    double c = ham.c_rad();
    CHECK(c > 0.0);
    double pm1 = ham.p() - 1.0;
    for (double zn : {0.0, 0.01, 0.3, 1.0, 4.0, 30.0, 500.0}) {
      std::vector<double> z{zn, 0.0};
      auto u = gamma_argmin(ham, z);
      CHECK(norm2(u) <= c * (1.0 + std::pow(zn, pm1)) + 1e-12);
    }
  }
  // radial-poly: linear floor shifts the activation threshold, bound still holds
  HamiltonianSpec ham;
  ham.q = 2.0;
  ham.cost.kind = "radial-poly";
  ham.cost.rp_coeffs = {0.3, 0.7};
  ham.cost.rp_exponents = {1.0, 2.0};
  double c = ham.c_rad();
  for (double zn : {0.0, 0.2, 0.5, 2.0, 10.0, 200.0}) {
    std::vector<double> z{0.0, zn};
    auto u = gamma_argmin(ham, z);
    CHECK(norm2(u) <= c * (1.0 + zn) + 1e-12);
  }
}

TEST_CASE("JSON round trip") {
  auto ham = power_ham(1.5, 0.8);
  ham.R = "diag";
  ham.R_diag = {1.0, 2.0};
  ham.K.type = "ball";
  ham.K.radius = 0.6;
  auto back = HamiltonianSpec::from_json(ham.to_json());
  CHECK(back.to_json() == ham.to_json());
  std::vector<double> z{0.9, -0.4};
  CHECK(psi_eval(back, z) == doctest::Approx(psi_eval(ham, z)).epsilon(1e-15));

  HamiltonianSpec hp;
  hp.q = 2.0;
  hp.cost.kind = "radial-poly";
  hp.cost.rp_coeffs = {0.1, 1.0};
  hp.cost.rp_exponents = {1.5, 2.0};
  hp.K.type = "box";
  hp.K.halfwidth = {0.5, 0.5};
  CHECK(HamiltonianSpec::from_json(hp.to_json()).to_json() == hp.to_json());
}

TEST_CASE("validation rejects malformed specs") {
  CHECK_THROWS(power_ham(1.0).validate());
  CHECK_THROWS(power_ham(2.0, -1.0).validate());
  {
    HamiltonianSpec ham;
    ham.q = 2.0;
    ham.cost.kind = "radial-poly";
    ham.cost.rp_coeffs = {1.0};
    ham.cost.rp_exponents = {2.5};  // exceeds q
    CHECK_THROWS(ham.validate());
    ham.cost.rp_exponents = {1.5};  // no |u|^q term
    CHECK_THROWS(ham.validate());
    ham.cost.rp_coeffs = {1.0, -0.1};
    ham.cost.rp_exponents = {2.0, 1.0};
    CHECK_THROWS(ham.validate());
  }
  {
    auto ham = power_ham(2.0);
    ham.R = "dense";
    CHECK_THROWS(ham.validate());
    ham.R = "diag";
    CHECK_THROWS(ham.validate());  // empty diag
  }
  {
    auto ham = power_ham(2.0);
    ham.K.type = "ball";
    ham.K.radius = 0.0;
    CHECK_THROWS(ham.validate());
    ham.K.type = "box";
    ham.K.halfwidth = {0.2, -0.1};
    CHECK_THROWS(ham.validate());
    ham.K.type = "simplex";
    CHECK_THROWS(ham.validate());
  }
  {
    auto ham = power_ham(2.0);
    ham.R = "diag";
    ham.R_diag = {1.0};
    std::vector<double> z{1.0, 2.0};  // longer than the diagonal
    CHECK_THROWS(psi_eval(ham, z));
  }
  {
    nlohmann::json j = power_ham(2.0).to_json();
    j["unknown"] = 1;
    CHECK_THROWS(HamiltonianSpec::from_json(j));
  }
}
