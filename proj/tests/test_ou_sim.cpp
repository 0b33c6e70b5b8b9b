#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "ouhjb/ou_sim.hpp"
#include "ouhjb/threading.hpp"

using namespace ouhjb;

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double var_of(const std::vector<double>& v) {
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / (v.size() - 1);
}

std::vector<double> final_coord(const PathEnsemble& e, int k) {
  std::vector<double> out(e.n_paths);
  for (int p = 0; p < e.n_paths; ++p) out[p] = e.state(e.grid.steps, p, k);
  return out;
}

}  // namespace

TEST_CASE("exact sampler matches the transition law (KS, mean, variance)") {
  auto m = custom_model({{1, 1.3, 0.9}, {2, 4.0, 2.0}}, 1.0);
  std::vector<double> x0 = {0.7, -1.1};
  TimeGrid grid{0.0, 0.5, 10};
  int n = 100000;
  auto ens = sample_ou_exact(m, x0, grid, n, 42);

  for (int p = 0; p < 3; ++p) {
    CHECK(ens.state(0, p, 1) == 0.7);
    CHECK(ens.state(0, p, 2) == -1.1);
  }

  for (int k = 1; k <= 2; ++k) {
    double mu = x0[k - 1] * m.decay(k, 0.5);
    double q = ou_covariance(m, k, 0.5);
    auto xs = final_coord(ens, k);
    // KS against the exact marginal at level 0.01
    double d = oracle::ks_statistic(xs, [&](double x) {
      return oracle::std_normal_cdf((x - mu) / std::sqrt(q));
    });
    CHECK(d < 1.628 / std::sqrt(static_cast<double>(n)));
    CHECK(mean_of(xs) == doctest::Approx(mu).epsilon(0.0).scale(1.0)
                             .epsilon(4.0 * std::sqrt(q / n)));
    CHECK(var_of(xs) == doctest::Approx(q).epsilon(0.05));
  }
}

TEST_CASE("degenerate modes evolve deterministically") {
  auto m = custom_model({{1, 2.0, 0.0}, {2, 1.0, 1.0}}, 1.0);
  std::vector<double> x0 = {1.5, 0.0};
  auto ens = sample_ou_exact(m, x0, {0.0, 1.0, 4}, 50, 3);
  for (int p = 0; p < 50; ++p) {
    CHECK(ens.state(4, p, 1) == doctest::Approx(1.5 * std::exp(-2.0)).epsilon(1e-14));
  }
  CHECK(ens.noisy_modes == std::vector<int>{2});
}

TEST_CASE("constant control matches the linear ODE mean") {
  auto m = custom_model({{1, 1.7, 1.44}}, 1.0);
  std::vector<double> x0 = {0.4};
  double c = 0.8;
  DriftFn drift = [&](double, std::span<const double>, std::span<double> out) {
    out[0] = c;
  };
  auto ens = simulate_controlled(m, drift, x0, {0.0, 1.0, 20}, 200000, 11);
  // xdot = -alpha x + sqrt(lambda) c
  double expect = std::exp(-1.7) * 0.4 + std::sqrt(1.44) * c * (1 - std::exp(-1.7)) / 1.7;
  auto xs = final_coord(ens, 1);
  double stderr_ = std::sqrt(var_of(xs) / xs.size());
  CHECK(std::fabs(mean_of(xs) - expect) < 4.0 * stderr_);
}

TEST_CASE("coarsened noise reproduces fine-grid states at shared times") {
  auto m = custom_model({{1, 2.2, 1.1}, {2, 7.0, 0.3}}, 1.0);
  std::vector<double> x0 = {0.3, -0.4};
  TimeGrid fine{0.0, 1.0, 32};
  auto table = draw_noise(m, fine, 300, 99);
  auto ens_f = simulate_with_noise(m, nullptr, x0, table);
  auto table_c = coarsen_noise(m, table, 4);
  auto ens_c = simulate_with_noise(m, nullptr, x0, table_c);
  for (int p = 0; p < 300; ++p) {
    for (int i = 0; i <= 8; ++i) {
      for (int k = 1; k <= 2; ++k) {
        CHECK(ens_c.state(i, p, k) ==
              doctest::Approx(ens_f.state(4 * i, p, k)).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("controlled scheme self-converges at first order in h") {
  auto m = custom_model({{1, 1.0, 1.0}, {2, 3.0, 0.5}}, 1.0);
  std::vector<double> x0 = {0.5, 0.2};
  DriftFn drift = [](double t, std::span<const double> x, std::span<double> out) {
    out[0] = std::tanh(x[0] - x[1]) + 0.3 * std::sin(t);
    out[1] = 0.5 * std::tanh(x[1]);
  };
  TimeGrid fine{0.0, 1.0, 64};
  auto table = draw_noise(m, fine, 4000, 17);
  auto e1 = simulate_with_noise(m, &drift, x0, table);
  auto t2 = coarsen_noise(m, table, 2);
  auto e2 = simulate_with_noise(m, &drift, x0, t2);
  auto t4 = coarsen_noise(m, table, 4);
  auto e4 = simulate_with_noise(m, &drift, x0, t4);

  auto rms_gap = [&](const PathEnsemble& a, int stride_a, const PathEnsemble& b,
                     int stride_b) {
    double s = 0.0;
    for (int p = 0; p < a.n_paths; ++p) {
      for (int k = 1; k <= 2; ++k) {
        double d = a.state(a.grid.steps, p, k) - b.state(b.grid.steps, p, k);
        s += d * d;
      }
    }
    return std::sqrt(s / a.n_paths);
  };
  double g21 = rms_gap(e2, 2, e1, 1);
  double g42 = rms_gap(e4, 4, e2, 2);
  double order = std::log2(g42 / g21);
  CHECK(order > 0.9);
  CHECK(order < 1.6);
}

TEST_CASE("girsanov weights are a martingale and match drifted simulation") {
  auto m = custom_model({{1, 1.5, 1.0}, {2, 4.0, 0.8}}, 1.0);
  std::vector<double> x0 = {0.2, -0.3};
  TimeGrid grid{0.0, 1.0, 50};
  int n = 100000;
  auto ens = sample_ou_exact(m, x0, grid, n, 1234);

  std::vector<DriftFn> drifts = {
      [](double, std::span<const double>, std::span<double> g) {
        g[0] = 0.6;
        g[1] = -0.2;
      },
      [](double, std::span<const double> x, std::span<double> g) {
        g[0] = 0.5 * std::tanh(x[1]);
        g[1] = 0.4 * std::tanh(x[0] + 0.2);
      },
      [](double t, std::span<const double> x, std::span<double> g) {
        g[0] = 0.3 * std::cos(t) * std::tanh(x[0]);
        g[1] = 0.25;
      }};

  for (const auto& G : drifts) {
    auto logw = girsanov_logweight(m, ens, G, 2.0);

    std::vector<double> w(n);
    for (int p = 0; p < n; ++p) w[p] = std::exp(logw[p]);
    double wm = mean_of(w);
    double wse = std::sqrt(var_of(w) / n);
    CHECK(std::fabs(wm - 1.0) < 3.0 * wse);

    // E[rho f(X)] reweights onto the drift -sqrt(Q) G law
    DriftFn neg = [&](double t, std::span<const double> x, std::span<double> g) {
      G(t, x, g);
      for (auto& v : g) v = -v;
    };
    auto drifted = simulate_controlled(m, neg, x0, grid, n, 777);
    std::vector<double> wf(n), fd(n);
    for (int p = 0; p < n; ++p) {
      wf[p] = w[p] * std::tanh(ens.state(grid.steps, p, 1));
      fd[p] = std::tanh(drifted.state(grid.steps, p, 1));
    }
    double err = std::sqrt(var_of(wf) / n) + std::sqrt(var_of(fd) / n);
    CHECK(std::fabs(mean_of(wf) - mean_of(fd)) < 3.0 * err + 2.0 * grid.h());
  }

  DriftFn big = [](double, std::span<const double>, std::span<double> g) {
    g[0] = 5.0;
    g[1] = 0.0;
  };
  CHECK_THROWS(girsanov_logweight(m, ens, big, 2.0));
}

TEST_CASE("results do not depend on the worker count") {
  auto m = custom_model({{1, 1.0, 1.0}, {2, 2.0, 0.7}}, 1.0);
  std::vector<double> x0 = {0.1, 0.2};
  set_thread_count(1);
  auto a = sample_ou_exact(m, x0, {0.0, 1.0, 16}, 5000, 5);
  set_thread_count(4);
  auto b = sample_ou_exact(m, x0, {0.0, 1.0, 16}, 5000, 5);
  set_thread_count(0);
  CHECK(a.states == b.states);
  CHECK(a.noise.xi == b.noise.xi);

  auto c = sample_ou_exact(m, x0, {0.0, 1.0, 16}, 5000, 6);
  CHECK(a.states != c.states);
}
