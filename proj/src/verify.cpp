#include "ouhjb/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ouhjb/config.hpp"
#include "ouhjb/control.hpp"
#include "ouhjb/fbsde.hpp"
#include "ouhjb/hjb_picard.hpp"
#include "ouhjb/mollify.hpp"
#include "ouhjb/rng.hpp"
#include "ouhjb/spectral_model.hpp"
#include "ouhjb/threading.hpp"

namespace ouhjb {

namespace {

double now_minus(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

template <typename Body>
void add_check(VerificationReport& rep, const std::string& id, Body&& body) {
  CheckResult c;
  c.id = id;
  auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = std::string("aborted: ") + e.what();
  }
  c.runtime_s = now_minus(t0);
  rep.checks.push_back(std::move(c));
}

// runtime budget over the checks recorded since `first`
void add_runtime_check(VerificationReport& rep, const std::string& id,
                       std::size_t first, double budget_s) {
  CheckResult c;
  c.id = id;
  double total = 0.0;
  for (std::size_t i = first; i < rep.checks.size(); ++i) {
    total += rep.checks[i].runtime_s;
  }
  c.measured = total;
  c.tolerance = budget_s;
  c.pass = total < budget_s;
  c.detail = "wall-clock budget for the preceding group";
  rep.checks.push_back(std::move(c));
}

// ---------------------------------------------------------------------------
// small numerical helpers (independent of the library closed forms)

double simpson3(const std::function<double(double)>& f, double a, double b) {
  return (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
}

double adaptive_simpson_rec(const std::function<double(double)>& f, double a,
                            double b, double whole, double tol, int depth) {
  double c = 0.5 * (a + b);
  double left = simpson3(f, a, c);
  double right = simpson3(f, c, b);
  if (depth <= 0 || std::fabs(left + right - whole) < 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return adaptive_simpson_rec(f, a, c, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, c, b, right, 0.5 * tol, depth - 1);
}

double adaptive_simpson(const std::function<double(double)>& f, double a,
                        double b, double tol, int depth = 40) {
  return adaptive_simpson_rec(f, a, b, simpson3(f, a, b), tol, depth);
}

double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

double golden_min(const std::function<double(double)>& f, double a, double b,
                  double tol = 1e-12) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

double grid_refine_min(const std::function<double(double)>& f, double a,
                       double b, int n_grid = 800) {
  double best_x = a, best_v = f(a);
  for (int i = 1; i <= n_grid; ++i) {
    double x = a + (b - a) * i / n_grid;
    double v = f(x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
  }
  double cell = (b - a) / n_grid;
  double x = golden_min(f, std::max(a, best_x - cell), std::min(b, best_x + cell));
  return f(x);
}

std::vector<double> tridiag_solve(std::vector<double> a, std::vector<double> b,
                                  std::vector<double> c, std::vector<double> r) {
  std::size_t n = b.size();
  for (std::size_t i = 1; i < n; ++i) {
    double m = a[i] / b[i - 1];
    b[i] -= m * c[i - 1];
    r[i] -= m * r[i - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = r[n - 1] / b[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = (r[i] - c[i] * x[i + 1]) / b[i];
  return x;
}

// 1-mode value PDE v_t - alpha x v_x + (lambda/2) v_xx - (lambda/4)(v_x)^2 = 0
// marched in remaining time with Crank-Nicolson on the linear part and a
// predictor-corrector midpoint for the gradient square.
std::vector<double> cn_quadratic_solve(double alpha, double lambda,
                                       double tau_end,
                                       const std::function<double(double)>& phi,
                                       double L, int n_pts, int n_steps,
                                       std::vector<double>& xs) {
  double dx = 2.0 * L / (n_pts - 1);
  double dtau = tau_end / n_steps;
  xs.resize(n_pts);
  std::vector<double> v(n_pts);
  for (int i = 0; i < n_pts; ++i) {
    xs[i] = -L + i * dx;
    v[i] = phi(xs[i]);
  }
  std::vector<double> lo(n_pts, 0.0), di(n_pts, 0.0), hi(n_pts, 0.0);
  for (int i = 1; i + 1 < n_pts; ++i) {
    lo[i] = alpha * xs[i] / (2.0 * dx) + 0.5 * lambda / (dx * dx);
    di[i] = -lambda / (dx * dx);
    hi[i] = -alpha * xs[i] / (2.0 * dx) + 0.5 * lambda / (dx * dx);
  }
  auto grad_sq = [&](const std::vector<double>& u, std::vector<double>& out) {
    out.assign(n_pts, 0.0);
    for (int i = 1; i + 1 < n_pts; ++i) {
      double g = (u[i + 1] - u[i - 1]) / (2.0 * dx);
      out[i] = -0.25 * lambda * g * g;
    }
  };
  std::vector<double> rhs(n_pts), nl0(n_pts), nl1(n_pts), a(n_pts), b(n_pts),
      c(n_pts);
  for (int s = 0; s < n_steps; ++s) {
    grad_sq(v, nl0);
    std::vector<double> cur = v;
    for (int pass = 0; pass < 2; ++pass) {
      grad_sq(cur, nl1);
      for (int i = 0; i < n_pts; ++i) {
        a[i] = -0.5 * dtau * lo[i];
        b[i] = 1.0 - 0.5 * dtau * di[i];
        c[i] = -0.5 * dtau * hi[i];
      }
      for (int i = 1; i + 1 < n_pts; ++i) {
        double lin = lo[i] * v[i - 1] + di[i] * v[i] + hi[i] * v[i + 1];
        rhs[i] = v[i] + 0.5 * dtau * lin + 0.5 * dtau * (nl0[i] + nl1[i]);
      }
      a[0] = c[0] = 0.0;
      b[0] = 1.0;
      rhs[0] = v[0];
      a[n_pts - 1] = c[n_pts - 1] = 0.0;
      b[n_pts - 1] = 1.0;
      rhs[n_pts - 1] = v[n_pts - 1];
      cur = tridiag_solve(a, b, c, rhs);
    }
    v = cur;
  }
  return v;
}

double lerp_at(const std::vector<double>& xs, const std::vector<double>& vs,
               double x) {
  double dx = xs[1] - xs[0];
  int i = static_cast<int>(std::floor((x - xs[0]) / dx));
  double f = (x - xs[i]) / dx;
  return (1.0 - f) * vs[i] + f * vs[i + 1];
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / v.size();
}

double sem_of(const std::vector<double>& v) {
  double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

// shared pinned setups

HamiltonianSpec quadratic_ham() {
  HamiltonianSpec ham;
  ham.q = 2.0;
  ham.cost.kind = "power";
  ham.cost.coeff = 1.0;
  return ham;
}

SpectralModel two_mode_model(double T = 0.5) {
  return custom_model({{1, 0.8, 1.0}, {2, 2.0, 0.5}}, T);
}

SpectralModel five_mode_model() {
  std::vector<ModeSpec> modes;
  for (int k = 1; k <= 5; ++k) modes.push_back({k, 0.4 * k, 1.0 / k});
  return custom_model(std::move(modes), 1.0);
}

// ---------------------------------------------------------------------------
// spectral suite: covariance closed form, smoothing rate, gradient identity

void suite_spectral(VerificationReport& rep, std::uint64_t seed) {
  std::size_t group = rep.checks.size();
  add_check(rep, "ou-covariance-vs-quadrature", [&](CheckResult& c) {
    SpectralModel m = heat_preset(1.0, 64, {"white", 1.0, 0.0}, 1.0);
    PathStream ps(seed, 11);
    double worst = 0.0;
    for (int i = 0; i < 50; ++i) {
      int k = 1 + static_cast<int>(ps.uniform() * 64.0);
      k = std::min(k, 64);
      double t = 1e-3 * std::pow(2000.0, ps.uniform());  // 1e-3 .. 2
      double alpha = m.mode(k).alpha, lambda = m.mode(k).lambda;
      double cap = std::min(t, 20.0 / alpha);
      double quad = adaptive_simpson(
          [&](double s) { return lambda * std::exp(-2.0 * alpha * s); }, 0.0,
          cap, 1e-13 * lambda * cap);
      double cov = ou_covariance(m, k, t);
      worst = std::max(worst, std::fabs(cov - quad) / quad);
    }
    c.measured = worst;
    c.tolerance = 1e-10;
    c.pass = worst <= c.tolerance;
    c.detail = "max relative error over 50 random (mode, t)";
  });
  add_runtime_check(rep, "covariance-runtime", group, 1.0);

  group = rep.checks.size();
  double slope_lo = -0.55, slope_hi = -0.45;
  add_check(rep, "smoothing-envelope-min", [&](CheckResult& c) {
    SpectralModel m = heat_preset(1.0, 200, {"white", 1.0, 0.0}, 1.0);
    double lo = 1e300, hi = 0.0;
    std::vector<double> lt, ln;
    for (int i = 0; i <= 20; ++i) {
      double t = 1e-4 * std::pow(100.0, i / 20.0);
      double norm = smoothing_norm(m, t);
      double v = std::sqrt(t) * norm;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      lt.push_back(std::log(t));
      ln.push_back(std::log(norm));
    }
    c.measured = lo;
    c.tolerance = 0.8;
    c.pass = lo >= 0.8;
    c.detail = "min of sqrt(t) * smoothing_norm over t in [1e-4, 1e-2]";
    CheckResult cmax;
    cmax.id = "smoothing-envelope-max";
    cmax.measured = hi;
    cmax.tolerance = 1.05;
    cmax.pass = hi <= 1.05;
    cmax.detail = "max of sqrt(t) * smoothing_norm over the same grid";
    rep.checks.push_back(cmax);
    CheckResult cs;
    cs.id = "smoothing-slope";
    cs.measured = fit_slope(lt, ln);
    cs.tolerance = 0.05;
    cs.pass = cs.measured >= slope_lo && cs.measured <= slope_hi;
    cs.detail = "log-log slope of the norm; must lie in [-0.55, -0.45]";
    rep.checks.push_back(cs);
  });
  add_runtime_check(rep, "smoothing-runtime", group, 1.0);

  group = rep.checks.size();
  SpectralModel gm = two_mode_model(0.5);
  std::vector<CylFunction> catalog{
      CylFunction::linear_tanh(0.9, -0.2, 1),
      CylFunction::linear_tanh(-0.7, 0.1, 2),
      CylFunction::product({CylFunction::linear_tanh(0.8, 0.0, 1),
                            CylFunction::linear_tanh(0.5, 0.3, 2)}),
      CylFunction::quadratic_form(1.5, {1, 2}, {0.6, 0.4}),
      CylFunction::sum({0.5, 0.5}, {CylFunction::linear_tanh(1.2, 0.4, 1),
                                    CylFunction::clipped_power(0.5, 2)})};
  std::vector<double> gx{0.3, -0.4}, gxi{0.7, -0.5};
  const double gdt = 0.3;
  QuadSpec gq;
  gq.gh_nodes = 21;
  add_check(rep, "gradient-identity-quadrature", [&](CheckResult& c) {
    double worst = 0.0;
    const double eps = 1e-5;
    for (const CylFunction& fn : catalog) {
      Integrand f = make_integrand(fn);
      std::vector<double> xp = gx, xm = gx;
      for (int k = 0; k < 2; ++k) {
        double step = eps * std::sqrt(gm.mode(k + 1).lambda) * gxi[k];
        xp[k] += step;
        xm[k] -= step;
      }
      double fd = (apply_semigroup(gm, gdt, f, xp, gq) -
                   apply_semigroup(gm, gdt, f, xm, gq)) /
                  (2.0 * eps);
      double gr = apply_grad_semigroup(gm, gdt, f, gx, gxi, gq);
      worst = std::max(worst, std::fabs(gr - fd) / (1.0 + std::fabs(fd)));
    }
    c.measured = worst;
    c.tolerance = 1e-4;
    c.pass = worst <= c.tolerance;
    c.detail = "directional derivative vs central difference, 5 catalog functions";
  });
  add_check(rep, "gradient-identity-mc", [&](CheckResult& c) {
    const int n = 1000000;
    double q1 = ou_covariance(gm, 1, gdt), q2 = ou_covariance(gm, 2, gdt);
    std::vector<double> mean{gm.decay(1, gdt) * gx[0], gm.decay(2, gdt) * gx[1]};
    double worst = 0.0;
    for (std::size_t i = 0; i < catalog.size(); ++i) {
      Integrand f = make_integrand(catalog[i]);
      double ref = apply_grad_semigroup(gm, gdt, f, gx, gxi, gq);
      PathStream ps(seed, 40 + i);
      double acc = 0.0;
      std::vector<double> z(2), y(2);
      for (int s = 0; s < n; ++s) {
        z[0] = std::sqrt(q1) * ps.normal();
        z[1] = std::sqrt(q2) * ps.normal();
        y[0] = mean[0] + z[0];
        y[1] = mean[1] + z[1];
        acc += f.fn(y) * grad_kernel_weight(gm, gdt, gxi, z);
      }
      worst = std::max(worst, std::fabs(acc / n - ref));
    }
    c.measured = worst;
    c.tolerance = 1e-2;
    c.pass = worst <= c.tolerance;
    c.detail = "score-weighted Monte Carlo with 1e6 samples per function";
  });
  add_runtime_check(rep, "gradient-runtime", group, 30.0);
}

// ---------------------------------------------------------------------------
// hamiltonian suite: closed form vs scan oracle, Legendre, minimizer radius

void suite_hamiltonian(VerificationReport& rep, std::uint64_t seed) {
  std::size_t group = rep.checks.size();
  const std::vector<double> qs{1.25, 1.5, 2.0};
  // z draws shared between the oracle and radius checks
  auto draw_z = [&](PathStream& ps) {
    double scale = std::pow(10.0, -1.0 + 2.0 * ps.uniform());  // 0.1 .. 10
    std::vector<double> z(3);
    for (double& v : z) v = scale * ps.normal();
    return z;
  };
  for (std::size_t qi = 0; qi < qs.size(); ++qi) {
    double q = qs[qi];
    char id[64];
    std::snprintf(id, sizeof id, "psi-vs-scan-oracle-q%.4g", q);
    add_check(rep, id, [&](CheckResult& c) {
      HamiltonianSpec ham = quadratic_ham();
      ham.q = q;
      PathStream ps(seed, 100 + qi);
      double worst = 0.0, worst_radius = 0.0;
      for (int i = 0; i < 100; ++i) {
        std::vector<double> z = draw_z(ps);
        double zn = std::sqrt(z[0] * z[0] + z[1] * z[1] + z[2] * z[2]);
        // radial reduction: the infimum sits at u = -r z/|z|
        double rstar = std::pow(zn / q, 1.0 / (q - 1.0));
        double rmax = 2.0 * rstar + 1.0;
        double oracle = grid_refine_min(
            [&](double r) { return ham.cost.radial(r, q) - zn * r; }, 0.0, rmax);
        worst = std::max(worst, std::fabs(psi_eval(ham, z) - oracle));
        auto u = gamma_argmin(ham, z);
        double un = 0.0;
        for (double v : u) un += v * v;
        un = std::sqrt(un);
        double bound =
            ham.c_rad() * (1.0 + std::pow(zn, ham.p() - 1.0)) * (1.0 + 1e-9);
        worst_radius = std::max(worst_radius, un / bound);
      }
      c.measured = worst;
      c.tolerance = 1e-6;
      c.pass = worst <= c.tolerance && worst_radius <= 1.0;
      char d[96];
      std::snprintf(d, sizeof d,
                    "100 random z; worst minimizer-radius ratio %.3f", worst_radius);
      c.detail = d;
    });
  }
  add_check(rep, "legendre-inequality", [&](CheckResult& c) {
    double worst = 1e300;
    for (std::size_t qi = 0; qi < qs.size(); ++qi) {
      HamiltonianSpec ham = quadratic_ham();
      ham.q = qs[qi];
      PathStream ps(seed, 200 + qi);
      for (int i = 0; i < 10000; ++i) {
        std::vector<double> z = draw_z(ps), u = draw_z(ps);
        double dot = 0.0, un = 0.0;
        for (int k = 0; k < 3; ++k) {
          dot += z[k] * u[k];
          un += u[k] * u[k];
        }
        un = std::sqrt(un);
        double bracket = -psi_eval(ham, z) + dot + ham.cost.radial(un, ham.q);
        worst = std::min(worst, bracket);
      }
    }
    c.measured = worst;
    c.tolerance = -1e-9;
    c.pass = worst >= c.tolerance;
    c.detail = "min of -psi(z) + <z,u> + g(u) over 1e4 random pairs per exponent";
  });
  add_runtime_check(rep, "hamiltonian-runtime", group, 10.0);
}

// ---------------------------------------------------------------------------
// solvers suite: quadratic benchmark, contraction, Girsanov, representation

void suite_solvers(VerificationReport& rep, std::uint64_t seed) {
  std::size_t group = rep.checks.size();
  add_check(rep, "hopf-cole-vs-crank-nicolson", [&](CheckResult& c) {
    double alpha = 0.8, lambda = 1.0, T = 0.6;
    SpectralModel model = custom_model({{1, alpha, lambda}}, T);
    HamiltonianSpec ham = quadratic_ham();
    CylFunction phi = CylFunction::linear_tanh(0.9, -0.2, 1);
    std::vector<double> xs;
    std::vector<double> v_cn = cn_quadratic_solve(
        alpha, lambda, T,
        [&](double x) {
          std::vector<double> xv{x};
          return phi.eval(xv);
        },
        5.0, 1601, 1200, xs);
    double worst = 0.0;
    for (double x : {0.0, 0.5, -0.5, 1.5, -1.5}) {
      std::vector<double> xv{x};
      double ref = hopf_cole_reference(model, ham, phi, 0.0, xv);
      worst = std::max(worst, std::fabs(ref - lerp_at(xs, v_cn, x)));
    }
    c.measured = worst;
    c.tolerance = 1e-3;
    c.pass = worst <= c.tolerance;
    c.detail = "exponential-transform reference vs a nonlinear grid solve";
  });

  // quadratic benchmark on five modes: both solvers against the reference
  SpectralModel m5 = five_mode_model();
  HamiltonianSpec ham = quadratic_ham();
  CylFunction phi_cyl = CylFunction::linear_tanh(1.0, 0.0, 1);
  TerminalData phi = TerminalData::from_cyl(phi_cyl);
  std::vector<std::vector<double>> probes;
  {
    PathStream ps(seed, 7);
    auto sd = m5.stationary_std();
    for (int j = 0; j < 20; ++j) {
      std::vector<double> x(5);
      for (int k = 0; k < 5; ++k) x[k] = 0.8 * sd[k] * ps.normal();
      probes.push_back(std::move(x));
    }
  }
  std::vector<double> hc(probes.size());
  for (std::size_t j = 0; j < probes.size(); ++j) {
    hc[j] = hopf_cole_reference(m5, ham, phi_cyl, 0.0, probes[j]);
  }
  std::optional<ValueField> field5;
  PicardReport report5;
  add_check(rep, "mild-solve-vs-hopf-cole", [&](CheckResult& c) {
    PicardParams params;
    params.m = 1;
    params.degree = 8;
    params.probe_nodes = 9;
    field5.emplace(solve_mild(m5, ham, phi, nullptr, params, &report5));
    double worst = 0.0;
    for (std::size_t j = 0; j < probes.size(); ++j) {
      worst = std::max(worst, std::fabs(field5->eval_v(0.0, probes[j]) - hc[j]));
    }
    c.measured = worst;
    c.tolerance = 2e-2;
    c.pass = worst <= c.tolerance;
    c.detail = "value at 20 probe starts, tanh data on five modes";
  });
  add_check(rep, "regression-solve-vs-hopf-cole", [&](CheckResult& c) {
    BSDEParams prm;
    prm.m = 1;
    prm.degree = 6;
    double worst = 0.0;
    for (std::size_t j = 0; j < probes.size(); ++j) {
      BSDESolution sol = solve_bsde(m5, &ham, phi, nullptr, 0.0, probes[j], 50,
                                    100000, stream_id(seed, 300 + j), prm);
      worst = std::max(worst, std::fabs(sol.y0 - hc[j]));
    }
    c.measured = worst;
    c.tolerance = 2e-2;
    c.pass = worst <= c.tolerance;
    c.detail = "h = 1/50, 1e5 paths per start, same 20 probe starts";
  });
  add_check(rep, "picard-window-ratios", [&](CheckResult& c) {
    double worst = 0.0;
    bool all = !report5.windows.empty();
    for (const WindowReport& w : report5.windows) {
      all = all && w.converged;
      for (double r : w.ratios) worst = std::max(worst, r);
    }
    c.measured = worst;
    c.tolerance = 1.0;
    c.pass = all && worst < 1.0;
    c.detail = "every window contracts with successive-iterate ratio < 1";
  });
  add_check(rep, "picard-iterate-ball", [&](CheckResult& c) {
    c.measured = report5.ball_norm;
    c.tolerance = report5.R0;
    c.pass = report5.ball_ok && report5.ball_norm <= report5.R0;
    c.detail = "iterates stay in the a priori ball of radius R0";
  });
  add_check(rep, "value-apriori-bound", [&](CheckResult& c) {
    SpectralModel m2 = two_mode_model(0.5);
    TerminalData p2 = TerminalData::from_cyl(CylFunction::linear_tanh(0.9, -0.2, 1));
    TerminalData l2 = TerminalData::from_cyl(CylFunction::linear_tanh(0.5, 0.1, 1));
    PicardParams params;
    params.m = 2;
    params.degree = 4;
    ValueField f2 = solve_mild(m2, ham, p2, &l2, params, nullptr);
    double bound = p2.sup_bound + m2.T * l2.sup_bound;
    auto sd = m2.stationary_std();
    double sup = 0.0;
    for (double t : {0.0, 0.125, 0.25, 0.375, 0.5}) {
      for (int i = -2; i <= 2; ++i) {
        for (int j = -2; j <= 2; ++j) {
          std::vector<double> x{1.2 * sd[0] * i / 2.0, 1.2 * sd[1] * j / 2.0};
          sup = std::max(sup, std::fabs(f2.eval_v(t, x)));
        }
      }
    }
    c.measured = sup;
    c.tolerance = bound;
    c.pass = sup <= bound;
    c.detail = "sup |v| on probes vs sup|phi| + T sup|l|";
  });
  add_runtime_check(rep, "benchmark-runtime", group, 600.0);

  group = rep.checks.size();
  add_check(rep, "girsanov-weight-mean", [&](CheckResult& c) {
    SpectralModel m = custom_model({{1, 1.5, 1.0}, {2, 4.0, 0.8}}, 1.0);
    std::vector<double> x0{0.2, -0.3};
    TimeGrid grid{0.0, 1.0, 50};
    const int n = 20000;
    auto ens = sample_ou_exact(m, x0, grid, n, stream_id(seed, 400));
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
    double worst_mean = 0.0, worst_agree = 0.0;
    for (std::size_t di = 0; di < drifts.size(); ++di) {
      auto logw = girsanov_logweight(m, ens, drifts[di], 2.0);
      std::vector<double> w(n);
      for (int p = 0; p < n; ++p) w[p] = std::exp(logw[p]);
      worst_mean = std::max(worst_mean, std::fabs(mean_of(w) - 1.0) / sem_of(w));

      DriftFn neg = [&](double t, std::span<const double> x, std::span<double> g) {
        drifts[di](t, x, g);
        for (auto& v : g) v = -v;
      };
      auto drifted =
          simulate_controlled(m, neg, x0, grid, n, stream_id(seed, 410 + di));
      std::vector<double> wf(n), fd(n);
      for (int p = 0; p < n; ++p) {
        wf[p] = w[p] * std::tanh(ens.state(grid.steps, p, 1));
        fd[p] = std::tanh(drifted.state(grid.steps, p, 1));
      }
      double se = std::sqrt(sem_of(wf) * sem_of(wf) + sem_of(fd) * sem_of(fd));
      worst_agree =
          std::max(worst_agree, std::fabs(mean_of(wf) - mean_of(fd)) / se);
    }
    c.measured = worst_mean;
    c.tolerance = 3.0;
    c.pass = worst_mean <= 3.0;
    c.detail = "|E[weight] - 1| in combined-standard-error units, 3 drifts";
    CheckResult ca;
    ca.id = "girsanov-vs-drifted-simulation";
    ca.measured = worst_agree;
    ca.tolerance = 3.0;
    ca.pass = worst_agree <= 3.0;
    ca.detail = "weighted expectation vs drifted simulation, 3 bounded drifts";
    rep.checks.push_back(ca);
  });
  add_check(rep, "equivalent-representation", [&](CheckResult& c) {
    SpectralModel m2 = two_mode_model(0.5);
    CylFunction phi2 = CylFunction::linear_tanh(0.9, -0.2, 1);
    TerminalData p2 = TerminalData::from_cyl(phi2);
    PicardParams params;
    params.m = 2;
    params.degree = 6;
    ValueField f2 = solve_mild(m2, quadratic_ham(), p2, nullptr, params, nullptr);
    std::vector<double> x{0.3, -0.2};
    const int n_steps = 32;
    RepresentationReport r = equivalent_representation_check(
        f2, m2, quadratic_ham(), p2, nullptr, 0.0, x, n_steps, 20000,
        stream_id(seed, 500));
    const double kappa = 0.1;
    c.measured = std::fabs(r.residual);
    c.tolerance = 3.0 * (r.std_error + kappa * m2.T / n_steps);
    c.pass = c.measured <= c.tolerance;
    c.detail = "drifted plain expectation reproduces the field value";
  });
  add_runtime_check(rep, "measure-change-runtime", group, 600.0);
}

// ---------------------------------------------------------------------------
// control suite: fundamental relation along synthesized and perturbed policies

void suite_control(VerificationReport& rep, std::uint64_t seed) {
  std::size_t group = rep.checks.size();
  SpectralModel model = custom_model({{1, 1.0, 1.0}}, 0.5);
  HamiltonianSpec ham = quadratic_ham();
  ControlProblem problem;
  problem.model = model;
  problem.ham = ham;
  problem.phi = TerminalData::from_cyl(CylFunction::linear_tanh(0.9, -0.2, 1));
  problem.t = 0.0;
  problem.x = {0.3};
  const int n_steps = 20, n_paths = 40000;
  const double kappa = 0.1, h = model.T / n_steps;

  std::optional<ValueField> field;
  double min_integrand = 1e300;
  add_check(rep, "feedback-cost-gap", [&](CheckResult& c) {
    PicardParams params;
    params.m = 1;
    params.degree = 6;
    params.probe_nodes = 7;
    field.emplace(solve_mild(model, ham, problem.phi, nullptr, params, nullptr));
    FeedbackPolicy fb = synthesize_feedback(*field, ham, 0.0);
    CostReport cost = evaluate_cost(problem, fb, n_steps, n_paths,
                                    stream_id(seed, 600), &*field);
    GapReport gap = fundamental_gap(problem, fb, *field, n_steps, n_paths,
                                    stream_id(seed, 600));
    min_integrand = std::min(min_integrand, gap.min_integrand);
    c.measured = std::fabs(*cost.gap);
    c.tolerance = 3.0 * (cost.gap_std_error + kappa * h);
    c.pass = c.measured <= c.tolerance;
    c.detail = "|J - v| for the synthesized feedback";
  });
  add_check(rep, "perturbed-policy-dominance", [&](CheckResult& c) {
    if (!field) throw std::runtime_error("field solve did not run");
    FeedbackPolicy fb = synthesize_feedback(*field, ham, 0.0);
    const std::vector<double> tilts{0.05, -0.05, 0.1,  -0.1, 0.15,
                                    -0.15, 0.2,  -0.2, 0.3,  -0.3};
    double worst_margin = 1e300;
    for (std::size_t i = 0; i < tilts.size(); ++i) {
      FeedbackPolicy p = tilt_policy(fb, {tilts[i]});
      CostReport cost = evaluate_cost(problem, p, n_steps, n_paths,
                                      stream_id(seed, 610 + i), &*field);
      GapReport gap = fundamental_gap(problem, p, *field, n_steps, n_paths,
                                      stream_id(seed, 610 + i));
      min_integrand = std::min(min_integrand, gap.min_integrand);
      worst_margin =
          std::min(worst_margin, *cost.gap + 2.0 * cost.gap_std_error);
    }
    c.measured = worst_margin;
    c.tolerance = 0.0;
    c.pass = worst_margin >= 0.0;
    c.detail = "min over 10 tilted policies of J - v + 2 stderr";
  });
  add_check(rep, "gap-integrand-nonnegative", [&](CheckResult& c) {
    if (!field) throw std::runtime_error("field solve did not run");
    c.measured = min_integrand;
    c.tolerance = -1e-9;
    c.pass = min_integrand >= c.tolerance;
    c.detail = "most negative sampled bracket across all policies (hard bound)";
  });
  add_runtime_check(rep, "control-runtime", group, 600.0);
}

// ---------------------------------------------------------------------------
// blowup suite: gradient profile near the horizon

void suite_blowup(VerificationReport& rep, std::uint64_t seed) {
  SpectralModel m1 = custom_model({{1, 0.6, 0.5}}, 0.6);
  HamiltonianSpec ham = quadratic_ham();
  BSDEParams prm;
  prm.m = 1;
  std::vector<double> gaps{0.5, 0.32, 0.2, 0.12, 0.07, 0.04, 0.02, 0.01};
  std::vector<double> tl;
  for (double g : gaps) tl.push_back(m1.T - g);
  std::vector<std::vector<double>> probes;
  for (double p : {0.0, 0.05, -0.05, 0.1, -0.1, 0.2, -0.2, 0.4, -0.4, 0.7, -0.7}) {
    probes.push_back({p});
  }
  add_check(rep, "kink-gradient-slope", [&](CheckResult& c) {
    TerminalData phi = TerminalData::from_cyl(CylFunction::clipped_power(1.0 / 3.0, 1));
    ZProfile prof = z_profile(m1, &ham, phi, nullptr, tl, probes, 12, 20000,
                              stream_id(seed, 700), prm);
    c.measured = prof.slope;
    c.tolerance = 0.15;
    c.pass = prof.slope >= -0.65 && prof.slope <= -0.35;
    c.detail = "log sup|Z| vs log(T-t) slope for cube-root data; range [-0.65, -0.35]";
  });
  add_check(rep, "lipschitz-gradient-slope", [&](CheckResult& c) {
    TerminalData phi = TerminalData::from_cyl(CylFunction::linear_tanh(1.0, 0.0, 1));
    ZProfile prof = z_profile(m1, &ham, phi, nullptr, tl, probes, 12, 20000,
                              stream_id(seed, 701), prm);
    c.measured = std::fabs(prof.slope);
    c.tolerance = 0.15;
    c.pass = c.measured < 0.15;
    c.detail = "|slope| for tanh data stays flat on the same gap range";
  });
}

// ---------------------------------------------------------------------------
// stability suite: terminal perturbations under shared noise

void suite_stability(VerificationReport& rep, std::uint64_t seed) {
  SpectralModel model = two_mode_model(0.5);
  HamiltonianSpec ham = quadratic_ham();
  BSDEParams prm;
  prm.m = 2;
  std::vector<double> x{0.3, -0.4};
  std::vector<double> tl{0.0, 0.2, 0.4};
  add_check(rep, "constant-shift-exactness", [&](CheckResult& c) {
    TerminalData a = TerminalData::from_cyl(CylFunction::linear_tanh(0.9, -0.2, 1));
    TerminalData b = TerminalData::from_cyl(CylFunction::sum(
        {1.0, 1.0},
        {CylFunction::linear_tanh(0.9, -0.2, 1), CylFunction::constant(0.4)}));
    StabilityReport r = terminal_stability(model, &ham, a, b, tl, x, 16, 8000,
                                           stream_id(seed, 800), prm);
    c.measured = r.ratio;
    c.tolerance = 1e-10;
    c.pass = r.ratio <= c.tolerance && std::fabs(r.diff_norm - 0.4) <= 1e-12;
    c.detail = "a constant shift moves the value only: the Z ratio vanishes";
  });
  add_check(rep, "mollified-ladder-spread", [&](CheckResult& c) {
    CylFunction kink = CylFunction::clipped_power(0.5, 1);
    std::vector<int> ladder{4, 16, 64, 256};
    double rmin = 1e300, rmax = 0.0;
    std::ostringstream d;
    d.precision(4);
    d << "weighted ratios per rung pair:";
    for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
      TerminalData fa = TerminalData::from_mollified(
          MollifiedFunction(kink, MollifySpec{"inf", ladder[i]}));
      TerminalData fb = TerminalData::from_mollified(
          MollifiedFunction(kink, MollifySpec{"inf", ladder[i + 1]}));
      StabilityReport r = terminal_stability(model, &ham, fa, fb, tl, x, 16,
                                             20000, stream_id(seed, 801), prm);
      rmin = std::min(rmin, r.ratio);
      rmax = std::max(rmax, r.ratio);
      d << ' ' << r.ratio;
    }
    c.measured = rmax / rmin;
    c.tolerance = 3.0;
    c.pass = c.measured <= c.tolerance && rmin > 0.0;
    c.detail = d.str();
  });
}

}  // namespace

// ---------------------------------------------------------------------------

bool VerificationReport::all_pass() const {
  for (const CheckResult& c : checks) {
    if (!c.pass) return false;
  }
  return true;
}

nlohmann::json VerificationReport::to_json() const {
  nlohmann::json j;
  j["suite"] = suite;
  j["seed"] = seed;
  j["all_pass"] = all_pass();
  nlohmann::json rows = nlohmann::json::array();
  for (const CheckResult& c : checks) {
    rows.push_back({{"id", c.id},
                    {"status", c.pass ? "pass" : "fail"},
                    {"measured", c.measured},
                    {"tolerance", c.tolerance},
                    {"runtime_s", c.runtime_s},
                    {"detail", c.detail}});
  }
  j["checks"] = rows;
  return j;
}

std::string VerificationReport::table() const {
  std::ostringstream os;
  os << "suite " << suite << "  seed " << seed << "\n";
  int n_pass = 0;
  for (const CheckResult& c : checks) {
    char line[256];
    std::snprintf(line, sizeof line, "  [%s] %-34s measured %12.5g  tol %12.5g  (%.2f s)\n",
                  c.pass ? "PASS" : "FAIL", c.id.c_str(), c.measured, c.tolerance,
                  c.runtime_s);
    os << line;
    if (!c.pass) os << "         " << c.detail << "\n";
    n_pass += c.pass ? 1 : 0;
  }
  os << "summary " << n_pass << "/" << checks.size() << " passed\n";
  return os.str();
}

const std::vector<std::string>& suite_tags() {
  static const std::vector<std::string> tags{"spectral",  "hamiltonian", "solvers",
                                             "control",   "blowup",      "stability"};
  return tags;
}

VerificationReport run_suite(const std::string& tag, std::uint64_t seed) {
  VerificationReport rep;
  rep.suite = tag;
  rep.seed = seed;
  if (tag == "spectral") {
    suite_spectral(rep, seed);
  } else if (tag == "hamiltonian") {
    suite_hamiltonian(rep, seed);
  } else if (tag == "solvers") {
    suite_solvers(rep, seed);
  } else if (tag == "control") {
    suite_control(rep, seed);
  } else if (tag == "blowup") {
    suite_blowup(rep, seed);
  } else if (tag == "stability") {
    suite_stability(rep, seed);
  } else {
    throw std::invalid_argument("verify: unknown suite '" + tag +
                                "' (expected spectral, hamiltonian, solvers, "
                                "control, blowup, or stability)");
  }
  return rep;
}

CheckResult determinism_check(std::uint64_t seed) {
  CheckResult c;
  c.id = "artifact-bytes-thread-invariance";
  auto t0 = std::chrono::steady_clock::now();
  nlohmann::json cfg_j = {
      {"model",
       {{"preset", "custom"},
        {"modes", nlohmann::json::array({{{"k", 1}, {"alpha", 0.8}, {"lambda", 1.0}},
                                         {{"k", 2}, {"alpha", 2.0}, {"lambda", 0.5}}})},
        {"T", 0.5}}},
      {"hamiltonian", {{"q", 2.0}, {"cost", "power"}, {"coeff", 1.0}}},
      {"terminal",
       {{"fn", {{"family", "linear-tanh"}, {"a", 0.9}, {"b", -0.2}, {"mode", 1}}}}},
      {"start", {{"t", 0.0}, {"x", {0.3, -0.4}}}},
      {"picard", {{"degree", 4}, {"modes", 2}}},
      {"bsde", {{"h", 0.05}, {"n_paths", 4000}, {"modes", 2}, {"degree", 4}}},
      {"control", {{"h", 0.05}, {"n_paths", 4000}}},
      {"seed", seed}};
  int saved = thread_count();
  auto run_once = [&](int threads) {
    set_thread_count(threads);
    ExperimentConfig cfg = ExperimentConfig::from_json(cfg_j);
    FieldArtifact fa = build_field_artifact(cfg);
    std::vector<std::string> texts;
    texts.push_back(artifact_text(fa.json));
    texts.push_back(artifact_text(build_bsde_artifact(cfg)));
    texts.push_back(artifact_text(build_control_artifact(cfg, fa.json, "feedback")));
    return texts;
  };
  try {
    auto a = run_once(1);
    auto b = run_once(4);
    int mismatches = 0;
    for (std::size_t i = 0; i < a.size(); ++i) mismatches += a[i] != b[i] ? 1 : 0;
    c.measured = mismatches;
    c.tolerance = 0.0;
    c.pass = mismatches == 0;
    c.detail = "field/bsde/report bytes with 1 worker vs 4 workers";
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = std::string("aborted: ") + e.what();
  }
  set_thread_count(saved);
  c.runtime_s = now_minus(t0);
  return c;
}

}  // namespace ouhjb
