#include "ouhjb/hjb_picard.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ouhjb/threading.hpp"

namespace ouhjb {

namespace {

void check_integrand(const SpectralModel& model, const Integrand& f,
                     std::span<const double> x, const QuadSpec& quad,
                     const char* who) {
  if (static_cast<int>(f.support.size()) > quad.max_support) {
    throw std::invalid_argument(std::string(who) +
                                ": integrand support wider than the quadrature budget");
  }
  if (x.size() > static_cast<std::size_t>(model.dim())) {
    throw std::invalid_argument(std::string(who) + ": state vector longer than the model");
  }
  for (int k : f.support) {
    if (k < 1 || k > model.dim()) {
      throw std::invalid_argument(std::string(who) + ": support mode outside the model");
    }
    if (static_cast<std::size_t>(k) > x.size()) {
      throw std::invalid_argument(std::string(who) +
                                  ": state vector shorter than the integrand support");
    }
  }
}

std::vector<double> decayed_mean(const SpectralModel& model,
                                 std::span<const double> x, double dt) {
  std::vector<double> y(x.begin(), x.end());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] *= model.decay(static_cast<int>(i) + 1, dt);
  }
  return y;
}

}  // namespace

Integrand make_integrand(const CylFunction& f) {
  return Integrand{[f](std::span<const double> x) { return f.eval(x); }, f.support()};
}

double apply_semigroup(const SpectralModel& model, double dt, const Integrand& f,
                       std::span<const double> x, const QuadSpec& quad) {
  if (!(dt >= 0.0)) throw std::invalid_argument("apply_semigroup: dt must be >= 0");
  check_integrand(model, f, x, quad, "apply_semigroup");
  if (dt == 0.0) return f.fn(x);

  std::vector<double> mean = decayed_mean(model, x, dt);
  std::vector<int> active;
  std::vector<double> sd;
  for (int k : f.support) {
    double q = ou_covariance(model, k, dt);
    if (q > 0.0) {
      active.push_back(k);
      sd.push_back(std::sqrt(q));
    }
  }
  if (active.empty()) return f.fn(mean);

  GaussRule gh = gauss_hermite(quad.gh_nodes);
  std::vector<double> y = mean;
  std::vector<int> idx(active.size(), 0);
  double acc = 0.0;
  while (true) {
    double w = 1.0;
    for (std::size_t d = 0; d < active.size(); ++d) {
      y[active[d] - 1] = mean[active[d] - 1] + sd[d] * gh.nodes[idx[d]];
      w *= gh.weights[idx[d]];
    }
    acc += w * f.fn(y);
    std::size_t d = 0;
    while (d < active.size() && ++idx[d] == quad.gh_nodes) {
      idx[d] = 0;
      ++d;
    }
    if (d == active.size()) break;
  }
  return acc;
}

double apply_grad_semigroup(const SpectralModel& model, double dt,
                            const Integrand& f, std::span<const double> x,
                            std::span<const double> xi, const QuadSpec& quad) {
  if (!(dt > 0.0)) {
    throw std::invalid_argument("apply_grad_semigroup: dt must be > 0");
  }
  check_integrand(model, f, x, quad, "apply_grad_semigroup");
  if (xi.size() > static_cast<std::size_t>(model.dim())) {
    throw std::invalid_argument("apply_grad_semigroup: direction longer than the model");
  }
  std::vector<double> xi_full(model.dim(), 0.0);
  std::copy(xi.begin(), xi.end(), xi_full.begin());

  std::vector<double> mean = decayed_mean(model, x, dt);
  std::vector<int> active;
  std::vector<double> sd;
  for (int k : f.support) {
    double q = ou_covariance(model, k, dt);
    if (q > 0.0) {
      active.push_back(k);
      sd.push_back(std::sqrt(q));
    }
  }
  // The kernel weight is mean zero, so modes the integrand never reads
  // contribute nothing: if none remain the derivative vanishes.
  if (active.empty()) return 0.0;

  GaussRule gh = gauss_hermite(quad.gh_nodes);
  std::vector<double> y = mean;
  std::vector<double> z(model.dim(), 0.0);
  std::vector<int> idx(active.size(), 0);
  double acc = 0.0;
  while (true) {
    double w = 1.0;
    for (std::size_t d = 0; d < active.size(); ++d) {
      double zz = sd[d] * gh.nodes[idx[d]];
      z[active[d] - 1] = zz;
      y[active[d] - 1] = mean[active[d] - 1] + zz;
      w *= gh.weights[idx[d]];
    }
    acc += w * grad_kernel_weight(model, dt, xi_full, z) * f.fn(y);
    std::size_t d = 0;
    while (d < active.size() && ++idx[d] == quad.gh_nodes) {
      idx[d] = 0;
      ++d;
    }
    if (d == active.size()) break;
  }
  return acc;
}

TerminalData TerminalData::from_cyl(const CylFunction& f) {
  TerminalData t;
  t.f = make_integrand(f);
  t.sup_bound = f.sup_bound();
  t.differentiable = f.differentiable();
  if (t.differentiable) {
    t.partial = [f](int k, std::span<const double> x) { return f.partial(k, x); };
  }
  t.lipschitz = f.lipschitz_bound();
  return t;
}

TerminalData TerminalData::from_mollified(const MollifiedFunction& f) {
  TerminalData t;
  t.f = Integrand{[f](std::span<const double> x) { return f.eval(x); }, f.support()};
  t.sup_bound = f.sup_bound();
  t.differentiable = false;
  // Both mollification schemes preserve a Lipschitz bound of the base data.
  t.lipschitz = f.base().lipschitz_bound();
  return t;
}

// ---------------------------------------------------------------------------
// ValueField

ValueField::ValueField(TimeGrid grid, PolyBasis basis)
    : grid_(grid), basis_(std::move(basis)) {
  grid_.validate();
  v_.assign(grid_.steps + 1, std::vector<double>(basis_.size(), 0.0));
  D_.assign(grid_.steps + 1,
            std::vector<std::vector<double>>(
                basis_.m(), std::vector<double>(basis_.size(), 0.0)));
}

double ValueField::eval_v_at(int i, std::span<const double> x) const {
  return basis_.eval(v_[i], x);
}

double ValueField::eval_d_at(int i, int k, std::span<const double> x) const {
  return basis_.eval(D_[i][k - 1], x);
}

namespace {

// locate t in the grid: slot index i and interpolation fraction in [0, 1]
std::pair<int, double> grid_locate(const TimeGrid& grid, double t) {
  if (t < grid.t0 - 1e-12 || t > grid.t1 + 1e-12) {
    throw std::invalid_argument("ValueField: time outside the grid");
  }
  double s = (t - grid.t0) / grid.h();
  int i = static_cast<int>(std::floor(s));
  i = std::clamp(i, 0, grid.steps - 1);
  double frac = std::clamp(s - i, 0.0, 1.0);
  return {i, frac};
}

}  // namespace

double ValueField::eval_v(double t, std::span<const double> x) const {
  auto [i, frac] = grid_locate(grid_, t);
  if (frac == 0.0) return eval_v_at(i, x);
  return (1.0 - frac) * eval_v_at(i, x) + frac * eval_v_at(i + 1, x);
}

std::vector<double> ValueField::eval_grad(double t, std::span<const double> x) const {
  auto [i, frac] = grid_locate(grid_, t);
  std::vector<double> g(basis_.m(), 0.0);
  for (int k = 1; k <= basis_.m(); ++k) {
    double a = eval_d_at(i, k, x);
    double b = (frac == 0.0) ? a : eval_d_at(i + 1, k, x);
    g[k - 1] = (1.0 - frac) * a + frac * b;
  }
  return g;
}

nlohmann::json ValueField::to_json() const {
  nlohmann::json j;
  j["grid"] = {{"t0", grid_.t0}, {"t1", grid_.t1}, {"steps", grid_.steps}};
  j["m"] = basis_.m();
  j["degree"] = basis_.degree();
  j["scale"] = basis_.scale();
  j["R0"] = R0;
  j["v"] = v_;
  j["D"] = D_;
  return j;
}

ValueField ValueField::from_json(const nlohmann::json& j) {
  TimeGrid grid{j.at("grid").at("t0").get<double>(),
                j.at("grid").at("t1").get<double>(),
                j.at("grid").at("steps").get<int>()};
  PolyBasis basis(j.at("m").get<int>(), j.at("degree").get<int>(),
                  j.at("scale").get<std::vector<double>>());
  ValueField f(grid, basis);
  f.R0 = j.at("R0").get<double>();
  auto v = j.at("v").get<std::vector<std::vector<double>>>();
  auto D = j.at("D").get<std::vector<std::vector<std::vector<double>>>>();
  if (static_cast<int>(v.size()) != grid.steps + 1 || D.size() != v.size()) {
    throw std::invalid_argument("ValueField: slot count does not match the grid");
  }
  for (int i = 0; i <= grid.steps; ++i) {
    if (v[i].size() != static_cast<std::size_t>(basis.size()) ||
        D[i].size() != static_cast<std::size_t>(basis.m())) {
      throw std::invalid_argument("ValueField: coefficient block has the wrong shape");
    }
    f.v_coeffs(i) = v[i];
    for (int k = 1; k <= basis.m(); ++k) f.d_coeffs(i, k) = D[i][k - 1];
  }
  return f;
}

// ---------------------------------------------------------------------------
// Picard window solver

namespace {

using Values = std::vector<double>;             // one number per probe
using ModeValues = std::vector<Values>;         // [mode][probe]

struct WindowTerminal {
  const TerminalData* data = nullptr;  // set on the terminal window only
  std::vector<double> g;               // polynomial coefficients otherwise
  double sup = 0.0;
};

struct WindowState {
  std::vector<std::vector<double>> v_coeffs;               // [slot]
  std::vector<std::vector<std::vector<double>>> d_coeffs;  // [slot][mode]
  WindowReport report;
  double start_sup = 0.0;
};

struct WindowContext {
  const SpectralModel* model;
  const HamiltonianSpec* ham;
  const PolyBasis* basis;
  const GaussianProjector* projector;
  const TerminalData* l;
  PicardParams params;
  std::vector<double> sqrt_lambda;  // per leading mode
};

double probe_sup(const Values& vals) {
  double s = 0.0;
  for (double v : vals) s = std::max(s, std::fabs(v));
  return s;
}

// per-probe Euclidean norm of the gradient block
double probe_grad_sup(const ModeValues& d) {
  std::size_t np = d.empty() ? 0 : d[0].size();
  double s = 0.0;
  for (std::size_t p = 0; p < np; ++p) {
    double n2 = 0.0;
    for (const Values& row : d) n2 += row[p] * row[p];
    s = std::max(s, std::sqrt(n2));
  }
  return s;
}

WindowState solve_window(const WindowContext& ctx, const WindowTerminal& terminal,
                         double a, double b) {
  const SpectralModel& model = *ctx.model;
  const PolyBasis& basis = *ctx.basis;
  const GaussianProjector& projector = *ctx.projector;
  const int S = ctx.params.steps_per_window;
  const int m = basis.m();
  const int np = projector.probe_count();
  const double h = (b - a) / S;
  const QuadSpec& quad = ctx.params.quad;

  auto t_of = [&](int i) { return a + i * h; };
  auto project_vals = [&](const Values& vals) { return projector.project(vals); };
  auto eval_probes = [&](const std::vector<double>& coeffs) {
    return projector.eval_at_probes(coeffs);
  };

  // --- linear part at probes -----------------------------------------------
  std::vector<Values> Gv(S, Values(np, 0.0));
  std::vector<ModeValues> GD(S, ModeValues(m, Values(np, 0.0)));
  std::vector<double> vS_coeffs;
  std::vector<std::vector<double>> DS_coeffs(m);
  std::vector<double> psi_term_coeffs;  // fixed terminal rectangle integrand
  bool half_step = false;
  double fit_residual = 0.0;

  auto probe_row = [&](int p) -> const std::vector<double>& {
    return projector.probes()[p];
  };

  if (terminal.data != nullptr) {
    const TerminalData& phi = *terminal.data;
    // values of the data itself
    Values phi_vals(np);
    for (int p = 0; p < np; ++p) {
      phi_vals[p] = phi.f.fn(probe_row(p));
    }
    vS_coeffs = project_vals(phi_vals);
    {
      Values fitted = eval_probes(vS_coeffs);
      for (int p = 0; p < np; ++p) {
        fit_residual = std::max(fit_residual, std::fabs(fitted[p] - phi_vals[p]));
      }
    }
    for (int i = 0; i < S; ++i) {
      double gap = b - t_of(i);
      for (int p = 0; p < np; ++p) {
        Gv[i][p] = apply_semigroup(model, gap, phi.f, probe_row(p), quad);
      }
    }
    if (phi.differentiable) {
      for (int k = 1; k <= m; ++k) {
        Integrand dphi{[&phi, k](std::span<const double> x) { return phi.partial(k, x); },
                       phi.f.support};
        Values dvals(np);
        for (int p = 0; p < np; ++p) dvals[p] = ctx.sqrt_lambda[k - 1] * dphi.fn(probe_row(p));
        DS_coeffs[k - 1] = project_vals(dvals);
        for (int i = 0; i < S; ++i) {
          double gap = b - t_of(i);
          double decay = model.decay(k, gap);
          for (int p = 0; p < np; ++p) {
            GD[i][k - 1][p] = ctx.sqrt_lambda[k - 1] * decay *
                              apply_semigroup(model, gap, dphi, probe_row(p), quad);
          }
        }
      }
      // terminal rectangle integrand psi(D(T)) from the exact data gradient
      Values psi_vals(np);
      std::vector<double> zrow(m);
      for (int p = 0; p < np; ++p) {
        for (int k = 1; k <= m; ++k) {
          zrow[k - 1] = ctx.sqrt_lambda[k - 1] * phi.partial(k, probe_row(p));
        }
        psi_vals[p] = psi_eval(*ctx.ham, zrow);
      }
      psi_term_coeffs = project_vals(psi_vals);
    } else {
      // continuous-only data: kernel correlation for the gradient, and the
      // last rectangle samples the integrand half a step inside the window
      half_step = true;
      std::vector<double> e_k(m, 0.0);
      for (int i = 0; i < S; ++i) {
        double gap = b - t_of(i);
        for (int k = 1; k <= m; ++k) {
          e_k.assign(m, 0.0);
          e_k[k - 1] = 1.0;
          for (int p = 0; p < np; ++p) {
            GD[i][k - 1][p] =
                apply_grad_semigroup(model, gap, phi.f, probe_row(p), e_k, quad);
          }
        }
      }
      ModeValues dhalf(m, Values(np, 0.0));
      for (int k = 1; k <= m; ++k) {
        e_k.assign(m, 0.0);
        e_k[k - 1] = 1.0;
        for (int p = 0; p < np; ++p) {
          dhalf[k - 1][p] =
              apply_grad_semigroup(model, 0.5 * h, phi.f, probe_row(p), e_k, quad);
        }
      }
      Values psi_vals(np);
      std::vector<double> zrow(m);
      for (int p = 0; p < np; ++p) {
        for (int k = 0; k < m; ++k) zrow[k] = dhalf[k][p];
        psi_vals[p] = psi_eval(*ctx.ham, zrow);
      }
      psi_term_coeffs = project_vals(psi_vals);
      for (int k = 0; k < m; ++k) DS_coeffs[k] = project_vals(dhalf[k]);
    }
  } else {
    // interior window: the terminal slice is a polynomial, everything is exact
    vS_coeffs = terminal.g;
    for (int i = 0; i < S; ++i) {
      double gap = b - t_of(i);
      std::vector<double> tv = basis.semigroup_transform(model, gap, terminal.g);
      Gv[i] = eval_probes(tv);
      for (int k = 1; k <= m; ++k) {
        std::vector<double> dv = basis.mode_derivative(tv, k);
        Values ev = eval_probes(dv);
        for (int p = 0; p < np; ++p) GD[i][k - 1][p] = ctx.sqrt_lambda[k - 1] * ev[p];
      }
    }
    Values psi_vals(np);
    {
      ModeValues dterm(m);
      for (int k = 1; k <= m; ++k) {
        DS_coeffs[k - 1] = basis.mode_derivative(terminal.g, k);
        for (double& c : DS_coeffs[k - 1]) c *= ctx.sqrt_lambda[k - 1];
        dterm[k - 1] = eval_probes(DS_coeffs[k - 1]);
      }
      std::vector<double> zrow(m);
      for (int p = 0; p < np; ++p) {
        for (int k = 0; k < m; ++k) zrow[k] = dterm[k][p];
        psi_vals[p] = psi_eval(*ctx.ham, zrow);
      }
    }
    psi_term_coeffs = project_vals(psi_vals);
  }

  // --- fixed contributions: terminal psi rectangle and the running cost ----
  std::vector<Values> Rv(S, Values(np, 0.0));
  std::vector<ModeValues> RD(S, ModeValues(m, Values(np, 0.0)));
  for (int i = 0; i < S; ++i) {
    double gap = (S - i) * h - (half_step ? 0.5 * h : 0.0);
    std::vector<double> tc = basis.semigroup_transform(model, gap, psi_term_coeffs);
    Values ev = eval_probes(tc);
    for (int p = 0; p < np; ++p) Rv[i][p] = h * ev[p];
    for (int k = 1; k <= m; ++k) {
      Values dv = eval_probes(basis.mode_derivative(tc, k));
      for (int p = 0; p < np; ++p) {
        RD[i][k - 1][p] = h * ctx.sqrt_lambda[k - 1] * dv[p];
      }
    }
  }
  if (ctx.l != nullptr) {
    const TerminalData& l = *ctx.l;
    Values lv(np);
    ModeValues ld(m, Values(np, 0.0));
    std::vector<double> e_k(m, 0.0);
    // prefix sums over the gap index: slot i accumulates gaps 1..S-i
    std::vector<Values> SLv(S + 1, Values(np, 0.0));
    std::vector<ModeValues> SLD(S + 1, ModeValues(m, Values(np, 0.0)));
    for (int g = 1; g <= S; ++g) {
      double gap = g * h;
      for (int p = 0; p < np; ++p) {
        lv[p] = apply_semigroup(model, gap, l.f, probe_row(p), quad);
      }
      for (int k = 1; k <= m; ++k) {
        if (l.differentiable) {
          Integrand dl{[&l, k](std::span<const double> x) { return l.partial(k, x); },
                       l.f.support};
          double decay = model.decay(k, gap);
          for (int p = 0; p < np; ++p) {
            ld[k - 1][p] = ctx.sqrt_lambda[k - 1] * decay *
                           apply_semigroup(model, gap, dl, probe_row(p), quad);
          }
        } else {
          e_k.assign(m, 0.0);
          e_k[k - 1] = 1.0;
          for (int p = 0; p < np; ++p) {
            ld[k - 1][p] = apply_grad_semigroup(model, gap, l.f, probe_row(p), e_k, quad);
          }
        }
      }
      for (int p = 0; p < np; ++p) SLv[g][p] = SLv[g - 1][p] + lv[p];
      for (int k = 0; k < m; ++k) {
        for (int p = 0; p < np; ++p) SLD[g][k][p] = SLD[g - 1][k][p] + ld[k][p];
      }
    }
    for (int i = 0; i < S; ++i) {
      int g = S - i;
      for (int p = 0; p < np; ++p) Rv[i][p] += h * SLv[g][p];
      for (int k = 0; k < m; ++k) {
        for (int p = 0; p < np; ++p) RD[i][k][p] += h * SLD[g][k][p];
      }
    }
  }

  // --- Picard iteration ------------------------------------------------------
  WindowState out;
  out.v_coeffs.assign(S + 1, {});
  out.d_coeffs.assign(S + 1, std::vector<std::vector<double>>(m));
  out.v_coeffs[S] = vS_coeffs;
  for (int k = 0; k < m; ++k) out.d_coeffs[S][k] = DS_coeffs[k];

  // iterate 0: the map applied with the interior psi terms zeroed
  std::vector<Values> v_vals(S + 1, Values(np, 0.0));
  std::vector<ModeValues> d_vals(S + 1, ModeValues(m, Values(np, 0.0)));
  v_vals[S] = eval_probes(vS_coeffs);
  for (int k = 0; k < m; ++k) d_vals[S][k] = eval_probes(DS_coeffs[k]);
  for (int i = 0; i < S; ++i) {
    for (int p = 0; p < np; ++p) v_vals[i][p] = Gv[i][p] + Rv[i][p];
    out.v_coeffs[i] = project_vals(v_vals[i]);
    v_vals[i] = eval_probes(out.v_coeffs[i]);
    for (int k = 0; k < m; ++k) {
      for (int p = 0; p < np; ++p) d_vals[i][k][p] = GD[i][k][p] + RD[i][k][p];
      out.d_coeffs[i][k] = project_vals(d_vals[i][k]);
      d_vals[i][k] = eval_probes(out.d_coeffs[i][k]);
    }
  }

  WindowReport& rep = out.report;
  rep.a = a;
  rep.b = b;
  rep.fit_residual = fit_residual;

  double prev_diff = -1.0;
  std::vector<double> zrow(m);
  Values psi_vals(np);
  std::vector<Values> new_v(S, Values(np, 0.0));
  std::vector<ModeValues> new_d(S, ModeValues(m, Values(np, 0.0)));
  double ball_max = 0.0;
  {
    double sup_v0 = 0.0, sup_wd0 = 0.0;
    for (int i = 0; i <= S; ++i) {
      sup_v0 = std::max(sup_v0, probe_sup(v_vals[i]));
      double wgt = std::sqrt(std::max(0.0, b - t_of(i)));
      sup_wd0 = std::max(sup_wd0, wgt * probe_grad_sup(d_vals[i]));
    }
    ball_max = sup_v0 + sup_wd0;
  }

  for (int iter = 1; iter <= ctx.params.max_iter; ++iter) {
    rep.iters = iter;
    // fit the interior nonlinearity from the current gradients
    std::vector<std::vector<double>> c_psi(S);
    for (int j = 1; j < S; ++j) {
      for (int p = 0; p < np; ++p) {
        for (int k = 0; k < m; ++k) zrow[k] = d_vals[j][k][p];
        psi_vals[p] = psi_eval(*ctx.ham, zrow);
      }
      c_psi[j] = project_vals(psi_vals);
    }
    for (int i = 0; i < S; ++i) {
      new_v[i] = Gv[i];
      for (int p = 0; p < np; ++p) new_v[i][p] += Rv[i][p];
      for (int k = 0; k < m; ++k) {
        new_d[i][k] = GD[i][k];
        for (int p = 0; p < np; ++p) new_d[i][k][p] += RD[i][k][p];
      }
    }
    for (int j = 1; j < S; ++j) {
      std::vector<double> tc = c_psi[j];
      for (int g = 1; g <= j; ++g) {
        tc = basis.semigroup_transform(model, h, tc);
        int i = j - g;
        Values ev = eval_probes(tc);
        for (int p = 0; p < np; ++p) new_v[i][p] += h * ev[p];
        for (int k = 1; k <= m; ++k) {
          Values dv = eval_probes(basis.mode_derivative(tc, k));
          for (int p = 0; p < np; ++p) {
            new_d[i][k - 1][p] += h * ctx.sqrt_lambda[k - 1] * dv[p];
          }
        }
      }
    }
    // project, measure the product-norm difference on probes
    double diff_v = 0.0, diff_d = 0.0;
    double max_res = 0.0;
    for (int i = 0; i < S; ++i) {
      std::vector<double> cv = project_vals(new_v[i]);
      Values fitted = eval_probes(cv);
      for (int p = 0; p < np; ++p) {
        max_res = std::max(max_res, std::fabs(fitted[p] - new_v[i][p]));
        diff_v = std::max(diff_v, std::fabs(fitted[p] - v_vals[i][p]));
      }
      out.v_coeffs[i] = std::move(cv);
      double wgt = std::sqrt(b - t_of(i));
      std::vector<Values> fitted_d(m);
      for (int k = 0; k < m; ++k) {
        std::vector<double> cd = project_vals(new_d[i][k]);
        fitted_d[k] = eval_probes(cd);
        out.d_coeffs[i][k] = std::move(cd);
      }
      for (int p = 0; p < np; ++p) {
        double n2 = 0.0;
        for (int k = 0; k < m; ++k) {
          double dd = fitted_d[k][p] - d_vals[i][k][p];
          n2 += dd * dd;
        }
        diff_d = std::max(diff_d, wgt * std::sqrt(n2));
      }
      v_vals[i] = eval_probes(out.v_coeffs[i]);
      for (int k = 0; k < m; ++k) d_vals[i][k] = fitted_d[k];
    }
    rep.fit_residual = std::max(rep.fit_residual, max_res);

    double sup_v = 0.0, sup_wd = 0.0;
    for (int i = 0; i <= S; ++i) {
      sup_v = std::max(sup_v, probe_sup(v_vals[i]));
      double wgt = std::sqrt(std::max(0.0, b - t_of(i)));
      sup_wd = std::max(sup_wd, wgt * probe_grad_sup(d_vals[i]));
    }
    rep.sup_v = sup_v;
    rep.weighted_sup_D = sup_wd;
    ball_max = std::max(ball_max, sup_v + sup_wd);

    double diff = diff_v + diff_d;
    if (prev_diff > 0.0) rep.ratios.push_back(diff / prev_diff);
    if (diff <= ctx.params.tol * (1.0 + sup_v)) {
      rep.converged = true;
      break;
    }
    prev_diff = diff;
  }
  rep.iterate_ball = ball_max;
  rep.fit_flagged = rep.fit_residual > 0.05 * (1.0 + rep.sup_v);
  out.start_sup = probe_sup(v_vals[0]);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// solve_mild

ValueField solve_mild(const SpectralModel& model, const HamiltonianSpec& ham,
                      const TerminalData& phi, const TerminalData* l,
                      const PicardParams& params, PicardReport* report) {
  model.validate();
  ham.validate();
  if (params.m < 1 || params.m > model.dim()) {
    throw std::invalid_argument("solve_mild: leading mode count outside the model");
  }
  if (params.degree < 1) throw std::invalid_argument("solve_mild: degree must be >= 1");
  if (params.steps_per_window < 2) {
    throw std::invalid_argument("solve_mild: needs at least 2 steps per window");
  }
  const int m = params.m;
  for (int k = 1; k <= m; ++k) {
    if (model.mode(k).lambda <= 0.0) {
      throw std::invalid_argument("solve_mild: leading modes must carry noise");
    }
  }
  auto check_terms = [&](const TerminalData& t, const char* who) {
    for (int k : t.f.support) {
      if (k > m) {
        throw std::invalid_argument(std::string("solve_mild: ") + who +
                                    " support exceeds the resolved modes");
      }
    }
  };
  check_terms(phi, "terminal data");
  if (l != nullptr) check_terms(*l, "running cost");

  const double T = model.T;
  std::vector<double> scale_all = model.stationary_std();
  std::vector<double> scale(scale_all.begin(), scale_all.begin() + m);
  PolyBasis basis(m, params.degree, scale);
  GaussianProjector projector(basis, params.probe_nodes);
  std::vector<double> sqrt_lambda(m);
  for (int k = 1; k <= m; ++k) sqrt_lambda[k - 1] = std::sqrt(model.mode(k).lambda);

  double c_smooth = smoothing_constant(model, std::max(1e-8, 1e-4 * T), T);

  // gradient scale proxy when no Lipschitz bound is available
  double lip_phi = phi.lipschitz.value_or(4.0 * phi.sup_bound);
  double sup_l = (l != nullptr) ? l->sup_bound : 0.0;
  double lip_l = (l != nullptr) ? l->lipschitz.value_or(4.0 * sup_l) : 0.0;
  double R0 = 2.0 * (phi.sup_bound + lip_phi + T * (sup_l + lip_l));

  // local Lipschitz constant of psi measured on the gradient range the linear
  // part actually visits
  double d_max = 1e-8;
  {
    std::vector<double> probe(m, 0.0);
    std::vector<double> e_k(m, 0.0);
    std::vector<std::vector<double>> pts;
    pts.push_back(std::vector<double>(m, 0.0));
    for (int k = 0; k < m; ++k) {
      auto up = std::vector<double>(m, 0.0);
      up[k] = scale[k];
      pts.push_back(up);
      up[k] = -scale[k];
      pts.push_back(up);
    }
    for (double frac : {0.125, 0.25, 0.5, 0.75, 0.9375}) {
      double gap = std::max(T * (1.0 - frac), T / (64.0 * params.steps_per_window));
      for (const auto& pt : pts) {
        double n2 = 0.0;
        for (int k = 1; k <= m; ++k) {
          double dk = 0.0;
          if (phi.differentiable) {
            Integrand dphi{[&phi, k](std::span<const double> x) { return phi.partial(k, x); },
                           phi.f.support};
            dk = sqrt_lambda[k - 1] * model.decay(k, gap) *
                 apply_semigroup(model, gap, dphi, pt, params.quad);
          } else {
            e_k.assign(m, 0.0);
            e_k[k - 1] = 1.0;
            dk = apply_grad_semigroup(model, gap, phi.f, pt, e_k, params.quad);
          }
          n2 += dk * dk;
        }
        d_max = std::max(d_max, std::sqrt(n2));
      }
    }
  }
  double C_R = 1e-8;
  {
    double r = 2.0 * d_max;
    std::vector<double> z(m, 0.0);
    auto grad_norm = [&](const std::vector<double>& zz) {
      std::vector<double> g = psi_grad(ham, zz);
      double n2 = 0.0;
      for (double gk : g) n2 += gk * gk;
      return std::sqrt(n2);
    };
    for (int k = 0; k < m; ++k) {
      z.assign(m, 0.0);
      z[k] = r;
      C_R = std::max(C_R, grad_norm(z));
      z[k] = -r;
      C_R = std::max(C_R, grad_norm(z));
    }
    z.assign(m, r / std::sqrt(static_cast<double>(m)));
    C_R = std::max(C_R, grad_norm(z));
    C_R *= 1.5;
  }

  // largest window satisfying the contraction inequality
  auto window_ok = [&](double delta) {
    return 0.5 + delta * C_R + std::sqrt(delta) * c_smooth * C_R <
           params.window_margin;
  };
  int n_windows = 1;
  if (!window_ok(T)) {
    double lo = 0.0, hi = T;
    for (int it = 0; it < 80; ++it) {
      double mid = 0.5 * (lo + hi);
      (window_ok(mid) ? lo : hi) = mid;
    }
    double delta = std::max(lo, T / 64.0);
    n_windows = std::min(64, static_cast<int>(std::ceil(T / delta - 1e-12)));
    n_windows = std::max(1, n_windows);
  }
  if (params.delta_hint > 0.0) {
    int forced = static_cast<int>(std::ceil(T / params.delta_hint - 1e-12));
    n_windows = std::max(n_windows, std::min(64, std::max(1, forced)));
  }

  WindowContext ctx{&model, &ham, &basis, &projector, l, params, sqrt_lambda};

  int halvings = 0;
  double worst_ratio = 0.0;
  for (;; ++halvings) {
    if (halvings > params.max_halvings) {
      std::ostringstream msg;
      msg << "solve_mild: window failed to contract after " << params.max_halvings
          << " halvings (worst measured ratio " << worst_ratio << ")";
      throw std::runtime_error(msg.str());
    }
    int W = n_windows << halvings;
    double delta = T / W;
    const int S = params.steps_per_window;

    std::vector<WindowState> states;
    states.reserve(W);
    bool ok = true;
    worst_ratio = 0.0;
    WindowTerminal term;
    term.data = &phi;
    term.sup = phi.sup_bound;
    for (int w = 0; w < W; ++w) {
      double b = T - w * delta;
      double a = b - delta;
      WindowState st = solve_window(ctx, term, a, b);
      for (double r : st.report.ratios) worst_ratio = std::max(worst_ratio, r);
      if (!st.report.converged ||
          (!st.report.ratios.empty() &&
           *std::max_element(st.report.ratios.begin(), st.report.ratios.end()) >=
               params.ratio_cap)) {
        ok = false;
        break;
      }
      states.push_back(std::move(st));
      term.data = nullptr;
      term.g = states.back().v_coeffs[0];
      term.sup = states.back().start_sup;
    }
    if (!ok) continue;

    // stitch the global field
    TimeGrid grid{0.0, T, W * S};
    ValueField field(grid, basis);
    field.R0 = R0;
    for (int w = 0; w < W; ++w) {
      int offset = (W - 1 - w) * S;
      const WindowState& st = states[w];
      int top = (w == 0) ? S : S - 1;
      for (int i = 0; i <= top; ++i) {
        field.v_coeffs(offset + i) = st.v_coeffs[i];
        for (int k = 1; k <= m; ++k) {
          field.d_coeffs(offset + i, k) = st.d_coeffs[i][k - 1];
        }
      }
    }

    if (report != nullptr) {
      report->delta = delta;
      report->n_windows = W;
      report->halvings = halvings;
      report->R0 = R0;
      report->c_smooth = c_smooth;
      report->C_R = C_R;
      report->windows.clear();
      for (const WindowState& st : states) report->windows.push_back(st.report);
      // global ball norm: weight anchored at the terminal time
      double sup_v = 0.0, sup_wd = 0.0;
      for (int g = 0; g <= grid.steps; ++g) {
        double t = grid.time(g);
        double wgt = std::sqrt(std::max(0.0, T - t));
        for (int p = 0; p < projector.probe_count(); ++p) {
          auto x = projector.probes()[p];
          sup_v = std::max(sup_v, std::fabs(field.eval_v_at(g, x)));
          double n2 = 0.0;
          for (int k = 1; k <= m; ++k) {
            double d = field.eval_d_at(g, k, x);
            n2 += d * d;
          }
          sup_wd = std::max(sup_wd, wgt * std::sqrt(n2));
        }
      }
      report->ball_norm = sup_v + sup_wd;
      bool ok_ball = report->ball_norm <= R0;
      for (const WindowReport& w : report->windows) {
        ok_ball = ok_ball && w.iterate_ball <= R0;
      }
      report->ball_ok = ok_ball;
    }
    return field;
  }
}

// ---------------------------------------------------------------------------
// Closed form for the pure quadratic Hamiltonian

double hopf_cole_reference(const SpectralModel& model, const HamiltonianSpec& ham,
                           const CylFunction& phi, double t,
                           std::span<const double> x, int gh_nodes) {
  ham.validate();
  bool pure_quadratic = ham.q == 2.0 && ham.cost.kind == "power" &&
                        std::fabs(ham.cost.coeff - 1.0) < 1e-12 &&
                        ham.R == "identity" && ham.K.type == "full";
  if (!pure_quadratic) {
    throw std::invalid_argument(
        "hopf_cole_reference: closed form needs the pure quadratic Hamiltonian");
  }
  if (t < 0.0 || t > model.T) {
    throw std::invalid_argument("hopf_cole_reference: time outside the horizon");
  }
  Integrand transformed{[phi](std::span<const double> y) {
                          return std::exp(-0.5 * phi.eval(y));
                        },
                        phi.support()};
  QuadSpec quad;
  quad.gh_nodes = gh_nodes;
  double p = apply_semigroup(model, model.T - t, transformed, x, quad);
  return -2.0 * std::log(p);
}

// ---------------------------------------------------------------------------
// Equivalent representation of the solved field

RepresentationReport equivalent_representation_check(
    const ValueField& field, const SpectralModel& model,
    const HamiltonianSpec& ham, const TerminalData& phi, const TerminalData* l,
    double t, std::span<const double> x, int n_steps, size_t n_paths,
    std::uint64_t seed) {
  if (t < 0.0 || t >= model.T) {
    throw std::invalid_argument("representation check: time must lie before the horizon");
  }
  if (n_steps < 1 || n_paths < 2) {
    throw std::invalid_argument("representation check: degenerate grid or ensemble");
  }
  const int m = field.basis().m();
  GaussRule gl = gauss_legendre01(16);
  std::atomic<double> sup_g{0.0};
  double r0 = field.R0;

  DriftFn drift = [&](double s, std::span<const double> state, std::span<double> out) {
    std::vector<double> d = field.eval_grad(std::min(s, model.T), state);
    std::vector<double> g(m, 0.0);
    std::vector<double> zl(m);
    for (int j = 0; j < 16; ++j) {
      for (int k = 0; k < m; ++k) zl[k] = gl.nodes[j] * d[k];
      std::vector<double> grad = psi_grad(ham, zl);
      for (int k = 0; k < m; ++k) g[k] += gl.weights[j] * grad[k];
    }
    double n2 = 0.0;
    for (int k = 0; k < m; ++k) n2 += g[k] * g[k];
    double gn = std::sqrt(n2);
    if (gn > r0) {
      throw std::runtime_error("representation check: drift left the solution ball");
    }
    double cur = sup_g.load(std::memory_order_relaxed);
    while (gn > cur &&
           !sup_g.compare_exchange_weak(cur, gn, std::memory_order_relaxed)) {
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = (k < static_cast<std::size_t>(m)) ? g[k] : 0.0;
    }
  };

  std::vector<double> x0(model.dim(), 0.0);
  if (x.size() > x0.size()) {
    throw std::invalid_argument("representation check: state longer than the model");
  }
  std::copy(x.begin(), x.end(), x0.begin());
  TimeGrid grid{t, model.T, n_steps};
  PathEnsemble ens = simulate_controlled(model, drift, x0, grid,
                                         static_cast<int>(n_paths), seed);

  double h = grid.h();
  auto path_value = [&](std::size_t p) {
    double val = phi.f.fn(ens.state_row(n_steps, static_cast<int>(p)));
    if (l != nullptr) {
      double acc = 0.0;
      for (int i = 0; i < n_steps; ++i) {
        acc += l->f.fn(ens.state_row(i, static_cast<int>(p)));
      }
      val += h * acc;
    }
    return val;
  };
  double mean = chunked_sum(n_paths, path_value) / static_cast<double>(n_paths);
  double var = chunked_sum(n_paths,
                           [&](std::size_t p) {
                             double d = path_value(p) - mean;
                             return d * d;
                           }) /
               (static_cast<double>(n_paths) - 1.0);

  RepresentationReport rep;
  rep.v_value = field.eval_v(t, x);
  rep.estimate = mean;
  rep.std_error = std::sqrt(var / static_cast<double>(n_paths));
  rep.residual = mean - rep.v_value;
  rep.sup_G = sup_g.load();
  rep.n_paths = n_paths;
  return rep;
}

// ---------------------------------------------------------------------------
// Report serialization

nlohmann::json PicardReport::to_json() const {
  nlohmann::json j;
  j["delta"] = delta;
  j["n_windows"] = n_windows;
  j["halvings"] = halvings;
  j["R0"] = R0;
  j["c_smooth"] = c_smooth;
  j["C_R"] = C_R;
  j["ball_norm"] = ball_norm;
  j["ball_ok"] = ball_ok;
  nlohmann::json ws = nlohmann::json::array();
  for (const WindowReport& w : windows) {
    ws.push_back({{"a", w.a},
                  {"b", w.b},
                  {"iters", w.iters},
                  {"converged", w.converged},
                  {"ratios", w.ratios},
                  {"sup_v", w.sup_v},
                  {"weighted_sup_D", w.weighted_sup_D},
                  {"iterate_ball", w.iterate_ball},
                  {"fit_residual", w.fit_residual},
                  {"fit_flagged", w.fit_flagged}});
  }
  j["windows"] = ws;
  return j;
}

PicardReport PicardReport::from_json(const nlohmann::json& j) {
  PicardReport r;
  r.delta = j.at("delta").get<double>();
  r.n_windows = j.at("n_windows").get<int>();
  r.halvings = j.at("halvings").get<int>();
  r.R0 = j.at("R0").get<double>();
  r.c_smooth = j.at("c_smooth").get<double>();
  r.C_R = j.at("C_R").get<double>();
  r.ball_norm = j.at("ball_norm").get<double>();
  r.ball_ok = j.at("ball_ok").get<bool>();
  for (const auto& wj : j.at("windows")) {
    WindowReport w;
    w.a = wj.at("a").get<double>();
    w.b = wj.at("b").get<double>();
    w.iters = wj.at("iters").get<int>();
    w.converged = wj.at("converged").get<bool>();
    w.ratios = wj.at("ratios").get<std::vector<double>>();
    w.sup_v = wj.at("sup_v").get<double>();
    w.weighted_sup_D = wj.at("weighted_sup_D").get<double>();
    w.iterate_ball = wj.at("iterate_ball").get<double>();
    w.fit_residual = wj.at("fit_residual").get<double>();
    w.fit_flagged = wj.at("fit_flagged").get<bool>();
    r.windows.push_back(std::move(w));
  }
  return r;
}

std::string PicardReport::csv() const {
  std::ostringstream os;
  os << "window,iter,ratio,sup_v,weighted_sup_D\n";
  os.precision(17);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const WindowReport& rep = windows[w];
    for (std::size_t i = 0; i < rep.ratios.size(); ++i) {
      os << w << ',' << (i + 2) << ',' << rep.ratios[i] << ',' << rep.sup_v << ','
         << rep.weighted_sup_D << '\n';
    }
  }
  return os.str();
}

}  // namespace ouhjb
