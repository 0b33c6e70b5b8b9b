#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ouhjb/cyl_function.hpp"
#include "ouhjb/hamiltonian.hpp"
#include "ouhjb/mollify.hpp"
#include "ouhjb/ou_sim.hpp"
#include "ouhjb/poly_basis.hpp"
#include "ouhjb/quadrature.hpp"
#include "ouhjb/spectral_model.hpp"

namespace ouhjb {

// A scalar function of the state with known cylindrical support.
struct Integrand {
  std::function<double(std::span<const double>)> fn;
  std::vector<int> support;  // 1-based mode indices, sorted
};

Integrand make_integrand(const CylFunction& f);

// P_dt[f](x): Gaussian integral against the OU transition kernel, tensor
// Gauss-Hermite over the support modes (unused modes enter through the mean
// exactly). dt = 0 evaluates f at x.
double apply_semigroup(const SpectralModel& model, double dt, const Integrand& f,
                       std::span<const double> x, const QuadSpec& quad);

// sqrt(Q)-directional derivative of P_dt[f] along xi, computed by correlating
// f(e^{dt A}x + z) with the gradient kernel weight; requires dt > 0.
double apply_grad_semigroup(const SpectralModel& model, double dt,
                            const Integrand& f, std::span<const double> x,
                            std::span<const double> xi, const QuadSpec& quad);

// Terminal data or running cost: evaluation plus the regularity metadata the
// solver needs (analytic partials when they exist, bounds for the window and
// ball constants).
struct TerminalData {
  Integrand f;
  double sup_bound = 0.0;
  bool differentiable = false;
  std::function<double(int, std::span<const double>)> partial;  // k is 1-based
  std::optional<double> lipschitz;

  static TerminalData from_cyl(const CylFunction& f);
  static TerminalData from_mollified(const MollifiedFunction& f);
};

struct WindowReport {
  double a = 0.0, b = 0.0;
  int iters = 0;
  bool converged = false;
  std::vector<double> ratios;  // successive-iterate contraction ratios
  double sup_v = 0.0;          // probe sup of |v| over the window
  double weighted_sup_D = 0.0; // probe sup of (b-t)^{1/2} |D|
  double iterate_ball = 0.0;   // max over iterates of sup|v| + weighted sup|D|
  double fit_residual = 0.0;   // worst probe-set projection residual
  bool fit_flagged = false;    // residual large relative to the value scale
};

struct PicardReport {
  double delta = 0.0;
  int n_windows = 0;
  int halvings = 0;
  double R0 = 0.0;
  double c_smooth = 0.0;  // measured constant of the t^{-1/2} smoothing bound
  double C_R = 0.0;       // measured local Lipschitz constant of psi
  double ball_norm = 0.0; // max over iterates of sup|v| + weighted sup|D|
  bool ball_ok = false;   // ball_norm <= R0 throughout
  std::vector<WindowReport> windows;

  nlohmann::json to_json() const;
  static PicardReport from_json(const nlohmann::json& j);
  std::string csv() const;  // window,iter,ratio,sup_v,weighted_sup_D
};

struct PicardParams {
  int m = 4;                 // leading modes carried by the basis
  int degree = 4;            // total polynomial degree
  int probe_nodes = 5;       // Gauss-Hermite nodes per axis for the probe set
  int steps_per_window = 32; // right-endpoint rule resolution
  int max_iter = 60;
  double tol = 1e-9;         // sup-norm stop on successive iterates
  double ratio_cap = 0.9;    // halve the window until the measured ratio fits
  int max_halvings = 6;
  double window_margin = 0.95;  // target for the contraction inequality
  double delta_hint = 0.0;   // > 0 caps the initial window length
  QuadSpec quad;             // node counts for the catalog quadratures
};

// Time-indexed polynomial representation of v and D = grad^{sqrt(Q)} v.
class ValueField {
 public:
  ValueField(TimeGrid grid, PolyBasis basis);

  const TimeGrid& grid() const { return grid_; }
  const PolyBasis& basis() const { return basis_; }
  int steps() const { return grid_.steps; }
  double R0 = 0.0;

  std::vector<double>& v_coeffs(int i) { return v_[i]; }
  const std::vector<double>& v_coeffs(int i) const { return v_[i]; }
  std::vector<double>& d_coeffs(int i, int k) { return D_[i][k - 1]; }
  const std::vector<double>& d_coeffs(int i, int k) const { return D_[i][k - 1]; }

  double eval_v_at(int i, std::span<const double> x) const;
  double eval_d_at(int i, int k, std::span<const double> x) const;

  // linear interpolation between grid slots
  double eval_v(double t, std::span<const double> x) const;
  std::vector<double> eval_grad(double t, std::span<const double> x) const;

  nlohmann::json to_json() const;
  static ValueField from_json(const nlohmann::json& j);

 private:
  TimeGrid grid_;
  PolyBasis basis_;
  std::vector<std::vector<double>> v_;               // [slot][coeff]
  std::vector<std::vector<std::vector<double>>> D_;  // [slot][mode][coeff]
};

// Picard iteration on the variation-of-constants formula
//   v(t) = P_{T-t}[phi] + int_t^T P_{s-t}[psi(D(s)) + l] ds,
// solved window by window from the terminal time backwards; each window's
// starting slice becomes the next window's terminal data. Throws if a window
// fails to contract after the allowed halvings.
ValueField solve_mild(const SpectralModel& model, const HamiltonianSpec& ham,
                      const TerminalData& phi, const TerminalData* l,
                      const PicardParams& params, PicardReport* report = nullptr);

// Exact reference for the pure quadratic Hamiltonian (psi(z) = -|z|^2/4,
// l = 0): v(t,x) = -2 log P_{T-t}[exp(-phi/2)](x). The transform direction is
// pinned by the 1-mode finite-difference validation in the test suite.
double hopf_cole_reference(const SpectralModel& model, const HamiltonianSpec& ham,
                           const CylFunction& phi, double t,
                           std::span<const double> x, int gh_nodes = 21);

struct RepresentationReport {
  double v_value = 0.0;    // field value at (t, x)
  double estimate = 0.0;   // E[phi(Theta_T)] + int E[l(Theta_s)] ds
  double std_error = 0.0;
  double residual = 0.0;   // estimate - v_value
  double sup_G = 0.0;      // largest |G| seen along the paths
  size_t n_paths = 0;
};

// Checks the equivalent representation of the solution: simulating the OU
// process perturbed by the drift sqrt(Q) G, G(t,x) = int_0^1 grad psi(lambda
// D(t,x)) dlambda, must reproduce v(t,x) as a plain expectation of the data.
RepresentationReport equivalent_representation_check(
    const ValueField& field, const SpectralModel& model,
    const HamiltonianSpec& ham, const TerminalData& phi, const TerminalData* l,
    double t, std::span<const double> x, int n_steps, size_t n_paths,
    std::uint64_t seed);

}  // namespace ouhjb
