#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ouhjb/hamiltonian.hpp"
#include "ouhjb/hjb_picard.hpp"
#include "ouhjb/ou_sim.hpp"
#include "ouhjb/poly_basis.hpp"
#include "ouhjb/spectral_model.hpp"

namespace ouhjb {

// Least-squares Monte Carlo solver for the backward equation
//   Y_s = phi(X_T) + int_s^T [psi(Z_r) + l(X_r)] dr - int_s^T <Z_r, dW_r>
// on exact forward OU paths, the stochastic counterpart of solve_mild.
// Conditional expectations are fitted per step on the same polynomial
// features a ValueField uses; Z comes from the martingale-increment
// covariance estimator, variance-matched to the exact OU transition noise.
struct BSDEParams {
  int m = 4;                 // feature modes
  int degree = 4;            // feature degree
  double ridge = 1e-8;       // per-sample ridge, scaled by n_paths
  double clip_kappa = 0.0;   // 0 = auto: 4 * c_smooth * sup|phi|
  double cond_limit = 1e12;  // Gram condition estimate that doubles the ridge
  int max_ridge_doublings = 40;
  int bmo_probe_nodes = 3;   // probe grid per axis for the BMO proxy
};

struct BSDEStepDiag {
  int step = 0;
  long clip_count = 0;      // driver inputs shortened to the envelope
  double residual_y = 0.0;  // RMS regression residual of the Y target
  double residual_z = 0.0;  // worst per-mode RMS residual of the Z targets
  double bmo_proxy = 0.0;   // max over probes of fitted E[sum_{j>=i} |Z_j|^2 h]
  int ridge_doublings = 0;
};

// Regression coefficients per time step for Y and for each noisy feature
// mode of Z (coordinates beyond the feature modes vanish for cylindrical
// data and are reported as exact zeros). Step 0 collapses to plain Monte
// Carlo means because the start state is deterministic; its coefficients
// hold the constants. z_coeffs store the raw fitted functions; the clip at
// kappa (T - t_i)^{-1/2} applies to driver inputs only and is counted.
struct BSDESolution {
  TimeGrid grid;
  int m = 0;
  int degree = 0;
  std::vector<double> scale;     // feature scales (stationary std, 1 if dead)
  std::vector<int> z_modes;      // 1-based noisy modes <= m with a Z fit
  std::vector<std::vector<double>> y_coeffs;               // [step][slot]
  std::vector<std::vector<std::vector<double>>> z_coeffs;  // [step][zi][slot]
  double y0 = 0.0;
  std::vector<double> z0;        // length m, driver-clipped start value
  double kappa = 0.0;            // clip constant actually used
  double sup_phi = 0.0;
  long clip_total = 0;
  bool ridge_flagged = false;    // some step needed a larger ridge
  double bmo_proxy = 0.0;        // sup over steps and probes
  std::vector<BSDEStepDiag> diag;

  // replay inputs, so tangent solves rebuild the identical path ensemble
  std::vector<double> x0;
  int n_paths = 0;
  std::uint64_t seed = 0;

  double eval_y(int step, std::span<const double> x) const;
  // k is a 1-based mode index; modes without a fit return 0
  double eval_z(int step, int k, std::span<const double> x) const;

  std::string diagnostics_csv() const;
  nlohmann::json to_json() const;
  static BSDESolution from_json(const nlohmann::json& j);
};

// Solves on [t, model.T] from the deterministic start x. ham == nullptr
// drops the psi term (linear backward equation), l == nullptr drops the
// running cost. phi and l evaluate on path states, so their support must
// lie within the model dimension; Z fits cover noisy modes <= params.m.
BSDESolution solve_bsde(const SpectralModel& model, const HamiltonianSpec* ham,
                        const TerminalData& phi, const TerminalData* l, double t,
                        std::span<const double> x, int n_steps, int n_paths,
                        std::uint64_t seed, const BSDEParams& params = {});

// Same backward sweep on caller-supplied forward paths (refinement ladders
// with common random numbers via coarsen_noise).
BSDESolution solve_bsde_on_paths(const SpectralModel& model,
                                 const HamiltonianSpec* ham,
                                 const TerminalData& phi, const TerminalData* l,
                                 const PathEnsemble& ensemble,
                                 const BSDEParams& params = {});

// Directional derivative pair (F, V) of the backward solution along the
// start direction xi, solved on the same path ensemble as `base`:
//   F_s = <grad phi(X_T), e^{(T-t)A} sqrt(Q) xi>
//       + int_s^T [ <grad psi(Z_r), V_r> + <grad l(X_r), e^{(r-t)A} sqrt(Q) xi> ] dr
//       - int_s^T <V_r, dW_r>,
// with grad psi evaluated on the base Z fits. Requires differentiable data.
struct TangentSolution {
  double f0 = 0.0;
  std::vector<double> v0;  // length m
  double bound = 0.0;      // |xi| * (sup|grad_Q phi| + horizon * sup|grad_Q l|)
  bool bound_ok = false;
};

TangentSolution solve_tangent_bsde(const SpectralModel& model,
                                   const HamiltonianSpec* ham,
                                   const BSDESolution& base,
                                   const TerminalData& phi,
                                   const TerminalData* l,
                                   std::span<const double> xi);

// Gradient blow-up profile: solves the backward equation from each (t, probe)
// pair and records sup over probes of |Z_t| against the remaining time T - t,
// with the least-squares slope of log sup|Z| versus log(T - t).
struct ZProfileRow {
  double gap = 0.0;    // T - t
  double sup_z = 0.0;  // over probes
};

struct ZProfile {
  std::vector<ZProfileRow> rows;
  double slope = 0.0;
};

ZProfile z_profile(const SpectralModel& model, const HamiltonianSpec* ham,
                   const TerminalData& phi, const TerminalData* l,
                   std::span<const double> t_list,
                   const std::vector<std::vector<double>>& x_probes, int n_steps,
                   int n_paths, std::uint64_t seed, const BSDEParams& params = {});

// Terminal stability of Z: sup over t of
//   (T - t)^{1/2} |Z^a_t(x) - Z^b_t(x)| / sup|phi_a - phi_b|,
// with both solves driven by the same noise and the sup norm of the
// difference estimated on a probe grid. Identical terminal data is rejected.
struct StabilityReport {
  double ratio = 0.0;          // sup over t_list
  std::vector<double> per_t;
  double diff_norm = 0.0;      // estimated sup|phi_a - phi_b|
};

StabilityReport terminal_stability(const SpectralModel& model,
                                   const HamiltonianSpec* ham,
                                   const TerminalData& phi_a,
                                   const TerminalData& phi_b,
                                   std::span<const double> t_list,
                                   std::span<const double> x, int n_steps,
                                   int n_paths, std::uint64_t seed,
                                   const BSDEParams& params = {});

}  // namespace ouhjb
