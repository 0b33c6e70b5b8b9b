#pragma once

#include <span>
#include <string>
#include <vector>

namespace ouhjb {

// One eigenmode of the commuting pair (A, Q): A e_k = -alpha_k e_k and
// Q e_k = lambda_k e_k, with alpha_k > 0 and lambda_k >= 0.
struct ModeSpec {
  int k = 0;
  double alpha = 1.0;
  double lambda = 0.0;
};

struct NoiseRule {
  std::string rule = "white";  // "white" (lambda_k = sigma2) or "power" (lambda_k = alpha_k^beta)
  double sigma2 = 1.0;
  double beta = 0.0;
};

// Diagonal Ornstein-Uhlenbeck model dX = AX dt + sqrt(Q) dW on the first N
// eigenmodes, plus the time horizon of the terminal-value problem.
struct SpectralModel {
  std::vector<ModeSpec> modes;
  double T = 1.0;
  std::string preset = "custom";
  double beta = 0.0;  // recorded for the power noise rule

  int dim() const { return static_cast<int>(modes.size()); }
  const ModeSpec& mode(int k) const;  // 1-based

  double decay(int k, double t) const;           // e^{-alpha_k t}
  double stationary_var(int k) const;            // lambda_k / (2 alpha_k)
  std::vector<double> stationary_std() const;    // per mode
  int noisy_count() const;                       // modes with lambda_k > 0
  void validate() const;
};

// Dirichlet Laplacian modes on (0, L): alpha_k = (k pi / L)^2.
SpectralModel heat_preset(double L, int N, const NoiseRule& noise, double T);

// Explicit mode list.
SpectralModel custom_model(std::vector<ModeSpec> modes, double T);

// Per-mode OU covariance q_k(t) = lambda_k (1 - e^{-2 alpha_k t}) / (2 alpha_k).
double ou_covariance(const SpectralModel& m, int k, double t);

// Componentwise semigroup mean e^{tA} x.
std::vector<double> semigroup_mean(const SpectralModel& m,
                                   std::span<const double> x, double t);

// Operator norm of Q_t^{-1/2} e^{tA} sqrt(Q) over the noisy modes; the
// quantity that controls gradient smoothing of the transition semigroup.
double smoothing_norm(const SpectralModel& m, double t);

// sup over a log grid in [t_lo, t_hi] of sqrt(t) * smoothing_norm(t);
// the measured constant in the t^{-1/2} smoothing estimate.
double smoothing_constant(const SpectralModel& m, double t_lo, double t_hi,
                          int n_grid = 64);

// Kernel weight sum_k xi_k sqrt(lambda_k) e^{-alpha_k t} z_k / q_k(t).
// Under z ~ N(0, Q_t) it is the score factor whose correlation with
// f(e^{tA} x + z) gives the sqrt(Q)-directional derivative of P_t[f] along xi.
double grad_kernel_weight(const SpectralModel& m, double t,
                          std::span<const double> xi, std::span<const double> z);

}  // namespace ouhjb
