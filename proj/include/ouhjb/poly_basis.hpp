#pragma once

#include <span>
#include <vector>

#include "ouhjb/spectral_model.hpp"

namespace ouhjb {

// Tensor polynomial space of total degree <= degree over the leading m mode
// coordinates, scaled mode-by-mode (normally by the stationary standard
// deviation). Coefficients are stored against scaled monomials
// prod_k (x_k / s_k)^{kappa_k}, ordered by the multi-index list.
class PolyBasis {
 public:
  PolyBasis(int m, int degree, std::vector<double> scale);

  int m() const { return m_; }
  int degree() const { return degree_; }
  size_t size() const { return indices_.size(); }
  const std::vector<std::vector<int>>& indices() const { return indices_; }
  const std::vector<double>& scale() const { return scale_; }

  // position of a multi-index in the coefficient ordering
  int slot_of(const std::vector<int>& kappa) const { return slot(kappa); }

  // value of sum_kappa coeffs[kappa] * prod (x_k/s_k)^kappa_k; x must cover
  // the first m coordinates
  double eval(std::span<const double> coeffs, std::span<const double> x) const;

  // raw scaled-monomial values at x, one per basis slot (regression features)
  void features(std::span<const double> x, std::span<double> out) const;

  // coefficients of d/dx_k f (k is 1-based), same basis
  std::vector<double> mode_derivative(std::span<const double> coeffs, int k) const;

  // exact coefficients of P_dt f for the OU transition kernel: per mode the
  // monomial u^j maps through the binomial Gaussian moment expansion of
  // ((decay_k x + Z_k)/s_k)^j, preserving total degree
  std::vector<double> semigroup_transform(const SpectralModel& model, double dt,
                                          std::span<const double> coeffs) const;

 private:
  int m_ = 0;
  int degree_ = 0;
  std::vector<double> scale_;
  std::vector<std::vector<int>> indices_;  // multi-indices, |kappa| <= degree
  std::vector<int> lookup_;                // dense mixed-radix index -> basis slot
  int radix_ = 1;

  int slot(const std::vector<int>& kappa) const;
};

// Weighted least-squares fitter on the tensor Gauss-Hermite probe set of the
// scaled Gaussian N(0, diag(scale^2)). With Hermite features the Gram matrix
// is exactly diagonal at this node count, so the fit is a stable projection;
// the result is converted back to scaled-monomial coefficients.
class GaussianProjector {
 public:
  GaussianProjector(const PolyBasis& basis, int nodes_per_axis = 5);

  const std::vector<std::vector<double>>& probes() const { return probes_; }
  size_t probe_count() const { return probes_.size(); }
  const std::vector<double>& weights() const { return weights_; }

  // fit values sampled at probes() into scaled-monomial coefficients
  std::vector<double> project(std::span<const double> values) const;

  // evaluate monomial coefficients at every probe (basis.eval convenience)
  std::vector<double> eval_at_probes(std::span<const double> coeffs) const;

 private:
  const PolyBasis& basis_;
  std::vector<std::vector<double>> probes_;   // full m-vectors
  std::vector<double> weights_;               // tensor GH weights, sum 1
  std::vector<std::vector<double>> hermite_;  // [probe][basis slot]
  std::vector<double> inv_gram_;              // 1 / (kappa!) per slot
  std::vector<std::vector<double>> mono_;     // [probe][basis slot]
};

}  // namespace ouhjb
