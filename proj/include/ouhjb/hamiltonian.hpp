#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ouhjb {

// Control constraint set K.
struct ControlSet {
  std::string type = "full";  // "full" | "ball" | "box"
  double radius = 1.0;        // ball
  std::vector<double> halfwidth;  // box, per coordinate

  void validate() const;
  nlohmann::json to_json() const;
  static ControlSet from_json(const nlohmann::json& j);
};

// Running control cost g(u). "power": g = coeff * |u|^q. "radial-poly":
// g = sum_j c_j |u|^{e_j} with exponents in [1, q] and the leading term
// exactly |u|^q, which keeps the growth bounds c|u|^q <= g <= C(1+|u|^q).
struct CostSpec {
  std::string kind = "power";
  double coeff = 1.0;
  std::vector<double> rp_coeffs;
  std::vector<double> rp_exponents;

  double radial(double r, double q) const;        // g at |u| = r
  void validate(double q) const;
  nlohmann::json to_json() const;
  static CostSpec from_json(const nlohmann::json& j);
};

// Hamiltonian psi(z) = inf_{u in K} { g(u) + <z, R(u)> }, with R identity or
// a diagonal map R(u)_k = r_k u_k. gamma_argmin returns the minimizer, and
// the gradient is R(gamma(z)) by the envelope identity.
struct HamiltonianSpec {
  double q = 2.0;  // growth exponent, q > 1
  CostSpec cost;
  std::string R = "identity";  // "identity" | "diag"
  std::vector<double> R_diag;
  ControlSet K;

  double p() const { return q / (q - 1.0); }
  void validate() const;

  // Radius constant of the minimizer bound |gamma(z)| <= c_rad (1 + |z|^{p-1}),
  // found by scanning for the radius beyond which the objective exceeds the
  // u = 0 value, across a ladder of |z| scales.
  double c_rad() const;

  nlohmann::json to_json() const;
  static HamiltonianSpec from_json(const nlohmann::json& j);
};

double psi_eval(const HamiltonianSpec& ham, std::span<const double> z);
std::vector<double> psi_grad(const HamiltonianSpec& ham, std::span<const double> z);
std::vector<double> gamma_argmin(const HamiltonianSpec& ham, std::span<const double> z);

}  // namespace ouhjb
