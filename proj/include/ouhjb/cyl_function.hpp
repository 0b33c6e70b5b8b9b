#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace ouhjb {

// Closed catalog of bounded cylindrical scalar fields on mode coordinates.
// Every entry knows its support (the 1-based mode indices it reads), a sup
// bound, and, when it exists, its gradient and a Lipschitz bound.
class CylFunction {
 public:
  enum class Family {
    kConstant,       // c
    kLinearTanh,     // tanh(a*x_j + b)
    kClippedPower,   // min(1, |x_j|^r), r in (0,1]
    kQuadraticForm,  // min(cap, 0.5 * sum_j c_j x_j^2), c_j >= 0
    kSum,            // sum_i w_i f_i
    kProduct,        // prod_i f_i
  };

  static CylFunction constant(double value);
  static CylFunction linear_tanh(double a, double b, int mode);
  static CylFunction clipped_power(double r, int mode);
  static CylFunction quadratic_form(double cap, std::vector<int> modes,
                                    std::vector<double> coeffs);
  static CylFunction sum(std::vector<double> weights,
                         std::vector<CylFunction> terms);
  static CylFunction product(std::vector<CylFunction> terms);

  double operator()(std::span<const double> x) const { return eval(x); }
  double eval(std::span<const double> x) const;

  // d/dx_k; only valid when differentiable() is true.
  double partial(int k, std::span<const double> x) const;

  const std::vector<int>& support() const { return support_; }
  int max_support_mode() const;
  double sup_bound() const;
  bool differentiable() const;
  std::optional<double> lipschitz_bound() const;
  Family family() const { return family_; }

  nlohmann::json to_json() const;
  static CylFunction from_json(const nlohmann::json& j);

 private:
  CylFunction() = default;
  void rebuild_support();

  Family family_ = Family::kConstant;
  double value_ = 0.0;  // constant value / quadratic cap
  double a_ = 1.0;
  double b_ = 0.0;
  double r_ = 1.0;
  int mode_ = 1;
  std::vector<int> modes_;
  std::vector<double> coeffs_;
  std::vector<double> weights_;
  std::vector<CylFunction> terms_;
  std::vector<int> support_;
};

}  // namespace ouhjb
