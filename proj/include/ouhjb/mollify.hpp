#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ouhjb/cyl_function.hpp"

namespace ouhjb {

// Variational regularization of terminal data. "inf" is the Moreau
// inf-convolution  phi_n(x) = inf_y { phi(y) + 2n |x-y|^2 },  "infsup" the
// two-sided variant  sup_z { inf_y [ phi(y) + (n/2)|z-y|^2 ] - n|x-z|^2 }.
// Both preserve the sup bound and converge uniformly as n grows.
struct MollifySpec {
  std::string scheme = "inf";  // "inf" | "infsup"
  int n = 1;                   // regularization index >= 1

  void validate() const;
  nlohmann::json to_json() const;
  static MollifySpec from_json(const nlohmann::json& j);
};

// The optimizations run only over the support coordinates of the base
// function (the quadratic penalty cancels the rest), by nested grid scans
// within the localization radius of the minimizer. Supports of size > 2 are
// rejected unless allow_sampled enables the multi-start descent fallback.
double moreau_envelope(const CylFunction& base, int n, std::span<const double> x,
                       bool allow_sampled = false);
double infsup_convolution(const CylFunction& base, int n,
                          std::span<const double> x, bool allow_sampled = false);

class MollifiedFunction {
 public:
  MollifiedFunction(CylFunction base, MollifySpec spec, bool allow_sampled = false);

  double eval(std::span<const double> x) const;
  double sup_bound() const;  // bound of the base, preserved by the envelope
  const std::vector<int>& support() const { return support_; }
  int max_support_mode() const;
  const MollifySpec& spec() const { return spec_; }
  const CylFunction& base() const { return base_; }

 private:
  CylFunction base_;
  MollifySpec spec_;
  bool allow_sampled_ = false;
  std::vector<int> support_;
};

}  // namespace ouhjb
