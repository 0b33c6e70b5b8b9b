#include "ouhjb/hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ouhjb/rng.hpp"

namespace ouhjb {

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("hamiltonian config: unknown key '" + it.key() + "'");
    }
  }
}

double norm2(std::span<const double> z) {
  double s = 0.0;
  for (double v : z) s += v * v;
  return std::sqrt(s);
}

// z folded through the adjoint of R: <z, R(u)> = <fold(z), u>.
std::vector<double> fold_adjoint(const HamiltonianSpec& ham,
                                 std::span<const double> z) {
  std::vector<double> zt(z.begin(), z.end());
  if (ham.R == "diag") {
    if (z.size() > ham.R_diag.size()) {
      throw std::invalid_argument("hamiltonian: z longer than the diagonal of R");
    }
    for (size_t k = 0; k < zt.size(); ++k) zt[k] *= ham.R_diag[k];
  }
  return zt;
}

std::vector<double> apply_R(const HamiltonianSpec& ham, std::vector<double> u) {
  if (ham.R == "diag") {
    for (size_t k = 0; k < u.size(); ++k) u[k] *= ham.R_diag[k];
  }
  return u;
}

double radial_cost_deriv(const CostSpec& cost, double r, double q) {
  if (cost.kind == "power") return q * cost.coeff * std::pow(r, q - 1.0);
  double s = 0.0;
  for (size_t j = 0; j < cost.rp_coeffs.size(); ++j) {
    s += cost.rp_coeffs[j] * cost.rp_exponents[j] *
         std::pow(r, cost.rp_exponents[j] - 1.0);
  }
  return s;
}

// Smallest radius r with g(r)/r >= s; g(r)/r is nondecreasing for exponents >= 1.
double cost_threshold_radius(const CostSpec& cost, double q, double s) {
  if (s <= 0.0) return 0.0;
  double hi = 1.0;
  while (cost.radial(hi, q) < s * hi && hi < 1e12) hi *= 2.0;
  double lo = 0.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (cost.radial(mid, q) < s * mid) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

double golden_radial_min(const std::function<double(double)>& f, double a,
                         double b) {
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - invphi * (b - a);
  double d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && (b - a) > 1e-13 * (1.0 + b); ++it) {
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

struct Minimizer {
  std::vector<double> u;
  double value = 0.0;
};

// Full or ball K: the direction is -zt/|zt| and only the radius is free.
Minimizer radial_minimize(const HamiltonianSpec& ham,
                          const std::vector<double>& zt) {
  double zn = norm2(zt);
  Minimizer out;
  out.u.assign(zt.size(), 0.0);
  if (zn == 0.0) return out;

  double r_best;
  if (ham.cost.kind == "power") {
    r_best = std::pow(zn / (ham.q * ham.cost.coeff), 1.0 / (ham.q - 1.0));
  } else {
    double r_cap = cost_threshold_radius(ham.cost, ham.q, zn) + 1.0;
    auto profile = [&](double r) { return ham.cost.radial(r, ham.q) - zn * r; };
    r_best = golden_radial_min(profile, 0.0, r_cap);
  }
  if (ham.K.type == "ball") r_best = std::min(r_best, ham.K.radius);
  for (size_t k = 0; k < zt.size(); ++k) out.u[k] = -r_best * zt[k] / zn;
  out.value = ham.cost.radial(r_best, ham.q) - zn * r_best;
  if (out.value > 0.0) {  // u = 0 is always admissible and gives 0
    out.u.assign(zt.size(), 0.0);
    out.value = 0.0;
  }
  return out;
}

// Box K: projected gradient descent from several starts.
Minimizer box_minimize(const HamiltonianSpec& ham, const std::vector<double>& zt) {
  size_t n = zt.size();
  if (ham.K.halfwidth.size() < n) {
    throw std::invalid_argument("hamiltonian: box halfwidth shorter than z");
  }
  auto project = [&](std::vector<double>& u) {
    for (size_t k = 0; k < n; ++k) {
      u[k] = std::clamp(u[k], -ham.K.halfwidth[k], ham.K.halfwidth[k]);
    }
  };
  auto objective = [&](const std::vector<double>& u) {
    return ham.cost.radial(norm2(u), ham.q) +
           std::inner_product(u.begin(), u.end(), zt.begin(), 0.0);
  };

  std::vector<std::vector<double>> starts;
  starts.emplace_back(n, 0.0);
  {
    Minimizer unconstrained = radial_minimize(
        HamiltonianSpec{ham.q, ham.cost, "identity", {}, ControlSet{"full", 1.0, {}}},
        zt);
    project(unconstrained.u);
    starts.push_back(unconstrained.u);
  }
  for (double scale : {0.25, 0.5, 0.9}) {
    std::vector<double> u(n);
    for (size_t k = 0; k < n; ++k) {
      u[k] = zt[k] > 0 ? -scale * ham.K.halfwidth[k]
                       : (zt[k] < 0 ? scale * ham.K.halfwidth[k] : 0.0);
    }
    starts.push_back(u);
  }
  std::uint64_t s = 0x5DEECE66DULL;
  for (int extra = 0; extra < 3; ++extra) {
    std::vector<double> u(n);
    for (size_t k = 0; k < n; ++k) {
      double r = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
      u[k] = (2.0 * r - 1.0) * ham.K.halfwidth[k];
    }
    starts.push_back(u);
  }

  Minimizer best;
  best.u.assign(n, 0.0);
  best.value = 0.0;
  for (auto u : starts) {
    project(u);
    double f = objective(u);
    double step = 0.5;
    std::vector<double> grad(n), trial(n);
    for (int it = 0; it < 400; ++it) {
      double r = norm2(u);
      double gp = r > 1e-14 ? radial_cost_deriv(ham.cost, r, ham.q) / r : 0.0;
      for (size_t k = 0; k < n; ++k) grad[k] = gp * u[k] + zt[k];
      bool improved = false;
      while (step > 1e-14) {
        for (size_t k = 0; k < n; ++k) trial[k] = u[k] - step * grad[k];
        project(trial);
        double ft = objective(trial);
        if (ft < f - 1e-16) {
          u = trial;
          f = ft;
          improved = true;
          step *= 1.3;
          break;
        }
        step *= 0.5;
      }
      if (!improved) break;
    }
    if (f < best.value) best = {u, f};
  }
  return best;
}

Minimizer minimize(const HamiltonianSpec& ham, std::span<const double> z) {
  ham.validate();
  auto zt = fold_adjoint(ham, z);
  if (ham.K.type == "box") return box_minimize(ham, zt);
  return radial_minimize(ham, zt);
}

}  // namespace

void ControlSet::validate() const {
  if (type == "full") return;
  if (type == "ball") {
    if (radius <= 0.0) throw std::invalid_argument("ControlSet: ball radius must be > 0");
    return;
  }
  if (type == "box") {
    if (halfwidth.empty()) throw std::invalid_argument("ControlSet: box needs halfwidths");
    for (double w : halfwidth) {
      if (w <= 0.0) throw std::invalid_argument("ControlSet: halfwidths must be > 0");
    }
    return;
  }
  throw std::invalid_argument("ControlSet: unknown type '" + type + "'");
}

double CostSpec::radial(double r, double q) const {
  if (kind == "power") return coeff * std::pow(r, q);
  double s = 0.0;
  for (size_t j = 0; j < rp_coeffs.size(); ++j) {
    s += rp_coeffs[j] * std::pow(r, rp_exponents[j]);
  }
  return s;
}

void CostSpec::validate(double q) const {
  if (kind == "power") {
    if (coeff <= 0.0) throw std::invalid_argument("CostSpec: power coeff must be > 0");
    return;
  }
  if (kind == "radial-poly") {
    if (rp_coeffs.size() != rp_exponents.size() || rp_coeffs.empty()) {
      throw std::invalid_argument("CostSpec: radial-poly coeffs/exponents mismatch");
    }
    double top = 0.0;
    for (size_t j = 0; j < rp_coeffs.size(); ++j) {
      if (rp_coeffs[j] < 0.0) {
        throw std::invalid_argument("CostSpec: radial-poly coeffs must be >= 0");
      }
      if (rp_exponents[j] < 1.0 || rp_exponents[j] > q) {
        throw std::invalid_argument("CostSpec: radial-poly exponents must lie in [1, q]");
      }
      top = std::max(top, rp_exponents[j]);
    }
    // growth bounds C r^q <= g <= c (1 + r^q) need the leading power present
    bool has_leading = false;
    for (size_t j = 0; j < rp_coeffs.size(); ++j) {
      if (rp_exponents[j] == q && rp_coeffs[j] > 0.0) has_leading = true;
    }
    if (!has_leading) {
      throw std::invalid_argument("CostSpec: radial-poly needs a positive |u|^q term");
    }
    return;
  }
  throw std::invalid_argument("CostSpec: unknown kind '" + kind + "'");
}

void HamiltonianSpec::validate() const {
  if (!(q > 1.0)) throw std::invalid_argument("HamiltonianSpec: q must be > 1");
  cost.validate(q);
  if (R != "identity" && R != "diag") {
    throw std::invalid_argument("HamiltonianSpec: R must be identity or diag");
  }
  if (R == "diag" && R_diag.empty()) {
    throw std::invalid_argument("HamiltonianSpec: diag R needs entries");
  }
  K.validate();
}

double HamiltonianSpec::c_rad() const {
  double rbar = 1.0;
  if (R == "diag") {
    rbar = 0.0;
    for (double r : R_diag) rbar = std::max(rbar, std::fabs(r));
  }
  double pm1 = p() - 1.0;
  double best = 0.0;
  for (double zn : {0.0, 0.01, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0, 1000.0}) {
    double r_th = cost_threshold_radius(cost, q, rbar * zn);
    best = std::max(best, r_th / (1.0 + std::pow(zn, pm1)));
  }
  return 1.25 * best;
}

nlohmann::json ControlSet::to_json() const {
  nlohmann::json j;
  j["type"] = type;
  if (type == "ball") j["radius"] = radius;
  if (type == "box") j["halfwidth"] = halfwidth;
  return j;
}

ControlSet ControlSet::from_json(const nlohmann::json& j) {
  ControlSet k;
  k.type = j.at("type").get<std::string>();
  if (k.type == "full") {
    require_keys(j, {"type"});
  } else if (k.type == "ball") {
    require_keys(j, {"type", "radius"});
    k.radius = j.at("radius").get<double>();
  } else if (k.type == "box") {
    require_keys(j, {"type", "halfwidth"});
    k.halfwidth = j.at("halfwidth").get<std::vector<double>>();
  }
  k.validate();
  return k;
}

nlohmann::json CostSpec::to_json() const {
  nlohmann::json j;
  if (kind == "power") {
    j["cost"] = "power";
    j["coeff"] = coeff;
  } else {
    j["cost"] = "radial-poly";
    j["coeffs"] = rp_coeffs;
    j["exponents"] = rp_exponents;
  }
  return j;
}

CostSpec CostSpec::from_json(const nlohmann::json& j) {
  CostSpec c;
  c.kind = j.value("cost", "power");
  if (c.kind == "power") {
    c.coeff = j.value("coeff", 1.0);
  } else if (c.kind == "radial-poly") {
    c.rp_coeffs = j.at("coeffs").get<std::vector<double>>();
    c.rp_exponents = j.at("exponents").get<std::vector<double>>();
  } else {
    throw std::invalid_argument("CostSpec: unknown kind '" + c.kind + "'");
  }
  return c;
}

nlohmann::json HamiltonianSpec::to_json() const {
  nlohmann::json j = cost.to_json();
  j["q"] = q;
  j["R"] = R;
  if (R == "diag") j["R_diag"] = R_diag;
  j["K"] = K.to_json();
  return j;
}

HamiltonianSpec HamiltonianSpec::from_json(const nlohmann::json& j) {
  HamiltonianSpec ham;
  ham.q = j.at("q").get<double>();
  ham.cost = CostSpec::from_json(j);
  if (ham.cost.kind == "power") {
    require_keys(j, {"q", "cost", "coeff", "R", "R_diag", "K"});
  } else {
    require_keys(j, {"q", "cost", "coeffs", "exponents", "R", "R_diag", "K"});
  }
  ham.R = j.value("R", "identity");
  if (ham.R == "diag") ham.R_diag = j.at("R_diag").get<std::vector<double>>();
  if (j.contains("K")) ham.K = ControlSet::from_json(j.at("K"));
  ham.validate();
  return ham;
}

double psi_eval(const HamiltonianSpec& ham, std::span<const double> z) {
  return minimize(ham, z).value;
}

std::vector<double> psi_grad(const HamiltonianSpec& ham, std::span<const double> z) {
  // envelope identity: d psi / d z = R(gamma(z))
  return apply_R(ham, minimize(ham, z).u);
}

std::vector<double> gamma_argmin(const HamiltonianSpec& ham,
                                 std::span<const double> z) {
  return minimize(ham, z).u;
}

}  // namespace ouhjb
