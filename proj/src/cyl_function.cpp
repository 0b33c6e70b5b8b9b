#include "ouhjb/cyl_function.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace ouhjb {

namespace {

double coord(std::span<const double> x, int mode) {
  if (mode < 1 || static_cast<size_t>(mode) > x.size()) {
    throw std::invalid_argument("CylFunction: coordinate vector too short for support");
  }
  return x[mode - 1];
}

void require_keys(const nlohmann::json& j,
                  const std::set<std::string>& allowed) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::invalid_argument("CylFunction: unknown key '" + it.key() + "'");
    }
  }
}

}  // namespace

CylFunction CylFunction::constant(double value) {
  CylFunction f;
  f.family_ = Family::kConstant;
  f.value_ = value;
  f.rebuild_support();
  return f;
}

CylFunction CylFunction::linear_tanh(double a, double b, int mode) {
  if (mode < 1) throw std::invalid_argument("linear_tanh: mode must be >= 1");
  CylFunction f;
  f.family_ = Family::kLinearTanh;
  f.a_ = a;
  f.b_ = b;
  f.mode_ = mode;
  f.rebuild_support();
  return f;
}

CylFunction CylFunction::clipped_power(double r, int mode) {
  if (!(r > 0.0 && r <= 1.0)) {
    throw std::invalid_argument("clipped_power: r must lie in (0, 1]");
  }
  if (mode < 1) throw std::invalid_argument("clipped_power: mode must be >= 1");
  CylFunction f;
  f.family_ = Family::kClippedPower;
  f.r_ = r;
  f.mode_ = mode;
  f.rebuild_support();
  return f;
}

CylFunction CylFunction::quadratic_form(double cap, std::vector<int> modes,
                                        std::vector<double> coeffs) {
  if (cap <= 0.0) throw std::invalid_argument("quadratic_form: cap must be > 0");
  if (modes.size() != coeffs.size() || modes.empty()) {
    throw std::invalid_argument("quadratic_form: modes/coeffs size mismatch");
  }
  for (int m : modes) {
    if (m < 1) throw std::invalid_argument("quadratic_form: mode must be >= 1");
  }
  for (double c : coeffs) {
    if (c < 0.0) throw std::invalid_argument("quadratic_form: coeffs must be >= 0");
  }
  CylFunction f;
  f.family_ = Family::kQuadraticForm;
  f.value_ = cap;
  f.modes_ = std::move(modes);
  f.coeffs_ = std::move(coeffs);
  f.rebuild_support();
  return f;
}

CylFunction CylFunction::sum(std::vector<double> weights,
                             std::vector<CylFunction> terms) {
  if (weights.size() != terms.size() || terms.empty()) {
    throw std::invalid_argument("sum: weights/terms size mismatch");
  }
  CylFunction f;
  f.family_ = Family::kSum;
  f.weights_ = std::move(weights);
  f.terms_ = std::move(terms);
  f.rebuild_support();
  return f;
}

CylFunction CylFunction::product(std::vector<CylFunction> terms) {
  if (terms.empty()) throw std::invalid_argument("product: needs at least one term");
  CylFunction f;
  f.family_ = Family::kProduct;
  f.terms_ = std::move(terms);
  f.rebuild_support();
  return f;
}

void CylFunction::rebuild_support() {
  std::set<int> s;
  switch (family_) {
    case Family::kConstant:
      break;
    case Family::kLinearTanh:
    case Family::kClippedPower:
      s.insert(mode_);
      break;
    case Family::kQuadraticForm:
      s.insert(modes_.begin(), modes_.end());
      break;
    case Family::kSum:
    case Family::kProduct:
      for (const auto& t : terms_) {
        s.insert(t.support_.begin(), t.support_.end());
      }
      break;
  }
  support_.assign(s.begin(), s.end());
}

int CylFunction::max_support_mode() const {
  return support_.empty() ? 0 : support_.back();
}

double CylFunction::eval(std::span<const double> x) const {
  switch (family_) {
    case Family::kConstant:
      return value_;
    case Family::kLinearTanh:
      return std::tanh(a_ * coord(x, mode_) + b_);
    case Family::kClippedPower:
      return std::min(1.0, std::pow(std::fabs(coord(x, mode_)), r_));
    case Family::kQuadraticForm: {
      double q = 0.0;
      for (size_t i = 0; i < modes_.size(); ++i) {
        double xi = coord(x, modes_[i]);
        q += 0.5 * coeffs_[i] * xi * xi;
      }
      return std::min(value_, q);
    }
    case Family::kSum: {
      double v = 0.0;
      for (size_t i = 0; i < terms_.size(); ++i) v += weights_[i] * terms_[i].eval(x);
      return v;
    }
    case Family::kProduct: {
      double v = 1.0;
      for (const auto& t : terms_) v *= t.eval(x);
      return v;
    }
  }
  throw std::logic_error("CylFunction: bad family");
}

double CylFunction::partial(int k, std::span<const double> x) const {
  switch (family_) {
    case Family::kConstant:
      return 0.0;
    case Family::kLinearTanh: {
      if (k != mode_) return 0.0;
      double t = std::tanh(a_ * coord(x, mode_) + b_);
      return a_ * (1.0 - t * t);
    }
    case Family::kClippedPower:
      throw std::logic_error("CylFunction: clipped power has no gradient");
    case Family::kQuadraticForm:
      throw std::logic_error("CylFunction: clipped quadratic has no gradient");
    case Family::kSum: {
      double v = 0.0;
      for (size_t i = 0; i < terms_.size(); ++i) {
        v += weights_[i] * terms_[i].partial(k, x);
      }
      return v;
    }
    case Family::kProduct: {
      double v = 0.0;
      for (size_t i = 0; i < terms_.size(); ++i) {
        double d = terms_[i].partial(k, x);
        if (d == 0.0) continue;
        double p = d;
        for (size_t j = 0; j < terms_.size(); ++j) {
          if (j != i) p *= terms_[j].eval(x);
        }
        v += p;
      }
      return v;
    }
  }
  throw std::logic_error("CylFunction: bad family");
}

double CylFunction::sup_bound() const {
  switch (family_) {
    case Family::kConstant:
      return std::fabs(value_);
    case Family::kLinearTanh:
    case Family::kClippedPower:
      return 1.0;
    case Family::kQuadraticForm:
      return value_;
    case Family::kSum: {
      double b = 0.0;
      for (size_t i = 0; i < terms_.size(); ++i) {
        b += std::fabs(weights_[i]) * terms_[i].sup_bound();
      }
      return b;
    }
    case Family::kProduct: {
      double b = 1.0;
      for (const auto& t : terms_) b *= t.sup_bound();
      return b;
    }
  }
  throw std::logic_error("CylFunction: bad family");
}

bool CylFunction::differentiable() const {
  switch (family_) {
    case Family::kConstant:
    case Family::kLinearTanh:
      return true;
    case Family::kClippedPower:
    case Family::kQuadraticForm:
      return false;
    case Family::kSum:
    case Family::kProduct:
      return std::all_of(terms_.begin(), terms_.end(),
                         [](const CylFunction& t) { return t.differentiable(); });
  }
  return false;
}

std::optional<double> CylFunction::lipschitz_bound() const {
  switch (family_) {
    case Family::kConstant:
      return 0.0;
    case Family::kLinearTanh:
      return std::fabs(a_);
    case Family::kClippedPower:
      return r_ == 1.0 ? std::optional<double>(1.0) : std::nullopt;
    case Family::kQuadraticForm: {
      // gradient is c_j x_j below the cap; on the cap surface
      // 0.5 c_j x_j^2 <= cap gives |c_j x_j| <= sqrt(2 cap c_j)
      double m = 0.0;
      for (double c : coeffs_) m = std::max(m, std::sqrt(2.0 * value_ * c));
      return m;
    }
    case Family::kSum: {
      double b = 0.0;
      for (size_t i = 0; i < terms_.size(); ++i) {
        auto lt = terms_[i].lipschitz_bound();
        if (!lt) return std::nullopt;
        b += std::fabs(weights_[i]) * *lt;
      }
      return b;
    }
    case Family::kProduct: {
      double b = 0.0;
      for (size_t i = 0; i < terms_.size(); ++i) {
        auto lt = terms_[i].lipschitz_bound();
        if (!lt) return std::nullopt;
        double p = *lt;
        for (size_t j = 0; j < terms_.size(); ++j) {
          if (j != i) p *= terms_[j].sup_bound();
        }
        b += p;
      }
      return b;
    }
  }
  return std::nullopt;
}

nlohmann::json CylFunction::to_json() const {
  nlohmann::json j;
  switch (family_) {
    case Family::kConstant:
      j["family"] = "constant";
      j["value"] = value_;
      break;
    case Family::kLinearTanh:
      j["family"] = "linear-tanh";
      j["a"] = a_;
      j["b"] = b_;
      j["mode"] = mode_;
      break;
    case Family::kClippedPower:
      j["family"] = "clipped-power";
      j["r"] = r_;
      j["mode"] = mode_;
      break;
    case Family::kQuadraticForm:
      j["family"] = "quadratic-form";
      j["cap"] = value_;
      j["modes"] = modes_;
      j["coeffs"] = coeffs_;
      break;
    case Family::kSum: {
      j["family"] = "sum";
      j["weights"] = weights_;
      nlohmann::json terms = nlohmann::json::array();
      for (const auto& t : terms_) terms.push_back(t.to_json());
      j["terms"] = terms;
      break;
    }
    case Family::kProduct: {
      j["family"] = "product";
      nlohmann::json terms = nlohmann::json::array();
      for (const auto& t : terms_) terms.push_back(t.to_json());
      j["terms"] = terms;
      break;
    }
  }
  return j;
}

CylFunction CylFunction::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("family")) {
    throw std::invalid_argument("CylFunction: expected object with 'family'");
  }
  const std::string family = j.at("family").get<std::string>();
  if (family == "constant") {
    require_keys(j, {"family", "value"});
    return constant(j.at("value").get<double>());
  }
  if (family == "linear-tanh") {
    require_keys(j, {"family", "a", "b", "mode"});
    return linear_tanh(j.at("a").get<double>(), j.at("b").get<double>(),
                       j.at("mode").get<int>());
  }
  if (family == "clipped-power") {
    require_keys(j, {"family", "r", "mode"});
    return clipped_power(j.at("r").get<double>(), j.at("mode").get<int>());
  }
  if (family == "quadratic-form") {
    require_keys(j, {"family", "cap", "modes", "coeffs"});
    return quadratic_form(j.at("cap").get<double>(),
                          j.at("modes").get<std::vector<int>>(),
                          j.at("coeffs").get<std::vector<double>>());
  }
  if (family == "sum") {
    require_keys(j, {"family", "weights", "terms"});
    std::vector<CylFunction> terms;
    for (const auto& t : j.at("terms")) terms.push_back(from_json(t));
    return sum(j.at("weights").get<std::vector<double>>(), std::move(terms));
  }
  if (family == "product") {
    require_keys(j, {"family", "terms"});
    std::vector<CylFunction> terms;
    for (const auto& t : j.at("terms")) terms.push_back(from_json(t));
    return product(std::move(terms));
  }
  throw std::invalid_argument("CylFunction: unknown family '" + family + "'");
}

}  // namespace ouhjb
