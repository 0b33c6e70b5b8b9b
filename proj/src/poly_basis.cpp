#include "ouhjb/poly_basis.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "ouhjb/quadrature.hpp"

namespace ouhjb {

namespace {

void enumerate_indices(int m, int degree, int pos, int remaining,
                       std::vector<int>& current,
                       std::vector<std::vector<int>>& out) {
  if (pos == m) {
    out.push_back(current);
    return;
  }
  for (int j = 0; j <= remaining; ++j) {
    current[pos] = j;
    enumerate_indices(m, degree, pos + 1, remaining - j, current, out);
  }
  current[pos] = 0;
}

// new_coeffs[kappa with kappa_k = i] += coeffs[kappa] * M[i][kappa_k]
std::vector<double> apply_mode_matrix(
    const std::vector<std::vector<int>>& indices,
    const std::function<int(const std::vector<int>&)>& slot,
    std::span<const double> coeffs, int axis,
    const std::vector<std::vector<double>>& M) {
  std::vector<double> out(coeffs.size(), 0.0);
  std::vector<int> kappa;
  for (size_t s = 0; s < indices.size(); ++s) {
    double c = coeffs[s];
    if (c == 0.0) continue;
    kappa = indices[s];
    int j = kappa[axis];
    for (int i = 0; i <= j; ++i) {
      double w = M[i][j];
      if (w == 0.0) continue;
      kappa[axis] = i;
      out[slot(kappa)] += c * w;
    }
    kappa[axis] = j;
  }
  return out;
}

double double_factorial_odd(int r) {  // (r-1)!! for even r >= 0
  double v = 1.0;
  for (int i = r - 1; i >= 1; i -= 2) v *= i;
  return v;
}

}  // namespace

PolyBasis::PolyBasis(int m, int degree, std::vector<double> scale)
    : m_(m), degree_(degree), scale_(std::move(scale)) {
  if (m < 1) throw std::invalid_argument("PolyBasis: need m >= 1");
  if (degree < 0) throw std::invalid_argument("PolyBasis: need degree >= 0");
  if (static_cast<int>(scale_.size()) < m) {
    throw std::invalid_argument("PolyBasis: scale shorter than m");
  }
  scale_.resize(m);
  for (double s : scale_) {
    if (!(s > 0.0)) throw std::invalid_argument("PolyBasis: scales must be > 0");
  }
  std::vector<int> current(m, 0);
  enumerate_indices(m, degree, 0, degree, current, indices_);

  radix_ = degree + 1;
  size_t dense = 1;
  for (int k = 0; k < m; ++k) dense *= radix_;
  lookup_.assign(dense, -1);
  for (size_t s = 0; s < indices_.size(); ++s) {
    size_t key = 0;
    for (int k = m - 1; k >= 0; --k) key = key * radix_ + indices_[s][k];
    lookup_[key] = static_cast<int>(s);
  }
}

int PolyBasis::slot(const std::vector<int>& kappa) const {
  size_t key = 0;
  for (int k = m_ - 1; k >= 0; --k) key = key * radix_ + kappa[k];
  int s = lookup_[key];
  if (s < 0) throw std::logic_error("PolyBasis: index outside the space");
  return s;
}

double PolyBasis::eval(std::span<const double> coeffs,
                       std::span<const double> x) const {
  if (coeffs.size() != indices_.size()) {
    throw std::invalid_argument("PolyBasis::eval: coefficient size mismatch");
  }
  if (x.size() < static_cast<size_t>(m_)) {
    throw std::invalid_argument("PolyBasis::eval: x shorter than m");
  }
  // powers[k][j] = (x_k / s_k)^j
  std::vector<std::vector<double>> powers(m_, std::vector<double>(degree_ + 1, 1.0));
  for (int k = 0; k < m_; ++k) {
    double u = x[k] / scale_[k];
    for (int j = 1; j <= degree_; ++j) powers[k][j] = powers[k][j - 1] * u;
  }
  double acc = 0.0;
  for (size_t s = 0; s < indices_.size(); ++s) {
    double c = coeffs[s];
    if (c == 0.0) continue;
    double term = c;
    for (int k = 0; k < m_; ++k) term *= powers[k][indices_[s][k]];
    acc += term;
  }
  return acc;
}

void PolyBasis::features(std::span<const double> x, std::span<double> out) const {
  if (out.size() != indices_.size()) {
    throw std::invalid_argument("PolyBasis::features: output size mismatch");
  }
  if (x.size() < static_cast<size_t>(m_)) {
    throw std::invalid_argument("PolyBasis::features: x shorter than m");
  }
  std::vector<std::vector<double>> powers(m_, std::vector<double>(degree_ + 1, 1.0));
  for (int k = 0; k < m_; ++k) {
    double u = x[k] / scale_[k];
    for (int j = 1; j <= degree_; ++j) powers[k][j] = powers[k][j - 1] * u;
  }
  for (size_t s = 0; s < indices_.size(); ++s) {
    double term = 1.0;
    for (int k = 0; k < m_; ++k) term *= powers[k][indices_[s][k]];
    out[s] = term;
  }
}

std::vector<double> PolyBasis::mode_derivative(std::span<const double> coeffs,
                                               int k) const {
  if (k < 1 || k > m_) throw std::invalid_argument("mode_derivative: k out of range");
  if (coeffs.size() != indices_.size()) {
    throw std::invalid_argument("mode_derivative: coefficient size mismatch");
  }
  std::vector<double> out(coeffs.size(), 0.0);
  std::vector<int> kappa;
  for (size_t s = 0; s < indices_.size(); ++s) {
    double c = coeffs[s];
    int j = indices_[s][k - 1];
    if (c == 0.0 || j == 0) continue;
    kappa = indices_[s];
    kappa[k - 1] = j - 1;
    out[slot(kappa)] += c * j / scale_[k - 1];
  }
  return out;
}

std::vector<double> PolyBasis::semigroup_transform(
    const SpectralModel& model, double dt, std::span<const double> coeffs) const {
  if (model.dim() < m_) {
    throw std::invalid_argument("semigroup_transform: model has fewer modes than m");
  }
  if (dt < 0.0) throw std::invalid_argument("semigroup_transform: dt must be >= 0");
  if (coeffs.size() != indices_.size()) {
    throw std::invalid_argument("semigroup_transform: coefficient size mismatch");
  }
  // binomial coefficients up to degree
  std::vector<std::vector<double>> binom(degree_ + 1,
                                         std::vector<double>(degree_ + 1, 0.0));
  for (int j = 0; j <= degree_; ++j) {
    binom[j][0] = 1.0;
    for (int i = 1; i <= j; ++i) {
      binom[j][i] = binom[j - 1][i - 1] + (i <= j - 1 ? binom[j - 1][i] : 0.0);
    }
  }

  std::vector<double> cur(coeffs.begin(), coeffs.end());
  auto slot_fn = [this](const std::vector<int>& kappa) { return slot(kappa); };
  for (int k = 1; k <= m_; ++k) {
    double decay = model.decay(k, dt);
    double q = ou_covariance(model, k, dt);
    double s = scale_[k - 1];
    // E[((decay x + Z)/s)^j] = sum_i binom(j,i) decay^i (x/s)^i E[Z^{j-i}]/s^{j-i}
    std::vector<std::vector<double>> M(degree_ + 1,
                                       std::vector<double>(degree_ + 1, 0.0));
    for (int j = 0; j <= degree_; ++j) {
      for (int i = j; i >= 0; --i) {
        int r = j - i;
        if (r % 2 != 0) continue;
        double moment = r == 0 ? 1.0 : std::pow(q, r / 2) * double_factorial_odd(r);
        M[i][j] = binom[j][i] * std::pow(decay, i) * moment / std::pow(s, r);
      }
    }
    cur = apply_mode_matrix(indices_, slot_fn, cur, k - 1, M);
  }
  return cur;
}

GaussianProjector::GaussianProjector(const PolyBasis& basis, int nodes_per_axis)
    : basis_(basis) {
  int d = basis.degree();
  if (nodes_per_axis < d + 1) {
    throw std::invalid_argument(
        "GaussianProjector: need at least degree+1 nodes per axis for an exact Gram");
  }
  GaussRule gh = gauss_hermite(nodes_per_axis);
  int m = basis.m();

  size_t total = 1;
  for (int k = 0; k < m; ++k) total *= nodes_per_axis;
  probes_.reserve(total);
  weights_.reserve(total);
  for (size_t flat = 0; flat < total; ++flat) {
    size_t rem = flat;
    std::vector<double> x(m);
    double w = 1.0;
    for (int k = 0; k < m; ++k) {
      int idx = static_cast<int>(rem % nodes_per_axis);
      rem /= nodes_per_axis;
      x[k] = basis.scale()[k] * gh.nodes[idx];
      w *= gh.weights[idx];
    }
    probes_.push_back(std::move(x));
    weights_.push_back(w);
  }

  // Hermite features He_kappa(u) and monomial features u^kappa per probe
  const auto& idx = basis.indices();
  hermite_.assign(total, std::vector<double>(idx.size(), 0.0));
  mono_.assign(total, std::vector<double>(idx.size(), 0.0));
  for (size_t p = 0; p < total; ++p) {
    std::vector<std::vector<double>> he(m, std::vector<double>(d + 1, 1.0));
    std::vector<std::vector<double>> pw(m, std::vector<double>(d + 1, 1.0));
    for (int k = 0; k < m; ++k) {
      double u = probes_[p][k] / basis.scale()[k];
      if (d >= 1) {
        he[k][1] = u;
        pw[k][1] = u;
      }
      for (int j = 2; j <= d; ++j) {
        he[k][j] = u * he[k][j - 1] - (j - 1) * he[k][j - 2];
        pw[k][j] = u * pw[k][j - 1];
      }
    }
    for (size_t s = 0; s < idx.size(); ++s) {
      double hv = 1.0, mv = 1.0;
      for (int k = 0; k < m; ++k) {
        hv *= he[k][idx[s][k]];
        mv *= pw[k][idx[s][k]];
      }
      hermite_[p][s] = hv;
      mono_[p][s] = mv;
    }
  }

  inv_gram_.resize(idx.size());
  for (size_t s = 0; s < idx.size(); ++s) {
    double fact = 1.0;
    for (int k = 0; k < m; ++k) {
      for (int j = 2; j <= idx[s][k]; ++j) fact *= j;
    }
    inv_gram_[s] = 1.0 / fact;
  }
}

std::vector<double> GaussianProjector::project(std::span<const double> values) const {
  if (values.size() != probes_.size()) {
    throw std::invalid_argument("GaussianProjector::project: value count mismatch");
  }
  const auto& idx = basis_.indices();
  // Hermite coefficients by weighted inner products (Gram exactly diagonal)
  std::vector<double> a(idx.size(), 0.0);
  for (size_t p = 0; p < probes_.size(); ++p) {
    double wv = weights_[p] * values[p];
    if (wv == 0.0) continue;
    const auto& row = hermite_[p];
    for (size_t s = 0; s < idx.size(); ++s) a[s] += wv * row[s];
  }
  for (size_t s = 0; s < idx.size(); ++s) a[s] *= inv_gram_[s];

  // convert Hermite coefficients to scaled-monomial coefficients, mode by mode
  int d = basis_.degree();
  std::vector<std::vector<double>> H(d + 1, std::vector<double>(d + 1, 0.0));
  H[0][0] = 1.0;  // He_j = sum_i H[i][j] u^i
  if (d >= 1) H[1][1] = 1.0;
  for (int j = 2; j <= d; ++j) {
    for (int i = 0; i <= j; ++i) {
      double v = (i >= 1 ? H[i - 1][j - 1] : 0.0) - (j - 1) * H[i][j - 2];
      H[i][j] = v;
    }
  }
  auto slot_fn = [this](const std::vector<int>& kappa) {
    return basis_.slot_of(kappa);
  };
  std::vector<double> cur = a;
  for (int axis = 0; axis < basis_.m(); ++axis) {
    cur = apply_mode_matrix(idx, slot_fn, cur, axis, H);
  }
  return cur;
}

std::vector<double> GaussianProjector::eval_at_probes(
    std::span<const double> coeffs) const {
  if (coeffs.size() != basis_.size()) {
    throw std::invalid_argument("eval_at_probes: coefficient size mismatch");
  }
  std::vector<double> out(probes_.size(), 0.0);
  for (size_t p = 0; p < probes_.size(); ++p) {
    const auto& row = mono_[p];
    double acc = 0.0;
    for (size_t s = 0; s < coeffs.size(); ++s) acc += coeffs[s] * row[s];
    out[p] = acc;
  }
  return out;
}

}  // namespace ouhjb
