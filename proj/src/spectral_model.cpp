#include "ouhjb/spectral_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ouhjb {

const ModeSpec& SpectralModel::mode(int k) const {
  if (k < 1 || k > dim()) throw std::invalid_argument("SpectralModel: mode index out of range");
  return modes[k - 1];
}

double SpectralModel::decay(int k, double t) const {
  return std::exp(-mode(k).alpha * t);
}

double SpectralModel::stationary_var(int k) const {
  const ModeSpec& ms = mode(k);
  return ms.lambda / (2.0 * ms.alpha);
}

std::vector<double> SpectralModel::stationary_std() const {
  std::vector<double> s(modes.size());
  for (int k = 1; k <= dim(); ++k) s[k - 1] = std::sqrt(stationary_var(k));
  return s;
}

int SpectralModel::noisy_count() const {
  int n = 0;
  for (const auto& ms : modes) {
    if (ms.lambda > 0.0) ++n;
  }
  return n;
}

void SpectralModel::validate() const {
  if (modes.empty()) throw std::invalid_argument("SpectralModel: no modes");
  if (T <= 0.0) throw std::invalid_argument("SpectralModel: horizon must be > 0");
  for (const auto& ms : modes) {
    if (ms.alpha <= 0.0) throw std::invalid_argument("SpectralModel: alpha must be > 0");
    if (ms.lambda < 0.0) throw std::invalid_argument("SpectralModel: lambda must be >= 0");
    if (!(std::isfinite(ms.alpha) && std::isfinite(ms.lambda))) {
      throw std::invalid_argument("SpectralModel: non-finite mode parameters");
    }
  }
}

SpectralModel heat_preset(double L, int N, const NoiseRule& noise, double T) {
  if (L <= 0.0) throw std::invalid_argument("heat_preset: L must be > 0");
  if (N < 1) throw std::invalid_argument("heat_preset: N must be >= 1");
  SpectralModel m;
  m.preset = "heat";
  m.T = T;
  m.modes.resize(N);
  for (int k = 1; k <= N; ++k) {
    double w = k * std::numbers::pi / L;
    m.modes[k - 1].k = k;
    m.modes[k - 1].alpha = w * w;
    if (noise.rule == "white") {
      if (noise.sigma2 < 0.0) throw std::invalid_argument("heat_preset: sigma2 must be >= 0");
      m.modes[k - 1].lambda = noise.sigma2;
    } else if (noise.rule == "power") {
      m.modes[k - 1].lambda = std::pow(w * w, noise.beta);
      m.beta = noise.beta;
      m.preset = "power";
    } else {
      throw std::invalid_argument("heat_preset: unknown noise rule '" + noise.rule + "'");
    }
  }
  m.validate();
  return m;
}

SpectralModel custom_model(std::vector<ModeSpec> modes, double T) {
  SpectralModel m;
  m.preset = "custom";
  m.T = T;
  m.modes = std::move(modes);
  for (size_t i = 0; i < m.modes.size(); ++i) m.modes[i].k = static_cast<int>(i) + 1;
  m.validate();
  return m;
}

double ou_covariance(const SpectralModel& m, int k, double t) {
  if (t < 0.0) throw std::invalid_argument("ou_covariance: t must be >= 0");
  const ModeSpec& ms = m.mode(k);
  return ms.lambda * (-std::expm1(-2.0 * ms.alpha * t)) / (2.0 * ms.alpha);
}

std::vector<double> semigroup_mean(const SpectralModel& m,
                                   std::span<const double> x, double t) {
  if (t < 0.0) throw std::invalid_argument("semigroup_mean: t must be >= 0");
  if (x.size() != static_cast<size_t>(m.dim())) {
    throw std::invalid_argument("semigroup_mean: dimension mismatch");
  }
  std::vector<double> y(x.size());
  for (int k = 1; k <= m.dim(); ++k) y[k - 1] = m.decay(k, t) * x[k - 1];
  return y;
}

double smoothing_norm(const SpectralModel& m, double t) {
  if (t <= 0.0) throw std::invalid_argument("smoothing_norm: t must be > 0");
  // per noisy mode sqrt(lambda) e^{-alpha t} / sqrt(q(t)); lambda cancels:
  // e^{-alpha t} sqrt(2 alpha / (1 - e^{-2 alpha t})), decreasing in alpha t.
  double best = 0.0;
  bool any = false;
  for (const auto& ms : m.modes) {
    if (ms.lambda <= 0.0) continue;
    any = true;
    double s = ms.alpha * t;
    double val = std::exp(-s) * std::sqrt(2.0 * ms.alpha / (-std::expm1(-2.0 * s)));
    best = std::max(best, val);
  }
  if (!any) throw std::invalid_argument("smoothing_norm: model has no noisy modes");
  return best;
}

double smoothing_constant(const SpectralModel& m, double t_lo, double t_hi,
                          int n_grid) {
  if (!(t_lo > 0.0 && t_hi > t_lo)) {
    throw std::invalid_argument("smoothing_constant: need 0 < t_lo < t_hi");
  }
  double best = 0.0;
  for (int i = 0; i < n_grid; ++i) {
    double u = n_grid == 1 ? 0.0 : static_cast<double>(i) / (n_grid - 1);
    double t = t_lo * std::pow(t_hi / t_lo, u);
    best = std::max(best, std::sqrt(t) * smoothing_norm(m, t));
  }
  return best;
}

double grad_kernel_weight(const SpectralModel& m, double t,
                          std::span<const double> xi, std::span<const double> z) {
  if (t <= 0.0) throw std::invalid_argument("grad_kernel_weight: t must be > 0");
  if (xi.size() != static_cast<size_t>(m.dim()) || z.size() != xi.size()) {
    throw std::invalid_argument("grad_kernel_weight: dimension mismatch");
  }
  double w = 0.0;
  for (int k = 1; k <= m.dim(); ++k) {
    const ModeSpec& ms = m.modes[k - 1];
    if (ms.lambda <= 0.0 || xi[k - 1] == 0.0) continue;
    double q = ou_covariance(m, k, t);
    w += xi[k - 1] * std::sqrt(ms.lambda) * std::exp(-ms.alpha * t) * z[k - 1] / q;
  }
  return w;
}

}  // namespace ouhjb
