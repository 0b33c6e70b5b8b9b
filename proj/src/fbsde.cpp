#include "ouhjb/fbsde.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "ouhjb/threading.hpp"

namespace ouhjb {

namespace {

std::vector<double> feature_scales(const SpectralModel& model, int m) {
  auto s = model.stationary_std();
  std::vector<double> out(m, 1.0);
  for (int k = 0; k < m; ++k) {
    if (s[k] > 0.0) out[k] = s[k];
  }
  return out;
}

// Flat monomial-power tables so the per-path feature fill stays allocation
// free inside the parallel loops.
struct FeatureFiller {
  const PolyBasis* basis = nullptr;
  int m = 0, degree = 0;
  size_t P = 0;
  std::vector<double> inv_scale;

  explicit FeatureFiller(const PolyBasis& b)
      : basis(&b), m(b.m()), degree(b.degree()), P(b.size()) {
    inv_scale.resize(m);
    for (int k = 0; k < m; ++k) inv_scale[k] = 1.0 / b.scale()[k];
  }

  void fill(std::span<const double> x, double* out, double* powers) const {
    // powers is caller scratch of size m * (degree + 1)
    for (int k = 0; k < m; ++k) {
      double u = x[k] * inv_scale[k];
      double* row = powers + static_cast<size_t>(k) * (degree + 1);
      row[0] = 1.0;
      for (int j = 1; j <= degree; ++j) row[j] = row[j - 1] * u;
    }
    const auto& idx = basis->indices();
    for (size_t s = 0; s < P; ++s) {
      double term = 1.0;
      const auto& kappa = idx[s];
      for (int k = 0; k < m; ++k) {
        term *= powers[static_cast<size_t>(k) * (degree + 1) + kappa[k]];
      }
      out[s] = term;
    }
  }
};

// Gram matrix (optional) and RHS columns accumulated over per-chunk buffers
// combined in index order, so the result is thread-count independent.
void accumulate_normal_equations(
    size_t n, size_t P, const double* feats, int nr,
    const std::function<double(int, size_t)>& target, Eigen::MatrixXd* gram,
    Eigen::MatrixXd& rhs) {
  size_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
  std::vector<std::vector<double>> cgram(n_chunks), crhs(n_chunks);
  parallel_for_chunks(n, [&](size_t begin, size_t end) {
    size_t ci = begin / kChunkSize;
    auto& r = crhs[ci];
    r.assign(P * nr, 0.0);
    std::vector<double>* g = nullptr;
    if (gram) {
      g = &cgram[ci];
      g->assign(P * P, 0.0);
    }
    std::vector<double> tv(nr);
    for (size_t p = begin; p < end; ++p) {
      const double* f = feats + p * P;
      for (int j = 0; j < nr; ++j) tv[j] = target(j, p);
      for (size_t a = 0; a < P; ++a) {
        double fa = f[a];
        if (fa == 0.0) continue;
        if (g) {
          double* grow = g->data() + a * P;
          for (size_t b = 0; b <= a; ++b) grow[b] += fa * f[b];
        }
        double* rrow = r.data() + a * nr;
        for (int j = 0; j < nr; ++j) rrow[j] += fa * tv[j];
      }
    }
  });
  rhs.setZero(static_cast<Eigen::Index>(P), nr);
  if (gram) gram->setZero(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
  for (size_t c = 0; c < n_chunks; ++c) {
    for (size_t a = 0; a < P; ++a) {
      if (gram) {
        for (size_t b = 0; b <= a; ++b) (*gram)(a, b) += cgram[c][a * P + b];
      }
      for (int j = 0; j < nr; ++j) rhs(a, j) += crhs[c][a * nr + j];
    }
  }
  if (gram) {
    for (size_t a = 0; a < P; ++a) {
      for (size_t b = a + 1; b < P; ++b) (*gram)(a, b) = (*gram)(b, a);
    }
  }
}

struct FactoredGram {
  Eigen::LDLT<Eigen::MatrixXd> ldlt;
  int doublings = 0;
};

FactoredGram factor_with_ridge(const Eigen::MatrixXd& gram, double ridge0,
                               double cond_limit, int max_doublings) {
  FactoredGram out;
  double ridge = ridge0;
  for (int d = 0;; ++d) {
    Eigen::MatrixXd g = gram;
    g.diagonal().array() += ridge;
    out.ldlt.compute(g);
    bool ok = out.ldlt.info() == Eigen::Success;
    if (ok) {
      const auto& diag = out.ldlt.vectorD();
      double dmin = diag.minCoeff();
      double dmax = diag.maxCoeff();
      ok = dmin > 0.0 && dmax <= cond_limit * dmin;
    }
    if (ok) {
      out.doublings = d;
      return out;
    }
    if (d >= max_doublings) {
      throw std::runtime_error(
          "solve_bsde: regression stayed ill conditioned after ridge growth");
    }
    ridge *= 2.0;
  }
}

void check_params(const BSDEParams& params, int dim) {
  if (params.m < 1 || params.m > dim) {
    throw std::invalid_argument("solve_bsde: feature modes outside the model");
  }
  if (params.degree < 1) throw std::invalid_argument("solve_bsde: degree must be >= 1");
  if (!(params.ridge > 0.0)) throw std::invalid_argument("solve_bsde: ridge must be > 0");
  if (params.bmo_probe_nodes < 1) {
    throw std::invalid_argument("solve_bsde: bmo_probe_nodes must be >= 1");
  }
}

void check_terminal(const TerminalData& f, int dim, const char* what) {
  for (int k : f.f.support) {
    if (k < 1 || k > dim) {
      throw std::invalid_argument(std::string("solve_bsde: ") + what +
                                  " support outside the model");
    }
  }
}

double auto_kappa(const SpectralModel& model, double horizon, double sup_phi) {
  if (!(sup_phi > 0.0)) return 0.0;
  double lo = std::max(1e-8, 1e-4 * horizon);
  double c_smooth = smoothing_constant(model, lo, std::max(horizon, lo * 2.0));
  return 4.0 * c_smooth * sup_phi;
}

}  // namespace

double BSDESolution::eval_y(int step, std::span<const double> x) const {
  if (step < 0 || step >= static_cast<int>(y_coeffs.size())) {
    throw std::invalid_argument("BSDESolution::eval_y: step out of range");
  }
  PolyBasis basis(m, degree, scale);
  return basis.eval(y_coeffs[step], x);
}

double BSDESolution::eval_z(int step, int k, std::span<const double> x) const {
  if (step < 0 || step >= static_cast<int>(z_coeffs.size())) {
    throw std::invalid_argument("BSDESolution::eval_z: step out of range");
  }
  auto it = std::find(z_modes.begin(), z_modes.end(), k);
  if (it == z_modes.end()) return 0.0;
  size_t zi = static_cast<size_t>(it - z_modes.begin());
  PolyBasis basis(m, degree, scale);
  return basis.eval(z_coeffs[step][zi], x);
}

std::string BSDESolution::diagnostics_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,clip_count,residual_Y,residual_Z,bmo_proxy\n";
  for (const auto& d : diag) {
    os << d.step << "," << d.clip_count << "," << d.residual_y << ","
       << d.residual_z << "," << d.bmo_proxy << "\n";
  }
  return os.str();
}

nlohmann::json BSDESolution::to_json() const {
  nlohmann::json j;
  j["t0"] = grid.t0;
  j["t1"] = grid.t1;
  j["steps"] = grid.steps;
  j["m"] = m;
  j["degree"] = degree;
  j["scale"] = scale;
  j["z_modes"] = z_modes;
  j["y_coeffs"] = y_coeffs;
  j["z_coeffs"] = z_coeffs;
  j["y0"] = y0;
  j["z0"] = z0;
  j["kappa"] = kappa;
  j["sup_phi"] = sup_phi;
  j["clip_total"] = clip_total;
  j["ridge_flagged"] = ridge_flagged;
  j["bmo_proxy"] = bmo_proxy;
  j["x0"] = x0;
  j["n_paths"] = n_paths;
  j["seed"] = seed;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : diag) {
    rows.push_back({{"step", d.step},
                    {"clip_count", d.clip_count},
                    {"residual_y", d.residual_y},
                    {"residual_z", d.residual_z},
                    {"bmo_proxy", d.bmo_proxy},
                    {"ridge_doublings", d.ridge_doublings}});
  }
  j["diag"] = rows;
  return j;
}

BSDESolution BSDESolution::from_json(const nlohmann::json& j) {
  BSDESolution s;
  s.grid.t0 = j.at("t0").get<double>();
  s.grid.t1 = j.at("t1").get<double>();
  s.grid.steps = j.at("steps").get<int>();
  s.m = j.at("m").get<int>();
  s.degree = j.at("degree").get<int>();
  s.scale = j.at("scale").get<std::vector<double>>();
  s.z_modes = j.at("z_modes").get<std::vector<int>>();
  s.y_coeffs = j.at("y_coeffs").get<std::vector<std::vector<double>>>();
  s.z_coeffs = j.at("z_coeffs").get<std::vector<std::vector<std::vector<double>>>>();
  s.y0 = j.at("y0").get<double>();
  s.z0 = j.at("z0").get<std::vector<double>>();
  s.kappa = j.at("kappa").get<double>();
  s.sup_phi = j.at("sup_phi").get<double>();
  s.clip_total = j.at("clip_total").get<long>();
  s.ridge_flagged = j.at("ridge_flagged").get<bool>();
  s.bmo_proxy = j.at("bmo_proxy").get<double>();
  s.x0 = j.at("x0").get<std::vector<double>>();
  s.n_paths = j.at("n_paths").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& row : j.at("diag")) {
    BSDEStepDiag d;
    d.step = row.at("step").get<int>();
    d.clip_count = row.at("clip_count").get<long>();
    d.residual_y = row.at("residual_y").get<double>();
    d.residual_z = row.at("residual_z").get<double>();
    d.bmo_proxy = row.at("bmo_proxy").get<double>();
    d.ridge_doublings = row.at("ridge_doublings").get<int>();
    s.diag.push_back(d);
  }
  return s;
}

BSDESolution solve_bsde_on_paths(const SpectralModel& model,
                                 const HamiltonianSpec* ham,
                                 const TerminalData& phi, const TerminalData* l,
                                 const PathEnsemble& ens,
                                 const BSDEParams& params) {
  model.validate();
  if (ham) ham->validate();
  ens.grid.validate();
  const int dim = model.dim();
  if (ens.dim != dim) {
    throw std::invalid_argument("solve_bsde: ensemble dimension differs from the model");
  }
  check_params(params, dim);
  check_terminal(phi, dim, "terminal");
  if (l) check_terminal(*l, dim, "running cost");

  const int M = ens.grid.steps;
  const double h = ens.grid.h();
  const double T = ens.grid.t1;
  const size_t n = static_cast<size_t>(ens.n_paths);
  const int m = params.m;
  if (n < 2) throw std::invalid_argument("solve_bsde: need at least 2 paths");

  PolyBasis basis(m, params.degree, feature_scales(model, m));
  const size_t P = basis.size();
  if (n <= 2 * P) {
    throw std::invalid_argument("solve_bsde: need more than twice as many paths as features");
  }
  FeatureFiller filler(basis);

  // noisy modes within the feature range get a Z fit; the noise table slot of
  // mode k is its position in the ensemble's noisy mode list
  std::vector<int> z_modes;
  std::vector<int> z_slots;
  std::vector<double> z_fac;  // sqrt(lambda_k / q_k(h)): variance-matched increments
  for (int k = 1; k <= m; ++k) {
    if (!(model.mode(k).lambda > 0.0)) continue;
    auto it = std::find(ens.noisy_modes.begin(), ens.noisy_modes.end(), k);
    if (it == ens.noisy_modes.end()) {
      throw std::invalid_argument("solve_bsde: ensemble lacks a noisy mode of the model");
    }
    z_modes.push_back(k);
    z_slots.push_back(static_cast<int>(it - ens.noisy_modes.begin()));
    z_fac.push_back(std::sqrt(model.mode(k).lambda / ou_covariance(model, k, h)));
  }
  const int n_z = static_cast<int>(z_modes.size());

  BSDESolution sol;
  sol.grid = ens.grid;
  sol.m = m;
  sol.degree = params.degree;
  sol.scale = basis.scale();
  sol.z_modes = z_modes;
  sol.sup_phi = phi.sup_bound;
  sol.kappa = params.clip_kappa > 0.0 ? params.clip_kappa
                                      : auto_kappa(model, T - ens.grid.t0, phi.sup_bound);
  sol.y_coeffs.assign(M + 1, std::vector<double>(P, 0.0));
  sol.z_coeffs.assign(M + 1,
                      std::vector<std::vector<double>>(n_z, std::vector<double>(P, 0.0)));
  sol.diag.assign(M + 1, BSDEStepDiag{});
  sol.x0.assign(ens.state_row(0, 0).begin(), ens.state_row(0, 0).end());
  sol.n_paths = ens.n_paths;
  sol.seed = 0;  // unknown here; solve_bsde fills it for replayable runs

  const double ridge0 = params.ridge * static_cast<double>(n);
  const auto& noise = ens.noise;

  // The BMO proxy is read off probes that follow the forward law (mean
  // decay * x0, spread sqrt(q(t_i - t0)) per mode); stationary-law probes sit
  // far outside the early path cloud and would extrapolate the fit.
  GaussianProjector bmo_probes(basis, std::max(params.bmo_probe_nodes, params.degree + 1));
  std::vector<std::vector<double>> bmo_nodes;  // standardized directions
  for (const auto& probe : bmo_probes.probes()) {
    std::vector<double> u(m);
    for (int k = 0; k < m; ++k) u[k] = probe[k] / basis.scale()[k];
    bmo_nodes.push_back(std::move(u));
  }
  const auto x_start = ens.state_row(0, 0);

  std::vector<double> feats(n * P);
  std::vector<double> y_next(n), y_new(n), bmo(n, 0.0);
  const size_t n_chunks = (n + kChunkSize - 1) / kChunkSize;

  auto fill_features = [&](int step) {
    parallel_for_chunks(n, [&](size_t begin, size_t end) {
      std::vector<double> powers(static_cast<size_t>(m) * (params.degree + 1));
      for (size_t p = begin; p < end; ++p) {
        filler.fill(ens.state_row(step, static_cast<int>(p)), feats.data() + p * P,
                    powers.data());
      }
    });
  };

  // Regression targets are centered by their empirical mean and the mean is
  // restored on the constant slot afterwards: constants then pass through the
  // ridge exactly, and the martingale-increment targets lose the variance of
  // the constant part.
  // terminal slice: pathwise values are exact, the stored coefficients fit them
  parallel_for_chunks(n, [&](size_t begin, size_t end) {
    for (size_t p = begin; p < end; ++p) {
      y_next[p] = phi.f.fn(ens.state_row(M, static_cast<int>(p)));
    }
  });
  {
    fill_features(M);
    double ybar = chunked_sum(n, [&](size_t p) { return y_next[p]; }) / n;
    Eigen::MatrixXd gram, rhs;
    accumulate_normal_equations(
        n, P, feats.data(), 1, [&](int, size_t p) { return y_next[p] - ybar; }, &gram,
        rhs);
    auto fac = factor_with_ridge(gram, ridge0, params.cond_limit,
                                 params.max_ridge_doublings);
    Eigen::VectorXd c = fac.ldlt.solve(rhs.col(0));
    c(0) += ybar;
    for (size_t s = 0; s < P; ++s) sol.y_coeffs[M][s] = c(s);
    double ss = chunked_sum(n, [&](size_t p) {
      const double* f = feats.data() + p * P;
      double fit = 0.0;
      for (size_t s = 0; s < P; ++s) fit += f[s] * c(s);
      double r = y_next[p] - fit;
      return r * r;
    });
    sol.diag[M].step = M;
    sol.diag[M].residual_y = std::sqrt(ss / n);
    sol.diag[M].ridge_doublings = fac.doublings;
  }

  std::vector<double> zfull(m, 0.0);

  for (int i = M - 1; i >= 1; --i) {
    fill_features(i);
    double ybar = chunked_sum(n, [&](size_t p) { return y_next[p]; }) / n;
    const int nr = 1 + n_z;
    Eigen::MatrixXd gram, rhs;
    accumulate_normal_equations(
        n, P, feats.data(), nr,
        [&](int j, size_t p) {
          double yc = y_next[p] - ybar;
          if (j == 0) return yc;
          int zi = j - 1;
          return yc * noise.get(i, static_cast<int>(p), z_slots[zi]) * z_fac[zi];
        },
        &gram, rhs);
    auto fac = factor_with_ridge(gram, ridge0, params.cond_limit,
                                 params.max_ridge_doublings);
    Eigen::MatrixXd coeffs = fac.ldlt.solve(rhs);
    coeffs(0, 0) += ybar;
    for (int zi = 0; zi < n_z; ++zi) {
      for (size_t s = 0; s < P; ++s) sol.z_coeffs[i][zi][s] = coeffs(s, 1 + zi);
    }

    const double gap = T - ens.grid.time(i);
    const double bound = sol.kappa > 0.0 ? sol.kappa / std::sqrt(gap)
                                         : 0.0;

    std::vector<long> c_clip(n_chunks, 0);
    std::vector<double> c_ry(n_chunks, 0.0);
    std::vector<std::vector<double>> c_rz(n_chunks, std::vector<double>(std::max(n_z, 1), 0.0));
    parallel_for_chunks(n, [&](size_t begin, size_t end) {
      size_t ci = begin / kChunkSize;
      std::vector<double> zloc(m, 0.0);
      for (size_t p = begin; p < end; ++p) {
        const double* f = feats.data() + p * P;
        double e = 0.0;
        for (size_t s = 0; s < P; ++s) e += f[s] * coeffs(s, 0);
        double ry = y_next[p] - e;
        c_ry[ci] += ry * ry;
        double nz2 = 0.0;
        std::fill(zloc.begin(), zloc.end(), 0.0);
        for (int zi = 0; zi < n_z; ++zi) {
          double zv = 0.0;
          for (size_t s = 0; s < P; ++s) zv += f[s] * coeffs(s, 1 + zi);
          double target = (y_next[p] - ybar) *
                          noise.get(i, static_cast<int>(p), z_slots[zi]) * z_fac[zi];
          double rz = target - zv;
          c_rz[ci][zi] += rz * rz;
          zloc[z_modes[zi] - 1] = zv;
          nz2 += zv * zv;
        }
        double nzv = std::sqrt(nz2);
        if (nzv > bound) {
          double scalef = bound > 0.0 ? bound / nzv : 0.0;
          for (double& z : zloc) z *= scalef;
          nz2 = bound * bound;
          ++c_clip[ci];
        }
        double psi = ham ? psi_eval(*ham, zloc) : 0.0;
        double lv = l ? l->f.fn(ens.state_row(i, static_cast<int>(p))) : 0.0;
        y_new[p] = e + h * (psi + lv);
        bmo[p] += nz2 * h;
      }
    });
    long clip = 0;
    double ss_y = 0.0;
    double ss_z = 0.0;
    for (size_t c = 0; c < n_chunks; ++c) {
      clip += c_clip[c];
      ss_y += c_ry[c];
    }
    for (int zi = 0; zi < n_z; ++zi) {
      double s = 0.0;
      for (size_t c = 0; c < n_chunks; ++c) s += c_rz[c][zi];
      ss_z = std::max(ss_z, s);
    }

    double ynew_bar = chunked_sum(n, [&](size_t p) { return y_new[p]; }) / n;
    double bmo_bar = chunked_sum(n, [&](size_t p) { return bmo[p]; }) / n;
    Eigen::MatrixXd rhs2;
    accumulate_normal_equations(
        n, P, feats.data(), 2,
        [&](int j, size_t p) { return j == 0 ? y_new[p] - ynew_bar : bmo[p] - bmo_bar; },
        nullptr, rhs2);
    Eigen::MatrixXd c2 = fac.ldlt.solve(rhs2);
    c2(0, 0) += ynew_bar;
    c2(0, 1) += bmo_bar;
    for (size_t s = 0; s < P; ++s) sol.y_coeffs[i][s] = c2(s, 0);
    std::vector<double> cb(P);
    for (size_t s = 0; s < P; ++s) cb[s] = c2(s, 1);
    double bmo_step = 0.0;
    {
      double dt0 = ens.grid.time(i) - ens.grid.t0;
      std::vector<double> probe(m), sd(m), mu(m);
      for (int k = 0; k < m; ++k) {
        mu[k] = model.decay(k + 1, dt0) * x_start[k];
        sd[k] = std::sqrt(ou_covariance(model, k + 1, dt0));
      }
      for (const auto& u : bmo_nodes) {
        for (int k = 0; k < m; ++k) probe[k] = mu[k] + sd[k] * u[k];
        bmo_step = std::max(bmo_step, basis.eval(cb, probe));
      }
    }

    auto& d = sol.diag[i];
    d.step = i;
    d.clip_count = clip;
    d.residual_y = std::sqrt(ss_y / n);
    d.residual_z = n_z > 0 ? std::sqrt(ss_z / n) : 0.0;
    d.bmo_proxy = bmo_step;
    d.ridge_doublings = fac.doublings;

    std::swap(y_next, y_new);
  }

  // step 0: the start state is deterministic, so conditional expectations are
  // plain Monte Carlo means
  {
    double ey = chunked_sum(n, [&](size_t p) { return y_next[p]; }) / n;
    std::vector<double> z0(m, 0.0);
    for (int zi = 0; zi < n_z; ++zi) {
      double ez = chunked_sum(n, [&](size_t p) {
                    return (y_next[p] - ey) *
                           noise.get(0, static_cast<int>(p), z_slots[zi]) * z_fac[zi];
                  }) /
                  n;
      z0[z_modes[zi] - 1] = ez;
    }
    double nz2 = 0.0;
    for (double z : z0) nz2 += z * z;
    double nzv = std::sqrt(nz2);
    const double gap0 = T - ens.grid.t0;
    const double bound0 = sol.kappa > 0.0 ? sol.kappa / std::sqrt(gap0) : 0.0;
    long clip0 = 0;
    if (nzv > bound0) {
      double scalef = bound0 > 0.0 ? bound0 / nzv : 0.0;
      for (double& z : z0) z *= scalef;
      nz2 = bound0 * bound0;
      clip0 = 1;
    }
    double psi = ham ? psi_eval(*ham, z0) : 0.0;
    double lv = l ? l->f.fn(ens.state_row(0, 0)) : 0.0;
    sol.y0 = ey + h * (psi + lv);
    sol.z0 = z0;
    sol.y_coeffs[0][0] = sol.y0;
    for (int zi = 0; zi < n_z; ++zi) sol.z_coeffs[0][zi][0] = z0[z_modes[zi] - 1];
    double bmo0 = chunked_sum(n, [&](size_t p) { return bmo[p]; }) / n + nz2 * h;
    auto& d = sol.diag[0];
    d.step = 0;
    d.clip_count = clip0;
    d.bmo_proxy = bmo0;
  }

  for (const auto& d : sol.diag) {
    sol.clip_total += d.clip_count;
    sol.bmo_proxy = std::max(sol.bmo_proxy, d.bmo_proxy);
    if (d.ridge_doublings > 0) sol.ridge_flagged = true;
  }
  return sol;
}

BSDESolution solve_bsde(const SpectralModel& model, const HamiltonianSpec* ham,
                        const TerminalData& phi, const TerminalData* l, double t,
                        std::span<const double> x, int n_steps, int n_paths,
                        std::uint64_t seed, const BSDEParams& params) {
  if (!(t >= 0.0) || !(t < model.T)) {
    throw std::invalid_argument("solve_bsde: t must lie in [0, T)");
  }
  if (n_steps < 1) throw std::invalid_argument("solve_bsde: need n_steps >= 1");
  if (x.size() < static_cast<size_t>(model.dim())) {
    throw std::invalid_argument("solve_bsde: start state shorter than the model");
  }
  TimeGrid grid{t, model.T, n_steps};
  PathEnsemble ens = sample_ou_exact(model, x, grid, n_paths, seed);
  BSDESolution sol = solve_bsde_on_paths(model, ham, phi, l, ens, params);
  sol.seed = seed;
  return sol;
}

TangentSolution solve_tangent_bsde(const SpectralModel& model,
                                   const HamiltonianSpec* ham,
                                   const BSDESolution& base,
                                   const TerminalData& phi, const TerminalData* l,
                                   std::span<const double> xi) {
  model.validate();
  if (!phi.differentiable) {
    throw std::invalid_argument("solve_tangent_bsde: terminal data not differentiable");
  }
  if (l && !l->differentiable) {
    throw std::invalid_argument("solve_tangent_bsde: running cost not differentiable");
  }
  if (base.n_paths <= 0 || base.x0.empty()) {
    throw std::invalid_argument("solve_tangent_bsde: base solution lacks replay data");
  }
  const int dim = model.dim();
  if (xi.empty() || xi.size() > static_cast<size_t>(dim)) {
    throw std::invalid_argument("solve_tangent_bsde: direction outside the model");
  }
  std::vector<double> dir(dim, 0.0);
  std::copy(xi.begin(), xi.end(), dir.begin());

  PathEnsemble ens = sample_ou_exact(model, base.x0, base.grid, base.n_paths, base.seed);
  const int M = base.grid.steps;
  const double h = base.grid.h();
  const double T = base.grid.t1;
  const double t0 = base.grid.t0;
  const size_t n = static_cast<size_t>(base.n_paths);
  const int m = base.m;
  PolyBasis basis(m, base.degree, base.scale);
  const size_t P = basis.size();
  FeatureFiller filler(basis);

  const auto& z_modes = base.z_modes;
  const int n_z = static_cast<int>(z_modes.size());
  std::vector<int> z_slots(n_z);
  std::vector<double> z_fac(n_z);
  for (int zi = 0; zi < n_z; ++zi) {
    int k = z_modes[zi];
    auto it = std::find(ens.noisy_modes.begin(), ens.noisy_modes.end(), k);
    if (it == ens.noisy_modes.end()) {
      throw std::invalid_argument("solve_tangent_bsde: base modes missing from the model");
    }
    z_slots[zi] = static_cast<int>(it - ens.noisy_modes.begin());
    z_fac[zi] = std::sqrt(model.mode(k).lambda / ou_covariance(model, k, h));
  }

  // directional weight sqrt(lambda_k) e^{-alpha_k (s - t0)} xi_k per mode
  auto dir_weight = [&](int k, double s) {
    double lam = model.mode(k).lambda;
    if (!(lam > 0.0) || dir[k - 1] == 0.0) return 0.0;
    return std::sqrt(lam) * model.decay(k, s - t0) * dir[k - 1];
  };

  std::vector<double> f_next(n), f_new(n);
  parallel_for_chunks(n, [&](size_t begin, size_t end) {
    for (size_t p = begin; p < end; ++p) {
      auto row = ens.state_row(M, static_cast<int>(p));
      double acc = 0.0;
      for (int k = 1; k <= dim; ++k) {
        double w = dir_weight(k, T);
        if (w != 0.0) acc += w * phi.partial(k, row);
      }
      f_next[p] = acc;
    }
  });

  std::vector<double> feats(n * P);
  auto fill_features = [&](int step) {
    parallel_for_chunks(n, [&](size_t begin, size_t end) {
      std::vector<double> powers(static_cast<size_t>(m) * (base.degree + 1));
      for (size_t p = begin; p < end; ++p) {
        filler.fill(ens.state_row(step, static_cast<int>(p)), feats.data() + p * P,
                    powers.data());
      }
    });
  };

  const double ridge0 = 1e-8 * static_cast<double>(n);
  for (int i = M - 1; i >= 1; --i) {
    fill_features(i);
    double fbar = chunked_sum(n, [&](size_t p) { return f_next[p]; }) / n;
    const int nr = 1 + n_z;
    Eigen::MatrixXd gram, rhs;
    accumulate_normal_equations(
        n, P, feats.data(), nr,
        [&](int j, size_t p) {
          double fc = f_next[p] - fbar;
          if (j == 0) return fc;
          int zi = j - 1;
          return fc * ens.noise.get(i, static_cast<int>(p), z_slots[zi]) * z_fac[zi];
        },
        &gram, rhs);
    auto fac = factor_with_ridge(gram, ridge0, 1e12, 40);
    Eigen::MatrixXd coeffs = fac.ldlt.solve(rhs);
    coeffs(0, 0) += fbar;

    const double s_i = base.grid.time(i);
    const double gap = T - s_i;
    const double bound = base.kappa > 0.0 ? base.kappa / std::sqrt(gap) : 0.0;
    parallel_for_chunks(n, [&](size_t begin, size_t end) {
      std::vector<double> zloc(m, 0.0), vloc(m, 0.0);
      for (size_t p = begin; p < end; ++p) {
        const double* f = feats.data() + p * P;
        double e = 0.0;
        for (size_t s = 0; s < P; ++s) e += f[s] * coeffs(s, 0);
        double driver = 0.0;
        if (ham) {
          std::fill(zloc.begin(), zloc.end(), 0.0);
          std::fill(vloc.begin(), vloc.end(), 0.0);
          double nz2 = 0.0;
          for (int zi = 0; zi < n_z; ++zi) {
            double zv = 0.0, vv = 0.0;
            const auto& zc = base.z_coeffs[i][zi];
            for (size_t s = 0; s < P; ++s) {
              zv += f[s] * zc[s];
              vv += f[s] * coeffs(s, 1 + zi);
            }
            zloc[z_modes[zi] - 1] = zv;
            vloc[z_modes[zi] - 1] = vv;
            nz2 += zv * zv;
          }
          double nzv = std::sqrt(nz2);
          if (nzv > bound && bound > 0.0) {
            double scalef = bound / nzv;
            for (double& z : zloc) z *= scalef;
          }
          auto gpsi = psi_grad(*ham, zloc);
          for (int k = 0; k < m; ++k) driver += gpsi[k] * vloc[k];
        }
        if (l) {
          auto row = ens.state_row(i, static_cast<int>(p));
          for (int k = 1; k <= dim; ++k) {
            double w = dir_weight(k, s_i);
            if (w != 0.0) driver += w * l->partial(k, row);
          }
        }
        f_new[p] = e + h * driver;
      }
    });
    std::swap(f_next, f_new);
  }

  TangentSolution out;
  {
    double ef = chunked_sum(n, [&](size_t p) { return f_next[p]; }) / n;
    std::vector<double> v0(m, 0.0);
    for (int zi = 0; zi < n_z; ++zi) {
      v0[z_modes[zi] - 1] =
          chunked_sum(n, [&](size_t p) {
            return (f_next[p] - ef) *
                   ens.noise.get(0, static_cast<int>(p), z_slots[zi]) * z_fac[zi];
          }) /
          n;
    }
    double driver = 0.0;
    if (ham) {
      auto gpsi = psi_grad(*ham, base.z0);
      for (int k = 0; k < m; ++k) driver += gpsi[k] * v0[k];
    }
    if (l) {
      auto row = ens.state_row(0, 0);
      for (int k = 1; k <= dim; ++k) {
        double w = dir_weight(k, t0);
        if (w != 0.0) driver += w * l->partial(k, row);
      }
    }
    out.f0 = ef + h * driver;
    out.v0 = v0;
  }

  // a priori bound |F_0| <= |xi| (sup|grad_Q phi| + horizon sup|grad_Q l|),
  // with the gradients in the sqrt(Q) geometry estimated on the probe grid
  {
    double xin = 0.0;
    for (double v : dir) xin += v * v;
    xin = std::sqrt(xin);
    GaussianProjector probes(basis, std::max(5, base.degree + 1));
    std::vector<double> full(dim, 0.0);
    auto grad_q_sup = [&](const TerminalData& f) {
      double best = 0.0;
      for (const auto& probe : probes.probes()) {
        std::fill(full.begin(), full.end(), 0.0);
        std::copy(probe.begin(), probe.end(), full.begin());
        double acc = 0.0;
        for (int k = 1; k <= dim; ++k) {
          double lam = model.mode(k).lambda;
          if (!(lam > 0.0)) continue;
          double g = f.partial(k, full);
          acc += lam * g * g;
        }
        best = std::max(best, std::sqrt(acc));
      }
      return best;
    };
    out.bound = xin * (grad_q_sup(phi) + (l ? (T - t0) * grad_q_sup(*l) : 0.0));
    out.bound_ok = std::abs(out.f0) <= out.bound * (1.0 + 1e-6) + 1e-9;
  }
  return out;
}

ZProfile z_profile(const SpectralModel& model, const HamiltonianSpec* ham,
                   const TerminalData& phi, const TerminalData* l,
                   std::span<const double> t_list,
                   const std::vector<std::vector<double>>& x_probes, int n_steps,
                   int n_paths, std::uint64_t seed, const BSDEParams& params) {
  if (t_list.size() < 2) {
    throw std::invalid_argument("z_profile: need at least two times");
  }
  if (x_probes.empty()) throw std::invalid_argument("z_profile: need probe states");
  for (double t : t_list) {
    if (!(t >= 0.0) || !(t < model.T)) {
      throw std::invalid_argument("z_profile: times must lie in [0, T)");
    }
  }
  ZProfile out;
  for (double t : t_list) {
    double sup_z = 0.0;
    for (size_t pi = 0; pi < x_probes.size(); ++pi) {
      BSDESolution s = solve_bsde(model, ham, phi, l, t, x_probes[pi], n_steps,
                                  n_paths, seed + pi, params);
      double nz = 0.0;
      for (double z : s.z0) nz += z * z;
      sup_z = std::max(sup_z, std::sqrt(nz));
    }
    out.rows.push_back({model.T - t, sup_z});
  }
  // least-squares slope of log sup|Z| against log(T - t)
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  size_t nl = 0;
  for (const auto& r : out.rows) {
    if (!(r.sup_z > 0.0)) continue;
    double lx = std::log(r.gap), ly = std::log(r.sup_z);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++nl;
  }
  if (nl >= 2) {
    double denom = nl * sxx - sx * sx;
    out.slope = denom != 0.0 ? (nl * sxy - sx * sy) / denom : 0.0;
  }
  return out;
}

StabilityReport terminal_stability(const SpectralModel& model,
                                   const HamiltonianSpec* ham,
                                   const TerminalData& phi_a,
                                   const TerminalData& phi_b,
                                   std::span<const double> t_list,
                                   std::span<const double> x, int n_steps,
                                   int n_paths, std::uint64_t seed,
                                   const BSDEParams& params) {
  if (t_list.empty()) throw std::invalid_argument("terminal_stability: need times");
  const int dim = model.dim();
  PolyBasis basis(params.m, params.degree, feature_scales(model, params.m));
  GaussianProjector probes(basis, std::max(5, params.degree + 1));
  StabilityReport rep;
  std::vector<double> full(dim, 0.0);
  for (const auto& probe : probes.probes()) {
    std::fill(full.begin(), full.end(), 0.0);
    std::copy(probe.begin(), probe.end(), full.begin());
    rep.diff_norm = std::max(rep.diff_norm,
                             std::abs(phi_a.f.fn(full) - phi_b.f.fn(full)));
  }
  rep.diff_norm = std::max(rep.diff_norm, std::abs(phi_a.f.fn(x) - phi_b.f.fn(x)));
  if (!(rep.diff_norm > 1e-12)) {
    throw std::invalid_argument("terminal_stability: terminal data coincide on probes");
  }
  for (double t : t_list) {
    if (!(t >= 0.0) || !(t < model.T)) {
      throw std::invalid_argument("terminal_stability: times must lie in [0, T)");
    }
    BSDESolution sa = solve_bsde(model, ham, phi_a, nullptr, t, x, n_steps, n_paths,
                                 seed, params);
    BSDESolution sb = solve_bsde(model, ham, phi_b, nullptr, t, x, n_steps, n_paths,
                                 seed, params);
    double d2 = 0.0;
    for (int k = 0; k < params.m; ++k) {
      double d = sa.z0[k] - sb.z0[k];
      d2 += d * d;
    }
    double val = std::sqrt(model.T - t) * std::sqrt(d2) / rep.diff_norm;
    rep.per_t.push_back(val);
    rep.ratio = std::max(rep.ratio, val);
  }
  return rep;
}

}  // namespace ouhjb
