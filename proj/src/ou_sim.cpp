#include "ouhjb/ou_sim.hpp"

#include <cmath>
#include <stdexcept>

#include "ouhjb/rng.hpp"
#include "ouhjb/threading.hpp"

namespace ouhjb {

void TimeGrid::validate() const {
  if (steps < 1) throw std::invalid_argument("TimeGrid: steps must be >= 1");
  if (!(t1 > t0)) throw std::invalid_argument("TimeGrid: need t1 > t0");
}

namespace {

std::vector<int> noisy_modes_of(const SpectralModel& m) {
  std::vector<int> noisy;
  for (int k = 1; k <= m.dim(); ++k) {
    if (m.mode(k).lambda > 0.0) noisy.push_back(k);
  }
  return noisy;
}

}  // namespace

NoiseTable draw_noise(const SpectralModel& m, const TimeGrid& grid, int n_paths,
                      std::uint64_t seed) {
  grid.validate();
  if (n_paths < 1) throw std::invalid_argument("draw_noise: n_paths must be >= 1");
  NoiseTable table;
  table.grid = grid;
  table.n_paths = n_paths;
  table.n_noisy = static_cast<int>(noisy_modes_of(m).size());
  table.xi.resize(static_cast<std::size_t>(grid.steps) * n_paths * table.n_noisy);
  parallel_for_chunks(n_paths, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      PathStream rng(seed, p);
      for (int i = 0; i < grid.steps; ++i) {
        double* row =
            &table.xi[(static_cast<std::size_t>(i) * n_paths + p) * table.n_noisy];
        for (int j = 0; j < table.n_noisy; ++j) row[j] = rng.normal();
      }
    }
  });
  return table;
}

NoiseTable coarsen_noise(const SpectralModel& m, const NoiseTable& fine, int factor) {
  if (factor < 1 || fine.grid.steps % factor != 0) {
    throw std::invalid_argument("coarsen_noise: factor must divide the step count");
  }
  if (factor == 1) return fine;
  auto noisy = noisy_modes_of(m);
  if (static_cast<int>(noisy.size()) != fine.n_noisy) {
    throw std::invalid_argument("coarsen_noise: model does not match the table");
  }
  NoiseTable coarse;
  coarse.grid = fine.grid;
  coarse.grid.steps = fine.grid.steps / factor;
  coarse.n_paths = fine.n_paths;
  coarse.n_noisy = fine.n_noisy;
  coarse.xi.resize(static_cast<std::size_t>(coarse.grid.steps) * coarse.n_paths *
                   coarse.n_noisy);
  double hf = fine.grid.h();
  double hc = coarse.grid.h();
  // state noise over a coarse step: sum of e^{-alpha (remaining fine time)}
  // scaled fine draws; restandardized by sqrt(q(hc))
  std::vector<double> sd_f(noisy.size()), sd_c(noisy.size());
  for (std::size_t j = 0; j < noisy.size(); ++j) {
    sd_f[j] = std::sqrt(ou_covariance(m, noisy[j], hf));
    sd_c[j] = std::sqrt(ou_covariance(m, noisy[j], hc));
  }
  parallel_for_chunks(coarse.n_paths, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      for (int i = 0; i < coarse.grid.steps; ++i) {
        double* out =
            &coarse.xi[(static_cast<std::size_t>(i) * coarse.n_paths + p) *
                       coarse.n_noisy];
        for (int j = 0; j < coarse.n_noisy; ++j) {
          double acc = 0.0;
          for (int s = 0; s < factor; ++s) {
            double decay =
                std::exp(-m.mode(noisy[j]).alpha * hf * (factor - 1 - s));
            acc += decay * sd_f[j] * fine.get(i * factor + s, static_cast<int>(p), j);
          }
          out[j] = acc / sd_c[j];
        }
      }
    }
  });
  return coarse;
}

PathEnsemble simulate_with_noise(const SpectralModel& m, const DriftFn* drift,
                                 std::span<const double> x0, const NoiseTable& noise) {
  noise.grid.validate();
  if (x0.size() != static_cast<std::size_t>(m.dim())) {
    throw std::invalid_argument("simulate: initial state dimension mismatch");
  }
  auto noisy = noisy_modes_of(m);
  if (static_cast<int>(noisy.size()) != noise.n_noisy) {
    throw std::invalid_argument("simulate: model does not match the noise table");
  }
  PathEnsemble ens;
  ens.grid = noise.grid;
  ens.dim = m.dim();
  ens.n_paths = noise.n_paths;
  ens.noisy_modes = noisy;
  ens.noise = noise;
  ens.states.resize(static_cast<std::size_t>(noise.grid.steps + 1) * ens.n_paths *
                    ens.dim);

  double h = noise.grid.h();
  int dim = ens.dim;
  std::vector<double> decay(dim), sd(dim, 0.0), drift_gain(dim);
  for (int k = 1; k <= dim; ++k) {
    const ModeSpec& ms = m.mode(k);
    decay[k - 1] = std::exp(-ms.alpha * h);
    drift_gain[k - 1] = std::sqrt(ms.lambda) * (-std::expm1(-ms.alpha * h)) / ms.alpha;
  }
  for (std::size_t j = 0; j < noisy.size(); ++j) {
    sd[noisy[j] - 1] = std::sqrt(ou_covariance(m, noisy[j], h));
  }

  parallel_for_chunks(ens.n_paths, [&](std::size_t begin, std::size_t end) {
    std::vector<double> u(dim);
    for (std::size_t p = begin; p < end; ++p) {
      double* cur = &ens.states[p * dim];
      for (int k = 0; k < dim; ++k) cur[k] = x0[k];
      for (int i = 0; i < noise.grid.steps; ++i) {
        const double* from =
            &ens.states[(static_cast<std::size_t>(i) * ens.n_paths + p) * dim];
        double* to =
            &ens.states[(static_cast<std::size_t>(i + 1) * ens.n_paths + p) * dim];
        if (drift) {
          (*drift)(noise.grid.time(i), {from, static_cast<std::size_t>(dim)},
                   {u.data(), u.size()});
        }
        for (int k = 0; k < dim; ++k) {
          to[k] = decay[k] * from[k];
          if (drift) to[k] += drift_gain[k] * u[k];
        }
        const double* xi =
            &noise.xi[(static_cast<std::size_t>(i) * ens.n_paths + p) *
                      noise.n_noisy];
        for (std::size_t j = 0; j < noisy.size(); ++j) {
          to[noisy[j] - 1] += sd[noisy[j] - 1] * xi[j];
        }
      }
    }
  });
  return ens;
}

PathEnsemble sample_ou_exact(const SpectralModel& m, std::span<const double> x0,
                             const TimeGrid& grid, int n_paths, std::uint64_t seed) {
  NoiseTable noise = draw_noise(m, grid, n_paths, seed);
  return simulate_with_noise(m, nullptr, x0, noise);
}

PathEnsemble simulate_controlled(const SpectralModel& m, const DriftFn& drift,
                                 std::span<const double> x0, const TimeGrid& grid,
                                 int n_paths, std::uint64_t seed) {
  NoiseTable noise = draw_noise(m, grid, n_paths, seed);
  return simulate_with_noise(m, &drift, x0, noise);
}

std::vector<double> girsanov_logweight(const SpectralModel& m,
                                       const PathEnsemble& ens, const DriftFn& G,
                                       double g_bound) {
  double h = ens.grid.h();
  double sqrt_h = std::sqrt(h);
  const auto& noisy = ens.noisy_modes;
  std::vector<double> logw(ens.n_paths, 0.0);
  std::vector<int> violations((ens.n_paths + kChunkSize - 1) / kChunkSize, 0);
  parallel_for_chunks(ens.n_paths, [&](std::size_t begin, std::size_t end) {
    std::vector<double> g(ens.dim);
    for (std::size_t p = begin; p < end; ++p) {
      double acc = 0.0;
      for (int i = 0; i < ens.grid.steps; ++i) {
        G(ens.grid.time(i), ens.state_row(i, static_cast<int>(p)),
          {g.data(), g.size()});
        double g2 = 0.0;
        for (std::size_t j = 0; j < noisy.size(); ++j) {
          double gk = g[noisy[j] - 1];
          g2 += gk * gk;
          acc -= gk * sqrt_h * ens.noise.get(i, static_cast<int>(p), static_cast<int>(j));
        }
        if (g2 > g_bound * g_bound) {
          ++violations[begin / kChunkSize];
          return;
        }
        acc -= 0.5 * g2 * h;
      }
      logw[p] = acc;
    }
  });
  for (int v : violations) {
    if (v > 0) {
      throw std::runtime_error("girsanov_logweight: |G| exceeded the stated bound");
    }
  }
  return logw;
}

}  // namespace ouhjb
