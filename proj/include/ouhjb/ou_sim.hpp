#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ouhjb/spectral_model.hpp"

namespace ouhjb {

struct TimeGrid {
  double t0 = 0.0;
  double t1 = 1.0;
  int steps = 1;

  double h() const { return (t1 - t0) / steps; }
  double time(int i) const { return t0 + i * h(); }
  void validate() const;
};

// Standardized N(0,1) draws per (step, path, noisy mode). Paths own
// decorrelated streams keyed by (seed, path index), so the table is the same
// for any thread count.
struct NoiseTable {
  TimeGrid grid;
  int n_paths = 0;
  int n_noisy = 0;

  std::vector<double> xi;  // [step][path][noisy slot]

  double get(int step, int path, int slot) const {
    return xi[(static_cast<std::size_t>(step) * n_paths + path) * n_noisy + slot];
  }
};

NoiseTable draw_noise(const SpectralModel& m, const TimeGrid& grid, int n_paths,
                      std::uint64_t seed);

// Exact aggregation of fine-grid noise onto a grid coarsened by `factor`:
// the coarse ensemble visits exactly the states of the fine one at shared
// times, which gives common-random-number refinement ladders.
NoiseTable coarsen_noise(const SpectralModel& m, const NoiseTable& fine, int factor);

// Per-mode drift b(t, x) entering as dX_k += sqrt(lambda_k) b_k dt
// (a realized control R(u(t,x)) or a Girsanov drift G(t,x)).
using DriftFn =
    std::function<void(double t, std::span<const double> x, std::span<double> out)>;

struct PathEnsemble {
  TimeGrid grid;
  int dim = 0;
  int n_paths = 0;
  std::vector<int> noisy_modes;  // 1-based indices with lambda_k > 0
  std::vector<double> states;    // [step 0..steps][path][mode]
  NoiseTable noise;

  double state(int step, int path, int k) const {  // k 1-based
    return states[(static_cast<std::size_t>(step) * n_paths + path) * dim + k - 1];
  }
  std::span<const double> state_row(int step, int path) const {
    return {&states[(static_cast<std::size_t>(step) * n_paths + path) * dim],
            static_cast<std::size_t>(dim)};
  }
};

// Exact OU transitions X_k(t+h) = e^{-alpha_k h} X_k(t) + sqrt(q_k(h)) xi.
PathEnsemble sample_ou_exact(const SpectralModel& m, std::span<const double> x0,
                             const TimeGrid& grid, int n_paths, std::uint64_t seed);

// Exponential Euler with the control frozen per step: the linear part and the
// noise are exact, the drift integrates the frozen value against the
// semigroup, sqrt(lambda_k) b_k (1 - e^{-alpha_k h}) / alpha_k.
PathEnsemble simulate_controlled(const SpectralModel& m, const DriftFn& drift,
                                 std::span<const double> x0, const TimeGrid& grid,
                                 int n_paths, std::uint64_t seed);

// Same schemes driven by a caller-supplied noise table (refinement ladders).
PathEnsemble simulate_with_noise(const SpectralModel& m, const DriftFn* drift,
                                 std::span<const double> x0, const NoiseTable& noise);

// Per-path log rho = -sum_i <G(t_i, X_i), dW_i> - 0.5 sum_i |G(t_i, X_i)|^2 h,
// with dW_i = sqrt(h) xi_i per noisy mode. E[rho] = 1, and weighting by rho
// moves expectations of path functionals onto the OU law with drift -sqrt(Q)G.
// Evaluations with |G| > g_bound abort.
std::vector<double> girsanov_logweight(const SpectralModel& m,
                                       const PathEnsemble& ensemble,
                                       const DriftFn& G, double g_bound);

}  // namespace ouhjb
