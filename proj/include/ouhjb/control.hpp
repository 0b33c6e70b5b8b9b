#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ouhjb/hamiltonian.hpp"
#include "ouhjb/hjb_picard.hpp"
#include "ouhjb/ou_sim.hpp"
#include "ouhjb/spectral_model.hpp"

namespace ouhjb {

// A cost-minimization instance: minimize over K-valued controls
//   J(t, x, u) = E[ int_t^T ( l(X_s) + g(u_s) ) ds + phi(X_T) ]
// with dX = AX ds + sqrt(Q) R(u) ds + sqrt(Q) dW, X_t = x.
struct ControlProblem {
  SpectralModel model;
  HamiltonianSpec ham;  // supplies g, R, K and the growth exponent q
  TerminalData phi;
  std::optional<TerminalData> l;
  double t = 0.0;
  std::vector<double> x;

  // q in (1, 2], data supported within the model, cost growth sampled
  void validate() const;
};

// Markov feedback u(s, x) writing one control coordinate per model mode.
// eval must be pure: it runs concurrently on path workers and is re-evaluated
// on stored states when costs are accumulated.
struct FeedbackPolicy {
  std::string name = "zero";
  std::function<void(double s, std::span<const double> x, std::span<double> u)> eval;
};

FeedbackPolicy zero_policy();
FeedbackPolicy constant_policy(std::vector<double> u);
// base policy plus a constant tilt (policy-improvement probes)
FeedbackPolicy tilt_policy(const FeedbackPolicy& base, std::vector<double> tilt);

// Optimal feedback u(s, x) = gamma_argmin(ham, D(s, x)) from a solved field.
// Rejects fields whose time grid does not cover [t_start, T].
FeedbackPolicy synthesize_feedback(const ValueField& field,
                                   const HamiltonianSpec& ham, double t_start);

// Realized drift R(u(s, x)) for the simulators. Control values that leave K
// abort the simulation.
DriftFn policy_drift(const ControlProblem& problem, const FeedbackPolicy& policy);

struct CostReport {
  double J = 0.0;
  double std_error = 0.0;  // floored strictly above zero
  int n_paths = 0;
  double h = 0.0;
  std::optional<double> v;    // field value at (t, x) when one is supplied
  std::optional<double> gap;  // J - v
  double gap_std_error = 0.0;

  nlohmann::json to_json() const;
};

// Left-endpoint quadrature of the cost along given controlled paths; the
// ensemble must start at (problem.t, problem.x) and end at the horizon.
CostReport cost_on_paths(const ControlProblem& problem,
                         const FeedbackPolicy& policy, const PathEnsemble& paths,
                         const ValueField* field = nullptr);

// Simulates the policy from (t, x) and accumulates its cost.
CostReport evaluate_cost(const ControlProblem& problem,
                         const FeedbackPolicy& policy, int n_steps, int n_paths,
                         std::uint64_t seed, const ValueField* field = nullptr);

struct ClosedLoopRun {
  FeedbackPolicy policy;
  PathEnsemble paths;
  CostReport cost;
};

// Synthesizes the optimal feedback from the field and runs it.
ClosedLoopRun simulate_closed_loop(const ControlProblem& problem,
                                   const ValueField& field, int n_steps,
                                   int n_paths, std::uint64_t seed);

// Monte Carlo estimate of E sum_i h [ -psi(D) + <D, R(u)> + g(u) ] along the
// policy's paths, which equals J - v for the exact solution. The bracket is
// pointwise >= 0 by the infimum definition of psi, so a sampled value below
// -1e-9 aborts: it can only come from a psi/gamma defect, not from noise.
struct GapReport {
  double gap = 0.0;
  double std_error = 0.0;      // floored strictly above zero
  double min_integrand = 0.0;  // most negative sampled bracket
  int n_paths = 0;
  double h = 0.0;
};

GapReport fundamental_gap(const ControlProblem& problem,
                          const FeedbackPolicy& policy, const ValueField& field,
                          int n_steps, int n_paths, std::uint64_t seed);

}  // namespace ouhjb
