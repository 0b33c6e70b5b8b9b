#include "ouhjb/control.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "ouhjb/threading.hpp"

namespace ouhjb {

namespace {

void check_support(const TerminalData& td, int dim, const char* what) {
  for (int k : td.f.support) {
    if (k < 1 || k > dim) {
      throw std::invalid_argument(std::string("control: ") + what +
                                  " supported outside the model");
    }
  }
}

double norm2(std::span<const double> u) {
  double s = 0.0;
  for (double v : u) s += v * v;
  return std::sqrt(s);
}

void check_in_set(const ControlSet& K, std::span<const double> u) {
  if (K.type == "full") return;
  if (K.type == "ball") {
    if (norm2(u) > K.radius * (1.0 + 1e-9) + 1e-12) {
      throw std::runtime_error("control: policy leaves the constraint ball");
    }
    return;
  }
  for (std::size_t k = 0; k < u.size(); ++k) {
    double hw = k < K.halfwidth.size() ? K.halfwidth[k] : 0.0;
    if (std::fabs(u[k]) > hw * (1.0 + 1e-9) + 1e-12) {
      throw std::runtime_error("control: policy leaves the constraint box");
    }
  }
}

// statistical error of the mean with a strictly positive rounding floor
double floored_std_error(double mean, double sum_sq_dev, int n) {
  double se = n > 1 ? std::sqrt(sum_sq_dev / (n - 1) / n) : 0.0;
  return std::max(se, 1e-15 * (1.0 + std::fabs(mean)));
}

void check_run_args(const ControlProblem& pb, int n_steps, int n_paths) {
  pb.validate();
  if (n_steps < 1) throw std::invalid_argument("control: need n_steps >= 1");
  if (n_paths < 2) throw std::invalid_argument("control: need n_paths >= 2");
}

void check_grid_matches(const ControlProblem& pb, const PathEnsemble& paths) {
  if (paths.dim != pb.model.dim()) {
    throw std::invalid_argument("control: ensemble dimension differs from the model");
  }
  if (std::fabs(paths.grid.t0 - pb.t) > 1e-12 ||
      std::fabs(paths.grid.t1 - pb.model.T) > 1e-12) {
    throw std::invalid_argument("control: ensemble grid does not span [t, T]");
  }
  auto start = paths.state_row(0, 0);
  for (int k = 0; k < paths.dim; ++k) {
    if (start[k] != pb.x[k]) {
      throw std::invalid_argument("control: ensemble does not start at the problem state");
    }
  }
}

}  // namespace

void ControlProblem::validate() const {
  model.validate();
  ham.validate();
  if (!(ham.q > 1.0) || ham.q > 2.0 + 1e-12) {
    throw std::invalid_argument("control: growth exponent q must lie in (1, 2]");
  }
  if (ham.R == "diag" && static_cast<int>(ham.R_diag.size()) < model.dim()) {
    throw std::invalid_argument("control: diagonal R shorter than the model");
  }
  if (!(t >= 0.0) || !(t < model.T)) {
    throw std::invalid_argument("control: t must lie in [0, T)");
  }
  if (static_cast<int>(x.size()) < model.dim()) {
    throw std::invalid_argument("control: start state shorter than the model");
  }
  for (double xv : x) {
    if (!std::isfinite(xv)) throw std::invalid_argument("control: start state not finite");
  }
  check_support(phi, model.dim(), "terminal data");
  if (l) check_support(*l, model.dim(), "running cost");
  // sampled growth of g: finite, nonnegative, nondecreasing at large radius
  double prev = 0.0;
  for (double r : {0.0, 0.5, 1.0, 2.0, 5.0, 10.0}) {
    double g = ham.cost.radial(r, ham.q);
    if (!std::isfinite(g) || g < -1e-12) {
      throw std::invalid_argument("control: cost g is not finite nonnegative");
    }
    if (r >= 1.0 && g < prev - 1e-12) {
      throw std::invalid_argument("control: cost g decreases at large radius");
    }
    prev = g;
  }
}

FeedbackPolicy zero_policy() {
  FeedbackPolicy p;
  p.name = "zero";
  p.eval = [](double, std::span<const double>, std::span<double> u) {
    std::fill(u.begin(), u.end(), 0.0);
  };
  return p;
}

FeedbackPolicy constant_policy(std::vector<double> u) {
  for (double v : u) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("control: constant policy not finite");
    }
  }
  FeedbackPolicy p;
  p.name = "const";
  p.eval = [vals = std::move(u)](double, std::span<const double>,
                                 std::span<double> out) {
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = k < vals.size() ? vals[k] : 0.0;
    }
  };
  return p;
}

FeedbackPolicy tilt_policy(const FeedbackPolicy& base, std::vector<double> tilt) {
  for (double v : tilt) {
    if (!std::isfinite(v)) throw std::invalid_argument("control: tilt not finite");
  }
  FeedbackPolicy p;
  p.name = base.name + "+tilt";
  p.eval = [inner = base.eval, tv = std::move(tilt)](
               double s, std::span<const double> x, std::span<double> u) {
    inner(s, x, u);
    for (std::size_t k = 0; k < u.size() && k < tv.size(); ++k) u[k] += tv[k];
  };
  return p;
}

FeedbackPolicy synthesize_feedback(const ValueField& field,
                                   const HamiltonianSpec& ham, double t_start) {
  ham.validate();
  const TimeGrid& g = field.grid();
  if (t_start < g.t0 - 1e-12 || t_start > g.t1) {
    throw std::invalid_argument("control: field does not cover the control window");
  }
  auto f = std::make_shared<ValueField>(field);
  int m = field.basis().m();
  FeedbackPolicy p;
  p.name = "feedback";
  p.eval = [f, ham, m](double s, std::span<const double> x, std::span<double> u) {
    const TimeGrid& fg = f->grid();
    double sc = std::min(std::max(s, fg.t0), fg.t1);
    auto up = gamma_argmin(ham, f->eval_grad(sc, x));
    for (std::size_t k = 0; k < u.size(); ++k) {
      u[k] = k < up.size() ? up[k] : 0.0;
    }
  };
  return p;
}

DriftFn policy_drift(const ControlProblem& problem, const FeedbackPolicy& policy) {
  if (!policy.eval) throw std::invalid_argument("control: policy has no evaluator");
  ControlSet K = problem.ham.K;
  bool diag = problem.ham.R == "diag";
  std::vector<double> rd = problem.ham.R_diag;
  auto eval = policy.eval;
  return [eval, K, diag, rd](double s, std::span<const double> x,
                             std::span<double> out) {
    eval(s, x, out);
    check_in_set(K, out);
    if (diag) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] *= rd[k];
    }
  };
}

nlohmann::json CostReport::to_json() const {
  nlohmann::json j;
  j["J"] = J;
  j["stderr"] = std_error;
  j["n_paths"] = n_paths;
  j["h"] = h;
  if (v) j["v"] = *v;
  if (gap) j["gap"] = *gap;
  if (gap) j["gap_stderr"] = gap_std_error;
  return j;
}

CostReport cost_on_paths(const ControlProblem& problem,
                         const FeedbackPolicy& policy, const PathEnsemble& paths,
                         const ValueField* field) {
  problem.validate();
  if (!policy.eval) throw std::invalid_argument("control: policy has no evaluator");
  check_grid_matches(problem, paths);

  const int dim = paths.dim;
  const int M = paths.grid.steps;
  const int n = paths.n_paths;
  const double h = paths.grid.h();
  const HamiltonianSpec& ham = problem.ham;
  const TerminalData* l = problem.l ? &*problem.l : nullptr;

  std::vector<double> cost(n, 0.0);
  parallel_for_chunks(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> u(dim);
    for (std::size_t p = begin; p < end; ++p) {
      double acc = 0.0;
      for (int i = 0; i < M; ++i) {
        auto row = paths.state_row(i, static_cast<int>(p));
        policy.eval(paths.grid.time(i), row, {u.data(), u.size()});
        check_in_set(ham.K, u);
        acc += h * ham.cost.radial(norm2(u), ham.q);
        if (l) acc += h * l->f.fn(row);
      }
      acc += problem.phi.f.fn(paths.state_row(M, static_cast<int>(p)));
      cost[p] = acc;
    }
  });

  CostReport rep;
  rep.n_paths = n;
  rep.h = h;
  // a constant sample means the constant exactly, with no division rounding
  bool constant = true;
  for (int p = 1; p < n && constant; ++p) constant = cost[p] == cost[0];
  double ss = 0.0;
  if (constant) {
    rep.J = cost[0];
  } else {
    rep.J = chunked_sum(n, [&](std::size_t p) { return cost[p]; }) / n;
    ss = chunked_sum(n, [&](std::size_t p) {
      double d = cost[p] - rep.J;
      return d * d;
    });
  }
  rep.std_error = floored_std_error(rep.J, ss, n);
  if (field) {
    rep.v = field->eval_v(problem.t, problem.x);
    rep.gap = rep.J - *rep.v;
    rep.gap_std_error = rep.std_error;
  }
  return rep;
}

CostReport evaluate_cost(const ControlProblem& problem,
                         const FeedbackPolicy& policy, int n_steps, int n_paths,
                         std::uint64_t seed, const ValueField* field) {
  check_run_args(problem, n_steps, n_paths);
  TimeGrid grid{problem.t, problem.model.T, n_steps};
  auto paths = simulate_controlled(problem.model, policy_drift(problem, policy),
                                   problem.x, grid, n_paths, seed);
  return cost_on_paths(problem, policy, paths, field);
}

ClosedLoopRun simulate_closed_loop(const ControlProblem& problem,
                                   const ValueField& field, int n_steps,
                                   int n_paths, std::uint64_t seed) {
  check_run_args(problem, n_steps, n_paths);
  ClosedLoopRun run;
  run.policy = synthesize_feedback(field, problem.ham, problem.t);
  TimeGrid grid{problem.t, problem.model.T, n_steps};
  run.paths = simulate_controlled(problem.model, policy_drift(problem, run.policy),
                                  problem.x, grid, n_paths, seed);
  run.cost = cost_on_paths(problem, run.policy, run.paths, &field);
  return run;
}

GapReport fundamental_gap(const ControlProblem& problem,
                          const FeedbackPolicy& policy, const ValueField& field,
                          int n_steps, int n_paths, std::uint64_t seed) {
  check_run_args(problem, n_steps, n_paths);
  const TimeGrid& fg = field.grid();
  if (problem.t < fg.t0 - 1e-12 ||
      std::fabs(fg.t1 - problem.model.T) > 1e-12) {
    throw std::invalid_argument("control: field does not cover the control window");
  }
  TimeGrid grid{problem.t, problem.model.T, n_steps};
  auto paths = simulate_controlled(problem.model, policy_drift(problem, policy),
                                   problem.x, grid, n_paths, seed);

  const int dim = paths.dim;
  const int M = grid.steps;
  const int n = paths.n_paths;
  const double h = grid.h();
  const HamiltonianSpec& ham = problem.ham;

  std::vector<double> acc(n, 0.0);
  std::size_t n_chunks = (static_cast<std::size_t>(n) + kChunkSize - 1) / kChunkSize;
  std::vector<double> chunk_min(n_chunks, 0.0);
  parallel_for_chunks(n, [&](std::size_t begin, std::size_t end) {
    std::vector<double> u(dim);
    double local_min = 0.0;
    for (std::size_t p = begin; p < end; ++p) {
      double sum = 0.0;
      for (int i = 0; i < M; ++i) {
        auto row = paths.state_row(i, static_cast<int>(p));
        double s = grid.time(i);
        auto D = field.eval_grad(std::min(s, fg.t1), row);
        policy.eval(s, row, {u.data(), u.size()});
        double dot = 0.0;
        if (ham.R == "diag") {
          for (std::size_t k = 0; k < D.size(); ++k) dot += D[k] * ham.R_diag[k] * u[k];
        } else {
          for (std::size_t k = 0; k < D.size(); ++k) dot += D[k] * u[k];
        }
        double bracket = -psi_eval(ham, D) + dot + ham.cost.radial(norm2(u), ham.q);
        local_min = std::min(local_min, bracket);
        sum += h * bracket;
      }
      acc[p] = sum;
    }
    chunk_min[begin / kChunkSize] = std::min(chunk_min[begin / kChunkSize], local_min);
  });

  GapReport rep;
  rep.n_paths = n;
  rep.h = h;
  rep.min_integrand = 0.0;
  for (double v : chunk_min) rep.min_integrand = std::min(rep.min_integrand, v);
  if (rep.min_integrand < -1e-9) {
    throw std::runtime_error(
        "control: fundamental-relation integrand is negative beyond tolerance "
        "(psi/gamma defect), worst " +
        std::to_string(rep.min_integrand));
  }
  bool constant = true;
  for (int p = 1; p < n && constant; ++p) constant = acc[p] == acc[0];
  double ss = 0.0;
  if (constant) {
    rep.gap = acc[0];
  } else {
    rep.gap = chunked_sum(n, [&](std::size_t p) { return acc[p]; }) / n;
    ss = chunked_sum(n, [&](std::size_t p) {
      double d = acc[p] - rep.gap;
      return d * d;
    });
  }
  rep.std_error = floored_std_error(rep.gap, ss, n);
  return rep;
}

}  // namespace ouhjb
