#include "ouhjb/mollify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <stdexcept>

#include "ouhjb/rng.hpp"

namespace ouhjb {

namespace {

constexpr int kGridPts = 25;   // per-axis points per refinement round
constexpr int kRounds = 8;     // shrink factor 2*spacing/radius per round
constexpr size_t kMaxGridDim = 2;

using Objective = std::function<double(const std::vector<double>&)>;

// Minimize over an axis-aligned box center +- radius by nested grid scans:
// each round keeps the best lattice point and shrinks the box to two cells.
double nested_grid_min(const Objective& obj, std::vector<double> center,
                       double radius) {
  size_t d = center.size();
  std::vector<double> pt(d), best_pt = center;
  double best = obj(center);
  for (int round = 0; round < kRounds; ++round) {
    double spacing = 2.0 * radius / (kGridPts - 1);
    size_t total = 1;
    for (size_t k = 0; k < d; ++k) total *= kGridPts;
    for (size_t flat = 0; flat < total; ++flat) {
      size_t rem = flat;
      for (size_t k = 0; k < d; ++k) {
        int idx = static_cast<int>(rem % kGridPts);
        rem /= kGridPts;
        pt[k] = center[k] - radius + spacing * idx;
      }
      double v = obj(pt);
      if (v < best) {
        best = v;
        best_pt = pt;
      }
    }
    center = best_pt;
    radius = 2.0 * spacing;
  }
  return best;
}

// Fallback for larger supports: multi-start cyclic golden-section descent.
double sampled_descent_min(const Objective& obj, const std::vector<double>& x0,
                           double radius) {
  size_t d = x0.size();
  const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto golden_1d = [&](const Objective& f, std::vector<double> pt, size_t k,
                       double a, double b) {
    auto slice = [&](double v) {
      pt[k] = v;
      return f(pt);
    };
    double c = b - invphi * (b - a), dd = a + invphi * (b - a);
    double fc = slice(c), fd = slice(dd);
    while (b - a > 1e-11 * (1.0 + std::fabs(a) + std::fabs(b))) {
      if (fc < fd) {
        b = dd;
        dd = c;
        fd = fc;
        c = b - invphi * (b - a);
        fc = slice(c);
      } else {
        a = c;
        c = dd;
        fc = fd;
        dd = a + invphi * (b - a);
        fd = slice(dd);
      }
    }
    return 0.5 * (a + b);
  };

  double best = obj(x0);
  std::uint64_t state = 0x9E3779B97F4A7C15ULL;
  for (int start = 0; start < 7; ++start) {
    std::vector<double> pt = x0;
    if (start > 0) {
      for (size_t k = 0; k < d; ++k) {
        double r = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
        pt[k] = x0[k] + (2.0 * r - 1.0) * radius;
      }
    }
    double f = obj(pt);
    for (int sweep = 0; sweep < 40; ++sweep) {
      for (size_t k = 0; k < d; ++k) {
        pt[k] = golden_1d(obj, pt, k, x0[k] - radius, x0[k] + radius);
      }
      double fn = obj(pt);
      if (f - fn < 1e-13) {
        f = fn;
        break;
      }
      f = fn;
    }
    best = std::min(best, f);
  }
  return best;
}

double box_min(const Objective& obj, const std::vector<double>& center,
               double radius, size_t support_size, bool allow_sampled) {
  if (support_size <= kMaxGridDim) return nested_grid_min(obj, center, radius);
  if (!allow_sampled) {
    throw std::invalid_argument(
        "mollify: support larger than 2 coordinates needs allow_sampled");
  }
  return sampled_descent_min(obj, center, radius);
}

// inf_y { base(y) + weight |x-y|^2 }, varying y on the support only.
double inf_convolution(const CylFunction& base, double weight,
                       std::span<const double> x, bool allow_sampled) {
  const auto& sup = base.support();
  if (sup.empty()) return base.eval(x);

  std::vector<double> full(x.begin(), x.end());
  auto obj = [&](const std::vector<double>& y) {
    double pen = 0.0;
    for (size_t j = 0; j < sup.size(); ++j) {
      double dy = y[j] - x[sup[j] - 1];
      full[sup[j] - 1] = y[j];
      pen += dy * dy;
    }
    return base.eval(full) + weight * pen;
  };

  std::vector<double> center(sup.size());
  for (size_t j = 0; j < sup.size(); ++j) center[j] = x[sup[j] - 1];
  // minimizer localization: weight |x-y*|^2 <= osc(base) <= 2 sup_bound
  double radius = 1.1 * std::sqrt(2.0 * base.sup_bound() / weight) + 1e-8;
  double best = box_min(obj, center, radius, sup.size(), allow_sampled);

  // Holder-type cusps on the coordinate hyperplanes attract the minimizer
  // exactly; grid refinement alone converges too slowly in value there, so
  // evaluate the zeroed-coordinate candidates directly.
  size_t d = sup.size();
  if (d <= 3) {
    std::vector<double> cand(d);
    for (size_t mask = 1; mask < (size_t{1} << d); ++mask) {
      for (size_t j = 0; j < d; ++j) {
        cand[j] = (mask >> j) & 1 ? 0.0 : center[j];
      }
      best = std::min(best, obj(cand));
    }
  } else {
    std::vector<double> cand = center;
    for (size_t j = 0; j < d; ++j) {
      cand[j] = 0.0;
      best = std::min(best, obj(cand));
      cand[j] = center[j];
    }
    std::fill(cand.begin(), cand.end(), 0.0);
    best = std::min(best, obj(cand));
  }
  return best;
}

}  // namespace

void MollifySpec::validate() const {
  if (scheme != "inf" && scheme != "infsup") {
    throw std::invalid_argument("MollifySpec: scheme must be inf or infsup");
  }
  if (n < 1) throw std::invalid_argument("MollifySpec: n must be >= 1");
}

nlohmann::json MollifySpec::to_json() const {
  return nlohmann::json{{"scheme", scheme}, {"n", n}};
}

MollifySpec MollifySpec::from_json(const nlohmann::json& j) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() != "scheme" && it.key() != "n") {
      throw std::invalid_argument("MollifySpec: unknown key '" + it.key() + "'");
    }
  }
  MollifySpec s;
  s.scheme = j.value("scheme", "inf");
  s.n = j.at("n").get<int>();
  s.validate();
  return s;
}

double moreau_envelope(const CylFunction& base, int n, std::span<const double> x,
                       bool allow_sampled) {
  if (n < 1) throw std::invalid_argument("moreau_envelope: n must be >= 1");
  return inf_convolution(base, 2.0 * n, x, allow_sampled);
}

double infsup_convolution(const CylFunction& base, int n,
                          std::span<const double> x, bool allow_sampled) {
  if (n < 1) throw std::invalid_argument("infsup_convolution: n must be >= 1");
  const auto& sup = base.support();
  if (sup.empty()) return base.eval(x);

  std::vector<double> full(x.begin(), x.end());
  auto neg_outer = [&](const std::vector<double>& z) {
    double pen = 0.0;
    for (size_t j = 0; j < sup.size(); ++j) {
      double dz = z[j] - x[sup[j] - 1];
      full[sup[j] - 1] = z[j];
      pen += dz * dz;
    }
    double inner = inf_convolution(base, 0.5 * n, full, allow_sampled);
    return -(inner - static_cast<double>(n) * pen);
  };

  std::vector<double> center(sup.size());
  for (size_t j = 0; j < sup.size(); ++j) center[j] = x[sup[j] - 1];
  double radius = 1.1 * std::sqrt(2.0 * base.sup_bound() / n) + 1e-8;
  return -box_min(neg_outer, center, radius, sup.size(), allow_sampled);
}

MollifiedFunction::MollifiedFunction(CylFunction base, MollifySpec spec,
                                     bool allow_sampled)
    : base_(std::move(base)), spec_(std::move(spec)), allow_sampled_(allow_sampled) {
  spec_.validate();
  support_ = base_.support();
}

double MollifiedFunction::eval(std::span<const double> x) const {
  if (spec_.scheme == "inf") {
    return moreau_envelope(base_, spec_.n, x, allow_sampled_);
  }
  return infsup_convolution(base_, spec_.n, x, allow_sampled_);
}

double MollifiedFunction::sup_bound() const { return base_.sup_bound(); }

int MollifiedFunction::max_support_mode() const {
  return base_.max_support_mode();
}

}  // namespace ouhjb
