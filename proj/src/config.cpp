#include "ouhjb/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>

namespace ouhjb {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::invalid_argument("config: " + path + ": " + what);
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* a : allowed) {
      if (it.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) fail(path, "unknown key '" + it.key() + "'");
  }
}

const json& need(const json& j, const std::string& path, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    fail(path, std::string("missing key '") + key + "'");
  }
  return j.at(key);
}

template <typename T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    fail(path, e.what());
  }
}

template <typename T>
T need_as(const json& j, const std::string& path, const char* key) {
  return get_as<T>(need(j, path, key), path + "." + key);
}

template <typename T>
T value_or(const json& j, const std::string& path, const char* key, T dflt) {
  if (!j.is_object() || !j.contains(key)) return dflt;
  return get_as<T>(j.at(key), path + "." + key);
}

SpectralModel parse_model(const json& j) {
  check_keys(j, "model", {"preset", "L", "N", "noise", "modes", "T"});
  std::string preset = need_as<std::string>(j, "model", "preset");
  double T = need_as<double>(j, "model", "T");
  try {
    if (preset == "heat") {
      if (j.contains("modes")) fail("model.modes", "only valid for preset 'custom'");
      const json& nj = need(j, "model", "noise");
      check_keys(nj, "model.noise", {"rule", "sigma2", "beta"});
      NoiseRule rule;
      rule.rule = value_or<std::string>(nj, "model.noise", "rule", "white");
      rule.sigma2 = value_or<double>(nj, "model.noise", "sigma2", 1.0);
      rule.beta = value_or<double>(nj, "model.noise", "beta", 0.0);
      return heat_preset(need_as<double>(j, "model", "L"),
                         need_as<int>(j, "model", "N"), rule, T);
    }
    if (preset == "custom") {
      for (const char* k : {"L", "N", "noise"}) {
        if (j.contains(k)) {
          fail(std::string("model.") + k, "only valid for preset 'heat'");
        }
      }
      const json& mj = need(j, "model", "modes");
      if (!mj.is_array() || mj.empty()) fail("model.modes", "expected a nonempty array");
      std::vector<ModeSpec> modes;
      for (const json& one : mj) {
        check_keys(one, "model.modes[]", {"k", "alpha", "lambda"});
        ModeSpec ms;
        ms.k = need_as<int>(one, "model.modes[]", "k");
        ms.alpha = need_as<double>(one, "model.modes[]", "alpha");
        ms.lambda = need_as<double>(one, "model.modes[]", "lambda");
        modes.push_back(ms);
      }
      return custom_model(std::move(modes), T);
    }
  } catch (const std::exception& e) {
    std::string w = e.what();
    if (w.rfind("config: ", 0) == 0) throw;
    fail("model", w);
  }
  fail("model.preset", "unknown preset '" + preset + "'");
}

HamiltonianSpec parse_hamiltonian(const json& j) {
  try {
    return HamiltonianSpec::from_json(j);
  } catch (const std::exception& e) {
    fail("hamiltonian", e.what());
  }
}

CylFunction parse_fn(const json& j, const std::string& path) {
  try {
    return CylFunction::from_json(j);
  } catch (const std::exception& e) {
    fail(path, e.what());
  }
}

}  // namespace

TerminalData ExperimentConfig::terminal() const {
  if (phi_mollify) {
    return TerminalData::from_mollified(MollifiedFunction(phi_base, *phi_mollify));
  }
  return TerminalData::from_cyl(phi_base);
}

std::optional<TerminalData> ExperimentConfig::running_data() const {
  if (!running) return std::nullopt;
  return TerminalData::from_cyl(*running);
}

int ExperimentConfig::bsde_steps() const {
  return static_cast<int>(std::llround((model.T - start_t) / bsde_h));
}

int ExperimentConfig::control_steps() const {
  double h = control_h > 0.0 ? control_h
             : bsde_h > 0.0  ? bsde_h
                             : (model.T - start_t) / 20.0;
  return std::max(1, static_cast<int>(std::llround((model.T - start_t) / h)));
}

ControlProblem ExperimentConfig::control_problem() const {
  ControlProblem p;
  p.model = model;
  p.ham = ham;
  p.phi = terminal();
  p.l = running_data();
  p.t = start_t;
  p.x = start_x;
  return p;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  check_keys(j, "config",
             {"model", "hamiltonian", "terminal", "running_cost", "start",
              "picard", "bsde", "control", "z_profile", "seed", "out_dir"});

  ExperimentConfig cfg;
  cfg.model = parse_model(need(j, "config", "model"));
  const int dim = cfg.model.dim();
  cfg.ham = parse_hamiltonian(need(j, "config", "hamiltonian"));

  const json& tj = need(j, "config", "terminal");
  check_keys(tj, "terminal", {"fn", "mollify"});
  cfg.phi_base = parse_fn(need(tj, "terminal", "fn"), "terminal.fn");
  if (cfg.phi_base.max_support_mode() > dim) {
    fail("terminal.fn", "support exceeds the model dimension");
  }
  if (tj.contains("mollify")) {
    try {
      cfg.phi_mollify = MollifySpec::from_json(tj.at("mollify"));
    } catch (const std::exception& e) {
      fail("terminal.mollify", e.what());
    }
  }

  if (j.contains("running_cost")) {
    const json& rj = j.at("running_cost");
    check_keys(rj, "running_cost", {"fn"});
    cfg.running = parse_fn(need(rj, "running_cost", "fn"), "running_cost.fn");
    if (cfg.running->max_support_mode() > dim) {
      fail("running_cost.fn", "support exceeds the model dimension");
    }
  }

  const json* sj = j.contains("start") ? &j.at("start") : nullptr;
  if (sj) check_keys(*sj, "start", {"t", "x"});
  cfg.start_t = sj ? value_or<double>(*sj, "start", "t", 0.0) : 0.0;
  cfg.start_x.assign(dim, 0.0);
  if (sj && sj->contains("x")) {
    auto x = get_as<std::vector<double>>(sj->at("x"), "start.x");
    if (static_cast<int>(x.size()) != dim) {
      fail("start.x", "expected one entry per model mode");
    }
    for (double v : x) {
      if (!std::isfinite(v)) fail("start.x", "entries must be finite");
    }
    cfg.start_x = std::move(x);
  }
  if (!(cfg.start_t >= 0.0) || cfg.start_t >= cfg.model.T) {
    fail("start.t", "must lie in [0, model.T)");
  }

  cfg.has_picard = j.contains("picard");
  if (cfg.has_picard) {
    const json& pj = j.at("picard");
    check_keys(pj, "picard", {"delta_hint", "tol", "max_iter", "degree", "modes"});
    cfg.picard.delta_hint = value_or<double>(pj, "picard", "delta_hint", 0.0);
    cfg.picard.tol = value_or<double>(pj, "picard", "tol", 1e-9);
    cfg.picard.max_iter = value_or<int>(pj, "picard", "max_iter", 60);
    cfg.picard.degree = value_or<int>(pj, "picard", "degree", 4);
    cfg.picard.m = value_or<int>(pj, "picard", "modes", std::min(4, dim));
    if (cfg.picard.delta_hint < 0.0 || cfg.picard.delta_hint > cfg.model.T) {
      fail("picard.delta_hint", "must lie in [0, model.T]");
    }
    if (cfg.picard.tol <= 0.0) fail("picard.tol", "must be > 0");
    if (cfg.picard.max_iter < 1) fail("picard.max_iter", "must be >= 1");
    if (cfg.picard.degree < 1) fail("picard.degree", "must be >= 1");
    if (cfg.picard.m < 1 || cfg.picard.m > dim) {
      fail("picard.modes", "must lie in [1, model dimension]");
    }
  }

  cfg.has_bsde = j.contains("bsde");
  if (cfg.has_bsde) {
    const json& bj = j.at("bsde");
    check_keys(bj, "bsde", {"h", "n_paths", "ridge", "modes", "degree"});
    cfg.bsde_h = need_as<double>(bj, "bsde", "h");
    cfg.bsde_n_paths = value_or<int>(bj, "bsde", "n_paths", 10000);
    cfg.bsde.ridge = value_or<double>(bj, "bsde", "ridge", 1e-8);
    cfg.bsde.m = value_or<int>(bj, "bsde", "modes", std::min(4, dim));
    cfg.bsde.degree = value_or<int>(bj, "bsde", "degree", 4);
    double span = cfg.model.T - cfg.start_t;
    if (!(cfg.bsde_h > 0.0)) fail("bsde.h", "must be > 0");
    int steps = static_cast<int>(std::llround(span / cfg.bsde_h));
    if (steps < 1 || std::fabs(steps * cfg.bsde_h - span) > 1e-9 * std::max(1.0, span)) {
      fail("bsde.h", "must divide the horizon T - start.t evenly");
    }
    if (cfg.bsde_n_paths < 2) fail("bsde.n_paths", "must be >= 2");
    if (cfg.bsde.ridge < 0.0) fail("bsde.ridge", "must be >= 0");
    if (cfg.bsde.m < 1 || cfg.bsde.m > dim) {
      fail("bsde.modes", "must lie in [1, model dimension]");
    }
    if (cfg.bsde.degree < 1) fail("bsde.degree", "must be >= 1");
  }

  cfg.has_control = j.contains("control");
  if (cfg.has_control) {
    const json& cj = j.at("control");
    check_keys(cj, "control", {"h", "n_paths"});
    cfg.control_h = value_or<double>(cj, "control", "h", 0.0);
    cfg.control_n_paths = value_or<int>(cj, "control", "n_paths", 20000);
    if (cfg.control_h < 0.0) fail("control.h", "must be >= 0");
    if (cfg.control_n_paths < 2) fail("control.n_paths", "must be >= 2");
  }

  if (j.contains("z_profile")) {
    const json& zj = j.at("z_profile");
    check_keys(zj, "z_profile", {"t_list", "probes", "n_steps", "n_paths"});
    ZProfileConfig z;
    z.t_list = need_as<std::vector<double>>(zj, "z_profile", "t_list");
    if (z.t_list.empty()) fail("z_profile.t_list", "expected a nonempty array");
    for (double t : z.t_list) {
      if (!(t >= 0.0) || t >= cfg.model.T) {
        fail("z_profile.t_list", "entries must lie in [0, model.T)");
      }
    }
    z.probes = need_as<std::vector<std::vector<double>>>(zj, "z_profile", "probes");
    if (z.probes.empty()) fail("z_profile.probes", "expected a nonempty array");
    for (const auto& p : z.probes) {
      if (static_cast<int>(p.size()) != dim) {
        fail("z_profile.probes", "each probe needs one entry per model mode");
      }
    }
    z.n_steps = value_or<int>(zj, "z_profile", "n_steps", 12);
    z.n_paths = value_or<int>(zj, "z_profile", "n_paths", 20000);
    if (z.n_steps < 1) fail("z_profile.n_steps", "must be >= 1");
    if (z.n_paths < 2) fail("z_profile.n_paths", "must be >= 2");
    cfg.z_profile = std::move(z);
  }

  const json& seed_j = need(j, "config", "seed");
  if (!seed_j.is_number_unsigned() &&
      !(seed_j.is_number_integer() && seed_j.get<long long>() >= 0)) {
    fail("seed", "must be a nonnegative integer");
  }
  cfg.seed = seed_j.get<std::uint64_t>();
  cfg.out_dir = value_or<std::string>(j, "config", "out_dir", ".");

  cfg.raw_ = j;
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path + ": " + e.what());
  }
  return from_json(j);
}

std::string config_hash(const nlohmann::json& config) {
  const std::string text = config.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

nlohmann::json artifact_header(const char* kind, const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["kind"] = kind;
  j["version"] = kVersion;
  j["config_hash"] = config_hash(cfg.to_json());
  j["seed"] = cfg.seed;
  return j;
}

}  // namespace

FieldArtifact build_field_artifact(const ExperimentConfig& cfg) {
  if (!cfg.has_picard) {
    throw std::invalid_argument("config: picard: fragment required to solve the field");
  }
  TerminalData phi = cfg.terminal();
  std::optional<TerminalData> l = cfg.running_data();
  PicardReport report;
  ValueField field =
      solve_mild(cfg.model, cfg.ham, phi, l ? &*l : nullptr, cfg.picard, &report);
  nlohmann::json j = artifact_header("field", cfg);
  j["field"] = field.to_json();
  j["picard"] = report.to_json();
  return FieldArtifact{std::move(field), std::move(report), std::move(j)};
}

nlohmann::json build_bsde_artifact(const ExperimentConfig& cfg) {
  if (!cfg.has_bsde) {
    throw std::invalid_argument("config: bsde: fragment required to solve backwards");
  }
  TerminalData phi = cfg.terminal();
  std::optional<TerminalData> l = cfg.running_data();
  BSDESolution sol =
      solve_bsde(cfg.model, &cfg.ham, phi, l ? &*l : nullptr, cfg.start_t,
                 cfg.start_x, cfg.bsde_steps(), cfg.bsde_n_paths, cfg.seed, cfg.bsde);
  nlohmann::json j = artifact_header("bsde", cfg);
  j["solution"] = sol.to_json();
  return j;
}

nlohmann::json build_zprofile_artifact(const ExperimentConfig& cfg) {
  if (!cfg.z_profile) {
    throw std::invalid_argument("config: z_profile: fragment required for the profile");
  }
  TerminalData phi = cfg.terminal();
  std::optional<TerminalData> l = cfg.running_data();
  const ZProfileConfig& z = *cfg.z_profile;
  ZProfile prof = z_profile(cfg.model, &cfg.ham, phi, l ? &*l : nullptr, z.t_list,
                            z.probes, z.n_steps, z.n_paths, cfg.seed, cfg.bsde);
  nlohmann::json j = artifact_header("zprofile", cfg);
  nlohmann::json rows = nlohmann::json::array();
  for (const ZProfileRow& r : prof.rows) {
    rows.push_back({{"gap", r.gap}, {"sup_z", r.sup_z}});
  }
  j["rows"] = rows;
  j["slope"] = prof.slope;
  return j;
}

FeedbackPolicy parse_policy(const std::string& spec, const ExperimentConfig& cfg,
                            const ValueField* field) {
  if (spec == "zero") return zero_policy();
  if (spec == "feedback") {
    if (!field) {
      throw std::invalid_argument("control: policy 'feedback' needs a solved field");
    }
    return synthesize_feedback(*field, cfg.ham, cfg.start_t);
  }
  if (spec.rfind("const:", 0) == 0) {
    std::vector<double> u;
    std::stringstream ss(spec.substr(6));
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || item.empty()) {
        throw std::invalid_argument("control: bad constant in policy '" + spec + "'");
      }
      u.push_back(v);
    }
    if (u.empty() || static_cast<int>(u.size()) > cfg.model.dim()) {
      throw std::invalid_argument(
          "control: constant policy needs 1 to dim entries");
    }
    return constant_policy(std::move(u));
  }
  throw std::invalid_argument("control: unknown policy '" + spec +
                              "' (expected feedback, zero, or const:...)");
}

nlohmann::json build_control_artifact(const ExperimentConfig& cfg,
                                      const nlohmann::json& field_artifact,
                                      const std::string& policy_spec) {
  if (!field_artifact.contains("field")) {
    throw std::invalid_argument("control: field artifact lacks a 'field' entry");
  }
  ValueField field = ValueField::from_json(field_artifact.at("field"));
  ControlProblem problem = cfg.control_problem();
  FeedbackPolicy policy = parse_policy(policy_spec, cfg, &field);
  CostReport cost = evaluate_cost(problem, policy, cfg.control_steps(),
                                  cfg.control_n_paths, cfg.seed, &field);
  nlohmann::json j = cost.to_json();
  nlohmann::json head = artifact_header("control", cfg);
  for (auto it = head.begin(); it != head.end(); ++it) j[it.key()] = it.value();
  j["policy"] = policy_spec;
  return j;
}

namespace {

void csv_row(std::ostringstream& os) { os << '\n'; }

template <typename T, typename... Rest>
void csv_row(std::ostringstream& os, T first, Rest... rest) {
  os << first;
  if constexpr (sizeof...(rest) > 0) os << ',';
  csv_row(os, rest...);
}

const nlohmann::json& artifact_part(const nlohmann::json& artifact,
                                    const char* expected_kind, const char* part) {
  if (!artifact.contains("kind") ||
      artifact.at("kind").get<std::string>() != expected_kind ||
      !artifact.contains(part)) {
    throw std::invalid_argument(std::string("report: expected a '") + expected_kind +
                                "' artifact with a '" + part + "' entry");
  }
  return artifact.at(part);
}

}  // namespace

std::string windows_csv(const nlohmann::json& field_artifact) {
  return PicardReport::from_json(artifact_part(field_artifact, "field", "picard"))
      .csv();
}

std::string steps_csv(const nlohmann::json& bsde_artifact) {
  return BSDESolution::from_json(artifact_part(bsde_artifact, "bsde", "solution"))
      .diagnostics_csv();
}

std::string ladder_csv(const std::vector<nlohmann::json>& bsde_artifacts) {
  if (bsde_artifacts.size() < 2) {
    throw std::invalid_argument("report: a step ladder needs at least two artifacts");
  }
  struct Rung {
    double h;
    double y0;
  };
  std::vector<Rung> rungs;
  double t0 = 0.0, t1 = 0.0;
  for (const nlohmann::json& a : bsde_artifacts) {
    const nlohmann::json& s = artifact_part(a, "bsde", "solution");
    double a0 = s.at("t0").get<double>(), a1 = s.at("t1").get<double>();
    if (rungs.empty()) {
      t0 = a0;
      t1 = a1;
    } else if (std::fabs(a0 - t0) > 1e-12 || std::fabs(a1 - t1) > 1e-12) {
      throw std::invalid_argument("report: ladder artifacts disagree on the interval");
    }
    int steps = s.at("steps").get<int>();
    rungs.push_back({(a1 - a0) / steps, s.at("y0").get<double>()});
  }
  std::sort(rungs.begin(), rungs.end(),
            [](const Rung& a, const Rung& b) { return a.h > b.h; });
  for (std::size_t i = 0; i + 1 < rungs.size(); ++i) {
    if (rungs[i].h <= rungs[i + 1].h) {
      throw std::invalid_argument("report: ladder artifacts share a step size");
    }
  }
  const Rung& finest = rungs.back();
  std::vector<double> err(rungs.size() - 1);
  for (std::size_t i = 0; i + 1 < rungs.size(); ++i) {
    err[i] = std::fabs(rungs[i].y0 - finest.y0);
  }
  std::ostringstream os;
  os.precision(17);
  os << "h,y0,err_vs_finest,order\n";
  for (std::size_t i = 0; i < rungs.size(); ++i) {
    os << rungs[i].h << ',' << rungs[i].y0 << ',';
    if (i + 1 < rungs.size()) os << err[i];
    os << ',';
    if (i + 2 < rungs.size() && err[i] > 0.0 && err[i + 1] > 0.0) {
      os << std::log(err[i] / err[i + 1]) / std::log(rungs[i].h / rungs[i + 1].h);
    }
    os << '\n';
  }
  return os.str();
}

std::string zrows_csv(const nlohmann::json& zprofile_artifact) {
  const nlohmann::json& rows = artifact_part(zprofile_artifact, "zprofile", "rows");
  std::ostringstream os;
  os.precision(17);
  os << "gap,sup_z\n";
  for (const nlohmann::json& r : rows) {
    os << r.at("gap").get<double>() << ',' << r.at("sup_z").get<double>() << '\n';
  }
  return os.str();
}

std::string zfit_csv(const nlohmann::json& zprofile_artifact) {
  const nlohmann::json& rows = artifact_part(zprofile_artifact, "zprofile", "rows");
  std::vector<double> lg, lz;
  for (const nlohmann::json& r : rows) {
    double gap = r.at("gap").get<double>(), sup = r.at("sup_z").get<double>();
    if (gap > 0.0 && sup > 0.0) {
      lg.push_back(std::log(gap));
      lz.push_back(std::log(sup));
    }
  }
  std::size_t n = lg.size();
  if (n < 3) {
    throw std::invalid_argument("report: slope fit needs at least three usable rows");
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lg[i];
    my += lz[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lg[i] - mx) * (lg[i] - mx);
    sxy += (lg[i] - mx) * (lz[i] - my);
  }
  double slope = sxy / sxx;
  double intercept = my - slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r = lz[i] - intercept - slope * lg[i];
    ss += r * r;
  }
  double se = std::sqrt(ss / (n - 2) / sxx);
  std::ostringstream os;
  os.precision(17);
  os << "slope,stderr,ci_lo,ci_hi\n";
  csv_row(os, slope, se, slope - 1.96 * se, slope + 1.96 * se);
  return os.str();
}

std::string model_csv(const SpectralModel& model, double t_lo, double t_hi,
                      int n_grid) {
  if (!(t_lo > 0.0) || !(t_hi > t_lo) || n_grid < 2) {
    throw std::invalid_argument("model_csv: bad smoothing grid");
  }
  std::ostringstream os;
  os.precision(17);
  os << "k,alpha,lambda\n";
  for (const ModeSpec& m : model.modes) {
    os << m.k << ',' << m.alpha << ',' << m.lambda << '\n';
  }
  os << "\nt,norm,t_half_times_norm\n";
  for (int i = 0; i < n_grid; ++i) {
    double t = t_lo * std::pow(t_hi / t_lo, static_cast<double>(i) / (n_grid - 1));
    double norm = smoothing_norm(model, t);
    os << t << ',' << norm << ',' << std::sqrt(t) * norm << '\n';
  }
  return os.str();
}

std::string artifact_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json make_manifest(const std::string& command,
                             const ExperimentConfig& cfg,
                             const std::vector<std::string>& artifacts) {
  nlohmann::json j;
  j["command"] = command;
  j["config_hash"] = config_hash(cfg.to_json());
  j["seed"] = cfg.seed;
  j["version"] = kVersion;
  j["artifacts"] = artifacts;
  return j;
}

}  // namespace ouhjb
