#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ouhjb/control.hpp"
#include "ouhjb/cyl_function.hpp"
#include "ouhjb/fbsde.hpp"
#include "ouhjb/hamiltonian.hpp"
#include "ouhjb/hjb_picard.hpp"
#include "ouhjb/mollify.hpp"
#include "ouhjb/spectral_model.hpp"

namespace ouhjb {

inline constexpr const char* kVersion = "0.1.0";

struct ZProfileConfig {
  std::vector<double> t_list;
  std::vector<std::vector<double>> probes;
  int n_steps = 12;
  int n_paths = 20000;
};

// One experiment: model, Hamiltonian, data, solver settings, seed, output.
// Parsing is strict: unknown keys anywhere in the tree are rejected with the
// offending key path, and to_json returns the validated input verbatim, so
// parse -> serialize -> parse is the identity.
struct ExperimentConfig {
  SpectralModel model;
  HamiltonianSpec ham;

  CylFunction phi_base = CylFunction::constant(0.0);
  std::optional<MollifySpec> phi_mollify;
  std::optional<CylFunction> running;

  double start_t = 0.0;
  std::vector<double> start_x;  // length model.dim()

  bool has_picard = false;
  PicardParams picard;

  bool has_bsde = false;
  BSDEParams bsde;
  double bsde_h = 0.0;
  int bsde_n_paths = 10000;

  bool has_control = false;
  double control_h = 0.0;  // 0 falls back to bsde_h, then to (T - t) / 20
  int control_n_paths = 20000;

  std::optional<ZProfileConfig> z_profile;

  std::uint64_t seed = 0;
  std::string out_dir = ".";

  TerminalData terminal() const;
  std::optional<TerminalData> running_data() const;
  int bsde_steps() const;
  int control_steps() const;
  ControlProblem control_problem() const;

  nlohmann::json to_json() const { return raw_; }
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

 private:
  nlohmann::json raw_;
};

// FNV-1a of the compact serialized config, as 16 hex digits; stamped into
// every artifact so tables are traceable to their inputs.
std::string config_hash(const nlohmann::json& config);

// Artifact builders shared by the CLI and the determinism checks. Every
// artifact carries kind, version, config_hash and seed next to its payload.
struct FieldArtifact {
  ValueField field;
  PicardReport report;
  nlohmann::json json;
};

FieldArtifact build_field_artifact(const ExperimentConfig& cfg);
nlohmann::json build_bsde_artifact(const ExperimentConfig& cfg);
nlohmann::json build_zprofile_artifact(const ExperimentConfig& cfg);

// policy_spec: "feedback" | "zero" | "const:c1,c2,...". The field artifact
// supplies v and the synthesized feedback.
nlohmann::json build_control_artifact(const ExperimentConfig& cfg,
                                      const nlohmann::json& field_artifact,
                                      const std::string& policy_spec);

FeedbackPolicy parse_policy(const std::string& spec, const ExperimentConfig& cfg,
                            const ValueField* field);

// CSV tables derived from artifacts (fixed column order,17 significant digits).
std::string windows_csv(const nlohmann::json& field_artifact);
std::string steps_csv(const nlohmann::json& bsde_artifact);
std::string ladder_csv(const std::vector<nlohmann::json>& bsde_artifacts);
std::string zrows_csv(const nlohmann::json& zprofile_artifact);
std::string zfit_csv(const nlohmann::json& zprofile_artifact);

// Smoothing table for the model subcommand: t, norm, t_half_times_norm over a
// log grid, preceded by the spectrum block (k, alpha, lambda).
std::string model_csv(const SpectralModel& model, double t_lo = 1e-4,
                      double t_hi = 1.0, int n_grid = 25);

// Serialized artifact text: 2-space indented JSON plus a trailing newline;
// the byte representation the determinism contract is stated over.
std::string artifact_text(const nlohmann::json& j);

nlohmann::json make_manifest(const std::string& command,
                             const ExperimentConfig& cfg,
                             const std::vector<std::string>& artifacts);

}  // namespace ouhjb
