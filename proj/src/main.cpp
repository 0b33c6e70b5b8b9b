#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ouhjb/config.hpp"
#include "ouhjb/threading.hpp"
#include "ouhjb/verify.hpp"

namespace fs = std::filesystem;

namespace {

using ouhjb::ExperimentConfig;

struct CommonOpts {
  std::string config_path;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;
};

ExperimentConfig load_config(const CommonOpts& opts) {
  if (opts.config_path.empty()) {
    throw std::invalid_argument("missing --config");
  }
  ExperimentConfig cfg = ExperimentConfig::load(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  return cfg;
}

// --out naming: a path ending in the expected extension is the artifact file
// itself; anything else is a directory that receives default file names.
struct OutPlan {
  fs::path dir;
  fs::path main_file;
};

OutPlan plan_out(const std::string& out, const std::string& default_dir,
                 const std::string& default_name, const std::string& ext) {
  OutPlan p;
  if (!out.empty() && out.size() > ext.size() &&
      out.compare(out.size() - ext.size(), ext.size(), ext) == 0) {
    p.main_file = out;
    p.dir = p.main_file.parent_path();
    if (p.dir.empty()) p.dir = ".";
  } else {
    p.dir = out.empty() ? default_dir : out;
    p.main_file = p.dir / default_name;
  }
  return p;
}

void write_file(const fs::path& path, const std::string& text) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing '" + path.string() + "'");
}

void emit_manifest(const std::string& command, const ExperimentConfig& cfg,
                   const fs::path& dir, const std::vector<std::string>& artifacts) {
  nlohmann::json m = ouhjb::make_manifest(command, cfg, artifacts);
  write_file(dir / "manifest.json", ouhjb::artifact_text(m));
  std::cout << ouhjb::artifact_text(m);
}

int cmd_model(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts);
  std::string csv = ouhjb::model_csv(cfg.model);
  if (opts.out.empty()) {
    std::cout << csv;
    return 0;
  }
  OutPlan plan = plan_out(opts.out, cfg.out_dir, "model.csv", ".csv");
  write_file(plan.main_file, csv);
  std::cout << "wrote " << plan.main_file.string() << "\n";
  return 0;
}

int cmd_solve_picard(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts);
  OutPlan plan = plan_out(opts.out, cfg.out_dir, "field.json", ".json");
  ouhjb::FieldArtifact art = ouhjb::build_field_artifact(cfg);
  write_file(plan.main_file, ouhjb::artifact_text(art.json));
  emit_manifest("solve-picard", cfg, plan.dir, {plan.main_file.filename().string()});
  return 0;
}

int cmd_solve_bsde(const CommonOpts& opts) {
  ExperimentConfig cfg = load_config(opts);
  OutPlan plan = plan_out(opts.out, cfg.out_dir, "bsde.json", ".json");
  nlohmann::json art = ouhjb::build_bsde_artifact(cfg);
  write_file(plan.main_file, ouhjb::artifact_text(art));
  std::vector<std::string> written{plan.main_file.filename().string()};
  if (cfg.z_profile) {
    nlohmann::json prof = ouhjb::build_zprofile_artifact(cfg);
    fs::path zp = plan.dir / "zprofile.json";
    write_file(zp, ouhjb::artifact_text(prof));
    written.push_back(zp.filename().string());
  }
  emit_manifest("solve-bsde", cfg, plan.dir, written);
  return 0;
}

int cmd_control(const CommonOpts& opts, const std::string& field_path,
                const std::string& policy) {
  ExperimentConfig cfg = load_config(opts);
  std::ifstream f(field_path);
  if (!f) throw std::runtime_error("cannot open field artifact '" + field_path + "'");
  nlohmann::json field_artifact;
  f >> field_artifact;
  OutPlan plan = plan_out(opts.out, cfg.out_dir, "report.json", ".json");
  nlohmann::json rep = ouhjb::build_control_artifact(cfg, field_artifact, policy);
  write_file(plan.main_file, ouhjb::artifact_text(rep));
  emit_manifest("control", cfg, plan.dir, {plan.main_file.filename().string()});
  return 0;
}

int cmd_verify(const CommonOpts& opts, const std::string& suite) {
  // the suites carry pinned setups; a config only supplies seed and out_dir
  std::uint64_t seed = opts.seed;
  std::string out_dir = ".";
  if (!opts.config_path.empty()) {
    ExperimentConfig cfg = load_config(opts);
    seed = cfg.seed;
    out_dir = cfg.out_dir;
  }
  OutPlan plan = plan_out(opts.out, out_dir, "verify.json", ".json");
  ouhjb::VerificationReport rep = ouhjb::run_suite(suite, seed);
  write_file(plan.main_file, ouhjb::artifact_text(rep.to_json()));
  std::cout << rep.table();
  return rep.all_pass() ? 0 : 1;
}

int cmd_report(const std::string& out, const std::vector<std::string>& paths) {
  fs::path dir = out.empty() ? "." : out;
  std::vector<std::pair<std::string, nlohmann::json>> artifacts;
  for (const std::string& p : paths) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("missing artifact '" + p + "'");
    nlohmann::json j;
    f >> j;
    artifacts.emplace_back(fs::path(p).stem().string(), std::move(j));
  }
  auto count_kind = [&](const char* kind) {
    int n = 0;
    for (const auto& [stem, j] : artifacts) {
      if (j.contains("kind") && j.at("kind") == kind) ++n;
    }
    return n;
  };
  auto emit = [&](const std::string& stem, const std::string& plain, int kind_count,
                  const std::string& text) {
    fs::path file = dir / (kind_count > 1 ? stem + "." + plain : plain);
    write_file(file, text);
    std::cout << "wrote " << file.string() << "\n";
  };

  std::vector<nlohmann::json> bsde_artifacts;
  for (const auto& [stem, j] : artifacts) {
    std::string kind = j.contains("kind") ? j.at("kind").get<std::string>() : "";
    if (kind == "field") {
      emit(stem, "windows.csv", count_kind("field"), ouhjb::windows_csv(j));
    } else if (kind == "bsde") {
      emit(stem, "steps.csv", count_kind("bsde"), ouhjb::steps_csv(j));
      bsde_artifacts.push_back(j);
    } else if (kind == "zprofile") {
      emit(stem, "zrows.csv", count_kind("zprofile"), ouhjb::zrows_csv(j));
      emit(stem, "zfit.csv", count_kind("zprofile"), ouhjb::zfit_csv(j));
    } else {
      throw std::invalid_argument("report: unsupported artifact '" + stem +
                                  "' (expected field, bsde, or zprofile)");
    }
  }
  if (bsde_artifacts.size() >= 2) {
    fs::path file = dir / "ladder.csv";
    write_file(file, ouhjb::ladder_csv(bsde_artifacts));
    std::cout << "wrote " << file.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spectral solver and verification toolkit for controlled "
               "Ornstein-Uhlenbeck models"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "experiment config (JSON)");
  auto* seed_opt =
      app.add_option("--seed", opts.seed, "override the config seed");
  app.add_option("--out", opts.out, "output file or directory");
  app.add_option("--threads", opts.threads,
                 "worker count; results are identical for any value")
      ->check(CLI::Range(1, 256));

  CLI::App* c_model = app.add_subcommand(
      "model", "print the spectrum and the smoothing-norm table as CSV");
  CLI::App* c_picard = app.add_subcommand(
      "solve-picard", "solve the value equation on the mild formula");
  CLI::App* c_bsde = app.add_subcommand(
      "solve-bsde", "solve the backward equation by regression Monte Carlo");
  CLI::App* c_control =
      app.add_subcommand("control", "evaluate a feedback policy against the field");
  std::string field_path = "field.json";
  std::string policy = "feedback";
  c_control->add_option("--field", field_path, "field artifact from solve-picard");
  c_control->add_option("--policy", policy, "feedback | zero | const:c1,c2,...");
  CLI::App* c_verify = app.add_subcommand("verify", "run a tagged invariant suite");
  std::string suite;
  c_verify->add_option("--suite", suite, "suite tag")
      ->required()
      ->check(CLI::IsMember(ouhjb::suite_tags()));
  CLI::App* c_report = app.add_subcommand("report", "derive CSV tables from artifacts");
  std::vector<std::string> report_paths;
  c_report->add_option("paths", report_paths, "artifact files")->required();

  for (CLI::App* sub : {c_model, c_picard, c_bsde, c_control, c_verify, c_report}) {
    sub->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  opts.seed_set = seed_opt->count() > 0;
  ouhjb::set_thread_count(opts.threads);

  try {
    if (c_model->parsed()) return cmd_model(opts);
    if (c_picard->parsed()) return cmd_solve_picard(opts);
    if (c_bsde->parsed()) return cmd_solve_bsde(opts);
    if (c_control->parsed()) return cmd_control(opts, field_path, policy);
    if (c_verify->parsed()) return cmd_verify(opts, suite);
    if (c_report->parsed()) return cmd_report(opts.out, report_paths);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
