// Experiment CLI: run/validate experiment configs and explain single
// instances against a saved model. Exit codes: 0 success, 2 config error,
// 3 runtime error.
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "xai/explainers.hpp"
#include "xai/harness.hpp"
#include "xai/models.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<int> jobs;
};

xai::harness::ExperimentConfig load_config(const std::string& path,
                                           const CommonFlags& flags) {
  auto cfg = xai::harness::ExperimentConfig::from_file(path);
  if (flags.seed) cfg.master_seed = *flags.seed;
  if (flags.out_dir) cfg.out_dir = *flags.out_dir;
  if (flags.jobs) cfg.n_jobs = *flags.jobs;
  return cfg;
}

int cmd_run(const std::string& path, const CommonFlags& flags) {
  const auto cfg = load_config(path, flags);
  const auto report = xai::harness::run_experiment(cfg);
  const auto files = xai::harness::emit_report(report, cfg.out_dir);
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& path, const CommonFlags& flags) {
  (void)load_config(path, flags);
  std::cout << "config OK: " << path << "\n";
  return kExitOk;
}

// instance.csv: header row of feature names, then one numeric row per
// instance to explain
int cmd_explain(const std::string& model_path, const std::string& csv_path,
                const CommonFlags& flags) {
  std::ifstream min(model_path);
  if (!min)
    throw xai::harness::ConfigError("cannot open model file: " + model_path);
  std::stringstream mbuf;
  mbuf << min.rdbuf();
  std::unique_ptr<xai::models::TrainedModel> model;
  try {
    model = xai::models::TrainedModel::from_json(mbuf.str());
  } catch (const std::exception& e) {
    throw xai::harness::ConfigError(std::string("bad model file: ") + e.what());
  }

  std::ifstream cin_(csv_path);
  if (!cin_)
    throw xai::harness::ConfigError("cannot open instance file: " + csv_path);
  std::string line;
  if (!std::getline(cin_, line))
    throw xai::harness::ConfigError("instance file is empty: " + csv_path);
  std::vector<std::string> names;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) names.push_back(cell);
  }
  const int d = static_cast<int>(names.size());
  if (d != model->dim())
    throw xai::harness::ConfigError(
        "instance file has " + std::to_string(d) + " columns, model expects " +
        std::to_string(model->dim()));
  std::vector<Eigen::VectorXd> rows;
  while (std::getline(cin_, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    Eigen::VectorXd row(d);
    int j = 0;
    while (std::getline(ls, cell, ',')) {
      if (j >= d)
        throw xai::harness::ConfigError("row has too many columns: " + line);
      try {
        row[j++] = std::stod(cell);
      } catch (const std::exception&) {
        throw xai::harness::ConfigError("non-numeric cell '" + cell + "'");
      }
    }
    if (j != d)
      throw xai::harness::ConfigError("row has too few columns: " + line);
    rows.push_back(std::move(row));
  }
  if (rows.empty())
    throw xai::harness::ConfigError("instance file has no data rows");

  // background: the provided instances themselves when there are several,
  // otherwise the zero vector (standardized-space convention)
  xai::explain::Background bg;
  if (rows.size() >= 2) {
    bg.X.resize(static_cast<Eigen::Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i)
      bg.X.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  } else {
    bg.X = Eigen::MatrixXd::Zero(1, d);
  }

  xai::explain::ExplainerConfig ecfg;
  ecfg.seed = flags.seed.value_or(0);
  const auto score = xai::explain::score_fn_of(*model);
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto attr = xai::explain::kernel_shap(score, rows[i], bg, ecfg);
    attr.instance_id = static_cast<int>(i);
    out.push_back(
        nlohmann::json::parse(xai::explain::attribution_to_json(attr, names)));
  }
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial-explanations experiment runner"};
  app.require_subcommand(1);
  app.fallthrough();  // allow --seed/--out-dir/--jobs after the subcommand

  CommonFlags flags;
  std::uint64_t seed_val = 0;
  std::string out_dir_val;
  int jobs_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "override the master seed");
  auto* out_opt =
      app.add_option("--out-dir", out_dir_val, "override the output directory");
  auto* jobs_opt = app.add_option("--jobs", jobs_val, "worker threads (0 = auto)");

  std::string config_path, model_path, instance_path;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  auto* validate = app.add_subcommand("validate", "check a config and exit");
  validate->add_option("config", config_path, "experiment config (JSON)")
      ->required();
  auto* explain =
      app.add_subcommand("explain", "explain instances with a saved model");
  explain->add_option("model", model_path, "model file (JSON)")->required();
  explain->add_option("instances", instance_path, "instance CSV")->required();

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count() > 0) flags.seed = seed_val;
  if (out_opt->count() > 0) flags.out_dir = out_dir_val;
  if (jobs_opt->count() > 0) flags.jobs = jobs_val;

  try {
    if (run->parsed()) return cmd_run(config_path, flags);
    if (validate->parsed()) return cmd_validate(config_path, flags);
    return cmd_explain(model_path, instance_path, flags);
  } catch (const xai::harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
