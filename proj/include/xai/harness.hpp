#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xai/attacks.hpp"
#include "xai/defenses.hpp"
#include "xai/explainers.hpp"
#include "xai/models.hpp"
#include "xai/tabular.hpp"

namespace xai::harness {

/// Config problems: the CLI maps this to exit code 2, runtime failures to 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Experiment configuration (JSON document, see README for the schema)
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  int n_rows = 500;
  int d_numerical = 6;
  double bias_strength = 0.8;
};

struct CsvSpec {
  std::string path;
  tabular::FeatureSchema schema;
  std::string label_column;
  std::string positive_label;
};

struct AttackSpec {
  attack::AttackKind kind = attack::AttackKind::output_shuffling;
  std::map<std::string, double> params;  // attack-specific knobs
  std::string variant;                   // output shuffling only

  double get(const std::string& key, double fallback) const;
};

struct EvalThresholds {
  /// FE epsilon1/epsilon2 are relative to the baseline global attribution:
  /// epsilon1 scales the protected feature's own mean_abs, epsilon2 the
  /// per-feature drift allowance.
  double fe_epsilon1_rel = 0.1;
  double fe_epsilon2_rel = 0.25;
  double me_delta = 0.7;  // Spearman below this flags "explanation changed"
  double asr_kl = 0.05;
};

struct ExperimentConfig {
  std::optional<SyntheticSpec> synthetic;
  std::optional<CsvSpec> csv;
  std::string protected_feature;  // resolved against the schema
  double corr_threshold = 0.35;
  double test_fraction = 0.2;
  std::vector<models::ModelConfig> model_configs;
  std::vector<std::string> model_names;  // parallel to model_configs
  explain::Method explainer = explain::Method::kernel_shap;
  explain::ExplainerConfig explainer_cfg;
  int panel_size = 50;
  int background_size = 100;
  std::vector<AttackSpec> attacks;
  std::vector<defense::DefenseKind> defenses;
  EvalThresholds thresholds;
  std::uint64_t master_seed = 0;
  std::string out_dir = "out";
  int n_jobs = 0;  // 0 = library default

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig from_file(const std::string& path);
  void validate() const;
};

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

struct FeResult {
  bool success = false;
  double protected_before = 0.0;
  double protected_after = 0.0;
  double epsilon1 = 0.0;
  double epsilon2 = 0.0;
  double max_other_delta = 0.0;
  int violating_feature = -1;  // non-protected feature breaking epsilon2
  double rank_before = 0.0;    // protected feature's importance rank
  double rank_after = 0.0;
};

/// FE success: the protected feature's post-attack mean_abs falls below
/// epsilon1 while no other feature's mean_abs moved by epsilon2 or more.
FeResult evaluate_fe_success(const explain::GlobalAttribution& before,
                             const explain::GlobalAttribution& after,
                             int protected_index, double epsilon1,
                             double epsilon2);

/// Spearman correlation between |phi| ranks before and after an attack.
double evaluate_me(const explain::Attribution& before,
                   const explain::Attribution& after);

struct AsrSample {
  bool label_preserved = false;
  double kl = 0.0;
};

/// Fraction of samples with the label preserved and kl below the threshold.
double evaluate_asr(const std::vector<AsrSample>& results, double kl_threshold);

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct BaselineMetrics {
  std::string model;
  double accuracy = 0.0;
  double f1 = 0.0;
  std::uint64_t seed = 0;
};

struct AttackRow {
  std::string model;
  std::string attack;
  std::string variant;  // empty unless output shuffling
  attack::AttackTaxonomy taxonomy;
  double prediction_agreement = 1.0;
  FeResult fe;
  bool fe_applicable = false;
  double me_spearman_mean = 1.0;
  bool me_applicable = false;
  bool me_changed = false;  // mean Spearman below thresholds.me_delta
  double asr = -1.0;        // -1 when not applicable
  std::vector<defense::DefenseVerdict> defense_verdicts;
  double runtime_seconds = 0.0;
  std::uint64_t seed = 0;
  std::string notes;
};

struct ExperimentReport {
  std::vector<BaselineMetrics> baselines;
  std::vector<AttackRow> attack_rows;
  /// feature -> (importance before, importance after) per (model, attack)
  struct PlotSeries {
    std::string name;  // "<model>_<attack>"
    std::vector<std::string> features;
    std::vector<double> before;
    std::vector<double> after;
  };
  std::vector<PlotSeries> plot_series;
  std::uint64_t master_seed = 0;
  std::string config_echo;  // the validated config, re-serialized

  std::string to_json(bool with_timestamp = true) const;
  std::string metrics_csv() const;  // one row per attack, fixed column order
};

ExperimentReport run_experiment(const ExperimentConfig& cfg);

/// Writes report.json, metrics.csv and plotdata/*.csv under out_dir.
/// Returns the list of files written.
std::vector<std::string> emit_report(const ExperimentReport& report,
                                     const std::string& out_dir);

}  // namespace xai::harness
