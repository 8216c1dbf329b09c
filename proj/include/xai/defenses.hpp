#pragma once

#include <Eigen/Dense>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "xai/explainers.hpp"
#include "xai/models.hpp"
#include "xai/tabular.hpp"

namespace xai::defense {

struct DefenseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DefenseKind {
  ood_filter,
  multi_explainer,
  background_uniformity,
  adversarial_retraining,
};

std::string defense_name(DefenseKind k);
DefenseKind defense_from_name(const std::string& name);

/// flagged is true exactly when the statistic crosses the threshold in the
/// defense-specific direction (above for distances and |W|, below for rank
/// agreement).
struct DefenseVerdict {
  DefenseKind defense = DefenseKind::ood_filter;
  double statistic = 0.0;
  double threshold = 0.0;
  bool flagged = false;
  std::string details;

  std::string to_json() const;
};

// ---------------------------------------------------------------------------
// 1. OOD input filtering (counters scaffolding): withhold queries that sit
// far from the reference distribution.
// ---------------------------------------------------------------------------

struct OodFilterConfig {
  /// Quantile of the reference set's leave-one-out nearest-neighbor
  /// distances used as the flagging threshold.
  double quantile = 0.99;
};

struct OodFilterResult {
  Eigen::MatrixXd kept;                 // queries that passed the filter
  std::vector<Eigen::Index> kept_rows;  // indices into the query matrix
  std::vector<DefenseVerdict> verdicts;  // one per query
};

/// Flags a query when its nearest-neighbor distance to the reference set
/// exceeds the configured quantile of the reference's own leave-one-out
/// distances, or when any per-feature z-score exceeds the largest magnitude
/// seen in the reference. Reference rows themselves always pass.
OodFilterResult defense_ood_filter(const tabular::Dataset& reference,
                                   const Eigen::MatrixXd& queries,
                                   const OodFilterConfig& cfg = {});

// ---------------------------------------------------------------------------
// 2. Multi-explainer cross-check (counters output shuffling): disagreeing
// attribution ranks across methods indicate a manipulated scoring surface.
// ---------------------------------------------------------------------------

struct MultiExplainerConfig {
  double min_spearman = 0.5;  // flag below this
  explain::ExplainerConfig explainer;
};

/// statistic = minimum pairwise Spearman correlation of the rank vectors
/// produced by kernel SHAP, permutation SHAP, and LIME on the same scoring
/// surface. A method returning an all-zero attribution is skipped and noted
/// in the details rather than crashing the audit.
DefenseVerdict defense_multi_explainer(const explain::ScoreFn& score,
                                       const Eigen::VectorXd& x,
                                       const tabular::FeatureSchema& schema,
                                       const explain::Background& bg,
                                       const MultiExplainerConfig& cfg = {});

// ---------------------------------------------------------------------------
// 3. Background uniformity test (counters biased sampling): a two-sample
// Wald test on mean model outputs of the submitted background versus a
// uniformly drawn reference sample.
// ---------------------------------------------------------------------------

struct UniformityConfig {
  double wald_threshold = 1.96;
  int reference_sample = -1;  // rows to draw from the reference; -1 = |B|
};

DefenseVerdict defense_background_uniformity(const models::TrainedModel& model,
                                             const explain::Background& submitted,
                                             const tabular::Dataset& reference,
                                             std::uint64_t seed,
                                             const UniformityConfig& cfg = {});

// ---------------------------------------------------------------------------
// 4. Adversarial retraining (counters data poisoning / black box): retrain
// from scratch on train + adversarial rows and measure how stable the
// attribution ranks stay on a clean probe panel.
// ---------------------------------------------------------------------------

using ModelExplainFn = std::function<explain::Attribution(
    const models::TrainedModel&, const Eigen::VectorXd&)>;

struct RetrainResult {
  std::unique_ptr<models::TrainedModel> model;
  /// Mean Spearman between baseline and retrained attribution ranks over
  /// the probe rows.
  double rank_stability = 1.0;
  DefenseVerdict verdict;  // flagged when stability < min_stability
};

struct RetrainConfig {
  double min_stability = 0.8;
};

RetrainResult defense_adversarial_retraining(
    const models::ModelConfig& model_cfg, const tabular::Dataset& train,
    const Eigen::MatrixXd& adversarial_X, const Eigen::VectorXi& adversarial_y,
    const models::TrainedModel& baseline, const Eigen::MatrixXd& probe,
    const ModelExplainFn& explain_fn, const RetrainConfig& cfg = {});

}  // namespace xai::defense
