#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "xai/models.hpp"
#include "xai/numerics.hpp"
#include "xai/tabular.hpp"

namespace xai::explain {

struct ExplainerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Method {
  kernel_shap,
  permutation_shap,
  linear_shap,
  lime,
  integrated_gradients,
};

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Per-feature importance for one instance. For Shapley-style methods
/// base_value + sum(values) approximates the model score of the instance.
struct Attribution {
  Eigen::VectorXd values;
  double base_value = 0.0;
  Method method = Method::kernel_shap;
  int instance_id = -1;
};

struct GlobalAttribution {
  Eigen::VectorXd mean_abs;
  Eigen::VectorXd signed_mean;
  int n_instances = 0;
};

/// Background sample used as the "absent feature" reference. Weights are
/// nonnegative and need not be normalized (biased-sampling attacks pass
/// integer multiplicities here).
struct Background {
  Eigen::MatrixXd X;
  Eigen::VectorXd weights;  // empty -> uniform

  static Background of(const tabular::Dataset& ds, Eigen::Index max_rows = -1,
                       std::uint64_t seed = 0);
  Eigen::VectorXd normalized_weights() const;
  Eigen::VectorXd weighted_mean() const;
};

struct ExplainerConfig {
  int n_samples = 2048;      // coalitions / permutations / perturbations
  double kernel_width = -1;  // <0: default 0.75*sqrt(d)
  double ridge_lambda = 1e-3;
  int ig_steps = 200;
  std::uint64_t seed = 0;
};

/// Generic scoring surface: explainers only ever batch-score. Wrapping
/// attacks substitute their own function here.
using ScoreFn = std::function<Eigen::VectorXd(const Eigen::MatrixXd&)>;

inline ScoreFn score_fn_of(const models::TrainedModel& m) {
  return [&m](const Eigen::MatrixXd& X) { return m.score(X); };
}

/// Kernel SHAP: coalition sampling with Shapley-kernel weights and a
/// weighted regression under the efficiency constraint. Falls back to full
/// coalition enumeration when d <= 12 and the sample budget covers 2^d - 2.
Attribution kernel_shap(const ScoreFn& model, const Eigen::VectorXd& x,
                        const Background& bg, const ExplainerConfig& cfg);

/// Permutation SHAP: forward and reverse marginal-contribution passes over
/// sampled feature permutations. cfg.n_samples counts permutations.
Attribution permutation_shap(const ScoreFn& model, const Eigen::VectorXd& x,
                             const Background& bg, const ExplainerConfig& cfg);

/// Closed-form Shapley values of the pre-sigmoid margin of a logistic model:
/// phi_i = w_i (x_i - mu_i) with mu the weighted background mean.
Attribution linear_shap(const models::TrainedModel& model,
                        const Eigen::VectorXd& x, const Background& bg);

/// LIME for tabular data: Gaussian perturbation of numerical features,
/// categorical resampling from background marginals with match/no-match
/// encoding, exponential-kernel weights, weighted ridge surrogate.
Attribution lime_tabular(const ScoreFn& model, const Eigen::VectorXd& x,
                         const tabular::FeatureSchema& schema,
                         const Background& bg, const ExplainerConfig& cfg);

/// Integrated gradients on the pre-threshold score, midpoint Riemann rule.
Attribution integrated_gradients(const models::TrainedModel& model,
                                 const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& baseline, int steps);

GlobalAttribution global_aggregate(const std::vector<Attribution>& attrs);

/// |phi| normalized to a distribution; throws on an all-zero attribution.
Eigen::VectorXd normalize_attribution(const Attribution& attr);

/// Ranks by |phi| descending, ties broken by feature index. 1 = most
/// important. This is the rank vector all ME metrics consume.
num::RankVector importance_ranks(const Attribution& attr);

/// Feature ordering (most important first), same tie-break.
std::vector<int> importance_ordering(const Eigen::VectorXd& values);

// ---------------------------------------------------------------------------
// Panel explanation: the data-parallel kernel of the harness. Both versions
// derive one RNG substream per instance, so results are identical regardless
// of thread count; the serial path is the reference the parallel one is
// tested against.
// ---------------------------------------------------------------------------

struct PanelRequest {
  Method method = Method::kernel_shap;
  const models::TrainedModel* model = nullptr;  // needed for linear/ig
  ScoreFn score;                                // needed for shap/lime
  const tabular::FeatureSchema* schema = nullptr;  // needed for lime
  Background background;
  ExplainerConfig cfg;
};

std::vector<Attribution> explain_panel_serial(const PanelRequest& req,
                                              const Eigen::MatrixXd& instances);
std::vector<Attribution> explain_panel_parallel(const PanelRequest& req,
                                                const Eigen::MatrixXd& instances,
                                                int n_jobs = 0);

std::string attribution_to_json(const Attribution& attr,
                                const std::vector<std::string>& feature_names);

}  // namespace xai::explain
