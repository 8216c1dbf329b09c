#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "xai/explainers.hpp"
#include "xai/models.hpp"
#include "xai/tabular.hpp"

namespace xai::attack {

struct AttackError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// TTP taxonomy: every attack is tagged with its tactic / technique / hardness
// row, and the harness rejects artifacts whose tags do not match the table.
// ---------------------------------------------------------------------------

enum class Tactic { FE, ME, BD };
enum class Technique {
  adversarial_model,
  data_manipulation,
  adversarial_example,
  model_manipulation,
};
enum class Hardness { easy, medium, hard };

std::string tactic_name(Tactic t);
std::string technique_name(Technique t);
std::string hardness_name(Hardness h);

struct AttackTaxonomy {
  std::vector<Tactic> tactics;        // scaffolding carries FE + BD
  std::vector<Technique> techniques;  // shuffling carries two techniques
  Hardness hardness = Hardness::easy;

  std::string tactics_label() const;     // e.g. "FE+BD"
  std::string techniques_label() const;  // e.g. "data_manipulation+adversarial_model"
  bool operator==(const AttackTaxonomy&) const = default;
};

enum class AttackKind {
  output_shuffling,
  scaffolding_ood,
  data_poisoning,
  black_box,
  makrut,
  biased_sampling,
};

std::string attack_name(AttackKind k);
AttackKind attack_from_name(const std::string& name);

/// The fixed taxonomy row for each attack procedure.
AttackTaxonomy taxonomy_of(AttackKind k);

// ---------------------------------------------------------------------------
// 1. Output shuffling: a wrapped scoring function that reassigns scores
// within each scored batch so privileged candidates outrank unprivileged
// ones. The score multiset per batch is invariant.
// ---------------------------------------------------------------------------

enum class ShuffleVariant { swap, dominance, mixing };

std::string shuffle_variant_name(ShuffleVariant v);
ShuffleVariant shuffle_variant_from_name(const std::string& name);

struct OutputShufflingArtifact {
  AttackTaxonomy taxonomy;
  explain::ScoreFn wrapped;  // batch scorer; batches of size < 2 pass through
  ShuffleVariant variant = ShuffleVariant::swap;
  double mixing_rate = 0.7;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

/// base_scores must already be unbiased (it ignores the protected feature);
/// privileged means the protected column value is >= 0.5. The mixing variant
/// derives its randomness from (seed, batch contents), so results do not
/// depend on batch arrival order.
OutputShufflingArtifact attack_output_shuffling(explain::ScoreFn base_scores,
                                                int protected_index,
                                                ShuffleVariant variant,
                                                double mixing_rate = 0.7,
                                                std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// 2. Scaffolding OOD: routing model that answers with the biased model on
// in-distribution queries and with the unbiased model (protected feature
// zeroed) on explainer-style probe inputs.
// ---------------------------------------------------------------------------

struct DetectorConfig {
  int n_trees = 100;
  int max_depth = 8;
  double noise_scale = 1.0;  // LIME-style Gaussian perturbation scale
  std::uint64_t seed = 0;
};

struct ScaffoldingArtifact {
  AttackTaxonomy taxonomy;
  explain::ScoreFn routed;  // valid while both input models are alive
  std::shared_ptr<models::TrainedModel> detector;
  /// Maps raw queries to the detector's representation (adds the distance
  /// to the nearest retained training row).
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> augment;
  double detector_accuracy = 0.0;  // held-out perturbation set
  std::vector<std::string> warnings;
  std::uint64_t seed = 0;

  /// Fraction of rows the detector routes to the biased model.
  double in_distribution_rate(const Eigen::MatrixXd& X) const;

  std::string to_json() const;
};

ScaffoldingArtifact attack_scaffolding_ood(const models::TrainedModel& biased,
                                           const models::TrainedModel& unbiased,
                                           const tabular::Dataset& train,
                                           int protected_index,
                                           const DetectorConfig& cfg);

// ---------------------------------------------------------------------------
// 3. Genetic data poisoning: perturb an explained instance so its attribution
// approaches an attacker-chosen target map.
// ---------------------------------------------------------------------------

struct GaConfig {
  int population = 50;
  int generations = 100;
  double mutation_std = 0.1;  // standardized units
  double crossover_rate = 0.5;
  int tournament_k = 3;
  std::uint64_t seed = 0;
};

struct DataPoisoningArtifact {
  AttackTaxonomy taxonomy;
  Eigen::VectorXd original;
  Eigen::VectorXd perturbed;
  std::vector<double> fitness_trace;  // best-so-far, non-increasing
  double fitness = 0.0;
  bool prediction_preserved = false;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

using ExplainFn = std::function<explain::Attribution(const Eigen::VectorXd&)>;

/// fitness = L1(g(x') - target) + alpha * KendallTau(order(g(x')), order(target))
/// with alpha = 1 / C(d,2). Only features with perturbable[j] == true move.
DataPoisoningArtifact attack_data_poisoning_genetic(
    const ExplainFn& explain_fn, const explain::ScoreFn& model,
    const Eigen::VectorXd& x, const explain::Attribution& target_map,
    const std::vector<bool>& perturbable, const GaConfig& cfg);

// ---------------------------------------------------------------------------
// 4. Black-box explanation attack: steer normalize(IG(x')) toward a target
// distribution while preserving the hard label and staying near the data
// manifold (principal-subspace reconstruction error).
// ---------------------------------------------------------------------------

struct BlackBoxConfig {
  double c1 = 5.0;    // label-preservation hinge weight
  double c2 = 0.02;   // L1 proximity weight
  double c3 = 0.5;    // manifold reconstruction-error weight
  int pca_components = 2;
  double kl_threshold = 0.05;
  int max_iters = 40;
  double initial_step = 0.5;
  int ig_steps = 50;
  std::uint64_t seed = 0;
};

struct BlackBoxArtifact {
  AttackTaxonomy taxonomy;
  Eigen::VectorXd original;
  Eigen::VectorXd adversarial;
  bool success = false;          // label preserved AND kl < threshold
  bool label_preserved = false;
  double kl = 0.0;
  double spearman = 1.0;  // rank correlation before vs after
  double runtime_seconds = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

BlackBoxArtifact attack_black_box(const models::TrainedModel& model,
                                  const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& target_expl,
                                  const Eigen::MatrixXd& reference,
                                  const BlackBoxConfig& cfg);

// ---------------------------------------------------------------------------
// 5. Makrut: fine-tune an mlp so a LIME-style surrogate assigns the target
// relevance, while hard labels track the original model.
// ---------------------------------------------------------------------------

struct MakrutConfig {
  double lambda1 = 1.5;  // cross-entropy to the original hard labels
  double lambda2 = 1.0;  // explanation (surrogate-coefficient) loss
  int epochs = 40;
  int n_anchors = 16;    // anchors with fixed perturbation neighborhoods
  int n_perturb = 64;    // perturbations per anchor
  double lr = 1e-3;
  int batch_size = 256;
  double agreement_floor = 0.97;
  double ridge_lambda = 1e-2;
  /// Per-coordinate weights of the explanation loss (empty = all ones).
  /// A one-hot weight on the protected feature reproduces the "suppress one
  /// relevance, leave the rest to the prediction loss" setting.
  Eigen::VectorXd target_weight;
  std::uint64_t seed = 0;
};

struct MakrutArtifact {
  AttackTaxonomy taxonomy;
  std::unique_ptr<models::MlpModel> manipulated;
  double hard_label_agreement = 1.0;  // vs original model, on train rows
  int epochs_run = 0;
  std::uint64_t seed = 0;

  std::string to_json() const;
};

/// target_relevance must assign near-zero weight to the protected feature.
MakrutArtifact attack_makrut(const models::MlpModel& model,
                             const tabular::Dataset& train,
                             const Eigen::VectorXd& target_relevance,
                             const MakrutConfig& cfg);

// ---------------------------------------------------------------------------
// 6. Biased background sampling: integer re-weighting of the background set
// minimizing |GSV_protected| plus a lambda-scaled transport budget, solved
// as a min-cost-flow instance.
// ---------------------------------------------------------------------------

struct BiasedSamplingConfig {
  double lambda = 0.05;
  int total_mass = -1;  // default |B|
  enum class Explainer { linear, kernel } explainer = Explainer::linear;
  int kernel_samples = 128;  // leave-one-in probe budget (kernel explainer)
  std::uint64_t seed = 0;
};

struct BiasedSamplingArtifact {
  AttackTaxonomy taxonomy;
  Eigen::VectorXd weights;  // integer multiplicity per background row
  explain::GlobalAttribution before;
  explain::GlobalAttribution after;
  double gsv_before = 0.0;  // signed mean attribution of the protected feature
  double gsv_after = 0.0;
  double wasserstein_spent = 0.0;  // sum of per-feature 1-D distances
  double flow_cost = 0.0;          // objective value of the MCF solution
  std::uint64_t seed = 0;

  std::string to_json() const;
};

BiasedSamplingArtifact attack_biased_sampling(const models::TrainedModel& model,
                                              const tabular::Dataset& background,
                                              const Eigen::MatrixXd& panel,
                                              int protected_index,
                                              const BiasedSamplingConfig& cfg);

}  // namespace xai::attack
