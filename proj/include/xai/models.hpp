#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "xai/tabular.hpp"

namespace xai::models {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when an operation needs a capability the model kind lacks
/// (e.g. input gradients on a tree ensemble).
struct CapabilityError : ModelError {
  using ModelError::ModelError;
};

enum class ModelKind { logistic, gbt, mlp, forest };

std::string kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& name);

/// Hyperparameters as a validated key->value map; unknown keys are rejected
/// at training time. Hidden layer sizes are given as "hidden1".."hidden4".
struct ModelConfig {
  ModelKind kind = ModelKind::logistic;
  std::map<std::string, double> params;
  std::uint64_t seed = 0;

  static ModelConfig logistic(std::uint64_t seed = 0);
  static ModelConfig gbt(std::uint64_t seed = 0);
  static ModelConfig mlp_a(std::uint64_t seed = 0);  // hidden (150,75,50)
  static ModelConfig mlp_b(std::uint64_t seed = 0);  // hidden 64, bn, dropout
  static ModelConfig forest(std::uint64_t seed = 0);

  double get(const std::string& key, double fallback) const;
};

/// Immutable trained binary classifier. score() is a probability in [0,1];
/// the hard label is 1 iff score >= 0.5.
class TrainedModel {
 public:
  virtual ~TrainedModel() = default;

  ModelKind kind() const { return kind_; }
  int dim() const { return dim_; }
  bool differentiable() const {
    return kind_ == ModelKind::logistic || kind_ == ModelKind::mlp;
  }

  virtual Eigen::VectorXd score(const Eigen::MatrixXd& X) const = 0;
  double score_one(const Eigen::VectorXd& x) const;
  int hard_label(const Eigen::VectorXd& x) const {
    return score_one(x) >= 0.5 ? 1 : 0;
  }

  /// Pre-sigmoid margin, defined for all kinds (forest uses vote fraction
  /// mapped through logit).
  virtual double margin(const Eigen::VectorXd& x) const = 0;

  /// Gradient of the pre-threshold score w.r.t. the input, exact backprop.
  /// Throws CapabilityError for non-differentiable kinds.
  virtual Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const;

  virtual std::string to_json() const = 0;

  static std::unique_ptr<TrainedModel> from_json(const std::string& text);

  /// Hash of the training schema, carried through save/load so a model is
  /// never scored against a reordered feature space.
  std::uint64_t schema_hash() const { return schema_hash_; }
  void set_schema_hash(std::uint64_t h) { schema_hash_ = h; }

 protected:
  TrainedModel(ModelKind k, int dim) : kind_(k), dim_(dim) {}
  void check_dim(Eigen::Index cols) const;

  ModelKind kind_;
  int dim_;
  std::uint64_t schema_hash_ = 0;
};

std::uint64_t schema_hash(const tabular::FeatureSchema& schema);

std::unique_ptr<TrainedModel> train_model(const ModelConfig& config,
                                          const tabular::Dataset& train);

Eigen::VectorXd predict_scores(const TrainedModel& m, const Eigen::MatrixXd& X);
Eigen::VectorXd input_gradient(const TrainedModel& m, const Eigen::VectorXd& x);

double accuracy(const TrainedModel& m, const tabular::Dataset& ds);
double f1_score(const TrainedModel& m, const tabular::Dataset& ds);

// ---------------------------------------------------------------------------
// Concrete models (exposed where other modules need the internals)
// ---------------------------------------------------------------------------

class LogisticModel final : public TrainedModel {
 public:
  LogisticModel(Eigen::VectorXd w, double b)
      : TrainedModel(ModelKind::logistic, static_cast<int>(w.size())),
        w_(std::move(w)),
        b_(b) {}

  Eigen::VectorXd score(const Eigen::MatrixXd& X) const override;
  double margin(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const override;
  std::string to_json() const override;

  const Eigen::VectorXd& weights() const { return w_; }
  double bias() const { return b_; }

 private:
  Eigen::VectorXd w_;
  double b_;
};

/// Fully connected net: Linear -> [BatchNorm] -> ReLU per hidden layer,
/// then a single-logit output layer. Inference always runs with dropout off
/// and batch-norm on frozen running statistics.
class MlpModel final : public TrainedModel {
 public:
  struct Layer {
    Eigen::MatrixXd W;   // out x in
    Eigen::VectorXd b;
    // batch-norm (empty when disabled)
    Eigen::VectorXd bn_gamma, bn_beta, bn_mean, bn_var;
    bool has_bn() const { return bn_gamma.size() > 0; }
  };

  MlpModel(std::vector<Layer> layers, int dim)
      : TrainedModel(ModelKind::mlp, dim), layers_(std::move(layers)) {}

  Eigen::VectorXd score(const Eigen::MatrixXd& X) const override;
  double margin(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd input_gradient(const Eigen::VectorXd& x) const override;
  std::string to_json() const override;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  /// Batch logits (inference mode).
  Eigen::VectorXd logits(const Eigen::MatrixXd& X) const;

  /// Parameter gradients of sum_i g_i * logit(x_i), inference-mode forward
  /// (frozen batch-norm, no dropout). Used by fine-tuning attacks where the
  /// perturbation set is fixed.
  struct ParamGrads {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
  };
  ParamGrads backward(const Eigen::MatrixXd& X, const Eigen::VectorXd& g) const;

 private:
  std::vector<Layer> layers_;
};

/// Adam optimizer state for MlpModel parameters.
struct AdamState {
  std::vector<Eigen::MatrixXd> mW, vW;
  std::vector<Eigen::VectorXd> mb, vb;
  int t = 0;

  static AdamState like(const MlpModel& m);
  void step(MlpModel& m, const MlpModel::ParamGrads& g, double lr,
            double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace xai::models
