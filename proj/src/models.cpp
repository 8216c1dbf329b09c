#include "xai/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "xai/rng.hpp"

namespace xai::models {

using nlohmann::json;
using tabular::Dataset;

std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::logistic: return "logistic";
    case ModelKind::gbt: return "gbt";
    case ModelKind::mlp: return "mlp";
    case ModelKind::forest: return "forest";
  }
  return "?";
}

ModelKind kind_from_name(const std::string& name) {
  if (name == "logistic") return ModelKind::logistic;
  if (name == "gbt") return ModelKind::gbt;
  if (name == "mlp") return ModelKind::mlp;
  if (name == "mlp-a") return ModelKind::mlp;
  if (name == "mlp-b") return ModelKind::mlp;
  if (name == "forest") return ModelKind::forest;
  throw ModelError("unknown model kind: " + name);
}

double ModelConfig::get(const std::string& key, double fallback) const {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

ModelConfig ModelConfig::logistic(std::uint64_t seed) {
  return {ModelKind::logistic,
          {{"max_iter", 10000}, {"tol", 1e-4}, {"l2", 1e-6}},
          seed};
}

ModelConfig ModelConfig::gbt(std::uint64_t seed) {
  return {ModelKind::gbt,
          {{"n_estimators", 50},
           {"max_depth", 4},
           {"learning_rate", 0.1},
           {"subsample", 0.8},
           {"colsample", 0.8},
           {"reg_lambda", 0.1}},
          seed};
}

ModelConfig ModelConfig::mlp_a(std::uint64_t seed) {
  return {ModelKind::mlp,
          {{"hidden1", 150},
           {"hidden2", 75},
           {"hidden3", 50},
           {"epochs", 200},
           {"lr", 1e-3},
           {"batch_size", 200},
           {"dropout", 0.0},
           {"batch_norm", 0}},
          seed};
}

ModelConfig ModelConfig::mlp_b(std::uint64_t seed) {
  return {ModelKind::mlp,
          {{"hidden1", 64},
           {"epochs", 50},
           {"lr", 1e-3},
           {"batch_size", 512},
           {"dropout", 0.3},
           {"batch_norm", 1}},
          seed};
}

ModelConfig ModelConfig::forest(std::uint64_t seed) {
  return {ModelKind::forest, {{"n_trees", 100}, {"max_depth", 8}}, seed};
}

namespace {

const std::set<std::string>& allowed_keys(ModelKind k) {
  static const std::set<std::string> logistic_keys{"max_iter", "tol", "l2"};
  static const std::set<std::string> gbt_keys{"n_estimators", "max_depth",
                                              "learning_rate", "subsample",
                                              "colsample", "reg_lambda"};
  static const std::set<std::string> mlp_keys{
      "hidden1", "hidden2", "hidden3", "hidden4", "epochs",
      "lr",      "batch_size", "dropout", "batch_norm"};
  static const std::set<std::string> forest_keys{"n_trees", "max_depth"};
  switch (k) {
    case ModelKind::logistic: return logistic_keys;
    case ModelKind::gbt: return gbt_keys;
    case ModelKind::mlp: return mlp_keys;
    case ModelKind::forest: return forest_keys;
  }
  return logistic_keys;
}

void validate_config(const ModelConfig& cfg) {
  const auto& allowed = allowed_keys(cfg.kind);
  for (const auto& [key, val] : cfg.params) {
    if (!allowed.count(key))
      throw ModelError("unknown hyperparameter '" + key + "' for model kind " +
                       kind_name(cfg.kind));
    if (key != "batch_norm" && key != "dropout" && key != "l2" && val <= 0.0)
      throw ModelError("hyperparameter '" + key + "' must be positive");
    if (val < 0.0)
      throw ModelError("hyperparameter '" + key + "' must be nonnegative");
  }
}

void check_trainable(const Dataset& train) {
  if (train.n_rows() == 0) throw ModelError("empty training set");
  const int n1 = (train.y.array() == 1).count();
  if (n1 == 0 || n1 == train.n_rows())
    throw ModelError("training set contains a single class");
}

}  // namespace

std::uint64_t schema_hash(const tabular::FeatureSchema& schema) {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& c : schema.columns) {
    for (char ch : c.name) {
      h ^= static_cast<std::uint8_t>(ch);
      h *= 1099511628211ull;
    }
    h ^= c.kind == tabular::FeatureKind::categorical ? 0x63 : 0x6e;
    h *= 1099511628211ull;
  }
  return h;
}

// ---------------------------------------------------------------------------
// TrainedModel base
// ---------------------------------------------------------------------------

void TrainedModel::check_dim(Eigen::Index cols) const {
  if (cols != dim_)
    throw ModelError("dimension mismatch: model expects " +
                     std::to_string(dim_) + " features, got " +
                     std::to_string(cols));
}

double TrainedModel::score_one(const Eigen::VectorXd& x) const {
  return score(x.transpose())[0];
}

Eigen::VectorXd TrainedModel::input_gradient(const Eigen::VectorXd&) const {
  throw CapabilityError("model kind " + kind_name(kind_) +
                        " does not support input gradients");
}

Eigen::VectorXd predict_scores(const TrainedModel& m, const Eigen::MatrixXd& X) {
  return m.score(X);
}

Eigen::VectorXd input_gradient(const TrainedModel& m, const Eigen::VectorXd& x) {
  return m.input_gradient(x);
}

double accuracy(const TrainedModel& m, const Dataset& ds) {
  const Eigen::VectorXd s = m.score(ds.X);
  int correct = 0;
  for (Eigen::Index i = 0; i < ds.n_rows(); ++i)
    if ((s[i] >= 0.5 ? 1 : 0) == ds.y[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.n_rows());
}

double f1_score(const TrainedModel& m, const Dataset& ds) {
  const Eigen::VectorXd s = m.score(ds.X);
  int tp = 0, fp = 0, fn = 0;
  for (Eigen::Index i = 0; i < ds.n_rows(); ++i) {
    const int pred = s[i] >= 0.5 ? 1 : 0;
    if (pred == 1 && ds.y[i] == 1) ++tp;
    else if (pred == 1) ++fp;
    else if (ds.y[i] == 1) ++fn;
  }
  if (tp == 0) return 0.0;
  const double prec = static_cast<double>(tp) / (tp + fp);
  const double rec = static_cast<double>(tp) / (tp + fn);
  return 2.0 * prec * rec / (prec + rec);
}

// ---------------------------------------------------------------------------
// Logistic regression: full-batch gradient descent on L2-regularized log-loss
// ---------------------------------------------------------------------------

Eigen::VectorXd LogisticModel::score(const Eigen::MatrixXd& X) const {
  check_dim(X.cols());
  Eigen::VectorXd z = X * w_;
  z.array() += b_;
  return z.unaryExpr([](double v) { return sigmoid(v); });
}

double LogisticModel::margin(const Eigen::VectorXd& x) const {
  check_dim(x.size());
  return w_.dot(x) + b_;
}

Eigen::VectorXd LogisticModel::input_gradient(const Eigen::VectorXd& x) const {
  const double s = sigmoid(margin(x));
  return s * (1.0 - s) * w_;
}

namespace {

std::unique_ptr<TrainedModel> train_logistic(const ModelConfig& cfg,
                                             const Dataset& train) {
  const auto n = train.n_rows();
  const int d = train.d();
  const int max_iter = static_cast<int>(cfg.get("max_iter", 10000));
  const double tol = cfg.get("tol", 1e-4);
  const double l2 = cfg.get("l2", 1e-6);

  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  const Eigen::VectorXd yv =
      train.y.cast<double>();

  // fixed step from a Lipschitz bound on the log-loss gradient
  const double lip =
      0.25 * train.X.squaredNorm() / static_cast<double>(n) + l2 + 0.25;
  const double lr = 1.0 / lip;

  for (int it = 0; it < max_iter; ++it) {
    Eigen::VectorXd z = train.X * w;
    z.array() += b;
    Eigen::VectorXd p = z.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd resid = p - yv;
    Eigen::VectorXd gw =
        train.X.transpose() * resid / static_cast<double>(n) + l2 * w;
    const double gb = resid.mean();
    if (!gw.allFinite())
      throw ModelError("logistic: non-finite gradient at iteration " +
                       std::to_string(it));
    w -= lr * gw;
    b -= lr * gb;
    if (std::max(gw.cwiseAbs().maxCoeff(), std::abs(gb)) < tol) break;
  }
  return std::make_unique<LogisticModel>(std::move(w), b);
}

}  // namespace

// ---------------------------------------------------------------------------
// Gradient-boosted trees: exact greedy split search, second-order gradients
// ---------------------------------------------------------------------------

namespace {

struct TreeNode {
  int feature = -1;          // -1: leaf
  double threshold = 0.0;    // go left when x[feature] <= threshold
  int left = -1, right = -1;
  double value = 0.0;        // leaf value
};

struct Tree {
  std::vector<TreeNode> nodes;

  double eval(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int i = 0;
    while (nodes[i].feature >= 0)
      i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left
                                                    : nodes[i].right;
    return nodes[i].value;
  }
};

// Recursive exact-greedy regression tree on gradient/hessian pairs.
class GbtTreeBuilder {
 public:
  GbtTreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& grad,
                 const Eigen::VectorXd& hess, int max_depth, double reg_lambda,
                 const std::vector<int>& features)
      : X_(X), grad_(grad), hess_(hess), max_depth_(max_depth),
        reg_lambda_(reg_lambda), features_(features) {}

  Tree build(std::vector<Eigen::Index> rows) {
    Tree t;
    build_node(t, std::move(rows), 0);
    return t;
  }

 private:
  int build_node(Tree& t, std::vector<Eigen::Index> rows, int depth) {
    double G = 0.0, H = 0.0;
    for (auto r : rows) {
      G += grad_[r];
      H += hess_[r];
    }
    const int node_id = static_cast<int>(t.nodes.size());
    t.nodes.push_back({});
    if (depth >= max_depth_ || rows.size() < 2) {
      t.nodes[node_id].value = -G / (H + reg_lambda_);
      return node_id;
    }

    double best_gain = 1e-12;
    int best_feature = -1;
    double best_thr = 0.0;
    const double parent_score = G * G / (H + reg_lambda_);
    for (int f : features_) {
      std::vector<Eigen::Index> order = rows;
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (X_(a, f) != X_(b, f)) return X_(a, f) < X_(b, f);
        return a < b;
      });
      double GL = 0.0, HL = 0.0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        GL += grad_[order[i]];
        HL += hess_[order[i]];
        if (X_(order[i], f) == X_(order[i + 1], f)) continue;
        const double GR = G - GL, HR = H - HL;
        const double gain = 0.5 * (GL * GL / (HL + reg_lambda_) +
                                   GR * GR / (HR + reg_lambda_) - parent_score);
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = f;
          best_thr = 0.5 * (X_(order[i], f) + X_(order[i + 1], f));
        }
      }
    }
    if (best_feature < 0) {
      t.nodes[node_id].value = -G / (H + reg_lambda_);
      return node_id;
    }

    std::vector<Eigen::Index> left_rows, right_rows;
    for (auto r : rows)
      (X_(r, best_feature) <= best_thr ? left_rows : right_rows).push_back(r);
    rows.clear();
    t.nodes[node_id].feature = best_feature;
    t.nodes[node_id].threshold = best_thr;
    t.nodes[node_id].left = build_node(t, std::move(left_rows), depth + 1);
    t.nodes[node_id].right = build_node(t, std::move(right_rows), depth + 1);
    return node_id;
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXd& grad_;
  const Eigen::VectorXd& hess_;
  int max_depth_;
  double reg_lambda_;
  const std::vector<int>& features_;
};

}  // namespace

class GbtModel final : public TrainedModel {
 public:
  GbtModel(std::vector<Tree> trees, double base_margin, double lr, int dim)
      : TrainedModel(ModelKind::gbt, dim), trees_(std::move(trees)),
        base_margin_(base_margin), learning_rate_(lr) {}

  Eigen::VectorXd score(const Eigen::MatrixXd& X) const override {
    check_dim(X.cols());
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      out[i] = sigmoid(margin_row(X.row(i)));
    return out;
  }

  double margin(const Eigen::VectorXd& x) const override {
    check_dim(x.size());
    return margin_row(x.transpose());
  }

  std::string to_json() const override;

  const std::vector<Tree>& trees() const { return trees_; }
  double base_margin() const { return base_margin_; }
  double learning_rate() const { return learning_rate_; }

  static std::unique_ptr<GbtModel> from_parts(std::vector<Tree> trees,
                                              double base, double lr, int dim) {
    return std::make_unique<GbtModel>(std::move(trees), base, lr, dim);
  }

 private:
  double margin_row(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    double m = base_margin_;
    for (const Tree& t : trees_) m += learning_rate_ * t.eval(x);
    return m;
  }

  std::vector<Tree> trees_;
  double base_margin_;
  double learning_rate_;
};

namespace {

std::unique_ptr<TrainedModel> train_gbt(const ModelConfig& cfg,
                                        const Dataset& train) {
  const auto n = train.n_rows();
  const int d = train.d();
  const int n_trees = static_cast<int>(cfg.get("n_estimators", 50));
  const int max_depth = static_cast<int>(cfg.get("max_depth", 4));
  const double lr = cfg.get("learning_rate", 0.1);
  const double subsample = cfg.get("subsample", 0.8);
  const double colsample = cfg.get("colsample", 0.8);
  const double reg_lambda = cfg.get("reg_lambda", 0.1);

  const double pos_frac =
      static_cast<double>((train.y.array() == 1).count()) / static_cast<double>(n);
  const double base = std::log(pos_frac / (1.0 - pos_frac));

  Eigen::VectorXd margin = Eigen::VectorXd::Constant(n, base);
  const Eigen::VectorXd yv = train.y.cast<double>();
  Rng rng = Rng::derive(cfg.seed, "gbt");

  std::vector<Tree> trees;
  trees.reserve(n_trees);
  for (int t = 0; t < n_trees; ++t) {
    Eigen::VectorXd p = margin.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd grad = p - yv;
    Eigen::VectorXd hess = p.array() * (1.0 - p.array());
    if (!grad.allFinite())
      throw ModelError("gbt: non-finite gradient at round " + std::to_string(t));

    // row subsample without replacement
    std::vector<Eigen::Index> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    if (subsample < 1.0) {
      rng.shuffle(rows);
      rows.resize(static_cast<std::size_t>(
          std::max<double>(2.0, std::floor(subsample * static_cast<double>(n)))));
      std::sort(rows.begin(), rows.end());
    }
    std::vector<int> features(d);
    std::iota(features.begin(), features.end(), 0);
    if (colsample < 1.0) {
      rng.shuffle(features);
      features.resize(static_cast<std::size_t>(
          std::max<double>(1.0, std::floor(colsample * d))));
      std::sort(features.begin(), features.end());
    }

    GbtTreeBuilder builder(train.X, grad, hess, max_depth, reg_lambda, features);
    Tree tree = builder.build(std::move(rows));
    for (Eigen::Index i = 0; i < n; ++i)
      margin[i] += lr * tree.eval(train.X.row(i));
    trees.push_back(std::move(tree));
  }
  return std::make_unique<GbtModel>(std::move(trees), base, lr, d);
}

}  // namespace

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

namespace {

constexpr double kBnEps = 1e-5;

// inference-mode forward: returns activations per layer
Eigen::VectorXd mlp_logits_impl(const std::vector<MlpModel::Layer>& layers,
                                const Eigen::MatrixXd& X) {
  Eigen::MatrixXd a = X;  // n x in
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    Eigen::MatrixXd z = a * L.W.transpose();
    z.rowwise() += L.b.transpose();
    if (L.has_bn()) {
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double scale = L.bn_gamma[j] / std::sqrt(L.bn_var[j] + kBnEps);
        z.col(j) = (z.col(j).array() - L.bn_mean[j]) * scale + L.bn_beta[j];
      }
    }
    if (l + 1 < layers.size()) a = z.cwiseMax(0.0);  // ReLU on hidden layers
    else a = z;
  }
  return a.col(0);
}

}  // namespace

Eigen::VectorXd MlpModel::logits(const Eigen::MatrixXd& X) const {
  check_dim(X.cols());
  return mlp_logits_impl(layers_, X);
}

Eigen::VectorXd MlpModel::score(const Eigen::MatrixXd& X) const {
  return logits(X).unaryExpr([](double v) { return sigmoid(v); });
}

double MlpModel::margin(const Eigen::VectorXd& x) const {
  check_dim(x.size());
  return mlp_logits_impl(layers_, x.transpose())[0];
}

Eigen::VectorXd MlpModel::input_gradient(const Eigen::VectorXd& x) const {
  check_dim(x.size());
  // forward with caches
  std::vector<Eigen::VectorXd> pre(layers_.size());
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    Eigen::VectorXd z = L.W * a + L.b;
    if (L.has_bn())
      for (Eigen::Index j = 0; j < z.size(); ++j)
        z[j] = (z[j] - L.bn_mean[j]) * L.bn_gamma[j] /
                   std::sqrt(L.bn_var[j] + kBnEps) +
               L.bn_beta[j];
    pre[l] = z;
    a = l + 1 < layers_.size() ? z.cwiseMax(0.0) : z;
  }
  // backward: d score / d x, seeded with the sigmoid derivative at the logit
  const double s = sigmoid(a[0]);
  Eigen::VectorXd g = Eigen::VectorXd::Constant(1, s * (1.0 - s));
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& L = layers_[l];
    Eigen::VectorXd dz = g;
    if (l + 1 < layers_.size())
      for (Eigen::Index j = 0; j < dz.size(); ++j)
        if (pre[l][j] <= 0.0) dz[j] = 0.0;
    if (L.has_bn())
      for (Eigen::Index j = 0; j < dz.size(); ++j)
        dz[j] *= L.bn_gamma[j] / std::sqrt(L.bn_var[j] + kBnEps);
    g = L.W.transpose() * dz;
  }
  return g;
}

MlpModel::ParamGrads MlpModel::backward(const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& g) const {
  check_dim(X.cols());
  if (g.size() != X.rows()) throw ModelError("backward: gradient length mismatch");
  const std::size_t nl = layers_.size();
  std::vector<Eigen::MatrixXd> act(nl + 1), pre(nl);
  act[0] = X;
  for (std::size_t l = 0; l < nl; ++l) {
    const auto& L = layers_[l];
    Eigen::MatrixXd z = act[l] * L.W.transpose();
    z.rowwise() += L.b.transpose();
    if (L.has_bn())
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        const double scale = L.bn_gamma[j] / std::sqrt(L.bn_var[j] + kBnEps);
        z.col(j) = (z.col(j).array() - L.bn_mean[j]) * scale + L.bn_beta[j];
      }
    pre[l] = z;
    act[l + 1] = l + 1 < nl ? z.cwiseMax(0.0).eval() : z;
  }

  ParamGrads grads;
  grads.dW.resize(nl);
  grads.db.resize(nl);
  Eigen::MatrixXd delta = g;  // n x 1
  for (std::size_t l = nl; l-- > 0;) {
    const auto& L = layers_[l];
    Eigen::MatrixXd dz = delta;
    if (l + 1 < nl) dz = dz.cwiseProduct((pre[l].array() > 0.0).cast<double>().matrix());
    if (L.has_bn())
      for (Eigen::Index j = 0; j < dz.cols(); ++j)
        dz.col(j) *= L.bn_gamma[j] / std::sqrt(L.bn_var[j] + kBnEps);
    grads.dW[l] = dz.transpose() * act[l];
    grads.db[l] = dz.colwise().sum().transpose();
    if (l > 0) delta = dz * L.W;
  }
  return grads;
}

AdamState AdamState::like(const MlpModel& m) {
  AdamState s;
  for (const auto& L : m.layers()) {
    s.mW.push_back(Eigen::MatrixXd::Zero(L.W.rows(), L.W.cols()));
    s.vW.push_back(Eigen::MatrixXd::Zero(L.W.rows(), L.W.cols()));
    s.mb.push_back(Eigen::VectorXd::Zero(L.b.size()));
    s.vb.push_back(Eigen::VectorXd::Zero(L.b.size()));
  }
  return s;
}

void AdamState::step(MlpModel& m, const MlpModel::ParamGrads& g, double lr,
                     double beta1, double beta2, double eps) {
  ++t;
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  auto& layers = m.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    mW[l] = beta1 * mW[l] + (1.0 - beta1) * g.dW[l];
    vW[l] = beta2 * vW[l].array().matrix() +
            (1.0 - beta2) * g.dW[l].array().square().matrix();
    layers[l].W.array() -=
        lr * (mW[l].array() / c1) / ((vW[l].array() / c2).sqrt() + eps);
    mb[l] = beta1 * mb[l] + (1.0 - beta1) * g.db[l];
    vb[l] = beta2 * vb[l].array().matrix() +
            (1.0 - beta2) * g.db[l].array().square().matrix();
    layers[l].b.array() -=
        lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
  }
}

namespace {

std::unique_ptr<TrainedModel> train_mlp(const ModelConfig& cfg,
                                        const Dataset& train) {
  const auto n = train.n_rows();
  const int d = train.d();
  std::vector<int> hidden;
  for (const char* key : {"hidden1", "hidden2", "hidden3", "hidden4"}) {
    const double h = cfg.get(key, 0.0);
    if (h > 0.0) hidden.push_back(static_cast<int>(h));
  }
  if (hidden.empty()) throw ModelError("mlp: at least one hidden layer required");
  const int epochs = static_cast<int>(cfg.get("epochs", 200));
  const double lr = cfg.get("lr", 1e-3);
  const int batch_size = static_cast<int>(cfg.get("batch_size", 200));
  const double dropout = cfg.get("dropout", 0.0);
  const bool use_bn = cfg.get("batch_norm", 0.0) != 0.0;

  Rng rng = Rng::derive(cfg.seed, "mlp");

  // He initialization
  std::vector<MlpModel::Layer> layers;
  int in_dim = d;
  std::vector<int> sizes = hidden;
  sizes.push_back(1);
  for (std::size_t l = 0; l < sizes.size(); ++l) {
    MlpModel::Layer L;
    const int out_dim = sizes[l];
    L.W.resize(out_dim, in_dim);
    const double s = std::sqrt(2.0 / in_dim);
    for (Eigen::Index i = 0; i < L.W.rows(); ++i)
      for (Eigen::Index j = 0; j < L.W.cols(); ++j) L.W(i, j) = rng.normal(0.0, s);
    L.b = Eigen::VectorXd::Zero(out_dim);
    if (use_bn && l + 1 < sizes.size()) {
      L.bn_gamma = Eigen::VectorXd::Ones(out_dim);
      L.bn_beta = Eigen::VectorXd::Zero(out_dim);
      L.bn_mean = Eigen::VectorXd::Zero(out_dim);
      L.bn_var = Eigen::VectorXd::Ones(out_dim);
    }
    layers.push_back(std::move(L));
    in_dim = out_dim;
  }

  auto model = std::make_unique<MlpModel>(std::move(layers), d);
  AdamState adam = AdamState::like(*model);
  const Eigen::VectorXd yv = train.y.cast<double>();

  const double bn_momentum = 0.1;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (Eigen::Index start = 0; start < n; start += batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(batch_size, n - start);
      if (bs < 2 && use_bn) continue;  // batch stats undefined
      Eigen::MatrixXd Xb(bs, d);
      Eigen::VectorXd yb(bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        Xb.row(i) = train.X.row(order[start + i]);
        yb[i] = yv[order[start + i]];
      }

      // training-mode forward with caches
      auto& L = model->layers();
      const std::size_t nl = L.size();
      std::vector<Eigen::MatrixXd> act(nl + 1), lin(nl), norm(nl), mask(nl);
      std::vector<Eigen::VectorXd> mu(nl), var(nl);
      act[0] = Xb;
      for (std::size_t l = 0; l < nl; ++l) {
        Eigen::MatrixXd z = act[l] * L[l].W.transpose();
        z.rowwise() += L[l].b.transpose();
        lin[l] = z;
        if (L[l].has_bn()) {
          mu[l] = z.colwise().mean();
          Eigen::MatrixXd c = z.rowwise() - mu[l].transpose();
          var[l] = c.array().square().colwise().mean();
          for (Eigen::Index j = 0; j < z.cols(); ++j)
            z.col(j) = c.col(j) * L[l].bn_gamma[j] /
                           std::sqrt(var[l][j] + kBnEps) +
                       Eigen::VectorXd::Constant(bs, L[l].bn_beta[j]);
          L[l].bn_mean = (1.0 - bn_momentum) * L[l].bn_mean + bn_momentum * mu[l];
          L[l].bn_var = (1.0 - bn_momentum) * L[l].bn_var + bn_momentum * var[l];
        }
        norm[l] = z;
        if (l + 1 < nl) {
          Eigen::MatrixXd a = z.cwiseMax(0.0);
          if (dropout > 0.0) {
            mask[l].resize(a.rows(), a.cols());
            for (Eigen::Index r = 0; r < a.rows(); ++r)
              for (Eigen::Index c2 = 0; c2 < a.cols(); ++c2)
                mask[l](r, c2) = rng.bernoulli(dropout) ? 0.0 : 1.0 / (1.0 - dropout);
            a = a.cwiseProduct(mask[l]);
          }
          act[l + 1] = a;
        } else {
          act[l + 1] = z;
        }
      }

      // BCE-with-logits loss and gradient
      Eigen::VectorXd logit = act[nl].col(0);
      Eigen::VectorXd p = logit.unaryExpr([](double v) { return sigmoid(v); });
      double loss = 0.0;
      for (Eigen::Index i = 0; i < bs; ++i) {
        const double z = logit[i];
        loss += std::max(z, 0.0) - z * yb[i] + std::log1p(std::exp(-std::abs(z)));
      }
      loss /= static_cast<double>(bs);
      if (!std::isfinite(loss))
        throw ModelError("mlp: non-finite loss at epoch " + std::to_string(epoch));
      epoch_loss += loss * static_cast<double>(bs);

      // backward
      MlpModel::ParamGrads grads;
      grads.dW.resize(nl);
      grads.db.resize(nl);
      Eigen::MatrixXd delta = (p - yb) / static_cast<double>(bs);
      for (std::size_t l = nl; l-- > 0;) {
        Eigen::MatrixXd dz = delta;
        if (l + 1 < nl) {
          if (dropout > 0.0) dz = dz.cwiseProduct(mask[l]);
          dz = dz.cwiseProduct((norm[l].array() > 0.0).cast<double>().matrix());
        }
        if (L[l].has_bn()) {
          // full batch-norm backward per unit
          Eigen::MatrixXd dlin(bs, dz.cols());
          for (Eigen::Index j = 0; j < dz.cols(); ++j) {
            const double inv_std = 1.0 / std::sqrt(var[l][j] + kBnEps);
            Eigen::VectorXd xc = lin[l].col(j).array() - mu[l][j];
            Eigen::VectorXd dxhat = dz.col(j) * L[l].bn_gamma[j];
            const double dvar =
                (dxhat.array() * xc.array()).sum() * -0.5 * std::pow(inv_std, 3);
            const double dmu = -inv_std * dxhat.sum() +
                               dvar * -2.0 * xc.mean();
            dlin.col(j) = dxhat * inv_std +
                          (2.0 * dvar / static_cast<double>(bs)) * xc +
                          Eigen::VectorXd::Constant(bs, dmu / static_cast<double>(bs));
          }
          dz = dlin;
        }
        grads.dW[l] = dz.transpose() * act[l];
        grads.db[l] = dz.colwise().sum().transpose();
        if (l > 0) delta = dz * L[l].W;
      }
      adam.step(*model, grads, lr);
    }

    epoch_loss /= static_cast<double>(n);
    if (epoch_loss < best_loss - 1e-4) {
      best_loss = epoch_loss;
      stale = 0;
    } else if (++stale >= 10) {
      break;  // plateaued
    }
  }
  return model;
}

}  // namespace

// ---------------------------------------------------------------------------
// Bagged forest (majority vote); backbone for the OOD detector
// ---------------------------------------------------------------------------

namespace {

class GiniTreeBuilder {
 public:
  GiniTreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXi& y,
                  int max_depth, int n_sub_features, Rng& rng)
      : X_(X), y_(y), max_depth_(max_depth), n_sub_(n_sub_features), rng_(rng) {}

  Tree build(std::vector<Eigen::Index> rows) {
    Tree t;
    build_node(t, std::move(rows), 0);
    return t;
  }

 private:
  int build_node(Tree& t, std::vector<Eigen::Index> rows, int depth) {
    int n1 = 0;
    for (auto r : rows) n1 += y_[r];
    const int node_id = static_cast<int>(t.nodes.size());
    t.nodes.push_back({});
    const double frac =
        static_cast<double>(n1) / static_cast<double>(rows.size());
    if (depth >= max_depth_ || n1 == 0 ||
        n1 == static_cast<int>(rows.size()) || rows.size() < 4) {
      t.nodes[node_id].value = frac;
      return node_id;
    }

    std::vector<int> features(X_.cols());
    std::iota(features.begin(), features.end(), 0);
    rng_.shuffle(features);
    features.resize(std::min<std::size_t>(features.size(), n_sub_));
    std::sort(features.begin(), features.end());

    const double n_total = static_cast<double>(rows.size());
    double best_impurity = gini(n1, rows.size());
    int best_feature = -1;
    double best_thr = 0.0;
    for (int f : features) {
      std::vector<Eigen::Index> order = rows;
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (X_(a, f) != X_(b, f)) return X_(a, f) < X_(b, f);
        return a < b;
      });
      int left1 = 0;
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left1 += y_[order[i]];
        if (X_(order[i], f) == X_(order[i + 1], f)) continue;
        const double nl = static_cast<double>(i + 1);
        const double nr = n_total - nl;
        const double imp = (nl / n_total) * gini(left1, i + 1) +
                           (nr / n_total) * gini(n1 - left1, rows.size() - i - 1);
        if (imp < best_impurity - 1e-12) {
          best_impurity = imp;
          best_feature = f;
          best_thr = 0.5 * (X_(order[i], f) + X_(order[i + 1], f));
        }
      }
    }
    if (best_feature < 0) {
      t.nodes[node_id].value = frac;
      return node_id;
    }
    std::vector<Eigen::Index> left_rows, right_rows;
    for (auto r : rows)
      (X_(r, best_feature) <= best_thr ? left_rows : right_rows).push_back(r);
    rows.clear();
    t.nodes[node_id].feature = best_feature;
    t.nodes[node_id].threshold = best_thr;
    t.nodes[node_id].left = build_node(t, std::move(left_rows), depth + 1);
    t.nodes[node_id].right = build_node(t, std::move(right_rows), depth + 1);
    return node_id;
  }

  static double gini(int n1, std::size_t n) {
    const double p = static_cast<double>(n1) / static_cast<double>(n);
    return 2.0 * p * (1.0 - p);
  }

  const Eigen::MatrixXd& X_;
  const Eigen::VectorXi& y_;
  int max_depth_;
  std::size_t n_sub_;
  Rng& rng_;
};

}  // namespace

class ForestModel final : public TrainedModel {
 public:
  ForestModel(std::vector<Tree> trees, int dim)
      : TrainedModel(ModelKind::forest, dim), trees_(std::move(trees)) {}

  Eigen::VectorXd score(const Eigen::MatrixXd& X) const override {
    check_dim(X.cols());
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      int votes = 0;
      for (const Tree& t : trees_)
        if (t.eval(X.row(i)) >= 0.5) ++votes;
      out[i] = static_cast<double>(votes) / static_cast<double>(trees_.size());
    }
    return out;
  }

  double margin(const Eigen::VectorXd& x) const override {
    const double p = std::clamp(score_one(x), 1e-6, 1.0 - 1e-6);
    return std::log(p / (1.0 - p));
  }

  std::string to_json() const override;

  const std::vector<Tree>& trees() const { return trees_; }

 private:
  std::vector<Tree> trees_;
};

namespace {

std::unique_ptr<TrainedModel> train_forest(const ModelConfig& cfg,
                                           const Dataset& train) {
  const auto n = train.n_rows();
  const int d = train.d();
  const int n_trees = static_cast<int>(cfg.get("n_trees", 100));
  const int max_depth = static_cast<int>(cfg.get("max_depth", 8));
  const int n_sub = std::max(1, static_cast<int>(std::lround(std::sqrt(d))));

  Rng rng = Rng::derive(cfg.seed, "forest");
  std::vector<Tree> trees;
  trees.reserve(n_trees);
  for (int t = 0; t < n_trees; ++t) {
    std::vector<Eigen::Index> rows(n);
    for (auto& r : rows) r = rng.uniform_int(0, n - 1);  // bootstrap
    GiniTreeBuilder builder(train.X, train.y, max_depth, n_sub, rng);
    trees.push_back(builder.build(std::move(rows)));
  }
  return std::make_unique<ForestModel>(std::move(trees), d);
}

}  // namespace

std::unique_ptr<TrainedModel> train_model(const ModelConfig& cfg,
                                          const Dataset& train) {
  validate_config(cfg);
  check_trainable(train);
  std::unique_ptr<TrainedModel> m;
  switch (cfg.kind) {
    case ModelKind::logistic: m = train_logistic(cfg, train); break;
    case ModelKind::gbt: m = train_gbt(cfg, train); break;
    case ModelKind::mlp: m = train_mlp(cfg, train); break;
    case ModelKind::forest: m = train_forest(cfg, train); break;
  }
  m->set_schema_hash(schema_hash(train.schema));
  return m;
}

// ---------------------------------------------------------------------------
// Serialization (versioned JSON)
// ---------------------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;

json tree_to_json(const Tree& t) {
  json nodes = json::array();
  for (const auto& nd : t.nodes)
    nodes.push_back({nd.feature, nd.threshold, nd.left, nd.right, nd.value});
  return nodes;
}

Tree tree_from_json(const json& j) {
  Tree t;
  for (const auto& nd : j)
    t.nodes.push_back({nd[0].get<int>(), nd[1].get<double>(), nd[2].get<int>(),
                       nd[3].get<int>(), nd[4].get<double>()});
  return t;
}

std::vector<double> vec_to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

Eigen::VectorXd vec_from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(),
                                           static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string LogisticModel::to_json() const {
  json j{{"version", kFormatVersion},
         {"kind", "logistic"},
         {"schema_hash", schema_hash_},
         {"dim", dim_},
         {"weights", vec_to_std(w_)},
         {"bias", b_}};
  return j.dump();
}

std::string GbtModel::to_json() const {
  json trees = json::array();
  for (const auto& t : trees_) trees.push_back(tree_to_json(t));
  json j{{"version", kFormatVersion},
         {"kind", "gbt"},
         {"schema_hash", schema_hash_},
         {"dim", dim_},
         {"base_margin", base_margin_},
         {"learning_rate", learning_rate_},
         {"trees", trees}};
  return j.dump();
}

std::string ForestModel::to_json() const {
  json trees = json::array();
  for (const auto& t : trees_) trees.push_back(tree_to_json(t));
  json j{{"version", kFormatVersion},
         {"kind", "forest"},
         {"schema_hash", schema_hash_},
         {"dim", dim_},
         {"trees", trees}};
  return j.dump();
}

std::string MlpModel::to_json() const {
  json layers = json::array();
  for (const auto& L : layers_) {
    json lj;
    lj["rows"] = L.W.rows();
    lj["cols"] = L.W.cols();
    std::vector<double> w(L.W.data(), L.W.data() + L.W.size());
    lj["W"] = w;
    lj["b"] = vec_to_std(L.b);
    if (L.has_bn()) {
      lj["bn_gamma"] = vec_to_std(L.bn_gamma);
      lj["bn_beta"] = vec_to_std(L.bn_beta);
      lj["bn_mean"] = vec_to_std(L.bn_mean);
      lj["bn_var"] = vec_to_std(L.bn_var);
    }
    layers.push_back(std::move(lj));
  }
  json j{{"version", kFormatVersion},
         {"kind", "mlp"},
         {"schema_hash", schema_hash_},
         {"dim", dim_},
         {"layers", layers}};
  return j.dump();
}

std::unique_ptr<TrainedModel> TrainedModel::from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("version"))
    throw ModelError("model JSON lacks a version field");
  const std::string kind = j.at("kind").get<std::string>();
  const int dim = j.at("dim").get<int>();
  const auto hash = j.value("schema_hash", std::uint64_t{0});
  std::unique_ptr<TrainedModel> m;
  if (kind == "logistic") {
    m = std::make_unique<LogisticModel>(
        vec_from_std(j.at("weights").get<std::vector<double>>()),
        j.at("bias").get<double>());
  }
  else if (kind == "gbt") {
    std::vector<Tree> trees;
    for (const auto& tj : j.at("trees")) trees.push_back(tree_from_json(tj));
    m = std::make_unique<GbtModel>(std::move(trees),
                                   j.at("base_margin").get<double>(),
                                   j.at("learning_rate").get<double>(), dim);
  }
  else if (kind == "forest") {
    std::vector<Tree> trees;
    for (const auto& tj : j.at("trees")) trees.push_back(tree_from_json(tj));
    m = std::make_unique<ForestModel>(std::move(trees), dim);
  }
  else if (kind == "mlp") {
    std::vector<MlpModel::Layer> layers;
    for (const auto& lj : j.at("layers")) {
      MlpModel::Layer L;
      const auto rows = lj.at("rows").get<Eigen::Index>();
      const auto cols = lj.at("cols").get<Eigen::Index>();
      const auto w = lj.at("W").get<std::vector<double>>();
      L.W = Eigen::Map<const Eigen::MatrixXd>(w.data(), rows, cols);
      L.b = vec_from_std(lj.at("b").get<std::vector<double>>());
      if (lj.contains("bn_gamma")) {
        L.bn_gamma = vec_from_std(lj.at("bn_gamma").get<std::vector<double>>());
        L.bn_beta = vec_from_std(lj.at("bn_beta").get<std::vector<double>>());
        L.bn_mean = vec_from_std(lj.at("bn_mean").get<std::vector<double>>());
        L.bn_var = vec_from_std(lj.at("bn_var").get<std::vector<double>>());
      }
      layers.push_back(std::move(L));
    }
    m = std::make_unique<MlpModel>(std::move(layers), dim);
  }
  if (!m) throw ModelError("unknown model kind in JSON: " + kind);
  m->set_schema_hash(hash);
  return m;
}

}  // namespace xai::models
