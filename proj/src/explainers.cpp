#include "xai/explainers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "xai/rng.hpp"

#ifdef XAI_HAVE_OPENMP
#include <omp.h>
#endif

namespace xai::explain {

using models::TrainedModel;

std::string method_name(Method m) {
  switch (m) {
    case Method::kernel_shap: return "kernel_shap";
    case Method::permutation_shap: return "permutation_shap";
    case Method::linear_shap: return "linear_shap";
    case Method::lime: return "lime";
    case Method::integrated_gradients: return "integrated_gradients";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "kernel_shap") return Method::kernel_shap;
  if (name == "permutation_shap") return Method::permutation_shap;
  if (name == "linear_shap") return Method::linear_shap;
  if (name == "lime") return Method::lime;
  if (name == "integrated_gradients") return Method::integrated_gradients;
  throw ExplainerError("unknown explainer method: " + name);
}

// ---------------------------------------------------------------------------
// Background
// ---------------------------------------------------------------------------

Background Background::of(const tabular::Dataset& ds, Eigen::Index max_rows,
                          std::uint64_t seed) {
  Background bg;
  if (max_rows < 0 || ds.n_rows() <= max_rows) {
    bg.X = ds.X;
  } else {
    std::vector<Eigen::Index> rows(ds.n_rows());
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng = Rng::derive(seed, "background");
    rng.shuffle(rows);
    rows.resize(static_cast<std::size_t>(max_rows));
    std::sort(rows.begin(), rows.end());
    bg.X.resize(max_rows, ds.d());
    for (Eigen::Index i = 0; i < max_rows; ++i) bg.X.row(i) = ds.X.row(rows[i]);
  }
  return bg;
}

Eigen::VectorXd Background::normalized_weights() const {
  const Eigen::Index n = X.rows();
  if (n == 0) throw ExplainerError("empty background");
  Eigen::VectorXd w = weights.size() == 0
                          ? Eigen::VectorXd::Ones(n)
                          : weights;
  if (w.size() != n) throw ExplainerError("background weight length mismatch");
  if (w.minCoeff() < 0.0)
    throw ExplainerError("background weights must be nonnegative");
  const double total = w.sum();
  if (total <= 0.0) throw ExplainerError("background weights are all zero");
  return w / total;
}

Eigen::VectorXd Background::weighted_mean() const {
  return X.transpose() * normalized_weights();
}

// ---------------------------------------------------------------------------
// Kernel SHAP
// ---------------------------------------------------------------------------

namespace {

double weighted_coalition_value(const ScoreFn& model, const Eigen::VectorXd& x,
                                const Background& bg,
                                const Eigen::VectorXd& bg_w,
                                const std::vector<int>& mask) {
  // mask[j] == 1: feature j present (taken from x), else from background
  Eigen::MatrixXd hybrids = bg.X;
  for (int j = 0; j < static_cast<int>(mask.size()); ++j)
    if (mask[j]) hybrids.col(j).setConstant(x[j]);
  return model(hybrids).dot(bg_w);
}

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

}  // namespace

Attribution kernel_shap(const ScoreFn& model, const Eigen::VectorXd& x,
                        const Background& bg, const ExplainerConfig& cfg) {
  const int d = static_cast<int>(x.size());
  if (cfg.n_samples < d + 2)
    throw ExplainerError("kernel_shap: n_samples must be >= d+2");
  const Eigen::VectorXd bg_w = bg.normalized_weights();
  if (bg.X.cols() != d) throw ExplainerError("kernel_shap: dimension mismatch");

  const double v_empty = model(bg.X).dot(bg_w);
  const double v_full =
      weighted_coalition_value(model, x, bg, bg_w, std::vector<int>(d, 1));

  if (d == 1) {
    Attribution a;
    a.values = Eigen::VectorXd::Constant(1, v_full - v_empty);
    a.base_value = v_empty;
    a.method = Method::kernel_shap;
    return a;
  }

  const bool full_enum =
      d <= 12 && static_cast<long long>(cfg.n_samples) >= (1LL << d) - 2;

  std::vector<std::vector<int>> masks;
  std::vector<double> kernel_w;
  if (full_enum) {
    for (long long bits = 1; bits < (1LL << d) - 1; ++bits) {
      std::vector<int> mask(d, 0);
      int s = 0;
      for (int j = 0; j < d; ++j)
        if (bits & (1LL << j)) {
          mask[j] = 1;
          ++s;
        }
      masks.push_back(std::move(mask));
      kernel_w.push_back(std::exp(std::log(d - 1.0) - log_binom(d, s) -
                                  std::log(static_cast<double>(s)) -
                                  std::log(static_cast<double>(d - s))));
    }
  } else {
    // sample coalition sizes from the Shapley kernel marginal, subsets
    // uniformly within a size; sampled coalitions then carry unit weight
    Rng rng = Rng::derive(cfg.seed, "kernel_shap");
    std::vector<double> size_p(d - 1);
    for (int s = 1; s <= d - 1; ++s)
      size_p[s - 1] = 1.0 / (static_cast<double>(s) * (d - s));
    std::vector<int> idx(d);
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < cfg.n_samples; ++k) {
      const int s = static_cast<int>(rng.weighted_index(size_p)) + 1;
      rng.shuffle(idx);
      std::vector<int> mask(d, 0);
      for (int j = 0; j < s; ++j) mask[idx[j]] = 1;
      masks.push_back(std::move(mask));
      kernel_w.push_back(1.0);
    }
  }

  const auto m = static_cast<Eigen::Index>(masks.size());
  Eigen::VectorXd v(m), w(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    v[k] = weighted_coalition_value(model, x, bg, bg_w, masks[k]);
    w[k] = kernel_w[k];
  }

  // Weighted least squares with the efficiency constraint folded in by
  // eliminating the last feature: phi_d = (v_full - v_empty) - sum phi_i.
  Eigen::MatrixXd Z(m, d - 1);
  Eigen::VectorXd y(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const double zd = masks[k][d - 1];
    for (int j = 0; j < d - 1; ++j) Z(k, j) = masks[k][j] - zd;
    y[k] = v[k] - v_empty - zd * (v_full - v_empty);
  }
  Eigen::MatrixXd A = Z.transpose() * w.asDiagonal() * Z;
  A.diagonal().array() += 1e-10;
  Eigen::VectorXd rhs = Z.transpose() * (w.asDiagonal() * y);
  Eigen::VectorXd phi_head = A.ldlt().solve(rhs);

  Attribution a;
  a.values.resize(d);
  a.values.head(d - 1) = phi_head;
  a.values[d - 1] = (v_full - v_empty) - phi_head.sum();
  a.base_value = v_empty;
  a.method = Method::kernel_shap;
  return a;
}

// ---------------------------------------------------------------------------
// Permutation SHAP
// ---------------------------------------------------------------------------

Attribution permutation_shap(const ScoreFn& model, const Eigen::VectorXd& x,
                             const Background& bg, const ExplainerConfig& cfg) {
  const int d = static_cast<int>(x.size());
  if (cfg.n_samples < 1)
    throw ExplainerError("permutation_shap: need at least one permutation");
  const Eigen::VectorXd bg_w = bg.normalized_weights();
  if (bg.X.cols() != d) throw ExplainerError("permutation_shap: dimension mismatch");

  Rng rng = Rng::derive(cfg.seed, "permutation_shap");
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(d);
  double base = 0.0;

  std::vector<int> perm(d);
  std::iota(perm.begin(), perm.end(), 0);

  // exact enumeration when the sample budget covers all d! permutations
  long long factorial = 1;
  for (int k = 2; k <= d && factorial <= cfg.n_samples; ++k) factorial *= k;
  const bool full_enum = factorial <= cfg.n_samples;
  const int n_perms = full_enum ? static_cast<int>(factorial) : cfg.n_samples;

  const Eigen::Index n_bg = bg.X.rows();
  const Eigen::Index stride = 2 * (d + 1);
  for (int p = 0; p < n_perms; ++p) {
    if (full_enum) {
      if (p > 0) std::next_permutation(perm.begin(), perm.end());
    } else {
      rng.shuffle(perm);
    }
    // forward walk: insert features of x in perm order; reverse walk:
    // opposite order. All background walks go out as one scoring request so
    // the model sees a deployment-sized batch.
    Eigen::MatrixXd batch(n_bg * stride, d);
    for (Eigen::Index b = 0; b < n_bg; ++b) {
      const Eigen::Index o = b * stride;
      Eigen::RowVectorXd cur = bg.X.row(b);
      batch.row(o) = cur;
      for (int k = 0; k < d; ++k) {
        cur[perm[k]] = x[perm[k]];
        batch.row(o + k + 1) = cur;
      }
      cur = bg.X.row(b);
      batch.row(o + d + 1) = cur;
      for (int k = 0; k < d; ++k) {
        cur[perm[d - 1 - k]] = x[perm[d - 1 - k]];
        batch.row(o + d + 2 + k) = cur;
      }
    }
    const Eigen::VectorXd s = model(batch);
    for (Eigen::Index b = 0; b < n_bg; ++b) {
      const Eigen::Index o = b * stride;
      const double wb = bg_w[b];
      for (int k = 0; k < d; ++k) {
        phi[perm[k]] += 0.5 * wb * (s[o + k + 1] - s[o + k]);
        phi[perm[d - 1 - k]] += 0.5 * wb * (s[o + d + 2 + k] - s[o + d + 1 + k]);
      }
      base += 0.5 * wb * (s[o] + s[o + d + 1]);
    }
  }

  Attribution a;
  a.values = phi / static_cast<double>(n_perms);
  a.base_value = base / static_cast<double>(n_perms);
  a.method = Method::permutation_shap;
  return a;
}

// ---------------------------------------------------------------------------
// Linear SHAP (closed form on the pre-sigmoid margin)
// ---------------------------------------------------------------------------

Attribution linear_shap(const TrainedModel& model, const Eigen::VectorXd& x,
                        const Background& bg) {
  const auto* lin = dynamic_cast<const models::LogisticModel*>(&model);
  if (!lin)
    throw models::CapabilityError(
        "linear_shap requires a logistic model; got " +
        models::kind_name(model.kind()));
  const Eigen::VectorXd mu = bg.weighted_mean();
  Attribution a;
  a.values = lin->weights().cwiseProduct(x - mu);
  a.base_value = lin->weights().dot(mu) + lin->bias();
  a.method = Method::linear_shap;
  return a;
}

// ---------------------------------------------------------------------------
// LIME tabular
// ---------------------------------------------------------------------------

Attribution lime_tabular(const ScoreFn& model, const Eigen::VectorXd& x,
                         const tabular::FeatureSchema& schema,
                         const Background& bg, const ExplainerConfig& cfg) {
  const int d = static_cast<int>(x.size());
  if (schema.size() != d)
    throw ExplainerError("lime_tabular: schema/instance dimension mismatch");
  if (cfg.n_samples < d + 2)
    throw ExplainerError("lime_tabular: n_samples must be >= d+2");
  const Eigen::VectorXd bg_w = bg.normalized_weights();

  // weighted background statistics
  Eigen::VectorXd mean = bg.weighted_mean();
  Eigen::VectorXd stdev(d);
  for (int j = 0; j < d; ++j) {
    const double var =
        ((bg.X.col(j).array() - mean[j]).square() * bg_w.array()).sum();
    stdev[j] = std::sqrt(std::max(var, 0.0));
  }
  // categorical marginals (weighted)
  std::vector<std::vector<double>> marginals(d);
  for (int j = 0; j < d; ++j) {
    if (schema.columns[j].kind != tabular::FeatureKind::categorical) continue;
    marginals[j].assign(schema.columns[j].categories.size(), 0.0);
    for (Eigen::Index i = 0; i < bg.X.rows(); ++i)
      marginals[j][static_cast<std::size_t>(bg.X(i, j))] += bg_w[i];
  }

  Rng rng = Rng::derive(cfg.seed, "lime");
  const int n = cfg.n_samples;
  Eigen::MatrixXd samples(n, d);  // raw feature space, row 0 = x itself
  Eigen::MatrixXd rep(n, d);      // surrogate representation
  Eigen::RowVectorXd rep_x(d);
  for (int j = 0; j < d; ++j) {
    if (schema.columns[j].kind == tabular::FeatureKind::numerical)
      rep_x[j] = stdev[j] > 0.0 ? (x[j] - mean[j]) / stdev[j] : 0.0;
    else
      rep_x[j] = 1.0;
  }
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      if (i == 0) {
        samples(i, j) = x[j];
      } else if (schema.columns[j].kind == tabular::FeatureKind::numerical) {
        samples(i, j) = x[j] + stdev[j] * rng.normal();
      } else {
        samples(i, j) = static_cast<double>(rng.weighted_index(marginals[j]));
      }
      if (schema.columns[j].kind == tabular::FeatureKind::numerical)
        rep(i, j) = stdev[j] > 0.0 ? (samples(i, j) - mean[j]) / stdev[j] : 0.0;
      else
        rep(i, j) = samples(i, j) == x[j] ? 1.0 : 0.0;
    }
  }

  const double kw = cfg.kernel_width > 0.0 ? cfg.kernel_width
                                           : 0.75 * std::sqrt(static_cast<double>(d));
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) {
    const double dist2 = (rep.row(i) - rep_x).squaredNorm();
    w[i] = std::exp(-dist2 / (kw * kw));
  }
  if (w.sum() <= 1e-12)
    throw ExplainerError("lime_tabular: kernel weights vanished");
  if ((rep.rowwise() - rep.row(0)).cwiseAbs().maxCoeff() < 1e-15)
    throw ExplainerError("lime_tabular: all perturbations identical");

  const Eigen::VectorXd scores = model(samples);
  const num::RidgeResult fit =
      num::weighted_ridge(rep, scores, w, cfg.ridge_lambda);

  Attribution a;
  a.values = fit.coeffs;
  a.base_value = fit.intercept;
  a.method = Method::lime;
  return a;
}

// ---------------------------------------------------------------------------
// Integrated gradients
// ---------------------------------------------------------------------------

Attribution integrated_gradients(const TrainedModel& model,
                                 const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& baseline, int steps) {
  if (!model.differentiable())
    throw models::CapabilityError(
        "integrated_gradients requires a differentiable model");
  if (steps < 10)
    throw ExplainerError("integrated_gradients: steps must be >= 10");
  const Eigen::VectorXd delta = x - baseline;
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(x.size());
  for (int k = 0; k < steps; ++k) {
    const double t = (k + 0.5) / static_cast<double>(steps);  // midpoint rule
    acc += model.input_gradient(baseline + t * delta);
  }
  Attribution a;
  a.values = delta.cwiseProduct(acc / static_cast<double>(steps));
  a.base_value = model.score_one(baseline);
  a.method = Method::integrated_gradients;
  return a;
}

// ---------------------------------------------------------------------------
// Aggregation and ranks
// ---------------------------------------------------------------------------

GlobalAttribution global_aggregate(const std::vector<Attribution>& attrs) {
  if (attrs.empty()) throw ExplainerError("global_aggregate: empty input");
  const Eigen::Index d = attrs.front().values.size();
  for (const auto& a : attrs) {
    if (a.values.size() != d)
      throw ExplainerError("global_aggregate: mixed dimensions");
    if (a.method != attrs.front().method)
      throw ExplainerError("global_aggregate: mixed methods");
  }
  GlobalAttribution g;
  g.mean_abs = Eigen::VectorXd::Zero(d);
  g.signed_mean = Eigen::VectorXd::Zero(d);
  for (const auto& a : attrs) {
    g.mean_abs += a.values.cwiseAbs();
    g.signed_mean += a.values;
  }
  g.mean_abs /= static_cast<double>(attrs.size());
  g.signed_mean /= static_cast<double>(attrs.size());
  g.n_instances = static_cast<int>(attrs.size());
  return g;
}

Eigen::VectorXd normalize_attribution(const Attribution& attr) {
  const double total = attr.values.cwiseAbs().sum();
  if (total <= 0.0)
    throw ExplainerError("normalize_attribution: all-zero attribution");
  return attr.values.cwiseAbs() / total;
}

std::vector<int> importance_ordering(const Eigen::VectorXd& values) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int i, int j) {
    const double ai = std::abs(values[i]), aj = std::abs(values[j]);
    if (ai != aj) return ai > aj;
    return i < j;
  });
  return order;
}

num::RankVector importance_ranks(const Attribution& attr) {
  const auto order = importance_ordering(attr.values);
  num::RankVector ranks(order.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos)
    ranks[order[pos]] = static_cast<double>(pos + 1);
  return ranks;
}

// ---------------------------------------------------------------------------
// Panel explanation (serial reference + OpenMP kernel)
// ---------------------------------------------------------------------------

namespace {

Attribution explain_one(const PanelRequest& req, const Eigen::VectorXd& x,
                        std::uint64_t instance_seed, int instance_id) {
  ExplainerConfig cfg = req.cfg;
  cfg.seed = instance_seed;
  Attribution a;
  switch (req.method) {
    case Method::kernel_shap:
      a = kernel_shap(req.score, x, req.background, cfg);
      break;
    case Method::permutation_shap:
      a = permutation_shap(req.score, x, req.background, cfg);
      break;
    case Method::linear_shap:
      a = linear_shap(*req.model, x, req.background);
      break;
    case Method::lime:
      a = lime_tabular(req.score, x, *req.schema, req.background, cfg);
      break;
    case Method::integrated_gradients: {
      const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(x.size());
      a = integrated_gradients(*req.model, x, baseline, cfg.ig_steps);
      break;
    }
  }
  a.instance_id = instance_id;
  return a;
}

}  // namespace

std::vector<Attribution> explain_panel_serial(const PanelRequest& req,
                                              const Eigen::MatrixXd& instances) {
  const Rng master(req.cfg.seed);
  std::vector<Attribution> out(static_cast<std::size_t>(instances.rows()));
  for (Eigen::Index i = 0; i < instances.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        explain_one(req, instances.row(i).transpose(),
                    master.spawn(static_cast<std::uint64_t>(i)).next_u64(),
                    static_cast<int>(i));
  return out;
}

std::vector<Attribution> explain_panel_parallel(const PanelRequest& req,
                                                const Eigen::MatrixXd& instances,
                                                int n_jobs) {
  const Rng master(req.cfg.seed);
  std::vector<Attribution> out(static_cast<std::size_t>(instances.rows()));
#ifdef XAI_HAVE_OPENMP
  if (n_jobs > 0) omp_set_num_threads(n_jobs);
#pragma omp parallel for schedule(dynamic)
  for (Eigen::Index i = 0; i < instances.rows(); ++i)
    out[static_cast<std::size_t>(i)] =
        explain_one(req, instances.row(i).transpose(),
                    master.spawn(static_cast<std::uint64_t>(i)).next_u64(),
                    static_cast<int>(i));
#else
  (void)n_jobs;
  out = explain_panel_serial(req, instances);
#endif
  return out;
}

std::string attribution_to_json(const Attribution& attr,
                                const std::vector<std::string>& feature_names) {
  nlohmann::json j{{"method", method_name(attr.method)},
                   {"base_value", attr.base_value},
                   {"values", std::vector<double>(
                                  attr.values.data(),
                                  attr.values.data() + attr.values.size())},
                   {"feature_names", feature_names}};
  return j.dump();
}

}  // namespace xai::explain
