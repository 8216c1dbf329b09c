#include "xai/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "xai/numerics.hpp"
#include "xai/rng.hpp"

namespace xai::defense {

using nlohmann::json;

std::string defense_name(DefenseKind k) {
  switch (k) {
    case DefenseKind::ood_filter: return "ood_filter";
    case DefenseKind::multi_explainer: return "multi_explainer";
    case DefenseKind::background_uniformity: return "background_uniformity";
    case DefenseKind::adversarial_retraining: return "adversarial_retraining";
  }
  return "?";
}

DefenseKind defense_from_name(const std::string& name) {
  if (name == "ood_filter") return DefenseKind::ood_filter;
  if (name == "multi_explainer") return DefenseKind::multi_explainer;
  if (name == "background_uniformity") return DefenseKind::background_uniformity;
  if (name == "adversarial_retraining") return DefenseKind::adversarial_retraining;
  throw DefenseError("unknown defense: " + name);
}

std::string DefenseVerdict::to_json() const {
  json j{{"defense", defense_name(defense)},
         {"statistic", statistic},
         {"threshold", threshold},
         {"flagged", flagged},
         {"details", details}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// OOD input filtering
// ---------------------------------------------------------------------------

OodFilterResult defense_ood_filter(const tabular::Dataset& reference,
                                   const Eigen::MatrixXd& queries,
                                   const OodFilterConfig& cfg) {
  const Eigen::Index n = reference.n_rows();
  if (n == 0) throw DefenseError("ood_filter: empty reference set");
  if (cfg.quantile <= 0.0 || cfg.quantile >= 1.0)
    throw DefenseError("ood_filter: quantile must be in (0,1)");
  if (queries.cols() != reference.d())
    throw DefenseError("ood_filter: query dimension mismatch");
  const int d = reference.d();

  Eigen::VectorXd mean(d), stdev(d);
  for (int j = 0; j < d; ++j) {
    mean[j] = reference.X.col(j).mean();
    stdev[j] = std::sqrt(
        (reference.X.col(j).array() - mean[j]).square().sum() /
        static_cast<double>(n));
    if (stdev[j] == 0.0) stdev[j] = 1.0;
  }

  // leave-one-out nearest-neighbor distances of the reference itself define
  // the distance threshold; the largest per-feature |z| in the reference
  // defines the z cap, so reference rows can never flag themselves
  std::vector<double> self_nn(static_cast<std::size_t>(n),
                              std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index k = i + 1; k < n; ++k) {
      const double dist = (reference.X.row(i) - reference.X.row(k)).norm();
      self_nn[static_cast<std::size_t>(i)] =
          std::min(self_nn[static_cast<std::size_t>(i)], dist);
      self_nn[static_cast<std::size_t>(k)] =
          std::min(self_nn[static_cast<std::size_t>(k)], dist);
    }
  std::sort(self_nn.begin(), self_nn.end());
  const auto q_idx = static_cast<std::size_t>(
      cfg.quantile * static_cast<double>(self_nn.size() - 1));
  const double nn_threshold = self_nn[q_idx];

  double z_cap = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j)
      z_cap = std::max(z_cap,
                       std::abs((reference.X(i, j) - mean[j]) / stdev[j]));

  OodFilterResult out;
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    double nn = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
      nn = std::min(nn, (queries.row(q) - reference.X.row(i)).norm());
    double z_max = 0.0;
    for (int j = 0; j < d; ++j)
      z_max = std::max(z_max,
                       std::abs((queries(q, j) - mean[j]) / stdev[j]));

    DefenseVerdict v;
    v.defense = DefenseKind::ood_filter;
    v.statistic = nn;
    v.threshold = nn_threshold;
    v.flagged = nn > nn_threshold || z_max > z_cap;
    v.details = "nn_distance=" + std::to_string(nn) +
                " max_abs_z=" + std::to_string(z_max) +
                " z_cap=" + std::to_string(z_cap);
    if (!v.flagged) out.kept_rows.push_back(q);
    out.verdicts.push_back(std::move(v));
  }
  out.kept.resize(static_cast<Eigen::Index>(out.kept_rows.size()), d);
  for (std::size_t i = 0; i < out.kept_rows.size(); ++i)
    out.kept.row(static_cast<Eigen::Index>(i)) = queries.row(out.kept_rows[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Multi-explainer cross-check
// ---------------------------------------------------------------------------

DefenseVerdict defense_multi_explainer(const explain::ScoreFn& score,
                                       const Eigen::VectorXd& x,
                                       const tabular::FeatureSchema& schema,
                                       const explain::Background& bg,
                                       const MultiExplainerConfig& cfg) {
  DefenseVerdict v;
  v.defense = DefenseKind::multi_explainer;
  v.threshold = cfg.min_spearman;

  struct Named {
    std::string name;
    num::RankVector ranks;
  };
  std::vector<Named> ranks;
  auto add = [&](const std::string& name, const explain::Attribution& a) {
    if (a.values.cwiseAbs().sum() <= 1e-12) {
      v.details += name + ": all-zero attribution, skipped; ";
      return;
    }
    ranks.push_back({name, explain::importance_ranks(a)});
  };

  add("kernel_shap", explain::kernel_shap(score, x, bg, cfg.explainer));
  add("permutation_shap",
      explain::permutation_shap(score, x, bg, cfg.explainer));
  add("lime", explain::lime_tabular(score, x, schema, bg, cfg.explainer));

  if (ranks.size() < 2) {
    v.statistic = 1.0;
    v.flagged = false;
    v.details += "fewer than two usable methods";
    return v;
  }
  if (x.size() == 1) {  // degenerate single-feature case
    v.statistic = 1.0;
    v.flagged = false;
    return v;
  }

  double min_rs = 1.0;
  std::string worst;
  for (std::size_t i = 0; i < ranks.size(); ++i)
    for (std::size_t j = i + 1; j < ranks.size(); ++j) {
      const double rs =
          num::spearman_rank_corr(ranks[i].ranks, ranks[j].ranks);
      if (rs < min_rs) {
        min_rs = rs;
        worst = ranks[i].name + " vs " + ranks[j].name;
      }
    }
  v.statistic = min_rs;
  v.flagged = min_rs < cfg.min_spearman;
  v.details += "lowest pair: " + worst;
  return v;
}

// ---------------------------------------------------------------------------
// Background uniformity (Wald test on model outputs)
// ---------------------------------------------------------------------------

DefenseVerdict defense_background_uniformity(const models::TrainedModel& model,
                                             const explain::Background& submitted,
                                             const tabular::Dataset& reference,
                                             std::uint64_t seed,
                                             const UniformityConfig& cfg) {
  if (reference.n_rows() < 10)
    throw DefenseError("background_uniformity: reference needs >= 10 rows");

  const Eigen::VectorXd w = submitted.normalized_weights();
  const Eigen::VectorXd fb = model.score(submitted.X);
  const double mean_b = fb.dot(w);
  const double var_b = (fb.array() - mean_b).square().matrix().dot(w);
  // effective sample size of a weighted mean
  const double n_eff = 1.0 / w.squaredNorm();

  const Eigen::Index m = cfg.reference_sample > 0
                             ? std::min<Eigen::Index>(cfg.reference_sample,
                                                      reference.n_rows())
                             : std::min<Eigen::Index>(submitted.X.rows(),
                                                      reference.n_rows());
  Eigen::MatrixXd sample(m, reference.d());
  if (m == reference.n_rows()) {
    sample = reference.X;  // degenerate case: compare against all of it
  } else {
    Rng rng = Rng::derive(seed, "uniformity");
    for (Eigen::Index i = 0; i < m; ++i)
      sample.row(i) = reference.X.row(
          static_cast<Eigen::Index>(rng.uniform_int(0, reference.n_rows() - 1)));
  }
  const Eigen::VectorXd fr = model.score(sample);
  const double mean_r = fr.mean();
  const double var_r =
      (fr.array() - mean_r).square().sum() / static_cast<double>(m);

  const double se = std::sqrt(var_b / std::max(n_eff, 1.0) +
                              var_r / static_cast<double>(m) + 1e-12);
  const double wald = (mean_b - mean_r) / se;

  DefenseVerdict v;
  v.defense = DefenseKind::background_uniformity;
  v.statistic = wald;
  v.threshold = cfg.wald_threshold;
  v.flagged = std::abs(wald) > cfg.wald_threshold;
  v.details = "mean_submitted=" + std::to_string(mean_b) +
              " mean_reference=" + std::to_string(mean_r) +
              " n_eff=" + std::to_string(n_eff);
  return v;
}

// ---------------------------------------------------------------------------
// Adversarial retraining
// ---------------------------------------------------------------------------

RetrainResult defense_adversarial_retraining(
    const models::ModelConfig& model_cfg, const tabular::Dataset& train,
    const Eigen::MatrixXd& adversarial_X, const Eigen::VectorXi& adversarial_y,
    const models::TrainedModel& baseline, const Eigen::MatrixXd& probe,
    const ModelExplainFn& explain_fn, const RetrainConfig& cfg) {
  if (adversarial_X.rows() != adversarial_y.size())
    throw DefenseError("adversarial_retraining: adversarial row/label mismatch");
  if (adversarial_X.rows() > 0 && adversarial_X.cols() != train.d())
    throw DefenseError("adversarial_retraining: adversarial dimension mismatch");

  tabular::Dataset augmented;
  augmented.schema = train.schema;
  augmented.protected_index = train.protected_index;
  augmented.X.resize(train.n_rows() + adversarial_X.rows(), train.d());
  augmented.y.resize(train.n_rows() + adversarial_X.rows());
  augmented.X.topRows(train.n_rows()) = train.X;
  augmented.y.head(train.n_rows()) = train.y;
  if (adversarial_X.rows() > 0) {
    augmented.X.bottomRows(adversarial_X.rows()) = adversarial_X;
    augmented.y.tail(adversarial_y.size()) = adversarial_y;
  }

  RetrainResult out;
  out.model = models::train_model(model_cfg, augmented);

  double sum_rs = 0.0;
  for (Eigen::Index i = 0; i < probe.rows(); ++i) {
    const Eigen::VectorXd x = probe.row(i).transpose();
    const auto before = explain_fn(baseline, x);
    const auto after = explain_fn(*out.model, x);
    sum_rs += num::spearman_rank_corr(explain::importance_ranks(before),
                                      explain::importance_ranks(after));
  }
  out.rank_stability =
      probe.rows() > 0 ? sum_rs / static_cast<double>(probe.rows()) : 1.0;

  out.verdict.defense = DefenseKind::adversarial_retraining;
  out.verdict.statistic = out.rank_stability;
  out.verdict.threshold = cfg.min_stability;
  out.verdict.flagged = out.rank_stability < cfg.min_stability;
  out.verdict.details =
      "probe_rows=" + std::to_string(probe.rows()) +
      " adversarial_rows=" + std::to_string(adversarial_X.rows());
  return out;
}

}  // namespace xai::defense
