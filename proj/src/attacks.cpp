#include "xai/attacks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "xai/numerics.hpp"
#include "xai/rng.hpp"

namespace xai::attack {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Taxonomy
// ---------------------------------------------------------------------------

std::string tactic_name(Tactic t) {
  switch (t) {
    case Tactic::FE: return "FE";
    case Tactic::ME: return "ME";
    case Tactic::BD: return "BD";
  }
  return "?";
}

std::string technique_name(Technique t) {
  switch (t) {
    case Technique::adversarial_model: return "adversarial_model";
    case Technique::data_manipulation: return "data_manipulation";
    case Technique::adversarial_example: return "adversarial_example";
    case Technique::model_manipulation: return "model_manipulation";
  }
  return "?";
}

std::string hardness_name(Hardness h) {
  switch (h) {
    case Hardness::easy: return "easy";
    case Hardness::medium: return "medium";
    case Hardness::hard: return "hard";
  }
  return "?";
}

std::string AttackTaxonomy::tactics_label() const {
  std::string out;
  for (const auto t : tactics) {
    if (!out.empty()) out += "+";
    out += tactic_name(t);
  }
  return out;
}

std::string AttackTaxonomy::techniques_label() const {
  std::string out;
  for (const auto t : techniques) {
    if (!out.empty()) out += "+";
    out += technique_name(t);
  }
  return out;
}

std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::output_shuffling: return "output_shuffling";
    case AttackKind::scaffolding_ood: return "scaffolding_ood";
    case AttackKind::data_poisoning: return "data_poisoning";
    case AttackKind::black_box: return "black_box";
    case AttackKind::makrut: return "makrut";
    case AttackKind::biased_sampling: return "biased_sampling";
  }
  return "?";
}

AttackKind attack_from_name(const std::string& name) {
  if (name == "output_shuffling") return AttackKind::output_shuffling;
  if (name == "scaffolding_ood") return AttackKind::scaffolding_ood;
  if (name == "data_poisoning") return AttackKind::data_poisoning;
  if (name == "black_box") return AttackKind::black_box;
  if (name == "makrut") return AttackKind::makrut;
  if (name == "biased_sampling") return AttackKind::biased_sampling;
  throw AttackError("unknown attack: " + name);
}

AttackTaxonomy taxonomy_of(AttackKind k) {
  switch (k) {
    case AttackKind::output_shuffling:
      return {{Tactic::FE},
              {Technique::data_manipulation, Technique::adversarial_model},
              Hardness::easy};
    case AttackKind::scaffolding_ood:
      return {{Tactic::FE, Tactic::BD},
              {Technique::adversarial_model},
              Hardness::medium};
    case AttackKind::data_poisoning:
      return {{Tactic::ME}, {Technique::adversarial_example}, Hardness::hard};
    case AttackKind::black_box:
      return {{Tactic::ME}, {Technique::adversarial_example}, Hardness::hard};
    case AttackKind::makrut:
      return {{Tactic::FE}, {Technique::model_manipulation}, Hardness::hard};
    case AttackKind::biased_sampling:
      return {{Tactic::FE}, {Technique::data_manipulation}, Hardness::hard};
  }
  throw AttackError("unknown attack kind");
}

namespace {

json taxonomy_json(const AttackTaxonomy& t) {
  return json{{"tactics", t.tactics_label()},
              {"techniques", t.techniques_label()},
              {"hardness", hardness_name(t.hardness)}};
}

}  // namespace

// ---------------------------------------------------------------------------
// 1. Output shuffling
// ---------------------------------------------------------------------------

std::string shuffle_variant_name(ShuffleVariant v) {
  switch (v) {
    case ShuffleVariant::swap: return "swap";
    case ShuffleVariant::dominance: return "dominance";
    case ShuffleVariant::mixing: return "mixing";
  }
  return "?";
}

ShuffleVariant shuffle_variant_from_name(const std::string& name) {
  if (name == "swap") return ShuffleVariant::swap;
  if (name == "dominance") return ShuffleVariant::dominance;
  if (name == "mixing") return ShuffleVariant::mixing;
  throw AttackError("unknown shuffle variant: " + name);
}

namespace {

std::uint64_t hash_batch(const Eigen::MatrixXd& X) {
  std::uint64_t h = 14695981039346656037ull;
  const auto* bytes = reinterpret_cast<const unsigned char*>(X.data());
  for (Eigen::Index i = 0; i < X.size() * static_cast<Eigen::Index>(sizeof(double)); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

OutputShufflingArtifact attack_output_shuffling(explain::ScoreFn base_scores,
                                                int protected_index,
                                                ShuffleVariant variant,
                                                double mixing_rate,
                                                std::uint64_t seed) {
  if (mixing_rate < 0.0 || mixing_rate > 1.0)
    throw AttackError("mixing_rate must be in [0,1]");

  auto wrapped = [base_scores, protected_index, variant, mixing_rate,
                  seed](const Eigen::MatrixXd& X) -> Eigen::VectorXd {
    Eigen::VectorXd scores = base_scores(X);
    const Eigen::Index n = X.rows();
    if (n < 2) return scores;
    if (protected_index >= X.cols())
      throw AttackError("output_shuffling: protected index out of range");

    // candidates sorted by score descending, index tie-break
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    auto privileged = [&](Eigen::Index row) {
      return X(row, protected_index) >= 0.5;
    };
    // mixing randomness depends only on (seed, batch contents), so the
    // wrapper is pure and thread-safe
    Rng rng(seed ^ hash_batch(X));
    // mixing = "medium" shuffling: each row participates in the aggressive
    // reordering with probability mixing_rate (1.0 recovers dominance,
    // 0.0 is the identity)
    std::vector<char> active(n, 1);
    if (variant == ShuffleVariant::mixing)
      for (Eigen::Index i = 0; i < n; ++i) active[i] = rng.bernoulli(mixing_rate);

    // a row is demoted when it is unprivileged and participating
    auto demoted = [&](Eigen::Index row) {
      return !privileged(row) && active[row];
    };

    if (variant == ShuffleVariant::swap) {
      // one adjacent-transposition pass
      for (Eigen::Index k = 0; k + 1 < n; ++k) {
        const Eigen::Index hi = order[k], lo = order[k + 1];
        if (!privileged(hi) && privileged(lo)) {
          std::swap(scores[hi], scores[lo]);
          std::swap(order[k], order[k + 1]);
        }
      }
    } else {
      // aggressive reordering: every demoted row sinks below every kept row
      // (the stable two-block partition is the fixpoint of repeated passes)
      std::vector<Eigen::Index> arranged;
      arranged.reserve(n);
      for (Eigen::Index r : order)
        if (!demoted(r)) arranged.push_back(r);
      for (Eigen::Index r : order)
        if (demoted(r)) arranged.push_back(r);
      const Eigen::VectorXd sorted_scores = [&] {
        Eigen::VectorXd v(n);
        for (Eigen::Index k = 0; k < n; ++k) v[k] = scores[order[k]];
        return v;
      }();
      for (Eigen::Index k = 0; k < n; ++k) scores[arranged[k]] = sorted_scores[k];
    }
    return scores;
  };

  OutputShufflingArtifact art;
  art.taxonomy = taxonomy_of(AttackKind::output_shuffling);
  art.wrapped = std::move(wrapped);
  art.variant = variant;
  art.mixing_rate = mixing_rate;
  art.seed = seed;
  return art;
}

std::string OutputShufflingArtifact::to_json() const {
  json j{{"attack", "output_shuffling"},
         {"taxonomy", taxonomy_json(taxonomy)},
         {"variant", shuffle_variant_name(variant)},
         {"mixing_rate", mixing_rate},
         {"seed", seed},
         {"payload", "wrapped scoring function"}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// 2. Scaffolding OOD
// ---------------------------------------------------------------------------

ScaffoldingArtifact attack_scaffolding_ood(const models::TrainedModel& biased,
                                           const models::TrainedModel& unbiased,
                                           const tabular::Dataset& train,
                                           int protected_index,
                                           const DetectorConfig& cfg) {
  const Eigen::Index n = train.n_rows();
  const int d = train.d();
  if (n < 10) throw AttackError("scaffolding: training set too small");
  Rng rng = Rng::derive(cfg.seed, "scaffolding");

  Eigen::VectorXd stdev(d);
  for (int j = 0; j < d; ++j) {
    const double mean = train.X.col(j).mean();
    stdev[j] =
        std::sqrt((train.X.col(j).array() - mean).square().sum() / double(n));
  }

  // labeled set (balanced): originals are in-distribution, LIME-style
  // (Gaussian noise) and SHAP-style (feature substitution) perturbations are
  // OOD; originals are duplicated so the classes stay 50/50
  Eigen::MatrixXd det_X(4 * n, d);
  Eigen::VectorXi det_y(4 * n);
  det_X.topRows(n) = train.X;
  det_X.middleRows(n, n) = train.X;
  det_y.head(2 * n).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) {
    // LIME-style: noise on numerical features
    Eigen::RowVectorXd lime_row = train.X.row(i);
    for (int j = 0; j < d; ++j)
      if (train.schema.columns[j].kind == tabular::FeatureKind::numerical)
        lime_row[j] += cfg.noise_scale * stdev[j] * rng.normal();
    det_X.row(2 * n + i) = lime_row;
    // SHAP-style: substitute features from a shuffled background row; at
    // least one feature always moves, as in any real coalition probe
    Eigen::RowVectorXd shap_row = train.X.row(i);
    int substituted = 0;
    for (int j = 0; j < d; ++j)
      if (rng.bernoulli(0.5)) {
        shap_row[j] =
            train.X(static_cast<Eigen::Index>(rng.uniform_int(0, n - 1)), j);
        ++substituted;
      }
    if (substituted == 0) {
      const int j = static_cast<int>(rng.uniform_int(0, d - 1));
      shap_row[j] =
          train.X(static_cast<Eigen::Index>(rng.uniform_int(0, n - 1)), j);
    }
    det_X.row(3 * n + i) = shap_row;
    det_y[2 * n + i] = 0;
    det_y[3 * n + i] = 0;
  }

  // augmented detector representation: raw features plus the distance to
  // the nearest training row — explainer probes sit off the training
  // manifold even when the raw marginals barely move
  const Eigen::Index ref_rows = std::min<Eigen::Index>(n, 512);
  auto reference = std::make_shared<Eigen::MatrixXd>(ref_rows, d);
  {
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Rng ref_rng = Rng::derive(cfg.seed, "scaffolding_ref");
    ref_rng.shuffle(order);
    for (Eigen::Index i = 0; i < ref_rows; ++i)
      reference->row(i) = train.X.row(order[i]);
  }
  auto augment = [reference](const Eigen::MatrixXd& X) {
    constexpr int kNeighbors = 5;
    Eigen::MatrixXd A(X.rows(), X.cols() + 2);
    A.leftCols(X.cols()) = X;
    std::vector<double> dists;
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      dists.clear();
      for (Eigen::Index r = 0; r < reference->rows(); ++r) {
        const double dist = (X.row(i) - reference->row(r)).squaredNorm();
        if (dist > 0.0) dists.push_back(dist);
      }
      const int k = std::min<int>(kNeighbors, static_cast<int>(dists.size()));
      std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
      double mean_k = 0.0;
      for (int q = 0; q < k; ++q) mean_k += std::sqrt(dists[q]);
      A(i, X.cols()) = k > 0 ? std::sqrt(dists[0]) : 0.0;
      A(i, X.cols() + 1) = k > 0 ? mean_k / k : 0.0;
    }
    return A;
  };

  tabular::Dataset det_ds;
  det_ds.schema = train.schema;
  det_ds.schema.columns.push_back({"__nn_dist", tabular::FeatureKind::numerical, {}});
  det_ds.schema.columns.push_back({"__knn_dist", tabular::FeatureKind::numerical, {}});
  det_ds.X = augment(det_X);
  det_ds.y = std::move(det_y);
  const auto det_split = tabular::split(det_ds, 0.2, cfg.seed ^ 0x5caffu);

  models::ModelConfig forest_cfg = models::ModelConfig::forest(cfg.seed);
  forest_cfg.params["n_trees"] = cfg.n_trees;
  forest_cfg.params["max_depth"] = cfg.max_depth;
  std::shared_ptr<models::TrainedModel> detector =
      models::train_model(forest_cfg, det_split.train);

  ScaffoldingArtifact art;
  art.taxonomy = taxonomy_of(AttackKind::scaffolding_ood);
  art.detector = detector;
  art.augment = std::move(augment);
  art.detector_accuracy = models::accuracy(*detector, det_split.test);
  art.seed = cfg.seed;
  if (models::accuracy(*detector, det_split.train) < 0.9)
    art.warnings.push_back(
        "detector training accuracy below 0.9; attack likely weak");

  const models::TrainedModel* biased_p = &biased;
  const models::TrainedModel* unbiased_p = &unbiased;
  const auto augment_fn = art.augment;
  art.routed = [biased_p, unbiased_p, detector, augment_fn,
                protected_index](const Eigen::MatrixXd& X) -> Eigen::VectorXd {
    const Eigen::VectorXd det = detector->score(augment_fn(X));
    Eigen::VectorXd out(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (det[i] >= 0.5) {
        out[i] = biased_p->score(X.row(i))[0];
      } else {
        Eigen::RowVectorXd row = X.row(i);
        row[protected_index] = 0.0;
        out[i] = unbiased_p->score(row)[0];
      }
    }
    return out;
  };
  return art;
}

double ScaffoldingArtifact::in_distribution_rate(const Eigen::MatrixXd& X) const {
  const Eigen::VectorXd det = detector->score(augment(X));
  return static_cast<double>((det.array() >= 0.5).count()) /
         static_cast<double>(X.rows());
}

std::string ScaffoldingArtifact::to_json() const {
  json j{{"attack", "scaffolding_ood"},
         {"taxonomy", taxonomy_json(taxonomy)},
         {"detector_accuracy", detector_accuracy},
         {"warnings", warnings},
         {"seed", seed},
         {"payload", "routing model"}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// 3. Genetic data poisoning
// ---------------------------------------------------------------------------

DataPoisoningArtifact attack_data_poisoning_genetic(
    const ExplainFn& explain_fn, const explain::ScoreFn& model,
    const Eigen::VectorXd& x, const explain::Attribution& target_map,
    const std::vector<bool>& perturbable, const GaConfig& cfg) {
  const int d = static_cast<int>(x.size());
  if (target_map.values.size() != d)
    throw AttackError("data_poisoning: target map dimension mismatch");
  if (static_cast<int>(perturbable.size()) != d)
    throw AttackError("data_poisoning: perturbable mask dimension mismatch");
  if (std::none_of(perturbable.begin(), perturbable.end(),
                   [](bool b) { return b; }))
    throw AttackError("data_poisoning: empty perturbable mask");
  if (cfg.population < 2 || cfg.tournament_k < 1)
    throw AttackError("data_poisoning: invalid GA configuration");

  const double alpha = 2.0 / (static_cast<double>(d) * (d - 1));
  const auto target_order = explain::importance_ordering(target_map.values);

  auto fitness = [&](const Eigen::VectorXd& cand) {
    const auto attr = explain_fn(cand);
    const double l1 = (attr.values - target_map.values).cwiseAbs().sum();
    const auto order = explain::importance_ordering(attr.values);
    const double tau = static_cast<double>(
        num::kendall_tau_distance(order, target_order));
    return l1 + alpha * tau;
  };

  Rng rng = Rng::derive(cfg.seed, "data_poisoning");
  std::vector<Eigen::VectorXd> pop(cfg.population, x);
  for (int i = 1; i < cfg.population; ++i)
    for (int j = 0; j < d; ++j)
      if (perturbable[j]) pop[i][j] += cfg.mutation_std * rng.normal();

  std::vector<double> fit(cfg.population);
  for (int i = 0; i < cfg.population; ++i) fit[i] = fitness(pop[i]);

  auto best_index = [&]() {
    return static_cast<int>(
        std::min_element(fit.begin(), fit.end()) - fit.begin());
  };

  DataPoisoningArtifact art;
  art.taxonomy = taxonomy_of(AttackKind::data_poisoning);
  art.original = x;
  art.seed = cfg.seed;
  art.fitness_trace.push_back(fit[best_index()]);

  auto tournament = [&]() -> const Eigen::VectorXd& {
    int winner = static_cast<int>(rng.uniform_int(0, cfg.population - 1));
    for (int k = 1; k < cfg.tournament_k; ++k) {
      const int cand = static_cast<int>(rng.uniform_int(0, cfg.population - 1));
      if (fit[cand] < fit[winner]) winner = cand;
    }
    return pop[winner];
  };

  for (int gen = 0; gen < cfg.generations; ++gen) {
    const int elite = best_index();
    std::vector<Eigen::VectorXd> next;
    next.reserve(cfg.population);
    next.push_back(pop[elite]);  // elitism of 1
    while (static_cast<int>(next.size()) < cfg.population) {
      Eigen::VectorXd child = tournament();
      const Eigen::VectorXd& other = tournament();
      for (int j = 0; j < d; ++j) {
        if (rng.bernoulli(cfg.crossover_rate)) child[j] = other[j];
        if (perturbable[j] && rng.bernoulli(0.5))
          child[j] += cfg.mutation_std * rng.normal();
        if (!perturbable[j]) child[j] = x[j];
      }
      next.push_back(std::move(child));
    }
    pop = std::move(next);
    for (int i = 0; i < cfg.population; ++i) fit[i] = fitness(pop[i]);
    art.fitness_trace.push_back(
        std::min(art.fitness_trace.back(), fit[best_index()]));
  }

  const int best = best_index();
  art.perturbed = pop[best];
  art.fitness = std::min(fit[best], art.fitness_trace.back());
  const double s_orig = model(x.transpose())[0];
  const double s_pert = model(art.perturbed.transpose())[0];
  art.prediction_preserved = (s_orig >= 0.5) == (s_pert >= 0.5);
  return art;
}

std::string DataPoisoningArtifact::to_json() const {
  json j{{"attack", "data_poisoning"},
         {"taxonomy", taxonomy_json(taxonomy)},
         {"fitness", fitness},
         {"generations", fitness_trace.size() - 1},
         {"prediction_preserved", prediction_preserved},
         {"perturbation_l1", (perturbed - original).cwiseAbs().sum()},
         {"seed", seed}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// 4. Black box
// ---------------------------------------------------------------------------

namespace {

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // d x k

  double reconstruction_error(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd c = x - mean;
    const Eigen::VectorXd proj = components * (components.transpose() * c);
    return (c - proj).squaredNorm();
  }
};

PcaModel fit_pca(const Eigen::MatrixXd& reference, int k) {
  PcaModel m;
  m.mean = reference.colwise().mean();
  Eigen::MatrixXd c = reference.rowwise() - m.mean.transpose();
  Eigen::MatrixXd cov =
      c.transpose() * c / std::max<double>(1.0, double(reference.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  const int d = static_cast<int>(reference.cols());
  k = std::min(k, d);
  // eigenvalues ascending: take the trailing k columns
  m.components = es.eigenvectors().rightCols(k);
  return m;
}

}  // namespace

BlackBoxArtifact attack_black_box(const models::TrainedModel& model,
                                  const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& target_expl,
                                  const Eigen::MatrixXd& reference,
                                  const BlackBoxConfig& cfg) {
  if (!model.differentiable())
    throw models::CapabilityError("attack_black_box requires a differentiable model");
  if (std::abs(target_expl.sum() - 1.0) > 1e-6 || target_expl.minCoeff() < 0.0)
    throw AttackError("black_box: target explanation must be a distribution");
  const auto t0 = std::chrono::steady_clock::now();
  const int d = static_cast<int>(x.size());
  const Eigen::VectorXd baseline = Eigen::VectorXd::Zero(d);
  const PcaModel pca = fit_pca(reference, cfg.pca_components);
  const int y0 = model.hard_label(x);
  const double dir = y0 == 1 ? 1.0 : -1.0;

  auto explain_kl = [&](const Eigen::VectorXd& cand) {
    const auto attr =
        explain::integrated_gradients(model, cand, baseline, cfg.ig_steps);
    if (attr.values.cwiseAbs().sum() <= 0.0)
      return std::numeric_limits<double>::infinity();
    return num::kl_divergence(explain::normalize_attribution(attr),
                              target_expl);
  };
  auto loss = [&](const Eigen::VectorXd& cand) {
    const double kl = explain_kl(cand);
    if (!std::isfinite(kl)) return kl;
    const double s = model.score_one(cand);
    const double hinge = std::max(0.0, 0.05 - dir * (s - 0.5));
    return kl + cfg.c1 * hinge + cfg.c2 * (cand - x).cwiseAbs().sum() +
           cfg.c3 * pca.reconstruction_error(cand);
  };

  Eigen::VectorXd cur = x;
  double cur_loss = loss(cur);
  // the target is already met at zero perturbation: nothing to optimize
  const bool already_met = explain_kl(x) < 1e-9;
  double step = already_met ? 0.0 : cfg.initial_step;
  for (int iter = 0; iter < cfg.max_iters && step > 1e-3; ++iter) {
    bool improved = false;
    for (int j = 0; j < d; ++j) {
      for (const double delta : {step, -step}) {
        Eigen::VectorXd cand = cur;
        cand[j] += delta;
        const double l = loss(cand);
        if (l < cur_loss - 1e-12) {
          cur = std::move(cand);
          cur_loss = l;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }

  BlackBoxArtifact art;
  art.taxonomy = taxonomy_of(AttackKind::black_box);
  art.original = x;
  art.adversarial = cur;
  art.kl = explain_kl(cur);
  art.label_preserved = model.hard_label(cur) == y0;
  art.success = art.label_preserved && art.kl < cfg.kl_threshold;
  art.seed = cfg.seed;

  const auto before =
      explain::integrated_gradients(model, x, baseline, cfg.ig_steps);
  const auto after =
      explain::integrated_gradients(model, cur, baseline, cfg.ig_steps);
  art.spearman = num::spearman_rank_corr(explain::importance_ranks(before),
                                         explain::importance_ranks(after));
  art.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return art;
}

std::string BlackBoxArtifact::to_json() const {
  json j{{"attack", "black_box"},
         {"taxonomy", taxonomy_json(taxonomy)},
         {"success", success},
         {"label_preserved", label_preserved},
         {"kl", kl},
         {"spearman", spearman},
         {"runtime_seconds", runtime_seconds},
         {"perturbation_l1", (adversarial - original).cwiseAbs().sum()},
         {"seed", seed}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// 5. Makrut
// ---------------------------------------------------------------------------

namespace {

void accumulate(models::MlpModel::ParamGrads& into,
                const models::MlpModel::ParamGrads& other) {
  for (std::size_t l = 0; l < into.dW.size(); ++l) {
    into.dW[l] += other.dW[l];
    into.db[l] += other.db[l];
  }
}

double hard_label_agreement(const models::TrainedModel& a,
                            const models::TrainedModel& b,
                            const Eigen::MatrixXd& X) {
  const Eigen::VectorXd sa = a.score(X);
  const Eigen::VectorXd sb = b.score(X);
  Eigen::Index same = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if ((sa[i] >= 0.5) == (sb[i] >= 0.5)) ++same;
  return static_cast<double>(same) / static_cast<double>(X.rows());
}

}  // namespace

MakrutArtifact attack_makrut(const models::MlpModel& model,
                             const tabular::Dataset& train,
                             const Eigen::VectorXd& target_relevance,
                             const MakrutConfig& cfg) {
  const Eigen::Index n = train.n_rows();
  const int d = train.d();
  if (target_relevance.size() != d)
    throw AttackError("makrut: target relevance dimension mismatch");
  Eigen::VectorXd tw = cfg.target_weight.size() == 0
                           ? Eigen::VectorXd::Ones(d)
                           : cfg.target_weight;
  if (tw.size() != d)
    throw AttackError("makrut: target weight dimension mismatch");

  Rng rng = Rng::derive(cfg.seed, "makrut");

  // fixed anchors with fixed perturbation neighborhoods and kernel weights;
  // the surrogate coefficients beta = A * f(Z) are then linear in the model
  // outputs, which makes the explanation loss differentiable in theta
  struct Neighborhood {
    Eigen::MatrixXd Z;   // n_perturb x d
    Eigen::MatrixXd A;   // d x n_perturb (coefficient rows of the ridge map)
  };
  const double kw = 0.75 * std::sqrt(static_cast<double>(d));
  std::vector<Neighborhood> anchors;
  for (int a = 0; a < cfg.n_anchors; ++a) {
    const Eigen::Index row =
        static_cast<Eigen::Index>(rng.uniform_int(0, n - 1));
    Neighborhood nb;
    nb.Z.resize(cfg.n_perturb, d);
    Eigen::VectorXd w(cfg.n_perturb);
    for (int i = 0; i < cfg.n_perturb; ++i) {
      double dist2 = 0.0;
      for (int j = 0; j < d; ++j) {
        const double noise = i == 0 ? 0.0 : rng.normal();
        nb.Z(i, j) = train.X(row, j) + noise;
        dist2 += noise * noise;
      }
      w[i] = std::exp(-dist2 / (kw * kw));
    }
    // ridge with intercept: beta = (Zt W Z + lambda I)^-1 Zt W f(Z)
    Eigen::MatrixXd Zi(cfg.n_perturb, d + 1);
    Zi.leftCols(d) = nb.Z;
    Zi.col(d).setOnes();
    Eigen::MatrixXd G = Zi.transpose() * w.asDiagonal() * Zi;
    G.diagonal().head(d).array() += cfg.ridge_lambda;
    Eigen::MatrixXd full = G.ldlt().solve(Zi.transpose() * w.asDiagonal());
    nb.A = full.topRows(d);
    anchors.push_back(std::move(nb));
  }

  auto manipulated = std::make_unique<models::MlpModel>(model.layers(),
                                                        model.dim());
  models::AdamState adam = models::AdamState::like(*manipulated);
  const Eigen::VectorXd y0 =
      model.score(train.X).unaryExpr([](double s) { return s >= 0.5 ? 1.0 : 0.0; });

  MakrutArtifact art;
  art.taxonomy = taxonomy_of(AttackKind::makrut);
  art.seed = cfg.seed;

  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<models::MlpModel::Layer> snapshot = manipulated->layers();
  double snapshot_agreement = 1.0;
  int snapshot_epoch = 0;
  int anchor_cursor = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd Xb(bs, d);
      Eigen::VectorXd yb(bs);
      for (Eigen::Index i = 0; i < bs; ++i) {
        Xb.row(i) = train.X.row(order[start + i]);
        yb[i] = y0[order[start + i]];
      }
      // lambda1 * cross-entropy to the original hard labels
      const Eigen::VectorXd p =
          manipulated->logits(Xb).unaryExpr(
              [](double z) { return models::sigmoid(z); });
      Eigen::VectorXd g_ce =
          cfg.lambda1 * (p - yb) / static_cast<double>(bs);
      auto grads = manipulated->backward(Xb, g_ce);

      // lambda2 * surrogate-coefficient loss on one anchor per step; the
      // surrogate is fitted on the logit output so its gradient does not
      // vanish on saturated models
      const Neighborhood& nb = anchors[anchor_cursor];
      anchor_cursor = (anchor_cursor + 1) % static_cast<int>(anchors.size());
      const Eigen::VectorXd beta = nb.A * manipulated->logits(nb.Z);
      const Eigen::VectorXd dbeta =
          2.0 * tw.cwiseProduct(beta - target_relevance);
      const Eigen::VectorXd g_expl = cfg.lambda2 *
                                     (nb.A.transpose() * dbeta) /
                                     static_cast<double>(cfg.n_perturb);
      accumulate(grads, manipulated->backward(nb.Z, g_expl));

      adam.step(*manipulated, grads, cfg.lr);
    }
    const double agreement = hard_label_agreement(model, *manipulated, train.X);
    if (agreement < cfg.agreement_floor) {
      // revert to the last epoch that respected the agreement constraint
      manipulated->layers() = snapshot;
      art.hard_label_agreement = snapshot_agreement;
      art.epochs_run = snapshot_epoch;
      art.manipulated = std::move(manipulated);
      return art;
    }
    snapshot = manipulated->layers();
    snapshot_agreement = agreement;
    snapshot_epoch = epoch + 1;
  }

  art.hard_label_agreement = snapshot_agreement;
  art.epochs_run = snapshot_epoch;
  art.manipulated = std::move(manipulated);
  return art;
}

std::string MakrutArtifact::to_json() const {
  json j{{"attack", "makrut"},
         {"taxonomy", taxonomy_json(taxonomy)},
         {"hard_label_agreement", hard_label_agreement},
         {"epochs_run", epochs_run},
         {"seed", seed},
         {"payload", "manipulated model (models-module save format)"}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// 6. Biased background sampling
// ---------------------------------------------------------------------------

namespace {

// signed mean attribution of the protected feature over the panel, for a
// given set of background weights
double signed_gsv(const models::TrainedModel& model,
                  const Eigen::MatrixXd& panel, const explain::Background& bg,
                  int protected_index, const BiasedSamplingConfig& cfg,
                  explain::GlobalAttribution* out_global) {
  std::vector<explain::Attribution> attrs;
  for (Eigen::Index i = 0; i < panel.rows(); ++i) {
    const Eigen::VectorXd x = panel.row(i).transpose();
    if (cfg.explainer == BiasedSamplingConfig::Explainer::linear) {
      attrs.push_back(explain::linear_shap(model, x, bg));
    } else {
      explain::ExplainerConfig ecfg;
      ecfg.n_samples = cfg.kernel_samples;
      ecfg.seed = cfg.seed;
      attrs.push_back(
          explain::kernel_shap(explain::score_fn_of(model), x, bg, ecfg));
    }
  }
  const auto g = explain::global_aggregate(attrs);
  if (out_global) *out_global = g;
  return g.signed_mean[protected_index];
}

}  // namespace

BiasedSamplingArtifact attack_biased_sampling(const models::TrainedModel& model,
                                              const tabular::Dataset& background,
                                              const Eigen::MatrixXd& panel,
                                              int protected_index,
                                              const BiasedSamplingConfig& cfg) {
  const Eigen::Index n = background.n_rows();
  if (n < 2) throw AttackError("biased_sampling: background too small");
  if (cfg.lambda < 0.0) throw AttackError("biased_sampling: lambda must be >= 0");
  const int mass = cfg.total_mass > 0 ? cfg.total_mass : static_cast<int>(n);
  if (mass > n)
    throw AttackError("biased_sampling: total mass exceeds background size");

  explain::Background uniform_bg;
  uniform_bg.X = background.X;

  BiasedSamplingArtifact art;
  art.taxonomy = taxonomy_of(AttackKind::biased_sampling);
  art.seed = cfg.seed;
  art.gsv_before = signed_gsv(model, panel, uniform_bg, protected_index, cfg,
                              &art.before);
  const double sign = art.gsv_before >= 0.0 ? 1.0 : -1.0;

  // per-row marginal contribution of one unit of mass on row j to the signed
  // GSV; for the linear explainer the GSV is exactly linear in the weights
  Eigen::VectorXd contrib(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    explain::Background single;
    single.X = background.X.row(j);
    contrib[j] =
        signed_gsv(model, panel, single, protected_index, cfg, nullptr) /
        static_cast<double>(mass);
  }

  // bipartite min-cost flow: every original row supplies one unit; moving it
  // to candidate row j pays the lambda-scaled per-feature L1 ground distance
  // plus the (sign-aligned) attribution contribution of row j
  num::FlowNetwork net;
  net.node_count = static_cast<int>(2 * n) + 2;
  net.source = 0;
  net.sink = static_cast<int>(2 * n) + 1;
  net.required_flow = mass;
  for (Eigen::Index i = 0; i < n; ++i)
    net.arcs.push_back({0, static_cast<int>(i) + 1, 1, 0.0});
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      const double ground =
          (background.X.row(i) - background.X.row(j)).cwiseAbs().sum();
      net.arcs.push_back({static_cast<int>(i) + 1,
                          static_cast<int>(n + j) + 1, 1,
                          cfg.lambda * ground});
    }
  for (Eigen::Index j = 0; j < n; ++j)
    net.arcs.push_back({static_cast<int>(n + j) + 1, net.sink, mass,
                        sign * contrib[j]});

  const auto flow = num::min_cost_flow(net);
  art.flow_cost = flow.total_cost;
  art.weights = Eigen::VectorXd::Zero(n);
  const std::size_t sink_arcs_start = net.arcs.size() - static_cast<std::size_t>(n);
  for (Eigen::Index j = 0; j < n; ++j)
    art.weights[j] = flow.arc_flows[sink_arcs_start + static_cast<std::size_t>(j)];

  // the sign-linearized objective can overshoot past zero and flip the GSV
  // to a larger magnitude; replay the solution's unit moves greedily from
  // the uniform weights and stop once |GSV| stops shrinking (only valid
  // when the uniform start is feasible, i.e. mass == |B|)
  if (mass == static_cast<int>(n)) {
    struct Move {
      Eigen::Index from, to;
      double delta;  // change of the signed GSV estimate
    };
    std::vector<Move> moves;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const std::size_t arc =
            static_cast<std::size_t>(n + i * n + j);
        if (flow.arc_flows[arc] > 0) moves.push_back({i, j, contrib[j] - contrib[i]});
      }
    std::sort(moves.begin(), moves.end(), [&](const Move& a, const Move& b) {
      if (sign * a.delta != sign * b.delta)
        return sign * a.delta < sign * b.delta;
      return std::tie(a.from, a.to) < std::tie(b.from, b.to);
    });
    Eigen::VectorXd trimmed = Eigen::VectorXd::Ones(n);
    double gsv_est = contrib.sum();  // uniform weights, one unit per row
    for (const Move& mv : moves) {
      if (std::abs(gsv_est + mv.delta) >= std::abs(gsv_est)) break;
      gsv_est += mv.delta;
      trimmed[mv.from] -= 1.0;
      trimmed[mv.to] += 1.0;
    }
    art.weights = trimmed;
  }

  explain::Background biased_bg;
  biased_bg.X = background.X;
  biased_bg.weights = art.weights;
  art.gsv_after = signed_gsv(model, panel, biased_bg, protected_index, cfg,
                             &art.after);

  // transport budget actually spent, summed per feature
  const Eigen::VectorXd wu =
      Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  const Eigen::VectorXd wb = art.weights / art.weights.sum();
  for (int f = 0; f < background.d(); ++f) {
    std::vector<num::WeightedSample> a, b;
    for (Eigen::Index i = 0; i < n; ++i) {
      a.push_back({background.X(i, f), wu[i]});
      if (wb[i] > 0.0) b.push_back({background.X(i, f), wb[i]});
    }
    art.wasserstein_spent += num::wasserstein_1d(std::move(a), std::move(b));
  }
  return art;
}

std::string BiasedSamplingArtifact::to_json() const {
  json j{{"attack", "biased_sampling"},
         {"taxonomy", taxonomy_json(taxonomy)},
         {"gsv_before", gsv_before},
         {"gsv_after", gsv_after},
         {"wasserstein_spent", wasserstein_spent},
         {"flow_cost", flow_cost},
         {"weights", std::vector<double>(weights.data(),
                                         weights.data() + weights.size())},
         {"seed", seed}};
  return j.dump();
}

}  // namespace xai::attack
