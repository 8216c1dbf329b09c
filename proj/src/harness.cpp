#include "xai/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "xai/numerics.hpp"
#include "xai/rng.hpp"

namespace xai::harness {

using nlohmann::json;

double AttackSpec::get(const std::string& key, double fallback) const {
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

tabular::FeatureSchema schema_from_json(const json& cols) {
  tabular::FeatureSchema schema;
  for (const auto& c : cols) {
    tabular::Column col;
    col.name = c.at("name").get<std::string>();
    const std::string kind = c.at("kind").get<std::string>();
    if (kind == "numerical") {
      col.kind = tabular::FeatureKind::numerical;
    } else if (kind == "categorical") {
      col.kind = tabular::FeatureKind::categorical;
      col.categories = c.at("categories").get<std::vector<std::string>>();
    } else {
      throw ConfigError("unknown column kind '" + kind + "'");
    }
    schema.columns.push_back(std::move(col));
  }
  return schema;
}

models::ModelConfig model_config_from_json(const json& m, std::uint64_t seed,
                                           std::string* name_out) {
  const std::string kind = m.at("kind").get<std::string>();
  models::ModelConfig cfg;
  if (kind == "logistic") cfg = models::ModelConfig::logistic(seed);
  else if (kind == "gbt") cfg = models::ModelConfig::gbt(seed);
  else if (kind == "mlp_a") cfg = models::ModelConfig::mlp_a(seed);
  else if (kind == "mlp_b") cfg = models::ModelConfig::mlp_b(seed);
  else if (kind == "forest") cfg = models::ModelConfig::forest(seed);
  else throw ConfigError("unknown model kind '" + kind + "'");
  if (m.contains("params"))
    for (const auto& [key, val] : m.at("params").items())
      cfg.params[key] = val.get<double>();
  *name_out = m.value("name", kind);
  return cfg;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    ExperimentConfig cfg;
    cfg.master_seed = j.value("seed", std::uint64_t{0});

    const json& ds = j.at("dataset");
    if (ds.contains("synthetic")) {
      const json& s = ds.at("synthetic");
      SyntheticSpec spec;
      spec.n_rows = s.value("n_rows", 500);
      spec.d_numerical = s.value("d_numerical", 6);
      spec.bias_strength = s.value("bias_strength", 0.8);
      cfg.synthetic = spec;
    } else if (ds.contains("csv")) {
      const json& c = ds.at("csv");
      CsvSpec spec;
      spec.path = c.at("path").get<std::string>();
      spec.schema = schema_from_json(c.at("columns"));
      spec.label_column = c.at("label_column").get<std::string>();
      spec.positive_label = c.at("positive_label").get<std::string>();
      cfg.csv = spec;
    } else {
      throw ConfigError("dataset must specify 'synthetic' or 'csv'");
    }
    cfg.protected_feature =
        j.value("protected_feature", std::string("protected"));
    cfg.corr_threshold = j.value("corr_threshold", 0.35);
    cfg.test_fraction = j.value("test_fraction", 0.2);

    if (!j.contains("models") || j.at("models").empty())
      throw ConfigError("config must list at least one model");
    for (const auto& m : j.at("models")) {
      std::string name;
      cfg.model_configs.push_back(
          model_config_from_json(m, cfg.master_seed, &name));
      if (std::find(cfg.model_names.begin(), cfg.model_names.end(), name) !=
          cfg.model_names.end())
        throw ConfigError("duplicate model name '" + name + "'");
      cfg.model_names.push_back(name);
    }

    if (j.contains("explainer")) {
      const json& e = j.at("explainer");
      cfg.explainer = explain::method_from_name(
          e.value("method", std::string("kernel_shap")));
      cfg.explainer_cfg.n_samples = e.value("n_samples", 2048);
      cfg.explainer_cfg.kernel_width = e.value("kernel_width", -1.0);
      cfg.explainer_cfg.ridge_lambda = e.value("ridge_lambda", 1e-3);
      cfg.explainer_cfg.ig_steps = e.value("ig_steps", 200);
    }
    cfg.panel_size = j.value("panel_size", 50);
    cfg.background_size = j.value("background_size", 100);

    for (const auto& a : j.value("attacks", json::array())) {
      AttackSpec spec;
      spec.kind = attack::attack_from_name(a.at("name").get<std::string>());
      spec.variant = a.value("variant", std::string());
      if (spec.kind == attack::AttackKind::output_shuffling) {
        if (spec.variant.empty()) spec.variant = "swap";
        attack::shuffle_variant_from_name(spec.variant);  // validate
      }
      if (a.contains("params"))
        for (const auto& [key, val] : a.at("params").items())
          spec.params[key] = val.get<double>();
      cfg.attacks.push_back(std::move(spec));
    }
    for (const auto& dname : j.value("defenses", json::array()))
      cfg.defenses.push_back(
          defense::defense_from_name(dname.get<std::string>()));

    if (j.contains("thresholds")) {
      const json& t = j.at("thresholds");
      cfg.thresholds.fe_epsilon1_rel = t.value("fe_epsilon1_rel", 0.1);
      cfg.thresholds.fe_epsilon2_rel = t.value("fe_epsilon2_rel", 0.25);
      cfg.thresholds.me_delta = t.value("me_delta", 0.7);
      cfg.thresholds.asr_kl = t.value("asr_kl", 0.05);
    }
    cfg.out_dir = j.value("out_dir", std::string("out"));
    cfg.n_jobs = j.value("jobs", 0);
    cfg.validate();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const attack::AttackError& e) {
    throw ConfigError(e.what());
  } catch (const defense::DefenseError& e) {
    throw ConfigError(e.what());
  } catch (const explain::ExplainerError& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void ExperimentConfig::validate() const {
  if (!synthetic && !csv) throw ConfigError("no dataset source configured");
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw ConfigError("test_fraction must be in (0,1)");
  if (panel_size < 1) throw ConfigError("panel_size must be >= 1");
  if (thresholds.asr_kl <= 0.0) throw ConfigError("asr_kl must be > 0");
  if (csv) {
    if (csv->schema.index_of(protected_feature) < 0 &&
        !protected_feature.empty())
      throw ConfigError("protected feature '" + protected_feature +
                        "' is not a schema column");
  }
  for (const auto& m : model_configs) (void)m;  // validated at training time
}

// ---------------------------------------------------------------------------
// Evaluation metrics
// ---------------------------------------------------------------------------

FeResult evaluate_fe_success(const explain::GlobalAttribution& before,
                             const explain::GlobalAttribution& after,
                             int protected_index, double epsilon1,
                             double epsilon2) {
  const Eigen::Index d = before.mean_abs.size();
  if (after.mean_abs.size() != d)
    throw RuntimeError("evaluate_fe_success: dimension mismatch");
  if (protected_index < 0 || protected_index >= d)
    throw RuntimeError("evaluate_fe_success: protected index out of range");

  FeResult r;
  r.epsilon1 = epsilon1;
  r.epsilon2 = epsilon2;
  r.protected_before = before.mean_abs[protected_index];
  r.protected_after = after.mean_abs[protected_index];
  for (Eigen::Index jf = 0; jf < d; ++jf) {
    if (jf == protected_index) continue;
    const double delta = std::abs(after.mean_abs[jf] - before.mean_abs[jf]);
    if (delta > r.max_other_delta) {
      r.max_other_delta = delta;
      r.violating_feature = static_cast<int>(jf);
    }
  }
  r.success =
      r.protected_after < epsilon1 && r.max_other_delta < epsilon2;
  if (r.max_other_delta < epsilon2) r.violating_feature = -1;
  r.rank_before = num::ranks_descending(before.mean_abs)[protected_index];
  r.rank_after = num::ranks_descending(after.mean_abs)[protected_index];
  return r;
}

double evaluate_me(const explain::Attribution& before,
                   const explain::Attribution& after) {
  return num::spearman_rank_corr(explain::importance_ranks(before),
                                 explain::importance_ranks(after));
}

double evaluate_asr(const std::vector<AsrSample>& results,
                    double kl_threshold) {
  if (results.empty()) throw RuntimeError("evaluate_asr: empty sample list");
  std::size_t ok = 0;
  for (const auto& s : results)
    if (s.label_preserved && s.kl < kl_threshold) ++ok;
  return static_cast<double>(ok) / static_cast<double>(results.size());
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace {

bool is_score_based(explain::Method m) {
  return m == explain::Method::kernel_shap ||
         m == explain::Method::permutation_shap || m == explain::Method::lime;
}

/// Explainer usable on an attacked scoring surface. Falls back to
/// permutation SHAP when the configured method needs model internals.
explain::Method surface_method(explain::Method configured) {
  return is_score_based(configured) ? configured
                                    : explain::Method::permutation_shap;
}

explain::GlobalAttribution panel_global(const explain::PanelRequest& req,
                                        const Eigen::MatrixXd& panel,
                                        int n_jobs) {
  return explain::global_aggregate(
      explain::explain_panel_parallel(req, panel, n_jobs));
}

double label_agreement(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::Index same = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if ((a[i] >= 0.5) == (b[i] >= 0.5)) ++same;
  return static_cast<double>(same) / static_cast<double>(a.size());
}

struct Stage {
  const char* name;
};

[[noreturn]] void stage_fail(const char* stage, const std::exception& e) {
  throw RuntimeError(std::string("[") + stage + "] " + e.what());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.master_seed = cfg.master_seed;

  // --- data ---------------------------------------------------------------
  tabular::Dataset raw;
  try {
    if (cfg.synthetic) {
      raw = tabular::generate_synthetic_biased(
          cfg.synthetic->n_rows, cfg.synthetic->d_numerical,
          cfg.synthetic->bias_strength,
          Rng::derive(cfg.master_seed, "data").next_u64());
    } else {
      raw = tabular::load_csv_dataset(cfg.csv->path, cfg.csv->schema,
                                      cfg.csv->label_column,
                                      cfg.csv->positive_label);
    }
    if (!cfg.protected_feature.empty()) {
      const int idx = raw.schema.index_of(cfg.protected_feature);
      if (idx < 0)
        throw ConfigError("protected feature '" + cfg.protected_feature +
                          "' not found in the dataset");
      raw.protected_index = idx;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    stage_fail("ingest", e);
  }

  tabular::SplitPair splits;
  int prot = -1;
  try {
    auto pre = tabular::preprocess(raw, cfg.corr_threshold);
    splits = tabular::split(pre.data, cfg.test_fraction,
                            Rng::derive(cfg.master_seed, "split").next_u64());
    if (!splits.train.protected_index)
      throw RuntimeError("protected feature required for attack experiments");
    prot = *splits.train.protected_index;
  } catch (const std::exception& e) {
    stage_fail("preprocess", e);
  }
  const tabular::Dataset& train = splits.train;
  const tabular::Dataset& test = splits.test;
  const int d = train.d();

  // panel: uniformly selected test instances
  Eigen::MatrixXd panel;
  {
    std::vector<Eigen::Index> rows(test.n_rows());
    std::iota(rows.begin(), rows.end(), 0);
    Rng rng = Rng::derive(cfg.master_seed, "panel");
    rng.shuffle(rows);
    const Eigen::Index np =
        std::min<Eigen::Index>(cfg.panel_size, test.n_rows());
    panel.resize(np, d);
    for (Eigen::Index i = 0; i < np; ++i) panel.row(i) = test.X.row(rows[i]);
  }
  const explain::Background background = explain::Background::of(
      test, cfg.background_size, Rng::derive(cfg.master_seed, "bg").next_u64());

  // --- models ---------------------------------------------------------------
  std::vector<std::unique_ptr<models::TrainedModel>> trained;
  try {
    for (std::size_t m = 0; m < cfg.model_configs.size(); ++m) {
      models::ModelConfig mc = cfg.model_configs[m];
      mc.seed = Rng::derive(cfg.master_seed, "model/" + cfg.model_names[m])
                    .next_u64();
      trained.push_back(models::train_model(mc, train));
      BaselineMetrics bm;
      bm.model = cfg.model_names[m];
      bm.accuracy = models::accuracy(*trained.back(), test);
      bm.f1 = models::f1_score(*trained.back(), test);
      bm.seed = mc.seed;
      report.baselines.push_back(bm);
    }
  } catch (const std::exception& e) {
    stage_fail("train", e);
  }

  const explain::Method surf = surface_method(cfg.explainer);

  auto make_request = [&](const models::TrainedModel* model,
                          explain::ScoreFn score, explain::Method method,
                          std::uint64_t seed) {
    explain::PanelRequest req;
    req.method = method;
    req.model = model;
    req.score = std::move(score);
    req.schema = &train.schema;
    req.background = background;
    req.cfg = cfg.explainer_cfg;
    req.cfg.seed = seed;
    return req;
  };

  // per-model baseline panel attributions on the raw scoring surface
  std::vector<explain::GlobalAttribution> baseline_global(trained.size());
  std::vector<std::vector<explain::Attribution>> baseline_attrs(trained.size());
  try {
    for (std::size_t m = 0; m < trained.size(); ++m) {
      const auto seed =
          Rng::derive(cfg.master_seed, "explain/" + cfg.model_names[m])
              .next_u64();
      baseline_attrs[m] = explain::explain_panel_parallel(
          make_request(trained[m].get(),
                       explain::score_fn_of(*trained[m]), surf, seed),
          panel, cfg.n_jobs);
      baseline_global[m] = explain::global_aggregate(baseline_attrs[m]);
    }
  } catch (const std::exception& e) {
    stage_fail("explain", e);
  }

  auto has_defense = [&](defense::DefenseKind k) {
    return std::find(cfg.defenses.begin(), cfg.defenses.end(), k) !=
           cfg.defenses.end();
  };
  auto fe_epsilons = [&](const explain::GlobalAttribution& before,
                         double* e1, double* e2) {
    *e1 = cfg.thresholds.fe_epsilon1_rel * before.mean_abs[prot];
    double other = 0.0;
    for (Eigen::Index jf = 0; jf < before.mean_abs.size(); ++jf)
      if (jf != prot) other += before.mean_abs[jf];
    other /= static_cast<double>(before.mean_abs.size() - 1);
    *e2 = cfg.thresholds.fe_epsilon2_rel * other;
  };
  auto record_plot = [&](const AttackRow& row,
                         const explain::GlobalAttribution& before,
                         const explain::GlobalAttribution& after) {
    ExperimentReport::PlotSeries s;
    s.name = row.model + "_" + row.attack +
             (row.variant.empty() ? "" : "_" + row.variant);
    for (int jf = 0; jf < d; ++jf)
      s.features.push_back(train.schema.columns[jf].name);
    s.before.assign(before.mean_abs.data(), before.mean_abs.data() + d);
    s.after.assign(after.mean_abs.data(), after.mean_abs.data() + d);
    report.plot_series.push_back(std::move(s));
  };
  auto model_explainer = [&](std::uint64_t seed) {
    // attribution on a concrete model, for retraining-stability probes
    return [this_cfg = cfg.explainer_cfg, &train, &background, surf, seed](
               const models::TrainedModel& m,
               const Eigen::VectorXd& x) -> explain::Attribution {
      explain::ExplainerConfig ec = this_cfg;
      ec.seed = seed;
      ec.n_samples = std::min(ec.n_samples, 256);
      if (surf == explain::Method::lime)
        return explain::lime_tabular(explain::score_fn_of(m), x, train.schema,
                                     background, ec);
      return explain::kernel_shap(explain::score_fn_of(m), x, background, ec);
    };
  };

  // --- attacks ---------------------------------------------------------------
  for (const AttackSpec& spec : cfg.attacks) {
    for (std::size_t m = 0; m < trained.size(); ++m) {
      const models::TrainedModel& model = *trained[m];
      const std::string stream = "attack/" + attack::attack_name(spec.kind) +
                                 "/" + cfg.model_names[m];
      const std::uint64_t seed = Rng::derive(cfg.master_seed, stream).next_u64();

      AttackRow row;
      row.model = cfg.model_names[m];
      row.attack = attack::attack_name(spec.kind);
      row.variant = spec.variant;
      row.taxonomy = attack::taxonomy_of(spec.kind);
      row.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();

      try {
        switch (spec.kind) {
          case attack::AttackKind::output_shuffling: {
            // base function over the non-protected features: the protected
            // column is pinned to the background mean before scoring
            const double prot_fill = background.weighted_mean()[prot];
            explain::ScoreFn base = [&model, prot,
                                     prot_fill](const Eigen::MatrixXd& X) {
              Eigen::MatrixXd Z = X;
              Z.col(prot).setConstant(prot_fill);
              return model.score(Z);
            };
            const auto art = attack::attack_output_shuffling(
                base, prot, attack::shuffle_variant_from_name(spec.variant),
                spec.get("mixing_rate", 0.7), seed);
            const auto before = panel_global(
                make_request(&model, explain::score_fn_of(model), surf, seed),
                panel, cfg.n_jobs);
            const auto after = panel_global(
                make_request(&model, art.wrapped, surf, seed), panel,
                cfg.n_jobs);
            double e1, e2;
            fe_epsilons(before, &e1, &e2);
            row.fe = evaluate_fe_success(before, after, prot, e1, e2);
            row.fe_applicable = true;
            row.prediction_agreement =
                label_agreement(model.score(panel), art.wrapped(panel));
            record_plot(row, before, after);
            if (has_defense(defense::DefenseKind::multi_explainer)) {
              defense::MultiExplainerConfig dc;
              dc.explainer = cfg.explainer_cfg;
              dc.explainer.n_samples =
                  std::min(dc.explainer.n_samples, 512);
              dc.explainer.seed = seed;
              row.defense_verdicts.push_back(defense::defense_multi_explainer(
                  art.wrapped, panel.row(0).transpose(), train.schema,
                  background, dc));
            }
            break;
          }
          case attack::AttackKind::scaffolding_ood: {
            // unbiased twin: same architecture, protected column zeroed
            tabular::Dataset masked = train;
            masked.X.col(prot).setZero();
            models::ModelConfig mc = cfg.model_configs[m];
            mc.seed = Rng::derive(seed, "unbiased").next_u64();
            const auto unbiased = models::train_model(mc, masked);
            attack::DetectorConfig dc;
            dc.seed = seed;
            dc.n_trees = static_cast<int>(spec.get("detector_trees", 100));
            const auto art = attack::attack_scaffolding_ood(model, *unbiased,
                                                            train, prot, dc);
            const auto before = panel_global(
                make_request(&model, explain::score_fn_of(model), surf, seed),
                panel, cfg.n_jobs);
            const auto after = panel_global(
                make_request(&model, art.routed, surf, seed), panel,
                cfg.n_jobs);
            double e1, e2;
            fe_epsilons(before, &e1, &e2);
            row.fe = evaluate_fe_success(before, after, prot, e1, e2);
            row.fe_applicable = true;
            row.prediction_agreement =
                label_agreement(model.score(test.X), art.routed(test.X));
            row.notes = "detector_accuracy=" + fmt(art.detector_accuracy);
            record_plot(row, before, after);
            if (has_defense(defense::DefenseKind::ood_filter)) {
              // audit the explainer probes the attack is designed to detect
              Rng rng = Rng::derive(seed, "ood_probe");
              const Eigen::Index nq = std::min<Eigen::Index>(panel.rows(), 20);
              Eigen::MatrixXd probes(nq, d);
              for (Eigen::Index i = 0; i < nq; ++i) {
                probes.row(i) = panel.row(i);
                for (int jf = 0; jf < d; ++jf)
                  if (train.schema.columns[jf].kind ==
                      tabular::FeatureKind::numerical)
                    probes(i, jf) += rng.normal();
              }
              const auto filt = defense::defense_ood_filter(train, probes);
              defense::DefenseVerdict summary;
              summary.defense = defense::DefenseKind::ood_filter;
              summary.statistic =
                  1.0 - static_cast<double>(filt.kept_rows.size()) /
                            static_cast<double>(nq);
              summary.threshold = 0.5;
              summary.flagged = summary.statistic > summary.threshold;
              summary.details = "fraction of explainer probes withheld";
              row.defense_verdicts.push_back(std::move(summary));
            }
            break;
          }
          case attack::AttackKind::data_poisoning: {
            const Eigen::VectorXd x = panel.row(0).transpose();
            explain::ExplainerConfig ec = cfg.explainer_cfg;
            ec.seed = Rng::derive(seed, "explain").next_u64();
            ec.n_samples = static_cast<int>(
                spec.get("explain_samples",
                         std::min(cfg.explainer_cfg.n_samples, 256)));
            const auto score = explain::score_fn_of(model);
            attack::ExplainFn efn = [&, ec](const Eigen::VectorXd& cand) {
              if (surf == explain::Method::lime)
                return explain::lime_tabular(score, cand, train.schema,
                                             background, ec);
              return explain::kernel_shap(score, cand, background, ec);
            };
            const auto before_attr = efn(x);
            explain::Attribution target = before_attr;
            if (spec.get("target_identity", 0.0) == 0.0) {
              // attacker target: swap the two most important features
              const auto order =
                  explain::importance_ordering(before_attr.values);
              if (order.size() >= 2)
                std::swap(target.values[order[0]], target.values[order[1]]);
            }
            std::vector<bool> perturbable(d, false);
            for (int jf = 0; jf < d; ++jf)
              perturbable[jf] = train.schema.columns[jf].kind ==
                                tabular::FeatureKind::numerical;
            attack::GaConfig ga;
            ga.population = static_cast<int>(spec.get("population", 50));
            ga.generations = static_cast<int>(spec.get("generations", 20));
            ga.mutation_std = spec.get("mutation_std", 0.1);
            ga.crossover_rate = spec.get("crossover_rate", 0.5);
            ga.tournament_k = static_cast<int>(spec.get("tournament_k", 3));
            ga.seed = seed;
            const auto art = attack::attack_data_poisoning_genetic(
                efn, score, x, target, perturbable, ga);
            row.me_spearman_mean = evaluate_me(before_attr, efn(art.perturbed));
            row.me_applicable = true;
            row.me_changed = row.me_spearman_mean < cfg.thresholds.me_delta;
            row.prediction_agreement = art.prediction_preserved ? 1.0 : 0.0;
            row.notes = "fitness=" + fmt(art.fitness);
            if (has_defense(defense::DefenseKind::adversarial_retraining)) {
              Eigen::MatrixXd adv(1, d);
              adv.row(0) = art.perturbed.transpose();
              Eigen::VectorXi adv_y(1);
              adv_y[0] = model.hard_label(art.perturbed);
              models::ModelConfig mc = cfg.model_configs[m];
              mc.seed =
                  Rng::derive(cfg.master_seed, "model/" + cfg.model_names[m])
                      .next_u64();
              const Eigen::Index np = std::min<Eigen::Index>(panel.rows(), 10);
              const auto rr = defense::defense_adversarial_retraining(
                  mc, train, adv, adv_y, model, panel.topRows(np),
                  model_explainer(Rng::derive(seed, "probe").next_u64()));
              row.defense_verdicts.push_back(rr.verdict);
            }
            break;
          }
          case attack::AttackKind::black_box: {
            if (!model.differentiable()) {
              row.notes = "skipped: model not differentiable";
              break;
            }
            attack::BlackBoxConfig bc;
            bc.kl_threshold = cfg.thresholds.asr_kl;
            bc.ig_steps = std::min(cfg.explainer_cfg.ig_steps, 50);
            bc.max_iters = static_cast<int>(spec.get("max_iters", 25));
            bc.seed = seed;
            const Eigen::Index ns = std::min<Eigen::Index>(
                static_cast<Eigen::Index>(spec.get("asr_samples", 50)),
                panel.rows());
            std::vector<AsrSample> samples;
            double rs_sum = 0.0;
            Eigen::MatrixXd adv_rows(ns, d);
            Eigen::VectorXi adv_labels(ns);
            const bool identity_target =
                spec.get("target_identity", 0.0) != 0.0;
            for (Eigen::Index i = 0; i < ns; ++i) {
              const Eigen::VectorXd xi = panel.row(i).transpose();
              Eigen::VectorXd target;
              if (identity_target) {
                target = explain::normalize_attribution(
                    explain::integrated_gradients(
                        model, xi, Eigen::VectorXd::Zero(d), bc.ig_steps));
              } else {
                target = Eigen::VectorXd::Constant(
                    d, 1.0 / static_cast<double>(d));
              }
              attack::BlackBoxConfig bci = bc;
              bci.seed = Rng(seed).spawn(i).next_u64();
              const auto art = attack::attack_black_box(model, xi, target,
                                                        background.X, bci);
              samples.push_back({art.label_preserved, art.kl});
              rs_sum += art.spearman;
              adv_rows.row(i) = art.adversarial.transpose();
              adv_labels[i] = model.hard_label(art.adversarial);
            }
            row.asr = evaluate_asr(samples, cfg.thresholds.asr_kl);
            row.me_spearman_mean = rs_sum / static_cast<double>(ns);
            row.me_applicable = true;
            row.me_changed = row.me_spearman_mean < cfg.thresholds.me_delta;
            double preserved = 0.0;
            for (const auto& s : samples)
              if (s.label_preserved) preserved += 1.0;
            row.prediction_agreement = preserved / static_cast<double>(ns);
            if (has_defense(defense::DefenseKind::adversarial_retraining)) {
              models::ModelConfig mc = cfg.model_configs[m];
              mc.seed =
                  Rng::derive(cfg.master_seed, "model/" + cfg.model_names[m])
                      .next_u64();
              const Eigen::Index np = std::min<Eigen::Index>(panel.rows(), 10);
              const auto rr = defense::defense_adversarial_retraining(
                  mc, train, adv_rows, adv_labels, model, panel.topRows(np),
                  model_explainer(Rng::derive(seed, "probe").next_u64()));
              row.defense_verdicts.push_back(rr.verdict);
            }
            break;
          }
          case attack::AttackKind::makrut: {
            const auto* mlp = dynamic_cast<const models::MlpModel*>(&model);
            if (!mlp) {
              row.notes = "skipped: makrut requires an mlp model";
              break;
            }
            // LIME relevance target: baseline signed relevance with the
            // protected feature silenced
            explain::ExplainerConfig ec = cfg.explainer_cfg;
            ec.seed = Rng::derive(seed, "lime").next_u64();
            ec.n_samples =
                static_cast<int>(spec.get("segments", 200));
            ec.n_samples = std::max(ec.n_samples, d + 2);
            explain::PanelRequest lime_req = make_request(
                &model, explain::score_fn_of(model), explain::Method::lime,
                ec.seed);
            lime_req.cfg.n_samples = ec.n_samples;
            const auto before = panel_global(lime_req, panel, cfg.n_jobs);
            // drive the protected coefficient to zero, leave the rest free
            Eigen::VectorXd target = Eigen::VectorXd::Zero(d);
            attack::MakrutConfig mc;
            mc.lambda1 = spec.get("lambda1", 1.5);
            mc.lambda2 = spec.get("lambda2", 1.0);
            mc.epochs = static_cast<int>(spec.get("epochs", 40));
            mc.agreement_floor = spec.get("agreement_floor", 0.97);
            mc.target_weight = Eigen::VectorXd::Zero(d);
            mc.target_weight[prot] = 1.0;
            mc.seed = seed;
            const auto art = attack::attack_makrut(*mlp, train, target, mc);
            explain::PanelRequest after_req = lime_req;
            after_req.model = art.manipulated.get();
            after_req.score = explain::score_fn_of(*art.manipulated);
            const auto after = panel_global(after_req, panel, cfg.n_jobs);
            double e1, e2;
            fe_epsilons(before, &e1, &e2);
            row.fe = evaluate_fe_success(before, after, prot, e1, e2);
            row.fe_applicable = true;
            row.prediction_agreement = art.hard_label_agreement;
            row.notes = "epochs_run=" + std::to_string(art.epochs_run);
            record_plot(row, before, after);
            break;
          }
          case attack::AttackKind::biased_sampling: {
            attack::BiasedSamplingConfig bc;
            bc.lambda = spec.get("lambda", 0.05);
            bc.explainer =
                model.kind() == models::ModelKind::logistic
                    ? attack::BiasedSamplingConfig::Explainer::linear
                    : attack::BiasedSamplingConfig::Explainer::kernel;
            bc.seed = seed;
            tabular::Dataset bgset;
            bgset.schema = train.schema;
            bgset.protected_index = train.protected_index;
            const Eigen::Index nb = std::min<Eigen::Index>(
                static_cast<Eigen::Index>(spec.get("background_rows", 40)),
                background.X.rows());
            bgset.X = background.X.topRows(nb);
            bgset.y = Eigen::VectorXi::Zero(nb);
            const Eigen::Index np = std::min<Eigen::Index>(panel.rows(), 20);
            const auto art = attack::attack_biased_sampling(
                model, bgset, panel.topRows(np), prot, bc);
            double e1, e2;
            fe_epsilons(art.before, &e1, &e2);
            row.fe = evaluate_fe_success(art.before, art.after, prot, e1, e2);
            row.fe_applicable = true;
            row.prediction_agreement = 1.0;  // the model is untouched
            row.notes = "gsv " + fmt(art.gsv_before) + " -> " +
                        fmt(art.gsv_after) +
                        " wasserstein=" + fmt(art.wasserstein_spent);
            record_plot(row, art.before, art.after);
            if (has_defense(defense::DefenseKind::background_uniformity)) {
              explain::Background submitted;
              submitted.X = bgset.X;
              submitted.weights = art.weights;
              row.defense_verdicts.push_back(
                  defense::defense_background_uniformity(model, submitted,
                                                         train, seed));
            }
            break;
          }
        }
      } catch (const std::exception& e) {
        stage_fail("attack", e);
      }
      row.runtime_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      report.attack_rows.push_back(std::move(row));
    }
  }

  return report;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

json fe_json(const FeResult& r) {
  return json{{"success", r.success},
              {"protected_before", r.protected_before},
              {"protected_after", r.protected_after},
              {"epsilon1", r.epsilon1},
              {"epsilon2", r.epsilon2},
              {"max_other_delta", r.max_other_delta},
              {"violating_feature", r.violating_feature},
              {"rank_before", r.rank_before},
              {"rank_after", r.rank_after}};
}

}  // namespace

std::string ExperimentReport::to_json(bool with_timestamp) const {
  json j;
  j["master_seed"] = master_seed;
  if (with_timestamp) {
    const auto now = std::chrono::system_clock::now();
    j["generated_at_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            now.time_since_epoch())
            .count();
  }
  j["baselines"] = json::array();
  for (const auto& b : baselines)
    j["baselines"].push_back({{"model", b.model},
                              {"accuracy", b.accuracy},
                              {"f1", b.f1},
                              {"seed", b.seed}});
  j["attacks"] = json::array();
  for (const auto& r : attack_rows) {
    json row{{"model", r.model},
             {"attack", r.attack},
             {"variant", r.variant},
             {"tactics", r.taxonomy.tactics_label()},
             {"techniques", r.taxonomy.techniques_label()},
             {"hardness", attack::hardness_name(r.taxonomy.hardness)},
             {"prediction_agreement", r.prediction_agreement},
             {"seed", r.seed},
             {"notes", r.notes}};
    // wall-clock timing varies between reruns; keep the timestamp-free form
    // byte-identical per master seed
    if (with_timestamp) row["runtime_seconds"] = r.runtime_seconds;
    if (r.fe_applicable) row["fe"] = fe_json(r.fe);
    if (r.me_applicable) {
      row["me_spearman_mean"] = r.me_spearman_mean;
      row["me_changed"] = r.me_changed;
    }
    if (r.asr >= 0.0) row["asr"] = r.asr;
    row["defenses"] = json::array();
    for (const auto& v : r.defense_verdicts)
      row["defenses"].push_back(json::parse(v.to_json()));
    j["attacks"].push_back(std::move(row));
  }
  if (!config_echo.empty()) j["config"] = json::parse(config_echo);
  return j.dump(2);
}

std::string ExperimentReport::metrics_csv() const {
  // fixed column order; numbers formatted with %.10g so a rerun with the
  // same master seed is byte-identical
  std::ostringstream out;
  out << "model,attack,variant,tactics,techniques,hardness,"
         "prediction_agreement,fe_applicable,fe_success,"
         "protected_meanabs_before,protected_meanabs_after,"
         "protected_rank_before,protected_rank_after,"
         "me_applicable,me_spearman_mean,me_changed,asr,"
         "defense,defense_statistic,defense_flagged,seed\n";
  for (const auto& r : attack_rows) {
    out << r.model << ',' << r.attack << ',' << r.variant << ','
        << r.taxonomy.tactics_label() << ','
        << r.taxonomy.techniques_label() << ','
        << attack::hardness_name(r.taxonomy.hardness) << ','
        << fmt(r.prediction_agreement) << ',' << (r.fe_applicable ? 1 : 0)
        << ',' << (r.fe_applicable && r.fe.success ? 1 : 0) << ','
        << fmt(r.fe.protected_before) << ',' << fmt(r.fe.protected_after)
        << ',' << fmt(r.fe.rank_before) << ',' << fmt(r.fe.rank_after) << ','
        << (r.me_applicable ? 1 : 0) << ','
        << fmt(r.me_applicable ? r.me_spearman_mean : 1.0) << ','
        << (r.me_changed ? 1 : 0) << ',' << fmt(r.asr) << ',';
    if (r.defense_verdicts.empty()) {
      out << ",,";
    } else {
      const auto& v = r.defense_verdicts.front();
      out << defense::defense_name(v.defense) << ',' << fmt(v.statistic)
          << ',' << (v.flagged ? 1 : 0);
    }
    out << ',' << r.seed << '\n';
  }
  return out.str();
}

std::vector<std::string> emit_report(const ExperimentReport& report,
                                     const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> written;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "plotdata", ec);
  if (ec)
    throw RuntimeError("cannot create output directory '" + out_dir +
                       "': " + ec.message());

  auto write = [&](const fs::path& p, const std::string& content) {
    std::ofstream f(p);
    if (!f) throw RuntimeError("cannot write file: " + p.string());
    f << content;
    written.push_back(p.string());
  };

  write(fs::path(out_dir) / "report.json", report.to_json());
  write(fs::path(out_dir) / "metrics.csv", report.metrics_csv());
  for (const auto& s : report.plot_series) {
    std::ostringstream csv;
    csv << "feature,importance_before,importance_after\n";
    for (std::size_t i = 0; i < s.features.size(); ++i)
      csv << s.features[i] << ',' << fmt(s.before[i]) << ','
          << fmt(s.after[i]) << '\n';
    write(fs::path(out_dir) / "plotdata" / (s.name + ".csv"), csv.str());
  }
  return written;
}

}  // namespace xai::harness
