// Benchmarks the serial vs OpenMP-parallel panel explanation kernels on a
// synthetic workload and verifies they produce identical attributions.
#include <chrono>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "xai/explainers.hpp"
#include "xai/models.hpp"
#include "xai/tabular.hpp"

using clock_type = std::chrono::steady_clock;

namespace {

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"panel explanation benchmark: serial vs parallel kernel"};
  int n_rows = 2000;
  int d_numerical = 6;
  int panel = 64;
  int n_samples = 1024;
  int jobs = 0;
  std::uint64_t seed = 42;
  std::string method = "kernel_shap";
  app.add_option("--rows", n_rows, "synthetic dataset size");
  app.add_option("--features", d_numerical, "numerical feature count");
  app.add_option("--panel", panel, "instances per panel");
  app.add_option("--samples", n_samples, "explainer sample budget");
  app.add_option("--jobs", jobs, "worker threads (0 = auto)");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--method", method, "kernel_shap | permutation_shap | lime");
  CLI11_PARSE(app, argc, argv);

  const auto data =
      xai::tabular::generate_synthetic_biased(n_rows, d_numerical, 0.8, seed);
  const auto splits = xai::tabular::split(data, 0.2, seed + 1);
  const auto model = xai::models::train_model(
      xai::models::ModelConfig::logistic(seed + 2), splits.train);

  xai::explain::PanelRequest req;
  req.method = xai::explain::method_from_name(method);
  req.model = model.get();
  req.score = xai::explain::score_fn_of(*model);
  req.schema = &splits.train.schema;
  req.background = xai::explain::Background::of(splits.train, 100, seed + 3);
  req.cfg.n_samples = n_samples;
  req.cfg.seed = seed + 4;

  const Eigen::MatrixXd instances =
      splits.test.X.topRows(std::min<Eigen::Index>(panel, splits.test.n_rows()));

  std::cout << "panel=" << instances.rows() << " d=" << instances.cols()
            << " method=" << method << " samples=" << n_samples << "\n";

  auto t0 = clock_type::now();
  const auto serial = xai::explain::explain_panel_serial(req, instances);
  const double t_serial = seconds_since(t0);
  std::cout << "serial:   " << t_serial << " s\n";

  t0 = clock_type::now();
  const auto parallel =
      xai::explain::explain_panel_parallel(req, instances, jobs);
  const double t_parallel = seconds_since(t0);
  std::cout << "parallel: " << t_parallel << " s  (speedup "
            << t_serial / t_parallel << "x)\n";

  double max_diff = 0.0;
  for (std::size_t i = 0; i < serial.size(); ++i)
    max_diff = std::max(
        max_diff,
        (serial[i].values - parallel[i].values).cwiseAbs().maxCoeff());
  std::cout << "max |serial - parallel| = " << max_diff << "\n";
  if (max_diff > 1e-12) {
    std::cerr << "mismatch between serial and parallel kernels\n";
    return 1;
  }
  return 0;
}
