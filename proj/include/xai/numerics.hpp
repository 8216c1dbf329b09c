#pragma once

#include <Eigen/Dense>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace xai::num {

struct NumericsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Rank statistics
// ---------------------------------------------------------------------------

/// Ranks of d features, 1 = most important. Average ranks on ties, so the
/// ranks always sum to d(d+1)/2.
using RankVector = std::vector<double>;

/// Spearman rank correlation in [-1,1]. Tie-free inputs use the classic
/// 1 - 6*sum(d_i^2)/(n(n^2-1)) formula; with ties, the Pearson correlation
/// of the average ranks.
double spearman_rank_corr(const RankVector& a, const RankVector& b);

/// Number of discordant pairs between two orderings of the same item set.
/// An ordering lists item ids from first to last.
int kendall_tau_distance(const std::vector<int>& a, const std::vector<int>& b);

// ---------------------------------------------------------------------------
// Divergences and transport
// ---------------------------------------------------------------------------

/// KL(p || q) with q floored at epsilon; p_i = 0 terms contribute 0.
/// Both must be distributions (nonnegative, sum 1 +- 1e-9).
double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                     double epsilon = 1e-12);

struct WeightedSample {
  double value;
  double weight;
};

/// 1-D optimal transport cost between two weighted samples whose weights
/// each sum to 1 (quantile matching on the sorted values).
double wasserstein_1d(std::vector<WeightedSample> a, std::vector<WeightedSample> b);

// ---------------------------------------------------------------------------
// Weighted ridge regression
// ---------------------------------------------------------------------------

struct RidgeResult {
  Eigen::VectorXd coeffs;
  double intercept = 0.0;
};

/// Minimizes sum_i w_i (y_i - x_i' beta - b0)^2 + lambda ||beta||^2.
/// The intercept is not penalized. Throws when the normal equations are
/// singular and lambda == 0.
RidgeResult weighted_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double lambda);

// ---------------------------------------------------------------------------
// Min-cost flow
// ---------------------------------------------------------------------------

struct FlowArc {
  int from = 0;
  int to = 0;
  int capacity = 0;
  double unit_cost = 0.0;
};

struct FlowNetwork {
  int node_count = 0;
  std::vector<FlowArc> arcs;
  int source = 0;
  int sink = 0;
  int required_flow = 0;
};

struct FlowResult {
  std::vector<int> arc_flows;  // parallel to FlowNetwork::arcs
  double total_cost = 0.0;
};

/// Integral min-cost flow of the required value, successive shortest
/// augmenting paths with potentials (Bellman-Ford bootstrap, so negative
/// arc costs are fine as long as there is no negative cycle).
/// Throws NumericsError when the required flow is infeasible.
FlowResult min_cost_flow(const FlowNetwork& net);

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient, the oracle for backprop checks.
Eigen::VectorXd finite_diff_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h = 1e-4);

/// Average ranks (1 = largest) of a score vector, descending by score with
/// ties averaged.
RankVector ranks_descending(const Eigen::VectorXd& scores);

}  // namespace xai::num
