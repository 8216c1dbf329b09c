#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

#include "xai/numerics.hpp"
#include "xai/rng.hpp"

using namespace xai;
using namespace xai::num;

TEST_CASE("spearman: trivial and derived examples") {
  CHECK(spearman_rank_corr({1, 2, 3}, {1, 2, 3}) == doctest::Approx(1.0));
  CHECK(spearman_rank_corr({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  // 1 - 6*2/(3*8) = 0.5
  CHECK(spearman_rank_corr({1, 2, 3}, {2, 1, 3}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(spearman_rank_corr({1, 2}, {1, 2, 3}), NumericsError);
}

TEST_CASE("spearman: symmetric, permutation invariant, ties fall back") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 3 + static_cast<int>(rng.uniform_int(0, 5));
    RankVector a(d), b(d);
    std::iota(a.begin(), a.end(), 1.0);
    std::iota(b.begin(), b.end(), 1.0);
    rng.shuffle(a);
    rng.shuffle(b);
    const double rs = spearman_rank_corr(a, b);
    CHECK(rs == doctest::Approx(spearman_rank_corr(b, a)));
    CHECK(rs >= -1.0 - 1e-12);
    CHECK(rs <= 1.0 + 1e-12);
    // applying the same permutation to both leaves r_s unchanged
    std::vector<int> perm(d);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    RankVector ap(d), bp(d);
    for (int i = 0; i < d; ++i) {
      ap[i] = a[perm[i]];
      bp[i] = b[perm[i]];
    }
    CHECK(spearman_rank_corr(ap, bp) == doctest::Approx(rs));
  }
  // tied ranks use the general definition and stay in range
  const double with_ties = spearman_rank_corr({1.5, 1.5, 3}, {1, 2, 3});
  CHECK(with_ties > 0.0);
  CHECK(with_ties < 1.0 + 1e-12);
}

TEST_CASE("kendall tau distance: examples") {
  CHECK(kendall_tau_distance({0, 1, 2}, {0, 1, 2}) == 0);
  CHECK(kendall_tau_distance({0, 1, 2}, {2, 1, 0}) == 3);
  CHECK(kendall_tau_distance({1, 2, 3}, {2, 1, 3}) == 1);
  CHECK_THROWS_AS(kendall_tau_distance({0, 1}, {0, 2}), NumericsError);
}

TEST_CASE("kendall tau distance is a metric on orderings") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_int(0, 4));
    std::vector<int> a(d), b(d), c(d);
    std::iota(a.begin(), a.end(), 0);
    b = a;
    c = a;
    rng.shuffle(a);
    rng.shuffle(b);
    rng.shuffle(c);
    const int ab = kendall_tau_distance(a, b);
    const int ba = kendall_tau_distance(b, a);
    const int ac = kendall_tau_distance(a, c);
    const int cb = kendall_tau_distance(c, b);
    CHECK(ab == ba);
    CHECK(kendall_tau_distance(a, a) == 0);
    CHECK(ab <= ac + cb);
    if (a != b) CHECK(ab > 0);
  }
}

TEST_CASE("kl divergence: examples and nonnegativity") {
  Eigen::VectorXd p(2), q(2);
  p << 1.0, 0.0;
  q << 0.5, 0.5;
  CHECK(kl_divergence(p, p) == doctest::Approx(0.0));
  CHECK(kl_divergence(p, q) == doctest::Approx(std::log(2.0)));

  Rng rng(13);
  for (int trial = 0; trial < 1000; ++trial) {
    const int d = 2 + static_cast<int>(rng.uniform_int(0, 6));
    Eigen::VectorXd a(d), b(d);
    for (int i = 0; i < d; ++i) {
      a[i] = rng.uniform() + 1e-6;
      b[i] = rng.uniform() + 1e-6;
    }
    a /= a.sum();
    b /= b.sum();
    CHECK(kl_divergence(a, b) >= 0.0);
    CHECK(kl_divergence(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  }

  Eigen::VectorXd bad(2);
  bad << 0.7, 0.7;
  CHECK_THROWS_AS(kl_divergence(bad, q), NumericsError);
}

TEST_CASE("wasserstein 1d: examples") {
  std::vector<WeightedSample> a{{0.0, 1.0}};
  std::vector<WeightedSample> b{{1.0, 1.0}};
  CHECK(wasserstein_1d(a, a) == doctest::Approx(0.0));
  CHECK(wasserstein_1d(a, b) == doctest::Approx(1.0));
  // mass (0.5, 0.5) at {0,2} vs unit mass at 1: both halves move distance 1
  std::vector<WeightedSample> c{{0.0, 0.5}, {2.0, 0.5}};
  CHECK(wasserstein_1d(c, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(wasserstein_1d({}, b), NumericsError);
}

TEST_CASE("wasserstein 1d: triangle inequality on random weighted samples") {
  Rng rng(17);
  auto random_sample = [&](int n) {
    std::vector<WeightedSample> s(n);
    double total = 0.0;
    for (auto& ws : s) {
      ws.value = rng.uniform(-3.0, 3.0);
      ws.weight = rng.uniform() + 0.01;
      total += ws.weight;
    }
    for (auto& ws : s) ws.weight /= total;
    return s;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto a = random_sample(2 + static_cast<int>(rng.uniform_int(0, 3)));
    const auto b = random_sample(2 + static_cast<int>(rng.uniform_int(0, 3)));
    const auto c = random_sample(2 + static_cast<int>(rng.uniform_int(0, 3)));
    CHECK(wasserstein_1d(a, b) <= wasserstein_1d(a, c) + wasserstein_1d(c, b) + 1e-9);
  }
}

TEST_CASE("weighted ridge: interpolation, shrinkage, weight identity") {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 1, 0, 0, 1, 1, 1;
  Eigen::VectorXd beta_true(2);
  beta_true << 2.0, -3.0;
  Eigen::VectorXd y = X * beta_true;
  y.array() += 0.5;
  Eigen::VectorXd w = Eigen::VectorXd::Ones(4);

  auto fit = weighted_ridge(X, y, w, 0.0);
  CHECK(fit.coeffs[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(fit.coeffs[1] == doctest::Approx(-3.0).epsilon(1e-8));
  CHECK(fit.intercept == doctest::Approx(0.5).epsilon(1e-8));

  auto heavy = weighted_ridge(X, y, w, 1e9);
  CHECK(std::abs(heavy.coeffs[0]) < 1e-5);
  CHECK(std::abs(heavy.coeffs[1]) < 1e-5);

  // duplicated row with doubled weight == triplicated row with unit weight
  Eigen::MatrixXd X2(5, 2), X3(6, 2);
  X2 << X, Eigen::RowVector2d(1, 1);
  X3 << X, Eigen::RowVector2d(1, 1), Eigen::RowVector2d(1, 1);
  Eigen::VectorXd y2(5), y3(6), w2(5), w3(6);
  y2 << y, 7.0;
  y3 << y, 7.0, 7.0;
  w2 << 1, 1, 1, 2, 2;  // rows 3 and 4 are both (1,1): total weight 4 on (1,1)
  w3 << 1, 1, 1, 2, 1, 1;
  auto f2 = weighted_ridge(X2, y2, w2, 0.1);
  auto f3 = weighted_ridge(X3, y3, w3, 0.1);
  CHECK((f2.coeffs - f3.coeffs).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(f2.intercept == doctest::Approx(f3.intercept).epsilon(1e-9));

  // singular with lambda = 0
  Eigen::MatrixXd Xs(3, 2);
  Xs << 1, 1, 2, 2, 3, 3;
  Eigen::VectorXd ys(3), ws(3);
  ys << 1, 2, 3;
  ws << 1, 1, 1;
  CHECK_THROWS_AS(weighted_ridge(Xs, ys, ws, 0.0), NumericsError);
  CHECK_NOTHROW(weighted_ridge(Xs, ys, ws, 1e-6));
}

// --------------------------------------------------------------------------
// min-cost flow against an exhaustive oracle
// --------------------------------------------------------------------------

namespace {

// enumerate all integral arc-flow vectors respecting capacities and
// conservation, returning the cheapest with the required s-t value
double brute_force_mcf(const FlowNetwork& net, bool& feasible) {
  const std::size_t m = net.arcs.size();
  std::vector<int> flow(m, 0);
  double best = std::numeric_limits<double>::infinity();
  feasible = false;

  std::function<void(std::size_t)> rec = [&](std::size_t i) {
    if (i == m) {
      std::vector<int> excess(net.node_count, 0);
      double cost = 0.0;
      for (std::size_t a = 0; a < m; ++a) {
        excess[net.arcs[a].from] -= flow[a];
        excess[net.arcs[a].to] += flow[a];
        cost += flow[a] * net.arcs[a].unit_cost;
      }
      if (excess[net.sink] != net.required_flow) return;
      if (excess[net.source] != -net.required_flow) return;
      for (int u = 0; u < net.node_count; ++u)
        if (u != net.source && u != net.sink && excess[u] != 0) return;
      feasible = true;
      best = std::min(best, cost);
      return;
    }
    for (int f = 0; f <= net.arcs[i].capacity; ++f) {
      flow[i] = f;
      rec(i + 1);
    }
    flow[i] = 0;
  };
  rec(0);
  return best;
}

}  // namespace

TEST_CASE("min cost flow: small examples") {
  FlowNetwork net;
  net.node_count = 2;
  net.source = 0;
  net.sink = 1;
  net.required_flow = 1;
  net.arcs = {{0, 1, 1, 2.0}};
  auto r = min_cost_flow(net);
  CHECK(r.total_cost == doctest::Approx(2.0));
  CHECK(r.arc_flows[0] == 1);

  net.required_flow = 2;
  net.arcs = {{0, 1, 1, 1.0}, {0, 1, 1, 3.0}};
  r = min_cost_flow(net);
  CHECK(r.total_cost == doctest::Approx(4.0));

  net.required_flow = 3;
  CHECK_THROWS_AS(min_cost_flow(net), NumericsError);
}

TEST_CASE("min cost flow matches exhaustive oracle on random 6-node nets") {
  Rng rng(23);
  int tested = 0;
  while (tested < 50) {
    FlowNetwork net;
    net.node_count = 6;
    net.source = 0;
    net.sink = 5;
    const int n_arcs = 5 + static_cast<int>(rng.uniform_int(0, 2));
    for (int a = 0; a < n_arcs; ++a) {
      int u = static_cast<int>(rng.uniform_int(0, 5));
      int v = static_cast<int>(rng.uniform_int(0, 5));
      if (u == v) v = (v + 1) % 6;
      net.arcs.push_back({u, v, static_cast<int>(rng.uniform_int(0, 2)),
                          std::round(rng.uniform(-3.0, 5.0) * 4.0) / 4.0});
    }
    net.required_flow = static_cast<int>(rng.uniform_int(1, 3));

    bool feasible = false;
    const double oracle = brute_force_mcf(net, feasible);
    // infeasible demand and negative-cost cycles are both outside the
    // solver contract; it reports either as a NumericsError
    FlowResult r;
    try {
      r = min_cost_flow(net);
    } catch (const NumericsError&) {
      continue;
    }
    REQUIRE(feasible);
    CHECK(r.total_cost == doctest::Approx(oracle).epsilon(1e-9));
    ++tested;
  }
}

TEST_CASE("finite difference gradient") {
  auto square = [](const Eigen::VectorXd& v) { return v[0] * v[0]; };
  Eigen::VectorXd x(1);
  x << 3.0;
  CHECK(finite_diff_gradient(square, x)[0] == doctest::Approx(6.0).epsilon(1e-6));

  auto constant = [](const Eigen::VectorXd&) { return 4.2; };
  Eigen::VectorXd x3 = Eigen::VectorXd::Random(3);
  CHECK(finite_diff_gradient(constant, x3).cwiseAbs().maxCoeff() == doctest::Approx(0.0));

  Eigen::VectorXd w(3);
  w << 1.0, -2.0, 0.5;
  auto linear = [&](const Eigen::VectorXd& v) { return w.dot(v); };
  const auto g = finite_diff_gradient(linear, x3);
  CHECK((g - w).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("ranks_descending averages ties") {
  Eigen::VectorXd s(4);
  s << 3.0, 1.0, 3.0, 0.5;
  const auto r = ranks_descending(s);
  CHECK(r[0] == doctest::Approx(1.5));
  CHECK(r[2] == doctest::Approx(1.5));
  CHECK(r[1] == doctest::Approx(3.0));
  CHECK(r[3] == doctest::Approx(4.0));
}
