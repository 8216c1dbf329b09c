#include "xai/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace xai::num {

namespace {

bool has_ties(const RankVector& r) {
  RankVector s = r;
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) != s.end();
}

double pearson(const RankVector& a, const RankVector& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 1.0;  // degenerate: all-tied ranks
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

double spearman_rank_corr(const RankVector& a, const RankVector& b) {
  if (a.size() != b.size())
    throw NumericsError("spearman_rank_corr: length mismatch");
  if (a.size() < 2)
    throw NumericsError("spearman_rank_corr: need at least 2 ranks");
  if (has_ties(a) || has_ties(b)) return pearson(a, b);
  const double n = static_cast<double>(a.size());
  double sum_d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum_d2 += d * d;
  }
  return 1.0 - 6.0 * sum_d2 / (n * (n * n - 1.0));
}

int kendall_tau_distance(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size())
    throw NumericsError("kendall_tau_distance: length mismatch");
  const int n = static_cast<int>(a.size());
  std::vector<int> sorted_a = a, sorted_b = b;
  std::sort(sorted_a.begin(), sorted_a.end());
  std::sort(sorted_b.begin(), sorted_b.end());
  if (sorted_a != sorted_b)
    throw NumericsError("kendall_tau_distance: item sets differ");
  std::vector<int> rank_in_b(n);
  {
    std::vector<std::pair<int, int>> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = {b[i], i};
    std::sort(idx.begin(), idx.end());
    // map item -> position via binary search over sorted (item, pos)
    for (int i = 0; i < n; ++i) {
      auto it = std::lower_bound(idx.begin(), idx.end(),
                                 std::make_pair(a[i], -1));
      rank_in_b[i] = it->second;
    }
  }
  int discordant = 0;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (rank_in_b[i] > rank_in_b[j]) ++discordant;
  return discordant;
}

double kl_divergence(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                     double epsilon) {
  if (p.size() != q.size()) throw NumericsError("kl_divergence: length mismatch");
  if (p.minCoeff() < 0.0 || q.minCoeff() < 0.0)
    throw NumericsError("kl_divergence: negative entries");
  if (std::abs(p.sum() - 1.0) > 1e-9 || std::abs(q.sum() - 1.0) > 1e-9)
    throw NumericsError("kl_divergence: inputs must sum to 1");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], epsilon));
  }
  return std::max(kl, 0.0);
}

double wasserstein_1d(std::vector<WeightedSample> a, std::vector<WeightedSample> b) {
  if (a.empty() || b.empty())
    throw NumericsError("wasserstein_1d: empty sample set");
  for (const auto& s : a)
    if (s.weight < 0.0) throw NumericsError("wasserstein_1d: negative weight");
  for (const auto& s : b)
    if (s.weight < 0.0) throw NumericsError("wasserstein_1d: negative weight");
  auto by_value = [](const WeightedSample& x, const WeightedSample& y) {
    return x.value < y.value;
  };
  std::sort(a.begin(), a.end(), by_value);
  std::sort(b.begin(), b.end(), by_value);
  // walk both CDFs, moving the overlapping mass between current quantiles
  std::size_t i = 0, j = 0;
  double ra = a[0].weight, rb = b[0].weight;  // remaining mass at cursor
  double cost = 0.0;
  while (i < a.size() && j < b.size()) {
    const double m = std::min(ra, rb);
    cost += m * std::abs(a[i].value - b[j].value);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15 && i + 1 < a.size()) ra = a[++i].weight;
    else if (ra <= 1e-15) ++i;
    if (rb <= 1e-15 && j + 1 < b.size()) rb = b[++j].weight;
    else if (rb <= 1e-15) ++j;
  }
  return cost;
}

RidgeResult weighted_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& w, double lambda) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (y.size() != n || w.size() != n)
    throw NumericsError("weighted_ridge: row count mismatch");
  if (lambda < 0.0) throw NumericsError("weighted_ridge: lambda must be >= 0");
  Eigen::MatrixXd A(n, d + 1);
  A.leftCols(d) = X;
  A.col(d).setOnes();
  Eigen::MatrixXd AtWA = A.transpose() * w.asDiagonal() * A;
  for (Eigen::Index k = 0; k < d; ++k) AtWA(k, k) += lambda;  // intercept free
  Eigen::VectorXd AtWy = A.transpose() * (w.asDiagonal() * y);
  if (lambda == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(AtWA);
    if (!lu.isInvertible())
      throw NumericsError(
          "weighted_ridge: singular system with lambda=0; use lambda>0");
    Eigen::VectorXd beta = lu.solve(AtWy);
    return {beta.head(d), beta[d]};
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(AtWA);
  Eigen::VectorXd beta = ldlt.solve(AtWy);
  return {beta.head(d), beta[d]};
}

FlowResult min_cost_flow(const FlowNetwork& net) {
  struct Edge {
    int to, cap;
    double cost;
    int rev;        // index of reverse edge in adj[to]
    int arc_index;  // original arc, -1 for reverse edges
  };
  const int n = net.node_count;
  std::vector<std::vector<Edge>> adj(n);
  for (std::size_t a = 0; a < net.arcs.size(); ++a) {
    const FlowArc& arc = net.arcs[a];
    if (arc.from == arc.to) throw NumericsError("min_cost_flow: self-loop arc");
    if (arc.capacity < 0) throw NumericsError("min_cost_flow: negative capacity");
    Edge fwd{arc.to, arc.capacity, arc.unit_cost,
             static_cast<int>(adj[arc.to].size()), static_cast<int>(a)};
    Edge rev{arc.from, 0, -arc.unit_cost,
             static_cast<int>(adj[arc.from].size()), -1};
    adj[arc.from].push_back(fwd);
    adj[arc.to].push_back(rev);
  }

  const double inf = std::numeric_limits<double>::infinity();
  // Bellman-Ford potentials from a virtual super-source (all-zero start),
  // so negative arc costs are handled and a negative-cost cycle anywhere in
  // the network is detected rather than silently mispriced
  std::vector<double> pot(n, 0.0);
  {
    bool changed = true;
    for (int it = 0; it <= n && changed; ++it) {
      changed = false;
      for (int u = 0; u < n; ++u) {
        for (const Edge& e : adj[u]) {
          if (e.cap > 0 && pot[u] + e.cost < pot[e.to] - 1e-15) {
            pot[e.to] = pot[u] + e.cost;
            changed = true;
          }
        }
      }
    }
    if (changed)
      throw NumericsError("min_cost_flow: negative-cost cycle in network");
  }

  int flow = 0;
  double total_cost = 0.0;
  while (flow < net.required_flow) {
    // Dijkstra on reduced costs
    std::vector<double> dist(n, inf);
    std::vector<int> prev_node(n, -1), prev_edge(n, -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    dist[net.source] = 0.0;
    pq.push({0.0, net.source});
    while (!pq.empty()) {
      auto [du, u] = pq.top();
      pq.pop();
      if (du > dist[u] + 1e-12) continue;
      for (int k = 0; k < static_cast<int>(adj[u].size()); ++k) {
        const Edge& e = adj[u][k];
        if (e.cap <= 0) continue;
        const double nd = dist[u] + e.cost + pot[u] - pot[e.to];
        if (nd < dist[e.to] - 1e-12) {
          dist[e.to] = nd;
          prev_node[e.to] = u;
          prev_edge[e.to] = k;
          pq.push({nd, e.to});
        }
      }
    }
    if (dist[net.sink] == inf)
      throw NumericsError("min_cost_flow: required flow is infeasible");
    for (int u = 0; u < n; ++u)
      if (dist[u] < inf) pot[u] += dist[u];
    // bottleneck along the path
    int push = net.required_flow - flow;
    for (int v = net.sink; v != net.source; v = prev_node[v])
      push = std::min(push, adj[prev_node[v]][prev_edge[v]].cap);
    for (int v = net.sink; v != net.source; v = prev_node[v]) {
      Edge& e = adj[prev_node[v]][prev_edge[v]];
      e.cap -= push;
      adj[e.to][e.rev].cap += push;
      total_cost += push * e.cost;
    }
    flow += push;
  }

  FlowResult res;
  res.arc_flows.assign(net.arcs.size(), 0);
  for (int u = 0; u < n; ++u)
    for (const Edge& e : adj[u])
      if (e.arc_index >= 0)
        res.arc_flows[e.arc_index] = net.arcs[e.arc_index].capacity - e.cap;
  res.total_cost = total_cost;
  return res;
}

Eigen::VectorXd finite_diff_gradient(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double h) {
  if (h <= 0.0) throw NumericsError("finite_diff_gradient: h must be > 0");
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericsError("finite_diff_gradient: non-finite function value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

RankVector ranks_descending(const Eigen::VectorXd& scores) {
  const Eigen::Index n = scores.size();
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
    if (scores[i] != scores[j]) return scores[i] > scores[j];
    return i < j;
  });
  RankVector ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (Eigen::Index k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace xai::num
