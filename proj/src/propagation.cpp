#include "selfdet/propagation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace selfdet {

std::vector<std::vector<double>> pairwise_distances_serial(
    const std::vector<FeatureVector>& f) {
  const size_t n = f.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      const size_t dim = std::min(f[i].values.size(), f[j].values.size());
      for (size_t k = 0; k < dim; ++k) {
        const double diff = f[i].values[k] - f[j].values[k];
        s += diff * diff;
      }
      d[i][j] = d[j][i] = std::sqrt(s);
    }
  }
  return d;
}

std::vector<std::vector<double>> pairwise_distances(const std::vector<FeatureVector>& f) {
  const size_t n = f.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      const size_t dim = std::min(f[i].values.size(), f[j].values.size());
      for (size_t k = 0; k < dim; ++k) {
        const double diff = f[i].values[k] - f[j].values[k];
        s += diff * diff;
      }
      d[i][j] = std::sqrt(s);
    }
  }
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < i; ++j) d[i][j] = d[j][i];
  return d;
}

SampleGraph build_graph(const std::vector<FeatureVector>& features, int num_labeled, int k) {
  const int n = static_cast<int>(features.size());
  if (num_labeled < 1) throw NoLabeledVertices();
  if (n < num_labeled + 1) throw DataError("graph needs at least one unlabeled vertex");
  for (const auto& f : features)
    for (double v : f.values)
      if (!std::isfinite(v)) throw DegenerateFeatures();

  const auto dist = pairwise_distances(features);

  // kNN per vertex, ties broken by lower index
  std::vector<std::vector<int>> knn(n);
  std::vector<double> knn_dists;
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx;
    idx.reserve(n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return dist[i][a] < dist[i][b];
    });
    const int kk = std::min<int>(k, static_cast<int>(idx.size()));
    knn[i].assign(idx.begin(), idx.begin() + kk);
    for (int j = 0; j < kk; ++j) knn_dists.push_back(dist[i][idx[j]]);
  }

  std::sort(knn_dists.begin(), knn_dists.end());
  double sigma = knn_dists.empty() ? 0.0 : knn_dists[knn_dists.size() / 2];
  sigma = std::max(sigma, 1e-6);

  SampleGraph g;
  g.num_labeled = num_labeled;
  g.num_vertices = n;
  g.sigma = sigma;
  g.adjacency.assign(n, {});

  std::vector<std::vector<bool>> connected(n, std::vector<bool>(n, false));
  for (int i = 0; i < n; ++i)
    for (int j : knn[i]) {
      connected[i][j] = true;
      connected[j][i] = true; // mutual-or rule
    }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (connected[i][j]) {
        const double w = std::exp(-dist[i][j] * dist[i][j] / (2.0 * sigma * sigma));
        g.adjacency[i].push_back({j, w});
        g.adjacency[j].push_back({i, w});
      }
  return g;
}

PropagationResult propagate(const SampleGraph& graph, const std::vector<double>& labels) {
  const int l = graph.num_labeled;
  const int n = graph.num_vertices;
  const int u = n - l;
  if (l < 1 || static_cast<int>(labels.size()) != l) throw NoLabeledVertices();

  // reachability from the labeled set
  std::vector<bool> seen(n, false);
  std::queue<int> q;
  for (int i = 0; i < l; ++i) {
    seen[i] = true;
    q.push(i);
  }
  while (!q.empty()) {
    const int v = q.front();
    q.pop();
    for (const auto& [j, w] : graph.adjacency[v])
      if (!seen[j]) {
        seen[j] = true;
        q.push(j);
      }
  }

  PropagationResult res;
  res.scores.assign(u, 0.0);
  res.reachable.assign(u, false);
  for (int j = 0; j < u; ++j) res.reachable[j] = seen[l + j];

  std::vector<double> g(n, 0.0);
  for (int i = 0; i < l; ++i) g[i] = labels[i];

  constexpr int kMaxSweeps = 10000;
  constexpr double kTol = 1e-8;
  int sweep = 0;
  for (; sweep < kMaxSweeps; ++sweep) {
    double max_change = 0.0;
    for (int j = l; j < n; ++j) { // Gauss-Seidel in vertex order
      if (!seen[j]) continue;
      double num = 0.0, den = 0.0;
      for (const auto& [k, w] : graph.adjacency[j]) {
        num += w * g[k];
        den += w;
      }
      if (den <= 0.0) continue;
      const double next = num / den;
      max_change = std::max(max_change, std::abs(next - g[j]));
      g[j] = next;
    }
    if (max_change < kTol) {
      res.converged = true;
      ++sweep;
      break;
    }
  }
  res.iterations = sweep;
  for (int j = 0; j < u; ++j) res.scores[j] = seen[l + j] ? g[l + j] : 0.0;
  return res;
}

std::vector<double> propagate_closed_form(const SampleGraph& graph,
                                          const std::vector<double>& labels) {
  const int l = graph.num_labeled;
  const int n = graph.num_vertices;
  const int u = n - l;
  if (l < 1 || static_cast<int>(labels.size()) != l) throw NoLabeledVertices();

  // identify reachable unlabeled vertices (solve only on that block)
  PropagationResult reach = propagate(graph, labels); // reuse reachability
  std::vector<int> sub; // unlabeled vertex -> row
  std::vector<int> row_of(n, -1);
  for (int j = 0; j < u; ++j)
    if (reach.reachable[j]) {
      row_of[l + j] = static_cast<int>(sub.size());
      sub.push_back(l + j);
    }
  const int m = static_cast<int>(sub.size());

  // (D_uu - W_uu) g_u = W_ul y_l
  std::vector<std::vector<double>> A(m, std::vector<double>(m, 0.0));
  std::vector<double> b(m, 0.0);
  for (int r = 0; r < m; ++r) {
    const int j = sub[r];
    double deg = 0.0;
    for (const auto& [k, w] : graph.adjacency[j]) {
      deg += w;
      if (k < l)
        b[r] += w * labels[k];
      else if (row_of[k] >= 0)
        A[r][row_of[k]] -= w;
    }
    A[r][r] += deg;
  }

  // Gaussian elimination with partial pivoting
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  for (int c = 0; c < m; ++c) {
    int piv = c;
    for (int r = c + 1; r < m; ++r)
      if (std::abs(A[r][c]) > std::abs(A[piv][c])) piv = r;
    std::swap(A[c], A[piv]);
    std::swap(b[c], b[piv]);
    for (int r = c + 1; r < m; ++r) {
      const double f = A[r][c] / A[c][c];
      if (f == 0.0) continue;
      for (int cc = c; cc < m; ++cc) A[r][cc] -= f * A[c][cc];
      b[r] -= f * b[c];
    }
  }
  std::vector<double> x(m, 0.0);
  for (int r = m - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < m; ++c) s -= A[r][c] * x[c];
    x[r] = s / A[r][r];
  }

  std::vector<double> out(u, 0.0);
  for (int r = 0; r < m; ++r) out[sub[r] - l] = x[r];
  return out;
}

std::vector<NewLabel> labels_for_gamma(const PropagationResult& result, int num_labeled,
                                       double r, double gamma) {
  const int budget =
      std::max(0, round_half_up(gamma * num_labeled * (r - 1.0)));
  std::vector<int> idx(result.scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return result.scores[a] > result.scores[b];
  });
  std::vector<NewLabel> out;
  for (int i = 0; i < budget && i < static_cast<int>(idx.size()); ++i) {
    NewLabel nl;
    nl.pool_index = idx[i];
    nl.soft_score = result.scores[idx[i]];
    nl.label = nl.soft_score >= 0.5 ? 1 : 0;
    out.push_back(nl);
  }
  return out;
}

std::vector<NewLabel> select_new_labels(const PropagationResult& result, int num_labeled,
                                        double r) {
  return labels_for_gamma(result, num_labeled, r, 1.0);
}

double estimate_error_rate(const std::vector<ScoredSample>& samples) {
  if (samples.empty()) throw EmptySamples();
  double sum = 0.0;
  for (const auto& s : samples) {
    const double calibrated = std::clamp(logistic(s.raw_score), 0.0, 1.0);
    sum += std::abs(calibrated - s.estimated_label);
  }
  return sum / static_cast<double>(samples.size());
}

ErrorRateEstimate gamma_line_search(const PropagationResult& result, int num_labeled,
                                    double r, double gamma_max,
                                    const ProvisionalTrainer& trainer) {
  ErrorRateEstimate best;
  best.gamma = 0.0;
  best.xi_u = 0.0;
  {
    const GammaEvaluation ev = trainer({});
    best.xi_l = ev.existing.empty() ? 0.0 : estimate_error_rate(ev.existing);
  }

  for (int step = 1; step <= 10; ++step) {
    const double gamma = 0.1 * step;
    if (gamma > gamma_max + 1e-9) break;
    const auto new_labels = labels_for_gamma(result, num_labeled, r, gamma);
    if (new_labels.empty()) {
      // zero budget at this gamma: trivially passes with xi_u = 0
      ErrorRateEstimate est = best;
      est.gamma = gamma;
      est.accepted = 0;
      est.xi_u = 0.0;
      best = est;
      continue;
    }
    const GammaEvaluation ev = trainer(new_labels);
    ErrorRateEstimate est;
    est.gamma = gamma;
    est.accepted = static_cast<int>(new_labels.size());
    est.xi_l = ev.existing.empty() ? 0.0 : estimate_error_rate(ev.existing);
    // estimated labels of new samples come from the provisional model itself
    std::vector<ScoredSample> news;
    news.reserve(ev.new_raw_scores.size());
    for (double s : ev.new_raw_scores)
      news.push_back({s, s > 0.0 ? 1.0 : 0.0});
    est.xi_u = news.empty() ? 0.0 : estimate_error_rate(news);
    if (est.xi_u <= est.xi_l) best = est;
  }
  return best;
}

} // namespace selfdet
