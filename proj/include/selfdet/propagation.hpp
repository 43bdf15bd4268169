#pragma once

#include "selfdet/core.hpp"
#include "selfdet/features.hpp"
#include "selfdet/plm.hpp"

#include <functional>
#include <vector>

namespace selfdet {

struct DegenerateFeatures : DataError {
  DegenerateFeatures() : DataError("non-finite feature values") {}
};
struct NoLabeledVertices : DataError {
  NoLabeledVertices() : DataError("graph has no labeled vertices") {}
};
struct EmptySamples : DataError {
  EmptySamples() : DataError("no samples to estimate error rate on") {}
};

// Mutual-or kNN graph: vertices 0..l-1 labeled, l..n-1 unlabeled.
struct SampleGraph {
  int num_labeled = 0;
  int num_vertices = 0;
  double sigma = 0.0; // Gaussian bandwidth (median kNN distance)
  // adjacency[i] = (j, w_ij); symmetric, no self-loops
  std::vector<std::vector<std::pair<int, double>>> adjacency;
};

SampleGraph build_graph(const std::vector<FeatureVector>& features, int num_labeled, int k);

struct PropagationResult {
  std::vector<double> scores; // g_j for unlabeled vertices (index j-l)
  bool converged = false;
  int iterations = 0;
  std::vector<bool> reachable; // per unlabeled vertex
};

PropagationResult propagate(const SampleGraph& graph, const std::vector<double>& labels);

// Dense closed-form harmonic solution; test oracle for propagate.
std::vector<double> propagate_closed_form(const SampleGraph& graph,
                                          const std::vector<double>& labels);

struct NewLabel {
  int pool_index = 0; // index into the unlabeled pool
  int label = 0;      // g >= 0.5
  double soft_score = 0.0;
};

// u = round(l*(r-1)) highest-g unlabeled vertices, ties by lower index.
std::vector<NewLabel> select_new_labels(const PropagationResult& result, int num_labeled,
                                        double r);

inline double logistic(double s) { return 1.0 / (1.0 + std::exp(-s)); }

struct ScoredSample {
  double raw_score = 0.0; // f_beta(h)
  double estimated_label = 0.0;
};

// Mean absolute deviation of logistic-calibrated scores from estimated labels.
double estimate_error_rate(const std::vector<ScoredSample>& samples);

struct ErrorRateEstimate {
  double xi_l = 0.0;
  double xi_u = 0.0;
  double gamma = 0.0;
  int accepted = 0; // number of newly labeled samples at the accepted gamma
};

// Callback trains a provisional model on existing + the given new labels and
// returns its raw scores on (existing samples, new samples).
struct GammaEvaluation {
  std::vector<ScoredSample> existing; // estimated_label = stored label
  std::vector<double> new_raw_scores; // provisional f on new samples
};
using ProvisionalTrainer =
    std::function<GammaEvaluation(const std::vector<NewLabel>&)>;

// Eq.-style controller: largest gamma in {0, 0.1, ...} capped at gamma_max
// whose newly-labeled error estimate does not exceed the existing one.
// u(gamma) = round(gamma * l * (r-1)).
ErrorRateEstimate gamma_line_search(const PropagationResult& result, int num_labeled,
                                    double r, double gamma_max,
                                    const ProvisionalTrainer& trainer);

std::vector<NewLabel> labels_for_gamma(const PropagationResult& result, int num_labeled,
                                       double r, double gamma);

// kNN distance computation, omp and serial reference variants.
std::vector<std::vector<double>> pairwise_distances(const std::vector<FeatureVector>& f);
std::vector<std::vector<double>> pairwise_distances_serial(const std::vector<FeatureVector>& f);

} // namespace selfdet
