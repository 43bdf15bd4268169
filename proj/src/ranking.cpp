#include "selfdet/ranking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace selfdet {

double combinatorial_score(const RankWeights& weights, const Proposal& p,
                           bool use_detection) {
  const double fb = use_detection ? logistic(p.detection_score) : 0.0;
  return weights.alpha[0] * fb + weights.alpha[1] * p.motion_score +
         weights.alpha[2] * p.objectness_score;
}

RankWeights update_rank_weights(const std::vector<std::array<double, 3>>& triplets) {
  const int n = static_cast<int>(triplets.size());
  if (n < 3) throw TooFewSamples();

  constexpr double nu = 0.1;
  constexpr int kSteps = 1000;
  const double inv = 1.0 / (nu * n);

  std::array<double, 3> alpha = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  double rho = 0.0;
  for (int t = 1; t <= kSteps; ++t) {
    std::array<double, 3> grad = alpha;
    double grad_rho = -1.0;
    for (const auto& s : triplets) {
      const double dot = alpha[0] * s[0] + alpha[1] * s[1] + alpha[2] * s[2];
      if (dot < rho) {
        for (int k = 0; k < 3; ++k) grad[k] -= inv * s[k];
        grad_rho += inv;
      }
    }
    const double step = 1.0 / t;
    for (int k = 0; k < 3; ++k) alpha[k] = std::max(0.0, alpha[k] - step * grad[k]);
    rho -= step * grad_rho;
  }

  double l1 = alpha[0] + alpha[1] + alpha[2];
  RankWeights out;
  if (l1 <= 0.0) {
    out.alpha = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  } else {
    for (int k = 0; k < 3; ++k) out.alpha[k] = alpha[k] / l1;
  }
  return out;
}

RankSplit rank_and_split(const std::vector<Proposal>& proposals, const RankWeights& weights,
                         double pos_quantile, double neg_quantile, bool use_detection) {
  if (!(0.0 < neg_quantile && neg_quantile < pos_quantile && pos_quantile < 1.0))
    throw DataError("quantiles must satisfy 0 < neg_q < pos_q < 1");

  const int n = static_cast<int>(proposals.size());
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<double> score(n);
  for (int i = 0; i < n; ++i)
    score[i] = combinatorial_score(weights, proposals[i], use_detection);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (score[a] != score[b]) return score[a] > score[b];
    const auto& pa = proposals[a];
    const auto& pb = proposals[b];
    if (pa.frame_index != pb.frame_index) return pa.frame_index < pb.frame_index;
    if (pa.box.y != pb.box.y) return pa.box.y < pb.box.y;
    return pa.box.x < pb.box.x;
  });

  const int pos_count = round_half_up(n * (1.0 - pos_quantile));
  const int neg_count = round_half_up(n * neg_quantile);
  RankSplit out;
  for (int i = 0; i < pos_count && i < n; ++i) out.positives.push_back(proposals[idx[i]]);
  for (int i = 0; i < neg_count && n - 1 - i >= pos_count; ++i)
    out.negatives.push_back(proposals[idx[n - 1 - i]]);
  return out;
}

} // namespace selfdet
