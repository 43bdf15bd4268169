#pragma once

#include "selfdet/core.hpp"
#include "selfdet/propagation.hpp"

#include <array>
#include <vector>

namespace selfdet {

struct TooFewSamples : DataError {
  TooFewSamples() : DataError("need at least 3 score triplets") {}
};

// Weights for (detection, motion, objectness); non-negative, L1 = 1.
struct RankWeights {
  std::array<double, 3> alpha = {0.0, 0.5, 0.5};
};

// f(h) = alpha . (calibrated f_beta, f_m, f_o). With use_detection=false
// (first learning iteration) the detection term is zero.
double combinatorial_score(const RankWeights& weights, const Proposal& p,
                           bool use_detection = true);

// One-class linear margin solve over score triplets (projected subgradient),
// then clamp to >= 0 and L1-normalize; uniform fallback if everything clamps.
RankWeights update_rank_weights(const std::vector<std::array<double, 3>>& triplets);

struct RankSplit {
  std::vector<Proposal> positives;
  std::vector<Proposal> negatives;
};

// Sort by combinatorial score; above pos_quantile -> positives, below
// neg_quantile -> negatives, middle band discarded.
RankSplit rank_and_split(const std::vector<Proposal>& proposals, const RankWeights& weights,
                         double pos_quantile, double neg_quantile,
                         bool use_detection = true);

} // namespace selfdet
