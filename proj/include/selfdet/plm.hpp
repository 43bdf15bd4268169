#pragma once

#include "selfdet/core.hpp"
#include "selfdet/features.hpp"
#include "selfdet/scene_io.hpp"

#include <utility>
#include <vector>

namespace selfdet {

struct EmptyCandidates : DataError {
  EmptyCandidates() : DataError("instance has no candidates") {}
};
struct NoPositives : DataError {
  NoPositives() : DataError("training set has no positive instances") {}
};
struct NoNegatives : DataError {
  NoNegatives() : DataError("training set has no negative instances") {}
};
struct NonFiniteObjective : DataError {
  NonFiniteObjective() : DataError("objective became non-finite (divergent step)") {}
};

// One frame/image with its candidate windows H_i. For negatives, candidates
// are features of random windows in the negative image.
struct TrainingInstance {
  int image_id = 0;
  int label = 0; // y in {0,1}
  std::vector<FeatureVector> candidates;
  double weight = 1.0; // soft_score from propagation, in (0,1]
};

struct LatentChoice {
  int label = 0;      // y*
  int index = 0;      // h* (candidate index)
  double score = 0.0; // winning raw score
};

using FeaturePair = std::pair<FeatureVector, FeatureVector>; // (v_h, v_h')

struct HardNegativeSet {
  Proposal anchor;
  std::vector<Proposal> neighbors; // iou with anchor strictly in (0, 0.25)
};

double score_candidate(const LatentModel& model, const FeatureVector& v);

LatentChoice infer_latent(const LatentModel& model, const TrainingInstance& instance);

double dc_loss(const LatentModel& model, const TrainingInstance& instance);

double objective_Fl(const LatentModel& model,
                    const std::vector<TrainingInstance>& instances, double C);

HardNegativeSet mine_hard_negatives(const std::vector<Proposal>& frame_proposals,
                                    const Proposal& anchor, const LatentModel& model,
                                    const Frame& frame, int K = 5);

double spatial_reg_Fs(const LatentModel& model, const std::vector<FeaturePair>& pairs);

struct CccpParams {
  double C = 1.0;
  double lambda = 0.1;
  int max_outer = 20;
  int inner_steps = 500;
  double rel_tol = 1e-6;
  double grad_tol = 1e-6;
  int window_w = 32;
  int window_h = 64;
  const LatentModel* warm_start = nullptr;
};

struct CccpResult {
  LatentModel model;
  std::vector<double> objective_history; // full DC objective per outer round
  double lambda_used = 0.0;              // after any automatic halving
  int lambda_halvings = 0;
};

// Two-step CCCP: alternate latent imputation with a deterministic full-batch
// subgradient solve of the convexified objective. The DC objective
// F_l - lambda*F_s is non-increasing across outer rounds.
CccpResult cccp_train(const std::vector<TrainingInstance>& instances,
                      const std::vector<FeaturePair>& hard_pairs,
                      const CccpParams& params);

} // namespace selfdet
