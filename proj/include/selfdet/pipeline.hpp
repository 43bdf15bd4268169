#pragma once

#include "selfdet/core.hpp"
#include "selfdet/detect_eval.hpp"
#include "selfdet/motion.hpp"
#include "selfdet/plm.hpp"
#include "selfdet/proposals.hpp"
#include "selfdet/ranking.hpp"
#include "selfdet/scene_io.hpp"

#include <vector>

namespace selfdet {

struct InsufficientFrames : DataError {
  InsufficientFrames() : DataError("learning needs >= 20 video frames and >= 5 negative images") {}
};
struct NoProposalsSurvived : DataError {
  NoProposalsSurvived()
      : DataError("motion gate removed every proposal (static video or wrong bg_threshold?)") {}
};

struct PipelineConfig {
  Hyperparams hp;
  ProposalParams pp;
  double pos_quantile = 0.9;
  double neg_quantile = 0.3;
  int negative_windows_per_image = 16;
  int cccp_inner_steps = 200;
  int provisional_inner_steps = 60;
  int hard_negative_K = 5;
  int bootstrap_negatives_per_image = 10; // model-mined windows from negative images
  int track_seeds_per_frame = 2;
  int max_candidates_per_frame = 10; // latent candidate cap per positive frame
  int max_hard_negatives = 400;     // global cap on mined hard negatives
  int max_unlabeled_pool = 120;     // propagation pool cap
  bool recompute_aspect = true;     // re-derive mean aspect each iteration
  std::uint64_t seed = 7;
};

// Labeled sample with its cached feature vector.
struct PoolSample {
  Proposal proposal;
  FeatureVector features;
  int label = 0;
  Provenance provenance = Provenance::discovered;
  int iteration = 0;
  double soft_score = 0.0;
  bool from_negative_image = false;
};

struct LearnState {
  int iteration = 0;
  LatentModel model;
  RankWeights alpha;
  std::vector<PoolSample> labeled; // positives, negatives, hard negatives
  std::vector<double> xi_history;
  std::vector<double> gamma_history;
  std::vector<LogEntry> log;
  bool stability_warning = false;

  int count_positives() const;
  int count_negatives() const;
};

LearnState self_learn(const FrameSequence& video, const FrameSequence& negative_images,
                      const PipelineConfig& cfg);

} // namespace selfdet
