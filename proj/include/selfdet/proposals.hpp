#pragma once

#include "selfdet/core.hpp"
#include "selfdet/motion.hpp"
#include "selfdet/scene_io.hpp"

#include <vector>

namespace selfdet {

struct FrameOutOfRange : DataError {
  FrameOutOfRange() : DataError("frame index out of range") {}
};

struct EdgeMap {
  int frame_index = 0;
  int width = 0;
  int height = 0;
  std::vector<double> magnitude; // per pixel, >= 0

  double at(int x, int y) const { return magnitude[static_cast<size_t>(y) * width + x]; }
};

struct ProposalParams {
  std::vector<int> scales = {24, 32, 48, 64}; // window heights
  std::vector<double> aspects = {0.5};        // w/h
  double stride_fraction = 0.25;
  int max_proposals_per_frame = 200;
  double border_margin_fraction = 0.15;
  double bg_threshold = 0.20;
};

EdgeMap edge_map(const Frame& frame);

// Motion score with an exterior-ring penalty: mean motion inside the box times
// (1 - mean motion in a ring surrounding it). A box spanning a whole moving
// object keeps a quiet ring; a sub-window inside the object is suppressed
// because the rest of the object fills its ring.
double motion_boxness(const MotionMap& mm, const BBox& box, double ring_fraction = 0.25);

// motion_boxness times blob coverage: the fraction of the connected moving
// region (threshold 0.5, 4-connectivity) that the box actually covers. A
// window carving a piece out of a larger moving blob scores near zero even
// if everything inside it moves; only windows spanning a whole blob survive.
// With an edge map, "ghost" blobs (motion with no edge support, i.e. freshly
// revealed background) are suppressed first.
double motion_fit(const MotionMap& mm, const BBox& box, double ring_fraction = 0.25,
                  const EdgeMap* em = nullptr);

// Interior-vs-ring contour density: rewards contours wholly inside the box,
// penalizes edges straddling the boundary ring.
double objectness_score(const EdgeMap& em, const BBox& box,
                        double border_margin_fraction = 0.15);

// Sliding-window enumeration gated by the motion score. With a model, each
// surviving window is also scored by the detector and ranked by it.
std::vector<Proposal> generate_proposals(const Frame& frame, const MotionMap& mm,
                                         const EdgeMap& em, const ProposalParams& params,
                                         const LatentModel* model = nullptr);

// Exhaustive block matching (SAD, +/-4 px) over tau successive frames.
// Stops early when the best match drifts too far in appearance.
std::vector<Proposal> track_proposals(const FrameSequence& frames, const Proposal& seed,
                                      int tau, const std::vector<MotionMap>* maps = nullptr,
                                      const std::vector<EdgeMap>* edges = nullptr,
                                      double border_margin_fraction = 0.15);

} // namespace selfdet
