#pragma once

#include "selfdet/core.hpp"
#include "selfdet/scene_io.hpp"

#include <vector>

namespace selfdet {

struct MotionMap {
  int frame_index = 0;
  int width = 0;
  int height = 0;
  bool reliable = true; // false during background warm-up
  std::vector<double> scores; // per pixel, in [0,1]

  double at(int x, int y) const { return scores[static_cast<size_t>(y) * width + x]; }
};

// Single-Gaussian running background model. observe_frame must be called
// in frame order by one writer; emitted maps are immutable.
class BackgroundModel {
 public:
  BackgroundModel(int width, int height, double rho = 0.05, double sigma_floor = 2.0);

  // Scores the frame against the pre-update model, then updates mean/variance.
  MotionMap observe_frame(const Frame& frame);

  int frames_observed() const { return frames_observed_; }
  static constexpr int kWarmupFrames = 10;

 private:
  int width_, height_;
  double rho_, sigma_floor_;
  int frames_observed_ = 0;
  std::vector<double> mean_;
  std::vector<double> var_;
  std::vector<int> fg_age_; // consecutive frames classified foreground
};

// Mean pixel score inside the rasterized box.
double motion_score(const MotionMap& map, const BBox& box);

// Runs the background model over the whole sequence.
std::vector<MotionMap> motion_maps(const FrameSequence& seq,
                                   double rho = 0.05, double sigma_floor = 2.0);

Frame motion_map_to_pgm(const MotionMap& map);

} // namespace selfdet
