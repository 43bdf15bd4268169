#pragma once

#include "selfdet/core.hpp"
#include "selfdet/scene_io.hpp"

#include <vector>

namespace selfdet {

// HOG layout for the canonical window. 8x8 cells, 9 unsigned orientation
// bins, 2x2-cell blocks at stride 1 with L2-hys normalization.
struct HogParams {
  int window_w = 32;
  int window_h = 64;
  int cell = 8;
  int bins = 9;

  int cells_x() const { return window_w / cell; }
  int cells_y() const { return window_h / cell; }
  int blocks_x() const { return cells_x() - 1; }
  int blocks_y() const { return cells_y() - 1; }
  int block_dim() const { return 4 * bins; }
  int dim() const { return blocks_x() * blocks_y() * block_dim(); }
};

struct FeatureVector {
  std::vector<double> values;
  int window_w = 0;
  int window_h = 0;

  int dim() const { return static_cast<int>(values.size()); }
};

FeatureVector extract_features(const Frame& frame, const BBox& box,
                               const HogParams& params = {});

// v(x,1,h) = v; v(x,0,h) = 0, so the label-0 score is identically zero.
FeatureVector label_feature(const FeatureVector& v, int y);

// Batch extraction. The omp variant parallelizes across boxes and is
// bit-identical to the serial one.
std::vector<FeatureVector> extract_batch_serial(const Frame& frame,
                                                const std::vector<BBox>& boxes,
                                                const HogParams& params = {});
std::vector<FeatureVector> extract_batch(const Frame& frame,
                                         const std::vector<BBox>& boxes,
                                         const HogParams& params = {});

} // namespace selfdet
