#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfdet {

// Error hierarchy shared across modules. Data errors carry a short reason.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct EmptyInput : DataError {
  EmptyInput() : DataError("empty input") {}
};
struct ZeroAreaBox : DataError {
  ZeroAreaBox() : DataError("zero-area box") {}
};
struct DimensionMismatch : DataError {
  using DataError::DataError;
};

struct FrameSize {
  int width = 0;
  int height = 0;
};

// Axis-aligned box, real-valued. Rasterization rounds half-up.
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double aspect() const { return w / h; }

  BBox clamp_to(FrameSize frame) const;
};

double iou(const BBox& a, const BBox& b);

// Half-up rounding used everywhere a real coordinate meets a pixel grid.
inline int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

// Integer pixel span [x0,x1) x [y0,y1) covered by a box, clipped to the frame.
struct PixelRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool empty() const { return x1 <= x0 || y1 <= y0; }
};
PixelRect rasterize(const BBox& box, FrameSize frame);

enum class ProposalSource { objectness, sliding_window, tracked };

struct Proposal {
  BBox box;
  int frame_index = 0;
  double motion_score = 0.0;     // f_m in [0,1]
  double objectness_score = 0.0; // f_o in [0,1]
  double detection_score = 0.0;  // f_beta, unbounded
  std::optional<int> track_id;
  ProposalSource source = ProposalSource::objectness;
};

enum class Provenance { discovered, propagated, hard_negative, negative_image };

struct LabeledSample {
  Proposal proposal;
  int label = 0; // {0,1}
  Provenance provenance = Provenance::discovered;
  int iteration = 0;
  double soft_score = 0.0; // propagated g; 1.0 discovered positives, 0.0 negatives
};

struct Hyperparams {
  double C = 1.0;
  double lambda = 0.1;
  double gamma_max = 0.5;
  double r = 1.5; // learning rate, u = l*(r-1)
  int tau = 10;   // tracking horizon
  int k_nn = 5;
  double bg_threshold = 0.20;
  double nms_iou = 0.5;
  double stop_epsilon = 1e-3;
  int max_iterations = 20;

  void validate() const;
};

// Reshapes every box about its center to the mean aspect ratio of the set,
// keeping heights, then clamps to the frame.
std::vector<Proposal> normalize_aspect(const std::vector<Proposal>& proposals,
                                       FrameSize frame);

} // namespace selfdet
