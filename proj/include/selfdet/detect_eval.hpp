#pragma once

#include "selfdet/core.hpp"
#include "selfdet/proposals.hpp"
#include "selfdet/scene_io.hpp"

#include <vector>

namespace selfdet {

struct Detection {
  BBox box;
  double score = 0.0;
  int frame_index = 0;
};

// Sliding-window inference over the proposal grid; windows above threshold
// kept, greedy NMS applied, sorted by score descending.
std::vector<Detection> detect(const LatentModel& model, const Frame& frame,
                              const ProposalParams& params, double threshold = 0.0,
                              double nms_iou = 0.5);
std::vector<Detection> detect_serial(const LatentModel& model, const Frame& frame,
                                     const ProposalParams& params, double threshold = 0.0,
                                     double nms_iou = 0.5);

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thr);

struct EvalCurve {
  struct Point {
    double threshold = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double fppi = 0.0;
  };
  std::vector<Point> points;
  double ap = 0.0;
  double max_recall = 0.0;
};

// PASCAL-style greedy matching at IoU >= iou_match, all-points AP, FPPI.
EvalCurve evaluate(const std::vector<Detection>& dets, const GroundTruth& gt,
                   int num_frames, double iou_match = 0.5);

void write_curve_csv(const EvalCurve& curve, const std::filesystem::path& file);
void write_curve_summary(const EvalCurve& curve, const std::filesystem::path& file);

} // namespace selfdet
