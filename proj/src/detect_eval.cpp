#include "selfdet/detect_eval.hpp"

#include "selfdet/features.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace selfdet {

namespace {

std::vector<BBox> grid_windows(const Frame& frame, const ProposalParams& params) {
  std::vector<BBox> out;
  const FrameSize fs = frame.size();
  for (int h : params.scales) {
    if (h > fs.height) continue;
    for (double aspect : params.aspects) {
      const double w = h * aspect;
      if (w > fs.width) continue;
      const double sx = std::max(1.0, w * params.stride_fraction);
      const double sy = std::max(1.0, h * params.stride_fraction);
      for (double y = 0.0; y + h <= fs.height + 1e-9; y += sy)
        for (double x = 0.0; x + w <= fs.width + 1e-9; x += sx)
          out.push_back(BBox{x, y, w, static_cast<double>(h)});
    }
  }
  return out;
}

template <bool Parallel>
std::vector<Detection> detect_impl(const LatentModel& model, const Frame& frame,
                                   const ProposalParams& params, double threshold,
                                   double nms_iou) {
  HogParams hp;
  hp.window_w = model.window_w;
  hp.window_h = model.window_h;
  if (hp.dim() != static_cast<int>(model.weights.size()))
    throw DimensionMismatch("model dimension does not match feature extractor");

  const auto windows = grid_windows(frame, params);
  std::vector<double> scores(windows.size());
#pragma omp parallel for schedule(dynamic, 16) if (Parallel)
  for (long long i = 0; i < static_cast<long long>(windows.size()); ++i) {
    const FeatureVector v = extract_features(frame, windows[i], hp);
    double s = model.bias;
    for (size_t k = 0; k < v.values.size(); ++k) s += model.weights[k] * v.values[k];
    scores[i] = s;
  }

  std::vector<Detection> dets;
  for (size_t i = 0; i < windows.size(); ++i) {
    if (scores[i] > threshold)
      dets.push_back({windows[i], scores[i], frame.index});
  }
  dets = nms(dets, nms_iou);
  return dets;
}

} // namespace

std::vector<Detection> detect(const LatentModel& model, const Frame& frame,
                              const ProposalParams& params, double threshold,
                              double nms_iou) {
  return detect_impl<true>(model, frame, params, threshold, nms_iou);
}

std::vector<Detection> detect_serial(const LatentModel& model, const Frame& frame,
                                     const ProposalParams& params, double threshold,
                                     double nms_iou) {
  return detect_impl<false>(model, frame, params, threshold, nms_iou);
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_thr) {
  std::vector<int> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score; // stable: ties keep input order
  });
  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> out;
  for (int i : idx) {
    if (suppressed[i]) continue;
    out.push_back(dets[i]);
    for (int j : idx)
      if (!suppressed[j] && j != i && iou(dets[i].box, dets[j].box) >= iou_thr)
        suppressed[j] = true;
  }
  return out;
}

EvalCurve evaluate(const std::vector<Detection>& dets, const GroundTruth& gt,
                   int num_frames, double iou_match) {
  // order detections by score descending (ties by frame then input order)
  std::vector<int> idx(dets.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return dets[a].score > dets[b].score;
  });

  int total_gt = 0;
  std::map<int, std::vector<bool>> used;
  for (const auto& [frame, boxes] : gt.frames) {
    total_gt += static_cast<int>(boxes.size());
    used[frame].assign(boxes.size(), false);
  }

  // greedy match in score order: best unmatched GT with IoU >= threshold
  std::vector<bool> is_tp(dets.size(), false);
  for (int i : idx) {
    const auto it = gt.frames.find(dets[i].frame_index);
    if (it == gt.frames.end()) continue;
    const auto& boxes = it->second;
    auto& flags = used[dets[i].frame_index];
    double best_iou = iou_match;
    int best_j = -1;
    for (size_t j = 0; j < boxes.size(); ++j) {
      if (flags[j]) continue;
      const double v = iou(dets[i].box, boxes[j].box);
      if (v >= best_iou) {
        best_iou = v;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) {
      flags[best_j] = true;
      is_tp[i] = true;
    }
  }

  EvalCurve curve;
  int tp = 0, fp = 0;
  std::vector<double> precisions, recalls;
  for (int i : idx) {
    if (is_tp[i])
      ++tp;
    else
      ++fp;
    EvalCurve::Point pt;
    pt.threshold = dets[i].score;
    pt.precision = static_cast<double>(tp) / (tp + fp);
    pt.recall = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
    pt.fppi = num_frames > 0 ? static_cast<double>(fp) / num_frames : 0.0;
    curve.points.push_back(pt);
    precisions.push_back(pt.precision);
    recalls.push_back(pt.recall);
  }

  // all-points interpolated AP
  if (!curve.points.empty() && total_gt > 0) {
    // precision envelope from the right
    for (int i = static_cast<int>(precisions.size()) - 2; i >= 0; --i)
      precisions[i] = std::max(precisions[i], precisions[i + 1]);
    double ap = 0.0;
    double prev_recall = 0.0;
    for (size_t i = 0; i < recalls.size(); ++i) {
      ap += (recalls[i] - prev_recall) * precisions[i];
      prev_recall = recalls[i];
    }
    curve.ap = ap;
    curve.max_recall = recalls.back();
  }
  return curve;
}

void write_curve_csv(const EvalCurve& curve, const std::filesystem::path& file) {
  std::ofstream out(file);
  out << "threshold,precision,recall,fppi\n";
  for (const auto& p : curve.points)
    out << p.threshold << "," << p.precision << "," << p.recall << "," << p.fppi << "\n";
}

void write_curve_summary(const EvalCurve& curve, const std::filesystem::path& file) {
  nlohmann::json j;
  j["ap"] = curve.ap;
  j["max_recall"] = curve.max_recall;
  std::ofstream out(file);
  out << j.dump(1) << "\n";
}

} // namespace selfdet
