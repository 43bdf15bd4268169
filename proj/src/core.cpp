#include "selfdet/core.hpp"

#include <algorithm>

namespace selfdet {

BBox BBox::clamp_to(FrameSize frame) const {
  BBox out = *this;
  out.x = std::max(0.0, out.x);
  out.y = std::max(0.0, out.y);
  out.w = std::min(out.w, static_cast<double>(frame.width) - out.x);
  out.h = std::min(out.h, static_cast<double>(frame.height) - out.y);
  // Degenerate inputs collapse to a sliver at the border rather than
  // producing negative extents.
  out.w = std::max(out.w, 1e-9);
  out.h = std::max(out.h, 1e-9);
  out.x = std::min(out.x, static_cast<double>(frame.width) - out.w);
  out.y = std::min(out.y, static_cast<double>(frame.height) - out.h);
  return out;
}

double iou(const BBox& a, const BBox& b) {
  const double ix0 = std::max(a.x, b.x);
  const double iy0 = std::max(a.y, b.y);
  const double ix1 = std::min(a.x + a.w, b.x + b.w);
  const double iy1 = std::min(a.y + a.h, b.y + b.h);
  const double iw = ix1 - ix0;
  const double ih = iy1 - iy0;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

PixelRect rasterize(const BBox& box, FrameSize frame) {
  PixelRect r;
  r.x0 = std::clamp(round_half_up(box.x), 0, frame.width);
  r.y0 = std::clamp(round_half_up(box.y), 0, frame.height);
  r.x1 = std::clamp(round_half_up(box.x + box.w), 0, frame.width);
  r.y1 = std::clamp(round_half_up(box.y + box.h), 0, frame.height);
  return r;
}

void Hyperparams::validate() const {
  if (C <= 0.0) throw DataError("C must be > 0");
  if (lambda < 0.0) throw DataError("lambda must be >= 0");
  if (gamma_max < 0.0 || gamma_max > 1.0) throw DataError("gamma_max must be in [0,1]");
  if (r <= 1.0) throw DataError("r must be > 1");
  if (tau < 0) throw DataError("tau must be >= 0");
  if (k_nn < 1) throw DataError("k_nn must be >= 1");
  if (bg_threshold < 0.0 || bg_threshold > 1.0) throw DataError("bg_threshold must be in [0,1]");
  if (nms_iou <= 0.0 || nms_iou >= 1.0) throw DataError("nms_iou must be in (0,1)");
  if (stop_epsilon <= 0.0) throw DataError("stop_epsilon must be > 0");
  if (max_iterations < 1) throw DataError("max_iterations must be >= 1");
}

std::vector<Proposal> normalize_aspect(const std::vector<Proposal>& proposals,
                                       FrameSize frame) {
  if (proposals.empty()) throw EmptyInput();
  double sum = 0.0;
  for (const auto& p : proposals) sum += p.box.aspect();
  const double mean_aspect = sum / static_cast<double>(proposals.size());

  std::vector<Proposal> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    Proposal q = p;
    const double new_w = p.box.h * mean_aspect;
    q.box.x = p.box.cx() - 0.5 * new_w;
    q.box.w = new_w;
    q.box = q.box.clamp_to(frame);
    out.push_back(q);
  }
  return out;
}

} // namespace selfdet
