#include "selfdet/features.hpp"

#include <algorithm>
#include <cmath>

namespace selfdet {

namespace {

// Bilinear sample at real-valued frame coordinates, clamped to bounds.
double sample(const Frame& frame, double x, double y) {
  x = std::clamp(x, 0.0, frame.width - 1.0);
  y = std::clamp(y, 0.0, frame.height - 1.0);
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, frame.width - 1);
  const int y1 = std::min(y0 + 1, frame.height - 1);
  const double fx = x - x0, fy = y - y0;
  return frame.at(x0, y0) * (1 - fx) * (1 - fy) + frame.at(x1, y0) * fx * (1 - fy) +
         frame.at(x0, y1) * (1 - fx) * fy + frame.at(x1, y1) * fx * fy;
}

void resample_patch(const Frame& frame, const BBox& box, const HogParams& p,
                    std::vector<double>& patch) {
  patch.resize(static_cast<size_t>(p.window_w) * p.window_h);
  for (int j = 0; j < p.window_h; ++j) {
    const double v = (j + 0.5) / p.window_h;
    const double sy = box.y + v * box.h - 0.5;
    for (int i = 0; i < p.window_w; ++i) {
      const double u = (i + 0.5) / p.window_w;
      const double sx = box.x + u * box.w - 0.5;
      patch[static_cast<size_t>(j) * p.window_w + i] = sample(frame, sx, sy);
    }
  }
}

void hog_from_patch(const std::vector<double>& patch, const HogParams& p,
                    FeatureVector& out) {
  const int W = p.window_w, H = p.window_h;
  auto px = [&](int x, int y) { return patch[static_cast<size_t>(y) * W + x]; };

  // Per-cell orientation histograms; bilinear vote into neighboring bins.
  const int cx = p.cells_x(), cy = p.cells_y();
  std::vector<double> hist(static_cast<size_t>(cx) * cy * p.bins, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      // central differences, one-sided at borders
      const double gx = (x == 0)     ? px(1, y) - px(0, y)
                        : (x == W - 1) ? px(W - 1, y) - px(W - 2, y)
                                       : 0.5 * (px(x + 1, y) - px(x - 1, y));
      const double gy = (y == 0)     ? px(x, 1) - px(x, 0)
                        : (y == H - 1) ? px(x, H - 1) - px(x, H - 2)
                                       : 0.5 * (px(x, y + 1) - px(x, y - 1));
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0) continue;
      double theta = std::atan2(gy, gx) * 180.0 / M_PI;
      if (theta < 0.0) theta += 180.0;
      if (theta >= 180.0) theta -= 180.0;
      const double pos = theta * p.bins / 180.0;
      const int b0 = std::min(static_cast<int>(pos), p.bins - 1);
      const int b1 = (b0 + 1) % p.bins;
      const double f = pos - b0;
      const int cell = (y / p.cell) * cx + (x / p.cell);
      hist[static_cast<size_t>(cell) * p.bins + b0] += mag * (1.0 - f);
      hist[static_cast<size_t>(cell) * p.bins + b1] += mag * f;
    }
  }

  // 2x2 blocks, stride one cell, L2-hys (clip at 0.2, renormalize).
  out.values.assign(p.dim(), 0.0);
  out.window_w = W;
  out.window_h = H;
  int off = 0;
  std::vector<double> block(p.block_dim());
  for (int by = 0; by < p.blocks_y(); ++by) {
    for (int bx = 0; bx < p.blocks_x(); ++bx) {
      int k = 0;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          const int cell = (by + dy) * cx + (bx + dx);
          for (int b = 0; b < p.bins; ++b)
            block[k++] = hist[static_cast<size_t>(cell) * p.bins + b];
        }
      double norm = 0.0;
      for (double v : block) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 0.0) {
        for (double& v : block) v = std::min(v / norm, 0.2);
        double norm2 = 0.0;
        for (double v : block) norm2 += v * v;
        norm2 = std::sqrt(norm2);
        if (norm2 > 0.0)
          for (double& v : block) v /= norm2;
      }
      for (int b = 0; b < p.block_dim(); ++b) out.values[off + b] = block[b];
      off += p.block_dim();
    }
  }
}

} // namespace

FeatureVector extract_features(const Frame& frame, const BBox& box, const HogParams& params) {
  if (box.w <= 0.0 || box.h <= 0.0) throw ZeroAreaBox();
  std::vector<double> patch;
  resample_patch(frame, box.clamp_to(frame.size()), params, patch);
  FeatureVector out;
  hog_from_patch(patch, params, out);
  return out;
}

FeatureVector label_feature(const FeatureVector& v, int y) {
  if (y == 1) return v;
  FeatureVector zero;
  zero.values.assign(v.values.size(), 0.0);
  zero.window_w = v.window_w;
  zero.window_h = v.window_h;
  return zero;
}

std::vector<FeatureVector> extract_batch_serial(const Frame& frame,
                                                const std::vector<BBox>& boxes,
                                                const HogParams& params) {
  std::vector<FeatureVector> out(boxes.size());
  for (size_t i = 0; i < boxes.size(); ++i)
    out[i] = extract_features(frame, boxes[i], params);
  return out;
}

std::vector<FeatureVector> extract_batch(const Frame& frame,
                                         const std::vector<BBox>& boxes,
                                         const HogParams& params) {
  std::vector<FeatureVector> out(boxes.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (long long i = 0; i < static_cast<long long>(boxes.size()); ++i)
    out[i] = extract_features(frame, boxes[i], params);
  return out;
}

} // namespace selfdet
