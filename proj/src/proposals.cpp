#include "selfdet/proposals.hpp"

#include "selfdet/features.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace selfdet {

EdgeMap edge_map(const Frame& frame) {
  EdgeMap em;
  em.frame_index = frame.index;
  em.width = frame.width;
  em.height = frame.height;
  em.magnitude.resize(static_cast<size_t>(frame.width) * frame.height);
  const int W = frame.width, H = frame.height;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double gx = (x == 0)     ? frame.at(1, y) - frame.at(0, y)
                        : (x == W - 1) ? frame.at(W - 1, y) - frame.at(W - 2, y)
                                       : 0.5 * (frame.at(x + 1, y) - frame.at(x - 1, y));
      const double gy = (y == 0)     ? frame.at(x, 1) - frame.at(x, 0)
                        : (y == H - 1) ? frame.at(x, H - 1) - frame.at(x, H - 2)
                                       : 0.5 * (frame.at(x, y + 1) - frame.at(x, y - 1));
      em.magnitude[static_cast<size_t>(y) * W + x] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return em;
}

namespace {

double mean_edge(const EdgeMap& em, const PixelRect& r) {
  if (r.empty()) return 0.0;
  double sum = 0.0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x)
      sum += em.at(x, y);
  return sum / (static_cast<double>(r.width()) * r.height());
}

double saturate(double t) {
  constexpr double c = 8.0;
  return t / (t + c);
}

} // namespace

double motion_boxness(const MotionMap& mm, const BBox& box, double ring_fraction) {
  const FrameSize fs{mm.width, mm.height};
  const PixelRect in = rasterize(box, fs);
  if (in.empty()) throw ZeroAreaBox();

  BBox grown = box;
  grown.x -= ring_fraction * box.w;
  grown.y -= ring_fraction * box.h;
  grown.w = box.w * (1.0 + 2.0 * ring_fraction);
  grown.h = box.h * (1.0 + 2.0 * ring_fraction);
  const PixelRect outer = rasterize(grown.clamp_to(fs), fs);

  double inner_sum = 0.0;
  long long inner_n = 0;
  double ring_sum = 0.0;
  long long ring_n = 0;
  for (int y = outer.y0; y < outer.y1; ++y) {
    for (int x = outer.x0; x < outer.x1; ++x) {
      const double v = mm.scores[static_cast<size_t>(y) * mm.width + x];
      const bool inside = x >= in.x0 && x < in.x1 && y >= in.y0 && y < in.y1;
      if (inside) {
        inner_sum += v;
        ++inner_n;
      } else {
        ring_sum += v;
        ++ring_n;
      }
    }
  }
  const double mi = inner_n > 0 ? inner_sum / inner_n : 0.0;
  const double mr = ring_n > 0 ? ring_sum / ring_n : 0.0;
  return mi * (1.0 - mr);
}

namespace {

// Connected components of the thresholded motion map. label[i] = -1 for
// background, otherwise the blob id; areas[id] = pixel count of that blob.
struct MotionBlobs {
  std::vector<int> label;
  std::vector<int> areas;
  std::vector<PixelRect> boxes; // tight pixel bounds per blob
};

MotionBlobs motion_blobs(const MotionMap& mm, double threshold = 0.5) {
  MotionBlobs out;
  const size_t n = mm.scores.size();
  out.label.assign(n, -1);
  std::vector<size_t> stack;
  for (size_t s = 0; s < n; ++s) {
    if (mm.scores[s] < threshold || out.label[s] != -1) continue;
    const int id = static_cast<int>(out.areas.size());
    int area = 0;
    PixelRect bb{mm.width, mm.height, 0, 0};
    stack.push_back(s);
    out.label[s] = id;
    while (!stack.empty()) {
      const size_t i = stack.back();
      stack.pop_back();
      ++area;
      const int x = static_cast<int>(i % mm.width);
      const int y = static_cast<int>(i / mm.width);
      bb.x0 = std::min(bb.x0, x);
      bb.y0 = std::min(bb.y0, y);
      bb.x1 = std::max(bb.x1, x + 1);
      bb.y1 = std::max(bb.y1, y + 1);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || nx[k] >= mm.width || ny[k] < 0 || ny[k] >= mm.height) continue;
        const size_t j = static_cast<size_t>(ny[k]) * mm.width + nx[k];
        if (mm.scores[j] >= threshold && out.label[j] == -1) {
          out.label[j] = id;
          stack.push_back(j);
        }
      }
    }
    out.areas.push_back(area);
    out.boxes.push_back(bb);
  }
  return out;
}

// Zeroes motion blobs that cannot be a whole object:
//  - "ghosts": blobs with no edge support inside (background revealed by a
//    departing object differs from the background model but is smooth,
//    while a real object carries its contours with it), and
//  - "fragments": blobs whose immediate surroundings carry strong edges,
//    i.e. the moving piece is connected to a larger static structure (the
//    visible end of a mostly self-occluding object). A whole object's
//    contours lie inside its blob and its ring is plain background.
MotionMap suppress_ghosts(const MotionMap& mm, const EdgeMap& em) {
  constexpr double kMinBlobEdge = 6.0;
  constexpr double kMaxRingEdge = 10.0;
  constexpr int kMinBlobArea = 100;
  const MotionBlobs blobs = motion_blobs(mm);
  if (blobs.areas.empty()) return mm;
  std::vector<double> edge_sum(blobs.areas.size(), 0.0);
  std::vector<std::array<double, 4>> side_sum(blobs.areas.size(), {0.0, 0.0, 0.0, 0.0});
  std::vector<std::array<int, 4>> side_n(blobs.areas.size(), {0, 0, 0, 0});
  for (size_t i = 0; i < mm.scores.size(); ++i) {
    const int id = blobs.label[i];
    if (id >= 0) {
      edge_sum[id] += em.magnitude[i];
      continue;
    }
    // Background pixel at Chebyshev distance 3..4 of a blob joins that
    // blob's ring (each blob once per pixel). The 0..2 band is skipped: the
    // object's own contour gradient spills into it and says nothing about
    // what lies beyond the blob. Ring statistics are kept per side
    // (left/right/top/bottom of the blob's bounding box): a fragment carved
    // off a larger structure betrays itself on the one side facing the rest
    // of the structure, and averaging over the three quiet sides would wash
    // that signal out.
    const int x = static_cast<int>(i % mm.width);
    const int y = static_cast<int>(i / mm.width);
    int near[4], far[4];
    int nnear = 0, nfar = 0;
    for (int dy = -4; dy <= 4; ++dy) {
      for (int dx = -4; dx <= 4; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || nx >= mm.width || ny < 0 || ny >= mm.height) continue;
        const int nid = blobs.label[static_cast<size_t>(ny) * mm.width + nx];
        if (nid < 0) continue;
        const bool close = std::abs(dx) <= 2 && std::abs(dy) <= 2;
        int* arr = close ? near : far;
        int& n = close ? nnear : nfar;
        bool dup = false;
        for (int k = 0; k < n; ++k) dup = dup || arr[k] == nid;
        if (dup || n == 4) continue;
        arr[n++] = nid;
      }
    }
    for (int k = 0; k < nfar; ++k) {
      bool close = false;
      for (int j = 0; j < nnear; ++j) close = close || near[j] == far[k];
      if (close) continue;
      const PixelRect& bb = blobs.boxes[far[k]];
      const int side = x < bb.x0 ? 0 : x >= bb.x1 ? 1 : y < bb.y0 ? 2 : 3;
      side_sum[far[k]][side] += em.magnitude[i];
      ++side_n[far[k]][side];
    }
  }
  MotionMap cleaned = mm;
  for (size_t i = 0; i < mm.scores.size(); ++i) {
    const int id = blobs.label[i];
    if (id < 0) continue;
    const bool tiny = blobs.areas[id] < kMinBlobArea;
    const bool ghost = edge_sum[id] / blobs.areas[id] < kMinBlobEdge;
    bool fragment = false;
    for (int s = 0; s < 4; ++s)
      fragment = fragment ||
                 (side_n[id][s] > 0 && side_sum[id][s] / side_n[id][s] > kMaxRingEdge);
    if (tiny || ghost || fragment) cleaned.scores[i] = 0.0;
  }
  // Trim ghost margins off the surviving blobs. A slow object occludes a
  // pixel long enough for the background model to absorb it; the background
  // it reveals afterwards then flags as motion and, being connected to the
  // object, stretches the blob backwards along the motion direction. Those
  // trail columns/rows are pure background (no edge support, ~2 mean
  // magnitude) while every column through the real object crosses its
  // contour (>5), so margins below kTrimEdge are dropped.
  constexpr double kTrimEdge = 4.0;
  for (size_t id = 0; id < blobs.areas.size(); ++id) {
    const PixelRect& bb = blobs.boxes[id];
    const auto line_mean = [&](int c, bool column) {
      double s = 0.0;
      int n = 0;
      const int lo = column ? bb.y0 : bb.x0, hi = column ? bb.y1 : bb.x1;
      for (int t = lo; t < hi; ++t) {
        const int x = column ? c : t, y = column ? t : c;
        const size_t i = static_cast<size_t>(y) * mm.width + x;
        if (blobs.label[i] == static_cast<int>(id) && cleaned.scores[i] > 0.0) {
          s += em.magnitude[i];
          ++n;
        }
      }
      return n > 0 ? s / n : 0.0;
    };
    int x0 = bb.x0, x1 = bb.x1, y0 = bb.y0, y1 = bb.y1;
    while (x0 < x1 && line_mean(x0, true) < kTrimEdge) ++x0;
    while (x1 > x0 && line_mean(x1 - 1, true) < kTrimEdge) --x1;
    while (y0 < y1 && line_mean(y0, false) < kTrimEdge) ++y0;
    while (y1 > y0 && line_mean(y1 - 1, false) < kTrimEdge) --y1;
    if (x0 == bb.x0 && x1 == bb.x1 && y0 == bb.y0 && y1 == bb.y1) continue;
    for (int y = bb.y0; y < bb.y1; ++y)
      for (int x = bb.x0; x < bb.x1; ++x) {
        if (x >= x0 && x < x1 && y >= y0 && y < y1) continue;
        const size_t i = static_cast<size_t>(y) * mm.width + x;
        if (blobs.label[i] == static_cast<int>(id)) cleaned.scores[i] = 0.0;
      }
  }
  return cleaned;
}

// Fraction of the dominant intersecting blob covered by the box.
double blob_coverage(const MotionBlobs& blobs, const MotionMap& mm, const PixelRect& r) {
  if (blobs.areas.empty()) return 0.0;
  std::vector<int> inter(blobs.areas.size(), 0);
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x) {
      const int id = blobs.label[static_cast<size_t>(y) * mm.width + x];
      if (id >= 0) ++inter[id];
    }
  int best_id = -1, best_inter = 0;
  for (size_t id = 0; id < inter.size(); ++id)
    if (inter[id] > best_inter) {
      best_inter = inter[id];
      best_id = static_cast<int>(id);
    }
  if (best_id < 0) return 0.0;
  return static_cast<double>(best_inter) / blobs.areas[best_id];
}

} // namespace

double motion_fit(const MotionMap& mm, const BBox& box, double ring_fraction,
                  const EdgeMap* em) {
  const PixelRect r = rasterize(box, {mm.width, mm.height});
  if (r.empty()) throw ZeroAreaBox();
  const MotionMap cleaned = em ? suppress_ghosts(mm, *em) : mm;
  const MotionBlobs blobs = motion_blobs(cleaned);
  return motion_boxness(cleaned, box, ring_fraction) * blob_coverage(blobs, cleaned, r);
}

double objectness_score(const EdgeMap& em, const BBox& box, double border_margin_fraction) {
  const FrameSize fs{em.width, em.height};
  const PixelRect full = rasterize(box, fs);
  if (full.empty()) throw ZeroAreaBox();

  BBox inner = box;
  inner.x += border_margin_fraction * box.w;
  inner.y += border_margin_fraction * box.h;
  inner.w = box.w * (1.0 - 2.0 * border_margin_fraction);
  inner.h = box.h * (1.0 - 2.0 * border_margin_fraction);
  const PixelRect in = rasterize(inner, fs);

  double inner_sum = 0.0;
  long long inner_n = 0;
  double ring_sum = 0.0;
  long long ring_n = 0;
  for (int y = full.y0; y < full.y1; ++y) {
    for (int x = full.x0; x < full.x1; ++x) {
      const double v = em.at(x, y);
      const bool in_inner = x >= in.x0 && x < in.x1 && y >= in.y0 && y < in.y1;
      if (in_inner) {
        inner_sum += v;
        ++inner_n;
      } else {
        ring_sum += v;
        ++ring_n;
      }
    }
  }
  const double mi = inner_n > 0 ? inner_sum / inner_n : 0.0;
  const double mr = ring_n > 0 ? ring_sum / ring_n : 0.0;
  return saturate(mi) * (1.0 - saturate(mr));
}

namespace {

double raw_detection_score(const LatentModel& model, const Frame& frame, const BBox& box) {
  HogParams hp;
  hp.window_w = model.window_w;
  hp.window_h = model.window_h;
  const FeatureVector v = extract_features(frame, box, hp);
  double s = model.bias;
  const size_t n = std::min(v.values.size(), model.weights.size());
  for (size_t i = 0; i < n; ++i) s += model.weights[i] * v.values[i];
  return s;
}

struct Candidate {
  BBox box;
  int scale_index = 0;
  int grid_y = 0;
  int grid_x = 0;
  double motion = 0.0;
  double objectness = 0.0;
  double detection = 0.0;
};

} // namespace

std::vector<Proposal> generate_proposals(const Frame& frame, const MotionMap& mm,
                                         const EdgeMap& em, const ProposalParams& params,
                                         const LatentModel* model) {
  const FrameSize fs = frame.size();
  const MotionMap cleaned = suppress_ghosts(mm, em);
  const MotionBlobs blobs = motion_blobs(cleaned);
  std::vector<Candidate> cands;
  for (size_t si = 0; si < params.scales.size(); ++si) {
    const double h = params.scales[si];
    if (h > fs.height) continue;
    for (double aspect : params.aspects) {
      const double w = h * aspect;
      if (w > fs.width) continue;
      const double sx = std::max(1.0, w * params.stride_fraction);
      const double sy = std::max(1.0, h * params.stride_fraction);
      int gy = 0;
      for (double y = 0.0; y + h <= fs.height + 1e-9; y += sy, ++gy) {
        int gx = 0;
        for (double x = 0.0; x + w <= fs.width + 1e-9; x += sx, ++gx) {
          Candidate c;
          c.box = BBox{x, y, w, h};
          c.scale_index = static_cast<int>(si);
          c.grid_y = gy;
          c.grid_x = gx;
          c.motion = motion_boxness(cleaned, c.box) *
                     blob_coverage(blobs, cleaned, rasterize(c.box, fs));
          if (c.motion < params.bg_threshold) continue;
          cands.push_back(c);
        }
      }
    }
  }

  // Each surviving motion blob also proposes its own bounding box: when the
  // segmentation is clean this is the tightest window the object admits,
  // which no fixed scale/aspect grid cell may match.
  for (size_t id = 0; id < blobs.areas.size(); ++id) {
    const PixelRect& bb = blobs.boxes[id];
    if (blobs.areas[id] < 100 || bb.width() < 8 || bb.height() < 16) continue;
    Candidate c;
    c.box = BBox{static_cast<double>(bb.x0), static_cast<double>(bb.y0),
                 static_cast<double>(bb.width()), static_cast<double>(bb.height())};
    c.scale_index = static_cast<int>(params.scales.size());
    c.grid_y = bb.y0;
    c.grid_x = bb.x0;
    c.motion = motion_boxness(cleaned, c.box) * blob_coverage(blobs, cleaned, bb);
    if (c.motion < params.bg_threshold) continue;
    cands.push_back(c);
  }

  // Scoring of survivors is the hot loop; parallel, per-slot writes.
#pragma omp parallel for schedule(dynamic, 16)
  for (long long i = 0; i < static_cast<long long>(cands.size()); ++i) {
    auto& c = cands[i];
    c.objectness = objectness_score(em, c.box, params.border_margin_fraction);
    if (model) c.detection = raw_detection_score(*model, frame, c.box);
  }

  auto rank_key = [&](const Candidate& c) { return model ? c.detection : c.objectness; };
  std::stable_sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
    if (rank_key(a) != rank_key(b)) return rank_key(a) > rank_key(b);
    if (a.grid_y != b.grid_y) return a.grid_y < b.grid_y;
    if (a.grid_x != b.grid_x) return a.grid_x < b.grid_x;
    return a.scale_index < b.scale_index;
  });
  if (static_cast<int>(cands.size()) > params.max_proposals_per_frame)
    cands.resize(params.max_proposals_per_frame);

  std::vector<Proposal> out;
  out.reserve(cands.size());
  for (const auto& c : cands) {
    Proposal p;
    p.box = c.box;
    p.frame_index = frame.index;
    p.motion_score = c.motion;
    p.objectness_score = c.objectness;
    p.detection_score = c.detection;
    p.source = model ? ProposalSource::sliding_window : ProposalSource::objectness;
    out.push_back(p);
  }
  return out;
}

namespace {

double patch_sad(const Frame& a, const PixelRect& ra, const Frame& b, int bx, int by) {
  double sum = 0.0;
  for (int y = 0; y < ra.height(); ++y)
    for (int x = 0; x < ra.width(); ++x)
      sum += std::abs(static_cast<double>(a.at(ra.x0 + x, ra.y0 + y)) -
                      static_cast<double>(b.at(bx + x, by + y)));
  return sum / (static_cast<double>(ra.width()) * ra.height());
}

} // namespace

std::vector<Proposal> track_proposals(const FrameSequence& frames, const Proposal& seed,
                                      int tau, const std::vector<MotionMap>* maps,
                                      const std::vector<EdgeMap>* edges,
                                      double border_margin_fraction) {
  const int t0 = seed.frame_index;
  if (t0 < 0 || t0 >= static_cast<int>(frames.size())) throw FrameOutOfRange();

  static int next_track_id = 0;
  const int track_id = seed.track_id.value_or(next_track_id++);

  std::vector<Proposal> out;
  Proposal cur = seed;
  cur.track_id = track_id;
  out.push_back(cur);

  constexpr int kSearch = 4;
  constexpr double kMaxMad = 20.0;

  for (int k = 1; k <= tau; ++k) {
    const int t = t0 + k;
    if (t >= static_cast<int>(frames.size())) break;
    const Frame& prev = frames[t - 1];
    const Frame& next = frames[t];
    const PixelRect r = rasterize(cur.box, prev.size());
    if (r.empty()) break;

    double best = std::numeric_limits<double>::infinity();
    int best_dx = 0, best_dy = 0;
    for (int dy = -kSearch; dy <= kSearch; ++dy) {
      for (int dx = -kSearch; dx <= kSearch; ++dx) {
        const int bx = r.x0 + dx, by = r.y0 + dy;
        if (bx < 0 || by < 0 || bx + r.width() > next.width || by + r.height() > next.height)
          continue;
        const double sad = patch_sad(prev, r, next, bx, by);
        if (sad < best) {
          best = sad;
          best_dx = dx;
          best_dy = dy;
        }
      }
    }
    if (!std::isfinite(best) || best > kMaxMad) break;

    Proposal p = cur;
    p.frame_index = t;
    p.box.x = cur.box.x + best_dx;
    p.box.y = cur.box.y + best_dy;
    p.box = p.box.clamp_to(next.size());
    p.source = ProposalSource::tracked;
    p.track_id = track_id;
    // rescore motion and objectness in the new frame when maps are given
    if (maps && t < static_cast<int>(maps->size()))
      p.motion_score = motion_fit((*maps)[t], p.box, 0.25,
                                  edges && t < static_cast<int>(edges->size())
                                      ? &(*edges)[t]
                                      : nullptr);
    if (edges && t < static_cast<int>(edges->size()))
      p.objectness_score = objectness_score((*edges)[t], p.box, border_margin_fraction);
    out.push_back(p);
    cur = p;
  }
  return out;
}

} // namespace selfdet
