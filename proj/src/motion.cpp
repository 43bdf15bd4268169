#include "selfdet/motion.hpp"

#include <algorithm>
#include <cmath>

namespace selfdet {

BackgroundModel::BackgroundModel(int width, int height, double rho, double sigma_floor)
    : width_(width), height_(height), rho_(rho), sigma_floor_(sigma_floor),
      mean_(static_cast<size_t>(width) * height, 0.0),
      var_(static_cast<size_t>(width) * height, sigma_floor * sigma_floor),
      fg_age_(static_cast<size_t>(width) * height, 0) {}

MotionMap BackgroundModel::observe_frame(const Frame& frame) {
  if (frame.width != width_ || frame.height != height_)
    throw DimensionMismatch("frame does not match background model dimensions");

  MotionMap map;
  map.frame_index = frame.index;
  map.width = width_;
  map.height = height_;
  map.reliable = frames_observed_ >= kWarmupFrames;
  map.scores.resize(mean_.size());

  const size_t n = mean_.size();
  if (frames_observed_ == 0) {
    // First frame initializes the model; nothing moves yet.
    for (size_t i = 0; i < n; ++i) {
      mean_[i] = frame.pixels[i];
      map.scores[i] = 0.0;
    }
    frames_observed_ = 1;
    return map;
  }

#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const double I = frame.pixels[i];
    const double diff = std::abs(I - mean_[i]);
    const double sigma = std::max(std::sqrt(var_[i]), sigma_floor_);
    // Soft 3-sigma threshold: deviations explainable by noise score 0,
    // confident foreground (>= 6 sigma) saturates at 1.
    const double z = diff / sigma;
    map.scores[i] = std::clamp((z - 3.0) / 3.0, 0.0, 1.0);
    // Selective EMA update: only background-classified pixels train the
    // model, so a passing object cannot drag the mean or inflate sigma and
    // no ghost trail forms behind it. A pixel stuck in the foreground for
    // kAbsorbFrames consecutive frames is re-initialized from the current
    // observation; this absorbs true scene changes (and the initial-frame
    // ghosts) instead of flagging them forever.
    constexpr int kAbsorbFrames = 15;
    const double d = I - mean_[i];
    if (map.scores[i] < 0.5) {
      mean_[i] += rho_ * d;
      var_[i] = (1.0 - rho_) * (var_[i] + rho_ * d * d);
      var_[i] = std::max(var_[i], sigma_floor_ * sigma_floor_);
      fg_age_[i] = 0;
    } else if (++fg_age_[i] >= kAbsorbFrames) {
      mean_[i] = I;
      var_[i] = sigma_floor_ * sigma_floor_;
      fg_age_[i] = 0;
    }
  }
  ++frames_observed_;
  return map;
}

double motion_score(const MotionMap& map, const BBox& box) {
  const PixelRect r = rasterize(box, {map.width, map.height});
  if (r.empty()) throw ZeroAreaBox();
  double sum = 0.0;
  for (int y = r.y0; y < r.y1; ++y)
    for (int x = r.x0; x < r.x1; ++x)
      sum += map.at(x, y);
  return sum / (static_cast<double>(r.width()) * r.height());
}

std::vector<MotionMap> motion_maps(const FrameSequence& seq, double rho, double sigma_floor) {
  std::vector<MotionMap> maps;
  if (seq.empty()) return maps;
  BackgroundModel model(seq[0].width, seq[0].height, rho, sigma_floor);
  maps.reserve(seq.size());
  for (const auto& f : seq) maps.push_back(model.observe_frame(f));
  return maps;
}

Frame motion_map_to_pgm(const MotionMap& map) {
  Frame f;
  f.index = map.frame_index;
  f.width = map.width;
  f.height = map.height;
  f.pixels.resize(map.scores.size());
  for (size_t i = 0; i < map.scores.size(); ++i)
    f.pixels[i] = static_cast<std::uint8_t>(std::clamp(round_half_up(map.scores[i] * 255.0), 0, 255));
  return f;
}

} // namespace selfdet
