#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "selfdet/features.hpp"
#include "selfdet/rng.hpp"

using namespace selfdet;

namespace {

Frame random_frame(int w, int h, std::uint64_t seed, int lo = 0, int hi = 255) {
  Frame f;
  f.width = w;
  f.height = h;
  f.pixels.resize(static_cast<size_t>(w) * h);
  Rng rng(seed);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(lo, hi));
  return f;
}

} // namespace

TEST_CASE("dimension is 756 for the canonical window") {
  HogParams p;
  // 3x7 blocks x 2x2 cells x 9 bins
  CHECK(p.blocks_x() == 3);
  CHECK(p.blocks_y() == 7);
  CHECK(p.dim() == 756);
  const Frame f = random_frame(32, 64, 1);
  const FeatureVector v = extract_features(f, {0, 0, 32, 64});
  CHECK(v.dim() == 756);
}

TEST_CASE("constant patch gives a zero feature vector") {
  Frame f;
  f.width = 32;
  f.height = 64;
  f.pixels.assign(32 * 64, 137);
  const FeatureVector v = extract_features(f, {0, 0, 32, 64});
  for (double x : v.values) CHECK(x == 0.0);
}

TEST_CASE("features are invariant to a constant intensity offset") {
  Frame f = random_frame(32, 64, 2, 0, 150);
  Frame g = f;
  for (auto& p : g.pixels) p = static_cast<std::uint8_t>(p + 50); // clip-free
  const FeatureVector vf = extract_features(f, {0, 0, 32, 64});
  const FeatureVector vg = extract_features(g, {0, 0, 32, 64});
  for (size_t i = 0; i < vf.values.size(); ++i)
    CHECK(vf.values[i] == doctest::Approx(vg.values[i]).epsilon(1e-12));
}

TEST_CASE("block norms bounded by 1 plus epsilon and entries finite") {
  const Frame f = random_frame(32, 64, 3);
  const FeatureVector v = extract_features(f, {0, 0, 32, 64});
  const HogParams p;
  for (int b = 0; b < p.blocks_x() * p.blocks_y(); ++b) {
    double norm = 0.0;
    for (int k = 0; k < 36; ++k) {
      const double x = v.values[b * 36 + k];
      CHECK(std::isfinite(x));
      norm += x * x;
    }
    CHECK(std::sqrt(norm) <= 1.0 + 1e-6);
  }
}

TEST_CASE("horizontal flip permutes orientation bins deterministically") {
  const HogParams p;
  const Frame f = random_frame(32, 64, 4);
  Frame flipped = f;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x)
      flipped.pixels[y * f.width + x] = f.pixels[y * f.width + (f.width - 1 - x)];

  const FeatureVector vf = extract_features(f, {0, 0, 32, 64}, p);
  const FeatureVector vg = extract_features(flipped, {0, 0, 32, 64}, p);

  // block (bx,by) maps to (blocks_x-1-bx, by); within a block, cells mirror
  // in x; bin b maps to (bins - b) % bins.
  auto index = [&](int bx, int by, int cy, int cx, int bin) {
    const int block = by * p.blocks_x() + bx;
    const int cell = cy * 2 + cx;
    return block * 36 + cell * p.bins + bin;
  };
  for (int by = 0; by < p.blocks_y(); ++by)
    for (int bx = 0; bx < p.blocks_x(); ++bx)
      for (int cy = 0; cy < 2; ++cy)
        for (int cx = 0; cx < 2; ++cx)
          for (int bin = 0; bin < p.bins; ++bin) {
            const double orig = vf.values[index(bx, by, cy, cx, bin)];
            const double mirrored =
                vg.values[index(p.blocks_x() - 1 - bx, by, cy, 1 - cx, (p.bins - bin) % p.bins)];
            CHECK(orig == doctest::Approx(mirrored).epsilon(1e-9));
          }
}

TEST_CASE("label_feature zeroes the negative-label map") {
  const Frame f = random_frame(32, 64, 5);
  const FeatureVector v = extract_features(f, {0, 0, 32, 64});
  const FeatureVector pos = label_feature(v, 1);
  CHECK(pos.values == v.values);
  const FeatureVector neg = label_feature(v, 0);
  for (double x : neg.values) CHECK(x == 0.0);

  // so beta . v(x,0,h) = 0 for any beta, and the label max is max(s, 0)
  Rng rng(6);
  std::vector<double> beta(v.values.size());
  for (auto& b : beta) b = rng.uniform(-1.0, 1.0);
  double s_pos = 0.0, s_neg = 0.0;
  for (size_t i = 0; i < beta.size(); ++i) {
    s_pos += beta[i] * pos.values[i];
    s_neg += beta[i] * neg.values[i];
  }
  CHECK(s_neg == 0.0);
  CHECK(std::max(s_pos, s_neg) == std::max(s_pos, 0.0));
}

TEST_CASE("extraction is pure and the omp batch matches the serial reference") {
  const Frame f = random_frame(120, 90, 7);
  std::vector<BBox> boxes;
  Rng rng(8);
  for (int i = 0; i < 40; ++i)
    boxes.push_back({rng.uniform(0.0, 80.0), rng.uniform(0.0, 50.0),
                     rng.uniform(8.0, 30.0), rng.uniform(16.0, 40.0)});
  const auto serial = extract_batch_serial(f, boxes);
  const auto par = extract_batch(f, boxes);
  REQUIRE(serial.size() == par.size());
  for (size_t i = 0; i < serial.size(); ++i) CHECK(serial[i].values == par[i].values);
  // repeat extraction gives identical output
  const auto again = extract_batch(f, boxes);
  for (size_t i = 0; i < serial.size(); ++i) CHECK(again[i].values == par[i].values);
}

TEST_CASE("zero-area box raises") {
  const Frame f = random_frame(32, 64, 9);
  CHECK_THROWS_AS(extract_features(f, {5, 5, 0, 10}), ZeroAreaBox);
}
