#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "selfdet/core.hpp"
#include "selfdet/rng.hpp"

using namespace selfdet;

namespace {

// Independent IoU oracle: count unit pixels on an integer grid.
double iou_pixel_oracle(const BBox& a, const BBox& b) {
  long long inter = 0, only_a = 0, only_b = 0;
  const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x))) - 1;
  const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y))) - 1;
  const int x1 = static_cast<int>(std::ceil(std::max(a.x + a.w, b.x + b.w))) + 1;
  const int y1 = static_cast<int>(std::ceil(std::max(a.y + a.h, b.y + b.h))) + 1;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const bool in_a = x >= a.x && x < a.x + a.w && y >= a.y && y < a.y + a.h;
      const bool in_b = x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h;
      if (in_a && in_b) ++inter;
      else if (in_a) ++only_a;
      else if (in_b) ++only_b;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(inter + only_a + only_b);
}

BBox random_box(Rng& rng) {
  return {rng.uniform(0.0, 80.0), rng.uniform(0.0, 80.0), rng.uniform(1.0, 40.0),
          rng.uniform(1.0, 40.0)};
}

} // namespace

TEST_CASE("iou identity") {
  const BBox b{3, 4, 10, 20};
  CHECK(iou(b, b) == doctest::Approx(1.0));
}

TEST_CASE("iou disjoint boxes") {
  CHECK(iou({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
}

TEST_CASE("iou half-overlap matches pixel enumeration oracle") {
  const BBox a{0, 0, 10, 10}, b{5, 0, 10, 10};
  // intersection 50, union 150 on the integer grid
  CHECK(iou_pixel_oracle(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("iou symmetry and range on random integer boxes") {
  Rng rng(123);
  for (int i = 0; i < 200; ++i) {
    BBox a = random_box(rng), b = random_box(rng);
    // integer-align so the pixel oracle is exact
    a.x = std::floor(a.x); a.y = std::floor(a.y); a.w = std::ceil(a.w); a.h = std::ceil(a.h);
    b.x = std::floor(b.x); b.y = std::floor(b.y); b.w = std::ceil(b.w); b.h = std::ceil(b.h);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(v == doctest::Approx(iou_pixel_oracle(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("iou monotone under shrinking the inner box") {
  const BBox a{0, 0, 20, 20};
  const BBox b{2, 2, 10, 10};       // b inside a
  const BBox b_small{3, 3, 6, 6};   // b' inside b
  CHECK(iou(a, b_small) <= iou(a, b));
}

TEST_CASE("clamp_to is idempotent") {
  Rng rng(7);
  const FrameSize fs{64, 48};
  for (int i = 0; i < 100; ++i) {
    const BBox b = random_box(rng);
    const BBox c = b.clamp_to(fs);
    const BBox cc = c.clamp_to(fs);
    CHECK(c.x == cc.x);
    CHECK(c.y == cc.y);
    CHECK(c.w == cc.w);
    CHECK(c.h == cc.h);
    CHECK(c.x >= 0.0);
    CHECK(c.y >= 0.0);
    CHECK(c.x + c.w <= fs.width + 1e-12);
    CHECK(c.y + c.h <= fs.height + 1e-12);
  }
}

TEST_CASE("normalize_aspect leaves a single box unchanged") {
  Proposal p;
  p.box = {0, 0, 10, 20};
  const auto out = normalize_aspect({p}, {100, 100});
  CHECK(out[0].box.w == doctest::Approx(10.0));
  CHECK(out[0].box.h == doctest::Approx(20.0));
}

TEST_CASE("normalize_aspect reshapes to the mean ratio about centers") {
  Proposal a, b;
  a.box = {20, 20, 8, 20};  // ratio 0.4
  b.box = {50, 20, 12, 20}; // ratio 0.6
  const auto out = normalize_aspect({a, b}, {200, 200});
  for (size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].box.aspect() == doctest::Approx(0.5).epsilon(1e-9));
  }
  // centers preserved
  CHECK(out[0].box.cx() == doctest::Approx(a.box.cx()));
  CHECK(out[1].box.cx() == doctest::Approx(b.box.cx()));
}

TEST_CASE("normalize_aspect clamps boxes pushed past the frame edge") {
  Proposal wide, edge;
  wide.box = {10, 10, 40, 20}; // ratio 2.0 pulls the mean up
  edge.box = {58, 10, 4, 20};  // near the right edge
  const auto out = normalize_aspect({wide, edge}, {64, 64});
  for (const auto& p : out) {
    CHECK(p.box.x >= 0.0);
    CHECK(p.box.x + p.box.w <= 64.0 + 1e-9);
  }
}

TEST_CASE("normalize_aspect is idempotent for uniform-ratio interior boxes") {
  Proposal a, b;
  a.box = {30, 30, 10, 20};
  b.box = {60, 40, 15, 30};
  const auto once = normalize_aspect({a, b}, {200, 200});
  const auto twice = normalize_aspect(once, {200, 200});
  for (size_t i = 0; i < once.size(); ++i) {
    CHECK(once[i].box.x == doctest::Approx(twice[i].box.x));
    CHECK(once[i].box.w == doctest::Approx(twice[i].box.w));
  }
}

TEST_CASE("normalize_aspect rejects an empty list") {
  CHECK_THROWS_AS(normalize_aspect({}, {64, 64}), EmptyInput);
}

TEST_CASE("hyperparam validation enforces ranges") {
  Hyperparams hp;
  hp.validate(); // defaults are valid
  hp.r = 1.0;
  CHECK_THROWS_AS(hp.validate(), DataError);
  hp = Hyperparams{};
  hp.C = 0.0;
  CHECK_THROWS_AS(hp.validate(), DataError);
}
