#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "selfdet/detect_eval.hpp"
#include "selfdet/rng.hpp"

using namespace selfdet;

namespace {

Detection det(double x, double y, double w, double h, double score, int frame = 0) {
  Detection d;
  d.box = {x, y, w, h};
  d.score = score;
  d.frame_index = frame;
  return d;
}

Frame random_frame(int w, int h, std::uint64_t seed) {
  Frame f;
  f.width = w;
  f.height = h;
  f.pixels.resize(static_cast<size_t>(w) * h);
  Rng rng(seed);
  for (auto& p : f.pixels) p = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return f;
}

GroundTruth gt_single(int frame, const BBox& box) {
  GroundTruth gt;
  GroundTruth::Entry e;
  e.box = box;
  gt.frames[frame].push_back(e);
  return gt;
}

} // namespace

TEST_CASE("zero model above a positive threshold detects nothing") {
  LatentModel m;
  m.weights.assign(756, 0.0);
  m.bias = 0.0;
  const Frame f = random_frame(160, 120, 1);
  const auto dets = detect(m, f, ProposalParams{}, 0.5);
  CHECK(dets.empty());
}

TEST_CASE("bias alone shifts every window score") {
  LatentModel m;
  m.weights.assign(756, 0.0);
  m.bias = 2.0;
  const Frame f = random_frame(80, 80, 2);
  // threshold above the bias: nothing; below: every surviving window scores 2
  CHECK(detect(m, f, ProposalParams{}, 2.5).empty());
  const auto dets = detect(m, f, ProposalParams{}, 1.0, 0.999);
  REQUIRE_FALSE(dets.empty());
  for (const auto& d : dets) CHECK(d.score == doctest::Approx(2.0));
}

TEST_CASE("parallel and serial detection are bit identical") {
  LatentModel m;
  m.weights.resize(756);
  Rng rng(3);
  for (auto& w : m.weights) w = rng.uniform(-0.2, 0.2);
  m.bias = -0.1;
  const Frame f = random_frame(120, 100, 4);
  const auto par = detect(m, f, ProposalParams{}, -1.0);
  const auto ser = detect_serial(m, f, ProposalParams{}, -1.0);
  REQUIRE(par.size() == ser.size());
  for (size_t i = 0; i < par.size(); ++i) {
    CHECK(par[i].box.x == ser[i].box.x);
    CHECK(par[i].box.y == ser[i].box.y);
    CHECK(par[i].score == ser[i].score);
  }
}

TEST_CASE("detection output is sorted by score and mutually non-overlapping") {
  LatentModel m;
  m.weights.resize(756);
  Rng rng(5);
  for (auto& w : m.weights) w = rng.uniform(-0.2, 0.2);
  const Frame f = random_frame(120, 100, 6);
  const auto dets = detect(m, f, ProposalParams{}, -1.0, 0.5);
  for (size_t i = 1; i < dets.size(); ++i) CHECK(dets[i - 1].score >= dets[i].score);
  for (size_t i = 0; i < dets.size(); ++i)
    for (size_t j = i + 1; j < dets.size(); ++j)
      CHECK(iou(dets[i].box, dets[j].box) < 0.5);
}

TEST_CASE("model dimension mismatch raises") {
  LatentModel m;
  m.weights.assign(100, 0.0);
  const Frame f = random_frame(80, 80, 7);
  CHECK_THROWS_AS(detect(m, f, ProposalParams{}), DimensionMismatch);
}

TEST_CASE("nms suppression chain keeps A and C") {
  // B overlaps A (higher score), C overlaps B but not A: classic chain where
  // greedy NMS keeps {A, C}
  const Detection A = det(0, 0, 10, 10, 0.9);
  const Detection B = det(5, 0, 10, 10, 0.8);
  const Detection C = det(10, 0, 10, 10, 0.7);
  REQUIRE(iou(A.box, B.box) >= 0.3);
  REQUIRE(iou(B.box, C.box) >= 0.3);
  REQUIRE(iou(A.box, C.box) < 0.3);
  const auto kept = nms({A, B, C}, 0.3);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].score == 0.9);
  CHECK(kept[1].score == 0.7);
}

TEST_CASE("nms is a fixed point and keeps disjoint boxes") {
  const std::vector<Detection> dets{det(0, 0, 10, 10, 0.5), det(30, 30, 10, 10, 0.4),
                                    det(60, 0, 10, 10, 0.6)};
  const auto once = nms(dets, 0.5);
  CHECK(once.size() == 3);
  const auto twice = nms(once, 0.5);
  REQUIRE(twice.size() == once.size());
  for (size_t i = 0; i < once.size(); ++i) CHECK(once[i].score == twice[i].score);
  CHECK(nms({}, 0.5).empty());
}

TEST_CASE("evaluate gives AP 1 when every detection matches a distinct truth") {
  GroundTruth gt;
  for (int i = 0; i < 4; ++i) {
    GroundTruth::Entry e;
    e.box = {20.0 * i, 10, 10, 20};
    gt.frames[0].push_back(e);
  }
  std::vector<Detection> dets;
  for (int i = 0; i < 4; ++i) dets.push_back(det(20.0 * i, 10, 10, 20, 1.0 - 0.1 * i));
  const EvalCurve curve = evaluate(dets, gt, 1);
  CHECK(curve.ap == doctest::Approx(1.0));
  CHECK(curve.max_recall == doctest::Approx(1.0));
  CHECK(curve.points.back().fppi == 0.0);
}

TEST_CASE("evaluate hand case: TP, duplicate FP, and a miss") {
  // two truths; detections: perfect hit (0.9), duplicate of the same truth
  // (0.8, counts FP), far box (0.7, FP); second truth never found.
  const BBox t1{10, 10, 10, 20};
  const BBox t2{60, 10, 10, 20};
  GroundTruth gt;
  GroundTruth::Entry e1, e2;
  e1.box = t1;
  e2.box = t2;
  gt.frames[0] = {e1, e2};

  const std::vector<Detection> dets{det(10, 10, 10, 20, 0.9), det(11, 10, 10, 20, 0.8),
                                    det(100, 50, 10, 20, 0.7)};
  const EvalCurve curve = evaluate(dets, gt, 2);
  REQUIRE(curve.points.size() == 3);
  // rank 1: TP -> precision 1, recall 1/2
  CHECK(curve.points[0].precision == doctest::Approx(1.0));
  CHECK(curve.points[0].recall == doctest::Approx(0.5));
  // rank 2: duplicate FP -> precision 1/2
  CHECK(curve.points[1].precision == doctest::Approx(0.5));
  CHECK(curve.points[1].recall == doctest::Approx(0.5));
  // rank 3: FP -> precision 1/3, fppi = 2 FP / 2 frames = 1
  CHECK(curve.points[2].precision == doctest::Approx(1.0 / 3.0));
  CHECK(curve.points[2].fppi == doctest::Approx(1.0));
  // all-points AP: only recall step is 0.5 at precision 1
  CHECK(curve.ap == doctest::Approx(0.5));
  CHECK(curve.max_recall == doctest::Approx(0.5));
}

TEST_CASE("low-iou detections never match") {
  const EvalCurve curve =
      evaluate({det(0, 0, 10, 20, 0.9)}, gt_single(0, {40, 40, 10, 20}), 1);
  CHECK(curve.ap == 0.0);
  CHECK(curve.points[0].precision == 0.0);
}

TEST_CASE("matching respects the frame index") {
  // same box but wrong frame: must count as FP
  const EvalCurve curve =
      evaluate({det(10, 10, 10, 20, 0.9, 3)}, gt_single(0, {10, 10, 10, 20}), 4);
  CHECK(curve.ap == 0.0);
}

TEST_CASE("empty detections give an empty curve") {
  const EvalCurve curve = evaluate({}, gt_single(0, {10, 10, 10, 20}), 1);
  CHECK(curve.points.empty());
  CHECK(curve.ap == 0.0);
  CHECK(curve.max_recall == 0.0);
}

TEST_CASE("precision envelope makes AP insensitive to a leading FP only partially") {
  // FP first (score 1.0), then two TPs: envelope lifts interior precision
  GroundTruth gt;
  GroundTruth::Entry e1, e2;
  e1.box = {10, 10, 10, 20};
  e2.box = {60, 10, 10, 20};
  gt.frames[0] = {e1, e2};
  const std::vector<Detection> dets{det(100, 80, 10, 20, 1.0), det(10, 10, 10, 20, 0.9),
                                    det(60, 10, 10, 20, 0.8)};
  const EvalCurve curve = evaluate(dets, gt, 1);
  // recall steps: 0.5 at precision max(1/2, 2/3) = 2/3; 1.0 at 2/3
  CHECK(curve.ap == doctest::Approx(2.0 / 3.0));
  CHECK(curve.max_recall == doctest::Approx(1.0));
}
