#include <doctest.h>

#include <random>

#include "endotrack/rewards.hpp"
#include "oracles.hpp"

using namespace endotrack;
using namespace endotrack::rewards;

namespace {

format::TokenSequence text(std::string_view s) { return *format::from_text(s); }

RewardTarget box_target(BBox b, Action a) { return {Instruction::kBoxAction, b, a}; }

}  // namespace

TEST_CASE("iou_reward examples") {
  CHECK(iou_reward({3, 4, 10, 12}, {3, 4, 10, 12}) == 1.0);
  CHECK(iou_reward({0, 0, 10, 10}, {20, 20, 5, 5}) == 0.0);
  CHECK(iou_reward({0, 0, 10, 10}, {5, 5, 10, 10}) == doctest::Approx(25.0 / 175.0).epsilon(1e-15));
  // Boxes that only share an edge do not overlap.
  CHECK(iou_reward({0, 0, 10, 10}, {10, 0, 10, 10}) == 0.0);
  // Empty union.
  CHECK(iou_reward({5, 5, 0, 0}, {5, 5, 0, 0}) == 0.0);
}

TEST_CASE("iou_reward equals pixel counting on every box pair of an 8x8 grid") {
  using Oracle = oracle::PixelIou<8>;
  std::vector<BBox> boxes;
  std::vector<Oracle::Mask> masks;
  for (int x = 0; x < 8; ++x)
    for (int y = 0; y < 8; ++y)
      for (int w = 0; x + w <= 8; ++w)
        for (int h = 0; y + h <= 8; ++h) {
          boxes.push_back({x, y, w, h});
          masks.push_back(Oracle::mask(boxes.back()));
        }
  long mismatches = 0;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      if (iou_reward(boxes[i], boxes[j]) != Oracle::iou(masks[i], masks[j])) ++mismatches;
    }
  }
  CHECK(mismatches == 0);
}

TEST_CASE("iou_reward is symmetric, bounded and 1 only for identical boxes") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> c(0, 40), s(1, 30);
  for (int i = 0; i < 20000; ++i) {
    const BBox a{c(rng), c(rng), s(rng), s(rng)}, b{c(rng), c(rng), s(rng), s(rng)};
    const double v = iou_reward(a, b);
    CHECK(v == iou_reward(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK((v == 1.0) == (a == b));
    CHECK(v == oracle::PixelIou<70>::iou(a, b));
  }
}

TEST_CASE("ma_reward examples") {
  CHECK(ma_reward(Action::kUpperRight, Action::kUpperRight) == 1.0);
  CHECK(ma_reward(Action::kUpperRight, Action::kStop) == 0.0);
  CHECK(ma_reward(Action::kStop, Action::kStop) == 1.0);
}

TEST_CASE("format_reward examples") {
  const auto canonical = format::serialize(BBox{1, 2, 3, 4}, Action::kLowerRight,
                                           Instruction::kBoxAction);
  CHECK(format_reward(canonical, Instruction::kBoxAction) == 1.0);
  CHECK(format_reward(text("[1,2,3]a"), Instruction::kBoxAction) == 0.0);
  CHECK(format_reward({}, Instruction::kBoxAction) == 0.0);
  CHECK(format_reward({}, Instruction::kActionOnly) == 0.0);
}

TEST_CASE("total_reward examples") {
  const BBox gt{100, 100, 20, 20};
  auto r = total_reward(format::serialize(gt, Action::kUpperLeft, Instruction::kBoxAction),
                        box_target(gt, Action::kUpperLeft));
  CHECK(r.total == 3.0);
  CHECK(r.r_iou == 1.0);

  // Correct action character but malformed body.
  r = total_reward(text("[100,100,20]b"), box_target(gt, Action::kUpperLeft));
  CHECK(r.total == 0.0);
  CHECK(r.r_ma == 0.0);
  CHECK(r.r_iou == 0.0);

  // Same size shifted by a third of its width: overlap 2/3, union 4/3, IoU 0.5.
  const BBox pred{100, 100, 30, 20};
  const BBox half{110, 100, 30, 20};
  REQUIRE(iou_reward(pred, half) == doctest::Approx(0.5));
  r = total_reward(format::serialize(pred, Action::kStop, Instruction::kBoxAction),
                   box_target(half, Action::kUpperLeft));
  CHECK(r.total == doctest::Approx(1.5));
  CHECK(r.r_ma == 0.0);
  CHECK(r.r_format == 1.0);
}

TEST_CASE("total_reward omits the IoU term under the action-only instruction") {
  const RewardTarget t{Instruction::kActionOnly, BBox{1, 1, 5, 5}, Action::kLowerLeft};
  auto r = total_reward(text("c"), t);
  CHECK(r.total == 2.0);
  CHECK(r.r_iou == 0.0);
  r = total_reward(text("a"), t);
  CHECK(r.total == 1.0);
}

TEST_CASE("total_reward honors the component weights") {
  const BBox gt{10, 10, 10, 10};
  const auto seq = format::serialize(gt, Action::kStop, Instruction::kBoxAction);
  const auto r = total_reward(seq, box_target(gt, Action::kStop), RewardWeights{2.0, 0.5, 0.0});
  CHECK(r.total == doctest::Approx(2.5));
}

TEST_CASE("total_reward is zero whenever the format reward is zero") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> tok(0, format::kVocabSize - 1), len(0, 20);
  const auto t = box_target({10, 10, 30, 30}, Action::kUpperRight);
  int gated = 0;
  for (int i = 0; i < 20000; ++i) {
    format::TokenSequence seq;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) seq.push_back(tok(rng));
    if (!seq.empty() && i % 2) seq.back() = format::kEos;
    const auto r = total_reward(seq, t);
    if (format_reward(seq, Instruction::kBoxAction) == 0.0) {
      ++gated;
      CHECK(r.total == 0.0);
      CHECK(r.r_ma == 0.0);
      CHECK(r.r_iou == 0.0);
    }
    CHECK(r.total == total_reward(seq, t).total);
  }
  CHECK(gated > 0);
}
