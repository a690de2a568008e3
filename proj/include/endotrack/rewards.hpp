#pragma once

#include "endotrack/format.hpp"
#include "endotrack/types.hpp"

namespace endotrack::rewards {

struct RewardWeights {
  double iou = 1.0;
  double ma = 1.0;
  double format = 1.0;
};

struct RewardBreakdown {
  double r_iou = 0.0;
  double r_ma = 0.0;
  double r_format = 0.0;
  double total = 0.0;
};

/// Ground truth a completion is scored against.
struct RewardTarget {
  Instruction instruction = Instruction::kBoxAction;
  BBox bbox;
  Action action = Action::kStop;
};

/// Intersection over union from real-valued edge overlap; 0 for disjoint
/// boxes or an empty union.
double iou_reward(const BBox& pred, const BBox& gt);

double ma_reward(Action pred, Action gt);

double format_reward(const format::TokenSequence& seq, Instruction instruction,
                     const format::FormatOptions& opts = {});

/// Unparseable output scores zero on every component. Under I_a the IoU term
/// is absent from the total.
RewardBreakdown total_reward(const format::TokenSequence& seq,
                             const RewardTarget& target,
                             const RewardWeights& weights = {},
                             const format::FormatOptions& opts = {});

}  // namespace endotrack::rewards
