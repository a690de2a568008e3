#include "endotrack/rewards.hpp"

#include <algorithm>

namespace endotrack::rewards {

double iou_reward(const BBox& pred, const BBox& gt) {
  const double ix0 = std::max<double>(pred.x, gt.x);
  const double iy0 = std::max<double>(pred.y, gt.y);
  const double ix1 = std::min<double>(pred.x + pred.w, gt.x + gt.w);
  const double iy1 = std::min<double>(pred.y + pred.h, gt.y + gt.h);
  const double inter = std::max(0.0, ix1 - ix0) * std::max(0.0, iy1 - iy0);
  const double area_pred = static_cast<double>(pred.w) * pred.h;
  const double area_gt = static_cast<double>(gt.w) * gt.h;
  const double uni = area_pred + area_gt - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double ma_reward(Action pred, Action gt) { return pred == gt ? 1.0 : 0.0; }

double format_reward(const format::TokenSequence& seq, Instruction instruction,
                     const format::FormatOptions& opts) {
  return format::ok(format::parse(seq, instruction, opts)) ? 1.0 : 0.0;
}

RewardBreakdown total_reward(const format::TokenSequence& seq,
                             const RewardTarget& target,
                             const RewardWeights& weights,
                             const format::FormatOptions& opts) {
  RewardBreakdown out;
  const auto parsed = format::parse(seq, target.instruction, opts);
  const auto* p = std::get_if<format::Parsed>(&parsed);
  if (p == nullptr) return out;
  out.r_format = 1.0;
  out.r_ma = ma_reward(p->action, target.action);
  if (target.instruction == Instruction::kBoxAction) {
    out.r_iou = iou_reward(*p->bbox, target.bbox);
    out.total = weights.iou * out.r_iou;
  }
  out.total += weights.ma * out.r_ma + weights.format * out.r_format;
  return out;
}

}  // namespace endotrack::rewards
