#include "endotrack/types.hpp"

#include <cmath>

namespace endotrack {

double distance(const PixelPoint& a, const PixelPoint& b) {
  return std::hypot(a.u - b.u, a.v - b.v);
}

std::string_view to_string(Task t) {
  switch (t) {
    case Task::kPP: return "PP";
    case Task::kAR: return "AR";
    case Task::kCC: return "CC";
    case Task::kGeneralSeq: return "GENERAL_SEQ";
  }
  return "?";
}

std::string_view to_string(Instruction i) {
  return i == Instruction::kActionOnly ? "I_a" : "I_b";
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::kUpperRight: return "UPPER_RIGHT";
    case Action::kUpperLeft: return "UPPER_LEFT";
    case Action::kLowerLeft: return "LOWER_LEFT";
    case Action::kLowerRight: return "LOWER_RIGHT";
    case Action::kStop: return "STOP";
  }
  return "?";
}

std::string increment_label(Action a) {
  const Increment inc = increment(a);
  return "[" + std::to_string(inc.d1) + "," + std::to_string(inc.d2) + "]";
}

std::optional<Task> task_from_string(std::string_view s) {
  for (Task t : {Task::kPP, Task::kAR, Task::kCC, Task::kGeneralSeq}) {
    if (to_string(t) == s) return t;
  }
  return std::nullopt;
}

std::optional<Instruction> instruction_from_string(std::string_view s) {
  if (s == "I_a") return Instruction::kActionOnly;
  if (s == "I_b") return Instruction::kBoxAction;
  return std::nullopt;
}

std::optional<Action> action_from_string(std::string_view s) {
  for (Action a : kAllActions) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

}  // namespace endotrack
