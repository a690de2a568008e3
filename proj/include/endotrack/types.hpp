#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace endotrack {

/// Raised when a caller violates an operation's documented precondition.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Task : std::uint8_t { kPP, kAR, kCC, kGeneralSeq };

enum class Instruction : std::uint8_t {
  kActionOnly,  // I_a: action character only
  kBoxAction,   // I_b: [x,y,w,h] followed by the action character
};

/// Discrete bending commands. Enum order is the oracle's tie-break order.
enum class Action : std::uint8_t {
  kUpperRight,
  kUpperLeft,
  kLowerLeft,
  kLowerRight,
  kStop,
};

inline constexpr std::array<Action, 4> kMoveActions = {
    Action::kUpperRight, Action::kUpperLeft, Action::kLowerLeft,
    Action::kLowerRight};

inline constexpr std::array<Action, 5> kAllActions = {
    Action::kUpperRight, Action::kUpperLeft, Action::kLowerLeft,
    Action::kLowerRight, Action::kStop};

struct Increment {
  int d1 = 0;
  int d2 = 0;
  friend bool operator==(const Increment&, const Increment&) = default;
};

/// Motor increment sign vector: UR (1,1), UL (-1,1), LL (-1,-1), LR (1,-1),
/// STOP (0,0).
constexpr Increment increment(Action a) {
  switch (a) {
    case Action::kUpperRight: return {1, 1};
    case Action::kUpperLeft: return {-1, 1};
    case Action::kLowerLeft: return {-1, -1};
    case Action::kLowerRight: return {1, -1};
    case Action::kStop: return {0, 0};
  }
  return {0, 0};
}

/// Image-space point. Origin top-left, v grows downward.
struct PixelPoint {
  double u = 0.0;
  double v = 0.0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

double distance(const PixelPoint& a, const PixelPoint& b);

/// Axis-aligned pixel box: (x, y) is the top-left corner.
struct BBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  PixelPoint center() const { return {x + 0.5 * w, y + 0.5 * h}; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

std::string_view to_string(Task t);
std::string_view to_string(Instruction i);
std::string_view to_string(Action a);
/// Table-style label, e.g. "[1,1]" or "[0,0]".
std::string increment_label(Action a);

std::optional<Task> task_from_string(std::string_view s);
std::optional<Instruction> instruction_from_string(std::string_view s);
std::optional<Action> action_from_string(std::string_view s);

}  // namespace endotrack
