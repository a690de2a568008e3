#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "endotrack/types.hpp"

namespace endotrack::format {

/// Token indices: '0'..'9' are 0..9, then '[', ']', ',', 'a', 'b', 'c', 'd',
/// 's', EOS.
inline constexpr int kVocabSize = 19;
inline constexpr int kOpen = 10;
inline constexpr int kClose = 11;
inline constexpr int kComma = 12;
inline constexpr int kFirstAction = 13;
inline constexpr int kEos = 18;
inline constexpr int kDefaultMaxLen = 20;

using Token = int;
using TokenSequence = std::vector<Token>;

/// Printable symbol for a token; EOS renders as '$'.
char token_char(Token t);
std::optional<Token> char_token(char c);

Token action_token(Action a);
std::optional<Action> token_action(Token t);
char action_char(Action a);

struct FormatOptions {
  int image_size = 400;
  /// Lenient parsing tolerates one space after each comma (text input only).
  bool strict = true;
};

/// Canonical output. I_b needs a box, I_a must not have one; box fields must
/// lie in [0, image_size). Throws PreconditionError otherwise.
TokenSequence serialize(const std::optional<BBox>& bbox, Action action,
                        Instruction instruction, const FormatOptions& opts = {});

/// Rendering without the EOS marker, e.g. "[12,34,56,78]b".
std::string to_text(const TokenSequence& seq);
/// Inverse of to_text; appends EOS. Characters outside the vocabulary map
/// to nullopt.
std::optional<TokenSequence> from_text(std::string_view text);

enum class MalformedReason {
  kEmpty,
  kMissingEos,
  kTrailingTokens,
  kMissingOpenBracket,
  kMissingField,
  kExtraField,
  kBadNumber,
  kOutOfRange,
  kMissingCloseBracket,
  kBadAction,
  kTooLong,
  kUnknownSymbol,
};

std::string_view to_string(MalformedReason r);

struct Parsed {
  std::optional<BBox> bbox;
  Action action = Action::kStop;
  friend bool operator==(const Parsed&, const Parsed&) = default;
};

struct Malformed {
  MalformedReason reason;
};

using ParseResult = std::variant<Parsed, Malformed>;

inline bool ok(const ParseResult& r) { return std::holds_alternative<Parsed>(r); }

/// Accepts exactly the serializer's language for the given instruction.
ParseResult parse(const TokenSequence& seq, Instruction instruction,
                  const FormatOptions& opts = {},
                  int max_len = kDefaultMaxLen);

/// Text form (no EOS marker). Honors FormatOptions::strict.
ParseResult parse_text(std::string_view text, Instruction instruction,
                       const FormatOptions& opts = {});

}  // namespace endotrack::format
