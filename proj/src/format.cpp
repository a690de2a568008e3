#include "endotrack/format.hpp"

#include <cstdint>

namespace endotrack::format {

namespace {

constexpr std::string_view kSymbols = "0123456789[],abcds$";
constexpr std::string_view kActionChars = "abcds";

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Recursive-descent over the EOS-free body.
class BodyParser {
 public:
  BodyParser(std::string_view s, const FormatOptions& opts) : s_(s), opts_(opts) {}

  ParseResult run(Instruction instruction) {
    Parsed out;
    if (s_.empty()) return Malformed{MalformedReason::kEmpty};
    if (instruction == Instruction::kBoxAction) {
      if (s_[pos_] != '[') return Malformed{MalformedReason::kMissingOpenBracket};
      ++pos_;
      std::array<int, 4> fields{};
      for (int i = 0; i < 4; ++i) {
        if (i > 0) {
          if (!consume(',')) {
            return Malformed{MalformedReason::kMissingField};
          }
          if (!opts_.strict && peek() == ' ') ++pos_;
        }
        auto reason = number(fields[i]);
        if (reason) return Malformed{*reason};
      }
      if (peek() == ',') return Malformed{MalformedReason::kExtraField};
      if (!consume(']')) return Malformed{MalformedReason::kMissingCloseBracket};
      out.bbox = BBox{fields[0], fields[1], fields[2], fields[3]};
    }
    if (pos_ >= s_.size()) return Malformed{MalformedReason::kBadAction};
    const auto idx = kActionChars.find(s_[pos_]);
    if (idx == std::string_view::npos) return Malformed{MalformedReason::kBadAction};
    out.action = kAllActions[idx];
    ++pos_;
    if (pos_ != s_.size()) return Malformed{MalformedReason::kTrailingTokens};
    return out;
  }

 private:
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }

  bool consume(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }

  std::optional<MalformedReason> number(int& value) {
    if (!is_digit(peek())) {
      return MalformedReason::kMissingField;
    }
    const std::size_t start = pos_;
    std::int64_t v = 0;
    while (is_digit(peek())) {
      v = v * 10 + (s_[pos_] - '0');
      ++pos_;
      if (pos_ - start > 9) return MalformedReason::kOutOfRange;
    }
    if (s_[start] == '0' && pos_ - start > 1) return MalformedReason::kBadNumber;
    if (v >= opts_.image_size) return MalformedReason::kOutOfRange;
    value = static_cast<int>(v);
    return std::nullopt;
  }

  std::string_view s_;
  const FormatOptions& opts_;
  std::size_t pos_ = 0;
};

}  // namespace

char token_char(Token t) {
  if (t < 0 || t >= kVocabSize) return '?';
  return kSymbols[t];
}

std::optional<Token> char_token(char c) {
  const auto idx = kSymbols.find(c);
  if (idx == std::string_view::npos) return std::nullopt;
  return static_cast<Token>(idx);
}

Token action_token(Action a) { return kFirstAction + static_cast<int>(a); }

std::optional<Action> token_action(Token t) {
  if (t < kFirstAction || t >= kEos) return std::nullopt;
  return kAllActions[t - kFirstAction];
}

char action_char(Action a) { return kActionChars[static_cast<int>(a)]; }

TokenSequence serialize(const std::optional<BBox>& bbox, Action action,
                        Instruction instruction, const FormatOptions& opts) {
  TokenSequence seq;
  if (instruction == Instruction::kBoxAction) {
    if (!bbox) throw PreconditionError("I_b output requires a bounding box");
    const std::array<int, 4> fields{bbox->x, bbox->y, bbox->w, bbox->h};
    for (int f : fields) {
      if (f < 0 || f >= opts.image_size) {
        throw PreconditionError("bbox field outside [0, image_size)");
      }
    }
    seq.push_back(kOpen);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) seq.push_back(kComma);
      for (char c : std::to_string(fields[i])) seq.push_back(c - '0');
    }
    seq.push_back(kClose);
  } else if (bbox) {
    throw PreconditionError("I_a output carries no bounding box");
  }
  seq.push_back(action_token(action));
  seq.push_back(kEos);
  return seq;
}

std::string to_text(const TokenSequence& seq) {
  std::string out;
  for (Token t : seq) {
    if (t == kEos) break;
    out.push_back(token_char(t));
  }
  return out;
}

std::optional<TokenSequence> from_text(std::string_view text) {
  TokenSequence seq;
  for (char c : text) {
    auto t = char_token(c);
    if (!t || *t == kEos) return std::nullopt;
    seq.push_back(*t);
  }
  seq.push_back(kEos);
  return seq;
}

std::string_view to_string(MalformedReason r) {
  switch (r) {
    case MalformedReason::kEmpty: return "empty";
    case MalformedReason::kMissingEos: return "missing-eos";
    case MalformedReason::kTrailingTokens: return "trailing-tokens";
    case MalformedReason::kMissingOpenBracket: return "missing-open-bracket";
    case MalformedReason::kMissingField: return "missing-field";
    case MalformedReason::kExtraField: return "extra-field";
    case MalformedReason::kBadNumber: return "bad-number";
    case MalformedReason::kOutOfRange: return "out-of-range";
    case MalformedReason::kMissingCloseBracket: return "missing-close-bracket";
    case MalformedReason::kBadAction: return "bad-action";
    case MalformedReason::kTooLong: return "too-long";
    case MalformedReason::kUnknownSymbol: return "unknown-symbol";
  }
  return "?";
}

ParseResult parse(const TokenSequence& seq, Instruction instruction,
                  const FormatOptions& opts, int max_len) {
  if (seq.empty()) return Malformed{MalformedReason::kEmpty};
  if (static_cast<int>(seq.size()) > max_len) return Malformed{MalformedReason::kTooLong};
  std::string body;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Token t = seq[i];
    if (t < 0 || t >= kVocabSize) return Malformed{MalformedReason::kUnknownSymbol};
    if (t == kEos) {
      if (i + 1 != seq.size()) return Malformed{MalformedReason::kTrailingTokens};
      break;
    }
    if (i + 1 == seq.size()) return Malformed{MalformedReason::kMissingEos};
    body.push_back(token_char(t));
  }
  // Token input has no space symbol, so leniency never applies here.
  FormatOptions strict = opts;
  strict.strict = true;
  return BodyParser(body, strict).run(instruction);
}

ParseResult parse_text(std::string_view text, Instruction instruction,
                       const FormatOptions& opts) {
  return BodyParser(text, opts).run(instruction);
}

}  // namespace endotrack::format
