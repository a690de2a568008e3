#include <doctest.h>

#include <random>
#include <regex>

#include "endotrack/format.hpp"
#include "endotrack/rewards.hpp"

using namespace endotrack;
using namespace endotrack::format;

namespace {

TokenSequence tokens(std::string_view text) {
  auto seq = from_text(text);
  REQUIRE(seq);
  return *seq;
}

// Reference grammar: a regex over the EOS-free text plus a range check.
std::optional<Parsed> reference_parse(const TokenSequence& seq, Instruction ins) {
  if (seq.empty() || seq.back() != kEos || seq.size() > 20) return std::nullopt;
  std::string body;
  for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
    if (seq[i] == kEos) return std::nullopt;
    body.push_back(token_char(seq[i]));
  }
  static const std::regex box(R"(\[(0|[1-9][0-9]*),(0|[1-9][0-9]*),(0|[1-9][0-9]*),(0|[1-9][0-9]*)\]([abcds]))");
  static const std::regex bare(R"(([abcds]))");
  std::smatch m;
  const auto& re = ins == Instruction::kBoxAction ? box : bare;
  if (!std::regex_match(body, m, re)) return std::nullopt;
  Parsed p;
  const std::string act = m[m.size() - 1].str();
  p.action = kAllActions[std::string_view("abcds").find(act[0])];
  if (ins == Instruction::kBoxAction) {
    int v[4];
    for (int i = 0; i < 4; ++i) {
      if (m[i + 1].length() > 3) return std::nullopt;
      v[i] = std::stoi(m[i + 1].str());
      if (v[i] >= 400) return std::nullopt;
    }
    p.bbox = BBox{v[0], v[1], v[2], v[3]};
  }
  return p;
}

}  // namespace

TEST_CASE("vocabulary is a stable bijection") {
  CHECK(kVocabSize == 19);
  for (Token t = 0; t < kVocabSize; ++t) {
    const auto back = char_token(token_char(t));
    REQUIRE(back);
    CHECK(*back == t);
  }
  CHECK(token_char(0) == '0');
  CHECK(token_char(9) == '9');
  CHECK(token_char(kOpen) == '[');
  CHECK(token_char(kClose) == ']');
  CHECK(token_char(kComma) == ',');
  CHECK(token_char(kEos) == '$');
  CHECK(action_char(Action::kUpperRight) == 'a');
  CHECK(action_char(Action::kUpperLeft) == 'b');
  CHECK(action_char(Action::kLowerLeft) == 'c');
  CHECK(action_char(Action::kLowerRight) == 'd');
  CHECK(action_char(Action::kStop) == 's');
  for (Action a : kAllActions) CHECK(token_action(action_token(a)) == a);
  CHECK_FALSE(char_token('x'));
}

TEST_CASE("serialize produces the canonical text") {
  auto s = serialize(BBox{123, 45, 67, 89}, Action::kUpperRight, Instruction::kBoxAction);
  CHECK(to_text(s) == "[123,45,67,89]a");
  CHECK(s.back() == kEos);

  s = serialize(std::nullopt, Action::kStop, Instruction::kActionOnly);
  CHECK(s == TokenSequence{action_token(Action::kStop), kEos});

  s = serialize(BBox{0, 0, 1, 1}, Action::kLowerLeft, Instruction::kBoxAction);
  CHECK(to_text(s) == "[0,0,1,1]c");
}

TEST_CASE("serialize rejects out-of-range or mismatched inputs") {
  CHECK_THROWS_AS(serialize(BBox{400, 0, 1, 1}, Action::kStop, Instruction::kBoxAction),
                  PreconditionError);
  CHECK_THROWS_AS(serialize(BBox{-1, 0, 1, 1}, Action::kStop, Instruction::kBoxAction),
                  PreconditionError);
  CHECK_THROWS_AS(serialize(std::nullopt, Action::kStop, Instruction::kBoxAction),
                  PreconditionError);
  CHECK_THROWS_AS(serialize(BBox{1, 1, 1, 1}, Action::kStop, Instruction::kActionOnly),
                  PreconditionError);
}

TEST_CASE("parse accepts the documented examples") {
  auto r = parse(tokens("[12,34,56,78]b"), Instruction::kBoxAction);
  REQUIRE(ok(r));
  CHECK(std::get<Parsed>(r).bbox == BBox{12, 34, 56, 78});
  CHECK(std::get<Parsed>(r).action == Action::kUpperLeft);

  r = parse(tokens("a"), Instruction::kActionOnly);
  REQUIRE(ok(r));
  CHECK_FALSE(std::get<Parsed>(r).bbox);
  CHECK(std::get<Parsed>(r).action == Action::kUpperRight);
}

TEST_CASE("parse reports a reason for each malformation") {
  auto reason = [](std::string_view text, Instruction ins = Instruction::kBoxAction) {
    const auto r = parse(tokens(text), ins);
    REQUIRE_FALSE(ok(r));
    return std::get<Malformed>(r).reason;
  };
  CHECK(reason("[12,34,56]a") == MalformedReason::kMissingField);
  CHECK(reason("[12,34,56,78,9]a") == MalformedReason::kExtraField);
  CHECK(reason("12,34,56,78]a") == MalformedReason::kMissingOpenBracket);
  CHECK(reason("[12,34,56,78a") == MalformedReason::kMissingCloseBracket);
  CHECK(reason("[012,34,56,78]a") == MalformedReason::kBadNumber);
  CHECK(reason("[400,34,56,78]a") == MalformedReason::kOutOfRange);
  CHECK(reason("[12,34,56,78]") == MalformedReason::kBadAction);
  CHECK(reason("[12,34,56,78]aa") == MalformedReason::kTrailingTokens);
  CHECK(reason("") == MalformedReason::kEmpty);
  CHECK(reason("[1,2,3,4]a", Instruction::kActionOnly) == MalformedReason::kBadAction);

  CHECK(std::get<Malformed>(parse({}, Instruction::kActionOnly)).reason ==
        MalformedReason::kEmpty);
  CHECK(std::get<Malformed>(parse({13}, Instruction::kActionOnly)).reason ==
        MalformedReason::kMissingEos);
  CHECK(std::get<Malformed>(parse({13, kEos, kEos}, Instruction::kActionOnly)).reason ==
        MalformedReason::kTrailingTokens);
  CHECK(std::get<Malformed>(parse({19, kEos}, Instruction::kActionOnly)).reason ==
        MalformedReason::kUnknownSymbol);
  TokenSequence long_seq(21, 13);
  long_seq.back() = kEos;
  CHECK(std::get<Malformed>(parse(long_seq, Instruction::kActionOnly)).reason ==
        MalformedReason::kTooLong);
}

TEST_CASE("lenient text parsing tolerates one space after commas") {
  FormatOptions lenient;
  lenient.strict = false;
  CHECK(ok(parse_text("[1, 2, 3, 4]a", Instruction::kBoxAction, lenient)));
  CHECK_FALSE(ok(parse_text("[1, 2, 3, 4]a", Instruction::kBoxAction)));
  CHECK_FALSE(ok(parse_text("[1,  2,3,4]a", Instruction::kBoxAction, lenient)));
}

TEST_CASE("serialize and parse round-trip on random inputs") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> coord(0, 399), act(0, 4), ins(0, 1);
  for (int i = 0; i < 20000; ++i) {
    const BBox b{coord(rng), coord(rng), coord(rng), coord(rng)};
    const Action a = kAllActions[act(rng)];
    const auto instr = ins(rng) ? Instruction::kBoxAction : Instruction::kActionOnly;
    const std::optional<BBox> box = instr == Instruction::kBoxAction ? std::optional(b) : std::nullopt;
    const auto seq = serialize(box, a, instr);
    CHECK(seq.size() <= static_cast<std::size_t>(kDefaultMaxLen));
    const auto r = parse(seq, instr);
    REQUIRE(ok(r));
    CHECK(std::get<Parsed>(r) == Parsed{box, a});
    const auto again = from_text(to_text(seq));
    REQUIRE(again);
    CHECK(*again == seq);
  }
}

TEST_CASE("parse agrees with the reference grammar on fuzzed sequences") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> tok(0, kVocabSize - 1), len(0, 20), coin(0, 3);
  std::uniform_int_distribution<int> coord(0, 399), act(0, 4);
  int accepted = 0;
  for (int i = 0; i < 50000; ++i) {
    TokenSequence seq;
    if (coin(rng) == 0) {
      // Uniform random tokens, usually malformed.
      const int n = len(rng);
      for (int k = 0; k < n; ++k) seq.push_back(tok(rng));
    } else {
      // A valid sequence with a few point mutations.
      seq = serialize(BBox{coord(rng), coord(rng), coord(rng), coord(rng)},
                      kAllActions[act(rng)], Instruction::kBoxAction);
      const int edits = coin(rng);
      for (int e = 0; e < edits; ++e) {
        std::uniform_int_distribution<std::size_t> pos(0, seq.size() - 1);
        switch (coin(rng)) {
          case 0: seq[pos(rng)] = tok(rng); break;
          case 1: seq.erase(seq.begin() + pos(rng)); break;
          default: seq.insert(seq.begin() + pos(rng), tok(rng)); break;
        }
        if (seq.empty()) break;
      }
    }
    for (auto ins : {Instruction::kActionOnly, Instruction::kBoxAction}) {
      const auto got = parse(seq, ins);
      const auto want = reference_parse(seq, ins);
      REQUIRE(ok(got) == want.has_value());
      if (want) {
        CHECK(std::get<Parsed>(got) == *want);
        ++accepted;
      }
    }
  }
  CHECK(accepted > 1000);
}
