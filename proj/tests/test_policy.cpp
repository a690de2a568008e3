#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include "endotrack/policy.hpp"
#include "oracles.hpp"

using namespace endotrack;
using namespace endotrack::policy;

namespace {

PolicyConfig small_config() {
  PolicyConfig c;
  c.grid = 4;
  c.embed = 3;
  c.hidden = 5;
  return c;
}

FeatureVector random_features(const PolicyConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FeatureVector f;
  f.values.assign(c.feature_dim(), 0.0);
  for (int i = 0; i < c.grid * c.grid; ++i) f.values[i] = u(rng);
  f.values[c.grid * c.grid + static_cast<int>(u(rng) * 3)] = 1.0;
  f.values[c.grid * c.grid + 3 + static_cast<int>(u(rng) * 2)] = 1.0;
  return f;
}

format::TokenSequence random_tokens(std::mt19937_64& rng, int max_body) {
  std::uniform_int_distribution<int> tok(0, format::kEos - 1), len(0, max_body);
  format::TokenSequence t;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) t.push_back(tok(rng));
  t.push_back(format::kEos);
  return t;
}

sim::Frame constant_frame(int n, float v) {
  sim::Frame f;
  f.size = n;
  f.pixels.assign(static_cast<std::size_t>(n) * n, v);
  return f;
}

// Worst per-coordinate relative error between analytic and central differences.
double gradient_error(const PolicyParams& p, const FeatureVector& f,
                      const format::TokenSequence& t) {
  const auto analytic = sequence_logprob_and_grad(p, f, t);
  CHECK(analytic.logprob == doctest::Approx(sequence_logprob(p, f, t)).epsilon(1e-12));
  auto objective = [&](const std::vector<double>& v) {
    PolicyParams q = p;
    q.values = v;
    return sequence_logprob(q, f, t);
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double fd = oracle::central_difference(objective, p.values, i, 1e-5);
    worst = std::max(worst, oracle::relative_error(analytic.grad[i], fd, 1e-4));
  }
  return worst;
}

}  // namespace

TEST_CASE("featurize of constant frames") {
  auto f = featurize(constant_frame(400, 0.0f), Task::kPP, Instruction::kActionOnly, 32);
  REQUIRE(f.values.size() == 32 * 32 + 5);
  for (int i = 0; i < 32 * 32; ++i) CHECK(f.values[i] == 0.0);
  f = featurize(constant_frame(400, 0.5f), Task::kAR, Instruction::kBoxAction, 32);
  for (int i = 0; i < 32 * 32; ++i) CHECK(f.values[i] == doctest::Approx(0.5));
}

TEST_CASE("featurize sets the conditioning one-hots") {
  const auto base = 4 * 4;
  auto f = featurize(constant_frame(40, 0.3f), Task::kPP, Instruction::kActionOnly, 4);
  CHECK(std::vector<double>(f.values.begin() + base, f.values.end()) ==
        std::vector<double>{1, 0, 0, 1, 0});
  f = with_conditioning(f, Task::kCC, Instruction::kBoxAction, 4);
  CHECK(std::vector<double>(f.values.begin() + base, f.values.end()) ==
        std::vector<double>{0, 0, 1, 0, 1});
  f = with_conditioning(f, Task::kAR, Instruction::kBoxAction, 4);
  CHECK(std::vector<double>(f.values.begin() + base, f.values.end()) ==
        std::vector<double>{0, 1, 0, 0, 1});
}

TEST_CASE("featurize 400 to 64 matches per-pixel averaging") {
  sim::Frame frame;
  frame.size = 400;
  frame.pixels.resize(400 * 400);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : frame.pixels) p = u(rng);
  const int s = 64;
  const auto f = featurize(frame, Task::kPP, Instruction::kBoxAction, s);

  // Assign each pixel to the cell whose span contains it, then average.
  std::vector<double> sum(s * s, 0.0);
  std::vector<int> count(s * s, 0);
  auto cell_of = [&](int x) {
    for (int c = 0; c < s; ++c) {
      if (x >= c * 400 / s && x < (c + 1) * 400 / s) return c;
    }
    return -1;
  };
  for (int r = 0; r < 400; ++r) {
    for (int c = 0; c < 400; ++c) {
      const int cell = cell_of(r) * s + cell_of(c);
      sum[cell] += frame.at(r, c);
      ++count[cell];
    }
  }
  for (int i = 0; i < s * s; ++i) {
    CHECK(f.values[i] == doctest::Approx(sum[i] / count[i]).epsilon(1e-12));
  }
  // Every cell spans six or seven pixels per axis.
  CHECK(*std::min_element(count.begin(), count.end()) == 36);
  CHECK(*std::max_element(count.begin(), count.end()) == 49);
}

TEST_CASE("token_distribution is uniform at zero parameters") {
  const auto cfg = small_config();
  const auto p = zero_params(cfg);
  std::mt19937_64 rng(2);
  const auto f = random_features(cfg, rng);
  for (const format::TokenSequence& prefix : {format::TokenSequence{}, format::TokenSequence{10, 1, 2}}) {
    const auto d = token_distribution(p, f, prefix);
    REQUIRE(d.size() == 19);
    for (double x : d) CHECK(x == doctest::Approx(1.0 / 19).epsilon(1e-14));
  }
  CHECK(sequence_logprob(p, f, {format::kEos}) == doctest::Approx(std::log(1.0 / 19)));
}

TEST_CASE("token_distribution is a valid distribution for random parameters") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto cfg = small_config();
    cfg.init_scale = 1.0 + trial;  // large weights included
    const auto p = init_params(cfg, trial);
    const auto f = random_features(cfg, rng);
    const auto prefix = random_tokens(rng, 10);
    const auto d = token_distribution(p, f, format::TokenSequence(prefix.begin(), prefix.end() - 1));
    double sum = 0.0;
    for (double x : d) {
      CHECK(x > 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("raising one output bias raises only that token's probability") {
  const auto cfg = small_config();
  auto p = init_params(cfg, 4);
  std::mt19937_64 rng(4);
  const auto f = random_features(cfg, rng);
  const ParamLayout lay(cfg);
  const auto before = token_distribution(p, f, {10});
  p.values[lay.b_out + 7] += 1e-3;
  const auto after = token_distribution(p, f, {10});
  for (int k = 0; k < 19; ++k) {
    if (k == 7) {
      CHECK(after[k] > before[k]);
    } else {
      CHECK(after[k] < before[k]);
    }
  }
}

TEST_CASE("sampling is deterministic, self-consistent and bounded") {
  const auto cfg = small_config();
  const auto p = init_params(cfg, 5);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 50; ++i) {
    const auto f = random_features(cfg, rng);
    const auto a = sample(p, f, 1.0, 100 + i);
    const auto b = sample(p, f, 1.0, 100 + i);
    CHECK(a.tokens == b.tokens);
    CHECK(a.logprobs == b.logprobs);
    REQUIRE(a.logprobs.size() == a.tokens.size());
    CHECK(a.tokens.size() <= 20);
    for (double lp : a.logprobs) CHECK(lp <= 0.0);
    // Recorded logprobs equal a teacher-forced recomputation.
    const auto pass = forward(p, f, a.tokens);
    for (std::size_t t = 0; t < a.tokens.size(); ++t) {
      CHECK(a.logprobs[t] == doctest::Approx(pass.logprobs[t]).epsilon(1e-12));
    }
    // Logprobs stay untempered at other temperatures too.
    const auto c = sample(p, f, 0.3, 7 + i);
    const auto pass_c = forward(p, f, c.tokens);
    for (std::size_t t = 0; t < c.tokens.size(); ++t) {
      CHECK(c.logprobs[t] == doctest::Approx(pass_c.logprobs[t]).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(sample(p, random_features(cfg, rng), 0.0, 1), PreconditionError);
}

TEST_CASE("the zero-temperature limit of sampling is greedy decoding") {
  const auto cfg = small_config();
  std::mt19937_64 rng(6);
  for (int i = 0; i < 50; ++i) {
    const auto p = init_params(cfg, 60 + i);
    const auto f = random_features(cfg, rng);
    const auto g = greedy_decode(p, f);
    CHECK(g.greedy);
    CHECK(g.tokens == greedy_decode(p, f).tokens);
    CHECK(sample(p, f, 1e-6, i).tokens == g.tokens);
  }
}

TEST_CASE("sampled first-token frequencies match the distribution") {
  auto cfg = small_config();
  cfg.init_scale = 3.0;
  const auto p = init_params(cfg, 7);
  std::mt19937_64 rng(7);
  const auto f = random_features(cfg, rng);
  const auto d = token_distribution(p, f, {});
  constexpr int kDraws = 100000;
  std::vector<int> hits(19, 0);
  for (int i = 0; i < kDraws; ++i) ++hits[sample(p, f, 1.0, 1000 + i).tokens[0]];
  for (int k = 0; k < 19; ++k) {
    const double sigma = std::sqrt(kDraws * d[k] * (1 - d[k]));
    CHECK(std::abs(hits[k] - kDraws * d[k]) <= 3 * sigma + 1);
  }
}

TEST_CASE("sequence_logprob_and_grad matches central finite differences") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto cfg = small_config();
    const auto p = init_params(cfg, 80 + trial);
    const auto f = random_features(cfg, rng);
    const auto t = random_tokens(rng, 8);
    CHECK(gradient_error(p, f, t) < 1e-4);
  }
}

TEST_CASE("gradient check still passes with doubled logits") {
  std::mt19937_64 rng(9);
  const auto cfg = small_config();
  auto p = init_params(cfg, 9);
  const auto f = random_features(cfg, rng);
  const auto t = random_tokens(rng, 8);
  const double before = sequence_logprob(p, f, t);
  const ParamLayout lay(cfg);
  for (std::size_t i = lay.w_out; i < lay.total; ++i) p.values[i] *= 2.0;
  CHECK(sequence_logprob(p, f, t) != before);
  CHECK(gradient_error(p, f, t) < 1e-4);
}

TEST_CASE("single-token sequence under the uniform policy") {
  const auto cfg = small_config();
  std::mt19937_64 rng(10);
  const auto r = sequence_logprob_and_grad(zero_params(cfg), random_features(cfg, rng), {format::kEos});
  CHECK(r.logprob == doctest::Approx(std::log(1.0 / 19)));
}

TEST_CASE("forward rejects sequences outside the contract") {
  const auto cfg = small_config();
  std::mt19937_64 rng(11);
  const auto p = init_params(cfg, 1);
  const auto f = random_features(cfg, rng);
  CHECK_THROWS_AS(sequence_logprob(p, f, {}), PreconditionError);
  CHECK_THROWS_AS(sequence_logprob(p, f, {19}), PreconditionError);
  CHECK_THROWS_AS(sequence_logprob(p, f, format::TokenSequence(21, 0)), PreconditionError);
  FeatureVector wrong;
  wrong.values.assign(3, 0.0);
  CHECK_THROWS_AS(sequence_logprob(p, wrong, {format::kEos}), PreconditionError);
}

TEST_CASE("init_params is seeded and sized by the layout") {
  const PolicyConfig cfg;
  const ParamLayout lay(cfg);
  const auto a = init_params(cfg, 3);
  CHECK(a.size() == lay.total);
  CHECK(a.values == init_params(cfg, 3).values);
  CHECK(a.values != init_params(cfg, 4).values);
  CHECK(lay.total == 19u * 16 + 16 + 20 + 20 * 16 + 64u * (32 * 32 + 5) + 64 * 64 + 64 + 19 * 64 + 19);
}

TEST_CASE("checkpoints round-trip and validate dimensions") {
  const auto dir = std::filesystem::temp_directory_path() / "endotrack_policy_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "a.ckpt").string();
  const auto cfg = small_config();
  Checkpoint c{init_params(cfg, 12), "sft", "0123456789abcdef", 42};
  save_checkpoint(c, path);
  const auto back = load_checkpoint(path, cfg);
  CHECK(back.params.values == c.params.values);
  CHECK(back.params.config == cfg);
  CHECK(back.tag == "sft");
  CHECK(back.config_hash == "0123456789abcdef");
  CHECK(back.step == 42);

  auto other = cfg;
  other.hidden = 6;
  CHECK_THROWS(load_checkpoint(path, other));

  {
    std::FILE* fp = std::fopen((dir / "bad.ckpt").string().c_str(), "wb");
    std::fputs("garbage", fp);
    std::fclose(fp);
  }
  CHECK_THROWS(load_checkpoint((dir / "bad.ckpt").string()));
  CHECK_THROWS(load_checkpoint((dir / "missing.ckpt").string()));
  std::filesystem::remove_all(dir);
}
