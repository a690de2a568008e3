#include "endotrack/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

namespace endotrack::policy {

namespace {

using format::kEos;
using format::kVocabSize;

constexpr char kMagic[8] = {'E', 'N', 'D', 'O', 'T', 'R', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

int task_slot(Task t) {
  switch (t) {
    case Task::kPP: return 0;
    case Task::kAR: return 1;
    case Task::kCC:
    case Task::kGeneralSeq: return 2;
  }
  return 2;
}

// Context vector for predicting the token at position t.
void fill_context(const PolicyParams& params, const ParamLayout& lay,
                  const format::TokenSequence& tokens, int t, double* ctx) {
  const double* v = params.values.data();
  const int e = lay.embed;
  std::fill(ctx, ctx + 4 * e, 0.0);
  if (t > 0) {
    const double inv = 1.0 / t;
    for (int j = 0; j < t; ++j) {
      const double w = v[lay.position_weight + j] * inv;
      const double* emb = v + lay.token_embedding + tokens[j] * e;
      for (int k = 0; k < e; ++k) ctx[k] += w * emb[k];
    }
  }
  const double* bos = v + lay.bos_embedding;
  const double* last = t >= 1 ? v + lay.token_embedding + tokens[t - 1] * e : bos;
  const double* prev = t >= 2 ? v + lay.token_embedding + tokens[t - 2] * e : bos;
  const double* pos = v + lay.position_embed + static_cast<std::size_t>(t) * e;
  std::copy(last, last + e, ctx + e);
  std::copy(prev, prev + e, ctx + 2 * e);
  std::copy(pos, pos + e, ctx + 3 * e);
}

std::vector<double> centered(const PolicyConfig& cfg, const FeatureVector& features) {
  std::vector<double> x = features.values;
  const std::size_t frame = static_cast<std::size_t>(cfg.grid) * cfg.grid;
  for (std::size_t k = 0; k < frame && k < x.size(); ++k) x[k] -= cfg.feature_center;
  return x;
}

std::vector<double> hidden_input(const PolicyParams& params, const ParamLayout& lay,
                                 const FeatureVector& features) {
  if (static_cast<int>(features.values.size()) != lay.features) {
    throw PreconditionError("feature dimension does not match policy config");
  }
  const double* v = params.values.data();
  const auto x = centered(params.config, features);
  std::vector<double> u(lay.hidden);
  for (int i = 0; i < lay.hidden; ++i) {
    const double* row = v + lay.w_feature + static_cast<std::size_t>(i) * lay.features;
    double acc = v[lay.b_hidden + i];
    for (int k = 0; k < lay.features; ++k) acc += row[k] * x[k];
    u[i] = acc;
  }
  return u;
}

// h = tanh(u + W_ctx ctx); logits = W_out h + b_out.
void head(const PolicyParams& params, const ParamLayout& lay, const double* u,
          const double* ctx, double* h, double* logits) {
  const double* v = params.values.data();
  const int c = lay.context;
  for (int i = 0; i < lay.hidden; ++i) {
    const double* row = v + lay.w_context + static_cast<std::size_t>(i) * c;
    double acc = u[i];
    for (int k = 0; k < c; ++k) acc += row[k] * ctx[k];
    h[i] = std::tanh(acc);
  }
  for (int o = 0; o < lay.vocab; ++o) {
    const double* row = v + lay.w_out + static_cast<std::size_t>(o) * lay.hidden;
    double acc = v[lay.b_out + o];
    for (int i = 0; i < lay.hidden; ++i) acc += row[i] * h[i];
    logits[o] = acc;
  }
}

// Normalizes in place; returns log-sum-exp of the input.
double softmax(double* x, int n) {
  const double m = *std::max_element(x, x + n);
  double z = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - m);
    z += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= z;
  return m + std::log(z);
}

std::vector<double> next_logits(const PolicyParams& params, const ParamLayout& lay,
                                const std::vector<double>& u,
                                const format::TokenSequence& prefix) {
  if (static_cast<int>(prefix.size()) >= lay.max_len) {
    throw PreconditionError("prefix already at max_len");
  }
  std::vector<double> ctx(lay.context), h(lay.hidden), logits(lay.vocab);
  fill_context(params, lay, prefix, static_cast<int>(prefix.size()), ctx.data());
  head(params, lay, u.data(), ctx.data(), h.data(), logits.data());
  return logits;
}

void check_tokens(const format::TokenSequence& tokens, const ParamLayout& lay) {
  if (tokens.empty()) throw PreconditionError("empty token sequence");
  if (static_cast<int>(tokens.size()) > lay.max_len) {
    throw PreconditionError("token sequence longer than max_len");
  }
  for (int t : tokens) {
    if (t < 0 || t >= lay.vocab) throw PreconditionError("token outside vocabulary");
  }
}

template <typename Pick>
SampledCompletion decode(const PolicyParams& params, const FeatureVector& features,
                         Pick&& pick) {
  const ParamLayout lay(params.config);
  const auto u = hidden_input(params, lay, features);
  SampledCompletion out;
  while (static_cast<int>(out.tokens.size()) < lay.max_len) {
    auto logits = next_logits(params, lay, u, out.tokens);
    const int tok = pick(logits);
    std::vector<double> p = logits;
    const double lse = softmax(p.data(), lay.vocab);
    out.tokens.push_back(tok);
    out.logprobs.push_back(logits[tok] - lse);
    if (tok == kEos) break;
  }
  return out;
}

}  // namespace

FeatureVector featurize(const sim::Frame& frame, Task task, Instruction instruction,
                        int grid) {
  const int n = frame.size;
  if (grid < 1 || grid > n) throw PreconditionError("grid must lie in [1, image_size]");
  FeatureVector f;
  f.values.assign(static_cast<std::size_t>(grid) * grid + 5, 0.0);
  for (int ci = 0; ci < grid; ++ci) {
    const int r0 = ci * n / grid;
    const int r1 = (ci + 1) * n / grid;
    for (int cj = 0; cj < grid; ++cj) {
      const int c0 = cj * n / grid;
      const int c1 = (cj + 1) * n / grid;
      double acc = 0.0;
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) acc += frame.at(r, c);
      }
      f.values[ci * grid + cj] = acc / ((r1 - r0) * (c1 - c0));
    }
  }
  return with_conditioning(std::move(f), task, instruction, grid);
}

FeatureVector with_conditioning(FeatureVector features, Task task,
                                Instruction instruction, int grid) {
  const std::size_t base = static_cast<std::size_t>(grid) * grid;
  if (features.values.size() != base + 5) {
    throw PreconditionError("feature vector has wrong dimension");
  }
  std::fill(features.values.begin() + base, features.values.end(), 0.0);
  features.values[base + task_slot(task)] = 1.0;
  features.values[base + 3 + (instruction == Instruction::kActionOnly ? 0 : 1)] = 1.0;
  return features;
}

ParamLayout::ParamLayout(const PolicyConfig& cfg)
    : vocab(kVocabSize),
      embed(cfg.embed),
      hidden(cfg.hidden),
      max_len(cfg.max_len),
      features(cfg.feature_dim()),
      context(4 * cfg.embed) {
  if (cfg.grid < 1 || cfg.embed < 1 || cfg.hidden < 1 || cfg.max_len < 1) {
    throw PreconditionError("policy dimensions must be positive");
  }
  std::size_t off = 0;
  auto take = [&](std::size_t n) {
    const std::size_t at = off;
    off += n;
    return at;
  };
  token_embedding = take(static_cast<std::size_t>(vocab) * embed);
  bos_embedding = take(embed);
  position_weight = take(max_len);
  position_embed = take(static_cast<std::size_t>(max_len) * embed);
  w_feature = take(static_cast<std::size_t>(hidden) * features);
  w_context = take(static_cast<std::size_t>(hidden) * context);
  b_hidden = take(hidden);
  w_out = take(static_cast<std::size_t>(vocab) * hidden);
  b_out = take(vocab);
  total = off;
}

PolicyParams zero_params(const PolicyConfig& cfg) {
  const ParamLayout lay(cfg);
  return {cfg, std::vector<double>(lay.total, 0.0)};
}

PolicyParams init_params(const PolicyConfig& cfg, std::uint64_t seed) {
  const ParamLayout lay(cfg);
  PolicyParams p = zero_params(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](std::size_t at, std::size_t n, double scale) {
    for (std::size_t i = 0; i < n; ++i) p.values[at + i] = cfg.init_scale * scale * gauss(rng);
  };
  fill(lay.token_embedding, static_cast<std::size_t>(lay.vocab) * lay.embed, 0.5);
  fill(lay.bos_embedding, lay.embed, 0.5);
  std::fill_n(p.values.begin() + lay.position_weight, lay.max_len, 1.0);
  fill(lay.position_embed, static_cast<std::size_t>(lay.max_len) * lay.embed, 0.5);
  fill(lay.w_feature, static_cast<std::size_t>(lay.hidden) * lay.features,
       1.0 / std::sqrt(static_cast<double>(lay.features)));
  fill(lay.w_context, static_cast<std::size_t>(lay.hidden) * lay.context,
       1.0 / std::sqrt(static_cast<double>(lay.context)));
  fill(lay.w_out, static_cast<std::size_t>(lay.vocab) * lay.hidden,
       0.1 / std::sqrt(static_cast<double>(lay.hidden)));
  return p;
}

std::vector<double> token_distribution(const PolicyParams& params,
                                       const FeatureVector& features,
                                       const format::TokenSequence& prefix) {
  const ParamLayout lay(params.config);
  const auto u = hidden_input(params, lay, features);
  auto p = next_logits(params, lay, u, prefix);
  softmax(p.data(), lay.vocab);
  return p;
}

SampledCompletion sample(const PolicyParams& params, const FeatureVector& features,
                         double temperature, std::uint64_t seed) {
  if (!(temperature > 0.0)) throw PreconditionError("temperature must be > 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return decode(params, features, [&](const std::vector<double>& logits) {
    std::vector<double> p(logits.size());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = logits[i] / temperature;
    softmax(p.data(), static_cast<int>(p.size()));
    const double r = unit(rng);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (r < acc) return static_cast<int>(i);
    }
    // Rounding left r above the final partial sum; take the last token with
    // non-zero mass.
    for (std::size_t i = p.size(); i-- > 0;) {
      if (p[i] > 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(p.size()) - 1;
  });
}

SampledCompletion greedy_decode(const PolicyParams& params,
                                const FeatureVector& features) {
  auto out = decode(params, features, [](const std::vector<double>& logits) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  });
  out.greedy = true;
  return out;
}

SequencePass forward(const PolicyParams& params, const FeatureVector& features,
                     const format::TokenSequence& tokens) {
  const ParamLayout lay(params.config);
  check_tokens(tokens, lay);
  SequencePass pass;
  pass.length = static_cast<int>(tokens.size());
  pass.hidden_input = hidden_input(params, lay, features);
  const int T = pass.length;
  pass.context.resize(static_cast<std::size_t>(T) * lay.context);
  pass.hidden.resize(static_cast<std::size_t>(T) * lay.hidden);
  pass.probs.resize(static_cast<std::size_t>(T) * lay.vocab);
  pass.logprobs.resize(T);
  for (int t = 0; t < T; ++t) {
    double* ctx = pass.context.data() + static_cast<std::size_t>(t) * lay.context;
    double* h = pass.hidden.data() + static_cast<std::size_t>(t) * lay.hidden;
    double* p = pass.probs.data() + static_cast<std::size_t>(t) * lay.vocab;
    fill_context(params, lay, tokens, t, ctx);
    head(params, lay, pass.hidden_input.data(), ctx, h, p);
    const double target_logit = p[tokens[t]];
    const double lse = softmax(p, lay.vocab);
    pass.logprobs[t] = target_logit - lse;
  }
  return pass;
}

void backward(const PolicyParams& params, const FeatureVector& features,
              const format::TokenSequence& tokens, const SequencePass& pass,
              std::span<const double> dlogits, std::span<double> grad) {
  const ParamLayout lay(params.config);
  if (grad.size() != lay.total) throw PreconditionError("gradient buffer has wrong size");
  const int T = pass.length;
  if (dlogits.size() != static_cast<std::size_t>(T) * lay.vocab) {
    throw PreconditionError("dlogits has wrong size");
  }
  const double* v = params.values.data();
  double* g = grad.data();
  const int e = lay.embed;
  const int c = lay.context;
  std::vector<double> du(lay.hidden, 0.0), dh(lay.hidden), dz(lay.hidden), dctx(c);

  for (int t = 0; t < T; ++t) {
    const double* gl = dlogits.data() + static_cast<std::size_t>(t) * lay.vocab;
    const double* h = pass.hidden.data() + static_cast<std::size_t>(t) * lay.hidden;
    const double* ctx = pass.context.data() + static_cast<std::size_t>(t) * c;

    std::fill(dh.begin(), dh.end(), 0.0);
    for (int o = 0; o < lay.vocab; ++o) {
      const double go = gl[o];
      if (go == 0.0) continue;
      g[lay.b_out + o] += go;
      double* gw = g + lay.w_out + static_cast<std::size_t>(o) * lay.hidden;
      const double* w = v + lay.w_out + static_cast<std::size_t>(o) * lay.hidden;
      for (int i = 0; i < lay.hidden; ++i) {
        gw[i] += go * h[i];
        dh[i] += go * w[i];
      }
    }
    std::fill(dctx.begin(), dctx.end(), 0.0);
    for (int i = 0; i < lay.hidden; ++i) {
      dz[i] = dh[i] * (1.0 - h[i] * h[i]);
      du[i] += dz[i];
      if (dz[i] == 0.0) continue;
      double* gw = g + lay.w_context + static_cast<std::size_t>(i) * c;
      const double* w = v + lay.w_context + static_cast<std::size_t>(i) * c;
      for (int k = 0; k < c; ++k) {
        gw[k] += dz[i] * ctx[k];
        dctx[k] += dz[i] * w[k];
      }
    }

    // Prefix summary: (1/t) sum_j w_j emb[x_j].
    if (t > 0) {
      const double inv = 1.0 / t;
      for (int j = 0; j < t; ++j) {
        const double* emb = v + lay.token_embedding + tokens[j] * e;
        double* gemb = g + lay.token_embedding + tokens[j] * e;
        const double w = v[lay.position_weight + j];
        double dw = 0.0;
        for (int k = 0; k < e; ++k) {
          dw += dctx[k] * emb[k];
          gemb[k] += w * inv * dctx[k];
        }
        g[lay.position_weight + j] += inv * dw;
      }
    }
    double* glast = t >= 1 ? g + lay.token_embedding + tokens[t - 1] * e : g + lay.bos_embedding;
    double* gprev = t >= 2 ? g + lay.token_embedding + tokens[t - 2] * e : g + lay.bos_embedding;
    double* gpos = g + lay.position_embed + static_cast<std::size_t>(t) * e;
    for (int k = 0; k < e; ++k) {
      glast[k] += dctx[e + k];
      gprev[k] += dctx[2 * e + k];
      gpos[k] += dctx[3 * e + k];
    }
  }

  const auto x = centered(params.config, features);
  for (int i = 0; i < lay.hidden; ++i) {
    if (du[i] == 0.0) continue;
    g[lay.b_hidden + i] += du[i];
    double* gw = g + lay.w_feature + static_cast<std::size_t>(i) * lay.features;
    for (int k = 0; k < lay.features; ++k) gw[k] += du[i] * x[k];
  }
}

LogprobGrad sequence_logprob_and_grad(const PolicyParams& params,
                                      const FeatureVector& features,
                                      const format::TokenSequence& tokens) {
  const auto pass = forward(params, features, tokens);
  const int V = kVocabSize;
  std::vector<double> dlogits(pass.probs.size());
  LogprobGrad out;
  for (int t = 0; t < pass.length; ++t) {
    out.logprob += pass.logprobs[t];
    // d log p(x_t) / d logits = onehot(x_t) - p
    for (int o = 0; o < V; ++o) dlogits[t * V + o] = -pass.probs[t * V + o];
    dlogits[t * V + tokens[t]] += 1.0;
  }
  out.grad.assign(params.size(), 0.0);
  backward(params, features, tokens, pass, dlogits, out.grad);
  return out;
}

double sequence_logprob(const PolicyParams& params, const FeatureVector& features,
                        const format::TokenSequence& tokens) {
  const auto pass = forward(params, features, tokens);
  double lp = 0.0;
  for (double x : pass.logprobs) lp += x;
  return lp;
}

// Checkpoints -----------------------------------------------------------------

namespace {

template <typename T>
void put(std::ofstream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("truncated checkpoint");
  return v;
}

void put_string(std::ofstream& os, const std::string& s) {
  put(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint string");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw std::runtime_error("truncated checkpoint");
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  const auto& cfg = ckpt.params.config;
  os.write(kMagic, sizeof(kMagic));
  put(os, kCheckpointVersion);
  put_string(os, ckpt.tag);
  put_string(os, ckpt.config_hash);
  put(os, ckpt.step);
  for (int d : {cfg.grid, cfg.embed, cfg.hidden, cfg.max_len, kVocabSize}) {
    put(os, static_cast<std::int32_t>(d));
  }
  put(os, cfg.init_scale);
  put(os, cfg.feature_center);
  put(os, static_cast<std::uint64_t>(ckpt.params.values.size()));
  os.write(reinterpret_cast<const char*>(ckpt.params.values.data()),
           static_cast<std::streamsize>(ckpt.params.values.size() * sizeof(double)));
  if (!os) throw std::runtime_error("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint: " + path);
  }
  if (get<std::uint32_t>(is) != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version");
  }
  Checkpoint ckpt;
  ckpt.tag = get_string(is);
  ckpt.config_hash = get_string(is);
  ckpt.step = get<std::int64_t>(is);
  auto& cfg = ckpt.params.config;
  cfg.grid = get<std::int32_t>(is);
  cfg.embed = get<std::int32_t>(is);
  cfg.hidden = get<std::int32_t>(is);
  cfg.max_len = get<std::int32_t>(is);
  if (get<std::int32_t>(is) != kVocabSize) throw std::runtime_error("vocabulary size mismatch");
  cfg.init_scale = get<double>(is);
  cfg.feature_center = get<double>(is);
  const auto count = get<std::uint64_t>(is);
  if (count != ParamLayout(cfg).total) {
    throw std::runtime_error("checkpoint parameter count does not match its dimensions");
  }
  ckpt.params.values.resize(count);
  is.read(reinterpret_cast<char*>(ckpt.params.values.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!is) throw std::runtime_error("truncated checkpoint");
  return ckpt;
}

Checkpoint load_checkpoint(const std::string& path, const PolicyConfig& expected) {
  auto ckpt = load_checkpoint(path);
  const auto& c = ckpt.params.config;
  if (c.grid != expected.grid || c.embed != expected.embed || c.hidden != expected.hidden ||
      c.max_len != expected.max_len || c.feature_center != expected.feature_center) {
    throw std::runtime_error("checkpoint dimensions do not match the policy config");
  }
  return ckpt;
}

}  // namespace endotrack::policy
