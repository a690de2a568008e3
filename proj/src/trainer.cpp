#include "endotrack/trainer.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "endotrack/parallel.hpp"
#include "endotrack/rng.hpp"

namespace endotrack::trainer {

namespace {

constexpr double kLogRatioClamp = 20.0;
constexpr int V = format::kVocabSize;

bool finite(double x) { return std::isfinite(x); }

}  // namespace

std::vector<Example> make_examples(std::span<const annotate::LabeledSample> samples,
                                   std::span<const sim::Scene> scenes,
                                   const sim::KinematicsConfig& kin,
                                   const sim::NoiseConfig& noise, int grid, int jobs) {
  std::map<std::string, const sim::Scene*> by_id;
  for (const auto& s : scenes) by_id[s.id] = &s;

  // Distinct frames in first-appearance order.
  std::map<std::pair<std::string, int>, std::size_t> frame_index;
  std::vector<const annotate::LabeledSample*> frame_owner;
  std::vector<std::size_t> sample_frame(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto key = std::make_pair(samples[i].frame.scene_id, samples[i].frame.step);
    auto [it, inserted] = frame_index.try_emplace(key, frame_owner.size());
    if (inserted) frame_owner.push_back(&samples[i]);
    sample_frame[i] = it->second;
  }

  const auto blocks = parallel_map(frame_owner.size(), jobs, [&](std::size_t f) {
    const auto& ref = frame_owner[f]->frame;
    const auto it = by_id.find(ref.scene_id);
    if (it == by_id.end()) throw PreconditionError("no scene with id " + ref.scene_id);
    sim::NoiseConfig n = noise;
    n.seed = ref.noise_seed;
    const auto frame = sim::render(*it->second, ref.theta, kin, n);
    return policy::featurize(frame, frame_owner[f]->task, Instruction::kBoxAction, grid);
  });

  std::vector<Example> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    Example e;
    e.id = s.id;
    e.task = s.task;
    e.features = policy::with_conditioning(blocks[sample_frame[i]], s.task, s.instruction, grid);
    e.target = s.canonical_text;
    e.reward_target = annotate::reward_target(s);
    out.push_back(std::move(e));
  }
  return out;
}

void adam_update(std::vector<double>& values, std::span<const double> grad, AdamState& state,
                 double lr, const AdamConfig& cfg) {
  if (grad.size() != values.size()) throw PreconditionError("gradient size mismatch");
  if (state.m.size() != values.size()) {
    state.m.assign(values.size(), 0.0);
    state.v.assign(values.size(), 0.0);
    state.t = 0;
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < values.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grad[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    values[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * values[i]);
  }
}

// SFT -------------------------------------------------------------------------

void SftConfig::validate() const {
  if (!(learning_rate > 0.0)) throw PreconditionError("sft learning_rate must be > 0");
  if (batch_size < 1) throw PreconditionError("sft batch_size must be >= 1");
  if (!(epochs >= 0.0)) throw PreconditionError("sft epochs must be >= 0");
}

double sft_loss_and_grad(const policy::PolicyParams& params, std::span<const Example> batch,
                         std::vector<double>* grad) {
  if (batch.empty()) throw PreconditionError("empty SFT batch");
  std::size_t tokens = 0;
  for (const auto& e : batch) tokens += e.target.size();
  const double scale = 1.0 / static_cast<double>(tokens);
  if (grad) grad->assign(params.size(), 0.0);
  double nll = 0.0;
  std::vector<double> dlogits;
  for (const auto& e : batch) {
    const auto pass = policy::forward(params, e.features, e.target);
    for (double lp : pass.logprobs) nll -= lp;
    if (!grad) continue;
    // d(-log p(x_t))/d logits = p - onehot(x_t)
    dlogits.assign(pass.probs.begin(), pass.probs.end());
    for (int t = 0; t < pass.length; ++t) dlogits[t * V + e.target[t]] -= 1.0;
    for (double& d : dlogits) d *= scale;
    policy::backward(params, e.features, e.target, pass, dlogits, *grad);
  }
  return nll * scale;
}

SftStepResult sft_step(const policy::PolicyParams& params, std::span<const Example> batch,
                       const SftConfig& cfg, AdamState& state, double lr) {
  std::vector<double> grad;
  SftStepResult out{params, sft_loss_and_grad(params, batch, &grad)};
  if (!finite(out.mean_nll)) {
    throw TrainingError("non-finite SFT loss at optimizer step " + std::to_string(state.t + 1));
  }
  adam_update(out.params.values, grad, state, lr, cfg.adam);
  return out;
}

SftResult sft_train(const policy::PolicyParams& init, std::span<const Example> data,
                    const SftConfig& cfg, std::int64_t start_step) {
  cfg.validate();
  SftResult result{init, {}, start_step};
  if (data.empty() || cfg.epochs == 0.0) return result;
  const auto n = static_cast<std::int64_t>(data.size());
  const auto total = static_cast<std::int64_t>(
      std::ceil(cfg.epochs * static_cast<double>(n) / cfg.batch_size));
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  AdamState state;
  std::vector<Example> batch;
  for (std::int64_t s = 0; s < total; ++s) {
    batch.clear();
    while (static_cast<int>(batch.size()) < cfg.batch_size) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
      if (static_cast<std::int64_t>(batch.size()) == n) break;
    }
    const double lr = cfg.linear_decay
                          ? cfg.learning_rate * (1.0 - static_cast<double>(s) / total)
                          : cfg.learning_rate;
    auto step = sft_step(result.params, batch, cfg, state, lr);
    result.params = std::move(step.params);
    ++result.steps;
    result.log.push_back({result.steps, lr, step.mean_nll});
  }
  return result;
}

// GRPO ------------------------------------------------------------------------

void GrpoConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw PreconditionError("grpo learning_rate must be >= 0");
  if (batch_size < 1) throw PreconditionError("grpo batch_size must be >= 1");
  if (group_size < 2) throw PreconditionError("group_size must be >= 2");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
    throw PreconditionError("clip_epsilon must lie in (0, 1)");
  }
  if (!(kl_coeff >= 0.0)) throw PreconditionError("kl_coeff must be >= 0");
  if (inner_steps < 1) throw PreconditionError("inner_steps must be >= 1");
  if (!(temperature > 0.0)) throw PreconditionError("temperature must be > 0");
  if (!group_weights.empty()) {
    if (static_cast<int>(group_weights.size()) != batch_size) {
      throw PreconditionError("group_weights needs one entry per group in a batch");
    }
    double sum = 0.0;
    for (double w : group_weights) {
      if (!(w >= 0.0)) throw PreconditionError("group weights must be nonnegative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw PreconditionError("group weights must sum to 1");
  }
}

GroupBatch compute_advantages(GroupBatch group, const GrpoConfig& cfg) {
  auto& c = group.completions;
  if (c.empty()) return group;
  double mean = 0.0;
  for (const auto& x : c) mean += x.reward.total;
  mean /= static_cast<double>(c.size());
  double var = 0.0;
  for (const auto& x : c) var += (x.reward.total - mean) * (x.reward.total - mean);
  const double sd = std::sqrt(var / static_cast<double>(c.size()));
  for (auto& x : c) {
    x.advantage = x.reward.total - mean;
    if (cfg.advantage_norm == AdvantageNorm::kMeanStd) x.advantage /= sd + 1e-8;
  }
  return group;
}

ObjectiveResult grpo_objective(const policy::PolicyParams& params,
                               const policy::PolicyParams& kl_ref,
                               std::span<const GroupBatch> groups, const GrpoConfig& cfg) {
  ObjectiveResult out;
  out.grad.assign(params.size(), 0.0);
  if (groups.empty()) return out;
  double weight_sum = 0.0;
  for (const auto& g : groups) weight_sum += g.weight;
  if (std::abs(weight_sum - 1.0) > 1e-9) throw PreconditionError("group weights must sum to 1");

  const double lo = 1.0 - cfg.clip_epsilon;
  const double hi = 1.0 + cfg.clip_epsilon;
  std::size_t token_count = 0, clipped_count = 0;
  double kl_weighted = 0.0;
  std::vector<double> dlogits;

  for (const auto& g : groups) {
    const double per_completion = g.weight / static_cast<double>(g.completions.size());
    for (const auto& c : g.completions) {
      const int T = static_cast<int>(c.tokens.size());
      if (static_cast<int>(c.old_logprobs.size()) != T) {
        throw PreconditionError("old logprobs do not match completion length");
      }
      const auto pass = policy::forward(params, g.features, c.tokens);
      const bool kl_on = cfg.kl_coeff != 0.0;
      policy::SequencePass ref;
      if (kl_on) ref = policy::forward(kl_ref, g.features, c.tokens);
      const double coef = per_completion / T;
      const double A = c.advantage;
      dlogits.assign(static_cast<std::size_t>(T) * V, 0.0);
      double surrogate = 0.0, kl = 0.0;
      for (int t = 0; t < T; ++t) {
        const double* p = pass.probs.data() + static_cast<std::size_t>(t) * V;
        double* d = dlogits.data() + static_cast<std::size_t>(t) * V;
        double log_ratio = pass.logprobs[t] - c.old_logprobs[t];
        bool clamped_here = false;
        if (!finite(log_ratio) || std::abs(log_ratio) > kLogRatioClamp) {
          clamped_here = true;
          out.clamped = true;
          log_ratio = std::isnan(log_ratio) ? 0.0
                                            : std::clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp);
        }
        const double r = std::exp(log_ratio);
        const double unclipped = r * A;
        const double clipped = std::clamp(r, lo, hi) * A;
        ++token_count;
        if (unclipped <= clipped) {
          surrogate += unclipped;
          if (!clamped_here && A != 0.0) {
            // loss = -coef * r * A; d r / d logits = r (onehot - p)
            const double s = -coef * unclipped;
            for (int k = 0; k < V; ++k) d[k] -= s * p[k];
            d[c.tokens[t]] += s;
          }
        } else {
          surrogate += clipped;
          ++clipped_count;
        }
        if (kl_on) {
          const double* q = ref.probs.data() + static_cast<std::size_t>(t) * V;
          double kl_t = 0.0;
          for (int k = 0; k < V; ++k) {
            if (q[k] > 0.0) kl_t += q[k] * (std::log(q[k]) - std::log(p[k]));
          }
          kl += kl_t;
          // d KL(q || p) / d logits = p - q
          const double s = coef * cfg.kl_coeff;
          for (int k = 0; k < V; ++k) d[k] += s * (p[k] - q[k]);
        }
      }
      out.surrogate += coef * surrogate;
      kl_weighted += coef * kl;
      policy::backward(params, g.features, c.tokens, pass, dlogits, out.grad);
    }
  }
  out.mean_kl = kl_weighted;
  out.loss = -(out.surrogate - cfg.kl_coeff * kl_weighted);
  out.clip_fraction =
      token_count ? static_cast<double>(clipped_count) / static_cast<double>(token_count) : 0.0;
  return out;
}

GroupBatch sample_group(const policy::PolicyParams& snapshot, const Example& prompt,
                        const GrpoConfig& cfg, std::uint64_t seed) {
  GroupBatch g;
  g.id = prompt.id;
  g.features = prompt.features;
  g.target = prompt.reward_target;
  for (int i = 0; i < cfg.group_size; ++i) {
    auto s = policy::sample(snapshot, prompt.features, cfg.temperature,
                            mix_seed(seed, static_cast<std::uint64_t>(i)));
    GroupCompletion c;
    c.reward = rewards::total_reward(s.tokens, prompt.reward_target, cfg.reward_weights);
    c.tokens = std::move(s.tokens);
    c.old_logprobs = std::move(s.logprobs);
    g.completions.push_back(std::move(c));
  }
  return compute_advantages(std::move(g), cfg);
}

void require_sft(const policy::Checkpoint& ckpt, const GrpoConfig& cfg) {
  if (ckpt.tag != "sft" && !cfg.allow_cold_start) {
    throw PreconditionError("GRPO expects an SFT checkpoint (tag '" + ckpt.tag +
                            "'); pass --allow-cold-start to override");
  }
}

GrpoResult grpo_train(const policy::PolicyParams& params_sft, std::span<const Example> prompts,
                      const GrpoConfig& cfg, int steps) {
  cfg.validate();
  if (steps < 0) throw PreconditionError("steps must be >= 0");
  GrpoResult result{params_sft, {}};
  if (steps == 0) return result;
  if (prompts.empty()) throw PreconditionError("GRPO needs a non-empty prompt pool");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(prompts.size());
  std::size_t cursor = order.size();
  AdamState state;
  const int B = std::min<int>(cfg.batch_size, static_cast<int>(prompts.size()));

  for (int step = 0; step < steps; ++step) {
    std::vector<std::size_t> picks;
    while (static_cast<int>(picks.size()) < B) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks.push_back(order[cursor++]);
    }
    const policy::PolicyParams snapshot = result.params;
    const std::uint64_t step_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(step) + 1);
    auto groups = parallel_map(picks.size(), cfg.jobs, [&](std::size_t b) {
      return sample_group(snapshot, prompts[picks[b]], cfg, mix_seed(step_seed, b));
    });
    for (std::size_t b = 0; b < groups.size(); ++b) {
      groups[b].weight = cfg.group_weights.empty() || B != cfg.batch_size
                             ? 1.0 / static_cast<double>(groups.size())
                             : cfg.group_weights[b];
    }

    GrpoMetrics m;
    m.step = step + 1;
    m.group_size = cfg.group_size;
    std::size_t n = 0, parsed = 0;
    for (const auto& g : groups) {
      for (const auto& c : g.completions) {
        ++n;
        m.mean_reward += c.reward.total;
        m.mean_iou += c.reward.r_iou;
        m.mean_ma += c.reward.r_ma;
        m.mean_format += c.reward.r_format;
        if (c.reward.r_format > 0.0) ++parsed;
      }
    }
    m.mean_reward /= n;
    m.mean_iou /= n;
    m.mean_ma /= n;
    m.mean_format /= n;
    m.format_rate = static_cast<double>(parsed) / n;
    if (!finite(m.mean_reward)) throw TrainingError("mean reward is NaN at GRPO step " + std::to_string(step + 1));

    const policy::PolicyParams& kl_ref =
        cfg.kl_reference == KlReference::kSft ? params_sft : snapshot;
    for (int k = 0; k < cfg.inner_steps; ++k) {
      const auto obj = grpo_objective(result.params, kl_ref, groups, cfg);
      if (!finite(obj.loss)) throw TrainingError("non-finite GRPO loss at step " + std::to_string(step + 1));
      m.clamped = m.clamped || obj.clamped;
      adam_update(result.params.values, obj.grad, state, cfg.learning_rate, cfg.adam);
    }
    // Divergence and clipping reached by this round's updates.
    const auto after = grpo_objective(result.params, kl_ref, groups, cfg);
    m.kl = after.mean_kl;
    m.clip_fraction = after.clip_fraction;
    spdlog::debug("grpo step {} reward {:.4f} format {:.3f} kl {:.3g}", m.step, m.mean_reward,
                  m.format_rate, m.kl);
    result.log.push_back(m);
  }
  return result;
}

std::vector<Example> prompts_from_scenes(std::span<const sim::Scene> scenes,
                                         const sim::KinematicsConfig& kin,
                                         const annotate::AnnotationConfig& acfg,
                                         const annotate::DatasetOptions& opts,
                                         int episode_budget, int grid) {
  const auto annotations = annotate::annotate_scenes(scenes, kin, acfg, episode_budget, opts);
  std::vector<annotate::LabeledSample> samples;
  for (const auto& a : annotations) {
    samples.push_back(annotate::make_sample(a, Instruction::kActionOnly));
    samples.push_back(annotate::make_sample(a, Instruction::kBoxAction));
  }
  return make_examples(samples, scenes, kin, opts.noise, grid, opts.jobs);
}

double mean_greedy_reward(const policy::PolicyParams& params, std::span<const Example> prompts,
                          const rewards::RewardWeights& weights) {
  if (prompts.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : prompts) {
    const auto out = policy::greedy_decode(params, p.features);
    sum += rewards::total_reward(out.tokens, p.reward_target, weights).total;
  }
  return sum / static_cast<double>(prompts.size());
}

}  // namespace endotrack::trainer
