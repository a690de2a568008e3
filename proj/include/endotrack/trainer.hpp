#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "endotrack/annotate.hpp"
#include "endotrack/format.hpp"
#include "endotrack/policy.hpp"
#include "endotrack/rewards.hpp"
#include "endotrack/sim.hpp"

namespace endotrack::trainer {

/// Raised when a loss or reward turns non-finite.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A prompt with its rendered features and targets.
struct Example {
  std::string id;
  Task task = Task::kPP;
  policy::FeatureVector features;
  format::TokenSequence target;
  rewards::RewardTarget reward_target;
};

/// Renders every sample's frame (once per frame, shared across instruction
/// variants) and featurizes it. Scenes are looked up by id.
std::vector<Example> make_examples(std::span<const annotate::LabeledSample> samples,
                                   std::span<const sim::Scene> scenes,
                                   const sim::KinematicsConfig& kin,
                                   const sim::NoiseConfig& noise, int grid, int jobs = 1);

// Optimizer -------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

/// One AdamW descent step on `values` in place.
void adam_update(std::vector<double>& values, std::span<const double> grad,
                 AdamState& state, double lr, const AdamConfig& cfg);

// SFT -------------------------------------------------------------------------

struct SftConfig {
  double learning_rate = 2e-4;
  bool linear_decay = true;
  int batch_size = 2;
  double epochs = 1.0;
  AdamConfig adam;
  std::uint64_t seed = 0;  // batch shuffling

  void validate() const;
};

struct SftStepResult {
  policy::PolicyParams params;
  double mean_nll = 0.0;  // nats per token over the batch
};

/// Teacher-forced NLL of the batch and its gradient, averaged per token.
double sft_loss_and_grad(const policy::PolicyParams& params, std::span<const Example> batch,
                         std::vector<double>* grad);

SftStepResult sft_step(const policy::PolicyParams& params, std::span<const Example> batch,
                       const SftConfig& cfg, AdamState& state, double lr);

struct SftLogRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double mean_nll = 0.0;
};

struct SftResult {
  policy::PolicyParams params;
  std::vector<SftLogRecord> log;
  std::int64_t steps = 0;
};

/// ceil(epochs * N / batch_size) steps over per-epoch shuffles, learning rate
/// decaying linearly to zero when enabled.
SftResult sft_train(const policy::PolicyParams& init, std::span<const Example> data,
                    const SftConfig& cfg, std::int64_t start_step = 0);

// GRPO ------------------------------------------------------------------------

enum class AdvantageNorm { kMean, kMeanStd };
enum class KlReference { kSnapshot, kSft };

struct GrpoConfig {
  double learning_rate = 1e-5;
  int batch_size = 4;  // groups per step
  int group_size = 4;  // G
  double clip_epsilon = 0.2;
  double kl_coeff = 0.04;
  std::vector<double> group_weights;  // empty: uniform
  AdvantageNorm advantage_norm = AdvantageNorm::kMeanStd;
  int inner_steps = 1;
  double temperature = 1.0;
  KlReference kl_reference = KlReference::kSnapshot;
  bool allow_cold_start = false;
  rewards::RewardWeights reward_weights;
  AdamConfig adam;
  std::uint64_t seed = 0;
  int jobs = 1;

  void validate() const;
};

struct GroupCompletion {
  format::TokenSequence tokens;
  std::vector<double> old_logprobs;
  rewards::RewardBreakdown reward;
  double advantage = 0.0;
};

struct GroupBatch {
  std::string id;  // sample id: scene/step/instruction
  policy::FeatureVector features;
  rewards::RewardTarget target;
  std::vector<GroupCompletion> completions;
  double weight = 1.0;
};

GroupBatch compute_advantages(GroupBatch group, const GrpoConfig& cfg);

struct ObjectiveResult {
  double loss = 0.0;  // negated objective
  std::vector<double> grad;
  double surrogate = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  bool clamped = false;
};

/// Clipped surrogate minus kl_coeff * KL(ref || new) on the sampled prefixes.
/// Per completion both terms are token means; completions are averaged within
/// a group and groups combined with their weights, which must sum to 1.
ObjectiveResult grpo_objective(const policy::PolicyParams& params,
                               const policy::PolicyParams& kl_ref,
                               std::span<const GroupBatch> groups, const GrpoConfig& cfg);

/// Samples G completions for one prompt and scores them.
GroupBatch sample_group(const policy::PolicyParams& snapshot, const Example& prompt,
                        const GrpoConfig& cfg, std::uint64_t seed);

struct GrpoMetrics {
  std::int64_t step = 0;
  double mean_reward = 0.0;
  double mean_iou = 0.0;
  double mean_ma = 0.0;
  double mean_format = 0.0;
  double format_rate = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  bool clamped = false;
  int group_size = 0;
};

struct GrpoResult {
  policy::PolicyParams params;
  std::vector<GrpoMetrics> log;
};

/// Throws PreconditionError unless the checkpoint is tagged "sft" or
/// allow_cold_start is set.
void require_sft(const policy::Checkpoint& ckpt, const GrpoConfig& cfg);

GrpoResult grpo_train(const policy::PolicyParams& params_sft, std::span<const Example> prompts,
                      const GrpoConfig& cfg, int steps);

/// Prompt pool from oracle-annotated scenes (both instruction variants).
std::vector<Example> prompts_from_scenes(std::span<const sim::Scene> scenes,
                                         const sim::KinematicsConfig& kin,
                                         const annotate::AnnotationConfig& acfg,
                                         const annotate::DatasetOptions& opts,
                                         int episode_budget, int grid);

/// Mean total reward of greedy decodes over the prompts.
double mean_greedy_reward(const policy::PolicyParams& params, std::span<const Example> prompts,
                          const rewards::RewardWeights& weights = {});

}  // namespace endotrack::trainer
