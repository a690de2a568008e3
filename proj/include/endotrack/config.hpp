#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "endotrack/annotate.hpp"
#include "endotrack/eval.hpp"
#include "endotrack/policy.hpp"
#include "endotrack/sim.hpp"
#include "endotrack/trainer.hpp"

namespace endotrack::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetSection {
  int pp_scenes = 200;
  int ar_scenes = 200;
  int cc_scenes = 40;
  double split_frac = 0.8;
  int episode_budget = 30;
  int cc_episode_budget = 60;
  bool curate = true;
  sim::NoiseConfig noise{0.02, 1.0, 0.02, 0};  // seed unused, derived from RunConfig::seed
};

struct GrpoSection {
  trainer::GrpoConfig trainer;
  int steps = 200;
  int prompt_scenes = 20;  // per PP/AR task
  int cc_prompt_scenes = 10;
};

struct EvalSection {
  Instruction instruction = Instruction::kBoxAction;
  int pp_trials = 30;
  int pp_budget = 30;
  int cc_trials = 10;
  int cc_budget = 200;
  int gen_trials = 10;
  int gen_budget = 200;
  sim::NoiseConfig noise{0.02, 0.0, 0.0, 0};
};

struct RunConfig {
  std::uint64_t seed = 7;
  sim::KinematicsConfig kinematics;
  annotate::AnnotationConfig annotation;
  sim::SceneGenConfig scene_gen;
  DatasetSection dataset;
  policy::PolicyConfig policy;
  trainer::SftConfig sft;
  GrpoSection grpo;
  EvalSection eval;

  /// Throws ConfigError on any invalid value.
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults; unknown keys and type mismatches throw
/// ConfigError naming the offending path.
RunConfig from_json(const nlohmann::json& j);
RunConfig load(const std::string& path);

/// FNV-1a 64 of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);
std::string fnv1a_hex(std::string_view bytes);

/// Seeds derived from RunConfig::seed, one stream per purpose.
enum class SeedStream : std::uint64_t {
  kDatasetScenes = 1,
  kSplit,
  kDatasetNoise,
  kInit,
  kSftShuffle,
  kGrpo,
  kGrpoScenes,
  kEvalScenes,
  kEvalNoise,
};
std::uint64_t derived_seed(const RunConfig& cfg, SeedStream stream);

std::vector<sim::Scene> dataset_scenes(const RunConfig& cfg);
std::vector<sim::Scene> grpo_scenes(const RunConfig& cfg);
annotate::DatasetOptions dataset_options(const RunConfig& cfg, int jobs);
trainer::SftConfig sft_config(const RunConfig& cfg);
trainer::GrpoConfig grpo_config(const RunConfig& cfg, int jobs);
eval::EvalConfig eval_config(const RunConfig& cfg, int jobs);

}  // namespace endotrack::config
