#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "endotrack/annotate.hpp"
#include "endotrack/policy.hpp"
#include "endotrack/rewards.hpp"
#include "endotrack/sim.hpp"

namespace endotrack::eval {

struct EvalConfig {
  sim::KinematicsConfig kinematics;
  annotate::AnnotationConfig annotation;
  sim::SceneGenConfig scene_gen;
  sim::NoiseConfig noise;  // seed is the eval noise root
  std::uint64_t seed = 1000;  // scene seeds
  Instruction instruction = Instruction::kBoxAction;
  int jobs = 1;
  int pp_trials = 30;
  int pp_budget = 30;
  int cc_trials = 10;
  int cc_budget = 200;
  int gen_trials = 10;
  int gen_budget = 200;
  std::string config_hash;
};

/// What a controller sees at one step.
struct Observation {
  const sim::Scene* scene = nullptr;
  sim::MotorState theta;
  int target_index = 0;
  Task conditioning = Task::kPP;
  int step = 0;
  const sim::Frame* frame = nullptr;  // set only if the controller needs_frame()
};

struct Decision {
  std::optional<Action> action;  // nullopt: unparseable output, no actuation
  format::TokenSequence tokens;
  std::string text;
};

/// Controllers are stateless between calls, so trials can run in parallel.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual bool needs_frame() const { return false; }
  virtual Decision decide(const Observation& obs, const EvalConfig& cfg) const = 0;
};

class OracleController : public Controller {
 public:
  std::string name() const override { return "oracle"; }
  Decision decide(const Observation& obs, const EvalConfig& cfg) const override;
};

class PolicyController : public Controller {
 public:
  explicit PolicyController(policy::PolicyParams params, std::string label = "policy");
  std::string name() const override { return label_; }
  bool needs_frame() const override { return true; }
  Decision decide(const Observation& obs, const EvalConfig& cfg) const override;

 private:
  policy::PolicyParams params_;
  std::string label_;
};

class ConstantController : public Controller {
 public:
  explicit ConstantController(Action a) : action_(a) {}
  std::string name() const override;
  Decision decide(const Observation& obs, const EvalConfig& cfg) const override;

 private:
  Action action_;
};

/// Uniform over the four moves, seeded by (scene, step).
class RandomController : public Controller {
 public:
  explicit RandomController(std::uint64_t seed) : seed_(seed) {}
  std::string name() const override { return "random"; }
  Decision decide(const Observation& obs, const EvalConfig& cfg) const override;

 private:
  std::uint64_t seed_;
};

/// Emits unparseable output every step.
class MalformedController : public Controller {
 public:
  std::string name() const override { return "malformed"; }
  Decision decide(const Observation& obs, const EvalConfig& cfg) const override;
};

struct TraceStep {
  int step = 0;
  sim::MotorState theta;
  int target_index = 0;
  PixelPoint position;  // target projection before acting
  double distance = 0.0;
  std::optional<Action> action;
  std::string text;
  std::optional<rewards::RewardBreakdown> reward;  // against the oracle label
};

struct EpisodeResult {
  std::string scene_id;
  int steps_taken = 0;
  double initial_distance = 0.0;
  double final_distance = 0.0;
  double min_distance = 0.0;
  bool reached_fr = false;
  bool stop_issued = false;
  std::vector<int> visited;         // ring mode: markers in visit order
  std::vector<bool> items_done;     // sequence mode: per target
  std::vector<TraceStep> trace;
};

enum class RolloutMode { kSingle, kRing, kSequence };

RolloutMode mode_for(const sim::Scene& scene);

/// The frame a controller observes at `step`; in sequence mode the current
/// target is drawn at full contrast and the rest dimmed.
sim::Frame observation_frame(const sim::Scene& scene, const sim::MotorState& theta, int step,
                             int focus_target, const EvalConfig& cfg);

EpisodeResult rollout(const Controller& controller, const sim::Scene& scene, int budget,
                      const EvalConfig& cfg);
EpisodeResult rollout(const Controller& controller, const sim::Scene& scene, int budget,
                      const EvalConfig& cfg, RolloutMode mode);

struct EvalReport {
  std::string suite;  // PP, AR, CC, SEQ_CHARS, ...
  std::string controller;
  int trials = 0;
  int budget = 0;
  double sr_c = 0.0;
  double sr_r = 0.0;
  double cr = 0.0;  // CC only
  double sr = 0.0;  // CC: full loop; sequences: full sequence
  std::vector<double> per_item_sr;
  std::string config_hash;
  std::vector<EpisodeResult> episodes;
};

std::vector<sim::Scene> eval_scenes(Task task, int n, const EvalConfig& cfg);
std::vector<sim::Scene> generalization_scenes(sim::SequenceSuite suite, int n,
                                              const EvalConfig& cfg);

EvalReport eval_pp_ar(const Controller& controller, Task task, const EvalConfig& cfg);
EvalReport eval_cc(const Controller& controller, const EvalConfig& cfg);
EvalReport eval_generalization(const Controller& controller, sim::SequenceSuite suite,
                               const EvalConfig& cfg);

/// Scores a report over an explicit scene list.
EvalReport evaluate(const Controller& controller, const std::vector<sim::Scene>& scenes,
                    const std::string& suite, int budget, const EvalConfig& cfg);

std::string report_json(const EvalReport& report, bool include_traces = false);
std::string episode_json(const EpisodeResult& episode);
/// Plain-text table, one row per report.
std::string report_table(const std::vector<EvalReport>& reports);

}  // namespace endotrack::eval
