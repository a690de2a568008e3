#include "endotrack/eval.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <random>

#include "endotrack/parallel.hpp"
#include "endotrack/rng.hpp"

namespace endotrack::eval {

namespace {

using nlohmann::json;

double distance_to_center(const sim::Scene& scene, int target, const sim::MotorState& theta,
                          const sim::KinematicsConfig& kin, PixelPoint* where = nullptr) {
  const auto p = sim::project_unbounded(scene.targets[target], theta, kin);
  if (!p) throw PreconditionError("target left the view cone");
  if (where) *where = *p;
  return distance(*p, kin.center);
}

Decision from_tokens(format::TokenSequence tokens, const EvalConfig& cfg) {
  Decision d;
  const auto parsed = format::parse(tokens, cfg.instruction, {cfg.kinematics.image_size});
  if (const auto* ok = std::get_if<format::Parsed>(&parsed)) d.action = ok->action;
  d.text = format::to_text(tokens);
  d.tokens = std::move(tokens);
  return d;
}

Decision from_action(Action a, const Observation& obs, const EvalConfig& cfg) {
  std::optional<BBox> box;
  if (cfg.instruction == Instruction::kBoxAction) {
    box = sim::target_bbox(*obs.scene, obs.target_index, obs.theta, cfg.kinematics);
    if (!box) {
      Decision d;
      d.action = a;
      d.text = std::string(1, format::action_char(a));
      return d;
    }
  }
  return from_tokens(format::serialize(box, a, cfg.instruction,
                                       {cfg.kinematics.image_size}),
                     cfg);
}

Task conditioning_for(const sim::Scene& scene) {
  // Each leg of a sequence is a tracking episode on the highlighted target.
  return scene.task == Task::kGeneralSeq ? Task::kPP : scene.task;
}

}  // namespace

Decision OracleController::decide(const Observation& obs, const EvalConfig& cfg) const {
  try {
    const Action a = annotate::oracle_action(*obs.scene, obs.target_index, obs.theta,
                                             cfg.kinematics);
    return from_action(a, obs, cfg);
  } catch (const annotate::NoProgressError&) {
    return {};
  }
}

PolicyController::PolicyController(policy::PolicyParams params, std::string label)
    : params_(std::move(params)), label_(std::move(label)) {}

Decision PolicyController::decide(const Observation& obs, const EvalConfig& cfg) const {
  if (!obs.frame) throw PreconditionError("policy controller needs a rendered frame");
  const auto features =
      policy::featurize(*obs.frame, obs.conditioning, cfg.instruction, params_.config.grid);
  return from_tokens(policy::greedy_decode(params_, features).tokens, cfg);
}

std::string ConstantController::name() const {
  return "constant-" + std::string(to_string(action_));
}

Decision ConstantController::decide(const Observation& obs, const EvalConfig& cfg) const {
  return from_action(action_, obs, cfg);
}

Decision RandomController::decide(const Observation& obs, const EvalConfig& cfg) const {
  std::mt19937_64 rng(mix_seed(mix_seed(seed_, obs.scene->seed),
                               static_cast<std::uint64_t>(obs.step)));
  const Action a = kMoveActions[std::uniform_int_distribution<int>(0, 3)(rng)];
  return from_action(a, obs, cfg);
}

Decision MalformedController::decide(const Observation&, const EvalConfig& cfg) const {
  return from_tokens({format::kOpen, format::kEos}, cfg);
}

RolloutMode mode_for(const sim::Scene& scene) {
  switch (scene.task) {
    case Task::kCC: return RolloutMode::kRing;
    case Task::kGeneralSeq: return RolloutMode::kSequence;
    default: return RolloutMode::kSingle;
  }
}

sim::Frame observation_frame(const sim::Scene& scene, const sim::MotorState& theta, int step,
                             int focus_target, const EvalConfig& cfg) {
  sim::NoiseConfig noise = cfg.noise;
  noise.seed = mix_seed(mix_seed(cfg.noise.seed, scene.seed), static_cast<std::uint64_t>(step));
  sim::RenderOptions opts;
  opts.focus_target = focus_target;
  return sim::render(scene, theta, cfg.kinematics, noise, opts);
}

EpisodeResult rollout(const Controller& controller, const sim::Scene& scene, int budget,
                      const EvalConfig& cfg) {
  return rollout(controller, scene, budget, cfg, mode_for(scene));
}

EpisodeResult rollout(const Controller& controller, const sim::Scene& scene, int budget,
                      const EvalConfig& cfg, RolloutMode mode) {
  if (budget < 1) throw PreconditionError("budget must be >= 1");
  scene.validate();
  const auto& kin = cfg.kinematics;
  const double eps = kin.stop_epsilon;
  const double fr = cfg.annotation.fr_radius;

  EpisodeResult ep;
  ep.scene_id = scene.id;
  sim::MotorState theta = scene.initial_theta;

  std::vector<int> order;
  if (mode == RolloutMode::kRing) {
    order = annotate::ring_order(scene, kin);
  } else if (mode == RolloutMode::kSequence) {
    order.resize(scene.targets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    ep.items_done.assign(order.size(), false);
  } else {
    order = {0};
  }
  std::size_t k = 0;

  // Advances past every target already satisfied at the current pose.
  auto advance = [&] {
    while (k < order.size()) {
      const double d = distance_to_center(scene, order[k], theta, kin);
      if (mode == RolloutMode::kRing && d < fr) {
        ep.visited.push_back(order[k]);
      } else if (mode == RolloutMode::kSequence && d <= eps) {
        ep.items_done[k] = true;
      } else {
        break;
      }
      ++k;
    }
  };

  ep.initial_distance = distance_to_center(scene, order[0], theta, kin);
  ep.min_distance = ep.initial_distance;
  ep.final_distance = ep.initial_distance;
  if (mode != RolloutMode::kSingle) advance();
  const Task conditioning = conditioning_for(scene);

  for (int step = 0; step < budget && k < order.size(); ++step) {
    const int target = order[k];
    TraceStep rec;
    rec.step = step;
    rec.theta = theta;
    rec.target_index = target;
    rec.distance = distance_to_center(scene, target, theta, kin, &rec.position);

    std::optional<sim::Frame> frame;
    if (controller.needs_frame()) {
      frame = observation_frame(scene, theta, step,
                                mode == RolloutMode::kSequence ? target : -1, cfg);
    }
    const Observation obs{&scene, theta, target, conditioning, step, frame ? &*frame : nullptr};
    const Decision decision = controller.decide(obs, cfg);
    rec.action = decision.action;
    rec.text = decision.text;
    if (!decision.tokens.empty()) {
      if (const auto gt = sim::target_bbox(scene, target, theta, kin)) {
        const Action label = annotate::quadrant_label(*gt, cfg.annotation);
        rec.reward = rewards::total_reward(decision.tokens, {cfg.instruction, *gt, label}, {},
                                           {kin.image_size});
      }
    }
    ep.trace.push_back(rec);
    ++ep.steps_taken;

    if (!decision.action) continue;
    if (*decision.action == Action::kStop) {
      ep.stop_issued = true;
      break;
    }
    theta = sim::apply_action(theta, *decision.action, kin).theta;
    const double d = distance_to_center(scene, target, theta, kin);
    ep.final_distance = d;
    ep.min_distance = std::min(ep.min_distance, d);
    if (mode == RolloutMode::kSingle) {
      if (d <= eps) break;
    } else {
      advance();
    }
  }
  if (mode != RolloutMode::kSingle && k < order.size()) {
    ep.final_distance = distance_to_center(scene, order[k], theta, kin);
    ep.min_distance = std::min(ep.min_distance, ep.final_distance);
  }
  ep.reached_fr = mode == RolloutMode::kRing ? ep.visited.size() == order.size()
                                             : ep.min_distance <= eps;
  if (mode == RolloutMode::kSequence) {
    ep.reached_fr = std::all_of(ep.items_done.begin(), ep.items_done.end(),
                                [](bool b) { return b; });
  }
  return ep;
}

std::vector<sim::Scene> eval_scenes(Task task, int n, const EvalConfig& cfg) {
  std::vector<sim::Scene> scenes;
  for (int i = 0; i < n; ++i) {
    const auto seed = mix_seed(cfg.seed, (static_cast<std::uint64_t>(task) << 32) |
                                             static_cast<std::uint64_t>(i));
    scenes.push_back(sim::make_scene(task, seed, cfg.kinematics, cfg.scene_gen));
  }
  return scenes;
}

std::vector<sim::Scene> generalization_scenes(sim::SequenceSuite suite, int n,
                                              const EvalConfig& cfg) {
  std::vector<sim::Scene> scenes;
  for (int i = 0; i < n; ++i) {
    const auto seed = mix_seed(cfg.seed, (0x100ULL + static_cast<std::uint64_t>(suite)) << 32 |
                                             static_cast<std::uint64_t>(i));
    scenes.push_back(sim::make_sequence_scene(suite, seed, cfg.kinematics));
  }
  return scenes;
}

EvalReport evaluate(const Controller& controller, const std::vector<sim::Scene>& scenes,
                    const std::string& suite, int budget, const EvalConfig& cfg) {
  EvalReport r;
  r.suite = suite;
  r.controller = controller.name();
  r.trials = static_cast<int>(scenes.size());
  r.budget = budget;
  r.config_hash = cfg.config_hash;
  r.episodes = parallel_map(scenes.size(), cfg.jobs, [&](std::size_t i) {
    return rollout(controller, scenes[i], budget, cfg);
  });
  if (scenes.empty()) return r;
  const double n = static_cast<double>(scenes.size());
  std::size_t items = 0;
  for (const auto& ep : r.episodes) items = std::max(items, ep.items_done.size());
  r.per_item_sr.assign(items, 0.0);
  for (std::size_t e = 0; e < r.episodes.size(); ++e) {
    const auto& ep = r.episodes[e];
    if (ep.final_distance < ep.initial_distance) r.sr_c += 1.0;
    if (ep.min_distance <= cfg.kinematics.stop_epsilon) r.sr_r += 1.0;
    const auto mode = mode_for(scenes[e]);
    if (mode == RolloutMode::kRing) {
      r.cr += static_cast<double>(ep.visited.size()) /
              static_cast<double>(scenes[e].targets.size());
    }
    if (mode != RolloutMode::kSingle && ep.reached_fr) r.sr += 1.0;
    for (std::size_t i = 0; i < ep.items_done.size(); ++i) {
      if (ep.items_done[i]) r.per_item_sr[i] += 1.0;
    }
  }
  r.sr_c /= n;
  r.sr_r /= n;
  r.cr /= n;
  r.sr /= n;
  for (double& x : r.per_item_sr) x /= n;
  return r;
}

EvalReport eval_pp_ar(const Controller& controller, Task task, const EvalConfig& cfg) {
  if (task != Task::kPP && task != Task::kAR) throw PreconditionError("eval_pp_ar takes PP or AR");
  return evaluate(controller, eval_scenes(task, cfg.pp_trials, cfg),
                  std::string(to_string(task)), cfg.pp_budget, cfg);
}

EvalReport eval_cc(const Controller& controller, const EvalConfig& cfg) {
  return evaluate(controller, eval_scenes(Task::kCC, cfg.cc_trials, cfg), "CC", cfg.cc_budget,
                  cfg);
}

EvalReport eval_generalization(const Controller& controller, sim::SequenceSuite suite,
                               const EvalConfig& cfg) {
  auto r = evaluate(controller, generalization_scenes(suite, cfg.gen_trials, cfg),
                    std::string(sim::to_string(suite)), cfg.gen_budget, cfg);
  if (suite == sim::SequenceSuite::kHole) r.sr = r.sr_r;
  return r;
}

// Serialization ---------------------------------------------------------------

namespace {

json reward_json(const rewards::RewardBreakdown& b) {
  return {{"iou", b.r_iou}, {"ma", b.r_ma}, {"format", b.r_format}, {"total", b.total}};
}

json episode_to_json(const EpisodeResult& ep) {
  json trace = json::array();
  for (const auto& s : ep.trace) {
    trace.push_back({{"step", s.step},
                     {"theta", {s.theta.theta1, s.theta.theta2}},
                     {"target", s.target_index},
                     {"position", {s.position.u, s.position.v}},
                     {"distance", s.distance},
                     {"action", s.action ? json(to_string(*s.action)) : json(nullptr)},
                     {"text", s.text},
                     {"reward", s.reward ? reward_json(*s.reward) : json(nullptr)}});
  }
  return {{"scene_id", ep.scene_id},
          {"steps_taken", ep.steps_taken},
          {"initial_distance", ep.initial_distance},
          {"final_distance", ep.final_distance},
          {"min_distance", ep.min_distance},
          {"reached_fr", ep.reached_fr},
          {"stop_issued", ep.stop_issued},
          {"visited", ep.visited},
          {"items_done", ep.items_done},
          {"trace", trace}};
}

}  // namespace

std::string episode_json(const EpisodeResult& episode) {
  return episode_to_json(episode).dump(2);
}

std::string report_json(const EvalReport& r, bool include_traces) {
  json j = {{"suite", r.suite},           {"controller", r.controller},
            {"trials", r.trials},         {"budget", r.budget},
            {"SR_c", r.sr_c},             {"SR_r", r.sr_r},
            {"config_hash", r.config_hash}};
  if (r.suite == "CC") {
    j["CR"] = r.cr;
    j["SR"] = r.sr;
  } else if (!r.per_item_sr.empty() || r.suite == "HOLE_ANALOG") {
    j["SR"] = r.sr;
    j["per_item_SR"] = r.per_item_sr;
  }
  json eps = json::array();
  for (const auto& ep : r.episodes) {
    if (include_traces) {
      eps.push_back(episode_to_json(ep));
    } else {
      eps.push_back({{"scene_id", ep.scene_id},
                     {"steps_taken", ep.steps_taken},
                     {"initial_distance", ep.initial_distance},
                     {"final_distance", ep.final_distance},
                     {"min_distance", ep.min_distance},
                     {"reached_fr", ep.reached_fr},
                     {"stop_issued", ep.stop_issued},
                     {"visited", ep.visited}});
    }
  }
  j["episodes"] = eps;
  return j.dump(2);
}

std::string report_table(const std::vector<EvalReport>& reports) {
  auto pct = [](double x) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%6.1f", 100.0 * x);
    return std::string(buf);
  };
  std::string out = "suite             controller        trials budget   SR_c   SR_r     CR     SR  per-item\n";
  for (const auto& r : reports) {
    char head[96];
    std::snprintf(head, sizeof(head), "%-17s %-17s %6d %6d ", r.suite.c_str(),
                  r.controller.c_str(), r.trials, r.budget);
    out += head;
    out += r.suite == "CC" ? std::string("     -      - ") : pct(r.sr_c) + " " + pct(r.sr_r) + " ";
    const bool has_loop = r.suite == "CC" || !r.per_item_sr.empty() || r.suite == "HOLE_ANALOG";
    out += (r.suite == "CC" ? pct(r.cr) : std::string("     -")) + " ";
    out += has_loop ? pct(r.sr) : std::string("     -");
    if (!r.per_item_sr.empty()) {
      out += " ";
      for (std::size_t i = 0; i < r.per_item_sr.size(); ++i) {
        out += (i ? "/" : "") + pct(r.per_item_sr[i]).substr(pct(r.per_item_sr[i]).find_first_not_of(' '));
      }
    }
    out += "\n";
  }
  return out;
}

}  // namespace endotrack::eval
