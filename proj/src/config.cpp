#include "endotrack/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "endotrack/rng.hpp"

namespace endotrack::config {

using nlohmann::json;

namespace {

json noise_json(const sim::NoiseConfig& n) {
  return {{"pixel_sigma", n.pixel_sigma}, {"bbox_jitter", n.bbox_jitter}, {"dropout", n.dropout}};
}

sim::NoiseConfig noise_from(const json& j) {
  return {j.at("pixel_sigma").get<double>(), j.at("bbox_jitter").get<double>(),
          j.at("dropout").get<double>(), 0};
}

std::string_view norm_name(trainer::AdvantageNorm n) {
  return n == trainer::AdvantageNorm::kMean ? "MEAN" : "MEAN_STD";
}

std::string_view ref_name(trainer::KlReference r) {
  return r == trainer::KlReference::kSft ? "sft" : "snapshot";
}

bool compatible(const json& base, const json& patch) {
  if (base.is_number_float()) return patch.is_number();
  if (base.is_number_unsigned()) return patch.is_number_unsigned();
  if (base.is_number_integer()) return patch.is_number_integer();
  if (base.is_boolean()) return patch.is_boolean();
  if (base.is_string()) return patch.is_string();
  if (base.is_array()) return patch.is_array();
  return false;
}

void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError(path + ": expected an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key: " + key);
    json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else if (!compatible(slot, it.value())) {
      throw ConfigError("wrong type for config key " + key);
    } else {
      slot = it.value();
    }
  }
}

template <typename T>
T enum_from(const json& j, const char* key, T a, std::string_view a_name, T b,
            std::string_view b_name) {
  const auto s = j.at(key).get<std::string>();
  if (s == a_name) return a;
  if (s == b_name) return b;
  throw ConfigError(std::string("invalid value for ") + key + ": " + s);
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& k = c.kinematics;
  const auto& g = c.grpo.trainer;
  return {
      {"seed", c.seed},
      {"kinematics",
       {{"bend_gain", k.bend_gain},
        {"delta_theta", k.delta_theta},
        {"focal", k.focal},
        {"image_size", k.image_size},
        {"stop_epsilon", k.stop_epsilon},
        {"theta_max", k.theta_max},
        {"view_margin", k.view_margin}}},
      {"annotation", {{"fr_radius", c.annotation.fr_radius}}},
      {"scene_gen",
       {{"cc_markers", c.scene_gen.cc_markers},
        {"cc_ring_min", c.scene_gen.cc_ring_min},
        {"cc_ring_max", c.scene_gen.cc_ring_max},
        {"max_bearing", c.scene_gen.max_bearing},
        {"min_start_distance", c.scene_gen.min_start_distance},
        {"max_distractors", c.scene_gen.max_distractors}}},
      {"dataset",
       {{"pp_scenes", c.dataset.pp_scenes},
        {"ar_scenes", c.dataset.ar_scenes},
        {"cc_scenes", c.dataset.cc_scenes},
        {"split_frac", c.dataset.split_frac},
        {"episode_budget", c.dataset.episode_budget},
        {"cc_episode_budget", c.dataset.cc_episode_budget},
        {"curate", c.dataset.curate},
        {"noise", noise_json(c.dataset.noise)}}},
      {"policy",
       {{"grid", c.policy.grid},
        {"embed", c.policy.embed},
        {"hidden", c.policy.hidden},
        {"max_len", c.policy.max_len},
        {"init_scale", c.policy.init_scale},
        {"feature_center", c.policy.feature_center}}},
      {"sft",
       {{"learning_rate", c.sft.learning_rate},
        {"linear_decay", c.sft.linear_decay},
        {"batch_size", c.sft.batch_size},
        {"epochs", c.sft.epochs},
        {"weight_decay", c.sft.adam.weight_decay}}},
      {"grpo",
       {{"learning_rate", g.learning_rate},
        {"batch_size", g.batch_size},
        {"group_size", g.group_size},
        {"clip_epsilon", g.clip_epsilon},
        {"kl_coeff", g.kl_coeff},
        {"group_weights", g.group_weights},
        {"advantage_norm", norm_name(g.advantage_norm)},
        {"inner_steps", g.inner_steps},
        {"temperature", g.temperature},
        {"kl_reference", ref_name(g.kl_reference)},
        {"weight_iou", g.reward_weights.iou},
        {"weight_ma", g.reward_weights.ma},
        {"weight_format", g.reward_weights.format},
        {"steps", c.grpo.steps},
        {"prompt_scenes", c.grpo.prompt_scenes},
        {"cc_prompt_scenes", c.grpo.cc_prompt_scenes}}},
      {"eval",
       {{"instruction", to_string(c.eval.instruction)},
        {"pp_trials", c.eval.pp_trials},
        {"pp_budget", c.eval.pp_budget},
        {"cc_trials", c.eval.cc_trials},
        {"cc_budget", c.eval.cc_budget},
        {"gen_trials", c.eval.gen_trials},
        {"gen_budget", c.eval.gen_budget},
        {"noise", noise_json(c.eval.noise)}}},
  };
}

RunConfig from_json(const json& patch) {
  json j = to_json(RunConfig{});
  overlay(j, patch, "");
  RunConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    const auto& k = j.at("kinematics");
    c.kinematics.bend_gain = k.at("bend_gain").get<double>();
    c.kinematics.delta_theta = k.at("delta_theta").get<double>();
    c.kinematics.focal = k.at("focal").get<double>();
    c.kinematics.image_size = k.at("image_size").get<int>();
    c.kinematics.center = {c.kinematics.image_size / 2.0, c.kinematics.image_size / 2.0};
    c.kinematics.stop_epsilon = k.at("stop_epsilon").get<double>();
    c.kinematics.theta_max = k.at("theta_max").get<double>();
    c.kinematics.view_margin = k.at("view_margin").get<double>();
    c.annotation.fr_radius = j.at("annotation").at("fr_radius").get<double>();
    c.annotation.image_center = c.kinematics.center;

    const auto& s = j.at("scene_gen");
    c.scene_gen.cc_markers = s.at("cc_markers").get<int>();
    c.scene_gen.cc_ring_min = s.at("cc_ring_min").get<double>();
    c.scene_gen.cc_ring_max = s.at("cc_ring_max").get<double>();
    c.scene_gen.max_bearing = s.at("max_bearing").get<double>();
    c.scene_gen.min_start_distance = s.at("min_start_distance").get<double>();
    c.scene_gen.max_distractors = s.at("max_distractors").get<int>();

    const auto& d = j.at("dataset");
    c.dataset.pp_scenes = d.at("pp_scenes").get<int>();
    c.dataset.ar_scenes = d.at("ar_scenes").get<int>();
    c.dataset.cc_scenes = d.at("cc_scenes").get<int>();
    c.dataset.split_frac = d.at("split_frac").get<double>();
    c.dataset.episode_budget = d.at("episode_budget").get<int>();
    c.dataset.cc_episode_budget = d.at("cc_episode_budget").get<int>();
    c.dataset.curate = d.at("curate").get<bool>();
    c.dataset.noise = noise_from(d.at("noise"));

    const auto& p = j.at("policy");
    c.policy.grid = p.at("grid").get<int>();
    c.policy.embed = p.at("embed").get<int>();
    c.policy.hidden = p.at("hidden").get<int>();
    c.policy.max_len = p.at("max_len").get<int>();
    c.policy.init_scale = p.at("init_scale").get<double>();
    c.policy.feature_center = p.at("feature_center").get<double>();

    const auto& f = j.at("sft");
    c.sft.learning_rate = f.at("learning_rate").get<double>();
    c.sft.linear_decay = f.at("linear_decay").get<bool>();
    c.sft.batch_size = f.at("batch_size").get<int>();
    c.sft.epochs = f.at("epochs").get<double>();
    c.sft.adam.weight_decay = f.at("weight_decay").get<double>();

    const auto& g = j.at("grpo");
    auto& gt = c.grpo.trainer;
    gt.learning_rate = g.at("learning_rate").get<double>();
    gt.batch_size = g.at("batch_size").get<int>();
    gt.group_size = g.at("group_size").get<int>();
    gt.clip_epsilon = g.at("clip_epsilon").get<double>();
    gt.kl_coeff = g.at("kl_coeff").get<double>();
    gt.group_weights = g.at("group_weights").get<std::vector<double>>();
    gt.advantage_norm = enum_from(g, "advantage_norm", trainer::AdvantageNorm::kMean, "MEAN",
                                  trainer::AdvantageNorm::kMeanStd, "MEAN_STD");
    gt.inner_steps = g.at("inner_steps").get<int>();
    gt.temperature = g.at("temperature").get<double>();
    gt.kl_reference = enum_from(g, "kl_reference", trainer::KlReference::kSnapshot, "snapshot",
                                trainer::KlReference::kSft, "sft");
    gt.reward_weights = {g.at("weight_iou").get<double>(), g.at("weight_ma").get<double>(),
                         g.at("weight_format").get<double>()};
    c.grpo.steps = g.at("steps").get<int>();
    c.grpo.prompt_scenes = g.at("prompt_scenes").get<int>();
    c.grpo.cc_prompt_scenes = g.at("cc_prompt_scenes").get<int>();

    const auto& e = j.at("eval");
    const auto instr = instruction_from_string(e.at("instruction").get<std::string>());
    if (!instr) throw ConfigError("eval.instruction must be I_a or I_b");
    c.eval.instruction = *instr;
    c.eval.pp_trials = e.at("pp_trials").get<int>();
    c.eval.pp_budget = e.at("pp_budget").get<int>();
    c.eval.cc_trials = e.at("cc_trials").get<int>();
    c.eval.cc_budget = e.at("cc_budget").get<int>();
    c.eval.gen_trials = e.at("gen_trials").get<int>();
    c.eval.gen_budget = e.at("gen_budget").get<int>();
    c.eval.noise = noise_from(e.at("noise"));
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed config: ") + ex.what());
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  try {
    kinematics.validate();
    sft.validate();
    grpo.trainer.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError(e.what());
  }
  if (!(annotation.fr_radius > 0.0)) throw ConfigError("annotation.fr_radius must be > 0");
  if (dataset.pp_scenes < 0 || dataset.ar_scenes < 0 || dataset.cc_scenes < 0) {
    throw ConfigError("dataset scene counts must be >= 0");
  }
  if (!(dataset.split_frac > 0.0 && dataset.split_frac < 1.0)) {
    throw ConfigError("dataset.split_frac must lie in (0, 1)");
  }
  if (dataset.episode_budget < 1 || dataset.cc_episode_budget < 1) {
    throw ConfigError("dataset episode budgets must be >= 1");
  }
  if (policy.grid < 1 || policy.grid > kinematics.image_size || policy.embed < 1 ||
      policy.hidden < 1 || policy.max_len < 1) {
    throw ConfigError("policy dimensions out of range");
  }
  if (grpo.steps < 0 || grpo.prompt_scenes < 0 || grpo.cc_prompt_scenes < 0) throw ConfigError("grpo counts must be >= 0");
  if (eval.pp_trials < 0 || eval.cc_trials < 0 || eval.gen_trials < 0 || eval.pp_budget < 1 ||
      eval.cc_budget < 1 || eval.gen_budget < 1) {
    throw ConfigError("eval trials must be >= 0 and budgets >= 1");
  }
  if (scene_gen.cc_markers < 3) throw ConfigError("scene_gen.cc_markers must be >= 3");
}

RunConfig load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& cfg) { return fnv1a_hex(to_json(cfg).dump()); }

std::uint64_t derived_seed(const RunConfig& cfg, SeedStream stream) {
  return mix_seed(cfg.seed, static_cast<std::uint64_t>(stream));
}

namespace {

void append_scenes(std::vector<sim::Scene>& out, Task task, int n, std::uint64_t root,
                   const RunConfig& cfg) {
  for (int i = 0; i < n; ++i) {
    const auto seed =
        mix_seed(root, (static_cast<std::uint64_t>(task) << 32) | static_cast<std::uint64_t>(i));
    out.push_back(sim::make_scene(task, seed, cfg.kinematics, cfg.scene_gen));
  }
}

}  // namespace

std::vector<sim::Scene> dataset_scenes(const RunConfig& cfg) {
  const auto root = derived_seed(cfg, SeedStream::kDatasetScenes);
  std::vector<sim::Scene> scenes;
  append_scenes(scenes, Task::kPP, cfg.dataset.pp_scenes, root, cfg);
  append_scenes(scenes, Task::kAR, cfg.dataset.ar_scenes, root, cfg);
  append_scenes(scenes, Task::kCC, cfg.dataset.cc_scenes, root, cfg);
  return scenes;
}

std::vector<sim::Scene> grpo_scenes(const RunConfig& cfg) {
  const auto root = derived_seed(cfg, SeedStream::kGrpoScenes);
  std::vector<sim::Scene> scenes;
  append_scenes(scenes, Task::kPP, cfg.grpo.prompt_scenes, root, cfg);
  append_scenes(scenes, Task::kAR, cfg.grpo.prompt_scenes, root, cfg);
  append_scenes(scenes, Task::kCC, cfg.grpo.cc_prompt_scenes, root, cfg);
  return scenes;
}

annotate::DatasetOptions dataset_options(const RunConfig& cfg, int jobs) {
  annotate::DatasetOptions o;
  o.noise = cfg.dataset.noise;
  o.noise.seed = derived_seed(cfg, SeedStream::kDatasetNoise);
  o.split_seed = derived_seed(cfg, SeedStream::kSplit);
  o.cc_episode_budget = cfg.dataset.cc_episode_budget;
  o.curate = cfg.dataset.curate;
  o.jobs = jobs;
  return o;
}

trainer::SftConfig sft_config(const RunConfig& cfg) {
  auto s = cfg.sft;
  s.seed = derived_seed(cfg, SeedStream::kSftShuffle);
  return s;
}

trainer::GrpoConfig grpo_config(const RunConfig& cfg, int jobs) {
  auto g = cfg.grpo.trainer;
  g.seed = derived_seed(cfg, SeedStream::kGrpo);
  g.jobs = jobs;
  return g;
}

eval::EvalConfig eval_config(const RunConfig& cfg, int jobs) {
  eval::EvalConfig e;
  e.kinematics = cfg.kinematics;
  e.annotation = cfg.annotation;
  e.scene_gen = cfg.scene_gen;
  e.noise = cfg.eval.noise;
  e.noise.seed = derived_seed(cfg, SeedStream::kEvalNoise);
  e.seed = derived_seed(cfg, SeedStream::kEvalScenes);
  e.instruction = cfg.eval.instruction;
  e.jobs = jobs;
  e.pp_trials = cfg.eval.pp_trials;
  e.pp_budget = cfg.eval.pp_budget;
  e.cc_trials = cfg.eval.cc_trials;
  e.cc_budget = cfg.eval.cc_budget;
  e.gen_trials = cfg.eval.gen_trials;
  e.gen_budget = cfg.eval.gen_budget;
  e.config_hash = config_hash(cfg);
  return e;
}

}  // namespace endotrack::config
