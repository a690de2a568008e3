#include "endotrack/commands.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>

#include "endotrack/io.hpp"
#include "endotrack/policy.hpp"
#include "endotrack/trainer.hpp"

namespace endotrack::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create directory " + dir + ": " + ec.message());
}

void ensure_parent(const std::string& file) {
  const auto parent = fs::path(file).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

void check_hash(const std::string& what, const std::string& found, const std::string& expected) {
  if (!found.empty() && found != expected) {
    spdlog::warn("{} was produced under config {} but the current config is {}", what, found,
                 expected);
  }
}

policy::Checkpoint load_for(const config::RunConfig& cfg, const std::string& path) {
  try {
    return policy::load_checkpoint(path, cfg.policy);
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    if (msg.find("dimensions") != std::string::npos) throw UsageError(path + ": " + msg);
    throw;
  }
}

}  // namespace

GenDataSummary cmd_gen_data(const config::RunConfig& cfg, const std::string& out_dir, int jobs) {
  ensure_dir(out_dir);
  const auto hash = config::config_hash(cfg);
  const auto scenes = config::dataset_scenes(cfg);
  const auto opts = config::dataset_options(cfg, jobs);
  const auto bundle = annotate::generate_dataset(scenes, cfg.kinematics, cfg.annotation,
                                                 cfg.dataset.episode_budget,
                                                 cfg.dataset.split_frac, opts);

  io::write_text(join(out_dir, "config.json"), config::to_json(cfg).dump(2) + "\n");
  io::write_scenes(join(out_dir, "scenes.json"), scenes, hash);
  io::write_samples(join(out_dir, "train.jsonl"), bundle.train, hash);
  io::write_samples(join(out_dir, "eval.jsonl"), bundle.eval, hash);
  io::write_text(join(out_dir, "stats.txt"), annotate::stats_table(bundle.stats));

  json manifest = {
      {"schema", io::kSchemaVersion},
      {"config_hash", hash},
      {"seed", cfg.seed},
      {"seeds",
       {{"scenes", config::derived_seed(cfg, config::SeedStream::kDatasetScenes)},
        {"split", opts.split_seed},
        {"noise", opts.noise.seed}}},
      {"scenes", scenes.size()},
      {"train_samples", bundle.train.size()},
      {"eval_samples", bundle.eval.size()},
      {"train_frames", bundle.train_annotations.size()},
      {"eval_frames", bundle.eval_annotations.size()},
      {"skipped_scenes", bundle.skipped_scenes},
      {"curated_out", bundle.curated_out},
      {"files", {"config.json", "scenes.json", "train.jsonl", "eval.jsonl", "stats.txt"}}};
  io::write_text(join(out_dir, "manifest.json"), manifest.dump(2) + "\n");
  spdlog::info("dataset: {} train / {} eval samples, {} scenes skipped, {} frames curated out",
               bundle.train.size(), bundle.eval.size(), bundle.skipped_scenes.size(),
               bundle.curated_out);
  return {bundle.train.size(), bundle.eval.size(), bundle.skipped_scenes.size(),
          bundle.curated_out};
}

SftSummary cmd_sft(const config::RunConfig& cfg, const std::string& dataset_dir,
                   const std::string& out, int jobs, const std::optional<std::string>& resume) {
  const auto hash = config::config_hash(cfg);
  std::string data_hash;
  const auto scenes = io::read_scenes(join(dataset_dir, "scenes.json"), &data_hash);
  check_hash("dataset " + dataset_dir, data_hash, hash);
  const auto samples = io::read_samples(join(dataset_dir, "train.jsonl"));
  if (samples.empty()) throw UsageError("dataset " + dataset_dir + " has no training samples");
  const auto examples = trainer::make_examples(samples, scenes, cfg.kinematics,
                                               cfg.dataset.noise, cfg.policy.grid, jobs);

  policy::Checkpoint start;
  if (resume) {
    start = load_for(cfg, *resume);
    check_hash("checkpoint " + *resume, start.config_hash, hash);
  } else {
    start.params = policy::init_params(cfg.policy, config::derived_seed(cfg, config::SeedStream::kInit));
  }
  const auto result = trainer::sft_train(start.params, examples, config::sft_config(cfg), start.step);

  policy::Checkpoint ckpt{result.params, result.log.empty() ? start.tag : "sft", hash,
                          result.steps};
  ensure_parent(out);
  policy::save_checkpoint(ckpt, out);

  std::string log = json{{"phase", "header"},
                         {"config_hash", hash},
                         {"dataset_config_hash", data_hash},
                         {"samples", examples.size()},
                         {"start_step", start.step}}
                        .dump() +
                    "\n";
  for (const auto& r : result.log) {
    log += json{{"phase", "sft"}, {"step", r.step}, {"lr", r.lr}, {"nll", r.mean_nll}}.dump() +
           "\n";
  }
  io::write_text(out + ".log.jsonl", log);

  SftSummary s;
  s.steps = result.steps;
  if (!result.log.empty()) {
    s.first_nll = result.log.front().mean_nll;
    s.last_nll = result.log.back().mean_nll;
    spdlog::info("sft: {} steps, nll {:.4f} -> {:.4f}", result.log.size(), s.first_nll,
                 s.last_nll);
  }
  return s;
}

GrpoSummary cmd_grpo(const config::RunConfig& cfg, const std::string& checkpoint,
                     const std::string& out, int jobs, bool allow_cold_start,
                     std::optional<int> steps) {
  const auto hash = config::config_hash(cfg);
  auto gcfg = config::grpo_config(cfg, jobs);
  gcfg.allow_cold_start = gcfg.allow_cold_start || allow_cold_start;
  const auto in = load_for(cfg, checkpoint);
  try {
    trainer::require_sft(in, gcfg);
  } catch (const PreconditionError& e) {
    throw UsageError(e.what());
  }
  check_hash("checkpoint " + checkpoint, in.config_hash, hash);
  const int n_steps = steps.value_or(cfg.grpo.steps);
  if (n_steps < 0) throw UsageError("--steps must be >= 0");
  ensure_parent(out);

  std::string log = json{{"phase", "header"}, {"config_hash", hash},
                         {"group_size", gcfg.group_size}, {"steps", n_steps},
                         {"input_tag", in.tag}}
                        .dump() +
                    "\n";
  GrpoSummary summary;
  if (n_steps == 0) {
    policy::save_checkpoint(in, out);
    io::write_text(out + ".log.jsonl", log);
    return summary;
  }

  const auto scenes = config::grpo_scenes(cfg);
  auto opts = config::dataset_options(cfg, jobs);
  const auto prompts = trainer::prompts_from_scenes(scenes, cfg.kinematics, cfg.annotation, opts,
                                                    cfg.dataset.episode_budget, cfg.policy.grid);
  const auto result = trainer::grpo_train(in.params, prompts, gcfg, n_steps);
  policy::save_checkpoint({result.params, "dft", hash, in.step + n_steps}, out);

  for (const auto& m : result.log) {
    log += json{{"phase", "grpo"},
                {"step", m.step},
                {"mean_reward", m.mean_reward},
                {"reward_iou", m.mean_iou},
                {"reward_ma", m.mean_ma},
                {"reward_format", m.mean_format},
                {"format_rate", m.format_rate},
                {"kl", m.kl},
                {"clip_fraction", m.clip_fraction},
                {"clamped", m.clamped},
                {"group_size", m.group_size}}
               .dump() +
           "\n";
  }
  io::write_text(out + ".log.jsonl", log);
  summary.steps = n_steps;
  summary.first_reward = result.log.front().mean_reward;
  summary.last_reward = result.log.back().mean_reward;
  spdlog::info("grpo: {} steps, mean reward {:.4f} -> {:.4f}", n_steps, summary.first_reward,
               summary.last_reward);
  return summary;
}

std::unique_ptr<eval::Controller> make_controller(const std::string& spec,
                                                  const config::RunConfig& cfg,
                                                  bool allow_hash_mismatch) {
  if (spec == "oracle") return std::make_unique<eval::OracleController>();
  if (spec == "random") {
    return std::make_unique<eval::RandomController>(
        config::derived_seed(cfg, config::SeedStream::kEvalScenes));
  }
  if (spec == "stop") return std::make_unique<eval::ConstantController>(Action::kStop);
  if (!fs::exists(spec)) throw UsageError("no such controller or checkpoint: " + spec);
  auto ckpt = load_for(cfg, spec);
  const auto hash = config::config_hash(cfg);
  if (ckpt.config_hash != hash) {
    if (!allow_hash_mismatch) {
      throw UsageError("checkpoint " + spec + " was trained under config " + ckpt.config_hash +
                       ", current config is " + hash + " (pass --allow-hash-mismatch)");
    }
    spdlog::warn("checkpoint {} config hash {} differs from {}; proceeding", spec,
                 ckpt.config_hash, hash);
  }
  return std::make_unique<eval::PolicyController>(std::move(ckpt.params), ckpt.tag);
}

std::vector<eval::EvalReport> cmd_eval(const config::RunConfig& cfg, const std::string& controller,
                                       const std::string& suite, const std::string& out_dir,
                                       int jobs, bool allow_hash_mismatch) {
  const auto ctrl = make_controller(controller, cfg, allow_hash_mismatch);
  const auto ecfg = config::eval_config(cfg, jobs);
  std::vector<std::string> suites;
  if (suite == "all") {
    suites = {"PP", "AR", "CC", "SEQ_CHARS", "SEQ_FRUIT_ANALOG", "HOLE_ANALOG"};
  } else {
    suites = {suite};
  }
  std::vector<eval::EvalReport> reports;
  for (const auto& s : suites) {
    if (s == "PP" || s == "AR") {
      reports.push_back(eval::eval_pp_ar(*ctrl, *task_from_string(s), ecfg));
    } else if (s == "CC") {
      reports.push_back(eval::eval_cc(*ctrl, ecfg));
    } else if (const auto gs = sim::suite_from_string(s)) {
      reports.push_back(eval::eval_generalization(*ctrl, *gs, ecfg));
    } else {
      throw UsageError("unknown suite: " + s);
    }
  }
  ensure_dir(out_dir);
  for (const auto& r : reports) {
    io::write_text(join(out_dir, "report_" + r.suite + ".json"), eval::report_json(r) + "\n");
  }
  const auto table = eval::report_table(reports);
  io::write_text(join(out_dir, "report.txt"), table);
  std::fputs(table.c_str(), stdout);
  return reports;
}

eval::EpisodeResult cmd_rollout(const config::RunConfig& cfg, const std::string& controller,
                                const std::string& scene_file, const std::string& out_dir,
                                bool dump_frames, bool allow_hash_mismatch) {
  const auto ctrl = make_controller(controller, cfg, allow_hash_mismatch);
  const auto scene = io::read_scene(scene_file);
  const auto ecfg = config::eval_config(cfg, 1);
  const int budget = scene.task == Task::kCC           ? cfg.eval.cc_budget
                     : scene.task == Task::kGeneralSeq ? cfg.eval.gen_budget
                                                       : cfg.eval.pp_budget;
  const auto mode = eval::mode_for(scene);
  const auto ep = eval::rollout(*ctrl, scene, budget, ecfg, mode);
  ensure_dir(out_dir);
  json j = json::parse(eval::episode_json(ep));
  j["config_hash"] = ecfg.config_hash;
  j["controller"] = ctrl->name();
  j["budget"] = budget;
  io::write_text(join(out_dir, "trace.json"), j.dump(2) + "\n");
  if (dump_frames) {
    for (const auto& s : ep.trace) {
      const auto frame = eval::observation_frame(
          scene, s.theta, s.step, mode == eval::RolloutMode::kSequence ? s.target_index : -1,
          ecfg);
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%03d.pgm", s.step);
      sim::write_pgm(frame, join(out_dir, name));
    }
  }
  spdlog::info("rollout {}: {} steps, final distance {:.2f} px", scene.id, ep.steps_taken,
               ep.final_distance);
  return ep;
}

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("endotrack");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("ENDOTRACK_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

}  // namespace

int run(int argc, char** argv) {
  if (!spdlog::get("endotrack")) setup_logging();

  CLI::App app{"endotrack: simulated endoscope tracking, annotation, training and evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  app.add_option("--config", config_path, "run configuration (JSON)");
  app.add_option("--seed", seed, "override the root seed");
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.fallthrough();

  std::string out, dataset, checkpoint, controller = "oracle", suite = "all", scene;
  std::optional<int> steps;
  bool dump_frames = false, allow_cold_start = false, allow_mismatch = false;

  auto* gen = app.add_subcommand("gen-data", "generate the annotated dataset");
  gen->add_option("--out", out, "output directory")->required();

  auto* sft = app.add_subcommand("sft", "supervised fine-tuning");
  sft->add_option("--dataset", dataset, "dataset directory")->required();
  sft->add_option("--out", out, "output checkpoint")->required();
  sft->add_option("--checkpoint", checkpoint, "resume from this checkpoint");

  auto* grpo = app.add_subcommand("grpo", "GRPO reinforcement fine-tuning");
  grpo->add_option("--checkpoint", checkpoint, "SFT checkpoint")->required();
  grpo->add_option("--out", out, "output checkpoint")->required();
  grpo->add_option("--steps", steps, "number of GRPO steps");
  grpo->add_flag("--allow-cold-start", allow_cold_start, "accept a non-SFT checkpoint");

  auto* ev = app.add_subcommand("eval", "closed-loop evaluation");
  ev->add_option("--controller", controller, "oracle | random | stop | checkpoint path");
  ev->add_option("--suite", suite, "PP | AR | CC | SEQ_CHARS | SEQ_FRUIT_ANALOG | HOLE_ANALOG | all");
  ev->add_option("--out", out, "report directory")->required();
  ev->add_flag("--allow-hash-mismatch", allow_mismatch, "evaluate a checkpoint from another config");

  auto* ro = app.add_subcommand("rollout", "single episode with a full trace");
  ro->add_option("--controller", controller, "oracle | random | stop | checkpoint path");
  ro->add_option("--scene", scene, "scene file")->required();
  ro->add_option("--out", out, "trace directory")->required();
  ro->add_flag("--dump-frames", dump_frames, "write the observed frames as PGM");
  ro->add_flag("--allow-hash-mismatch", allow_mismatch, "use a checkpoint from another config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    config::RunConfig cfg = config_path.empty() ? config::RunConfig{} : config::load(config_path);
    if (seed) cfg.seed = *seed;
    cfg.validate();
    if (gen->parsed()) {
      cmd_gen_data(cfg, out, jobs);
    } else if (sft->parsed()) {
      cmd_sft(cfg, dataset, out, jobs,
              checkpoint.empty() ? std::nullopt : std::optional<std::string>(checkpoint));
    } else if (grpo->parsed()) {
      cmd_grpo(cfg, checkpoint, out, jobs, allow_cold_start, steps);
    } else if (ev->parsed()) {
      cmd_eval(cfg, controller, suite, out, jobs, allow_mismatch);
    } else if (ro->parsed()) {
      cmd_rollout(cfg, controller, scene, out, dump_frames, allow_mismatch);
    }
    return 0;
  } catch (const config::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 1;
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const PreconditionError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
}

}  // namespace endotrack::cli
