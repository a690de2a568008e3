#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "endotrack/config.hpp"
#include "endotrack/eval.hpp"

namespace endotrack::cli {

/// Bad invocation or inconsistent inputs; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GenDataSummary {
  std::size_t train = 0;
  std::size_t eval = 0;
  std::size_t skipped = 0;
  int curated_out = 0;
};

/// Writes scenes.json, train.jsonl, eval.jsonl, stats.txt and manifest.json
/// into out_dir.
GenDataSummary cmd_gen_data(const config::RunConfig& cfg, const std::string& out_dir, int jobs);

struct SftSummary {
  std::int64_t steps = 0;
  double first_nll = 0.0;
  double last_nll = 0.0;
};

/// Trains from a fresh init, or continues `resume` when given. Writes the
/// checkpoint to out and the JSONL log next to it (out + ".log.jsonl").
SftSummary cmd_sft(const config::RunConfig& cfg, const std::string& dataset_dir,
                   const std::string& out, int jobs,
                   const std::optional<std::string>& resume = std::nullopt);

struct GrpoSummary {
  int steps = 0;
  double first_reward = 0.0;
  double last_reward = 0.0;
};

GrpoSummary cmd_grpo(const config::RunConfig& cfg, const std::string& checkpoint,
                     const std::string& out, int jobs, bool allow_cold_start,
                     std::optional<int> steps = std::nullopt);

/// "oracle", "random", "stop" or a checkpoint path. A checkpoint whose config
/// hash differs from cfg is refused unless allow_hash_mismatch is set.
std::unique_ptr<eval::Controller> make_controller(const std::string& spec,
                                                  const config::RunConfig& cfg,
                                                  bool allow_hash_mismatch);

/// suite: PP, AR, CC, SEQ_CHARS, SEQ_FRUIT_ANALOG, HOLE_ANALOG or all. Writes
/// report_<suite>.json per suite plus report.txt into out_dir.
std::vector<eval::EvalReport> cmd_eval(const config::RunConfig& cfg, const std::string& controller,
                                       const std::string& suite, const std::string& out_dir,
                                       int jobs, bool allow_hash_mismatch = false);

/// Writes trace.json (and frame_NNN.pgm files when dump_frames) into out_dir.
eval::EpisodeResult cmd_rollout(const config::RunConfig& cfg, const std::string& controller,
                                const std::string& scene_file, const std::string& out_dir,
                                bool dump_frames, bool allow_hash_mismatch = false);

/// Parses argv and runs a subcommand; returns the process exit code.
int run(int argc, char** argv);

}  // namespace endotrack::cli
