#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "endotrack/commands.hpp"
#include "endotrack/io.hpp"

using namespace endotrack;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kSmoke = std::string(ENDOTRACK_SOURCE_DIR) + "/configs/smoke.json";

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("endotrack_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ENDOTRACK_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string bytes(const fs::path& p) { return io::read_text(p.string()); }

/// Every regular file under dir, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = bytes(e.path());
  }
  return out;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> rows;
  std::istringstream in(bytes(p));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

config::RunConfig smoke() { return config::load(kSmoke); }

/// Dataset and SFT checkpoint shared by the tests below, built once.
struct Fixture {
  fs::path root = scratch("fixture");
  fs::path data = root / "data";
  fs::path sft = root / "sft.bin";
  Fixture() {
    const auto cfg = smoke();
    cli::cmd_gen_data(cfg, data.string(), 1);
    cli::cmd_sft(cfg, data.string(), sft.string(), 1);
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_CASE("exit codes: success, usage errors and runtime failures") {
  const auto dir = scratch("exit");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("gen-data") == 1);  // --out missing
  std::ofstream(dir / "bad.json") << R"({"kinematics": {"focl": 200}})";
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " gen-data --out " +
                (dir / "x").string()) == 1);
  CHECK(run_cli("--config " + kSmoke + " eval --controller " + (dir / "nothing.bin").string() +
                " --out " + (dir / "e").string()) == 1);
  CHECK(run_cli("--config " + kSmoke + " sft --dataset " + (dir / "nodata").string() +
                " --out " + (dir / "c.bin").string()) == 2);
  CHECK(run_cli("--config " + kSmoke + " eval --suite PP --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "report_PP.json"));
}

TEST_CASE("gen-data is byte-identical across runs and worker counts") {
  const auto cfg = smoke();
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  cli::cmd_gen_data(cfg, a.string(), 1);
  cli::cmd_gen_data(cfg, b.string(), 3);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() == 6);
  CHECK(ta == tb);
  CHECK(json::parse(ta.at("manifest.json"))["config_hash"] == config::config_hash(cfg));
}

TEST_CASE("statistics table has the motion columns and N/A stop counts for CC") {
  const auto stats = bytes(fixture().data / "stats.txt");
  std::istringstream in(stats);
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::vector<std::string> cols;
  for (std::string w; hs >> w;) cols.push_back(w);
  CHECK(cols == std::vector<std::string>{"MA", "[1,1]", "[-1,1]", "[-1,-1]", "[1,-1]", "[0,0]",
                                         "All"});
  int cc_rows = 0;
  for (std::string line; std::getline(in, line);) {
    if (line.find("(CC)") != std::string::npos) {
      ++cc_rows;
      CHECK(line.find("N/A") != std::string::npos);
    } else {
      CHECK(line.find("N/A") == std::string::npos);
    }
  }
  CHECK(cc_rows == 2);
}

TEST_CASE("sft with zero epochs writes the initialization") {
  auto cfg = smoke();
  cfg.sft.epochs = 0.0;
  const auto dir = scratch("sft0");
  cli::cmd_gen_data(cfg, (dir / "data").string(), 1);
  cli::cmd_sft(cfg, (dir / "data").string(), (dir / "c.bin").string(), 1);
  const auto ck = policy::load_checkpoint((dir / "c.bin").string());
  const auto init =
      policy::init_params(cfg.policy, config::derived_seed(cfg, config::SeedStream::kInit));
  CHECK(ck.params.values == init.values);
  CHECK(ck.tag == "init");
  CHECK(ck.step == 0);
}

TEST_CASE("sft log lowers NLL and records the config hash") {
  const auto cfg = smoke();
  const auto rows = read_jsonl(fixture().sft.string() + ".log.jsonl");
  REQUIRE(rows.size() > 8);
  CHECK(rows[0]["config_hash"] == config::config_hash(cfg));
  auto window = [&](std::size_t from) {
    double s = 0.0;
    for (std::size_t i = from; i < from + 4; ++i) s += rows[i]["nll"].get<double>();
    return s / 4.0;
  };
  CHECK(window(rows.size() - 4) < window(1));
  const auto ck = policy::load_checkpoint(fixture().sft.string());
  CHECK(ck.tag == "sft");
  CHECK(ck.config_hash == config::config_hash(cfg));
  CHECK(ck.step == static_cast<std::int64_t>(rows.size() - 1));
}

TEST_CASE("resuming sft continues the step counter") {
  const auto cfg = smoke();
  const auto dir = scratch("resume");
  const auto first = policy::load_checkpoint(fixture().sft.string());
  const auto s = cli::cmd_sft(cfg, fixture().data.string(), (dir / "c2.bin").string(), 1,
                              fixture().sft.string());
  CHECK(s.steps == 2 * first.step);
  const auto rows = read_jsonl(dir / "c2.bin.log.jsonl");
  CHECK(rows[0]["start_step"] == first.step);
  CHECK(rows[1]["step"] == first.step + 1);
}

TEST_CASE("sft records the hash of a dataset produced under another config") {
  auto cfg = smoke();
  cfg.sft.learning_rate *= 2.0;
  const auto dir = scratch("sft_mismatch");
  cli::cmd_sft(cfg, fixture().data.string(), (dir / "c.bin").string(), 1);
  const auto header = read_jsonl(dir / "c.bin.log.jsonl").front();
  CHECK(header["config_hash"] == config::config_hash(cfg));
  CHECK(header["dataset_config_hash"] == config::config_hash(smoke()));
  CHECK(header["dataset_config_hash"] != header["config_hash"]);
}

TEST_CASE("sft refuses a checkpoint whose dimensions differ") {
  auto cfg = smoke();
  cfg.policy.hidden = 12;
  const auto dir = scratch("sft_dims");
  cli::cmd_gen_data(cfg, (dir / "data").string(), 1);
  CHECK_THROWS(cli::cmd_sft(cfg, (dir / "data").string(), (dir / "c.bin").string(), 1,
                            fixture().sft.string()));
}

TEST_CASE("grpo with zero steps copies the input checkpoint") {
  const auto dir = scratch("grpo0");
  const auto out = dir / "d.bin";
  CHECK(run_cli("--config " + kSmoke + " grpo --checkpoint " + fixture().sft.string() +
                " --out " + out.string() + " --steps 0") == 0);
  CHECK(bytes(out) == bytes(fixture().sft));
}

TEST_CASE("grpo logs group size and tags the output") {
  const auto cfg = smoke();
  const auto dir = scratch("grpo");
  const auto out = dir / "d.bin";
  const auto s = cli::cmd_grpo(cfg, fixture().sft.string(), out.string(), 1, false);
  CHECK(s.steps == cfg.grpo.steps);
  const auto rows = read_jsonl(out.string() + ".log.jsonl");
  REQUIRE(rows.size() == static_cast<std::size_t>(cfg.grpo.steps) + 1);
  CHECK(rows[0]["group_size"] == cfg.grpo.trainer.group_size);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i]["group_size"] == cfg.grpo.trainer.group_size);
    CHECK(rows[i].contains("kl"));
    CHECK(rows[i].contains("clip_fraction"));
  }
  const auto ck = policy::load_checkpoint(out.string());
  CHECK(ck.tag == "dft");
  const auto in = policy::load_checkpoint(fixture().sft.string());
  CHECK(ck.step == in.step + cfg.grpo.steps);
}

TEST_CASE("grpo refuses an untrained checkpoint without the cold-start flag") {
  auto cfg = smoke();
  cfg.sft.epochs = 0.0;
  const auto dir = scratch("cold");
  cli::cmd_gen_data(cfg, (dir / "data").string(), 1);
  cli::cmd_sft(cfg, (dir / "data").string(), (dir / "init.bin").string(), 1);
  io::write_text((dir / "cfg.json").string(), config::to_json(cfg).dump());
  const std::string base = "--config " + (dir / "cfg.json").string() + " grpo --checkpoint " +
                           (dir / "init.bin").string() + " --steps 1 --out " +
                           (dir / "d.bin").string();
  CHECK(run_cli(base) == 1);
  CHECK_FALSE(fs::exists(dir / "d.bin"));
  CHECK(run_cli(base + " --allow-cold-start") == 0);
  CHECK(fs::exists(dir / "d.bin"));
}

TEST_CASE("eval is deterministic and CC reports carry CR and SR") {
  const auto cfg = smoke();
  const auto a = scratch("eval_a"), b = scratch("eval_b");
  cli::cmd_eval(cfg, fixture().sft.string(), "all", a.string(), 1);
  cli::cmd_eval(cfg, fixture().sft.string(), "all", b.string(), 2);
  const auto ta = tree(a);
  CHECK(ta.size() == 7);
  CHECK(ta == tree(b));
  const auto cc = json::parse(ta.at("report_CC.json"));
  CHECK(cc.contains("CR"));
  CHECK(cc.contains("SR"));
}

TEST_CASE("oracle eval on PP reaches both success criteria") {
  const auto reports = cli::cmd_eval(smoke(), "oracle", "PP", scratch("eval_oracle").string(), 1);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].sr_c == 1.0);
  CHECK(reports[0].sr_r == 1.0);
}

TEST_CASE("eval refuses a checkpoint from another config unless allowed") {
  const auto dir = scratch("eval_hash");
  const std::string args = "--config " + kSmoke + " --seed 99 eval --suite PP --controller " +
                           fixture().sft.string() + " --out " + (dir / "r").string();
  CHECK(run_cli(args) == 1);
  CHECK(run_cli(args + " --allow-hash-mismatch") == 0);
}

TEST_CASE("rollout of a centered target is a single STOP step") {
  const auto dir = scratch("rollout_center");
  sim::Scene scene;
  scene.id = "centered";
  scene.task = Task::kPP;
  scene.targets = {sim::TargetSpec{0.0, 0.0, 0.06, sim::Appearance::kDisc, 0.2}};
  io::write_text((dir / "scene.json").string(), io::scene_to_json(scene).dump());
  const auto ep = cli::cmd_rollout(smoke(), "oracle", (dir / "scene.json").string(),
                                   (dir / "out").string(), false);
  REQUIRE(ep.trace.size() == 1);
  CHECK(ep.trace[0].action == Action::kStop);
  const auto trace = json::parse(bytes(dir / "out" / "trace.json"));
  CHECK(trace["trace"].size() == 1);
}

TEST_CASE("rollout dumps frames only with the flag and stays within budget") {
  const auto cfg = smoke();
  const auto scene = (fixture().data / "scenes.json").string();
  const auto plain = scratch("rollout_plain"), frames = scratch("rollout_frames");
  const std::string base = "--config " + kSmoke + " rollout --controller " +
                           fixture().sft.string() + " --scene " + scene + " --out ";
  REQUIRE(run_cli(base + plain.string()) == 0);
  REQUIRE(run_cli(base + frames.string() + " --dump-frames") == 0);
  const auto tp = tree(plain), tf = tree(frames);
  CHECK(tp.size() == 1);
  CHECK(tp.at("trace.json") == tf.at("trace.json"));
  const auto trace = json::parse(tp.at("trace.json"));
  const auto n = trace["trace"].size();
  CHECK(n >= 1);
  CHECK(n <= static_cast<std::size_t>(trace["budget"].get<int>()));
  CHECK(trace["budget"] == cfg.eval.pp_budget);
  CHECK(tf.size() == n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.pgm", i);
    REQUIRE(tf.count(name) == 1);
    CHECK(tf.at(name).rfind("P5", 0) == 0);
  }
}
