#include "endotrack/io.hpp"

#include <fstream>
#include <sstream>

namespace endotrack::io {

using nlohmann::json;

namespace {

template <typename T, typename Parse>
T parse_enum(const json& j, const char* key, Parse&& parse) {
  const auto s = j.at(key).get<std::string>();
  const auto v = parse(s);
  if (!v) throw IoError(std::string("invalid ") + key + ": " + s);
  return *v;
}

json bbox_json(const BBox& b) { return {b.x, b.y, b.w, b.h}; }

BBox bbox_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("bbox must be [x,y,w,h]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

void check_schema(const json& j) {
  if (!j.contains("schema") || j.at("schema").get<int>() != kSchemaVersion) {
    throw IoError("unsupported or missing schema version");
  }
}

}  // namespace

json scene_to_json(const sim::Scene& s) {
  json targets = json::array();
  for (const auto& t : s.targets) {
    targets.push_back({{"bearing_u", t.bearing_u},
                       {"bearing_v", t.bearing_v},
                       {"radius_world", t.radius_world},
                       {"appearance", sim::to_string(t.appearance)},
                       {"intensity", t.intensity}});
  }
  return {{"id", s.id},
          {"task", to_string(s.task)},
          {"seed", s.seed},
          {"distractor_count", s.distractor_count},
          {"initial_theta", {s.initial_theta.theta1, s.initial_theta.theta2}},
          {"targets", targets}};
}

sim::Scene scene_from_json(const json& j) {
  try {
    sim::Scene s;
    s.id = j.at("id").get<std::string>();
    s.task = parse_enum<Task>(j, "task", task_from_string);
    s.seed = j.at("seed").get<std::uint64_t>();
    s.distractor_count = j.at("distractor_count").get<int>();
    const auto& th = j.at("initial_theta");
    s.initial_theta = {th.at(0).get<double>(), th.at(1).get<double>()};
    for (const auto& t : j.at("targets")) {
      sim::TargetSpec spec;
      spec.bearing_u = t.at("bearing_u").get<double>();
      spec.bearing_v = t.at("bearing_v").get<double>();
      spec.radius_world = t.at("radius_world").get<double>();
      spec.appearance = parse_enum<sim::Appearance>(t, "appearance", sim::appearance_from_string);
      spec.intensity = t.at("intensity").get<double>();
      s.targets.push_back(spec);
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed scene: ") + e.what());
  } catch (const PreconditionError& e) {
    throw IoError(std::string("invalid scene: ") + e.what());
  }
}

json sample_to_json(const annotate::LabeledSample& s) {
  return {{"id", s.id},
          {"scene_id", s.frame.scene_id},
          {"step", s.frame.step},
          {"theta", {s.frame.theta.theta1, s.frame.theta.theta2}},
          {"noise_seed", s.frame.noise_seed},
          {"instruction", to_string(s.instruction)},
          {"task", to_string(s.task)},
          {"target_index", s.target_index},
          {"bbox", bbox_json(s.bbox)},
          {"action", to_string(s.action)},
          {"text", format::to_text(s.canonical_text)}};
}

annotate::LabeledSample sample_from_json(const json& j) {
  try {
    annotate::Annotation a;
    a.frame.scene_id = j.at("scene_id").get<std::string>();
    a.frame.step = j.at("step").get<int>();
    const auto& th = j.at("theta");
    a.frame.theta = {th.at(0).get<double>(), th.at(1).get<double>()};
    a.frame.noise_seed = j.at("noise_seed").get<std::uint64_t>();
    a.task = parse_enum<Task>(j, "task", task_from_string);
    a.target_index = j.at("target_index").get<int>();
    a.bbox = bbox_from(j.at("bbox"));
    a.action = parse_enum<Action>(j, "action", action_from_string);
    const auto instr = parse_enum<Instruction>(j, "instruction", instruction_from_string);
    auto s = annotate::make_sample(a, instr);
    if (format::to_text(s.canonical_text) != j.at("text").get<std::string>() ||
        s.id != j.at("id").get<std::string>()) {
      throw IoError("sample " + s.id + " is inconsistent with its label");
    }
    return s;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed sample: ") + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << text;
  if (!os) throw IoError("failed writing " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_scenes(const std::string& path, const std::vector<sim::Scene>& scenes,
                  const std::string& config_hash) {
  json list = json::array();
  for (const auto& s : scenes) list.push_back(scene_to_json(s));
  write_text(path, json{{"schema", kSchemaVersion}, {"config_hash", config_hash}, {"scenes", list}}
                       .dump(1) +
                       "\n");
}

std::vector<sim::Scene> read_scenes(const std::string& path, std::string* config_hash) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
  check_schema(j);
  if (config_hash) *config_hash = j.value("config_hash", "");
  std::vector<sim::Scene> out;
  for (const auto& s : j.at("scenes")) out.push_back(scene_from_json(s));
  return out;
}

sim::Scene read_scene(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path + ": " + e.what());
  }
  if (j.contains("scenes")) {
    check_schema(j);
    if (j.at("scenes").empty()) throw IoError(path + " holds no scenes");
    return scene_from_json(j.at("scenes").at(0));
  }
  return scene_from_json(j);
}

void write_samples(const std::string& path, const std::vector<annotate::LabeledSample>& samples,
                   const std::string& config_hash) {
  std::string out = json{{"schema", kSchemaVersion}, {"config_hash", config_hash},
                         {"count", samples.size()}}
                        .dump() +
                    "\n";
  for (const auto& s : samples) out += sample_to_json(s).dump() + "\n";
  write_text(path, out);
}

std::vector<annotate::LabeledSample> read_samples(const std::string& path,
                                                  std::string* config_hash) {
  std::istringstream is(read_text(path));
  std::string line;
  if (!std::getline(is, line)) throw IoError(path + " is empty");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error& e) {
    throw IoError(path + ": bad header: " + e.what());
  }
  check_schema(header);
  if (config_hash) *config_hash = header.value("config_hash", "");
  std::vector<annotate::LabeledSample> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw IoError(path + ": " + e.what());
    }
  }
  if (out.size() != header.at("count").get<std::size_t>()) {
    throw IoError(path + ": sample count does not match header");
  }
  return out;
}

}  // namespace endotrack::io
