#pragma once

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

#include "endotrack/annotate.hpp"
#include "endotrack/sim.hpp"

namespace endotrack::io {

inline constexpr int kSchemaVersion = 1;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json scene_to_json(const sim::Scene& scene);
sim::Scene scene_from_json(const nlohmann::json& j);

nlohmann::json sample_to_json(const annotate::LabeledSample& s);
annotate::LabeledSample sample_from_json(const nlohmann::json& j);

/// {"schema": 1, "config_hash": ..., "scenes": [...]}
void write_scenes(const std::string& path, const std::vector<sim::Scene>& scenes,
                  const std::string& config_hash);
std::vector<sim::Scene> read_scenes(const std::string& path, std::string* config_hash = nullptr);

/// A single scene file as accepted by the rollout command; also accepts a
/// scene list and takes its first entry.
sim::Scene read_scene(const std::string& path);

/// JSON Lines; the first line is a header carrying schema and config hash.
void write_samples(const std::string& path, const std::vector<annotate::LabeledSample>& samples,
                   const std::string& config_hash);
std::vector<annotate::LabeledSample> read_samples(const std::string& path,
                                                  std::string* config_hash = nullptr);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace endotrack::io
