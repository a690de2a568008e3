#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "endotrack/types.hpp"

namespace endotrack::sim {

/// Camera and actuation constants. Bending angle is bend_gain * theta per axis.
struct KinematicsConfig {
  double bend_gain = 1.0;
  double delta_theta = 0.05;  // rad per non-stop action
  double focal = 200.0;       // px
  int image_size = 400;
  PixelPoint center{200.0, 200.0};
  double stop_epsilon = 18.0;  // px
  double theta_max = 0.6;      // rad
  double view_margin = 0.1;    // rad

  /// Throws PreconditionError if any invariant is violated.
  void validate() const;
};

struct MotorState {
  double theta1 = 0.0;
  double theta2 = 0.0;
  friend bool operator==(const MotorState&, const MotorState&) = default;
};

bool in_workspace(const MotorState& theta, const KinematicsConfig& cfg);

enum class Appearance : std::uint8_t { kDisc, kBlob, kDot, kSquare };

struct TargetSpec {
  double bearing_u = 0.0;     // rad
  double bearing_v = 0.0;     // rad, positive is up in the image
  double radius_world = 0.05;  // rad, angular half extent
  Appearance appearance = Appearance::kDisc;
  double intensity = 0.2;  // drawn gray level
};

struct Scene {
  std::string id;
  Task task = Task::kPP;
  std::vector<TargetSpec> targets;
  std::uint64_t seed = 0;
  int distractor_count = 0;
  MotorState initial_theta;

  /// Checks the per-task target count invariants.
  void validate() const;
};

struct NoiseConfig {
  double pixel_sigma = 0.0;  // additive gaussian on intensities
  double bbox_jitter = 0.0;  // gaussian px on detected box corners
  double dropout = 0.0;      // probability a detection is missed
  std::uint64_t seed = 0;
};

struct RenderOptions {
  /// When >= 0 every other target is drawn at dimmed contrast.
  int focus_target = -1;
  double dim_contrast = 0.35;
};

/// Grayscale frame plus the ground truth used for labeling.
struct Frame {
  int size = 0;
  std::vector<float> pixels;  // row-major, values in [0,1]
  std::vector<std::optional<BBox>> ground_truth;  // nullopt: out of view
  std::vector<std::optional<BBox>> detections;    // noisy channel

  float at(int row, int col) const { return pixels[row * size + col]; }
};

inline constexpr double kBackground = 0.8;

/// Pinhole projection of a target bearing after bending; nullopt when the
/// projection leaves the view cone or the image.
std::optional<PixelPoint> project(const Scene& scene, int target_index,
                                  const MotorState& theta,
                                  const KinematicsConfig& cfg);

/// Same mapping without the image-bounds test; nullopt only outside the view
/// cone. Used for distances to targets that are temporarily out of frame.
std::optional<PixelPoint> project_unbounded(const TargetSpec& target,
                                            const MotorState& theta,
                                            const KinematicsConfig& cfg);

struct Actuation {
  MotorState theta;
  bool clamped = false;
};

Actuation apply_action(const MotorState& theta, Action action,
                       const KinematicsConfig& cfg);

/// Radius in pixels of a target drawn at the optical axis.
double pixel_radius(const TargetSpec& target, const KinematicsConfig& cfg);

/// Tight raster bounds of a target at theta, or nullopt when out of view.
/// Uses exactly the membership test the renderer uses.
std::optional<BBox> target_bbox(const Scene& scene, int target_index,
                                const MotorState& theta,
                                const KinematicsConfig& cfg);

/// Low-contrast clutter derived deterministically from the scene seed.
std::vector<TargetSpec> distractors(const Scene& scene);

struct BoxObservation {
  std::vector<std::optional<BBox>> ground_truth;
  std::vector<std::optional<BBox>> detections;
};

/// Ground-truth boxes plus the noisy detection channel, without rasterizing.
/// Matches the boxes render() reports for the same inputs.
BoxObservation observe_boxes(const Scene& scene, const MotorState& theta,
                             const KinematicsConfig& cfg, const NoiseConfig& noise);

Frame render(const Scene& scene, const MotorState& theta,
             const KinematicsConfig& cfg, const NoiseConfig& noise,
             const RenderOptions& options = {});

/// Binary 8-bit PGM (P5).
std::string to_pgm(const Frame& frame);
void write_pgm(const Frame& frame, const std::string& path);

// Scene generation ---------------------------------------------------------

struct SceneGenConfig {
  int cc_markers = 8;
  double cc_ring_min = 0.24;
  double cc_ring_max = 0.30;
  double max_bearing = 0.5;
  double min_start_distance = 40.0;  // px from the image center
  int max_distractors = 0;
};

Scene make_scene(Task task, std::uint64_t seed, const KinematicsConfig& cfg,
                 const SceneGenConfig& gen = {});

enum class SequenceSuite : std::uint8_t { kChars, kFruit, kHole };

std::string_view to_string(SequenceSuite s);
std::optional<SequenceSuite> suite_from_string(std::string_view s);

/// Ordered multi-target scene with appearances not used in training.
Scene make_sequence_scene(SequenceSuite suite, std::uint64_t seed,
                          const KinematicsConfig& cfg);

std::string_view to_string(Appearance a);
std::optional<Appearance> appearance_from_string(std::string_view s);

}  // namespace endotrack::sim
