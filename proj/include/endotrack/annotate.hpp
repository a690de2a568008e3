#pragma once

#include <array>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "endotrack/format.hpp"
#include "endotrack/rewards.hpp"
#include "endotrack/sim.hpp"
#include "endotrack/types.hpp"

namespace endotrack::annotate {

struct AnnotationConfig {
  double fr_radius = 20.0 * std::numbers::sqrt2;  // labeling focus region, px
  PixelPoint image_center{200.0, 200.0};
};

class NoProgressError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateFitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Quadrant of p relative to center. Ties on an axis go right (u >= c_u) and
/// lower (v >= c_v).
Action quadrant_of(const PixelPoint& p, const PixelPoint& center);

/// STOP inside the focus region, otherwise the quadrant of the box center.
Action quadrant_label(const BBox& bbox, const AnnotationConfig& cfg);

/// Greedy pixel-distance minimizer over the four motor increments, STOP once
/// the target is within stop_epsilon. Throws NoProgressError if no candidate
/// keeps the target inside the view cone.
Action oracle_action(const sim::Scene& scene, int target_index,
                     const sim::MotorState& theta,
                     const sim::KinematicsConfig& cfg);

struct CircleFit {
  PixelPoint center;
  double radius = 0.0;
  double rms_residual = 0.0;
};

/// Algebraic (Kasa) least-squares circle through the points. Throws
/// DegenerateFitError for fewer than min_points or (near-)collinear input.
CircleFit fit_circle(std::span<const PixelPoint> points, int min_points = 3);

/// Index of the centroid with the smallest positive anti-clockwise angular
/// offset from the current one (image v axis flipped to math convention).
/// Equal angles resolve to the smaller index.
int next_marker_anticlockwise(std::span<const PixelPoint> centroids,
                              int current_index, const CircleFit& fit);

/// Ground-truth anti-clockwise marker order of a CC scene, starting at the
/// marker nearest the image center at the scene's initial pose.
std::vector<int> ring_order(const sim::Scene& scene,
                            const sim::KinematicsConfig& cfg);

/// Where a frame comes from; frames are regenerated on demand from these.
struct FrameRef {
  std::string scene_id;
  int step = 0;
  sim::MotorState theta;
  std::uint64_t noise_seed = 0;
};

/// One labeled frame, before expansion into instruction variants.
struct Annotation {
  FrameRef frame;
  Task task = Task::kPP;
  int target_index = 0;
  BBox bbox;
  Action action = Action::kStop;
};

struct LabeledSample {
  std::string id;
  FrameRef frame;
  Instruction instruction = Instruction::kBoxAction;
  Task task = Task::kPP;
  int target_index = 0;
  BBox bbox;
  Action action = Action::kStop;
  format::TokenSequence canonical_text;
};

LabeledSample make_sample(const Annotation& a, Instruction instruction);
rewards::RewardTarget reward_target(const LabeledSample& s);

/// Labels a frame from its detection channel. PP/AR use quadrant_label on the
/// detected box; CC fits the ring, takes the center-most marker and labels
/// the quadrant of the next anti-clockwise one (never STOP). nullopt when the
/// frame cannot be labeled.
std::optional<Annotation> label_frame(const sim::Scene& scene,
                                      const std::vector<std::optional<BBox>>& boxes,
                                      const AnnotationConfig& cfg);

enum Split : int { kTrain = 0, kEval = 1 };

/// Per-split, per-task (PP, AR, CC), per-action counts of labeled frames.
struct DatasetStats {
  std::array<std::array<std::array<int, 5>, 3>, 2> counts{};
  int total() const;
};

/// Plain-text table with columns [1,1] [-1,1] [-1,-1] [1,-1] [0,0] All.
std::string stats_table(const DatasetStats& stats);

struct DatasetOptions {
  sim::NoiseConfig noise;  // seed is the dataset noise root seed
  std::uint64_t split_seed = 0;
  int cc_episode_budget = 60;
  bool curate = true;
  int jobs = 1;
};

struct DatasetBundle {
  std::vector<Annotation> train_annotations;
  std::vector<Annotation> eval_annotations;
  std::vector<LabeledSample> train;  // both instruction variants
  std::vector<LabeledSample> eval;
  DatasetStats stats;
  std::vector<std::string> skipped_scenes;
  int curated_out = 0;
};

/// Oracle rollouts of every scene, labeled per frame; deterministic under
/// fixed seeds regardless of `jobs`.
std::vector<Annotation> annotate_scenes(std::span<const sim::Scene> scenes,
                                        const sim::KinematicsConfig& cfg,
                                        const AnnotationConfig& acfg,
                                        int episode_budget,
                                        const DatasetOptions& opts,
                                        std::vector<std::string>* skipped = nullptr,
                                        int* curated_out = nullptr);

DatasetBundle generate_dataset(std::span<const sim::Scene> scenes,
                               const sim::KinematicsConfig& cfg,
                               const AnnotationConfig& acfg, int episode_budget,
                               double split_frac, const DatasetOptions& opts = {});

}  // namespace endotrack::annotate
