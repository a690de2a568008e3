#include "endotrack/annotate.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <iomanip>

#include "endotrack/parallel.hpp"
#include "endotrack/rng.hpp"

namespace endotrack::annotate {

Action quadrant_of(const PixelPoint& p, const PixelPoint& center) {
  const bool right = p.u >= center.u;
  const bool lower = p.v >= center.v;
  if (right) return lower ? Action::kLowerRight : Action::kUpperRight;
  return lower ? Action::kLowerLeft : Action::kUpperLeft;
}

Action quadrant_label(const BBox& bbox, const AnnotationConfig& cfg) {
  const PixelPoint c = bbox.center();
  if (distance(c, cfg.image_center) < cfg.fr_radius) return Action::kStop;
  return quadrant_of(c, cfg.image_center);
}

Action oracle_action(const sim::Scene& scene, int target_index,
                     const sim::MotorState& theta,
                     const sim::KinematicsConfig& cfg) {
  if (target_index < 0 || target_index >= static_cast<int>(scene.targets.size())) {
    throw PreconditionError("target index out of range");
  }
  const auto& target = scene.targets[target_index];
  const auto now = sim::project_unbounded(target, theta, cfg);
  if (now && distance(*now, cfg.center) <= cfg.stop_epsilon) return Action::kStop;

  std::optional<Action> best;
  double best_dist = 0.0;
  for (Action a : kMoveActions) {
    const auto next = sim::apply_action(theta, a, cfg).theta;
    const auto p = sim::project_unbounded(target, next, cfg);
    if (!p) continue;
    const double d = distance(*p, cfg.center);
    if (!best || d < best_dist) {
      best = a;
      best_dist = d;
    }
  }
  if (!best) throw NoProgressError("target leaves the view cone for every action");
  return *best;
}

CircleFit fit_circle(std::span<const PixelPoint> points, int min_points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < std::max(min_points, 3)) throw DegenerateFitError("too few points for a circle fit");

  // Solve in centred, scaled coordinates for conditioning, then map back.
  double mu = 0.0, mv = 0.0;
  for (const auto& p : points) {
    mu += p.u;
    mv += p.v;
  }
  mu /= n;
  mv /= n;
  double scale = 0.0;
  for (const auto& p : points) scale += (p.u - mu) * (p.u - mu) + (p.v - mv) * (p.v - mv);
  scale = std::sqrt(scale / n);
  if (!(scale > 0.0)) throw DegenerateFitError("coincident points");

  Eigen::MatrixX3d a(n, 3);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = (points[i].u - mu) / scale;
    const double y = (points[i].v - mv) / scale;
    a.row(i) << x, y, 1.0;
    b(i) = -(x * x + y * y);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixX3d> qr(a);
  qr.setThreshold(1e-9);
  if (qr.rank() < 3) throw DegenerateFitError("collinear points");
  const Eigen::Vector3d sol = qr.solve(b);
  const double cx = -0.5 * sol(0);
  const double cy = -0.5 * sol(1);
  const double r2 = cx * cx + cy * cy - sol(2);
  if (!(r2 > 0.0)) throw DegenerateFitError("non-positive radius");

  CircleFit fit;
  fit.center = {mu + scale * cx, mv + scale * cy};
  fit.radius = scale * std::sqrt(r2);
  double sq = 0.0;
  for (const auto& p : points) {
    const double e = distance(p, fit.center) - fit.radius;
    sq += e * e;
  }
  fit.rms_residual = std::sqrt(sq / n);
  return fit;
}

int next_marker_anticlockwise(std::span<const PixelPoint> centroids,
                              int current_index, const CircleFit& fit) {
  const int n = static_cast<int>(centroids.size());
  if (n < 2) throw PreconditionError("need at least two centroids");
  if (current_index < 0 || current_index >= n) throw PreconditionError("current index out of range");
  auto angle = [&](const PixelPoint& p) {
    return std::atan2(-(p.v - fit.center.v), p.u - fit.center.u);
  };
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  const double phi0 = angle(centroids[current_index]);
  int best = -1;
  double best_offset = 0.0;
  for (int i = 0; i < n; ++i) {
    if (i == current_index) continue;
    double off = std::fmod(angle(centroids[i]) - phi0, kTwoPi);
    if (off <= 0.0) off += kTwoPi;  // (0, 2pi]
    if (best < 0 || off < best_offset) {
      best = i;
      best_offset = off;
    }
  }
  return best;
}

std::vector<int> ring_order(const sim::Scene& scene, const sim::KinematicsConfig& cfg) {
  const int n = static_cast<int>(scene.targets.size());
  double cu = 0.0, cv = 0.0;
  for (const auto& t : scene.targets) {
    cu += t.bearing_u;
    cv += t.bearing_v;
  }
  cu /= n;
  cv /= n;
  int start = 0;
  double best = 1e300;
  for (int i = 0; i < n; ++i) {
    const auto p = sim::project_unbounded(scene.targets[i], scene.initial_theta, cfg);
    const double d = p ? distance(*p, cfg.center) : 1e300;
    if (d < best) {
      best = d;
      start = i;
    }
  }
  // Bearing v points up, so atan2 in bearing space is already anti-clockwise
  // on screen.
  std::vector<double> offset(n);
  const auto& s = scene.targets[start];
  const double phi0 = std::atan2(s.bearing_v - cv, s.bearing_u - cu);
  for (int i = 0; i < n; ++i) {
    const auto& t = scene.targets[i];
    double off = std::fmod(std::atan2(t.bearing_v - cv, t.bearing_u - cu) - phi0,
                           2.0 * std::numbers::pi);
    if (off < 0.0) off += 2.0 * std::numbers::pi;
    offset[i] = i == start ? 0.0 : off;
  }
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return offset[a] < offset[b]; });
  return order;
}

LabeledSample make_sample(const Annotation& a, Instruction instruction) {
  LabeledSample s;
  s.id = a.frame.scene_id + "/" + std::to_string(a.frame.step) + "/" +
         std::string(to_string(instruction));
  s.frame = a.frame;
  s.instruction = instruction;
  s.task = a.task;
  s.target_index = a.target_index;
  s.bbox = a.bbox;
  s.action = a.action;
  s.canonical_text = format::serialize(
      instruction == Instruction::kBoxAction ? std::optional<BBox>(a.bbox) : std::nullopt,
      a.action, instruction);
  return s;
}

rewards::RewardTarget reward_target(const LabeledSample& s) {
  return {s.instruction, s.bbox, s.action};
}

std::optional<Annotation> label_frame(const sim::Scene& scene,
                                      const std::vector<std::optional<BBox>>& boxes,
                                      const AnnotationConfig& cfg) {
  Annotation out;
  out.task = scene.task;
  if (scene.task == Task::kCC) {
    std::vector<int> visible;
    std::vector<PixelPoint> centroids;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (!boxes[i]) continue;
      visible.push_back(static_cast<int>(i));
      centroids.push_back(boxes[i]->center());
    }
    if (centroids.size() < 3) return std::nullopt;
    int current = 0;
    for (std::size_t i = 1; i < centroids.size(); ++i) {
      if (distance(centroids[i], cfg.image_center) <
          distance(centroids[current], cfg.image_center)) {
        current = static_cast<int>(i);
      }
    }
    CircleFit fit;
    try {
      fit = fit_circle(centroids);
    } catch (const DegenerateFitError&) {
      return std::nullopt;
    }
    const int next = next_marker_anticlockwise(centroids, current, fit);
    out.target_index = visible[next];
    out.bbox = *boxes[out.target_index];
    out.action = quadrant_of(out.bbox.center(), cfg.image_center);
    return out;
  }
  if (boxes.empty() || !boxes[0]) return std::nullopt;
  out.target_index = 0;
  out.bbox = *boxes[0];
  out.action = quadrant_label(out.bbox, cfg);
  return out;
}

int DatasetStats::total() const {
  int t = 0;
  for (const auto& split : counts)
    for (const auto& task : split)
      for (int c : task) t += c;
  return t;
}

std::string stats_table(const DatasetStats& stats) {
  std::ostringstream os;
  constexpr std::array<const char*, 3> kTasks = {"PP", "AR", "CC"};
  constexpr std::array<const char*, 2> kSplits = {"TS", "ES"};
  os << std::left << std::setw(12) << "MA";
  for (Action a : kAllActions) os << std::right << std::setw(9) << increment_label(a);
  os << std::setw(9) << "All" << "\n";
  std::array<int, 5> column{};
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 3; ++t) {
      const auto& row = stats.counts[s][t];
      os << std::left << std::setw(12)
         << (std::string(kSplits[s]) + " (" + kTasks[t] + ")");
      int all = 0;
      for (int a = 0; a < 5; ++a) {
        all += row[a];
        column[a] += row[a];
        if (t == 2 && a == 4) {
          os << std::right << std::setw(9) << "N/A";
        } else {
          os << std::right << std::setw(9) << row[a];
        }
      }
      os << std::setw(9) << all << "\n";
    }
  }
  os << std::left << std::setw(12) << "All Number";
  int all = 0;
  for (int a = 0; a < 5; ++a) {
    all += column[a];
    os << std::right << std::setw(9) << column[a];
  }
  os << std::setw(9) << all << "\n";
  return os.str();
}

namespace {

struct Visit {
  int step;
  sim::MotorState theta;
};

std::vector<Visit> oracle_visits(const sim::Scene& scene, const sim::KinematicsConfig& cfg,
                                 const AnnotationConfig& acfg, int budget) {
  std::vector<Visit> visits;
  sim::MotorState theta = scene.initial_theta;
  if (scene.task == Task::kCC) {
    const auto order = ring_order(scene, cfg);
    const int k_total = static_cast<int>(order.size());
    int k = 0;
    for (int step = 0; step < budget && k < k_total; ++step) {
      visits.push_back({step, theta});
      const auto p = sim::project_unbounded(scene.targets[order[k]], theta, cfg);
      if (p && distance(*p, cfg.center) < acfg.fr_radius) {
        if (++k == k_total) break;
      }
      Action a = oracle_action(scene, order[k], theta, cfg);
      if (a == Action::kStop) continue;
      theta = sim::apply_action(theta, a, cfg).theta;
    }
    return visits;
  }
  for (int step = 0; step < budget; ++step) {
    visits.push_back({step, theta});
    const Action a = oracle_action(scene, 0, theta, cfg);
    if (a == Action::kStop) break;
    theta = sim::apply_action(theta, a, cfg).theta;
  }
  return visits;
}

struct SceneAnnotations {
  std::vector<Annotation> annotations;
  bool skipped = false;
  int curated_out = 0;
};

}  // namespace

std::vector<Annotation> annotate_scenes(std::span<const sim::Scene> scenes,
                                        const sim::KinematicsConfig& cfg,
                                        const AnnotationConfig& acfg,
                                        int episode_budget,
                                        const DatasetOptions& opts,
                                        std::vector<std::string>* skipped,
                                        int* curated_out) {
  if (episode_budget < 1) throw PreconditionError("episode_budget must be >= 1");
  auto per_scene = parallel_map(scenes.size(), opts.jobs, [&](std::size_t i) {
    const auto& scene = scenes[i];
    SceneAnnotations out;
    std::vector<Visit> visits;
    try {
      const int budget = scene.task == Task::kCC ? opts.cc_episode_budget : episode_budget;
      visits = oracle_visits(scene, cfg, acfg, budget);
    } catch (const NoProgressError&) {
      out.skipped = true;
      return out;
    }
    const std::uint64_t scene_root = mix_seed(opts.noise.seed, scene.seed);
    for (const auto& v : visits) {
      sim::NoiseConfig noise = opts.noise;
      noise.seed = mix_seed(scene_root,
                            (static_cast<std::uint64_t>(scene.task) << 32) |
                                static_cast<std::uint64_t>(v.step));
      const auto obs = sim::observe_boxes(scene, v.theta, cfg, noise);
      auto label = label_frame(scene, obs.detections, acfg);
      if (!label) continue;
      if (opts.curate) {
        const auto clean = label_frame(scene, obs.ground_truth, acfg);
        if (!clean || clean->action != label->action ||
            clean->target_index != label->target_index) {
          ++out.curated_out;
          continue;
        }
      }
      label->frame = {scene.id, v.step, v.theta, noise.seed};
      out.annotations.push_back(*label);
    }
    return out;
  });

  std::vector<Annotation> all;
  for (std::size_t i = 0; i < per_scene.size(); ++i) {
    if (per_scene[i].skipped) {
      spdlog::warn("scene {} skipped: oracle made no progress", scenes[i].id);
      if (skipped) skipped->push_back(scenes[i].id);
      continue;
    }
    if (curated_out) *curated_out += per_scene[i].curated_out;
    all.insert(all.end(), per_scene[i].annotations.begin(), per_scene[i].annotations.end());
  }
  return all;
}

DatasetBundle generate_dataset(std::span<const sim::Scene> scenes,
                               const sim::KinematicsConfig& cfg,
                               const AnnotationConfig& acfg, int episode_budget,
                               double split_frac, const DatasetOptions& opts) {
  if (!(split_frac > 0.0 && split_frac < 1.0)) {
    throw PreconditionError("split_frac must lie in (0, 1)");
  }
  DatasetBundle bundle;
  const auto all = annotate_scenes(scenes, cfg, acfg, episode_budget, opts,
                                   &bundle.skipped_scenes, &bundle.curated_out);

  std::vector<std::size_t> idx(all.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(opts.split_seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(split_frac * all.size()));
  std::vector<std::size_t> train_idx(idx.begin(), idx.begin() + n_train);
  std::vector<std::size_t> eval_idx(idx.begin() + n_train, idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(eval_idx.begin(), eval_idx.end());

  auto emit = [&](const std::vector<std::size_t>& ids, Split split,
                  std::vector<Annotation>& anns, std::vector<LabeledSample>& samples) {
    for (std::size_t i : ids) {
      const auto& a = all[i];
      anns.push_back(a);
      const int task = std::min(static_cast<int>(a.task), 2);
      ++bundle.stats.counts[split][task][static_cast<int>(a.action)];
      samples.push_back(make_sample(a, Instruction::kActionOnly));
      samples.push_back(make_sample(a, Instruction::kBoxAction));
    }
  };
  emit(train_idx, kTrain, bundle.train_annotations, bundle.train);
  emit(eval_idx, kEval, bundle.eval_annotations, bundle.eval);
  return bundle;
}

}  // namespace endotrack::annotate
