#include "endotrack/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "endotrack/rng.hpp"

namespace endotrack::sim {

namespace {

constexpr double kWorkspaceTolerance = 1e-12;

struct Lobe {
  double du = 0.0;
  double dv = 0.0;
  double radius = 0.0;
};

// Blob shape: 3-5 overlapping discs, recentred so the union's bounding
// extents are symmetric about the projected center.
std::vector<Lobe> blob_lobes(std::uint64_t scene_seed, int index, double r) {
  std::mt19937_64 rng(mix_seed(scene_seed, 0xB10B0000ULL + index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 3 + static_cast<int>(rng() % 3);
  std::vector<Lobe> lobes;
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  for (int k = 0; k < n; ++k) {
    const double angle =
        phase + 2.0 * std::numbers::pi * k / n + 0.4 * (unit(rng) - 0.5);
    const double dist = r * (0.35 + 0.2 * unit(rng));
    lobes.push_back({dist * std::cos(angle), dist * std::sin(angle),
                     r * (0.55 + 0.15 * unit(rng))});
  }
  double min_u = 1e300, max_u = -1e300, min_v = 1e300, max_v = -1e300;
  for (const auto& l : lobes) {
    min_u = std::min(min_u, l.du - l.radius);
    max_u = std::max(max_u, l.du + l.radius);
    min_v = std::min(min_v, l.dv - l.radius);
    max_v = std::max(max_v, l.dv + l.radius);
  }
  const double shift_u = 0.5 * (min_u + max_u);
  const double shift_v = 0.5 * (min_v + max_v);
  for (auto& l : lobes) {
    l.du -= shift_u;
    l.dv -= shift_v;
  }
  return lobes;
}

// Pixel-membership predicate for one drawn shape, shared by the renderer and
// the ground-truth box computation.
class Shape {
 public:
  Shape(const TargetSpec& t, PixelPoint c, double r, std::uint64_t seed,
        int index)
      : appearance_(t.appearance), c_(c), r_(r) {
    extent_ = r;
    if (appearance_ == Appearance::kBlob) {
      lobes_ = blob_lobes(seed, index, r);
      extent_ = 0.0;
      for (const auto& l : lobes_) {
        extent_ = std::max({extent_, std::abs(l.du) + l.radius,
                            std::abs(l.dv) + l.radius});
      }
    }
  }

  bool contains(double x, double y) const {
    const double dx = x - c_.u;
    const double dy = y - c_.v;
    switch (appearance_) {
      case Appearance::kDisc:
      case Appearance::kDot:
        return dx * dx + dy * dy <= r_ * r_;
      case Appearance::kSquare:
        return std::abs(dx) <= r_ && std::abs(dy) <= r_;
      case Appearance::kBlob:
        for (const auto& l : lobes_) {
          const double ex = dx - l.du;
          const double ey = dy - l.dv;
          if (ex * ex + ey * ey <= l.radius * l.radius) return true;
        }
        return false;
    }
    return false;
  }

  // Inclusive pixel index range that may intersect the shape.
  int col_lo(int n) const { return clamp_index(std::floor(c_.u - extent_ - 1), n); }
  int col_hi(int n) const { return clamp_index(std::ceil(c_.u + extent_ + 1), n); }
  int row_lo(int n) const { return clamp_index(std::floor(c_.v - extent_ - 1), n); }
  int row_hi(int n) const { return clamp_index(std::ceil(c_.v + extent_ + 1), n); }

 private:
  static int clamp_index(double x, int n) {
    return static_cast<int>(std::clamp(x, 0.0, static_cast<double>(n - 1)));
  }

  Appearance appearance_;
  PixelPoint c_;
  double r_;
  double extent_ = 0.0;
  std::vector<Lobe> lobes_;
};

template <typename Fn>
void for_each_pixel(const Shape& s, int n, Fn&& fn) {
  for (int row = s.row_lo(n); row <= s.row_hi(n); ++row) {
    for (int col = s.col_lo(n); col <= s.col_hi(n); ++col) {
      if (s.contains(col + 0.5, row + 0.5)) fn(row, col);
    }
  }
}

std::optional<BBox> shape_bounds(const Shape& s, int n) {
  int min_c = n, max_c = -1, min_r = n, max_r = -1;
  for_each_pixel(s, n, [&](int row, int col) {
    min_c = std::min(min_c, col);
    max_c = std::max(max_c, col);
    min_r = std::min(min_r, row);
    max_r = std::max(max_r, row);
  });
  if (max_c < 0) return std::nullopt;
  return BBox{min_c, min_r, max_c - min_c + 1, max_r - min_r + 1};
}

void paint(std::vector<float>& pixels, int n, const Shape& s, double value) {
  const auto v = static_cast<float>(value);
  for_each_pixel(s, n, [&](int row, int col) { pixels[row * n + col] = v; });
}

double dimmed(double intensity, double contrast) {
  return kBackground + contrast * (intensity - kBackground);
}

std::vector<std::optional<BBox>> detect(
    const std::vector<std::optional<BBox>>& truth, const NoiseConfig& noise,
    int n) {
  std::mt19937_64 rng(mix_seed(noise.seed, 2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  std::vector<std::optional<BBox>> out(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    // Draw every variate even for missing boxes so streams stay aligned.
    const double drop = unit(rng);
    const double jx = jitter(rng) * noise.bbox_jitter;
    const double jy = jitter(rng) * noise.bbox_jitter;
    if (!truth[i] || drop < noise.dropout) continue;
    BBox b = *truth[i];
    b.x = std::clamp(b.x + static_cast<int>(std::lround(jx)), 0, n - 1);
    b.y = std::clamp(b.y + static_cast<int>(std::lround(jy)), 0, n - 1);
    b.w = std::min(b.w, n - b.x);
    b.h = std::min(b.h, n - b.y);
    out[i] = b;
  }
  return out;
}

}  // namespace

void KinematicsConfig::validate() const {
  if (!(stop_epsilon > 0.0)) throw PreconditionError("stop_epsilon must be > 0");
  if (!(focal > 0.0)) throw PreconditionError("focal must be > 0");
  if (!(delta_theta > 0.0)) throw PreconditionError("delta_theta must be > 0");
  if (!(bend_gain > 0.0)) throw PreconditionError("bend_gain must be > 0");
  if (image_size <= 0) throw PreconditionError("image_size must be > 0");
  if (!(theta_max > 0.0)) throw PreconditionError("theta_max must be > 0");
  if (!(view_margin >= 0.0 && view_margin < std::numbers::pi / 2)) {
    throw PreconditionError("view_margin out of range");
  }
}

bool in_workspace(const MotorState& theta, const KinematicsConfig& cfg) {
  const double lim = cfg.theta_max + kWorkspaceTolerance;
  return std::abs(theta.theta1) <= lim && std::abs(theta.theta2) <= lim;
}

void Scene::validate() const {
  const auto n = targets.size();
  switch (task) {
    case Task::kPP:
    case Task::kAR:
      if (n != 1) throw PreconditionError("PP/AR scenes need exactly one target");
      break;
    case Task::kCC:
      if (n < 3) throw PreconditionError("CC scenes need at least 3 markers");
      break;
    case Task::kGeneralSeq:
      if (n < 2) throw PreconditionError("sequence scenes need at least 2 targets");
      break;
  }
  for (const auto& t : targets) {
    if (!(t.radius_world > 0.0)) throw PreconditionError("radius_world must be > 0");
  }
}

std::optional<PixelPoint> project_unbounded(const TargetSpec& target,
                                            const MotorState& theta,
                                            const KinematicsConfig& cfg) {
  const double arg_u = target.bearing_u - cfg.bend_gain * theta.theta1;
  const double arg_v = target.bearing_v - cfg.bend_gain * theta.theta2;
  const double cone = std::numbers::pi / 2 - cfg.view_margin;
  if (std::abs(arg_u) >= cone || std::abs(arg_v) >= cone) return std::nullopt;
  return PixelPoint{cfg.center.u + cfg.focal * std::tan(arg_u),
                    cfg.center.v - cfg.focal * std::tan(arg_v)};
}

std::optional<PixelPoint> project(const Scene& scene, int target_index,
                                  const MotorState& theta,
                                  const KinematicsConfig& cfg) {
  if (target_index < 0 || target_index >= static_cast<int>(scene.targets.size())) {
    throw PreconditionError("target index out of range");
  }
  if (!in_workspace(theta, cfg)) {
    throw PreconditionError("motor state outside workspace");
  }
  auto p = project_unbounded(scene.targets[target_index], theta, cfg);
  if (!p) return std::nullopt;
  const double n = cfg.image_size;
  if (p->u < 0.0 || p->u >= n || p->v < 0.0 || p->v >= n) return std::nullopt;
  return p;
}

Actuation apply_action(const MotorState& theta, Action action,
                       const KinematicsConfig& cfg) {
  const Increment inc = increment(action);
  MotorState next{theta.theta1 + inc.d1 * cfg.delta_theta,
                  theta.theta2 + inc.d2 * cfg.delta_theta};
  const MotorState clamped{std::clamp(next.theta1, -cfg.theta_max, cfg.theta_max),
                           std::clamp(next.theta2, -cfg.theta_max, cfg.theta_max)};
  return {clamped, !(clamped == next)};
}

double pixel_radius(const TargetSpec& target, const KinematicsConfig& cfg) {
  return cfg.focal * std::tan(target.radius_world);
}

std::optional<BBox> target_bbox(const Scene& scene, int target_index,
                                const MotorState& theta,
                                const KinematicsConfig& cfg) {
  const auto p = project(scene, target_index, theta, cfg);
  if (!p) return std::nullopt;
  const auto& t = scene.targets[target_index];
  const Shape shape(t, *p, pixel_radius(t, cfg), scene.seed, target_index);
  return shape_bounds(shape, cfg.image_size);
}

BoxObservation observe_boxes(const Scene& scene, const MotorState& theta,
                             const KinematicsConfig& cfg, const NoiseConfig& noise) {
  BoxObservation obs;
  const int count = static_cast<int>(scene.targets.size());
  for (int i = 0; i < count; ++i) {
    obs.ground_truth.push_back(target_bbox(scene, i, theta, cfg));
  }
  obs.detections = detect(obs.ground_truth, noise, cfg.image_size);
  return obs;
}

std::vector<TargetSpec> distractors(const Scene& scene) {
  std::vector<TargetSpec> out;
  std::mt19937_64 rng(mix_seed(scene.seed, 0xD157AC7ULL));
  std::uniform_real_distribution<double> bearing(-0.7, 0.7);
  std::uniform_real_distribution<double> radius(0.03, 0.07);
  std::uniform_real_distribution<double> gray(0.2, 0.5);
  for (int i = 0; i < scene.distractor_count; ++i) {
    TargetSpec t;
    t.bearing_u = bearing(rng);
    t.bearing_v = bearing(rng);
    t.radius_world = radius(rng);
    t.appearance = (rng() % 2 == 0) ? Appearance::kDisc : Appearance::kSquare;
    t.intensity = gray(rng);
    out.push_back(t);
  }
  return out;
}

Frame render(const Scene& scene, const MotorState& theta,
             const KinematicsConfig& cfg, const NoiseConfig& noise,
             const RenderOptions& options) {
  const int n = cfg.image_size;
  Frame frame;
  frame.size = n;
  frame.pixels.resize(static_cast<std::size_t>(n) * n);
  const double half = 0.5 * n;
  for (int row = 0; row < n; ++row) {
    for (int col = 0; col < n; ++col) {
      const double dx = (col + 0.5 - half) / half;
      const double dy = (row + 0.5 - half) / half;
      frame.pixels[row * n + col] =
          static_cast<float>(kBackground - 0.1 * (dx * dx + dy * dy) / 2.0);
    }
  }

  const auto clutter = distractors(scene);
  constexpr double kDistractorContrast = 0.4;
  for (std::size_t i = 0; i < clutter.size(); ++i) {
    const auto p = project_unbounded(clutter[i], theta, cfg);
    if (!p) continue;
    const Shape shape(clutter[i], *p, pixel_radius(clutter[i], cfg),
                      mix_seed(scene.seed, 77), static_cast<int>(i));
    paint(frame.pixels, n, shape, dimmed(clutter[i].intensity, kDistractorContrast));
  }

  const int count = static_cast<int>(scene.targets.size());
  frame.ground_truth.assign(count, std::nullopt);
  for (int i = 0; i < count; ++i) {
    const auto p = project(scene, i, theta, cfg);
    if (!p) continue;
    const auto& t = scene.targets[i];
    const Shape shape(t, *p, pixel_radius(t, cfg), scene.seed, i);
    const bool dim = options.focus_target >= 0 && options.focus_target != i;
    paint(frame.pixels, n, shape,
          dim ? dimmed(t.intensity, options.dim_contrast) : t.intensity);
    frame.ground_truth[i] = shape_bounds(shape, n);
  }

  if (noise.pixel_sigma > 0.0) {
    std::mt19937_64 rng(mix_seed(noise.seed, 1));
    std::normal_distribution<double> gauss(0.0, noise.pixel_sigma);
    for (auto& px : frame.pixels) {
      px = static_cast<float>(std::clamp(px + gauss(rng), 0.0, 1.0));
    }
  }

  frame.detections = detect(frame.ground_truth, noise, n);
  return frame;
}

std::string to_pgm(const Frame& frame) {
  std::string out = "P5\n" + std::to_string(frame.size) + " " +
                    std::to_string(frame.size) + "\n255\n";
  out.reserve(out.size() + frame.pixels.size());
  for (float px : frame.pixels) {
    out.push_back(static_cast<char>(
        static_cast<unsigned char>(std::lround(std::clamp(px, 0.0f, 1.0f) * 255.0f))));
  }
  return out;
}

void write_pgm(const Frame& frame, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path);
  const auto data = to_pgm(frame);
  os.write(data.data(), static_cast<std::streamsize>(data.size()));
}

// Scene generation ---------------------------------------------------------

namespace {

double start_distance(const TargetSpec& t, const KinematicsConfig& cfg) {
  const auto p = project_unbounded(t, MotorState{}, cfg);
  return p ? distance(*p, cfg.center) : 0.0;
}

std::string scene_id(std::string_view prefix, std::uint64_t seed) {
  return std::string(prefix) + "-" + std::to_string(seed);
}

}  // namespace

Scene make_scene(Task task, std::uint64_t seed, const KinematicsConfig& cfg,
                 const SceneGenConfig& gen) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(task) + 11));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Scene scene;
  scene.task = task;
  scene.seed = seed;
  scene.id = scene_id(to_string(task), seed);
  scene.distractor_count =
      gen.max_distractors > 0 ? static_cast<int>(rng() % (gen.max_distractors + 1)) : 0;

  switch (task) {
    case Task::kPP:
    case Task::kAR: {
      TargetSpec t;
      if (task == Task::kPP) {
        t.appearance = Appearance::kDisc;
        t.radius_world = uniform(0.06, 0.11);
        t.intensity = uniform(0.1, 0.3);
      } else {
        t.appearance = Appearance::kBlob;
        t.radius_world = uniform(0.07, 0.11);
        t.intensity = uniform(0.3, 0.5);
      }
      do {
        t.bearing_u = uniform(-gen.max_bearing, gen.max_bearing);
        t.bearing_v = uniform(-gen.max_bearing, gen.max_bearing);
      } while (start_distance(t, cfg) < gen.min_start_distance);
      scene.targets.push_back(t);
      break;
    }
    case Task::kCC: {
      const double ring = uniform(gen.cc_ring_min, gen.cc_ring_max);
      const double phase = uniform(0.0, 2.0 * std::numbers::pi);
      const double start_u = uniform(-0.03, 0.03);
      const double start_v = uniform(-0.03, 0.03);
      const double cu = start_u - ring * std::cos(phase);
      const double cv = start_v - ring * std::sin(phase);
      for (int j = 0; j < gen.cc_markers; ++j) {
        const double a = phase + 2.0 * std::numbers::pi * j / gen.cc_markers;
        TargetSpec t;
        t.appearance = Appearance::kDot;
        t.radius_world = 0.025;
        t.intensity = 0.05;
        t.bearing_u = cu + ring * std::cos(a);
        t.bearing_v = cv + ring * std::sin(a);
        scene.targets.push_back(t);
      }
      break;
    }
    case Task::kGeneralSeq:
      return make_sequence_scene(SequenceSuite::kChars, seed, cfg);
  }
  scene.validate();
  return scene;
}

std::string_view to_string(SequenceSuite s) {
  switch (s) {
    case SequenceSuite::kChars: return "SEQ_CHARS";
    case SequenceSuite::kFruit: return "SEQ_FRUIT_ANALOG";
    case SequenceSuite::kHole: return "HOLE_ANALOG";
  }
  return "?";
}

std::optional<SequenceSuite> suite_from_string(std::string_view s) {
  for (auto suite : {SequenceSuite::kChars, SequenceSuite::kFruit, SequenceSuite::kHole}) {
    if (to_string(suite) == s) return suite;
  }
  return std::nullopt;
}

Scene make_sequence_scene(SequenceSuite suite, std::uint64_t seed,
                          const KinematicsConfig& cfg) {
  std::mt19937_64 rng(mix_seed(seed, 0x5E9ULL + static_cast<std::uint64_t>(suite)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  Scene scene;
  scene.seed = seed;
  scene.id = scene_id(to_string(suite), seed);

  int count = 0;
  switch (suite) {
    case SequenceSuite::kChars:
      scene.task = Task::kGeneralSeq;
      count = 5;
      scene.distractor_count = 3;
      break;
    case SequenceSuite::kFruit:
      scene.task = Task::kGeneralSeq;
      count = 4;
      scene.distractor_count = 1;
      break;
    case SequenceSuite::kHole:
      // One target in heavy clutter; scored like a tracking episode.
      scene.task = Task::kPP;
      count = 1;
      scene.distractor_count = 6;
      break;
  }

  constexpr double kMinSeparation = 0.2;
  while (static_cast<int>(scene.targets.size()) < count) {
    TargetSpec t;
    switch (suite) {
      case SequenceSuite::kChars:
        t.appearance = Appearance::kSquare;
        t.radius_world = uniform(0.05, 0.08);
        t.intensity = 0.15;
        break;
      case SequenceSuite::kFruit:
        t.appearance = scene.targets.size() % 2 == 0 ? Appearance::kDisc
                                                     : Appearance::kBlob;
        t.radius_world = uniform(0.07, 0.1);
        t.intensity = uniform(0.1, 0.45);
        break;
      case SequenceSuite::kHole:
        t.appearance = Appearance::kSquare;
        t.radius_world = uniform(0.05, 0.07);
        t.intensity = 0.05;
        break;
    }
    t.bearing_u = uniform(-0.45, 0.45);
    t.bearing_v = uniform(-0.45, 0.45);
    if (scene.targets.empty() && start_distance(t, cfg) < 40.0) continue;
    bool separated = true;
    for (const auto& other : scene.targets) {
      if (std::hypot(other.bearing_u - t.bearing_u, other.bearing_v - t.bearing_v) <
          kMinSeparation) {
        separated = false;
      }
    }
    if (separated) scene.targets.push_back(t);
  }
  scene.validate();
  return scene;
}

std::string_view to_string(Appearance a) {
  switch (a) {
    case Appearance::kDisc: return "DISC";
    case Appearance::kBlob: return "BLOB";
    case Appearance::kDot: return "DOT";
    case Appearance::kSquare: return "SQUARE";
  }
  return "?";
}

std::optional<Appearance> appearance_from_string(std::string_view s) {
  for (auto a : {Appearance::kDisc, Appearance::kBlob, Appearance::kDot, Appearance::kSquare}) {
    if (to_string(a) == s) return a;
  }
  return std::nullopt;
}

}  // namespace endotrack::sim
