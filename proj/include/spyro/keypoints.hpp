#pragma once

// Keypoint feature head: model-frame keypoints projected through a pinhole
// camera, features bilinearly sampled from an H×W×C map (a fixed sentinel for
// points outside the image), and a per-level log-linear score wᵀφ + b.

#include <algorithm>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spyro/density.hpp"

namespace spyro {

/// Greedy farthest-point subset: first the point farthest from the centroid,
/// then repeatedly the point farthest from the chosen set (ties to the lowest index).
inline std::vector<Eigen::Vector3d> fps_keypoints(std::span<const Eigen::Vector3d> points, int n) {
  if (n < 1 || static_cast<std::size_t>(n) > points.size())
    throw ConfigError("farthest point sampling needs 1 <= n <= number of points");
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());

  std::vector<double> dist(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) dist[i] = (points[i] - centroid).squaredNorm();
  std::vector<Eigen::Vector3d> out;
  out.reserve(n);
  for (int k = 0; k < n; ++k) {
    const std::size_t best = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
    out.push_back(points[best]);
    if (k == 0) std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < points.size(); ++i) dist[i] = std::min(dist[i], (points[i] - points[best]).squaredNorm());
  }
  return out;
}

/// Corners of origin-centered cubes with sides d and d/2.
inline std::vector<Eigen::Vector3d> cube_keypoints(double diameter) {
  if (!(diameter > 0.0)) throw ConfigError("keypoint cube diameter must be positive");
  std::vector<Eigen::Vector3d> out;
  for (double half : {diameter / 2.0, diameter / 4.0})
    for (int c = 0; c < 8; ++c) out.emplace_back(c & 4 ? half : -half, c & 2 ? half : -half, c & 1 ? half : -half);
  return out;
}

/// Whitespace-separated xyz rows; blank lines and '#' comments ignored.
inline std::vector<Eigen::Vector3d> load_xyz(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open point cloud '" + path + "'");
  std::vector<Eigen::Vector3d> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream row(line);
    double x, y, z;
    if (!(row >> x)) continue;
    if (!(row >> y >> z)) throw ConfigError(path + ":" + std::to_string(line_no) + ": expected three coordinates");
    out.emplace_back(x, y, z);
  }
  if (out.empty()) throw ConfigError("point cloud '" + path + "' is empty");
  return out;
}

struct CameraIntrinsics {
  double fx = 500.0, fy = 500.0, cx = 64.0, cy = 64.0;
  int width = 128, height = 128;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct Projection {
  Eigen::Vector2d uv = Eigen::Vector2d::Zero();
  bool in_image = false;
};

inline Projection project_point(const Eigen::Vector3d& p_cam, const CameraIntrinsics& k) {
  Projection out;
  if (!(p_cam.z() > 0.0)) return out;
  out.uv = {k.fx * p_cam.x() / p_cam.z() + k.cx, k.fy * p_cam.y() / p_cam.z() + k.cy};
  out.in_image = out.uv.x() >= 0.0 && out.uv.x() < k.width && out.uv.y() >= 0.0 && out.uv.y() < k.height;
  return out;
}

/// Projects model-frame points under the object-to-camera pose.
inline std::vector<Projection> project(const Pose& pose, const CameraIntrinsics& k, std::span<const Eigen::Vector3d> points) {
  std::vector<Projection> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(project_point(pose.apply(p), k));
  return out;
}

/// Row-major H×W×C feature grid; integer coordinates are pixel centers.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int height, int width, int channels)
      : h_(height), w_(width), c_(channels), data_(static_cast<std::size_t>(height) * width * channels, 0.0) {
    if (height < 1 || width < 1 || channels < 1) throw ConfigError("feature map dimensions must be positive");
  }

  int height() const { return h_; }
  int width() const { return w_; }
  int channels() const { return c_; }

  double& at(int v, int u, int ch) { return data_[(static_cast<std::size_t>(v) * w_ + u) * c_ + ch]; }
  double at(int v, int u, int ch) const { return data_[(static_cast<std::size_t>(v) * w_ + u) * c_ + ch]; }
  const double* pixel(int v, int u) const { return &data_[(static_cast<std::size_t>(v) * w_ + u) * c_]; }

  /// Bilinear blend of the four neighbors; neighbors past the last row/column clamp to the border.
  void sample(const Eigen::Vector2d& uv, std::span<double> out) const {
    const double u = std::clamp(uv.x(), 0.0, static_cast<double>(w_ - 1));
    const double v = std::clamp(uv.y(), 0.0, static_cast<double>(h_ - 1));
    const int u0 = static_cast<int>(std::floor(u)), v0 = static_cast<int>(std::floor(v));
    const int u1 = std::min(u0 + 1, w_ - 1), v1 = std::min(v0 + 1, h_ - 1);
    const double a = u - u0, b = v - v0;
    const double w00 = (1 - a) * (1 - b), w01 = a * (1 - b), w10 = (1 - a) * b, w11 = a * b;
    const double *p00 = pixel(v0, u0), *p01 = pixel(v0, u1), *p10 = pixel(v1, u0), *p11 = pixel(v1, u1);
    for (int ch = 0; ch < c_; ++ch) out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;

 private:
  int h_ = 0, w_ = 0, c_ = 0;
  std::vector<double> data_;
};

struct SyntheticMapOptions {
  int descriptor_dim = 8;
  std::vector<double> heat_sigmas{2.0, 6.0};  // pixels, one descriptor block per scale
  int noise_channels = 2;
  double noise_scale = 8.0;  // smoothing length of the random field, pixels
  std::uint64_t seed = 0;

  friend bool operator==(const SyntheticMapOptions&, const SyntheticMapOptions&) = default;
};

/// Unit random descriptor per keypoint.
inline std::vector<Eigen::VectorXd> keypoint_descriptors(int n_keypoints, int dim, std::uint64_t seed) {
  Rng rng = make_rng(seed, 101);
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < n_keypoints; ++i) {
    Eigen::VectorXd e(dim);
    for (int c = 0; c < dim; ++c) e[c] = standard_normal(rng);
    out.push_back(e.normalized());
  }
  return out;
}

/// Synthetic stand-in for a learnt feature map: each keypoint's descriptor is
/// rendered as Gaussian blobs where that keypoint projects under every mode
/// (and symmetric copy) of the target, weighted by mode weight relative to the
/// heaviest mode; a seeded smooth random field fills the remaining channels.
inline FeatureMap synthetic_feature_map(const AnalyticPoseTarget& target, std::span<const Eigen::Vector3d> keypoints,
                                        const CameraIntrinsics& k, const SyntheticMapOptions& opt,
                                        const Eigen::Vector3d& default_translation = Eigen::Vector3d::Zero()) {
  const int dim = opt.descriptor_dim;
  const int n_scales = static_cast<int>(opt.heat_sigmas.size());
  if (dim < 1 || opt.noise_channels < 0) throw ConfigError("invalid synthetic feature map options");
  FeatureMap map(k.height, k.width, dim * n_scales + opt.noise_channels);
  const auto descriptors = keypoint_descriptors(static_cast<int>(keypoints.size()), dim, opt.seed);

  const auto modes = target.mode_poses();
  double max_weight = 0.0;
  for (const auto& m : modes) max_weight = std::max(max_weight, m.second);
  const bool use_mode_position = target.has_position();
  for (const auto& [mode_pose, weight] : modes) {
    Pose pose = mode_pose;
    if (!use_mode_position) pose.translation = default_translation;
    const auto proj = project(pose, k, keypoints);
    for (std::size_t i = 0; i < proj.size(); ++i) {
      if (!(pose.apply(keypoints[i]).z() > 0.0)) continue;
      for (int s = 0; s < n_scales; ++s) {
        const double sigma = opt.heat_sigmas[s];
        const int reach = static_cast<int>(std::ceil(4.0 * sigma));
        const int uc = static_cast<int>(std::lround(proj[i].uv.x())), vc = static_cast<int>(std::lround(proj[i].uv.y()));
        for (int v = std::max(0, vc - reach); v <= std::min(k.height - 1, vc + reach); ++v)
          for (int u = std::max(0, uc - reach); u <= std::min(k.width - 1, uc + reach); ++u) {
            const double d2 = (Eigen::Vector2d(u, v) - proj[i].uv).squaredNorm();
            const double g = weight / max_weight * std::exp(-0.5 * d2 / (sigma * sigma));
            for (int c = 0; c < dim; ++c) map.at(v, u, s * dim + c) += g * descriptors[i][c];
          }
      }
    }
  }

  // Smooth random field: a sum of random plane waves at the configured length scale.
  Rng rng = make_rng(opt.seed, 102);
  constexpr int kWaves = 6;
  for (int ch = 0; ch < opt.noise_channels; ++ch) {
    std::array<double, kWaves> kx{}, ky{}, phase{};
    for (int j = 0; j < kWaves; ++j) {
      const double angle = kTwoPi * uniform01(rng);
      const double freq = (0.5 + uniform01(rng)) / opt.noise_scale;
      kx[j] = freq * std::cos(angle);
      ky[j] = freq * std::sin(angle);
      phase[j] = kTwoPi * uniform01(rng);
    }
    for (int v = 0; v < k.height; ++v)
      for (int u = 0; u < k.width; ++u) {
        double s = 0.0;
        for (int j = 0; j < kWaves; ++j) s += std::cos(kx[j] * u + ky[j] * v + phase[j]);
        map.at(v, u, dim * n_scales + ch) = s / std::sqrt(static_cast<double>(kWaves));
      }
  }
  return map;
}

struct LevelWeights {
  Eigen::VectorXd w;
  double b = 0.0;

  friend bool operator==(const LevelWeights& a, const LevelWeights& b) { return a.w == b.w && a.b == b.b; }
};

/// Keypoint log-linear head with one weight vector per recursion.
class KeypointHead {
 public:
  KeypointHead(std::vector<Eigen::Vector3d> keypoints, CameraIntrinsics intrinsics, FeatureMap map, int n_levels,
               std::optional<Eigen::VectorXd> sentinel = std::nullopt)
      : keypoints_(std::move(keypoints)), intrinsics_(intrinsics), map_(std::move(map)) {
    if (keypoints_.empty()) throw ConfigError("keypoint head needs at least one keypoint");
    if (n_levels < 1) throw ConfigError("keypoint head needs at least one level");
    if (map_.width() != intrinsics_.width || map_.height() != intrinsics_.height)
      throw ConfigError("feature map size must match the camera image size");
    sentinel_ = sentinel.value_or(Eigen::VectorXd::Constant(map_.channels(), -1.0));
    if (sentinel_.size() != map_.channels()) throw ConfigError("sentinel size must equal the channel count");
    levels_.assign(n_levels, LevelWeights{Eigen::VectorXd::Zero(feature_dim()), 0.0});
  }

  int n_keypoints() const { return static_cast<int>(keypoints_.size()); }
  int channels() const { return map_.channels(); }
  int feature_dim() const { return n_keypoints() * channels(); }
  int n_levels() const { return static_cast<int>(levels_.size()); }
  const std::vector<Eigen::Vector3d>& keypoints() const { return keypoints_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  const FeatureMap& feature_map() const { return map_; }
  const Eigen::VectorXd& sentinel() const { return sentinel_; }

  const LevelWeights& weights(int level) const { return levels_.at(check_level(level)); }
  LevelWeights& weights(int level) { return levels_.at(check_level(level)); }
  const std::vector<LevelWeights>& all_weights() const { return levels_; }
  void set_weights(std::vector<LevelWeights> w) {
    if (static_cast<int>(w.size()) != n_levels()) throw ConfigError("weights level count mismatch");
    for (const auto& l : w)
      if (l.w.size() != feature_dim()) throw ConfigError("weights feature dimension mismatch");
    levels_ = std::move(w);
  }

  /// φ(pose): per keypoint, the sampled features (or the sentinel), optionally
  /// scaled by a per-keypoint dropout multiplier.
  void features(const Pose& pose, std::span<double> out, std::span<const double> keypoint_scale = {}) const {
    const int c = channels();
    for (int i = 0; i < n_keypoints(); ++i) {
      const Projection p = project_point(pose.apply(keypoints_[i]), intrinsics_);
      std::span<double> block = out.subspan(static_cast<std::size_t>(i) * c, c);
      if (p.in_image)
        map_.sample(p.uv, block);
      else
        std::copy(sentinel_.data(), sentinel_.data() + c, block.begin());
      if (!keypoint_scale.empty())
        for (double& v : block) v *= keypoint_scale[i];
    }
  }

  double score_features(int level, std::span<const double> phi) const {
    const LevelWeights& lw = weights(level);
    return Eigen::Map<const Eigen::VectorXd>(phi.data(), static_cast<Eigen::Index>(phi.size())).dot(lw.w) + lw.b;
  }

  double score(int level, const Pose& pose) const {
    std::vector<double> phi(feature_dim());
    features(pose, phi);
    return score_features(level, phi);
  }

 private:
  int check_level(int level) const {
    if (level < 0 || level >= n_levels()) throw std::domain_error("keypoint head has no level " + std::to_string(level));
    return level;
  }

  std::vector<Eigen::Vector3d> keypoints_;
  CameraIntrinsics intrinsics_;
  FeatureMap map_;
  Eigen::VectorXd sentinel_;
  std::vector<LevelWeights> levels_;
};

/// Element ↦ object-to-camera pose; rotation-only elements use a fixed translation.
inline Pose as_pose(const Pose& x, const Eigen::Vector3d&) { return x; }
inline Pose as_pose(const UnitQuaternion& q, const Eigen::Vector3d& t) { return Pose{q, t}; }

template <class Element>
class KeypointScorer final : public PoseScorer<Element> {
 public:
  KeypointScorer(const KeypointHead& head, Eigen::Vector3d translation = Eigen::Vector3d::Zero())
      : head_(head), translation_(std::move(translation)) {}

  void score(int recursion, std::span<const Element> poses, std::span<double> out) const override {
    std::vector<double> phi(head_.feature_dim());
    for (std::size_t i = 0; i < poses.size(); ++i) {
      head_.features(as_pose(poses[i], translation_), phi);
      out[i] = head_.score_features(recursion, phi);
    }
  }

  std::optional<int> max_recursion() const override { return head_.n_levels() - 1; }

  void features(const Element& x, std::span<double> out, std::span<const double> keypoint_scale = {}) const {
    head_.features(as_pose(x, translation_), out, keypoint_scale);
  }

  const KeypointHead& head() const { return head_; }
  const Eigen::Vector3d& translation() const { return translation_; }

 private:
  const KeypointHead& head_;
  Eigen::Vector3d translation_;
};

/// Per-view scores of world-frame poses averaged across views; each view
/// scores T_cam_world · x in its own camera frame.
class FusedScorer final : public PoseScorer<Pose> {
 public:
  struct View {
    const PoseScorer<Pose>* scorer;
    Pose cam_from_world;
  };

  explicit FusedScorer(std::vector<View> views) : views_(std::move(views)) {
    if (views_.empty()) throw ConfigError("multi-view fusion needs at least one view");
  }

  void score(int recursion, std::span<const Pose> poses, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<Pose> local(poses.size());
    std::vector<double> s(poses.size());
    for (const View& v : views_) {
      for (std::size_t i = 0; i < poses.size(); ++i) local[i] = v.cam_from_world * poses[i];
      v.scorer->score(recursion, local, s);
      for (std::size_t i = 0; i < poses.size(); ++i) out[i] += s[i];
    }
    const double n = static_cast<double>(views_.size());
    for (double& o : out) o /= n;
  }

  std::optional<int> max_recursion() const override {
    std::optional<int> m;
    for (const View& v : views_)
      if (const auto r = v.scorer->max_recursion()) m = m ? std::min(*m, *r) : *r;
    return m;
  }

 private:
  std::vector<View> views_;
};

}  // namespace spyro
