#pragma once

// Run configuration: a YAML file with nested sections. Unknown keys and
// malformed values are ConfigErrors carrying the file name and line.

#include <array>
#include <initializer_list>
#include <sstream>
#include <string_view>

#include <yaml-cpp/yaml.h>

#include "spyro/training.hpp"

namespace spyro {

using Vec3 = std::array<double, 3>;
using Quat4 = std::array<double, 4>;  // w, x, y, z

inline Eigen::Vector3d to_eigen(const Vec3& v) { return {v[0], v[1], v[2]}; }
inline UnitQuaternion to_rotation(const Quat4& q) { return {q[0], q[1], q[2], q[3]}; }

struct GridSection {
  std::string space = "so3";  // so3 | se3
  Vec3 t_hat{0.0, 0.0, 0.5};
  std::string bounds = "detection";  // detection | cubic
  double diameter = 0.1;             // detection bounds
  double side = 0.2;                 // cubic bounds
  friend bool operator==(const GridSection&, const GridSection&) = default;
};

struct ModeSpec {
  Quat4 rotation{1.0, 0.0, 0.0, 0.0};
  double kappa = 100.0;
  Vec3 position{0.0, 0.0, 0.5};
  double position_std = 0.0;
  double weight = 1.0;
  friend bool operator==(const ModeSpec&, const ModeSpec&) = default;
};

struct KeypointSpec {
  std::string source = "cube";  // cube | fps | file
  std::string path;             // point cloud for fps / file
  int count = 16;               // fps
  double diameter = 0.1;        // cube
  friend bool operator==(const KeypointSpec&, const KeypointSpec&) = default;
};

struct ModelSection {
  std::string type = "analytic";  // analytic | uniform | keypoint
  std::vector<ModeSpec> modes{ModeSpec{}};
  std::vector<Quat4> symmetry;
  Vec3 translation{0.0, 0.0, 0.5};  // object position for rotation-only keypoint models
  int quadrature_refine = 0;        // analytic: 0 scores cell centers
  CameraIntrinsics camera;
  KeypointSpec keypoints;
  SyntheticMapOptions features;
  std::string weights;
  friend bool operator==(const ModelSection&, const ModelSection&) = default;
};

struct InferenceSection {
  int k = 64;
  int depth = 4;
  bool has_true_pose = false;
  Quat4 true_rotation{1.0, 0.0, 0.0, 0.0};
  Vec3 true_position{0.0, 0.0, 0.5};
  friend bool operator==(const InferenceSection&, const InferenceSection&) = default;
};

struct IoSection {
  std::string belief = "belief.spyb";
  std::string weights = "weights.yaml";
  std::string report = "report.csv";
  std::string image = "marginal.ppm";
  friend bool operator==(const IoSection&, const IoSection&) = default;
};

struct PlotSection {
  int recursion = 3;
  int width = 512;
  int height = 256;
  bool grayscale = false;
  Vec3 axis{1.0, 0.0, 0.0};
  friend bool operator==(const PlotSection&, const PlotSection&) = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  GridSection grid;
  ModelSection model;
  InferenceSection inference;
  TrainConfig training;  // training.seed mirrors seed
  IoSection io;
  PlotSection plot;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  bool se3() const { return grid.space == "se3"; }
  void validate() const;
};

namespace config_detail {

class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& at, const std::string& msg) const {
    const YAML::Mark m = at.Mark();
    std::string where = source_;
    if (m.line >= 0) where += ":" + std::to_string(m.line + 1);
    throw ConfigError(where + ": " + msg);
  }

  void require_map(const YAML::Node& n, std::string_view section) const {
    if (!n.IsMap()) fail(n, std::string(section) + " must be a mapping");
  }

  void keys(const YAML::Node& n, std::string_view section, std::initializer_list<std::string_view> allowed) const {
    require_map(n, section);
    for (const auto& kv : n) {
      const std::string key = kv.first.as<std::string>();
      bool ok = false;
      for (std::string_view a : allowed) ok = ok || key == a;
      if (!ok) fail(kv.first, "unknown key '" + key + "' in " + std::string(section));
    }
  }

  template <class T>
  void get(const YAML::Node& n, const char* key, T& out) const {
    const YAML::Node v = n[key];
    if (!v) return;
    try {
      out = v.as<T>();
    } catch (const YAML::Exception&) {
      fail(v, std::string("invalid value for '") + key + "'");
    }
  }

  template <std::size_t N>
  void read(const YAML::Node& v, const std::string& what, std::array<double, N>& out) const {
    if (!v.IsSequence() || v.size() != N) fail(v, "'" + what + "' must be a list of " + std::to_string(N) + " numbers");
    for (std::size_t i = 0; i < N; ++i) {
      try {
        out[i] = v[i].as<double>();
      } catch (const YAML::Exception&) {
        fail(v[i], "invalid number in '" + what + "'");
      }
    }
  }

  template <std::size_t N>
  void get(const YAML::Node& n, const char* key, std::array<double, N>& out) const {
    if (const YAML::Node v = n[key]) read(v, key, out);
  }

  void get(const YAML::Node& n, const char* key, std::vector<double>& out) const {
    const YAML::Node v = n[key];
    if (!v) return;
    if (!v.IsSequence()) fail(v, std::string("'") + key + "' must be a list");
    out.clear();
    for (const auto& e : v) {
      try {
        out.push_back(e.as<double>());
      } catch (const YAML::Exception&) {
        fail(e, std::string("invalid number in '") + key + "'");
      }
    }
  }

  template <class T>
  void one_of(const YAML::Node& n, const char* key, const T& value, std::initializer_list<std::string_view> options) const {
    for (std::string_view o : options)
      if (value == o) return;
    fail(n[key] ? n[key] : n, std::string("invalid value '") + value + "' for '" + key + "'");
  }

 private:
  std::string source_;
};

inline ModeSpec read_mode(const Reader& in, const YAML::Node& n) {
  in.keys(n, "model.modes entry", {"rotation", "kappa", "position", "position_std", "weight"});
  ModeSpec m;
  in.get(n, "rotation", m.rotation);
  in.get(n, "kappa", m.kappa);
  in.get(n, "position", m.position);
  in.get(n, "position_std", m.position_std);
  in.get(n, "weight", m.weight);
  return m;
}

inline void read_model(const Reader& in, const YAML::Node& n, ModelSection& m) {
  in.keys(n, "model", {"type", "modes", "symmetry", "translation", "quadrature_refine", "camera", "keypoints", "features", "weights"});
  in.get(n, "type", m.type);
  in.one_of(n, "type", m.type, {"analytic", "uniform", "keypoint"});
  if (const YAML::Node modes = n["modes"]) {
    if (!modes.IsSequence()) in.fail(modes, "'modes' must be a list");
    m.modes.clear();
    for (const auto& e : modes) m.modes.push_back(read_mode(in, e));
  }
  if (const YAML::Node sym = n["symmetry"]) {
    if (!sym.IsSequence()) in.fail(sym, "'symmetry' must be a list of quaternions");
    m.symmetry.clear();
    for (const auto& e : sym) {
      Quat4 q{};
      in.read(e, "symmetry", q);
      m.symmetry.push_back(q);
    }
  }
  in.get(n, "translation", m.translation);
  in.get(n, "quadrature_refine", m.quadrature_refine);
  in.get(n, "weights", m.weights);
  if (const YAML::Node c = n["camera"]) {
    in.keys(c, "model.camera", {"fx", "fy", "cx", "cy", "width", "height"});
    in.get(c, "fx", m.camera.fx);
    in.get(c, "fy", m.camera.fy);
    in.get(c, "cx", m.camera.cx);
    in.get(c, "cy", m.camera.cy);
    in.get(c, "width", m.camera.width);
    in.get(c, "height", m.camera.height);
  }
  if (const YAML::Node k = n["keypoints"]) {
    in.keys(k, "model.keypoints", {"source", "path", "count", "diameter"});
    in.get(k, "source", m.keypoints.source);
    in.one_of(k, "source", m.keypoints.source, {"cube", "fps", "file"});
    in.get(k, "path", m.keypoints.path);
    in.get(k, "count", m.keypoints.count);
    in.get(k, "diameter", m.keypoints.diameter);
  }
  if (const YAML::Node f = n["features"]) {
    in.keys(f, "model.features", {"descriptor_dim", "heat_sigmas", "noise_channels", "noise_scale", "seed"});
    in.get(f, "descriptor_dim", m.features.descriptor_dim);
    in.get(f, "heat_sigmas", m.features.heat_sigmas);
    in.get(f, "noise_channels", m.features.noise_channels);
    in.get(f, "noise_scale", m.features.noise_scale);
    in.get(f, "seed", m.features.seed);
  }
}

inline void read_training(const Reader& in, const YAML::Node& n, TrainConfig& t) {
  in.keys(n, "training", {"iterations", "batch_size", "learning_rate", "negatives", "trajectories", "importance_sampling",
                          "literal_is_scale", "jitter", "jitter_offset", "detection_sigma", "dropout", "depth",
                          "eval_every", "eval_samples", "eval_k"});
  in.get(n, "iterations", t.iterations);
  in.get(n, "batch_size", t.batch_size);
  in.get(n, "learning_rate", t.learning_rate);
  in.get(n, "negatives", t.negatives);
  in.get(n, "trajectories", t.trajectories);
  in.get(n, "importance_sampling", t.importance_sampling);
  in.get(n, "literal_is_scale", t.literal_is_scale);
  in.get(n, "jitter", t.jitter);
  in.get(n, "jitter_offset", t.jitter_offset);
  in.get(n, "detection_sigma", t.detection_sigma);
  in.get(n, "dropout", t.dropout);
  in.get(n, "depth", t.depth);
  in.get(n, "eval_every", t.eval_every);
  in.get(n, "eval_samples", t.eval_samples);
  in.get(n, "eval_k", t.eval_k);
}

}  // namespace config_detail

inline void RunConfig::validate() const {
  if (grid.space != "so3" && grid.space != "se3") throw ConfigError("grid.space must be so3 or se3");
  if (!(grid.diameter > 0.0) || !(grid.side > 0.0)) throw ConfigError("grid extents must be positive");
  if (grid.bounds == "detection" && !(grid.t_hat[2] > 0.0)) throw ConfigError("grid.t_hat must lie in front of the camera");
  if (model.type != "uniform" && model.modes.empty()) throw ConfigError("model.modes must not be empty");
  if (model.quadrature_refine < 0) throw ConfigError("model.quadrature_refine must be >= 0");
  if (model.keypoints.source != "cube" && model.keypoints.path.empty())
    throw ConfigError("model.keypoints.path is required for source " + model.keypoints.source);
  if (model.keypoints.count < 1) throw ConfigError("model.keypoints.count must be >= 1");
  if (model.features.descriptor_dim < 1 || model.features.heat_sigmas.empty() || model.features.noise_channels < 0)
    throw ConfigError("invalid model.features");
  if (model.camera.width < 1 || model.camera.height < 1) throw ConfigError("camera size must be positive");
  if (inference.k < 1) throw ConfigError("inference.k must be >= 1");
  const int max_depth = se3() ? Se3Pyramid::kMaxRecursion : So3Pyramid::kMaxRecursion;
  if (inference.depth < 0 || inference.depth > max_depth)
    throw ConfigError("inference.depth must be in [0, " + std::to_string(max_depth) + "]");
  if (training.depth > max_depth) throw ConfigError("training.depth exceeds the grid's maximum recursion");
  if (plot.width < 8 || plot.height < 4) throw ConfigError("plot size too small");
  if (plot.recursion < 0 || plot.recursion > So3Pyramid::kMaxRecursion) throw ConfigError("plot.recursion out of range");
  if (to_eigen(plot.axis).norm() == 0.0) throw ConfigError("plot.axis must be nonzero");
  training.validate();
}

inline RunConfig parse_config(const YAML::Node& root, const std::string& source = "<config>") {
  using config_detail::Reader;
  const Reader in(source);
  RunConfig c;
  if (!root || root.IsNull()) return c;
  in.keys(root, "top level", {"seed", "grid", "model", "inference", "training", "io", "plot"});
  in.get(root, "seed", c.seed);
  if (const YAML::Node g = root["grid"]) {
    in.keys(g, "grid", {"space", "t_hat", "bounds", "diameter", "side"});
    in.get(g, "space", c.grid.space);
    in.one_of(g, "space", c.grid.space, {"so3", "se3"});
    in.get(g, "t_hat", c.grid.t_hat);
    in.get(g, "bounds", c.grid.bounds);
    in.one_of(g, "bounds", c.grid.bounds, {"detection", "cubic"});
    in.get(g, "diameter", c.grid.diameter);
    in.get(g, "side", c.grid.side);
  }
  if (const YAML::Node m = root["model"]) config_detail::read_model(in, m, c.model);
  if (const YAML::Node i = root["inference"]) {
    in.keys(i, "inference", {"k", "depth", "true_rotation", "true_position"});
    in.get(i, "k", c.inference.k);
    in.get(i, "depth", c.inference.depth);
    c.inference.has_true_pose = static_cast<bool>(i["true_rotation"]);
    in.get(i, "true_rotation", c.inference.true_rotation);
    in.get(i, "true_position", c.inference.true_position);
  }
  if (const YAML::Node t = root["training"]) config_detail::read_training(in, t, c.training);
  c.training.seed = c.seed;  // one run seed drives every stochastic step
  if (const YAML::Node o = root["io"]) {
    in.keys(o, "io", {"belief", "weights", "report", "image"});
    in.get(o, "belief", c.io.belief);
    in.get(o, "weights", c.io.weights);
    in.get(o, "report", c.io.report);
    in.get(o, "image", c.io.image);
  }
  if (const YAML::Node p = root["plot"]) {
    in.keys(p, "plot", {"recursion", "width", "height", "grayscale", "axis"});
    in.get(p, "recursion", c.plot.recursion);
    in.get(p, "width", c.plot.width);
    in.get(p, "height", c.plot.height);
    in.get(p, "grayscale", c.plot.grayscale);
    in.get(p, "axis", c.plot.axis);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

inline RunConfig parse_config_string(const std::string& text, const std::string& source = "<config>") {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  return parse_config(root, source);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream text;
  text << file.rdbuf();
  return parse_config_string(text.str(), path);
}

namespace config_detail {

template <std::size_t N>
void emit(YAML::Emitter& out, const char* key, const std::array<double, N>& v) {
  out << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (double x : v) out << x;
  out << YAML::EndSeq;
}

template <class T>
void emit(YAML::Emitter& out, const char* key, const T& v) {
  out << YAML::Key << key << YAML::Value << v;
}

}  // namespace config_detail

inline std::string to_yaml(const RunConfig& c) {
  using config_detail::emit;
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  emit(out, "seed", c.seed);

  out << YAML::Key << "grid" << YAML::Value << YAML::BeginMap;
  emit(out, "space", c.grid.space);
  emit(out, "t_hat", c.grid.t_hat);
  emit(out, "bounds", c.grid.bounds);
  emit(out, "diameter", c.grid.diameter);
  emit(out, "side", c.grid.side);
  out << YAML::EndMap;

  const ModelSection& m = c.model;
  out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  emit(out, "type", m.type);
  out << YAML::Key << "modes" << YAML::Value << YAML::BeginSeq;
  for (const ModeSpec& s : m.modes) {
    out << YAML::BeginMap;
    emit(out, "rotation", s.rotation);
    emit(out, "kappa", s.kappa);
    emit(out, "position", s.position);
    emit(out, "position_std", s.position_std);
    emit(out, "weight", s.weight);
    out << YAML::EndMap;
  }
  out << YAML::EndSeq;
  out << YAML::Key << "symmetry" << YAML::Value << YAML::BeginSeq;
  for (const Quat4& q : m.symmetry) {
    out << YAML::Flow << YAML::BeginSeq;
    for (double x : q) out << x;
    out << YAML::EndSeq;
  }
  out << YAML::EndSeq;
  emit(out, "translation", m.translation);
  emit(out, "quadrature_refine", m.quadrature_refine);
  out << YAML::Key << "camera" << YAML::Value << YAML::BeginMap;
  emit(out, "fx", m.camera.fx);
  emit(out, "fy", m.camera.fy);
  emit(out, "cx", m.camera.cx);
  emit(out, "cy", m.camera.cy);
  emit(out, "width", m.camera.width);
  emit(out, "height", m.camera.height);
  out << YAML::EndMap;
  out << YAML::Key << "keypoints" << YAML::Value << YAML::BeginMap;
  emit(out, "source", m.keypoints.source);
  emit(out, "path", m.keypoints.path);
  emit(out, "count", m.keypoints.count);
  emit(out, "diameter", m.keypoints.diameter);
  out << YAML::EndMap;
  out << YAML::Key << "features" << YAML::Value << YAML::BeginMap;
  emit(out, "descriptor_dim", m.features.descriptor_dim);
  out << YAML::Key << "heat_sigmas" << YAML::Value << YAML::Flow << m.features.heat_sigmas;
  emit(out, "noise_channels", m.features.noise_channels);
  emit(out, "noise_scale", m.features.noise_scale);
  emit(out, "seed", m.features.seed);
  out << YAML::EndMap;
  emit(out, "weights", m.weights);
  out << YAML::EndMap;

  out << YAML::Key << "inference" << YAML::Value << YAML::BeginMap;
  emit(out, "k", c.inference.k);
  emit(out, "depth", c.inference.depth);
  if (c.inference.has_true_pose) {
    emit(out, "true_rotation", c.inference.true_rotation);
    emit(out, "true_position", c.inference.true_position);
  }
  out << YAML::EndMap;

  const TrainConfig& t = c.training;
  out << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  emit(out, "iterations", t.iterations);
  emit(out, "batch_size", t.batch_size);
  emit(out, "learning_rate", t.learning_rate);
  emit(out, "negatives", t.negatives);
  emit(out, "trajectories", t.trajectories);
  emit(out, "importance_sampling", t.importance_sampling);
  emit(out, "literal_is_scale", t.literal_is_scale);
  emit(out, "jitter", t.jitter);
  emit(out, "jitter_offset", t.jitter_offset);
  emit(out, "detection_sigma", t.detection_sigma);
  emit(out, "dropout", t.dropout);
  emit(out, "depth", t.depth);
  emit(out, "eval_every", t.eval_every);
  emit(out, "eval_samples", t.eval_samples);
  emit(out, "eval_k", t.eval_k);
  out << YAML::EndMap;

  out << YAML::Key << "io" << YAML::Value << YAML::BeginMap;
  emit(out, "belief", c.io.belief);
  emit(out, "weights", c.io.weights);
  emit(out, "report", c.io.report);
  emit(out, "image", c.io.image);
  out << YAML::EndMap;

  out << YAML::Key << "plot" << YAML::Value << YAML::BeginMap;
  emit(out, "recursion", c.plot.recursion);
  emit(out, "width", c.plot.width);
  emit(out, "height", c.plot.height);
  emit(out, "grayscale", c.plot.grayscale);
  emit(out, "axis", c.plot.axis);
  out << YAML::EndMap;

  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Objects built from a configuration.

inline AnalyticPoseTarget make_target(const RunConfig& c) {
  std::vector<TargetMode> modes;
  for (const ModeSpec& m : c.model.modes)
    modes.push_back({to_rotation(m.rotation), m.kappa, to_eigen(m.position), m.position_std, m.weight});
  std::vector<UnitQuaternion> gens;
  for (const Quat4& q : c.model.symmetry) gens.push_back(to_rotation(q));
  return AnalyticPoseTarget(modes, gens);
}

inline So3Pyramid make_so3_space(const RunConfig&) { return So3Pyramid{}; }

inline Se3Pyramid make_se3_space(const RunConfig& c) {
  const Eigen::Vector3d t_hat = to_eigen(c.grid.t_hat);
  const BoundsMatrix a = c.grid.bounds == "cubic" ? BoundsMatrix::cubic(c.grid.side)
                                                  : BoundsMatrix::from_detection(t_hat, c.grid.diameter);
  return Se3Pyramid(So3Grid{}, R3Grid(a, t_hat));
}

inline std::vector<Eigen::Vector3d> make_keypoints(const RunConfig& c) {
  const KeypointSpec& k = c.model.keypoints;
  if (k.source == "cube") return cube_keypoints(k.diameter);
  const auto cloud = load_xyz(k.path);
  if (k.source == "file") return cloud;
  return fps_keypoints(cloud, k.count);
}

/// Keypoint head over the synthetic feature map of the configured target;
/// weights come from model.weights when set, otherwise zero.
inline KeypointHead make_head(const RunConfig& c, const AnalyticPoseTarget& target, int n_levels) {
  const auto kp = make_keypoints(c);
  FeatureMap map = synthetic_feature_map(target, kp, c.model.camera, c.model.features, to_eigen(c.model.translation));
  KeypointHead head(kp, c.model.camera, std::move(map), n_levels);
  if (!c.model.weights.empty()) {
    auto w = load_weights(c.model.weights);
    if (static_cast<int>(w.size()) < n_levels)
      throw ConfigError(c.model.weights + ": has " + std::to_string(w.size()) + " levels, need " + std::to_string(n_levels));
    w.resize(n_levels);
    head.set_weights(std::move(w));
  }
  return head;
}

}  // namespace spyro
