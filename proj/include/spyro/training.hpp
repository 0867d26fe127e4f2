#pragma once

// Desk-scale training of per-level keypoint heads against an analytic target
// with the InfoNCE loss, using uniform or pyramid importance-sampled negatives.

#include <fstream>
#include <unordered_map>

#include <yaml-cpp/yaml.h>

#include "spyro/inference.hpp"

namespace spyro {

struct TrainConfig {
  int iterations = 2000;
  int batch_size = 16;
  double learning_rate = 0.02;
  std::size_t negatives = 1024;   // uniform mode, per level
  std::size_t trajectories = 128; // importance mode
  bool importance_sampling = true;
  // Literal: negatives enter as Σ f/p̄ over the drawn samples. Matched: the
  // same estimate rescaled by N/|level| so it matches the uniform noise ratio.
  bool literal_is_scale = true;
  bool jitter = true;
  double jitter_offset = 0.0;     // fraction of a recursion-1 position cell
  double detection_sigma = 1.0 / 6.0;
  double dropout = 0.0;
  int depth = 4;
  int eval_every = 0;             // 0: evaluate only before and after training
  int eval_samples = 200;
  int eval_k = 64;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    if (iterations < 0) throw ConfigError("training.iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("training.batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("training.learning_rate must be positive");
    if (negatives < 1) throw ConfigError("training.negatives must be >= 1");
    if (importance_sampling && trajectories < 1) throw ConfigError("importance sampling needs trajectories >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("training.dropout must be in [0, 1)");
    if (!(jitter_offset >= 0.0 && jitter_offset <= 1.0)) throw ConfigError("jitter offset must be in [0, 1]");
    if (!(detection_sigma > 0.0)) throw ConfigError("detection sigma must be positive");
    if (depth < 0) throw ConfigError("training depth must be >= 0");
    if (eval_every < 0 || eval_samples < 1 || eval_k < 1) throw ConfigError("invalid evaluation settings");
  }
};

struct EvalResult {
  std::vector<double> level_ll;  // mean log p̂ of the true cell, per recursion
  double continuous_ll = 0.0;    // mean log density at the true pose
};

struct TrainReport {
  struct Row {
    int step;
    int level;
    double ll;
  };
  std::vector<Row> rows;
  std::vector<std::pair<int, EvalResult>> evaluations;
  std::size_t samples = 0;
  std::size_t skipped_outside = 0;
  std::vector<double> mean_loss;  // per level, over the last step

  const EvalResult& final_eval() const { return evaluations.back().second; }
  double skipped_fraction() const { return samples ? static_cast<double>(skipped_outside) / samples : 0.0; }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write report '" + path + "'");
    out << "step,level,ll\n";
    out.precision(17);
    for (const Row& r : rows) out << r.step << ',' << r.level << ',' << r.ll << '\n';
  }
};

// Per-sample grids: random frames when jitter is on; for SE(3) the grid is
// anchored at a simulated detection t̂ = t − A·ẽ with ẽ truncated normal.
inline So3Pyramid training_space(const So3Pyramid& base, const UnitQuaternion&, const TrainConfig& c, Rng& rng) {
  if (!c.jitter) return base;
  return So3Pyramid(So3Grid(So3GridFrame{random_so3_frame(rng).offset_rotation * base.rotation_grid().frame().offset_rotation}));
}

inline Se3Pyramid training_space(const Se3Pyramid& base, const Pose& x, const TrainConfig& c, Rng& rng) {
  const BoundsMatrix& a = base.position_grid().bounds();
  const Eigen::Vector3d t_hat = x.translation - a.apply(sample_detection_error(c.detection_sigma, rng));
  So3GridFrame rf = base.rotation_grid().frame();
  R3GridFrame pf = base.position_grid().frame();
  if (c.jitter) {
    rf = random_so3_frame(rng);
    pf = random_r3_frame(rng, c.jitter_offset);
  }
  return Se3Pyramid(So3Grid(rf), R3Grid(a, t_hat, pf));
}

inline typename So3Pyramid::Element sample_target(const AnalyticPoseTarget& t, const So3Pyramid&, Rng& rng) {
  return t.sample_rotation(rng);
}
inline typename Se3Pyramid::Element sample_target(const AnalyticPoseTarget& t, const Se3Pyramid&, Rng& rng) {
  return t.sample(rng);
}

/// Scores cells by the keypoint head and keeps each cell's features for the gradient.
template <PyramidSpace Space>
class FeatureCachingScorer final : public CellScorer<Space> {
 public:
  FeatureCachingScorer(const Space& space, const KeypointScorer<typename Space::Element>& scorer,
                       std::span<const double> keypoint_scale, int depth)
      : space_(space), scorer_(scorer), scale_(keypoint_scale.begin(), keypoint_scale.end()), index_(depth + 1) {}

  void score(int r, std::span<const CellIndex> cells, std::span<double> out) const override {
    for (std::size_t i = 0; i < cells.size(); ++i) out[i] = scorer_.head().score_features(r, features(r, cells[i]));
  }

  std::optional<int> max_recursion() const override { return static_cast<int>(index_.size()) - 1; }

  std::span<const double> features(int r, CellIndex c) const {
    const std::size_t dim = static_cast<std::size_t>(scorer_.head().feature_dim());
    auto [it, fresh] = index_.at(r).try_emplace(c, store_.size() / std::max<std::size_t>(dim, 1));
    if (fresh) {
      store_.resize(store_.size() + dim);
      scorer_.features(space_.center(r, c), std::span<double>(store_.data() + store_.size() - dim, dim), scale_);
    }
    return {store_.data() + it->second * dim, dim};
  }

 private:
  const Space& space_;
  const KeypointScorer<typename Space::Element>& scorer_;
  std::vector<double> scale_;
  mutable std::vector<std::unordered_map<CellIndex, std::size_t>> index_;
  mutable std::vector<double> store_;
};

/// Held-out evaluation on the canonical grid: a single sparse inference (the
/// image context is fixed) queried at fresh target samples.
template <PyramidSpace Space>
EvalResult evaluate(const KeypointScorer<typename Space::Element>& scorer, const AnalyticPoseTarget& target,
                    const Space& space, int depth, int k, int n_samples, Rng& rng) {
  const CenterScorer<Space> cells(space, scorer);
  const SparseBelief belief = sparse_infer(cells, k, depth);
  EvalResult out;
  out.level_ll.assign(depth + 1, 0.0);
  int used = 0;
  for (int i = 0; i < n_samples; ++i) {
    const auto x = sample_target(target, space, rng);
    const double c = continuous_likelihood(belief, space, x);
    if (!std::isfinite(c)) continue;  // outside the canonical position bounds
    ++used;
    out.continuous_ll += c;
    for (int r = 0; r <= depth; ++r) out.level_ll[r] += cell_log_likelihood(belief, space, x, r);
  }
  if (used == 0) throw NumericError("no held-out sample fell inside the grid");
  out.continuous_ll /= used;
  for (double& v : out.level_ll) v /= used;
  return out;
}

template <PyramidSpace Space>
TrainReport train(KeypointHead& head, const AnalyticPoseTarget& target, const Space& base, const TrainConfig& cfg,
                  const Eigen::Vector3d& translation = Eigen::Vector3d::Zero()) {
  cfg.validate();
  if (head.n_levels() < cfg.depth + 1) throw ConfigError("keypoint head has fewer levels than the training depth");
  using Element = typename Space::Element;
  const KeypointScorer<Element> scorer(head, translation);
  Rng rng = make_rng(cfg.seed, 1);
  Rng eval_rng = make_rng(cfg.seed, 2);
  TrainReport report;
  const int dim = head.feature_dim();

  auto run_eval = [&](int step) {
    const EvalResult e = evaluate(scorer, target, base, cfg.depth, cfg.eval_k, cfg.eval_samples, eval_rng);
    for (int r = 0; r <= cfg.depth; ++r) report.rows.push_back({step, r, e.level_ll[r]});
    report.evaluations.push_back({step, e});
  };
  run_eval(0);

  std::vector<Eigen::VectorXd> grad(cfg.depth + 1, Eigen::VectorXd(dim));
  std::vector<double> grad_b(cfg.depth + 1);
  std::vector<double> keypoint_scale(head.n_keypoints(), 1.0);
  const double nominal_is = static_cast<double>(cfg.trajectories * Space::kBranching);

  for (int step = 1; step <= cfg.iterations; ++step) {
    for (auto& g : grad) g.setZero();
    std::fill(grad_b.begin(), grad_b.end(), 0.0);
    std::vector<double> loss_sum(cfg.depth + 1, 0.0);
    int used = 0;
    for (int item = 0; item < cfg.batch_size; ++item) {
      ++report.samples;
      const Element x = sample_target(target, base, rng);
      const Space space = training_space(base, x, cfg, rng);
      std::vector<CellIndex> positive(cfg.depth + 1);
      bool inside = true;
      for (int r = 0; r <= cfg.depth && inside; ++r) {
        const auto c = space.lookup(x, r);
        if (c) positive[r] = *c;
        inside = c.has_value();
      }
      if (!inside) {
        ++report.skipped_outside;
        continue;
      }
      ++used;
      if (cfg.dropout > 0.0)
        for (double& s : keypoint_scale) s = uniform01(rng) < cfg.dropout ? 0.0 : 1.0 / (1.0 - cfg.dropout);
      const FeatureCachingScorer<Space> cells(space, scorer, keypoint_scale, cfg.depth);

      std::vector<NegativeLevel> negatives;
      if (cfg.importance_sampling) {
        negatives = sample_trajectories(cells, cfg.trajectories, cfg.depth, rng).levels;
      } else {
        for (int r = 0; r <= cfg.depth; ++r) negatives.push_back(sample_uniform_negatives(cells, r, cfg.negatives, rng));
      }

      for (int r = 0; r <= cfg.depth; ++r) {
        const NegativeLevel& neg = negatives[r];
        const double s_pos = cells.score_one(r, positive[r]);
        double nominal = static_cast<double>(cfg.negatives);
        if (cfg.importance_sampling)
          nominal = cfg.literal_is_scale ? nominal_is * static_cast<double>(Space::level_size(r)) : nominal_is;
        const auto w = infonce_weights<Space>(neg, nominal);
        const InfoNceResult res = infonce(s_pos, neg.scores, w);
        loss_sum[r] += res.loss;
        const auto phi_pos = cells.features(r, positive[r]);
        grad[r] += res.grad_positive * Eigen::Map<const Eigen::VectorXd>(phi_pos.data(), dim);
        grad_b[r] += res.grad_positive;
        for (std::size_t j = 0; j < neg.cells.size(); ++j) {
          if (res.grad_negatives[j] == 0.0) continue;
          const auto phi = cells.features(r, neg.cells[j]);
          grad[r] += res.grad_negatives[j] * Eigen::Map<const Eigen::VectorXd>(phi.data(), dim);
          grad_b[r] += res.grad_negatives[j];
        }
      }
    }
    if (used > 0) {
      report.mean_loss.assign(cfg.depth + 1, 0.0);
      for (int r = 0; r <= cfg.depth; ++r) {
        LevelWeights& lw = head.weights(r);
        lw.w -= (cfg.learning_rate / used) * grad[r];
        lw.b -= cfg.learning_rate / used * grad_b[r];
        report.mean_loss[r] = loss_sum[r] / used;
        if (!lw.w.allFinite() || !std::isfinite(lw.b))
          throw NumericError("training diverged at step " + std::to_string(step) + ", level " + std::to_string(r));
      }
    }
    if (cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.iterations) run_eval(step);
  }
  if (cfg.iterations > 0) run_eval(cfg.iterations);
  return report;
}

// ---------------------------------------------------------------------------
// Weights files (YAML): levels: [{bias: b, w: [...]}, ...]

inline void save_weights(const std::string& path, const std::vector<LevelWeights>& levels) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap << YAML::Key << "feature_dim" << YAML::Value << (levels.empty() ? 0 : levels[0].w.size());
  out << YAML::Key << "levels" << YAML::Value << YAML::BeginSeq;
  for (const LevelWeights& l : levels) {
    out << YAML::BeginMap << YAML::Key << "bias" << YAML::Value << l.b << YAML::Key << "w" << YAML::Value << YAML::Flow
        << YAML::BeginSeq;
    for (Eigen::Index i = 0; i < l.w.size(); ++i) out << l.w[i];
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  std::ofstream file(path);
  if (!file) throw ConfigError("cannot write weights '" + path + "'");
  file << out.c_str() << '\n';
}

inline std::vector<LevelWeights> load_weights(const std::string& path) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(path);
  } catch (const YAML::Exception& e) {
    throw ConfigError("cannot read weights '" + path + "': " + e.what());
  }
  std::vector<LevelWeights> out;
  try {
    const auto dim = root["feature_dim"].as<long>();
    for (const auto& lvl : root["levels"]) {
      LevelWeights l;
      l.b = lvl["bias"].as<double>();
      const auto w = lvl["w"].as<std::vector<double>>();
      if (static_cast<long>(w.size()) != dim) throw ConfigError(path + ": weight vector length mismatch");
      l.w = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
      out.push_back(std::move(l));
    }
  } catch (const YAML::Exception& e) {
    throw ConfigError(path + ":" + std::to_string(e.mark.line + 1) + ": " + e.what());
  }
  return out;
}

}  // namespace spyro
