#pragma once

// Unnormalized log-density models over pyramid cells, and the analytic
// mixture targets used as ground truth.

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "spyro/pyramid.hpp"

namespace spyro {

/// Scores poses with the model dedicated to a recursion. Implementations must
/// be deterministic and thread-safe for concurrent const calls.
template <class Element>
class PoseScorer {
 public:
  virtual ~PoseScorer() = default;
  virtual void score(int recursion, std::span<const Element> poses, std::span<double> out) const = 0;
  /// Deepest supported recursion; nullopt when every level is supported.
  virtual std::optional<int> max_recursion() const { return std::nullopt; }
};

/// Scores cells of a pyramid space.
template <PyramidSpace Space>
class CellScorer {
 public:
  virtual ~CellScorer() = default;
  virtual void score(int recursion, std::span<const CellIndex> cells, std::span<double> out) const = 0;
  virtual std::optional<int> max_recursion() const { return std::nullopt; }

  double score_one(int recursion, CellIndex cell) const {
    double out = 0.0;
    score(recursion, std::span<const CellIndex>(&cell, 1), std::span<double>(&out, 1));
    return out;
  }
};

/// Cell scores from a pose scorer evaluated at cell centers.
template <PyramidSpace Space>
class CenterScorer final : public CellScorer<Space> {
 public:
  using Element = typename Space::Element;

  CenterScorer(const Space& space, const PoseScorer<Element>& scorer) : space_(space), scorer_(scorer) {}

  void score(int recursion, std::span<const CellIndex> cells, std::span<double> out) const override {
    std::vector<Element> centers;
    centers.reserve(cells.size());
    for (CellIndex c : cells) centers.push_back(space_.center(recursion, c));
    scorer_.score(recursion, centers, out);
  }

  std::optional<int> max_recursion() const override { return scorer_.max_recursion(); }

 private:
  const Space& space_;
  const PoseScorer<Element>& scorer_;
};

/// Cell mass proxy: log of the mean pose score exp(s) over the centers of the
/// cell's descendants `refine` levels down. Stands in for a per-level model
/// trained on cell probabilities; used by estimator oracles.
template <PyramidSpace Space>
class QuadratureScorer final : public CellScorer<Space> {
 public:
  using Element = typename Space::Element;

  QuadratureScorer(const Space& space, const PoseScorer<Element>& scorer, int refine = 1)
      : space_(space), scorer_(scorer), refine_(refine) {
    if (refine < 0) throw std::domain_error("quadrature refinement must be >= 0");
  }

  void score(int recursion, std::span<const CellIndex> cells, std::span<double> out) const override {
    CellIndex span = 1;
    for (int i = 0; i < refine_; ++i) span *= Space::kBranching;
    std::vector<Element> pts(span);
    std::vector<double> s(span);
    for (std::size_t c = 0; c < cells.size(); ++c) {
      for (CellIndex j = 0; j < span; ++j) pts[j] = space_.center(recursion + refine_, cells[c] * span + j);
      scorer_.score(recursion, pts, s);
      out[c] = log_sum_exp(s) - std::log(static_cast<double>(span));
    }
  }

  std::optional<int> max_recursion() const override {
    const auto m = scorer_.max_recursion();
    return std::min(m.value_or(Space::kMaxRecursion), Space::kMaxRecursion - refine_);
  }

 private:
  const Space& space_;
  const PoseScorer<Element>& scorer_;
  int refine_;
};

template <class Element>
class UniformScorer final : public PoseScorer<Element> {
 public:
  explicit UniformScorer(double value = 0.0) : value_(value) {}
  void score(int, std::span<const Element>, std::span<double> out) const override {
    std::fill(out.begin(), out.end(), value_);
  }

 private:
  double value_;
};

/// Throws unless the scorer supports recursions 0..depth.
template <class Scorer>
void require_depth(const Scorer& scorer, int depth) {
  const auto max = scorer.max_recursion();
  if (max && *max < depth)
    throw std::domain_error("model supports recursions up to " + std::to_string(*max) + ", need " + std::to_string(depth));
}

// ---------------------------------------------------------------------------
// Analytic targets

/// Isotropic rotation kernel exp(κ·(tr(R₀ᵀR) − 3)/2), normalized over SO(3)
/// with total Haar volume π².
class RotationKernel {
 public:
  explicit RotationKernel(double kappa) : kappa_(kappa) {
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw ConfigError("rotation concentration must be finite and >= 0");
    // In rotation angle ω the Haar element is π(1 − cos ω) dω on [0, π].
    upper_ = kappa > 0.0 ? std::min(kPi, 40.0 / std::sqrt(kappa)) : kPi;
    constexpr int kPanels = 4096;
    omega_.resize(kPanels + 1);
    cdf_.resize(kPanels + 1);
    const double h = upper_ / kPanels;
    auto density = [&](double w) { return kPi * (1.0 - std::cos(w)) * std::exp(kappa_ * (std::cos(w) - 1.0)); };
    cdf_[0] = 0.0;
    omega_[0] = 0.0;
    double prev = density(0.0);
    for (int i = 1; i <= kPanels; ++i) {
      const double a = (i - 1) * h, b = i * h;
      const double mid = density(0.5 * (a + b)), cur = density(b);
      cdf_[i] = cdf_[i - 1] + h / 6.0 * (prev + 4.0 * mid + cur);  // Simpson per panel
      omega_[i] = b;
      prev = cur;
    }
    log_normalizer_ = std::log(cdf_.back());
  }

  double kappa() const { return kappa_; }
  double log_normalizer() const { return log_normalizer_; }

  /// Log density at quaternion dot product d = ⟨q₀, q⟩ (cos ω = 2d² − 1).
  double log_density_from_dot(double d) const { return kappa_ * (2.0 * d * d - 2.0) - log_normalizer_; }

  double log_density(const UnitQuaternion& mode, const UnitQuaternion& q) const {
    return log_density_from_dot(mode.eigen().dot(q.eigen()));
  }

  /// Rotation angle drawn from the kernel's angular marginal.
  double sample_angle(Rng& rng) const {
    const double u = uniform01(rng) * cdf_.back();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), 1, cdf_.size() - 1);
    const double span = cdf_[i] - cdf_[i - 1];
    const double t = span > 0.0 ? (u - cdf_[i - 1]) / span : 0.0;
    return omega_[i - 1] + t * (omega_[i] - omega_[i - 1]);
  }

  UnitQuaternion sample_offset(Rng& rng) const {
    const Eigen::Vector3d axis(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    return UnitQuaternion::from_axis_angle(axis, sample_angle(rng));
  }

 private:
  double kappa_;
  double upper_ = kPi;
  double log_normalizer_ = 0.0;
  std::vector<double> omega_, cdf_;
};

struct TargetMode {
  UnitQuaternion rotation;
  double kappa = 0.0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double position_std = 0.0;  // zero: rotation-only mode
  double weight = 1.0;
};

/// Finite group generated by the given rotations (identity included).
inline std::vector<UnitQuaternion> symmetry_closure(std::span<const UnitQuaternion> generators,
                                                    std::size_t max_order = 1024) {
  std::vector<UnitQuaternion> group{UnitQuaternion::identity()};
  auto contains = [&](const UnitQuaternion& q) {
    return std::any_of(group.begin(), group.end(), [&](const UnitQuaternion& g) { return geodesic_distance(g, q) < 1e-7; });
  };
  for (std::size_t i = 0; i < group.size(); ++i) {
    for (const UnitQuaternion& gen : generators) {
      const UnitQuaternion next = group[i] * gen;
      if (!contains(next)) {
        group.push_back(next);
        if (group.size() > max_order) throw ConfigError("symmetry generators do not form a small finite group");
      }
    }
  }
  return group;
}

/// Mixture of rotation-kernel × isotropic-Gaussian modes, each replicated over
/// a finite object symmetry group (R ~ R·S).
class AnalyticPoseTarget {
 public:
  explicit AnalyticPoseTarget(std::vector<TargetMode> modes, std::span<const UnitQuaternion> symmetry_generators = {})
      : modes_(std::move(modes)), symmetry_(symmetry_closure(symmetry_generators)) {
    if (modes_.empty()) throw ConfigError("analytic target needs at least one mode");
    double total = 0.0;
    for (const TargetMode& m : modes_) {
      if (!(m.weight > 0.0)) throw ConfigError("mode weights must be positive");
      if (!(m.position_std >= 0.0)) throw ConfigError("position std must be >= 0");
      total += m.weight;
    }
    for (TargetMode& m : modes_) {
      m.weight /= total;
      kernels_.emplace_back(m.kappa);
    }
    for (const TargetMode& m : modes_)
      for (const UnitQuaternion& s : symmetry_) copies_.push_back(m.rotation * s);
  }

  const std::vector<TargetMode>& modes() const { return modes_; }
  const std::vector<UnitQuaternion>& symmetry_group() const { return symmetry_; }
  bool has_position() const {
    return std::all_of(modes_.begin(), modes_.end(), [](const TargetMode& m) { return m.position_std > 0.0; });
  }

  /// Rotation marginal, density w.r.t. Haar measure of total volume π².
  double log_pdf(const UnitQuaternion& q) const {
    std::vector<double> terms;
    terms.reserve(copies_.size());
    const double log_group = std::log(static_cast<double>(symmetry_.size()));
    for (std::size_t m = 0; m < modes_.size(); ++m) {
      const double lw = std::log(modes_[m].weight) - log_group;
      for (std::size_t g = 0; g < symmetry_.size(); ++g)
        terms.push_back(lw + kernels_[m].log_density(copies_[m * symmetry_.size() + g], q));
    }
    return log_sum_exp(terms);
  }

  /// Joint pose density; requires position_std > 0 on every mode.
  double log_pdf(const Pose& x) const {
    if (!has_position()) throw std::domain_error("joint density needs a positive position std on every mode");
    std::vector<double> terms;
    terms.reserve(copies_.size());
    const double log_group = std::log(static_cast<double>(symmetry_.size()));
    for (std::size_t m = 0; m < modes_.size(); ++m) {
      const TargetMode& mode = modes_[m];
      const double var = mode.position_std * mode.position_std;
      const double lpos = -0.5 * (x.translation - mode.position).squaredNorm() / var - 1.5 * std::log(kTwoPi * var);
      const double lw = std::log(mode.weight) - log_group + lpos;
      for (std::size_t g = 0; g < symmetry_.size(); ++g)
        terms.push_back(lw + kernels_[m].log_density(copies_[m * symmetry_.size() + g], x.rotation));
    }
    return log_sum_exp(terms);
  }

  UnitQuaternion sample_rotation(Rng& rng) const { return sample_with_mode(rng).rotation; }

  Pose sample(Rng& rng) const { return sample_with_mode(rng); }

  /// Every mode rotation composed with every symmetry element, with its weight.
  std::vector<std::pair<Pose, double>> mode_poses() const {
    std::vector<std::pair<Pose, double>> out;
    for (std::size_t m = 0; m < modes_.size(); ++m)
      for (std::size_t g = 0; g < symmetry_.size(); ++g)
        out.push_back({Pose{copies_[m * symmetry_.size() + g], modes_[m].position},
                       modes_[m].weight / static_cast<double>(symmetry_.size())});
    return out;
  }

 private:
  Pose sample_with_mode(Rng& rng) const {
    double u = uniform01(rng);
    std::size_t m = 0;
    while (m + 1 < modes_.size() && u >= modes_[m].weight) u -= modes_[m++].weight;
    const std::size_t g = static_cast<std::size_t>(uniform_index(rng, symmetry_.size()));
    Pose x;
    x.rotation = copies_[m * symmetry_.size() + g] * kernels_[m].sample_offset(rng);
    x.translation = modes_[m].position;
    if (modes_[m].position_std > 0.0)
      for (int k = 0; k < 3; ++k) x.translation[k] += modes_[m].position_std * standard_normal(rng);
    return x;
  }

  std::vector<TargetMode> modes_;
  std::vector<UnitQuaternion> symmetry_;
  std::vector<RotationKernel> kernels_;
  std::vector<UnitQuaternion> copies_;  // mode-major, symmetry-minor
};

/// Scores poses by the target's log density.
template <class Element>
class AnalyticScorer final : public PoseScorer<Element> {
 public:
  explicit AnalyticScorer(const AnalyticPoseTarget& target) : target_(target) {}
  void score(int, std::span<const Element> poses, std::span<double> out) const override {
    for (std::size_t i = 0; i < poses.size(); ++i) out[i] = target_.log_pdf(poses[i]);
  }

 private:
  const AnalyticPoseTarget& target_;
};

struct CellProbability {
  double log_prob;
  double prob;
  double standard_error;  // of prob
};

/// Monte-Carlo cell probability: mean density over uniform samples × volume.
template <PyramidSpace Space>
CellProbability analytic_cell_log_prob(const AnalyticPoseTarget& target, const Space& space, int recursion,
                                       CellIndex cell, int n_mc, Rng& rng) {
  if (n_mc < 1) throw std::domain_error("n_mc must be >= 1");
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n_mc; ++i) {
    const double p = std::exp(target.log_pdf(space.sample_in_cell(recursion, cell, rng)));
    sum += p;
    sum_sq += p * p;
  }
  const double mean = sum / n_mc;
  const double var = n_mc > 1 ? std::max(0.0, (sum_sq - n_mc * mean * mean) / (n_mc - 1)) : 0.0;
  const double v = space.cell_volume(recursion);
  return {std::log(mean * v), mean * v, v * std::sqrt(var / n_mc)};
}

}  // namespace spyro
