#pragma once

// Hierarchical positional grid: an origin-centered unit cube split into a
// 2^r × 2^r × 2^r lattice, Morton ordered (digit = x·4 + y·2 + z, most
// significant digit first) so parent = index / 8, placed around the detection
// t̂ by the bounds matrix A: p = t̂ + A·g.

#include <compare>
#include <optional>

#include "spyro/common.hpp"
#include "spyro/quaternion.hpp"

namespace spyro {

inline constexpr int kMaxR3Recursion = 20;

/// Upper-triangular bounds matrix with positive determinant.
class BoundsMatrix {
 public:
  /// Columns (d,0,0), (0,d,0), t̂: in-plane extent d, depth extent proportional to distance.
  static BoundsMatrix from_detection(const Eigen::Vector3d& t_hat, double diameter) {
    if (!(diameter > 0.0)) throw ConfigError("object diameter must be positive");
    if (!(t_hat.z() > 0.0)) throw ConfigError("detection must lie in front of the camera (t_hat.z > 0)");
    Eigen::Matrix3d a;
    a << diameter, 0.0, t_hat.x(), 0.0, diameter, t_hat.y(), 0.0, 0.0, t_hat.z();
    return BoundsMatrix(a);
  }

  /// A = d·I, a cubic grid.
  static BoundsMatrix cubic(double side) {
    if (!(side > 0.0)) throw ConfigError("cubic grid side must be positive");
    return BoundsMatrix(side * Eigen::Matrix3d::Identity());
  }

  explicit BoundsMatrix(const Eigen::Matrix3d& a) : a_(a) {
    if (a(1, 0) != 0.0 || a(2, 0) != 0.0 || a(2, 1) != 0.0) throw ConfigError("bounds matrix must be upper triangular");
    if (!(determinant() > 0.0)) throw ConfigError("bounds matrix must have positive determinant");
  }

  const Eigen::Matrix3d& matrix() const { return a_; }
  double determinant() const { return a_(0, 0) * a_(1, 1) * a_(2, 2); }

  Eigen::Vector3d apply(const Eigen::Vector3d& g) const { return a_ * g; }

  /// A⁻¹·e by back substitution.
  Eigen::Vector3d solve(const Eigen::Vector3d& e) const {
    Eigen::Vector3d g;
    g.z() = e.z() / a_(2, 2);
    g.y() = (e.y() - a_(1, 2) * g.z()) / a_(1, 1);
    g.x() = (e.x() - a_(0, 1) * g.y() - a_(0, 2) * g.z()) / a_(0, 0);
    return g;
  }

  friend bool operator==(const BoundsMatrix& a, const BoundsMatrix& b) { return a.a_ == b.a_; }

 private:
  Eigen::Matrix3d a_;
};

struct R3CellId {
  int recursion = 1;
  CellIndex index = 0;

  friend auto operator<=>(const R3CellId&, const R3CellId&) = default;
};

/// Jitter applied to the unit-cube grid before A: g' = R·g + offset.
struct R3GridFrame {
  Eigen::Vector3d jitter_offset = Eigen::Vector3d::Zero();
  UnitQuaternion jitter_rotation;
};

/// Random jitter: uniform rotation of g plus an offset uniform in
/// ±(offset_fraction / 2) of a recursion-1 cell width per axis.
inline R3GridFrame random_r3_frame(Rng& rng, double offset_fraction) {
  R3GridFrame f;
  f.jitter_rotation = UnitQuaternion::random(rng);
  const double half = 0.25 * offset_fraction;  // recursion-1 cell width is 1/2
  for (int k = 0; k < 3; ++k) f.jitter_offset[k] = half * (2.0 * uniform01(rng) - 1.0);
  return f;
}

inline CellIndex r3_cell_count(int recursion) { return CellIndex{1} << (3 * recursion); }

inline void check_r3_cell(const R3CellId& c) {
  if (c.recursion < 1 || c.recursion > kMaxR3Recursion) throw std::domain_error("R3 recursion out of range");
  if (c.index >= r3_cell_count(c.recursion)) throw std::domain_error("R3 cell index out of range");
}

struct LatticeCoords {
  std::uint64_t x, y, z;
};

inline LatticeCoords r3_decode(const R3CellId& c) {
  LatticeCoords l{0, 0, 0};
  for (int k = c.recursion - 1; k >= 0; --k) {
    const CellIndex d = (c.index >> (3 * k)) & 7u;
    l.x = 2 * l.x + ((d >> 2) & 1u);
    l.y = 2 * l.y + ((d >> 1) & 1u);
    l.z = 2 * l.z + (d & 1u);
  }
  return l;
}

inline R3CellId r3_encode(int recursion, const LatticeCoords& l) {
  CellIndex index = 0;
  for (int k = recursion - 1; k >= 0; --k) {
    index = 8 * index + (((l.x >> k) & 1u) << 2) + (((l.y >> k) & 1u) << 1) + ((l.z >> k) & 1u);
  }
  return {recursion, index};
}

/// Center of the cell within the origin-centered unit cube.
inline Eigen::Vector3d unit_cube_center(const R3CellId& c) {
  check_r3_cell(c);
  const LatticeCoords l = r3_decode(c);
  const double inv = std::ldexp(1.0, -c.recursion);
  return {(l.x + 0.5) * inv - 0.5, (l.y + 0.5) * inv - 0.5, (l.z + 0.5) * inv - 0.5};
}

/// Truncated isotropic normal ẽ ~ N(0, σ²I) restricted to ‖ẽ‖ ≤ 1/2, by rejection.
inline Eigen::Vector3d sample_detection_error(double sigma, Rng& rng) {
  if (!(sigma > 0.0)) throw ConfigError("detection error sigma must be positive");
  for (;;) {
    Eigen::Vector3d e(standard_normal(rng), standard_normal(rng), standard_normal(rng));
    e *= sigma;
    if (e.norm() <= 0.5) return e;
  }
}

/// Immutable positional grid p = t̂ + A·(R·g + offset).
class R3Grid {
 public:
  R3Grid(BoundsMatrix bounds, Eigen::Vector3d t_hat, R3GridFrame frame = {})
      : bounds_(std::move(bounds)), t_hat_(std::move(t_hat)), frame_(frame), rotation_inverse_(frame.jitter_rotation.inverse()) {}

  const BoundsMatrix& bounds() const { return bounds_; }
  const Eigen::Vector3d& t_hat() const { return t_hat_; }
  const R3GridFrame& frame() const { return frame_; }

  /// Maps a unit-cube point through the frame jitter and the affine placement.
  Eigen::Vector3d place(const Eigen::Vector3d& g) const {
    return t_hat_ + bounds_.apply(frame_.jitter_rotation.rotate(g) + frame_.jitter_offset);
  }

  /// Inverse of place().
  Eigen::Vector3d unit_coordinates(const Eigen::Vector3d& t) const {
    return rotation_inverse_.rotate(bounds_.solve(t - t_hat_) - frame_.jitter_offset);
  }

  Eigen::Vector3d center(const R3CellId& c) const { return place(unit_cube_center(c)); }

  Eigen::Vector3d sample_in_cell(const R3CellId& c, Rng& rng) const {
    const Eigen::Vector3d center_g = unit_cube_center(c);
    const double w = std::ldexp(1.0, -c.recursion);
    const Eigen::Vector3d jitter(uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5);
    return place(center_g + w * jitter);
  }

  double cell_volume(int recursion) const { return bounds_.determinant() * std::ldexp(1.0, -3 * recursion); }
  double total_volume() const { return bounds_.determinant(); }

  /// Encompassing cell, or nullopt when the preimage leaves [-1/2, 1/2)³.
  std::optional<R3CellId> lookup(const Eigen::Vector3d& t, int recursion) const {
    if (recursion < 1 || recursion > kMaxR3Recursion) throw std::domain_error("R3 recursion out of range");
    const Eigen::Vector3d g = unit_coordinates(t);
    const double n = std::ldexp(1.0, recursion);
    std::uint64_t l[3];
    for (int k = 0; k < 3; ++k) {
      if (!(g[k] >= -0.5 && g[k] < 0.5)) return std::nullopt;
      const double f = std::floor((g[k] + 0.5) * n);
      l[k] = static_cast<std::uint64_t>(std::min(f, n - 1.0));
    }
    return r3_encode(recursion, {l[0], l[1], l[2]});
  }

 private:
  BoundsMatrix bounds_;
  Eigen::Vector3d t_hat_;
  R3GridFrame frame_;
  UnitQuaternion rotation_inverse_;
};

}  // namespace spyro
