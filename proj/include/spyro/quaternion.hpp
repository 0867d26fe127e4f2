#pragma once

#include <Eigen/Geometry>

#include "spyro/common.hpp"

namespace spyro {

/// Unit quaternion with the double cover resolved: the scalar part is
/// non-negative, and when it is zero the first nonzero vector component is
/// positive. q and -q therefore construct the same value.
class UnitQuaternion {
 public:
  UnitQuaternion() = default;

  UnitQuaternion(double w, double x, double y, double z) : q_(w, x, y, z) { normalize(); }

  explicit UnitQuaternion(const Eigen::Quaterniond& q) : q_(q) { normalize(); }

  static UnitQuaternion identity() { return {}; }

  static UnitQuaternion from_axis_angle(const Eigen::Vector3d& axis, double angle) {
    return UnitQuaternion(Eigen::Quaterniond(Eigen::AngleAxisd(angle, axis.normalized())));
  }

  static UnitQuaternion from_matrix(const Eigen::Matrix3d& m) {
    return UnitQuaternion(Eigen::Quaterniond(m));
  }

  /// Haar-uniform rotation (normalized 4D Gaussian).
  static UnitQuaternion random(Rng& rng) {
    for (;;) {
      const double w = standard_normal(rng), x = standard_normal(rng);
      const double y = standard_normal(rng), z = standard_normal(rng);
      if (w * w + x * x + y * y + z * z > 1e-12) return {w, x, y, z};
    }
  }

  double w() const { return q_.w(); }
  double x() const { return q_.x(); }
  double y() const { return q_.y(); }
  double z() const { return q_.z(); }

  const Eigen::Quaterniond& eigen() const { return q_; }
  Eigen::Matrix3d matrix() const { return q_.toRotationMatrix(); }

  UnitQuaternion inverse() const { return UnitQuaternion(q_.conjugate()); }

  Eigen::Vector3d rotate(const Eigen::Vector3d& v) const { return q_ * v; }

  /// Rotation angle in [0, π].
  double angle() const { return 2.0 * std::atan2(q_.vec().norm(), std::abs(q_.w())); }

  friend UnitQuaternion operator*(const UnitQuaternion& a, const UnitQuaternion& b) {
    return UnitQuaternion(a.q_ * b.q_);
  }

  friend bool operator==(const UnitQuaternion& a, const UnitQuaternion& b) {
    return a.q_.coeffs() == b.q_.coeffs();
  }

 private:
  void normalize() {
    const double n = q_.norm();
    if (!(n > 0.0) || !std::isfinite(n)) throw std::domain_error("quaternion with zero or non-finite norm");
    q_.coeffs() /= n;
    const double lead = q_.w() != 0.0   ? q_.w()
                        : q_.x() != 0.0 ? q_.x()
                        : q_.y() != 0.0 ? q_.y()
                                        : q_.z();
    if (lead < 0.0) q_.coeffs() = -q_.coeffs();
  }

  Eigen::Quaterniond q_{1.0, 0.0, 0.0, 0.0};
};

/// Geodesic distance (rotation angle of a⁻¹b) in radians, in [0, π].
inline double geodesic_distance(const UnitQuaternion& a, const UnitQuaternion& b) {
  const double d = std::abs(a.eigen().dot(b.eigen()));
  return 2.0 * std::acos(std::min(1.0, d));
}

/// Rigid pose in the camera frame.
struct Pose {
  UnitQuaternion rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return rotation.rotate(p) + translation; }

  Pose inverse() const {
    const UnitQuaternion inv = rotation.inverse();
    return {inv, -inv.rotate(translation)};
  }

  friend Pose operator*(const Pose& a, const Pose& b) {
    return {a.rotation * b.rotation, a.rotation.rotate(b.translation) + a.translation};
  }

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.rotation == b.rotation && a.translation == b.translation;
  }
};

}  // namespace spyro
