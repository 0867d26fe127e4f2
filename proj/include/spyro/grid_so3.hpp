#pragma once

// Hierarchical equivolumetric grid on SO(3).
//
// A rotation is written in Hopf coordinates as q = q_ψ ⊗ q_s, a rotation by ψ
// about x after the sphere part (θ, φ):
//
//   q = (cos θ/2 cos ψ/2, cos θ/2 sin ψ/2, sin θ/2 cos(φ + ψ/2), sin θ/2 sin(φ + ψ/2))
//
// Haar measure factors into the area element on (θ, φ) times dψ, so an
// equal-area HEALPix pixelization of the sphere crossed with equal ψ bins is
// equivolumetric. Recursion r uses n_side = 2^r and 6·2^r ψ bins; each cell
// splits into 4 pixels × 2 ψ halves.
//
// Cell index at recursion r: the top (base) digit is face·6 + ψ-bin at
// recursion 0, followed by r octal digits (pixel child rank)·2 + (ψ half), so
// children of i are 8i..8i+7.

#include <array>
#include <compare>
#include <cstdint>

#include "spyro/common.hpp"
#include "spyro/healpix.hpp"
#include "spyro/quaternion.hpp"

namespace spyro {

inline constexpr CellIndex kSo3BaseCells = 72;
inline constexpr int kSo3PsiBins = 6;
inline constexpr int kMaxSo3Recursion = 15;

struct HopfCoordinates {
  double theta = 0.0;  // [0, π]
  double phi = 0.0;    // [0, 2π)
  double psi = 0.0;    // [0, 2π)
};

inline UnitQuaternion from_hopf(const HopfCoordinates& h) {
  const double ct = std::cos(0.5 * h.theta), st = std::sin(0.5 * h.theta);
  return {ct * std::cos(0.5 * h.psi), ct * std::sin(0.5 * h.psi), st * std::cos(h.phi + 0.5 * h.psi),
          st * std::sin(h.phi + 0.5 * h.psi)};
}

namespace detail {

struct HopfZ {
  double z;    // cos θ
  double phi;  // [0, 2π)
  double psi;  // [0, 2π)
};

// Hopf coordinates without the acos round trip; depends only on the rotation.
inline HopfZ hopf_z(const UnitQuaternion& q) {
  const double a = q.w() * q.w() + q.x() * q.x();
  const double b = q.y() * q.y() + q.z() * q.z();
  const double psi = 2.0 * std::atan2(q.x(), q.w());
  const double phi = std::atan2(q.z(), q.y()) - 0.5 * psi;
  return {std::clamp(a - b, -1.0, 1.0), wrap_two_pi(phi), wrap_two_pi(psi)};
}

}  // namespace detail

inline HopfCoordinates to_hopf(const UnitQuaternion& q) {
  const detail::HopfZ h = detail::hopf_z(q);
  const double theta = 2.0 * std::atan2(std::hypot(q.y(), q.z()), std::hypot(q.w(), q.x()));
  return {theta, h.phi, h.psi};
}

struct So3CellId {
  int recursion = 0;
  CellIndex index = 0;

  friend auto operator<=>(const So3CellId&, const So3CellId&) = default;
};

struct So3GridFrame {
  UnitQuaternion offset_rotation;
};

/// Random grid jitter: a uniform rotation of the whole grid.
inline So3GridFrame random_so3_frame(Rng& rng) { return {UnitQuaternion::random(rng)}; }

inline CellIndex so3_cell_count(int recursion) { return kSo3BaseCells << (3 * recursion); }

/// Haar volume of one cell, with the whole group normalized to π².
inline double so3_cell_volume(int recursion) {
  if (recursion < 0) throw std::domain_error("negative recursion");
  return kPiSquared / (static_cast<double>(kSo3BaseCells) * std::ldexp(1.0, 3 * recursion));
}

inline void check_so3_cell(const So3CellId& c) {
  if (c.recursion < 0 || c.recursion > kMaxSo3Recursion) throw std::domain_error("SO(3) recursion out of range");
  if (c.index >= so3_cell_count(c.recursion)) throw std::domain_error("SO(3) cell index out of range");
}

inline std::array<So3CellId, 8> so3_children(const So3CellId& c) {
  std::array<So3CellId, 8> out{};
  for (CellIndex j = 0; j < 8; ++j) out[j] = {c.recursion + 1, 8 * c.index + j};
  return out;
}

inline So3CellId so3_parent(const So3CellId& c) {
  if (c.recursion < 1) throw std::domain_error("recursion-0 SO(3) cell has no parent");
  return {c.recursion - 1, c.index / 8};
}

/// Splits a cell index into its nested HEALPix pixel and ψ bin.
struct So3CellParts {
  std::int64_t pixel;
  std::int64_t psi_bin;
};

inline So3CellParts so3_split(const So3CellId& c) {
  const int r = c.recursion;
  const CellIndex base = c.index >> (3 * r);
  std::int64_t pix = static_cast<std::int64_t>(base / kSo3PsiBins);
  std::int64_t bin = static_cast<std::int64_t>(base % kSo3PsiBins);
  for (int l = 1; l <= r; ++l) {
    const CellIndex d = (c.index >> (3 * (r - l))) & 7u;
    pix = 4 * pix + static_cast<std::int64_t>(d >> 1);
    bin = 2 * bin + static_cast<std::int64_t>(d & 1u);
  }
  return {pix, bin};
}

inline So3CellId so3_join(int r, std::int64_t pix, std::int64_t bin) {
  const auto base = static_cast<CellIndex>((pix >> (2 * r)) * kSo3PsiBins + (bin >> r));
  CellIndex index = base;
  for (int l = 1; l <= r; ++l) {
    const auto p = static_cast<CellIndex>((pix >> (2 * (r - l))) & 3);
    const auto s = static_cast<CellIndex>((bin >> (r - l)) & 1);
    index = 8 * index + p * 2 + s;
  }
  return {r, index};
}

/// Immutable SO(3) grid under a global offset rotation.
class So3Grid {
 public:
  So3Grid() = default;
  explicit So3Grid(So3GridFrame frame) : frame_(frame), offset_inverse_(frame.offset_rotation.inverse()) {}

  const So3GridFrame& frame() const { return frame_; }

  static double psi_bin_width(int recursion) { return kTwoPi / (kSo3PsiBins * std::ldexp(1.0, recursion)); }

  UnitQuaternion center(const So3CellId& c) const { return point_in_cell(c, 0.5, 0.5, 0.5); }

  /// Point at fractional coordinates (u, v, s) ∈ [0, 1]³ of the cell; uniform
  /// (u, v, s) gives Haar-uniform rotations inside the cell.
  UnitQuaternion point_in_cell(const So3CellId& c, double u, double v, double s) const {
    check_so3_cell(c);
    const auto [pix, bin] = so3_split(c);
    const std::int64_t n_side = std::int64_t{1} << c.recursion;
    const auto [z, phi] = healpix::pix_to_zphi_nested(n_side, pix, u, v);
    const double psi = (static_cast<double>(bin) + s) * psi_bin_width(c.recursion);
    const UnitQuaternion canonical = from_hopf({std::acos(std::clamp(z, -1.0, 1.0)), phi, psi});
    return frame_.offset_rotation * canonical;
  }

  UnitQuaternion sample_in_cell(const So3CellId& c, Rng& rng) const {
    const double u = uniform01(rng), v = uniform01(rng), s = uniform01(rng);
    return point_in_cell(c, u, v, s);
  }

  So3CellId lookup(const UnitQuaternion& q, int recursion) const {
    if (recursion < 0 || recursion > kMaxSo3Recursion) throw std::domain_error("SO(3) recursion out of range");
    const detail::HopfZ h = detail::hopf_z(offset_inverse_ * q);
    const std::int64_t n_side = std::int64_t{1} << recursion;
    const std::int64_t pix = healpix::zphi_to_pix_nested(n_side, h.z, h.phi);
    const std::int64_t bins = kSo3PsiBins * n_side;
    const auto bin = std::min(static_cast<std::int64_t>(h.psi / psi_bin_width(recursion)), bins - 1);
    return so3_join(recursion, pix, bin);
  }

 private:
  So3GridFrame frame_{};
  UnitQuaternion offset_inverse_{};
};

}  // namespace spyro
