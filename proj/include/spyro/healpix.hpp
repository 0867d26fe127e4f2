#pragma once

// Nested-scheme HEALPix pixelization of the 2-sphere.
//
// Pixels at n_side carry 12 base faces split into n_side² sub-pixels; face
// local coordinates (x, y) ∈ [0, 1]² map onto the sphere with equal area, and
// the nested index interleaves the bits of the (ix, iy) lattice position so
// that pixel(2·n_side) / 4 == pixel(n_side).

#include <array>
#include <bit>
#include <cstdint>
#include <utility>

#include "spyro/common.hpp"

namespace spyro::healpix {

namespace detail {

inline constexpr std::array<int, 12> kFaceRing = {2, 2, 2, 2, 3, 3, 3, 3, 4, 4, 4, 4};
inline constexpr std::array<int, 12> kFacePhi = {1, 3, 5, 7, 0, 2, 4, 6, 1, 3, 5, 7};

inline std::uint64_t spread_bits(std::uint64_t v) {
  v &= 0xffffffffull;
  v = (v | (v << 16)) & 0x0000ffff0000ffffull;
  v = (v | (v << 8)) & 0x00ff00ff00ff00ffull;
  v = (v | (v << 4)) & 0x0f0f0f0f0f0f0f0full;
  v = (v | (v << 2)) & 0x3333333333333333ull;
  v = (v | (v << 1)) & 0x5555555555555555ull;
  return v;
}

inline std::uint64_t compress_bits(std::uint64_t v) {
  v &= 0x5555555555555555ull;
  v = (v | (v >> 1)) & 0x3333333333333333ull;
  v = (v | (v >> 2)) & 0x0f0f0f0f0f0f0f0full;
  v = (v | (v >> 4)) & 0x00ff00ff00ff00ffull;
  v = (v | (v >> 8)) & 0x0000ffff0000ffffull;
  v = (v | (v >> 16)) & 0x00000000ffffffffull;
  return v;
}

inline double fmodulo(double v, double m) {
  if (v >= 0.0) return v < m ? v : std::fmod(v, m);
  const double t = std::fmod(v, m) + m;
  return t == m ? 0.0 : t;
}

}  // namespace detail

inline constexpr int kMaxOrder = 29;

/// log2(n_side); throws ConfigError unless n_side is a power of two.
inline int order_of(std::int64_t n_side) {
  if (n_side <= 0 || !std::has_single_bit(static_cast<std::uint64_t>(n_side)))
    throw ConfigError("healpix n_side must be a positive power of two, got " + std::to_string(n_side));
  const int order = std::countr_zero(static_cast<std::uint64_t>(n_side));
  if (order > kMaxOrder) throw ConfigError("healpix n_side too large");
  return order;
}

inline std::int64_t pixel_count(std::int64_t n_side) {
  order_of(n_side);
  return 12 * n_side * n_side;
}

struct FacePosition {
  int face;
  std::int64_t ix;
  std::int64_t iy;
};

inline std::int64_t xyf_to_nested(std::int64_t n_side, std::int64_t ix, std::int64_t iy, int face) {
  return face * n_side * n_side +
         static_cast<std::int64_t>(detail::spread_bits(static_cast<std::uint64_t>(ix)) |
                                   (detail::spread_bits(static_cast<std::uint64_t>(iy)) << 1));
}

inline FacePosition nested_to_xyf(std::int64_t n_side, std::int64_t pix) {
  const std::int64_t per_face = n_side * n_side;
  const auto local = static_cast<std::uint64_t>(pix % per_face);
  return {static_cast<int>(pix / per_face), static_cast<std::int64_t>(detail::compress_bits(local)),
          static_cast<std::int64_t>(detail::compress_bits(local >> 1))};
}

/// Pixel containing the direction (z = cos θ, φ).
inline std::int64_t zphi_to_pix_nested(std::int64_t n_side, double z, double phi) {
  const int order = order_of(n_side);
  const double za = std::abs(z);
  const double tt = detail::fmodulo(phi * (2.0 / kPi), 4.0);
  if (za <= 2.0 / 3.0) {
    const double t1 = static_cast<double>(n_side) * (0.5 + tt);
    const double t2 = static_cast<double>(n_side) * (z * 0.75);
    const auto jp = static_cast<std::int64_t>(t1 - t2);
    const auto jm = static_cast<std::int64_t>(t1 + t2);
    const std::int64_t ifp = jp >> order;
    const std::int64_t ifm = jm >> order;
    const int face = static_cast<int>(ifp == ifm ? (ifp | 4) : (ifp < ifm ? ifp : ifm + 8));
    const std::int64_t ix = jm & (n_side - 1);
    const std::int64_t iy = n_side - (jp & (n_side - 1)) - 1;
    return xyf_to_nested(n_side, ix, iy, face);
  }
  const int ntt = std::min(3, static_cast<int>(tt));
  const double tp = tt - ntt;
  const double tmp = static_cast<double>(n_side) * std::sqrt(3.0 * (1.0 - za));
  const std::int64_t jp = std::min(static_cast<std::int64_t>(tp * tmp), n_side - 1);
  const std::int64_t jm = std::min(static_cast<std::int64_t>((1.0 - tp) * tmp), n_side - 1);
  if (z >= 0.0) return xyf_to_nested(n_side, n_side - jm - 1, n_side - jp - 1, ntt);
  return xyf_to_nested(n_side, jp, jm, ntt + 8);
}

/// ang2pix in the nested scheme; θ ∈ [0, π], φ any real (wrapped).
inline std::int64_t ang2pix_nested(std::int64_t n_side, double theta, double phi) {
  return zphi_to_pix_nested(n_side, std::cos(theta), phi);
}

/// Sphere location (z, φ) of continuous face coordinates (x, y) ∈ [0, 1]².
/// The map is equal-area: uniform (x, y) gives uniform points on the face.
inline std::pair<double, double> face_to_zphi(int face, double x, double y) {
  const double jr = detail::kFaceRing[face] - x - y;
  double nr = 1.0;
  double z = 0.0;
  if (jr < 1.0) {
    nr = jr;
    z = 1.0 - nr * nr / 3.0;
  } else if (jr > 3.0) {
    nr = 4.0 - jr;
    z = nr * nr / 3.0 - 1.0;
  } else {
    z = (2.0 - jr) * 2.0 / 3.0;
  }
  double t = detail::kFacePhi[face] * nr + x - y;
  if (t < 0.0) t += 8.0;
  if (t >= 8.0) t -= 8.0;
  const double phi = nr < 1e-15 ? 0.0 : (0.25 * kPi * t) / nr;
  return {z, phi};
}

/// (z, φ) of the pixel point at fractional offset (u, v) ∈ [0, 1]² inside the pixel; (½, ½) is the center.
inline std::pair<double, double> pix_to_zphi_nested(std::int64_t n_side, std::int64_t pix, double u = 0.5,
                                                     double v = 0.5) {
  const FacePosition f = nested_to_xyf(n_side, pix);
  const double inv = 1.0 / static_cast<double>(n_side);
  return face_to_zphi(f.face, (static_cast<double>(f.ix) + u) * inv, (static_cast<double>(f.iy) + v) * inv);
}

/// pix2ang in the nested scheme: (θ, φ) of the pixel center.
inline std::pair<double, double> pix2ang_nested(std::int64_t n_side, std::int64_t pix) {
  order_of(n_side);
  const auto [z, phi] = pix_to_zphi_nested(n_side, pix);
  return {std::acos(std::clamp(z, -1.0, 1.0)), phi};
}

}  // namespace spyro::healpix
