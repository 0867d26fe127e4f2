#pragma once

// Pyramid spaces. An SE(3) cell at recursion r pairs the rotation cell at r
// with the position cell at r + 1; each SE(3) child digit is
// (rotation child rank)·8 + (position child rank), so parent = index / 64.
//
// So3Pyramid and Se3Pyramid share one compile-time interface used by the
// estimation, inference and training templates:
//
//   using Element;                            // UnitQuaternion or Pose
//   static constexpr CellIndex kLevel0Size, kBranching;
//   static constexpr int kMaxRecursion;
//   static CellIndex level_size(int r);
//   double cell_volume(int r) const, total_volume() const;
//   Element center(int r, CellIndex) const;
//   std::optional<CellIndex> lookup(const Element&, int r) const;
//   Element sample_in_cell(int r, CellIndex, Rng&) const;

#include <array>
#include <compare>
#include <concepts>
#include <optional>

#include "spyro/grid_r3.hpp"
#include "spyro/grid_so3.hpp"

namespace spyro {

inline constexpr CellIndex kSe3BaseCells = kSo3BaseCells * 8;  // 576
inline constexpr int kMaxSe3Recursion = 7;

static_assert(((kSe3BaseCells << (6 * kMaxSe3Recursion)) >> (6 * kMaxSe3Recursion)) == kSe3BaseCells,
              "SE(3) indices at the maximum recursion must fit in 64 bits");

struct Se3CellId {
  int recursion = 0;
  CellIndex index = 0;

  friend auto operator<=>(const Se3CellId&, const Se3CellId&) = default;
};

inline CellIndex se3_cell_count(int recursion) {
  if (recursion < 0 || recursion > kMaxSe3Recursion) throw std::domain_error("SE(3) recursion out of range");
  return kSe3BaseCells << (6 * recursion);
}

inline Se3CellId se3_pair(const So3CellId& rot, const R3CellId& pos) {
  if (pos.recursion != rot.recursion + 1) throw std::domain_error("SE(3) pairing needs position recursion = rotation recursion + 1");
  if (rot.recursion > kMaxSe3Recursion) throw std::domain_error("SE(3) recursion out of range");
  check_so3_cell(rot);
  check_r3_cell(pos);
  const int r = rot.recursion;
  CellIndex index = (rot.index >> (3 * r)) * 8 + (pos.index >> (3 * r));
  for (int l = 1; l <= r; ++l) {
    const int shift = 3 * (r - l);
    index = 64 * index + ((rot.index >> shift) & 7u) * 8 + ((pos.index >> shift) & 7u);
  }
  return {r, index};
}

inline std::pair<So3CellId, R3CellId> se3_unpair(const Se3CellId& c) {
  if (c.index >= se3_cell_count(c.recursion)) throw std::domain_error("SE(3) cell index out of range");
  const int r = c.recursion;
  const CellIndex top = c.index >> (6 * r);
  CellIndex rot = top / 8;
  CellIndex pos = top % 8;
  for (int l = 1; l <= r; ++l) {
    const CellIndex d = (c.index >> (6 * (r - l))) & 63u;
    rot = 8 * rot + d / 8;
    pos = 8 * pos + d % 8;
  }
  return {{r, rot}, {r + 1, pos}};
}

inline Se3CellId se3_parent(const Se3CellId& c) {
  if (c.recursion < 1) throw std::domain_error("recursion-0 SE(3) cell has no parent");
  return {c.recursion - 1, c.index / 64};
}

/// Children {64i, ..., 64i+63}.
inline std::array<Se3CellId, 64> se3_children(const Se3CellId& c) {
  std::array<Se3CellId, 64> out{};
  for (CellIndex j = 0; j < 64; ++j) out[j] = {c.recursion + 1, 64 * c.index + j};
  return out;
}

/// Siblings including the cell itself; at recursion 0, the whole level.
inline std::vector<Se3CellId> se3_siblings(const Se3CellId& c) {
  std::vector<Se3CellId> out;
  if (c.recursion == 0) {
    out.reserve(kSe3BaseCells);
    for (CellIndex i = 0; i < kSe3BaseCells; ++i) out.push_back({0, i});
    return out;
  }
  const auto kids = se3_children(se3_parent(c));
  return {kids.begin(), kids.end()};
}

inline double se3_cell_volume(int recursion, const BoundsMatrix& bounds) {
  return bounds.determinant() * kPiSquared / (static_cast<double>(kSe3BaseCells) * std::ldexp(1.0, 6 * recursion));
}

/// Rotation-only pyramid.
class So3Pyramid {
 public:
  using Element = UnitQuaternion;
  static constexpr CellIndex kLevel0Size = kSo3BaseCells;
  static constexpr CellIndex kBranching = 8;
  static constexpr int kMaxRecursion = kMaxSo3Recursion;

  So3Pyramid() = default;
  explicit So3Pyramid(So3Grid grid) : grid_(std::move(grid)) {}

  const So3Grid& rotation_grid() const { return grid_; }

  static CellIndex level_size(int r) { return so3_cell_count(r); }
  double cell_volume(int r) const { return so3_cell_volume(r); }
  double total_volume() const { return kPiSquared; }

  Element center(int r, CellIndex i) const { return grid_.center({r, i}); }
  std::optional<CellIndex> lookup(const Element& q, int r) const { return grid_.lookup(q, r).index; }
  Element sample_in_cell(int r, CellIndex i, Rng& rng) const { return grid_.sample_in_cell({r, i}, rng); }
  Element sample_uniform(Rng& rng) const { return UnitQuaternion::random(rng); }

  /// Rotation sub-index (identity for this space).
  static CellIndex rotation_index(int, CellIndex i) { return i; }

 private:
  So3Grid grid_;
};

/// Full pose pyramid: R^(r) × p^(r+1).
class Se3Pyramid {
 public:
  using Element = Pose;
  static constexpr CellIndex kLevel0Size = kSe3BaseCells;
  static constexpr CellIndex kBranching = 64;
  static constexpr int kMaxRecursion = kMaxSe3Recursion;

  Se3Pyramid(So3Grid rotation, R3Grid position) : rotation_(std::move(rotation)), position_(std::move(position)) {}

  const So3Grid& rotation_grid() const { return rotation_; }
  const R3Grid& position_grid() const { return position_; }

  static CellIndex level_size(int r) { return se3_cell_count(r); }
  double cell_volume(int r) const { return se3_cell_volume(r, position_.bounds()); }
  double total_volume() const { return position_.bounds().determinant() * kPiSquared; }

  Element center(int r, CellIndex i) const {
    const auto [rot, pos] = se3_unpair({r, i});
    return {rotation_.center(rot), position_.center(pos)};
  }

  std::optional<CellIndex> lookup(const Element& x, int r) const {
    if (r < 0 || r > kMaxRecursion) throw std::domain_error("SE(3) recursion out of range");
    const auto pos = position_.lookup(x.translation, r + 1);
    if (!pos) return std::nullopt;
    return se3_pair(rotation_.lookup(x.rotation, r), *pos).index;
  }

  Element sample_in_cell(int r, CellIndex i, Rng& rng) const {
    const auto [rot, pos] = se3_unpair({r, i});
    Pose p;
    p.rotation = rotation_.sample_in_cell(rot, rng);
    p.translation = position_.sample_in_cell(pos, rng);
    return p;
  }

  /// Uniform rotation and uniform position inside the jittered cube.
  Element sample_uniform(Rng& rng) const {
    Pose p;
    p.rotation = UnitQuaternion::random(rng);
    const Eigen::Vector3d g(uniform01(rng) - 0.5, uniform01(rng) - 0.5, uniform01(rng) - 0.5);
    p.translation = position_.place(g);
    return p;
  }

  static CellIndex rotation_index(int r, CellIndex i) { return se3_unpair({r, i}).first.index; }

 private:
  So3Grid rotation_;
  R3Grid position_;
};

template <class S>
concept PyramidSpace = requires(const S& s, int r, CellIndex i, const typename S::Element& e, Rng& rng) {
  { S::kLevel0Size } -> std::convertible_to<CellIndex>;
  { S::kBranching } -> std::convertible_to<CellIndex>;
  { S::level_size(r) } -> std::convertible_to<CellIndex>;
  { s.cell_volume(r) } -> std::convertible_to<double>;
  { s.total_volume() } -> std::convertible_to<double>;
  { s.center(r, i) } -> std::convertible_to<typename S::Element>;
  { s.lookup(e, r) } -> std::convertible_to<std::optional<CellIndex>>;
  { s.sample_in_cell(r, i, rng) } -> std::convertible_to<typename S::Element>;
};

static_assert(PyramidSpace<So3Pyramid>);
static_assert(PyramidSpace<Se3Pyramid>);

}  // namespace spyro
