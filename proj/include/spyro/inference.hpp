#pragma once

// Sparse coarse-to-fine inference: level 0 is scored densely, then the k most
// probable cells of each level are expanded and their combined mass p_k is
// redistributed over all newly scored children by a single softmax.

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "spyro/estimation.hpp"
#include "spyro/keypoints.hpp"

namespace spyro {

struct BeliefLevel {
  int recursion = 0;
  std::vector<CellIndex> cells;  // ascending
  std::vector<double> probs;
  std::vector<std::uint8_t> expanded;
  double expanded_mass = 0.0;  // p_k: mass handed to the next level

  std::optional<std::size_t> find(CellIndex c) const {
    const auto it = std::lower_bound(cells.begin(), cells.end(), c);
    if (it == cells.end() || *it != c) return std::nullopt;
    return static_cast<std::size_t>(it - cells.begin());
  }
};

struct BeliefLeaf {
  int recursion = 0;
  CellIndex index = 0;
  double prob = 0.0;

  friend bool operator==(const BeliefLeaf&, const BeliefLeaf&) = default;
};

/// Probability tree over scored cells; the unexpanded nodes are the leaves.
class SparseBelief {
 public:
  SparseBelief() = default;
  SparseBelief(std::vector<BeliefLevel> levels, int k, std::size_t evaluations)
      : levels_(std::move(levels)), k_(k), evaluations_(evaluations) {}

  /// Belief holding only leaves (e.g. read back from disk).
  static SparseBelief from_leaves(std::span<const BeliefLeaf> leaves) {
    std::map<int, std::vector<std::pair<CellIndex, double>>> by_level;
    for (const BeliefLeaf& l : leaves) by_level[l.recursion].push_back({l.index, l.prob});
    std::vector<BeliefLevel> levels;
    const int depth = by_level.empty() ? -1 : by_level.rbegin()->first;
    for (int r = 0; r <= depth; ++r) {
      BeliefLevel lvl;
      lvl.recursion = r;
      auto& items = by_level[r];
      std::sort(items.begin(), items.end());
      for (const auto& [c, p] : items) {
        if (!lvl.cells.empty() && lvl.cells.back() == c) throw ConfigError("duplicate leaf in belief");
        lvl.cells.push_back(c);
        lvl.probs.push_back(p);
        lvl.expanded.push_back(0);
      }
      levels.push_back(std::move(lvl));
    }
    return SparseBelief(std::move(levels), 0, 0);
  }

  const std::vector<BeliefLevel>& levels() const { return levels_; }
  int depth() const { return static_cast<int>(levels_.size()) - 1; }
  int k() const { return k_; }
  std::size_t evaluations() const { return evaluations_; }

  std::vector<BeliefLeaf> leaves() const {
    std::vector<BeliefLeaf> out;
    for (const BeliefLevel& l : levels_)
      for (std::size_t i = 0; i < l.cells.size(); ++i)
        if (!l.expanded[i]) out.push_back({l.recursion, l.cells[i], l.probs[i]});
    return out;
  }

  double leaf_mass() const {
    double s = 0.0;
    for (const BeliefLeaf& l : leaves()) s += l.prob;
    return s;
  }

  /// The belief a run stopped at recursion r would have produced.
  SparseBelief truncated(int r) const {
    if (r < 0 || r > depth()) throw std::domain_error("truncation depth out of range");
    std::vector<BeliefLevel> lv(levels_.begin(), levels_.begin() + r + 1);
    std::fill(lv.back().expanded.begin(), lv.back().expanded.end(), 0);
    lv.back().expanded_mass = 0.0;
    return SparseBelief(std::move(lv), k_, 0);
  }

  friend bool operator==(const SparseBelief& a, const SparseBelief& b) {
    if (a.levels_.size() != b.levels_.size()) return false;
    for (std::size_t r = 0; r < a.levels_.size(); ++r) {
      const auto &x = a.levels_[r], &y = b.levels_[r];
      if (x.cells != y.cells || x.probs != y.probs || x.expanded != y.expanded) return false;
    }
    return true;
  }

 private:
  std::vector<BeliefLevel> levels_;
  int k_ = 0;
  std::size_t evaluations_ = 0;
};

/// W₀ + Σ_{r=1..depth} branching·min(k, cells scored at r − 1).
inline std::uint64_t eval_count(std::uint64_t k, int depth, std::uint64_t level0_width, std::uint64_t branching) {
  if (k < 1 || depth < 0 || level0_width < 1 || branching < 1) throw std::domain_error("eval_count arguments must be positive");
  std::uint64_t total = level0_width, prev = level0_width;
  for (int r = 1; r <= depth; ++r) {
    prev = branching * std::min(k, prev);
    total += prev;
  }
  return total;
}

template <PyramidSpace Space>
SparseBelief sparse_infer(const CellScorer<Space>& scorer, int k, int depth) {
  if (k < 1) throw ConfigError("top-k must be >= 1");
  if (depth < 0 || depth > Space::kMaxRecursion) throw ConfigError("inference depth out of range");
  require_depth(scorer, depth);
  std::vector<BeliefLevel> levels;
  std::size_t evals = 0;

  BeliefLevel l0;
  l0.recursion = 0;
  l0.cells = sibling_set<Space>(0, 0);
  std::vector<double> s(l0.cells.size());
  scorer.score(0, l0.cells, s);
  evals += s.size();
  softmax_inplace(s);
  l0.probs = std::move(s);
  l0.expanded.assign(l0.cells.size(), 0);
  levels.push_back(std::move(l0));

  for (int r = 1; r <= depth; ++r) {
    BeliefLevel& prev = levels.back();
    const std::size_t n_expand = std::min<std::size_t>(static_cast<std::size_t>(k), prev.cells.size());
    std::vector<std::size_t> order(prev.cells.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + n_expand, order.end(), [&](std::size_t a, std::size_t b) {
      return prev.probs[a] != prev.probs[b] ? prev.probs[a] > prev.probs[b] : prev.cells[a] < prev.cells[b];
    });
    order.resize(n_expand);
    std::sort(order.begin(), order.end());  // ascending cell index, so children come out sorted

    double p_k = 0.0;
    BeliefLevel next;
    next.recursion = r;
    next.cells.reserve(n_expand * Space::kBranching);
    for (std::size_t i : order) {
      prev.expanded[i] = 1;
      p_k += prev.probs[i];
      for (CellIndex j = 0; j < Space::kBranching; ++j) next.cells.push_back(prev.cells[i] * Space::kBranching + j);
    }
    prev.expanded_mass = p_k;
    std::vector<double> cs(next.cells.size());
    scorer.score(r, next.cells, cs);
    evals += cs.size();
    softmax_inplace(cs);
    for (double& p : cs) p *= p_k;
    next.probs = std::move(cs);
    next.expanded.assign(next.cells.size(), 0);
    levels.push_back(std::move(next));
  }
  return SparseBelief(std::move(levels), k, evals);
}

/// Dense normalized evaluation of one level.
template <PyramidSpace Space>
std::vector<double> dense_level(const CellScorer<Space>& scorer, int recursion) {
  const CellIndex width = Space::level_size(recursion);
  std::vector<CellIndex> cells(width);
  std::iota(cells.begin(), cells.end(), CellIndex{0});
  std::vector<double> s(width);
  scorer.score(recursion, cells, s);
  softmax_inplace(s);
  return s;
}

/// Deepest scored node containing x: (recursion, position in that level).
template <PyramidSpace Space>
std::optional<std::pair<int, std::size_t>> deepest_node(const SparseBelief& b, const Space& space,
                                                         const typename Space::Element& x, int max_recursion) {
  for (int r = std::min(max_recursion, b.depth()); r >= 0; --r) {
    const auto c = space.lookup(x, r);
    if (!c) return std::nullopt;
    if (const auto i = b.levels()[r].find(*c)) return std::pair{r, *i};
  }
  return std::nullopt;
}

/// log p̂(leaf) − log V(leaf) at the deepest leaf encompassing x; −∞ outside the grid.
template <PyramidSpace Space>
double continuous_likelihood(const SparseBelief& b, const Space& space, const typename Space::Element& x) {
  const auto node = deepest_node(b, space, x, b.depth());
  if (!node) return -std::numeric_limits<double>::infinity();
  const auto [r, i] = *node;
  return std::log(b.levels()[r].probs[i]) - std::log(space.cell_volume(r));
}

/// Log probability of the recursion-r cell containing x; mass of a coarser
/// scored ancestor is spread uniformly over its descendants.
template <PyramidSpace Space>
double cell_log_likelihood(const SparseBelief& b, const Space& space, const typename Space::Element& x, int recursion) {
  const auto node = deepest_node(b, space, x, recursion);
  if (!node) return -std::numeric_limits<double>::infinity();
  const auto [r, i] = *node;
  return std::log(b.levels()[r].probs[i]) - (recursion - r) * std::log(static_cast<double>(Space::kBranching));
}

/// Differential entropy of the piecewise-constant leaf density.
template <PyramidSpace Space>
double belief_entropy(const SparseBelief& b, const Space& space) {
  double h = 0.0;
  for (const BeliefLeaf& l : b.leaves())
    if (l.prob > 0.0) h -= l.prob * (std::log(l.prob) - std::log(space.cell_volume(l.recursion)));
  return h;
}

/// SO(3) cell masses; entries coarser than the requested recursion keep their own recursion.
struct So3Marginal {
  int recursion = 0;
  std::map<std::pair<int, CellIndex>, double> mass;  // (recursion, rotation index)

  double total() const {
    double s = 0.0;
    for (const auto& [key, m] : mass) s += m;
    return s;
  }

  /// Dense per-cell mass at `recursion`, coarse entries spread uniformly.
  std::vector<double> expanded() const {
    std::vector<double> out(so3_cell_count(recursion), 0.0);
    for (const auto& [key, m] : mass) {
      const auto [r, i] = key;
      const CellIndex span = CellIndex{1} << (3 * (recursion - r));
      for (CellIndex j = 0; j < span; ++j) out[i * span + j] += m / static_cast<double>(span);
    }
    return out;
  }
};

template <PyramidSpace Space>
So3Marginal marginal_so3(std::span<const BeliefLeaf> leaves, int recursion) {
  if (recursion < 0 || recursion > kMaxSo3Recursion) throw std::domain_error("marginal recursion out of range");
  So3Marginal m;
  m.recursion = recursion;
  for (const BeliefLeaf& l : leaves) {
    CellIndex rot = Space::rotation_index(l.recursion, l.index);
    int r = l.recursion;
    if (r > recursion) {
      rot >>= 3 * (r - recursion);
      r = recursion;
    }
    m.mass[{r, rot}] += l.prob;
  }
  return m;
}

template <PyramidSpace Space>
So3Marginal marginal_so3(const SparseBelief& b, int recursion) {
  const auto leaves = b.leaves();
  return marginal_so3<Space>(std::span<const BeliefLeaf>(leaves), recursion);
}

/// Sparse inference on per-view scores averaged over the views.
inline SparseBelief fuse_multiview(const Se3Pyramid& world_grid, std::vector<FusedScorer::View> views, int k, int depth) {
  const FusedScorer fused(std::move(views));
  const CenterScorer<Se3Pyramid> cells(world_grid, fused);
  return sparse_infer(cells, k, depth);
}

// ---------------------------------------------------------------------------
// Belief files: "SPYB", u32 version, u64 leaf count, then per leaf
// u8 recursion, u64 index, f64 probability, all little-endian.

inline constexpr std::uint32_t kBeliefVersion = 1;

namespace detail {
template <class T>
void put_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "belief IO assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ConfigError("truncated belief file");
  return v;
}
}  // namespace detail

inline void write_belief(const std::string& path, std::span<const BeliefLeaf> leaves) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write belief file '" + path + "'");
  out.write("SPYB", 4);
  detail::put_le<std::uint32_t>(out, kBeliefVersion);
  detail::put_le<std::uint64_t>(out, leaves.size());
  for (const BeliefLeaf& l : leaves) {
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.recursion));
    detail::put_le<std::uint64_t>(out, l.index);
    detail::put_le<double>(out, l.prob);
  }
  if (!out) throw ConfigError("failed writing belief file '" + path + "'");
}

inline std::vector<BeliefLeaf> read_belief(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open belief file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SPYB", 4) != 0) throw ConfigError("'" + path + "' is not a belief file");
  if (detail::get_le<std::uint32_t>(in) != kBeliefVersion) throw ConfigError("unsupported belief file version");
  const auto n = detail::get_le<std::uint64_t>(in);
  std::vector<BeliefLeaf> out;
  out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
  for (std::uint64_t i = 0; i < n; ++i) {
    BeliefLeaf l;
    l.recursion = detail::get_le<std::uint8_t>(in);
    l.index = detail::get_le<std::uint64_t>(in);
    l.prob = detail::get_le<double>(in);
    out.push_back(l);
  }
  return out;
}

}  // namespace spyro
