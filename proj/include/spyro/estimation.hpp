#pragma once

// Partition-function estimation and the contrastive loss: sibling softmax,
// ancestral trajectory sampling through the pyramid, uniform and
// importance-sampled estimates of Σ_i f_i (f = exp(score)), and InfoNCE.

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "spyro/density.hpp"

namespace spyro {

/// Sibling set of a cell: the children of its parent, or the whole level at recursion 0.
template <PyramidSpace Space>
std::vector<CellIndex> sibling_set(int recursion, CellIndex cell) {
  std::vector<CellIndex> out;
  if (recursion == 0) {
    out.resize(Space::kLevel0Size);
    std::iota(out.begin(), out.end(), CellIndex{0});
    return out;
  }
  const CellIndex first = (cell / Space::kBranching) * Space::kBranching;
  out.resize(Space::kBranching);
  std::iota(out.begin(), out.end(), first);
  return out;
}

/// Children of a cell, or the whole level 0 when parent is nullopt.
template <PyramidSpace Space>
std::vector<CellIndex> child_set(std::optional<CellIndex> parent) {
  if (!parent) return sibling_set<Space>(0, 0);
  return sibling_set<Space>(1, *parent * Space::kBranching);
}

/// q(cell): softmax of scores over the cell's sibling set.
template <PyramidSpace Space>
double sibling_softmax(const CellScorer<Space>& scorer, int recursion, CellIndex cell) {
  const auto sibs = sibling_set<Space>(recursion, cell);
  std::vector<double> s(sibs.size());
  scorer.score(recursion, sibs, s);
  softmax_inplace(s);
  const CellIndex first = recursion == 0 ? 0 : sibs.front();
  return s[cell - first];
}

/// Categorical draw from normalized probabilities.
inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  double u = uniform01(rng);
  for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
    if (u < probs[i]) return i;
    u -= probs[i];
  }
  return probs.size() - 1;
}

/// n distinct indices from [0, width) by Floyd's algorithm, ascending.
inline std::vector<CellIndex> sample_without_replacement(CellIndex width, std::size_t n, Rng& rng) {
  if (n > width) throw std::domain_error("cannot draw more cells than the level holds without replacement");
  std::set<CellIndex> chosen;
  for (CellIndex j = width - n; j < width; ++j) {
    const CellIndex t = uniform_index(rng, j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

/// Scored cells at one recursion with the weights that make Σ_j weight_j·f_j
/// an unbiased estimate of Σ_i f_i over the level.
struct NegativeLevel {
  int recursion = 0;
  std::vector<CellIndex> cells;
  std::vector<double> scores;
  std::vector<double> log_proposal;  // log p̄(cell) (uniform mode: −log |level|)
  std::vector<double> weights;
  // Importance mode only: sibling set membership and the per-trajectory draw.
  std::vector<std::uint32_t> group;
  std::vector<double> group_log_proposal;  // log p̄ of the set's parent (0 at recursion 0)
  std::vector<std::uint32_t> trajectory_group;
  std::vector<std::uint32_t> trajectory_cell;
};

struct Trajectory {
  std::vector<CellIndex> cells;       // one per recursion 0..depth, each a child of the previous
  std::vector<double> log_proposal;   // cumulative log p̄ through each recursion
};

struct NegativeSet {
  std::vector<NegativeLevel> levels;
  std::vector<Trajectory> trajectories;
  std::size_t n_trajectories = 0;
  std::size_t evaluations = 0;
};

/// Ancestral sampling through the sibling softmax of each level. The negatives
/// at recursion r are the complete children sets of the distinct cells the
/// trajectories visited at r − 1 (all of level 0 at r = 0), scored once each.
template <PyramidSpace Space>
NegativeSet sample_trajectories(const CellScorer<Space>& scorer, std::size_t n_traj, int depth, Rng& rng) {
  if (n_traj < 1) throw std::domain_error("need at least one trajectory");
  require_depth(scorer, depth);
  NegativeSet out;
  out.n_trajectories = n_traj;
  out.trajectories.resize(n_traj);
  const double log_n = std::log(static_cast<double>(n_traj));

  // Trajectories sharing a parent share its children set.
  std::vector<std::optional<CellIndex>> parents{std::nullopt};
  std::vector<double> parent_log_p{0.0};
  std::vector<std::uint32_t> traj_parent(n_traj, 0);

  for (int r = 0; r <= depth; ++r) {
    NegativeLevel level;
    level.recursion = r;
    std::vector<std::size_t> multiplicity(parents.size(), 0);
    for (std::uint32_t g : traj_parent) ++multiplicity[g];

    std::vector<std::vector<double>> probs(parents.size());
    std::vector<std::size_t> offset(parents.size());
    for (std::size_t g = 0; g < parents.size(); ++g) {
      const auto kids = child_set<Space>(parents[g]);
      offset[g] = level.cells.size();
      std::vector<double> s(kids.size());
      scorer.score(r, kids, s);
      out.evaluations += kids.size();
      probs[g] = s;
      softmax_inplace(probs[g]);
      // weight m_g / (n · p̄(parent)); at recursion 0 the set is the full level, scored exactly
      const double w = r == 0 ? 1.0 : std::exp(std::log(static_cast<double>(multiplicity[g])) - log_n - parent_log_p[g]);
      for (std::size_t j = 0; j < kids.size(); ++j) {
        level.cells.push_back(kids[j]);
        level.scores.push_back(s[j]);
        level.log_proposal.push_back(parent_log_p[g] + std::log(probs[g][j]));
        level.weights.push_back(w);
        level.group.push_back(static_cast<std::uint32_t>(g));
      }
      level.group_log_proposal.push_back(parent_log_p[g]);
    }

    std::map<CellIndex, std::uint32_t> next_index;
    std::vector<CellIndex> drawn(n_traj);
    for (std::size_t t = 0; t < n_traj; ++t) {
      const std::uint32_t g = traj_parent[t];
      const std::size_t j = sample_categorical(probs[g], rng);
      const std::uint32_t slot = static_cast<std::uint32_t>(offset[g] + j);
      level.trajectory_group.push_back(g);
      level.trajectory_cell.push_back(slot);
      drawn[t] = level.cells[slot];
      out.trajectories[t].cells.push_back(level.cells[slot]);
      out.trajectories[t].log_proposal.push_back(level.log_proposal[slot]);
      next_index.emplace(level.cells[slot], 0);
    }
    out.levels.push_back(std::move(level));
    if (r == depth) break;

    // Next parents in ascending index order.
    parents.clear();
    parent_log_p.clear();
    for (auto& [cell, idx] : next_index) {
      idx = static_cast<std::uint32_t>(parents.size());
      parents.push_back(cell);
    }
    parent_log_p.resize(parents.size());
    for (std::size_t t = 0; t < n_traj; ++t) {
      traj_parent[t] = next_index.at(drawn[t]);
      parent_log_p[traj_parent[t]] = out.trajectories[t].log_proposal.back();
    }
  }
  return out;
}

/// n uniform cells at one recursion, deduplicated with multiplicity.
template <PyramidSpace Space>
NegativeLevel sample_uniform_negatives(const CellScorer<Space>& scorer, int recursion, std::size_t n, Rng& rng,
                                       bool with_replacement = true) {
  const CellIndex width = Space::level_size(recursion);
  if (n < 1) throw std::domain_error("need at least one uniform negative");
  std::map<CellIndex, std::size_t> counts;
  if (with_replacement) {
    for (std::size_t i = 0; i < n; ++i) ++counts[uniform_index(rng, width)];
  } else {
    for (CellIndex c : sample_without_replacement(width, n, rng)) counts[c] = 1;
  }
  NegativeLevel level;
  level.recursion = recursion;
  const double per = static_cast<double>(width) / static_cast<double>(n);
  for (const auto& [cell, m] : counts) {
    level.cells.push_back(cell);
    level.weights.push_back(per * static_cast<double>(m));
    level.log_proposal.push_back(-std::log(static_cast<double>(width)));
  }
  level.scores.resize(level.cells.size());
  scorer.score(recursion, level.cells, level.scores);
  return level;
}

/// Ẑ = exp(shift)·value with an estimate of Var(Ẑ) in the same shifted units.
struct PartitionEstimate {
  double shift = 0.0;
  double value = 0.0;
  double variance = 0.0;

  double log_value() const { return shift + std::log(value); }
};

/// |level| times the mean of f over n uniform cells.
template <PyramidSpace Space>
PartitionEstimate partition_uniform(const CellScorer<Space>& scorer, int recursion, std::size_t n, Rng& rng,
                                    bool with_replacement = true, std::optional<double> shift = std::nullopt) {
  const CellIndex width = Space::level_size(recursion);
  if (n < 1) throw std::domain_error("need at least one sample");
  std::vector<CellIndex> cells(n);
  if (with_replacement) {
    for (auto& c : cells) c = uniform_index(rng, width);
  } else {
    cells = sample_without_replacement(width, n, rng);
  }
  std::vector<double> s(n);
  scorer.score(recursion, cells, s);
  PartitionEstimate est;
  est.shift = shift.value_or(*std::max_element(s.begin(), s.end()));
  double sum = 0.0, sum_sq = 0.0;
  for (double v : s) {
    const double f = std::exp(v - est.shift);
    sum += f;
    sum_sq += f * f;
  }
  const double nd = static_cast<double>(n), wd = static_cast<double>(width);
  const double mean = sum / nd;
  est.value = wd * mean;
  if (n > 1) {
    double var = std::max(0.0, (sum_sq - nd * mean * mean) / (nd - 1.0)) / nd;
    if (!with_replacement) var *= 1.0 - nd / wd;  // finite-population correction
    est.variance = wd * wd * var;
  }
  return est;
}

enum class IsEstimator {
  kSiblingSets,   // Σ over scored sibling sets, weighted by multiplicity / p̄(parent)
  kSampledCells,  // mean over trajectories of f(cell) / p̄(cell)
};

/// Importance-sampled Ẑ from one level of a trajectory negative set.
inline PartitionEstimate partition_is(const NegativeLevel& level, IsEstimator kind = IsEstimator::kSiblingSets,
                                      std::optional<double> shift = std::nullopt) {
  if (level.trajectory_cell.empty()) throw std::domain_error("partition_is needs a trajectory negative set");
  for (double lp : level.log_proposal)
    if (!std::isfinite(lp)) throw NumericError("proposal probability underflowed to zero");
  PartitionEstimate est;
  est.shift = shift.value_or(*std::max_element(level.scores.begin(), level.scores.end()));
  const std::size_t n = level.trajectory_cell.size();
  std::vector<double> y(n);
  if (kind == IsEstimator::kSiblingSets) {
    std::vector<double> group_sum(level.group_log_proposal.size(), 0.0);
    for (std::size_t j = 0; j < level.cells.size(); ++j) group_sum[level.group[j]] += std::exp(level.scores[j] - est.shift);
    for (std::size_t t = 0; t < n; ++t) {
      const std::uint32_t g = level.trajectory_group[t];
      y[t] = group_sum[g] * std::exp(-level.group_log_proposal[g]);
    }
  } else {
    for (std::size_t t = 0; t < n; ++t) {
      const std::uint32_t j = level.trajectory_cell[t];
      y[t] = std::exp(level.scores[j] - est.shift - level.log_proposal[j]);
    }
  }
  const double nd = static_cast<double>(n);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / nd;
  est.value = mean;
  if (n > 1) {
    double ss = 0.0;
    for (double v : y) ss += (v - mean) * (v - mean);
    est.variance = ss / (nd - 1.0) / nd;
  }
  return est;
}

/// Loss weights w_j = weight_j·N/|level|: the uniform scheme with N draws gets
/// multiplicity weights, and any scheme's Σ w_j f_j estimates N·mean(f).
template <PyramidSpace Space>
std::vector<double> infonce_weights(const NegativeLevel& level, double nominal_count) {
  const double scale = nominal_count / static_cast<double>(Space::level_size(level.recursion));
  std::vector<double> w(level.weights.size());
  for (std::size_t j = 0; j < w.size(); ++j) w[j] = level.weights[j] * scale;
  return w;
}

struct InfoNceResult {
  double loss = 0.0;
  double grad_positive = 0.0;            // ∂loss/∂s⁺
  std::vector<double> grad_negatives;    // ∂loss/∂s_j
};

/// −log[f⁺ / (f⁺ + Σ_j w_j f_j)] with f = exp(s); weights are constants.
inline InfoNceResult infonce(double s_pos, std::span<const double> s_neg, std::span<const double> w_neg) {
  if (s_neg.size() != w_neg.size()) throw std::domain_error("negative scores and weights differ in length");
  std::vector<double> t(s_neg.size() + 1);
  t[0] = s_pos;
  for (std::size_t j = 0; j < s_neg.size(); ++j) {
    if (!(w_neg[j] >= 0.0)) throw std::domain_error("negative weights must be >= 0");
    t[j + 1] = w_neg[j] > 0.0 ? s_neg[j] + std::log(w_neg[j]) : -std::numeric_limits<double>::infinity();
  }
  const double lse = log_sum_exp(t);
  InfoNceResult out;
  out.loss = lse - s_pos;
  out.grad_positive = std::exp(s_pos - lse) - 1.0;
  out.grad_negatives.resize(s_neg.size());
  for (std::size_t j = 0; j < s_neg.size(); ++j) out.grad_negatives[j] = std::exp(t[j + 1] - lse);
  if (!std::isfinite(out.loss)) throw NumericError("InfoNCE loss is not finite");
  return out;
}

}  // namespace spyro
