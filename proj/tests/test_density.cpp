#include <gtest/gtest.h>

#include <boost/math/special_functions/bessel.hpp>

#include "spyro/density.hpp"
#include "test_support.hpp"

namespace spyro {
namespace {

// Closed form of ∫_SO(3) exp(κ(cos ω − 1)) dV = π² e^{−κ} (I₀(κ) − I₁(κ)).
double kernel_normalizer_bessel(double kappa) {
  using boost::math::cyl_bessel_i;
  return kPiSquared * std::exp(-kappa) * (cyl_bessel_i(0, kappa) - cyl_bessel_i(1, kappa));
}

TEST(RotationKernel, NormalizerMatchesBesselClosedForm) {
  for (double kappa : {0.0, 0.3, 1.0, 4.0, 25.0, 150.0}) {
    const RotationKernel k(kappa);
    EXPECT_NEAR(k.log_normalizer(), std::log(kernel_normalizer_bessel(kappa)), 1e-9) << kappa;
  }
  // beyond double range for I0 use the asymptotic e^{-κ}(I0 − I1) ≈ 1/(2√(2π) κ^{3/2})
  const RotationKernel k(1e4);
  EXPECT_NEAR(k.log_normalizer(), std::log(kPiSquared / (2.0 * std::sqrt(kTwoPi) * std::pow(1e4, 1.5))), 1e-3);
}

TEST(RotationKernel, SampledAngleMomentsMatchQuadrature) {
  constexpr double kappa = 12.0;
  const RotationKernel k(kappa);
  // independent midpoint quadrature of E[cos ω]
  double num = 0.0, den = 0.0;
  constexpr int kN = 200000;
  for (int i = 0; i < kN; ++i) {
    const double w = (i + 0.5) * kPi / kN;
    const double d = (1.0 - std::cos(w)) * std::exp(kappa * (std::cos(w) - 1.0));
    num += d * std::cos(w);
    den += d;
  }
  const double expected = num / den;
  Rng rng = make_rng(41);
  double sum = 0.0, sum_sq = 0.0;
  constexpr int kSamples = 200000;
  for (int i = 0; i < kSamples; ++i) {
    const double c = std::cos(k.sample_offset(rng).angle());
    sum += c;
    sum_sq += c * c;
  }
  const double mean = sum / kSamples;
  const double se = std::sqrt((sum_sq / kSamples - mean * mean) / kSamples);
  EXPECT_NEAR(mean, expected, 4.0 * se);
}

TEST(AnalyticPoseTarget, ZeroConcentrationIsUniformOverRotation) {
  TargetMode mode;
  mode.kappa = 0.0;
  mode.position_std = 0.01;
  const AnalyticPoseTarget target({mode});
  Rng rng = make_rng(42);
  for (int i = 0; i < 100; ++i) EXPECT_NEAR(target.log_pdf(UnitQuaternion::random(rng)), -std::log(kPiSquared), 1e-12);
  EXPECT_NEAR(-std::log(kPiSquared), -2.2894, 1e-4);
}

TEST(AnalyticPoseTarget, SymmetryClosureSizes) {
  const UnitQuaternion rz90 = UnitQuaternion::from_axis_angle({0, 0, 1}, kPi / 2);
  const UnitQuaternion rx90 = UnitQuaternion::from_axis_angle({1, 0, 0}, kPi / 2);
  const UnitQuaternion rz60 = UnitQuaternion::from_axis_angle({0, 0, 1}, kPi / 3);
  const std::vector<UnitQuaternion> cyclic4{rz90}, octa{rz90, rx90}, cyclic6{rz60};
  EXPECT_EQ(symmetry_closure(cyclic4).size(), 4u);
  EXPECT_EQ(symmetry_closure(octa).size(), 24u);
  EXPECT_EQ(symmetry_closure(cyclic6).size(), 6u);
  const std::vector<UnitQuaternion> irrational{UnitQuaternion::from_axis_angle({0, 0, 1}, 1.0)};
  EXPECT_THROW(symmetry_closure(irrational), ConfigError);
}

TEST(AnalyticPoseTarget, DensityInvariantUnderOwnSymmetryGroup) {
  Rng rng = make_rng(43);
  const std::vector<UnitQuaternion> gens{UnitQuaternion::from_axis_angle({0, 0, 1}, kPi / 2),
                                         UnitQuaternion::from_axis_angle({1, 0, 0}, kPi)};
  std::vector<TargetMode> modes(2);
  modes[0] = {UnitQuaternion::random(rng), 30.0, {0.0, 0.0, 0.5}, 0.02, 2.0};
  modes[1] = {UnitQuaternion::random(rng), 5.0, {0.01, 0.0, 0.5}, 0.03, 1.0};
  const AnalyticPoseTarget target(modes, gens);
  EXPECT_EQ(target.symmetry_group().size(), 8u);
  for (int i = 0; i < 200; ++i) {
    const Pose x{UnitQuaternion::random(rng), Eigen::Vector3d(0.0, 0.01, 0.51)};
    const double base = target.log_pdf(x);
    for (const UnitQuaternion& s : target.symmetry_group()) {
      EXPECT_NEAR(target.log_pdf(Pose{x.rotation * s, x.translation}), base, 1e-12 * std::max(1.0, std::abs(base)));
      EXPECT_NEAR(target.log_pdf(x.rotation * s), target.log_pdf(x.rotation), 1e-12 * std::max(1.0, std::abs(base)));
    }
  }
}

TEST(AnalyticPoseTarget, JointDensityFactorizesForSingleMode) {
  TargetMode m{UnitQuaternion::identity(), 10.0, {0.1, -0.2, 0.6}, 0.05, 1.0};
  const AnalyticPoseTarget target({m});
  const Pose x{UnitQuaternion::from_axis_angle({0, 1, 0}, 0.3), Eigen::Vector3d(0.12, -0.21, 0.58)};
  const double var = 0.05 * 0.05;
  const double gauss = -0.5 * (x.translation - m.position).squaredNorm() / var - 1.5 * std::log(kTwoPi * var);
  const double rot = 10.0 * (std::cos(0.3) - 1.0) - std::log(kernel_normalizer_bessel(10.0));
  EXPECT_NEAR(target.log_pdf(x), gauss + rot, 1e-9);
}

TEST(AnalyticPoseTarget, RejectsInvalidModes) {
  EXPECT_THROW(AnalyticPoseTarget({}), ConfigError);
  TargetMode bad;
  bad.weight = 0.0;
  EXPECT_THROW(AnalyticPoseTarget({bad}), ConfigError);
  TargetMode neg;
  neg.kappa = -1.0;
  EXPECT_THROW(AnalyticPoseTarget({neg}), ConfigError);
  TargetMode rot_only;
  EXPECT_THROW(AnalyticPoseTarget({rot_only}).log_pdf(Pose{}), std::domain_error);
}

TEST(AnalyticPoseTarget, FourFoldSymmetricCellsHaveEqualProbability) {
  // The grid is invariant under left multiplication by R_x(90°) at r ≥ 1 (it
  // shifts ψ by a whole number of bins), so a target that is left-invariant
  // under it must give the four images of any cell equal mass.
  Rng rng = make_rng(44);
  const UnitQuaternion l = UnitQuaternion::from_axis_angle({1, 0, 0}, kPi / 2);
  const UnitQuaternion r0 = UnitQuaternion::random(rng);
  const std::vector<UnitQuaternion> gens{r0.inverse() * l * r0};
  const AnalyticPoseTarget target({TargetMode{r0, 8.0, {}, 0.0, 1.0}}, gens);
  const So3Pyramid space;
  constexpr int kR = 2;
  const CellIndex c0 = *space.lookup(r0, kR);
  std::vector<CellIndex> cells{c0};
  UnitQuaternion q = space.center(kR, c0);
  for (int k = 1; k < 4; ++k) {
    q = l * q;
    cells.push_back(*space.lookup(q, kR));
  }
  for (std::size_t i = 1; i < cells.size(); ++i) ASSERT_NE(cells[i], cells[0]);
  std::vector<CellProbability> p;
  for (CellIndex c : cells) p.push_back(analytic_cell_log_prob(target, space, kR, c, 20000, rng));
  for (std::size_t i = 1; i < p.size(); ++i) {
    const double se = std::hypot(p[i].standard_error, p[0].standard_error);
    EXPECT_NEAR(p[i].prob, p[0].prob, 3.5 * se);
  }
}

TEST(AnalyticPoseTarget, LevelOneCellProbabilitiesSumToOne) {
  Rng rng = make_rng(45);
  const Eigen::Vector3d t_hat(0.0, 0.0, 0.5);
  const Se3Pyramid space(So3Grid(), R3Grid(BoundsMatrix::from_detection(t_hat, 0.1), t_hat));
  // position concentrated well inside the bounds so the truncated tail is negligible
  const AnalyticPoseTarget target({TargetMode{UnitQuaternion::random(rng), 3.0, t_hat, 0.01, 1.0}});
  double sum = 0.0, var = 0.0;
  for (CellIndex c = 0; c < Se3Pyramid::level_size(0); ++c) {
    const CellProbability p = analytic_cell_log_prob(target, space, 0, c, 400, rng);
    sum += p.prob;
    var += p.standard_error * p.standard_error;
  }
  EXPECT_NEAR(sum, 1.0, 3.0 * std::sqrt(var));

  const So3Pyramid so3;
  sum = 0.0;
  var = 0.0;
  for (CellIndex c = 0; c < So3Pyramid::level_size(1); ++c) {
    const CellProbability p = analytic_cell_log_prob(target, so3, 1, c, 200, rng);
    sum += p.prob;
    var += p.standard_error * p.standard_error;
  }
  EXPECT_NEAR(sum, 1.0, 3.0 * std::sqrt(var));
}

TEST(AnalyticPoseTarget, SamplesFollowTheDensity) {
  Rng rng = make_rng(46);
  const AnalyticPoseTarget target({TargetMode{UnitQuaternion::random(rng), 2.0, {}, 0.0, 1.0},
                                   TargetMode{UnitQuaternion::random(rng), 6.0, {}, 0.0, 0.5}});
  const So3Pyramid space;
  std::vector<std::uint64_t> counts(72, 0);
  constexpr int kN = 200000;
  for (int i = 0; i < kN; ++i) ++counts[*space.lookup(target.sample_rotation(rng), 0)];
  double chi2 = 0.0;
  for (CellIndex c = 0; c < 72; ++c) {
    const double e = kN * analytic_cell_log_prob(target, space, 0, c, 20000, rng).prob;
    chi2 += (counts[c] - e) * (counts[c] - e) / e;
  }
  // MC error in the expected counts is ~0.7% relative, well below the sampling noise
  EXPECT_LT(chi2, testing::chi_square_critical(71, 1e-3) * 1.2);
}

TEST(Scorers, CenterScorerMatchesDirectEvaluationAndIsOrderInvariant) {
  Rng rng = make_rng(47);
  const AnalyticPoseTarget target({TargetMode{UnitQuaternion::random(rng), 4.0, {}, 0.0, 1.0}});
  const AnalyticScorer<UnitQuaternion> pose_scorer(target);
  const So3Pyramid space;
  const CenterScorer<So3Pyramid> cells(space, pose_scorer);
  std::vector<CellIndex> idx{5, 100, 3, 4000, 17};
  std::vector<double> a(idx.size());
  cells.score(2, idx, a);
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(a[i], target.log_pdf(space.center(2, idx[i])));
  std::vector<CellIndex> rev(idx.rbegin(), idx.rend());
  std::vector<double> b(idx.size());
  cells.score(2, rev, b);
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(a[i], b[idx.size() - 1 - i]);
  const UniformScorer<UnitQuaternion> uniform;
  const CenterScorer<So3Pyramid> ucells(space, uniform);
  EXPECT_EQ(ucells.score_one(3, 99), 0.0);
  EXPECT_FALSE(ucells.max_recursion().has_value());
}

}  // namespace
}  // namespace spyro
