#include <gtest/gtest.h>

#include "support.hpp"
#include "tdcosim/distribution.hpp"

using namespace tdcosim;
using test::chain_feeder;
using test::diag3;

namespace {

const ComplexTriple kFlat = balanced_phase(1.0);

Eigen::Matrix3cd mutual_z(double scale) {
  Eigen::Matrix3cd z;
  z << cplx(0.30, 0.90), cplx(0.10, 0.40), cplx(0.09, 0.35), //
      cplx(0.10, 0.40), cplx(0.31, 0.88), cplx(0.10, 0.42),  //
      cplx(0.09, 0.35), cplx(0.10, 0.42), cplx(0.29, 0.91);
  return z * scale;
}

/// Brute-force Thevenin admittance of a wye-g chain feeder: full dense phase Y with the
/// loads as admittances, then the Schur complement onto the PCC phases.
Eigen::Matrix3cd dense_reduction(const FeederModel& f, const DxSolution& at) {
  const auto n = static_cast<Eigen::Index>(3 + 3 * f.nodes.size());
  Eigen::MatrixXcd y = Eigen::MatrixXcd::Zero(n, n);
  auto stamp = [&](Eigen::Index a, Eigen::Index b, const Eigen::Matrix3cd& ys) {
    y.block<3, 3>(a, a) += ys;
    y.block<3, 3>(b, b) += ys;
    y.block<3, 3>(a, b) -= ys;
    y.block<3, 3>(b, a) -= ys;
  };
  stamp(0, 3, Eigen::Matrix3cd::Identity() / f.transformer.z);
  for (const auto& ln : f.lines) {
    const auto a = static_cast<Eigen::Index>(3 + 3 * ln.from), b = static_cast<Eigen::Index>(3 + 3 * ln.to);
    stamp(a, b, ln.z.inverse());
    y.block<3, 3>(a, a) += 0.5 * ln.y_shunt;
    y.block<3, 3>(b, b) += 0.5 * ln.y_shunt;
  }
  for (const auto& l : f.loads) {
    const auto i = static_cast<Eigen::Index>(3 + 3 * l.node + static_cast<std::size_t>(l.phase));
    y(i, i) += std::conj(f.effective_load(l)) / std::norm(at.v[l.node](l.phase));
  }
  const Eigen::Index m = n - 3;
  return y.topLeftCorner(3, 3) - y.topRightCorner(3, m) * y.bottomRightCorner(m, m).inverse() * y.bottomLeftCorner(m, 3);
}

} // namespace

TEST(SolveF2, NoLoadsNoPower) {
  const auto f = chain_feeder({Eigen::Matrix3cd::Zero(), Eigen::Matrix3cd::Zero()}, {});
  const auto sol = solve_f2(f, kFlat);
  EXPECT_TRUE(sol.converged);
  EXPECT_EQ(sol.s_d.max_abs_part(), 0.0);
}

TEST(SolveF2, HeadLoadBehindZeroImpedance) {
  const cplx s(1.0, 0.5);
  const auto f = chain_feeder({}, {{s, s, s}});
  const auto sol = solve_f2(f, kFlat);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_LT(std::abs(sol.s_d[p] - s), 1e-14);
}

TEST(SolveF2, OneLineMatchesScalarFixedPoint) {
  const cplx z(0.01, 0.02), s(0.5, 0.2);
  const auto f = chain_feeder({diag3(z)}, {{}, {s, s, s}});
  const auto sol = solve_f2(f, kFlat);
  // Per phase: V2 = Vp - z conj(s / V2); S_D = Vp conj(I) with I = conj(s / V2).
  for (std::size_t p = 0; p < 3; ++p) {
    const cplx vp = kFlat[p];
    cplx v2 = vp;
    for (int it = 0; it < 200; ++it) v2 = vp - z * std::conj(s / v2);
    EXPECT_LT(std::abs(sol.v[1](static_cast<Eigen::Index>(p)) - v2), 1e-8);
    EXPECT_LT(std::abs(sol.s_d[p] - vp * (s / v2)), 1e-8);
  }
}

TEST(SolveF2, KirchhoffAtEveryNode) {
  const auto f = chain_feeder({mutual_z(0.02), mutual_z(0.015), mutual_z(0.01)},
                              {{}, {cplx(0.3, 0.1), cplx(0.2, 0.05), 0.0}, {0.0, cplx(0.25, 0.1), cplx(0.1, 0.02)},
                               {cplx(0.15, 0.05), cplx(0.15, 0.05), cplx(0.35, 0.12)}},
                              cplx(0.002, 0.02));
  const auto sol = solve_f2(f, balanced_phase(std::polar(1.02, -0.05)));
  ASSERT_TRUE(sol.converged);
  std::vector<Eigen::Vector3cd> into(f.nodes.size(), Eigen::Vector3cd::Zero());
  into[0] = sol.i_lv;
  for (const auto& ln : f.lines) {
    const Eigen::Vector3cd i = ln.z.inverse() * (sol.v[ln.from] - sol.v[ln.to]);
    into[ln.from] -= i;
    into[ln.to] += i;
  }
  for (const auto& l : f.loads) into[l.node](l.phase) -= std::conj(f.effective_load(l) / sol.v[l.node](l.phase));
  for (const auto& r : into) EXPECT_LT(r.cwiseAbs().maxCoeff(), 1e-8);
  // Head voltage sits one transformer drop below the PCC.
  EXPECT_LT((sol.v[0] - (sol.v_pcc.vec() - f.transformer.z * sol.i_lv)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(SolveF2, BundledFeederRestartsConverged) {
  const auto f = load_feeder(Document::load(resolve_path("feeder4.json")), 100.0);
  const auto sol = solve_f2(f, kFlat);
  DxSolveOptions opt;
  opt.warm_start = &sol;
  const auto again = solve_f2(f, kFlat, opt);
  EXPECT_EQ(again.iterations, 1);
  EXPECT_LT((again.s_d - sol.s_d).max_abs_part(), 1e-8);
}

TEST(SolveF2, DeltaSubstationDrawsNoZeroSequence) {
  const auto f = load_feeder(Document::load(resolve_path("feeder4_delta.json")), 100.0);
  const auto sol = solve_f2(f, kFlat);
  cplx i0 = 0.0;
  for (std::size_t p = 0; p < 3; ++p) i0 += std::conj(sol.s_d[p] / kFlat[p]);
  EXPECT_LT(std::abs(i0), 1e-12);
}

TEST(SolveF2, MultiplierAndAllocationScaleLoad) {
  const auto f = chain_feeder({}, {{1.0, 1.0, 1.0}});
  const auto sol = solve_f2(f.scaled(2.0, {0.5, 1.0, 1.5}), kFlat);
  EXPECT_LT(std::abs(sol.s_d[0] - 1.0), 1e-14);
  EXPECT_LT(std::abs(sol.s_d[1] - 2.0), 1e-14);
  EXPECT_LT(std::abs(sol.s_d[2] - 3.0), 1e-14);
}

TEST(SolveF2, RejectsBadVoltage) {
  const auto f = chain_feeder({}, {{1.0, 1.0, 1.0}});
  EXPECT_THROW(solve_f2(f, ComplexTriple::sequence(0.0, 1.0, 0.0)), FrameError);
  EXPECT_THROW(solve_f2(f, ComplexTriple::phase(1.0, 1.0, 0.2)), DomainError);
}

TEST(SolveF2, CollapseIsAConvergenceError) {
  const auto f = chain_feeder({diag3(cplx(0.1, 0.3))}, {{}, {5.0, 5.0, 5.0}});
  EXPECT_THROW(solve_f2(f, kFlat), ConvergenceError);
}

TEST(Thevenin, ConstantImpedanceLoad) {
  const auto f = chain_feeder({}, {{1.0, 1.0, 1.0}});
  const auto th = thevenin_at_pcc(f, solve_f2(f, kFlat));
  ASSERT_TRUE(th.z_d);
  EXPECT_LT((*th.z_d - Eigen::Matrix3cd::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Thevenin, SeriesComposition) {
  const cplx z(0.02, 0.07);
  const auto f = chain_feeder({diag3(z)}, {{}, {1.0, 1.0, 1.0}});
  DxSolution at;
  at.converged = true;
  at.v = {kFlat.vec(), kFlat.vec()}; // |V| = 1 at the load: admittance 1
  const auto th = thevenin_at_pcc(f, at);
  ASSERT_TRUE(th.z_d);
  EXPECT_LT((*th.z_d - diag3(z + 1.0)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Thevenin, MutualCouplingMatchesDenseReduction) {
  auto f = chain_feeder({mutual_z(0.02), mutual_z(0.01)},
                        {{}, {cplx(0.3, 0.1), cplx(0.2, 0.05), cplx(0.1, 0.0)}, {cplx(0.2, 0.1), 0.0, cplx(0.3, 0.1)}},
                        cplx(0.003, 0.03));
  f.lines[0].y_shunt = diag3(cplx(0.0, 0.004));
  const auto sol = solve_f2(f, kFlat);
  const auto th = thevenin_at_pcc(f, sol);
  const Eigen::Matrix3cd want = dense_reduction(f, sol);
  EXPECT_LT((th.y_d - want).cwiseAbs().maxCoeff(), 1e-10 * want.cwiseAbs().maxCoeff());
  ASSERT_TRUE(th.z_d);
  EXPECT_LT((*th.z_d - th.z_d->transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((*th.z_d * th.y_d - Eigen::Matrix3cd::Identity()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Thevenin, BundledFeedersAreReciprocal) {
  for (const char* name : {"feeder4.json", "feeder13.json"}) {
    const auto f = load_feeder(Document::load(resolve_path(name)), 100.0);
    const auto th = thevenin_at_pcc(f, solve_f2(f, kFlat));
    ASSERT_TRUE(th.z_d) << name;
    EXPECT_LT((*th.z_d - th.z_d->transpose()).cwiseAbs().maxCoeff(), 1e-10) << name;
    EXPECT_LT((*th.z_d * th.y_d - Eigen::Matrix3cd::Identity()).cwiseAbs().maxCoeff(), 1e-10) << name;
  }
}

TEST(Thevenin, DeltaBlocksZeroSequence) {
  const auto f = load_feeder(Document::load(resolve_path("feeder4_delta.json")), 100.0);
  const auto th = thevenin_at_pcc(f, solve_f2(f, kFlat));
  EXPECT_FALSE(th.z_d);
  EXPECT_LT((th.y_d * Eigen::Vector3cd::Ones()).cwiseAbs().maxCoeff(), 1e-10 * th.y_d.cwiseAbs().maxCoeff());
}

TEST(Thevenin, NeedsConvergedSolution) {
  const auto f = chain_feeder({}, {{1.0, 1.0, 1.0}});
  EXPECT_THROW(thevenin_at_pcc(f, DxSolution{}), DomainError);
}

TEST(MagnitudeSensitivity, MatchesWiderDifferences) {
  const auto f = load_feeder(Document::load(resolve_path("feeder4.json")), 100.0).scaled(1.5, {0.6, 1.0, 1.0});
  const auto v = balanced_phase(std::polar(1.01, -0.1));
  const auto sol = solve_f2(f, v);
  const auto d = magnitude_sensitivity(f, v, sol);
  const auto wide = magnitude_sensitivity(f, v, sol, 1e-3);
  EXPECT_LT((d - wide).cwiseAbs().maxCoeff(), 1e-5 * d.cwiseAbs().maxCoeff());
}

TEST(FeederModel, Validation) {
  auto loop = chain_feeder({diag3(0.01), diag3(0.01)}, {});
  loop.lines.push_back({0, 2, diag3(0.01), Eigen::Matrix3cd::Zero()});
  try {
    loop.validate();
    FAIL() << "loop accepted";
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("non-radial"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("line n2-n3"), std::string::npos);
  }

  auto lateral = chain_feeder({diag3(0.01)}, {});
  lateral.nodes[1].phases = 0b001;
  lateral.loads.push_back({1, 1, 0.1});
  EXPECT_THROW(lateral.validate(), ModelError);

  auto island = chain_feeder({diag3(0.01)}, {});
  island.nodes.push_back({"orphan", 0b111});
  EXPECT_THROW(island.validate(), ModelError);

  auto wider = chain_feeder({diag3(0.01), diag3(0.01)}, {});
  wider.nodes[1].phases = 0b011;
  EXPECT_THROW(wider.validate(), ModelError);

  auto delta = chain_feeder({}, {});
  delta.transformer.connection = TransformerConnection::DeltaWyeG;
  EXPECT_THROW(delta.validate(), ModelError);
}

TEST(FeederModel, SinglePhaseLateral) {
  auto f = chain_feeder({diag3(cplx(0.01, 0.03)), diag3(cplx(0.01, 0.03))}, {{}, {}, {0.0, cplx(0.2, 0.1), 0.0}});
  f.nodes[2].phases = 0b010;
  f.validate();
  const auto sol = solve_f2(f, kFlat);
  EXPECT_EQ(sol.v[2](0), cplx(0.0));
  EXPECT_EQ(sol.v[2](2), cplx(0.0));
  EXPECT_LT(std::abs(sol.s_d[0]), 1e-12);
  EXPECT_GT(sol.s_d[1].real(), 0.2);
}
