#include <fstream>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tdcosim/oracle.hpp"

using namespace tdcosim;
using test::bundled;
using nlohmann::json;

namespace {

// Two-bus model with a grounded generator so every sequence network is referenced.
TransmissionModel grounded_two_bus(cplx z, cplx load = 0.0) {
  auto m = test::two_bus(z, load);
  m.buses[0].gen_z2 = cplx(0.0, 0.1);
  m.buses[0].gen_z0_ground = cplx(0.0, 0.05);
  return m;
}

Eigen::MatrixXcd dense(const SparseC& y) { return Eigen::MatrixXcd(y); }

Eigen::Matrix3cd block(const Eigen::MatrixXcd& y, const std::array<Eigen::Index, 3>& r,
                       const std::array<Eigen::Index, 3>& c) {
  Eigen::Matrix3cd b;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b(i, j) = y(r[static_cast<std::size_t>(i)], c[static_cast<std::size_t>(j)]);
  return b;
}

Eigen::MatrixXcd block_diag(const Eigen::Matrix3cd& b) {
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(6, 6);
  out.topLeftCorner<3, 3>() = b;
  return out;
}

CoSimConfig newton(double eps) {
  CoSimConfig cfg;
  cfg.method = Method::Newton;
  cfg.eps = eps;
  return cfg;
}

} // namespace

TEST(Combined, SequenceBlockIsTheSimilarityTransform) {
  const auto& x = SequenceTransform::get();
  const cplx y0(1.0, -3.0), y1(2.0, -8.0), y2(1.5, -7.0);
  const Eigen::Matrix3cd want = x.A * Eigen::Vector3cd(y0, y1, y2).asDiagonal() * x.T;
  EXPECT_LT((detail::seq_to_phase_block(y0, y1, y2) - want).cwiseAbs().maxCoeff(), 1e-14);
  // equal sequence admittances give a phase-diagonal block
  const Eigen::Matrix3cd d = detail::seq_to_phase_block(y1, y1, y1);
  EXPECT_LT((d - y1 * Eigen::Matrix3cd::Identity()).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Combined, TwoBusPhaseExpansion) {
  const cplx z(0.01, 0.1), load(0.3, 0.1);
  const auto tx = grounded_two_bus(z, load);
  const auto m = assemble_combined(tx, {});
  ASSERT_EQ(m.n_nodes, 6);
  const auto y = dense(m.y);
  const Eigen::Matrix3cd ybr = Eigen::Matrix3cd::Identity() / z;
  const Eigen::Matrix3cd ygen = detail::seq_to_phase_block(1.0 / cplx(0.0, 0.05), 0.0, 1.0 / cplx(0.0, 0.1));
  EXPECT_LT((block(y, m.tx_nodes[0], m.tx_nodes[0]) - (ybr + ygen)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((block(y, m.tx_nodes[0], m.tx_nodes[1]) + ybr).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((block(y, m.tx_nodes[1], m.tx_nodes[1]) - ybr).cwiseAbs().maxCoeff(), 1e-12);
  // only the machine's unequal negative/positive sequence makes the matrix nonsymmetric
  EXPECT_LT((y - y.transpose() - block_diag(ygen - ygen.transpose())).cwiseAbs().maxCoeff(), 1e-12);

  ASSERT_EQ(m.loads.size(), 3u);
  for (const auto& l : m.loads) EXPECT_EQ(l.s, load);
  ASSERT_EQ(m.sources.size(), 1u);
  EXPECT_EQ(m.slack(), 0u);
}

TEST(Combined, FeederNodesAreAppended) {
  const auto c = bundled("ts2.json");
  const auto m = assemble_combined(c.tx, c.feeders);
  EXPECT_EQ(m.n_nodes, 27 + 3 * 12);
  EXPECT_EQ(m.labels.size(), static_cast<std::size_t>(m.n_nodes));
  ASSERT_EQ(m.feeder_nodes.size(), 3u);
  EXPECT_EQ(m.pcc_bus[1], c.tx.index_of(6));
  EXPECT_EQ(m.labels[static_cast<std::size_t>(m.feeder_nodes[1][0][0])], "feeder4-bus6/" + c.feeders[1].nodes[0].name + ".a");
}

TEST(Combined, AbsentPhasesHaveNoNodes) {
  const auto c = bundled("ts1_feeder13.json");
  const auto m = assemble_combined(c.tx, c.feeders);
  const auto& f = c.feeders[0];
  for (std::size_t k = 0; k < f.nodes.size(); ++k)
    for (int p = 0; p < 3; ++p)
      EXPECT_EQ(m.feeder_nodes[0][k][static_cast<std::size_t>(p)] >= 0, f.nodes[k].has(p)) << f.nodes[k].name;
}

TEST(Combined, BaseMismatchIsRejected) {
  auto c = bundled("ts1.json");
  c.feeders[0].hv_kv = 115.0;
  try {
    assemble_combined(c.tx, c.feeders);
    FAIL() << "expected ModelError";
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("base mismatch"), std::string::npos);
  }
}

TEST(Combined, TwoFeedersOnOneBusAreRejected) {
  const auto c = bundled("ts1.json");
  const std::vector<FeederModel> fs{c.feeders[0], c.feeders[0]};
  EXPECT_THROW(assemble_combined(c.tx, fs), ModelError);
}

TEST(Monolithic, NoLoadsGiveSourceVoltageEverywhere) {
  auto tx = grounded_two_bus(cplx(0.01, 0.1));
  tx.buses[0].v_set = 1.03;
  const auto f = test::chain_feeder({test::diag3(cplx(0.01, 0.02)), test::diag3(cplx(0.02, 0.03))}, {},
                                    cplx(0.0, 0.05));
  attach_feeders(tx, {f});
  const auto sol = solve_monolithic(assemble_combined(tx, {f}));
  const auto want = balanced_phase(1.03);
  for (Eigen::Index k = 0; k < sol.v.size(); ++k) {
    const auto p = static_cast<std::size_t>(k % 3);
    EXPECT_LT(std::abs(sol.v(k) - want[p]), 1e-12) << k;
  }
  EXPECT_LT(sol.pcc_s[0].max_abs_part(), 1e-12);
}

TEST(Monolithic, TwoBusMatchesScalarSolution) {
  // V2 = 1 - z conj(S / V2), solved by plain fixed point as the reference
  const cplx z(0.01, 0.1), load(0.3, 0.1);
  cplx v2 = 1.0;
  for (int i = 0; i < 200; ++i) v2 = 1.0 - z * std::conj(load / v2);
  const auto sol = solve_monolithic(assemble_combined(grounded_two_bus(z, load), {}));
  const auto m = assemble_combined(grounded_two_bus(z, load), {});
  const auto bal = balanced_phase(v2);
  for (std::size_t p = 0; p < 3; ++p) EXPECT_LT(std::abs(sol.v(m.tx_nodes[1][p]) - bal[p]), 1e-10);
}

TEST(Monolithic, Ieee9WithoutFeedersMatchesReference) {
  std::ifstream in(std::string(TDCOSIM_TEST_DATA) + "/ieee9_reference.json");
  ASSERT_TRUE(in);
  const auto ref = json::parse(in);
  const auto tx = load_transmission_file("ieee9.json");
  const auto m = assemble_combined(tx, {});
  const auto sol = solve_monolithic(m);
  const auto& x = SequenceTransform::get();
  for (const auto& b : ref["buses"]) {
    const auto k = tx.index_of(b["id"].get<int>());
    const Eigen::Vector3cd seq = x.T * detail::gather(sol.v, m.tx_nodes[k]);
    EXPECT_LT(std::abs(seq(1) - cplx(b["re"].get<double>(), b["im"].get<double>())), 1e-6) << "bus " << b["id"];
    EXPECT_LT(std::abs(seq(0)), 1e-10);
    EXPECT_LT(std::abs(seq(2)), 1e-10);
  }
}

TEST(Monolithic, BalancedCaseHasNoNegativeOrZeroSequence) {
  for (const char* name : {"ts1.json", "ts2.json", "ts1_delta.json"}) {
    const auto c = bundled(name);
    const auto sol = solve_monolithic(assemble_combined(c.tx, c.feeders));
    for (const auto& v : sol.pcc_v_sequence()) {
      EXPECT_LE(std::abs(v[0]), 1e-10) << name;
      EXPECT_LE(std::abs(v[2]), 1e-10) << name;
    }
  }
}

TEST(Monolithic, UnbalancedCaseBalancesPowerAndCurrent) {
  const auto c = bundled("ts2.json");
  std::vector<FeederModel> fs;
  for (const auto& f : c.feeders) fs.push_back(f.scaled(1.5, {0.6, 1.0, 1.0}));
  const auto m = assemble_combined(c.tx, fs);
  const auto sol = solve_monolithic(m);
  EXPECT_LE(power_balance_residual(m, sol), 1e-9);
  EXPECT_LE(kcl_residual(m, sol.v), 1e-9);
  for (const auto& v : sol.pcc_v_sequence()) EXPECT_GT(std::abs(v[2]), 1e-4);
}

TEST(Monolithic, AgreesWithCoIterationOnEveryBundledCase) {
  for (const char* name : {"ts1.json", "ts2.json", "ts1_delta.json", "ts1_feeder13.json"}) {
    const auto c = bundled(name);
    const auto sol = solve_monolithic(assemble_combined(c.tx, c.feeders));
    const auto r = co_iterate(c.tx, c.feeders, newton(1e-9), initial_boundary(c.tx, c.feeders));
    ASSERT_TRUE(r.converged()) << name << ": " << r.message;
    for (std::size_t k = 0; k < c.feeders.size(); ++k) {
      EXPECT_LE((sequence_to_phase(r.state.pcc[k].v_t) - sol.pcc_v[k]).max_abs_part(), 1e-7) << name;
      EXPECT_LE((r.state.pcc[k].s_d - sol.pcc_s[k]).max_abs_part(), 1e-7) << name;
    }
  }
}
