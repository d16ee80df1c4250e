#include <filesystem>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tdcosim/cli.hpp"

using namespace tdcosim;
namespace fs = std::filesystem;

namespace {

ModelArgs case_args(const std::string& name) {
  ModelArgs m;
  m.case_file = name;
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tdcosim_cli_" + name);
  fs::remove_all(p);
  return p;
}

} // namespace

TEST(LoadCase, ArgumentCombinations) {
  ModelArgs both = case_args("ts1.json");
  both.network = "ieee9.json";
  EXPECT_THROW(load_case(both), DomainError);
  ModelArgs no_net;
  no_net.feeders = {"feeder4.json@6"};
  EXPECT_THROW(load_case(no_net), DomainError);
  ModelArgs no_feeders;
  no_feeders.network = "ieee9.json";
  EXPECT_THROW(load_case(no_feeders), DomainError);

  ModelArgs explicit_;
  explicit_.network = "ieee9.json";
  explicit_.feeders = {"feeder4.json@5", "feeder4.json@8"};
  const auto c = load_case(explicit_);
  EXPECT_EQ(c.tx.pcc_buses, (std::vector<int>{5, 8}));
  EXPECT_EQ(load_case({}).feeders.size(), 1u); // default case
}

TEST(Run, BaseCaseFpi) {
  RunArgs a;
  a.models = case_args("ts1.json");
  const auto rep = cmd_run(a);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_TRUE(rep.all_converged());
  EXPECT_GE(rep.rows[0].iterations, 3);
  EXPECT_LE(rep.rows[0].iterations, 10);
  EXPECT_LE(rep.rows[0].final_norm, 1e-4);
  EXPECT_NEAR(rep.rows[0].current_unbalance[0], 0.0, 1e-6);
}

TEST(Run, TighterToleranceNeedsMoreIterations) {
  int prev = 0;
  for (double eps : {1e-2, 1e-4, 1e-6, 1e-8}) {
    for (auto m : {Method::FPI, Method::Newton}) {
      RunArgs a;
      a.models = case_args("ts2.json");
      a.eps = eps;
      a.method = m;
      const auto rep = cmd_run(a);
      ASSERT_TRUE(rep.all_converged()) << eps;
      if (m == Method::FPI) {
        EXPECT_GE(rep.rows[0].iterations, prev) << eps;
        prev = rep.rows[0].iterations;
      }
    }
  }
}

TEST(Run, LooseStepScenarioLeavesResidual) {
  RunArgs a;
  a.models = case_args("ts1.json");
  a.method = Method::Loose;
  a.scenario = "step50.json";
  const auto rep = cmd_run(a);
  ASSERT_EQ(rep.rows.size(), 10u);
  bool saw = false;
  for (std::size_t t = 1; t < rep.rows.size(); ++t)
    if (!rep.rows[t].converged) {
      saw = true;
      EXPECT_EQ(rep.rows[t].status, CoIterStatus::SingleExchange);
      EXPECT_EQ(rep.rows[t].iterations, 1);
    }
  EXPECT_TRUE(saw);
}

TEST(Run, WritesTraceAndReport) {
  const auto dir = scratch("run");
  RunArgs a;
  a.models = case_args("ts2.json");
  a.method = Method::Newton;
  a.scenario = "step50.json";
  a.out = dir.string();
  const auto rep = cmd_run(a);
  ASSERT_TRUE(rep.all_converged()) << rep.message;
  const auto report = read_csv_file(dir / "report.csv");
  ASSERT_EQ(report.rows.size(), 10u);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(report.number(t, "N"), rep.rows[t].iterations);
    EXPECT_EQ(report.rows[t][report.column("converged")], "true");
    EXPECT_GT(report.number(t, "pcc3_V1_mag"), 0.9);
  }
  const auto trace = read_csv_file(dir / "trace.csv");
  std::size_t records = 0;
  for (const auto& r : rep.rows) records += static_cast<std::size_t>(r.iterations);
  EXPECT_EQ(trace.rows.size(), records);
  EXPECT_EQ(trace.number(trace.rows.size() - 1, "t"), 9);
  fs::remove_all(dir);
}

TEST(Run, PublishedJacobianIsSelectable) {
  RunArgs a;
  a.models = case_args("ts1.json");
  a.method = Method::Newton;
  a.jacobian = JacobianModel::Published;
  RunReport rep;
  EXPECT_NO_THROW(rep = cmd_run(a));
  ASSERT_EQ(rep.rows.size(), 1u);
}

TEST(Sweep, BalancedCellsAllConverge) {
  SweepArgs a;
  a.models = case_args("ts1.json");
  a.multipliers = {1.0, 1.5, 2.0, 2.5};
  a.unbalance = {0.0};
  const auto rep = cmd_sweep(a);
  ASSERT_EQ(rep.rows.size(), 4u);
  EXPECT_TRUE(rep.all_converged());
  for (const auto& r : rep.rows) {
    EXPECT_TRUE(r.calibration.reached);
    EXPECT_EQ(r.calibration.allocation_a, std::vector<double>{1.0});
    EXPECT_LE(r.cells[1].iterations, r.cells[0].iterations);
  }
}

TEST(Sweep, CalibratedCellsHitTheirTargets) {
  const auto dir = scratch("sweep");
  SweepArgs a;
  a.models = case_args("ts2.json");
  a.multipliers = {1.0, 2.0};
  a.unbalance = {30.0};
  a.out = dir.string();
  const auto rep = cmd_sweep(a);
  ASSERT_TRUE(rep.all_converged());
  for (const auto& r : rep.rows)
    for (const auto& c : r.cells)
      for (double u : c.current_unbalance) EXPECT_NEAR(u, 30.0, 1.0);
  const auto csv = read_csv_file(dir / "sweep.csv");
  ASSERT_EQ(csv.rows.size(), 2u);
  EXPECT_NEAR(csv.number(0, "unbalance_measured_pct"), 30.0, 0.25);
  EXPECT_EQ(csv.rows[0][csv.column("calibrated")], "true");
  EXPECT_EQ(std::count(csv.rows[0][csv.column("allocation_a")].begin(), csv.rows[0][csv.column("allocation_a")].end(), ';'), 2);
  fs::remove_all(dir);
}

TEST(Sweep, UnreachableTargetIsSkipped) {
  SweepArgs a;
  a.models = case_args("ts1.json");
  a.multipliers = {1.0};
  a.unbalance = {150.0};
  const auto rep = cmd_sweep(a);
  ASSERT_EQ(rep.rows.size(), 1u);
  EXPECT_TRUE(rep.rows[0].skipped);
  EXPECT_FALSE(rep.all_converged());
  EXPECT_FALSE(rep.rows[0].calibration.message.empty());
}

TEST(Calibration, PhaseAReductionRaisesUnbalance) {
  const auto c = load_models("ts1.json");
  const auto lo = calibrate_unbalance(c, 1.0, 10.0, TxMode::ThreeSequence);
  const auto hi = calibrate_unbalance(c, 1.0, 40.0, TxMode::ThreeSequence);
  ASSERT_TRUE(lo.reached && hi.reached);
  EXPECT_LT(hi.allocation_a[0], lo.allocation_a[0]);
  EXPECT_LT(lo.allocation_a[0], 1.0);
}

TEST(CompareTxMode, DifferenceGrowsWithUnbalance) {
  CompareArgs a;
  a.models = case_args("ts1.json");
  a.unbalance = {0.0, 20.0, 40.0};
  const auto rows = cmd_compare_txmode(a);
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) EXPECT_TRUE(r.converged);
  EXPECT_LE(rows[0].difference, 1e-6);
  EXPECT_GT(rows[1].difference, rows[0].difference);
  EXPECT_GT(rows[2].difference, rows[1].difference);
}

TEST(OracleCheck, BundledCasePasses) {
  OracleArgs a;
  a.models.network = "ieee9.json";
  a.models.feeders = {"feeder4.json@6"};
  const auto rep = cmd_oracle_check(a);
  EXPECT_TRUE(rep.pass()) << rep.message;
  EXPECT_EQ(rep.nodes, 27 + 12);
  ASSERT_EQ(rep.methods.size(), 3u);
  for (const auto& m : rep.methods) {
    if (m.method == Method::Loose) {
      EXPECT_FALSE(m.gated);
      continue;
    }
    EXPECT_TRUE(m.pass);
    EXPECT_LE(m.deviation_v, 1e-4);
    EXPECT_LE(m.deviation_s, 1e-4);
  }
}

TEST(OracleCheck, NodeLimit) {
  OracleArgs a;
  a.models = case_args("ts2.json");
  a.node_limit = 10;
  EXPECT_THROW(cmd_oracle_check(a), DomainError);
}

TEST(OracleCheck, MisbasedFeederIsRejected) {
  OracleArgs a;
  a.models.network = "ieee9.json";
  a.models.feeders = {"feeder4_115kv.json@6"};
  try {
    cmd_oracle_check(a);
    FAIL() << "expected a base mismatch";
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("base mismatch"), std::string::npos);
  }
}
