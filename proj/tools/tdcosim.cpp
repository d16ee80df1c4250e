// tdcosim: T&D co-simulation experiments from the command line.
//
//   tdcosim run           --case ts1.json --method newton --scenario step50.json --out out/
//   tdcosim sweep         --case ts2.json --multipliers 1 1.5 2 2.5 --unbalance 0 20 40 60
//   tdcosim compare-txmode --unbalance 0 20 40 50 60
//   tdcosim oracle-check  --network ieee9.json --feeders feeder4.json@6
//
// Exit status: 0 when every requested case converged (oracle-check: passed), 1 when some
// did not, 2 on bad input or model errors.

#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "tdcosim/cli.hpp"

using namespace tdcosim;

namespace {

const std::map<std::string, Method> kMethods{{"fpi", Method::FPI}, {"newton", Method::Newton}, {"loose", Method::Loose}};
const std::map<std::string, TxMode> kTxModes{{"threeseq", TxMode::ThreeSequence},
                                             {"posseq", TxMode::PositiveSequenceOnly}};
const std::map<std::string, JacobianModel> kJacobians{{"sensitivity", JacobianModel::Sensitivity},
                                                      {"published", JacobianModel::Published}};

void add_model_flags(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--case", m.case_file, "case file bundling a network and its feeders");
  cmd->add_option("--network", m.network, "transmission network file");
  cmd->add_option("--feeders", m.feeders, "feeder files as file@bus (repeatable)");
}

void print_run(const RunReport& rep) {
  std::cout << "case " << rep.case_name << "\n";
  for (const auto& r : rep.rows) {
    std::cout << "  step " << r.step << " (" << r.label << ") " << to_string(r.method) << ": N=" << r.iterations
              << " T=" << r.wall_ms << " ms " << to_string(r.status) << " norm=" << r.final_norm;
    if (!r.current_unbalance.empty()) std::cout << " I-unbalance=" << r.current_unbalance[0] << "%";
    std::cout << "\n";
  }
  if (!rep.message.empty()) std::cout << "  " << rep.message << "\n";
}

void print_sweep(const SweepReport& rep) {
  std::cout << "case " << rep.case_name << "\n  mult  target  measured";
  for (auto m : rep.methods) std::cout << "  " << to_string(m) << " N (T ms)";
  std::cout << "\n";
  for (const auto& r : rep.rows) {
    std::cout << "  " << r.multiplier << "  " << r.calibration.target << "%  " << r.calibration.measured << "%";
    if (r.skipped) {
      std::cout << "  skipped: " << r.calibration.message << "\n";
      continue;
    }
    for (const auto& c : r.cells) {
      std::cout << "  " << (c.converged ? std::to_string(c.iterations) : std::string(to_string(c.status)));
      std::cout << " (" << c.wall_ms << ")";
    }
    std::cout << "\n";
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transmission and distribution co-simulation"};
  app.require_subcommand(1);

  RunArgs run;
  std::string run_method = "fpi", run_tx = "threeseq", run_jac = "sensitivity";
  auto* run_cmd = app.add_subcommand("run", "co-simulate a scenario and write the trace");
  add_model_flags(run_cmd, run.models);
  run_cmd->add_option("--method", run_method)->check(CLI::IsMember({"fpi", "newton", "loose"}));
  run_cmd->add_option("--eps", run.eps, "interface residual tolerance")->check(CLI::PositiveNumber);
  run_cmd->add_option("--alpha", run.alpha, "FPI relaxation");
  run_cmd->add_option("--max-iter", run.max_iter, "co-iteration limit per step")->check(CLI::PositiveNumber);
  run_cmd->add_option("--tx-mode", run_tx)->check(CLI::IsMember({"threeseq", "posseq"}));
  run_cmd->add_option("--jacobian", run_jac)->check(CLI::IsMember({"sensitivity", "published"}));
  run_cmd->add_option("--scenario", run.scenario, "scenario file (default: one base step)");
  run_cmd->add_option("--out", run.out, "output directory for trace.csv and report.csv");
  run_cmd->add_flag("!--serial", run.parallel, "solve feeders one after another");

  SweepArgs sweep;
  std::vector<std::string> sweep_methods{"fpi", "newton"};
  std::string sweep_tx = "threeseq", sweep_jac = "sensitivity";
  auto* sweep_cmd = app.add_subcommand("sweep", "load multiplier x current unbalance study");
  add_model_flags(sweep_cmd, sweep.models);
  sweep_cmd->add_option("--multipliers", sweep.multipliers);
  sweep_cmd->add_option("--unbalance", sweep.unbalance, "percent current unbalance targets");
  sweep_cmd->add_option("--methods", sweep_methods)->check(CLI::IsMember({"fpi", "newton", "loose"}));
  sweep_cmd->add_option("--eps", sweep.eps)->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--alpha", sweep.alpha);
  sweep_cmd->add_option("--max-iter", sweep.max_iter)->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--tx-mode", sweep_tx)->check(CLI::IsMember({"threeseq", "posseq"}));
  sweep_cmd->add_option("--jacobian", sweep_jac)->check(CLI::IsMember({"sensitivity", "published"}));
  sweep_cmd->add_option("--out", sweep.out, "output directory for sweep.csv");

  CompareArgs cmp;
  std::string cmp_method = "newton";
  auto* cmp_cmd = app.add_subcommand("compare-txmode", "three-sequence vs positive-sequence transmission");
  add_model_flags(cmp_cmd, cmp.models);
  cmp_cmd->add_option("--unbalance", cmp.unbalance, "percent current unbalance cases");
  cmp_cmd->add_option("--multiplier", cmp.multiplier)->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--method", cmp_method)->check(CLI::IsMember({"fpi", "newton"}));
  cmp_cmd->add_option("--eps", cmp.eps)->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--max-iter", cmp.max_iter)->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--out", cmp.out, "output directory for txmode.csv");

  OracleArgs orc;
  std::vector<std::string> orc_methods{"fpi", "newton", "loose"};
  auto* orc_cmd = app.add_subcommand("oracle-check", "compare co-simulation with the monolithic solve");
  add_model_flags(orc_cmd, orc.models);
  orc_cmd->add_option("--methods", orc_methods)->check(CLI::IsMember({"fpi", "newton", "loose"}));
  orc_cmd->add_option("--eps", orc.eps)->check(CLI::PositiveNumber);
  orc_cmd->add_option("--max-iter", orc.max_iter)->check(CLI::PositiveNumber);
  orc_cmd->add_option("--out", orc.out, "output directory for oracle.csv");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      run.method = kMethods.at(run_method);
      run.tx_mode = kTxModes.at(run_tx);
      run.jacobian = kJacobians.at(run_jac);
      const RunReport rep = cmd_run(run);
      print_run(rep);
      return rep.all_converged() ? 0 : 1;
    }
    if (*sweep_cmd) {
      sweep.methods.clear();
      for (const auto& m : sweep_methods) sweep.methods.push_back(kMethods.at(m));
      sweep.tx_mode = kTxModes.at(sweep_tx);
      sweep.jacobian = kJacobians.at(sweep_jac);
      const SweepReport rep = cmd_sweep(sweep);
      print_sweep(rep);
      return rep.all_converged() ? 0 : 1;
    }
    if (*cmp_cmd) {
      cmp.method = kMethods.at(cmp_method);
      const auto rows = cmd_compare_txmode(cmp);
      std::cout << "  target  measured  |V1| threeseq  |V1| posseq  |dV1|\n";
      bool ok = true;
      for (const auto& r : rows) {
        std::cout << "  " << r.calibration.target << "%  " << r.calibration.measured << "%  " << std::abs(r.v1_threeseq)
                  << "  " << std::abs(r.v1_posseq) << "  " << r.difference << (r.converged ? "" : "  (not converged)")
                  << "\n";
        ok = ok && r.converged;
      }
      return ok ? 0 : 1;
    }
    if (*orc_cmd) {
      orc.methods.clear();
      for (const auto& m : orc_methods) orc.methods.push_back(kMethods.at(m));
      const OracleReport rep = cmd_oracle_check(orc);
      std::cout << "oracle: " << rep.nodes << " phase nodes, " << rep.oracle_iterations << " iterations\n";
      for (const auto& m : rep.methods)
        std::cout << "  " << to_string(m.method) << ": N=" << m.iterations << (m.converged ? "" : " (not converged)")
                  << " max |dV|=" << m.deviation_v << " max |dS|=" << m.deviation_s
                  << (m.gated ? (m.pass ? "  ok" : "  FAIL") : "  (informational)") << "\n";
      std::cout << to_string(rep.status) << (rep.message.empty() ? "" : ": " + rep.message) << "\n";
      return rep.pass() ? 0 : 1;
    }
  } catch (const tdcosim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
