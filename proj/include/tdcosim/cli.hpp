#pragma once

// Experiment commands behind the tdcosim executable. Each takes a plain argument struct
// and returns a report; the executable only parses flags and writes files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tdcosim/coupling.hpp"
#include "tdcosim/io.hpp"
#include "tdcosim/oracle.hpp"

namespace tdcosim {

struct ModelArgs {
  std::string case_file;             // bundled case: network plus feeders
  std::string network;               // or a transmission file ...
  std::vector<std::string> feeders;  // ... and feeder specs "file@bus"
};

inline LoadedCase load_case(const ModelArgs& a) {
  if (!a.case_file.empty()) {
    if (!a.network.empty() || !a.feeders.empty())
      throw DomainError("give either a case file or --network/--feeders, not both");
    return load_models(a.case_file);
  }
  if (a.network.empty() && a.feeders.empty()) return load_models("ts1.json");
  if (a.network.empty()) throw DomainError("--feeders needs --network");
  if (a.feeders.empty()) throw DomainError("--network needs at least one --feeders entry");
  LoadedCase c;
  const fs::path net = resolve_path(a.network);
  c.tx = load_transmission_file(net);
  c.name = net.stem().string();
  for (const auto& spec : a.feeders) c.feeders.push_back(load_feeder_spec(spec, c.tx.base_mva));
  attach_feeders(c.tx, c.feeders);
  return c;
}

/// Percent current unbalance at every PCC, from the phase currents the feeders draw.
inline std::vector<double> current_unbalance(const TxSolution& tx) {
  std::vector<double> u;
  for (const auto& i : tx.i_abc)
    u.push_back(unbalance_percent(ComplexTriple::phase(std::abs(i[0]), std::abs(i[1]), std::abs(i[2]))));
  return u;
}

inline std::vector<double> voltage_unbalance(const BoundaryState& s) {
  std::vector<double> u;
  for (const auto& b : s.pcc)
    u.push_back(unbalance_percent(ComplexTriple::phase(std::abs(b.v_d[0]), std::abs(b.v_d[1]), std::abs(b.v_d[2]))));
  return u;
}

/// Per-feeder factors in one CSV cell, separated by ';'.
inline std::string join_factors(const std::vector<double>& x) {
  std::string s;
  for (std::size_t i = 0; i < x.size(); ++i) s += (i ? ";" : "") + fmt_num(x[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Unbalance calibration

struct Calibration {
  double target = 0.0;
  std::vector<double> allocation_a; // phase-A allocation factor per feeder
  double measured = 0.0;            // PCC current unbalance farthest from the target
  std::vector<double> per_pcc;
  bool reached = false;
  std::string message;

  std::vector<FeederModel> apply(const std::vector<FeederModel>& feeders, double multiplier) const {
    std::vector<FeederModel> fs;
    for (std::size_t k = 0; k < feeders.size(); ++k)
      fs.push_back(feeders[k].scaled(multiplier, {k < allocation_a.size() ? allocation_a[k] : 1.0, 1.0, 1.0}));
    return fs;
  }
};

/// Finds per-feeder phase-A allocation factors that put the current unbalance at every PCC
/// within `tol_pp` percentage points of `target`. Lower factors mean more unbalance. Each
/// round bisects one feeder's factor with the others held, until all PCCs agree.
inline Calibration calibrate_unbalance(const LoadedCase& c, double multiplier, double target, TxMode mode,
                                       double tol_pp = 0.25) {
  Calibration cal;
  cal.target = target;
  const std::size_t nf = c.feeders.size();
  cal.allocation_a.assign(nf, 1.0);
  if (target < 0.0 || target >= 100.0) {
    cal.message = "unbalance target must be in [0, 100)";
    return cal;
  }
  CoSimConfig cfg;
  cfg.method = Method::Newton;
  cfg.eps = 1e-8;
  cfg.max_coiter = 100;
  cfg.tx_mode = mode;
  auto measure = [&](const std::vector<double>& x) -> std::optional<std::vector<double>> {
    Calibration probe;
    probe.allocation_a = x;
    const auto fs = probe.apply(c.feeders, multiplier);
    const auto r = co_iterate(c.tx, fs, cfg, initial_boundary(c.tx, fs));
    if (!r.converged()) return std::nullopt;
    return current_unbalance(r.tx);
  };
  auto record = [&](const std::vector<double>& u) {
    cal.per_pcc = u;
    cal.measured = *std::max_element(u.begin(), u.end(), [&](double a, double b) {
      return std::abs(a - target) < std::abs(b - target);
    });
    cal.reached = std::all_of(u.begin(), u.end(), [&](double v) { return std::abs(v - target) <= tol_pp; });
  };

  auto u = measure(cal.allocation_a);
  if (!u) {
    cal.message = "co-simulation does not converge at multiplier " + fmt_num(multiplier);
    return cal;
  }
  record(*u);
  for (int round = 0; round < 8 && !cal.reached; ++round) {
    for (std::size_t k = 0; k < nf; ++k) {
      if (std::abs((*u)[k] - target) <= 0.5 * tol_pp) continue;
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 50 && hi - lo > 1e-12; ++it) {
        std::vector<double> x = cal.allocation_a;
        x[k] = 0.5 * (lo + hi);
        const auto ux = measure(x);
        if (!ux) { // beyond what converges: back off towards balance
          lo = x[k];
          continue;
        }
        if ((*ux)[k] > target) lo = x[k];
        else hi = x[k];
        cal.allocation_a = x;
        u = ux;
        if (std::abs((*ux)[k] - target) <= 0.5 * tol_pp) break;
      }
    }
    record(*u);
  }
  if (!cal.reached)
    cal.message = "unbalance target " + fmt_num(target) + "% not reached (closest PCC at " + fmt_num(cal.measured) + "%)";
  return cal;
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
  ModelArgs models;
  Method method = Method::FPI;
  double eps = 1e-4;
  double alpha = -1.0;
  int max_iter = 50;
  TxMode tx_mode = TxMode::ThreeSequence;
  JacobianModel jacobian = JacobianModel::Sensitivity;
  std::string scenario; // empty: one base step
  std::string out;      // output directory; empty writes nothing
  bool parallel = true;
};

struct StepReport {
  std::size_t step = 0;
  std::string label;
  Method method = Method::FPI;
  int iterations = 0;
  double wall_ms = 0.0;
  bool converged = false;
  CoIterStatus status = CoIterStatus::MaxIterations;
  double final_norm = 0.0;
  std::vector<PccBoundary> boundary;
  std::vector<double> current_unbalance;
  std::vector<double> voltage_unbalance;
};

struct RunReport {
  std::string case_name;
  std::vector<StepReport> rows;
  std::string message;
  bool all_converged() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const StepReport& r) { return r.converged; });
  }
};

inline CoSimConfig config_from(const RunArgs& a) {
  CoSimConfig cfg;
  cfg.method = a.method;
  cfg.eps = a.eps;
  cfg.alpha = a.alpha;
  cfg.max_coiter = a.max_iter;
  cfg.tx_mode = a.tx_mode;
  cfg.jacobian = a.jacobian;
  cfg.parallel = a.parallel;
  return cfg;
}

inline void write_run_report(std::ostream& out, const RunReport& rep) {
  CsvWriter w(out);
  std::size_t n_pcc = rep.rows.empty() ? 0 : rep.rows.front().boundary.size();
  std::vector<std::string> header{"step", "label", "method", "N", "T_ms", "converged", "status", "final_norm"};
  for (std::size_t k = 0; k < n_pcc; ++k) {
    const std::string p = "pcc" + std::to_string(k + 1) + "_";
    for (const char* ph : {"a", "b", "c"}) header.push_back(p + "V_D_" + ph + "_mag");
    for (const char* ph : {"a", "b", "c"}) {
      header.push_back(p + "S_T_" + ph + "_re");
      header.push_back(p + "S_T_" + ph + "_im");
    }
    header.push_back(p + "V1_mag");
    header.push_back(p + "current_unbalance_pct");
    header.push_back(p + "voltage_unbalance_pct");
  }
  w.row(header);
  for (const auto& r : rep.rows) {
    std::vector<std::string> row{std::to_string(r.step), r.label,          to_string(r.method),
                                 std::to_string(r.iterations), fmt_num(r.wall_ms), r.converged ? "true" : "false",
                                 to_string(r.status), fmt_num(r.final_norm)};
    for (std::size_t k = 0; k < n_pcc; ++k) {
      const auto& b = r.boundary[k];
      for (std::size_t p = 0; p < 3; ++p) row.push_back(fmt_num(std::abs(b.v_d[p])));
      for (std::size_t p = 0; p < 3; ++p) {
        row.push_back(fmt_num(b.s_t[p].real()));
        row.push_back(fmt_num(b.s_t[p].imag()));
      }
      row.push_back(fmt_num(std::abs(b.v_t[1])));
      row.push_back(k < r.current_unbalance.size() ? fmt_num(r.current_unbalance[k]) : "");
      row.push_back(k < r.voltage_unbalance.size() ? fmt_num(r.voltage_unbalance[k]) : "");
    }
    w.row(row);
  }
}

inline std::ofstream open_output(const std::string& dir, const std::string& file) {
  fs::create_directories(dir);
  std::ofstream f(fs::path(dir) / file);
  if (!f) throw Error("cannot write " + (fs::path(dir) / file).string());
  return f;
}

inline RunReport cmd_run(const RunArgs& a) {
  const LoadedCase c = load_case(a.models);
  const Scenario sc = a.scenario.empty() ? Scenario::constant(1) : load_scenario_file(a.scenario);
  const CoSimConfig cfg = config_from(a);
  const TimeseriesResult ts =
      a.method == Method::Loose ? run_loose(c.tx, c.feeders, sc, cfg) : run_timeseries(c.tx, c.feeders, sc, cfg);

  RunReport rep;
  rep.case_name = c.name;
  rep.message = ts.message;
  for (std::size_t t = 0; t < ts.steps.size(); ++t) {
    const auto& r = ts.steps[t];
    StepReport s;
    s.step = t;
    s.label = sc.steps[t].label;
    s.method = a.method;
    s.iterations = r.iterations;
    s.wall_ms = r.wall_ms;
    s.converged = r.converged();
    s.status = r.status;
    s.final_norm = r.final_norm;
    s.boundary = r.state.pcc;
    if (r.tx.i_abc.size() == c.feeders.size()) s.current_unbalance = current_unbalance(r.tx);
    if (r.status != CoIterStatus::SubsystemFailure) s.voltage_unbalance = voltage_unbalance(r.state);
    rep.rows.push_back(std::move(s));
  }
  if (!a.out.empty()) {
    // Written even when a step failed so the partial trace survives.
    std::vector<const ConvergenceTrace*> traces;
    for (const auto& r : ts.steps) traces.push_back(&r.trace);
    auto tf = open_output(a.out, "trace.csv");
    write_trace_csv(tf, traces, c.feeders.size());
    auto rf = open_output(a.out, "report.csv");
    write_run_report(rf, rep);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  ModelArgs models;
  std::vector<double> multipliers{1.0, 1.5, 2.0, 2.5};
  std::vector<double> unbalance{0.0};
  std::vector<Method> methods{Method::FPI, Method::Newton};
  double eps = 1e-4;
  double alpha = -1.0;
  int max_iter = 50;
  TxMode tx_mode = TxMode::ThreeSequence;
  JacobianModel jacobian = JacobianModel::Sensitivity;
  std::string out;
};

struct SweepCell {
  Method method = Method::FPI;
  int iterations = 0;
  double wall_ms = 0.0;
  bool converged = false;
  CoIterStatus status = CoIterStatus::MaxIterations;
  std::vector<PccBoundary> boundary;
  std::vector<double> current_unbalance;
};

struct SweepRow {
  double multiplier = 1.0;
  Calibration calibration;
  bool skipped = false;
  std::vector<SweepCell> cells; // one per method, in the order requested
};

struct SweepReport {
  std::string case_name;
  std::vector<Method> methods;
  std::vector<SweepRow> rows;

  bool all_converged() const {
    for (const auto& r : rows) {
      if (r.skipped) return false;
      for (const auto& c : r.cells)
        if (!c.converged) return false;
    }
    return !rows.empty();
  }
};

inline void write_sweep_report(std::ostream& out, const SweepReport& rep) {
  CsvWriter w(out);
  std::vector<std::string> header{"multiplier", "unbalance_target_pct", "unbalance_measured_pct", "allocation_a",
                                  "calibrated"};
  for (auto m : rep.methods) {
    const std::string p = to_string(m);
    header.push_back(p + "_N");
    header.push_back(p + "_T_ms");
    header.push_back(p + "_converged");
  }
  w.row(header);
  for (const auto& r : rep.rows) {
    std::vector<std::string> row{fmt_num(r.multiplier), fmt_num(r.calibration.target),
                                 fmt_num(r.calibration.measured), join_factors(r.calibration.allocation_a),
                                 r.calibration.reached ? "true" : "false"};
    for (std::size_t i = 0; i < rep.methods.size(); ++i) {
      if (r.skipped) {
        row.insert(row.end(), {"", "", "skipped"});
        continue;
      }
      const auto& c = r.cells[i];
      row.push_back(std::to_string(c.iterations));
      row.push_back(fmt_num(c.wall_ms));
      row.push_back(c.converged ? "true" : "false");
    }
    w.row(row);
  }
}

inline SweepReport cmd_sweep(const SweepArgs& a) {
  const LoadedCase c = load_case(a.models);
  SweepReport rep;
  rep.case_name = c.name;
  rep.methods = a.methods;
  for (double u : a.unbalance)
    for (double mult : a.multipliers) {
      if (!(mult > 0.0)) throw DomainError("load multipliers must be positive");
      SweepRow row;
      row.multiplier = mult;
      row.calibration = calibrate_unbalance(c, mult, u, a.tx_mode);
      if (!row.calibration.reached) {
        row.skipped = true;
        rep.rows.push_back(std::move(row));
        continue;
      }
      const auto fs = row.calibration.apply(c.feeders, mult);
      for (auto m : a.methods) {
        RunArgs ra;
        ra.method = m;
        ra.eps = a.eps;
        ra.alpha = a.alpha;
        ra.max_iter = a.max_iter;
        ra.tx_mode = a.tx_mode;
        ra.jacobian = a.jacobian;
        const auto r = co_iterate(c.tx, fs, config_from(ra), initial_boundary(c.tx, fs));
        SweepCell cell;
        cell.method = m;
        cell.iterations = r.iterations;
        cell.wall_ms = r.wall_ms;
        cell.converged = r.converged();
        cell.status = r.status;
        cell.boundary = r.state.pcc;
        if (r.tx.i_abc.size() == fs.size()) cell.current_unbalance = current_unbalance(r.tx);
        row.cells.push_back(std::move(cell));
      }
      rep.rows.push_back(std::move(row));
    }
  if (!a.out.empty()) {
    auto f = open_output(a.out, "sweep.csv");
    write_sweep_report(f, rep);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// compare-txmode

struct CompareArgs {
  ModelArgs models;
  std::vector<double> unbalance{0.0, 20.0, 40.0, 50.0, 60.0};
  double multiplier = 1.0;
  Method method = Method::Newton;
  double eps = 1e-4;
  int max_iter = 50;
  std::string out;
};

struct CompareRow {
  Calibration calibration;
  cplx v1_threeseq{0.0, 0.0}; // first PCC
  cplx v1_posseq{0.0, 0.0};
  double difference = 0.0;     // |V1(three-sequence) - V1(positive-sequence)|
  bool converged = false;
};

inline void write_compare_report(std::ostream& out, const std::vector<CompareRow>& rows) {
  CsvWriter w(out);
  w.row({"unbalance_target_pct", "unbalance_measured_pct", "allocation_a", "v1_threeseq_mag", "v1_posseq_mag",
         "v1_difference", "converged"});
  for (const auto& r : rows)
    w.row({fmt_num(r.calibration.target), fmt_num(r.calibration.measured), join_factors(r.calibration.allocation_a),
           fmt_num(std::abs(r.v1_threeseq)), fmt_num(std::abs(r.v1_posseq)), fmt_num(r.difference),
           r.converged ? "true" : "false"});
}

inline std::vector<CompareRow> cmd_compare_txmode(const CompareArgs& a) {
  const LoadedCase c = load_case(a.models);
  std::vector<CompareRow> rows;
  for (double u : a.unbalance) {
    CompareRow row;
    row.calibration = calibrate_unbalance(c, a.multiplier, u, TxMode::ThreeSequence);
    const auto fs = row.calibration.apply(c.feeders, a.multiplier);
    CoSimConfig cfg;
    cfg.method = a.method;
    cfg.eps = a.eps;
    cfg.max_coiter = a.max_iter;
    cfg.tx_mode = TxMode::ThreeSequence;
    const auto r3 = co_iterate(c.tx, fs, cfg, initial_boundary(c.tx, fs));
    cfg.tx_mode = TxMode::PositiveSequenceOnly;
    const auto r1 = co_iterate(c.tx, fs, cfg, initial_boundary(c.tx, fs));
    row.converged = r3.converged() && r1.converged() && row.calibration.reached;
    if (r3.converged() && r1.converged()) {
      row.v1_threeseq = r3.state.pcc[0].v_t[1];
      row.v1_posseq = r1.state.pcc[0].v_t[1];
      row.difference = std::abs(row.v1_threeseq - row.v1_posseq);
    }
    rows.push_back(row);
  }
  if (!a.out.empty()) {
    auto f = open_output(a.out, "txmode.csv");
    write_compare_report(f, rows);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// oracle-check

struct OracleArgs {
  ModelArgs models;
  std::vector<Method> methods{Method::FPI, Method::Newton, Method::Loose};
  double eps = 1e-4;
  int max_iter = 50;
  double tolerance = 1e-4;
  std::size_t node_limit = 2000;
  std::string out;
};

struct OracleMethodResult {
  Method method = Method::FPI;
  bool converged = false;
  int iterations = 0;
  double deviation_v = 0.0; // max componentwise |V_T(phase) - V_oracle| over PCCs
  double deviation_s = 0.0; // max componentwise |S_D - S_oracle| over PCCs
  bool gated = true;        // loose mode is informational
  bool pass = false;
};

enum class OracleStatus { Pass, Mismatch, CoSimFailed, OracleFailed };

inline const char* to_string(OracleStatus s) {
  switch (s) {
  case OracleStatus::Pass: return "pass";
  case OracleStatus::Mismatch: return "mismatch";
  case OracleStatus::CoSimFailed: return "cosim-failed";
  case OracleStatus::OracleFailed: return "oracle-failed";
  }
  return "?";
}

struct OracleReport {
  OracleStatus status = OracleStatus::OracleFailed;
  std::string message;
  int oracle_iterations = 0;
  Eigen::Index nodes = 0;
  std::vector<OracleMethodResult> methods;
  bool pass() const { return status == OracleStatus::Pass; }
};

inline void write_oracle_report(std::ostream& out, const OracleReport& rep) {
  CsvWriter w(out);
  w.row({"method", "converged", "N", "deviation_v", "deviation_s", "gated", "pass"});
  for (const auto& m : rep.methods)
    w.row({to_string(m.method), m.converged ? "true" : "false", std::to_string(m.iterations), fmt_num(m.deviation_v),
           fmt_num(m.deviation_s), m.gated ? "true" : "false", m.pass ? "true" : "false"});
}

inline OracleReport cmd_oracle_check(const OracleArgs& a) {
  const LoadedCase c = load_case(a.models);
  OracleReport rep;
  const CombinedModel m = assemble_combined(c.tx, c.feeders);
  rep.nodes = m.n_nodes;
  if (static_cast<std::size_t>(m.n_nodes) > a.node_limit)
    throw DomainError("oracle-check is limited to desk-scale models: " + std::to_string(m.n_nodes) +
                      " phase nodes exceed the limit of " + std::to_string(a.node_limit));
  MonolithicSolution ref;
  try {
    ref = solve_monolithic(m);
  } catch (const ConvergenceError& e) {
    rep.status = OracleStatus::OracleFailed;
    rep.message = std::string("oracle did not converge: ") + e.what();
    return rep;
  }
  rep.oracle_iterations = ref.iterations;

  bool cosim_ok = true, match = true;
  for (auto meth : a.methods) {
    CoSimConfig cfg;
    cfg.method = meth;
    cfg.eps = a.eps;
    cfg.max_coiter = a.max_iter;
    const auto r = co_iterate(c.tx, c.feeders, cfg, initial_boundary(c.tx, c.feeders));
    OracleMethodResult res;
    res.method = meth;
    res.gated = meth != Method::Loose;
    res.converged = r.converged();
    res.iterations = r.iterations;
    if (r.status != CoIterStatus::SubsystemFailure) {
      for (std::size_t k = 0; k < c.feeders.size(); ++k) {
        const auto& b = r.state.pcc[k];
        res.deviation_v = std::max(res.deviation_v, (sequence_to_phase(b.v_t) - ref.pcc_v[k]).max_abs_part());
        res.deviation_s = std::max(res.deviation_s, (b.s_d - ref.pcc_s[k]).max_abs_part());
      }
    }
    res.pass = res.converged && std::max(res.deviation_v, res.deviation_s) <= a.tolerance;
    if (res.gated) {
      cosim_ok = cosim_ok && res.converged;
      match = match && res.pass;
    }
    rep.methods.push_back(res);
  }
  rep.status = !cosim_ok ? OracleStatus::CoSimFailed : match ? OracleStatus::Pass : OracleStatus::Mismatch;
  if (!a.out.empty()) {
    auto f = open_output(a.out, "oracle.csv");
    write_oracle_report(f, rep);
  }
  return rep;
}

} // namespace tdcosim
