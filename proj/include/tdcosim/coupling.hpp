#pragma once

// Co-iteration of the transmission solve V_T = f1(S_T) and the feeder solves
// S_D = f2(V_D) at each PCC. The interface unknowns are the transmission-side demand
// S_T and the feeder head voltage V_D; both subsystems are solved from the same
// iterate (Jacobi exchange) and the inputs are then updated by fixed-point or Newton
// rules until the interface residual drops below eps.

#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tdcosim/distribution.hpp"
#include "tdcosim/seqframes.hpp"
#include "tdcosim/transmission.hpp"

namespace tdcosim {

/// Boundary variables at one PCC.
struct PccBoundary {
  ComplexTriple s_t = ComplexTriple::zeros(Frame::Phase);    // transmission-side demand (input)
  ComplexTriple v_d = ComplexTriple::zeros(Frame::Phase);    // feeder head voltage (input)
  ComplexTriple v_t = ComplexTriple::zeros(Frame::Sequence); // transmission output
  ComplexTriple s_d = ComplexTriple::zeros(Frame::Phase);    // feeder output
  ComplexTriple i_abc = ComplexTriple::zeros(Frame::Phase);  // interface currents from f1
};

struct BoundaryState {
  std::vector<PccBoundary> pcc;
  int n = 0; // co-iteration index
  int t = 0; // time step index
};

enum class ResidualFrame { Phase, Sequence };

struct InterfaceResidual {
  std::vector<ComplexTriple> r_t; // S_T - S_D
  std::vector<ComplexTriple> r_d; // V_D - A V_T (phase) or T V_D - V_T (sequence)
  double norm = 0.0;
};

/// Interface residual; the norm is the max over real and imaginary parts of every component.
inline InterfaceResidual residual(const BoundaryState& state,
                                  ResidualFrame frame = ResidualFrame::Phase) {
  InterfaceResidual r;
  for (const auto& b : state.pcc) {
    r.r_t.push_back(b.s_t - b.s_d);
    r.r_d.push_back(frame == ResidualFrame::Phase ? b.v_d - sequence_to_phase(b.v_t)
                                                  : phase_to_sequence(b.v_d) - b.v_t);
    r.norm = std::max({r.norm, r.r_t.back().max_abs_part(), r.r_d.back().max_abs_part()});
  }
  return r;
}

struct BoundaryInputs {
  std::vector<ComplexTriple> s_t;
  std::vector<ComplexTriple> v_d;
};

/// Relaxed fixed-point update x + alpha (x - g(x)), evaluated as (1 + alpha) x - alpha g(x)
/// so that alpha = -1 hands over g(x) bit for bit.
inline BoundaryInputs fpi_update(const BoundaryState& state, double alpha) {
  BoundaryInputs next;
  const cplx keep(1.0 + alpha), take(-alpha);
  for (const auto& b : state.pcc) {
    next.s_t.push_back(keep * b.s_t + take * b.s_d);
    next.v_d.push_back(keep * b.v_d + take * sequence_to_phase(b.v_t));
  }
  return next;
}

using Matrix6d = Eigen::Matrix<double, 6, 6>;
using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Complex partials dS_i/d|V_k| of S = V o (Y_D V)^* with the phase angles held fixed.
inline Eigen::Matrix3cd thevenin_power_partials(const Eigen::Matrix3cd& y_d, const ComplexTriple& v_d) {
  if (v_d.frame() != Frame::Phase) throw FrameError("thevenin_power_partials expects phase voltages");
  const Eigen::Vector3cd v = v_d.vec();
  Eigen::Vector3d mag;
  for (int p = 0; p < 3; ++p) {
    mag(p) = std::abs(v(p));
    if (mag(p) == 0.0) throw DomainError("Jacobian requested at a zero phase-voltage magnitude");
  }
  Eigen::Matrix3cd d;
  for (int i = 0; i < 3; ++i) {
    cplx diag = 2.0 * std::conj(y_d(i, i)) * mag(i);
    for (int k = 0; k < 3; ++k) {
      if (k == i) continue;
      const cplx cross = v(i) * std::conj(y_d(i, k)) * std::conj(v(k));
      diag += cross / mag(i);
      d(i, k) = cross / mag(k);
    }
    d(i, i) = diag;
  }
  return d;
}

/// Complex 3x3 partials split into the P rows and Q rows of the 6x6 block, each over |V|.
inline Matrix6d split_power_block(const Eigen::Matrix3cd& d) {
  Matrix6d j = Matrix6d::Zero();
  j.topLeftCorner<3, 3>() = d.real();
  j.bottomRightCorner<3, 3>() = d.imag();
  return j;
}

/// df2/dV_D as the real 6x6 block: P rows over |V| columns, Q rows over |V| columns.
inline Matrix6d jacobian_df2_dv(const TheveninEquivalent& thev, const ComplexTriple& v_d) {
  return split_power_block(thevenin_power_partials(thev.y_d, v_d));
}


struct Df1Options {
  double min_current = 1e-6; // pu; smaller interface currents are clamped to this magnitude
};

/// dV_012/dS_abc with the interface currents held fixed: rows (V0, V1, V2), columns
/// (S_a, S_b, S_c). Column a is 1/I_a^* (1, 1, 1), column b is 1/I_b^* (1, 1/a^2, 1/a),
/// column c is 1/I_c^* (1, 1/a, 1/a^2).
inline Eigen::Matrix3cd jacobian_df1_ds(const ComplexTriple& i_abc, bool* regularized = nullptr,
                                        const Df1Options& opt = {}) {
  if (i_abc.frame() != Frame::Phase) throw FrameError("jacobian_df1_ds expects phase currents");
  const cplx a = op_a();
  const cplx a2 = a * a;
  std::array<cplx, 3> inv{};
  bool clamped = false;
  for (std::size_t p = 0; p < 3; ++p) {
    cplx ip = i_abc[p];
    if (std::abs(ip) < opt.min_current) {
      ip = std::abs(ip) > 0.0 ? ip * (opt.min_current / std::abs(ip)) : cplx(opt.min_current, 0.0);
      clamped = true;
    }
    inv[p] = 1.0 / std::conj(ip);
  }
  if (regularized) *regularized = clamped;
  Eigen::Matrix3cd m;
  m << inv[0], inv[1], inv[2],          //
      inv[0], inv[1] / a2, inv[2] / a,  //
      inv[0], inv[1] / a, inv[2] / a2;
  return m;
}

/// Source of the Newton blocks.
///   Published:   dS/d|V| from the constant-impedance Thevenin equivalent and dV/dS from
///                the fixed-current expressions (jacobian_df2_dv, jacobian_df1_ds).
///   Sensitivity: dS/d|V| of the feeder power flow itself and dV/dS = 0. The network's
///                first-order response to dS_T is conjugate-linear (dV = -Z conj(dS)/conj(V)),
///                so it has no complex-linear part to put in a 3x3 complex block.
enum class JacobianModel { Published, Sensitivity };

struct JacobianBlocks {
  Matrix6d ds_dv = Matrix6d::Zero();                  // df2/d|V_D|
  Eigen::Matrix3cd dv_ds = Eigen::Matrix3cd::Zero();  // df1/dS_T
};

/// Newton blocks for one PCC at the present iterate; `dx` is f2 evaluated at b.v_d.
inline JacobianBlocks jacobian_blocks(const FeederModel& feeder, const DxSolution& dx, const PccBoundary& b,
                                      JacobianModel model) {
  JacobianBlocks j;
  if (model == JacobianModel::Published) {
    j.ds_dv = jacobian_df2_dv(thevenin_at_pcc(feeder, dx), b.v_d);
    j.dv_ds = jacobian_df1_ds(b.i_abc);
  } else {
    j.ds_dv = split_power_block(magnitude_sensitivity(feeder, b.v_d, dx));
  }
  return j;
}

/// How the magnitude change |dV_D| fed to the power rows is taken from the complex dV_D.
enum class MagnitudeConvention {
  Projected,      // Re(dV conj(V)) / |V|: first-order change of |V|
  SignedModulus,  // |dV| carrying the sign of Re(dV)
};

struct NewtonDelta {
  ComplexTriple d_s = ComplexTriple::zeros(Frame::Phase);
  ComplexTriple d_v = ComplexTriple::zeros(Frame::Phase);
};

inline Eigen::Vector3d magnitude_change(const Eigen::Vector3cd& dv, const ComplexTriple& v_d,
                                        MagnitudeConvention conv) {
  Eigen::Vector3d m;
  for (int p = 0; p < 3; ++p) {
    if (conv == MagnitudeConvention::Projected) {
      const cplx v = v_d[static_cast<std::size_t>(p)];
      m(p) = std::real(dv(p) * std::conj(v)) / std::abs(v);
    } else {
      m(p) = (dv(p).real() < 0.0 ? -1.0 : 1.0) * std::abs(dv(p));
    }
  }
  return m;
}

/// Block iteration on the linearised interface equations, starting from dS_T = 0:
///   dV_D = A (T R_D + dV/dS dS_T)                  (R_D in the phase frame)
///   [dP; dQ] = [R_P; R_Q] + dS/d|V| [|dV_D|; |dV_D|],  dS_T = dP + j dQ
/// repeated `inner_iters` times. The caller applies x <- x - delta.
inline NewtonDelta newton_delta(const ComplexTriple& r_t, const ComplexTriple& r_d,
                                const JacobianBlocks& blocks, int inner_iters,
                                const ComplexTriple& v_d,
                                MagnitudeConvention conv = MagnitudeConvention::Projected) {
  if (inner_iters < 1) throw DomainError("newton_delta needs at least one inner iteration");
  if (r_t.frame() != Frame::Phase || r_d.frame() != Frame::Phase)
    throw FrameError("newton_delta expects phase-frame residuals");
  const auto& xf = SequenceTransform::get();
  const Eigen::Vector3cd rt = r_t.vec();
  const Eigen::Vector3cd rd = r_d.vec();
  const Eigen::Matrix3cd dv_map = xf.A * blocks.dv_ds;

  Eigen::Vector3cd ds = Eigen::Vector3cd::Zero();
  Eigen::Vector3cd dv = Eigen::Vector3cd::Zero();
  for (int it = 0; it < inner_iters; ++it) {
    dv = rd + dv_map * ds;
    const Eigen::Vector3d mag = magnitude_change(dv, v_d, conv);
    Vector6d stacked;
    stacked << mag, mag;
    const Vector6d dpq = blocks.ds_dv * stacked;
    for (int p = 0; p < 3; ++p) ds(p) = rt(p) + cplx(dpq(p), dpq(3 + p));
  }
  if (!ds.allFinite() || !dv.allFinite()) throw DomainError("newton_delta produced a non-finite update");
  return {ComplexTriple(Frame::Phase, ds), ComplexTriple(Frame::Phase, dv)};
}

enum class Method { FPI, Newton, Loose };

inline const char* to_string(Method m) {
  switch (m) {
  case Method::FPI: return "fpi";
  case Method::Newton: return "newton";
  case Method::Loose: return "loose";
  }
  return "?";
}

struct CoSimConfig {
  double eps = 1e-4;
  double alpha = -1.0;
  int max_coiter = 50;
  int inner_newton_iters = 2;
  Method method = Method::FPI;
  JacobianModel jacobian = JacobianModel::Sensitivity;
  TxMode tx_mode = TxMode::ThreeSequence;
  ResidualFrame residual_frame = ResidualFrame::Phase;
  MagnitudeConvention magnitude = MagnitudeConvention::Projected;
  bool refresh_jacobian = true;  // test hook: false freezes the blocks from the first iteration
  int divergence_window = 5;     // abort after this many consecutive residual increases
  bool parallel = true;

  void validate() const {
    if (!(eps > 0.0)) throw DomainError("eps must be positive");
    if (max_coiter < 1) throw DomainError("max_coiter must be at least 1");
    if (inner_newton_iters < 1) throw DomainError("inner_newton_iters must be at least 1");
  }
};

struct TraceRecord {
  int t = 0;
  int n = 0;
  std::vector<PccBoundary> pcc;
  double norm = 0.0;
  double elapsed_ms = 0.0;
};

struct ConvergenceTrace {
  std::vector<TraceRecord> records;
};

enum class CoIterStatus { Converged, MaxIterations, Diverged, SubsystemFailure, SingleExchange };

inline const char* to_string(CoIterStatus s) {
  switch (s) {
  case CoIterStatus::Converged: return "converged";
  case CoIterStatus::MaxIterations: return "max-iterations";
  case CoIterStatus::Diverged: return "diverged";
  case CoIterStatus::SubsystemFailure: return "subsystem-failure";
  case CoIterStatus::SingleExchange: return "single-exchange";
  }
  return "?";
}

struct CoIterateResult {
  BoundaryState state;
  ConvergenceTrace trace;
  CoIterStatus status = CoIterStatus::MaxIterations;
  std::string message;
  int iterations = 0;
  double final_norm = 0.0;
  double wall_ms = 0.0;
  TxSolution tx;
  std::vector<DxSolution> dx;

  bool converged() const { return status == CoIterStatus::Converged; }
};

/// Feeder head voltage and demand to start a step from scratch: nominal load without
/// losses and a balanced voltage at the slack setpoint.
inline BoundaryState initial_boundary(const TransmissionModel& tx, const std::vector<FeederModel>& feeders) {
  BoundaryState s;
  const auto& slack = tx.buses[tx.slack_index()];
  for (const auto& f : feeders) {
    PccBoundary b;
    b.s_t = f.nominal_demand();
    b.v_d = balanced_phase(std::polar(slack.v_set, slack.angle));
    s.pcc.push_back(b);
  }
  return s;
}

namespace detail {

inline void check_feeder_mapping(const TransmissionModel& tx, const std::vector<FeederModel>& feeders,
                                 const BoundaryState& init) {
  if (feeders.size() != tx.pcc_buses.size())
    throw ModelError("one feeder per PCC bus is required");
  for (std::size_t k = 0; k < feeders.size(); ++k)
    if (feeders[k].pcc_bus != tx.pcc_buses[k])
      throw ModelError("feeder '" + feeders[k].name + "' is not attached to PCC bus " +
                       std::to_string(tx.pcc_buses[k]));
  if (init.pcc.size() != feeders.size()) throw DomainError("initial boundary has the wrong PCC count");
}

/// Solves f1 and every f2 from the same inputs. Feeders run concurrently when asked.
inline void solve_subsystems(const TransmissionModel& tx, const std::vector<FeederModel>& feeders,
                             BoundaryState& state, TxSolution& tx_sol, std::vector<DxSolution>& dx,
                             TxMode mode, bool parallel) {
  std::vector<ComplexTriple> s_t;
  for (const auto& b : state.pcc) s_t.push_back(b.s_t);
  TxSolveOptions topt;
  topt.mode = mode;
  const TxSolution warm = tx_sol;
  if (warm.converged) topt.warm_start = &warm;

  dx.resize(feeders.size());
  if (parallel && !feeders.empty()) {
    std::vector<std::future<DxSolution>> jobs;
    for (std::size_t k = 0; k < feeders.size(); ++k)
      jobs.push_back(std::async(std::launch::async, [&, k] { return solve_f2(feeders[k], state.pcc[k].v_d); }));
    std::exception_ptr err;
    try {
      tx_sol = solve_f1(tx, s_t, topt);
    } catch (...) {
      err = std::current_exception();
    }
    // Barrier: every feeder finishes before anything is read or rethrown.
    for (std::size_t k = 0; k < feeders.size(); ++k) {
      try {
        dx[k] = jobs[k].get();
      } catch (...) {
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  } else {
    tx_sol = solve_f1(tx, s_t, topt);
    for (std::size_t k = 0; k < feeders.size(); ++k) dx[k] = solve_f2(feeders[k], state.pcc[k].v_d);
  }
  for (std::size_t k = 0; k < feeders.size(); ++k) {
    state.pcc[k].v_t = tx_sol.v_t[k];
    state.pcc[k].i_abc = tx_sol.i_abc[k];
    state.pcc[k].s_d = dx[k].s_d;
  }
}

} // namespace detail

/// Co-iterates one time step until the interface residual is at most cfg.eps.
/// `warm_tx` seeds the transmission Newton-Raphson (previous step or co-iteration).
inline CoIterateResult co_iterate(const TransmissionModel& tx, const std::vector<FeederModel>& feeders,
                                  const CoSimConfig& cfg, const BoundaryState& init,
                                  const TxSolution* warm_tx = nullptr) {
  cfg.validate();
  detail::check_feeder_mapping(tx, feeders, init);
  using clock = std::chrono::steady_clock;
  const auto t0 = clock::now();

  CoIterateResult out;
  out.state = init;
  out.state.n = 0;
  if (warm_tx) out.tx = *warm_tx;

  std::vector<JacobianBlocks> frozen;
  double prev_norm = 0.0;
  int growth = 0;
  const int limit = cfg.method == Method::Loose ? 1 : cfg.max_coiter;

  for (int n = 1; n <= limit; ++n) {
    out.state.n = n;
    try {
      detail::solve_subsystems(tx, feeders, out.state, out.tx, out.dx, cfg.tx_mode, cfg.parallel);
    } catch (const Error& e) {
      out.status = CoIterStatus::SubsystemFailure;
      out.message = std::string("iteration ") + std::to_string(n) + ": " + e.what();
      break;
    }
    const InterfaceResidual res = residual(out.state, cfg.residual_frame);
    out.iterations = n;
    out.final_norm = res.norm;
    out.trace.records.push_back(
        {out.state.t, n, out.state.pcc, res.norm,
         std::chrono::duration<double, std::milli>(clock::now() - t0).count()});

    if (res.norm <= cfg.eps) {
      out.status = CoIterStatus::Converged;
      break;
    }
    if (cfg.method == Method::Loose) {
      out.status = CoIterStatus::SingleExchange;
      break;
    }
    growth = (n > 1 && res.norm > prev_norm) ? growth + 1 : 0;
    prev_norm = res.norm;
    if (growth >= cfg.divergence_window) {
      out.status = CoIterStatus::Diverged;
      out.message = "residual grew for " + std::to_string(growth) + " consecutive iterations";
      break;
    }
    if (n == limit) {
      out.status = CoIterStatus::MaxIterations;
      out.message = "no convergence in " + std::to_string(limit) + " co-iterations";
      break;
    }

    if (cfg.method == Method::FPI) {
      const BoundaryInputs next = fpi_update(out.state, cfg.alpha);
      for (std::size_t k = 0; k < out.state.pcc.size(); ++k) {
        out.state.pcc[k].s_t = next.s_t[k];
        out.state.pcc[k].v_d = next.v_d[k];
      }
      continue;
    }

    // Newton: fresh blocks per PCC (block-diagonal across feeders).
    const InterfaceResidual rphase =
        cfg.residual_frame == ResidualFrame::Phase ? res : residual(out.state, ResidualFrame::Phase);
    try {
      if (frozen.empty() || cfg.refresh_jacobian) {
        frozen.assign(feeders.size(), {});
        for (std::size_t k = 0; k < feeders.size(); ++k)
          frozen[k] = jacobian_blocks(feeders[k], out.dx[k], out.state.pcc[k], cfg.jacobian);
      }
      for (std::size_t k = 0; k < feeders.size(); ++k) {
        auto& b = out.state.pcc[k];
        const NewtonDelta d = newton_delta(rphase.r_t[k], rphase.r_d[k], frozen[k],
                                           cfg.inner_newton_iters, b.v_d, cfg.magnitude);
        b.s_t = b.s_t - d.d_s;
        b.v_d = b.v_d - d.d_v;
      }
    } catch (const Error& e) {
      out.status = CoIterStatus::SubsystemFailure;
      out.message = std::string("Newton update at iteration ") + std::to_string(n) + ": " + e.what();
      break;
    }
  }
  out.wall_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  return out;
}

struct ScenarioStep {
  std::string label;
  double multiplier = 1.0;
  // Per-phase allocation factors: empty (all ones), one triple for every feeder, or one per feeder.
  std::vector<std::array<double, 3>> allocation;
};

struct Scenario {
  std::string name;
  std::vector<ScenarioStep> steps;
  std::vector<double> unbalance_targets; // percent current unbalance, optional

  void validate() const {
    if (steps.empty()) throw DomainError("scenario '" + name + "' has no steps");
    for (const auto& s : steps) {
      if (!(s.multiplier > 0.0)) throw DomainError("step '" + s.label + "': multiplier must be positive");
      for (const auto& a : s.allocation)
        for (double x : a)
          if (!(x >= 0.0)) throw DomainError("step '" + s.label + "': allocation factors must be nonnegative");
    }
  }

  static Scenario constant(std::size_t n, double multiplier = 1.0) {
    Scenario s{"constant", {}, {}};
    for (std::size_t i = 0; i < n; ++i) s.steps.push_back({"t" + std::to_string(i + 1), multiplier, {}});
    return s;
  }
};

/// Feeders with the step's multiplier and allocation factors applied.
inline std::vector<FeederModel> apply_step(const std::vector<FeederModel>& base, const ScenarioStep& step) {
  if (step.allocation.size() > 1 && step.allocation.size() != base.size())
    throw DomainError("step '" + step.label + "': allocation given for " + std::to_string(step.allocation.size()) +
                      " feeders, model has " + std::to_string(base.size()));
  std::vector<FeederModel> out;
  for (std::size_t k = 0; k < base.size(); ++k) {
    std::array<double, 3> alloc{1.0, 1.0, 1.0};
    if (step.allocation.size() == 1) alloc = step.allocation[0];
    else if (!step.allocation.empty()) alloc = step.allocation[k];
    out.push_back(base[k].scaled(step.multiplier, alloc));
  }
  return out;
}

struct TimeseriesResult {
  std::vector<CoIterateResult> steps;
  std::optional<std::size_t> failed_step; // index of the step that did not converge
  std::string message;

  bool completed() const { return !failed_step; }
};

/// Algorithm 1 over a scenario. A step only advances once its boundary has converged;
/// the first step that fails stops the run and is reported with its index.
inline TimeseriesResult run_timeseries(const TransmissionModel& tx, const std::vector<FeederModel>& feeders,
                                       const Scenario& scenario, const CoSimConfig& cfg) {
  scenario.validate();
  TimeseriesResult out;
  std::optional<BoundaryState> prev;
  std::optional<TxSolution> warm;
  for (std::size_t t = 0; t < scenario.steps.size(); ++t) {
    const auto step_feeders = apply_step(feeders, scenario.steps[t]);
    BoundaryState init = prev ? *prev : initial_boundary(tx, step_feeders);
    init.t = static_cast<int>(t);
    for (auto& b : init.pcc) {
      b.v_t = ComplexTriple::zeros(Frame::Sequence);
      b.s_d = b.i_abc = ComplexTriple::zeros(Frame::Phase);
    }
    out.steps.push_back(co_iterate(tx, step_feeders, cfg, init, warm ? &*warm : nullptr));
    auto& r = out.steps.back();
    for (auto& rec : r.trace.records) rec.t = static_cast<int>(t);
    r.state.t = static_cast<int>(t);
    if (!r.converged()) {
      out.failed_step = t;
      out.message = "step " + std::to_string(t) + " (" + scenario.steps[t].label + "): " + to_string(r.status) +
                    (r.message.empty() ? "" : ": " + r.message);
      break;
    }
    prev = r.state;
    warm = r.tx;
  }
  return out;
}

/// One exchange per step: solve both subsystems, record the residual left behind and
/// hand the outputs to the next step as its inputs.
inline TimeseriesResult run_loose(const TransmissionModel& tx, const std::vector<FeederModel>& feeders,
                                  const Scenario& scenario, CoSimConfig cfg = {}) {
  scenario.validate();
  cfg.method = Method::Loose;
  TimeseriesResult out;
  std::optional<BoundaryInputs> next;
  std::optional<TxSolution> warm;
  for (std::size_t t = 0; t < scenario.steps.size(); ++t) {
    const auto step_feeders = apply_step(feeders, scenario.steps[t]);
    BoundaryState init = initial_boundary(tx, step_feeders);
    init.t = static_cast<int>(t);
    if (next)
      for (std::size_t k = 0; k < init.pcc.size(); ++k) {
        init.pcc[k].s_t = next->s_t[k];
        init.pcc[k].v_d = next->v_d[k];
      }
    out.steps.push_back(co_iterate(tx, step_feeders, cfg, init, warm ? &*warm : nullptr));
    auto& r = out.steps.back();
    for (auto& rec : r.trace.records) rec.t = static_cast<int>(t);
    r.state.t = static_cast<int>(t);
    if (r.status == CoIterStatus::SubsystemFailure) {
      out.failed_step = t;
      out.message = "step " + std::to_string(t) + " (" + scenario.steps[t].label + "): " + r.message;
      break;
    }
    next = fpi_update(r.state, -1.0);
    warm = r.tx;
  }
  return out;
}

} // namespace tdcosim
