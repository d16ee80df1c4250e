#pragma once

// Three-sequence transmission power flow. Branches are assumed transposed, so the
// zero/positive/negative networks decouple and couple again only through the
// constant-power loads, which are per phase.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "tdcosim/seqframes.hpp"

namespace tdcosim {

enum class BusType { Slack, PV, PQ };

struct TxBus {
  int id = 0;
  BusType type = BusType::PQ;
  double v_set = 1.0;      // pu, slack and PV
  double angle = 0.0;      // rad, slack only
  double p_gen = 0.0;      // pu, PV only
  cplx load{0.0, 0.0};     // pu, balanced constant power
  cplx shunt{0.0, 0.0};    // pu admittance to ground, all sequences
  // Generator sequence data. Positive sequence is an ideal regulated source; the
  // negative and zero sequence networks see these as shunts at the bus.
  cplx gen_z2{0.0, 0.2};
  std::optional<cplx> gen_z0_ground = cplx{0.0, 0.1};

  bool has_generator() const { return type != BusType::PQ; }
};

struct TxBranch {
  int from = 0;
  int to = 0;
  cplx z1;          // positive (= negative) sequence series impedance, pu
  cplx z0;          // zero sequence series impedance, pu
  double b1 = 0.0;  // total line charging, positive sequence, pu
  double b0 = 0.0;  // total line charging, zero sequence, pu
};

struct TransmissionModel {
  std::string name;
  double base_mva = 100.0;
  double base_kv = 230.0;
  std::vector<TxBus> buses;
  std::vector<TxBranch> branches;
  std::vector<int> pcc_buses;

  std::size_t index_of(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    throw ModelError("unknown transmission bus id " + std::to_string(id));
  }

  std::size_t slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].type == BusType::Slack) return i;
    throw ModelError("transmission model has no slack bus");
  }

  void validate() const {
    if (buses.empty()) throw ModelError("transmission model has no buses");
    const auto slack_count = std::count_if(buses.begin(), buses.end(),
                                           [](const TxBus& b) { return b.type == BusType::Slack; });
    if (slack_count != 1)
      throw ModelError("transmission model needs exactly one slack bus, found " +
                       std::to_string(slack_count));
    for (std::size_t i = 0; i < buses.size(); ++i)
      for (std::size_t j = i + 1; j < buses.size(); ++j)
        if (buses[i].id == buses[j].id)
          throw ModelError("duplicate bus id " + std::to_string(buses[i].id));
    for (const auto& br : branches) {
      index_of(br.from);
      index_of(br.to);
      if (br.from == br.to) throw ModelError("branch " + branch_label(br) + " is a self loop");
      if (std::abs(br.z1) == 0.0)
        throw ModelError("branch " + branch_label(br) + " has zero positive-sequence impedance");
    }
    for (int id : pcc_buses) index_of(id);
    check_connected();
  }

  static std::string branch_label(const TxBranch& br) {
    return std::to_string(br.from) + "-" + std::to_string(br.to);
  }

private:
  void check_connected() const {
    const std::size_t n = buses.size();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& br : branches) {
      adj[index_of(br.from)].push_back(index_of(br.to));
      adj[index_of(br.to)].push_back(index_of(br.from));
    }
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{slack_index()};
    seen[stack.front()] = true;
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : adj[u])
        if (!seen[v]) seen[v] = true, stack.push_back(v);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (!seen[i])
        throw ModelError("transmission network is disconnected: bus " +
                         std::to_string(buses[i].id) + " is not reachable from the slack");
  }
};

using SparseC = Eigen::SparseMatrix<cplx>;

struct SequenceYbus {
  SparseC y0, y1, y2;
};

/// Builds the three sequence admittance matrices. Y1 carries branches and bus shunts only;
/// Y2 and Y0 additionally carry the generator negative/zero sequence shunts.
inline SequenceYbus assemble_sequence_ybus(const TransmissionModel& model) {
  model.validate();
  const auto n = static_cast<Eigen::Index>(model.buses.size());
  std::vector<Eigen::Triplet<cplx>> t0, t1, t2;
  auto stamp = [](std::vector<Eigen::Triplet<cplx>>& t, Eigen::Index i, Eigen::Index j, cplx ys,
                  cplx ysh_half) {
    t.emplace_back(i, i, ys + ysh_half);
    t.emplace_back(j, j, ys + ysh_half);
    t.emplace_back(i, j, -ys);
    t.emplace_back(j, i, -ys);
  };
  for (const auto& br : model.branches) {
    const auto i = static_cast<Eigen::Index>(model.index_of(br.from));
    const auto j = static_cast<Eigen::Index>(model.index_of(br.to));
    const cplx y1 = 1.0 / br.z1;
    stamp(t1, i, j, y1, cplx(0.0, br.b1 / 2.0));
    stamp(t2, i, j, y1, cplx(0.0, br.b1 / 2.0));
    if (std::abs(br.z0) > 0.0) stamp(t0, i, j, 1.0 / br.z0, cplx(0.0, br.b0 / 2.0));
    else if (br.b0 != 0.0) {
      t0.emplace_back(i, i, cplx(0.0, br.b0 / 2.0));
      t0.emplace_back(j, j, cplx(0.0, br.b0 / 2.0));
    }
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& b = model.buses[static_cast<std::size_t>(k)];
    if (b.shunt != 0.0) {
      t0.emplace_back(k, k, b.shunt);
      t1.emplace_back(k, k, b.shunt);
      t2.emplace_back(k, k, b.shunt);
    }
    if (b.has_generator()) {
      if (std::abs(b.gen_z2) > 0.0) t2.emplace_back(k, k, 1.0 / b.gen_z2);
      if (b.gen_z0_ground && std::abs(*b.gen_z0_ground) > 0.0)
        t0.emplace_back(k, k, 1.0 / *b.gen_z0_ground);
    }
  }
  SequenceYbus y;
  y.y0.resize(n, n);
  y.y1.resize(n, n);
  y.y2.resize(n, n);
  y.y0.setFromTriplets(t0.begin(), t0.end());
  y.y1.setFromTriplets(t1.begin(), t1.end());
  y.y2.setFromTriplets(t2.begin(), t2.end());
  return y;
}

struct NrResult {
  Eigen::VectorXcd v;
  int iterations = 0;
  double max_mismatch = 0.0;
};

struct NrOptions {
  double tolerance = 1e-8;
  int max_iterations = 25;
};

/// Polar Newton-Raphson on the positive-sequence network. `injections` are net complex
/// injections (generation minus load) per bus; the slack entry is ignored and the PV
/// entries contribute only their real part.
inline NrResult solve_positive_nr(const SequenceYbus& ybus, const TransmissionModel& model,
                                  const Eigen::VectorXcd& injections,
                                  const std::optional<Eigen::VectorXcd>& warm_start = std::nullopt,
                                  const NrOptions& opt = {}) {
  const auto n = static_cast<Eigen::Index>(model.buses.size());
  if (injections.size() != n) throw DomainError("solve_positive_nr: injection vector size mismatch");
  const Eigen::MatrixXcd Y = Eigen::MatrixXcd(ybus.y1);

  std::vector<Eigen::Index> pvpq, pq;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto type = model.buses[static_cast<std::size_t>(k)].type;
    if (type != BusType::Slack) pvpq.push_back(k);
    if (type == BusType::PQ) pq.push_back(k);
  }

  Eigen::VectorXcd v(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& b = model.buses[static_cast<std::size_t>(k)];
    cplx start = warm_start ? (*warm_start)(k) : cplx(1.0, 0.0);
    switch (b.type) {
    case BusType::Slack: start = std::polar(b.v_set, b.angle); break;
    case BusType::PV: start = std::polar(b.v_set, std::arg(start)); break;
    case BusType::PQ: break;
    }
    v(k) = start;
  }

  const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
  const auto npq = static_cast<Eigen::Index>(pq.size());
  auto mismatch = [&](const Eigen::VectorXcd& vv) {
    const Eigen::VectorXcd s = vv.cwiseProduct((Y * vv).conjugate()) - injections;
    Eigen::VectorXd f(npvpq + npq);
    for (Eigen::Index i = 0; i < npvpq; ++i) f(i) = s(pvpq[static_cast<std::size_t>(i)]).real();
    for (Eigen::Index i = 0; i < npq; ++i) f(npvpq + i) = s(pq[static_cast<std::size_t>(i)]).imag();
    return f;
  };

  NrResult out;
  Eigen::VectorXd f = mismatch(v);
  for (int it = 0;; ++it) {
    out.max_mismatch = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    if (out.max_mismatch <= opt.tolerance) {
      out.v = v;
      out.iterations = it;
      return out;
    }
    if (it >= opt.max_iterations)
      throw ConvergenceError("positive-sequence Newton-Raphson did not converge in " +
                                 std::to_string(opt.max_iterations) + " iterations",
                             it);

    const Eigen::VectorXcd ibus = Y * v;
    const Eigen::VectorXcd vnorm = v.array() / v.array().abs();
    const Eigen::MatrixXcd dS_dVa =
        cplx(0.0, 1.0) * v.asDiagonal() *
        (Eigen::MatrixXcd(ibus.asDiagonal()) - Y * v.asDiagonal()).conjugate();
    const Eigen::MatrixXcd dS_dVm = v.asDiagonal() * (Y * vnorm.asDiagonal()).conjugate() +
                                    Eigen::MatrixXcd(ibus.conjugate().asDiagonal()) *
                                        vnorm.asDiagonal();
    Eigen::MatrixXd J(npvpq + npq, npvpq + npq);
    for (Eigen::Index r = 0; r < npvpq; ++r) {
      const auto br = pvpq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < npvpq; ++c)
        J(r, c) = dS_dVa(br, pvpq[static_cast<std::size_t>(c)]).real();
      for (Eigen::Index c = 0; c < npq; ++c)
        J(r, npvpq + c) = dS_dVm(br, pq[static_cast<std::size_t>(c)]).real();
    }
    for (Eigen::Index r = 0; r < npq; ++r) {
      const auto br = pq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < npvpq; ++c)
        J(npvpq + r, c) = dS_dVa(br, pvpq[static_cast<std::size_t>(c)]).imag();
      for (Eigen::Index c = 0; c < npq; ++c)
        J(npvpq + r, npvpq + c) = dS_dVm(br, pq[static_cast<std::size_t>(c)]).imag();
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(J);
    if (!lu.isInvertible()) throw SingularError("power-flow Jacobian is singular");
    const Eigen::VectorXd dx = lu.solve(-f);
    for (Eigen::Index i = 0; i < npvpq; ++i) {
      const auto k = pvpq[static_cast<std::size_t>(i)];
      v(k) = std::polar(std::abs(v(k)), std::arg(v(k)) + dx(i));
    }
    for (Eigen::Index i = 0; i < npq; ++i) {
      const auto k = pq[static_cast<std::size_t>(i)];
      v(k) = std::polar(std::abs(v(k)) + dx(npvpq + i), std::arg(v(k)));
    }
    if (!v.allFinite()) throw ConvergenceError("positive-sequence Newton-Raphson produced NaN", it);
    f = mismatch(v);
  }
}

struct NegZeroResult {
  Eigen::VectorXcd v0;
  Eigen::VectorXcd v2;
  bool y0_singular = false;
};

/// Factored negative- and zero-sequence networks. A singular Y0 (no zero-sequence path to
/// ground) is flagged and yields V0 = 0; a singular Y2 is an error once currents flow.
class NegZeroSolver {
public:
  explicit NegZeroSolver(const SequenceYbus& ybus) : n_(ybus.y1.rows()) {
    y2_ok_ = factor(ybus.y2, lu2_);
    y0_ok_ = factor(ybus.y0, lu0_);
  }

  bool y0_singular() const { return !y0_ok_; }

  NegZeroResult solve(const Eigen::VectorXcd& i0, const Eigen::VectorXcd& i2) const {
    NegZeroResult out;
    out.v0 = Eigen::VectorXcd::Zero(n_);
    out.v2 = Eigen::VectorXcd::Zero(n_);
    out.y0_singular = !y0_ok_;
    if (i2.cwiseAbs().maxCoeff() > 0.0) {
      if (!y2_ok_) throw SingularError("negative-sequence admittance matrix is singular");
      out.v2 = lu2_.solve(i2);
    }
    if (y0_ok_ && i0.cwiseAbs().maxCoeff() > 0.0) out.v0 = lu0_.solve(i0);
    if (!out.v0.allFinite() || !out.v2.allFinite())
      throw SingularError("negative/zero-sequence solve produced non-finite voltages");
    return out;
  }

private:
  static bool factor(const SparseC& y, Eigen::SparseLU<SparseC>& lu) {
    lu.compute(y);
    if (lu.info() != Eigen::Success) return false;
    // SparseLU reports success for some numerically singular matrices; check the pivots.
    Eigen::FullPivLU<Eigen::MatrixXcd> check{Eigen::MatrixXcd(y)};
    check.setThreshold(1e-12);
    return check.isInvertible();
  }

  Eigen::Index n_;
  Eigen::SparseLU<SparseC> lu0_, lu2_;
  bool y0_ok_ = false, y2_ok_ = false;
};

/// Direct solves Y0 V0 = I0 and Y2 V2 = I2 (injections, not loads).
inline NegZeroResult solve_neg_zero(const SequenceYbus& ybus, const Eigen::VectorXcd& i0,
                                    const Eigen::VectorXcd& i2) {
  return NegZeroSolver(ybus).solve(i0, i2);
}

enum class TxMode { ThreeSequence, PositiveSequenceOnly };

struct TxSolution {
  Eigen::VectorXcd v0, v1, v2;           // per bus
  std::vector<ComplexTriple> v_t;        // per PCC, sequence frame
  std::vector<ComplexTriple> i_abc;      // per PCC interface phase currents drawn by the feeder
  bool converged = false;
  int iterations = 0;                    // outer sequence sweeps
  int nr_iterations = 0;
  bool y0_singular = false;
};

struct TxSolveOptions {
  TxMode mode = TxMode::ThreeSequence;
  double sweep_tolerance = 1e-8;
  int max_sweeps = 10;
  NrOptions nr{};
  const TxSolution* warm_start = nullptr;
};

/// Generator injections only; every bus load is handled with the PCC demand as per-phase
/// constant power.
inline Eigen::VectorXcd base_injections(const TransmissionModel& model) {
  Eigen::VectorXcd s = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(model.buses.size()));
  for (std::size_t k = 0; k < model.buses.size(); ++k)
    if (model.buses[k].type == BusType::PV) s(static_cast<Eigen::Index>(k)) = model.buses[k].p_gen;
  return s;
}

/// Per-phase current drawn by constant power `s` at phase voltages `v`; zero where s is zero.
inline ComplexTriple phase_currents(const ComplexTriple& s, const ComplexTriple& v) {
  std::array<cplx, 3> i{};
  for (std::size_t p = 0; p < 3; ++p) {
    if (s[p] == 0.0) continue;
    if (std::abs(v[p]) == 0.0) throw DomainError("phase current requested at zero voltage");
    i[p] = std::conj(s[p] / v[p]);
  }
  return {Frame::Phase, i};
}

/// V_T = f1(S_T). Alternates positive-sequence NR with the negative/zero linear solves,
/// recomputing the PCC sequence currents at the latest voltage estimate each sweep.
inline TxSolution solve_f1(const TransmissionModel& model, std::span<const ComplexTriple> s_t,
                           const TxSolveOptions& opt = {}) {
  if (s_t.size() != model.pcc_buses.size())
    throw DomainError("solve_f1: expected one demand triple per PCC");
  for (const auto& s : s_t)
    if (s.frame() != Frame::Phase) throw FrameError("solve_f1 expects phase-frame demand");

  const SequenceYbus ybus = assemble_sequence_ybus(model);
  const auto n = static_cast<Eigen::Index>(model.buses.size());
  // Constant-power demand entries: the PCC triples first, then the balanced bus loads.
  // A bus may appear more than once.
  std::vector<Eigen::Index> dem_idx;
  std::vector<ComplexTriple> demand(s_t.begin(), s_t.end());
  for (int id : model.pcc_buses) dem_idx.push_back(static_cast<Eigen::Index>(model.index_of(id)));
  const std::size_t n_pcc = dem_idx.size();
  for (std::size_t k = 0; k < model.buses.size(); ++k)
    if (model.buses[k].load != 0.0) {
      dem_idx.push_back(static_cast<Eigen::Index>(k));
      demand.push_back(ComplexTriple::uniform(Frame::Phase, model.buses[k].load));
    }

  TxSolution sol;
  const bool warm = opt.warm_start && opt.warm_start->v1.size() == n;
  sol.v1 = warm ? opt.warm_start->v1 : Eigen::VectorXcd(Eigen::VectorXcd::Ones(n));
  sol.v0 = warm && opt.mode == TxMode::ThreeSequence ? opt.warm_start->v0
                                                     : Eigen::VectorXcd(Eigen::VectorXcd::Zero(n));
  sol.v2 = warm && opt.mode == TxMode::ThreeSequence ? opt.warm_start->v2
                                                     : Eigen::VectorXcd(Eigen::VectorXcd::Zero(n));
  const Eigen::VectorXcd base = base_injections(model);
  const auto& xf = SequenceTransform::get();

  std::optional<NegZeroSolver> nz_solver;
  if (opt.mode == TxMode::ThreeSequence) nz_solver.emplace(ybus);
  sol.y0_singular = nz_solver && nz_solver->y0_singular();

  // Sequence currents drawn by demand entry k at the present voltage estimate.
  auto entry_currents = [&](std::size_t k) -> Eigen::Vector3cd {
    const auto b = dem_idx[k];
    const ComplexTriple vabc = sequence_to_phase(ComplexTriple::sequence(sol.v0(b), sol.v1(b), sol.v2(b)));
    return xf.T * phase_currents(demand[k], vabc).vec();
  };
  // Zero and negative sequence injections of all demand.
  auto demand_currents = [&](Eigen::VectorXcd& i0, Eigen::VectorXcd& i2) {
    i0.setZero(n);
    i2.setZero(n);
    for (std::size_t k = 0; k < dem_idx.size(); ++k) {
      const Eigen::Vector3cd i012 = entry_currents(k);
      i0(dem_idx[k]) -= i012(0);
      i2(dem_idx[k]) -= i012(2);
    }
  };

  for (int sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    Eigen::VectorXcd inj = base;
    Eigen::VectorXcd i0, i2;
    for (std::size_t k = 0; k < dem_idx.size(); ++k) {
      const auto b = dem_idx[k];
      const cplx mean_s = (demand[k][0] + demand[k][1] + demand[k][2]) / 3.0;
      if (opt.mode == TxMode::PositiveSequenceOnly) {
        inj(b) -= mean_s;
        continue;
      }
      // Positive-sequence share: total minus what the zero and negative sequence currents
      // absorb at the present voltage estimate.
      const Eigen::Vector3cd i012 = entry_currents(k);
      inj(b) -= mean_s - sol.v0(b) * std::conj(i012(0)) - sol.v2(b) * std::conj(i012(2));
    }
    const NrResult nr = solve_positive_nr(ybus, model, inj, sol.v1, opt.nr);
    sol.nr_iterations += nr.iterations;
    double change = (nr.v - sol.v1).cwiseAbs().maxCoeff();
    sol.v1 = nr.v;
    if (nz_solver) {
      // With V1 fixed the negative/zero networks are linear apart from the load currents;
      // settle them before the next positive-sequence solve.
      const Eigen::VectorXcd v0_prev = sol.v0, v2_prev = sol.v2;
      for (int inner = 0; inner < 50; ++inner) {
        demand_currents(i0, i2);
        const NegZeroResult nz = nz_solver->solve(i0, i2);
        const double d = std::max((nz.v0 - sol.v0).cwiseAbs().maxCoeff(), (nz.v2 - sol.v2).cwiseAbs().maxCoeff());
        sol.v0 = nz.v0;
        sol.v2 = nz.v2;
        if (d < 0.01 * opt.sweep_tolerance) break;
      }
      change = std::max({change, (sol.v0 - v0_prev).cwiseAbs().maxCoeff(),
                         (sol.v2 - v2_prev).cwiseAbs().maxCoeff()});
    }
    sol.iterations = sweep;
    if (change < opt.sweep_tolerance) {
      sol.converged = true;
      break;
    }
  }
  if (!sol.converged)
    throw ConvergenceError("three-sequence sweep did not converge in " +
                               std::to_string(opt.max_sweeps) + " sweeps",
                           sol.iterations);

  for (std::size_t k = 0; k < n_pcc; ++k) {
    const auto b = dem_idx[k];
    const auto vt = ComplexTriple::sequence(sol.v0(b), sol.v1(b), sol.v2(b));
    sol.v_t.push_back(vt);
    sol.i_abc.push_back(phase_currents(s_t[k], sequence_to_phase(vt)));
  }
  return sol;
}

} // namespace tdcosim
