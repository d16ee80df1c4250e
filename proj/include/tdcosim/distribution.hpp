#pragma once

// Three-phase unbalanced radial feeder: backward-forward sweep power flow behind a
// substation transformer, and the 3x3 driving-point equivalent seen from the PCC.

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tdcosim/seqframes.hpp"

namespace tdcosim {

enum class TransformerConnection { WyeGWyeG, DeltaWyeG };

struct SubstationTransformer {
  cplx z{0.0, 0.0}; // series impedance, pu on the system base
  TransformerConnection connection = TransformerConnection::WyeGWyeG;
};

struct FeederNode {
  std::string name;
  std::uint8_t phases = 0b111; // bit p set when phase p exists
  bool has(int p) const { return (phases >> p) & 1u; }
};

struct FeederLine {
  std::size_t from = 0;
  std::size_t to = 0;
  Eigen::Matrix3cd z = Eigen::Matrix3cd::Zero();       // series, pu
  Eigen::Matrix3cd y_shunt = Eigen::Matrix3cd::Zero(); // total shunt, pu, half at each end
};

struct FeederLoad {
  std::size_t node = 0;
  int phase = 0;
  cplx s{0.0, 0.0};       // pu on the per-phase system base
  double allocation = 1.0;
};

/// Delta/wye-g voltage map (pu, 30 degree shift): V_lv = W V_hv, I_hv = W^T I_lv.
inline const Eigen::Matrix3d& delta_wye_map() {
  static const Eigen::Matrix3d w = [] {
    Eigen::Matrix3d m;
    m << 1, 0, -1, //
        -1, 1, 0,  //
        0, -1, 1;
    return Eigen::Matrix3d(m / std::sqrt(3.0));
  }();
  return w;
}

struct FeederModel {
  std::string name;
  int pcc_bus = 0;
  double hv_kv = 230.0;
  double lv_kv = 34.5;
  SubstationTransformer transformer;
  std::vector<FeederNode> nodes; // nodes[0] is the transformer secondary (feeder head)
  std::vector<FeederLine> lines;
  std::vector<FeederLoad> loads;
  double multiplier = 1.0;
  std::array<double, 3> phase_allocation{1.0, 1.0, 1.0};

  cplx effective_load(const FeederLoad& l) const {
    return l.s * (l.allocation * multiplier * phase_allocation[static_cast<std::size_t>(l.phase)]);
  }

  /// Copy with a global multiplier and per-phase allocation factors applied.
  FeederModel scaled(double mult, const std::array<double, 3>& alloc) const {
    FeederModel f = *this;
    f.multiplier = mult;
    f.phase_allocation = alloc;
    return f;
  }

  /// Sum of the effective load per phase (no losses).
  ComplexTriple nominal_demand() const {
    std::array<cplx, 3> s{};
    for (const auto& l : loads) s[static_cast<std::size_t>(l.phase)] += effective_load(l);
    return {Frame::Phase, s};
  }

  /// Parent of every node in sweep order (parents first); throws on loops or islands.
  struct Topology {
    std::vector<std::size_t> order;
    std::vector<std::ptrdiff_t> parent_line; // -1 for the head
  };

  Topology topology() const {
    const std::size_t n = nodes.size();
    if (n == 0) throw ModelError("feeder '" + name + "' has no nodes");
    std::vector<std::vector<std::size_t>> adj(n);
    for (std::size_t k = 0; k < lines.size(); ++k) {
      const auto& ln = lines[k];
      if (ln.from >= n || ln.to >= n)
        throw ModelError("feeder '" + name + "': line " + std::to_string(k) + " references an unknown node");
      if (ln.from == ln.to)
        throw ModelError("feeder '" + name + "': line " + edge_label(k) + " is a self loop");
      adj[ln.from].push_back(k);
      adj[ln.to].push_back(k);
    }
    Topology t;
    t.parent_line.assign(n, -2);
    t.parent_line[0] = -1;
    t.order.push_back(0);
    std::vector<bool> used(lines.size(), false);
    for (std::size_t head = 0; head < t.order.size(); ++head) {
      const auto u = t.order[head];
      for (auto k : adj[u]) {
        if (used[k]) continue;
        used[k] = true;
        const auto v = lines[k].from == u ? lines[k].to : lines[k].from;
        if (t.parent_line[v] != -2)
          throw ModelError("feeder '" + name + "' is non-radial: line " + edge_label(k) +
                           " closes a loop");
        t.parent_line[v] = static_cast<std::ptrdiff_t>(k);
        t.order.push_back(v);
      }
    }
    for (std::size_t v = 0; v < n; ++v)
      if (t.parent_line[v] == -2)
        throw ModelError("feeder '" + name + "': node " + nodes[v].name + " is not connected to the head");
    return t;
  }

  void validate() const {
    const auto topo = topology();
    if (nodes[0].phases != 0b111) throw ModelError("feeder '" + name + "': head node must be three-phase");
    for (std::size_t v = 1; v < nodes.size(); ++v) {
      const auto& ln = lines[static_cast<std::size_t>(topo.parent_line[v])];
      const auto parent = ln.from == v ? ln.to : ln.from;
      if ((nodes[v].phases & ~nodes[parent].phases) != 0)
        throw ModelError("feeder '" + name + "': node " + nodes[v].name +
                         " has a phase its upstream node lacks");
    }
    for (const auto& l : loads) {
      if (l.node >= nodes.size()) throw ModelError("feeder '" + name + "': load on unknown node");
      if (l.phase < 0 || l.phase > 2 || !nodes[l.node].has(l.phase))
        throw ModelError("feeder '" + name + "': load on missing phase " + std::string(1, char('a' + l.phase)) +
                         " at node " + nodes[l.node].name);
      if (l.allocation < 0.0) throw ModelError("feeder '" + name + "': negative allocation factor");
    }
    if (!(multiplier > 0.0)) throw ModelError("feeder '" + name + "': load multiplier must be positive");
    for (double a : phase_allocation)
      if (a < 0.0) throw ModelError("feeder '" + name + "': negative phase allocation factor");
    if (transformer.connection == TransformerConnection::DeltaWyeG && std::abs(transformer.z) == 0.0)
      throw ModelError("feeder '" + name + "': delta/wye-g transformer needs a nonzero impedance");
  }

  std::string edge_label(std::size_t k) const {
    return nodes.at(lines[k].from).name + "-" + nodes.at(lines[k].to).name;
  }
};

struct DxSolution {
  std::vector<Eigen::Vector3cd> v; // per node, zero on absent phases
  ComplexTriple s_d = ComplexTriple::zeros(Frame::Phase);
  ComplexTriple v_pcc = ComplexTriple::zeros(Frame::Phase);
  Eigen::Vector3cd i_lv = Eigen::Vector3cd::Zero(); // transformer secondary current
  bool converged = false;
  int iterations = 0;
};

struct DxSolveOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  const DxSolution* warm_start = nullptr; // node voltages to start from instead of the PCC voltage
};

namespace detail {

inline Eigen::Vector3cd mask(const Eigen::Vector3cd& x, std::uint8_t phases) {
  Eigen::Vector3cd y = x;
  for (int p = 0; p < 3; ++p)
    if (!((phases >> p) & 1u)) y(p) = 0.0;
  return y;
}

} // namespace detail

/// S_D = f2(V_D): backward-forward sweep with the PCC held at `v_d`.
inline DxSolution solve_f2(const FeederModel& feeder, const ComplexTriple& v_d,
                           const DxSolveOptions& opt = {}) {
  if (v_d.frame() != Frame::Phase) throw FrameError("solve_f2 expects a phase-frame voltage");
  for (std::size_t p = 0; p < 3; ++p) {
    const double m = std::abs(v_d[p]);
    if (!(m > 0.5 && m < 1.5))
      throw DomainError("solve_f2: PCC voltage magnitude " + std::to_string(m) + " outside (0.5, 1.5) pu");
  }
  const auto topo = feeder.topology();
  const std::size_t n = feeder.nodes.size();
  const bool delta = feeder.transformer.connection == TransformerConnection::DeltaWyeG;
  const Eigen::Matrix3cd w = delta ? Eigen::Matrix3cd(delta_wye_map().cast<cplx>())
                                   : Eigen::Matrix3cd(Eigen::Matrix3cd::Identity());
  const Eigen::Vector3cd vpcc = v_d.vec();
  const Eigen::Vector3cd vsrc = w * vpcc;

  std::vector<Eigen::Vector3cd> s_node(n, Eigen::Vector3cd::Zero());
  for (const auto& l : feeder.loads) s_node[l.node](l.phase) += feeder.effective_load(l);

  DxSolution sol;
  sol.v.assign(n, Eigen::Vector3cd::Zero());
  if (opt.warm_start && opt.warm_start->v.size() == n)
    for (std::size_t k = 0; k < n; ++k) sol.v[k] = detail::mask(opt.warm_start->v[k], feeder.nodes[k].phases);
  else
    for (std::size_t k = 0; k < n; ++k) sol.v[k] = detail::mask(vsrc, feeder.nodes[k].phases);
  sol.v_pcc = v_d;

  std::vector<Eigen::Vector3cd> inj(n), branch(n);
  // Backward: node draws at the present voltages, accumulated leaves-to-head.
  auto backward = [&] {
    for (std::size_t k = 0; k < n; ++k) {
      inj[k].setZero();
      for (int p = 0; p < 3; ++p)
        if (s_node[k](p) != 0.0) inj[k](p) = std::conj(s_node[k](p) / sol.v[k](p));
    }
    for (std::size_t k = 1; k < n; ++k) {
      const auto& ln = feeder.lines[static_cast<std::size_t>(topo.parent_line[k])];
      const auto par = ln.from == k ? ln.to : ln.from;
      const std::uint8_t ph = feeder.nodes[k].phases;
      inj[k] += detail::mask(0.5 * ln.y_shunt * sol.v[k], ph);
      inj[par] += detail::mask(0.5 * ln.y_shunt * detail::mask(sol.v[par], ph), ph);
    }
    for (std::size_t k = 0; k < n; ++k) branch[k] = inj[k];
    for (auto it_o = topo.order.rbegin(); it_o != topo.order.rend(); ++it_o) {
      const auto k = *it_o;
      if (k == 0) continue;
      const auto& ln = feeder.lines[static_cast<std::size_t>(topo.parent_line[k])];
      const auto par = ln.from == k ? ln.to : ln.from;
      branch[par] += branch[k];
    }
  };

  for (int it = 1; it <= opt.max_iterations; ++it) {
    backward();
    // Forward: voltage drops head-to-leaves.
    double change = 0.0;
    auto set_v = [&](std::size_t k, const Eigen::Vector3cd& vn) {
      change = std::max(change, (vn - sol.v[k]).cwiseAbs().maxCoeff());
      sol.v[k] = vn;
    };
    set_v(0, vsrc - feeder.transformer.z * branch[0]);
    for (std::size_t idx = 1; idx < topo.order.size(); ++idx) {
      const auto k = topo.order[idx];
      const auto& ln = feeder.lines[static_cast<std::size_t>(topo.parent_line[k])];
      const auto par = ln.from == k ? ln.to : ln.from;
      const std::uint8_t ph = feeder.nodes[k].phases;
      set_v(k, detail::mask(sol.v[par] - ln.z * detail::mask(branch[k], ph), ph));
    }
    sol.iterations = it;
    for (const auto& vk : sol.v)
      if (!vk.allFinite()) throw ConvergenceError("feeder '" + feeder.name + "' sweep produced NaN", it);
    if (change <= opt.tolerance) {
      sol.converged = true;
      break;
    }
  }
  if (!sol.converged)
    throw ConvergenceError("feeder '" + feeder.name + "' sweep did not converge in " +
                               std::to_string(opt.max_iterations) + " iterations",
                           sol.iterations);
  // Head current from the converged voltages so S_D matches the node powers exactly.
  backward();
  sol.i_lv = branch[0];
  const Eigen::Vector3cd i_hv = w.transpose() * sol.i_lv;
  sol.s_d = ComplexTriple(Frame::Phase, Eigen::Vector3cd(vpcc.cwiseProduct(i_hv.conjugate())));
  return sol;
}

/// dS_D/d|V_k| of the feeder power flow itself (constant-power loads), phase angles at
/// the PCC held fixed. Central differences of solve_f2, warm-started from `at`.
inline Eigen::Matrix3cd magnitude_sensitivity(const FeederModel& feeder, const ComplexTriple& v_d,
                                              const DxSolution& at, double rel_step = 1e-4) {
  DxSolveOptions opt;
  opt.warm_start = &at;
  opt.tolerance = 1e-11;
  Eigen::Matrix3cd d;
  for (std::size_t k = 0; k < 3; ++k) {
    const double h = rel_step * std::abs(v_d[k]);
    const cplx unit = v_d[k] / std::abs(v_d[k]);
    const auto up = solve_f2(feeder, v_d.with(k, v_d[k] + h * unit), opt).s_d.vec();
    const auto dn = solve_f2(feeder, v_d.with(k, v_d[k] - h * unit), opt).s_d.vec();
    d.col(static_cast<Eigen::Index>(k)) = (up - dn) / (2.0 * h);
  }
  return d;
}

struct TheveninEquivalent {
  Eigen::Matrix3cd y_d = Eigen::Matrix3cd::Zero();
  std::optional<Eigen::Matrix3cd> z_d; // absent when Y_D is singular (delta winding blocks zero sequence)
};

namespace detail {

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void join(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

} // namespace detail

/// Feeder phase-frame nodal admittance with loads frozen as admittances at `last`,
/// Kron-reduced onto the three PCC phase nodes. Zero-impedance elements merge nodes.
inline TheveninEquivalent thevenin_at_pcc(const FeederModel& feeder, const DxSolution& last) {
  if (!last.converged) throw DomainError("thevenin_at_pcc needs a converged feeder solution");
  const std::size_t n = feeder.nodes.size();
  const auto topo = feeder.topology();
  const bool delta = feeder.transformer.connection == TransformerConnection::DeltaWyeG;

  // Raw indices: 0..2 PCC phases, then 3 + 3*node + phase.
  const std::size_t raw_n = 3 + 3 * n;
  auto raw = [](std::size_t node, int p) { return 3 + 3 * node + static_cast<std::size_t>(p); };
  detail::UnionFind uf(raw_n);
  if (!delta && std::abs(feeder.transformer.z) == 0.0)
    for (int p = 0; p < 3; ++p) uf.join(raw(0, p), static_cast<std::size_t>(p));
  for (std::size_t child = 1; child < n; ++child) {
    const auto& ln = feeder.lines[static_cast<std::size_t>(topo.parent_line[child])];
    const auto par = ln.from == child ? ln.to : ln.from;
    const std::uint8_t ph = feeder.nodes[child].phases;
    bool all_zero = true;
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q)
        if (((ph >> p) & 1u) && ((ph >> q) & 1u) && ln.z(p, q) != 0.0) all_zero = false;
    if (all_zero)
      for (int p = 0; p < 3; ++p)
        if ((ph >> p) & 1u) uf.join(raw(child, p), raw(par, p));
  }

  // Compact numbering: PCC group roots first (0..2), then every other present node-phase.
  std::vector<std::ptrdiff_t> compact(raw_n, -1);
  std::vector<std::ptrdiff_t> root_id(raw_n, -1);
  std::ptrdiff_t next = 0;
  for (std::size_t p = 0; p < 3; ++p) root_id[uf.find(p)] = next++;
  for (std::size_t k = 0; k < n; ++k)
    for (int p = 0; p < 3; ++p) {
      if (!feeder.nodes[k].has(p)) continue;
      const auto r = uf.find(raw(k, p));
      if (root_id[r] < 0) root_id[r] = next++;
    }
  for (std::size_t i = 0; i < raw_n; ++i) compact[i] = root_id[uf.find(i)];
  const auto m = static_cast<Eigen::Index>(next);
  Eigen::MatrixXcd Y = Eigen::MatrixXcd::Zero(m, m);

  auto stamp_block = [&](const std::vector<std::ptrdiff_t>& rows, const std::vector<std::ptrdiff_t>& cols,
                         const Eigen::MatrixXcd& blk) {
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j)
        Y(rows[i], cols[j]) += blk(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  };

  // Substation transformer.
  if (std::abs(feeder.transformer.z) > 0.0) {
    const cplx yt = 1.0 / feeder.transformer.z;
    const Eigen::Matrix3cd w = delta ? Eigen::Matrix3cd(delta_wye_map().cast<cplx>())
                                     : Eigen::Matrix3cd(Eigen::Matrix3cd::Identity());
    std::vector<std::ptrdiff_t> hv{compact[0], compact[1], compact[2]};
    std::vector<std::ptrdiff_t> lv{compact[raw(0, 0)], compact[raw(0, 1)], compact[raw(0, 2)]};
    stamp_block(hv, hv, yt * w.transpose() * w);
    stamp_block(hv, lv, -yt * w.transpose());
    stamp_block(lv, hv, -yt * w);
    stamp_block(lv, lv, yt * Eigen::Matrix3cd::Identity());
  }

  for (std::size_t k = 1; k < n; ++k) {
    const auto& ln = feeder.lines[static_cast<std::size_t>(topo.parent_line[k])];
    const auto par = ln.from == k ? ln.to : ln.from;
    std::vector<int> ph;
    for (int p = 0; p < 3; ++p)
      if (feeder.nodes[k].has(p)) ph.push_back(p);
    const auto np = static_cast<Eigen::Index>(ph.size());
    Eigen::MatrixXcd zsub(np, np), ysub(np, np);
    for (Eigen::Index i = 0; i < np; ++i)
      for (Eigen::Index j = 0; j < np; ++j) {
        zsub(i, j) = ln.z(ph[static_cast<std::size_t>(i)], ph[static_cast<std::size_t>(j)]);
        ysub(i, j) = ln.y_shunt(ph[static_cast<std::size_t>(i)], ph[static_cast<std::size_t>(j)]);
      }
    std::vector<std::ptrdiff_t> a, b;
    for (int p : ph) {
      a.push_back(compact[raw(par, p)]);
      b.push_back(compact[raw(k, p)]);
    }
    if (a != b) {
      Eigen::FullPivLU<Eigen::MatrixXcd> lu(zsub);
      if (!lu.isInvertible())
        throw SingularError("feeder '" + feeder.name + "': singular line impedance on " +
                            feeder.nodes[par].name + "-" + feeder.nodes[k].name);
      const Eigen::MatrixXcd ys = lu.inverse();
      stamp_block(a, a, ys);
      stamp_block(a, b, -ys);
      stamp_block(b, a, -ys);
      stamp_block(b, b, ys);
    }
    stamp_block(a, a, 0.5 * ysub);
    stamp_block(b, b, 0.5 * ysub);
  }

  for (const auto& l : feeder.loads) {
    const cplx s = feeder.effective_load(l);
    if (s == 0.0) continue;
    const cplx v = last.v[l.node](l.phase);
    const auto idx = compact[raw(l.node, l.phase)];
    Y(idx, idx) += std::conj(s) / std::norm(v);
  }

  TheveninEquivalent th;
  const Eigen::Index ni = m - 3;
  if (ni == 0) {
    th.y_d = Y.topLeftCorner(3, 3);
  } else {
    const Eigen::MatrixXcd yii = Y.bottomRightCorner(ni, ni);
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(yii);
    lu.setThreshold(1e-12);
    if (!lu.isInvertible())
      throw SingularError("feeder '" + feeder.name +
                          "': interior admittance matrix is singular (no shunt path to ground)");
    th.y_d = Y.topLeftCorner(3, 3) - Y.topRightCorner(3, ni) * lu.solve(Y.bottomLeftCorner(ni, 3));
  }
  Eigen::FullPivLU<Eigen::Matrix3cd> lu_d(th.y_d);
  lu_d.setThreshold(1e-10);
  if (th.y_d.cwiseAbs().maxCoeff() == 0.0)
    throw SingularError("feeder '" + feeder.name + "': driving-point admittance is zero (no shunt path)");
  if (lu_d.isInvertible()) th.z_d = lu_d.inverse();
  return th;
}

} // namespace tdcosim
