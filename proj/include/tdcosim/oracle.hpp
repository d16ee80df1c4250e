#pragma once

// Monolithic three-phase T&D power flow: every transmission bus and feeder node in one
// phase-frame admittance matrix, solved by current-injection fixed point. It shares no
// solver code with the subsystem solvers so it can referee them.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "tdcosim/distribution.hpp"
#include "tdcosim/errors.hpp"
#include "tdcosim/seqframes.hpp"
#include "tdcosim/transmission.hpp"

namespace tdcosim {

/// One stamped network element: a dense admittance block over a list of node indices.
struct CombinedElement {
  std::vector<Eigen::Index> nodes;
  Eigen::MatrixXcd y;
  int feeder = -1;        // owning feeder, -1 for transmission
  bool generator = false; // generator neg/zero sequence shunt, not part of the network
};

struct CombinedLoad {
  Eigen::Index node = 0;
  cplx s{0.0, 0.0}; // per-phase pu, constant power
  int feeder = -1;
};

struct CombinedSource {
  std::size_t bus = 0; // transmission bus index
  BusType type = BusType::Slack;
  double v_set = 1.0;
  double angle = 0.0;
  double p_gen = 0.0;
};

struct CombinedModel {
  Eigen::Index n_nodes = 0;
  std::vector<std::string> labels;
  std::vector<std::array<Eigen::Index, 3>> tx_nodes;                  // per transmission bus
  std::vector<std::vector<std::array<Eigen::Index, 3>>> feeder_nodes; // -1 on absent phases
  std::vector<std::size_t> pcc_bus;                                   // per feeder
  std::vector<bool> feeder_delta;                                     // delta/wye-g substation
  std::vector<CombinedElement> elements;
  std::vector<CombinedLoad> loads;
  std::vector<CombinedSource> sources;
  SparseC y;

  std::size_t slack() const {
    for (const auto& s : sources)
      if (s.type == BusType::Slack) return s.bus;
    throw ModelError("combined model has no slack source");
  }
};

namespace detail {

inline Eigen::Matrix3cd seq_to_phase_block(cplx y0, cplx y1, cplx y2) {
  const auto& x = SequenceTransform::get();
  return x.A * Eigen::Vector3cd(y0, y1, y2).asDiagonal() * x.T;
}

} // namespace detail

inline CombinedModel assemble_combined(const TransmissionModel& tx, const std::vector<FeederModel>& feeders) {
  tx.validate();
  for (const auto& f : feeders) {
    f.validate();
    if (std::abs(f.hv_kv - tx.base_kv) > 1e-9 * tx.base_kv)
      throw ModelError("base mismatch: feeder '" + f.name + "' high-voltage side is " +
                       std::to_string(f.hv_kv) + " kV but transmission base is " +
                       std::to_string(tx.base_kv) + " kV");
  }

  // Raw numbering: 3*bus + p for transmission, then 3*node + p per feeder.
  const std::size_t nb = tx.buses.size();
  std::vector<std::size_t> offset;
  std::size_t raw_n = 3 * nb;
  for (const auto& f : feeders) {
    offset.push_back(raw_n);
    raw_n += 3 * f.nodes.size();
  }
  detail::UnionFind uf(raw_n);
  CombinedModel m;
  std::vector<FeederModel::Topology> topos;
  for (std::size_t fi = 0; fi < feeders.size(); ++fi) {
    const auto& f = feeders[fi];
    const auto pcc = tx.index_of(f.pcc_bus);
    m.pcc_bus.push_back(pcc);
    m.feeder_delta.push_back(f.transformer.connection == TransformerConnection::DeltaWyeG);
    topos.push_back(f.topology());
    if (f.transformer.connection == TransformerConnection::WyeGWyeG && std::abs(f.transformer.z) == 0.0)
      for (std::size_t p = 0; p < 3; ++p) uf.join(offset[fi] + p, 3 * pcc + p);
    for (std::size_t k = 1; k < f.nodes.size(); ++k) {
      const auto& ln = f.lines[static_cast<std::size_t>(topos.back().parent_line[k])];
      const auto par = ln.from == k ? ln.to : ln.from;
      bool zero = true;
      for (int p = 0; p < 3; ++p)
        for (int q = 0; q < 3; ++q)
          if (f.nodes[k].has(p) && f.nodes[k].has(q) && ln.z(p, q) != 0.0) zero = false;
      if (zero)
        for (int p = 0; p < 3; ++p)
          if (f.nodes[k].has(p))
            uf.join(offset[fi] + 3 * k + static_cast<std::size_t>(p),
                    offset[fi] + 3 * par + static_cast<std::size_t>(p));
    }
  }
  for (std::size_t i = 0; i < m.pcc_bus.size(); ++i)
    for (std::size_t j = i + 1; j < m.pcc_bus.size(); ++j)
      if (m.pcc_bus[i] == m.pcc_bus[j])
        throw ModelError("two feeders attached to bus " + std::to_string(tx.buses[m.pcc_bus[i]].id));

  std::vector<Eigen::Index> id_of_root(raw_n, -1);
  auto node_id = [&](std::size_t raw, const std::string& label) {
    const auto r = uf.find(raw);
    if (id_of_root[r] < 0) {
      id_of_root[r] = m.n_nodes++;
      m.labels.push_back(label);
    }
    return id_of_root[r];
  };
  static constexpr char ph_name[] = {'a', 'b', 'c'};
  for (std::size_t b = 0; b < nb; ++b) {
    std::array<Eigen::Index, 3> ids{};
    for (std::size_t p = 0; p < 3; ++p)
      ids[p] = node_id(3 * b + p, "bus" + std::to_string(tx.buses[b].id) + "." + ph_name[p]);
    m.tx_nodes.push_back(ids);
  }
  for (std::size_t fi = 0; fi < feeders.size(); ++fi) {
    const auto& f = feeders[fi];
    std::vector<std::array<Eigen::Index, 3>> ids(f.nodes.size(), {-1, -1, -1});
    for (std::size_t k = 0; k < f.nodes.size(); ++k)
      for (int p = 0; p < 3; ++p)
        if (f.nodes[k].has(p))
          ids[k][static_cast<std::size_t>(p)] =
              node_id(offset[fi] + 3 * k + static_cast<std::size_t>(p), f.name + "/" + f.nodes[k].name + "." + ph_name[p]);
    m.feeder_nodes.push_back(std::move(ids));
  }

  auto add = [&](std::vector<Eigen::Index> nodes, Eigen::MatrixXcd y, int feeder, bool gen = false) {
    m.elements.push_back({std::move(nodes), std::move(y), feeder, gen});
  };
  auto cat = [](const std::array<Eigen::Index, 3>& a, const std::array<Eigen::Index, 3>& b) {
    return std::vector<Eigen::Index>{a[0], a[1], a[2], b[0], b[1], b[2]};
  };
  auto two_port = [](const Eigen::MatrixXcd& ys, const Eigen::MatrixXcd& ysh_half) {
    const auto k = ys.rows();
    Eigen::MatrixXcd y(2 * k, 2 * k);
    y << ys + ysh_half, -ys, -ys, ys + ysh_half;
    return y;
  };

  for (const auto& br : tx.branches) {
    const auto i = tx.index_of(br.from), j = tx.index_of(br.to);
    const cplx y0 = std::abs(br.z0) > 0.0 ? 1.0 / br.z0 : cplx(0.0);
    const Eigen::Matrix3cd ys = detail::seq_to_phase_block(y0, 1.0 / br.z1, 1.0 / br.z1);
    const Eigen::Matrix3cd ysh =
        detail::seq_to_phase_block(cplx(0.0, br.b0 / 2.0), cplx(0.0, br.b1 / 2.0), cplx(0.0, br.b1 / 2.0));
    add(cat(m.tx_nodes[i], m.tx_nodes[j]), two_port(ys, ysh), -1);
  }
  for (std::size_t b = 0; b < nb; ++b) {
    const auto& bus = tx.buses[b];
    const std::vector<Eigen::Index> ids(m.tx_nodes[b].begin(), m.tx_nodes[b].end());
    if (bus.shunt != 0.0) add(ids, Eigen::MatrixXcd(bus.shunt * Eigen::Matrix3cd::Identity()), -1);
    if (bus.has_generator()) {
      const cplx y2 = std::abs(bus.gen_z2) > 0.0 ? 1.0 / bus.gen_z2 : cplx(0.0);
      const cplx y0 = bus.gen_z0_ground && std::abs(*bus.gen_z0_ground) > 0.0 ? 1.0 / *bus.gen_z0_ground : cplx(0.0);
      add(ids, Eigen::MatrixXcd(detail::seq_to_phase_block(y0, 0.0, y2)), -1, true);
      m.sources.push_back({b, bus.type, bus.v_set, bus.angle, bus.p_gen});
    }
    if (bus.load != 0.0)
      for (std::size_t p = 0; p < 3; ++p) m.loads.push_back({m.tx_nodes[b][p], bus.load, -1});
  }

  for (std::size_t fi = 0; fi < feeders.size(); ++fi) {
    const auto& f = feeders[fi];
    const int tag = static_cast<int>(fi);
    const auto& ids = m.feeder_nodes[fi];
    if (std::abs(f.transformer.z) > 0.0) {
      const cplx yt = 1.0 / f.transformer.z;
      const Eigen::Matrix3cd w = f.transformer.connection == TransformerConnection::DeltaWyeG
                                     ? Eigen::Matrix3cd(delta_wye_map().cast<cplx>())
                                     : Eigen::Matrix3cd(Eigen::Matrix3cd::Identity());
      Eigen::MatrixXcd y(6, 6);
      y << yt * w.transpose() * w, -yt * w.transpose(), -yt * w, yt * Eigen::Matrix3cd::Identity();
      add(cat(m.tx_nodes[m.pcc_bus[fi]], ids[0]), y, tag);
    }
    for (std::size_t k = 1; k < f.nodes.size(); ++k) {
      const auto& ln = f.lines[static_cast<std::size_t>(topos[fi].parent_line[k])];
      const auto par = ln.from == k ? ln.to : ln.from;
      std::vector<int> ph;
      for (int p = 0; p < 3; ++p)
        if (f.nodes[k].has(p)) ph.push_back(p);
      const auto np = static_cast<Eigen::Index>(ph.size());
      Eigen::MatrixXcd z(np, np), ysh(np, np);
      std::vector<Eigen::Index> a, b;
      for (Eigen::Index i = 0; i < np; ++i) {
        const auto pi = static_cast<std::size_t>(ph[static_cast<std::size_t>(i)]);
        a.push_back(ids[par][pi]);
        b.push_back(ids[k][pi]);
        for (Eigen::Index j = 0; j < np; ++j) {
          z(i, j) = ln.z(ph[static_cast<std::size_t>(i)], ph[static_cast<std::size_t>(j)]);
          ysh(i, j) = ln.y_shunt(ph[static_cast<std::size_t>(i)], ph[static_cast<std::size_t>(j)]);
        }
      }
      Eigen::MatrixXcd ys = Eigen::MatrixXcd::Zero(np, np);
      if (a != b) {
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(z);
        if (!lu.isInvertible())
          throw SingularError("feeder '" + f.name + "': singular line impedance on " + f.nodes[par].name + "-" +
                              f.nodes[k].name);
        ys = lu.inverse();
      }
      std::vector<Eigen::Index> ab = a;
      ab.insert(ab.end(), b.begin(), b.end());
      add(ab, two_port(ys, 0.5 * ysh), tag);
    }
    for (const auto& l : f.loads) {
      const cplx s = f.effective_load(l);
      if (s != 0.0) m.loads.push_back({ids[l.node][static_cast<std::size_t>(l.phase)], s, tag});
    }
  }

  std::vector<Eigen::Triplet<cplx>> trip;
  for (const auto& e : m.elements)
    for (std::size_t i = 0; i < e.nodes.size(); ++i)
      for (std::size_t j = 0; j < e.nodes.size(); ++j) {
        const cplx v = e.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        if (v != 0.0) trip.emplace_back(e.nodes[i], e.nodes[j], v);
      }
  m.y.resize(m.n_nodes, m.n_nodes);
  m.y.setFromTriplets(trip.begin(), trip.end());
  m.slack();
  return m;
}

struct MonolithicOptions {
  double tolerance = 1e-10;
  int max_iterations = 500;
};

struct MonolithicSolution {
  Eigen::VectorXcd v;                    // per combined node
  std::vector<ComplexTriple> pcc_v;      // per feeder, phase frame, transmission side
  std::vector<ComplexTriple> pcc_s;      // per feeder, phase power entering the feeder
  std::vector<cplx> source_s;            // per source, 3-phase pu at the terminal (mean of phases)
  int iterations = 0;
  double last_change = 0.0;

  std::vector<ComplexTriple> pcc_v_sequence() const {
    std::vector<ComplexTriple> out;
    for (const auto& v : pcc_v) out.push_back(phase_to_sequence(v));
    return out;
  }
};

namespace detail {

inline Eigen::VectorXcd element_currents(const CombinedModel& m, const Eigen::VectorXcd& v, bool network_only,
                                         int feeder_only = -2) {
  Eigen::VectorXcd i = Eigen::VectorXcd::Zero(m.n_nodes);
  for (const auto& e : m.elements) {
    if (network_only && e.generator) continue;
    if (feeder_only != -2 && e.feeder != feeder_only) continue;
    Eigen::VectorXcd ve(static_cast<Eigen::Index>(e.nodes.size()));
    for (std::size_t k = 0; k < e.nodes.size(); ++k) ve(static_cast<Eigen::Index>(k)) = v(e.nodes[k]);
    const Eigen::VectorXcd ie = e.y * ve;
    for (std::size_t k = 0; k < e.nodes.size(); ++k) i(e.nodes[k]) += ie(static_cast<Eigen::Index>(k));
  }
  return i;
}

inline Eigen::VectorXcd load_injections(const CombinedModel& m, const Eigen::VectorXcd& v, int feeder_only = -2) {
  Eigen::VectorXcd i = Eigen::VectorXcd::Zero(m.n_nodes);
  for (const auto& l : m.loads) {
    if (feeder_only != -2 && l.feeder != feeder_only) continue;
    if (std::abs(v(l.node)) == 0.0) throw DomainError("monolithic solve reached zero voltage at " + m.labels[static_cast<std::size_t>(l.node)]);
    i(l.node) -= std::conj(l.s / v(l.node));
  }
  return i;
}

inline Eigen::Vector3cd gather(const Eigen::VectorXcd& v, const std::array<Eigen::Index, 3>& ids) {
  return {v(ids[0]), v(ids[1]), v(ids[2])};
}

} // namespace detail

/// Phase generator current (into the network) at a source bus, from KCL at the solved voltages.
inline Eigen::Vector3cd source_current(const CombinedModel& m, const Eigen::VectorXcd& v, std::size_t bus) {
  const Eigen::VectorXcd net = m.y * v - detail::load_injections(m, v);
  return detail::gather(net, m.tx_nodes[bus]);
}

/// V <- K^-1 I(V). Generator buses are carried in sequence coordinates so their positive
/// sequence can be pinned to v_set at angle delta (fixed for the slack). With the load
/// currents frozen the network is linear in those sources, so each pass solves the PV angles
/// for P_set exactly before taking the step.
inline MonolithicSolution solve_monolithic(const CombinedModel& m, const MonolithicOptions& opt = {}) {
  const auto& xf = SequenceTransform::get();
  const auto n = m.n_nodes;
  m.slack();
  const std::size_t ng = m.sources.size();

  // K = L Y R: R = A and L = T on each generator block, positive-sequence rows replaced by
  // the constraint u1 = E.
  std::vector<Eigen::Triplet<cplx>> lt, rt;
  std::vector<bool> is_gen(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> pinned;
  for (const auto& s : m.sources) {
    const auto& ids = m.tx_nodes[s.bus];
    for (auto id : ids) is_gen[static_cast<std::size_t>(id)] = true;
    pinned.push_back(ids[1]);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        lt.emplace_back(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)], xf.T(i, j));
        rt.emplace_back(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)], xf.A(i, j));
      }
  }
  for (Eigen::Index k = 0; k < n; ++k)
    if (!is_gen[static_cast<std::size_t>(k)]) {
      lt.emplace_back(k, k, 1.0);
      rt.emplace_back(k, k, 1.0);
    }
  SparseC L(n, n), R(n, n);
  L.setFromTriplets(lt.begin(), lt.end());
  R.setFromTriplets(rt.begin(), rt.end());
  std::vector<bool> is_pinned(static_cast<std::size_t>(n), false);
  for (auto id : pinned) is_pinned[static_cast<std::size_t>(id)] = true;
  SparseC K = L * m.y * R;
  K.prune([&](Eigen::Index row, Eigen::Index, const cplx&) { return !is_pinned[static_cast<std::size_t>(row)]; });
  for (auto id : pinned) K.coeffRef(id, id) = 1.0;
  K.makeCompressed();
  Eigen::SparseLU<SparseC> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success)
    throw SingularError("combined admittance matrix is singular (isolated node or floating sequence network)");

  // Unit responses to each source EMF, and the positive-sequence source currents they cause.
  std::vector<Eigen::VectorXcd> unit(ng);
  Eigen::MatrixXcd nmat(static_cast<Eigen::Index>(ng), static_cast<Eigen::Index>(ng));
  auto source_i1 = [&](const Eigen::VectorXcd& i_net, std::size_t g) {
    return (xf.T * detail::gather(i_net, m.tx_nodes[m.sources[g].bus]))(1);
  };
  for (std::size_t h = 0; h < ng; ++h) {
    Eigen::VectorXcd e = Eigen::VectorXcd::Zero(n);
    e(pinned[h]) = 1.0;
    unit[h] = R * lu.solve(e);
    const Eigen::VectorXcd i_net = m.y * unit[h];
    for (std::size_t g = 0; g < ng; ++g)
      nmat(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(h)) = source_i1(i_net, g);
  }

  Eigen::VectorXd delta(static_cast<Eigen::Index>(ng));
  for (std::size_t g = 0; g < ng; ++g) delta(static_cast<Eigen::Index>(g)) = m.sources[g].angle;
  auto emf = [&] {
    Eigen::VectorXcd e(static_cast<Eigen::Index>(ng));
    for (std::size_t g = 0; g < ng; ++g)
      e(static_cast<Eigen::Index>(g)) = std::polar(m.sources[g].v_set, delta(static_cast<Eigen::Index>(g)));
    return e;
  };

  Eigen::VectorXcd v(n);
  {
    double slack_angle = 0.0;
    for (const auto& s : m.sources)
      if (s.type == BusType::Slack) slack_angle = s.angle;
    const ComplexTriple flat = balanced_phase(std::polar(1.0, slack_angle));
    const auto tx_count = static_cast<Eigen::Index>(3 * m.tx_nodes.size()); // merged feeder nodes keep bus ids
    for (const auto& ids : m.tx_nodes)
      for (std::size_t p = 0; p < 3; ++p) v(ids[p]) = flat[p];
    // Feeders behind a delta winding start with its phase shift applied.
    for (std::size_t fi = 0; fi < m.feeder_nodes.size(); ++fi) {
      const Eigen::Vector3cd head =
          m.feeder_delta[fi] ? Eigen::Vector3cd(delta_wye_map().cast<cplx>() * flat.vec()) : flat.vec();
      for (const auto& ids : m.feeder_nodes[fi])
        for (std::size_t p = 0; p < 3; ++p)
          if (ids[p] >= tx_count) v(ids[p]) = head(static_cast<Eigen::Index>(p));
    }
  }

  std::vector<Eigen::Index> pv;
  for (std::size_t g = 0; g < ng; ++g)
    if (m.sources[g].type == BusType::PV) pv.push_back(static_cast<Eigen::Index>(g));
  const auto npv = static_cast<Eigen::Index>(pv.size());

  MonolithicSolution out;
  for (int it = 1; it <= opt.max_iterations; ++it) {
    const Eigen::VectorXcd inj = detail::load_injections(m, v);
    Eigen::VectorXcd rhs = L * inj;
    for (auto id : pinned) rhs(id) = 0.0;
    const Eigen::VectorXcd v_base = R * lu.solve(rhs);
    const Eigen::VectorXcd i_base = m.y * v_base - inj;
    Eigen::VectorXcd c(static_cast<Eigen::Index>(ng));
    for (std::size_t g = 0; g < ng; ++g) c(static_cast<Eigen::Index>(g)) = source_i1(i_base, g);

    // P_g = Re(E_g conj(c_g + sum_h N_gh E_h)); Newton on the PV angles.
    for (int k = 0; k < 50 && npv > 0; ++k) {
      const Eigen::VectorXcd e = emf();
      const Eigen::VectorXcd i1 = c + nmat * e;
      Eigen::VectorXd f(npv);
      Eigen::MatrixXd jac(npv, npv);
      for (Eigen::Index r = 0; r < npv; ++r) {
        const auto g = pv[static_cast<std::size_t>(r)];
        f(r) = std::real(e(g) * std::conj(i1(g))) - m.sources[static_cast<std::size_t>(g)].p_gen;
        for (Eigen::Index q = 0; q < npv; ++q) {
          const auto h = pv[static_cast<std::size_t>(q)];
          double d = std::real(e(g) * std::conj(nmat(g, h) * cplx(0.0, 1.0) * e(h)));
          if (g == h) d += std::real(cplx(0.0, 1.0) * e(g) * std::conj(i1(g)));
          jac(r, q) = d;
        }
      }
      if (f.cwiseAbs().maxCoeff() < 1e-14) break;
      const Eigen::VectorXd step = jac.fullPivLu().solve(-f);
      for (Eigen::Index r = 0; r < npv; ++r) delta(pv[static_cast<std::size_t>(r)]) += step(r);
    }

    const Eigen::VectorXcd e = emf();
    Eigen::VectorXcd v_new = v_base;
    for (std::size_t h = 0; h < ng; ++h) v_new += e(static_cast<Eigen::Index>(h)) * unit[h];
    if (!v_new.allFinite())
      throw ConvergenceError("monolithic solve produced non-finite voltages", it);
    out.last_change = (v_new - v).cwiseAbs().maxCoeff();
    v = v_new;
    out.iterations = it;
    if (out.last_change <= opt.tolerance) break;
    if (it == opt.max_iterations)
      throw ConvergenceError("monolithic solve did not converge in " + std::to_string(opt.max_iterations) +
                                 " iterations (last change " + std::to_string(out.last_change) + ")",
                             it);
  }

  out.v = v;
  for (std::size_t fi = 0; fi < m.feeder_nodes.size(); ++fi) {
    const int tag = static_cast<int>(fi);
    const Eigen::VectorXcd into = detail::element_currents(m, v, true, tag) - detail::load_injections(m, v, tag);
    const auto& ids = m.tx_nodes[m.pcc_bus[fi]];
    const Eigen::Vector3cd vp = detail::gather(v, ids);
    const Eigen::Vector3cd ip = detail::gather(into, ids);
    out.pcc_v.emplace_back(Frame::Phase, vp);
    out.pcc_s.emplace_back(Frame::Phase, Eigen::Vector3cd(vp.cwiseProduct(ip.conjugate())));
  }
  for (const auto& s : m.sources) {
    const auto& ids = m.tx_nodes[s.bus];
    const Eigen::Vector3cd ig = source_current(m, v, s.bus);
    out.source_s.push_back(detail::gather(v, ids).cwiseProduct(ig.conjugate()).sum() / 3.0);
  }
  return out;
}

/// |sum of source power - load - element losses|, per-phase pu summed over phases.
/// Sources are measured through the full matrix, losses element by element over the network.
inline double power_balance_residual(const CombinedModel& m, const MonolithicSolution& sol) {
  cplx gen = 0.0;
  for (std::size_t k = 0; k < m.sources.size(); ++k) gen += 3.0 * sol.source_s[k];
  cplx load = 0.0;
  for (const auto& l : m.loads) load += l.s;
  cplx losses = 0.0;
  for (const auto& e : m.elements) {
    Eigen::VectorXcd ve(static_cast<Eigen::Index>(e.nodes.size()));
    for (std::size_t k = 0; k < e.nodes.size(); ++k) ve(static_cast<Eigen::Index>(k)) = sol.v(e.nodes[k]);
    losses += std::conj(ve.dot(e.y * ve)); // sum of V conj(I) over the element terminals
  }
  return std::abs(gen - load - losses);
}

/// Largest |I_network(V) - I_injected(V)| over non-source nodes.
inline double kcl_residual(const CombinedModel& m, const Eigen::VectorXcd& v) {
  const Eigen::VectorXcd r = m.y * v - detail::load_injections(m, v);
  std::vector<bool> src(static_cast<std::size_t>(m.n_nodes), false);
  for (const auto& s : m.sources)
    for (auto id : m.tx_nodes[s.bus]) src[static_cast<std::size_t>(id)] = true;
  double worst = 0.0;
  for (Eigen::Index k = 0; k < m.n_nodes; ++k)
    if (!src[static_cast<std::size_t>(k)]) worst = std::max(worst, std::abs(r(k)));
  return worst;
}

} // namespace tdcosim
