#pragma once

// Small hand-built models shared by the unit tests.

#include <random>
#include <string>
#include <vector>

#include "tdcosim/coupling.hpp"
#include "tdcosim/io.hpp"

namespace tdcosim::test {

inline cplx polar_deg(double mag, double deg) { return std::polar(mag, deg_to_rad(deg)); }

/// Slack bus 1 at v_set, PQ bus 2, one branch.
inline TransmissionModel two_bus(cplx z, cplx load = 0.0, double v_set = 1.0) {
  TransmissionModel m;
  m.name = "two-bus";
  TxBus slack;
  slack.id = 1;
  slack.type = BusType::Slack;
  slack.v_set = v_set;
  TxBus pq;
  pq.id = 2;
  pq.load = load;
  m.buses = {slack, pq};
  m.branches = {{1, 2, z, z, 0.0, 0.0}};
  return m;
}

/// Three-phase chain head - n2 - ... with `lines.size()` lines and one load triple per node.
inline FeederModel chain_feeder(const std::vector<Eigen::Matrix3cd>& lines,
                                const std::vector<std::array<cplx, 3>>& loads, cplx transformer_z = 0.0,
                                int pcc_bus = 2) {
  FeederModel f;
  f.name = "chain";
  f.pcc_bus = pcc_bus;
  f.transformer.z = transformer_z;
  f.nodes.push_back({"head", 0b111});
  for (std::size_t k = 0; k < lines.size(); ++k) {
    f.nodes.push_back({"n" + std::to_string(k + 2), 0b111});
    f.lines.push_back({k, k + 1, lines[k], Eigen::Matrix3cd::Zero()});
  }
  for (std::size_t node = 0; node < loads.size(); ++node)
    for (int p = 0; p < 3; ++p)
      if (loads[node][static_cast<std::size_t>(p)] != 0.0) f.loads.push_back({node, p, loads[node][static_cast<std::size_t>(p)]});
  f.validate();
  return f;
}

inline Eigen::Matrix3cd diag3(cplx z) { return Eigen::Matrix3cd(Eigen::Vector3cd::Constant(z).asDiagonal()); }

inline ComplexTriple random_triple(std::mt19937_64& rng, Frame f, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  return {f, cplx(u(rng), u(rng)), cplx(u(rng), u(rng)), cplx(u(rng), u(rng))};
}

inline LoadedCase bundled(const std::string& name) { return load_models(name); }

} // namespace tdcosim::test
