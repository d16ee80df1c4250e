#pragma once

// Model, case and scenario files (JSON with explicit units on every quantity) and
// the CSV reader/writer used for traces and reports.
//
// Every numeric field is either {"value": x, "unit": "..."} or, for complex and matrix
// quantities, {"re": ..., "im": ..., "unit": "..."}. Loaders convert to per unit on the
// transmission system base; feeder powers are per phase on base_mva / 3.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdcosim/coupling.hpp"
#include "tdcosim/distribution.hpp"
#include "tdcosim/errors.hpp"
#include "tdcosim/transmission.hpp"

namespace tdcosim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace detail {

/// Maps each JSON pointer in a document to the line its value starts on. Runs over
/// text that nlohmann already accepted, so it only needs to track structure.
class LineIndex {
public:
  explicit LineIndex(const std::string& text) : s_(text) {
    skip_ws();
    value("");
  }
  int line_of(const std::string& ptr) const {
    auto it = lines_.find(ptr);
    return it == lines_.end() ? 0 : it->second;
  }

private:
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) {
      if (s_[pos_] == '\n') ++line_;
      ++pos_;
    }
  }
  std::string string_token() {
    std::string out;
    ++pos_; // opening quote
    while (pos_ < s_.size() && s_[pos_] != '"') {
      if (s_[pos_] == '\\') ++pos_;
      if (pos_ < s_.size()) out += s_[pos_++];
    }
    ++pos_;
    return out;
  }
  static std::string escape(const std::string& key) {
    std::string out;
    for (char c : key) {
      if (c == '~') out += "~0";
      else if (c == '/') out += "~1";
      else out += c;
    }
    return out;
  }
  void value(const std::string& ptr) {
    lines_[ptr] = line_;
    if (pos_ >= s_.size()) return;
    const char c = s_[pos_];
    if (c == '{') {
      ++pos_;
      skip_ws();
      while (pos_ < s_.size() && s_[pos_] != '}') {
        const std::string key = string_token();
        skip_ws();
        ++pos_; // ':'
        skip_ws();
        value(ptr + "/" + escape(key));
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '[') {
      ++pos_;
      skip_ws();
      for (int i = 0; pos_ < s_.size() && s_[pos_] != ']'; ++i) {
        value(ptr + "/" + std::to_string(i));
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ',') ++pos_;
        skip_ws();
      }
      ++pos_;
    } else if (c == '"') {
      string_token();
    } else {
      while (pos_ < s_.size() && !std::strchr(",]} \t\r\n", s_[pos_])) ++pos_;
    }
  }

  const std::string& s_;
  std::size_t pos_ = 0;
  int line_ = 1;
  std::map<std::string, int> lines_;
};

} // namespace detail

/// A parsed JSON file that can report errors at the line of any value.
class Document {
public:
  static Document load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    std::stringstream ss;
    ss << in.rdbuf();
    return Document(path.string(), ss.str());
  }

  Document(std::string name, std::string text) : name_(std::move(name)), text_(std::move(text)) {
    if (text_.find_first_not_of(" \t\r\n") == std::string::npos)
      throw ParseError(name_ + ":1: empty file, expected a JSON object");
    try {
      root_ = json::parse(text_);
    } catch (const json::parse_error& e) {
      throw ParseError(name_ + ":" + std::to_string(line_at(e.byte)) + ": " + e.what());
    }
    if (!root_.is_object()) throw ParseError(name_ + ":1: top level must be a JSON object");
    index_ = std::make_shared<detail::LineIndex>(text_);
  }

  const std::string& name() const { return name_; }
  const json& root() const { return root_; }

  [[noreturn]] void fail(const std::string& ptr, const std::string& msg) const {
    int line = index_->line_of(ptr);
    // Missing members are reported at their parent.
    for (std::string p = ptr; line == 0 && !p.empty();) {
      p = p.substr(0, p.rfind('/'));
      line = index_->line_of(p);
    }
    throw ParseError(name_ + ":" + std::to_string(std::max(line, 1)) + ": " +
                     (ptr.empty() ? "/" : ptr) + ": " + msg);
  }

  bool has(const std::string& ptr) const { return root_.contains(json::json_pointer(ptr)); }

  const json& at(const std::string& ptr) const {
    if (!has(ptr)) fail(ptr, "missing required field");
    return root_.at(json::json_pointer(ptr));
  }

  double number(const std::string& ptr) const {
    const json& j = at(ptr);
    if (!j.is_number()) fail(ptr, "expected a number");
    const double x = j.get<double>();
    if (!std::isfinite(x)) fail(ptr, "value is not finite");
    return x;
  }

  std::string string(const std::string& ptr) const {
    const json& j = at(ptr);
    if (!j.is_string()) fail(ptr, "expected a string");
    return j.get<std::string>();
  }

  int integer(const std::string& ptr) const {
    const json& j = at(ptr);
    if (!j.is_number_integer()) fail(ptr, "expected an integer");
    return j.get<int>();
  }

  std::size_t array_size(const std::string& ptr) const {
    const json& j = at(ptr);
    if (!j.is_array()) fail(ptr, "expected an array");
    return j.size();
  }

  /// {"value": x, "unit": u} converted with `scale(u)`; unknown units fail at the unit field.
  template <class Scale> double quantity(const std::string& ptr, Scale scale) const {
    const double x = number(ptr + "/value");
    const std::string u = string(ptr + "/unit");
    const auto k = scale(u);
    if (!k) fail(ptr + "/unit", "unsupported unit '" + u + "'");
    return x * *k;
  }

  template <class Scale> cplx complex_quantity(const std::string& ptr, Scale scale) const {
    const std::string u = string(ptr + "/unit");
    const auto k = scale(u);
    if (!k) fail(ptr + "/unit", "unsupported unit '" + u + "'");
    return cplx(number(ptr + "/re"), number(ptr + "/im")) * *k;
  }

  Eigen::Matrix3d real_matrix(const std::string& ptr) const {
    Eigen::Matrix3d m;
    if (array_size(ptr) != 3) fail(ptr, "expected a 3x3 matrix");
    for (int r = 0; r < 3; ++r) {
      const std::string row = ptr + "/" + std::to_string(r);
      if (array_size(row) != 3) fail(row, "expected 3 columns");
      for (int c = 0; c < 3; ++c) m(r, c) = number(row + "/" + std::to_string(c));
    }
    return m;
  }

private:
  int line_at(std::size_t byte) const {
    const auto end = std::min(byte, text_.size());
    return 1 + static_cast<int>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(end), '\n'));
  }

  std::string name_;
  std::string text_;
  json root_;
  std::shared_ptr<detail::LineIndex> index_;
};

namespace units {

using Opt = std::optional<double>;

inline Opt length_miles(const std::string& u) {
  if (u == "mile") return 1.0;
  if (u == "km") return 1.0 / 1.609344;
  if (u == "kft") return 1000.0 / 5280.0;
  if (u == "ft") return 1.0 / 5280.0;
  if (u == "m") return 1.0 / 1609.344;
  return std::nullopt;
}

inline Opt voltage_kv(const std::string& u) {
  if (u == "kV") return 1.0;
  if (u == "V") return 1e-3;
  return std::nullopt;
}

inline Opt power_mva(const std::string& u) {
  if (u == "MW" || u == "Mvar" || u == "MVA") return 1.0;
  if (u == "kW" || u == "kvar" || u == "kVA") return 1e-3;
  if (u == "W" || u == "var" || u == "VA") return 1e-6;
  return std::nullopt;
}

inline Opt angle_rad(const std::string& u) {
  if (u == "deg") return deg_to_rad(1.0);
  if (u == "rad") return 1.0;
  return std::nullopt;
}

inline Opt per_unit(const std::string& u) { return u == "pu" ? Opt(1.0) : std::nullopt; }

} // namespace units

inline std::string kind_of(const Document& doc) { return doc.string("/kind"); }

inline TransmissionModel load_transmission(const Document& doc) {
  if (kind_of(doc) != "transmission") doc.fail("/kind", "expected kind \"transmission\"");
  TransmissionModel m;
  m.name = doc.string("/name");
  m.base_mva = doc.quantity("/base/power", units::power_mva);
  m.base_kv = doc.quantity("/base/voltage", units::voltage_kv);
  if (!(m.base_mva > 0.0) || !(m.base_kv > 0.0)) doc.fail("/base", "bases must be positive");

  auto power_pu = [&](const std::string& ptr) {
    const std::string u = doc.string(ptr + "/unit");
    if (u == "pu") return doc.number(ptr + "/value");
    return doc.quantity(ptr, units::power_mva) / m.base_mva;
  };

  const std::size_t nb = doc.array_size("/buses");
  for (std::size_t i = 0; i < nb; ++i) {
    const std::string p = "/buses/" + std::to_string(i);
    TxBus b;
    b.id = doc.integer(p + "/id");
    const std::string type = doc.string(p + "/type");
    if (type == "slack") b.type = BusType::Slack;
    else if (type == "pv") b.type = BusType::PV;
    else if (type == "pq") b.type = BusType::PQ;
    else doc.fail(p + "/type", "bus type must be slack, pv or pq");
    if (b.type != BusType::PQ) {
      b.v_set = doc.quantity(p + "/v_set", units::per_unit);
      if (!(b.v_set > 0.0)) doc.fail(p + "/v_set", "voltage setpoint must be positive");
      if (doc.has(p + "/angle")) b.angle = doc.quantity(p + "/angle", units::angle_rad);
      if (b.type == BusType::PV) b.p_gen = power_pu(p + "/p_gen");
      if (doc.has(p + "/generator/z2")) b.gen_z2 = doc.complex_quantity(p + "/generator/z2", units::per_unit);
      if (doc.has(p + "/generator/z0_ground")) {
        if (doc.at(p + "/generator/z0_ground").is_null()) b.gen_z0_ground.reset();
        else b.gen_z0_ground = doc.complex_quantity(p + "/generator/z0_ground", units::per_unit);
      }
      if (std::abs(b.gen_z2) == 0.0) doc.fail(p + "/generator/z2", "generator negative-sequence impedance is zero");
    }
    if (doc.has(p + "/load")) b.load = {power_pu(p + "/load/p"), power_pu(p + "/load/q")};
    if (doc.has(p + "/shunt")) b.shunt = doc.complex_quantity(p + "/shunt", units::per_unit);
    for (const auto& other : m.buses)
      if (other.id == b.id) doc.fail(p + "/id", "duplicate bus id " + std::to_string(b.id));
    m.buses.push_back(b);
  }

  const std::size_t nbr = doc.array_size("/branches");
  for (std::size_t i = 0; i < nbr; ++i) {
    const std::string p = "/branches/" + std::to_string(i);
    TxBranch br;
    br.from = doc.integer(p + "/from");
    br.to = doc.integer(p + "/to");
    br.z1 = doc.complex_quantity(p + "/z1", units::per_unit);
    br.z0 = doc.has(p + "/z0") ? doc.complex_quantity(p + "/z0", units::per_unit) : br.z1;
    if (doc.has(p + "/b1")) br.b1 = doc.quantity(p + "/b1", units::per_unit);
    br.b0 = doc.has(p + "/b0") ? doc.quantity(p + "/b0", units::per_unit) : br.b1;
    if (std::abs(br.z1) == 0.0) doc.fail(p + "/z1", "zero positive-sequence impedance");
    if (std::abs(br.z0) == 0.0) doc.fail(p + "/z0", "zero zero-sequence impedance");
    m.branches.push_back(br);
  }
  try {
    m.validate();
  } catch (const ModelError& e) {
    doc.fail("", e.what());
  }
  return m;
}

inline FeederModel load_feeder(const Document& doc, double base_mva) {
  if (kind_of(doc) != "feeder") doc.fail("/kind", "expected kind \"feeder\"");
  FeederModel f;
  f.name = doc.string("/name");
  if (doc.has("/pcc_bus")) f.pcc_bus = doc.integer("/pcc_bus");
  f.hv_kv = doc.quantity("/voltage/hv", units::voltage_kv);
  f.lv_kv = doc.quantity("/voltage/lv", units::voltage_kv);
  if (!(f.hv_kv > 0.0) || !(f.lv_kv > 0.0)) doc.fail("/voltage", "voltage bases must be positive");

  const double z_base = f.lv_kv * f.lv_kv / base_mva;     // ohm
  const double s_phase = base_mva / 3.0;                  // MVA per phase

  const std::string tp = "/transformer";
  const double rating = doc.quantity(tp + "/rating", units::power_mva);
  if (!(rating > 0.0)) doc.fail(tp + "/rating", "rating must be positive");
  f.transformer.z = doc.complex_quantity(tp + "/z", units::per_unit) * (base_mva / rating);
  const std::string conn = doc.string(tp + "/connection");
  if (conn == "wye-g/wye-g") f.transformer.connection = TransformerConnection::WyeGWyeG;
  else if (conn == "delta/wye-g") f.transformer.connection = TransformerConnection::DeltaWyeG;
  else doc.fail(tp + "/connection", "connection must be \"wye-g/wye-g\" or \"delta/wye-g\"");

  std::map<std::string, std::size_t> node_index;
  const std::size_t nn = doc.array_size("/nodes");
  if (nn == 0) doc.fail("/nodes", "feeder has no nodes");
  for (std::size_t i = 0; i < nn; ++i) {
    const std::string p = "/nodes/" + std::to_string(i);
    FeederNode node;
    node.name = doc.string(p + "/name");
    const std::string ph = doc.has(p + "/phases") ? doc.string(p + "/phases") : "abc";
    node.phases = 0;
    for (char c : ph) {
      if (c < 'a' || c > 'c') doc.fail(p + "/phases", "phases must be drawn from \"abc\"");
      node.phases |= static_cast<std::uint8_t>(1u << (c - 'a'));
    }
    if (node.phases == 0) doc.fail(p + "/phases", "node has no phases");
    if (!node_index.emplace(node.name, i).second) doc.fail(p + "/name", "duplicate node '" + node.name + "'");
    f.nodes.push_back(node);
  }
  auto node_ref = [&](const std::string& ptr) {
    const std::string name = doc.string(ptr);
    auto it = node_index.find(name);
    if (it == node_index.end()) doc.fail(ptr, "unknown node '" + name + "'");
    return it->second;
  };

  // Radiality is checked edge by edge so the error points at the offending line.
  std::vector<std::size_t> root(nn);
  std::iota(root.begin(), root.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (root[x] != x) x = root[x] = root[root[x]];
    return x;
  };

  const std::size_t nl = doc.array_size("/lines");
  for (std::size_t i = 0; i < nl; ++i) {
    const std::string p = "/lines/" + std::to_string(i);
    FeederLine ln;
    ln.from = node_ref(p + "/from");
    ln.to = node_ref(p + "/to");
    if (ln.from == ln.to) doc.fail(p, "line connects node '" + f.nodes[ln.from].name + "' to itself");
    const auto ra = find(ln.from), rb = find(ln.to);
    if (ra == rb)
      doc.fail(p, "feeder '" + f.name + "' is non-radial: line " + f.nodes[ln.from].name + "-" +
                      f.nodes[ln.to].name + " closes a loop");
    root[ra] = rb;

    double length = 1.0;
    if (doc.has(p + "/length")) length = doc.quantity(p + "/length", units::length_miles);
    if (length < 0.0) doc.fail(p + "/length", "negative length");

    const std::string zp = p + "/z";
    const std::string zu = doc.string(zp + "/unit");
    double zscale = 0.0;
    if (zu == "pu") zscale = 1.0;
    else if (zu == "ohm") zscale = 1.0 / z_base;
    else if (zu.rfind("ohm/", 0) == 0) {
      const auto per = units::length_miles(zu.substr(4));
      if (!per) doc.fail(zp + "/unit", "unsupported unit '" + zu + "'");
      if (!doc.has(p + "/length")) doc.fail(p, "impedance per length needs a length");
      zscale = length / *per / z_base;
    } else {
      doc.fail(zp + "/unit", "unsupported unit '" + zu + "'");
    }
    ln.z = (doc.real_matrix(zp + "/re").cast<cplx>() + cplx(0, 1) * doc.real_matrix(zp + "/im").cast<cplx>()) * zscale;
    if (!ln.z.isApprox(ln.z.transpose(), 1e-12)) doc.fail(zp, "series impedance matrix must be symmetric");

    if (doc.has(p + "/y_shunt")) {
      const std::string yp = p + "/y_shunt";
      const std::string yu = doc.string(yp + "/unit");
      double yscale = 0.0;
      auto siemens = [&](const std::string& u) -> std::optional<double> {
        if (u == "S") return 1.0;
        if (u == "uS") return 1e-6;
        return std::nullopt;
      };
      if (yu == "pu") yscale = 1.0;
      else if (auto s = siemens(yu)) yscale = *s * z_base;
      else if (auto slash = yu.find('/'); slash != std::string::npos && siemens(yu.substr(0, slash))) {
        const auto per = units::length_miles(yu.substr(slash + 1));
        if (!per || !doc.has(p + "/length")) doc.fail(yp + "/unit", "unsupported unit '" + yu + "'");
        yscale = *siemens(yu.substr(0, slash)) * length / *per * z_base;
      } else {
        doc.fail(yp + "/unit", "unsupported unit '" + yu + "'");
      }
      ln.y_shunt = (doc.real_matrix(yp + "/re").cast<cplx>() + cplx(0, 1) * doc.real_matrix(yp + "/im").cast<cplx>()) * yscale;
    }
    f.lines.push_back(ln);
  }

  const std::size_t nload = doc.array_size("/loads");
  for (std::size_t i = 0; i < nload; ++i) {
    const std::string p = "/loads/" + std::to_string(i);
    FeederLoad l;
    l.node = node_ref(p + "/node");
    const std::string ph = doc.string(p + "/phase");
    if (ph.size() != 1 || ph[0] < 'a' || ph[0] > 'c') doc.fail(p + "/phase", "phase must be a, b or c");
    l.phase = ph[0] - 'a';
    if (!f.nodes[l.node].has(l.phase))
      doc.fail(p + "/phase", "phase " + ph + " does not exist at node '" + f.nodes[l.node].name + "'");
    auto load_pu = [&](const std::string& q) {
      if (doc.string(q + "/unit") == "pu") return doc.number(q + "/value");
      return doc.quantity(q, units::power_mva) / s_phase;
    };
    l.s = {load_pu(p + "/p"), load_pu(p + "/q")};
    if (doc.has(p + "/allocation")) l.allocation = doc.number(p + "/allocation");
    if (l.allocation < 0.0) doc.fail(p + "/allocation", "allocation factor must be nonnegative");
    f.loads.push_back(l);
  }
  try {
    f.validate();
  } catch (const ModelError& e) {
    doc.fail("", e.what());
  }
  return f;
}

/// Fixture directory: TDCOSIM_DATA if set, otherwise the compiled-in default.
inline fs::path data_dir() {
  if (const char* env = std::getenv("TDCOSIM_DATA"); env && *env) return env;
#ifdef TDCOSIM_DEFAULT_DATA_DIR
  return TDCOSIM_DEFAULT_DATA_DIR;
#else
  return "data";
#endif
}

/// Resolves `p` as given, then relative to `base`, then inside the fixture directory.
inline fs::path resolve_path(const fs::path& p, const fs::path& base = {}) {
  if (p.is_absolute() || fs::exists(p)) return p;
  if (!base.empty() && fs::exists(base / p)) return base / p;
  for (const char* sub : {"", "networks", "feeders", "cases", "scenarios"}) {
    const fs::path c = data_dir() / sub / p;
    if (fs::exists(c)) return c;
  }
  return p;
}

/// Hooks feeders onto their PCC buses. The feeder replaces the aggregated load there.
inline void attach_feeders(TransmissionModel& tx, const std::vector<FeederModel>& feeders) {
  tx.pcc_buses.clear();
  for (const auto& f : feeders) {
    if (std::abs(f.hv_kv - tx.base_kv) > 1e-9 * tx.base_kv) {
      std::ostringstream os;
      os << "base mismatch: feeder '" << f.name << "' high-voltage side is " << f.hv_kv
         << " kV but transmission base is " << tx.base_kv << " kV";
      throw ModelError(os.str());
    }
    auto& bus = tx.buses[tx.index_of(f.pcc_bus)];
    if (bus.type != BusType::PQ)
      throw ModelError("feeder '" + f.name + "' attached to generator bus " + std::to_string(f.pcc_bus));
    for (int id : tx.pcc_buses)
      if (id == f.pcc_bus) throw ModelError("two feeders attached to bus " + std::to_string(id));
    bus.load = 0.0;
    tx.pcc_buses.push_back(f.pcc_bus);
  }
  tx.validate();
}

struct LoadedCase {
  std::string name;
  TransmissionModel tx;
  std::vector<FeederModel> feeders;
};

inline TransmissionModel load_transmission_file(const fs::path& path) {
  return load_transmission(Document::load(resolve_path(path)));
}

/// `file` or `file@bus`; the bus overrides the feeder's own pcc_bus field.
inline FeederModel load_feeder_spec(const std::string& spec, double base_mva, const fs::path& base = {}) {
  const auto at = spec.rfind('@');
  const std::string file = at == std::string::npos ? spec : spec.substr(0, at);
  FeederModel f = load_feeder(Document::load(resolve_path(file, base)), base_mva);
  if (at != std::string::npos) {
    try {
      f.pcc_bus = std::stoi(spec.substr(at + 1));
    } catch (const std::exception&) {
      throw ParseError("bad feeder attachment '" + spec + "', expected file@bus");
    }
  }
  return f;
}

/// Case file: {"kind": "case", "network": file, "feeders": [{"file": f, "pcc_bus": n}, ...]}.
inline LoadedCase load_models(const fs::path& path) {
  const fs::path resolved = resolve_path(path);
  const Document doc = Document::load(resolved);
  if (kind_of(doc) != "case") doc.fail("/kind", "expected kind \"case\"");
  const fs::path dir = resolved.parent_path();
  LoadedCase c;
  c.name = doc.string("/name");
  c.tx = load_transmission(Document::load(resolve_path(doc.string("/network"), dir)));
  const std::size_t nf = doc.array_size("/feeders");
  for (std::size_t i = 0; i < nf; ++i) {
    const std::string p = "/feeders/" + std::to_string(i);
    FeederModel f = load_feeder(Document::load(resolve_path(doc.string(p + "/file"), dir)), c.tx.base_mva);
    if (doc.has(p + "/pcc_bus")) f.pcc_bus = doc.integer(p + "/pcc_bus");
    if (doc.has(p + "/name")) f.name = doc.string(p + "/name");
    c.feeders.push_back(std::move(f));
  }
  try {
    attach_feeders(c.tx, c.feeders);
  } catch (const ModelError& e) {
    doc.fail("/feeders", e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw ParseError("CSV has no column '" + name + "'");
  }
  double number(std::size_t row, const std::string& col) const {
    const std::string& cell = rows.at(row).at(column(col));
    char* end = nullptr;
    const double x = std::strtod(cell.c_str(), &end);
    if (end == cell.c_str() || *end != '\0')
      throw ParseError("CSV row " + std::to_string(row + 2) + ", column '" + col + "': not a number: '" + cell + "'");
    return x;
  }
};

/// 17 significant digits so values survive a write/read round trip.
inline std::string fmt_num(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

class CsvWriter {
public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << quote(cells[i]);
    }
    out_ << '\n';
  }

private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  }
  std::ostream& out_;
};

inline CsvTable read_csv(std::istream& in, const std::string& name = "<csv>") {
  CsvTable t;
  std::string line;
  int lineno = 0;
  auto split = [&](const std::string& s) {
    std::vector<std::string> cells;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const char c = s[i];
      if (quoted) {
        if (c == '"' && i + 1 < s.size() && s[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (c == '"') {
          quoted = false;
        } else {
          cur += c;
        }
      } else if (c == '"') {
        quoted = true;
      } else if (c == ',') {
        cells.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    if (quoted) throw ParseError(name + ":" + std::to_string(lineno) + ": unterminated quote");
    cells.push_back(cur);
    return cells;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (t.header.empty()) {
      t.header = std::move(cells);
    } else {
      if (cells.size() != t.header.size())
        throw ParseError(name + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.header.size()) +
                         " cells, found " + std::to_string(cells.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (t.header.empty()) throw ParseError(name + ": empty CSV");
  return t;
}

inline CsvTable read_csv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  return read_csv(in, path.string());
}

/// Scenario file: {"kind": "scenario", "steps": [{"label", "multiplier", "allocation"}],
/// "unbalance_targets": [...]}. "allocation" is one [a, b, c] triple for every feeder or a
/// list of triples, one per feeder.
inline Scenario load_scenario(const Document& doc) {
  if (kind_of(doc) != "scenario") doc.fail("/kind", "expected kind \"scenario\"");
  Scenario sc;
  sc.name = doc.string("/name");
  const std::size_t n = doc.array_size("/steps");
  if (n == 0) doc.fail("/steps", "scenario has no steps");
  auto triple = [&](const std::string& ptr) {
    if (doc.array_size(ptr) != 3) doc.fail(ptr, "expected [a, b, c] allocation factors");
    std::array<double, 3> a{};
    for (int i = 0; i < 3; ++i) {
      a[static_cast<std::size_t>(i)] = doc.number(ptr + "/" + std::to_string(i));
      if (a[static_cast<std::size_t>(i)] < 0.0) doc.fail(ptr + "/" + std::to_string(i), "allocation factor must be nonnegative");
    }
    return a;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const std::string p = "/steps/" + std::to_string(i);
    ScenarioStep st;
    st.label = doc.has(p + "/label") ? doc.string(p + "/label") : "t" + std::to_string(i + 1);
    st.multiplier = doc.has(p + "/multiplier") ? doc.number(p + "/multiplier") : 1.0;
    if (!(st.multiplier > 0.0)) doc.fail(p + "/multiplier", "multiplier must be positive");
    if (doc.has(p + "/allocation")) {
      const std::string ap = p + "/allocation";
      const json& a = doc.at(ap);
      if (!a.is_array() || a.empty()) doc.fail(ap, "expected an allocation triple or a list of triples");
      if (a[0].is_array()) {
        for (std::size_t k = 0; k < a.size(); ++k) st.allocation.push_back(triple(ap + "/" + std::to_string(k)));
      } else {
        st.allocation.push_back(triple(ap));
      }
    }
    sc.steps.push_back(std::move(st));
  }
  if (doc.has("/unbalance_targets")) {
    const std::size_t m = doc.array_size("/unbalance_targets");
    for (std::size_t i = 0; i < m; ++i) {
      const std::string p = "/unbalance_targets/" + std::to_string(i);
      const double x = doc.number(p);
      if (x < 0.0) doc.fail(p, "unbalance target must be nonnegative");
      sc.unbalance_targets.push_back(x);
    }
  }
  return sc;
}

inline Scenario load_scenario_file(const fs::path& path) { return load_scenario(Document::load(resolve_path(path))); }

/// Trace CSV: one row per (t, n) with every PCC's boundary quantities in the phase frame.
inline void write_trace_csv(std::ostream& out, const std::vector<const ConvergenceTrace*>& traces,
                            std::size_t n_pcc) {
  CsvWriter w(out);
  std::vector<std::string> header{"t", "n"};
  const char* ph = "abc";
  for (std::size_t k = 0; k < n_pcc; ++k)
    for (const char* q : {"S_T", "V_D", "S_D", "V_T"})
      for (int p = 0; p < 3; ++p)
        for (const char* part : {"re", "im"})
          header.push_back("pcc" + std::to_string(k + 1) + "_" + q + "_" + ph[p] + "_" + part);
  header.push_back("norm");
  header.push_back("elapsed_ms");
  w.row(header);
  for (const auto* tr : traces)
    for (const auto& rec : tr->records) {
      std::vector<std::string> row{std::to_string(rec.t), std::to_string(rec.n)};
      for (const auto& b : rec.pcc) {
        const ComplexTriple vt = sequence_to_phase(b.v_t);
        for (const ComplexTriple* x : {&b.s_t, &b.v_d, &b.s_d, &vt})
          for (std::size_t p = 0; p < 3; ++p) {
            row.push_back(fmt_num((*x)[p].real()));
            row.push_back(fmt_num((*x)[p].imag()));
          }
      }
      row.push_back(fmt_num(rec.norm));
      row.push_back(fmt_num(rec.elapsed_ms));
      w.row(row);
    }
}

} // namespace tdcosim
