#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hetmpc/parties.hpp"
#include "hetmpc/ring.hpp"

namespace hetmpc {

struct ParseError : std::runtime_error {
  ParseError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what) {}
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

enum class GateOp : u8 { Input, Add, Mul, ConstAdd, ConstMul, Output };

// Output gates sent to every computing party.
constexpr u8 kOutputAll = 0xFF;

// Single static assignment: gate id == the wire it defines. Output gates
// define no wire; they mark which parties learn wire `a`.
struct Gate {
  GateOp op;
  u32 a = 0;
  u32 b = 0;
  u64 cval = 0;                  // constant operand of cadd/cmul
  PartyId owner = PartyId::P1;   // input gates: who supplies the value
  u8 recipients = 0;             // output gates: party bitmask, or kOutputAll
  std::string name;              // input/output label
  u32 layer = 0;
  u32 mul_index = 0;             // dense index over mul gates, layer-major
};

struct Circuit {
  int k = 64;
  std::vector<Gate> gates;
  std::vector<std::vector<u32>> layers;  // gate ids per layer
  std::vector<u32> inputs;               // input gate ids, declaration order
  std::vector<u32> outputs;              // output gate ids, declaration order
  u32 mul_count = 0;
  u32 depth = 0;  // number of multiplication layers

  const Gate& gate(u32 id) const { return gates[id]; }

  // Computes layers, depth and per-mul indices. A multiplication sits one
  // layer below the deepest of its operands; everything else is free and
  // stays on its operands' layer.
  void finalize() {
    inputs.clear();
    outputs.clear();
    mul_count = 0;
    depth = 0;
    for (u32 id = 0; id < gates.size(); ++id) {
      Gate& g = gates[id];
      switch (g.op) {
        case GateOp::Input:
          g.layer = 0;
          inputs.push_back(id);
          break;
        case GateOp::Add:
        case GateOp::Mul:
          g.layer = std::max(gates[g.a].layer, gates[g.b].layer) + (g.op == GateOp::Mul ? 1 : 0);
          break;
        case GateOp::ConstAdd:
        case GateOp::ConstMul:
          g.layer = gates[g.a].layer;
          break;
        case GateOp::Output:
          g.layer = gates[g.a].layer;
          outputs.push_back(id);
          break;
      }
      depth = std::max(depth, g.layer);
    }
    layers.assign(depth + 1, {});
    for (u32 id = 0; id < gates.size(); ++id) layers[gates[id].layer].push_back(id);
    for (auto& layer : layers)
      for (u32 id : layer)
        if (gates[id].op == GateOp::Mul) gates[id].mul_index = mul_count++;
  }
};

// Plain evaluation, the oracle everything else is judged against. Inputs
// are aligned with circuit.inputs, the result with circuit.outputs.
inline std::vector<u64> evaluate_cleartext(const Circuit& c, const std::vector<u64>& in) {
  if (in.size() != c.inputs.size()) throw UsageError("input count mismatch");
  const u64 mask = width_mask(c.k);
  std::vector<u64> w(c.gates.size(), 0);
  size_t next_in = 0;
  std::vector<u64> out;
  for (u32 id = 0; id < c.gates.size(); ++id) {
    const Gate& g = c.gates[id];
    switch (g.op) {
      case GateOp::Input: w[id] = in[next_in++] & mask; break;
      case GateOp::Add: w[id] = (w[g.a] + w[g.b]) & mask; break;
      case GateOp::Mul: w[id] = (w[g.a] * w[g.b]) & mask; break;
      case GateOp::ConstAdd: w[id] = (w[g.a] + g.cval) & mask; break;
      case GateOp::ConstMul: w[id] = (w[g.a] * g.cval) & mask; break;
      case GateOp::Output: out.push_back(w[g.a]); break;
    }
  }
  return out;
}

namespace detail {

inline PartyId parse_party(const std::string& tok, int line) {
  if (tok == "P1") return PartyId::P1;
  if (tok == "P2") return PartyId::P2;
  if (tok == "P3") return PartyId::P3;
  if (tok == "P4") return PartyId::P4;
  if (tok == "O") return PartyId::Outsider;
  throw ParseError("unknown party '" + tok + "'", line);
}

inline u64 parse_const(const std::string& tok, int line) {
  try {
    size_t pos = 0;
    bool neg = !tok.empty() && tok[0] == '-';
    u64 v = std::stoull(neg ? tok.substr(1) : tok, &pos, 0);
    if (pos != tok.size() - (neg ? 1 : 0)) throw ParseError("bad constant '" + tok + "'", line);
    return neg ? ~v + 1 : v;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception&) {
    throw ParseError("bad constant '" + tok + "'", line);
  }
}

}  // namespace detail

// Text format, one statement per line (';' also separates statements):
//   ring <k>                 optional, first statement only, default 64
//   in <name> <party>
//   add|mul <out> <a> <b>
//   cadd|cmul <out> <a> <const>
//   out <name> <ALL|P1,P3,...>
// '#' starts a comment. Referencing an undefined name or redefining one is
// an error.
inline Circuit parse_circuit(std::istream& is) {
  Circuit c;
  std::map<std::string, u32> wires;
  int line_no = 0;
  bool first_stmt = true;
  std::string raw;

  auto wire = [&](const std::string& name) -> u32 {
    auto it = wires.find(name);
    if (it == wires.end()) throw ParseError("undefined wire '" + name + "'", line_no);
    return it->second;
  };
  auto define = [&](const std::string& name) {
    if (wires.count(name)) throw ParseError("wire '" + name + "' redefined", line_no);
    wires[name] = static_cast<u32>(c.gates.size());
  };

  while (std::getline(is, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::replace(raw.begin(), raw.end(), ';', '\n');
    std::istringstream stmts(raw);
    std::string stmt;
    while (std::getline(stmts, stmt)) {
      std::istringstream ss(stmt);
      std::string op;
      if (!(ss >> op)) continue;

      std::string t1, t2, t3;
      if (op == "ring") {
        if (!first_stmt) throw ParseError("'ring' must be the first statement", line_no);
        int k;
        if (!(ss >> k) || !valid_width(k)) throw ParseError("bad ring width", line_no);
        c.k = k;
      } else if (op == "in") {
        if (!(ss >> t1 >> t2)) throw ParseError("usage: in <name> <party>", line_no);
        define(t1);
        Gate g;
        g.op = GateOp::Input;
        g.owner = detail::parse_party(t2, line_no);
        g.name = t1;
        c.gates.push_back(g);
      } else if (op == "add" || op == "mul") {
        if (!(ss >> t1 >> t2 >> t3)) throw ParseError("usage: " + op + " <out> <a> <b>", line_no);
        Gate g;
        g.op = op == "add" ? GateOp::Add : GateOp::Mul;
        g.a = wire(t2);
        g.b = wire(t3);
        define(t1);
        c.gates.push_back(g);
      } else if (op == "cadd" || op == "cmul") {
        if (!(ss >> t1 >> t2 >> t3))
          throw ParseError("usage: " + op + " <out> <a> <const>", line_no);
        Gate g;
        g.op = op == "cadd" ? GateOp::ConstAdd : GateOp::ConstMul;
        g.a = wire(t2);
        g.cval = detail::parse_const(t3, line_no) & width_mask(c.k);
        define(t1);
        c.gates.push_back(g);
      } else if (op == "out") {
        if (!(ss >> t1 >> t2)) throw ParseError("usage: out <name> <recipients>", line_no);
        Gate g;
        g.op = GateOp::Output;
        g.a = wire(t1);
        g.name = t1;
        if (t2 == "ALL") {
          g.recipients = kOutputAll;
        } else {
          std::istringstream rs(t2);
          std::string tok;
          while (std::getline(rs, tok, ',')) {
            PartyId p = detail::parse_party(tok, line_no);
            if (p == PartyId::Outsider) throw ParseError("outsider cannot receive outputs", line_no);
            g.recipients = static_cast<u8>(g.recipients | (1u << party_index(p)));
          }
          if (!g.recipients) throw ParseError("empty recipient list", line_no);
        }
        c.gates.push_back(g);
      } else {
        throw ParseError("unknown statement '" + op + "'", line_no);
      }

      std::string extra;
      if (ss >> extra) throw ParseError("trailing token '" + extra + "'", line_no);
      first_stmt = false;
    }
  }
  if (c.gates.empty()) throw ParseError("empty circuit");
  c.finalize();
  return c;
}

inline Circuit parse_circuit(const std::string& text) {
  std::istringstream is(text);
  return parse_circuit(is);
}

// Boolean circuits in the classic Bristol layout: a header with gate and
// wire counts, a line with the two input lengths and the output length,
// then one gate per line (`2 1 a b out XOR|AND` or `1 1 a out INV`).
// Always width 1; first input block belongs to P1, second to P2, and the
// last output wires go to everyone. INV becomes x+1 over Z_2.
inline Circuit parse_bristol(std::istream& is) {
  Circuit c;
  c.k = 1;
  u64 ngates = 0, nwires = 0, n1 = 0, n2 = 0, nout = 0;
  if (!(is >> ngates >> nwires >> n1 >> n2 >> nout)) throw ParseError("bad header");
  if (n1 + n2 + ngates != nwires) throw ParseError("wire count does not match gates plus inputs");

  // Bristol wire number -> our gate id.
  std::vector<u32> id_of(nwires, UINT32_MAX);
  for (u64 i = 0; i < n1 + n2; ++i) {
    Gate g;
    g.op = GateOp::Input;
    g.owner = i < n1 ? PartyId::P1 : PartyId::P2;
    g.name = "w" + std::to_string(i);
    id_of[i] = static_cast<u32>(c.gates.size());
    c.gates.push_back(g);
  }

  auto in_wire = [&](u64 w) -> u32 {
    if (w >= nwires || id_of[w] == UINT32_MAX)
      throw ParseError("wire " + std::to_string(w) + " used before assignment");
    return id_of[w];
  };

  for (u64 i = 0; i < ngates; ++i) {
    u64 nin = 0, no = 0;
    std::string kind;
    if (!(is >> nin >> no)) throw ParseError("truncated gate list");
    if (no != 1) throw ParseError("unsupported fan-out");
    u64 a = 0, b = 0, out = 0;
    if (nin == 2) {
      if (!(is >> a >> b >> out >> kind)) throw ParseError("truncated gate");
    } else if (nin == 1) {
      if (!(is >> a >> out >> kind)) throw ParseError("truncated gate");
    } else {
      throw ParseError("unsupported fan-in");
    }
    if (out >= nwires) throw ParseError("output wire out of range");
    if (id_of[out] != UINT32_MAX) throw ParseError("wire " + std::to_string(out) + " reassigned");

    Gate g;
    if (kind == "XOR" || kind == "AND") {
      g.op = kind == "XOR" ? GateOp::Add : GateOp::Mul;
      g.a = in_wire(a);
      g.b = in_wire(b);
    } else if (kind == "INV" || kind == "NOT") {
      g.op = GateOp::ConstAdd;
      g.a = in_wire(a);
      g.cval = 1;
    } else {
      throw ParseError("unknown gate kind '" + kind + "'");
    }
    id_of[out] = static_cast<u32>(c.gates.size());
    c.gates.push_back(g);
  }

  for (u64 w = nwires - nout; w < nwires; ++w) {
    Gate g;
    g.op = GateOp::Output;
    g.a = in_wire(w);
    g.recipients = kOutputAll;
    g.name = "w" + std::to_string(w);
    c.gates.push_back(g);
  }
  c.finalize();
  return c;
}

// Seeded random circuits for differential testing: a few inputs spread over
// the given owners, a body of arithmetic gates with the multiplication
// depth capped, and every output revealed to all parties.
struct RandomCircuitSpec {
  u64 seed = 1;
  u32 body_gates = 64;
  u32 max_depth = 30;
  int k = 64;
  std::vector<PartyId> owners = {PartyId::P1, PartyId::P2, PartyId::P3};
};

inline Circuit random_circuit(const RandomCircuitSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  Circuit c;
  c.k = spec.k;

  const u32 n_in = 2 + static_cast<u32>(rng() % 7);
  for (u32 i = 0; i < n_in; ++i) {
    Gate g;
    g.op = GateOp::Input;
    g.owner = spec.owners[rng() % spec.owners.size()];
    g.name = "in" + std::to_string(i);
    c.gates.push_back(g);
  }

  std::vector<u32> wire_depth(n_in, 0);
  auto pick = [&] { return static_cast<u32>(rng() % c.gates.size()); };
  for (u32 i = 0; i < spec.body_gates; ++i) {
    Gate g;
    u32 a = pick(), b = pick();
    switch (rng() % 5) {
      case 0:
      case 1: g.op = GateOp::Add; break;
      case 2: g.op = GateOp::ConstAdd; break;
      case 3: g.op = GateOp::ConstMul; break;
      default: g.op = GateOp::Mul; break;
    }
    if (g.op == GateOp::Mul &&
        std::max(wire_depth[a], wire_depth[b]) >= spec.max_depth)
      g.op = GateOp::Add;  // keep the circuit inside the depth budget
    g.a = a;
    g.b = b;
    if (g.op == GateOp::ConstAdd || g.op == GateOp::ConstMul)
      g.cval = rng() & width_mask(spec.k);
    u32 d = std::max(wire_depth[a], g.op == GateOp::ConstAdd || g.op == GateOp::ConstMul
                                        ? 0u
                                        : wire_depth[b]);
    wire_depth.push_back(d + (g.op == GateOp::Mul ? 1 : 0));
    c.gates.push_back(g);
  }

  const u32 body_end = static_cast<u32>(c.gates.size());
  const u32 n_out = 1 + static_cast<u32>(rng() % 4);
  for (u32 i = 0; i < n_out; ++i) {
    Gate g;
    g.op = GateOp::Output;
    g.a = body_end - 1 - static_cast<u32>(rng() % spec.body_gates);
    g.recipients = kOutputAll;
    g.name = "out" + std::to_string(i);
    c.gates.push_back(g);
  }
  c.finalize();
  return c;
}

}  // namespace hetmpc
