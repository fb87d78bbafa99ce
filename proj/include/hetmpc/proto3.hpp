#pragma once

#include "hetmpc/circuit.hpp"
#include "hetmpc/rand.hpp"
#include "hetmpc/transport.hpp"

namespace hetmpc {

namespace kset {
constexpr Keyset p12 = keyset_of({PartyId::P1, PartyId::P2});
constexpr Keyset p13 = keyset_of({PartyId::P1, PartyId::P3});
constexpr Keyset op1 = keyset_of({PartyId::Outsider, PartyId::P1});
}  // namespace kset

// Semi-honest three-party evaluation. Per wire v the state is
//   P1: (x2, x3)   P2: (x2, a3 = v + x3)   P3: (a2 = v + x2)
// so P1 works entirely from shared tapes ahead of the online phase, and the
// online phase is a two-message ping-pong between P2 and P3 per layer.
//
// Multiplication of wires a (value alpha, masks x2,x3) and b (y2,y3), with
// output masks (z2, z3) and pad r12 from the P1/P2 tape:
//   offline P1 -> P3:  m1 = x3*y3 - x1*y1 + r12          (x1 = x2 - x3)
//   online  P2 -> P3:  m2 = t2 - z2,  t2 = a3*y2 + b3*x2 + r12
//   online  P3 -> P2:  m3 = t3 + z3,  t3 = a2*b2 + m1
// then P2 keeps a3(out) = m3 - t2 = alpha*beta + z3 and P3 keeps
// a2(out) = t3 - m2 = alpha*beta + z2.
class Engine3 {
 public:
  Engine3(const Circuit& c, Transport& net, RandomnessProvider& rng, u32 instance = 0)
      : c_(c), net_(net), rng_(rng), inst_(instance), me_(net.me()), k_(c.k) {
    if (me_ == PartyId::P4) throw UsageError("P4 has no role in the three-party protocol");
    for (u32 id : c_.inputs)
      if (c_.gate(id).owner == PartyId::P4)
        throw UsageError("circuit assigns inputs to P4; use the four-party protocol");
    for (u32 id : c_.outputs) {
      u8 r = c_.gate(id).recipients;
      if (r != kOutputAll && (r & ~u8{0b0111}))
        throw UsageError("output recipient outside {P1,P2,P3}");
    }
    const RingElement zero(0, k_);
    x2_.assign(c_.gates.size(), zero);
    x3_.assign(c_.gates.size(), zero);
    a2_.assign(c_.gates.size(), zero);
    a3_.assign(c_.gates.size(), zero);
    m1_.assign(c_.gates.size(), zero);
    muls_by_layer_.resize(c_.depth + 1);
    for (const auto& layer : c_.layers)
      for (u32 id : layer)
        if (c_.gate(id).op == GateOp::Mul) muls_by_layer_[c_.gate(id).layer].push_back(id);
  }

  // Local multiplications, tagged by phase; the protocol work budget.
  MulMeter meter;

  std::map<u32, u64> run(const std::map<u32, u64>& my_inputs) {
    check_inputs(my_inputs);
    meter.phase = MulPhase::Offline;
    offline(my_inputs);
    meter.phase = MulPhase::Online;
    share_inputs(my_inputs);
    online();
    return open_outputs();
  }

 private:
  RingElement tape(Keyset ks, u32 purp, u32 gate) {
    return rng_.draw(ks, purp, gate, inst_, k_);
  }

  bool is_p1() const { return me_ == PartyId::P1; }
  bool is_p2() const { return me_ == PartyId::P2; }
  bool is_p3() const { return me_ == PartyId::P3; }

  void check_inputs(const std::map<u32, u64>& in) const {
    for (u32 id : c_.inputs)
      if (c_.gate(id).owner == me_ && !in.count(id))
        throw UsageError("missing value for input '" + c_.gate(id).name + "'");
  }

  std::vector<RingElement> expect_elems(PartyId from, MsgType type, u32 step, size_t count) {
    Message m = net_.recv_expect(from, type, step);
    size_t want = k_ == 1 ? (count + 7) / 8 : count * element_bytes(k_);
    if (m.payload.size() != want)
      throw ProtocolAbort("batch size mismatch from " + party_name(from));
    return decode_elements(m.payload, k_, count);
  }

  std::vector<u32> inputs_of(PartyId owner) const {
    std::vector<u32> ids;
    for (u32 id : c_.inputs)
      if (c_.gate(id).owner == owner) ids.push_back(id);
    return ids;
  }

  // Mask propagation. P1 ends up with (x2, x3) of every wire, P2 with x2;
  // the only communication is P1 forwarding the outsider's x2 components
  // to P2 and the per-gate cross terms m1 to P3.
  void offline(const std::map<u32, u64>& my_inputs) {
    for (u32 id : c_.inputs) {
      switch (c_.gate(id).owner) {
        case PartyId::P1:
          if (is_p1() || is_p2()) x2_[id] = tape(kset::p12, purpose::MaskX2, id);
          // P1 pins x3 = -v so that P2's a3 is zero and needs no message.
          if (is_p1()) x3_[id] = -RingElement(my_inputs.at(id), k_);
          break;
        case PartyId::P2:  // x3 = 0 by construction
          if (is_p1() || is_p2()) x2_[id] = tape(kset::p12, purpose::MaskX2, id);
          break;
        case PartyId::P3:  // x2 = 0 by construction
          if (is_p1()) x3_[id] = tape(kset::p13, purpose::MaskX3, id);
          break;
        case PartyId::Outsider:
          if (is_p1()) {
            x2_[id] = tape(kset::op1, purpose::MaskX2, id);
            x3_[id] = tape(kset::op1, purpose::MaskX3, id);
          }
          break;
        default: break;
      }
    }

    // P2 needs the outsider x2 components before deriving anything from
    // them, so this transfer comes right after the input masks.
    auto outsider_ids = inputs_of(PartyId::Outsider);
    if (!outsider_ids.empty()) {
      if (is_p1()) {
        std::vector<RingElement> xfer;
        for (u32 id : outsider_ids) xfer.push_back(x2_[id]);
        net_.send(make_element_msg(me_, PartyId::P2, Phase::Offline, MsgType::ShareMask, 0, xfer,
                                   k_, outsider_ids));
      } else if (is_p2()) {
        auto xfer = expect_elems(PartyId::P1, MsgType::ShareMask, 0, outsider_ids.size());
        for (size_t i = 0; i < outsider_ids.size(); ++i) x2_[outsider_ids[i]] = xfer[i];
      }
    }

    for (u32 id = 0; id < c_.gates.size(); ++id) {
      const Gate& g = c_.gates[id];
      switch (g.op) {
        case GateOp::Add:
          if (is_p1() || is_p2()) x2_[id] = x2_[g.a] + x2_[g.b];
          if (is_p1()) x3_[id] = x3_[g.a] + x3_[g.b];
          break;
        case GateOp::ConstAdd:  // masks ride along unchanged
          if (is_p1() || is_p2()) x2_[id] = x2_[g.a];
          if (is_p1()) x3_[id] = x3_[g.a];
          break;
        case GateOp::ConstMul: {
          const RingElement cv(g.cval, k_);
          if (is_p1() || is_p2()) x2_[id] = meter.mul(cv, x2_[g.a]);
          if (is_p1()) x3_[id] = meter.mul(cv, x3_[g.a]);
          break;
        }
        case GateOp::Mul:
          // Fresh output masks; they double as the z pads of the exchange.
          if (is_p1() || is_p2()) x2_[id] = tape(kset::p12, purpose::MaskX2, id);
          if (is_p1()) x3_[id] = tape(kset::p13, purpose::MaskX3, id);
          break;
        default: break;
      }
    }

    // All masks are in place; the per-gate cross terms go out layer-major,
    // the order the receiver consumes them in.
    std::vector<RingElement> m1_batch;
    std::vector<u32> m1_gates;
    if (is_p1()) {
      for (const auto& layer : muls_by_layer_) {
        for (u32 id : layer) {
          const Gate& g = c_.gate(id);
          RingElement x1 = x2_[g.a] - x3_[g.a];
          RingElement y1 = x2_[g.b] - x3_[g.b];
          m1_batch.push_back(meter.mul(x3_[g.a], x3_[g.b]) - meter.mul(x1, y1) +
                             tape(kset::p12, purpose::MulPad, id));
          m1_gates.push_back(id);
        }
      }
    }

    if (c_.mul_count > 0) {
      if (is_p1()) {
        net_.send(make_element_msg(me_, PartyId::P3, Phase::Offline, MsgType::MulOffM1, 0,
                                   m1_batch, k_, m1_gates));
      } else if (is_p3()) {
        std::vector<u32> gates;
        for (const auto& layer : muls_by_layer_)
          gates.insert(gates.end(), layer.begin(), layer.end());
        auto batch = expect_elems(PartyId::P1, MsgType::MulOffM1, 0, gates.size());
        for (size_t i = 0; i < gates.size(); ++i) m1_[gates[i]] = batch[i];
      }
    }
  }

  void share_inputs(const std::map<u32, u64>& my_inputs) {
    auto send_masked = [&](PartyId to, const std::vector<u32>& ids, bool second_component) {
      if (ids.empty()) return;
      std::vector<RingElement> batch;
      for (u32 id : ids) {
        RingElement v(my_inputs.at(id), k_);
        RingElement mask = me_ == PartyId::Outsider
                               ? tape(kset::op1, second_component ? purpose::MaskX3 : purpose::MaskX2, id)
                               : (second_component ? tape(kset::p13, purpose::MaskX3, id) : x2_[id]);
        batch.push_back(v + mask);
      }
      net_.send(make_element_msg(me_, to, Phase::Online, MsgType::Share, 0, batch, k_, ids));
    };

    auto mine = inputs_of(me_);
    switch (me_) {
      case PartyId::P1: send_masked(PartyId::P3, mine, false); break;  // a2
      case PartyId::P2:
        send_masked(PartyId::P3, mine, false);                   // a2
        for (u32 id : mine) a3_[id] = RingElement(my_inputs.at(id), k_);  // x3 = 0
        break;
      case PartyId::P3:
        send_masked(PartyId::P2, mine, true);                    // a3
        for (u32 id : mine) a2_[id] = RingElement(my_inputs.at(id), k_);  // x2 = 0
        break;
      case PartyId::Outsider:
        send_masked(PartyId::P2, mine, true);   // a3
        send_masked(PartyId::P3, mine, false);  // a2
        break;
      default: break;
    }

    if (is_p2()) {
      for (u32 id : inputs_of(PartyId::P1)) a3_[id] = RingElement(0, k_);
      for (PartyId from : {PartyId::P3, PartyId::Outsider}) {
        auto ids = inputs_of(from);
        if (ids.empty()) continue;
        auto batch = expect_elems(from, MsgType::Share, 0, ids.size());
        for (size_t i = 0; i < ids.size(); ++i) a3_[ids[i]] = batch[i];
      }
    }
    if (is_p3()) {
      for (PartyId from : {PartyId::P1, PartyId::P2, PartyId::Outsider}) {
        auto ids = inputs_of(from);
        if (ids.empty()) continue;
        auto batch = expect_elems(from, MsgType::Share, 0, ids.size());
        for (size_t i = 0; i < ids.size(); ++i) a2_[ids[i]] = batch[i];
      }
    }
  }

  void online() {
    if (me_ == PartyId::Outsider) return;
    for (u32 layer = 0; layer <= c_.depth; ++layer) {
      const auto& muls = muls_by_layer_[layer];
      if (!muls.empty() && is_p2()) {
        std::vector<RingElement> t2s, m2s;
        for (u32 id : muls) {
          const Gate& g = c_.gate(id);
          RingElement t2 = meter.mul(a3_[g.a], x2_[g.b]) + meter.mul(a3_[g.b], x2_[g.a]) +
                           tape(kset::p12, purpose::MulPad, id);
          t2s.push_back(t2);
          m2s.push_back(t2 - x2_[id]);
        }
        net_.send(make_element_msg(me_, PartyId::P3, Phase::Online, MsgType::MulOnM2, layer, m2s,
                                   k_, muls));
        auto m3s = expect_elems(PartyId::P3, MsgType::MulOnM3, layer, muls.size());
        for (size_t i = 0; i < muls.size(); ++i) a3_[muls[i]] = m3s[i] - t2s[i];
      }
      if (!muls.empty() && is_p3()) {
        std::vector<RingElement> t3s, m3s;
        for (u32 id : muls) {
          const Gate& g = c_.gate(id);
          RingElement t3 = meter.mul(a2_[g.a], a2_[g.b]) + m1_[id];
          t3s.push_back(t3);
          m3s.push_back(t3 + tape(kset::p13, purpose::MaskX3, id));
        }
        net_.send(make_element_msg(me_, PartyId::P2, Phase::Online, MsgType::MulOnM3, layer, m3s,
                                   k_, muls));
        auto m2s = expect_elems(PartyId::P2, MsgType::MulOnM2, layer, muls.size());
        for (size_t i = 0; i < muls.size(); ++i) a2_[muls[i]] = t3s[i] - m2s[i];
      }

      for (u32 id : c_.layers[layer]) {
        const Gate& g = c_.gate(id);
        switch (g.op) {
          case GateOp::Add:
            if (is_p2()) a3_[id] = a3_[g.a] + a3_[g.b];
            if (is_p3()) a2_[id] = a2_[g.a] + a2_[g.b];
            break;
          case GateOp::ConstAdd:
            if (is_p2()) a3_[id] = a3_[g.a] + RingElement(g.cval, k_);
            if (is_p3()) a2_[id] = a2_[g.a] + RingElement(g.cval, k_);
            break;
          case GateOp::ConstMul:
            if (is_p2()) a3_[id] = meter.mul(RingElement(g.cval, k_), a3_[g.a]);
            if (is_p3()) a2_[id] = meter.mul(RingElement(g.cval, k_), a2_[g.a]);
            break;
          default: break;
        }
      }
    }
  }

  // P3 pushes the masked value to each recipient; P1 supplies x2 where the
  // recipient lacks it. P2 already owns a copy of x2 and uses the received
  // one only as a cross-check.
  std::map<u32, u64> open_outputs() {
    std::map<u32, u64> result;
    if (me_ == PartyId::Outsider) return result;
    const u32 step = c_.depth + 1;

    auto outputs_to = [&](PartyId p) {
      std::vector<u32> ids;
      for (u32 id : c_.outputs) {
        u8 r = c_.gate(id).recipients;
        if (r == kOutputAll || (r & (1u << party_index(p)))) ids.push_back(id);
      }
      return ids;
    };
    auto wires = [&](const std::vector<u32>& out_ids) {
      std::vector<u32> ws;
      for (u32 id : out_ids) ws.push_back(c_.gate(id).a);
      return ws;
    };

    auto to_p1 = outputs_to(PartyId::P1), to_p2 = outputs_to(PartyId::P2),
         to_p3 = outputs_to(PartyId::P3);

    if (is_p3()) {
      for (auto& [to, ids] : {std::pair{PartyId::P1, to_p1}, {PartyId::P2, to_p2}}) {
        if (ids.empty()) continue;
        std::vector<RingElement> batch;
        for (u32 w : wires(ids)) batch.push_back(a2_[w]);
        net_.send(make_element_msg(me_, to, Phase::Online, MsgType::OpenMask, step, batch, k_,
                                   wires(ids)));
      }
    }
    if (is_p1()) {
      for (auto& [to, ids] : {std::pair{PartyId::P2, to_p2}, {PartyId::P3, to_p3}}) {
        if (ids.empty()) continue;
        std::vector<RingElement> batch;
        for (u32 w : wires(ids)) batch.push_back(x2_[w]);
        net_.send(make_element_msg(me_, to, Phase::Online, MsgType::OpenMask, step, batch, k_,
                                   wires(ids)));
      }
    }

    if (is_p1() && !to_p1.empty()) {
      auto a2s = expect_elems(PartyId::P3, MsgType::OpenMask, step, to_p1.size());
      for (size_t i = 0; i < to_p1.size(); ++i)
        result[to_p1[i]] = (a2s[i] - x2_[c_.gate(to_p1[i]).a]).v;
    }
    if (is_p2() && !to_p2.empty()) {
      auto a2s = expect_elems(PartyId::P3, MsgType::OpenMask, step, to_p2.size());
      auto x2s = expect_elems(PartyId::P1, MsgType::OpenMask, step, to_p2.size());
      for (size_t i = 0; i < to_p2.size(); ++i) {
        u32 w = c_.gate(to_p2[i]).a;
        if (x2s[i] != x2_[w])
          throw ProtocolAbort("mask mismatch while opening '" + c_.gate(to_p2[i]).name + "'");
        result[to_p2[i]] = (a2s[i] - x2_[w]).v;
      }
    }
    if (is_p3() && !to_p3.empty()) {
      auto x2s = expect_elems(PartyId::P1, MsgType::OpenMask, step, to_p3.size());
      for (size_t i = 0; i < to_p3.size(); ++i)
        result[to_p3[i]] = (a2_[c_.gate(to_p3[i]).a] - x2s[i]).v;
    }
    return result;
  }

  const Circuit& c_;
  Transport& net_;
  RandomnessProvider& rng_;
  u32 inst_;
  PartyId me_;
  int k_;
  std::vector<RingElement> x2_, x3_, a2_, a3_, m1_;
  std::vector<std::vector<u32>> muls_by_layer_;
};

}  // namespace hetmpc
