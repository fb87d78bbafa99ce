#pragma once

#include "hetmpc/circuit.hpp"
#include "hetmpc/rand.hpp"
#include "hetmpc/transcript.hpp"
#include "hetmpc/transport.hpp"

namespace hetmpc {

namespace kset4 {
struct TripleSets {
  Keyset s124, s134, s234;
};
// Regular wires use the three-party seed triples; wires dealt by the
// outsider use the same triples widened by the outsider, so every holder
// of a component can derive it without a transfer.
constexpr TripleSets plain{MaskTripleSeeds::k124, MaskTripleSeeds::k134, MaskTripleSeeds::k234};
constexpr TripleSets outsider{
    keyset_of({PartyId::Outsider, PartyId::P1, PartyId::P2, PartyId::P4}),
    keyset_of({PartyId::Outsider, PartyId::P1, PartyId::P3, PartyId::P4}),
    keyset_of({PartyId::Outsider, PartyId::P2, PartyId::P3, PartyId::P4})};
}  // namespace kset4

// Raised when a verification checkpoint ends with an abort vote. The status
// round runs to completion first, so every party throws this in lockstep and
// the engine object still carries the last verified snapshot for recovery.
struct CheckpointAbort : ProtocolAbort {
  CheckpointAbort(u32 cp, u32 resume)
      : ProtocolAbort("checkpoint " + std::to_string(cp) + " failed"),
        checkpoint(cp),
        resume_layer(resume) {}
  u32 checkpoint;
  u32 resume_layer;
};

struct Engine4Options {
  u32 checkpoint_interval = 10;  // multiplication layers between checkpoints
  bool fair = false;             // hash-commit opening with abort echo rounds
  u32 instance = 0;
};

// Malicious-secure four-party evaluation. Per wire v the state is
//   P1: (x1, a3)   P2: (x2, a3)   P3: (x3, a2)   P4: (x1, x2, x3)
// with a2 = v + x2, a3 = v + x3 and x1 = x2 - x3. P4 holds only masks and
// stays offline; P1 holds masked values but is written to lazily, so the
// latency-critical online path is again the P2/P3 exchange.
//
// Multiplication of wires a (alpha; x1,x2,x3) and b (beta; y1,y2,y3), with
// output mask triple (z1,z2,z3) and pads r124, r234 from the mask seeds:
//   offline P1 -> P3:  o1 = -x1*y1 - r124
//   offline P4 -> P1:  o4 = x2*y2 - x3*y3 - r234
//   online  P2 -> P3:  m2 = a3*b3 + x2*y2 + r124 + z2
//   online  P3 -> P2:  m3 = a2*b2 + o1 + x3*y3 + z3
//   lazy    P3 -> P1:  m3' = (a2-x3)*(b2-y3) + r234 + z3
// P2 keeps a3(out) = m3 - a3*y2 - b3*x2 + r124, P3 keeps
// a2(out) = m2 - a2*y3 - b2*x3 + o1, and P1, at the next checkpoint,
// a3(out) = m3' - a3*y1 - b3*x1 + o4 - 2*x1*y1; all telescope to
// alpha*beta plus the output mask component.
//
// Tamper detection is by mirrored view logs: both members of a pair append
// the same entries, and checkpoints swap log digests followed by an
// OK/ABORT status round. The per-gate invariant v = m2 - m3 - r234 is
// logged by P2 and P3 against each other and against P1's offline
// reconstruction v1 = a3*b3 - a2*b2 + o4 + x1*y1 + z1 + 2*r124, which
// equals v exactly when every message is honest.
class Engine4 {
 public:
  using Options = Engine4Options;

  // State at the last checkpoint that passed verification; the recovery
  // path reconfigures to three parties from here instead of restarting.
  struct Snapshot {
    bool valid = false;
    u32 layer = 0;       // layers up to and including this one are verified
    u32 checkpoint = 0;
    std::vector<RingElement> x1, x2, x3, a2, a3;
  };

  Engine4(const Circuit& c, Transport& net, RandomnessProvider& rng, Options opts = {})
      : c_(c), net_(net), rng_(rng), opts_(opts), me_(net.me()), k_(c.k) {
    if (opts_.checkpoint_interval == 0) opts_.checkpoint_interval = 1;
    for (u32 id : c_.outputs) {
      u8 r = c_.gate(id).recipients;
      if (r != kOutputAll && (r & ~u8{0b1111}))
        throw UsageError("output recipient outside {P1,P2,P3,P4}");
    }
    const RingElement zero(0, k_);
    x1_.assign(c_.gates.size(), zero);
    x2_.assign(c_.gates.size(), zero);
    x3_.assign(c_.gates.size(), zero);
    a2_.assign(c_.gates.size(), zero);
    a3_.assign(c_.gates.size(), zero);
    o1_.assign(c_.gates.size(), zero);
    o4_.assign(c_.gates.size(), zero);
    prod1_.assign(c_.gates.size(), zero);
    prod2_.assign(c_.gates.size(), zero);
    muls_by_layer_.resize(c_.depth + 1);
    for (const auto& layer : c_.layers)
      for (u32 id : layer)
        if (c_.gate(id).op == GateOp::Mul) muls_by_layer_[c_.gate(id).layer].push_back(id);
  }

  MulMeter meter;

  std::map<u32, u64> run(const std::map<u32, u64>& my_inputs) {
    check_inputs(my_inputs);
    try {
      meter.phase = MulPhase::Offline;
      offline(my_inputs);
      meter.phase = MulPhase::Online;
      share_inputs(my_inputs);
      if (me_ == PartyId::Outsider) return {};
      checkpoint(0);  // validates input sharing before any layer runs
      online();
      return opts_.fair ? fair_open() : open_secure();
    } catch (const CheckpointAbort&) {
      throw;  // status round already ran; peers abort in lockstep
    } catch (const ProtocolAbort&) {
      notify_abort();
      throw;
    }
  }

  const ViewLog& views() const { return views_; }
  const Snapshot& snapshot() const { return snapshot_; }
  u32 checkpoints_run() const { return next_checkpoint_; }

 private:
  bool is_p1() const { return me_ == PartyId::P1; }
  bool is_p2() const { return me_ == PartyId::P2; }
  bool is_p3() const { return me_ == PartyId::P3; }
  bool is_p4() const { return me_ == PartyId::P4; }

  std::array<PartyId, 3> peers() const {
    std::array<PartyId, 3> out{};
    size_t n = 0;
    for (PartyId p : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4})
      if (p != me_) out[n++] = p;
    return out;
  }

  RingElement tape(Keyset ks, u32 purp, u32 gate) {
    return rng_.draw(ks, purp, gate, opts_.instance, k_);
  }
  RingElement pad124(u32 gate) { return tape(MaskTripleSeeds::k124, purpose::MulPad, gate); }
  RingElement pad234(u32 gate) { return tape(MaskTripleSeeds::k234, purpose::MulPad, gate); }

  void check_inputs(const std::map<u32, u64>& in) const {
    for (u32 id : c_.inputs)
      if (c_.gate(id).owner == me_ && !in.count(id))
        throw UsageError("missing value for input '" + c_.gate(id).name + "'");
  }

  std::vector<u32> inputs_of(PartyId owner) const {
    std::vector<u32> ids;
    for (u32 id : c_.inputs)
      if (c_.gate(id).owner == owner) ids.push_back(id);
    return ids;
  }

  std::vector<RingElement> expect_elems(PartyId from, MsgType type, u32 step, size_t count) {
    Message m = net_.recv_expect(from, type, step);
    size_t want = k_ == 1 ? (count + 7) / 8 : count * element_bytes(k_);
    if (m.payload.size() != want)
      throw ProtocolAbort("batch size mismatch from " + party_name(from));
    return decode_elements(m.payload, k_, count);
  }

  // Best-effort wake-up so peers blocked in a receive abort instead of
  // timing out; checkpoint aborts never need it.
  void notify_abort() {
    if (me_ == PartyId::Outsider) return;
    for (PartyId p : peers()) {
      try {
        Message m;
        m.from = me_;
        m.to = p;
        m.phase = Phase::Online;
        m.type = MsgType::GodControl;
        m.step = 0xffffffff;
        m.payload = {2};
        net_.send(m);
      } catch (...) {
      }
    }
  }

  size_t pending_muls(int after, int upto) const {
    size_t n = 0;
    for (int l = after + 1; l <= upto; ++l) n += muls_by_layer_[l].size();
    return n;
  }

  // Mask derivation is local for everyone: input wires come from the seed
  // triples, later wires propagate per component. The only offline traffic
  // is each dealer picking up the component it is missing, then the o1/o4
  // cross-term batches.
  void offline(const std::map<u32, u64>&) {
    if (me_ == PartyId::Outsider) {
      for (u32 id : inputs_of(me_)) {
        x2_[id] = tape(kset4::outsider.s234, purpose::WireMask, id) +
                  tape(kset4::outsider.s124, purpose::WireMask, id);
        x3_[id] = tape(kset4::outsider.s134, purpose::WireMask, id) +
                  tape(kset4::outsider.s234, purpose::WireMask, id);
      }
      return;
    }

    const bool hold1 = is_p1() || is_p4();
    const bool hold2 = is_p2() || is_p4();
    const bool hold3 = is_p3() || is_p4();
    auto draw = [&](Keyset s, u32 id) { return tape(s, purpose::WireMask, id); };

    for (u32 id = 0; id < c_.gates.size(); ++id) {
      const Gate& g = c_.gates[id];
      switch (g.op) {
        case GateOp::Input: {
          const auto& ts = g.owner == PartyId::Outsider ? kset4::outsider : kset4::plain;
          if (hold1) x1_[id] = draw(ts.s124, id) - draw(ts.s134, id);
          if (hold2) x2_[id] = draw(ts.s234, id) + draw(ts.s124, id);
          if (hold3) x3_[id] = draw(ts.s134, id) + draw(ts.s234, id);
          break;
        }
        case GateOp::Add:
          if (hold1) x1_[id] = x1_[g.a] + x1_[g.b];
          if (hold2) x2_[id] = x2_[g.a] + x2_[g.b];
          if (hold3) x3_[id] = x3_[g.a] + x3_[g.b];
          break;
        case GateOp::ConstAdd:
          if (hold1) x1_[id] = x1_[g.a];
          if (hold2) x2_[id] = x2_[g.a];
          if (hold3) x3_[id] = x3_[g.a];
          break;
        case GateOp::ConstMul: {
          const RingElement cv(g.cval, k_);
          if (hold1) x1_[id] = meter.mul(cv, x1_[g.a]);
          if (hold2) x2_[id] = meter.mul(cv, x2_[g.a]);
          if (hold3) x3_[id] = meter.mul(cv, x3_[g.a]);
          break;
        }
        case GateOp::Mul: {  // fresh output masks, the z triple of the gate
          const auto& ts = kset4::plain;
          if (hold1) x1_[id] = draw(ts.s124, id) - draw(ts.s134, id);
          if (hold2) x2_[id] = draw(ts.s234, id) + draw(ts.s124, id);
          if (hold3) x3_[id] = draw(ts.s134, id) + draw(ts.s234, id);
          break;
        }
        default: break;
      }
    }

    // Dealers learn the counterpart component of their own input wires so
    // they can form a3 (or a2 for P3). The receiver logs the transfer
    // against P4, which knows every component.
    auto p1_ids = inputs_of(PartyId::P1);
    auto p2_ids = inputs_of(PartyId::P2);
    auto p3_ids = inputs_of(PartyId::P3);
    auto send_xfer = [&](PartyId to, const std::vector<u32>& ids, std::vector<RingElement>& src) {
      if (ids.empty()) return;
      std::vector<RingElement> batch;
      for (u32 id : ids) batch.push_back(src[id]);
      net_.send(make_element_msg(me_, to, Phase::Offline, MsgType::ShareMask, 0, batch, k_, ids));
    };
    if (is_p3()) {
      send_xfer(PartyId::P1, p1_ids, x3_);
      send_xfer(PartyId::P2, p2_ids, x3_);
    }
    if (is_p2()) send_xfer(PartyId::P3, p3_ids, x2_);

    auto recv_xfer = [&](PartyId from, const std::vector<u32>& ids, std::vector<RingElement>& dst) {
      if (ids.empty()) return;
      auto batch = expect_elems(from, MsgType::ShareMask, 0, ids.size());
      for (size_t i = 0; i < ids.size(); ++i) {
        dst[ids[i]] = batch[i];
        views_.log(PartyId::P4, ViewTag::MaskXfer, ids[i], batch[i]);
      }
    };
    if (is_p1()) recv_xfer(PartyId::P3, p1_ids, x3_);
    if (is_p2()) recv_xfer(PartyId::P3, p2_ids, x3_);
    if (is_p3()) recv_xfer(PartyId::P2, p3_ids, x2_);
    if (is_p4()) {
      for (u32 id : p1_ids) views_.log(PartyId::P1, ViewTag::MaskXfer, id, x3_[id]);
      for (u32 id : p2_ids) views_.log(PartyId::P2, ViewTag::MaskXfer, id, x3_[id]);
      for (u32 id : p3_ids) views_.log(PartyId::P3, ViewTag::MaskXfer, id, x2_[id]);
    }

    if (c_.mul_count == 0) return;

    // Cross terms and the mask products reused online, layer-major. P4
    // recomputes o1 purely to pin P1 down in the (P3,P4) log.
    std::vector<RingElement> o1_batch, o4_batch;
    std::vector<u32> mul_gates;
    for (const auto& layer : muls_by_layer_) {
      for (u32 id : layer) {
        const Gate& g = c_.gate(id);
        mul_gates.push_back(id);
        if (is_p1()) {
          prod1_[id] = meter.mul(x1_[g.a], x1_[g.b]);
          o1_batch.push_back(RingElement(0, k_) - prod1_[id] - pad124(id));
        }
        if (is_p2()) prod1_[id] = meter.mul(x2_[g.a], x2_[g.b]);
        if (is_p3()) prod1_[id] = meter.mul(x3_[g.a], x3_[g.b]);
        if (is_p4()) {
          prod1_[id] = meter.mul(x2_[g.a], x2_[g.b]);
          prod2_[id] = meter.mul(x3_[g.a], x3_[g.b]);
          o4_batch.push_back(prod1_[id] - prod2_[id] - pad234(id));
          RingElement o1 = RingElement(0, k_) - meter.mul(x1_[g.a], x1_[g.b]) - pad124(id);
          views_.log(PartyId::P3, ViewTag::OffO1, id, o1);
        }
      }
    }

    if (is_p1())
      net_.send(make_element_msg(me_, PartyId::P3, Phase::Offline, MsgType::MulOffO1, 0, o1_batch,
                                 k_, mul_gates));
    if (is_p4())
      net_.send(make_element_msg(me_, PartyId::P1, Phase::Offline, MsgType::MulOffO4, 0, o4_batch,
                                 k_, mul_gates));
    if (is_p3()) {
      auto batch = expect_elems(PartyId::P1, MsgType::MulOffO1, 0, mul_gates.size());
      for (size_t i = 0; i < mul_gates.size(); ++i) {
        o1_[mul_gates[i]] = batch[i];
        views_.log(PartyId::P4, ViewTag::OffO1, mul_gates[i], batch[i]);
      }
    }
    if (is_p1()) {
      auto batch = expect_elems(PartyId::P4, MsgType::MulOffO4, 0, mul_gates.size());
      for (size_t i = 0; i < mul_gates.size(); ++i) o4_[mul_gates[i]] = batch[i];
    }
  }

  // Every dealer pushes the masked values the other holders are due; P1 and
  // P2 log a3 against each other, and P1 logs a3 + x1 against P3's a2, so a
  // dealer handing out inconsistent shares fails the first checkpoint.
  void share_inputs(const std::map<u32, u64>& my_inputs) {
    auto mine = inputs_of(me_);
    auto send_batch = [&](PartyId to, const std::vector<RingElement>& vals) {
      if (vals.empty()) return;
      net_.send(make_element_msg(me_, to, Phase::Online, MsgType::Share, 0, vals, k_, mine));
    };
    std::vector<RingElement> va3, va2;
    for (u32 id : mine) {
      RingElement v(my_inputs.at(id), k_);
      va3.push_back(v + x3_[id]);
      // P1 never holds x2 directly; its dealer transfer brought x3, and
      // x2 = x1 + x3 reassembles the component a2 needs.
      va2.push_back(me_ == PartyId::P1 ? v + x1_[id] + x3_[id] : v + x2_[id]);
    }

    switch (me_) {
      case PartyId::P1:
        for (size_t i = 0; i < mine.size(); ++i) a3_[mine[i]] = va3[i];
        send_batch(PartyId::P2, va3);
        send_batch(PartyId::P3, va2);
        break;
      case PartyId::P2:
        for (size_t i = 0; i < mine.size(); ++i) a3_[mine[i]] = va3[i];
        send_batch(PartyId::P1, va3);
        send_batch(PartyId::P3, va2);
        break;
      case PartyId::P3:
        for (size_t i = 0; i < mine.size(); ++i) a2_[mine[i]] = va2[i];
        send_batch(PartyId::P1, va3);
        send_batch(PartyId::P2, va3);
        break;
      case PartyId::P4:
      case PartyId::Outsider:
        send_batch(PartyId::P1, va3);
        send_batch(PartyId::P2, va3);
        send_batch(PartyId::P3, va2);
        break;
    }

    auto recv_from = [&](PartyId dealer, std::vector<RingElement>& dst) {
      auto ids = inputs_of(dealer);
      if (ids.empty()) return;
      auto batch = expect_elems(dealer, MsgType::Share, 0, ids.size());
      for (size_t i = 0; i < ids.size(); ++i) dst[ids[i]] = batch[i];
    };
    if (is_p1())
      for (PartyId d : {PartyId::P2, PartyId::P3, PartyId::P4, PartyId::Outsider}) recv_from(d, a3_);
    if (is_p2())
      for (PartyId d : {PartyId::P1, PartyId::P3, PartyId::P4, PartyId::Outsider}) recv_from(d, a3_);
    if (is_p3())
      for (PartyId d : {PartyId::P1, PartyId::P2, PartyId::P4, PartyId::Outsider}) recv_from(d, a2_);

    for (u32 id : c_.inputs) {
      if (is_p1()) {
        views_.log(PartyId::P2, ViewTag::ShareA3, id, a3_[id]);
        views_.log(PartyId::P3, ViewTag::ShareA2, id, a3_[id] + x1_[id]);
      }
      if (is_p2()) views_.log(PartyId::P1, ViewTag::ShareA3, id, a3_[id]);
      if (is_p3()) views_.log(PartyId::P1, ViewTag::ShareA2, id, a2_[id]);
    }
  }

  void online() {
    u32 mul_layers_since = 0;
    for (u32 layer = 0; layer <= c_.depth; ++layer) {
      const auto& muls = muls_by_layer_[layer];
      if (!muls.empty() && is_p2()) {
        std::vector<RingElement> m2s;
        for (u32 id : muls) {
          const Gate& g = c_.gate(id);
          m2s.push_back(meter.mul(a3_[g.a], a3_[g.b]) + prod1_[id] + pad124(id) + x2_[id]);
        }
        net_.send(make_element_msg(me_, PartyId::P3, Phase::Online, MsgType::MulOnM2, layer, m2s,
                                   k_, muls));
        auto m3s = expect_elems(PartyId::P3, MsgType::MulOnM3, layer, muls.size());
        for (size_t i = 0; i < muls.size(); ++i) {
          u32 id = muls[i];
          const Gate& g = c_.gate(id);
          RingElement c3 = m3s[i] - meter.mul(a3_[g.a], x2_[g.b]) - meter.mul(a3_[g.b], x2_[g.a]) +
                           pad124(id);
          RingElement v = m2s[i] - m3s[i] - pad234(id);
          a3_[id] = c3;
          views_.log(PartyId::P3, ViewTag::MulV, id, v);
          views_.log(PartyId::P1, ViewTag::MulV, id, v);
          views_.log(PartyId::P1, ViewTag::MulC3, id, c3);
        }
      }
      if (!muls.empty() && is_p3()) {
        std::vector<RingElement> m3s;
        for (u32 id : muls) {
          const Gate& g = c_.gate(id);
          m3s.push_back(meter.mul(a2_[g.a], a2_[g.b]) + o1_[id] + prod1_[id] + x3_[id]);
          pending_m3p_.emplace_back(
              id, meter.mul(a2_[g.a] - x3_[g.a], a2_[g.b] - x3_[g.b]) + pad234(id) + x3_[id]);
        }
        net_.send(make_element_msg(me_, PartyId::P2, Phase::Online, MsgType::MulOnM3, layer, m3s,
                                   k_, muls));
        auto m2s = expect_elems(PartyId::P2, MsgType::MulOnM2, layer, muls.size());
        for (size_t i = 0; i < muls.size(); ++i) {
          u32 id = muls[i];
          const Gate& g = c_.gate(id);
          RingElement c2 = m2s[i] - meter.mul(a2_[g.a], x3_[g.b]) - meter.mul(a2_[g.b], x3_[g.a]) +
                           o1_[id];
          RingElement v = m2s[i] - m3s[i] - pad234(id);
          a2_[id] = c2;
          views_.log(PartyId::P2, ViewTag::MulV, id, v);
          views_.log(PartyId::P1, ViewTag::MulV, id, v);
        }
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

      if (!muls.empty() && ++mul_layers_since == opts_.checkpoint_interval) {
        checkpoint(static_cast<int>(layer));
        mul_layers_since = 0;
      }
    }
    if (p1_layer_ < static_cast<int>(c_.depth)) checkpoint(static_cast<int>(c_.depth));
  }

  // P1 catches up on everything since the last checkpoint: the m3' batch
  // arrives, its a3 state advances through the pending layers, and its
  // reconstruction of per-gate invariants lands in the logs the digest
  // round is about to compare.
  void flush_p1(int upto, u32 cp) {
    size_t pend = pending_muls(p1_layer_, upto);
    if (is_p3() && !pending_m3p_.empty()) {
      std::vector<RingElement> vals;
      std::vector<u32> ids;
      for (auto& [id, v] : pending_m3p_) {
        ids.push_back(id);
        vals.push_back(v);
      }
      pending_m3p_.clear();
      net_.send(
          make_element_msg(me_, PartyId::P1, Phase::Online, MsgType::MulOnM3p, cp, vals, k_, ids));
    }
    if (is_p1()) {
      std::vector<RingElement> m3p;
      if (pend > 0) m3p = expect_elems(PartyId::P3, MsgType::MulOnM3p, cp, pend);
      size_t next = 0;
      for (int l = p1_layer_ + 1; l <= upto; ++l) {
        for (u32 id : c_.layers[l]) {
          const Gate& g = c_.gate(id);
          switch (g.op) {
            case GateOp::Add: a3_[id] = a3_[g.a] + a3_[g.b]; break;
            case GateOp::ConstAdd: a3_[id] = a3_[g.a] + RingElement(g.cval, k_); break;
            case GateOp::ConstMul: a3_[id] = meter.mul(RingElement(g.cval, k_), a3_[g.a]); break;
            case GateOp::Mul: {
              RingElement m = m3p.at(next++);
              RingElement c3 = m - meter.mul(a3_[g.a], x1_[g.b]) - meter.mul(a3_[g.b], x1_[g.a]) +
                               o4_[id] - prod1_[id] - prod1_[id];
              RingElement v1 = meter.mul(a3_[g.a], a3_[g.b]) -
                               meter.mul(a3_[g.a] + x1_[g.a], a3_[g.b] + x1_[g.b]) + o4_[id] +
                               prod1_[id] + x1_[id] + pad124(id) + pad124(id);
              a3_[id] = c3;
              views_.log(PartyId::P2, ViewTag::MulV, id, v1);
              views_.log(PartyId::P3, ViewTag::MulV, id, v1);
              views_.log(PartyId::P2, ViewTag::MulC3, id, c3);
              break;
            }
            default: break;
          }
        }
      }
    }
    p1_layer_ = upto;
  }

  void checkpoint(int upto) {
    const u32 cp = next_checkpoint_++;
    flush_p1(upto, cp);

    bool bad = false;
    for (PartyId p : peers()) {
      Message m;
      m.from = me_;
      m.to = p;
      m.phase = Phase::Online;
      m.type = MsgType::Digest;
      m.step = cp;
      Digest d = views_.digest(p);
      m.payload.assign(d.begin(), d.end());
      net_.send(m);
    }
    for (PartyId p : peers()) {
      Message m = net_.recv_expect(p, MsgType::Digest, cp);
      Digest mine = views_.digest(p);
      if (m.payload.size() != mine.size() || !std::equal(mine.begin(), mine.end(), m.payload.begin()))
        bad = true;
    }

    // Status round: everyone hears everyone before anyone gives up, so an
    // abort here is unanimous and the snapshot below is agreed on.
    for (PartyId p : peers()) {
      Message m;
      m.from = me_;
      m.to = p;
      m.phase = Phase::Online;
      m.type = MsgType::GodControl;
      m.step = cp;
      m.payload = {static_cast<u8>(bad ? 1 : 0)};
      net_.send(m);
    }
    for (PartyId p : peers()) {
      Message m = net_.recv_expect(p, MsgType::GodControl, cp);
      if (m.payload.size() != 1 || m.payload[0] != 0) bad = true;
    }

    if (bad) throw CheckpointAbort(cp, snapshot_.valid ? snapshot_.layer + 1 : 0);

    snapshot_.valid = true;
    snapshot_.layer = static_cast<u32>(upto);
    snapshot_.checkpoint = cp;
    snapshot_.x1 = x1_;
    snapshot_.x2 = x2_;
    snapshot_.x3 = x3_;
    snapshot_.a2 = a2_;
    snapshot_.a3 = a3_;
  }

  std::vector<u32> outputs_to(PartyId p) const {
    std::vector<u32> ids;
    for (u32 id : c_.outputs) {
      u8 r = c_.gate(id).recipients;
      if (r == kOutputAll || (r & (1u << party_index(p)))) ids.push_back(id);
    }
    return ids;
  }
  std::vector<u32> wires(const std::vector<u32>& out_ids) const {
    std::vector<u32> ws;
    for (u32 id : out_ids) ws.push_back(c_.gate(id).a);
    return ws;
  }

  // Each recipient gets the one mask component it is missing (P4 gets a3
  // instead); the received values are logged against an independent holder
  // and a last digest round runs before anything is treated as output.
  std::map<u32, u64> open_secure() {
    std::map<u32, u64> result;
    const u32 step = c_.depth + 1;
    auto to_p1 = outputs_to(PartyId::P1), to_p2 = outputs_to(PartyId::P2),
         to_p3 = outputs_to(PartyId::P3), to_p4 = outputs_to(PartyId::P4);

    auto send_wires = [&](PartyId to, const std::vector<u32>& out_ids,
                          const std::vector<RingElement>& src) {
      if (out_ids.empty()) return;
      auto ws = wires(out_ids);
      std::vector<RingElement> batch;
      for (u32 w : ws) batch.push_back(src[w]);
      net_.send(make_element_msg(me_, to, Phase::Online, MsgType::OpenMask, step, batch, k_, ws));
    };
    if (is_p3()) {
      send_wires(PartyId::P1, to_p1, x3_);
      send_wires(PartyId::P2, to_p2, x3_);
    }
    if (is_p2()) send_wires(PartyId::P3, to_p3, x2_);
    if (is_p1()) send_wires(PartyId::P4, to_p4, a3_);

    if (is_p4()) {
      for (u32 w : wires(to_p1)) views_.log(PartyId::P1, ViewTag::OpenX, w, x3_[w]);
      for (u32 w : wires(to_p2)) views_.log(PartyId::P2, ViewTag::OpenX, w, x3_[w]);
      for (u32 w : wires(to_p3)) views_.log(PartyId::P3, ViewTag::OpenX, w, x2_[w]);
    }

    if (is_p1() && !to_p1.empty()) {
      auto x3s = expect_elems(PartyId::P3, MsgType::OpenMask, step, to_p1.size());
      for (size_t i = 0; i < to_p1.size(); ++i) {
        u32 w = c_.gate(to_p1[i]).a;
        views_.log(PartyId::P4, ViewTag::OpenX, w, x3s[i]);
        result[to_p1[i]] = (a3_[w] - x3s[i]).v;
      }
    }
    if (is_p2()) {
      if (!to_p2.empty()) {
        auto x3s = expect_elems(PartyId::P3, MsgType::OpenMask, step, to_p2.size());
        for (size_t i = 0; i < to_p2.size(); ++i) {
          u32 w = c_.gate(to_p2[i]).a;
          views_.log(PartyId::P4, ViewTag::OpenX, w, x3s[i]);
          result[to_p2[i]] = (a3_[w] - x3s[i]).v;
        }
      }
      for (u32 w : wires(to_p4)) views_.log(PartyId::P4, ViewTag::OpenA, w, a3_[w]);
    }
    if (is_p3() && !to_p3.empty()) {
      auto x2s = expect_elems(PartyId::P2, MsgType::OpenMask, step, to_p3.size());
      for (size_t i = 0; i < to_p3.size(); ++i) {
        u32 w = c_.gate(to_p3[i]).a;
        views_.log(PartyId::P4, ViewTag::OpenX, w, x2s[i]);
        result[to_p3[i]] = (a2_[w] - x2s[i]).v;
      }
    }
    if (is_p4() && !to_p4.empty()) {
      auto a3s = expect_elems(PartyId::P1, MsgType::OpenMask, step, to_p4.size());
      for (size_t i = 0; i < to_p4.size(); ++i) {
        u32 w = c_.gate(to_p4[i]).a;
        views_.log(PartyId::P2, ViewTag::OpenA, w, a3s[i]);
        result[to_p4[i]] = (a3s[i] - x3_[w]).v;
      }
    }

    checkpoint(static_cast<int>(c_.depth));
    return result;
  }

  // Fair opening: hash commitments from both holders of each reveal, two
  // abort echo rounds, then plaintext reveals checked against the agreed
  // hash. A round-2 abort must quote the sender's exclusion token (learned
  // only from a round-1 abort), so a party cannot first feign cooperation
  // and then split the honest parties.
  std::map<u32, u64> fair_open() {
    struct Group {
      PartyId to;
      PartyId holders[2];
      const std::vector<RingElement>* src;
      std::vector<u32> outs;
    };
    auto to_p1 = outputs_to(PartyId::P1), to_p2 = outputs_to(PartyId::P2),
         to_p3 = outputs_to(PartyId::P3), to_p4 = outputs_to(PartyId::P4);
    Group groups[4] = {
        {PartyId::P1, {PartyId::P3, PartyId::P4}, &x3_, to_p1},
        {PartyId::P2, {PartyId::P3, PartyId::P4}, &x3_, to_p2},
        {PartyId::P3, {PartyId::P2, PartyId::P4}, &x2_, to_p3},
        {PartyId::P4, {PartyId::P1, PartyId::P2}, &a3_, to_p4},
    };

    auto batch_payload = [&](const Group& g) {
      std::vector<RingElement> vals;
      for (u32 w : wires(g.outs)) vals.push_back((*g.src)[w]);
      std::vector<u8> bytes;
      encode_elements(vals, k_, bytes);
      return bytes;
    };
    auto raw_send = [&](PartyId to, MsgType type, u32 step, std::vector<u8> payload) {
      Message m;
      m.from = me_;
      m.to = to;
      m.phase = Phase::Online;
      m.type = type;
      m.step = step;
      m.payload = std::move(payload);
      net_.send(m);
    };

    // Commitment round.
    for (const Group& g : groups) {
      if (g.outs.empty() || (me_ != g.holders[0] && me_ != g.holders[1])) continue;
      Digest d = sha256(batch_payload(g));
      raw_send(g.to, MsgType::FairHash, 0, std::vector<u8>(d.begin(), d.end()));
    }
    bool abort_intent = false;
    Digest agreed{};
    const Group* my_group = nullptr;
    for (const Group& g : groups)
      if (g.to == me_ && !g.outs.empty()) my_group = &g;
    if (my_group) {
      Message h0 = net_.recv_expect(my_group->holders[0], MsgType::FairHash, 0);
      Message h1 = net_.recv_expect(my_group->holders[1], MsgType::FairHash, 0);
      if (h0.payload != h1.payload || h0.payload.size() != agreed.size())
        abort_intent = true;
      else
        std::copy(h0.payload.begin(), h0.payload.end(), agreed.begin());
    }

    // Exclusion token of p: a tape value every party except p can derive.
    auto token_of = [&](PartyId p) {
      Keyset all = keyset_of({PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4});
      Keyset ks = all & static_cast<Keyset>(~(1u << party_index(p)));
      u64 t = rng_.draw_raw(ks, purpose::FairToken, party_index(p), opts_.instance);
      std::vector<u8> bytes(8);
      for (int i = 0; i < 8; ++i) bytes[i] = static_cast<u8>(t >> (8 * i));
      return bytes;
    };

    // Round 1: an abort vote carries the recipient's own exclusion token,
    // which is what authorizes that recipient to relay the abort.
    for (PartyId p : peers())
      raw_send(p, abort_intent ? MsgType::FairAbort : MsgType::FairProceed, 1,
               abort_intent ? token_of(p) : std::vector<u8>{});
    bool saw_round1_abort = false;
    std::vector<u8> my_token;
    for (PartyId p : peers()) {
      Message m = net_.recv(p);
      if (m.step != 1 || (m.type != MsgType::FairAbort && m.type != MsgType::FairProceed))
        throw ProtocolAbort("unexpected message in abort round from " + party_name(p));
      if (m.type == MsgType::FairAbort) {
        saw_round1_abort = true;
        my_token = m.payload;
      }
    }

    // Round 2: relay. A fabricated abort without the right token is ignored.
    bool relay = saw_round1_abort;
    for (PartyId p : peers())
      raw_send(p, relay ? MsgType::FairAbort : MsgType::FairProceed, 2,
               relay ? my_token : std::vector<u8>{});
    bool saw_valid_round2 = false;
    for (PartyId p : peers()) {
      Message m = net_.recv(p);
      if (m.step != 2 || (m.type != MsgType::FairAbort && m.type != MsgType::FairProceed))
        throw ProtocolAbort("unexpected message in abort round from " + party_name(p));
      if (m.type == MsgType::FairAbort && m.payload == token_of(p)) saw_valid_round2 = true;
    }

    if (abort_intent || saw_round1_abort || saw_valid_round2)
      throw ProtocolAbort("fair opening aborted before any reveal");

    // Reveal round; any reveal matching the committed hash is the value.
    for (const Group& g : groups) {
      if (g.outs.empty() || (me_ != g.holders[0] && me_ != g.holders[1])) continue;
      raw_send(g.to, MsgType::FairReveal, 3, batch_payload(g));
    }
    std::map<u32, u64> result;
    if (my_group) {
      Message r0 = net_.recv_expect(my_group->holders[0], MsgType::FairReveal, 3);
      Message r1 = net_.recv_expect(my_group->holders[1], MsgType::FairReveal, 3);
      const std::vector<u8>* chosen = nullptr;
      for (const Message* m : {&r0, &r1}) {
        Digest d = sha256(m->payload);
        if (std::equal(d.begin(), d.end(), agreed.begin())) {
          chosen = &m->payload;
          break;
        }
      }
      if (!chosen) throw ProtocolAbort("no reveal matches the committed opening");
      auto vals = decode_elements(*chosen, k_, my_group->outs.size());
      for (size_t i = 0; i < my_group->outs.size(); ++i) {
        u32 w = c_.gate(my_group->outs[i]).a;
        if (me_ == PartyId::P4)  // receives a3 and already holds the mask
          result[my_group->outs[i]] = (vals[i] - x3_[w]).v;
        else if (me_ == PartyId::P3)
          result[my_group->outs[i]] = (a2_[w] - vals[i]).v;
        else
          result[my_group->outs[i]] = (a3_[w] - vals[i]).v;
      }
    }
    return result;
  }

  const Circuit& c_;
  Transport& net_;
  RandomnessProvider& rng_;
  Options opts_;
  PartyId me_;
  int k_;
  ViewLog views_;
  Snapshot snapshot_;
  std::vector<RingElement> x1_, x2_, x3_, a2_, a3_, o1_, o4_, prod1_, prod2_;
  std::vector<std::vector<u32>> muls_by_layer_;
  std::vector<std::pair<u32, RingElement>> pending_m3p_;
  int p1_layer_ = -1;
  u32 next_checkpoint_ = 0;
};

}  // namespace hetmpc
