#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <vector>

#include "hetmpc/runner.hpp"

namespace hetmpc {

// Control steps framing recovery attempts (offset by the reset index).
constexpr u32 kGodStatusStep = 900;
constexpr u32 kGodDeliverStep = 950;

// Recovery reconfigures to three parties in a fixed walk: P4 first, then
// P1, P2, P3. A persistent misbehaver is out after at most four resets;
// parties dropped along the way listen to the status round and rejoin the
// next attempt. Roles: l1 holds both mask columns, l2 the a3 column, l3
// the a2 column (plus x3, which the m3 message needs).
struct ContinuationConfig {
  u32 reset = 0;  // 1..4
  PartyId eliminated;
  PartyId l1, l2, l3;
};

inline ContinuationConfig continuation_config(u32 reset) {
  switch (reset) {
    case 1: return {1, PartyId::P4, PartyId::P1, PartyId::P2, PartyId::P3};
    case 2: return {2, PartyId::P1, PartyId::P4, PartyId::P2, PartyId::P3};
    case 3: return {3, PartyId::P2, PartyId::P4, PartyId::P1, PartyId::P3};
    case 4: return {4, PartyId::P3, PartyId::P4, PartyId::P2, PartyId::P1};
    default: throw UsageError("reset index out of range");
  }
}

inline std::vector<u32> outputs_for(const Circuit& c, PartyId p) {
  std::vector<u32> ids;
  for (u32 id : c.outputs) {
    u8 r = c.gate(id).recipients;
    if (r == kOutputAll || (r & (1u << party_index(p)))) ids.push_back(id);
  }
  return ids;
}

// Three-party continuation from a verified four-party snapshot. The wire
// state is rebuilt in the evaluator layout (x2/x3 masks, a2 = v + x2,
// a3 = v + x3); layers past the snapshot are then evaluated with the same
// message pattern as the semi-honest engine, with one catch: every mask is
// preset from the original wire masks plus a per-configuration refresh, not
// drawn fresh, so the snapshot's a-values stay aligned.
//
// The refresh exists because three of the four reconfigurations would
// otherwise let some party combine a masked value it already holds with a
// mask column it is about to learn:
//   reset 1 (P4 out): both columns shift by d ~ {P2,P3}, so P1 can be
//     handed (x2+d, x3+d) without unmasking its a3.
//   reset 2 (P1 out): P4/P2/P3 already hold exactly the three roles; no
//     refresh and no handover traffic at all.
//   reset 3 (P2 out): x2 shifts by s ~ {P3,P4} (hidden from P1, which
//     receives the shifted column), x3 by t ~ {P1,P3,P4} so P1 and P3 can
//     adjust a3/x3 locally.
//   reset 4 (P3 out): x3 shifts by u ~ {P2,P4}, hidden from P1, which
//     receives the shifted column and turns its a3 into a2 = a3 + x1.
class ContinueEngine3 {
 public:
  ContinueEngine3(const Circuit& c, Transport& net, RandomnessProvider& rng,
                  const ContinuationConfig& cfg, const Engine4::Snapshot& snap)
      : c_(c), net_(net), rng_(rng), cfg_(cfg), snap_(snap), me_(net.me()), k_(c.k) {
    if (!snap_.valid) throw UsageError("continuation needs a verified snapshot");
  }

  std::map<u32, u64> run() {
    prepare();
    evaluate();
    return open();
  }

  // Opens the eliminated party's outputs to it: both mask holders send the
  // x2 column, the a2 holder sends the masked values.
  void deliver() const {
    auto outs = outputs_for(c_, cfg_.eliminated);
    if (outs.empty()) return;
    std::vector<u32> ws = wires(outs);
    std::vector<RingElement> batch;
    const auto& src = is_l3() ? a2c_ : x2c_;
    for (u32 w : ws) batch.push_back(src[w]);
    net_.send(make_element_msg(me_, cfg_.eliminated, Phase::Online, MsgType::OpenMask,
                               kGodDeliverStep + cfg_.reset, batch, k_, ws));
  }

  // Statuses consumed by a failing receive, so the caller does not wait for
  // them twice. -1 unseen, otherwise the peer's reported status byte.
  const std::array<int, 5>& statuses_seen() const { return status_seen_; }

 private:
  bool is_l1() const { return me_ == cfg_.l1; }
  bool is_l2() const { return me_ == cfg_.l2; }
  bool is_l3() const { return me_ == cfg_.l3; }

  RingElement pad(u32 id) const {
    return rng_.draw(keyset_of({cfg_.l1, cfg_.l2}), purpose::MulPad, id, cfg_.reset, k_);
  }
  RingElement stream_a(Keyset ks, u32 w) const {
    return rng_.draw(ks, purpose::GodRefresh, w, 8 + cfg_.reset, k_);
  }
  RingElement stream_b(Keyset ks, u32 w) const {
    return rng_.draw(ks, purpose::GodRefresh, w, 16 + cfg_.reset, k_);
  }

  std::vector<u32> wires(const std::vector<u32>& out_ids) const {
    std::vector<u32> ws;
    for (u32 id : out_ids) ws.push_back(c_.gate(id).a);
    return ws;
  }

  std::vector<RingElement> expect_elems(PartyId from, MsgType type, u32 step, size_t count) {
    Message m = net_.recv(from);
    if (m.type == MsgType::GodControl && m.step == kGodStatusStep + cfg_.reset) {
      status_seen_[party_index(from)] = m.payload.empty() ? 0 : m.payload[0];
      throw ProtocolAbort("peer " + party_name(from) + " ended the attempt");
    }
    if (m.type != type || m.step != step)
      throw ProtocolAbort("unexpected message from " + party_name(from));
    size_t want = k_ == 1 ? (count + 7) / 8 : count * element_bytes(k_);
    if (m.payload.size() != want)
      throw ProtocolAbort("batch size mismatch from " + party_name(from));
    return decode_elements(m.payload, k_, count);
  }

  void send_full(PartyId to, const std::vector<RingElement>& vals, u32 step) {
    std::vector<u32> ids(c_.gates.size());
    std::iota(ids.begin(), ids.end(), 0);
    net_.send(make_element_msg(me_, to, Phase::Offline, MsgType::ShareMask, step, vals, k_, ids));
  }
  std::vector<RingElement> recv_full(PartyId from, u32 step) {
    return expect_elems(from, MsgType::ShareMask, step, c_.gates.size());
  }

  void prepare() {
    const size_t n = c_.gates.size();
    const RingElement zero(0, k_);
    x2c_.assign(n, zero);
    x3c_.assign(n, zero);
    a2c_.assign(n, zero);
    a3c_.assign(n, zero);

    const Keyset k23 = keyset_of({PartyId::P2, PartyId::P3});
    const Keyset k34 = keyset_of({PartyId::P3, PartyId::P4});
    const Keyset k24 = keyset_of({PartyId::P2, PartyId::P4});

    switch (cfg_.reset) {
      case 1:
        if (me_ == PartyId::P2) {
          for (u32 w = 0; w < n; ++w) {
            RingElement d = stream_a(k23, w);
            x2c_[w] = snap_.x2[w] + d;
            a3c_[w] = snap_.a3[w] + d;
          }
          send_full(PartyId::P1, x2c_, 0);
        } else if (me_ == PartyId::P3) {
          for (u32 w = 0; w < n; ++w) {
            RingElement d = stream_a(k23, w);
            x3c_[w] = snap_.x3[w] + d;
            a2c_[w] = snap_.a2[w] + d;
          }
          send_full(PartyId::P1, x3c_, 0);
        } else {  // P1 is rebuilt as the mask holder
          x2c_ = recv_full(PartyId::P2, 0);
          x3c_ = recv_full(PartyId::P3, 0);
          for (u32 w = 0; w < n; ++w)
            if ((x2c_[w] - x3c_[w]).v != snap_.x1[w].v)
              throw ProtocolAbort("mask columns disagree after reset");
        }
        break;
      case 2:  // remaining holdings already form the layout
        if (me_ == PartyId::P4) {
          x2c_ = snap_.x2;
          x3c_ = snap_.x3;
        } else if (me_ == PartyId::P2) {
          x2c_ = snap_.x2;
          a3c_ = snap_.a3;
        } else {
          x3c_ = snap_.x3;
          a2c_ = snap_.a2;
        }
        break;
      case 3:
        if (me_ == PartyId::P4) {
          for (u32 w = 0; w < n; ++w) {
            x2c_[w] = snap_.x2[w] + stream_a(k34, w);
            x3c_[w] = snap_.x3[w] + stream_b(MaskTripleSeeds::k134, w);
          }
          send_full(PartyId::P1, x2c_, 0);
        } else if (me_ == PartyId::P1) {
          x2c_ = recv_full(PartyId::P4, 0);
          for (u32 w = 0; w < n; ++w)
            a3c_[w] = snap_.a3[w] + stream_b(MaskTripleSeeds::k134, w);
        } else {  // P3
          for (u32 w = 0; w < n; ++w) {
            x3c_[w] = snap_.x3[w] + stream_b(MaskTripleSeeds::k134, w);
            a2c_[w] = snap_.a2[w] + stream_a(k34, w);
          }
        }
        break;
      case 4:
        if (me_ == PartyId::P4) {
          x2c_ = snap_.x2;
          for (u32 w = 0; w < n; ++w) x3c_[w] = snap_.x3[w] + stream_a(k24, w);
          send_full(PartyId::P1, x3c_, 0);
        } else if (me_ == PartyId::P2) {
          x2c_ = snap_.x2;
          for (u32 w = 0; w < n; ++w) a3c_[w] = snap_.a3[w] + stream_a(k24, w);
        } else {  // P1 turns its a3 column into a2
          x3c_ = recv_full(PartyId::P4, 0);
          for (u32 w = 0; w < n; ++w) a2c_[w] = snap_.a3[w] + snap_.x1[w];
        }
        break;
      default:
        throw UsageError("reset index out of range");
    }

    // Masks of linear wires past the snapshot follow their operands, so the
    // columns stay consistent with the a-values the evaluation will build.
    for (u32 layer = snap_.layer + 1; layer <= c_.depth; ++layer) {
      for (u32 id : c_.layers[layer]) {
        const Gate& g = c_.gate(id);
        auto fix = [&](std::vector<RingElement>& col) {
          switch (g.op) {
            case GateOp::Add: col[id] = col[g.a] + col[g.b]; break;
            case GateOp::ConstAdd: col[id] = col[g.a]; break;
            case GateOp::ConstMul: col[id] = col[g.a] * RingElement(g.cval, k_); break;
            default: break;  // mul wires keep their preset base
          }
        };
        if (is_l1() || is_l2()) fix(x2c_);
        if (is_l1() || is_l3()) fix(x3c_);
      }
    }
  }

  void evaluate() {
    std::vector<u32> pend;
    for (u32 layer = snap_.layer + 1; layer <= c_.depth; ++layer)
      for (u32 id : c_.layers[layer])
        if (c_.gate(id).op == GateOp::Mul) pend.push_back(id);

    std::map<u32, RingElement> m1;
    if (is_l1() && !pend.empty()) {
      std::vector<RingElement> m1s;
      for (u32 id : pend) {
        const Gate& g = c_.gate(id);
        RingElement x1a = x2c_[g.a] - x3c_[g.a], x1b = x2c_[g.b] - x3c_[g.b];
        m1s.push_back(x3c_[g.a] * x3c_[g.b] - x1a * x1b + pad(id));
      }
      net_.send(
          make_element_msg(me_, cfg_.l3, Phase::Offline, MsgType::MulOffM1, 0, m1s, k_, pend));
    }
    if (is_l3() && !pend.empty()) {
      auto m1s = expect_elems(cfg_.l1, MsgType::MulOffM1, 0, pend.size());
      for (size_t i = 0; i < pend.size(); ++i) m1.emplace(pend[i], m1s[i]);
    }

    for (u32 layer = snap_.layer + 1; layer <= c_.depth; ++layer) {
      std::vector<u32> muls;
      for (u32 id : c_.layers[layer])
        if (c_.gate(id).op == GateOp::Mul) muls.push_back(id);

      if (is_l2() && !muls.empty()) {
        std::vector<RingElement> t2s, m2s;
        for (u32 id : muls) {
          const Gate& g = c_.gate(id);
          RingElement t2 = a3c_[g.a] * x2c_[g.b] + a3c_[g.b] * x2c_[g.a] + pad(id);
          t2s.push_back(t2);
          m2s.push_back(t2 - x2c_[id]);
        }
        net_.send(
            make_element_msg(me_, cfg_.l3, Phase::Online, MsgType::MulOnM2, layer, m2s, k_, muls));
        auto m3s = expect_elems(cfg_.l3, MsgType::MulOnM3, layer, muls.size());
        for (size_t i = 0; i < muls.size(); ++i) a3c_[muls[i]] = m3s[i] - t2s[i];
      }
      if (is_l3() && !muls.empty()) {
        std::vector<RingElement> t3s, m3s;
        for (u32 id : muls) {
          const Gate& g = c_.gate(id);
          RingElement t3 = a2c_[g.a] * a2c_[g.b] + m1.at(id);
          t3s.push_back(t3);
          m3s.push_back(t3 + x3c_[id]);
        }
        net_.send(
            make_element_msg(me_, cfg_.l2, Phase::Online, MsgType::MulOnM3, layer, m3s, k_, muls));
        auto m2s = expect_elems(cfg_.l2, MsgType::MulOnM2, layer, muls.size());
        for (size_t i = 0; i < muls.size(); ++i) a2c_[muls[i]] = t3s[i] - m2s[i];
      }

      // Linear gates can read same-layer products, so they settle after the
      // exchange, in gate order.
      for (u32 id : c_.layers[layer]) {
        const Gate& g = c_.gate(id);
        auto lin = [&](std::vector<RingElement>& col) {
          switch (g.op) {
            case GateOp::Add: col[id] = col[g.a] + col[g.b]; break;
            case GateOp::ConstAdd: col[id] = col[g.a] + RingElement(g.cval, k_); break;
            case GateOp::ConstMul: col[id] = col[g.a] * RingElement(g.cval, k_); break;
            default: break;
          }
        };
        if (g.op == GateOp::Mul) continue;
        if (is_l2()) lin(a3c_);
        if (is_l3()) lin(a2c_);
      }
    }
  }

  std::map<u32, u64> open() {
    std::map<u32, u64> result;
    const u32 step = c_.depth + 1;
    auto to_l1 = outputs_for(c_, cfg_.l1);
    auto to_l2 = outputs_for(c_, cfg_.l2);
    auto to_l3 = outputs_for(c_, cfg_.l3);

    auto send_wires = [&](PartyId to, const std::vector<u32>& outs,
                          const std::vector<RingElement>& src) {
      if (outs.empty()) return;
      auto ws = wires(outs);
      std::vector<RingElement> batch;
      for (u32 w : ws) batch.push_back(src[w]);
      net_.send(make_element_msg(me_, to, Phase::Online, MsgType::OpenMask, step, batch, k_, ws));
    };
    if (is_l3()) {
      send_wires(cfg_.l1, to_l1, a2c_);
      send_wires(cfg_.l2, to_l2, a2c_);
    }
    if (is_l1()) send_wires(cfg_.l3, to_l3, x2c_);
    if (is_l2()) send_wires(cfg_.l3, to_l3, x2c_);

    auto my_outs = is_l1() ? to_l1 : (is_l2() ? to_l2 : to_l3);
    if (my_outs.empty()) return result;
    if (is_l1() || is_l2()) {
      auto a2s = expect_elems(cfg_.l3, MsgType::OpenMask, step, my_outs.size());
      for (size_t i = 0; i < my_outs.size(); ++i)
        result[my_outs[i]] = (a2s[i] - x2c_[c_.gate(my_outs[i]).a]).v;
    } else {
      auto xa = expect_elems(cfg_.l1, MsgType::OpenMask, step, my_outs.size());
      auto xb = expect_elems(cfg_.l2, MsgType::OpenMask, step, my_outs.size());
      for (size_t i = 0; i < my_outs.size(); ++i) {
        if (xa[i].v != xb[i].v) throw ProtocolAbort("mask holders disagree while opening");
        result[my_outs[i]] = (a2c_[c_.gate(my_outs[i]).a] - xa[i]).v;
      }
    }
    return result;
  }

  const Circuit& c_;
  Transport& net_;
  RandomnessProvider& rng_;
  ContinuationConfig cfg_;
  const Engine4::Snapshot& snap_;
  PartyId me_;
  int k_;
  std::vector<RingElement> x2c_, x3c_, a2c_, a3c_;
  std::array<int, 5> status_seen_ = {-1, -1, -1, -1, -1};
};

// Receives the outputs a successful continuation pushes to the party it
// excluded. The two mask copies must agree before anything is returned.
inline std::map<u32, u64> god_receive_delivery(const Circuit& c, Transport& net,
                                               const ContinuationConfig& cfg) {
  std::map<u32, u64> result;
  auto outs = outputs_for(c, cfg.eliminated);
  if (outs.empty()) return result;
  const u32 step = kGodDeliverStep + cfg.reset;
  auto take = [&](PartyId from) {
    Message m = net.recv_expect(from, MsgType::OpenMask, step);
    return decode_elements(m.payload, c.k, outs.size());
  };
  auto xa = take(cfg.l1);
  auto xb = take(cfg.l2);
  auto a2 = take(cfg.l3);
  for (size_t i = 0; i < outs.size(); ++i) {
    if (xa[i].v != xb[i].v) throw ProtocolAbort("delivered mask copies disagree");
    result[outs[i]] = (a2[i] - xa[i]).v;
  }
  return result;
}

using GodWrap = std::function<std::unique_ptr<Transport>(u32 attempt, PartyId me, Transport& raw)>;

struct GodOutcome {
  std::map<u32, u64> outputs;
  u32 resets = 0;
  bool recovered = false;  // outputs came from a continuation, not the first run
  std::string error;
  bool ok() const { return error.empty(); }
};

// Runs one party through the four-party protocol with guaranteed delivery:
// on a checkpoint abort, walk the elimination order, each attempt on its
// own network, until a continuation both finishes and is confirmed by the
// status round. `nets[0]` carries the first attempt, `nets[r]` reset r.
inline GodOutcome god_party(const Circuit& c, PartyId me, const std::map<u32, u64>& my_inputs,
                            std::array<SimNetwork, 5>& nets, RandomnessProvider& rng,
                            Engine4::Options opts = {}, const GodWrap& wrap = {}) {
  if (opts.fair)
    throw UsageError("fair opening and guaranteed delivery cannot be combined");

  std::vector<std::unique_ptr<Transport>> held;
  auto endpoint = [&](u32 attempt) -> Transport& {
    Transport& raw = nets[attempt].endpoint(me);
    if (!wrap) return raw;
    auto deco = wrap(attempt, me, raw);
    if (!deco) return raw;
    held.push_back(std::move(deco));
    return *held.back();
  };

  GodOutcome out;
  Engine4 eng(c, endpoint(0), rng, opts);
  try {
    out.outputs = eng.run(my_inputs);
    return out;
  } catch (const CheckpointAbort&) {
  }
  const Engine4::Snapshot& snap = eng.snapshot();
  if (!snap.valid) throw ProtocolAbort("recovery needs a verified checkpoint");

  for (u32 reset = 1; reset <= 4; ++reset) {
    out.resets = reset;
    auto cfg = continuation_config(reset);
    Transport& t = endpoint(reset);
    const u32 status_step = kGodStatusStep + reset;

    auto drain_status = [&](PartyId from) -> u8 {
      for (;;) {
        Message m = t.recv(from);
        if (m.type == MsgType::GodControl && m.step == status_step)
          return m.payload.empty() ? 0 : m.payload[0];
      }
    };

    if (me == cfg.eliminated) {
      bool all_ok = true;
      for (PartyId p : {cfg.l1, cfg.l2, cfg.l3}) all_ok &= drain_status(p) == 1;
      if (!all_ok) continue;
      out.outputs = god_receive_delivery(c, t, cfg);
      out.recovered = true;
      return out;
    }

    auto ce = std::make_unique<ContinueEngine3>(c, t, rng, cfg, snap);
    u8 status = 1;
    std::map<u32, u64> got;
    try {
      got = ce->run();
    } catch (const std::exception&) {
      status = 0;
    }
    for (PartyId p : {cfg.l1, cfg.l2, cfg.l3, cfg.eliminated}) {
      if (p == me) continue;
      Message m;
      m.from = me;
      m.to = p;
      m.phase = Phase::Online;
      m.type = MsgType::GodControl;
      m.step = status_step;
      m.payload = {status};
      t.send(std::move(m));
    }
    bool all_ok = status == 1;
    for (PartyId p : {cfg.l1, cfg.l2, cfg.l3}) {
      if (p == me) continue;
      int seen = ce->statuses_seen()[party_index(p)];
      all_ok &= (seen >= 0 ? seen : drain_status(p)) == 1;
    }
    if (!all_ok) continue;
    ce->deliver();
    out.outputs = std::move(got);
    out.recovered = true;
    return out;
  }
  throw ProtocolAbort("recovery exhausted all configurations");
}

inline std::map<PartyId, GodOutcome> god_run(const Circuit& c, const PartyInputs& inputs,
                                             std::array<SimNetwork, 5>& nets, u64 seed,
                                             Engine4::Options opts = {}, const GodWrap& wrap = {}) {
  std::array<GodOutcome, 5> slots;
  auto runs = run_parties(parties4(c), [&](PartyId p, MulMeter&) {
    KeyedRandomness rng(seed, p);
    auto it = inputs.find(p);
    slots[party_index(p)] =
        god_party(c, p, it == inputs.end() ? std::map<u32, u64>{} : it->second, nets, rng, opts,
                  wrap);
    return slots[party_index(p)].outputs;
  });
  std::map<PartyId, GodOutcome> out;
  for (auto& [p, r] : runs) {
    GodOutcome g = std::move(slots[party_index(p)]);
    if (!r.ok()) g.error = r.error;
    out.emplace(p, std::move(g));
  }
  return out;
}

}  // namespace hetmpc
