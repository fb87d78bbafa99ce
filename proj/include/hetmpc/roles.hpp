#pragma once

#include <algorithm>

#include "hetmpc/runner.hpp"

namespace hetmpc {

// Network homogenization. The base engines pin each protocol role to one
// party, so their per-channel traffic is wildly uneven. Two schedulers
// flatten it: run_permuted* executes one independent instance per role
// assignment, so over the whole batch every physical channel carries every
// logical channel's load equally often; RotationEngine4 instead reassigns
// the three evaluator roles per multiplication inside a single instance.

// All assignments of logical roles to physical parties, lexicographic.
// Entry r of an assignment is the physical party playing role r.
inline std::vector<std::vector<PartyId>> permutation_schedule(int n_parties) {
  if (n_parties != 3 && n_parties != 4) throw UsageError("role schedules cover 3 or 4 parties");
  std::vector<PartyId> assign;
  for (int i = 0; i < n_parties; ++i) assign.push_back(static_cast<PartyId>(i));
  std::vector<std::vector<PartyId>> out;
  do {
    out.push_back(assign);
  } while (std::next_permutation(assign.begin(), assign.end()));
  return out;
}

// The logical role a physical party plays, and its inverse. The outsider
// dealer never takes part in a schedule and maps to itself.
inline PartyId role_of(PartyId phys, const std::vector<PartyId>& assign) {
  if (phys == PartyId::Outsider) return PartyId::Outsider;
  for (size_t r = 0; r < assign.size(); ++r)
    if (assign[r] == phys) return static_cast<PartyId>(r);
  throw UsageError("party " + party_name(phys) + " has no role in this assignment");
}

inline PartyId party_of(PartyId logical, const std::vector<PartyId>& assign) {
  if (logical == PartyId::Outsider) return PartyId::Outsider;
  size_t r = static_cast<size_t>(party_index(logical));
  if (r >= assign.size())
    throw UsageError("role " + party_name(logical) + " is outside this assignment");
  return assign[r];
}

// Rewrites owners and recipients into role space so an unmodified engine
// can run the instance: the engine sees logical parties throughout, and the
// transport below translates at the network boundary.
inline Circuit map_circuit(const Circuit& c, const std::vector<PartyId>& assign) {
  Circuit out = c;
  for (Gate& g : out.gates) {
    if (g.op == GateOp::Input) g.owner = role_of(g.owner, assign);
    if (g.op == GateOp::Output && g.recipients != kOutputAll) {
      u8 r = 0;
      for (int i = 0; i < 4; ++i)
        if (g.recipients & (1u << i))
          r |= static_cast<u8>(1u << party_index(role_of(static_cast<PartyId>(i), assign)));
      g.recipients = r;
    }
  }
  return out;
}

// Tape access for a role-mapped engine. Engines name keysets by logical
// party; the physical party's master tapes are keyed by physical identity,
// so each set membership bit is translated before the draw. Instances are
// separated by the engine's own instance counter, not here.
class MappedRandomness : public RandomnessProvider {
 public:
  MappedRandomness(RandomnessProvider& inner, std::vector<PartyId> assign)
      : inner_(inner), assign_(std::move(assign)) {}

  u64 draw_raw(Keyset ks, u32 purp, u32 gate, u32 instance) override {
    Keyset phys = 0;
    for (int i = 0; i < 5; ++i)
      if (ks & (1u << i))
        phys |= static_cast<Keyset>(1u << party_index(party_of(static_cast<PartyId>(i), assign_)));
    return inner_.draw_raw(phys, purp, gate, instance);
  }

 private:
  RandomnessProvider& inner_;
  std::vector<PartyId> assign_;
};

// Endpoint adapter for a role-mapped engine: me() reports the logical
// role, addresses are translated on the way out and back in. Payloads and
// step numbers pass through untouched.
class MappedTransport : public Transport {
 public:
  MappedTransport(Transport& inner, std::vector<PartyId> assign, PartyId logical_me)
      : inner_(inner), assign_(std::move(assign)), me_(logical_me) {}

  PartyId me() const override { return me_; }

  void send(Message m) override {
    m.from = party_of(m.from, assign_);
    m.to = party_of(m.to, assign_);
    inner_.send(std::move(m));
  }

  Message recv(PartyId from) override {
    Message m = inner_.recv(party_of(from, assign_));
    m.from = role_of(m.from, assign_);
    m.to = role_of(m.to, assign_);
    return m;
  }

 private:
  Transport& inner_;
  std::vector<PartyId> assign_;
  PartyId me_;
};

// Channel totals across scheduler instances. Steps are unioned, so the
// per-instance round structure stays visible; element and byte counts add.
inline void merge_into(PhaseMetrics& into, const PhaseMetrics& from) {
  into.elements += from.elements;
  into.bytes += from.bytes;
  into.messages += from.messages;
  into.steps.insert(from.steps.begin(), from.steps.end());
}

inline void merge_into(ChannelMetrics& into, const ChannelMetrics& from) {
  for (int ph = 0; ph < 2; ++ph) {
    merge_into(into.total[ph], from.total[ph]);
    for (const auto& [type, pm] : from.by_type[ph]) merge_into(into.by_type[ph][type], pm);
  }
}

using ChannelTotals = std::map<ChannelKey, ChannelMetrics>;

inline void merge_into(ChannelTotals& into, const MetricsBoard& from) {
  for (const auto& [key, cm] : from.all()) merge_into(into[key], cm);
}

struct PermutedOutcome {
  std::vector<std::map<PartyId, PartyRun>> instances;  // keyed by physical party
  ChannelTotals channels;                              // physical channels, summed
};

namespace detail {

// One full protocol run per role assignment. Instances run one after the
// other on fresh simulated networks: channels are strict FIFO queues, so
// interleaving two instances on one network would make receive order
// depend on thread timing.
template <class Body>
PermutedOutcome run_schedule(const Circuit& c, const std::vector<PartyId>& parties, int n_roles,
                             const Body& body) {
  PermutedOutcome out;
  const auto schedule = permutation_schedule(n_roles);
  for (size_t i = 0; i < schedule.size(); ++i) {
    const auto& assign = schedule[i];
    const Circuit lc = map_circuit(c, assign);
    SimNetwork net;
    out.instances.push_back(run_parties(parties, [&](PartyId p, MulMeter& meter) {
      return body(lc, net, assign, static_cast<u32>(i + 1), p, meter);
    }));
    merge_into(out.channels, net.board);
  }
  return out;
}

}  // namespace detail

inline PermutedOutcome run_permuted3(const Circuit& c, const PartyInputs& inputs,
                                     const RngFactory& rng_of) {
  return detail::run_schedule(
      c, parties3(c), 3,
      [&](const Circuit& lc, SimNetwork& net, const std::vector<PartyId>& assign, u32 instance,
          PartyId p, MulMeter& meter) {
        auto rng = rng_of(p);
        MappedRandomness mrng(*rng, assign);
        MappedTransport link(net.endpoint(p), assign, role_of(p, assign));
        Engine3 eng(lc, link, mrng, instance);
        auto it = inputs.find(p);
        auto out = eng.run(it == inputs.end() ? std::map<u32, u64>{} : it->second);
        meter = eng.meter;
        return out;
      });
}

inline PermutedOutcome run_permuted3(const Circuit& c, const PartyInputs& inputs, u64 seed) {
  return run_permuted3(c, inputs, keyed_rng(seed));
}

inline PermutedOutcome run_permuted4(const Circuit& c, const PartyInputs& inputs,
                                     const RngFactory& rng_of, Engine4::Options opts = {}) {
  if (opts.fair) throw UsageError("fair opening is not available under role schedules");
  return detail::run_schedule(
      c, parties4(c), 4,
      [&](const Circuit& lc, SimNetwork& net, const std::vector<PartyId>& assign, u32 instance,
          PartyId p, MulMeter& meter) {
        auto rng = rng_of(p);
        MappedRandomness mrng(*rng, assign);
        MappedTransport link(net.endpoint(p), assign, role_of(p, assign));
        Engine4::Options io = opts;
        io.instance = instance;
        Engine4 eng(lc, link, mrng, io);
        auto it = inputs.find(p);
        auto out = eng.run(it == inputs.end() ? std::map<u32, u64>{} : it->second);
        meter = eng.meter;
        return out;
      });
}

inline PermutedOutcome run_permuted4(const Circuit& c, const PartyInputs& inputs, u64 seed,
                                     Engine4::Options opts = {}) {
  return run_permuted4(c, inputs, keyed_rng(seed), opts);
}

// Evaluator roles per multiplication under gate rotation. Starting from
// the plain assignment, the holders of roles 1 and 2 swap after each
// even-indexed gate and the holders of roles 2 and 3 after each odd one;
// the walk has period six, every party plays every role twice per period,
// and each ordered evaluator pair carries each directed message kind
// exactly once per period.
inline std::array<PartyId, 3> rotation_roles(u32 mul_index) {
  static constexpr std::array<std::array<PartyId, 3>, 6> table{{
      {PartyId::P1, PartyId::P2, PartyId::P3},
      {PartyId::P2, PartyId::P1, PartyId::P3},
      {PartyId::P2, PartyId::P3, PartyId::P1},
      {PartyId::P3, PartyId::P2, PartyId::P1},
      {PartyId::P3, PartyId::P1, PartyId::P2},
      {PartyId::P1, PartyId::P3, PartyId::P2},
  }};
  return table[mul_index % 6];
}

// Which party's component blinds p's masked value when a wire sits in
// coordinates r: role 3's component masks roles 1 and 2, role 2's masks
// role 3.
inline PartyId mask_holder(PartyId p, const std::array<PartyId, 3>& r) {
  return p == r[2] ? r[1] : r[2];
}

inline int role_pos(PartyId p, const std::array<PartyId, 3>& r) {
  for (int i = 0; i < 3; ++i)
    if (r[i] == p) return i;
  return -1;
}

// Four-party evaluation with the evaluator roles rotating per
// multiplication. State per wire is the same replicated masking as the
// plain engine, but expressed in the coordinates of whichever role triple
// produced the wire: each evaluator keeps one mask component and a masked
// value, P4 keeps all three components keyed by party.
//
// A wire produced under one role triple and consumed under another has to
// be re-expressed first. Over Z_2 this is free: components sum to zero, so
// relabeling roles only changes which component masks whom, and a party
// whose masker changes adds its own component to its masked value. For
// wider rings the components themselves must move between parties, so P4
// deals a fresh component triple from pair seeds and sends each evaluator
// the blinded difference between its new and old mask in one offline
// batch. The difference is uniform to its receiver (one of the two seeds
// behind the new mask excludes it), and a tampered difference shifts that
// evaluator's later messages, which the per-gate invariant comparison at
// the next checkpoint catches.
//
// m3' cannot be deferred here the way the plain engine defers it: every
// evaluator is the cross-term role for a third of the gates and later
// gates consume those wires, so role 3 sends it alongside m3 each layer.
class RotationEngine4 {
 public:
  using Options = Engine4Options;

  RotationEngine4(const Circuit& c, Transport& net, RandomnessProvider& rng, Options opts = {})
      : c_(c), net_(net), rng_(rng), opts_(opts), me_(net.me()), k_(c.k) {
    if (opts_.fair) throw UsageError("fair opening is not available under gate rotation");
    if (opts_.checkpoint_interval == 0) opts_.checkpoint_interval = 1;
    for (u32 id : c_.outputs) {
      u8 r = c_.gate(id).recipients;
      if (r != kOutputAll && (r & ~u8{0b1111}))
        throw UsageError("output recipient outside {P1,P2,P3,P4}");
    }
    const RingElement zero(0, k_);
    const size_t n = c_.gates.size();
    comp_.assign(n, zero);
    mval_.assign(n, zero);
    compA_.assign(n, zero);
    compB_.assign(n, zero);
    compOut_.assign(n, zero);
    mvalA_.assign(n, zero);
    mvalB_.assign(n, zero);
    o1_.assign(n, zero);
    o4_.assign(n, zero);
    prodc_.assign(n, zero);
    if (me_ == PartyId::P4)
      for (auto& col : comps4_) col.assign(n, zero);
    if (me_ == PartyId::Outsider) {
      x2o_.assign(n, zero);
      x3o_.assign(n, zero);
    }
    muls_by_layer_.resize(c_.depth + 1);
    for (const auto& layer : c_.layers)
      for (u32 id : layer)
        if (c_.gate(id).op == GateOp::Mul) muls_by_layer_[c_.gate(id).layer].push_back(id);
    plan();
  }

  MulMeter meter;

  std::map<u32, u64> run(const std::map<u32, u64>& my_inputs) {
    check_inputs(my_inputs);
    try {
      meter.phase = MulPhase::Offline;
      offline();
      meter.phase = MulPhase::Online;
      share_inputs(my_inputs);
      if (me_ == PartyId::Outsider) return {};
      checkpoint();  // validates input sharing before any layer runs
      online();
      return open_secure();
    } catch (const CheckpointAbort&) {
      throw;  // status round already ran; peers abort in lockstep
    } catch (const ProtocolAbort&) {
      notify_abort();
      throw;
    }
  }

  const ViewLog& views() const { return views_; }
  u32 realign_count() const { return site_count_; }

 private:
  // A consumption site where a wire changes coordinates. Sites are fully
  // determined by the circuit, so every party derives the same ordered
  // list and P4's blinded differences can be consumed by position.
  struct AlignSite {
    u32 wire;
    std::array<PartyId, 3> from, to;
    u32 ordinal;
  };

  struct Batch {
    std::vector<RingElement> vals;
    std::vector<u32> ids;
  };

  bool is_eval() const {
    return me_ == PartyId::P1 || me_ == PartyId::P2 || me_ == PartyId::P3;
  }
  bool is_p4() const { return me_ == PartyId::P4; }

  std::array<PartyId, 3> peers() const {
    std::array<PartyId, 3> out{};
    size_t n = 0;
    for (PartyId p : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4})
      if (p != me_) out[n++] = p;
    return out;
  }

  static kset4::TripleSets role_triples(const std::array<PartyId, 3>& r) {
    return {keyset_of({r[0], r[1], PartyId::P4}), keyset_of({r[0], r[2], PartyId::P4}),
            keyset_of({r[1], r[2], PartyId::P4})};
  }

  RingElement draw(Keyset ks, u32 purp, u32 gate, u32 inst) {
    return rng_.draw(ks, purp, gate, inst, k_);
  }
  RingElement pad12(u32 gate, const std::array<PartyId, 3>& r) {
    return draw(keyset_of({r[0], r[1], PartyId::P4}), purpose::MulPad, gate, opts_.instance);
  }
  RingElement pad23(u32 gate, const std::array<PartyId, 3>& r) {
    return draw(keyset_of({r[1], r[2], PartyId::P4}), purpose::MulPad, gate, opts_.instance);
  }

  // Component of role `pos` from the pair seeds of a triple; the same
  // derivation covers wire masks and realignment refreshes.
  RingElement triple_comp(int pos, const kset4::TripleSets& ts, u32 purp, u32 id, u32 inst) {
    switch (pos) {
      case 0: return draw(ts.s124, purp, id, inst) - draw(ts.s134, purp, id, inst);
      case 1: return draw(ts.s234, purp, id, inst) + draw(ts.s124, purp, id, inst);
      default: return draw(ts.s134, purp, id, inst) + draw(ts.s234, purp, id, inst);
    }
  }

  // Realign tapes are salted with the site ordinal; the shift keeps them
  // disjoint across scheduler instances for circuits under 64k sites.
  u32 realign_instance(u32 ordinal) const { return (opts_.instance << 16) + ordinal; }

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

  // Simulates the coordinate walk once up front. Both protocol passes and
  // the coordinate bookkeeping follow one canonical order: layer by layer,
  // multiplications in id order, then the remaining gates in id order.
  // After planning, coords_ holds each wire's final coordinates, which is
  // what the opening phase routes by.
  void plan() {
    const std::array<PartyId, 3> ident{PartyId::P1, PartyId::P2, PartyId::P3};
    coords_.assign(c_.gates.size(), ident);
    pre_.assign(c_.gates.size(), {});
    u32 ordinal = 0;
    auto align = [&](u32 gate, u32 w, const std::array<PartyId, 3>& to) {
      if (coords_[w] == to) return;
      pre_[gate].push_back({w, coords_[w], to, ordinal++});
      coords_[w] = to;
    };
    for (const auto& layer : c_.layers) {
      for (u32 id : layer) {
        const Gate& g = c_.gate(id);
        if (g.op != GateOp::Mul) continue;
        const auto to = rotation_roles(g.mul_index);
        align(id, g.a, to);
        align(id, g.b, to);
        coords_[id] = to;
      }
      for (u32 id : layer) {
        const Gate& g = c_.gate(id);
        switch (g.op) {
          case GateOp::Add:
            align(id, g.b, coords_[g.a]);
            coords_[id] = coords_[g.a];
            break;
          case GateOp::ConstAdd:
          case GateOp::ConstMul: coords_[id] = coords_[g.a]; break;
          default: break;
        }
      }
    }
    site_count_ = ordinal;
  }

  // Component side of one site, walked during the offline pass. P4 deals
  // the fresh triple, banks each evaluator's blinded mask difference for
  // the one offline batch, and advances its own component table.
  void advance_comps(const AlignSite& s) {
    if (k_ == 1) return;  // width-1 components never move; relabeling is free
    const auto ts = role_triples(s.to);
    const u32 inst = realign_instance(s.ordinal);
    if (is_p4()) {
      std::array<RingElement, 3> fresh{RingElement(0, k_), RingElement(0, k_),
                                       RingElement(0, k_)};
      for (int r = 0; r < 3; ++r) fresh[r] = triple_comp(r, ts, purpose::Realign, s.wire, inst);
      for (PartyId e : {PartyId::P1, PartyId::P2, PartyId::P3}) {
        PartyId oldm = mask_holder(e, s.from), newm = mask_holder(e, s.to);
        auto& out = delta_out_[party_index(e)];
        out.vals.push_back(fresh[role_pos(newm, s.to)] - comps4_[party_index(oldm)][s.wire]);
        out.ids.push_back(s.wire);
      }
      for (int r = 0; r < 3; ++r) comps4_[party_index(s.to[r])][s.wire] = fresh[r];
    } else {
      comp_[s.wire] = triple_comp(role_pos(me_, s.to), ts, purpose::Realign, s.wire, inst);
    }
  }

  // Value side of one site, walked during the online pass. Over Z_2 a
  // masker change is absorbed locally; otherwise the component draw is
  // replayed and the banked difference from P4 moves the masked value.
  void advance_vals(const AlignSite& s) {
    if (k_ == 1) {
      if (mask_holder(me_, s.from) != mask_holder(me_, s.to))
        mval_[s.wire] = mval_[s.wire] + comp_[s.wire];
      return;
    }
    comp_[s.wire] = triple_comp(role_pos(me_, s.to), role_triples(s.to), purpose::Realign,
                                s.wire, realign_instance(s.ordinal));
    mval_[s.wire] = mval_[s.wire] + delta_in_.at(delta_pos_++);
  }

  // Mask derivation and cross terms. Everything walks the canonical order
  // so component state at each gate matches what the online pass will see.
  void offline() {
    if (me_ == PartyId::Outsider) {
      for (u32 id : inputs_of(me_)) {
        x2o_[id] = draw(kset4::outsider.s234, purpose::WireMask, id, opts_.instance) +
                   draw(kset4::outsider.s124, purpose::WireMask, id, opts_.instance);
        x3o_[id] = draw(kset4::outsider.s134, purpose::WireMask, id, opts_.instance) +
                   draw(kset4::outsider.s234, purpose::WireMask, id, opts_.instance);
      }
      return;
    }

    // Input masks in plain coordinates, then the dealer pickup of the
    // counterpart component, exactly as in the plain engine. The walk
    // below may realign input wires, so every sharing-time component is
    // used from a snapshot taken here.
    for (u32 id : c_.inputs) {
      const auto& ts = c_.gate(id).owner == PartyId::Outsider ? kset4::outsider : kset4::plain;
      if (is_p4())
        for (int r = 0; r < 3; ++r)
          comps4_[r][id] = triple_comp(r, ts, purpose::WireMask, id, opts_.instance);
      else
        comp_[id] = triple_comp(party_index(me_), ts, purpose::WireMask, id, opts_.instance);
    }

    auto p1_ids = inputs_of(PartyId::P1);
    auto p2_ids = inputs_of(PartyId::P2);
    auto p3_ids = inputs_of(PartyId::P3);
    auto send_xfer = [&](PartyId to, const std::vector<u32>& ids) {
      if (ids.empty()) return;
      std::vector<RingElement> batch;
      for (u32 id : ids) batch.push_back(comp_[id]);
      net_.send(make_element_msg(me_, to, Phase::Offline, MsgType::ShareMask, 0, batch, k_, ids));
    };
    if (me_ == PartyId::P3) {
      send_xfer(PartyId::P1, p1_ids);
      send_xfer(PartyId::P2, p2_ids);
    }
    if (me_ == PartyId::P2) send_xfer(PartyId::P3, p3_ids);

    auto recv_xfer = [&](PartyId from, const std::vector<u32>& ids) {
      if (ids.empty()) return;
      auto batch = expect_elems(from, MsgType::ShareMask, 0, ids.size());
      for (size_t i = 0; i < ids.size(); ++i) {
        xfer_in_[ids[i]] = batch[i];
        views_.log(PartyId::P4, ViewTag::MaskXfer, ids[i], batch[i]);
      }
    };
    if (me_ == PartyId::P1) recv_xfer(PartyId::P3, p1_ids);
    if (me_ == PartyId::P2) recv_xfer(PartyId::P3, p2_ids);
    if (me_ == PartyId::P3) recv_xfer(PartyId::P2, p3_ids);
    if (is_p4()) {
      for (u32 id : p1_ids) views_.log(PartyId::P1, ViewTag::MaskXfer, id, comps4_[2][id]);
      for (u32 id : p2_ids) views_.log(PartyId::P2, ViewTag::MaskXfer, id, comps4_[2][id]);
      for (u32 id : p3_ids) views_.log(PartyId::P3, ViewTag::MaskXfer, id, comps4_[1][id]);
    }

    incomp_ = comp_;
    if (is_p4()) {
      incomp4_ = comps4_;
      o1log_.assign(c_.gates.size(), RingElement(0, k_));
    }

    std::array<Batch, 3> o1_out, o4_out;
    for (u32 ln = 0; ln <= c_.depth; ++ln) {
      for (u32 id : muls_by_layer_[ln]) {
        const Gate& g = c_.gate(id);
        for (const AlignSite& s : pre_[id]) advance_comps(s);
        const auto roles = rotation_roles(g.mul_index);
        const auto ts = role_triples(roles);
        if (is_p4()) {
          const int i1 = party_index(roles[0]), i2 = party_index(roles[1]),
                    i3 = party_index(roles[2]);
          // The o1 recompute is banked and logged after the walk in the
          // receiver's per-sender order, so both sides of the (P4, role 3)
          // pair append identical streams.
          o1log_[id] = RingElement(0, k_) - meter.mul(comps4_[i1][g.a], comps4_[i1][g.b]) -
                       pad12(id, roles);
          auto& out = o4_out[i1];
          out.vals.push_back(meter.mul(comps4_[i2][g.a], comps4_[i2][g.b]) -
                             meter.mul(comps4_[i3][g.a], comps4_[i3][g.b]) - pad23(id, roles));
          out.ids.push_back(id);
          for (int r = 0; r < 3; ++r)
            comps4_[party_index(roles[r])][id] =
                triple_comp(r, ts, purpose::WireMask, id, opts_.instance);
        } else {
          compA_[id] = comp_[g.a];
          compB_[id] = comp_[g.b];
          prodc_[id] = meter.mul(comp_[g.a], comp_[g.b]);
          const int pos = role_pos(me_, roles);
          if (pos == 0) {
            auto& out = o1_out[party_index(roles[2])];
            out.vals.push_back(RingElement(0, k_) - prodc_[id] - pad12(id, roles));
            out.ids.push_back(id);
          }
          comp_[id] = triple_comp(pos, ts, purpose::WireMask, id, opts_.instance);
          compOut_[id] = comp_[id];
        }
      }
      for (u32 id : c_.layers[ln]) {
        const Gate& g = c_.gate(id);
        switch (g.op) {
          case GateOp::Add:
            for (const AlignSite& s : pre_[id]) advance_comps(s);
            if (is_p4())
              for (int r = 0; r < 3; ++r) comps4_[r][id] = comps4_[r][g.a] + comps4_[r][g.b];
            else
              comp_[id] = comp_[g.a] + comp_[g.b];
            break;
          case GateOp::ConstAdd:
            if (is_p4())
              for (int r = 0; r < 3; ++r) comps4_[r][id] = comps4_[r][g.a];
            else
              comp_[id] = comp_[g.a];
            break;
          case GateOp::ConstMul: {
            const RingElement cv(g.cval, k_);
            if (is_p4())
              for (int r = 0; r < 3; ++r) comps4_[r][id] = meter.mul(cv, comps4_[r][g.a]);
            else
              comp_[id] = meter.mul(cv, comp_[g.a]);
            break;
          }
          default: break;
        }
      }
    }

    // One offline batch per populated channel: realign differences first
    // on the P4 channels, then the cross terms. Receive order mirrors the
    // send order, channels being FIFO.
    if (is_p4()) {
      for (PartyId e : {PartyId::P1, PartyId::P2, PartyId::P3})
        for (PartyId s : {PartyId::P1, PartyId::P2, PartyId::P3}) {
          if (s == e) continue;
          for (u32 id : mul_pair(s, 0, e, 2)) views_.log(e, ViewTag::OffO1, id, o1log_[id]);
        }
      for (PartyId e : {PartyId::P1, PartyId::P2, PartyId::P3}) {
        auto& dd = delta_out_[party_index(e)];
        if (k_ > 1 && !dd.ids.empty())
          net_.send(make_element_msg(me_, e, Phase::Offline, MsgType::Realign, 0, dd.vals, k_,
                                     dd.ids));
        auto& oo = o4_out[party_index(e)];
        if (!oo.ids.empty())
          net_.send(
              make_element_msg(me_, e, Phase::Offline, MsgType::MulOffO4, 0, oo.vals, k_, oo.ids));
      }
      return;
    }

    for (PartyId r : {PartyId::P1, PartyId::P2, PartyId::P3}) {
      auto& out = o1_out[party_index(r)];
      if (!out.ids.empty())
        net_.send(
            make_element_msg(me_, r, Phase::Offline, MsgType::MulOffO1, 0, out.vals, k_, out.ids));
    }

    if (k_ > 1 && site_count_ > 0)
      delta_in_ = expect_elems(PartyId::P4, MsgType::Realign, 0, site_count_);

    for (PartyId s : {PartyId::P1, PartyId::P2, PartyId::P3}) {
      if (s == me_) continue;
      auto ids = mul_pair(s, 0, me_, 2);
      if (ids.empty()) continue;
      auto batch = expect_elems(s, MsgType::MulOffO1, 0, ids.size());
      for (size_t i = 0; i < ids.size(); ++i) {
        o1_[ids[i]] = batch[i];
        views_.log(PartyId::P4, ViewTag::OffO1, ids[i], batch[i]);
      }
    }
    auto mine1 = mul_role(me_, 0);
    if (!mine1.empty()) {
      auto batch = expect_elems(PartyId::P4, MsgType::MulOffO4, 0, mine1.size());
      for (size_t i = 0; i < mine1.size(); ++i) o4_[mine1[i]] = batch[i];
    }
  }

  // Multiplication gates, layer-major, where a party plays role `pos`, or
  // where `s` plays `ps` and `r` plays `pr` on the same gate.
  std::vector<u32> mul_role(PartyId p, int pos) const {
    std::vector<u32> out;
    for (const auto& layer : muls_by_layer_)
      for (u32 id : layer)
        if (rotation_roles(c_.gate(id).mul_index)[pos] == p) out.push_back(id);
    return out;
  }
  std::vector<u32> mul_pair(PartyId s, int ps, PartyId r, int pr) const {
    std::vector<u32> out;
    for (const auto& layer : muls_by_layer_)
      for (u32 id : layer) {
        const auto roles = rotation_roles(c_.gate(id).mul_index);
        if (roles[ps] == s && roles[pr] == r) out.push_back(id);
      }
    return out;
  }

  // Input sharing is identical to the plain engine: input wires sit in
  // plain coordinates until their first rotated consumer realigns them.
  void share_inputs(const std::map<u32, u64>& my_inputs) {
    auto mine = inputs_of(me_);
    auto send_batch = [&](PartyId to, const std::vector<RingElement>& vals) {
      if (vals.empty()) return;
      net_.send(make_element_msg(me_, to, Phase::Online, MsgType::Share, 0, vals, k_, mine));
    };
    std::vector<RingElement> va3, va2;
    for (u32 id : mine) {
      RingElement v(my_inputs.at(id), k_);
      switch (me_) {
        case PartyId::P1:
          va3.push_back(v + xfer_in_.at(id));
          va2.push_back(v + incomp_[id] + xfer_in_.at(id));
          break;
        case PartyId::P2:
          va3.push_back(v + xfer_in_.at(id));
          va2.push_back(v + incomp_[id]);
          break;
        case PartyId::P3:
          va3.push_back(v + incomp_[id]);
          va2.push_back(v + xfer_in_.at(id));
          break;
        case PartyId::P4:
          va3.push_back(v + incomp4_[2][id]);
          va2.push_back(v + incomp4_[1][id]);
          break;
        case PartyId::Outsider:
          va3.push_back(v + x3o_[id]);
          va2.push_back(v + x2o_[id]);
          break;
      }
    }

    switch (me_) {
      case PartyId::P1:
        for (size_t i = 0; i < mine.size(); ++i) mval_[mine[i]] = va3[i];
        send_batch(PartyId::P2, va3);
        send_batch(PartyId::P3, va2);
        break;
      case PartyId::P2:
        for (size_t i = 0; i < mine.size(); ++i) mval_[mine[i]] = va3[i];
        send_batch(PartyId::P1, va3);
        send_batch(PartyId::P3, va2);
        break;
      case PartyId::P3:
        for (size_t i = 0; i < mine.size(); ++i) mval_[mine[i]] = va2[i];
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

    auto recv_from = [&](PartyId dealer) {
      auto ids = inputs_of(dealer);
      if (ids.empty()) return;
      auto batch = expect_elems(dealer, MsgType::Share, 0, ids.size());
      for (size_t i = 0; i < ids.size(); ++i) mval_[ids[i]] = batch[i];
    };
    if (me_ == PartyId::P1)
      for (PartyId d : {PartyId::P2, PartyId::P3, PartyId::P4, PartyId::Outsider}) recv_from(d);
    if (me_ == PartyId::P2)
      for (PartyId d : {PartyId::P1, PartyId::P3, PartyId::P4, PartyId::Outsider}) recv_from(d);
    if (me_ == PartyId::P3)
      for (PartyId d : {PartyId::P1, PartyId::P2, PartyId::P4, PartyId::Outsider}) recv_from(d);

    for (u32 id : c_.inputs) {
      if (me_ == PartyId::P1) {
        views_.log(PartyId::P2, ViewTag::ShareA3, id, mval_[id]);
        views_.log(PartyId::P3, ViewTag::ShareA2, id, mval_[id] + incomp_[id]);
      }
      if (me_ == PartyId::P2) views_.log(PartyId::P1, ViewTag::ShareA3, id, mval_[id]);
      if (me_ == PartyId::P3) views_.log(PartyId::P1, ViewTag::ShareA2, id, mval_[id]);
    }
  }

  void online() {
    u32 mul_layers_since = 0;
    for (u32 layer = 0; layer <= c_.depth; ++layer) {
      const auto& muls = muls_by_layer_[layer];
      if (!muls.empty() && is_eval()) mul_layer(layer, muls);
      if (is_eval()) {
        for (u32 id : c_.layers[layer]) {
          const Gate& g = c_.gate(id);
          switch (g.op) {
            case GateOp::Add:
              for (const AlignSite& s : pre_[id]) advance_vals(s);
              mval_[id] = mval_[g.a] + mval_[g.b];
              break;
            case GateOp::ConstAdd: mval_[id] = mval_[g.a] + RingElement(g.cval, k_); break;
            case GateOp::ConstMul: mval_[id] = meter.mul(RingElement(g.cval, k_), mval_[g.a]); break;
            default: break;
          }
        }
      }
      if (!muls.empty() && ++mul_layers_since == opts_.checkpoint_interval) {
        checkpoint();
        mul_layers_since = 0;
      }
    }
  }

  // One layer's exchange. Every evaluator may hold each role for some of
  // the layer's gates, so batches group by receiver; m2, m3 and m3' are
  // all send-before-receive, and each channel's receive order repeats the
  // fixed send order. Operand snapshots taken while building the batches
  // keep later same-layer realignments from bleeding into the updates.
  void mul_layer(u32 layer, const std::vector<u32>& muls) {
    std::array<Batch, 3> m2_out, m3_out, m3p_out;
    std::map<u32, RingElement> sent;

    for (u32 id : muls) {
      const Gate& g = c_.gate(id);
      for (const AlignSite& s : pre_[id]) advance_vals(s);
      mvalA_[id] = mval_[g.a];
      mvalB_[id] = mval_[g.b];
      const auto roles = rotation_roles(g.mul_index);
      switch (role_pos(me_, roles)) {
        case 1: {
          RingElement m2 =
              meter.mul(mvalA_[id], mvalB_[id]) + prodc_[id] + pad12(id, roles) + compOut_[id];
          sent[id] = m2;
          auto& out = m2_out[party_index(roles[2])];
          out.vals.push_back(m2);
          out.ids.push_back(id);
          break;
        }
        case 2: {
          RingElement m3 =
              meter.mul(mvalA_[id], mvalB_[id]) + o1_[id] + prodc_[id] + compOut_[id];
          sent[id] = m3;
          auto& out3 = m3_out[party_index(roles[1])];
          out3.vals.push_back(m3);
          out3.ids.push_back(id);
          auto& outp = m3p_out[party_index(roles[0])];
          outp.vals.push_back(meter.mul(mvalA_[id] - compA_[id], mvalB_[id] - compB_[id]) +
                              pad23(id, roles) + compOut_[id]);
          outp.ids.push_back(id);
          break;
        }
        default: break;  // role 1 of the gate only listens this layer
      }
    }

    auto flush = [&](std::array<Batch, 3>& outs, MsgType type) {
      for (int r = 0; r < 3; ++r)
        if (!outs[r].ids.empty())
          net_.send(make_element_msg(me_, static_cast<PartyId>(r), Phase::Online, type, layer,
                                     outs[r].vals, k_, outs[r].ids));
    };
    flush(m2_out, MsgType::MulOnM2);
    flush(m3_out, MsgType::MulOnM3);
    flush(m3p_out, MsgType::MulOnM3p);

    auto gates_in_layer = [&](PartyId s, int ps, int pr) {
      std::vector<u32> out;
      for (u32 id : muls) {
        const auto roles = rotation_roles(c_.gate(id).mul_index);
        if (roles[ps] == s && roles[pr] == me_) out.push_back(id);
      }
      return out;
    };

    // Each gate hands this party exactly one incoming value (m3 to role 2,
    // m2 to role 3, m3' to role 1). Receives are stored first and the
    // updates and view entries land afterwards in gate order: both members
    // of a log pair must append identical streams, and the sender grouping
    // of the batches differs between them.
    std::map<u32, RingElement> got;
    auto take = [&](int ps, int pr, MsgType type) {
      for (PartyId s : {PartyId::P1, PartyId::P2, PartyId::P3}) {
        if (s == me_) continue;
        auto ids = gates_in_layer(s, ps, pr);
        if (ids.empty()) continue;
        auto vals = expect_elems(s, type, layer, ids.size());
        for (size_t i = 0; i < ids.size(); ++i) got[ids[i]] = vals[i];
      }
    };
    take(1, 2, MsgType::MulOnM2);
    take(2, 1, MsgType::MulOnM3);
    take(2, 0, MsgType::MulOnM3p);

    for (u32 id : muls) {
      const auto roles = rotation_roles(c_.gate(id).mul_index);
      const RingElement in = got.at(id);
      switch (role_pos(me_, roles)) {
        case 0: {
          RingElement c3 = in - meter.mul(mvalA_[id], compB_[id]) -
                           meter.mul(mvalB_[id], compA_[id]) + o4_[id] - prodc_[id] - prodc_[id];
          RingElement v1 = meter.mul(mvalA_[id], mvalB_[id]) -
                           meter.mul(mvalA_[id] + compA_[id], mvalB_[id] + compB_[id]) + o4_[id] +
                           prodc_[id] + compOut_[id] + pad12(id, roles) + pad12(id, roles);
          mval_[id] = c3;
          views_.log(roles[1], ViewTag::MulV, id, v1);
          views_.log(roles[2], ViewTag::MulV, id, v1);
          views_.log(roles[1], ViewTag::MulC3, id, c3);
          break;
        }
        case 1: {
          RingElement c3 = in - meter.mul(mvalA_[id], compB_[id]) -
                           meter.mul(mvalB_[id], compA_[id]) + pad12(id, roles);
          RingElement v = sent.at(id) - in - pad23(id, roles);
          mval_[id] = c3;
          views_.log(roles[2], ViewTag::MulV, id, v);
          views_.log(roles[0], ViewTag::MulV, id, v);
          views_.log(roles[0], ViewTag::MulC3, id, c3);
          break;
        }
        default: {
          RingElement c2 = in - meter.mul(mvalA_[id], compB_[id]) -
                           meter.mul(mvalB_[id], compA_[id]) + o1_[id];
          RingElement v = in - sent.at(id) - pad23(id, roles);
          mval_[id] = c2;
          views_.log(roles[1], ViewTag::MulV, id, v);
          views_.log(roles[0], ViewTag::MulV, id, v);
          break;
        }
      }
    }
  }

  void checkpoint() {
    const u32 cp = next_checkpoint_++;
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
      if (m.payload.size() != mine.size() ||
          !std::equal(mine.begin(), mine.end(), m.payload.begin()))
        bad = true;
    }
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
    if (bad) throw CheckpointAbort(cp, 0);  // rotated runs carry no recovery snapshot
  }

  std::vector<u32> outputs_to(PartyId p) const {
    std::vector<u32> ids;
    for (u32 id : c_.outputs) {
      u8 r = c_.gate(id).recipients;
      if (r == kOutputAll || (r & (1u << party_index(p)))) ids.push_back(id);
    }
    return ids;
  }

  // Opens route by each wire's final coordinates: the evaluator whose
  // component masks the recipient sends that component, role 1 sends the
  // masked value P4 unmasks itself. A last digest round runs before
  // anything is treated as output.
  std::map<u32, u64> open_secure() {
    std::map<u32, u64> result;
    const u32 step = c_.depth + 1;

    std::array<Batch, 4> out;
    for (u32 oid : c_.outputs) {
      const Gate& og = c_.gate(oid);
      const u32 w = og.a;
      const auto& fin = coords_[w];
      for (int pi = 0; pi < 4; ++pi) {
        if (og.recipients != kOutputAll && !(og.recipients & (1u << pi))) continue;
        const PartyId p = static_cast<PartyId>(pi);
        if (p == PartyId::P4) {
          if (me_ == fin[0]) {
            out[3].vals.push_back(mval_[w]);
            out[3].ids.push_back(w);
          }
        } else if (is_eval() && me_ == mask_holder(p, fin)) {
          out[pi].vals.push_back(comp_[w]);
          out[pi].ids.push_back(w);
        }
      }
    }
    for (int pi = 0; pi < 4; ++pi)
      if (!out[pi].ids.empty())
        net_.send(make_element_msg(me_, static_cast<PartyId>(pi), Phase::Online, MsgType::OpenMask,
                                   step, out[pi].vals, k_, out[pi].ids));

    // Batches arrive grouped by sender, but the mirrored log entries must
    // land in one agreed order on both sides, so receive everything first
    // and then log in flat output order, x-component before masked value.
    std::map<u32, RingElement> got;
    auto to_me = outputs_to(is_p4() ? PartyId::P4 : me_);
    for (PartyId s : {PartyId::P1, PartyId::P2, PartyId::P3}) {
      if (s == me_) continue;
      std::vector<u32> from_s;
      for (u32 oid : to_me) {
        const auto& fin = coords_[c_.gate(oid).a];
        if ((is_p4() ? fin[0] : mask_holder(me_, fin)) == s) from_s.push_back(oid);
      }
      if (from_s.empty()) continue;
      auto vals = expect_elems(s, MsgType::OpenMask, step, from_s.size());
      for (size_t i = 0; i < from_s.size(); ++i) got[from_s[i]] = vals[i];
    }
    for (u32 oid : c_.outputs) {
      const Gate& og = c_.gate(oid);
      const u32 w = og.a;
      const auto& fin = coords_[w];
      auto opens_to = [&](PartyId p) {
        return og.recipients == kOutputAll || (og.recipients & (1u << party_index(p)));
      };
      if (is_p4()) {
        for (PartyId p : {PartyId::P1, PartyId::P2, PartyId::P3})
          if (opens_to(p))
            views_.log(p, ViewTag::OpenX, w, comps4_[party_index(mask_holder(p, fin))][w]);
        if (opens_to(PartyId::P4)) {
          const RingElement val = got.at(oid);
          views_.log(fin[1], ViewTag::OpenA, w, val);
          result[oid] = (val - comps4_[party_index(fin[2])][w]).v;
        }
      } else {
        if (opens_to(me_)) {
          const RingElement val = got.at(oid);
          views_.log(PartyId::P4, ViewTag::OpenX, w, val);
          result[oid] = (mval_[w] - val).v;
        }
        if (opens_to(PartyId::P4) && me_ == fin[1])
          views_.log(PartyId::P4, ViewTag::OpenA, w, mval_[w]);
      }
    }

    checkpoint();
    return result;
  }

  const Circuit& c_;
  Transport& net_;
  RandomnessProvider& rng_;
  Options opts_;
  PartyId me_;
  int k_;

  ViewLog views_;
  u32 next_checkpoint_ = 0;

  std::vector<std::array<PartyId, 3>> coords_;  // final coordinates after plan()
  std::vector<std::vector<AlignSite>> pre_;     // sites applied before each gate
  u32 site_count_ = 0;

  std::vector<RingElement> comp_, mval_;               // evaluator wire state
  std::vector<RingElement> compA_, compB_, compOut_;   // per-gate operand/output components
  std::vector<RingElement> mvalA_, mvalB_;             // operand snapshots at exchange time
  std::vector<RingElement> o1_, o4_, prodc_;
  std::vector<RingElement> incomp_;                    // sharing-time own components
  std::array<std::vector<RingElement>, 3> comps4_;     // P4: components keyed by party
  std::array<std::vector<RingElement>, 3> incomp4_;    // P4: sharing-time components
  std::vector<RingElement> o1log_;                     // P4: banked o1 recomputes
  std::array<Batch, 3> delta_out_;                     // P4: banked realign differences
  std::vector<RingElement> delta_in_;                  // evaluator: differences, site order
  size_t delta_pos_ = 0;
  std::vector<RingElement> x2o_, x3o_;                 // outsider's own wire masks
  std::map<u32, RingElement> xfer_in_;                 // dealer's counterpart components
  std::vector<std::vector<u32>> muls_by_layer_;
};

inline std::map<PartyId, PartyRun> run_rotated(const Circuit& c, const PartyInputs& inputs,
                                               SimNetwork& net, const RngFactory& rng_of,
                                               Engine4::Options opts = {}) {
  auto results = run_parties(parties4(c), [&](PartyId p, MulMeter& meter) {
    auto rng = rng_of(p);
    RotationEngine4 eng(c, net.endpoint(p), *rng, opts);
    auto it = inputs.find(p);
    auto out = eng.run(it == inputs.end() ? std::map<u32, u64>{} : it->second);
    meter = eng.meter;
    return out;
  });
  for (auto& [p, r] : results) r.clock_ms = net.endpoint(p).clock_ms;
  return results;
}

inline std::map<PartyId, PartyRun> run_rotated(const Circuit& c, const PartyInputs& inputs,
                                               SimNetwork& net, u64 seed,
                                               Engine4::Options opts = {}) {
  return run_rotated(c, inputs, net, keyed_rng(seed), opts);
}

}  // namespace hetmpc
