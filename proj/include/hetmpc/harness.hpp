#pragma once

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "hetmpc/god.hpp"

namespace hetmpc {

// Scripted misbehavior of exactly one party, applied at the transport layer
// so the engines stay free of test hooks. A rule names a message kind by its
// protocol role; what that resolves to depends on the opening mode:
//   o1, o4, m2, m3, m3p  the per-gate multiplication messages
//   m1                   the recovery attempts' offline cross term
//   x_reveal             OpenMask, or the reveal round under fair opening
//   digest               checkpoint digests, or the fair commitment hash
//   abort                the checkpoint status vote, or a forged fair abort
enum class Mutation : u8 { Add, Replace, Drop };

struct TamperRule {
  std::string target;
  int gate = -1;  // mul gate id for element batches, step id for control
                  // traffic; -1 hits every matching message
  Mutation mutation = Mutation::Add;
  u64 delta = 1;
  u64 value = 0;        // replacement value
  u32 round = 1;        // fair mode: which echo round the forged abort hits
  bool first_attempt = true;  // active in the initial four-party run
  bool recovery = true;       // active in guaranteed-delivery reruns
};

struct Scenario {
  Circuit circuit;
  PartyInputs inputs;
  std::vector<u64> flat;  // oracle-aligned copy of the inputs
  PartyId corrupted = PartyId::P1;
  std::vector<TamperRule> rules;
  std::string mode = "4pc";  // 4pc | god | fair
  u64 seed = 1;
  u32 checkpoint_interval = 10;
};

namespace detail {

inline MsgType resolve_target(const std::string& t, bool fair_mode) {
  if (t == "o1") return MsgType::MulOffO1;
  if (t == "o4") return MsgType::MulOffO4;
  if (t == "m1") return MsgType::MulOffM1;
  if (t == "m2") return MsgType::MulOnM2;
  if (t == "m3") return MsgType::MulOnM3;
  if (t == "m3p") return MsgType::MulOnM3p;
  if (t == "x_reveal") return fair_mode ? MsgType::FairReveal : MsgType::OpenMask;
  if (t == "digest") return fair_mode ? MsgType::FairHash : MsgType::Digest;
  if (t == "abort") return MsgType::GodControl;
  throw UsageError("unknown tamper target '" + t + "'");
}

// Message kinds with a fixed sender in the initial four-party run; a rule on
// one of these only makes sense when that sender is the corrupted party.
inline bool initial_sender(const std::string& t, PartyId* who) {
  if (t == "o1") return *who = PartyId::P1, true;
  if (t == "o4") return *who = PartyId::P4, true;
  if (t == "m2") return *who = PartyId::P2, true;
  if (t == "m3" || t == "m3p") return *who = PartyId::P3, true;
  return false;
}

}  // namespace detail

inline void validate_scenario(const Scenario& sc) {
  if (sc.mode != "4pc" && sc.mode != "god" && sc.mode != "fair")
    throw UsageError("unknown scenario mode '" + sc.mode + "'");
  switch (sc.corrupted) {
    case PartyId::P1:
    case PartyId::P2:
    case PartyId::P3:
    case PartyId::P4: break;
    default: throw UsageError("corrupted party must be one of P1..P4");
  }
  for (const auto& r : sc.rules) {
    detail::resolve_target(r.target, sc.mode == "fair");
    if (r.target == "m1" && sc.mode != "god")
      throw UsageError("m1 exists only in recovery attempts; use mode god");
    PartyId sender;
    if (r.first_attempt && r.target != "m1" && detail::initial_sender(r.target, &sender) &&
        sender != sc.corrupted)
      throw UsageError("rule on '" + r.target + "' targets a message " + party_name(sender) +
                       " sends, but the corrupted party is " + party_name(sc.corrupted));
  }
}

// Applies the scenario's rules to this party's outgoing traffic. Value edits
// decode the batch, touch one element and re-encode; Drop truncates the
// payload instead of suppressing the message, so omission surfaces as the
// receiver's size check rather than a stalled channel.
class RuleTransport : public Transport {
 public:
  RuleTransport(Transport& inner, const Scenario& sc, u32 attempt)
      : inner_(inner), sc_(sc), attempt_(attempt) {}

  PartyId me() const override { return inner_.me(); }

  // A party that casts a failing checkpoint vote walks away while its peers
  // abort in lockstep; without this the culprit would sit in a receive its
  // peers will never answer.
  Message recv(PartyId from) override {
    if (armed_) throw CheckpointAbort(armed_step_, 0);
    return inner_.recv(from);
  }

  void send(Message m) override {
    for (const auto& r : sc_.rules)
      if (applies(r, m)) apply(r, m);
    inner_.send(std::move(m));
  }

 private:
  bool fair_abort_rule(const TamperRule& r) const {
    return sc_.mode == "fair" && r.target == "abort";
  }

  bool applies(const TamperRule& r, const Message& m) const {
    if (attempt_ == 0 ? !r.first_attempt : !r.recovery) return false;
    if (fair_abort_rule(r)) return m.type == MsgType::FairProceed && m.step == r.round;
    if (m.type != detail::resolve_target(r.target, sc_.mode == "fair")) return false;
    if (r.gate < 0) return true;
    if (m.element_count > 0)
      return std::find(m.gate_ids.begin(), m.gate_ids.end(), static_cast<u32>(r.gate)) !=
             m.gate_ids.end();
    return m.step == static_cast<u32>(r.gate);
  }

  void apply(const TamperRule& r, Message& m) {
    if (fair_abort_rule(r)) {
      // A round-1 abort carries the recipient's exclusion token, which any
      // other party can derive; a later forgery has nothing valid to quote.
      m.type = MsgType::FairAbort;
      if (r.round == 1) {
        KeyedRandomness rng(sc_.seed, me());
        Keyset all = keyset_of({PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4});
        Keyset ks = all & static_cast<Keyset>(~(1u << party_index(m.to)));
        u64 t = rng.draw_raw(ks, purpose::FairToken, party_index(m.to), 0);
        m.payload.resize(8);
        for (int i = 0; i < 8; ++i) m.payload[i] = static_cast<u8>(t >> (8 * i));
      } else {
        m.payload.assign(8, 0xee);
      }
      return;
    }
    if (r.mutation == Mutation::Drop) {
      if (!m.payload.empty()) m.payload.pop_back();
      return;
    }
    if (m.element_count > 0) {
      auto vals = decode_elements(m.payload, m.element_width, m.element_count);
      size_t idx = 0;
      if (r.gate >= 0) {
        auto it = std::find(m.gate_ids.begin(), m.gate_ids.end(), static_cast<u32>(r.gate));
        idx = static_cast<size_t>(it - m.gate_ids.begin());
      }
      vals[idx] = r.mutation == Mutation::Add ? vals[idx] + RingElement(r.delta, m.element_width)
                                              : RingElement(r.value, m.element_width);
      encode_elements(vals, m.element_width, m.payload);
      return;
    }
    if (m.payload.empty()) m.payload.push_back(0);
    if (r.mutation == Mutation::Add)
      m.payload[0] = static_cast<u8>(m.payload[0] + r.delta);
    else
      m.payload[0] = static_cast<u8>(r.value);
    // Checkpoint votes are 0 = good; a forged failing vote splits the round,
    // so after serving every peer the culprit bows out itself. Recovery-round
    // statuses are majority-checked and need no such exit.
    if (r.target == "abort" && (sc_.mode == "4pc" || attempt_ == 0)) {
      armed_ = true;
      armed_step_ = m.step;
    }
  }

  Transport& inner_;
  const Scenario& sc_;
  u32 attempt_;
  bool armed_ = false;
  u32 armed_step_ = 0;
};

// What a scenario run settles to, judged over the honest computing parties
// (the culprit and an input-only outsider do not count):
//   output      everyone finished; `outputs` holds the agreed values
//   abort       everyone refused before releasing anything
//   god-output  a recovery rerun delivered; `resets` says how many it took
//   split       disagreement, which no scenario should ever produce
struct ScenarioOutcome {
  std::string kind;
  bool unanimous = true;
  std::map<u32, u64> outputs;
  u32 resets = 0;
  std::vector<std::string> fired;  // diverging view entries, "P2~P3 mul-v:7"
  std::map<PartyId, PartyRun> runs;
  std::map<PartyId, GodOutcome> god;
};

namespace detail {

inline bool counts_as_honest(PartyId p, const Scenario& sc) {
  return p != sc.corrupted && p != PartyId::Outsider;
}

// Merges one honest party's outputs into the consensus map, flagging any
// value that contradicts a previously seen one.
inline void merge_outputs(const std::map<u32, u64>& own, std::map<u32, u64>& agreed,
                          bool& unanimous) {
  for (const auto& [id, v] : own) {
    auto it = agreed.find(id);
    if (it == agreed.end())
      agreed[id] = v;
    else if (it->second != v)
      unanimous = false;
  }
}

}  // namespace detail

inline ScenarioOutcome run_scenario(const Scenario& sc) {
  validate_scenario(sc);
  Engine4::Options opts;
  opts.checkpoint_interval = sc.checkpoint_interval;
  opts.fair = sc.mode == "fair";

  ScenarioOutcome oc;
  if (sc.mode == "god") {
    std::array<SimNetwork, 5> nets;
    GodWrap wrap = [&](u32 attempt, PartyId me, Transport& raw) -> std::unique_ptr<Transport> {
      if (me != sc.corrupted || sc.rules.empty()) return nullptr;
      return std::make_unique<RuleTransport>(raw, sc, attempt);
    };
    oc.god = god_run(sc.circuit, sc.inputs, nets, sc.seed, opts, wrap);
    bool all_ok = true;
    for (const auto& [p, g] : oc.god) {
      if (!detail::counts_as_honest(p, sc)) continue;
      if (!g.ok()) {
        all_ok = false;
        continue;
      }
      detail::merge_outputs(g.outputs, oc.outputs, oc.unanimous);
      oc.resets = std::max(oc.resets, g.resets);
    }
    oc.kind = all_ok ? "god-output" : "abort";
    if (!all_ok) {
      oc.unanimous = false;
      oc.outputs.clear();
    }
    return oc;
  }

  SimNetwork net;
  std::array<std::unique_ptr<RandomnessProvider>, 5> rngs;
  std::array<std::unique_ptr<Engine4>, 5> engines;
  oc.runs = run_parties(parties4(sc.circuit), [&](PartyId p, MulMeter& meter) {
    auto& rng = rngs[party_index(p)];
    rng = std::make_unique<KeyedRandomness>(sc.seed, p);
    Transport* t = &net.endpoint(p);
    std::unique_ptr<RuleTransport> deco;
    if (p == sc.corrupted && !sc.rules.empty()) {
      deco = std::make_unique<RuleTransport>(*t, sc, 0);
      t = deco.get();
    }
    auto& eng = engines[party_index(p)];
    eng = std::make_unique<Engine4>(sc.circuit, *t, *rng, opts);
    auto it = sc.inputs.find(p);
    auto out = eng->run(it == sc.inputs.end() ? std::map<u32, u64>{} : it->second);
    meter = eng->meter;
    return out;
  });

  bool all_ok = true, all_abort = true;
  for (const auto& [p, r] : oc.runs) {
    if (!detail::counts_as_honest(p, sc)) continue;
    if (r.ok()) {
      all_abort = false;
      detail::merge_outputs(r.outputs, oc.outputs, oc.unanimous);
    } else {
      all_ok = false;
    }
  }
  oc.kind = all_ok ? "output" : all_abort ? "abort" : "split";
  oc.unanimous = oc.unanimous && (all_ok || all_abort);
  if (!all_ok) oc.outputs.clear();

  const std::array<PartyId, 4> four = {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4};
  for (PartyId a : four)
    for (PartyId b : four) {
      if (party_index(a) >= party_index(b)) continue;
      const auto& va = engines[party_index(a)]->views().bytes(b);
      const auto& vb = engines[party_index(b)]->views().bytes(a);
      if (va != vb)
        oc.fired.push_back(party_name(a) + "~" + party_name(b) + " " + first_divergence(va, vb));
    }
  return oc;
}

// Scenario files:
//   {"circuit": "path.circ" | "circuit_text": "...", "seed": 7,
//    "corrupted": "P2", "mode": "4pc", "checkpoint_interval": 10,
//    "inputs": {"a": 3},      // unnamed inputs come from the seed
//    "rules": [{"type": "m2", "gate": 7, "mutation": "add", "delta": 1,
//               "attempt": "all"}]}
inline Scenario parse_scenario(const nlohmann::json& j, const std::string& base_dir = ".") {
  Scenario sc;
  if (j.contains("circuit_text")) {
    sc.circuit = parse_circuit(j["circuit_text"].get<std::string>());
  } else if (j.contains("circuit")) {
    std::string path = j["circuit"].get<std::string>();
    if (!base_dir.empty() && !path.empty() && path.front() != '/') path = base_dir + "/" + path;
    std::ifstream f(path);
    if (!f.good()) throw UsageError("cannot open circuit " + path);
    sc.circuit = parse_circuit(f);
  } else {
    throw UsageError("scenario needs 'circuit' or 'circuit_text'");
  }

  sc.seed = j.value("seed", u64{1});
  sc.mode = j.value("mode", std::string("4pc"));
  sc.checkpoint_interval = j.value("checkpoint_interval", 10u);
  if (!j.contains("corrupted")) throw UsageError("scenario needs 'corrupted'");
  {
    const std::string s = j["corrupted"].get<std::string>();
    bool found = false;
    for (PartyId p : {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4})
      if (party_name(p) == s) {
        sc.corrupted = p;
        found = true;
      }
    if (!found) throw UsageError("bad corrupted party '" + s + "'");
  }

  std::mt19937_64 gen(sc.seed);
  const nlohmann::json named =
      j.contains("inputs") ? j["inputs"] : nlohmann::json::object();
  for (auto it = named.begin(); it != named.end(); ++it) {
    bool known = false;
    for (u32 id : sc.circuit.inputs) known |= sc.circuit.gate(id).name == it.key();
    if (!known) throw UsageError("'" + it.key() + "' is not an input of this circuit");
  }
  for (u32 id : sc.circuit.inputs) {
    const Gate& g = sc.circuit.gate(id);
    u64 v = named.contains(g.name) ? named[g.name].get<u64>() : gen();
    sc.flat.push_back(v);
    sc.inputs[g.owner][id] = v;
  }

  for (const auto& jr : j.value("rules", nlohmann::json::array())) {
    TamperRule r;
    r.target = jr.at("type").get<std::string>();
    r.gate = jr.value("gate", -1);
    std::string mut = jr.value("mutation", r.target == "abort" ? "replace" : "add");
    if (mut == "add")
      r.mutation = Mutation::Add;
    else if (mut == "replace")
      r.mutation = Mutation::Replace;
    else if (mut == "drop")
      r.mutation = Mutation::Drop;
    else
      throw UsageError("unknown mutation '" + mut + "'");
    r.delta = jr.value("delta", u64{1});
    r.value = jr.value("value", r.target == "abort" ? u64{1} : u64{0});
    r.round = jr.value("round", 1u);
    if (r.round != 1 && r.round != 2) throw UsageError("abort round must be 1 or 2");
    std::string at = jr.value("attempt", std::string("all"));
    if (at == "first") {
      r.recovery = false;
    } else if (at == "recovery") {
      r.first_attempt = false;
    } else if (at != "all") {
      throw UsageError("unknown attempt selector '" + at + "'");
    }
    sc.rules.push_back(std::move(r));
  }

  validate_scenario(sc);
  return sc;
}

inline Scenario scenario_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw UsageError("cannot open scenario " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("bad scenario JSON: " + std::string(e.what()));
  }
  auto slash = path.find_last_of('/');
  return parse_scenario(j, slash == std::string::npos ? "." : path.substr(0, slash));
}

}  // namespace hetmpc
