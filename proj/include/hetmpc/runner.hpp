#pragma once

#include <functional>
#include <thread>

#include "hetmpc/proto3.hpp"
#include "hetmpc/proto4.hpp"

namespace hetmpc {

// Outcome of one party's run. `aborted` marks a deliberate protocol abort
// as opposed to an engine defect.
struct PartyRun {
  std::map<u32, u64> outputs;
  u64 mul_offline = 0;
  u64 mul_online = 0;
  u64 mul_verify = 0;
  bool aborted = false;
  std::string error;
  double clock_ms = 0;

  bool ok() const { return error.empty() && !aborted; }
};

using PartyInputs = std::map<PartyId, std::map<u32, u64>>;
using RngFactory = std::function<std::unique_ptr<RandomnessProvider>(PartyId)>;

inline RngFactory keyed_rng(u64 seed) {
  return [seed](PartyId p) { return std::make_unique<KeyedRandomness>(seed, p); };
}

// One thread per party; exceptions land in the result instead of killing
// the process.
inline std::map<PartyId, PartyRun> run_parties(
    const std::vector<PartyId>& parties,
    const std::function<std::map<u32, u64>(PartyId, MulMeter&)>& body) {
  std::map<PartyId, PartyRun> results;
  for (PartyId p : parties) results[p];
  std::vector<std::thread> threads;
  for (PartyId p : parties) {
    threads.emplace_back([&, p] {
      PartyRun& r = results[p];
      MulMeter meter;
      try {
        r.outputs = body(p, meter);
      } catch (const ProtocolAbort& e) {
        r.aborted = true;
        r.error = e.what();
      } catch (const std::exception& e) {
        r.error = e.what();
      }
      r.mul_offline = meter.offline;
      r.mul_online = meter.online;
      r.mul_verify = meter.verify;
    });
  }
  for (auto& t : threads) t.join();
  return results;
}

inline std::vector<PartyId> parties3(const Circuit& c) {
  std::vector<PartyId> ps = {PartyId::P1, PartyId::P2, PartyId::P3};
  for (u32 id : c.inputs)
    if (c.gate(id).owner == PartyId::Outsider) {
      ps.push_back(PartyId::Outsider);
      break;
    }
  return ps;
}

inline std::map<PartyId, PartyRun> run3(const Circuit& c, const PartyInputs& inputs,
                                        SimNetwork& net, const RngFactory& rng_of,
                                        u32 instance = 0) {
  auto results = run_parties(parties3(c), [&](PartyId p, MulMeter& meter) {
    auto rng = rng_of(p);
    Engine3 eng(c, net.endpoint(p), *rng, instance);
    auto it = inputs.find(p);
    auto out = eng.run(it == inputs.end() ? std::map<u32, u64>{} : it->second);
    meter = eng.meter;
    return out;
  });
  for (auto& [p, r] : results) r.clock_ms = net.endpoint(p).clock_ms;
  return results;
}

inline std::map<PartyId, PartyRun> run3(const Circuit& c, const PartyInputs& inputs,
                                        SimNetwork& net, u64 seed) {
  return run3(c, inputs, net, keyed_rng(seed));
}

inline std::vector<PartyId> parties4(const Circuit& c) {
  std::vector<PartyId> ps = {PartyId::P1, PartyId::P2, PartyId::P3, PartyId::P4};
  for (u32 id : c.inputs)
    if (c.gate(id).owner == PartyId::Outsider) {
      ps.push_back(PartyId::Outsider);
      break;
    }
  return ps;
}

inline std::map<PartyId, PartyRun> run4(const Circuit& c, const PartyInputs& inputs,
                                        SimNetwork& net, const RngFactory& rng_of,
                                        Engine4::Options opts = {}) {
  auto results = run_parties(parties4(c), [&](PartyId p, MulMeter& meter) {
    auto rng = rng_of(p);
    Engine4 eng(c, net.endpoint(p), *rng, opts);
    auto it = inputs.find(p);
    auto out = eng.run(it == inputs.end() ? std::map<u32, u64>{} : it->second);
    meter = eng.meter;
    return out;
  });
  for (auto& [p, r] : results) r.clock_ms = net.endpoint(p).clock_ms;
  return results;
}

inline std::map<PartyId, PartyRun> run4(const Circuit& c, const PartyInputs& inputs,
                                        SimNetwork& net, u64 seed, Engine4::Options opts = {}) {
  return run4(c, inputs, net, keyed_rng(seed), opts);
}

// Convenience for tests: spread a flat input list over the owners and
// check every receiving party against the cleartext oracle.
inline PartyInputs split_inputs(const Circuit& c, const std::vector<u64>& flat) {
  if (flat.size() != c.inputs.size()) throw UsageError("input count mismatch");
  PartyInputs by_party;
  for (size_t i = 0; i < flat.size(); ++i)
    by_party[c.gate(c.inputs[i]).owner][c.inputs[i]] = flat[i];
  return by_party;
}

}  // namespace hetmpc
