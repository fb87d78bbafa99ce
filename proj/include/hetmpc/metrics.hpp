#pragma once

#include <map>
#include <mutex>
#include <set>
#include <vector>

#include "hetmpc/parties.hpp"
#include "hetmpc/ring.hpp"

namespace hetmpc {

enum class Phase : u8 { Offline = 0, Online = 1 };

// One code per kind of protocol message; doubles as the wire type byte and
// the metering category. Digest and control traffic never carries ring
// elements, so it shows up in byte counts only.
enum class MsgType : u8 {
  Share = 0,        // masked values pushed during input sharing
  ShareMask = 1,    // mask components handed over offline
  MulOffM1 = 2,     // three-party offline cross terms
  MulOffO1 = 3,     // four-party offline, corner party's cross terms
  MulOffO4 = 4,     // four-party offline, helper's cross terms
  MulOnM2 = 5,
  MulOnM3 = 6,
  MulOnM3p = 7,     // lazy stream toward the offline-only party
  OpenMask = 8,     // mask/masked-value exchange during opening
  Digest = 9,       // view digests at checkpoints
  FairHash = 10,    // commitment round of fair opening
  FairAbort = 11,
  FairProceed = 12,
  FairReveal = 13,
  GodControl = 14,  // checkpoint status + reconfiguration traffic
  Realign = 15,     // mask refresh when roles rotate
};
constexpr int kMsgTypeCount = 16;

inline bool is_mul_type(MsgType t) {
  switch (t) {
    case MsgType::MulOffM1:
    case MsgType::MulOffO1:
    case MsgType::MulOffO4:
    case MsgType::MulOnM2:
    case MsgType::MulOnM3:
    case MsgType::MulOnM3p: return true;
    default: return false;
  }
}

// Header: payload length (u32 LE), phase, type, step (u32 LE). The step is
// the round identifier: 0 for the offline pass, the multiplication layer
// online, the checkpoint id for lazy/control traffic.
constexpr size_t kFrameHeaderBytes = 10;

struct Message {
  PartyId from = PartyId::P1;
  PartyId to = PartyId::P1;
  Phase phase = Phase::Offline;
  MsgType type = MsgType::Share;
  u32 step = 0;
  std::vector<u8> payload;

  // Sender-side annotations. They never hit the wire; the simulator keeps
  // them so metering and targeted fault injection can see element
  // boundaries inside a batched payload.
  u32 element_count = 0;
  int element_width = 0;
  std::vector<u32> gate_ids;
  double sim_arrival = 0;

  size_t wire_size() const { return kFrameHeaderBytes + payload.size(); }
};

inline Message make_element_msg(PartyId from, PartyId to, Phase phase, MsgType type, u32 step,
                                const std::vector<RingElement>& elems, int k,
                                std::vector<u32> gate_ids = {}) {
  Message m;
  m.from = from;
  m.to = to;
  m.phase = phase;
  m.type = type;
  m.step = step;
  encode_elements(elems, k, m.payload);
  m.element_count = static_cast<u32>(elems.size());
  m.element_width = k;
  m.gate_ids = std::move(gate_ids);
  return m;
}

inline std::vector<u8> frame_message(const Message& m) {
  std::vector<u8> out;
  out.reserve(m.wire_size());
  u32 len = static_cast<u32>(m.payload.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<u8>(len >> (8 * i)));
  out.push_back(static_cast<u8>(m.phase));
  out.push_back(static_cast<u8>(m.type));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<u8>(m.step >> (8 * i)));
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

// Traffic accounting for one direction of one party pair. Rounds are the
// number of distinct steps seen, so a burst of same-layer messages counts
// once.
struct PhaseMetrics {
  u64 elements = 0;
  u64 bytes = 0;
  u64 messages = 0;
  std::set<u32> steps;

  u64 rounds() const { return steps.size(); }

  void record(const Message& m) {
    elements += m.element_count;
    bytes += m.wire_size();
    messages += 1;
    steps.insert(m.step);
  }
};

struct ChannelMetrics {
  PhaseMetrics total[2];                     // indexed by Phase
  std::map<MsgType, PhaseMetrics> by_type[2];

  void record(const Message& m) {
    int ph = static_cast<int>(m.phase);
    total[ph].record(m);
    by_type[ph][m.type].record(m);
  }

  const PhaseMetrics* type_metrics(Phase ph, MsgType t) const {
    auto& m = by_type[static_cast<int>(ph)];
    auto it = m.find(t);
    return it == m.end() ? nullptr : &it->second;
  }

  u64 type_elements(Phase ph, MsgType t) const {
    const auto* pm = type_metrics(ph, t);
    return pm ? pm->elements : 0;
  }

  // Multiplication-only views, for checking the per-gate communication
  // budget without sharing/opening traffic mixed in.
  u64 mul_elements(Phase ph) const {
    u64 n = 0;
    for (const auto& [t, pm] : by_type[static_cast<int>(ph)])
      if (is_mul_type(t)) n += pm.elements;
    return n;
  }

  u64 mul_rounds(Phase ph) const {
    std::set<u32> steps;
    for (const auto& [t, pm] : by_type[static_cast<int>(ph)])
      if (is_mul_type(t)) steps.insert(pm.steps.begin(), pm.steps.end());
    return steps.size();
  }
};

using ChannelKey = std::pair<PartyId, PartyId>;

inline std::string channel_name(const ChannelKey& ch) {
  return party_name(ch.first) + "->" + party_name(ch.second);
}

class MetricsBoard {
 public:
  void record(const Message& m) {
    std::lock_guard<std::mutex> lk(mu_);
    channels_[{m.from, m.to}].record(m);
  }

  // Snapshot accessors; call after the protocol threads joined.
  const ChannelMetrics& channel(PartyId from, PartyId to) const {
    static const ChannelMetrics empty;
    auto it = channels_.find({from, to});
    return it == channels_.end() ? empty : it->second;
  }

  const std::map<ChannelKey, ChannelMetrics>& all() const { return channels_; }

  void reset() {
    std::lock_guard<std::mutex> lk(mu_);
    channels_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::map<ChannelKey, ChannelMetrics> channels_;
};

}  // namespace hetmpc
