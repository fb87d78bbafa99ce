#pragma once

#include "hetmpc/rand.hpp"

namespace hetmpc {

// Entry kinds in the pairwise view logs. Both members of a pair append
// entries with the same tag and id in the same order; at checkpoints the
// pair swaps digests, so any divergence aborts the run. The tag names the
// consistency check that owns the entry.
enum class ViewTag : u8 {
  ShareA3 = 1,   // masked input value held by both P1 and P2
  ShareA2 = 2,   // P3's masked input against P1's a3 + x1
  MaskXfer = 3,  // mask components handed over during input sharing
  OffO1 = 4,     // offline cross terms, receiver vs P4's recomputation
  MulV = 5,      // per-gate message invariant (both evaluator forms)
  MulC3 = 6,     // the output share both P1 and P2 must agree on
  OpenX = 7,     // masks received while opening, against P4's copies
  OpenA = 8,     // masked value sent to P4, against P2's copy
};

// Append-only logs, one per counterpart. Raw bytes are kept (not a running
// hash) so tests can pinpoint the first diverging entry after an abort.
class ViewLog {
 public:
  void log(PartyId peer, ViewTag tag, u32 id, const RingElement& v) {
    auto& buf = logs_[party_index(peer)];
    buf.push_back(static_cast<u8>(tag));
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<u8>(id >> (8 * i)));
    buf.push_back(v.k);
    for (size_t i = 0; i < element_bytes(v.k); ++i) buf.push_back(static_cast<u8>(v.v >> (8 * i)));
  }

  Digest digest(PartyId peer) const { return sha256(logs_[party_index(peer)]); }

  const std::vector<u8>& bytes(PartyId peer) const { return logs_[party_index(peer)]; }

 private:
  std::array<std::vector<u8>, 5> logs_;
};

// Walks two mirrored logs and names the first diverging entry; used by the
// fault-injection tests to identify which consistency check fired.
inline std::string first_divergence(const std::vector<u8>& a, const std::vector<u8>& b) {
  size_t i = 0;
  auto entry_len = [](const std::vector<u8>& v, size_t at) {
    return size_t{6} + element_bytes(v[at + 5]);
  };
  while (i < a.size() && i < b.size()) {
    size_t la = entry_len(a, i);
    if (la != entry_len(b, i) ||
        !std::equal(a.begin() + i, a.begin() + i + la, b.begin() + i)) {
      u32 id = 0;
      for (int j = 0; j < 4; ++j) id |= static_cast<u32>(a[i + 1 + j]) << (8 * j);
      switch (static_cast<ViewTag>(a[i])) {
        case ViewTag::ShareA3: return "share-a3:" + std::to_string(id);
        case ViewTag::ShareA2: return "share-a2:" + std::to_string(id);
        case ViewTag::MaskXfer: return "mask-xfer:" + std::to_string(id);
        case ViewTag::OffO1: return "off-o1:" + std::to_string(id);
        case ViewTag::MulV: return "mul-v:" + std::to_string(id);
        case ViewTag::MulC3: return "mul-c3:" + std::to_string(id);
        case ViewTag::OpenX: return "open-x:" + std::to_string(id);
        case ViewTag::OpenA: return "open-a:" + std::to_string(id);
      }
      return "unknown:" + std::to_string(id);
    }
    i += la;
  }
  if (a.size() != b.size()) return "length";
  return "";
}

}  // namespace hetmpc
