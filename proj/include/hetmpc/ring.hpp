#pragma once

#include <cassert>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace hetmpc {

using u8 = uint8_t;
using u16 = uint16_t;
using u32 = uint32_t;
using u64 = uint64_t;

// Raised for caller mistakes (bad width, mismatched operands, malformed
// input). Distinct from ProtocolAbort so the CLI can map them to different
// exit codes.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

inline bool valid_width(int k) {
  return k == 1 || k == 8 || k == 16 || k == 32 || k == 64;
}

inline u64 width_mask(int k) {
  return k == 64 ? ~u64{0} : ((u64{1} << k) - 1);
}

// Bytes used by one element on the wire (k=1 elements batch-pack to bits,
// see encode_elements below).
inline size_t element_bytes(int k) { return (static_cast<size_t>(k) + 7) / 8; }

// An element of Z_{2^k}. Width travels with the value so mixed-width bugs
// surface immediately instead of silently truncating.
struct RingElement {
  u64 v = 0;
  u8 k = 64;

  RingElement() = default;
  RingElement(u64 value, int width) : v(value & width_mask(width)), k(static_cast<u8>(width)) {
    if (!valid_width(width)) throw UsageError("unsupported ring width " + std::to_string(width));
  }

  bool operator==(const RingElement& o) const { return v == o.v && k == o.k; }
  bool operator!=(const RingElement& o) const { return !(*this == o); }
};

inline void check_same_width(const RingElement& a, const RingElement& b) {
  if (a.k != b.k)
    throw UsageError("ring width mismatch: " + std::to_string(a.k) + " vs " + std::to_string(b.k));
}

inline RingElement operator+(const RingElement& a, const RingElement& b) {
  check_same_width(a, b);
  return RingElement(a.v + b.v, a.k);
}

inline RingElement operator-(const RingElement& a, const RingElement& b) {
  check_same_width(a, b);
  return RingElement(a.v - b.v, a.k);
}

inline RingElement operator-(const RingElement& a) { return RingElement(~a.v + 1, a.k); }

inline RingElement operator*(const RingElement& a, const RingElement& b) {
  check_same_width(a, b);
  return RingElement(a.v * b.v, a.k);
}

inline RingElement ring_zero(int k) { return RingElement(0, k); }
inline RingElement ring_one(int k) { return RingElement(1, k); }

// Protocol code routes every ring multiplication through a meter so the
// per-gate multiplication budget can be checked against the design targets.
// Each party owns its meter; there is no global mutable state.
enum class MulPhase : u8 { Offline = 0, Online = 1, Verify = 2 };

struct MulMeter {
  u64 offline = 0;
  u64 online = 0;
  u64 verify = 0;
  MulPhase phase = MulPhase::Offline;

  RingElement mul(const RingElement& a, const RingElement& b) {
    switch (phase) {
      case MulPhase::Offline: ++offline; break;
      case MulPhase::Online: ++online; break;
      case MulPhase::Verify: ++verify; break;
    }
    return a * b;
  }
};

// Little-endian wire encoding, ceil(k/8) bytes per element; width-1 batches
// pack eight elements per byte, low bit first.
inline void encode_elements(const std::vector<RingElement>& elems, int k, std::vector<u8>& out) {
  if (k == 1) {
    out.assign((elems.size() + 7) / 8, 0);
    for (size_t i = 0; i < elems.size(); ++i) {
      if (elems[i].k != 1) throw UsageError("width mismatch in batch encode");
      out[i / 8] |= static_cast<u8>((elems[i].v & 1) << (i % 8));
    }
    return;
  }
  const size_t n = element_bytes(k);
  out.clear();
  out.reserve(elems.size() * n);
  for (const auto& e : elems) {
    if (e.k != k) throw UsageError("width mismatch in batch encode");
    for (size_t b = 0; b < n; ++b) out.push_back(static_cast<u8>(e.v >> (8 * b)));
  }
}

inline std::vector<RingElement> decode_elements(const std::vector<u8>& in, int k, size_t count) {
  std::vector<RingElement> out;
  out.reserve(count);
  if (k == 1) {
    if (in.size() < (count + 7) / 8) throw UsageError("short element batch");
    for (size_t i = 0; i < count; ++i) out.emplace_back((in[i / 8] >> (i % 8)) & 1, 1);
    return out;
  }
  const size_t n = element_bytes(k);
  if (in.size() < count * n) throw UsageError("short element batch");
  for (size_t i = 0; i < count; ++i) {
    u64 v = 0;
    for (size_t b = 0; b < n; ++b) v |= static_cast<u64>(in[i * n + b]) << (8 * b);
    out.emplace_back(v, k);
  }
  return out;
}

}  // namespace hetmpc
