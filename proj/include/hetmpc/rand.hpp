#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstring>
#include <map>
#include <memory>
#include <tuple>
#include <vector>

#include "hetmpc/parties.hpp"
#include "hetmpc/ring.hpp"

namespace hetmpc {

using Digest = std::array<u8, 32>;

// Streaming SHA-256, used for tape key derivation and view digests.
class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void absorb(const void* data, size_t len) {
    if (EVP_DigestUpdate(ctx_, data, len) != 1) throw std::runtime_error("sha256 update failed");
  }
  void absorb(const std::vector<u8>& data) { absorb(data.data(), data.size()); }

  Digest finish() {
    Digest d{};
    unsigned len = 0;
    if (EVP_DigestFinal_ex(ctx_, d.data(), &len) != 1 || len != d.size())
      throw std::runtime_error("sha256 final failed");
    return d;
  }

 private:
  EVP_MD_CTX* ctx_;
};

inline Digest sha256(const std::vector<u8>& data) {
  Sha256 h;
  h.absorb(data);
  return h.finish();
}

// Draw domains. Combined with the gate (or wire) id and the protocol
// instance id they make every pseudorandom value addressable, so parties
// never need to agree on a draw order.
namespace purpose {
constexpr u32 WireMask = 1;   // per-wire mask seeds (keyset disambiguates)
constexpr u32 MaskX2 = 2;     // first mask component of a wire
constexpr u32 MaskX3 = 3;     // second mask component of a wire
constexpr u32 MulPad = 4;     // message pads consumed by multiplication
constexpr u32 FairToken = 5;  // abort authenticators for fair opening
constexpr u32 GodRefresh = 6; // per-wire refresh when reconfiguring parties
constexpr u32 Realign = 7;    // mask refresh when roles rotate mid-circuit
}  // namespace purpose

// Anything that hands out the shared pseudorandom values. Protocol code
// only sees this interface; tests substitute scripted values to pin down
// worked examples, production uses the AES-backed KeyedRandomness.
class RandomnessProvider {
 public:
  virtual ~RandomnessProvider() = default;

  // Raw 64-bit draw, later reduced to the ring in use. Throws UsageError
  // if this party is not a member of the keyset.
  virtual u64 draw_raw(Keyset ks, u32 purpose, u32 gate, u32 instance) = 0;

  RingElement draw(Keyset ks, u32 purp, u32 gate, u32 instance, int k) {
    return RingElement(draw_raw(ks, purp, gate, instance), k);
  }
};

// PRF-based provider: each keyset gets a 16-byte AES key derived from the
// session master seed, and a draw is one AES-128 block over the address
// (purpose, gate, instance). Members derive identical keys, so identical
// draws, without talking to each other.
class KeyedRandomness : public RandomnessProvider {
 public:
  KeyedRandomness(u64 master_seed, PartyId me) : master_seed_(master_seed), me_(me) {}

  ~KeyedRandomness() override {
    for (auto* ctx : ctx_) EVP_CIPHER_CTX_free(ctx);
  }
  KeyedRandomness(const KeyedRandomness&) = delete;
  KeyedRandomness& operator=(const KeyedRandomness&) = delete;

  u64 draw_raw(Keyset ks, u32 purp, u32 gate, u32 instance) override {
    if (!keyset_contains(ks, me_))
      throw UsageError(party_name(me_) + " is not in keyset " + keyset_name(ks));
    u8 block[16];
    u8 out[16];
    std::memcpy(block, &purp, 4);
    std::memcpy(block + 4, &gate, 4);
    std::memcpy(block + 8, &instance, 4);
    std::memset(block + 12, 0, 4);
    int outl = 0;
    if (EVP_EncryptUpdate(ctx_for(ks), out, &outl, block, 16) != 1 || outl != 16)
      throw std::runtime_error("aes draw failed");
    u64 v;
    std::memcpy(&v, out, 8);
    return v;
  }

 private:
  EVP_CIPHER_CTX* ctx_for(Keyset ks) {
    auto*& ctx = ctx_[ks];
    if (ctx) return ctx;
    // Keyset key = SHA256(master seed || keyset bits), truncated to 128 bits.
    Sha256 h;
    u8 seed[8];
    std::memcpy(seed, &master_seed_, 8);
    h.absorb(seed, 8);
    h.absorb(&ks, 1);
    Digest d = h.finish();
    ctx = EVP_CIPHER_CTX_new();
    if (!ctx || EVP_EncryptInit_ex(ctx, EVP_aes_128_ecb(), nullptr, d.data(), nullptr) != 1)
      throw std::runtime_error("aes init failed");
    EVP_CIPHER_CTX_set_padding(ctx, 0);
    return ctx;
  }

  u64 master_seed_;
  PartyId me_;
  std::array<EVP_CIPHER_CTX*, 32> ctx_{};
};

// Test provider with hand-picked values; unlisted draws fall back to zero
// so small worked examples stay small.
class ScriptedRandomness : public RandomnessProvider {
 public:
  void set(Keyset ks, u32 purp, u32 gate, u64 value) {
    values_[std::make_tuple(ks, purp, gate)] = value;
  }

  u64 draw_raw(Keyset ks, u32 purp, u32 gate, u32 /*instance*/) override {
    auto it = values_.find(std::make_tuple(ks, purp, gate));
    return it == values_.end() ? 0 : it->second;
  }

 private:
  std::map<std::tuple<Keyset, u32, u32>, u64> values_;
};

// The four-party sharing splits a wire mask into three components tied
// together by three pairwise seeds; each party can reconstruct exactly the
// components its keysets cover. Component identities:
//   x1 = r124 - r134,  x2 = r234 + r124,  x3 = r134 + r234
// which gives x1 = x2 - x3 for free.
struct MaskTripleSeeds {
  static constexpr Keyset k124 = keyset_of({PartyId::P1, PartyId::P2, PartyId::P4});
  static constexpr Keyset k134 = keyset_of({PartyId::P1, PartyId::P3, PartyId::P4});
  static constexpr Keyset k234 = keyset_of({PartyId::P2, PartyId::P3, PartyId::P4});
};

inline RingElement triple_x1(RandomnessProvider& r, u32 purp, u32 gate, u32 inst, int k) {
  return r.draw(MaskTripleSeeds::k124, purp, gate, inst, k) -
         r.draw(MaskTripleSeeds::k134, purp, gate, inst, k);
}

inline RingElement triple_x2(RandomnessProvider& r, u32 purp, u32 gate, u32 inst, int k) {
  return r.draw(MaskTripleSeeds::k234, purp, gate, inst, k) +
         r.draw(MaskTripleSeeds::k124, purp, gate, inst, k);
}

inline RingElement triple_x3(RandomnessProvider& r, u32 purp, u32 gate, u32 inst, int k) {
  return r.draw(MaskTripleSeeds::k134, purp, gate, inst, k) +
         r.draw(MaskTripleSeeds::k234, purp, gate, inst, k);
}

}  // namespace hetmpc
