#include <gtest/gtest.h>

#include "hetmpc/rand.hpp"

using namespace hetmpc;

namespace {
constexpr Keyset k12 = keyset_of({PartyId::P1, PartyId::P2});
constexpr Keyset k13 = keyset_of({PartyId::P1, PartyId::P3});
}  // namespace

TEST(Rand, MembersAgreeWithoutCommunication) {
  KeyedRandomness r1(0xdeadbeef, PartyId::P1);
  KeyedRandomness r2(0xdeadbeef, PartyId::P2);
  for (u32 gate = 0; gate < 50; ++gate) {
    EXPECT_EQ(r1.draw_raw(k12, purpose::WireMask, gate, 0),
              r2.draw_raw(k12, purpose::WireMask, gate, 0));
  }
}

TEST(Rand, NonMembersAreRefused) {
  KeyedRandomness r3(1, PartyId::P3);
  EXPECT_THROW(r3.draw_raw(k12, purpose::WireMask, 0, 0), UsageError);
  KeyedRandomness out(1, PartyId::Outsider);
  EXPECT_THROW(out.draw_raw(k13, purpose::MulPad, 0, 0), UsageError);
}

TEST(Rand, AddressComponentsSeparateDraws) {
  KeyedRandomness r(99, PartyId::P1);
  u64 base = r.draw_raw(k12, purpose::WireMask, 7, 0);
  EXPECT_NE(base, r.draw_raw(k12, purpose::WireMask, 8, 0));
  EXPECT_NE(base, r.draw_raw(k12, purpose::MulPad, 7, 0));
  EXPECT_NE(base, r.draw_raw(k12, purpose::WireMask, 7, 1));
  EXPECT_NE(base, r.draw_raw(k13, purpose::WireMask, 7, 0));
  // Same address, same value, regardless of the order of draws.
  EXPECT_EQ(base, r.draw_raw(k12, purpose::WireMask, 7, 0));
}

TEST(Rand, SeedsSeparateSessions) {
  KeyedRandomness a(1, PartyId::P1), b(2, PartyId::P1);
  EXPECT_NE(a.draw_raw(k12, purpose::WireMask, 0, 0), b.draw_raw(k12, purpose::WireMask, 0, 0));
}

TEST(Rand, SingleBitDrawsAreRoughlyBalanced) {
  KeyedRandomness r(3, PartyId::P2);
  int ones = 0;
  for (u32 g = 0; g < 1000; ++g) ones += static_cast<int>(r.draw(k12, purpose::WireMask, g, 0, 1).v);
  EXPECT_GT(ones, 400);
  EXPECT_LT(ones, 600);
}

TEST(Rand, TripleComponentsSatisfyDifferenceIdentity) {
  KeyedRandomness r4(0x5eed, PartyId::P4);  // P4 sits in all three seeds
  for (u32 gate = 0; gate < 20; ++gate) {
    for (int k : {1, 8, 64}) {
      auto x1 = triple_x1(r4, purpose::WireMask, gate, 0, k);
      auto x2 = triple_x2(r4, purpose::WireMask, gate, 0, k);
      auto x3 = triple_x3(r4, purpose::WireMask, gate, 0, k);
      EXPECT_EQ(x1, x2 - x3);
    }
  }
}

TEST(Rand, TripleWorkedExample) {
  // Seed values 7, 1, 3 in Z_{2^3}-style arithmetic carried out in Z_{2^8}:
  // x1 = 7-1 = 6, x2 = 3+7 = 10, x3 = 1+3 = 4.
  ScriptedRandomness s;
  s.set(MaskTripleSeeds::k124, purpose::WireMask, 0, 7);
  s.set(MaskTripleSeeds::k134, purpose::WireMask, 0, 1);
  s.set(MaskTripleSeeds::k234, purpose::WireMask, 0, 3);
  EXPECT_EQ(triple_x1(s, purpose::WireMask, 0, 0, 8).v, 6u);
  EXPECT_EQ(triple_x2(s, purpose::WireMask, 0, 0, 8).v, 10u);
  EXPECT_EQ(triple_x3(s, purpose::WireMask, 0, 0, 8).v, 4u);
}

TEST(Rand, Sha256KnownVector) {
  // SHA-256("abc")
  std::vector<u8> abc{'a', 'b', 'c'};
  Digest d = sha256(abc);
  EXPECT_EQ(d[0], 0xba);
  EXPECT_EQ(d[1], 0x78);
  EXPECT_EQ(d[31], 0xad);
}
