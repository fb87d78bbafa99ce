#pragma once

#include <initializer_list>
#include <string>

#include "hetmpc/ring.hpp"

namespace hetmpc {

// P1..P3 run the three-party protocol; P4 joins for the four-party one.
// Outsider models an input owner who is not one of the computing parties.
enum class PartyId : u8 { P1 = 0, P2 = 1, P3 = 2, P4 = 3, Outsider = 4 };

constexpr int party_index(PartyId p) { return static_cast<int>(p); }

inline std::string party_name(PartyId p) {
  switch (p) {
    case PartyId::P1: return "P1";
    case PartyId::P2: return "P2";
    case PartyId::P3: return "P3";
    case PartyId::P4: return "P4";
    case PartyId::Outsider: return "O";
  }
  return "?";
}

// A set of parties, used to scope shared randomness: every keyset has its
// own seed, known exactly to its members.
using Keyset = u8;

constexpr Keyset keyset_of(std::initializer_list<PartyId> ps) {
  Keyset s = 0;
  for (PartyId p : ps) s = static_cast<Keyset>(s | (1u << party_index(p)));
  return s;
}

constexpr bool keyset_contains(Keyset s, PartyId p) {
  return (s >> party_index(p)) & 1u;
}

inline std::string keyset_name(Keyset s) {
  std::string out = "{";
  for (int i = 0; i < 5; ++i) {
    if (!((s >> i) & 1u)) continue;
    if (out.size() > 1) out += ",";
    out += party_name(static_cast<PartyId>(i));
  }
  return out + "}";
}

}  // namespace hetmpc
